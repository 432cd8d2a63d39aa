//! Agglomerative hierarchical clustering and cuts to an exact cluster count.
//!
//! Leaves are clusters `0..n`; the merge at step `s` creates cluster
//! `n + s`. Every cluster is also identified by its smallest member leaf,
//! and ties between equally distant pairs go to the lexicographically
//! smallest `(smaller leaf, larger leaf)` pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::DistanceMatrix;

const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Linkage {
    Single,
    Complete,
    /// UPGMA: mean of all cross-cluster member distances.
    #[default]
    Average,
}

impl Linkage {
    /// Lance-Williams update for the distance from `k` to `i ∪ j`.
    fn combine(self, d_ki: f64, d_kj: f64, size_i: usize, size_j: usize) -> f64 {
        match self {
            Linkage::Single => d_ki.min(d_kj),
            Linkage::Complete => d_ki.max(d_kj),
            Linkage::Average => {
                (size_i as f64 * d_ki + size_j as f64 * d_kj) / (size_i + size_j) as f64
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Input cluster whose smallest leaf is lower.
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    /// Id of the cluster this merge creates.
    pub id: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    n: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn leaves(&self) -> usize {
        self.n
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }
}

/// A partition of clients into `p` clusters. Labels are canonical: client 0
/// is in cluster 0 and each new cluster met in client order takes the next
/// label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    p: usize,
}

impl ClusterAssignment {
    /// Canonicalizes arbitrary group ids.
    pub fn from_groups(groups: &[usize]) -> Self {
        let mut map: Vec<(usize, usize)> = Vec::new();
        let labels = groups
            .iter()
            .map(|g| match map.iter().find(|(k, _)| k == g) {
                Some(&(_, l)) => l,
                None => {
                    let l = map.len();
                    map.push((*g, l));
                    l
                }
            })
            .collect();
        Self {
            labels,
            p: map.len(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Members of each cluster, ascending.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.p];
        for (client, &l) in self.labels.iter().enumerate() {
            out[l].push(client);
        }
        out
    }

    /// Whether every cluster of `self` lies inside one cluster of `coarser`.
    pub fn refines(&self, coarser: &ClusterAssignment) -> bool {
        self.len() == coarser.len()
            && self
                .clusters()
                .iter()
                .all(|c| c.iter().all(|&m| coarser.labels[m] == coarser.labels[c[0]]))
    }
}

fn validate(d: &DistanceMatrix) -> Result<()> {
    let n = d.n();
    if n < 2 {
        return Err(Error::Invalid(format!(
            "clustering needs at least 2 items, got {n}"
        )));
    }
    for i in 0..n {
        for j in 0..n {
            let v = d.get(i, j);
            if !v.is_finite() {
                return Err(Error::Invalid(format!("distance ({i}, {j}) is {v}")));
            }
            if (v - d.get(j, i)).abs() > SYMMETRY_TOLERANCE {
                return Err(Error::Invalid(format!(
                    "distance matrix is asymmetric at ({i}, {j}): {v} vs {}",
                    d.get(j, i)
                )));
            }
        }
    }
    Ok(())
}

/// Builds the full merge history, closest pair first.
pub fn agglomerate(d: &DistanceMatrix, linkage: Linkage) -> Result<Dendrogram> {
    validate(d)?;
    let n = d.n();
    // Slot i holds the live cluster whose smallest leaf is i.
    let mut dist: Vec<Vec<f64>> = d.rows().map(<[f64]>::to_vec).collect();
    let mut alive = vec![true; n];
    let mut ids: Vec<usize> = (0..n).collect();
    let mut sizes = vec![1usize; n];
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best: Option<(usize, usize)> = None;
        for i in (0..n).filter(|&i| alive[i]) {
            for j in (i + 1..n).filter(|&j| alive[j]) {
                if best.is_none_or(|(bi, bj)| dist[i][j] < dist[bi][bj]) {
                    best = Some((i, j));
                }
            }
        }
        let (i, j) = best.expect("at least two live clusters");
        let id = n + step;
        merges.push(Merge {
            a: ids[i],
            b: ids[j],
            distance: dist[i][j],
            id,
            size: sizes[i] + sizes[j],
        });
        for k in (0..n).filter(|&k| alive[k] && k != i && k != j) {
            let v = linkage.combine(dist[k][i], dist[k][j], sizes[i], sizes[j]);
            dist[k][i] = v;
            dist[i][k] = v;
        }
        alive[j] = false;
        sizes[i] += sizes[j];
        ids[i] = id;
    }
    Ok(Dendrogram { n, merges })
}

/// Applies the first `n - p` merges, leaving exactly `p` clusters.
pub fn cut(dendrogram: &Dendrogram, p: usize) -> Result<ClusterAssignment> {
    let n = dendrogram.n;
    if p == 0 || p > n {
        return Err(Error::Invalid(format!(
            "cluster count {p} outside [1, {n}]"
        )));
    }
    // owner[c] = representative leaf of the live cluster containing leaf c.
    let mut owner: Vec<usize> = (0..n).collect();
    let mut rep_of_id: Vec<usize> = (0..n).collect();
    for m in &dendrogram.merges[..n - p] {
        let (ra, rb) = (rep_of_id[m.a], rep_of_id[m.b]);
        let keep = ra.min(rb);
        for o in owner.iter_mut() {
            if *o == ra || *o == rb {
                *o = keep;
            }
        }
        rep_of_id.push(keep);
    }
    Ok(ClusterAssignment::from_groups(&owner))
}
