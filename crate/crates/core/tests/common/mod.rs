#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use fedclust::clustering::ClusterAssignment;
use fedclust::controller::UnitDraw;
use fedclust::nn::{Batch, ModelSpec, ParamVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Fails with instructions when the digit files have not been fetched.
pub fn require_mnist() -> PathBuf {
    let dir = repo_root().join("data/mnist");
    for f in [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ] {
        assert!(
            dir.join(f).is_file(),
            "missing {}; run scripts/fetch-mnist.sh first",
            dir.join(f).display()
        );
    }
    dir
}

/// Replays a fixed list of unit draws.
pub struct Scripted(pub Vec<f64>);

impl UnitDraw for Scripted {
    fn unit(&mut self) -> f64 {
        assert!(!self.0.is_empty(), "scripted draws exhausted");
        self.0.remove(0)
    }
}

pub fn random_batch(spec: &ModelSpec, rows: usize, rng: &mut ChaCha8Rng) -> Batch {
    let inputs = (0..rows * spec.input.len())
        .map(|_| rng.random::<f64>())
        .collect();
    let labels = (0..rows)
        .map(|_| rng.random_range(0..spec.classes))
        .collect();
    Batch::new(inputs, labels).unwrap()
}

/// Initial parameters plus noise so that biases are not all zero.
pub fn random_params(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> ParamVector {
    let base = fedclust::nn::init_params(spec, rng.random()).unwrap();
    ParamVector::new(
        base.iter()
            .map(|v| v + rng.random_range(-0.1..0.1))
            .collect(),
    )
}

/// Central finite differences of the batch loss.
pub fn numeric_grad(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Vec<f64> {
    let loss = |p: &ParamVector| fedclust::nn::loss_and_grad(spec, p, batch).unwrap().0;
    let mut probe = params.clone();
    (0..params.len())
        .map(|j| {
            let orig = probe[j];
            probe[j] = orig + FD_STEP;
            let up = loss(&probe);
            probe[j] = orig - FD_STEP;
            let down = loss(&probe);
            probe[j] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, and the worst per-coordinate relative
/// error with a 1e-8 absolute floor.
pub fn relative_errors(a: &[f64], b: &[f64]) -> (f64, f64) {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let whole = norm(&diff) / norm(a).max(norm(b)).max(f64::MIN_POSITIVE);
    let worst = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (x.abs().max(y.abs()) + 1e-8))
        .fold(0.0, f64::max);
    (whole, worst)
}

/// Worst errors over `draws` random (params, batch) pairs.
pub fn gradient_check(spec: &ModelSpec, draws: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..draws {
        let params = random_params(spec, rng);
        let batch = random_batch(spec, 4, rng);
        let (_, analytic) = fedclust::nn::loss_and_grad(spec, &params, &batch).unwrap();
        let (whole, coord) = relative_errors(&analytic, &numeric_grad(spec, &params, &batch));
        worst = (worst.0.max(whole), worst.1.max(coord));
    }
    worst
}

pub type Partition = BTreeSet<BTreeSet<usize>>;

pub fn partition_of(a: &ClusterAssignment) -> Partition {
    a.clusters()
        .into_iter()
        .map(|c| c.into_iter().collect())
        .collect()
}

/// Average linkage from scratch: every inter-cluster distance is recomputed
/// as the mean over all cross pairs. Returns the partition at each count,
/// indexed by `p` (entry 0 unused).
pub fn brute_force_average_linkage(d: &[Vec<f64>]) -> Vec<Partition> {
    let n = d.len();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut out = vec![Partition::new(); n + 1];
    loop {
        out[clusters.len()] = clusters
            .iter()
            .map(|c| c.iter().copied().collect())
            .collect();
        if clusters.len() == 1 {
            return out;
        }
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let sum: f64 = clusters[a]
                    .iter()
                    .flat_map(|&i| clusters[b].iter().map(move |&j| d[i][j]))
                    .sum();
                let avg = sum / (clusters[a].len() * clusters[b].len()) as f64;
                if avg < best.0 {
                    best = (avg, a, b);
                }
            }
        }
        let merged = clusters.remove(best.2);
        clusters[best.1].extend(merged);
    }
}

/// Symmetric matrix with distinct uniform off-diagonal entries.
#[allow(clippy::needless_range_loop)]
pub fn random_distances(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.random_range(0.01..1.0);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Smallest gap between any two candidate merge distances the brute-force
/// oracle encounters; matrices with near-ties are skipped by the callers.
pub fn min_merge_gap(d: &[Vec<f64>]) -> f64 {
    let n = d.len();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut gap = f64::INFINITY;
    while clusters.len() > 1 {
        let mut cands = Vec::new();
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let sum: f64 = clusters[a]
                    .iter()
                    .flat_map(|&i| clusters[b].iter().map(move |&j| d[i][j]))
                    .sum();
                cands.push((sum / (clusters[a].len() * clusters[b].len()) as f64, a, b));
            }
        }
        cands.sort_by(|x, y| x.0.total_cmp(&y.0));
        if cands.len() > 1 {
            gap = gap.min(cands[1].0 - cands[0].0);
        }
        let (_, a, b) = cands[0];
        let merged = clusters.remove(b);
        clusters[a].extend(merged);
    }
    gap
}
