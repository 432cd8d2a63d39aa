//! Planted-group Gaussian blobs: a testbed where the right number of client
//! clusters is known in advance.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ClientShard, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::InputShape;
use crate::seed::{derive_rng, Purpose};

const MAX_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub groups: usize,
    pub clients_per_group: usize,
    pub dims: usize,
    pub spread: f64,
    pub samples_per_client: usize,
}

impl SynthSpec {
    pub fn clients(&self) -> usize {
        self.groups * self.clients_per_group
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.clients_per_group == 0 || self.clients() < 2 {
            return Err(Error::Invalid(format!(
                "need at least 2 clients, got {} groups x {} clients",
                self.groups, self.clients_per_group
            )));
        }
        if self.dims == 0 || self.samples_per_client == 0 {
            return Err(Error::Invalid(
                "dims and samples per client must be positive".into(),
            ));
        }
        if !(self.spread.is_finite() && self.spread >= 0.0) {
            return Err(Error::Invalid(format!(
                "spread {} must be finite and >= 0",
                self.spread
            )));
        }
        Ok(())
    }
}

/// One mean per group, pairwise at least `10 * spread` apart.
pub fn synth_means(spec: &SynthSpec, seed: u64) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let min_dist = 10.0 * spread_floor(spec.spread);
    let half_width = min_dist * spec.groups as f64;
    let mut rng = derive_rng(seed, Purpose::Synth, 0, 0);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(spec.groups);
    let mut attempts = 0;
    while means.len() < spec.groups {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(Error::Invalid(
                "could not place well-separated group means".into(),
            ));
        }
        let cand: Vec<f64> = (0..spec.dims)
            .map(|_| rng.random_range(-half_width..half_width))
            .collect();
        let far = means.iter().all(|m| {
            let d2: f64 = m.iter().zip(&cand).map(|(a, b)| (a - b).powi(2)).sum();
            d2.sqrt() >= min_dist
        });
        if far {
            means.push(cand);
        }
    }
    Ok(means)
}

/// Degenerate spreads still get a unit-scale layout for the means.
fn spread_floor(spread: f64) -> f64 {
    if spread > 0.0 {
        spread
    } else {
        0.1
    }
}

fn draw(mean: &[f64], spread: f64, n: usize, rng: &mut impl Rng, out: &mut Vec<f64>) {
    for _ in 0..n {
        for &m in mean {
            let z: f64 = rng.sample(StandardNormal);
            out.push(m + spread * z);
        }
    }
}

/// Client `g * clients_per_group + j` belongs to group `g`; every sample is
/// labeled with its group id.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Vec<ClientShard>> {
    let means = synth_means(spec, seed)?;
    let n = spec.samples_per_client;
    (0..spec.clients())
        .map(|client| {
            let g = client / spec.clients_per_group;
            let mut rng = derive_rng(seed, Purpose::Synth, 1, client as u64);
            let mut features = Vec::with_capacity(n * spec.dims);
            draw(&means[g], spec.spread, n, &mut rng, &mut features);
            let dataset = LabeledDataset::new(
                InputShape::flat(spec.dims),
                spec.groups,
                features,
                vec![g; n],
            )?;
            Ok(ClientShard {
                client_id: client,
                dataset,
                source_indices: (client * n..(client + 1) * n).collect(),
            })
        })
        .collect()
}

/// Held-out samples from the same blobs, `per_group` for each group.
pub fn synth_test_set(spec: &SynthSpec, seed: u64, per_group: usize) -> Result<LabeledDataset> {
    let means = synth_means(spec, seed)?;
    let mut features = Vec::with_capacity(spec.groups * per_group * spec.dims);
    let mut labels = Vec::with_capacity(spec.groups * per_group);
    for (g, mean) in means.iter().enumerate() {
        let mut rng = derive_rng(seed, Purpose::Synth, 2, g as u64);
        draw(mean, spec.spread, per_group, &mut rng, &mut features);
        labels.extend(std::iter::repeat_n(g, per_group));
    }
    LabeledDataset::new(InputShape::flat(spec.dims), spec.groups, features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(spread: f64) -> SynthSpec {
        SynthSpec {
            groups: 4,
            clients_per_group: 2,
            dims: 2,
            spread,
            samples_per_client: 50,
        }
    }

    #[test]
    fn nearest_centroid_recovers_groups() {
        let s = spec(0.5);
        let shards = synth_generate(&s, 1).unwrap();
        assert_eq!(shards.len(), 8);
        // Oracle: centroids estimated from the samples themselves.
        let mut centroids = vec![vec![0.0; 2]; 4];
        let mut counts = vec![0usize; 4];
        for sh in &shards {
            for i in 0..sh.sample_count() {
                let g = sh.dataset.label(i);
                counts[g] += 1;
                for (c, x) in centroids[g].iter_mut().zip(sh.dataset.sample(i)) {
                    *c += x;
                }
            }
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= *n as f64);
        }
        let (mut hit, mut total) = (0, 0);
        for sh in &shards {
            for i in 0..sh.sample_count() {
                let x = sh.dataset.sample(i);
                let nearest = (0..4)
                    .min_by(|&a, &b| {
                        let da: f64 = centroids[a]
                            .iter()
                            .zip(x)
                            .map(|(m, v)| (m - v).powi(2))
                            .sum();
                        let db: f64 = centroids[b]
                            .iter()
                            .zip(x)
                            .map(|(m, v)| (m - v).powi(2))
                            .sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                hit += usize::from(nearest == sh.dataset.label(i));
                total += 1;
            }
        }
        assert!(hit as f64 / total as f64 >= 0.99, "{hit}/{total}");
    }

    #[test]
    fn same_seed_same_shards() {
        assert_eq!(
            synth_generate(&spec(0.5), 3).unwrap(),
            synth_generate(&spec(0.5), 3).unwrap()
        );
    }

    #[test]
    fn zero_spread_collapses_to_means() {
        let s = spec(0.0);
        let means = synth_means(&s, 5).unwrap();
        for sh in synth_generate(&s, 5).unwrap() {
            let g = sh.client_id / 2;
            for i in 0..sh.sample_count() {
                assert_eq!(sh.dataset.sample(i), means[g].as_slice());
            }
        }
    }

    #[test]
    fn means_are_separated() {
        let s = spec(0.5);
        let m = synth_means(&s, 11).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                let d: f64 = m[i]
                    .iter()
                    .zip(&m[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d >= 5.0);
            }
        }
    }

    #[test]
    fn too_few_clients_rejected() {
        let s = SynthSpec {
            groups: 1,
            clients_per_group: 1,
            ..spec(0.5)
        };
        assert!(synth_generate(&s, 0).is_err());
    }
}
