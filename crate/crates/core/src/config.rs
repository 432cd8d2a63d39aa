//! JSON experiment configuration.
//!
//! Unknown keys are rejected everywhere. Relative dataset paths resolve
//! against the directory holding the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::Linkage;
use crate::controller::{ControllerConfig, ControllerMode};
use crate::data::{
    filter_labels, load_idx, partition, synth_generate, synth_test_set, ClientShard,
    LabeledDataset, PartitionPlan, SynthSpec,
};
use crate::error::{Error, Result};
use crate::federation::{FederationConfig, Policy, Simulation};
use crate::nn::{InputShape, LocalTrainConfig, ModelSpec};
use crate::seed::{derive_seed, Purpose};
use crate::similarity::Basis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Digit images in IDX files, split across clients by label.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Labels kept for training (re-indexed densely); default 0..=7.
        #[serde(default = "default_labels")]
        labels: Vec<usize>,
        /// Label set per client; default pairs `{2k, 2k+1}`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label_sets: Option<Vec<Vec<usize>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        per_client_cap: Option<usize>,
        /// Evaluate on the first N test samples only.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_cap: Option<usize>,
        #[serde(default)]
        test_split: TestSplit,
    },
    /// Planted Gaussian groups, one label per group.
    Synth {
        groups: usize,
        clients_per_group: usize,
        dims: usize,
        spread: f64,
        samples_per_client: usize,
        #[serde(default = "default_test_per_group")]
        test_per_group: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestSplit {
    /// Test samples restricted to the kept labels.
    #[default]
    Filtered,
    /// Every test sample; labels outside the kept set can never be predicted.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchitectureId {
    #[serde(rename = "LOGREG")]
    LogReg,
    #[serde(rename = "MLP")]
    Mlp,
    #[serde(rename = "PAPER_CNN")]
    PaperCnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_architecture")]
    pub architecture: ArchitectureId,
    /// Hidden widths for MLP.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: default_architecture(),
            hidden: default_hidden(),
            lr: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyId {
    #[serde(rename = "FEDAVG_ALL")]
    FedAvgAll,
    #[serde(rename = "FEDSAUC_FIXED_K")]
    FedSaucFixedK,
    #[serde(rename = "ADAPTIVE")]
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSection {
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_policy")]
    pub policy: PolicyId,
    /// Cluster count for FEDSAUC_FIXED_K.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default)]
    pub basis: Basis,
    #[serde(default)]
    pub linkage: Linkage,
}

impl Default for FederationSection {
    fn default() -> Self {
        Self {
            clients: default_clients(),
            rounds: default_rounds(),
            warmup: default_warmup(),
            policy: default_policy(),
            k: None,
            basis: Basis::default(),
            linkage: Linkage::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(default = "default_mode")]
    pub mode: ControllerMode,
    #[serde(default = "default_w")]
    pub w: f64,
    #[serde(default = "default_hold")]
    pub hold: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            w: default_w(),
            hold: default_hold(),
            temperature: default_temperature(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
        }
    }
}

fn default_seed() -> u64 {
    1
}
fn default_threads() -> usize {
    1
}
fn default_labels() -> Vec<usize> {
    (0..8).collect()
}
fn default_test_per_group() -> usize {
    200
}
fn default_architecture() -> ArchitectureId {
    ArchitectureId::PaperCnn
}
fn default_hidden() -> Vec<usize> {
    vec![64]
}
fn default_lr() -> f64 {
    0.01
}
fn default_epochs() -> usize {
    1
}
fn default_batch() -> usize {
    32
}
fn default_clients() -> usize {
    8
}
fn default_rounds() -> usize {
    200
}
fn default_warmup() -> usize {
    2
}
fn default_policy() -> PolicyId {
    PolicyId::Adaptive
}
fn default_mode() -> ControllerMode {
    ControllerMode::Exp
}
fn default_w() -> f64 {
    0.01
}
fn default_hold() -> usize {
    5
}
fn default_temperature() -> f64 {
    10.0
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fed = &self.federation;
        if fed.clients < 2 {
            return Err(bad(format!(
                "federation.clients must be >= 2, got {}",
                fed.clients
            )));
        }
        if fed.rounds == 0 {
            return Err(bad("federation.rounds must be >= 1"));
        }
        if fed.warmup == 0 {
            return Err(bad("federation.warmup must be >= 1"));
        }
        match (fed.policy, fed.k) {
            (PolicyId::FedSaucFixedK, None) => {
                return Err(bad("federation.k is required for FEDSAUC_FIXED_K"))
            }
            (PolicyId::FedSaucFixedK, Some(k)) if k == 0 || k > fed.clients => {
                return Err(bad(format!(
                    "federation.k = {k} must lie in [1, {}]",
                    fed.clients
                )));
            }
            (PolicyId::FedAvgAll | PolicyId::Adaptive, Some(_)) => {
                return Err(bad("federation.k only applies to FEDSAUC_FIXED_K"));
            }
            _ => {}
        }
        let m = &self.model;
        if !(m.lr.is_finite() && m.lr > 0.0) {
            return Err(bad(format!("model.lr must be positive, got {}", m.lr)));
        }
        if m.batch_size == 0 {
            return Err(bad("model.batch_size must be >= 1"));
        }
        if m.architecture == ArchitectureId::Mlp && (m.hidden.is_empty() || m.hidden.contains(&0)) {
            return Err(bad("model.hidden must list positive widths for MLP"));
        }
        let c = &self.controller;
        if !(c.w.is_finite() && c.w >= 0.0) {
            return Err(bad(format!("controller.w must be >= 0, got {}", c.w)));
        }
        if !(c.temperature.is_finite() && c.temperature > 0.0) {
            return Err(bad(format!(
                "controller.temperature must be positive, got {}",
                c.temperature
            )));
        }
        if self.threads == 0 {
            return Err(bad("threads must be >= 1"));
        }
        match &self.dataset {
            DatasetConfig::Idx {
                labels,
                label_sets,
                per_client_cap,
                test_cap,
                ..
            } => {
                if labels.is_empty() {
                    return Err(bad("dataset.labels must not be empty"));
                }
                if per_client_cap == &Some(0) || test_cap == &Some(0) {
                    return Err(bad("dataset caps must be positive"));
                }
                let keep: BTreeSet<usize> = labels.iter().copied().collect();
                let sets = self.label_sets();
                if sets.len() != fed.clients {
                    return Err(bad(format!(
                        "dataset.label_sets lists {} clients but federation.clients = {}",
                        sets.len(),
                        fed.clients
                    )));
                }
                for (i, s) in sets.iter().enumerate() {
                    if s.is_empty() || !s.is_subset(&keep) {
                        return Err(bad(format!(
                            "client {i} label set {s:?} must be non-empty and within dataset.labels"
                        )));
                    }
                }
                if label_sets.is_none() && fed.clients > 2 * keep.len() {
                    return Err(bad(
                        "pairwise partition needs two kept labels per client pair",
                    ));
                }
            }
            DatasetConfig::Synth {
                groups,
                clients_per_group,
                dims,
                spread,
                samples_per_client,
                test_per_group,
            } => {
                let spec = SynthSpec {
                    groups: *groups,
                    clients_per_group: *clients_per_group,
                    dims: *dims,
                    spread: *spread,
                    samples_per_client: *samples_per_client,
                };
                spec.validate().map_err(|e| bad(format!("dataset: {e}")))?;
                if spec.clients() != fed.clients {
                    return Err(bad(format!(
                        "synthetic data makes {} clients but federation.clients = {}",
                        spec.clients(),
                        fed.clients
                    )));
                }
                if *test_per_group == 0 {
                    return Err(bad("dataset.test_per_group must be >= 1"));
                }
            }
        }
        Ok(())
    }

    /// Per-client label sets in original label ids (IDX datasets only).
    fn label_sets(&self) -> Vec<BTreeSet<usize>> {
        match &self.dataset {
            DatasetConfig::Idx {
                labels,
                label_sets: Some(sets),
                ..
            } => {
                let _ = labels;
                sets.iter().map(|s| s.iter().copied().collect()).collect()
            }
            DatasetConfig::Idx { labels, .. } => {
                let keep: Vec<usize> = labels
                    .iter()
                    .copied()
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                (0..self.federation.clients)
                    .map(|c| {
                        let base = 2 * (c / 2);
                        [base, base + 1]
                            .iter()
                            .filter_map(|&i| keep.get(i).copied())
                            .collect()
                    })
                    .collect()
            }
            DatasetConfig::Synth { .. } => Vec::new(),
        }
    }

    pub fn policy(&self) -> Policy {
        match self.federation.policy {
            PolicyId::FedAvgAll => Policy::FedAvgAll,
            PolicyId::FedSaucFixedK => Policy::FedSaucFixed {
                k: self.federation.k.unwrap_or(1),
            },
            PolicyId::Adaptive => Policy::Adaptive(self.controller.mode),
        }
    }

    pub fn federation_config(&self) -> FederationConfig {
        let c = &self.controller;
        FederationConfig {
            rounds: self.federation.rounds,
            warmup_rounds: self.federation.warmup,
            policy: self.policy(),
            basis: self.federation.basis,
            linkage: self.federation.linkage,
            local: LocalTrainConfig {
                epochs: self.model.epochs,
                batch_size: self.model.batch_size,
                lr: self.model.lr,
            },
            controller: ControllerConfig {
                n: self.federation.clients,
                w: c.w,
                hold_rounds: c.hold,
                mode: c.mode,
                sa_temperature: c.temperature,
            },
            seed: self.seed,
            threads: self.threads,
        }
    }

    pub fn model_spec(&self, input: InputShape, classes: usize) -> ModelSpec {
        match self.model.architecture {
            ArchitectureId::LogReg => ModelSpec::logreg(input, classes),
            ArchitectureId::Mlp => ModelSpec::mlp(input, self.model.hidden.clone(), classes),
            ArchitectureId::PaperCnn => ModelSpec::cnn(input, 32, 64, 128, classes),
        }
    }

    /// Loads or generates the client shards and the test set.
    pub fn load_data(&self, base_dir: &Path) -> Result<(Vec<ClientShard>, LabeledDataset)> {
        let data_seed = derive_seed(self.seed, Purpose::Partition, 0, 0);
        match &self.dataset {
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                labels,
                per_client_cap,
                test_cap,
                test_split,
                ..
            } => {
                let keep: BTreeSet<usize> = labels.iter().copied().collect();
                let train = load_idx(base_dir.join(train_images), base_dir.join(train_labels))?;
                let filtered = filter_labels(&train, &keep, true)?.dataset;
                drop(train);
                let dense = |l: usize| keep.iter().position(|&k| k == l);
                let plan = PartitionPlan {
                    n_clients: self.federation.clients,
                    labels_per_client: self
                        .label_sets()
                        .iter()
                        .map(|s| s.iter().filter_map(|&l| dense(l)).collect())
                        .collect(),
                    per_client_cap: *per_client_cap,
                    seed: data_seed,
                };
                let shards = partition(&filtered, &plan)?;
                drop(filtered);

                let test = load_idx(base_dir.join(test_images), base_dir.join(test_labels))?;
                let mut test = match test_split {
                    TestSplit::Filtered => filter_labels(&test, &keep, true)?.dataset,
                    TestSplit::Full => {
                        let other = keep.len();
                        let relabeled = test
                            .labels()
                            .iter()
                            .map(|&l| dense(l).unwrap_or(other))
                            .collect();
                        LabeledDataset::new(
                            test.shape(),
                            other + 1,
                            test.features().to_vec(),
                            relabeled,
                        )?
                    }
                };
                if let Some(cap) = test_cap {
                    test = test.truncated(*cap);
                }
                Ok((shards, test))
            }
            DatasetConfig::Synth {
                groups,
                clients_per_group,
                dims,
                spread,
                samples_per_client,
                test_per_group,
            } => {
                let spec = SynthSpec {
                    groups: *groups,
                    clients_per_group: *clients_per_group,
                    dims: *dims,
                    spread: *spread,
                    samples_per_client: *samples_per_client,
                };
                let seed = derive_seed(self.seed, Purpose::Synth, 0, 0);
                Ok((
                    synth_generate(&spec, seed)?,
                    synth_test_set(&spec, seed, *test_per_group)?,
                ))
            }
        }
    }

    /// Class count the model head needs for the loaded training data.
    pub fn classes(&self) -> usize {
        match &self.dataset {
            DatasetConfig::Idx { labels, .. } => labels.iter().collect::<BTreeSet<_>>().len(),
            DatasetConfig::Synth { groups, .. } => *groups,
        }
    }

    pub fn build_simulation(&self, base_dir: &Path) -> Result<Simulation> {
        let (shards, test) = self.load_data(base_dir)?;
        self.simulation_from(shards, test)
    }

    pub fn simulation_from(
        &self,
        shards: Vec<ClientShard>,
        test: LabeledDataset,
    ) -> Result<Simulation> {
        let input = shards
            .first()
            .map(|s| s.dataset.shape())
            .ok_or_else(|| Error::Empty("no client shards".into()))?;
        let spec = self.model_spec(input, self.classes());
        Simulation::new(&spec, shards, test, self.federation_config())
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<SimConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SimConfig::from_json(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Directory relative paths in a config are resolved against.
pub fn config_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"dataset": {"kind": "synth", "groups": 4, "clients_per_group": 2,
        "dims": 2, "spread": 0.5, "samples_per_client": 10}}"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = SimConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.controller.w, 0.01);
        assert_eq!(cfg.controller.hold, 5);
        assert_eq!(cfg.controller.temperature, 10.0);
        assert_eq!(cfg.federation.warmup, 2);
        assert_eq!(cfg.model.lr, 0.01);
        assert_eq!(cfg.model.epochs, 1);
        assert_eq!(cfg.model.batch_size, 32);
        assert_eq!(cfg.federation.clients, 8);
        assert_eq!(cfg.federation.rounds, 200);
    }

    #[test]
    fn fedsauc_k_zero_is_rejected() {
        let text = MINIMAL.replace(
            "\"dataset\"",
            r#""federation": {"policy": "FEDSAUC_FIXED_K", "k": 0}, "dataset""#,
        );
        let err = SimConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("federation.k"), "{err}");
    }

    #[test]
    fn unknown_keys_are_named() {
        let text = MINIMAL.replace("\"dataset\"", r#""foo": 1, "dataset""#);
        let err = SimConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("foo"), "{err}");
        let nested = MINIMAL.replace("\"dims\"", r#""bar": 2, "dims""#);
        let err = SimConfig::from_json(&nested).unwrap_err().to_string();
        assert!(err.contains("bar"), "{err}");
    }

    #[test]
    fn serialized_config_reparses_equal() {
        let cfg = SimConfig::from_json(MINIMAL).unwrap();
        assert_eq!(SimConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
        let idx = SimConfig::from_json(
            r#"{"dataset": {"kind": "idx", "train_images": "a", "train_labels": "b",
                "test_images": "c", "test_labels": "d", "per_client_cap": 512},
                "federation": {"policy": "FEDSAUC_FIXED_K", "k": 4},
                "model": {"architecture": "MLP", "hidden": [32, 16]}}"#,
        )
        .unwrap();
        assert_eq!(SimConfig::from_json(&idx.to_json().unwrap()).unwrap(), idx);
    }

    #[test]
    fn synth_client_count_must_match() {
        let text = MINIMAL.replace("\"dataset\"", r#""federation": {"clients": 6}, "dataset""#);
        assert!(SimConfig::from_json(&text).is_err());
    }

    #[test]
    fn pairwise_label_sets() {
        let cfg = SimConfig::from_json(
            r#"{"dataset": {"kind": "idx", "train_images": "a", "train_labels": "b",
                "test_images": "c", "test_labels": "d"}}"#,
        )
        .unwrap();
        let sets = cfg.label_sets();
        assert_eq!(sets[5], BTreeSet::from([4, 5]));
        assert_eq!(cfg.classes(), 8);
    }
}
