//! Simulated federated training: aggregation, client selection, the round
//! loop and the transmission ledger.

mod engine;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::controller::ControllerMode;
use crate::error::{Error, Result};
use crate::nn::ParamVector;

pub use engine::{FederationConfig, RoundRecord, ServerState, Simulation, Summary};

/// How participants are chosen once warmup is over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    /// Every client, every round.
    FedAvgAll,
    /// Cluster once at the end of warmup into `k` groups, then sample half
    /// of each group every round.
    FedSaucFixed { k: usize },
    /// Re-cluster every round with a controller-chosen count and sample one
    /// client per cluster.
    Adaptive(ControllerMode),
}

impl Policy {
    pub fn label(&self) -> String {
        match self {
            Policy::FedAvgAll => "FedAvg".to_string(),
            Policy::FedSaucFixed { k } => format!("FedSAUC({k})"),
            Policy::Adaptive(mode) => format!("Adaptive-{}", mode.label()),
        }
    }
}

/// Sample-count weighted mean of uploads, folded in the given order as a
/// running mean so identical uploads reproduce themselves exactly.
pub fn aggregate_fedavg(uploads: &[(&ParamVector, usize)]) -> Result<ParamVector> {
    let (first, rest) = uploads
        .split_first()
        .ok_or_else(|| Error::Empty("no uploads to aggregate".into()))?;
    if uploads.iter().any(|(_, c)| *c == 0) {
        return Err(Error::Invalid("upload with zero samples".into()));
    }
    let mut out = first.0.clone();
    let mut seen = first.1;
    for (params, count) in rest {
        params.check_len(out.len())?;
        seen += count;
        let w = *count as f64 / seen as f64;
        for (o, p) in out.iter_mut().zip(params.iter()) {
            *o += (p - *o) * w;
        }
    }
    Ok(out)
}

/// One uniformly drawn member per cluster, returned ascending.
pub fn select_one_per_cluster(assignment: &ClusterAssignment, rng: &mut impl Rng) -> Vec<usize> {
    let mut picked: Vec<usize> = assignment
        .clusters()
        .iter()
        .map(|members| members[rng.random_range(0..members.len())])
        .collect();
    picked.sort_unstable();
    picked
}

/// `max(1, size / 2)` members per cluster without replacement, ascending.
pub fn select_half_per_cluster(assignment: &ClusterAssignment, rng: &mut impl Rng) -> Vec<usize> {
    let mut picked: Vec<usize> = assignment
        .clusters()
        .iter()
        .flat_map(|members| {
            let take = (members.len() / 2).max(1);
            members
                .choose_multiple(rng, take)
                .copied()
                .collect::<Vec<_>>()
        })
        .collect();
    picked.sort_unstable();
    picked
}

/// Model uploads per round. Downloads are not counted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransmissionLedger {
    per_round: Vec<usize>,
}

impl TransmissionLedger {
    pub fn record(&mut self, uploads: usize) {
        self.per_round.push(uploads);
    }

    pub fn per_round(&self) -> &[usize] {
        &self.per_round
    }

    pub fn total(&self) -> usize {
        self.per_round.iter().sum()
    }
}

/// Accumulated upload count.
pub fn measure_transmissions(ledger: &TransmissionLedger) -> usize {
    ledger.total()
}
