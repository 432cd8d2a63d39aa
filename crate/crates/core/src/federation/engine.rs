use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    aggregate_fedavg, select_half_per_cluster, select_one_per_cluster, Policy, TransmissionLedger,
};
use crate::clustering::{agglomerate, cut, ClusterAssignment, Linkage};
use crate::controller::{reduction_ratio, ControllerConfig, ControllerState};
use crate::data::{ClientShard, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{evaluate, local_train, LocalTrainConfig, ModelSpec, Network, ParamVector};
use crate::seed::{derive_rng, derive_seed, Purpose};
use crate::similarity::{basis_vector, distance_matrix, Basis};

/// Trailing window used for the modal cluster count in the summary.
pub const MODAL_WINDOW: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub rounds: usize,
    pub warmup_rounds: usize,
    pub policy: Policy,
    pub basis: Basis,
    pub linkage: Linkage,
    pub local: LocalTrainConfig,
    /// Threshold, hold and temperature; `n` and `mode` are filled in from
    /// the client count and the policy.
    pub controller: ControllerConfig,
    pub seed: u64,
    pub threads: usize,
}

/// Per-round log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub participants: Vec<usize>,
    /// Cluster count that produced this round's participant list.
    pub p: usize,
    /// Unweighted mean of the participants' reported training losses.
    pub mean_loss: f64,
    /// Relative loss drop versus the previous round; absent in round 1.
    pub reduction_ratio: Option<f64>,
    pub accuracy: f64,
    pub uploads: usize,
    pub cumulative_uploads: usize,
    /// Cluster labels that produced this round's participants, if clustered.
    pub assignment: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub rounds: usize,
    pub top_accuracy: f64,
    pub top_accuracy_round: usize,
    pub final_accuracy: f64,
    pub total_uploads: usize,
    /// Most frequent `p` over the trailing window; smaller wins ties.
    pub modal_p: usize,
    pub p_trajectory: Vec<usize>,
}

impl Summary {
    pub fn from_records(method: String, records: &[RoundRecord]) -> Result<Self> {
        let last = records
            .last()
            .ok_or_else(|| Error::Empty("no rounds were recorded".into()))?;
        let (top_idx, top) =
            records
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, r)| {
                    if r.accuracy > best.1 {
                        (i, r.accuracy)
                    } else {
                        best
                    }
                });
        let p_trajectory: Vec<usize> = records.iter().map(|r| r.p).collect();
        Ok(Self {
            method,
            rounds: records.len(),
            top_accuracy: top,
            top_accuracy_round: records[top_idx].round,
            final_accuracy: last.accuracy,
            total_uploads: last.cumulative_uploads,
            modal_p: modal(&p_trajectory[p_trajectory.len().saturating_sub(MODAL_WINDOW)..]),
            p_trajectory,
        })
    }
}

/// Most frequent value, smallest on ties.
pub(crate) fn modal(values: &[usize]) -> usize {
    let mut counts = std::collections::BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_insert(0usize) += 1;
    }
    counts
        .into_iter()
        .fold(
            (0, 0),
            |best, (v, c)| if c > best.1 { (v, c) } else { best },
        )
        .0
}

/// Everything the server knows between rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub global: ParamVector,
    pub cached_params: Vec<Option<ParamVector>>,
    /// Similarity vector of each client's latest upload.
    pub cached_basis: Vec<Option<ParamVector>>,
    pub cached_losses: Vec<Option<f64>>,
    pub loss_history: Vec<f64>,
    pub controller: Option<ControllerState>,
    pub ledger: TransmissionLedger,
    /// Rounds completed so far.
    pub round: usize,
    next_participants: Vec<usize>,
    next_p: usize,
    next_assignment: Option<ClusterAssignment>,
    fixed_assignment: Option<ClusterAssignment>,
    controller_rng: ChaCha8Rng,
}

/// A configured federation: model, client shards and a held-out test set.
pub struct Simulation {
    network: Network,
    shards: Vec<ClientShard>,
    test: LabeledDataset,
    cfg: FederationConfig,
    controller_cfg: ControllerConfig,
    pool: rayon::ThreadPool,
}

impl Simulation {
    pub fn new(
        spec: &ModelSpec,
        shards: Vec<ClientShard>,
        test: LabeledDataset,
        cfg: FederationConfig,
    ) -> Result<Self> {
        let network = spec.network()?;
        let n = shards.len();
        if n < 2 {
            return Err(Error::Invalid(format!("need at least 2 clients, got {n}")));
        }
        for (i, s) in shards.iter().enumerate() {
            if s.client_id != i {
                return Err(Error::Invalid(format!(
                    "shard {i} carries client id {}",
                    s.client_id
                )));
            }
            if s.sample_count() == 0 {
                return Err(Error::Empty(format!("client {i} has no samples")));
            }
        }
        if cfg.rounds == 0 {
            return Err(Error::Invalid("rounds must be at least 1".into()));
        }
        if cfg.warmup_rounds == 0 {
            return Err(Error::Invalid(
                "warmup must be at least 1 round so every client is cached".into(),
            ));
        }
        if let Policy::FedSaucFixed { k } = cfg.policy {
            if k == 0 || k > n {
                return Err(Error::Invalid(format!(
                    "FedSAUC cluster count {k} outside [1, {n}]"
                )));
            }
        }
        if cfg.local.batch_size == 0 {
            return Err(Error::Invalid("batch size must be at least 1".into()));
        }
        let mut controller_cfg = ControllerConfig {
            n,
            ..cfg.controller
        };
        if let Policy::Adaptive(mode) = cfg.policy {
            controller_cfg.mode = mode;
        }
        controller_cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads.max(1))
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
        Ok(Self {
            network,
            shards,
            test,
            cfg,
            controller_cfg,
            pool,
        })
    }

    pub fn clients(&self) -> usize {
        self.shards.len()
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn method(&self) -> String {
        self.cfg.policy.label()
    }

    pub fn start(&self) -> ServerState {
        let n = self.clients();
        let seed = self.cfg.seed;
        ServerState {
            global: self.network.init(derive_seed(seed, Purpose::Init, 0, 0)),
            cached_params: vec![None; n],
            cached_basis: vec![None; n],
            cached_losses: vec![None; n],
            loss_history: Vec::new(),
            controller: matches!(self.cfg.policy, Policy::Adaptive(_))
                .then(|| ControllerState::new(n)),
            ledger: TransmissionLedger::default(),
            round: 0,
            next_participants: (0..n).collect(),
            next_p: n,
            next_assignment: None,
            fixed_assignment: None,
            controller_rng: derive_rng(seed, Purpose::Controller, 0, 0),
        }
    }

    /// Local training, upload, aggregation, evaluation, then selection of the
    /// next round's participants.
    pub fn run_round(&self, state: &mut ServerState) -> Result<RoundRecord> {
        let round = state.round + 1;
        let participants = std::mem::take(&mut state.next_participants);
        let p_used = state.next_p;
        let assignment_used = state.next_assignment.take();

        let start = state.global.clone();
        let trained: Vec<(ParamVector, f64)> = self.pool.install(|| {
            participants
                .par_iter()
                .map(|&c| {
                    let seed =
                        derive_seed(self.cfg.seed, Purpose::LocalTrain, c as u64, round as u64);
                    local_train(
                        &self.network,
                        &start,
                        &self.shards[c],
                        &self.cfg.local,
                        seed,
                    )
                })
                .collect::<Result<Vec<_>>>()
        })?;
        state.ledger.record(participants.len());

        for (&c, (params, loss)) in participants.iter().zip(&trained) {
            state.cached_basis[c] = Some(basis_vector(params, &start, self.cfg.basis)?);
            state.cached_params[c] = Some(params.clone());
            state.cached_losses[c] = Some(*loss);
        }
        let mean_loss = trained.iter().map(|(_, l)| l).sum::<f64>() / trained.len() as f64;
        let ratio = match state.loss_history.last() {
            Some(&prev) => Some(reduction_ratio(prev, mean_loss)?),
            None => None,
        };
        state.loss_history.push(mean_loss);

        let uploads: Vec<(&ParamVector, usize)> = participants
            .iter()
            .zip(&trained)
            .map(|(&c, (params, _))| (params, self.shards[c].sample_count()))
            .collect();
        state.global = aggregate_fedavg(&uploads)?;
        let accuracy = evaluate(&self.network, &state.global, &self.test)?;

        if round >= self.cfg.warmup_rounds {
            self.select_next(state, round, ratio)?;
        } else {
            state.next_participants = (0..self.clients()).collect();
            state.next_p = self.clients();
        }
        state.round = round;

        Ok(RoundRecord {
            round,
            uploads: participants.len(),
            participants,
            p: p_used,
            mean_loss,
            reduction_ratio: ratio,
            accuracy,
            cumulative_uploads: state.ledger.total(),
            assignment: assignment_used.map(|a| a.labels().to_vec()),
        })
    }

    fn cluster(&self, state: &ServerState, p: usize) -> Result<ClusterAssignment> {
        let vectors: Vec<ParamVector> = state
            .cached_basis
            .iter()
            .enumerate()
            .map(|(c, v)| {
                v.clone()
                    .ok_or_else(|| Error::Invalid(format!("client {c} has never uploaded")))
            })
            .collect::<Result<_>>()?;
        let tree = agglomerate(&distance_matrix(&vectors)?, self.cfg.linkage)?;
        cut(&tree, p)
    }

    fn select_next(&self, state: &mut ServerState, round: usize, ratio: Option<f64>) -> Result<()> {
        let n = self.clients();
        let mut rng = derive_rng(self.cfg.seed, Purpose::Selection, round as u64 + 1, 0);
        match self.cfg.policy {
            Policy::FedAvgAll => {
                state.next_participants = (0..n).collect();
                state.next_p = n;
            }
            Policy::FedSaucFixed { k } => {
                if state.fixed_assignment.is_none() {
                    state.fixed_assignment = Some(self.cluster(state, k)?);
                }
                let assignment = state.fixed_assignment.clone().expect("set above");
                state.next_participants = select_half_per_cluster(&assignment, &mut rng);
                state.next_p = k;
                state.next_assignment = Some(assignment);
            }
            Policy::Adaptive(_) => {
                let controller = state
                    .controller
                    .as_mut()
                    .expect("adaptive runs own a controller");
                let p = match ratio {
                    Some(r) => controller.step(&self.controller_cfg, r, &mut state.controller_rng),
                    None => controller.p,
                };
                let assignment = self.cluster(state, p)?;
                state.next_participants = select_one_per_cluster(&assignment, &mut rng);
                state.next_p = p;
                state.next_assignment = Some(assignment);
            }
        }
        Ok(())
    }

    /// Runs every configured round, handing each record to `on_round` as it
    /// completes.
    pub fn run(
        &self,
        mut on_round: impl FnMut(&RoundRecord) -> Result<()>,
    ) -> Result<(Vec<RoundRecord>, Summary)> {
        let mut state = self.start();
        let mut records = Vec::with_capacity(self.cfg.rounds);
        for _ in 0..self.cfg.rounds {
            let rec = self.run_round(&mut state)?;
            on_round(&rec)?;
            records.push(rec);
        }
        let summary = Summary::from_records(self.method(), &records)?;
        Ok((records, summary))
    }
}
