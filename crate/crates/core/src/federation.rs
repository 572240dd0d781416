//! Round engine: client sampling, local SGD, cadence-gated alignment and
//! data-size-weighted averaging.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::{ClientShard, Split};
use crate::error::{FedError, Result};
use crate::metrics::{evaluate_client, AucSmoothing, RoundReport};
use crate::model::{build_model, local_train, GlobalModel, ModelConfig, ModelDims, TrainOptions};
use crate::numerics::Tensor;
use crate::ra::{ProjectionBasis, RaConfig, RaState};
use crate::rng::{derived, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Plain federated averaging, global model evaluated as is.
    #[serde(rename = "fedavg")]
    FedAvg,
    /// FedAvg training; each client fine-tunes a clone before evaluation.
    #[serde(rename = "fedavg_ft")]
    FedAvgFt,
    /// FedAvg plus the learned projection `P`.
    #[serde(rename = "fedcs")]
    FedCs,
    /// Every client trains its own model, no communication.
    LocalOnly,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::FedAvg,
        Strategy::FedAvgFt,
        Strategy::FedCs,
        Strategy::LocalOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FedAvg => "fedavg",
            Strategy::FedAvgFt => "fedavg_ft",
            Strategy::FedCs => "fedcs",
            Strategy::LocalOnly => "local_only",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = FedError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                FedError::Config(format!(
                    "unknown strategy {s:?}; expected one of fedavg, fedavg_ft, fedcs, local_only"
                ))
            })
    }
}

/// How the server combines client projections on alignment rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionAggregation {
    /// Average `S` and `Φ` separately, then `P = S·Φ`.
    #[default]
    Factors,
    /// Average the client projections `P_i = S_i·Φ_i` directly.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedConfig {
    /// Clients sampled per round.
    pub sampled_per_round: usize,
    pub rounds: usize,
    /// Alignment runs on rounds where `round % ra_cadence == 0`.
    pub ra_cadence: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub ra: RaConfig,
    /// With `false`, FedCS keeps `P` at its initial identity.
    pub ra_enabled: bool,
    pub projection_aggregation: ProjectionAggregation,
    pub fine_tune_epochs: usize,
    /// Evaluate after every `eval_every`-th round and after the last one.
    pub eval_every: usize,
    pub smoothing: AucSmoothing,
    /// Set by the experiment configuration, not read from JSON.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            sampled_per_round: 10,
            rounds: 60,
            ra_cadence: 5,
            local_epochs: 1,
            batch_size: 16,
            lr0: 0.005,
            lr_decay: 0.8,
            lr_decay_every: 50,
            ra: RaConfig::default(),
            ra_enabled: true,
            projection_aggregation: ProjectionAggregation::Factors,
            fine_tune_epochs: 1,
            eval_every: 1,
            smoothing: AucSmoothing::Laplace,
            seed: 0,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FedError::Config(msg));
        if self.sampled_per_round == 0 {
            return bad("sampled_per_round must be at least 1".into());
        }
        if self.ra_cadence == 0 {
            return bad("ra_cadence must be at least 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 {} must be positive", self.lr0));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay {} must be in (0, 1]", self.lr_decay));
        }
        if self.lr_decay_every == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return bad("lr_decay_every, batch_size and eval_every must be positive".into());
        }
        if !(self.ra.eta > 0.0 && self.ra.lambda > 0.0) {
            return bad("ra.eta and ra.lambda must be positive".into());
        }
        Ok(())
    }

    /// `lr0 · lr_decay^⌊round / lr_decay_every⌋`
    pub fn lr_at(&self, round: usize) -> f64 {
        self.lr0 * self.lr_decay.powi((round / self.lr_decay_every) as i32)
    }

    pub fn is_ra_round(&self, round: usize) -> bool {
        self.ra_enabled && round % self.ra_cadence == 0
    }

    pub fn is_eval_round(&self, round: usize) -> bool {
        (round + 1) % self.eval_every == 0 || round + 1 == self.rounds
    }
}

/// Server-side state between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    /// Index of the next round to run.
    pub round: usize,
    pub global: GlobalModel,
    /// Present for FedCS.
    pub ra: Option<RaState>,
    /// Per-client models for local-only training, in shard order.
    pub locals: Vec<GlobalModel>,
}

impl ServerState {
    pub fn init(
        config: &FedConfig,
        strategy: Strategy,
        model: &ModelConfig,
        dims: ModelDims,
        num_clients: usize,
    ) -> Result<ServerState> {
        let with_projection = strategy == Strategy::FedCs;
        let global = build_model(model, dims, with_projection, config.seed)?;
        let ra = if with_projection {
            Some(RaState::new(
                global.latent_dim(),
                global.rank(),
                config.ra.clone(),
                config.seed,
            )?)
        } else {
            None
        };
        let locals = if strategy == Strategy::LocalOnly {
            vec![global.clone(); num_clients]
        } else {
            Vec::new()
        };
        Ok(ServerState {
            round: 0,
            global,
            ra,
            locals,
        })
    }
}

/// `Σ αᵢ θᵢ / Σ αᵢ`, evaluated as `θ₁ + Σ (αᵢ/Σα)(θᵢ − θ₁)` so that a single
/// update, or identical updates, come back bit for bit.
pub fn fedavg_aggregate(updates: &[(Vec<Tensor>, f64)]) -> Result<Vec<Tensor>> {
    let (reference, _) = updates
        .first()
        .ok_or_else(|| FedError::Validation("no updates to aggregate".into()))?;
    let total: f64 = updates.iter().map(|(_, w)| *w).sum();
    if updates.iter().any(|(_, w)| !(*w >= 0.0)) || !(total > 0.0) {
        return Err(FedError::Validation(
            "aggregation weights must be non-negative and not all zero".into(),
        ));
    }
    for (params, _) in updates {
        let same = params.len() == reference.len()
            && params
                .iter()
                .zip(reference)
                .all(|(a, b)| a.shape() == b.shape());
        if !same {
            return Err(FedError::Validation(
                "client updates have mismatched parameter shapes".into(),
            ));
        }
    }
    let mut out = reference.clone();
    for (params, w) in &updates[1..] {
        let a = w / total;
        for (acc, (p, r)) in out.iter_mut().zip(params.iter().zip(reference)) {
            for ((o, &x), &x0) in acc.data_mut().iter_mut().zip(p.data()).zip(r.data()) {
                *o += a * (x - x0);
            }
        }
    }
    Ok(out)
}

/// `m` distinct training clients for `round`, sorted by id.
pub fn sample_cohort(train_ids: &[usize], m: usize, seed: u64, round: usize) -> Result<Vec<usize>> {
    if train_ids.is_empty() {
        return Err(FedError::Config("no training clients to sample".into()));
    }
    if m > train_ids.len() {
        return Err(FedError::Config(format!(
            "cannot sample {m} clients from {} training clients",
            train_ids.len()
        )));
    }
    let mut rng = derived(seed, &[tag::CLIENT_SAMPLING, round as u64]);
    let mut cohort: Vec<usize> = index::sample(&mut rng, train_ids.len(), m)
        .into_iter()
        .map(|i| train_ids[i])
        .collect();
    cohort.sort_unstable();
    Ok(cohort)
}

fn round_seed(seed: u64, purpose: u64, round: usize) -> u64 {
    derived(seed, &[purpose, round as u64]).next_u64()
}

/// Seed of every client's local SGD in `round`. Clients share it, so clients
/// holding identical data produce identical updates.
pub fn local_train_seed(seed: u64, round: usize) -> u64 {
    round_seed(seed, tag::LOCAL_TRAIN, round)
}

fn train_options(config: &FedConfig, round: usize, epochs: usize, seed: u64) -> TrainOptions {
    TrainOptions {
        epochs,
        lr: config.lr_at(round),
        batch_size: config.batch_size,
        seed,
    }
}

/// Clone of `global` trained on the shard's local-train split; `global` is
/// untouched.
pub fn fine_tune_eval(
    global: &GlobalModel,
    shard: &ClientShard,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<GlobalModel> {
    if shard.train.is_empty() {
        return Err(FedError::Validation(format!(
            "client {} has no local-train data to fine-tune on",
            shard.client_id
        )));
    }
    let mut model = global.clone();
    local_train(
        &mut model,
        &shard.train.features,
        &shard.train.labels,
        TrainOptions {
            epochs,
            lr,
            batch_size,
            seed,
        },
    )?;
    Ok(model)
}

/// One pass of the alignment learner over a client's local-train data in
/// shuffled mini-batches. A trailing batch of one sample joins the previous
/// batch. Returns `false` when the client has fewer than two samples.
fn client_alignment(
    ra: &mut RaState,
    model: &GlobalModel,
    shard: &ClientShard,
    batch_size: usize,
    seed: u64,
    round: usize,
) -> Result<bool> {
    let n = shard.train.len();
    if n < 2 {
        return Ok(false);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived(
        seed,
        &[tag::RA_BATCH, round as u64, shard.client_id as u64],
    ));
    let size = batch_size.max(2);
    let mut batches: Vec<&[usize]> = order.chunks(size).collect();
    if batches.len() > 1 && batches[batches.len() - 1].len() == 1 {
        batches.pop();
        let merged_from = (batches.len() - 1) * size;
        let last = batches.len() - 1;
        batches[last] = &order[merged_from..];
    }
    for batch in batches {
        let z = model.latents(&shard.train.features.select_rows(batch))?;
        ra.align_batch(&z)?;
    }
    Ok(true)
}

/// What happened in one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundOutcome {
    pub round: usize,
    /// Client ids that trained (all clients for local-only).
    pub cohort: Vec<usize>,
    pub ra_updated: bool,
}

/// Runs round `state.round` and advances the counter.
pub fn run_round(
    state: &mut ServerState,
    shards: &[ClientShard],
    config: &FedConfig,
    strategy: Strategy,
) -> Result<RoundOutcome> {
    let round = state.round;
    if strategy == Strategy::LocalOnly {
        if state.locals.len() != shards.len() {
            return Err(FedError::Validation(format!(
                "{} local models for {} clients",
                state.locals.len(),
                shards.len()
            )));
        }
        let seed = local_train_seed(config.seed, round);
        for (model, shard) in state.locals.iter_mut().zip(shards) {
            if !shard.train.is_empty() {
                local_train(
                    model,
                    &shard.train.features,
                    &shard.train.labels,
                    train_options(config, round, config.local_epochs, seed),
                )?;
            }
        }
        state.round += 1;
        return Ok(RoundOutcome {
            round,
            cohort: shards.iter().map(|s| s.client_id).collect(),
            ra_updated: false,
        });
    }

    let train_ids: Vec<usize> = shards
        .iter()
        .filter(|s| s.split == Split::Train)
        .map(|s| s.client_id)
        .collect();
    let cohort = sample_cohort(&train_ids, config.sampled_per_round, config.seed, round)?;
    let ra_round = strategy == Strategy::FedCs && config.is_ra_round(round);
    let seed = local_train_seed(config.seed, round);

    let mut updates = Vec::with_capacity(cohort.len());
    let mut client_ra = Vec::new();
    for &id in &cohort {
        let shard = shards
            .iter()
            .find(|s| s.client_id == id)
            .ok_or_else(|| FedError::Validation(format!("client {id} has no shard")))?;
        let weight = shard.train.len() as f64;
        let mut local = state.global.clone();
        local_train(
            &mut local,
            &shard.train.features,
            &shard.train.labels,
            train_options(config, round, config.local_epochs, seed),
        )?;
        if ra_round {
            let mut ra = state
                .ra
                .clone()
                .ok_or_else(|| FedError::Validation("FedCS state lacks alignment state".into()))?;
            if client_alignment(
                &mut ra,
                &local,
                shard,
                config.batch_size,
                config.seed,
                round,
            )? {
                client_ra.push((ra, weight));
            }
        }
        updates.push((local.trainable().into_iter().cloned().collect(), weight));
    }

    let merged = fedavg_aggregate(&updates)?;
    state.global.set_trainable(merged)?;

    let ra_updated = ra_round && !client_ra.is_empty();
    if ra_updated {
        let refs: Vec<(&RaState, f64)> = client_ra.iter().map(|(s, w)| (s, *w)).collect();
        let merged_ra = RaState::weighted_average(&refs)?;
        let p = match config.projection_aggregation {
            ProjectionAggregation::Factors => merged_ra.projection()?,
            ProjectionAggregation::Direct => {
                let ps = client_ra
                    .iter()
                    .map(|(s, w)| Ok((vec![s.projection()?.into_tensor()], *w)))
                    .collect::<Result<Vec<_>>>()?;
                let mut avg = fedavg_aggregate(&ps)?;
                ProjectionBasis::new(avg.remove(0))?
            }
        };
        state.global.set_projection(p)?;
        state.ra = Some(merged_ra);
    }
    state.round += 1;
    Ok(RoundOutcome {
        round,
        cohort,
        ra_updated,
    })
}

/// Scores every client on its local-test split after round `round`.
pub fn evaluate(
    state: &ServerState,
    shards: &[ClientShard],
    config: &FedConfig,
    strategy: Strategy,
    round: usize,
) -> Result<RoundReport> {
    let classes = state.global.dims.classes;
    let mut per_client = Vec::with_capacity(shards.len());
    let ft_seed = round_seed(config.seed, tag::FINE_TUNE, round);
    for (i, shard) in shards.iter().enumerate() {
        let probs = match strategy {
            Strategy::FedAvg | Strategy::FedCs => {
                state.global.predict_proba(&shard.test.features)?
            }
            Strategy::FedAvgFt => fine_tune_eval(
                &state.global,
                shard,
                config.fine_tune_epochs,
                config.lr_at(round),
                config.batch_size,
                ft_seed,
            )?
            .predict_proba(&shard.test.features)?,
            Strategy::LocalOnly => state.locals[i].predict_proba(&shard.test.features)?,
        };
        per_client.push(evaluate_client(
            shard.client_id,
            shard.group_id,
            shard.split,
            &shard.test.labels,
            &probs,
            classes,
            config.smoothing,
        )?);
    }
    RoundReport::new(round, strategy.name(), config.smoothing, per_client)
}

/// A run in progress: configuration, data and server state.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: FedConfig,
    pub strategy: Strategy,
    pub shards: Vec<ClientShard>,
    pub state: ServerState,
}

impl Simulation {
    pub fn new(
        config: FedConfig,
        strategy: Strategy,
        model: &ModelConfig,
        dims: ModelDims,
        shards: Vec<ClientShard>,
    ) -> Result<Simulation> {
        config.validate()?;
        let state = ServerState::init(&config, strategy, model, dims, shards.len())?;
        Simulation::resume(config, strategy, shards, state)
    }

    /// Continues from a restored state.
    pub fn resume(
        config: FedConfig,
        strategy: Strategy,
        shards: Vec<ClientShard>,
        state: ServerState,
    ) -> Result<Simulation> {
        config.validate()?;
        if shards.is_empty() {
            return Err(FedError::Config("no clients".into()));
        }
        let mut ids: Vec<usize> = shards.iter().map(|s| s.client_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != shards.len() {
            return Err(FedError::Validation("duplicate client ids".into()));
        }
        let trainers = shards.iter().filter(|s| s.split == Split::Train).count();
        if strategy != Strategy::LocalOnly && trainers < config.sampled_per_round {
            return Err(FedError::Config(format!(
                "sampled_per_round {} exceeds the {trainers} training clients",
                config.sampled_per_round
            )));
        }
        let width = state.global.dims.input;
        if let Some(s) = shards.iter().find(|s| s.train.features.cols() != width) {
            return Err(FedError::Validation(format!(
                "client {} has {} features, model expects {width}",
                s.client_id,
                s.train.features.cols()
            )));
        }
        Ok(Simulation {
            config,
            strategy,
            shards,
            state,
        })
    }

    pub fn finished(&self) -> bool {
        self.state.round >= self.config.rounds
    }

    /// Runs the next round; returns its report when the round is due for
    /// evaluation.
    pub fn step(&mut self) -> Result<Option<RoundReport>> {
        if self.finished() {
            return Ok(None);
        }
        let outcome = run_round(&mut self.state, &self.shards, &self.config, self.strategy)?;
        if self.config.is_eval_round(outcome.round) {
            evaluate(
                &self.state,
                &self.shards,
                &self.config,
                self.strategy,
                outcome.round,
            )
            .map(Some)
        } else {
            Ok(None)
        }
    }
}

/// Runs all rounds and collects the reports.
pub fn run_experiment(
    config: &FedConfig,
    strategy: Strategy,
    model: &ModelConfig,
    dims: ModelDims,
    shards: Vec<ClientShard>,
) -> Result<Vec<RoundReport>> {
    let mut sim = Simulation::new(config.clone(), strategy, model, dims, shards)?;
    let mut reports = Vec::new();
    while !sim.finished() {
        if let Some(r) = sim.step()? {
            reports.push(r);
        }
    }
    Ok(reports)
}
