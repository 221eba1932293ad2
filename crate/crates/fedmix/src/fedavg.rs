//! Round-based federated training.
//!
//! One round: sample clients, run local SGD on each from the current global
//! model, aggregate the weighted model deltas, apply the server optimizer to
//! the negated aggregate (the pseudo-gradient). `run_training` drives T
//! rounds and dispatches each to the configured strategy's round function.
//!
//! Determinism contract: every random choice draws from a stream derived as
//! (master_seed, purpose, round, client). Client updates are pure functions
//! of (global, client data, derived stream) and aggregation sums in
//! ascending client order, so results are independent of execution order.

use std::fmt;
use std::str::FromStr;

use crate::data::{self, Batches, CentralDataset, ClientId, FederatedDataset};
use crate::error::{Error, Result};
use crate::metrics::{self, PayloadModel};
use crate::mixing::{self, MixingConfig};
use crate::model::{self, ArchSpec, Delta, Example, Gradient, ModelParams};
use crate::optim::{self, OptimizerConfig, OptimizerState};
use crate::seed;

/// Scenario selector. `NoMix` is the pure-federated baseline; `Oracle`
/// trains on the counterfactual both-label client data; `FineTune` is the
/// pretrain-then-federate negative baseline; the rest mix datacenter data
/// into federated rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    NoMix,
    Parallel,
    ExampleTransfer,
    GradientTransfer,
    Oracle,
    FineTune,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::NoMix,
        Strategy::Parallel,
        Strategy::ExampleTransfer,
        Strategy::GradientTransfer,
        Strategy::Oracle,
        Strategy::FineTune,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::NoMix => "no_mix",
            Strategy::Parallel => "parallel",
            Strategy::ExampleTransfer => "example_transfer",
            Strategy::GradientTransfer => "gradient_transfer",
            Strategy::Oracle => "oracle",
            Strategy::FineTune => "fine_tune",
        }
    }

    pub fn requires_central(&self) -> bool {
        matches!(
            self,
            Strategy::Parallel
                | Strategy::ExampleTransfer
                | Strategy::GradientTransfer
                | Strategy::FineTune
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// Accepts both underscore and hyphen spellings.
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "no_mix" => Ok(Strategy::NoMix),
            "parallel" => Ok(Strategy::Parallel),
            "example_transfer" => Ok(Strategy::ExampleTransfer),
            "gradient_transfer" => Ok(Strategy::GradientTransfer),
            "oracle" => Ok(Strategy::Oracle),
            "fine_tune" => Ok(Strategy::FineTune),
            _ => Err(Error::Config(format!("unknown strategy {s:?}"))),
        }
    }
}

/// Static shape of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub arch: ArchSpec,
    /// Number of federated rounds T.
    pub rounds: usize,
    /// Clients sampled per round.
    pub clients_per_round: usize,
    /// Local SGD steps per client per round. Counted in batches; a client
    /// exhausting its data mid-way starts a new shuffled epoch.
    pub local_steps: usize,
    pub client_batch_size: usize,
    pub client_opt: OptimizerConfig,
    pub server_opt: OptimizerConfig,
    /// Evaluate after every `eval_every`-th round (and always after the
    /// final round).
    pub eval_every: usize,
    pub master_seed: u64,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        self.validate_ignoring_rounds()
    }

    /// Everything except the round count; fine-tuning accepts an empty
    /// federated phase.
    pub(crate) fn validate_ignoring_rounds(&self) -> Result<()> {
        self.arch.validate()?;
        for (name, value) in [
            ("clients_per_round", self.clients_per_round),
            ("local_steps", self.local_steps),
            ("client_batch_size", self.client_batch_size),
            ("eval_every", self.eval_every),
        ] {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        self.client_opt.validate()?;
        self.server_opt.validate()?;
        Ok(())
    }
}

/// One client's contribution to a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client: ClientId,
    /// Local model change over the round's local steps.
    pub delta: Delta,
    /// Aggregation weight; the client's example count.
    pub weight: f64,
}

/// Client update plus the training-loss observation that rides along.
#[derive(Debug, Clone)]
pub struct ClientOutcome {
    pub update: ClientUpdate,
    /// Mean batch loss over the client's local steps, each measured before
    /// the step.
    pub mean_step_loss: f64,
}

/// Per-round metrics row. Eval fields are populated only on eval rounds;
/// the central-distribution accuracy only by the fine-tune scenario (it is
/// not part of the CSV format).
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub eval_accuracy: Option<f64>,
    pub eval_accuracy_pos: Option<f64>,
    pub eval_accuracy_neg: Option<f64>,
    pub central_eval_accuracy: Option<f64>,
    pub mean_train_loss: f64,
    pub bytes_down_per_client: u64,
    pub bytes_up_per_client: u64,
}

/// Everything a scenario might need. `central` feeds the mixing strategies
/// and fine-tune pretraining; `oracle` replaces `train` for the oracle
/// scenario.
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub train: FederatedDataset,
    pub central: Option<CentralDataset>,
    pub eval: FederatedDataset,
    pub oracle: Option<FederatedDataset>,
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub records: Vec<RoundRecord>,
    pub final_params: ModelParams,
}

/// Local training on one client: `local_steps` optimizer steps over batches
/// of the given pool, starting from the global model. Returns the model
/// delta weighted by the client's example count.
///
/// `augment` is an extra vector added to every step's gradient (the
/// gradient-transfer strategy's broadcast direction); `None` for plain
/// rounds. Momentum state, if any, is fresh for the round and evolves across
/// the local steps only.
pub fn client_update_with(
    global: &ModelParams,
    client: &ClientId,
    pool: &[Example],
    cfg: &TrainingConfig,
    rng: rand_chacha::ChaCha8Rng,
    augment: Option<&Gradient>,
) -> Result<ClientOutcome> {
    if pool.is_empty() {
        return Err(Error::Data(format!("client {client} has no examples")));
    }
    let mut batches = Batches::new(pool, cfg.client_batch_size, rng)?;
    let mut params = global.clone();
    let mut state = optim::fresh_state(&cfg.client_opt, params.len());
    let mut loss_sum = 0.0;
    for step in 0..cfg.local_steps {
        let batch = batches.next_batch();
        let batch_loss = model::loss(&params, &batch)?;
        if !batch_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "client {client}: non-finite loss at local step {step}"
            )));
        }
        loss_sum += batch_loss;
        let mut direction = model::grad(&params, &batch)?;
        if let Some(extra) = augment {
            direction = direction.plus(extra)?;
        }
        params = optim::opt_step(&cfg.client_opt, &mut state, &params, &direction)?;
    }
    let delta = params.delta_from(global)?;
    if !delta.is_finite() {
        return Err(Error::Numerical(format!(
            "client {client}: non-finite model delta"
        )));
    }
    Ok(ClientOutcome {
        update: ClientUpdate {
            client: client.clone(),
            delta,
            weight: pool.len() as f64,
        },
        mean_step_loss: loss_sum / cfg.local_steps as f64,
    })
}

/// Plain local training, no gradient augmentation.
pub fn client_update(
    global: &ModelParams,
    client: &ClientId,
    pool: &[Example],
    cfg: &TrainingConfig,
    rng: rand_chacha::ChaCha8Rng,
) -> Result<ClientOutcome> {
    client_update_with(global, client, pool, cfg, rng, None)
}

/// Weighted average of client deltas: sum(p_i * delta_i) / sum(p_i), summed
/// in ascending client order regardless of input order, so the result is
/// bit-stable under permutation.
pub fn aggregate(updates: &[ClientUpdate]) -> Result<Delta> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Config("aggregate needs at least one client update".into()))?;
    let len = first.delta.len();
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by(|a, b| a.client.cmp(&b.client));

    let mut acc = vec![0.0; len];
    let mut total_weight = 0.0;
    for u in sorted {
        if u.delta.len() != len {
            return Err(Error::Config(format!(
                "client {}: delta length {} differs from {len}",
                u.client,
                u.delta.len()
            )));
        }
        if !(u.weight.is_finite() && u.weight > 0.0) {
            return Err(Error::Config(format!(
                "client {}: aggregation weight must be positive, got {}",
                u.client, u.weight
            )));
        }
        for (a, d) in acc.iter_mut().zip(u.delta.values()) {
            *a += u.weight * d;
        }
        total_weight += u.weight;
    }
    for a in &mut acc {
        *a /= total_weight;
    }
    Ok(Gradient::new(acc))
}

/// One federated pass: sample, train clients, aggregate, and compute the
/// server optimizer's move. The caller applies the returned displacement
/// (`run_round` adds it to the global model; the parallel strategy reuses it
/// as the federated branch delta, so both paths share the exact arithmetic).
pub(crate) struct FedPass {
    /// Server displacement: new_global = global + displacement.
    pub displacement: Gradient,
    /// Example-weighted mean of the clients' mean step losses.
    pub mean_train_loss: f64,
}

/// `pool_for` maps each sampled client to the example pool it trains on
/// (identity for plain rounds; example transfer merges in central draws).
pub(crate) fn fed_pass(
    global: &ModelParams,
    server_state: &mut OptimizerState,
    train_fed: &FederatedDataset,
    cfg: &TrainingConfig,
    t: usize,
    mut pool_for: impl FnMut(&ClientId, &[Example]) -> Result<Vec<Example>>,
    augment: Option<&Gradient>,
) -> Result<FedPass> {
    let mut sample_rng = seed::stream(cfg.master_seed, "sample", t as u64, None);
    let selected = data::sample_clients(train_fed, cfg.clients_per_round, &mut sample_rng)?;

    let mut updates = Vec::with_capacity(selected.len());
    let mut loss_weighted = 0.0;
    let mut weight_total = 0.0;
    for client in &selected {
        let examples = train_fed
            .get(client)
            .ok_or_else(|| Error::Data(format!("client {client} missing from dataset")))?;
        let pool = pool_for(client, examples)?;
        let rng = seed::stream(cfg.master_seed, "client", t as u64, Some(client.as_str()));
        let outcome = client_update_with(global, client, &pool, cfg, rng, augment)?;
        loss_weighted += outcome.update.weight * outcome.mean_step_loss;
        weight_total += outcome.update.weight;
        updates.push(outcome.update);
    }
    let delta = aggregate(&updates)?;
    let displacement = optim::displacement(&cfg.server_opt, server_state, &delta.negated())?;
    Ok(FedPass {
        displacement,
        mean_train_loss: loss_weighted / weight_total,
    })
}

fn baseline_record(t: usize, mean_train_loss: f64, arch: &ArchSpec) -> RoundRecord {
    let pm = PayloadModel::for_arch(arch);
    RoundRecord {
        round: t,
        eval_accuracy: None,
        eval_accuracy_pos: None,
        eval_accuracy_neg: None,
        central_eval_accuracy: None,
        mean_train_loss,
        bytes_down_per_client: pm.model_bytes,
        bytes_up_per_client: pm.model_bytes,
    }
}

/// One round of pure federated averaging. Eval fields of the record are
/// filled by the training loop, not here.
pub fn run_round(
    global: &ModelParams,
    server_state: &mut OptimizerState,
    train_fed: &FederatedDataset,
    cfg: &TrainingConfig,
    t: usize,
) -> Result<(ModelParams, RoundRecord)> {
    let pass = fed_pass(
        global,
        server_state,
        train_fed,
        cfg,
        t,
        |_, examples| Ok(examples.to_vec()),
        None,
    )?;
    let new_global = global.plus(&pass.displacement)?;
    Ok((
        new_global,
        baseline_record(t, pass.mean_train_loss, global.arch()),
    ))
}

fn check_dims(name: &str, got: usize, arch: &ArchSpec) -> Result<()> {
    if got != arch.input_dim() {
        return Err(Error::Config(format!(
            "{name} dataset has input_dim {got}, model expects {}",
            arch.input_dim()
        )));
    }
    Ok(())
}

fn require_central(data: &ScenarioData, strategy: Strategy) -> Result<&CentralDataset> {
    data.central.as_ref().ok_or_else(|| {
        Error::Data(format!(
            "strategy {strategy} needs a central dataset and none was provided"
        ))
    })
}

/// Validate the (data, config, strategy) combination before any round runs.
fn validate_scenario(
    data: &ScenarioData,
    cfg: &TrainingConfig,
    strategy: Strategy,
    mix: &MixingConfig,
) -> Result<()> {
    mix.validate()?;
    check_dims("train", data.train.input_dim(), &cfg.arch)?;
    check_dims("eval", data.eval.input_dim(), &cfg.arch)?;
    if let Some(central) = &data.central {
        check_dims("central", central.input_dim(), &cfg.arch)?;
    }
    if let Some(oracle) = &data.oracle {
        check_dims("oracle", oracle.input_dim(), &cfg.arch)?;
    }
    if strategy.requires_central() {
        let central = require_central(data, strategy)?;
        if strategy == Strategy::ExampleTransfer && mix.n_transfer > central.len() {
            return Err(Error::Config(format!(
                "n_transfer {} exceeds central dataset size {}",
                mix.n_transfer,
                central.len()
            )));
        }
    }
    if strategy == Strategy::Oracle && data.oracle.is_none() {
        return Err(Error::Data(
            "oracle strategy needs an oracle dataset and none was provided".into(),
        ));
    }
    Ok(())
}

/// Should round `t` of `total` be evaluated?
pub(crate) fn is_eval_round(t: usize, total: usize, eval_every: usize) -> bool {
    (t + 1).is_multiple_of(eval_every) || t + 1 == total
}

pub(crate) fn fill_eval(
    record: &mut RoundRecord,
    params: &ModelParams,
    eval_fed: &FederatedDataset,
) -> Result<()> {
    let report = metrics::evaluate(params, eval_fed)?;
    record.eval_accuracy = Some(report.overall);
    record.eval_accuracy_pos = report.pos;
    record.eval_accuracy_neg = report.neg;
    Ok(())
}

/// Run T rounds of the chosen strategy, evaluating every `eval_every` rounds
/// and after the final round. Fully deterministic in the inputs: a second
/// call with identical arguments yields identical records and parameters.
pub fn run_training(
    data: &ScenarioData,
    cfg: &TrainingConfig,
    strategy: Strategy,
    mix: &MixingConfig,
) -> Result<TrainingRun> {
    cfg.validate()?;
    validate_scenario(data, cfg, strategy, mix)?;

    if strategy == Strategy::FineTune {
        return mixing::run_fine_tune(data, cfg, mix);
    }

    let mut params = model::init_params(cfg.arch, seed::derive(cfg.master_seed, "init", 0, None))?;
    let mut states = mixing::StrategyStates::fresh(cfg, mix, params.len());
    let mut records = Vec::with_capacity(cfg.rounds);

    for t in 0..cfg.rounds {
        let (next, mut record) = match strategy {
            Strategy::NoMix => run_round(&params, &mut states.server, &data.train, cfg, t)?,
            Strategy::Oracle => {
                let oracle = data.oracle.as_ref().expect("validated above");
                mixing::run_oracle_round(&params, &mut states.server, oracle, cfg, t)?
            }
            Strategy::Parallel => {
                let central = require_central(data, strategy)?;
                let out = mixing::run_parallel_round(
                    &params,
                    &mut states,
                    &data.train,
                    central,
                    cfg,
                    mix,
                    t,
                )?;
                (out.params, out.record)
            }
            Strategy::ExampleTransfer => {
                let central = require_central(data, strategy)?;
                mixing::run_example_transfer_round(
                    &params,
                    &mut states.server,
                    &data.train,
                    central,
                    cfg,
                    mix,
                    t,
                )?
            }
            Strategy::GradientTransfer => {
                let central = require_central(data, strategy)?;
                mixing::run_gradient_transfer_round(
                    &params,
                    &mut states.server,
                    &data.train,
                    central,
                    cfg,
                    mix,
                    t,
                )?
            }
            Strategy::FineTune => unreachable!("dispatched above"),
        };
        params = next;
        if is_eval_round(t, cfg.rounds, cfg.eval_every) {
            fill_eval(&mut record, &params, &data.eval)?;
        }
        records.push(record);
    }
    Ok(TrainingRun {
        records,
        final_params: params,
    })
}
