//! Strategies for mixing datacenter data into federated rounds, plus the
//! oracle and fine-tune scenarios.
//!
//! Three mixing mechanisms share the round interface of the plain engine:
//! parallel training merges a central-branch delta with the federated delta;
//! example transfer ships central examples into each selected client's pool;
//! gradient transfer broadcasts one frozen central gradient that every local
//! step adds to its own. Each reduces exactly to the plain round when its
//! knob is neutral (alpha 0, n_transfer 0, augment_scale 0).

use rand_chacha::ChaCha8Rng;

use crate::data::{self, CentralDataset, FederatedDataset};
use crate::error::{Error, Result};
use crate::fedavg::{
    self, fed_pass, fill_eval, RoundRecord, ScenarioData, Strategy, TrainingConfig, TrainingRun,
};
use crate::metrics::{self, PayloadModel};
use crate::model::{self, Example, ModelParams};
use crate::optim::{self, OptimizerConfig, OptimizerState};
use crate::seed;

/// Knobs for the mixing strategies. One struct serves all of them; each
/// strategy reads only its own fields.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingConfig {
    /// Parallel training: weight of the central delta in the merge.
    pub alpha: f64,
    /// Parallel training: central steps per round. Also the fine-tune
    /// pretraining batch source size via `central_batch_size`.
    pub central_steps: usize,
    pub central_batch_size: usize,
    pub central_opt: OptimizerConfig,
    pub merge_opt: OptimizerConfig,
    /// Example transfer: central examples sent to each client per round.
    pub n_transfer: usize,
    /// Gradient transfer: scale on the broadcast gradient. 1 adds it as-is;
    /// 0 disables the mechanism entirely (plain round, baseline payload).
    pub augment_scale: f64,
    /// Fine-tune: central steps before the federated phase.
    pub pretrain_steps: usize,
}

impl Default for MixingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            central_steps: 10,
            central_batch_size: 32,
            central_opt: OptimizerConfig::sgd(0.1),
            merge_opt: OptimizerConfig::sgd(1.0),
            n_transfer: 20,
            augment_scale: 1.0,
            pretrain_steps: 200,
        }
    }
}

impl MixingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && (0.0..=1.0).contains(&self.alpha)) {
            return Err(Error::Config(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.central_steps == 0 {
            return Err(Error::Config("central_steps must be at least 1".into()));
        }
        if self.central_batch_size == 0 {
            return Err(Error::Config(
                "central_batch_size must be at least 1".into(),
            ));
        }
        if !(self.augment_scale.is_finite() && self.augment_scale >= 0.0) {
            return Err(Error::Config(format!(
                "augment_scale must be nonnegative and finite, got {}",
                self.augment_scale
            )));
        }
        self.central_opt.validate()?;
        self.merge_opt.validate()?;
        Ok(())
    }
}

/// Optimizer states that persist across rounds. The central branch keeps its
/// own momentum, as does the merge step; per-client state never persists.
#[derive(Debug, Clone)]
pub struct StrategyStates {
    pub server: OptimizerState,
    pub central: OptimizerState,
    pub merge: OptimizerState,
}

impl StrategyStates {
    pub fn fresh(cfg: &TrainingConfig, mix: &MixingConfig, param_count: usize) -> Self {
        Self {
            server: optim::fresh_state(&cfg.server_opt, param_count),
            central: optim::fresh_state(&mix.central_opt, param_count),
            merge: optim::fresh_state(&mix.merge_opt, param_count),
        }
    }
}

fn record_for(
    strategy: Strategy,
    t: usize,
    mean_train_loss: f64,
    cfg: &TrainingConfig,
    mix: &MixingConfig,
) -> RoundRecord {
    let pm = PayloadModel::for_arch(&cfg.arch);
    let (down, up) = metrics::payload_per_round(strategy, &pm, mix.n_transfer);
    RoundRecord {
        round: t,
        eval_accuracy: None,
        eval_accuracy_pos: None,
        eval_accuracy_neg: None,
        central_eval_accuracy: None,
        mean_train_loss,
        bytes_down_per_client: down,
        bytes_up_per_client: up,
    }
}

/// `steps` optimizer steps over central batches, starting from `start`.
/// Returns the trained model and the mean batch loss (measured before each
/// step).
fn central_descent(
    start: &ModelParams,
    state: &mut OptimizerState,
    central: &CentralDataset,
    opt: &OptimizerConfig,
    batch_size: usize,
    steps: usize,
    rng: ChaCha8Rng,
) -> Result<(ModelParams, f64)> {
    let mut batches = data::Batches::new(central.examples(), batch_size, rng)?;
    let mut params = start.clone();
    let mut loss_sum = 0.0;
    for step in 0..steps {
        let batch = batches.next_batch();
        let batch_loss = model::loss(&params, &batch)?;
        if !batch_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite central loss at step {step}"
            )));
        }
        loss_sum += batch_loss;
        let g = model::grad(&params, &batch)?;
        params = optim::opt_step(opt, state, &params, &g)?;
    }
    Ok((params, loss_sum / steps.max(1) as f64))
}

/// Outcome of a parallel-training round, exposing both branch endpoints so
/// the weight-average identity (merge lr 1: x' = alpha*x_c + (1-alpha)*x_f)
/// can be checked from outside.
#[derive(Debug, Clone)]
pub struct ParallelRound {
    pub params: ModelParams,
    pub central_model: ModelParams,
    pub federated_model: ModelParams,
    pub record: RoundRecord,
}

/// One parallel-training round: central branch and federated branch both
/// start from the round's global model, their deltas merge with weight
/// `alpha`, and the merge optimizer applies the result.
pub fn run_parallel_round(
    global: &ModelParams,
    states: &mut StrategyStates,
    train_fed: &FederatedDataset,
    central: &CentralDataset,
    cfg: &TrainingConfig,
    mix: &MixingConfig,
    t: usize,
) -> Result<ParallelRound> {
    mix.validate()?;
    if central.is_empty() {
        return Err(Error::Data(
            "parallel training needs a nonempty central dataset".into(),
        ));
    }

    let central_rng = seed::stream(cfg.master_seed, "central", t as u64, None);
    let (central_model, _) = central_descent(
        global,
        &mut states.central,
        central,
        &mix.central_opt,
        mix.central_batch_size,
        mix.central_steps,
        central_rng,
    )?;
    let delta_central = central_model.delta_from(global)?;

    let pass = fed_pass(
        global,
        &mut states.server,
        train_fed,
        cfg,
        t,
        |_, examples| Ok(examples.to_vec()),
        None,
    )?;
    let delta_federated = pass.displacement;
    let federated_model = global.plus(&delta_federated)?;

    // alpha = 0 leaves delta_federated bit-for-bit (0 * x + d = d), so with
    // merge lr 1 the round is indistinguishable from a plain one.
    let merged = delta_central
        .scaled(mix.alpha)
        .plus(&delta_federated.scaled(1.0 - mix.alpha))?;
    let params = optim::opt_step(&mix.merge_opt, &mut states.merge, global, &merged.negated())?;

    Ok(ParallelRound {
        params,
        central_model,
        federated_model,
        record: record_for(Strategy::Parallel, t, pass.mean_train_loss, cfg, mix),
    })
}

/// One example-transfer round: every selected client receives a fresh
/// without-replacement draw of central examples, merges it into its local
/// pool for this round only, and trains on the mix. Downstream aggregation
/// and server update are the plain round's.
pub fn run_example_transfer_round(
    global: &ModelParams,
    server_state: &mut OptimizerState,
    train_fed: &FederatedDataset,
    central: &CentralDataset,
    cfg: &TrainingConfig,
    mix: &MixingConfig,
    t: usize,
) -> Result<(ModelParams, RoundRecord)> {
    mix.validate()?;
    if mix.n_transfer > central.len() {
        return Err(Error::Config(format!(
            "n_transfer {} exceeds central dataset size {}",
            mix.n_transfer,
            central.len()
        )));
    }
    let pass = fed_pass(
        global,
        server_state,
        train_fed,
        cfg,
        t,
        |client, examples| {
            let mut rng =
                seed::stream(cfg.master_seed, "transfer", t as u64, Some(client.as_str()));
            let picked = rand::seq::index::sample(&mut rng, central.len(), mix.n_transfer);
            let transferred: Vec<Example> = picked
                .iter()
                .map(|i| central.examples()[i].clone())
                .collect();
            Ok(data::merge_examples(examples, &transferred))
        },
        None,
    )?;
    let params = global.plus(&pass.displacement)?;
    Ok((
        params,
        record_for(Strategy::ExampleTransfer, t, pass.mean_train_loss, cfg, mix),
    ))
}

/// One gradient-transfer round: a single central batch is evaluated at the
/// round's global model, and the resulting gradient (frozen for the whole
/// round) is added to every local step of every client, scaled by
/// `augment_scale`.
///
/// With augment_scale 0 the broadcast never happens, so the round runs and
/// bills exactly as a plain one.
pub fn run_gradient_transfer_round(
    global: &ModelParams,
    server_state: &mut OptimizerState,
    train_fed: &FederatedDataset,
    central: &CentralDataset,
    cfg: &TrainingConfig,
    mix: &MixingConfig,
    t: usize,
) -> Result<(ModelParams, RoundRecord)> {
    mix.validate()?;
    if mix.augment_scale == 0.0 {
        return fedavg::run_round(global, server_state, train_fed, cfg, t);
    }
    if central.is_empty() {
        return Err(Error::Data(
            "gradient transfer needs a nonempty central dataset".into(),
        ));
    }

    let central_rng = seed::stream(cfg.master_seed, "central", t as u64, None);
    let mut batches = data::Batches::new(central.examples(), mix.central_batch_size, central_rng)?;
    let central_batch = batches.next_batch();
    let augment = model::grad(global, &central_batch)?.scaled(mix.augment_scale);

    let pass = fed_pass(
        global,
        server_state,
        train_fed,
        cfg,
        t,
        |_, examples| Ok(examples.to_vec()),
        Some(&augment),
    )?;
    let params = global.plus(&pass.displacement)?;
    Ok((
        params,
        record_for(
            Strategy::GradientTransfer,
            t,
            pass.mean_train_loss,
            cfg,
            mix,
        ),
    ))
}

/// Oracle scenario: a plain round over the counterfactual dataset where
/// clients hold both labels.
pub fn run_oracle_round(
    global: &ModelParams,
    server_state: &mut OptimizerState,
    oracle_fed: &FederatedDataset,
    cfg: &TrainingConfig,
    t: usize,
) -> Result<(ModelParams, RoundRecord)> {
    fedavg::run_round(global, server_state, oracle_fed, cfg, t)
}

/// Fraction of the central pool held out of pretraining so forgetting is
/// measured out of sample.
const FINE_TUNE_HOLDOUT: f64 = 0.1;

/// Pretrain on central data, then fine-tune with plain federated rounds.
///
/// The record list starts with a phase-1 row (round 0: the pretrained model
/// before any federated round) followed by one row per federated round
/// (rounds 1..=T). Every evaluated row also carries the accuracy on the
/// held-out central slice, which is what forgetting erodes. A zero-round
/// federated phase is allowed and yields the phase-1 row alone.
pub fn run_fine_tune(
    data: &ScenarioData,
    cfg: &TrainingConfig,
    mix: &MixingConfig,
) -> Result<TrainingRun> {
    cfg.validate_ignoring_rounds()?;
    mix.validate()?;
    if mix.pretrain_steps == 0 {
        return Err(Error::Config(
            "fine-tune needs pretrain_steps at least 1".into(),
        ));
    }
    let central = data.central.as_ref().ok_or_else(|| {
        Error::Data("fine-tune needs a central dataset and none was provided".into())
    })?;

    let mut split_rng = seed::stream(cfg.master_seed, "finetune.split", 0, None);
    let (pretrain_pool, holdout) =
        data::split_examples(central.examples(), FINE_TUNE_HOLDOUT, &mut split_rng)?;
    let pretrain_set = CentralDataset::from_examples(pretrain_pool)?;

    let mut params = model::init_params(cfg.arch, seed::derive(cfg.master_seed, "init", 0, None))?;
    let mut central_state = optim::fresh_state(&mix.central_opt, params.len());
    let pretrain_rng = seed::stream(cfg.master_seed, "pretrain", 0, None);
    let (pretrained, pretrain_loss) = central_descent(
        &params,
        &mut central_state,
        &pretrain_set,
        &mix.central_opt,
        mix.central_batch_size,
        mix.pretrain_steps,
        pretrain_rng,
    )?;
    params = pretrained;

    let mut records = Vec::with_capacity(cfg.rounds + 1);
    let mut phase1 = record_for(Strategy::FineTune, 0, pretrain_loss, cfg, mix);
    fill_eval(&mut phase1, &params, &data.eval)?;
    phase1.central_eval_accuracy =
        Some(model::accuracy(&params, &holdout, metrics::EVAL_THRESHOLD)?);
    records.push(phase1);

    let mut server_state = optim::fresh_state(&cfg.server_opt, params.len());
    for t in 0..cfg.rounds {
        let (next, mut record) =
            fedavg::run_round(&params, &mut server_state, &data.train, cfg, t)?;
        params = next;
        record.round = t + 1;
        if fedavg::is_eval_round(t, cfg.rounds, cfg.eval_every) {
            fill_eval(&mut record, &params, &data.eval)?;
            record.central_eval_accuracy =
                Some(model::accuracy(&params, &holdout, metrics::EVAL_THRESHOLD)?);
        }
        records.push(record);
    }
    Ok(TrainingRun {
        records,
        final_params: params,
    })
}
