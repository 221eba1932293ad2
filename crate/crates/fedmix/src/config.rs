//! Flat `key = value` configuration files.
//!
//! One key per line, `#` starts a comment line, blank lines are ignored.
//! Keys are namespaced by section prefix (`model.`, `data.`, `train.`,
//! `mix.`). Unknown and duplicate keys are hard errors: a silently ignored
//! typo would corrupt an experiment.
//!
//! Every key has a default, so the empty string parses to the default
//! configuration. Optimizers are written as a learning rate plus a momentum
//! coefficient; momentum 0 means plain SGD.
//!
//! The model's input dimension is not a config key: it comes from the
//! dataset (generated or loaded) when the architecture is resolved.

use std::path::Path;

use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::fedavg::TrainingConfig;
use crate::mixing::MixingConfig;
use crate::model::{Activation, ArchSpec};
use crate::optim::OptimizerConfig;

/// Architecture choice before the input dimension is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub arch: ArchKind,
    /// MLP only.
    pub hidden_dim: usize,
    /// MLP only.
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub synth: SyntheticConfig,
    /// Seed for data generation, separate from the training seed so the
    /// same dataset can be trained under many seeds.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub rounds: usize,
    pub clients_per_round: usize,
    pub local_steps: usize,
    pub client_batch_size: usize,
    pub client_lr: f64,
    pub client_momentum: f64,
    pub server_lr: f64,
    pub server_momentum: f64,
    pub eval_every: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixSection {
    pub alpha: f64,
    pub central_steps: usize,
    pub central_batch_size: usize,
    pub central_lr: f64,
    pub central_momentum: f64,
    pub merge_lr: f64,
    pub merge_momentum: f64,
    pub n_transfer: usize,
    pub augment_scale: f64,
    pub pretrain_steps: usize,
}

/// Full parsed configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub model: ModelSection,
    pub data: DataSection,
    pub train: TrainSection,
    pub mix: MixSection,
}

impl Default for AppConfig {
    fn default() -> Self {
        let mix = MixingConfig::default();
        Self {
            model: ModelSection {
                arch: ArchKind::Mlp,
                hidden_dim: 8,
                activation: Activation::Tanh,
            },
            data: DataSection {
                synth: SyntheticConfig::default(),
                seed: 7,
            },
            train: TrainSection {
                rounds: 50,
                clients_per_round: 20,
                local_steps: 5,
                client_batch_size: 8,
                client_lr: 0.1,
                client_momentum: 0.0,
                server_lr: 1.0,
                server_momentum: 0.0,
                eval_every: 10,
                seed: 42,
            },
            mix: MixSection {
                alpha: mix.alpha,
                central_steps: mix.central_steps,
                central_batch_size: mix.central_batch_size,
                central_lr: mix.central_opt.lr,
                central_momentum: 0.0,
                merge_lr: mix.merge_opt.lr,
                merge_momentum: 0.0,
                n_transfer: mix.n_transfer,
                augment_scale: mix.augment_scale,
                pretrain_steps: mix.pretrain_steps,
            },
        }
    }
}

fn optimizer(lr: f64, momentum: f64) -> OptimizerConfig {
    if momentum == 0.0 {
        OptimizerConfig::sgd(lr)
    } else {
        OptimizerConfig::sgd_momentum(lr, momentum)
    }
}

impl AppConfig {
    /// Resolve the architecture against the dataset's feature length.
    pub fn arch(&self, input_dim: usize) -> ArchSpec {
        match self.model.arch {
            ArchKind::Logistic => ArchSpec::Logistic { input_dim },
            ArchKind::Mlp => ArchSpec::Mlp {
                input_dim,
                hidden_dim: self.model.hidden_dim,
                activation: self.model.activation,
            },
        }
    }

    pub fn training(&self, input_dim: usize) -> TrainingConfig {
        TrainingConfig {
            arch: self.arch(input_dim),
            rounds: self.train.rounds,
            clients_per_round: self.train.clients_per_round,
            local_steps: self.train.local_steps,
            client_batch_size: self.train.client_batch_size,
            client_opt: optimizer(self.train.client_lr, self.train.client_momentum),
            server_opt: optimizer(self.train.server_lr, self.train.server_momentum),
            eval_every: self.train.eval_every,
            master_seed: self.train.seed,
        }
    }

    /// Every key with its effective value, in documented order.
    ///
    /// Rendering the entries as `key = value` lines and parsing them back
    /// reproduces the config exactly (f64 `Display` is shortest-roundtrip),
    /// which is how manifests record the effective configuration.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let arch = match self.model.arch {
            ArchKind::Logistic => "logistic",
            ArchKind::Mlp => "mlp",
        };
        let act = match self.model.activation {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        };
        vec![
            ("model.arch", arch.to_string()),
            ("model.hidden_dim", self.model.hidden_dim.to_string()),
            ("model.activation", act.to_string()),
            ("data.input_dim", self.data.synth.input_dim.to_string()),
            (
                "data.n_train_clients",
                self.data.synth.n_train_clients.to_string(),
            ),
            (
                "data.n_eval_clients",
                self.data.synth.n_eval_clients.to_string(),
            ),
            (
                "data.examples_per_client",
                self.data.synth.examples_per_client.to_string(),
            ),
            ("data.n_central", self.data.synth.n_central.to_string()),
            (
                "data.class_separation",
                self.data.synth.class_separation.to_string(),
            ),
            (
                "data.client_shift_std",
                self.data.synth.client_shift_std.to_string(),
            ),
            ("data.noise_std", self.data.synth.noise_std.to_string()),
            ("data.seed", self.data.seed.to_string()),
            ("train.rounds", self.train.rounds.to_string()),
            (
                "train.clients_per_round",
                self.train.clients_per_round.to_string(),
            ),
            ("train.local_steps", self.train.local_steps.to_string()),
            (
                "train.client_batch_size",
                self.train.client_batch_size.to_string(),
            ),
            ("train.client_lr", self.train.client_lr.to_string()),
            (
                "train.client_momentum",
                self.train.client_momentum.to_string(),
            ),
            ("train.server_lr", self.train.server_lr.to_string()),
            (
                "train.server_momentum",
                self.train.server_momentum.to_string(),
            ),
            ("train.eval_every", self.train.eval_every.to_string()),
            ("train.seed", self.train.seed.to_string()),
            ("mix.alpha", self.mix.alpha.to_string()),
            ("mix.central_steps", self.mix.central_steps.to_string()),
            (
                "mix.central_batch_size",
                self.mix.central_batch_size.to_string(),
            ),
            ("mix.central_lr", self.mix.central_lr.to_string()),
            (
                "mix.central_momentum",
                self.mix.central_momentum.to_string(),
            ),
            ("mix.merge_lr", self.mix.merge_lr.to_string()),
            ("mix.merge_momentum", self.mix.merge_momentum.to_string()),
            ("mix.n_transfer", self.mix.n_transfer.to_string()),
            ("mix.augment_scale", self.mix.augment_scale.to_string()),
            ("mix.pretrain_steps", self.mix.pretrain_steps.to_string()),
        ]
    }

    pub fn mixing(&self) -> MixingConfig {
        MixingConfig {
            alpha: self.mix.alpha,
            central_steps: self.mix.central_steps,
            central_batch_size: self.mix.central_batch_size,
            central_opt: optimizer(self.mix.central_lr, self.mix.central_momentum),
            merge_opt: optimizer(self.mix.merge_lr, self.mix.merge_momentum),
            n_transfer: self.mix.n_transfer,
            augment_scale: self.mix.augment_scale,
            pretrain_steps: self.mix.pretrain_steps,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line_no: usize) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "line {line_no}: key `{key}` has invalid value {value:?}"
        ))
    })
}

/// Parse configuration text. Later files can extend this list; every key is
/// matched exactly.
pub fn parse_config(text: &str) -> Result<AppConfig> {
    let mut cfg = AppConfig::default();
    let mut seen = std::collections::BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {line_no}: expected `key = value`, got {raw:?}"
            ))
        })?;
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(Error::Config(format!(
                "line {line_no}: duplicate key `{key}`"
            )));
        }
        match key {
            "model.arch" => {
                cfg.model.arch = match value {
                    "logistic" => ArchKind::Logistic,
                    "mlp" => ArchKind::Mlp,
                    _ => {
                        return Err(Error::Config(format!(
                            "line {line_no}: key `model.arch` must be `logistic` or `mlp`, got {value:?}"
                        )));
                    }
                }
            }
            "model.hidden_dim" => cfg.model.hidden_dim = parse_value(key, value, line_no)?,
            "model.activation" => {
                cfg.model.activation = match value {
                    "tanh" => Activation::Tanh,
                    "relu" => Activation::Relu,
                    _ => {
                        return Err(Error::Config(format!(
                            "line {line_no}: key `model.activation` must be `tanh` or `relu`, got {value:?}"
                        )));
                    }
                }
            }
            "data.input_dim" => cfg.data.synth.input_dim = parse_value(key, value, line_no)?,
            "data.n_train_clients" => {
                cfg.data.synth.n_train_clients = parse_value(key, value, line_no)?
            }
            "data.n_eval_clients" => {
                cfg.data.synth.n_eval_clients = parse_value(key, value, line_no)?
            }
            "data.examples_per_client" => {
                cfg.data.synth.examples_per_client = parse_value(key, value, line_no)?
            }
            "data.n_central" => cfg.data.synth.n_central = parse_value(key, value, line_no)?,
            "data.class_separation" => {
                cfg.data.synth.class_separation = parse_value(key, value, line_no)?
            }
            "data.client_shift_std" => {
                cfg.data.synth.client_shift_std = parse_value(key, value, line_no)?
            }
            "data.noise_std" => cfg.data.synth.noise_std = parse_value(key, value, line_no)?,
            "data.seed" => cfg.data.seed = parse_value(key, value, line_no)?,
            "train.rounds" => cfg.train.rounds = parse_value(key, value, line_no)?,
            "train.clients_per_round" => {
                cfg.train.clients_per_round = parse_value(key, value, line_no)?
            }
            "train.local_steps" => cfg.train.local_steps = parse_value(key, value, line_no)?,
            "train.client_batch_size" => {
                cfg.train.client_batch_size = parse_value(key, value, line_no)?
            }
            "train.client_lr" => cfg.train.client_lr = parse_value(key, value, line_no)?,
            "train.client_momentum" => {
                cfg.train.client_momentum = parse_value(key, value, line_no)?
            }
            "train.server_lr" => cfg.train.server_lr = parse_value(key, value, line_no)?,
            "train.server_momentum" => {
                cfg.train.server_momentum = parse_value(key, value, line_no)?
            }
            "train.eval_every" => cfg.train.eval_every = parse_value(key, value, line_no)?,
            "train.seed" => cfg.train.seed = parse_value(key, value, line_no)?,
            "mix.alpha" => cfg.mix.alpha = parse_value(key, value, line_no)?,
            "mix.central_steps" => cfg.mix.central_steps = parse_value(key, value, line_no)?,
            "mix.central_batch_size" => {
                cfg.mix.central_batch_size = parse_value(key, value, line_no)?
            }
            "mix.central_lr" => cfg.mix.central_lr = parse_value(key, value, line_no)?,
            "mix.central_momentum" => cfg.mix.central_momentum = parse_value(key, value, line_no)?,
            "mix.merge_lr" => cfg.mix.merge_lr = parse_value(key, value, line_no)?,
            "mix.merge_momentum" => cfg.mix.merge_momentum = parse_value(key, value, line_no)?,
            "mix.n_transfer" => cfg.mix.n_transfer = parse_value(key, value, line_no)?,
            "mix.augment_scale" => cfg.mix.augment_scale = parse_value(key, value, line_no)?,
            "mix.pretrain_steps" => cfg.mix.pretrain_steps = parse_value(key, value, line_no)?,
            _ => {
                return Err(Error::Config(format!(
                    "line {line_no}: unknown key `{key}`"
                )));
            }
        }
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<AppConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: cannot read config: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
