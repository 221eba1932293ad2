//! Command-line front end for the simulator.
//!
//! Three commands: `synth` generates the synthetic datasets, `run` trains
//! one scenario (or the whole comparison) on a data directory, `gradcheck`
//! verifies backprop against finite differences. The CLI is a thin shell:
//! everything it does is a library call, so identical seeds give identical
//! results through either path.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use fedmix::config::{load_config, AppConfig};
use fedmix::fedavg::{self, ScenarioData, Strategy};
use fedmix::model::{self, Activation, ArchSpec};
use fedmix::{checkpoint, data, metrics, Error};

const GRADCHECK_DRAWS: usize = 10;
const GRADCHECK_THRESHOLD: f64 = 1e-4;

const EXIT_HELP: &str = "Exit codes:\n  \
    0  success\n  \
    1  usage or configuration error\n  \
    2  data error (missing or malformed files)\n  \
    3  numerical failure (non-finite values, failed gradient check)";

#[derive(Parser)]
#[command(
    name = "fedmix",
    version,
    about = "Deterministic federated-learning simulator",
    after_help = EXIT_HELP
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic train/central/eval/oracle datasets
    Synth {
        /// Config file (flat `key = value` lines); defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory, created if absent
        #[arg(long)]
        out: PathBuf,
        /// Override data.seed from the config
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a scenario (or `all`) against a data directory
    Run {
        /// Config file (flat `key = value` lines); defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Data directory as written by `synth`
        #[arg(long)]
        data: PathBuf,
        /// Output directory, created if absent
        #[arg(long)]
        out: PathBuf,
        /// no-mix | parallel | example-transfer | gradient-transfer |
        /// oracle | fine-tune | all
        #[arg(long, default_value = "all")]
        scenario: String,
        /// Override train.seed from the config
        #[arg(long)]
        seed: Option<u64>,
        /// Override train.eval_every from the config
        #[arg(long)]
        eval_every: Option<usize>,
        /// Add the fine-tune baseline to `--scenario all`
        #[arg(long)]
        include_fine_tune: bool,
    },
    /// Check backprop gradients against central finite differences
    Gradcheck {
        #[arg(long, value_enum, default_value_t = ArchArg::Mlp)]
        arch: ArchArg,
        #[arg(long, default_value_t = 10)]
        input_dim: usize,
        /// MLP only
        #[arg(long, default_value_t = 8)]
        hidden_dim: usize,
        /// MLP only
        #[arg(long, value_enum, default_value_t = ActArg::Tanh)]
        activation: ActArg,
        /// Finite-difference step
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Logistic,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActArg {
    Tanh,
    Relu,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; only real usage errors
            // should exit nonzero.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Synth { config, out, seed } => cmd_synth(config.as_deref(), &out, seed),
        Cmd::Run {
            config,
            data,
            out,
            scenario,
            seed,
            eval_every,
            include_fine_tune,
        } => cmd_run(
            config.as_deref(),
            &data,
            &out,
            &scenario,
            seed,
            eval_every,
            include_fine_tune,
        ),
        Cmd::Gradcheck {
            arch,
            input_dim,
            hidden_dim,
            activation,
            eps,
            seed,
        } => cmd_gradcheck(arch, input_dim, hidden_dim, activation, eps, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Data(_) | Error::Io(_) => 2,
        Error::Numerical(_) => 3,
    }
}

fn load_config_or_default(path: Option<&Path>) -> fedmix::Result<AppConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(AppConfig::default()),
    }
}

/// Record the effective configuration and seed next to the outputs.
fn write_manifest(
    out: &Path,
    command: &str,
    seed: u64,
    cfg: &AppConfig,
    scenarios: Option<&[Strategy]>,
) -> fedmix::Result<()> {
    let mut root = serde_json::Map::new();
    root.insert("command".into(), command.into());
    root.insert("seed".into(), seed.into());
    if let Some(list) = scenarios {
        let names: Vec<serde_json::Value> = list.iter().map(|s| s.name().into()).collect();
        root.insert("scenarios".into(), names.into());
    }
    let mut config = serde_json::Map::new();
    for (key, value) in cfg.entries() {
        config.insert(key.into(), value.into());
    }
    root.insert("config".into(), config.into());
    let json = serde_json::Value::Object(root);
    std::fs::write(out.join("manifest.json"), format!("{json:#}\n"))?;
    Ok(())
}

fn cmd_synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> fedmix::Result<()> {
    let mut cfg = load_config_or_default(config)?;
    if let Some(s) = seed {
        cfg.data.seed = s;
    }
    let (train, central, eval) = data::synthesize(&cfg.data.synth, cfg.data.seed)?;
    let oracle = data::synthesize_oracle(&cfg.data.synth, cfg.data.seed)?;

    std::fs::create_dir_all(out)?;
    data::write_federated(&train, &out.join("federated.jsonl"))?;
    data::write_central(&central, &out.join("central.jsonl"))?;
    data::write_federated(&eval, &out.join("eval.jsonl"))?;
    data::write_federated(&oracle, &out.join("oracle_federated.jsonl"))?;
    write_manifest(out, "synth", cfg.data.seed, &cfg, None)?;

    println!(
        "wrote {}: {} train clients / {} examples, {} central examples, \
         {} eval clients / {} examples, oracle {} clients (seed {})",
        out.display(),
        train.n_clients(),
        train.total_examples(),
        central.len(),
        eval.n_clients(),
        eval.total_examples(),
        oracle.n_clients(),
        cfg.data.seed,
    );
    Ok(())
}

fn parse_scenarios(scenario: &str, include_fine_tune: bool) -> fedmix::Result<Vec<Strategy>> {
    if scenario == "all" {
        let mut list = vec![
            Strategy::NoMix,
            Strategy::Parallel,
            Strategy::ExampleTransfer,
            Strategy::GradientTransfer,
            Strategy::Oracle,
        ];
        if include_fine_tune {
            list.push(Strategy::FineTune);
        }
        return Ok(list);
    }
    Ok(vec![Strategy::from_str(scenario)?])
}

fn require_file(path: &Path) -> fedmix::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "required data file {} does not exist",
            path.display()
        )))
    }
}

fn cmd_run(
    config: Option<&Path>,
    data_dir: &Path,
    out: &Path,
    scenario: &str,
    seed: Option<u64>,
    eval_every: Option<usize>,
    include_fine_tune: bool,
) -> fedmix::Result<()> {
    let mut cfg = load_config_or_default(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(e) = eval_every {
        cfg.train.eval_every = e;
    }
    let scenarios = parse_scenarios(scenario, include_fine_tune)?;

    let train_path = data_dir.join("federated.jsonl");
    require_file(&train_path)?;
    let eval_path = data_dir.join("eval.jsonl");
    require_file(&eval_path)?;
    let train = data::load_federated(&train_path)?;
    let eval = data::load_federated(&eval_path)?;

    let central = if scenarios.iter().any(Strategy::requires_central) {
        let path = data_dir.join("central.jsonl");
        require_file(&path)?;
        Some(data::load_central(&path)?)
    } else {
        None
    };
    let oracle = if scenarios.contains(&Strategy::Oracle) {
        let path = data_dir.join("oracle_federated.jsonl");
        require_file(&path)?;
        Some(data::load_federated(&path)?)
    } else {
        None
    };

    let input_dim = train.input_dim();
    let scenario_data = ScenarioData {
        train,
        central,
        eval,
        oracle,
    };
    let training = cfg.training(input_dim);
    let mixing = cfg.mixing();

    std::fs::create_dir_all(out)?;
    for s in &scenarios {
        let run = fedavg::run_training(&scenario_data, &training, *s, &mixing)?;
        metrics::write_history(&run.records, &out.join(format!("metrics_{}.csv", s.name())))?;
        checkpoint::save_params(
            &run.final_params,
            &out.join(format!("model_{}.bin", s.name())),
        )?;
        let last_eval = run
            .records
            .iter()
            .rev()
            .find_map(|r| r.eval_accuracy)
            .expect("final round is always evaluated");
        println!(
            "{}: {} rounds, final eval accuracy {:.4}",
            s.name(),
            run.records.len(),
            last_eval,
        );
    }
    write_manifest(out, "run", cfg.train.seed, &cfg, Some(&scenarios))?;
    Ok(())
}

fn cmd_gradcheck(
    arch: ArchArg,
    input_dim: usize,
    hidden_dim: usize,
    activation: ActArg,
    eps: f64,
    seed: u64,
) -> fedmix::Result<()> {
    let arch = match arch {
        ArchArg::Logistic => ArchSpec::Logistic { input_dim },
        ArchArg::Mlp => ArchSpec::Mlp {
            input_dim,
            hidden_dim,
            activation: match activation {
                ActArg::Tanh => Activation::Tanh,
                ActArg::Relu => Activation::Relu,
            },
        },
    };
    let worst = model::gradcheck(arch, seed, GRADCHECK_DRAWS, eps)?;
    println!(
        "max relative error over {GRADCHECK_DRAWS} draws: {worst:.3e} (threshold {GRADCHECK_THRESHOLD:e})"
    );
    if worst < GRADCHECK_THRESHOLD {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient check failed: max relative error {worst:.3e} is not below {GRADCHECK_THRESHOLD:e}"
        )))
    }
}
