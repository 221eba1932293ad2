//! Evaluation, transfer-payload accounting, and metrics history CSV.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::FederatedDataset;
use crate::error::{Error, Result};
use crate::fedavg::{RoundRecord, Strategy};
use crate::model::{self, ArchSpec, ModelParams};

/// Decision threshold used for all reported accuracies.
pub const EVAL_THRESHOLD: f64 = 0.5;

/// Byte accounting for one round of client communication.
///
/// Convention: 8 bytes per parameter (double precision), and an example
/// costs 8 bytes per feature plus 1 byte for the label. Arbitrary but fixed,
/// so payload arithmetic is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PayloadModel {
    pub model_bytes: u64,
    pub example_bytes: u64,
}

impl PayloadModel {
    pub fn for_arch(arch: &ArchSpec) -> Self {
        Self {
            model_bytes: 8 * arch.param_count() as u64,
            example_bytes: 8 * arch.input_dim() as u64 + 1,
        }
    }
}

/// Per-client (down-link, up-link) bytes for one round of a strategy.
///
/// Down-link: the model everywhere, plus the transferred examples for
/// example transfer, doubled for gradient transfer (model and augmenting
/// gradient are the same size). Up-link: always exactly the model delta; no
/// strategy sends anything extra back.
pub fn payload_per_round(strategy: Strategy, pm: &PayloadModel, n_transfer: usize) -> (u64, u64) {
    let down = match strategy {
        Strategy::NoMix | Strategy::Oracle | Strategy::Parallel | Strategy::FineTune => {
            pm.model_bytes
        }
        Strategy::ExampleTransfer => pm.model_bytes + n_transfer as u64 * pm.example_bytes,
        Strategy::GradientTransfer => 2 * pm.model_bytes,
    };
    (down, pm.model_bytes)
}

/// Accuracy on the eval population, overall and per label.
///
/// Per-label accuracies are the recall of each class; a label absent from
/// the eval set reports `None` rather than a misleading zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub overall: f64,
    pub pos: Option<f64>,
    pub neg: Option<f64>,
}

/// Example-weighted accuracy over the union of all eval clients' data.
pub fn evaluate(params: &ModelParams, eval_fed: &FederatedDataset) -> Result<EvalReport> {
    let mut totals = [0usize; 2];
    let mut correct = [0usize; 2];
    for ex in eval_fed.all_examples() {
        let label = usize::from(ex.label);
        let predicted = u8::from(model::forward(params, ex)? >= EVAL_THRESHOLD);
        totals[label] += 1;
        if predicted == ex.label {
            correct[label] += 1;
        }
    }
    let total = totals[0] + totals[1];
    if total == 0 {
        return Err(Error::Config("eval dataset has no examples".into()));
    }
    let recall =
        |label: usize| (totals[label] > 0).then(|| correct[label] as f64 / totals[label] as f64);
    Ok(EvalReport {
        overall: (correct[0] + correct[1]) as f64 / total as f64,
        pos: recall(1),
        neg: recall(0),
    })
}

pub const HISTORY_HEADER: &str =
    "round,eval_accuracy,eval_accuracy_pos,eval_accuracy_neg,mean_train_loss,bytes_down_per_client,bytes_up_per_client";

/// Format with 6 significant digits: plain decimal in mid magnitudes,
/// scientific outside, trailing zeros trimmed.
fn fmt_g6(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    let s = if (-4..6).contains(&exp) {
        format!("{v:.prec$}", prec = (5 - exp).max(0) as usize)
    } else {
        format!("{v:.5e}")
    };
    trim_zeros(s)
}

fn trim_zeros(s: String) -> String {
    let (mantissa, exponent) = match s.split_once('e') {
        Some((m, e)) => (m, Some(e)),
        None => (s.as_str(), None),
    };
    let mantissa = if mantissa.contains('.') {
        mantissa.trim_end_matches('0').trim_end_matches('.')
    } else {
        mantissa
    };
    match exponent {
        Some(e) => format!("{mantissa}e{e}"),
        None => mantissa.to_string(),
    }
}

fn cell(value: Option<f64>) -> Result<String> {
    match value {
        None => Ok(String::new()),
        Some(v) if v.is_finite() => Ok(fmt_g6(v)),
        Some(v) => Err(Error::Numerical(format!("non-finite metric value {v}"))),
    }
}

/// Write the round history as CSV. The fine-tune-only central accuracy field
/// is not part of the file format.
pub fn write_history(records: &[RoundRecord], path: &Path) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::Data(format!("{}: cannot create: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{HISTORY_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.round,
            cell(r.eval_accuracy)?,
            cell(r.eval_accuracy_pos)?,
            cell(r.eval_accuracy_neg)?,
            cell(Some(r.mean_train_loss))?,
            r.bytes_down_per_client,
            r.bytes_up_per_client,
        )?;
    }
    w.flush()?;
    Ok(())
}

fn parse_cell(field: &str, line_no: usize, path: &Path) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field.parse::<f64>().map(Some).map_err(|_| {
        Error::Data(format!(
            "{}: line {line_no}: bad number {field:?}",
            path.display()
        ))
    })
}

/// Read back a history CSV. Values equal the written ones up to the 6
/// significant digits the format keeps.
pub fn read_history(path: &Path) -> Result<Vec<RoundRecord>> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("{}: cannot open: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if header != HISTORY_HEADER {
        return Err(Error::Data(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line =
            line.map_err(|e| Error::Data(format!("{}: line {line_no}: {e}", path.display())))?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Data(format!(
                "{}: line {line_no}: expected 7 fields, got {}",
                path.display(),
                fields.len()
            )));
        }
        let parse_int = |field: &str, what: &str| {
            field.parse::<u64>().map_err(|_| {
                Error::Data(format!(
                    "{}: line {line_no}: bad {what} {field:?}",
                    path.display()
                ))
            })
        };
        let mean_train_loss = parse_cell(fields[4], line_no, path)?.ok_or_else(|| {
            Error::Data(format!(
                "{}: line {line_no}: mean_train_loss must be present",
                path.display()
            ))
        })?;
        records.push(RoundRecord {
            round: parse_int(fields[0], "round")? as usize,
            eval_accuracy: parse_cell(fields[1], line_no, path)?,
            eval_accuracy_pos: parse_cell(fields[2], line_no, path)?,
            eval_accuracy_neg: parse_cell(fields[3], line_no, path)?,
            central_eval_accuracy: None,
            mean_train_loss,
            bytes_down_per_client: parse_int(fields[5], "byte count")?,
            bytes_up_per_client: parse_int(fields[6], "byte count")?,
        });
    }
    Ok(records)
}
