//! Datasets and deterministic data plumbing.
//!
//! A `FederatedDataset` maps client ids to their local examples; a
//! `CentralDataset` is a flat pool. Both are immutable after construction.
//! All sampling, batching, and generation takes explicit RNG streams (or a
//! seed to derive them from), so every function here is a pure function of
//! its inputs.
//!
//! The synthetic generator reproduces a one-class-per-side split: federated
//! clients hold only positives, the central pool holds only negatives, and
//! the eval population holds both labels in equal counts. Positives sit at
//! the origin with a per-client mean shift; negatives sit at distance
//! `class_separation` along the unit diagonal. The asymmetry is deliberate:
//! a model trained on positives alone collapses to a constant-positive
//! predictor instead of accidentally learning the separating direction.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Example;
use crate::seed;

/// Client identifier, unique within a dataset. Ordering is lexicographic and
/// defines the canonical aggregation order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(String);

impl ClientId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Data("client id must be nonempty".into()));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Examples partitioned by client. Every client is nonempty and all feature
/// vectors share one length.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedDataset {
    clients: BTreeMap<ClientId, Vec<Example>>,
    input_dim: usize,
}

impl FederatedDataset {
    pub fn from_clients(clients: BTreeMap<ClientId, Vec<Example>>) -> Result<Self> {
        let mut input_dim = None;
        for (id, examples) in &clients {
            if examples.is_empty() {
                return Err(Error::Data(format!("client {id} has no examples")));
            }
            for ex in examples {
                match input_dim {
                    None => input_dim = Some(ex.features.len()),
                    Some(d) if d != ex.features.len() => {
                        return Err(Error::Data(format!(
                            "client {id} has a {}-dim example, expected {d}",
                            ex.features.len()
                        )));
                    }
                    Some(_) => {}
                }
            }
        }
        let input_dim =
            input_dim.ok_or_else(|| Error::Data("federated dataset has no examples".into()))?;
        Ok(Self { clients, input_dim })
    }

    pub fn clients(&self) -> &BTreeMap<ClientId, Vec<Example>> {
        &self.clients
    }

    /// Client ids in canonical (ascending) order.
    pub fn client_ids(&self) -> impl Iterator<Item = &ClientId> {
        self.clients.keys()
    }

    pub fn get(&self, id: &ClientId) -> Option<&[Example]> {
        self.clients.get(id).map(Vec::as_slice)
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn total_examples(&self) -> usize {
        self.clients.values().map(Vec::len).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// All examples in canonical order (clients ascending, file/insertion
    /// order within a client).
    pub fn all_examples(&self) -> impl Iterator<Item = &Example> {
        self.clients.values().flatten()
    }
}

/// Flat pool of datacenter-resident examples.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralDataset {
    examples: Vec<Example>,
    input_dim: usize,
}

impl CentralDataset {
    pub fn from_examples(examples: Vec<Example>) -> Result<Self> {
        let input_dim = match examples.first() {
            Some(ex) => ex.features.len(),
            None => return Err(Error::Data("central dataset has no examples".into())),
        };
        for ex in &examples {
            if ex.features.len() != input_dim {
                return Err(Error::Data(format!(
                    "central dataset mixes feature lengths {} and {input_dim}",
                    ex.features.len()
                )));
            }
        }
        Ok(Self {
            examples,
            input_dim,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
}

/// Knobs for the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub input_dim: usize,
    pub n_train_clients: usize,
    pub n_eval_clients: usize,
    pub examples_per_client: usize,
    pub n_central: usize,
    /// Distance between the two class means.
    pub class_separation: f64,
    /// Scale of the per-client mean offset (0 = IID clients).
    pub client_shift_std: f64,
    pub noise_std: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            input_dim: 10,
            n_train_clients: 200,
            n_eval_clients: 50,
            examples_per_client: 20,
            n_central: 2000,
            class_separation: 3.0,
            client_shift_std: 0.5,
            noise_std: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("input_dim", self.input_dim),
            ("n_train_clients", self.n_train_clients),
            ("n_eval_clients", self.n_eval_clients),
            ("examples_per_client", self.examples_per_client),
            ("n_central", self.n_central),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.class_separation.is_finite() && self.class_separation > 0.0) {
            return Err(Error::Config(format!(
                "class_separation must be positive and finite, got {}",
                self.class_separation
            )));
        }
        for (name, value) in [
            ("client_shift_std", self.client_shift_std),
            ("noise_std", self.noise_std),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be nonnegative and finite, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Positive-class mean: the origin.
fn mu_pos(dim: usize) -> Vec<f64> {
    vec![0.0; dim]
}

/// Negative-class mean: `class_separation` along the unit diagonal, so
/// `|mu_pos - mu_neg| = class_separation` in any dimension.
fn mu_neg(dim: usize, class_separation: f64) -> Vec<f64> {
    let component = class_separation / (dim as f64).sqrt();
    vec![component; dim]
}

/// mean + std * z with z standard normal. Always consumes exactly one draw,
/// so std = 0 keeps streams aligned with std > 0.
fn gaussian(rng: &mut ChaCha8Rng, mean: f64, std: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + std * z
}

fn gaussian_vec(rng: &mut ChaCha8Rng, mean: &[f64], std: f64) -> Vec<f64> {
    mean.iter().map(|&m| gaussian(rng, m, std)).collect()
}

/// Per-client mean offset, one independent stream per (purpose, client).
fn client_shift(master: u64, purpose: &str, id: &ClientId, cfg: &SyntheticConfig) -> Vec<f64> {
    let mut rng = seed::stream(master, purpose, 0, Some(id.as_str()));
    gaussian_vec(&mut rng, &mu_pos(cfg.input_dim), cfg.client_shift_std)
}

fn train_client_id(i: usize) -> ClientId {
    ClientId::new(format!("train_{i:04}")).expect("static id")
}

fn eval_client_id(i: usize) -> ClientId {
    ClientId::new(format!("eval_{i:04}")).expect("static id")
}

/// Positives for one training client: `examples_per_client` draws from
/// N(mu_pos + shift_i, noise^2 I). Used by both the plain and the oracle
/// generator so the oracle's positives are bit-identical to the training
/// set's.
fn train_client_positives(
    master: u64,
    id: &ClientId,
    cfg: &SyntheticConfig,
) -> Result<Vec<Example>> {
    let shift = client_shift(master, "synth.train.shift", id, cfg);
    let mut rng = seed::stream(master, "synth.train.ex", 0, Some(id.as_str()));
    (0..cfg.examples_per_client)
        .map(|_| Example::new(gaussian_vec(&mut rng, &shift, cfg.noise_std), 1))
        .collect()
}

/// Generate the three-way split: positive-only training clients, a
/// negative-only central pool, and balanced eval clients. Deterministic in
/// `(config, seed)`.
///
/// Eval clients draw their positives with their own mean shift; their
/// negatives come from the central distribution N(mu_neg, noise^2 I), the
/// only negative-generating distribution in the design.
pub fn synthesize(
    cfg: &SyntheticConfig,
    master: u64,
) -> Result<(FederatedDataset, CentralDataset, FederatedDataset)> {
    cfg.validate()?;
    if !cfg.examples_per_client.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "examples_per_client must be even for the balanced eval split, got {}",
            cfg.examples_per_client
        )));
    }
    let neg_mean = mu_neg(cfg.input_dim, cfg.class_separation);

    let mut train = BTreeMap::new();
    for i in 0..cfg.n_train_clients {
        let id = train_client_id(i);
        let examples = train_client_positives(master, &id, cfg)?;
        train.insert(id, examples);
    }

    let mut central_rng = seed::stream(master, "synth.central", 0, None);
    let central: Vec<Example> = (0..cfg.n_central)
        .map(|_| Example::new(gaussian_vec(&mut central_rng, &neg_mean, cfg.noise_std), 0))
        .collect::<Result<_>>()?;

    let mut eval = BTreeMap::new();
    let half = cfg.examples_per_client / 2;
    for i in 0..cfg.n_eval_clients {
        let id = eval_client_id(i);
        let shift = client_shift(master, "synth.eval.shift", &id, cfg);
        let mut rng = seed::stream(master, "synth.eval.ex", 0, Some(id.as_str()));
        let mut examples = Vec::with_capacity(cfg.examples_per_client);
        for _ in 0..half {
            examples.push(Example::new(
                gaussian_vec(&mut rng, &shift, cfg.noise_std),
                1,
            )?);
        }
        for _ in 0..half {
            examples.push(Example::new(
                gaussian_vec(&mut rng, &neg_mean, cfg.noise_std),
                0,
            )?);
        }
        eval.insert(id, examples);
    }

    Ok((
        FederatedDataset::from_clients(train)?,
        CentralDataset::from_examples(central)?,
        FederatedDataset::from_clients(eval)?,
    ))
}

/// Counterfactual training population where every client also holds
/// negatives: the same positives as `synthesize` (identical draws) plus an
/// equal-size draw from the central distribution.
pub fn synthesize_oracle(cfg: &SyntheticConfig, master: u64) -> Result<FederatedDataset> {
    cfg.validate()?;
    if !cfg.examples_per_client.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "examples_per_client must be even for the balanced eval split, got {}",
            cfg.examples_per_client
        )));
    }
    let neg_mean = mu_neg(cfg.input_dim, cfg.class_separation);
    let mut clients = BTreeMap::new();
    for i in 0..cfg.n_train_clients {
        let id = train_client_id(i);
        let mut examples = train_client_positives(master, &id, cfg)?;
        let mut rng = seed::stream(master, "synth.oracle.neg", 0, Some(id.as_str()));
        for _ in 0..cfg.examples_per_client {
            examples.push(Example::new(
                gaussian_vec(&mut rng, &neg_mean, cfg.noise_std),
                0,
            )?);
        }
        clients.insert(id, examples);
    }
    FederatedDataset::from_clients(clients)
}

/// Uniform sample of `m` distinct clients, returned in ascending id order so
/// downstream aggregation is order-stable.
pub fn sample_clients(
    fed: &FederatedDataset,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ClientId>> {
    let n = fed.n_clients();
    if m == 0 || m > n {
        return Err(Error::Config(format!(
            "clients_per_round must be in 1..={n}, got {m}"
        )));
    }
    let ids: Vec<&ClientId> = fed.client_ids().collect();
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, n, m).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| ids[i].clone()).collect())
}

/// Endless batch source over a fixed example pool.
///
/// Each epoch is one random permutation cut into consecutive chunks of
/// `batch_size`; the final short chunk is kept. Exhausting an epoch
/// reshuffles. Draws come only from the stream handed in at construction.
#[derive(Debug, Clone)]
pub struct Batches {
    examples: Vec<Example>,
    batch_size: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Batches {
    pub fn new(examples: &[Example], batch_size: usize, rng: ChaCha8Rng) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Config("cannot batch an empty example list".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(Self {
            examples: examples.to_vec(),
            batch_size,
            rng,
            order: (0..examples.len()).collect(),
            pos: 0,
        })
    }

    /// Next batch, starting a new shuffled epoch when the previous one is
    /// exhausted.
    pub fn next_batch(&mut self) -> Vec<Example> {
        if self.pos == 0 {
            self.order.shuffle(&mut self.rng);
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end]
            .iter()
            .map(|&i| self.examples[i].clone())
            .collect();
        self.pos = if end == self.order.len() { 0 } else { end };
        batch
    }
}

impl Iterator for Batches {
    type Item = Vec<Example>;

    fn next(&mut self) -> Option<Vec<Example>> {
        Some(self.next_batch())
    }
}

/// Client data plus transferred examples as one pool. Pure concatenation;
/// shuffling is the batcher's job. Inputs are untouched.
pub fn merge_examples(client_examples: &[Example], transferred: &[Example]) -> Vec<Example> {
    let mut merged = Vec::with_capacity(client_examples.len() + transferred.len());
    merged.extend_from_slice(client_examples);
    merged.extend_from_slice(transferred);
    merged
}

/// Round-half-up of `fraction * n`, clamped so both sides of a split stay
/// nonempty.
fn split_count(n: usize, fraction: f64) -> usize {
    let raw = (fraction * n as f64 + 0.5).floor() as usize;
    raw.clamp(1, n - 1)
}

/// Disjoint client-level partition into (train, eval). The eval side gets
/// round(eval_fraction * n_clients) clients, rounding half up, at least one
/// client on each side. Deterministic in `seed`.
pub fn split_train_eval(
    fed: &FederatedDataset,
    eval_fraction: f64,
    master: u64,
) -> Result<(FederatedDataset, FederatedDataset)> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::Config(format!(
            "eval_fraction must be in (0, 1), got {eval_fraction}"
        )));
    }
    let n = fed.n_clients();
    if n < 2 {
        return Err(Error::Config(format!(
            "client-level split needs at least 2 clients, got {n}"
        )));
    }
    let n_eval = split_count(n, eval_fraction);
    let mut ids: Vec<ClientId> = fed.client_ids().cloned().collect();
    let mut rng = seed::stream(master, "data.split", 0, None);
    ids.shuffle(&mut rng);
    let eval_ids: std::collections::BTreeSet<ClientId> = ids.drain(..n_eval).collect();

    let mut train = BTreeMap::new();
    let mut eval = BTreeMap::new();
    for (id, examples) in fed.clients() {
        let side = if eval_ids.contains(id) {
            &mut eval
        } else {
            &mut train
        };
        side.insert(id.clone(), examples.clone());
    }
    Ok((
        FederatedDataset::from_clients(train)?,
        FederatedDataset::from_clients(eval)?,
    ))
}

/// Shuffle-and-cut split of a flat example list: `(kept, held_out)` with
/// round(fraction * n) held out, at least one example on each side.
pub fn split_examples(
    examples: &[Example],
    holdout_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Example>, Vec<Example>)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Config(format!(
            "holdout_fraction must be in (0, 1), got {holdout_fraction}"
        )));
    }
    if examples.len() < 2 {
        return Err(Error::Config(format!(
            "example-level split needs at least 2 examples, got {}",
            examples.len()
        )));
    }
    let n_holdout = split_count(examples.len(), holdout_fraction);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    let held_out = order[..n_holdout]
        .iter()
        .map(|&i| examples[i].clone())
        .collect();
    let kept = order[n_holdout..]
        .iter()
        .map(|&i| examples[i].clone())
        .collect();
    Ok((kept, held_out))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlRecord {
    client_id: Option<String>,
    features: Vec<f64>,
    label: u8,
}

fn data_err(path: &Path, msg: impl fmt::Display) -> Error {
    Error::Data(format!("{}: {msg}", path.display()))
}

fn read_records(path: &Path) -> Result<Vec<JsonlRecord>> {
    let file = File::open(path).map_err(|e| data_err(path, format!("cannot open: {e}")))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut input_dim = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| data_err(path, format!("line {line_no}: {e}")))?;
        let record: JsonlRecord = serde_json::from_str(&line)
            .map_err(|e| data_err(path, format!("line {line_no}: {e}")))?;
        if record.label > 1 {
            return Err(data_err(
                path,
                format!("line {line_no}: label must be 0 or 1, got {}", record.label),
            ));
        }
        if !record.features.iter().all(|v| v.is_finite()) {
            return Err(data_err(
                path,
                format!("line {line_no}: non-finite feature"),
            ));
        }
        match input_dim {
            None => input_dim = Some(record.features.len()),
            Some(d) if d != record.features.len() => {
                return Err(data_err(
                    path,
                    format!(
                        "line {line_no}: feature length {} differs from {d}",
                        record.features.len()
                    ),
                ));
            }
            Some(_) => {}
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(data_err(path, "no examples"));
    }
    Ok(records)
}

/// Load a JSONL file grouping examples by client id, preserving file order
/// within each client. Every line must carry a client id.
pub fn load_federated(path: &Path) -> Result<FederatedDataset> {
    let records = read_records(path)?;
    let mut clients: BTreeMap<ClientId, Vec<Example>> = BTreeMap::new();
    for (idx, record) in records.into_iter().enumerate() {
        let id = record
            .client_id
            .ok_or_else(|| data_err(path, format!("line {}: missing client_id", idx + 1)))?;
        let id = ClientId::new(id).map_err(|e| data_err(path, format!("line {}: {e}", idx + 1)))?;
        clients
            .entry(id)
            .or_default()
            .push(Example::new(record.features, record.label)?);
    }
    FederatedDataset::from_clients(clients)
}

/// Load a JSONL file as one pooled example list, ignoring client ids.
pub fn load_central(path: &Path) -> Result<CentralDataset> {
    let records = read_records(path)?;
    let examples = records
        .into_iter()
        .map(|r| Example::new(r.features, r.label))
        .collect::<Result<_>>()?;
    CentralDataset::from_examples(examples)
}

fn write_lines<'a>(
    path: &Path,
    lines: impl Iterator<Item = (Option<&'a ClientId>, &'a Example)>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| data_err(path, format!("cannot create: {e}")))?;
    let mut writer = BufWriter::new(file);
    for (client_id, ex) in lines {
        let record = JsonlRecord {
            client_id: client_id.map(|id| id.as_str().to_string()),
            features: ex.features.clone(),
            label: ex.label,
        };
        let json = serde_json::to_string(&record)
            .map_err(|e| data_err(path, format!("serialization: {e}")))?;
        writeln!(writer, "{json}").map_err(|e| data_err(path, e))?;
    }
    writer.flush().map_err(|e| data_err(path, e))
}

pub fn write_federated(fed: &FederatedDataset, path: &Path) -> Result<()> {
    write_lines(
        path,
        fed.clients()
            .iter()
            .flat_map(|(id, examples)| examples.iter().map(move |ex| (Some(id), ex))),
    )
}

pub fn write_central(central: &CentralDataset, path: &Path) -> Result<()> {
    write_lines(path, central.examples().iter().map(|ex| (None, ex)))
}
