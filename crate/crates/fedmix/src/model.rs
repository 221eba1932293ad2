//! Binary classifiers with analytic gradients.
//!
//! Two architectures: logistic regression and a one-hidden-layer MLP, both
//! over flat feature vectors with a sigmoid output. Parameters live in a
//! single flat vector with a fixed layout (layer-major, weights before
//! biases) so model deltas and gradients can be exchanged as plain vectors.
//!
//! Layout:
//! - logistic: `[w(input_dim), b]`
//! - mlp: `[W1(hidden_dim * input_dim, row per hidden unit), b1(hidden_dim),
//!   w2(hidden_dim), b2]`
//!
//! `grad` is the hand-derived backprop gradient of `loss`; `finite_diff_grad`
//! is the independent central-difference check used to verify it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the
/// loss so cross-entropy stays finite. The finite-difference oracle sees the
/// same clamped loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// Hidden-layer activation for the MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed in terms of the pre-activation `z` and the
    /// activation output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Model architecture descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArchSpec {
    Logistic {
        input_dim: usize,
    },
    Mlp {
        input_dim: usize,
        hidden_dim: usize,
        activation: Activation,
    },
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ArchSpec::Logistic { input_dim } => {
                if input_dim == 0 {
                    return Err(Error::Config("input_dim must be at least 1".into()));
                }
            }
            ArchSpec::Mlp {
                input_dim,
                hidden_dim,
                ..
            } => {
                if input_dim == 0 {
                    return Err(Error::Config("input_dim must be at least 1".into()));
                }
                if hidden_dim == 0 {
                    return Err(Error::Config("hidden_dim must be at least 1".into()));
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            ArchSpec::Logistic { input_dim } => input_dim,
            ArchSpec::Mlp { input_dim, .. } => input_dim,
        }
    }

    /// Total parameter count for this architecture.
    pub fn param_count(&self) -> usize {
        match *self {
            ArchSpec::Logistic { input_dim } => input_dim + 1,
            ArchSpec::Mlp {
                input_dim,
                hidden_dim,
                ..
            } => hidden_dim * input_dim + 2 * hidden_dim + 1,
        }
    }
}

/// Flat parameter vector plus its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ArchSpec,
    values: Vec<f64>,
}

impl ModelParams {
    /// Wrap a raw vector, checking length and finiteness.
    pub fn new(arch: ArchSpec, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(Error::Config(format!(
                "parameter vector has length {}, architecture needs {}",
                values.len(),
                arch.param_count()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(
                "parameter vector contains non-finite values".into(),
            ));
        }
        Ok(Self { arch, values })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Componentwise `self + delta`, e.g. applying an optimizer displacement
    /// or a server-side model delta.
    pub fn plus(&self, delta: &Gradient) -> Result<ModelParams> {
        check_congruent(self, delta)?;
        let values = self
            .values
            .iter()
            .zip(&delta.values)
            .map(|(p, d)| p + d)
            .collect();
        ModelParams::new(self.arch, values)
    }

    /// Componentwise `self - other`, the model delta between two parameter
    /// vectors of the same architecture.
    pub fn delta_from(&self, base: &ModelParams) -> Result<Gradient> {
        if self.arch != base.arch {
            return Err(Error::Config("architectures differ".into()));
        }
        Ok(Gradient::new(
            self.values
                .iter()
                .zip(&base.values)
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }
}

/// One labeled example: a feature vector and a binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: u8,
}

impl Example {
    pub fn new(features: Vec<f64>, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::Data(format!("label must be 0 or 1, got {label}")));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("features contain non-finite values".into()));
        }
        Ok(Self { features, label })
    }
}

/// Vector congruent to a model's parameter vector. Houses gradients as well
/// as model deltas, which travel over the same wire format.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    values: Vec<f64>,
}

/// Model deltas are shaped exactly like gradients.
pub type Delta = Gradient;

impl Gradient {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn negated(&self) -> Gradient {
        Gradient::new(self.values.iter().map(|v| -v).collect())
    }

    pub fn scaled(&self, factor: f64) -> Gradient {
        Gradient::new(self.values.iter().map(|v| factor * v).collect())
    }

    /// Componentwise sum; lengths must match.
    pub fn plus(&self, other: &Gradient) -> Result<Gradient> {
        if self.len() != other.len() {
            return Err(Error::Config(format!(
                "vector lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(Gradient::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        ))
    }
}

fn check_congruent(params: &ModelParams, vec: &Gradient) -> Result<()> {
    if params.len() != vec.len() {
        return Err(Error::Config(format!(
            "vector length {} does not match parameter count {}",
            vec.len(),
            params.len()
        )));
    }
    Ok(())
}

fn check_example_dim(params: &ModelParams, example: &Example) -> Result<()> {
    let d = params.arch.input_dim();
    if example.features.len() != d {
        return Err(Error::Data(format!(
            "example has {} features, model expects {}",
            example.features.len(),
            d
        )));
    }
    Ok(())
}

fn check_nonempty(batch: &[Example]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Config("batch must be nonempty".into()));
    }
    Ok(())
}

/// Numerically stable logistic sigmoid.
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Offsets into the flat MLP parameter vector.
struct MlpLayout {
    input_dim: usize,
    hidden_dim: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

fn mlp_layout(arch: &ArchSpec) -> MlpLayout {
    match *arch {
        ArchSpec::Mlp {
            input_dim,
            hidden_dim,
            ..
        } => MlpLayout {
            input_dim,
            hidden_dim,
            b1: hidden_dim * input_dim,
            w2: hidden_dim * input_dim + hidden_dim,
            b2: hidden_dim * input_dim + 2 * hidden_dim,
        },
        ArchSpec::Logistic { .. } => unreachable!("mlp_layout on logistic arch"),
    }
}

/// Hidden pre-activations, activations, and output probability for one
/// example under an MLP.
fn mlp_forward_parts(params: &ModelParams, x: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let layout = mlp_layout(&params.arch);
    let activation = match *params.arch() {
        ArchSpec::Mlp { activation, .. } => activation,
        ArchSpec::Logistic { .. } => unreachable!(),
    };
    let v = &params.values;
    let mut z1 = vec![0.0; layout.hidden_dim];
    let mut a = vec![0.0; layout.hidden_dim];
    for j in 0..layout.hidden_dim {
        let mut z = v[layout.b1 + j];
        let row = &v[j * layout.input_dim..(j + 1) * layout.input_dim];
        for (wi, xi) in row.iter().zip(x) {
            z += wi * xi;
        }
        z1[j] = z;
        a[j] = activation.apply(z);
    }
    let mut z2 = v[layout.b2];
    for j in 0..layout.hidden_dim {
        z2 += v[layout.w2 + j] * a[j];
    }
    (z1, a, sigmoid(z2))
}

/// Initialize parameters: weights i.i.d. uniform in [-0.05, 0.05], biases
/// zero. Deterministic in `(arch, seed)`.
pub fn init_params(arch: ArchSpec, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize, out: &mut Vec<f64>| {
        for _ in 0..n {
            out.push(rng.random_range(-0.05..=0.05));
        }
    };
    let mut values = Vec::with_capacity(arch.param_count());
    match arch {
        ArchSpec::Logistic { input_dim } => {
            draw(input_dim, &mut values);
            values.push(0.0);
        }
        ArchSpec::Mlp {
            input_dim,
            hidden_dim,
            ..
        } => {
            draw(hidden_dim * input_dim, &mut values);
            values.extend(std::iter::repeat_n(0.0, hidden_dim));
            draw(hidden_dim, &mut values);
            values.push(0.0);
        }
    }
    ModelParams::new(arch, values)
}

/// Predicted probability of label 1 for one example.
pub fn forward(params: &ModelParams, example: &Example) -> Result<f64> {
    check_example_dim(params, example)?;
    let p = match params.arch {
        ArchSpec::Logistic { input_dim } => {
            let v = &params.values;
            let mut z = v[input_dim];
            for (wi, xi) in v[..input_dim].iter().zip(&example.features) {
                z += wi * xi;
            }
            sigmoid(z)
        }
        ArchSpec::Mlp { .. } => mlp_forward_parts(params, &example.features).2,
    };
    Ok(p)
}

/// Mean binary cross-entropy over the batch, with probabilities clamped to
/// keep the value finite.
pub fn loss(params: &ModelParams, batch: &[Example]) -> Result<f64> {
    check_nonempty(batch)?;
    let mut total = 0.0;
    for ex in batch {
        let p = clamp_prob(forward(params, ex)?);
        total -= if ex.label == 1 {
            p.ln()
        } else {
            (1.0 - p).ln()
        };
    }
    Ok(total / batch.len() as f64)
}

/// Analytic gradient of `loss` (mean over the batch).
pub fn grad(params: &ModelParams, batch: &[Example]) -> Result<Gradient> {
    check_nonempty(batch)?;
    let mut g = vec![0.0; params.len()];
    match params.arch {
        ArchSpec::Logistic { input_dim } => {
            for ex in batch {
                let p = forward(params, ex)?;
                let e = p - f64::from(ex.label);
                for (gi, xi) in g[..input_dim].iter_mut().zip(&ex.features) {
                    *gi += e * xi;
                }
                g[input_dim] += e;
            }
        }
        ArchSpec::Mlp { activation, .. } => {
            let layout = mlp_layout(&params.arch);
            let v = &params.values;
            for ex in batch {
                check_example_dim(params, ex)?;
                let (z1, a, p) = mlp_forward_parts(params, &ex.features);
                let e = p - f64::from(ex.label);
                g[layout.b2] += e;
                for j in 0..layout.hidden_dim {
                    g[layout.w2 + j] += e * a[j];
                    let dz1 = e * v[layout.w2 + j] * activation.derivative(z1[j], a[j]);
                    g[layout.b1 + j] += dz1;
                    let row = &mut g[j * layout.input_dim..(j + 1) * layout.input_dim];
                    for (gi, xi) in row.iter_mut().zip(&ex.features) {
                        *gi += dz1 * xi;
                    }
                }
            }
        }
    }
    let n = batch.len() as f64;
    for gi in &mut g {
        *gi /= n;
    }
    Ok(Gradient::new(g))
}

/// Central-difference gradient of `loss`, one coordinate at a time. This is
/// the independent oracle `grad` is checked against; it shares no code with
/// the analytic path.
pub fn finite_diff_grad(params: &ModelParams, batch: &[Example], eps: f64) -> Result<Gradient> {
    check_nonempty(batch)?;
    if eps <= 0.0 {
        return Err(Error::Config("eps must be positive".into()));
    }
    let mut g = vec![0.0; params.len()];
    for (j, gj) in g.iter_mut().enumerate() {
        let mut plus = params.clone();
        plus.values[j] += eps;
        let mut minus = params.clone();
        minus.values[j] -= eps;
        *gj = (loss(&plus, batch)? - loss(&minus, batch)?) / (2.0 * eps);
    }
    Ok(Gradient::new(g))
}

/// Fraction of examples where `forward >= threshold` matches the label.
/// A probability exactly at the threshold classifies as 1.
pub fn accuracy(params: &ModelParams, examples: &[Example], threshold: f64) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Config(
            "accuracy needs a nonempty example list".into(),
        ));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "threshold must be in (0,1), got {threshold}"
        )));
    }
    let mut correct = 0usize;
    for ex in examples {
        let predicted = u8::from(forward(params, ex)? >= threshold);
        if predicted == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Maximum relative disagreement between two congruent vectors.
///
/// Components are compared as `|a - b| / max(|a|, |b|, 1e-6)`: the floor
/// makes near-zero components compare absolutely at 1e-6 scale instead of
/// amplifying finite-difference roundoff into spurious failures.
pub fn max_relative_error(a: &Gradient, b: &Gradient) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Smallest |pre-activation| seen in the hidden layer over the batch.
///
/// ReLU gradients are checked only at draws where this margin stays above a
/// threshold, since finite differences straddle the kink otherwise. Returns
/// infinity for architectures without a kink.
pub fn relu_preactivation_margin(params: &ModelParams, batch: &[Example]) -> Result<f64> {
    match *params.arch() {
        ArchSpec::Mlp {
            activation: Activation::Relu,
            ..
        } => {
            check_nonempty(batch)?;
            let mut margin = f64::INFINITY;
            for ex in batch {
                check_example_dim(params, ex)?;
                let (z1, _, _) = mlp_forward_parts(params, &ex.features);
                for z in z1 {
                    margin = margin.min(z.abs());
                }
            }
            Ok(margin)
        }
        _ => Ok(f64::INFINITY),
    }
}

/// Worst relative disagreement between backprop and central finite
/// differences over `draws` random parameter/batch draws.
///
/// Each draw uses its own derived stream, so the report is a pure function
/// of `(arch, seed, draws, eps)`. ReLU draws with a pre-activation inside
/// the 1e-3 kink margin are redrawn rather than checked: a finite difference
/// straddling the kink measures the kink, not the gradient.
pub fn gradcheck(arch: ArchSpec, seed: u64, draws: usize, eps: f64) -> Result<f64> {
    arch.validate()?;
    if draws == 0 {
        return Err(Error::Config("gradcheck needs at least one draw".into()));
    }
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference step must be positive and finite, got {eps}"
        )));
    }
    let batch_size = 6;
    let mut worst = 0.0_f64;
    let mut checked = 0;
    let mut attempt = 0_u64;
    while checked < draws {
        if attempt as usize > 100 * draws {
            return Err(Error::Numerical(
                "could not draw enough batches clear of relu kinks".into(),
            ));
        }
        let mut rng = crate::seed::stream(seed, "gradcheck", attempt, None);
        attempt += 1;
        let values: Vec<f64> = (0..arch.param_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let params = ModelParams::new(arch, values)?;
        let batch: Vec<Example> = (0..batch_size)
            .map(|_| {
                let features: Vec<f64> = (0..arch.input_dim())
                    .map(|_| rng.random_range(-2.0..2.0))
                    .collect();
                Example::new(features, u8::from(rng.random::<bool>()))
            })
            .collect::<Result<_>>()?;
        if relu_preactivation_margin(&params, &batch)? < 1e-3 {
            continue;
        }
        let analytic = grad(&params, &batch)?;
        let numeric = finite_diff_grad(&params, &batch, eps)?;
        worst = worst.max(max_relative_error(&analytic, &numeric));
        checked += 1;
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIGMA_2: f64 = 0.880_797_077_977_882_3; // sigmoid(2)
    const LN_2: f64 = std::f64::consts::LN_2;

    fn logistic(dim: usize) -> ArchSpec {
        ArchSpec::Logistic { input_dim: dim }
    }

    fn mlp(dim: usize, hidden: usize, activation: Activation) -> ArchSpec {
        ArchSpec::Mlp {
            input_dim: dim,
            hidden_dim: hidden,
            activation,
        }
    }

    fn ex(features: &[f64], label: u8) -> Example {
        Example::new(features.to_vec(), label).unwrap()
    }

    fn params_from(arch: ArchSpec, values: &[f64]) -> ModelParams {
        ModelParams::new(arch, values.to_vec()).unwrap()
    }

    /// Random params and batch for gradient checks; params are drawn wider
    /// than init scale to exercise nonlinear regions.
    fn random_draw(arch: ArchSpec, seed: u64, batch_size: usize) -> (ModelParams, Vec<Example>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..arch.param_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let params = ModelParams::new(arch, values).unwrap();
        let batch: Vec<Example> = (0..batch_size)
            .map(|_| {
                let features: Vec<f64> = (0..arch.input_dim())
                    .map(|_| rng.random_range(-2.0..2.0))
                    .collect();
                Example::new(features, u8::from(rng.random::<bool>())).unwrap()
            })
            .collect();
        (params, batch)
    }

    #[test]
    fn param_counts() {
        assert_eq!(logistic(3).param_count(), 4);
        // 10*8 weights + 8 hidden biases + 8 output weights + 1 output bias
        assert_eq!(
            mlp(10, 8, Activation::Tanh).param_count(),
            10 * 8 + 8 + 8 + 1
        );
        assert_eq!(mlp(10, 8, Activation::Tanh).param_count(), 97);
    }

    #[test]
    fn init_bias_zero_and_deterministic() {
        let p1 = init_params(logistic(3), 7).unwrap();
        let p2 = init_params(logistic(3), 7).unwrap();
        assert_eq!(p1.len(), 4);
        assert_eq!(p1.values()[3], 0.0);
        assert_eq!(p1.values(), p2.values());
        assert!(p1.values()[..3].iter().all(|w| w.abs() <= 0.05));

        let m = init_params(mlp(10, 8, Activation::Tanh), 7).unwrap();
        assert_eq!(m.len(), 97);
        // hidden biases and output bias start at zero
        assert!(m.values()[80..88].iter().all(|&b| b == 0.0));
        assert_eq!(m.values()[96], 0.0);
    }

    #[test]
    fn init_differs_across_seeds() {
        let a = init_params(logistic(5), 1).unwrap();
        let b = init_params(logistic(5), 2).unwrap();
        assert_ne!(a.values(), b.values());
    }

    #[test]
    fn forward_zero_params_is_half() {
        let p = params_from(logistic(2), &[0.0, 0.0, 0.0]);
        assert_eq!(forward(&p, &ex(&[3.0, -1.5], 1)).unwrap(), 0.5);
    }

    #[test]
    fn forward_logistic_closed_form() {
        let p = params_from(logistic(1), &[1.0, 0.0]);
        assert_eq!(forward(&p, &ex(&[0.0], 0)).unwrap(), 0.5);
        let p = params_from(logistic(1), &[2.0, 0.0]);
        let got = forward(&p, &ex(&[1.0], 0)).unwrap();
        assert!((got - SIGMA_2).abs() < 1e-12, "sigmoid(2) = {got}");
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let p = params_from(logistic(2), &[0.0, 0.0, 0.0]);
        assert!(forward(&p, &ex(&[1.0], 1)).is_err());
    }

    #[test]
    fn loss_zero_params_is_ln2() {
        let p = params_from(logistic(2), &[0.0; 3]);
        let batch = vec![ex(&[1.0, 2.0], 1), ex(&[-1.0, 0.5], 0)];
        let got = loss(&p, &batch).unwrap();
        assert!((got - LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_bottoms_out_at_clamp_floor() {
        // sigmoid(20) is within 1e-8 of 1, so the clamp decides the loss:
        // -ln(1 - PROB_CLAMP).
        let p = params_from(logistic(1), &[20.0, 0.0]);
        let got = loss(&p, &[ex(&[1.0], 1)]).unwrap();
        let floor = -(1.0 - PROB_CLAMP).ln();
        assert!(
            (got - floor).abs() < 1e-12,
            "loss {got}, clamp floor {floor}"
        );
    }

    #[test]
    fn loss_confident_mistake_closed_form() {
        let p = params_from(logistic(1), &[2.0, 0.0]);
        let got = loss(&p, &[ex(&[1.0], 0)]).unwrap();
        let expected = -(1.0 - SIGMA_2).ln(); // 2.126928...
        assert!(
            (got - expected).abs() < 1e-9,
            "got {got}, expected {expected}"
        );
    }

    #[test]
    fn loss_rejects_empty_batch() {
        let p = params_from(logistic(1), &[0.0, 0.0]);
        assert!(loss(&p, &[]).is_err());
    }

    #[test]
    fn grad_logistic_closed_form() {
        // (sigmoid(0) - 1) * [x; 1] = -0.5 * [1, 1]
        let p = params_from(logistic(1), &[0.0, 0.0]);
        let g = grad(&p, &[ex(&[1.0], 1)]).unwrap();
        assert_eq!(g.values(), &[-0.5, -0.5]);
    }

    #[test]
    fn grad_of_duplicated_example_equals_single() {
        let p = params_from(logistic(2), &[0.3, -0.2, 0.1]);
        let single = grad(&p, &[ex(&[1.0, -2.0], 0)]).unwrap();
        let doubled = grad(&p, &[ex(&[1.0, -2.0], 0), ex(&[1.0, -2.0], 0)]).unwrap();
        for (a, b) in single.values().iter().zip(doubled.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn finite_diff_matches_closed_form_logistic() {
        let p = params_from(logistic(1), &[0.0, 0.0]);
        let g = finite_diff_grad(&p, &[ex(&[1.0], 1)], 1e-5).unwrap();
        assert!((g.values()[0] + 0.5).abs() < 1e-9);
        assert!((g.values()[1] + 0.5).abs() < 1e-9);
    }

    #[test]
    fn analytic_matches_finite_diff_logistic() {
        for seed in 0..10 {
            let (p, batch) = random_draw(logistic(6), seed, 8);
            let analytic = grad(&p, &batch).unwrap();
            let numeric = finite_diff_grad(&p, &batch, 1e-5).unwrap();
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn analytic_matches_finite_diff_mlp_tanh() {
        for seed in 0..10 {
            let (p, batch) = random_draw(mlp(5, 4, Activation::Tanh), seed, 6);
            let analytic = grad(&p, &batch).unwrap();
            let numeric = finite_diff_grad(&p, &batch, 1e-5).unwrap();
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn analytic_matches_finite_diff_mlp_relu_away_from_kinks() {
        let mut checked = 0;
        let mut seed = 100;
        while checked < 10 {
            let (p, batch) = random_draw(mlp(5, 4, Activation::Relu), seed, 6);
            seed += 1;
            if relu_preactivation_margin(&p, &batch).unwrap() < 1e-3 {
                continue;
            }
            let analytic = grad(&p, &batch).unwrap();
            let numeric = finite_diff_grad(&p, &batch, 1e-5).unwrap();
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "seed {}: relative error {err}", seed - 1);
            checked += 1;
        }
    }

    #[test]
    fn gradcheck_passes_for_all_architectures() {
        for arch in [
            logistic(10),
            mlp(10, 8, Activation::Tanh),
            mlp(10, 8, Activation::Relu),
        ] {
            let worst = gradcheck(arch, 42, 10, 1e-6).unwrap();
            assert!(worst < 1e-4, "{arch:?}: worst relative error {worst}");
        }
    }

    #[test]
    fn gradcheck_degenerate_step_is_roundoff_dominated() {
        // At eps = 1e-12 the difference quotient loses most of its
        // significant digits, which is exactly what the check must expose.
        let worst = gradcheck(mlp(10, 8, Activation::Tanh), 42, 10, 1e-12).unwrap();
        assert!(
            worst > 1e-4,
            "expected roundoff-dominated error, got {worst}"
        );
    }

    #[test]
    fn gradcheck_is_deterministic() {
        let a = gradcheck(logistic(7), 9, 10, 1e-6).unwrap();
        let b = gradcheck(logistic(7), 9, 10, 1e-6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradcheck_rejects_bad_arguments() {
        assert!(gradcheck(logistic(3), 1, 0, 1e-6).is_err());
        assert!(gradcheck(logistic(3), 1, 5, 0.0).is_err());
        assert!(gradcheck(logistic(3), 1, 5, f64::NAN).is_err());
    }

    #[test]
    fn accuracy_constant_predictor() {
        let p = params_from(logistic(2), &[0.0; 3]);
        // p = 0.5 everywhere, ties classify as 1
        let examples = vec![ex(&[1.0, 0.0], 1), ex(&[0.0, 1.0], 0), ex(&[2.0, 2.0], 1)];
        let got = accuracy(&p, &examples, 0.5).unwrap();
        assert!((got - 2.0 / 3.0).abs() < 1e-15);

        let balanced = vec![ex(&[1.0, 0.0], 1), ex(&[0.0, 1.0], 0)];
        assert_eq!(accuracy(&p, &balanced, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn accuracy_perfect_fit() {
        let p = params_from(logistic(1), &[10.0, 0.0]);
        let examples = vec![ex(&[2.0], 1), ex(&[-2.0], 0)];
        assert_eq!(accuracy(&p, &examples, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_rejects_bad_inputs() {
        let p = params_from(logistic(1), &[0.0, 0.0]);
        assert!(accuracy(&p, &[], 0.5).is_err());
        assert!(accuracy(&p, &[ex(&[1.0], 1)], 0.0).is_err());
        assert!(accuracy(&p, &[ex(&[1.0], 1)], 1.0).is_err());
    }

    #[test]
    fn example_rejects_bad_label_and_nonfinite() {
        assert!(Example::new(vec![1.0], 2).is_err());
        assert!(Example::new(vec![f64::NAN], 0).is_err());
    }

    #[test]
    fn params_reject_wrong_length() {
        assert!(ModelParams::new(logistic(3), vec![0.0; 3]).is_err());
        assert!(ModelParams::new(logistic(3), vec![0.0; 4]).is_ok());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn small_batch() -> impl Strategy<Value = Vec<(Vec<f64>, u8)>> {
            prop::collection::vec((prop::collection::vec(-3.0f64..3.0, 3), 0u8..=1), 2..8)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn loss_and_grad_invariant_under_batch_permutation(
                raw in small_batch(),
                seed in 0u64..1000,
            ) {
                let (p, _) = random_draw(logistic(3), seed, 1);
                let batch: Vec<Example> =
                    raw.iter().map(|(f, l)| Example::new(f.clone(), *l).unwrap()).collect();
                let mut reversed = batch.clone();
                reversed.reverse();

                let l1 = loss(&p, &batch).unwrap();
                let l2 = loss(&p, &reversed).unwrap();
                prop_assert!((l1 - l2).abs() < 1e-12);

                let g1 = grad(&p, &batch).unwrap();
                let g2 = grad(&p, &reversed).unwrap();
                for (a, b) in g1.values().iter().zip(g2.values()) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }

            #[test]
            fn grad_of_concatenation_is_mean_of_halves(
                raw in prop::collection::vec(
                    (prop::collection::vec(-3.0f64..3.0, 3), 0u8..=1),
                    2..6,
                ),
                seed in 0u64..1000,
            ) {
                let (p, _) = random_draw(logistic(3), seed, 1);
                let half: Vec<Example> =
                    raw.iter().map(|(f, l)| Example::new(f.clone(), *l).unwrap()).collect();
                let other: Vec<Example> = half.iter().rev().cloned().collect();
                let mut joined = half.clone();
                joined.extend(other.iter().cloned());

                let g_joined = grad(&p, &joined).unwrap();
                let g_a = grad(&p, &half).unwrap();
                let g_b = grad(&p, &other).unwrap();
                for ((j, a), b) in g_joined.values().iter().zip(g_a.values()).zip(g_b.values()) {
                    prop_assert!((j - (a + b) / 2.0).abs() < 1e-12);
                }
            }

            #[test]
            fn clamped_probability_strictly_inside_unit_interval(
                w in -60.0f64..60.0,
                x in -3.0f64..3.0,
            ) {
                let p = params_from(logistic(1), &[w, 0.0]);
                let prob = clamp_prob(forward(&p, &ex(&[x], 1)).unwrap());
                prop_assert!((PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&prob));
                let l = loss(&p, &[ex(&[x], 0)]).unwrap();
                prop_assert!(l.is_finite());
            }
        }
    }
}
