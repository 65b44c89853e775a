//! Multilayer perceptron with ReLU hidden units and either a
//! softmax/cross-entropy or linear/half-MSE head. Provides the mean loss,
//! the exact backpropagation gradient, the Pearlmutter forward-over-reverse
//! Hessian-vector product, and explicit Hessian assembly.
//!
//! Parameter layout: per layer, the weight matrix row-major (out x in)
//! followed by that layer's bias. Biases are parameters and appear in the
//! Hessian. ReLU derivative at exactly zero input is taken as 0.

use crate::linalg::{symmetrize, DenseMatrix};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Flat vector of all weights and biases.
pub type ParamVector = Vec<f64>;

/// Default cap on param_count for explicit Hessian assembly.
pub const DEFAULT_HESSIAN_BUDGET: usize = 25_000;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    BadSpec(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("accuracy requires a softmax classifier head")]
    WrongHead,
    #[error("param_count {param_count} exceeds the Hessian budget {budget}")]
    HessianBudgetExceeded { param_count: usize, budget: usize },
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}

/// Output layer type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    SoftmaxCrossEntropy,
    LinearMse,
}

/// Network architecture: layer sizes (input, hidden..., output), ReLU on
/// hidden layers, biases everywhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, head: Head) -> Result<Self, ModelError> {
        if layer_sizes.len() < 2 {
            return Err(ModelError::BadSpec(format!(
                "need at least input and output layers, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(ModelError::BadSpec(format!(
                "all layer sizes must be >= 1, got {layer_sizes:?}"
            )));
        }
        Ok(Self { layer_sizes, head })
    }

    pub fn classifier(layer_sizes: Vec<usize>) -> Result<Self, ModelError> {
        Self::new(layer_sizes, Head::SoftmaxCrossEntropy)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of weight layers.
    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Total parameter count: sum over layers of n_in * n_out + n_out.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// (weight_offset, bias_offset, n_in, n_out) for weight layer l (0-based).
    fn layer_offsets(&self, l: usize) -> (usize, usize, usize, usize) {
        let mut off = 0;
        for i in 0..l {
            let (n_in, n_out) = (self.layer_sizes[i], self.layer_sizes[i + 1]);
            off += n_in * n_out + n_out;
        }
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        (off, off + n_in * n_out, n_in, n_out)
    }
}

/// One set of inputs and targets. Targets are one-hot rows for the
/// classifier head, arbitrary real vectors for the MSE head.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: DenseMatrix,
    pub targets: DenseMatrix,
}

impl Batch {
    pub fn new(inputs: DenseMatrix, targets: DenseMatrix) -> Result<Self, ModelError> {
        if inputs.rows() != targets.rows() {
            return Err(ModelError::DimensionMismatch(format!(
                "{} input rows vs {} target rows",
                inputs.rows(),
                targets.rows()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row subset (copying), used for mini-batching.
    pub fn subset(&self, idx: &[usize]) -> Batch {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| self.inputs.row(i).to_vec()).collect();
        let targets: Vec<Vec<f64>> = idx.iter().map(|&i| self.targets.row(i).to_vec()).collect();
        Batch {
            inputs: DenseMatrix::from_rows(&rows).unwrap(),
            targets: DenseMatrix::from_rows(&targets).unwrap(),
        }
    }

    fn check_compat(&self, spec: &MlpSpec) -> Result<(), ModelError> {
        if self.inputs.cols() != spec.input_dim() {
            return Err(ModelError::DimensionMismatch(format!(
                "batch input dim {} vs spec input dim {}",
                self.inputs.cols(),
                spec.input_dim()
            )));
        }
        if self.targets.cols() != spec.output_dim() {
            return Err(ModelError::DimensionMismatch(format!(
                "batch target dim {} vs spec output dim {}",
                self.targets.cols(),
                spec.output_dim()
            )));
        }
        Ok(())
    }
}

fn check_params(spec: &MlpSpec, params: &[f64]) -> Result<(), ModelError> {
    if params.len() != spec.param_count() {
        return Err(ModelError::DimensionMismatch(format!(
            "param vector length {} vs param_count {}",
            params.len(),
            spec.param_count()
        )));
    }
    Ok(())
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitKind {
    /// U[-sqrt(6)/sqrt(n_in + n_out), +sqrt(6)/sqrt(n_in + n_out)]
    XavierUniform,
    /// U[-4/(n_in + n_out), +4/(n_in + n_out)]
    HeTable7,
    /// Orthonormal rows (or columns when fan_out > fan_in).
    Orthogonal,
    Normal { std: f64 },
    Uniform { limit: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitMethod {
    pub kind: InitKind,
    pub seed: u64,
}

/// Result of a seeded initialization draw. `notes` records non-fatal
/// adjustments such as the transposed orthogonal construction.
#[derive(Debug, Clone)]
pub struct InitDraw {
    pub params: ParamVector,
    pub notes: Vec<String>,
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draws weights per the chosen scheme; biases start at zero. The draw is
/// fully determined by the seed.
pub fn init_params(spec: &MlpSpec, method: &InitMethod) -> InitDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(method.seed);
    let mut params = vec![0.0; spec.param_count()];
    let mut notes = Vec::new();
    for l in 0..spec.num_layers() {
        let (w_off, _b_off, n_in, n_out) = spec.layer_offsets(l);
        let w = &mut params[w_off..w_off + n_in * n_out];
        match method.kind {
            InitKind::XavierUniform => {
                let limit = 6.0_f64.sqrt() / ((n_in + n_out) as f64).sqrt();
                for x in w.iter_mut() {
                    *x = rng.gen_range(-limit..limit);
                }
            }
            InitKind::HeTable7 => {
                let limit = 4.0 / (n_in + n_out) as f64;
                for x in w.iter_mut() {
                    *x = rng.gen_range(-limit..limit);
                }
            }
            InitKind::Orthogonal => {
                let transposed = n_in < n_out;
                if transposed {
                    notes.push(format!(
                        "layer {l}: fan_in {n_in} < fan_out {n_out}; orthogonal init built on the transpose"
                    ));
                }
                // Gram-Schmidt on Gaussian rows of the wider orientation,
                // yielding orthonormal rows (out x in) or columns.
                let (r, c) = if transposed { (n_in, n_out) } else { (n_out, n_in) };
                let mut basis: Vec<Vec<f64>> = Vec::with_capacity(r);
                while basis.len() < r {
                    let mut v: Vec<f64> = (0..c).map(|_| sample_normal(&mut rng)).collect();
                    for u in &basis {
                        let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                        for (vi, ui) in v.iter_mut().zip(u) {
                            *vi -= proj * ui;
                        }
                    }
                    let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if nv > 1e-8 {
                        for vi in v.iter_mut() {
                            *vi /= nv;
                        }
                        basis.push(v);
                    }
                }
                for o in 0..n_out {
                    for i in 0..n_in {
                        w[o * n_in + i] = if transposed { basis[i][o] } else { basis[o][i] };
                    }
                }
            }
            InitKind::Normal { std } => {
                for x in w.iter_mut() {
                    *x = std * sample_normal(&mut rng);
                }
            }
            InitKind::Uniform { limit } => {
                for x in w.iter_mut() {
                    *x = rng.gen_range(-limit..limit);
                }
            }
        }
    }
    InitDraw { params, notes }
}

// ---------------------------------------------------------------------------
// Forward / backward machinery
// ---------------------------------------------------------------------------

struct ForwardCache {
    /// Activations a_0 (inputs) .. a_L; a_L are the raw logits/outputs.
    activations: Vec<DenseMatrix>,
    /// Pre-activations z_1 .. z_L.
    pre: Vec<DenseMatrix>,
}

/// z = a W^T + b for one layer, batched over rows of `a`.
fn affine(a: &DenseMatrix, w: &[f64], b: &[f64], n_in: usize, n_out: usize) -> DenseMatrix {
    let n = a.rows();
    let mut z = DenseMatrix::zeros(n, n_out);
    for s in 0..n {
        let row = a.row(s);
        for o in 0..n_out {
            let wrow = &w[o * n_in..(o + 1) * n_in];
            let mut acc = b[o];
            for i in 0..n_in {
                acc += wrow[i] * row[i];
            }
            z.set(s, o, acc);
        }
    }
    z
}

fn relu(z: &DenseMatrix) -> DenseMatrix {
    let mut a = z.clone();
    for s in 0..a.rows() {
        for o in 0..a.cols() {
            if a.at(s, o) <= 0.0 {
                a.set(s, o, 0.0);
            }
        }
    }
    a
}

fn forward_cache(spec: &MlpSpec, params: &[f64], inputs: &DenseMatrix) -> ForwardCache {
    let num_layers = spec.num_layers();
    let mut activations = Vec::with_capacity(num_layers + 1);
    let mut pre = Vec::with_capacity(num_layers);
    activations.push(inputs.clone());
    for l in 0..num_layers {
        let (w_off, b_off, n_in, n_out) = spec.layer_offsets(l);
        let z = affine(
            activations.last().unwrap(),
            &params[w_off..w_off + n_in * n_out],
            &params[b_off..b_off + n_out],
            n_in,
            n_out,
        );
        let a = if l + 1 < num_layers { relu(&z) } else { z.clone() };
        pre.push(z);
        activations.push(a);
    }
    ForwardCache { activations, pre }
}

fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|e| e / s).collect()
}

/// Mean loss given the raw network outputs. Shared by `loss` and
/// `loss_grad` so both report bit-identical values.
fn loss_from_outputs(head: Head, outputs: &DenseMatrix, targets: &DenseMatrix) -> f64 {
    let n = outputs.rows();
    let mut total = 0.0;
    match head {
        Head::SoftmaxCrossEntropy => {
            for s in 0..n {
                let logits = outputs.row(s);
                let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
                let dot: f64 = logits.iter().zip(targets.row(s)).map(|(z, y)| z * y).sum();
                total += lse - dot;
            }
        }
        Head::LinearMse => {
            for s in 0..n {
                let sq: f64 = outputs
                    .row(s)
                    .iter()
                    .zip(targets.row(s))
                    .map(|(z, t)| (z - t) * (z - t))
                    .sum();
                total += 0.5 * sq;
            }
        }
    }
    total / n as f64
}

/// Mean training loss over the batch.
pub fn loss(spec: &MlpSpec, params: &[f64], batch: &Batch) -> Result<f64, ModelError> {
    check_params(spec, params)?;
    batch.check_compat(spec)?;
    let cache = forward_cache(spec, params, &batch.inputs);
    Ok(loss_from_outputs(
        spec.head,
        cache.activations.last().unwrap(),
        &batch.targets,
    ))
}

/// Per-sample head delta dL/dz_L, unscaled by 1/n.
fn head_delta(head: Head, outputs: &DenseMatrix, targets: &DenseMatrix) -> DenseMatrix {
    let (n, c) = (outputs.rows(), outputs.cols());
    let mut delta = DenseMatrix::zeros(n, c);
    for s in 0..n {
        match head {
            Head::SoftmaxCrossEntropy => {
                let p = softmax_row(outputs.row(s));
                for o in 0..c {
                    delta.set(s, o, p[o] - outputs_target(targets, s, o));
                }
            }
            Head::LinearMse => {
                for o in 0..c {
                    delta.set(s, o, outputs.at(s, o) - targets.at(s, o));
                }
            }
        }
    }
    delta
}

#[inline]
fn outputs_target(targets: &DenseMatrix, s: usize, o: usize) -> f64 {
    targets.at(s, o)
}

/// Mean loss and its exact backpropagation gradient.
pub fn loss_grad(
    spec: &MlpSpec,
    params: &[f64],
    batch: &Batch,
) -> Result<(f64, ParamVector), ModelError> {
    check_params(spec, params)?;
    batch.check_compat(spec)?;
    let n = batch.len() as f64;
    let cache = forward_cache(spec, params, &batch.inputs);
    let loss = loss_from_outputs(spec.head, cache.activations.last().unwrap(), &batch.targets);

    let mut grad = vec![0.0; spec.param_count()];
    let mut delta = head_delta(spec.head, cache.activations.last().unwrap(), &batch.targets);
    for l in (0..spec.num_layers()).rev() {
        let (w_off, b_off, n_in, n_out) = spec.layer_offsets(l);
        let a_prev = &cache.activations[l];
        // dW = delta^T a_prev / n ; db = colsum(delta) / n
        for o in 0..n_out {
            let mut bsum = 0.0;
            for s in 0..delta.rows() {
                let d = delta.at(s, o);
                bsum += d;
                let arow = a_prev.row(s);
                let wrow = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                for i in 0..n_in {
                    wrow[i] += d * arow[i];
                }
            }
            grad[b_off + o] = bsum / n;
        }
        for x in &mut grad[w_off..w_off + n_in * n_out] {
            *x /= n;
        }
        if l > 0 {
            let w = &params[w_off..w_off + n_in * n_out];
            let z_prev = &cache.pre[l - 1];
            let mut next = DenseMatrix::zeros(delta.rows(), n_in);
            for s in 0..delta.rows() {
                for i in 0..n_in {
                    if z_prev.at(s, i) > 0.0 {
                        let mut acc = 0.0;
                        for o in 0..n_out {
                            acc += delta.at(s, o) * w[o * n_in + i];
                        }
                        next.set(s, i, acc);
                    }
                }
            }
            delta = next;
        }
    }
    Ok((loss, grad))
}

/// Fraction of samples whose argmax output matches the one-hot target.
/// Ties break toward the lowest class index.
pub fn accuracy(spec: &MlpSpec, params: &[f64], batch: &Batch) -> Result<f64, ModelError> {
    if spec.head != Head::SoftmaxCrossEntropy {
        return Err(ModelError::WrongHead);
    }
    check_params(spec, params)?;
    batch.check_compat(spec)?;
    let cache = forward_cache(spec, params, &batch.inputs);
    let outputs = cache.activations.last().unwrap();
    let mut correct = 0usize;
    for s in 0..batch.len() {
        let argmax = |row: &[f64]| {
            let mut best = 0;
            for (i, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = i;
                }
            }
            best
        };
        if argmax(outputs.row(s)) == argmax(batch.targets.row(s)) {
            correct += 1;
        }
    }
    Ok(correct as f64 / batch.len() as f64)
}

/// Exact Pearlmutter forward-over-reverse product H v of the mean-loss
/// Hessian with the direction `v`.
pub fn hvp(spec: &MlpSpec, params: &[f64], batch: &Batch, v: &[f64]) -> Result<ParamVector, ModelError> {
    check_params(spec, params)?;
    check_params(spec, v).map_err(|_| {
        ModelError::DimensionMismatch(format!(
            "direction length {} vs param_count {}",
            v.len(),
            spec.param_count()
        ))
    })?;
    batch.check_compat(spec)?;
    let n = batch.len() as f64;
    let num_layers = spec.num_layers();
    let cache = forward_cache(spec, params, &batch.inputs);

    // R-forward pass: Rz_l = a_{l-1} V^T + Ra_{l-1} W^T + vb.
    let mut r_act = DenseMatrix::zeros(batch.len(), spec.input_dim());
    let mut r_pre: Vec<DenseMatrix> = Vec::with_capacity(num_layers);
    let mut r_acts: Vec<DenseMatrix> = Vec::with_capacity(num_layers + 1);
    r_acts.push(r_act.clone());
    for l in 0..num_layers {
        let (w_off, b_off, n_in, n_out) = spec.layer_offsets(l);
        let w = &params[w_off..w_off + n_in * n_out];
        let vw = &v[w_off..w_off + n_in * n_out];
        let vb = &v[b_off..b_off + n_out];
        let a_prev = &cache.activations[l];
        let mut rz = DenseMatrix::zeros(batch.len(), n_out);
        for s in 0..batch.len() {
            let arow = a_prev.row(s);
            let rrow = r_act.row(s).to_vec();
            for o in 0..n_out {
                let vrow = &vw[o * n_in..(o + 1) * n_in];
                let wrow = &w[o * n_in..(o + 1) * n_in];
                let mut acc = vb[o];
                for i in 0..n_in {
                    acc += vrow[i] * arow[i] + wrow[i] * rrow[i];
                }
                rz.set(s, o, acc);
            }
        }
        let ra = if l + 1 < num_layers {
            let z = &cache.pre[l];
            let mut ra = rz.clone();
            for s in 0..ra.rows() {
                for o in 0..ra.cols() {
                    if z.at(s, o) <= 0.0 {
                        ra.set(s, o, 0.0);
                    }
                }
            }
            ra
        } else {
            rz.clone()
        };
        r_pre.push(rz);
        r_act = ra.clone();
        r_acts.push(ra);
    }

    // Head deltas and their directional derivatives.
    let outputs = cache.activations.last().unwrap();
    let rz_out = r_pre.last().unwrap();
    let mut delta = head_delta(spec.head, outputs, &batch.targets);
    let mut r_delta = DenseMatrix::zeros(batch.len(), spec.output_dim());
    match spec.head {
        Head::SoftmaxCrossEntropy => {
            for s in 0..batch.len() {
                let p = softmax_row(outputs.row(s));
                let dot: f64 = p.iter().zip(rz_out.row(s)).map(|(pi, r)| pi * r).sum();
                for o in 0..spec.output_dim() {
                    r_delta.set(s, o, p[o] * (rz_out.at(s, o) - dot));
                }
            }
        }
        Head::LinearMse => {
            r_delta = rz_out.clone();
        }
    }

    // Backward pass carrying (delta, R delta).
    let mut out = vec![0.0; spec.param_count()];
    for l in (0..num_layers).rev() {
        let (w_off, b_off, n_in, n_out) = spec.layer_offsets(l);
        let a_prev = &cache.activations[l];
        let ra_prev = &r_acts[l];
        for o in 0..n_out {
            let mut bsum = 0.0;
            for s in 0..delta.rows() {
                let d = delta.at(s, o);
                let rd = r_delta.at(s, o);
                bsum += rd;
                let arow = a_prev.row(s);
                let rarow = ra_prev.row(s);
                let wrow = &mut out[w_off + o * n_in..w_off + (o + 1) * n_in];
                for i in 0..n_in {
                    wrow[i] += rd * arow[i] + d * rarow[i];
                }
            }
            out[b_off + o] = bsum / n;
        }
        for x in &mut out[w_off..w_off + n_in * n_out] {
            *x /= n;
        }
        if l > 0 {
            let w = &params[w_off..w_off + n_in * n_out];
            let vw = &v[w_off..w_off + n_in * n_out];
            let z_prev = &cache.pre[l - 1];
            let mut next_delta = DenseMatrix::zeros(delta.rows(), n_in);
            let mut next_r_delta = DenseMatrix::zeros(delta.rows(), n_in);
            for s in 0..delta.rows() {
                for i in 0..n_in {
                    if z_prev.at(s, i) > 0.0 {
                        let mut acc = 0.0;
                        let mut racc = 0.0;
                        for o in 0..n_out {
                            acc += delta.at(s, o) * w[o * n_in + i];
                            racc += r_delta.at(s, o) * w[o * n_in + i]
                                + delta.at(s, o) * vw[o * n_in + i];
                        }
                        next_delta.set(s, i, acc);
                        next_r_delta.set(s, i, racc);
                    }
                }
            }
            delta = next_delta;
            r_delta = next_r_delta;
        }
    }
    Ok(out)
}

/// Explicit Hessian with its pre-symmetrization asymmetry defect.
#[derive(Debug, Clone)]
pub struct HessianMatrix {
    pub matrix: DenseMatrix,
    /// max |H_ij - H_ji| of the raw column-assembled matrix.
    pub asymmetry: f64,
}

/// Assembles the full Hessian column by column (one Hvp per basis vector),
/// then symmetrizes. Columns are computed in parallel.
pub fn full_hessian(
    spec: &MlpSpec,
    params: &[f64],
    batch: &Batch,
    budget: usize,
) -> Result<HessianMatrix, ModelError> {
    let p = spec.param_count();
    if p > budget {
        return Err(ModelError::HessianBudgetExceeded {
            param_count: p,
            budget,
        });
    }
    check_params(spec, params)?;
    batch.check_compat(spec)?;

    let columns: Vec<Result<Vec<f64>, ModelError>> = (0..p)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            hvp(spec, params, batch, &e)
        })
        .collect();

    let mut raw = DenseMatrix::zeros(p, p);
    for (j, col) in columns.into_iter().enumerate() {
        let col = col?;
        for (i, x) in col.into_iter().enumerate() {
            raw.set(i, j, x);
        }
    }
    let asymmetry = raw.asymmetry();
    let matrix = symmetrize(&raw)?;
    Ok(HessianMatrix { matrix, asymmetry })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(rows: &[usize], classes: usize) -> DenseMatrix {
        let rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|&c| {
                let mut r = vec![0.0; classes];
                r[c] = 1.0;
                r
            })
            .collect();
        DenseMatrix::from_rows(&rows).unwrap()
    }

    fn central_diff_grad(spec: &MlpSpec, params: &[f64], batch: &Batch, h: f64) -> Vec<f64> {
        (0..params.len())
            .map(|i| {
                let mut up = params.to_vec();
                let mut dn = params.to_vec();
                up[i] += h;
                dn[i] -= h;
                (loss(spec, &up, batch).unwrap() - loss(spec, &dn, batch).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn param_counts_match_known_architectures() {
        let s = MlpSpec::classifier(vec![784, 25, 10]).unwrap();
        assert_eq!(s.param_count(), 19885);
        let s = MlpSpec::classifier(vec![256, 25, 10]).unwrap();
        assert_eq!(s.param_count(), 6685);
        let s = MlpSpec::new(vec![1, 1], Head::LinearMse).unwrap();
        assert_eq!(s.param_count(), 2);
    }

    #[test]
    fn xavier_weights_respect_bound() {
        let spec = MlpSpec::classifier(vec![784, 25, 10]).unwrap();
        let draw = init_params(
            &spec,
            &InitMethod {
                kind: InitKind::XavierUniform,
                seed: 1,
            },
        );
        let (w_off, b_off, n_in, n_out) = spec.layer_offsets(0);
        let limit = 6.0_f64.sqrt() / ((n_in + n_out) as f64).sqrt();
        for &x in &draw.params[w_off..w_off + n_in * n_out] {
            assert!(x.abs() <= limit);
        }
        // biases zero
        for &b in &draw.params[b_off..b_off + n_out] {
            assert_eq!(b, 0.0);
        }
    }

    #[test]
    fn orthogonal_init_has_orthonormal_rows() {
        let spec = MlpSpec::classifier(vec![25, 25, 10]).unwrap();
        let draw = init_params(
            &spec,
            &InitMethod {
                kind: InitKind::Orthogonal,
                seed: 2,
            },
        );
        let (w_off, _, n_in, n_out) = spec.layer_offsets(0);
        let w = &draw.params[w_off..w_off + n_in * n_out];
        for a in 0..n_out {
            for b in 0..n_out {
                let dot: f64 = (0..n_in).map(|i| w[a * n_in + i] * w[b * n_in + i]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-6, "W W^T [{a}][{b}] = {dot}");
            }
        }
    }

    #[test]
    fn orthogonal_init_transposes_when_fanning_out() {
        let spec = MlpSpec::classifier(vec![3, 5, 2]).unwrap();
        let draw = init_params(
            &spec,
            &InitMethod {
                kind: InitKind::Orthogonal,
                seed: 3,
            },
        );
        assert!(!draw.notes.is_empty());
        let (w_off, _, n_in, n_out) = spec.layer_offsets(0);
        let w = &draw.params[w_off..w_off + n_in * n_out];
        // columns orthonormal: W^T W = I (3x3)
        for a in 0..n_in {
            for b in 0..n_in {
                let dot: f64 = (0..n_out).map(|o| w[o * n_in + a] * w[o * n_in + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn init_is_deterministic() {
        let spec = MlpSpec::classifier(vec![10, 6, 3]).unwrap();
        let m = InitMethod {
            kind: InitKind::Normal { std: 0.1 },
            seed: 9,
        };
        assert_eq!(init_params(&spec, &m).params, init_params(&spec, &m).params);
    }

    #[test]
    fn uniform_softmax_loss_is_ln_classes() {
        let spec = MlpSpec::classifier(vec![4, 10]).unwrap();
        // zero params -> all logits equal
        let params = vec![0.0; spec.param_count()];
        let batch = Batch::new(
            DenseMatrix::from_rows(&[vec![0.3, -0.2, 0.5, 1.0]]).unwrap(),
            one_hot(&[3], 10),
        )
        .unwrap();
        let l = loss(&spec, &params, &batch).unwrap();
        assert!((l - 10.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_reconstruction_has_zero_mse() {
        let spec = MlpSpec::new(vec![2, 2], Head::LinearMse).unwrap();
        // identity weights, zero bias
        let params = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let x = DenseMatrix::from_rows(&[vec![0.4, -0.7]]).unwrap();
        let batch = Batch::new(x.clone(), x).unwrap();
        assert_eq!(loss(&spec, &params, &batch).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let spec = MlpSpec::classifier(vec![3, 4, 2]).unwrap();
        let draw = init_params(
            &spec,
            &InitMethod {
                kind: InitKind::Normal { std: 0.5 },
                seed: 7,
            },
        );
        let batch = Batch::new(
            DenseMatrix::from_rows(&[
                vec![0.2, -1.0, 0.4],
                vec![1.3, 0.1, -0.6],
                vec![-0.3, 0.8, 0.9],
            ])
            .unwrap(),
            one_hot(&[0, 1, 0], 2),
        )
        .unwrap();
        let (_, g) = loss_grad(&spec, &draw.params, &batch).unwrap();
        let fd = central_diff_grad(&spec, &draw.params, &batch, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "grad {a} vs fd {b}");
        }
    }

    #[test]
    fn loss_grad_loss_equals_loss_exactly() {
        let spec = MlpSpec::classifier(vec![3, 4, 2]).unwrap();
        let draw = init_params(
            &spec,
            &InitMethod {
                kind: InitKind::XavierUniform,
                seed: 4,
            },
        );
        let batch = Batch::new(
            DenseMatrix::from_rows(&[vec![0.2, -1.0, 0.4]]).unwrap(),
            one_hot(&[1], 2),
        )
        .unwrap();
        let l0 = loss(&spec, &draw.params, &batch).unwrap();
        let (l1, _) = loss_grad(&spec, &draw.params, &batch).unwrap();
        assert_eq!(l0.to_bits(), l1.to_bits());
    }

    #[test]
    fn linear_softmax_gradient_closed_form() {
        // no hidden layer: grad_W = (p - y) x^T
        let spec = MlpSpec::classifier(vec![2, 3]).unwrap();
        let params = vec![0.3, -0.1, 0.0, 0.5, 0.2, -0.4, 0.1, 0.0, -0.2];
        let x = vec![1.5, -2.0];
        let batch = Batch::new(
            DenseMatrix::from_rows(&[x.clone()]).unwrap(),
            one_hot(&[2], 3),
        )
        .unwrap();
        let (w_off, b_off, n_in, n_out) = spec.layer_offsets(0);
        let logits: Vec<f64> = (0..n_out)
            .map(|o| {
                params[b_off + o]
                    + (0..n_in).map(|i| params[w_off + o * n_in + i] * x[i]).sum::<f64>()
            })
            .collect();
        let p = softmax_row(&logits);
        let y = [0.0, 0.0, 1.0];
        let (_, g) = loss_grad(&spec, &params, &batch).unwrap();
        for o in 0..n_out {
            for i in 0..n_in {
                let want = (p[o] - y[o]) * x[i];
                assert!((g[w_off + o * n_in + i] - want).abs() < 1e-12);
            }
            assert!((g[b_off + o] - (p[o] - y[o])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_zeroes_first_layer_weight_grad() {
        let spec = MlpSpec::classifier(vec![3, 4, 2]).unwrap();
        let draw = init_params(
            &spec,
            &InitMethod {
                kind: InitKind::Normal { std: 0.5 },
                seed: 8,
            },
        );
        let batch = Batch::new(
            DenseMatrix::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap(),
            one_hot(&[1], 2),
        )
        .unwrap();
        let (_, g) = loss_grad(&spec, &draw.params, &batch).unwrap();
        let (w_off, _, n_in, n_out) = spec.layer_offsets(0);
        for &x in &g[w_off..w_off + n_in * n_out] {
            assert_eq!(x, 0.0);
        }
    }

    #[test]
    fn accuracy_rules() {
        let spec = MlpSpec::classifier(vec![2, 3]).unwrap();
        // constant-logit network predicts class 0 by the tie rule
        let params = vec![0.0; spec.param_count()];
        let batch = Batch::new(
            DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap(),
            one_hot(&[0, 1, 2], 3),
        )
        .unwrap();
        let acc = accuracy(&spec, &params, &batch).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-12);

        let mse = MlpSpec::new(vec![2, 3], Head::LinearMse).unwrap();
        assert!(matches!(
            accuracy(&mse, &params, &batch),
            Err(ModelError::WrongHead)
        ));
    }

    #[test]
    fn hvp_zero_direction_is_zero() {
        let spec = MlpSpec::classifier(vec![3, 4, 2]).unwrap();
        let draw = init_params(
            &spec,
            &InitMethod {
                kind: InitKind::XavierUniform,
                seed: 5,
            },
        );
        let batch = Batch::new(
            DenseMatrix::from_rows(&[vec![0.2, -1.0, 0.4]]).unwrap(),
            one_hot(&[1], 2),
        )
        .unwrap();
        let v = vec![0.0; spec.param_count()];
        let hv = hvp(&spec, &draw.params, &batch, &v).unwrap();
        assert!(hv.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn one_weight_linear_mse_hessian() {
        // f(w, b) = 1/2 (w x + b - t)^2 with x = 2: H = [[4, 2], [2, 1]]
        let spec = MlpSpec::new(vec![1, 1], Head::LinearMse).unwrap();
        let params = vec![0.7, -0.3];
        let batch = Batch::new(
            DenseMatrix::from_rows(&[vec![2.0]]).unwrap(),
            DenseMatrix::from_rows(&[vec![1.0]]).unwrap(),
        )
        .unwrap();
        let hv = hvp(&spec, &params, &batch, &[1.0, 0.0]).unwrap();
        assert!((hv[0] - 4.0).abs() < 1e-12);
        assert!((hv[1] - 2.0).abs() < 1e-12);
        let h = full_hessian(&spec, &params, &batch, 10).unwrap();
        let want = [[4.0, 2.0], [2.0, 1.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((h.matrix.at(i, j) - want[i][j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn hvp_matches_gradient_finite_differences() {
        let spec = MlpSpec::classifier(vec![3, 5, 2]).unwrap();
        let draw = init_params(
            &spec,
            &InitMethod {
                kind: InitKind::Normal { std: 0.6 },
                seed: 11,
            },
        );
        let batch = Batch::new(
            DenseMatrix::from_rows(&[
                vec![0.2, -1.0, 0.4],
                vec![0.9, 0.3, -0.5],
            ])
            .unwrap(),
            one_hot(&[0, 1], 2),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let v: Vec<f64> = (0..spec.param_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let hv = hvp(&spec, &draw.params, &batch, &v).unwrap();
        let h = 1e-5;
        let up: Vec<f64> = draw.params.iter().zip(&v).map(|(p, vi)| p + h * vi).collect();
        let dn: Vec<f64> = draw.params.iter().zip(&v).map(|(p, vi)| p - h * vi).collect();
        let (_, gu) = loss_grad(&spec, &up, &batch).unwrap();
        let (_, gd) = loss_grad(&spec, &dn, &batch).unwrap();
        for ((a, u), d) in hv.iter().zip(&gu).zip(&gd) {
            let fd = (u - d) / (2.0 * h);
            assert!((a - fd).abs() <= 1e-4 * fd.abs().max(1.0), "hvp {a} vs fd {fd}");
        }
    }

    #[test]
    fn hvp_is_linear_and_symmetric() {
        let spec = MlpSpec::classifier(vec![2, 4, 3]).unwrap();
        let draw = init_params(
            &spec,
            &InitMethod {
                kind: InitKind::Normal { std: 0.8 },
                seed: 13,
            },
        );
        let batch = Batch::new(
            DenseMatrix::from_rows(&[vec![1.0, -0.5], vec![-0.2, 0.7]]).unwrap(),
            one_hot(&[2, 0], 3),
        )
        .unwrap();
        let p = spec.param_count();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let u: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (alpha, beta) = (0.7, -1.3);
        let combo: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
        let h_combo = hvp(&spec, &draw.params, &batch, &combo).unwrap();
        let hu = hvp(&spec, &draw.params, &batch, &u).unwrap();
        let hv = hvp(&spec, &draw.params, &batch, &v).unwrap();
        let scale = h_combo.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1.0);
        for ((c, a), b) in h_combo.iter().zip(&hu).zip(&hv) {
            assert!((c - (alpha * a + beta * b)).abs() <= 1e-8 * scale);
        }
        // v' H u = u' H v
        let vthu: f64 = v.iter().zip(&hu).map(|(a, b)| a * b).sum();
        let uthv: f64 = u.iter().zip(&hv).map(|(a, b)| a * b).sum();
        assert!((vthu - uthv).abs() <= 1e-7 * vthu.abs().max(1.0));
    }

    #[test]
    fn full_hessian_asymmetry_defect_small_on_midsize_net() {
        let spec = MlpSpec::classifier(vec![3, 5, 2]).unwrap();
        assert_eq!(spec.param_count(), 32);
        let draw = init_params(
            &spec,
            &InitMethod {
                kind: InitKind::Normal { std: 0.7 },
                seed: 15,
            },
        );
        let batch = Batch::new(
            DenseMatrix::from_rows(&[
                vec![0.4, -0.8, 1.1],
                vec![-1.0, 0.2, 0.3],
                vec![0.6, 0.5, -0.9],
            ])
            .unwrap(),
            one_hot(&[0, 1, 0], 2),
        )
        .unwrap();
        let h = full_hessian(&spec, &draw.params, &batch, 100).unwrap();
        assert!(h.asymmetry <= 1e-6 * h.matrix.max_abs().max(1.0));
        assert_eq!(h.matrix.rows(), 32);
    }

    #[test]
    fn full_hessian_enforces_budget() {
        let spec = MlpSpec::classifier(vec![784, 25, 10]).unwrap();
        let params = vec![0.0; spec.param_count()];
        let batch = Batch::new(
            DenseMatrix::from_rows(&[vec![0.0; 784]]).unwrap(),
            one_hot(&[0], 10),
        )
        .unwrap();
        match full_hessian(&spec, &params, &batch, 5000) {
            Err(ModelError::HessianBudgetExceeded { param_count, budget }) => {
                assert_eq!(param_count, 19885);
                assert_eq!(budget, 5000);
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }
}
