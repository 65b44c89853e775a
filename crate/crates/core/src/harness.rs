//! Config-driven experiment runner and CLI: trains seeded trials, probes
//! Hessian spectra, aggregates mean/std tables, and writes JSON/CSV reports.

use crate::data::{self, DataError, LabeledDataset};
use crate::linalg::{self, DenseMatrix, LinalgError};
use crate::model::{self, Batch, Head, InitKind, InitMethod, MlpSpec, ModelError};
use crate::optim::{self, ModelObjective, OptimError, OptimizerConfig, StopRule};
use crate::spectral::{
    self, classify_critical_point, classify_spectrum, CriticalPointVerdict, EpsilonAlphaRecord,
    SemicircleFit, SpectralError, SpectrumReport,
};
use crate::toyscape::PlateauFunction;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Root directory prepended to relative dataset paths when set.
pub const DATA_ROOT_ENV: &str = "SADDLESCAN_DATA";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("selftest: {0}")]
    Selftest(String),
}

impl HarnessError {
    /// 1 for configuration/input problems, 2 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Io { .. } | Self::Data(_) => 1,
            Self::Optim(OptimError::BadConfig(_)) => 1,
            Self::Model(ModelError::HessianBudgetExceeded { .. }) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Config

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetConfig {
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        seed: u64,
        test_per_class: usize,
    },
    MnistIdx {
        train_images: String,
        train_labels: String,
        test_images: String,
        test_labels: String,
    },
    FeatureCsv {
        train: String,
        test: String,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Training subsample size before PCA; None keeps everything.
    pub subsample: Option<usize>,
    pub stratified: bool,
    /// PCA dimension fitted on the training set; None skips reduction.
    pub pca: Option<usize>,
    /// Hidden layer widths; input/output sizes come from the data.
    pub hidden: Vec<usize>,
    pub head: Head,
    pub init: InitKind,
    pub optimizer: OptimizerConfig,
    pub stop: StopRule,
    /// None trains full-batch; Some(b) shuffles into mini-batches.
    pub batch_size: Option<usize>,
    pub trials: usize,
    pub zero_tol: f64,
    pub grad_tol: f64,
    /// Epochs between Hessian probes; 0 probes only at convergence.
    pub probe_every: usize,
    pub seed: u64,
    pub hessian_budget: usize,
    pub probe_budget: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::Blobs {
                classes: 10,
                per_class: 200,
                dim: 20,
                spread: 0.15,
                seed: 0,
                test_per_class: 50,
            },
            subsample: None,
            stratified: true,
            pca: None,
            hidden: vec![16],
            head: Head::SoftmaxCrossEntropy,
            init: InitKind::XavierUniform,
            optimizer: OptimizerConfig::nesterov_default(),
            stop: StopRule::default(),
            batch_size: None,
            trials: 8,
            zero_tol: spectral::DEFAULT_ZERO_TOL,
            grad_tol: spectral::DEFAULT_GRAD_TOL,
            probe_every: 0,
            seed: 1,
            hessian_budget: model::DEFAULT_HESSIAN_BUDGET,
            probe_budget: 5000,
        }
    }
}

/// Line-oriented `key = value` store with consumption tracking so leftover
/// (misspelled) keys can be rejected.
struct KvConfig {
    map: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl KvConfig {
    fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(HarnessError::Config(format!("line {}: empty key", lineno + 1)));
            }
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(HarnessError::Config(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
        }
        Ok(Self {
            map,
            used: BTreeSet::new(),
        })
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        let v = self.map.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, HarnessError> {
        match self.raw(key) {
            None => Ok(None),
            Some(s) => s.parse::<T>().map(Some).map_err(|_| {
                HarnessError::Config(format!("key `{key}`: cannot parse `{s}`"))
            }),
        }
    }

    fn get_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, HarnessError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn require(&mut self, key: &str) -> Result<String, HarnessError> {
        self.raw(key)
            .ok_or_else(|| HarnessError::Config(format!("missing required key `{key}`")))
    }

    fn reject_unknown(&self) -> Result<(), HarnessError> {
        let unknown: Vec<&String> = self.map.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Config(format!(
                "unknown keys: {}",
                unknown
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )))
        }
    }
}

fn parse_init_kind(name: &str, std: f64, limit: f64) -> Result<InitKind, HarnessError> {
    Ok(match name {
        "xavier_uniform" => InitKind::XavierUniform,
        "he_table7" => InitKind::HeTable7,
        "orthogonal" => InitKind::Orthogonal,
        "normal" => InitKind::Normal { std },
        "uniform" => InitKind::Uniform { limit },
        other => {
            return Err(HarnessError::Config(format!(
                "init.kind `{other}` not one of xavier_uniform, he_table7, orthogonal, normal, uniform"
            )))
        }
    })
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>, HarnessError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| HarnessError::Config(format!("cannot parse `{p}` as a size")))
        })
        .collect()
}

/// Parses the line-oriented config format. Unknown keys are errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let mut kv = KvConfig::parse(text)?;
    let defaults = ExperimentConfig::default();

    let dataset = match kv.require("dataset.kind")?.as_str() {
        "blobs" => DatasetConfig::Blobs {
            classes: kv.get_or("dataset.classes", 10)?,
            per_class: kv.get_or("dataset.per_class", 200)?,
            dim: kv.get_or("dataset.dim", 20)?,
            spread: kv.get_or("dataset.spread", 0.15)?,
            seed: kv.get_or("dataset.seed", 0)?,
            test_per_class: kv.get_or("dataset.test_per_class", 50)?,
        },
        "mnist_idx" => DatasetConfig::MnistIdx {
            train_images: kv.require("dataset.train_images")?,
            train_labels: kv.require("dataset.train_labels")?,
            test_images: kv.require("dataset.test_images")?,
            test_labels: kv.require("dataset.test_labels")?,
        },
        "feature_csv" => DatasetConfig::FeatureCsv {
            train: kv.require("dataset.train")?,
            test: kv.require("dataset.test")?,
        },
        other => {
            return Err(HarnessError::Config(format!(
                "dataset.kind `{other}` not one of blobs, mnist_idx, feature_csv"
            )))
        }
    };

    let subsample = kv.get::<usize>("dataset.subsample")?;
    let stratified = kv.get_or("dataset.stratified", true)?;
    let pca = kv.get::<usize>("dataset.pca")?;

    let hidden = match kv.raw("model.hidden") {
        Some(s) => parse_usize_list(&s)?,
        None => defaults.hidden.clone(),
    };
    let head = match kv.raw("model.head").as_deref() {
        None | Some("softmax_crossentropy") => Head::SoftmaxCrossEntropy,
        Some("linear_mse") => Head::LinearMse,
        Some(other) => {
            return Err(HarnessError::Config(format!(
                "model.head `{other}` not one of softmax_crossentropy, linear_mse"
            )))
        }
    };

    let init_std = kv.get_or("init.std", 0.1)?;
    let init_limit = kv.get_or("init.limit", 0.1)?;
    let init = match kv.raw("init.kind") {
        Some(name) => parse_init_kind(&name, init_std, init_limit)?,
        None => defaults.init,
    };

    let kind = kv
        .raw("optimizer.kind")
        .unwrap_or_else(|| "nesterov_momentum".into());
    let base = match kind.as_str() {
        "nesterov_momentum" => OptimizerConfig::nesterov_default(),
        "adam" => OptimizerConfig::adam_default(),
        "adagrad" => OptimizerConfig::adagrad_default(),
        "noisy_sgd" => OptimizerConfig::noisy_sgd_default(),
        "perturbed_gd" => OptimizerConfig::perturbed_gd_default(),
        "saddle_free_newton" => OptimizerConfig::saddle_free_newton_default(),
        other => {
            return Err(HarnessError::Config(format!(
                "optimizer.kind `{other}` unknown"
            )))
        }
    };
    let lr = kv.get_or("optimizer.learning_rate", base.learning_rate())?;
    let mut optimizer = base.with_learning_rate(lr);
    match &mut optimizer {
        OptimizerConfig::NesterovMomentum { momentum, .. } => {
            *momentum = kv.get_or("optimizer.momentum", *momentum)?;
        }
        OptimizerConfig::Adam {
            beta1,
            beta2,
            epsilon,
            ..
        } => {
            *beta1 = kv.get_or("optimizer.beta1", *beta1)?;
            *beta2 = kv.get_or("optimizer.beta2", *beta2)?;
            *epsilon = kv.get_or("optimizer.epsilon", *epsilon)?;
        }
        OptimizerConfig::Adagrad { epsilon, .. } => {
            *epsilon = kv.get_or("optimizer.epsilon", *epsilon)?;
        }
        OptimizerConfig::NoisySgd { noise_radius, .. } => {
            *noise_radius = kv.get_or("optimizer.noise_radius", *noise_radius)?;
        }
        OptimizerConfig::PerturbedGd {
            noise_radius,
            grad_threshold,
            cooldown,
            ..
        } => {
            *noise_radius = kv.get_or("optimizer.noise_radius", *noise_radius)?;
            *grad_threshold = kv.get_or("optimizer.grad_threshold", *grad_threshold)?;
            *cooldown = kv.get_or("optimizer.cooldown", *cooldown)?;
        }
        OptimizerConfig::SaddleFreeNewton {
            krylov_k, damping, ..
        } => {
            *krylov_k = kv.get_or("optimizer.krylov_k", *krylov_k)?;
            *damping = kv.get_or("optimizer.damping", *damping)?;
        }
    }
    let batch_size = match kv.get_or("optimizer.batch_size", 0usize)? {
        0 => None,
        b => Some(b),
    };

    let stop = StopRule {
        loss_delta_threshold: kv.get_or("stop.loss_delta", defaults.stop.loss_delta_threshold)?,
        max_epochs: kv.get_or("stop.max_epochs", defaults.stop.max_epochs)?,
    };

    let config = ExperimentConfig {
        dataset,
        subsample,
        stratified,
        pca,
        hidden,
        head,
        init,
        optimizer,
        stop,
        batch_size,
        trials: kv.get_or("trials", defaults.trials)?,
        zero_tol: kv.get_or("zero_tol", defaults.zero_tol)?,
        grad_tol: kv.get_or("grad_tol", defaults.grad_tol)?,
        probe_every: kv.get_or("probe_every", defaults.probe_every)?,
        seed: kv.get_or("seed", defaults.seed)?,
        hessian_budget: kv.get_or("hessian_budget", defaults.hessian_budget)?,
        probe_budget: kv.get_or("probe_budget", defaults.probe_budget)?,
    };
    kv.reject_unknown()?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_config(&text)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials < 1 {
            return Err(HarnessError::Config("trials must be >= 1".into()));
        }
        if !(self.zero_tol > 0.0) {
            return Err(HarnessError::Config(format!(
                "zero_tol must be > 0, got {}",
                self.zero_tol
            )));
        }
        if !(self.grad_tol > 0.0) {
            return Err(HarnessError::Config(format!(
                "grad_tol must be > 0, got {}",
                self.grad_tol
            )));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(HarnessError::Config("hidden widths must be >= 1".into()));
        }
        self.optimizer.validate()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Dataset loading

fn resolve(path: &str) -> PathBuf {
    let p = PathBuf::from(path);
    if p.is_absolute() {
        return p;
    }
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(p),
        None => p,
    }
}

fn split_blobs(
    ds: &LabeledDataset,
    per_class: usize,
    total_per_class: usize,
) -> Result<(LabeledDataset, LabeledDataset), HarnessError> {
    let mut train_rows = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_rows = Vec::new();
    let mut test_labels = Vec::new();
    for c in 0..ds.classes {
        for k in 0..total_per_class {
            let i = c * total_per_class + k;
            let row = ds.inputs.row(i).to_vec();
            if k < per_class {
                train_rows.push(row);
                train_labels.push(ds.labels[i]);
            } else {
                test_rows.push(row);
                test_labels.push(ds.labels[i]);
            }
        }
    }
    let train = LabeledDataset::new(
        DenseMatrix::from_rows(&train_rows)?,
        train_labels,
        ds.classes,
        format!("{}+train", ds.provenance),
    )?;
    let test = LabeledDataset::new(
        DenseMatrix::from_rows(&test_rows)?,
        test_labels,
        ds.classes,
        format!("{}+test", ds.provenance),
    )?;
    Ok((train, test))
}

/// Loads the configured source and applies subsample and PCA reduction.
/// PCA is fitted on the (subsampled) training inputs and applied to both
/// splits.
pub fn load_dataset(
    config: &ExperimentConfig,
) -> Result<(LabeledDataset, LabeledDataset), HarnessError> {
    let (mut train, mut test) = match &config.dataset {
        DatasetConfig::Blobs {
            classes,
            per_class,
            dim,
            spread,
            seed,
            test_per_class,
        } => {
            let total = per_class + test_per_class;
            let all = data::synthetic_blobs(*classes, total, *dim, *spread, *seed)?;
            split_blobs(&all, *per_class, total)?
        }
        DatasetConfig::MnistIdx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => (
            data::load_mnist_idx(resolve(train_images), resolve(train_labels))?,
            data::load_mnist_idx(resolve(test_images), resolve(test_labels))?,
        ),
        DatasetConfig::FeatureCsv { train, test } => (
            data::load_feature_csv(resolve(train))?,
            data::load_feature_csv(resolve(test))?,
        ),
    };
    if let Some(n) = config.subsample {
        train = data::subsample(&train, n, config.seed, config.stratified)?;
    }
    if let Some(k) = config.pca {
        let fitted = linalg::pca_fit(&train.inputs, k)?;
        train = data::pca_reduce(&train, &fitted)?;
        test = data::pca_reduce(&test, &fitted)?;
    }
    Ok((train, test))
}

fn model_spec(config: &ExperimentConfig, train: &LabeledDataset) -> Result<MlpSpec, HarnessError> {
    let mut layers = Vec::with_capacity(config.hidden.len() + 2);
    layers.push(train.dim());
    layers.extend_from_slice(&config.hidden);
    layers.push(train.classes);
    Ok(MlpSpec::new(layers, config.head)?)
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Unbiased (n-1) estimator; 0 by convention for a single trial.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    assert!(n >= 1, "mean_std needs at least one value");
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProbeRow {
    pub epoch: usize,
    pub loss: f64,
    pub n_zero: usize,
    pub n_negative: usize,
    pub alpha_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialResult {
    pub seed: u64,
    pub converged: bool,
    pub diverged: bool,
    pub epochs: usize,
    pub final_loss: f64,
    pub grad_norm: f64,
    /// Argmax accuracy on the test split; None for regression heads.
    pub test_accuracy: Option<f64>,
    /// Raw asymmetry defect of the column-assembled Hessian.
    pub hessian_asymmetry: f64,
    pub spectrum: SpectrumReport,
    pub verdict: CriticalPointVerdict,
    pub semicircle: Option<SemicircleFit>,
    pub epsilon_alpha: Vec<EpsilonAlphaRecord>,
    pub trajectory: Vec<ProbeRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub n_positive: MeanStd,
    pub n_negative: MeanStd,
    pub n_zero: MeanStd,
    pub accuracy: Option<MeanStd>,
    pub final_loss: MeanStd,
    /// Set when trials = 1: the zero stds are conventional, not estimated.
    pub single_trial: bool,
    pub verdicts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateReport {
    pub version: &'static str,
    pub param_count: usize,
    pub config: ExperimentConfig,
    pub trials: Vec<TrialResult>,
    pub aggregate: Aggregate,
}

impl AggregateReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }
}

// ---------------------------------------------------------------------------
// Experiment runner

fn grad_norm_at(spec: &MlpSpec, params: &[f64], batch: &Batch) -> Result<f64, HarnessError> {
    let (_, g) = model::loss_grad(spec, params, batch)?;
    Ok(g.iter().map(|x| x * x).sum::<f64>().sqrt())
}

fn probe_spectrum(
    spec: &MlpSpec,
    params: &[f64],
    batch: &Batch,
    zero_tol: f64,
    budget: usize,
) -> Result<(SpectrumReport, f64), HarnessError> {
    let hess = model::full_hessian(spec, params, batch, budget)?;
    let (eigs, _) = linalg::symmetric_eigs(&hess.matrix, false)?;
    Ok((classify_spectrum(&eigs, zero_tol)?, hess.asymmetry))
}

fn run_trial(
    config: &ExperimentConfig,
    spec: &MlpSpec,
    train_batch: &Batch,
    test_batch: &Batch,
    trial: usize,
) -> Result<TrialResult, HarnessError> {
    let seed = config.seed + trial as u64;
    let draw = model::init_params(spec, &InitMethod {
        kind: config.init,
        seed,
    });
    let objective = ModelObjective::new(spec, train_batch)?;

    let mut probes: Vec<(usize, f64, SpectrumReport)> = Vec::new();
    let mut probe_error: Option<HarnessError> = None;
    let outcome = {
        let mut hook = |epoch: usize, params: &[f64], loss: f64| {
            if config.probe_every == 0 || epoch % config.probe_every != 0 || probe_error.is_some() {
                return;
            }
            match probe_spectrum(spec, params, train_batch, config.zero_tol, config.probe_budget)
            {
                Ok((report, _)) => probes.push((epoch, loss, report)),
                Err(e) => probe_error = Some(e),
            }
        };
        optim::train(
            &objective,
            draw.params,
            &config.optimizer,
            &config.stop,
            seed,
            config.batch_size,
            Some(&mut hook),
        )?
    };
    if let Some(e) = probe_error {
        return Err(e);
    }

    let final_loss = *outcome.epoch_losses.last().unwrap_or(&f64::NAN);
    let grad_norm = grad_norm_at(spec, &outcome.params, train_batch)?;
    let (spectrum, asymmetry) = probe_spectrum(
        spec,
        &outcome.params,
        train_batch,
        config.zero_tol,
        config.hessian_budget,
    )?;
    let verdict = classify_critical_point(grad_norm, &spectrum, config.grad_tol);
    let semicircle = if spectrum.dim >= 10 {
        Some(spectral::semicircle_ks(&spectrum.eigenvalues)?)
    } else {
        None
    };
    let test_accuracy = match spec.head {
        Head::SoftmaxCrossEntropy => Some(model::accuracy(spec, &outcome.params, test_batch)?),
        Head::LinearMse => None,
    };

    let final_epoch = outcome.epochs.saturating_sub(1);
    if probes.last().map(|p| p.0) != Some(final_epoch) {
        probes.push((final_epoch, final_loss, spectrum.clone()));
    }
    let epsilon_alpha: Vec<EpsilonAlphaRecord> = probes
        .iter()
        .map(|(epoch, loss, report)| spectral::epsilon_alpha(*epoch, *loss, report))
        .collect();
    let trajectory: Vec<ProbeRow> = probes
        .iter()
        .map(|(epoch, loss, report)| ProbeRow {
            epoch: *epoch,
            loss: *loss,
            n_zero: report.n_zero,
            n_negative: report.n_negative,
            alpha_fraction: report.n_negative as f64 / report.dim as f64,
        })
        .collect();

    Ok(TrialResult {
        seed,
        converged: outcome.converged,
        diverged: outcome.diverged,
        epochs: outcome.epochs,
        final_loss,
        grad_norm,
        test_accuracy,
        hessian_asymmetry: asymmetry,
        spectrum,
        verdict,
        semicircle,
        epsilon_alpha,
        trajectory,
    })
}

/// Runs `trials` seeded trials of the configured experiment: train to the
/// stop rule, take the full training-set Hessian at the final parameters,
/// classify, and score test accuracy. Deterministic given the config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<AggregateReport, HarnessError> {
    config.validate()?;
    let (train, test) = load_dataset(config)?;
    let spec = model_spec(config, &train)?;
    let p = spec.param_count();
    if p > config.hessian_budget {
        return Err(HarnessError::Config(format!(
            "param_count {p} exceeds hessian_budget {}",
            config.hessian_budget
        )));
    }
    if config.probe_every > 0 && p > config.probe_budget {
        return Err(HarnessError::Config(format!(
            "param_count {p} exceeds probe_budget {} at probe_every {}",
            config.probe_budget, config.probe_every
        )));
    }
    let train_batch = train.to_batch();
    let test_batch = test.to_batch();

    let mut trials = Vec::with_capacity(config.trials);
    for t in 0..config.trials {
        trials.push(run_trial(config, &spec, &train_batch, &test_batch, t)?);
    }

    let collect = |f: &dyn Fn(&TrialResult) -> f64| -> Vec<f64> { trials.iter().map(f).collect() };
    let mut verdicts = BTreeMap::new();
    for t in &trials {
        *verdicts.entry(t.verdict.class.name().to_string()).or_insert(0) += 1;
    }
    let aggregate = Aggregate {
        n_positive: mean_std(&collect(&|t| t.spectrum.n_positive as f64)),
        n_negative: mean_std(&collect(&|t| t.spectrum.n_negative as f64)),
        n_zero: mean_std(&collect(&|t| t.spectrum.n_zero as f64)),
        accuracy: {
            let acc: Vec<f64> = trials.iter().filter_map(|t| t.test_accuracy).collect();
            if acc.len() == trials.len() {
                Some(mean_std(&acc))
            } else {
                None
            }
        },
        final_loss: mean_std(&collect(&|t| t.final_loss)),
        single_trial: config.trials == 1,
        verdicts,
    };
    Ok(AggregateReport {
        version: crate::VERSION,
        param_count: p,
        config: config.clone(),
        trials,
        aggregate,
    })
}

/// CSV of every trial's probe rows: Hessian degeneracy and loss over training.
pub fn trajectory_csv(report: &AggregateReport) -> String {
    let mut out = String::from("trial,seed,epoch,loss,n_zero,n_negative,alpha_fraction\n");
    for (i, t) in report.trials.iter().enumerate() {
        for row in &t.trajectory {
            let _ = writeln!(
                out,
                "{},{},{},{:?},{},{},{:?}",
                i, t.seed, row.epoch, row.loss, row.n_zero, row.n_negative, row.alpha_fraction
            );
        }
    }
    out
}

/// Probing run: requires probe_every >= 1 so the trajectory has more than
/// the final row.
pub fn degeneracy_trajectory(
    config: &ExperimentConfig,
) -> Result<(AggregateReport, String), HarnessError> {
    let report = run_experiment(config)?;
    let csv = trajectory_csv(&report);
    Ok((report, csv))
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[clap(rename_all = "snake_case")]
pub enum SweepAxis {
    InitMethod,
    Depth,
    Width,
    Optimizer,
}

fn instantiate(
    template: &ExperimentConfig,
    axis: SweepAxis,
    value: &str,
) -> Result<ExperimentConfig, HarnessError> {
    let mut config = template.clone();
    match axis {
        SweepAxis::InitMethod => {
            let (name, param) = match value.split_once(':') {
                Some((n, p)) => (n, Some(p)),
                None => (value, None),
            };
            let param: Option<f64> = match param {
                None => None,
                Some(p) => Some(p.parse().map_err(|_| {
                    HarnessError::Config(format!("init value `{value}`: bad parameter"))
                })?),
            };
            config.init = parse_init_kind(name, param.unwrap_or(0.1), param.unwrap_or(0.1))?;
        }
        SweepAxis::Depth => {
            let depth: usize = value.parse().map_err(|_| {
                HarnessError::Config(format!("depth value `{value}` is not a count"))
            })?;
            if depth == 0 {
                return Err(HarnessError::Config("depth must be >= 1".into()));
            }
            let width = *template.hidden.first().unwrap_or(&16);
            config.hidden = vec![width; depth];
        }
        SweepAxis::Width => {
            let width: usize = value.parse().map_err(|_| {
                HarnessError::Config(format!("width value `{value}` is not a count"))
            })?;
            if width == 0 {
                return Err(HarnessError::Config("width must be >= 1".into()));
            }
            config.hidden = vec![width; template.hidden.len().max(1)];
        }
        SweepAxis::Optimizer => {
            let (name, lr) = match value.split_once(':') {
                Some((n, p)) => (
                    n,
                    Some(p.parse::<f64>().map_err(|_| {
                        HarnessError::Config(format!("optimizer value `{value}`: bad learning rate"))
                    })?),
                ),
                None => (value, None),
            };
            let base = match name {
                "nesterov_momentum" => OptimizerConfig::nesterov_default(),
                "adam" => OptimizerConfig::adam_default(),
                "adagrad" => OptimizerConfig::adagrad_default(),
                "noisy_sgd" => OptimizerConfig::noisy_sgd_default(),
                "perturbed_gd" => OptimizerConfig::perturbed_gd_default(),
                "saddle_free_newton" => OptimizerConfig::saddle_free_newton_default(),
                other => {
                    return Err(HarnessError::Config(format!("optimizer `{other}` unknown")))
                }
            };
            config.optimizer = match lr {
                Some(lr) => base.with_learning_rate(lr),
                None => base,
            };
        }
    }
    Ok(config)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub param_count: usize,
    pub report: AggregateReport,
}

/// One aggregate per axis value. Every instantiation is feasibility-checked
/// before any training starts.
pub fn sweep(
    template: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
) -> Result<Vec<SweepRow>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one value".into()));
    }
    let mut configs = Vec::with_capacity(values.len());
    for value in values {
        let config = instantiate(template, axis, value)?;
        config.validate()?;
        let (train, _) = load_dataset(&config)?;
        let spec = model_spec(&config, &train)?;
        if spec.param_count() > config.hessian_budget {
            return Err(HarnessError::Config(format!(
                "sweep value `{value}`: param_count {} exceeds hessian_budget {}",
                spec.param_count(),
                config.hessian_budget
            )));
        }
        configs.push((value.clone(), config));
    }
    let mut rows = Vec::with_capacity(configs.len());
    for (value, config) in configs {
        let report = run_experiment(&config)?;
        rows.push(SweepRow {
            value,
            param_count: report.param_count,
            report,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let axis_name = match axis {
        SweepAxis::InitMethod => "init_method",
        SweepAxis::Depth => "depth",
        SweepAxis::Width => "width",
        SweepAxis::Optimizer => "optimizer",
    };
    let mut out = format!(
        "{axis_name},dim,n_positive_mean,n_positive_std,n_negative_mean,n_negative_std,\
         n_zero_mean,n_zero_std,zero_fraction,accuracy_mean,accuracy_std,degenerate_trials,trials\n"
    );
    for row in rows {
        let a = &row.report.aggregate;
        let degenerate = a
            .verdicts
            .iter()
            .filter(|(k, _)| k.starts_with("degenerate"))
            .map(|(_, v)| v)
            .sum::<usize>();
        let (acc_mean, acc_std) = match a.accuracy {
            Some(ms) => (format!("{:?}", ms.mean), format!("{:?}", ms.std)),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{},{}",
            row.value,
            row.param_count,
            a.n_positive.mean,
            a.n_positive.std,
            a.n_negative.mean,
            a.n_negative.std,
            a.n_zero.mean,
            a.n_zero.std,
            a.n_zero.mean / row.param_count as f64,
            acc_mean,
            acc_std,
            degenerate,
            row.report.trials.len()
        );
    }
    out
}

// ---------------------------------------------------------------------------
// Selftest oracles

/// Cyclic Jacobi rotations: an independent route to the eigenvalues of a
/// small symmetric matrix, used only to cross-check the main eigensolver.
fn jacobi_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-18 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}

fn random_symmetric(n: usize, seed: u64) -> DenseMatrix {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.gen_range(-1.0..1.0);
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    m
}

struct SelftestCase {
    spec: MlpSpec,
    params: Vec<f64>,
    batch: Batch,
}

fn selftest_case(head: Head, seed: u64) -> SelftestCase {
    let layers = vec![5, 4, 3];
    let spec = MlpSpec::new(layers, head).unwrap();
    let draw = model::init_params(
        &spec,
        &InitMethod {
            kind: InitKind::Normal { std: 0.4 },
            seed,
        },
    );
    let ds = data::synthetic_blobs(3, 4, 5, 0.3, seed).unwrap();
    SelftestCase {
        spec,
        params: draw.params,
        batch: ds.to_batch(),
    }
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1e-12_f64, |m, x| m.max(x.abs()));
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

/// Finite-difference and cross-implementation oracle suite. Prints one line
/// per check; fails with the first violated tolerance.
pub fn selftest(out: &mut dyn std::io::Write) -> Result<(), HarnessError> {
    let mut check = |name: &str, pass: bool, detail: String| -> Result<(), HarnessError> {
        writeln!(out, "{} {name}: {detail}", if pass { "ok" } else { "FAIL" })
            .map_err(|e| io_err(Path::new("<stdout>"), e))?;
        if pass {
            Ok(())
        } else {
            Err(HarnessError::Selftest(format!("{name}: {detail}")))
        }
    };

    for (label, head) in [
        ("softmax", Head::SoftmaxCrossEntropy),
        ("mse", Head::LinearMse),
    ] {
        let case = selftest_case(head, 42);
        let dim = case.spec.param_count();
        let (_, grad) = model::loss_grad(&case.spec, &case.params, &case.batch)?;

        let h = 1e-6;
        let fd_grad: Vec<f64> = (0..dim)
            .map(|i| {
                let mut up = case.params.clone();
                let mut dn = case.params.clone();
                up[i] += h;
                dn[i] -= h;
                let lu = model::loss(&case.spec, &up, &case.batch).unwrap();
                let ld = model::loss(&case.spec, &dn, &case.batch).unwrap();
                (lu - ld) / (2.0 * h)
            })
            .collect();
        let rel = max_rel(&grad, &fd_grad);
        check(
            &format!("gradient_fd_{label}"),
            rel <= 1e-5,
            format!("max rel err {rel:.3e} (tol 1e-5)"),
        )?;

        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hv = model::hvp(&case.spec, &case.params, &case.batch, &v)?;
        let fd_hv: Vec<f64> = {
            let eps = 1e-5;
            let plus: Vec<f64> = case
                .params
                .iter()
                .zip(&v)
                .map(|(p, vi)| p + eps * vi)
                .collect();
            let minus: Vec<f64> = case
                .params
                .iter()
                .zip(&v)
                .map(|(p, vi)| p - eps * vi)
                .collect();
            let (_, gp) = model::loss_grad(&case.spec, &plus, &case.batch)?;
            let (_, gm) = model::loss_grad(&case.spec, &minus, &case.batch)?;
            gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps)).collect()
        };
        let rel = max_rel(&hv, &fd_hv);
        check(
            &format!("hvp_fd_{label}"),
            rel <= 1e-4,
            format!("max rel err {rel:.3e} (tol 1e-4)"),
        )?;

        let hess = model::full_hessian(&case.spec, &case.params, &case.batch, 25_000)?;
        let bound = 1e-6 * hess.matrix.max_abs().max(1e-12);
        check(
            &format!("hessian_symmetry_{label}"),
            hess.asymmetry <= bound,
            format!("asymmetry {:.3e} (bound {bound:.3e})", hess.asymmetry),
        )?;
    }

    let mut worst = 0.0_f64;
    for n in 2..=12 {
        let m = random_symmetric(n, 100 + n as u64);
        let (eigs, _) = linalg::symmetric_eigs(&m, false)?;
        let oracle = jacobi_eigenvalues(&m);
        for (a, b) in eigs.eigenvalues().iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    check(
        "eigensolver_vs_jacobi",
        worst <= 1e-6,
        format!("max abs err {worst:.3e} over dims 2..=12 (tol 1e-6)"),
    )?;

    let n = 24;
    let m = random_symmetric(n, 9);
    let (dense, _) = linalg::symmetric_eigs(&m, false)?;
    let pair = linalg::lanczos(|v| m.matvec(v), n, n, 11)?;
    let ritz = pair.ritz_values()?;
    let mut worst = 0.0_f64;
    for (a, b) in ritz.eigenvalues().iter().zip(dense.eigenvalues()) {
        worst = worst.max((a - b).abs());
    }
    check(
        "lanczos_full_vs_dense",
        worst <= 1e-6,
        format!("max abs err {worst:.3e} at k = dim = {n} (tol 1e-6)"),
    )?;

    let goe = random_symmetric(200, 5);
    let (eigs, _) = linalg::symmetric_eigs(&goe, false)?;
    let fit = spectral::semicircle_ks(&eigs)?;
    check(
        "semicircle_goe",
        fit.ks_distance < 0.08,
        format!("ks {:.4} on a 200x200 sample (bound 0.08)", fit.ks_distance),
    )?;

    Ok(())
}

// ---------------------------------------------------------------------------
// CLI

#[derive(Parser)]
#[command(name = "saddlescan", version, about = "Hessian spectrum experiments on small MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config's trials and write the aggregate JSON report.
    Run {
        config: PathBuf,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run with periodic Hessian probes and write the trajectory CSV.
    Trace {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a config along one axis and write a summary CSV.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated axis values, e.g. `xavier_uniform,orthogonal`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient descent on the 1-d plateau landscape.
    Toy {
        #[arg(long, default_value_t = 4.5)]
        start: f64,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        /// Also write a `w1,w2,f` mesh CSV of the 2-d extension.
        #[arg(long)]
        mesh: Option<PathBuf>,
    },
    /// Finite-difference and eigensolver oracle checks.
    Selftest,
}

fn write_output(path: Option<&Path>, content: &str) -> Result<(), HarnessError> {
    match path {
        Some(p) => std::fs::write(p, content).map_err(|e| io_err(p, e)),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn run_command(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run { config, out } => {
            let config = load_config(&config)?;
            let report = run_experiment(&config)?;
            write_output(out.as_deref(), &report.to_json())?;
            eprintln!(
                "{} trials, verdicts: {:?}",
                report.trials.len(),
                report.aggregate.verdicts
            );
        }
        Command::Trace { config, out } => {
            let config = load_config(&config)?;
            let (_, csv) = degeneracy_trajectory(&config)?;
            write_output(out.as_deref(), &csv)?;
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
        } => {
            let template = load_config(&config)?;
            let rows = sweep(&template, axis, &values)?;
            write_output(out.as_deref(), &sweep_csv(axis, &rows))?;
        }
        Command::Toy {
            start,
            lr,
            steps,
            mesh,
        } => {
            if !(lr > 0.0) {
                return Err(HarnessError::Config(format!("--lr must be > 0, got {lr}")));
            }
            let plateau = PlateauFunction::default();
            let trace = plateau.gd_trace(start, lr, steps);
            let last = trace.last().unwrap();
            let eval = plateau.eval(last.w);
            let report = classify_spectrum(
                &crate::linalg::SymmetricSpectrum::from_unsorted(vec![eval.d2f]),
                spectral::DEFAULT_ZERO_TOL,
            )?;
            let verdict = classify_critical_point(
                last.df.abs(),
                &report,
                spectral::DEFAULT_GRAD_TOL,
            );
            println!("start = {start:?}, lr = {lr:?}, steps = {steps}");
            println!(
                "final w = {:?}, f = {:?}, f' = {:?}, f'' = {:?}",
                last.w, last.f, eval.df, eval.d2f
            );
            let word = if verdict.class.is_degenerate() {
                "degenerate"
            } else {
                verdict.class.name()
            };
            println!("verdict = {word}");
            if let Some(path) = mesh {
                let mut buf = Vec::new();
                plateau
                    .write_mesh_csv((-5.0, 5.0), (-2.0, 2.0), 101, &mut buf)
                    .map_err(|e| io_err(&path, e))?;
                std::fs::write(&path, buf).map_err(|e| io_err(&path, e))?;
            }
        }
        Command::Selftest => {
            let mut out = std::io::stdout();
            selftest(&mut out)?;
            println!("selftest: all checks passed");
        }
    }
    Ok(())
}

/// Entry point behind the binary: parses argv and maps errors to exit codes
/// (0 success, 1 config error, 2 numerical failure).
pub fn cli<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
