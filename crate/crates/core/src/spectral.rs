//! Spectrum classification: sign counts under a relative zero tolerance,
//! critical-point verdicts, strict/stable/good saddle checks, error-vs-
//! negative-fraction records, and a semicircle goodness-of-fit test.

use crate::linalg::{DenseMatrix, SymmetricSpectrum};
use crate::model::{self, Batch, MlpSpec, ModelError};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative zero tolerance: |lambda| <= tol * max(1, max|lambda|) counts as zero.
pub const DEFAULT_ZERO_TOL: f64 = 1e-6;
/// Full-batch gradient norm below this counts as a critical point.
pub const DEFAULT_GRAD_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("empty spectrum")]
    EmptySpectrum,
    #[error("zero_tol must be > 0, got {0}")]
    BadZeroTol(f64),
    #[error("kappa {kappa} must be < spectrum dim {dim}")]
    KappaTooLarge { kappa: usize, dim: usize },
    #[error("semicircle test needs dim >= 10, got {0}")]
    SpectrumTooSmall(usize),
    #[error("need n_pairs >= 1 and radius > 0, got n_pairs {n_pairs}, radius {radius}")]
    BadSampling { n_pairs: usize, radius: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Sign counts of a spectrum under the relative zero tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    #[serde(skip)]
    pub eigenvalues: SymmetricSpectrum,
    pub dim: usize,
    /// Relative tolerance requested.
    pub zero_tol: f64,
    /// Absolute threshold actually applied: zero_tol * max(1, max|lambda|).
    pub abs_threshold: f64,
    pub n_positive: usize,
    pub n_negative: usize,
    pub n_zero: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl SpectrumReport {
    pub fn nonzero(&self) -> usize {
        self.n_positive + self.n_negative
    }
}

/// Counts eigenvalues as negative / zero / positive against the absolute
/// threshold zero_tol * max(1, max|lambda|).
pub fn classify_spectrum(
    eigs: &SymmetricSpectrum,
    zero_tol: f64,
) -> Result<SpectrumReport, SpectralError> {
    if eigs.dim() == 0 {
        return Err(SpectralError::EmptySpectrum);
    }
    if !(zero_tol > 0.0) {
        return Err(SpectralError::BadZeroTol(zero_tol));
    }
    let abs_threshold = zero_tol * eigs.max_abs().max(1.0);
    let mut n_positive = 0;
    let mut n_negative = 0;
    let mut n_zero = 0;
    for &l in eigs.eigenvalues() {
        if l.abs() <= abs_threshold {
            n_zero += 1;
        } else if l > 0.0 {
            n_positive += 1;
        } else {
            n_negative += 1;
        }
    }
    Ok(SpectrumReport {
        dim: eigs.dim(),
        zero_tol,
        abs_threshold,
        n_positive,
        n_negative,
        n_zero,
        lambda_min: eigs.min(),
        lambda_max: eigs.max(),
        eigenvalues: eigs.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalPointClass {
    LocalMin,
    LocalMax,
    MinmaxSaddle,
    DegenerateSaddle,
    /// Zero eigenvalues present but all nonzero ones share a sign, so the
    /// point cannot be separated from a flat extremum by the spectrum alone.
    DegenerateExtremumCandidate,
    NonCritical,
}

impl CriticalPointClass {
    pub fn is_degenerate(self) -> bool {
        matches!(
            self,
            Self::DegenerateSaddle | Self::DegenerateExtremumCandidate
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::LocalMin => "local_min",
            Self::LocalMax => "local_max",
            Self::MinmaxSaddle => "minmax_saddle",
            Self::DegenerateSaddle => "degenerate_saddle",
            Self::DegenerateExtremumCandidate => "degenerate_extremum_candidate",
            Self::NonCritical => "non_critical",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CriticalPointVerdict {
    pub class: CriticalPointClass,
    pub grad_norm: f64,
    pub grad_tol: f64,
}

/// Applies the taxonomy: the gradient gate first, then the sign pattern.
pub fn classify_critical_point(
    grad_norm: f64,
    report: &SpectrumReport,
    grad_tol: f64,
) -> CriticalPointVerdict {
    let class = if grad_norm > grad_tol {
        CriticalPointClass::NonCritical
    } else if report.n_zero == 0 {
        match (report.n_positive > 0, report.n_negative > 0) {
            (true, false) => CriticalPointClass::LocalMin,
            (false, true) => CriticalPointClass::LocalMax,
            _ => CriticalPointClass::MinmaxSaddle,
        }
    } else if report.n_positive > 0 && report.n_negative > 0 {
        CriticalPointClass::DegenerateSaddle
    } else {
        CriticalPointClass::DegenerateExtremumCandidate
    };
    CriticalPointVerdict {
        class,
        grad_norm,
        grad_tol,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StrictSaddleParams {
    /// Strong-convexity modulus of the third clause (recorded, not checked).
    pub alpha: f64,
    /// Required magnitude of the most negative eigenvalue.
    pub gamma: f64,
    /// Gradient bound of the first clause.
    pub epsilon: f64,
    /// Neighborhood radius of the third clause (recorded, not checked).
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrictSaddleOutcome {
    Clause1,
    Clause2,
    NotSatisfiedByClauses12,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StrictSaddleVerdict {
    pub outcome: StrictSaddleOutcome,
    /// The third clause needs the nearest local minimum; always false here.
    pub clause3_checked: bool,
}

/// Checks the two machine-checkable strict-saddle clauses: a large gradient,
/// or a sufficiently negative minimum eigenvalue.
pub fn strict_saddle_check(
    grad_norm: f64,
    lambda_min: f64,
    p: &StrictSaddleParams,
) -> StrictSaddleVerdict {
    let outcome = if grad_norm >= p.epsilon {
        StrictSaddleOutcome::Clause1
    } else if lambda_min <= -p.gamma {
        StrictSaddleOutcome::Clause2
    } else {
        StrictSaddleOutcome::NotSatisfiedByClauses12
    };
    StrictSaddleVerdict {
        outcome,
        clause3_checked: false,
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StableSaddleParams {
    /// Maximum allowed count of nonzero eigenvalues; must be < dim.
    pub kappa: usize,
    /// Gradient bound.
    pub epsilon: f64,
    /// Hessian-Lipschitz constant (recorded with the verdict).
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StableSaddleVerdict {
    pub stable: bool,
    /// kappa minus the observed nonzero count; negative when over budget.
    pub margin: i64,
}

/// Stable iff the gradient is below epsilon and at most kappa eigenvalues
/// are nonzero under the report's threshold.
pub fn stable_saddle_check(
    grad_norm: f64,
    report: &SpectrumReport,
    p: &StableSaddleParams,
) -> Result<StableSaddleVerdict, SpectralError> {
    if p.kappa >= report.dim {
        return Err(SpectralError::KappaTooLarge {
            kappa: p.kappa,
            dim: report.dim,
        });
    }
    let nonzero = report.nonzero();
    Ok(StableSaddleVerdict {
        stable: grad_norm < p.epsilon && nonzero <= p.kappa,
        margin: p.kappa as i64 - nonzero as i64,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzEstimate {
    pub rho_hat: f64,
    pub n_pairs: usize,
    pub radius: f64,
    /// Matrix norm used for the Hessian difference.
    pub norm: &'static str,
}

/// Empirical lower bound on the local Hessian-Lipschitz constant: the max of
/// ||H(x1) - H(x2)||_F / ||x1 - x2|| over seeded pairs drawn uniformly from
/// the ball of `radius` around `center`.
pub fn estimate_lipschitz_of<F>(
    hessian_at: F,
    center: &[f64],
    n_pairs: usize,
    radius: f64,
    seed: u64,
) -> Result<LipschitzEstimate, SpectralError>
where
    F: Fn(&[f64]) -> Result<DenseMatrix, SpectralError>,
{
    if n_pairs < 1 || !(radius > 0.0) {
        return Err(SpectralError::BadSampling { n_pairs, radius });
    }
    let dim = center.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ball_point = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        // Gaussian direction scaled to a uniform-in-ball radius.
        let dir: Vec<f64> = (0..dim)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        let u: f64 = rng.gen_range(0.0..1.0);
        let r = radius * u.powf(1.0 / dim as f64);
        center
            .iter()
            .zip(&dir)
            .map(|(&c, &d)| c + r * d / norm)
            .collect()
    };
    let mut rho_hat: f64 = 0.0;
    for _ in 0..n_pairs {
        let x1 = ball_point(&mut rng);
        let x2 = ball_point(&mut rng);
        let dist = x1
            .iter()
            .zip(&x2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dist < 1e-12 {
            continue;
        }
        let h1 = hessian_at(&x1)?;
        let h2 = hessian_at(&x2)?;
        let frob = h1
            .data()
            .iter()
            .zip(h2.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        rho_hat = rho_hat.max(frob / dist);
    }
    Ok(LipschitzEstimate {
        rho_hat,
        n_pairs,
        radius,
        norm: "frobenius",
    })
}

/// Lipschitz estimate for a model loss Hessian around `params`.
pub fn estimate_hessian_lipschitz(
    spec: &MlpSpec,
    params: &[f64],
    batch: &Batch,
    n_pairs: usize,
    radius: f64,
    seed: u64,
    budget: usize,
) -> Result<LipschitzEstimate, SpectralError> {
    if spec.param_count() > budget {
        // Surface the budget error before sampling anything.
        model::full_hessian(spec, params, batch, budget)?;
    }
    estimate_lipschitz_of(
        |p| Ok(model::full_hessian(spec, p, batch, budget)?.matrix),
        params,
        n_pairs,
        radius,
        seed,
    )
}

#[derive(Debug, Clone, Copy)]
pub struct GoodSaddleParams {
    /// Loss-gap bound above the reference optimum.
    pub delta: f64,
    /// Reference optimum value (best observed unless user-supplied).
    pub f_ref: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GoodSaddleVerdict {
    pub good: bool,
    pub gap: f64,
    /// Set when f_ref exceeds the loss by more than numerical slack; the
    /// reference is then not a lower bound here.
    pub f_ref_above_loss: bool,
}

/// Good iff stable and the loss sits within delta of the reference optimum.
pub fn good_saddle_check(
    loss_at_x: f64,
    stable: &StableSaddleVerdict,
    p: &GoodSaddleParams,
) -> GoodSaddleVerdict {
    let gap = loss_at_x - p.f_ref;
    GoodSaddleVerdict {
        good: stable.stable && gap <= p.delta,
        gap,
        f_ref_above_loss: gap < -1e-9,
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpsilonAlphaRecord {
    pub epoch: usize,
    /// Training loss at the probe.
    pub error: f64,
    /// Fraction of negative eigenvalues, n_negative / dim.
    pub alpha_fraction: f64,
}

pub fn epsilon_alpha(epoch: usize, loss: f64, report: &SpectrumReport) -> EpsilonAlphaRecord {
    EpsilonAlphaRecord {
        epoch,
        error: loss,
        alpha_fraction: report.n_negative as f64 / report.dim as f64,
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SemicircleFit {
    /// Second-moment scale: the fitted semicircle has radius 2 * m_hat * sqrt(N).
    pub m_hat: f64,
    pub ks_distance: f64,
    pub dim: usize,
    /// All-zero spectrum: the fit collapses to a point mass.
    pub degenerate: bool,
}

/// Semicircle CDF with radius r at x, clamped outside the support.
fn semicircle_cdf(x: f64, r: f64) -> f64 {
    if x <= -r {
        return 0.0;
    }
    if x >= r {
        return 1.0;
    }
    0.5 + x * (r * r - x * x).sqrt() / (std::f64::consts::PI * r * r)
        + (x / r).asin() / std::f64::consts::PI
}

/// Fits a semicircle by moment matching (sample second moment = m^2 * N) and
/// returns the Kolmogorov-Smirnov distance of the empirical eigenvalue CDF.
pub fn semicircle_ks(eigs: &SymmetricSpectrum) -> Result<SemicircleFit, SpectralError> {
    let n = eigs.dim();
    if n < 10 {
        return Err(SpectralError::SpectrumTooSmall(n));
    }
    let sorted = eigs.eigenvalues();
    let second_moment = sorted.iter().map(|l| l * l).sum::<f64>() / n as f64;
    let m_hat = (second_moment / n as f64).sqrt();
    if m_hat == 0.0 {
        // Point mass at zero; the empirical CDF is the same point mass.
        return Ok(SemicircleFit {
            m_hat: 0.0,
            ks_distance: 0.0,
            dim: n,
            degenerate: true,
        });
    }
    let r = 2.0 * m_hat * (n as f64).sqrt();
    let mut ks: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = semicircle_cdf(x, r);
        ks = ks.max((f - i as f64 / n as f64).abs());
        ks = ks.max(((i + 1) as f64 / n as f64 - f).abs());
    }
    Ok(SemicircleFit {
        m_hat,
        ks_distance: ks,
        dim: n,
        degenerate: false,
    })
}

/// Spearman rank correlation with average ranks on ties. NaN-free inputs of
/// equal nonzero length expected; constant inputs yield 0.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rank = |v: &[f64]| -> Vec<f64> {
        let n = v.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut ranks = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                ranks[k] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}
