//! Dense symmetric linear algebra: full eigendecomposition via Householder
//! tridiagonalization + implicit-shift QL, Lanczos iteration for
//! operator-only access, and PCA fitting.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Relative tolerance under which an input matrix is accepted as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-8;
/// Lanczos off-diagonal magnitude below which the iteration is declared
/// broken down and the pair is truncated.
pub const LANCZOS_BREAKDOWN_TOL: f64 = 1e-12;
/// QL sweeps allowed per eigenvalue before giving up.
const QL_MAX_ITER: usize = 30;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix asymmetry {defect:.3e} exceeds tolerance {tol:.3e}; symmetrize first")]
    Asymmetric { defect: f64, tol: f64 },
    #[error("QL iteration failed to converge for eigenvalue index {index} after {iters} sweeps")]
    NoConvergence { index: usize, iters: usize },
    #[error("invalid matrix shape {rows}x{cols}: {reason}")]
    BadShape { rows: usize, cols: usize, reason: String },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("requested {k} components but data has only {available} {what}")]
    TooMany { k: usize, available: usize, what: &'static str },
    #[error("pca needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
}

/// Row-major dense matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::BadShape {
                rows,
                cols,
                reason: "dimensions must be >= 1".into(),
            });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::BadShape {
                rows,
                cols,
                reason: format!("expected {} entries, got {}", rows * cols, data.len()),
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: i / cols,
                col: i % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Build from row slices; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(LinalgError::BadShape {
                    rows: r,
                    cols: c,
                    reason: "ragged rows".into(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(r, c, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.at(i, j));
            }
        }
        t
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// max |a_ij - a_ji| over the square matrix.
    pub fn asymmetry(&self) -> f64 {
        debug_assert!(self.is_square());
        let mut d: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                d = d.max((self.at(i, j) - self.at(j, i)).abs());
            }
        }
        d
    }
}

/// Sorted (ascending) eigenvalues of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSpectrum {
    eigenvalues: Vec<f64>,
}

impl SymmetricSpectrum {
    /// Wraps an eigenvalue list, sorting it ascending.
    pub fn from_unsorted(mut eigenvalues: Vec<f64>) -> Self {
        eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Self { eigenvalues }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }

    pub fn max_abs(&self) -> f64 {
        self.min().abs().max(self.max().abs())
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

/// (m + mᵀ)/2. Idempotent; errors on non-square input.
pub fn symmetrize(m: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NotSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    let n = m.rows;
    let mut s = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s.set(i, j, 0.5 * (m.at(i, j) + m.at(j, i)));
        }
    }
    Ok(s)
}

/// Full eigendecomposition of a symmetric matrix.
///
/// Eigenvalues come back sorted ascending. When `want_vectors` is set, the
/// second component holds the orthonormal eigenvectors as columns, in the
/// same order. Input must be symmetric within [`SYMMETRY_TOL`] relative to
/// its largest entry; callers symmetrize first.
pub fn symmetric_eigs(
    m: &DenseMatrix,
    want_vectors: bool,
) -> Result<(SymmetricSpectrum, Option<DenseMatrix>), LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NotSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    let tol = SYMMETRY_TOL * m.max_abs().max(1.0);
    let defect = m.asymmetry();
    if defect > tol {
        return Err(LinalgError::Asymmetric { defect, tol });
    }
    let n = m.rows;
    let mut v = m.data.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(n, &mut v, &mut d, &mut e);
    tql2(n, &mut v, &mut d, &mut e)?;
    let spectrum = SymmetricSpectrum { eigenvalues: d };
    let vectors = if want_vectors {
        Some(DenseMatrix {
            rows: n,
            cols: n,
            data: v,
        })
    } else {
        None
    };
    Ok((spectrum, vectors))
}

// Householder reduction to tridiagonal form with accumulation of the
// orthogonal transformation. Derived from the Algol procedure tred2
// (Bowdler, Martin, Reinsch, Wilkinson; Handbook for Automatic Computation
// Vol. II) via the EISPACK / JAMA lineage.
fn tred2(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    let idx = |i: usize, j: usize| i * n + j;
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
    }

    for i in (1..n).rev() {
        // Scale to avoid under/overflow.
        let mut scale = 0.0;
        let mut h = 0.0;
        for item in d.iter().take(i) {
            scale += item.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
                v[idx(j, i)] = 0.0;
            }
        } else {
            // Generate Householder vector.
            for item in d.iter_mut().take(i) {
                *item /= scale;
                h += *item * *item;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for item in e.iter_mut().take(i) {
                *item = 0.0;
            }

            // Apply similarity transformation to remaining columns.
            for j in 0..i {
                f = d[j];
                v[idx(j, i)] = f;
                g = e[j] + v[idx(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[idx(k, j)] * d[k];
                    e[k] += v[idx(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[idx(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    // Accumulate transformations.
    for i in 0..(n - 1) {
        v[idx(n - 1, i)] = v[idx(i, i)];
        v[idx(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[idx(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[idx(k, i + 1)] * v[idx(k, j)];
                }
                for k in 0..=i {
                    v[idx(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[idx(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
        v[idx(n - 1, j)] = 0.0;
    }
    v[idx(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

// Implicit-shift QL on the tridiagonal form, with deflation and eigenvector
// accumulation. Same Algol/EISPACK lineage as tred2. Sorts ascending.
fn tql2(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) -> Result<(), LinalgError> {
    let idx = |i: usize, j: usize| i * n + j;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        // Find small subdiagonal element.
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }

        // If m == l, d[l] is an eigenvalue; otherwise iterate.
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > QL_MAX_ITER {
                    return Err(LinalgError::NoConvergence {
                        index: l,
                        iters: iter,
                    });
                }

                // Compute implicit shift.
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for item in d.iter_mut().take(n).skip(l + 2) {
                    *item -= h;
                }
                f += h;

                // Implicit QL transformation.
                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    // Accumulate transformation.
                    for k in 0..n {
                        h = v[idx(k, i + 1)];
                        v[idx(k, i + 1)] = s * v[idx(k, i)] + c * h;
                        v[idx(k, i)] = c * v[idx(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;

                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }

    // Sort eigenvalues and corresponding vectors ascending.
    for i in 0..(n - 1) {
        let mut k = i;
        let mut p = d[i];
        for j in (i + 1)..n {
            if d[j] < p {
                k = j;
                p = d[j];
            }
        }
        if k != i {
            d[k] = d[i];
            d[i] = p;
            for j in 0..n {
                v.swap(idx(j, i), idx(j, k));
            }
        }
    }
    Ok(())
}

/// Lanczos tridiagonalization of a symmetric operator.
#[derive(Debug, Clone)]
pub struct TridiagonalPair {
    /// Diagonal of the k x k tridiagonal matrix.
    pub diagonal: Vec<f64>,
    /// Off-diagonal, length k - 1.
    pub offdiagonal: Vec<f64>,
    /// Orthonormal Krylov basis vectors, each of ambient dimension.
    pub basis: Vec<Vec<f64>>,
    /// Set when the iteration broke down and k was reduced.
    pub truncated: bool,
}

impl TridiagonalPair {
    pub fn k(&self) -> usize {
        self.diagonal.len()
    }

    fn tridiagonal_matrix(&self) -> DenseMatrix {
        let k = self.k();
        let mut t = DenseMatrix::zeros(k, k);
        for i in 0..k {
            t.set(i, i, self.diagonal[i]);
            if i + 1 < k {
                t.set(i, i + 1, self.offdiagonal[i]);
                t.set(i + 1, i, self.offdiagonal[i]);
            }
        }
        t
    }

    /// Eigenvalues of the small tridiagonal matrix.
    pub fn ritz_values(&self) -> Result<SymmetricSpectrum, LinalgError> {
        Ok(symmetric_eigs(&self.tridiagonal_matrix(), false)?.0)
    }

    /// Ritz values with their ambient-space directions (basis · yᵢ).
    pub fn ritz_pairs(&self) -> Result<(SymmetricSpectrum, Vec<Vec<f64>>), LinalgError> {
        let (values, vectors) = symmetric_eigs(&self.tridiagonal_matrix(), true)?;
        let vectors = vectors.unwrap();
        let k = self.k();
        let dim = self.basis[0].len();
        let mut directions = Vec::with_capacity(k);
        for i in 0..k {
            let mut u = vec![0.0; dim];
            for (j, q) in self.basis.iter().enumerate() {
                let y = vectors.at(j, i);
                for (uu, qq) in u.iter_mut().zip(q) {
                    *uu += y * qq;
                }
            }
            directions.push(u);
        }
        Ok((values, directions))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Lanczos iteration with a seeded random start vector.
pub fn lanczos<F>(apply: F, dim: usize, k: usize, seed: u64) -> Result<TridiagonalPair, LinalgError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    lanczos_from(apply, dim, k, &start)
}

/// Lanczos iteration from an explicit start vector, with full
/// reorthogonalization of the basis.
///
/// On breakdown (off-diagonal below [`LANCZOS_BREAKDOWN_TOL`]) the pair is
/// returned truncated and flagged rather than failing.
pub fn lanczos_from<F>(
    apply: F,
    dim: usize,
    k: usize,
    start: &[f64],
) -> Result<TridiagonalPair, LinalgError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if k == 0 || k > dim {
        return Err(LinalgError::TooMany {
            k,
            available: dim,
            what: "Lanczos steps",
        });
    }
    if start.len() != dim {
        return Err(LinalgError::BadShape {
            rows: start.len(),
            cols: 1,
            reason: format!("start vector length must equal dim {dim}"),
        });
    }
    let n0 = norm(start);
    if n0 < LANCZOS_BREAKDOWN_TOL {
        return Err(LinalgError::BadShape {
            rows: dim,
            cols: 1,
            reason: "start vector has (near-)zero norm".into(),
        });
    }

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut diagonal = Vec::with_capacity(k);
    let mut offdiagonal = Vec::with_capacity(k.saturating_sub(1));
    let mut truncated = false;

    let q0: Vec<f64> = start.iter().map(|x| x / n0).collect();
    basis.push(q0);

    for j in 0..k {
        let qj = basis[j].clone();
        let mut w = apply(&qj);
        let alpha = dot(&w, &qj);
        diagonal.push(alpha);
        if j + 1 == k {
            break;
        }
        // Full reorthogonalization, two passes.
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&w, q);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
        let beta = norm(&w);
        if beta < LANCZOS_BREAKDOWN_TOL {
            truncated = true;
            break;
        }
        offdiagonal.push(beta);
        basis.push(w.iter().map(|x| x / beta).collect());
    }

    Ok(TridiagonalPair {
        diagonal,
        offdiagonal,
        basis,
        truncated,
    })
}

/// Mean and top-k principal directions of a samples x features matrix.
#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// k orthonormal directions, each of length `features`.
    pub components: Vec<Vec<f64>>,
    /// Covariance eigenvalue (variance) per component, descending.
    pub explained: Vec<f64>,
    /// Flags components whose variance is numerically zero.
    pub zero_variance: Vec<bool>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn features(&self) -> usize {
        self.mean.len()
    }

    /// Centered projection of one sample onto the k directions.
    pub fn project(&self, sample: &[f64]) -> Vec<f64> {
        assert_eq!(sample.len(), self.features(), "pca dimension mismatch");
        let centered: Vec<f64> = sample.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        self.components.iter().map(|c| dot(c, &centered)).collect()
    }
}

/// Fits PCA by eigendecomposing the sample covariance (unbiased, n-1).
pub fn pca_fit(data: &DenseMatrix, k: usize) -> Result<PcaModel, LinalgError> {
    let (n, d) = (data.rows(), data.cols());
    if k > d {
        return Err(LinalgError::TooMany {
            k,
            available: d,
            what: "features",
        });
    }
    if n < 2 {
        return Err(LinalgError::TooFewSamples(n));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(data.row(i)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let mut cov = DenseMatrix::zeros(d, d);
    for i in 0..n {
        let row = data.row(i);
        for a in 0..d {
            let xa = row[a] - mean[a];
            for b in a..d {
                let v = cov.at(a, b) + xa * (row[b] - mean[b]);
                cov.set(a, b, v);
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov.at(a, b) / denom;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }

    let (spectrum, vectors) = symmetric_eigs(&cov, true)?;
    let vectors = vectors.unwrap();
    let eigs = spectrum.eigenvalues();
    let var_scale = spectrum.max_abs().max(1.0);
    let mut components = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    let mut zero_variance = Vec::with_capacity(k);
    // Top-k: largest eigenvalues sit at the end of the ascending spectrum.
    for i in 0..k {
        let col = d - 1 - i;
        components.push((0..d).map(|r| vectors.at(r, col)).collect());
        explained.push(eigs[col]);
        zero_variance.push(eigs[col].abs() <= 1e-12 * var_scale);
    }

    Ok(PcaModel {
        mean,
        components,
        explained,
        zero_variance,
    })
}
