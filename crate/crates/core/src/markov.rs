//! Small dense matrix numerics for three-class Markov dynamics.
//!
//! Everything here works on 3×3 matrices: the transition matrix `P(t)`,
//! its generator `Λ` with `P(t) = exp(tΛ)`, the eigendecomposition used by
//! both the exponential and the logarithm, and the stationary law of `Λ`.
//!
//! Matrices serialize as row-major arrays of arrays.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat3 = Matrix3<f64>;
type CMat3 = Matrix3<Complex64>;

/// Row sums of stochastic matrices and generators, and distribution totals.
pub const SUM_TOL: f64 = 1e-9;
/// Slack allowed on the `[0, 1]` range of transition probabilities.
pub const ENTRY_TOL: f64 = 1e-12;
/// Negative off-diagonal rates down to `-NEGATIVE_RATE_TOL` are rounding noise.
pub const NEGATIVE_RATE_TOL: f64 = 1e-9;
/// Imaginary parts and nonpositive real parts of eigenvalues are judged at this level.
pub const EIGEN_TOL: f64 = 1e-9;
/// Above this eigenvector condition number the logarithm refuses to run.
pub const LOG_CONDITION_LIMIT: f64 = 1e12;
/// Above this eigenvector condition number the exponential uses the Taylor route.
pub const EXP_CONDITION_LIMIT: f64 = 1e8;

fn to_rows(m: &Mat3) -> [[f64; 3]; 3] {
    let mut rows = [[0.0; 3]; 3];
    for (i, row) in rows.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    rows
}

fn from_rows(rows: &[[f64; 3]; 3]) -> Mat3 {
    Mat3::from_fn(|i, j| rows[i][j])
}

fn max_abs(m: &Mat3) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// A row-stochastic 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct TransitionMatrix(Mat3);

impl TransitionMatrix {
    pub fn new(m: Mat3) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        if m.iter().any(|&v| !(-ENTRY_TOL..=1.0 + ENTRY_TOL).contains(&v)) {
            return Err(Error::InvalidMatrix(
                "transition probability outside [0, 1]".into(),
            ));
        }
        for i in 0..3 {
            let s = m.row(i).sum();
            if (s - 1.0).abs() > SUM_TOL {
                return Err(Error::InvalidMatrix(format!(
                    "row {i} sums to {s}, expected 1"
                )));
            }
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(from_rows(&rows))
    }

    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        to_rows(&self.0)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn is_irreducible(&self) -> bool {
        check_irreducible(&self.0)
    }
}

impl TryFrom<[[f64; 3]; 3]> for TransitionMatrix {
    type Error = Error;
    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<TransitionMatrix> for [[f64; 3]; 3] {
    fn from(p: TransitionMatrix) -> Self {
        to_rows(&p.0)
    }
}

/// Infinitesimal generator of a three-state Markov process (rates per year).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct GeneratorMatrix(Mat3);

impl GeneratorMatrix {
    pub fn new(m: Mat3) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                if i != j && m[(i, j)] < -NEGATIVE_RATE_TOL {
                    return Err(Error::InvalidMatrix(format!(
                        "negative rate {} at ({i}, {j})",
                        m[(i, j)]
                    )));
                }
            }
            let s = m.row(i).sum();
            if s.abs() > SUM_TOL {
                return Err(Error::InvalidMatrix(format!(
                    "row {i} sums to {s}, expected 0"
                )));
            }
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(from_rows(&rows))
    }

    pub fn zero() -> Self {
        Self(Mat3::zeros())
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        to_rows(&self.0)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Total exit rate `-λ_ii` of state `i`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.0[(i, i)]
    }

    pub fn is_irreducible(&self) -> bool {
        check_irreducible(&self.0)
    }
}

impl TryFrom<[[f64; 3]; 3]> for GeneratorMatrix {
    type Error = Error;
    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<GeneratorMatrix> for [[f64; 3]; 3] {
    fn from(g: GeneratorMatrix) -> Self {
        to_rows(&g.0)
    }
}

/// A probability vector over the three classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Distribution3([f64; 3]);

impl Distribution3 {
    pub fn new(weights: [f64; 3]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < -ENTRY_TOL) {
            return Err(Error::InvalidDistribution(format!(
                "weights must be finite and nonnegative, got {weights:?}"
            )));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {s}, expected 1"
            )));
        }
        Ok(Self(weights))
    }

    pub fn weights(&self) -> [f64; 3] {
        self.0
    }

    /// Row vector product `μ'P`.
    pub fn propagate(&self, p: &TransitionMatrix) -> [f64; 3] {
        let v = Vector3::from(self.0).transpose() * p.matrix();
        [v[0], v[1], v[2]]
    }
}

impl TryFrom<[f64; 3]> for Distribution3 {
    type Error = Error;
    fn try_from(w: [f64; 3]) -> Result<Self> {
        Self::new(w)
    }
}

impl From<Distribution3> for [f64; 3] {
    fn from(d: Distribution3) -> Self {
        d.0
    }
}

/// Right eigenvectors, their inverse and the eigenvalues of a real 3×3 matrix.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// Sorted by descending real part, then descending imaginary part.
    pub values: [Complex64; 3],
    /// Columns are unit-norm right eigenvectors matching `values`.
    pub vectors: CMat3,
    pub inverse: CMat3,
    /// 2-norm condition number of `vectors`.
    pub condition: f64,
}

impl EigenSystem {
    /// `V · diag(f(λ)) · V⁻¹`.
    pub fn apply(&self, f: impl Fn(Complex64) -> Complex64) -> CMat3 {
        let d = CMat3::from_diagonal(&Vector3::from(self.values.map(f)));
        self.vectors * d * self.inverse
    }

    pub fn reconstruct(&self) -> Mat3 {
        self.apply(|z| z).map(|z| z.re)
    }
}

fn sort_eigenvalues(values: &mut [Complex64; 3]) {
    values.sort_by(|a, b| {
        b.re.partial_cmp(&a.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.im.partial_cmp(&a.im).unwrap_or(std::cmp::Ordering::Equal))
    });
}

fn singular_values_sorted(m: &CMat3) -> Option<(Vec<(f64, usize)>, CMat3)> {
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let mut order: Vec<(f64, usize)> = svd
        .singular_values
        .iter()
        .copied()
        .enumerate()
        .map(|(i, s)| (s, i))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    Some((order, v_t))
}

fn condition_number(m: &CMat3) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Eigendecomposition `M = V diag(λ) V⁻¹` of a real 3×3 matrix.
///
/// Eigenvectors of each eigenvalue cluster come from the null space of
/// `M − λI` (smallest right singular vectors), so repeated but
/// non-defective eigenvalues such as those of the identity are handled.
pub fn eigen_decompose(m: &Mat3) -> Result<EigenSystem> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    let scale = max_abs(m).max(1.0);
    let ev = m.complex_eigenvalues();
    let mut values = [ev[0], ev[1], ev[2]];
    sort_eigenvalues(&mut values);

    let cm: CMat3 = m.map(|v| Complex64::new(v, 0.0));
    let cluster_tol = 1e-7 * scale;
    let mut vectors = CMat3::zeros();
    let mut assigned = [false; 3];
    for i in 0..3 {
        if assigned[i] {
            continue;
        }
        let members: Vec<usize> = (i..3)
            .filter(|&j| !assigned[j] && (values[j] - values[i]).norm() <= cluster_tol)
            .collect();
        let centre = members.iter().map(|&j| values[j]).sum::<Complex64>() / members.len() as f64;
        let shifted = cm - CMat3::identity() * centre;
        let (order, v_t) = singular_values_sorted(&shifted).ok_or(Error::NonDiagonalizable {
            condition: f64::INFINITY,
        })?;
        for (k, &j) in members.iter().enumerate() {
            let row = order[k].1;
            // right singular vector = conjugate of a row of V^H
            for r in 0..3 {
                vectors[(r, j)] = v_t[(row, r)].conj();
            }
            assigned[j] = true;
        }
    }

    let condition = condition_number(&vectors);
    if !(condition <= LOG_CONDITION_LIMIT) {
        return Err(Error::NonDiagonalizable { condition });
    }
    let inverse = vectors
        .try_inverse()
        .ok_or(Error::NonDiagonalizable { condition })?;
    let sys = EigenSystem {
        values,
        vectors,
        inverse,
        condition,
    };
    let residual = max_abs(&(sys.reconstruct() - m));
    if residual > SUM_TOL * scale {
        return Err(Error::NonDiagonalizable { condition });
    }
    Ok(sys)
}

/// `exp(A)` by scaling and squaring of a truncated Taylor series.
pub fn expm_taylor(a: &Mat3) -> Mat3 {
    let norm = (0..3)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let b = a / 2f64.powi(squarings);
    let mut term = Mat3::identity();
    let mut sum = Mat3::identity();
    for k in 1..=30 {
        term = term * b / k as f64;
        sum += term;
        if max_abs(&term) < f64::EPSILON * max_abs(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Transition matrix `P(t) = exp(tΛ)`.
pub fn matrix_exp(lambda: &GeneratorMatrix, t: f64) -> Result<TransitionMatrix> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidParameter(format!("time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(TransitionMatrix::identity());
    }
    let a = lambda.matrix() * t;
    if let Ok(sys) = eigen_decompose(lambda.matrix()) {
        if sys.condition <= EXP_CONDITION_LIMIT {
            let m = sys.apply(|z| (z * t).exp()).map(|z| z.re);
            if let Ok(p) = TransitionMatrix::new(m) {
                return Ok(p);
            }
        }
    }
    TransitionMatrix::new(expm_taylor(&a))
}

/// Generator `Λ = log(P)/η` of a transition matrix observed every `η` years.
///
/// Requires every eigenvalue of `P` to be real and strictly positive and the
/// eigenvector matrix to be well conditioned. Off-diagonal rates in
/// `[-1e-9, 0)` are set to zero and the diagonal rebalanced; anything more
/// negative means no valid generator exists.
pub fn matrix_log_generator(p: &TransitionMatrix, eta: f64) -> Result<GeneratorMatrix> {
    if !eta.is_finite() || eta <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "observation period must be > 0, got {eta}"
        )));
    }
    let sys = eigen_decompose(p.matrix())?;
    for z in &sys.values {
        if z.im.abs() > EIGEN_TOL {
            return Err(Error::NotEmbeddable(format!("complex eigenvalue {z}")));
        }
        if z.re <= EIGEN_TOL {
            return Err(Error::NotEmbeddable(format!(
                "nonpositive eigenvalue {}",
                z.re
            )));
        }
    }
    let log = sys.apply(|z| Complex64::new(z.re.ln(), 0.0)).map(|z| z.re / eta);
    let mut out = log;
    for i in 0..3 {
        let mut off = 0.0;
        for j in 0..3 {
            if i == j {
                continue;
            }
            let v = out[(i, j)];
            if v < -NEGATIVE_RATE_TOL {
                return Err(Error::NotEmbeddable(format!(
                    "negative rate {v:.3e} at ({i}, {j})"
                )));
            }
            if v < 0.0 {
                out[(i, j)] = 0.0;
            }
            off += out[(i, j)];
        }
        out[(i, i)] = -off;
    }
    GeneratorMatrix::new(out)
}

/// Strong connectivity of the directed graph of positive off-diagonal entries.
pub fn check_irreducible(m: &Mat3) -> bool {
    let mut reach = [[false; 3]; 3];
    for (i, row) in reach.iter_mut().enumerate() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = i == j || m[(i, j)] > 0.0;
        }
    }
    for k in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    reach.iter().all(|row| row.iter().all(|&r| r))
}

/// Stationary law `π` with `π'Λ = 0`, `Σπ = 1`.
pub fn stationary_distribution(lambda: &GeneratorMatrix) -> Result<Distribution3> {
    if !lambda.is_irreducible() {
        return Err(Error::NotIrreducible);
    }
    let mut a = lambda.matrix().transpose();
    for j in 0..3 {
        a[(2, j)] = 1.0;
    }
    let b = Vector3::new(0.0, 0.0, 1.0);
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::InvalidMatrix("singular stationary system".into()))?;
    let mut w = [x[0].max(0.0), x[1].max(0.0), x[2].max(0.0)];
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    Distribution3::new(w)
}
