//! Dense linear-algebra services for the Riccati solvers.
//!
//! Every Sylvester / Lyapunov-type equation is solved by Kronecker
//! vectorization: the `(kl) x (kl)` operator is assembled explicitly and
//! factored with partially pivoted LU. Problem sizes here are small
//! (`n` up to about 10), so the `O(n^6)` cost is irrelevant.
//!
//! Stability is certified constructively: a matrix is Hurwitz (resp. the
//! pair `(M, N)` is mean-square stable) iff the associated Lyapunov
//! equation with right-hand side `-I` has a symmetric positive definite
//! solution. The solution is returned as the witness.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serde_mat;

/// Condition number (1-norm) above which a Kronecker system is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    max_abs(&(m - m.transpose()))
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `op * vec(X) = rhs` for the column-major `vec(X)` of a `rows x cols` matrix.
fn solve_vectorized(op: DMatrix<f64>, rhs: &DMatrix<f64>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let op_norm = norm1(&op);
    let lu = op.lu();
    let inv = lu
        .try_inverse()
        .ok_or(Error::SpectraOverlap { condition: f64::INFINITY })?;
    let condition = op_norm * norm1(&inv);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::SpectraOverlap { condition });
    }
    let b = nalgebra::DVector::from_column_slice(rhs.as_slice());
    let x = lu
        .solve(&b)
        .ok_or(Error::SpectraOverlap { condition: f64::INFINITY })?;
    Ok(DMatrix::from_column_slice(rows, cols, x.as_slice()))
}

fn check_square(field: &str, m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(field, "square", format!("{}x{}", m.nrows(), m.ncols())));
    }
    Ok(m.nrows())
}

/// Solves `A1^T X + X A2 + C = 0` for `X` (`k x l`).
pub fn solve_sylvester(a1: &DMatrix<f64>, a2: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = check_square("A1", a1)?;
    let l = check_square("A2", a2)?;
    if c.shape() != (k, l) {
        return Err(Error::dim("C", format!("{k}x{l}"), format!("{}x{}", c.nrows(), c.ncols())));
    }
    // vec(A1^T X) = (I_l (x) A1^T) vec X,  vec(X A2) = (A2^T (x) I_k) vec X
    let op = kron(&DMatrix::identity(l, l), &a1.transpose()) + kron(&a2.transpose(), &DMatrix::identity(k, k));
    solve_vectorized(op, &(-c), k, l)
}

/// Solves `M^T P + P M + W = 0`; the result is exactly symmetric.
pub fn solve_lyapunov(m: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = solve_sylvester(m, m, &symmetrize(w))?;
    Ok(symmetrize(&p))
}

/// Solves the generalized Lyapunov equation `M^T P + P M + N^T P N + W = 0`
/// of the mean-square stability operator; the result is exactly symmetric.
pub fn solve_stochastic_lyapunov(m: &DMatrix<f64>, n_mat: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = check_square("M", m)?;
    if n_mat.shape() != (d, d) {
        return Err(Error::dim("N", format!("{d}x{d}"), format!("{}x{}", n_mat.nrows(), n_mat.ncols())));
    }
    if w.shape() != (d, d) {
        return Err(Error::dim("W", format!("{d}x{d}"), format!("{}x{}", w.nrows(), w.ncols())));
    }
    let eye = DMatrix::identity(d, d);
    let mt = m.transpose();
    let nt = n_mat.transpose();
    let op = kron(&eye, &mt) + kron(&mt, &eye) + kron(&nt, &nt);
    let p = solve_vectorized(op, &(-symmetrize(w)), d, d)?;
    Ok(symmetrize(&p))
}

/// Smallest eigenvalue of a symmetric matrix (symmetric part is used).
pub fn sym_eig_min(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

pub fn is_positive_definite(m: &DMatrix<f64>, margin: f64) -> bool {
    sym_eig_min(m) > margin
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityKind {
    Hurwitz,
    MeanSquare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub kind: StabilityKind,
    #[serde(with = "serde_mat::matrix")]
    pub witness: DMatrix<f64>,
    pub min_eig: f64,
    pub residual: f64,
}

/// Reason a certificate could not be issued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refusal {
    pub kind: StabilityKind,
    /// Smallest eigenvalue of the would-be witness, when the solve succeeded.
    pub min_eig: Option<f64>,
    pub reason: String,
}

impl std::fmt::Display for Refusal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?} certificate refused: {}", self.kind, self.reason)
    }
}

fn certify(kind: StabilityKind, m: &DMatrix<f64>, noise: Option<&DMatrix<f64>>) -> Result<StabilityCertificate, Refusal> {
    let d = m.nrows();
    let eye = DMatrix::identity(d, d);
    let solved = match noise {
        Some(n_mat) => solve_stochastic_lyapunov(m, n_mat, &eye),
        None => solve_lyapunov(m, &eye),
    };
    let witness = solved.map_err(|e| Refusal {
        kind,
        min_eig: None,
        reason: e.to_string(),
    })?;
    let min_eig = sym_eig_min(&witness);
    if !(min_eig > 0.0) {
        return Err(Refusal {
            kind,
            min_eig: Some(min_eig),
            reason: format!("witness not positive definite (smallest eigenvalue {min_eig:.3e})"),
        });
    }
    let mut lhs = m.transpose() * &witness + &witness * m + eye;
    if let Some(n_mat) = noise {
        lhs += n_mat.transpose() * &witness * n_mat;
    }
    Ok(StabilityCertificate {
        kind,
        witness,
        min_eig,
        residual: max_abs(&lhs),
    })
}

/// Certifies that every eigenvalue of `M` has negative real part.
pub fn certify_hurwitz(m: &DMatrix<f64>) -> Result<StabilityCertificate, Refusal> {
    if m.nrows() != m.ncols() {
        return Err(Refusal {
            kind: StabilityKind::Hurwitz,
            min_eig: None,
            reason: "matrix is not square".into(),
        });
    }
    certify(StabilityKind::Hurwitz, m, None)
}

/// Certifies L2-exponential stability of `dX = M X dt + N X dW`.
pub fn certify_mean_square(m: &DMatrix<f64>, n_mat: &DMatrix<f64>) -> Result<StabilityCertificate, Refusal> {
    if m.nrows() != m.ncols() || n_mat.shape() != m.shape() {
        return Err(Refusal {
            kind: StabilityKind::MeanSquare,
            min_eig: None,
            reason: "operator matrices must be square and of equal size".into(),
        });
    }
    certify(StabilityKind::MeanSquare, m, Some(n_mat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn scalar_sylvester() {
        let x = solve_sylvester(&scalar(-2.0), &scalar(-3.0), &scalar(10.0)).unwrap();
        assert!((x[(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn homogeneous_sylvester_is_zero() {
        let a1 = dmatrix![-1.0, 0.3; 0.0, -2.0];
        let a2 = dmatrix![-0.5, 0.0, 0.1; 0.2, -1.5, 0.0; 0.0, 0.0, -3.0];
        let x = solve_sylvester(&a1, &a2, &DMatrix::zeros(2, 3)).unwrap();
        assert_eq!(max_abs(&x), 0.0);
    }

    #[test]
    fn sylvester_rejects_overlapping_spectra() {
        // A1^T = 1 and -A2 = 1 share an eigenvalue.
        let err = solve_sylvester(&scalar(1.0), &scalar(-1.0), &scalar(1.0)).unwrap_err();
        assert!(matches!(err, Error::SpectraOverlap { .. }));
    }

    #[test]
    fn sylvester_dimension_errors_name_the_argument() {
        let err = solve_sylvester(&scalar(1.0), &scalar(-3.0), &DMatrix::zeros(2, 1)).unwrap_err();
        assert!(err.to_string().contains("`C`"), "{err}");
    }

    #[test]
    fn scalar_and_diagonal_lyapunov() {
        let p = solve_lyapunov(&scalar(-1.0), &scalar(2.0)).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-14);

        let m = -DMatrix::<f64>::identity(2, 2);
        let p = solve_lyapunov(&m, &DMatrix::identity(2, 2)).unwrap();
        assert!(max_abs(&(p - DMatrix::identity(2, 2) * 0.5)) < 1e-14);
    }

    #[test]
    fn sym_eig_min_examples() {
        assert!((sym_eig_min(&dmatrix![3.0, 0.0; 0.0, 1.0]) - 1.0).abs() < 1e-14);
        assert!((sym_eig_min(&dmatrix![2.0, 1.0; 1.0, 2.0]) - 1.0).abs() < 1e-14);
        assert_eq!(sym_eig_min(&DMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn hurwitz_scalar_cases() {
        let cert = certify_hurwitz(&scalar(-1.0)).unwrap();
        assert!((cert.witness[(0, 0)] - 0.5).abs() < 1e-14);
        assert_eq!(cert.kind, StabilityKind::Hurwitz);

        let refusal = certify_hurwitz(&scalar(1.0)).unwrap_err();
        assert!((refusal.min_eig.unwrap() + 0.5).abs() < 1e-14);

        // closed-loop mean matrix of the scalar benchmark: -sqrt(2)
        let s2 = 2f64.sqrt();
        let cert = certify_hurwitz(&scalar(-s2)).unwrap();
        assert!((cert.witness[(0, 0)] - 1.0 / (2.0 * s2)).abs() < 1e-14);
    }

    #[test]
    fn mean_square_scalar_cases() {
        let cert = certify_mean_square(&scalar(-1.0), &scalar(0.0)).unwrap();
        assert!((cert.witness[(0, 0)] - 0.5).abs() < 1e-14);

        let cert = certify_mean_square(&scalar(-1.0), &scalar(1.0)).unwrap();
        assert!((cert.witness[(0, 0)] - 1.0).abs() < 1e-14);

        assert!(certify_mean_square(&scalar(-0.4), &scalar(1.0)).is_err());
    }

    #[test]
    fn marginal_scalar_refused() {
        // 2M + N^2 = 0: the operator is singular.
        let refusal = certify_mean_square(&scalar(-0.5), &scalar(1.0)).unwrap_err();
        assert!(refusal.min_eig.is_none());
    }
}
