//! Dense linear-algebra kernels shared by synthesis and simulation.
//!
//! Everything here is a pure function of its inputs.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Largest dimension for which [`spectral_norm`] runs a full SVD. Above it
/// the norm comes from power iteration on the Gram matrix.
pub const FULL_SVD_MAX_DIM: usize = 256;

/// Relative singular-value cutoff used by [`rank_of`] when callers have no
/// better value.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// BᵀB with a larger condition number is treated as singular.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 10_000;

pub fn ensure_finite(m: &Matrix, name: &str) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::invalid(format!(
                    "{name} has a non-finite entry at row {i}, column {j}"
                )));
            }
        }
    }
    Ok(())
}

fn ensure_nonempty(m: &Matrix, name: &str) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::invalid(format!(
            "{name} has a zero dimension ({}x{})",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Largest singular value of `m`.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    ensure_nonempty(m, "matrix")?;
    ensure_finite(m, "matrix")?;
    if m.nrows().max(m.ncols()) <= FULL_SVD_MAX_DIM {
        Ok(m.singular_values().max())
    } else {
        Ok(power_iteration_norm(m))
    }
}

/// Power iteration on MᵀM (or MMᵀ when M is wide), started from the
/// normalized all-ones vector.
fn power_iteration_norm(m: &Matrix) -> f64 {
    let wide = m.ncols() > m.nrows();
    let dim = if wide { m.nrows() } else { m.ncols() };
    let mut v = Vector::from_element(dim, 1.0 / (dim as f64).sqrt());
    let mut lambda = 0.0_f64;
    for _ in 0..POWER_MAX_ITERS {
        let w = if wide {
            m * m.tr_mul(&v)
        } else {
            m.tr_mul(&(m * &v))
        };
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let converged = (next - lambda).abs() <= POWER_TOL * next.abs();
        lambda = next;
        if converged {
            break;
        }
    }
    lambda.max(0.0).sqrt()
}

/// Number of singular values above `tol` times the largest one.
pub fn rank_of(m: &Matrix, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("rank tolerance must be positive, got {tol}")));
    }
    ensure_nonempty(m, "matrix")?;
    ensure_finite(m, "matrix")?;
    let sv = m.singular_values();
    let largest = sv.max();
    if largest == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > tol * largest).count())
}

/// Cholesky-based definiteness test on the symmetric part of `m`.
pub fn is_positive_definite(m: &Matrix) -> Result<bool> {
    if !m.is_square() {
        return Err(Error::invalid(format!(
            "definiteness test needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    ensure_nonempty(m, "matrix")?;
    ensure_finite(m, "matrix")?;
    let sym = (m + m.transpose()) * 0.5;
    Ok(cholesky_pivots_positive(sym))
}

fn cholesky_pivots_positive(mut a: Matrix) -> bool {
    let n = a.nrows();
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= a[(j, k)] * a[(j, k)];
        }
        if !(pivot > 0.0) {
            return false;
        }
        let root = pivot.sqrt();
        a[(j, j)] = root;
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = v / root;
        }
    }
    true
}

/// Cholesky factor of BᵀB, rejecting numerically singular Gram matrices.
pub fn input_gram_cholesky(b: &Matrix) -> Result<Cholesky<f64, Dyn>> {
    ensure_nonempty(b, "B")?;
    ensure_finite(b, "B")?;
    let gram = b.tr_mul(b);
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_GRAM_CONDITION) {
        return Err(Error::RankDeficient { condition });
    }
    Cholesky::new(gram).ok_or(Error::RankDeficient { condition })
}

#[derive(Debug, Clone)]
pub struct ProjectedDynamics {
    /// P = I − B(BᵀB)⁻¹Bᵀ, the orthogonal projector onto range(B)^⊥.
    pub projector: Matrix,
    /// P·A
    pub projected: Matrix,
    /// ‖P·A‖₂
    pub a_n: f64,
}

pub fn projected_dynamics(a: &Matrix, b: &Matrix) -> Result<ProjectedDynamics> {
    ensure_nonempty(a, "A")?;
    ensure_finite(a, "A")?;
    if !a.is_square() || b.nrows() != a.nrows() {
        return Err(Error::invalid(format!(
            "A is {}x{} and B is {}x{}; expected A n×n and B n×m",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let chol = input_gram_cholesky(b)?;
    // (BᵀB)⁻¹Bᵀ via a solve, never an explicit inverse.
    let pinv = chol.solve(&b.transpose());
    let n = a.nrows();
    let mut projector = Matrix::identity(n, n) - b * pinv;
    projector = (&projector + projector.transpose()) * 0.5;
    let projected = &projector * a;
    let a_n = spectral_norm(&projected)?;
    Ok(ProjectedDynamics {
        projector,
        projected,
        a_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    // Independent route: eigenvalues of MᵀM from the symmetric eigensolver.
    fn eig_norm(m: &Matrix) -> f64 {
        SymmetricEigen::new(m.tr_mul(m)).eigenvalues.max().sqrt()
    }

    #[test]
    fn identity_and_diagonal_norms() {
        assert_eq!(spectral_norm(&Matrix::identity(4, 4)).unwrap(), 1.0);
        let d = dmatrix![3.0, 0.0; 0.0, -4.0];
        assert!((spectral_norm(&d).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn norm_matches_eigen_oracle_on_rectangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = random_matrix(&mut rng, 5, 3);
            let got = spectral_norm(&m).unwrap();
            assert!((got - eig_norm(&m)).abs() < 1e-9, "{got} vs {}", eig_norm(&m));
        }
    }

    #[test]
    fn power_iteration_path_agrees_with_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, FULL_SVD_MAX_DIM + 20, FULL_SVD_MAX_DIM + 4);
        let svd = m.singular_values().max();
        let pow = spectral_norm(&m).unwrap();
        assert!(((pow - svd) / svd).abs() < 1e-9);
        let wide = m.transpose();
        assert!(((spectral_norm(&wide).unwrap() - svd) / svd).abs() < 1e-9);
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(
            spectral_norm(&Matrix::zeros(0, 3)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn projection_of_full_rank_square_input_is_zero() {
        let a = dmatrix![2.0, 1.0; -1.0, 3.0];
        let pd = projected_dynamics(&a, &Matrix::identity(2, 2)).unwrap();
        assert!(pd.projector.norm() < 1e-14);
        assert!(pd.a_n < 1e-14);
    }

    #[test]
    fn projection_two_by_two_by_hand() {
        let a = dmatrix![1.5, 0.0; 0.0, 0.5];
        let b = dmatrix![1.0; 0.0];
        let pd = projected_dynamics(&a, &b).unwrap();
        assert!((pd.projector - dmatrix![0.0, 0.0; 0.0, 1.0]).norm() < 1e-14);
        assert!((pd.projected - dmatrix![0.0, 0.0; 0.0, 0.5]).norm() < 1e-14);
        assert!((pd.a_n - 0.5).abs() < 1e-14);
    }

    #[test]
    fn singular_gram_is_rank_deficiency() {
        let a = Matrix::identity(3, 3);
        let b = dmatrix![1.0, 1.0; 2.0, 2.0; 0.0, 0.0];
        assert!(matches!(
            projected_dynamics(&a, &b),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_of(&Matrix::identity(5, 5), DEFAULT_RANK_TOL).unwrap(), 5);
        let m = dmatrix![1.0, 1.0, 0.0; 2.0, 2.0, 1.0; 3.0, 3.0, 0.0];
        assert_eq!(rank_of(&m, DEFAULT_RANK_TOL).unwrap(), 2);
        assert_eq!(rank_of(&Matrix::zeros(2, 2), DEFAULT_RANK_TOL).unwrap(), 0);
        assert!(rank_of(&m, 0.0).is_err());
    }

    #[test]
    fn definiteness_examples() {
        assert!(is_positive_definite(&Matrix::identity(3, 3)).unwrap());
        assert!(!is_positive_definite(&dmatrix![1.0, 0.0; 0.0, 0.0]).unwrap());
        assert!(is_positive_definite(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn definiteness_agrees_with_smallest_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 1000 {
            let n = rng.random_range(1..7);
            let g = random_matrix(&mut rng, n, n);
            let shift = rng.random_range(-1.0..1.0);
            let m = g.tr_mul(&g) * 0.5 + Matrix::identity(n, n) * shift;
            let lmin = SymmetricEigen::new(m.clone()).eigenvalues.min();
            if lmin.abs() < 1e-8 {
                continue;
            }
            assert_eq!(is_positive_definite(&m).unwrap(), lmin > 0.0);
            checked += 1;
        }
    }

    proptest! {
        #[test]
        fn norm_is_transpose_invariant(seed in any::<u64>(), r in 1usize..8, c in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, r, c);
            let a = spectral_norm(&m).unwrap();
            let b = spectral_norm(&m.transpose()).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
        }

        #[test]
        fn norm_is_submultiplicative(seed in any::<u64>(), r in 1usize..7, k in 1usize..7, c in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, r, k);
            let n = random_matrix(&mut rng, k, c);
            let lhs = spectral_norm(&(&m * &n)).unwrap();
            let rhs = spectral_norm(&m).unwrap() * spectral_norm(&n).unwrap();
            prop_assert!(lhs <= rhs + 1e-9);
        }

        #[test]
        fn projector_is_idempotent_and_annihilates_b(seed in any::<u64>(), n in 2usize..8, m_frac in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = 1 + ((n - 1) as f64 * m_frac) as usize;
            let a = random_matrix(&mut rng, n, n);
            let b = random_matrix(&mut rng, n, m);
            prop_assume!(input_gram_cholesky(&b).is_ok());
            let pd = projected_dynamics(&a, &b).unwrap();
            let p = &pd.projector;
            prop_assert!((p * p - p).norm() <= 1e-9);
            prop_assert!((p * &b).norm() <= 1e-9);
            prop_assert!((p - p.transpose()).norm() <= 1e-10);
        }
    }
}
