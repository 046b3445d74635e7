//! Dense linear-algebra kernels shared by the rest of the crate.
//!
//! Everything here is a pure function of its inputs. Symmetric inputs are
//! symmetrized as `(M + Mᵀ)/2` before factorization, eigenvalues are always
//! reported in descending order with ties kept in original index order, and
//! positive definiteness is judged against `ε_pd = 1e-10·max(1, λ_max)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative factor for the SPD acceptance threshold.
pub const SPD_REL_TOL: f64 = 1e-10;
/// Relative factor (of the largest singular value) for numerical rank.
pub const RANK_REL_TOL: f64 = 1e-10;

/// Eigendecomposition of a real symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues, descending.
    pub eigenvalues: Vector,
    /// Orthonormal eigenvectors stored as columns, paired with `eigenvalues`.
    pub eigenvectors: Matrix,
}

/// Solution of the symmetric-definite pencil `B·v = λ·C·v`.
#[derive(Debug, Clone)]
pub struct GenEigen {
    /// Generalized eigenvalues, descending.
    pub eigenvalues: Vector,
    /// Generalized eigenvectors as unit-norm columns.
    pub eigenvectors: Matrix,
}

pub fn check_finite(m: &Matrix) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput)
    }
}

pub fn check_finite_vec(v: &Vector) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput)
    }
}

fn check_square(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// SPD threshold for a matrix whose largest eigenvalue is `lambda_max`.
pub fn spd_tolerance(lambda_max: f64) -> f64 {
    SPD_REL_TOL * lambda_max.max(1.0)
}

pub fn sym_eig(m: &Matrix) -> Result<SymEigen> {
    check_square(m, "symmetric eigenproblem input")?;
    check_finite(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(SymEigen {
            eigenvalues: Vector::zeros(0),
            eigenvectors: Matrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort: equal eigenvalues keep their original index order.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// Verifies that `m` is SPD under the `ε_pd` rule, returning its eigendecomposition.
pub fn spd_check(m: &Matrix) -> Result<SymEigen> {
    let eig = sym_eig(m)?;
    let n = eig.eigenvalues.len();
    if n == 0 {
        return Ok(eig);
    }
    let lmax = eig.eigenvalues[0];
    let lmin = eig.eigenvalues[n - 1];
    let tol = spd_tolerance(lmax);
    if lmin <= tol {
        return Err(Error::NotPositiveDefinite {
            eigenvalue: lmin,
            tolerance: tol,
        });
    }
    Ok(eig)
}

fn spd_power(m: &Matrix, power: f64) -> Result<Matrix> {
    let eig = spd_check(m)?;
    let v = &eig.eigenvectors;
    let scaled = Vector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| l.powf(power)),
    );
    let out = v * Matrix::from_diagonal(&scaled) * v.transpose();
    Ok(symmetrize(&out))
}

/// Symmetric inverse square root `M^{-1/2}` of an SPD matrix.
pub fn spd_inv_sqrt(m: &Matrix) -> Result<Matrix> {
    spd_power(m, -0.5)
}

/// Symmetric square root `M^{1/2}` of an SPD matrix.
pub fn spd_sqrt(m: &Matrix) -> Result<Matrix> {
    spd_power(m, 0.5)
}

/// Cholesky factorization; failure is reported with the offending eigenvalue.
pub fn cholesky(m: &Matrix) -> Result<Cholesky<f64, Dyn>> {
    check_square(m, "Cholesky input")?;
    check_finite(m)?;
    match Cholesky::new(symmetrize(m)) {
        Some(c) => Ok(c),
        None => {
            let eig = sym_eig(m)?;
            let n = eig.eigenvalues.len();
            Err(Error::NotPositiveDefinite {
                eigenvalue: eig.eigenvalues[n - 1],
                tolerance: spd_tolerance(eig.eigenvalues[0]),
            })
        }
    }
}

/// `ln |M|` from the Cholesky factor.
pub fn chol_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|x| x.ln())
        .sum::<f64>()
}

pub fn spd_logdet(m: &Matrix) -> Result<f64> {
    Ok(chol_logdet(&cholesky(m)?))
}

/// Solves the SPD pencil `B·v = λ·C·v` by whitening with `C^{-1/2}`.
pub fn generalized_eig(b: &Matrix, c: &Matrix) -> Result<GenEigen> {
    check_square(b, "B")?;
    check_square(c, "C")?;
    if b.nrows() != c.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "pencil sizes differ: {} vs {}",
            b.nrows(),
            c.nrows()
        )));
    }
    spd_check(b)?;
    whitened_pencil(b, c)
}

/// Like [`generalized_eig`] but `B` only needs to be symmetric (e.g. a
/// rank-deficient between-class scatter). `C` must still be SPD.
pub fn generalized_eig_semidefinite(b: &Matrix, c: &Matrix) -> Result<GenEigen> {
    check_square(b, "B")?;
    check_square(c, "C")?;
    if b.nrows() != c.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "pencil sizes differ: {} vs {}",
            b.nrows(),
            c.nrows()
        )));
    }
    check_finite(b)?;
    whitened_pencil(b, c)
}

fn whitened_pencil(b: &Matrix, c: &Matrix) -> Result<GenEigen> {
    let c_isqrt = spd_inv_sqrt(c)?;
    let w = symmetrize(&(&c_isqrt * b * &c_isqrt));
    let eig = sym_eig(&w)?;
    let mut vecs = &c_isqrt * &eig.eigenvectors;
    for mut col in vecs.column_iter_mut() {
        let n = col.norm();
        col /= n;
    }
    Ok(GenEigen {
        eigenvalues: eig.eigenvalues,
        eigenvectors: vecs,
    })
}

/// Numerical rank with tolerance `1e-10·σ_max`.
pub fn numerical_rank(a: &Matrix) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_REL_TOL * smax).count()
}

/// Returns an orthonormal basis of the row space of `a`, row-for-row in
/// Gram-Schmidt order (row `i` of the output has a positive inner product
/// with row `i` of the input).
pub fn orthonormalize_rows(a: &Matrix) -> Result<Matrix> {
    check_finite(a)?;
    let (r, d) = a.shape();
    if r == 0 {
        return Ok(a.clone());
    }
    if r > d {
        return Err(Error::RankDeficient {
            rank: d,
            expected: r,
        });
    }
    let rank = numerical_rank(a);
    if rank < r {
        return Err(Error::RankDeficient { rank, expected: r });
    }
    let qr = a.transpose().qr();
    let mut q = qr.q();
    let rdiag = qr.r().diagonal();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if rdiag[j] < 0.0 {
            col.neg_mut();
        }
    }
    Ok(q.transpose())
}

/// Principal angles (radians, ascending) between the row spaces of two
/// row-orthonormal matrices of the same shape.
///
/// Cosines come from the singular values of `A1·A2ᵀ` and sines from the
/// component of `A2` orthogonal to `A1`; small angles are taken from the
/// sines, where `arccos` loses half the available precision.
pub fn principal_angles(a1: &Matrix, a2: &Matrix) -> Result<Vec<f64>> {
    if a1.shape() != a2.shape() {
        return Err(Error::DimensionMismatch(format!(
            "subspace bases differ in shape: {:?} vs {:?}",
            a1.shape(),
            a2.shape()
        )));
    }
    check_finite(a1)?;
    check_finite(a2)?;
    let r = a1.nrows();
    if r == 0 {
        return Ok(Vec::new());
    }
    let cross = a1 * a2.transpose();
    let mut cosines: Vec<f64> = cross
        .svd(false, false)
        .singular_values
        .iter()
        .map(|c| c.clamp(0.0, 1.0))
        .collect();
    cosines.sort_by(|a, b| b.total_cmp(a));

    let residual = a2 - (a2 * a1.transpose()) * a1;
    let mut sines: Vec<f64> = residual
        .svd(false, false)
        .singular_values
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    sines.sort_by(|a, b| a.total_cmp(b));

    let half = std::f64::consts::FRAC_1_SQRT_2;
    let mut angles: Vec<f64> = cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| if c > half { s.asin() } else { c.acos() })
        .collect();
    angles.sort_by(|a, b| a.total_cmp(b));
    Ok(angles)
}

/// Largest principal angle between the row spaces of two full-rank matrices
/// of the same shape (they need not be orthonormal).
pub fn max_principal_angle(a1: &Matrix, a2: &Matrix) -> Result<f64> {
    let b1 = orthonormalize_rows(a1)?;
    let b2 = orthonormalize_rows(a2)?;
    Ok(principal_angles(&b1, &b2)?.last().copied().unwrap_or(0.0))
}

pub fn frobenius(m: &Matrix) -> f64 {
    m.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
        let g = randn(rng, d, d);
        &g * g.transpose() / d as f64 + Matrix::identity(d, d) * 0.5
    }

    #[test]
    fn sym_eig_identity_and_diagonal() {
        let e = sym_eig(&Matrix::identity(3, 3)).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[1.0, 1.0, 1.0]);

        let m = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 1.0, 2.0]));
        let e = sym_eig(&m).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[3.0, 2.0, 1.0]);
        let expect = [0usize, 2, 1];
        for (col, &axis) in expect.iter().enumerate() {
            assert!((e.eigenvectors[(axis, col)].abs() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn sym_eig_reconstructs_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = randn(&mut rng, 10, 10);
        let m = symmetrize(&g);
        let e = sym_eig(&m).unwrap();
        let v = &e.eigenvectors;
        let rec = v * Matrix::from_diagonal(&e.eigenvalues) * v.transpose();
        assert!((&rec - &m).norm() < 1e-10 * m.norm());
        assert!((v.transpose() * v - Matrix::identity(10, 10)).norm() < 1e-10);
        for w in e.eigenvalues.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn sym_eig_rejects_nan() {
        let mut m = Matrix::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(sym_eig(&m), Err(Error::NonFiniteInput)));
    }

    #[test]
    fn inv_sqrt_cases() {
        let s = spd_inv_sqrt(&Matrix::identity(4, 4)).unwrap();
        assert!((s - Matrix::identity(4, 4)).norm() < 1e-15);

        let m = Matrix::from_diagonal(&Vector::from_vec(vec![4.0, 9.0]));
        let s = spd_inv_sqrt(&m).unwrap();
        assert!((s[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((s[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!(s[(0, 1)].abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_spd(&mut rng, 8);
        let s = spd_inv_sqrt(&m).unwrap();
        assert!((&s * &m * &s - Matrix::identity(8, 8)).norm() < 1e-8);
        assert_eq!(s, s.transpose());
    }

    #[test]
    fn inv_sqrt_rejects_indefinite() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]));
        match spd_inv_sqrt(&m) {
            Err(Error::NotPositiveDefinite { eigenvalue, .. }) => assert_eq!(eigenvalue, 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn generalized_eig_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_spd(&mut rng, 5);
        let g = generalized_eig(&m, &m).unwrap();
        for l in g.eigenvalues.iter() {
            assert!((l - 1.0).abs() < 1e-12);
        }

        let b = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 3.0]));
        let g = generalized_eig(&b, &Matrix::identity(2, 2)).unwrap();
        assert!((g.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((g.eigenvalues[1] - 2.0).abs() < 1e-14);
        assert!((g.eigenvectors[(1, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((g.eigenvectors[(0, 1)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn generalized_eig_residual_and_reciprocal_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = random_spd(&mut rng, 6);
        let c = random_spd(&mut rng, 6);
        let fwd = generalized_eig(&b, &c).unwrap();
        let scale = b.norm() + c.norm();
        for i in 0..6 {
            let v = fwd.eigenvectors.column(i);
            let res = &b * v - fwd.eigenvalues[i] * (&c * v);
            assert!(res.norm() < 1e-8 * scale);
            assert!(fwd.eigenvalues[i] > 0.0);
        }
        let rev = generalized_eig(&c, &b).unwrap();
        for i in 0..6 {
            let j = 5 - i;
            assert!(
                (rev.eigenvalues[j] - 1.0 / fwd.eigenvalues[i]).abs() < 1e-10 * rev.eigenvalues[j]
            );
            let cos = fwd
                .eigenvectors
                .column(i)
                .dot(&rev.eigenvectors.column(j))
                .abs();
            assert!(cos > 1.0 - 1e-8, "cos {cos}");
        }
    }

    #[test]
    fn orthonormalize_cases() {
        let a = Matrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let b = orthonormalize_rows(&a).unwrap();
        assert!((b[(0, 0)] - 0.6).abs() < 1e-15 && (b[(0, 1)] - 0.8).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = randn(&mut rng, 3, 10);
        let b = orthonormalize_rows(&a).unwrap();
        assert!((&b * b.transpose() - Matrix::identity(3, 3)).norm() < 1e-12);
        // Gram oracle: projecting the original rows onto span(b) loses nothing.
        let resid = &a - (&a * b.transpose()) * &b;
        assert!(resid.norm() < 1e-12 * a.norm());
        let again = orthonormalize_rows(&b).unwrap();
        let ang = principal_angles(&again, &b).unwrap();
        assert!(ang.iter().all(|&x| x < 1e-10));
    }

    #[test]
    fn orthonormalize_reports_rank() {
        let a = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        match orthonormalize_rows(&a) {
            Err(Error::RankDeficient { rank, expected }) => {
                assert_eq!((rank, expected), (1, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn principal_angle_cases() {
        let e1 = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let e2 = Matrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let diag = Matrix::from_row_slice(1, 2, &[1.0, 1.0]) / 2f64.sqrt();
        assert_eq!(principal_angles(&e1, &e1).unwrap(), vec![0.0]);
        let a = principal_angles(&e1, &e2).unwrap()[0];
        assert!((a - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let a = principal_angles(&e1, &diag).unwrap()[0];
        assert!((a - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn principal_angles_resolve_tiny_rotations() {
        let eps = 1e-12_f64;
        let a = Matrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let b = Matrix::from_row_slice(1, 3, &[eps.cos(), eps.sin(), 0.0]);
        let ang = principal_angles(&a, &b).unwrap()[0];
        assert!((ang - eps).abs() < 1e-20, "{ang}");
    }
}
