//! Adam ascent on the projected divergence over unconstrained `r × d`
//! matrices.
//!
//! The objective is flat along directions that keep the row space, so
//! convergence is judged on objective plateaus rather than gradient norm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{self, GaussianParams};
use crate::linalg::{self, Matrix};

const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentOptions {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub patience: usize,
    /// Seed for [`random_init`].
    pub seed: u64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iters: 5000,
            rel_tol: 1e-9,
            patience: 50,
            seed: 0,
        }
    }
}

impl AscentOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("epsilon", self.epsilon),
            ("rel_tol", self.rel_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Plateau,
    MaxIters,
    SingularBoundary,
}

#[derive(Debug, Clone)]
pub struct AscentTrace {
    /// `(iteration, objective)` for the starting point and every accepted
    /// update.
    pub iterates: Vec<(usize, f64)>,
    /// Best iterate seen, which is never worse than the starting point.
    pub final_matrix: Matrix,
    pub final_kld: f64,
    pub converged: bool,
    pub iterations_run: usize,
    pub stop_reason: StopReason,
}

impl AscentTrace {
    pub fn initial_kld(&self) -> f64 {
        self.iterates[0].1
    }

    pub fn improvement(&self) -> f64 {
        self.final_kld - self.initial_kld()
    }
}

struct Moments {
    m1: Matrix,
    m2: Matrix,
    a_s1: Matrix,
    a_s2: Matrix,
}

fn moments(a: &Matrix, p1: &GaussianParams, p2: &GaussianParams) -> Moments {
    let a_s1 = a * p1.covariance();
    let a_s2 = a * p2.covariance();
    let m1 = linalg::symmetrize(&(&a_s1 * a.transpose()));
    let m2 = linalg::symmetrize(&(&a_s2 * a.transpose()));
    Moments { m1, m2, a_s1, a_s2 }
}

/// Gradient of `D(N(Aμ1, AΣ1Aᵀ) ‖ N(Aμ2, AΣ2Aᵀ))` with respect to `A`.
pub fn kld_gradient(a: &Matrix, p1: &GaussianParams, p2: &GaussianParams) -> Result<Matrix> {
    if a.ncols() != p1.dim() || p1.dim() != p2.dim() {
        return Err(Error::DimensionMismatch(format!(
            "projection has {} columns, classes have dimension {} and {}",
            a.ncols(),
            p1.dim(),
            p2.dim()
        )));
    }
    let mm = moments(a, p1, p2);
    linalg::spd_check(&mm.m1)?;
    linalg::spd_check(&mm.m2)?;
    let c1 = linalg::cholesky(&mm.m1)?;
    let c2 = linalg::cholesky(&mm.m2)?;
    let delta = p2.mean() - p1.mean();
    let a_delta = a * &delta;
    let w = c2.solve(&a_delta);

    let m2inv_as2 = c2.solve(&mm.a_s2);
    let m1inv_as1 = c1.solve(&mm.a_s1);
    let m2inv_as1 = c2.solve(&mm.a_s1);
    let m2inv_m1_m2inv_as2 = c2.solve(&(&mm.m1 * &m2inv_as2));
    let quad = &w * delta.transpose() - &w * (w.transpose() * &mm.a_s2);

    Ok(m2inv_as2 - m1inv_as1 + m2inv_as1 - m2inv_m1_m2inv_as2 + quad)
}

/// Seeded standard-normal `r × d` matrix with unit-norm rows.
pub fn random_init(r: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Matrix::from_fn(r, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    for mut row in a.row_iter_mut() {
        let n = row.norm();
        row /= n;
    }
    a
}

fn objective(a: &Matrix, p1: &GaussianParams, p2: &GaussianParams) -> Option<f64> {
    let mm = moments(a, p1, p2);
    if linalg::spd_check(&mm.m1).is_err() || linalg::spd_check(&mm.m2).is_err() {
        return None;
    }
    gaussian::kld_projected(a, p1, p2)
        .ok()
        .filter(|v| v.is_finite())
}

/// Maximizes the projected divergence from `a0` with Adam updates.
///
/// A step that leaves either projected covariance non-SPD is halved up to 20
/// times before the run stops at the singular boundary. The run also stops
/// when the best objective improves by less than `rel_tol` (relative) over
/// `patience` iterations, or after `max_iters` updates.
pub fn gradient_ascent(
    a0: &Matrix,
    p1: &GaussianParams,
    p2: &GaussianParams,
    opts: &AscentOptions,
) -> Result<AscentTrace> {
    opts.validate()?;
    let r = a0.nrows();
    if linalg::numerical_rank(a0) < r {
        return Err(Error::RankDeficient {
            rank: linalg::numerical_rank(a0),
            expected: r,
        });
    }
    let start = gaussian::kld_projected(a0, p1, p2)?;

    let mut a = a0.clone();
    let mut m = Matrix::zeros(a.nrows(), a.ncols());
    let mut v = m.clone();
    let mut iterates = vec![(0, start)];
    let mut best = (start, a.clone());
    // Best objective after each iteration, for the plateau test.
    let mut best_history = vec![start];
    let mut stop_reason = StopReason::MaxIters;
    let mut iterations_run = 0;

    for t in 1..=opts.max_iters {
        let grad = kld_gradient(&a, p1, p2)?;
        m = &m * opts.beta1 + &grad * (1.0 - opts.beta1);
        v = &v * opts.beta2 + grad.component_mul(&grad) * (1.0 - opts.beta2);
        let bc1 = 1.0 - opts.beta1.powi(t as i32);
        let bc2 = 1.0 - opts.beta2.powi(t as i32);
        let mut step = m.zip_map(&v, |mi, vi| {
            opts.learning_rate * (mi / bc1) / ((vi / bc2).sqrt() + opts.epsilon)
        });

        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = &a + &step;
            if let Some(val) = objective(&candidate, p1, p2) {
                accepted = Some((candidate, val));
                break;
            }
            step *= 0.5;
        }
        let Some((next, val)) = accepted else {
            stop_reason = StopReason::SingularBoundary;
            break;
        };
        a = next;
        iterations_run = t;
        iterates.push((t, val));
        if val > best.0 {
            best = (val, a.clone());
        }
        best_history.push(best.0);

        if t >= opts.patience {
            let past = best_history[t - opts.patience];
            let gain = (best.0 - past) / past.abs().max(f64::MIN_POSITIVE);
            if gain < opts.rel_tol {
                stop_reason = StopReason::Plateau;
                break;
            }
        }
    }

    Ok(AscentTrace {
        iterates,
        final_matrix: best.1,
        final_kld: best.0,
        converged: stop_reason == StopReason::Plateau,
        iterations_run,
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;
    use crate::projections;

    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
        let g = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &g * g.transpose() / d as f64 + Matrix::identity(d, d) * 0.3
    }

    fn random_pair(seed: u64, d: usize, shared: bool) -> (GaussianParams, GaussianParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s1 = random_spd(&mut rng, d);
        let s2 = if shared {
            s1.clone()
        } else {
            random_spd(&mut rng, d)
        };
        let m1 = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let m2 = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        (
            GaussianParams::new(m1, s1).unwrap(),
            GaussianParams::new(m2, s2).unwrap(),
        )
    }

    fn finite_difference(a: &Matrix, p1: &GaussianParams, p2: &GaussianParams, h: f64) -> Matrix {
        Matrix::from_fn(a.nrows(), a.ncols(), |i, j| {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[(i, j)] += h;
            am[(i, j)] -= h;
            let fp = gaussian::kld_projected(&ap, p1, p2).unwrap();
            let fm = gaussian::kld_projected(&am, p1, p2).unwrap();
            (fp - fm) / (2.0 * h)
        })
    }

    fn max_rel_err(g: &Matrix, fd: &Matrix) -> f64 {
        let scale = fd.amax().max(1e-8);
        g.zip_map(fd, |x, y| (x - y).abs() / y.abs().max(scale * 1e-3))
            .max()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (p1, p2) = random_pair(5, 5, false);
        let a = random_init(2, 5, 9);
        let g = kld_gradient(&a, &p1, &p2).unwrap();
        let fd = finite_difference(&a, &p1, &p2, 1e-5);
        assert!(max_rel_err(&g, &fd) < 1e-5, "{}", max_rel_err(&g, &fd));
    }

    #[test]
    fn gradient_is_flat_along_row_space() {
        let (p1, p2) = random_pair(6, 6, false);
        let a = projections::algorithm1(&p1, &p2, 6).unwrap().matrix;
        let g = kld_gradient(&a, &p1, &p2).unwrap();
        let t = Matrix::identity(6, 6) + random_init(6, 6, 1) * 0.1;
        let dir = &t * &a - &a;
        assert!(g.dot(&dir).abs() < 1e-6);
    }

    #[test]
    fn lda_row_is_stationary_for_shared_covariance() {
        let (p1, p2) = random_pair(7, 5, true);
        let a = projections::lda_direction(&p1, &p2).unwrap().matrix;
        let g = kld_gradient(&a, &p1, &p2).unwrap();
        // Remove the component that only rescales the row.
        let row = a.row(0).transpose();
        let gr = g.row(0).transpose();
        let off = &gr - &row * row.dot(&gr);
        assert!(off.norm() < 1e-6, "{}", off.norm());
    }

    #[test]
    fn gradient_rejects_singular_projection() {
        let (p1, p2) = random_pair(8, 3, false);
        let a = Matrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert!(matches!(
            kld_gradient(&a, &p1, &p2),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn ascent_keeps_optimum_for_shared_covariance() {
        let (p1, p2) = random_pair(9, 8, true);
        let a0 = projections::algorithm1(&p1, &p2, 1).unwrap().matrix;
        let tr = gradient_ascent(&a0, &p1, &p2, &AscentOptions::default()).unwrap();
        assert!(tr.improvement().abs() < 1e-9);
        assert!(tr.improvement() >= 0.0);
    }

    #[test]
    fn ascent_from_random_start_improves_and_logs_true_objective() {
        let (p1, p2) = random_pair(10, 6, false);
        let a0 = random_init(2, 6, 3);
        let opts = AscentOptions {
            max_iters: 300,
            ..AscentOptions::default()
        };
        let tr = gradient_ascent(&a0, &p1, &p2, &opts).unwrap();
        assert!(tr.final_kld > tr.initial_kld());
        let recomputed = gaussian::kld_projected(&tr.final_matrix, &p1, &p2).unwrap();
        assert_eq!(recomputed, tr.final_kld);
        assert!(tr.iterates.iter().all(|(_, v)| v.is_finite()));
    }

    #[test]
    fn ascent_rejects_rank_deficient_start() {
        let (p1, p2) = random_pair(11, 3, false);
        let a = Matrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        let res = gradient_ascent(&a, &p1, &p2, &AscentOptions::default());
        assert!(matches!(
            res,
            Err(Error::RankDeficient {
                rank: 1,
                expected: 2
            })
        ));
    }

    #[test]
    fn options_validation() {
        let bad = AscentOptions {
            beta1: 1.0,
            ..AscentOptions::default()
        };
        assert!(bad.validate().is_err());
        let bad = AscentOptions {
            patience: 0,
            ..AscentOptions::default()
        };
        assert!(bad.validate().is_err());
        assert!(AscentOptions::default().validate().is_ok());
    }

    #[test]
    fn random_init_is_seeded_and_unit_rows() {
        let a = random_init(3, 7, 42);
        assert_eq!(a, random_init(3, 7, 42));
        for row in a.row_iter() {
            assert!((row.norm() - 1.0).abs() < 1e-15);
        }
    }
}
