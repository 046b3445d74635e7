//! Gaussian class parameters, divergences between them, and estimation from
//! labeled samples.
//!
//! All log-determinants go through Cholesky factors. KL divergences that come
//! out slightly negative from round-off (down to `-1e-10`) are clamped to
//! zero; anything more negative is reported as an error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// Round-off allowance below zero before a divergence is treated as invalid.
pub const NEGATIVE_KLD_TOL: f64 = 1e-10;

/// Mean and covariance of one Gaussian class.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: Vector,
    covariance: Matrix,
}

impl GaussianParams {
    /// Validates shapes, finiteness, symmetry (within `1e-8·‖Σ‖_F`) and the
    /// SPD rule. The stored covariance is the symmetrized input.
    pub fn new(mean: Vector, covariance: Matrix) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {d} but covariance is {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        linalg::check_finite_vec(&mean)?;
        linalg::check_finite(&covariance)?;
        let asym = (&covariance - covariance.transpose()).norm();
        if asym > 1e-8 * covariance.norm() {
            return Err(Error::InvalidArgument(format!(
                "covariance is not symmetric (‖Σ-Σᵀ‖_F = {asym:e})"
            )));
        }
        let covariance = linalg::symmetrize(&covariance);
        linalg::spd_check(&covariance)?;
        Ok(Self { mean, covariance })
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: Vector::zeros(d),
            covariance: Matrix::identity(d, d),
        }
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Pushforward under `x ↦ A·x`: `(Aμ, AΣAᵀ)`.
    pub fn project(&self, a: &Matrix) -> Result<Self> {
        if a.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "projection has {} columns, parameters have dimension {}",
                a.ncols(),
                self.dim()
            )));
        }
        let cov = linalg::symmetrize(&(a * &self.covariance * a.transpose()));
        Self::new(a * &self.mean, cov)
    }

    /// Pushforward under `x ↦ A·(x - c)`.
    pub fn project_affine(&self, a: &Matrix, center: Option<&Vector>) -> Result<Self> {
        match center {
            None => self.project(a),
            Some(c) => {
                let shifted = Self {
                    mean: &self.mean - c,
                    covariance: self.covariance.clone(),
                };
                shifted.project(a)
            }
        }
    }
}

/// Total KL divergence with its mean-driven and covariance-driven parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KldBreakdown {
    pub total: f64,
    pub d_mu: f64,
    pub d_sigma: f64,
    /// Optional per-direction scores as `(index, score)` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<(usize, f64)>>,
}

fn check_pair(p1: &GaussianParams, p2: &GaussianParams) -> Result<()> {
    if p1.dim() != p2.dim() {
        return Err(Error::DimensionMismatch(format!(
            "class dimensions differ: {} vs {}",
            p1.dim(),
            p2.dim()
        )));
    }
    Ok(())
}

fn clamp_divergence(x: f64) -> Result<f64> {
    if x >= 0.0 {
        Ok(x)
    } else if x >= -NEGATIVE_KLD_TOL {
        Ok(0.0)
    } else {
        Err(Error::NegativeDivergence(x))
    }
}

/// Mean-driven and covariance-driven divergence terms for explicit moments.
fn split_raw(m1: &Vector, s1: &Matrix, m2: &Vector, s2: &Matrix) -> Result<(f64, f64)> {
    let d = m1.len() as f64;
    let c1 = linalg::cholesky(s1)?;
    let c2 = linalg::cholesky(s2)?;
    let logdet_ratio = linalg::chol_logdet(&c2) - linalg::chol_logdet(&c1);
    // tr(Σ2⁻¹Σ1) = ‖L2⁻¹ L1‖_F²
    let l1 = c1.l();
    let w = c2
        .l_dirty()
        .solve_lower_triangular(&l1)
        .expect("Cholesky factor has a positive diagonal");
    let trace = w.norm_squared();
    let delta = m2 - m1;
    let z = c2
        .l_dirty()
        .solve_lower_triangular(&delta)
        .expect("Cholesky factor has a positive diagonal");
    let d_mu = 0.5 * z.norm_squared();
    let d_sigma = 0.5 * (logdet_ratio - d + trace);
    Ok((d_mu, d_sigma))
}

/// `D(p1 ‖ p2)` in nats.
pub fn kld(p1: &GaussianParams, p2: &GaussianParams) -> Result<f64> {
    check_pair(p1, p2)?;
    let (d_mu, d_sigma) = split_raw(&p1.mean, &p1.covariance, &p2.mean, &p2.covariance)?;
    clamp_divergence(d_mu + d_sigma)
}

/// Mean-driven and covariance-driven parts of `D(p1 ‖ p2)`; the mean part
/// uses `Σ2⁻¹`, so the split is not symmetric in the pair.
pub fn kld_split(p1: &GaussianParams, p2: &GaussianParams) -> Result<KldBreakdown> {
    check_pair(p1, p2)?;
    let (d_mu, d_sigma) = split_raw(&p1.mean, &p1.covariance, &p2.mean, &p2.covariance)?;
    let total = clamp_divergence(d_mu + d_sigma)?;
    Ok(KldBreakdown {
        total,
        d_mu: d_mu.max(0.0),
        d_sigma: clamp_divergence(d_sigma)?,
        components: None,
    })
}

/// Divergence between the pushforwards `(Aμ_k, AΣ_kAᵀ)`.
pub fn kld_projected(a: &Matrix, p1: &GaussianParams, p2: &GaussianParams) -> Result<f64> {
    check_pair(p1, p2)?;
    if a.ncols() != p1.dim() {
        return Err(Error::DimensionMismatch(format!(
            "projection has {} columns, parameters have dimension {}",
            a.ncols(),
            p1.dim()
        )));
    }
    linalg::check_finite(a)?;
    let r = a.nrows();
    let rank = linalg::numerical_rank(a);
    if rank < r {
        return Err(Error::RankDeficient { rank, expected: r });
    }
    let s1 = linalg::symmetrize(&(a * &p1.covariance * a.transpose()));
    let s2 = linalg::symmetrize(&(a * &p2.covariance * a.transpose()));
    let (d_mu, d_sigma) = split_raw(&(a * &p1.mean), &s1, &(a * &p2.mean), &s2)?;
    clamp_divergence(d_mu + d_sigma)
}

/// Chernoff exponent at mixing weight `s`.
fn chernoff_exponent(
    s: f64,
    delta: &Vector,
    s1: &Matrix,
    s2: &Matrix,
    logdet1: f64,
    logdet2: f64,
) -> Result<f64> {
    let mix = s1 * s + s2 * (1.0 - s);
    let chol = linalg::cholesky(&mix)?;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(delta)
        .expect("Cholesky factor has a positive diagonal");
    let quad = z.norm_squared();
    let logdet_mix = linalg::chol_logdet(&chol);
    Ok(0.5 * s * (1.0 - s) * quad + 0.5 * (logdet_mix - s * logdet1 - (1.0 - s) * logdet2))
}

/// Chernoff information, maximizing the (concave) exponent over `s ∈ [0,1]`
/// by golden-section search to a bracket width of `1e-10`.
pub fn chernoff_information(p1: &GaussianParams, p2: &GaussianParams) -> Result<f64> {
    check_pair(p1, p2)?;
    let delta = &p2.mean - &p1.mean;
    let ld1 = linalg::spd_logdet(&p1.covariance)?;
    let ld2 = linalg::spd_logdet(&p2.covariance)?;
    let f = |s: f64| chernoff_exponent(s, &delta, &p1.covariance, &p2.covariance, ld1, ld2);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > 1e-10 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1)?;
        }
    }
    let best = f(0.5 * (lo + hi))?.max(f1).max(f2);
    clamp_divergence(best)
}

/// Per-direction divergence score for equal-mean classes:
/// `g(λ) = ½(ln λ − 1 + 1/λ)`.
pub fn g_score(lambda: f64) -> Result<f64> {
    component_kld(0.0, lambda)
}

/// `D(N(0,1) ‖ N(m, λ)) = ½(ln λ − 1 + (1 + m²)/λ)`.
pub fn component_kld(m: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::NonPositiveInput(lambda));
    }
    if !m.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let v = 0.5 * (lambda.ln() - 1.0 + (1.0 + m * m) / lambda);
    Ok(v.max(0.0))
}

/// Samples with integer class labels in `1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Matrix,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(samples: Matrix, labels: Vec<usize>) -> Result<Self> {
        if samples.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} samples but {} labels",
                samples.nrows(),
                labels.len()
            )));
        }
        if labels.contains(&0) {
            return Err(Error::InvalidArgument("class labels start at 1".into()));
        }
        linalg::check_finite(&samples)?;
        Ok(Self { samples, labels })
    }

    /// Stacks per-class sample blocks, labelling block `k` as class `k+1`.
    pub fn from_classes(blocks: &[Matrix]) -> Result<Self> {
        let d = blocks.first().map(|b| b.ncols()).unwrap_or(0);
        if blocks.iter().any(|b| b.ncols() != d) {
            return Err(Error::DimensionMismatch(
                "class blocks differ in width".into(),
            ));
        }
        let n: usize = blocks.iter().map(|b| b.nrows()).sum();
        let mut samples = Matrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        let mut row = 0;
        for (k, b) in blocks.iter().enumerate() {
            samples.rows_mut(row, b.nrows()).copy_from(b);
            labels.extend(std::iter::repeat_n(k + 1, b.nrows()));
            row += b.nrows();
        }
        Self::new(samples, labels)
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    /// Distinct labels, ascending.
    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn class_count(&self, class_id: usize) -> usize {
        self.labels.iter().filter(|&&l| l == class_id).count()
    }

    /// Rows belonging to `class_id`, in dataset order.
    pub fn class_samples(&self, class_id: usize) -> Matrix {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.labels[i] == class_id)
            .collect();
        self.samples.select_rows(idx.iter())
    }

    /// Applies `x ↦ A·(x - c)` to every sample.
    pub fn project(&self, a: &Matrix, center: Option<&Vector>) -> Result<Self> {
        if a.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "projection has {} columns, data has {}",
                a.ncols(),
                self.dim()
            )));
        }
        let mut x = self.samples.clone();
        if let Some(c) = center {
            for mut row in x.row_iter_mut() {
                row -= c.transpose();
            }
        }
        Self::new(x * a.transpose(), self.labels.clone())
    }
}

fn mean_and_scatter(x: &Matrix) -> (Vector, Matrix) {
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let scatter = centered.transpose() * &centered;
    (mean, scatter)
}

/// Sample mean and unbiased covariance of one class, optionally with a
/// ridge of `ridge·(tr S / d)·I` added.
pub fn estimate_params(
    data: &LabeledDataset,
    class_id: usize,
    ridge: f64,
) -> Result<GaussianParams> {
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge must be nonnegative, got {ridge}"
        )));
    }
    let d = data.dim();
    let n = data.class_count(class_id);
    if n < d + 1 {
        return Err(Error::InsufficientSamples {
            class: class_id,
            found: n,
            needed: d + 1,
        });
    }
    let x = data.class_samples(class_id);
    let (mean, scatter) = mean_and_scatter(&x);
    let mut cov = linalg::symmetrize(&(scatter / (n as f64 - 1.0)));
    if ridge > 0.0 {
        let shift = ridge * cov.trace() / d as f64;
        for i in 0..d {
            cov[(i, i)] += shift;
        }
    }
    GaussianParams::new(mean, cov)
}

/// Common covariance after re-centering every class on its own mean
/// (divisor `n − K`).
pub fn pooled_covariance(data: &LabeledDataset) -> Result<Matrix> {
    let classes = data.classes();
    let d = data.dim();
    let n = data.len();
    if n <= classes.len() {
        return Err(Error::InsufficientSamples {
            class: 0,
            found: n,
            needed: classes.len() + 1,
        });
    }
    let mut scatter = Matrix::zeros(d, d);
    for &k in &classes {
        let (_, s) = mean_and_scatter(&data.class_samples(k));
        scatter += s;
    }
    Ok(linalg::symmetrize(&(scatter / (n - classes.len()) as f64)))
}
