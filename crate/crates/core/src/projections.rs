//! Closed-form projection constructions.
//!
//! Two-class LDA, the large-mean construction (mean direction plus top
//! generalized eigenvectors), the small-mean construction (ranked components
//! of the whitened pair), the multiclass KLD-preserving LDA subspace, the LoL
//! baseline, and the regime rule that chooses between the two-class methods.
//!
//! Direction rankings are by score, descending; exact ties go to the larger
//! `|λ − 1|`, then to the lower eigen index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::gaussian::{self, GaussianParams};
use crate::linalg::{self, Matrix, Vector};

/// Relative tolerance under which two class means are treated as equal.
pub const EQUAL_MEANS_TOL: f64 = 1e-12;
/// Candidate directions whose residual (after removing the span already
/// selected) falls below this fraction of their norm are skipped.
const INDEPENDENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Original,
    WhitenedByClass1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lda,
    Alg1,
    Alg2,
    MulticlassLda,
    Lol,
    Refined,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Lda => "lda",
            Method::Alg1 => "alg1",
            Method::Alg2 => "alg2",
            Method::MulticlassLda => "multiclass_lda",
            Method::Lol => "lol",
            Method::Refined => "refined",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lda" => Ok(Method::Lda),
            "alg1" => Ok(Method::Alg1),
            "alg2" => Ok(Method::Alg2),
            "multiclass_lda" | "mclda" => Ok(Method::MulticlassLda),
            "lol" => Ok(Method::Lol),
            "refined" => Ok(Method::Refined),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

/// Non-fatal conditions met while building a projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    /// Means coincide, so the mean direction was replaced by the next
    /// best-ranked direction.
    EqualMeansFallback,
    /// Candidate directions dropped because they were numerically dependent
    /// on directions already selected.
    RankSubstitution { skipped: usize },
    /// Class means span fewer dimensions than `K − 1`.
    RankDeficientMeans { rank: usize, expected: usize },
}

/// A projection matrix together with how it was built and what it retains.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    /// `r × d`, rows are projection directions expressed in `frame`.
    pub matrix: Matrix,
    pub frame: Frame,
    pub method: Method,
    /// Divergence retained by the projection, in nats.
    pub achieved_kld: f64,
    /// Per-direction scores, when the method ranks directions.
    pub component_scores: Option<Vec<f64>>,
    /// Equivalent rows acting on original (uncentered) coordinates. Equal to
    /// `matrix` for original-frame results.
    pub original_rows: Matrix,
    /// Point subtracted before `original_rows` is applied (class-1 mean for
    /// whitened-frame results).
    pub center: Option<Vector>,
    pub warnings: Vec<Warning>,
}

impl ProjectionResult {
    /// Wraps an original-frame matrix, recording its projected divergence.
    pub fn from_matrix(
        matrix: Matrix,
        method: Method,
        p1: &GaussianParams,
        p2: &GaussianParams,
    ) -> Result<Self> {
        let achieved_kld = gaussian::kld_projected(&matrix, p1, p2)?;
        Ok(Self {
            original_rows: matrix.clone(),
            matrix,
            frame: Frame::Original,
            method,
            achieved_kld,
            component_scores: None,
            center: None,
            warnings: Vec::new(),
        })
    }

    pub fn rank(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.original_rows.ncols()
    }

    /// Gaussian parameters of the projected class.
    pub fn project_params(&self, p: &GaussianParams) -> Result<GaussianParams> {
        p.project_affine(&self.original_rows, self.center.as_ref())
    }

    /// Projected divergence recomputed from `original_rows`.
    pub fn recovered_kld(&self, p1: &GaussianParams, p2: &GaussianParams) -> Result<f64> {
        gaussian::kld_projected(&self.original_rows, p1, p2)
    }
}

/// Sorts indices by `scores` descending with the crate's tie rule.
pub fn rank_directions(scores: &[f64], eigenvalues: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| {
                let da = (eigenvalues[a] - 1.0).abs();
                let db = (eigenvalues[b] - 1.0).abs();
                db.total_cmp(&da)
            })
            .then_with(|| a.cmp(&b))
    });
    order
}

fn means_equal(p1: &GaussianParams, p2: &GaussianParams, tol: f64) -> bool {
    let scale = 1f64.max(p1.mean().norm()).max(p2.mean().norm());
    (p2.mean() - p1.mean()).norm() <= tol * scale
}

fn check_r(r: usize, d: usize) -> Result<()> {
    if r == 0 || r > d {
        return Err(Error::InvalidArgument(format!(
            "r must lie in [1, {d}], got {r}"
        )));
    }
    Ok(())
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

/// Greedily takes candidates in order, skipping any that are numerically
/// dependent on those already taken, until `r` are selected. Returns the
/// selected positions (into `candidates`) and the stacked rows.
fn select_independent(candidates: &[Vector], r: usize) -> Result<(Vec<usize>, Matrix)> {
    let d = candidates.first().map(|c| c.len()).unwrap_or(0);
    let mut basis: Vec<Vector> = Vec::with_capacity(r);
    let mut picked = Vec::with_capacity(r);
    for (i, c) in candidates.iter().enumerate() {
        if picked.len() == r {
            break;
        }
        let norm = c.norm();
        if norm == 0.0 || !norm.is_finite() {
            continue;
        }
        let mut res = c / norm;
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&res);
                res -= q * proj;
            }
        }
        let rn = res.norm();
        if rn <= INDEPENDENCE_TOL {
            continue;
        }
        basis.push(res / rn);
        picked.push(i);
    }
    if picked.len() < r {
        return Err(Error::RankDeficient {
            rank: picked.len(),
            expected: r,
        });
    }
    let mut stack = Matrix::zeros(r, d);
    for (row, &i) in picked.iter().enumerate() {
        stack.set_row(row, &candidates[i].transpose());
    }
    Ok((picked, stack))
}

fn solve_spd(m: &Matrix, b: &Vector) -> Result<Vector> {
    Ok(linalg::cholesky(m)?.solve(b))
}

/// Two-class LDA direction `Σ_pooled⁻¹(μ2 − μ1)` with `Σ_pooled = (Σ1+Σ2)/2`,
/// unit-normalized.
pub fn lda_direction(p1: &GaussianParams, p2: &GaussianParams) -> Result<ProjectionResult> {
    check_pair(p1, p2)?;
    if means_equal(p1, p2, EQUAL_MEANS_TOL) {
        return Err(Error::EqualMeans);
    }
    let pooled = (p1.covariance() + p2.covariance()) * 0.5;
    let a = solve_spd(&pooled, &(p2.mean() - p1.mean()))?;
    let a = &a / a.norm();
    let row = Matrix::from_row_slice(1, a.len(), a.as_slice());
    let mut res = ProjectionResult::from_matrix(row, Method::Lda, p1, p2)?;
    res.component_scores = Some(vec![res.achieved_kld]);
    Ok(res)
}

/// Large-mean construction: the first direction `Σ2⁻¹(μ2 − μ1)` carries the
/// entire mean-driven divergence; the remaining `r − 1` directions are the
/// generalized eigenvectors of `(Σ2, Σ1)` with the largest `g(λ)`. Rows are
/// returned orthonormalized in the original frame.
///
/// `component_scores[0]` is the one-dimensional divergence along the mean
/// direction; the rest are the `g` scores of the selected eigenvectors.
/// With equal means the mean direction is undefined and the top eigenvectors
/// fill every row (flagged by [`Warning::EqualMeansFallback`]).
pub fn algorithm1(p1: &GaussianParams, p2: &GaussianParams, r: usize) -> Result<ProjectionResult> {
    check_pair(p1, p2)?;
    let d = p1.dim();
    check_r(r, d)?;

    let gen = linalg::generalized_eig(p2.covariance(), p1.covariance())?;
    let lambdas: Vec<f64> = gen.eigenvalues.iter().copied().collect();
    let g: Vec<f64> = lambdas
        .iter()
        .map(|&l| gaussian::g_score(l))
        .collect::<Result<_>>()?;
    let order = rank_directions(&g, &lambdas);

    let mut warnings = Vec::new();
    let mut candidates: Vec<Vector> = Vec::with_capacity(d + 1);
    let mut scores: Vec<Option<f64>> = Vec::with_capacity(d + 1);
    let equal_means = means_equal(p1, p2, EQUAL_MEANS_TOL);
    if equal_means {
        warnings.push(Warning::EqualMeansFallback);
    } else {
        candidates.push(solve_spd(p2.covariance(), &(p2.mean() - p1.mean()))?);
        scores.push(None);
    }
    for &i in &order {
        candidates.push(gen.eigenvectors.column(i).into_owned());
        scores.push(Some(g[i]));
    }

    let (picked, stack) = select_independent(&candidates, r)?;
    let skipped = picked.last().map(|&l| l + 1 - picked.len()).unwrap_or(0);
    if skipped > 0 {
        warnings.push(Warning::RankSubstitution { skipped });
    }
    let matrix = linalg::orthonormalize_rows(&stack)?;
    let component_scores = picked
        .iter()
        .map(|&i| match scores[i] {
            Some(s) => Ok(s),
            None => {
                let c = &candidates[i];
                let row = Matrix::from_row_slice(1, c.len(), c.as_slice());
                gaussian::kld_projected(&row, p1, p2)
            }
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut res = ProjectionResult::from_matrix(matrix, Method::Alg1, p1, p2)?;
    res.component_scores = Some(component_scores);
    res.warnings = warnings;
    Ok(res)
}

/// Intermediate quantities of the whitened decomposition used by the
/// small-mean construction.
#[derive(Debug, Clone)]
pub struct WhitenedDecomposition {
    /// `Σ1^{-1/2}`.
    pub whitener: Matrix,
    /// `Σ1^{-1/2}(μ2 − μ1)`.
    pub mean_shift: Vector,
    /// Eigenvalues of `Σ1^{-1/2} Σ2 Σ1^{-1/2}`, descending.
    pub eigenvalues: Vector,
    /// Matching orthonormal eigenvectors (columns).
    pub eigenvectors: Matrix,
    /// `D(N(0,1) ‖ N(u_iᵀμ, λ_i))` for each eigenpair.
    pub component_klds: Vec<f64>,
}

/// Whitens class 1 and splits the divergence into `d` independent
/// one-dimensional terms, one per eigenvector of the whitened class-2
/// covariance. The terms sum to the full divergence.
pub fn whitened_decomposition(
    p1: &GaussianParams,
    p2: &GaussianParams,
) -> Result<WhitenedDecomposition> {
    check_pair(p1, p2)?;
    let whitener = linalg::spd_inv_sqrt(p1.covariance())?;
    let mean_shift = &whitener * (p2.mean() - p1.mean());
    let tilde = linalg::symmetrize(&(&whitener * p2.covariance() * &whitener));
    let eig = linalg::sym_eig(&tilde)?;
    let component_klds = (0..eig.eigenvalues.len())
        .map(|i| {
            let m = eig.eigenvectors.column(i).dot(&mean_shift);
            gaussian::component_kld(m, eig.eigenvalues[i])
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(WhitenedDecomposition {
        whitener,
        mean_shift,
        eigenvalues: eig.eigenvalues,
        eigenvectors: eig.eigenvectors,
        component_klds,
    })
}

/// Small-mean construction. Class 1 is whitened, the whitened class-2
/// covariance is diagonalized, and the `r` eigenvectors with the largest
/// one-dimensional divergences are kept. The result is in the whitened frame
/// (orthonormal rows); `original_rows` holds `u_iᵀΣ1^{-1/2}`, i.e. the
/// generalized eigenvectors of `(Σ2, Σ1)`, applied after centering on `μ1`.
///
/// When the whitened covariance is the identity (within `1e-8·d`), the
/// eigenbasis is arbitrary; the first direction is then taken along the
/// whitened mean shift so that it alone retains the whole divergence.
pub fn algorithm2(p1: &GaussianParams, p2: &GaussianParams, r: usize) -> Result<ProjectionResult> {
    check_pair(p1, p2)?;
    let d = p1.dim();
    check_r(r, d)?;
    let dec = whitened_decomposition(p1, p2)?;

    let tilde = linalg::symmetrize(&(&dec.whitener * p2.covariance() * &dec.whitener));
    let isotropic = (&tilde - Matrix::identity(d, d)).norm() < 1e-8 * d as f64;

    let (rows, scores) = if isotropic {
        let mu_norm = dec.mean_shift.norm();
        if mu_norm < 1e-12 {
            return Err(Error::IdenticalDistributions);
        }
        let mut candidates = vec![&dec.mean_shift / mu_norm];
        candidates.extend(dec.eigenvectors.column_iter().map(|c| c.into_owned()));
        let (_, stack) = select_independent(&candidates, d)?;
        let basis = linalg::orthonormalize_rows(&stack)?;
        let scores = basis
            .row_iter()
            .map(|u| {
                let u = u.transpose();
                let lambda = u.dot(&(&tilde * &u));
                gaussian::component_kld(u.dot(&dec.mean_shift), lambda)
            })
            .collect::<Result<Vec<f64>>>()?;
        // The mean direction stays first; the rest follow by score.
        let lambdas: Vec<f64> = basis
            .row_iter()
            .map(|u| u.dot(&(&tilde * u.transpose()).transpose()))
            .collect();
        let mut order: Vec<usize> = rank_directions(&scores[1..], &lambdas[1..])
            .into_iter()
            .map(|i| i + 1)
            .collect();
        order.insert(0, 0);
        let sel: Vec<usize> = order.into_iter().take(r).collect();
        let rows = basis.select_rows(sel.iter());
        let s: Vec<f64> = sel.iter().map(|&i| scores[i]).collect();
        (rows, s)
    } else {
        let lambdas: Vec<f64> = dec.eigenvalues.iter().copied().collect();
        let order = rank_directions(&dec.component_klds, &lambdas);
        let sel: Vec<usize> = order.into_iter().take(r).collect();
        let mut rows = Matrix::zeros(r, d);
        for (k, &i) in sel.iter().enumerate() {
            rows.set_row(k, &dec.eigenvectors.column(i).transpose());
        }
        let s: Vec<f64> = sel.iter().map(|&i| dec.component_klds[i]).collect();
        (rows, s)
    };

    let original_rows = &rows * &dec.whitener;
    let achieved_kld = scores.iter().sum();
    Ok(ProjectionResult {
        matrix: rows,
        frame: Frame::WhitenedByClass1,
        method: Method::Alg2,
        achieved_kld,
        component_scores: Some(scores),
        original_rows,
        center: Some(p1.mean().clone()),
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recommendation {
    Alg1,
    Alg2,
    CompareBoth,
}

fn finite_or_null<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else {
        s.serialize_none()
    }
}

fn null_as_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Mean/covariance split of `D(p1 ‖ p2)` and the resulting method choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub d_mu: f64,
    pub d_sigma: f64,
    pub r: usize,
    /// `d_sigma / (r − 1)`; infinite (serialized as `null`) when `r = 1`.
    #[serde(
        serialize_with = "finite_or_null",
        deserialize_with = "null_as_infinity"
    )]
    pub threshold: f64,
    pub recommendation: Recommendation,
}

/// Picks the large-mean construction when `D_μ ≥ D_Σ/(r − 1)`. The rule is
/// undefined for `r = 1`, where both constructions should be compared.
pub fn select_regime(p1: &GaussianParams, p2: &GaussianParams, r: usize) -> Result<RegimeReport> {
    if r == 0 {
        return Err(Error::InvalidArgument("r must be at least 1".into()));
    }
    let split = gaussian::kld_split(p1, p2)?;
    let (threshold, recommendation) = if r == 1 {
        (f64::INFINITY, Recommendation::CompareBoth)
    } else {
        let t = split.d_sigma / (r - 1) as f64;
        let rec = if split.d_mu >= t {
            Recommendation::Alg1
        } else {
            Recommendation::Alg2
        };
        (t, rec)
    };
    Ok(RegimeReport {
        d_mu: split.d_mu,
        d_sigma: split.d_sigma,
        r,
        threshold,
        recommendation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoMode {
    /// Follow the regime rule (comparing both when it is undefined).
    Rule,
    /// Always run both and keep the larger retained divergence.
    Compare,
}

impl FromStr for AutoMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rule" => Ok(AutoMode::Rule),
            "compare" => Ok(AutoMode::Compare),
            other => Err(Error::InvalidArgument(format!("unknown mode '{other}'"))),
        }
    }
}

/// Retained divergences closer than this (relative) count as a tie.
pub const AUTO_TIE_TOL: f64 = 1e-10;

/// Runs whichever two-class construction the mode selects. When both run,
/// the larger `achieved_kld` wins and ties go to the large-mean one.
pub fn fit_auto(
    p1: &GaussianParams,
    p2: &GaussianParams,
    r: usize,
    mode: AutoMode,
) -> Result<ProjectionResult> {
    let compare = |p1: &GaussianParams, p2: &GaussianParams| -> Result<ProjectionResult> {
        let a1 = algorithm1(p1, p2, r);
        let a2 = algorithm2(p1, p2, r);
        match (a1, a2) {
            (Ok(a1), Ok(a2)) => {
                let tie = AUTO_TIE_TOL * a1.achieved_kld.abs().max(a2.achieved_kld.abs()).max(1.0);
                Ok(if a1.achieved_kld >= a2.achieved_kld - tie {
                    a1
                } else {
                    a2
                })
            }
            (Ok(a1), Err(_)) => Ok(a1),
            (Err(_), Ok(a2)) => Ok(a2),
            (Err(e), Err(_)) => Err(e),
        }
    };
    match mode {
        AutoMode::Compare => compare(p1, p2),
        AutoMode::Rule => match select_regime(p1, p2, r)?.recommendation {
            Recommendation::Alg1 => algorithm1(p1, p2, r),
            Recommendation::Alg2 => algorithm2(p1, p2, r),
            Recommendation::CompareBoth => compare(p1, p2),
        },
    }
}

/// Between-class scatter `Σ_k (μ_k − μ̄)(μ_k − μ̄)ᵀ`.
pub fn between_class_scatter(params: &[GaussianParams]) -> Matrix {
    let d = params[0].dim();
    let k = params.len() as f64;
    let mean_bar = params
        .iter()
        .fold(Vector::zeros(d), |acc, p| acc + p.mean())
        / k;
    params.iter().fold(Matrix::zeros(d, d), |acc, p| {
        let c = p.mean() - &mean_bar;
        acc + &c * c.transpose()
    })
}

/// Sum over unordered pairs `i < j` of `D(q_i ‖ q_j)` under `a`.
fn pairwise_kld_sum(a: &Matrix, params: &[GaussianParams]) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..params.len() {
        for j in (i + 1)..params.len() {
            total += gaussian::kld_projected(a, &params[i], &params[j])?;
        }
    }
    Ok(total)
}

/// Multiclass LDA: the generalized eigenvectors of `(S_μ, Σ)` with nonzero
/// eigenvalues (`λ > 1e-10·λ_max`), orthonormalized. With a common
/// covariance the resulting `(K−1)`-dimensional subspace keeps every pairwise
/// divergence intact.
///
/// `common` defaults to the average of the class covariances. Collinear
/// means yield a smaller subspace flagged with
/// [`Warning::RankDeficientMeans`]. `achieved_kld` is the sum of projected
/// divergences over unordered class pairs.
pub fn multiclass_lda(
    params: &[GaussianParams],
    common: Option<&Matrix>,
) -> Result<ProjectionResult> {
    if params.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "multiclass LDA needs at least 2 classes, got {}",
            params.len()
        )));
    }
    let d = params[0].dim();
    if params.iter().any(|p| p.dim() != d) {
        return Err(Error::DimensionMismatch("class dimensions differ".into()));
    }
    let sigma = match common {
        Some(s) => {
            if s.shape() != (d, d) {
                return Err(Error::DimensionMismatch(format!(
                    "common covariance is {}x{}, expected {d}x{d}",
                    s.nrows(),
                    s.ncols()
                )));
            }
            s.clone()
        }
        None => {
            params
                .iter()
                .fold(Matrix::zeros(d, d), |acc, p| acc + p.covariance())
                / params.len() as f64
        }
    };
    let scatter = between_class_scatter(params);
    let gen = linalg::generalized_eig_semidefinite(&scatter, &sigma)?;
    let lmax = gen.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    if lmax <= 0.0 {
        return Err(Error::RankDeficientMeans { rank: 0 });
    }
    let keep: Vec<usize> = (0..d)
        .filter(|&i| gen.eigenvalues[i] > 1e-10 * lmax)
        .collect();
    let expected = (params.len() - 1).min(d);
    let mut warnings = Vec::new();
    if keep.len() < expected {
        warnings.push(Warning::RankDeficientMeans {
            rank: keep.len(),
            expected,
        });
    }
    let mut stack = Matrix::zeros(keep.len(), d);
    for (row, &i) in keep.iter().enumerate() {
        stack.set_row(row, &gen.eigenvectors.column(i).transpose());
    }
    let matrix = linalg::orthonormalize_rows(&stack)?;
    let achieved_kld = pairwise_kld_sum(&matrix, params)?;
    Ok(ProjectionResult {
        original_rows: matrix.clone(),
        matrix,
        frame: Frame::Original,
        method: Method::MulticlassLda,
        achieved_kld,
        component_scores: Some(keep.iter().map(|&i| gen.eigenvalues[i]).collect()),
        center: None,
        warnings,
    })
}

/// LoL baseline: the mean difference stacked with the top `r − 1` principal
/// directions of a pooled covariance, orthonormalized. With equal means the
/// top `r` principal directions are used instead.
pub fn lol_projection(
    p1: &GaussianParams,
    p2: &GaussianParams,
    r: usize,
    pooled_cov: &Matrix,
) -> Result<ProjectionResult> {
    check_pair(p1, p2)?;
    let d = p1.dim();
    check_r(r, d)?;
    if pooled_cov.shape() != (d, d) {
        return Err(Error::DimensionMismatch(format!(
            "pooled covariance is {}x{}, expected {d}x{d}",
            pooled_cov.nrows(),
            pooled_cov.ncols()
        )));
    }
    let pcs = linalg::sym_eig(pooled_cov)?;
    let mut warnings = Vec::new();
    let mut candidates = Vec::with_capacity(d + 1);
    if means_equal(p1, p2, EQUAL_MEANS_TOL) {
        warnings.push(Warning::EqualMeansFallback);
    } else {
        candidates.push(p2.mean() - p1.mean());
    }
    candidates.extend(pcs.eigenvectors.column_iter().map(|c| c.into_owned()));
    let (picked, stack) = select_independent(&candidates, r)?;
    let skipped = picked.last().map(|&l| l + 1 - picked.len()).unwrap_or(0);
    if skipped > 0 {
        warnings.push(Warning::RankSubstitution { skipped });
    }
    let matrix = linalg::orthonormalize_rows(&stack)?;
    let mut res = ProjectionResult::from_matrix(matrix, Method::Lol, p1, p2)?;
    res.warnings = warnings;
    Ok(res)
}

/// Orthonormal basis of the `r`-dimensional subspace maximizing the
/// projected divergence between two equal-mean classes: the generalized
/// eigenvectors of `(Σ2, Σ1)` with the largest `g(λ)`.
pub fn equal_mean_subspace(sigma1: &Matrix, sigma2: &Matrix, r: usize) -> Result<Matrix> {
    let d = sigma1.nrows();
    check_r(r, d)?;
    let gen = linalg::generalized_eig(sigma2, sigma1)?;
    let lambdas: Vec<f64> = gen.eigenvalues.iter().copied().collect();
    let g: Vec<f64> = lambdas
        .iter()
        .map(|&l| gaussian::g_score(l))
        .collect::<Result<_>>()?;
    let order = rank_directions(&g, &lambdas);
    let mut stack = Matrix::zeros(r, d);
    for (row, &i) in order.iter().take(r).enumerate() {
        stack.set_row(row, &gen.eigenvectors.column(i).transpose());
    }
    linalg::orthonormalize_rows(&stack)
}

/// Outcome of comparing the subspaces that maximize `D(q1 ‖ q2)` and
/// `D(q2 ‖ q1)` for an equal-mean pair.
#[derive(Debug, Clone)]
pub struct OrderCheck {
    /// Basis maximizing `D(q1 ‖ q2)`.
    pub subspace_12: Matrix,
    /// Basis maximizing `D(q2 ‖ q1)`.
    pub subspace_21: Matrix,
    pub max_principal_angle: f64,
    /// Generalized eigenvalues of `(Σ2, Σ1)`, descending.
    pub eigenvalues: Vector,
    /// Whether every eigenvalue lies strictly on one side of 1.
    pub one_sided: bool,
}

pub fn equal_mean_order_check(
    p1: &GaussianParams,
    p2: &GaussianParams,
    r: usize,
) -> Result<OrderCheck> {
    check_pair(p1, p2)?;
    if !means_equal(p1, p2, 1e-10) {
        return Err(Error::UnequalMeans);
    }
    let subspace_12 = equal_mean_subspace(p1.covariance(), p2.covariance(), r)?;
    let subspace_21 = equal_mean_subspace(p2.covariance(), p1.covariance(), r)?;
    let angles = linalg::principal_angles(&subspace_12, &subspace_21)?;
    let eigenvalues = linalg::generalized_eig(p2.covariance(), p1.covariance())?.eigenvalues;
    let one_sided = eigenvalues.iter().all(|&l| l > 1.0) || eigenvalues.iter().all(|&l| l < 1.0);
    Ok(OrderCheck {
        subspace_12,
        subspace_21,
        max_principal_angle: angles.last().copied().unwrap_or(0.0),
        eigenvalues,
        one_sided,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn diag(v: &[f64]) -> Matrix {
        Matrix::from_diagonal(&Vector::from_row_slice(v))
    }

    fn gp(mean: &[f64], cov: Matrix) -> GaussianParams {
        GaussianParams::new(Vector::from_row_slice(mean), cov).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
        let g = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &g * g.transpose() / d as f64 + Matrix::identity(d, d) * 0.2
    }

    fn random_mean(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vector {
        Vector::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
    }

    fn random_pair(seed: u64, d: usize) -> (GaussianParams, GaussianParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p1 =
            GaussianParams::new(random_mean(&mut rng, d, 1.0), random_spd(&mut rng, d)).unwrap();
        let p2 =
            GaussianParams::new(random_mean(&mut rng, d, 1.0), random_spd(&mut rng, d)).unwrap();
        (p1, p2)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn lda_identity_covariance() {
        let p1 = gp(&[0.0, 0.0, 0.0], Matrix::identity(3, 3));
        let p2 = gp(&[3.0, 0.0, 0.0], Matrix::identity(3, 3));
        let res = lda_direction(&p1, &p2).unwrap();
        assert!((res.matrix[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((res.achieved_kld - 4.5).abs() < 1e-12);
    }

    #[test]
    fn lda_diagonal_covariance_direction() {
        let p1 = gp(&[0.0, 0.0], diag(&[1.0, 4.0]));
        let p2 = gp(&[1.0, 1.0], diag(&[1.0, 4.0]));
        let res = lda_direction(&p1, &p2).unwrap();
        let ratio = res.matrix[(0, 1)] / res.matrix[(0, 0)];
        assert!((ratio - 0.25).abs() < 1e-14);
    }

    #[test]
    fn lda_equal_means_errors() {
        let p = gp(&[1.0, 1.0], Matrix::identity(2, 2));
        assert!(matches!(lda_direction(&p, &p), Err(Error::EqualMeans)));
    }

    #[test]
    fn lda_recovers_full_kld_for_shared_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let cov = random_spd(&mut rng, 20);
        let p1 = GaussianParams::new(random_mean(&mut rng, 20, 1.0), cov.clone()).unwrap();
        let p2 = GaussianParams::new(random_mean(&mut rng, 20, 1.0), cov).unwrap();
        let res = lda_direction(&p1, &p2).unwrap();
        let full = gaussian::kld(&p1, &p2).unwrap();
        assert!(rel(res.achieved_kld, full) < 1e-8);
    }

    #[test]
    fn alg1_two_dimensional_full_rank() {
        let p1 = gp(&[0.0, 0.0], Matrix::identity(2, 2));
        let p2 = gp(&[1.0, 0.0], diag(&[1.0, 5.0]));
        let res = algorithm1(&p1, &p2, 2).unwrap();
        assert!((&res.matrix * res.matrix.transpose() - Matrix::identity(2, 2)).norm() < 1e-14);
        let full = gaussian::kld(&p1, &p2).unwrap();
        assert!(rel(res.achieved_kld, full) < 1e-12);
    }

    #[test]
    fn alg1_shared_covariance_keeps_everything_at_any_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cov = random_spd(&mut rng, 6);
        let p1 = GaussianParams::new(random_mean(&mut rng, 6, 1.0), cov.clone()).unwrap();
        let p2 = GaussianParams::new(random_mean(&mut rng, 6, 1.0), cov).unwrap();
        let full = gaussian::kld(&p1, &p2).unwrap();
        for r in 1..=6 {
            let res = algorithm1(&p1, &p2, r).unwrap();
            assert!(rel(res.achieved_kld, full) < 1e-8, "r={r}");
        }
    }

    #[test]
    fn alg1_equal_means_falls_back() {
        let p1 = gp(&[0.0, 0.0, 0.0], Matrix::identity(3, 3));
        let p2 = gp(&[0.0, 0.0, 0.0], diag(&[2.0, 0.1, 1.5]));
        let res = algorithm1(&p1, &p2, 1).unwrap();
        assert!(res.warnings.contains(&Warning::EqualMeansFallback));
        // g(0.1) is the largest score, so e2 is chosen.
        assert!((res.matrix[(0, 1)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alg1_substitutes_dependent_mean_direction() {
        // Σ2⁻¹δ is along e1, which is also the top-g eigenvector.
        let p1 = gp(&[0.0, 0.0, 0.0], Matrix::identity(3, 3));
        let p2 = gp(&[1.0, 0.0, 0.0], diag(&[10.0, 2.0, 1.2]));
        let res = algorithm1(&p1, &p2, 2).unwrap();
        assert!(res
            .warnings
            .contains(&Warning::RankSubstitution { skipped: 1 }));
        assert!((&res.matrix * res.matrix.transpose() - Matrix::identity(2, 2)).norm() < 1e-14);
        assert!((res.matrix[(1, 1)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alg2_equal_means_matches_top_g_subspace() {
        let (p1, mut p2) = random_pair(8, 7);
        p2 = GaussianParams::new(p1.mean().clone(), p2.covariance().clone()).unwrap();
        for r in 1..=4 {
            let res = algorithm2(&p1, &p2, r).unwrap();
            let target = equal_mean_subspace(p1.covariance(), p2.covariance(), r).unwrap();
            let angle = linalg::max_principal_angle(&res.original_rows, &target).unwrap();
            assert!(angle < 1e-8, "r={r} angle={angle}");
        }
    }

    #[test]
    fn alg2_shared_covariance_single_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let cov = random_spd(&mut rng, 5);
        let p1 = GaussianParams::new(random_mean(&mut rng, 5, 1.0), cov.clone()).unwrap();
        let p2 = GaussianParams::new(random_mean(&mut rng, 5, 1.0), cov).unwrap();
        let res = algorithm2(&p1, &p2, 1).unwrap();
        let full = gaussian::kld(&p1, &p2).unwrap();
        assert!(rel(res.achieved_kld, full) < 1e-8);
        assert!(rel(res.recovered_kld(&p1, &p2).unwrap(), full) < 1e-8);
    }

    #[test]
    fn alg2_identical_distributions() {
        let p = gp(&[1.0, 2.0], diag(&[2.0, 3.0]));
        assert!(matches!(
            algorithm2(&p, &p, 1),
            Err(Error::IdenticalDistributions)
        ));
    }

    #[test]
    fn alg2_full_rank_recovers_kld_and_matches_recomputation() {
        let (p1, p2) = random_pair(12, 9);
        let full = gaussian::kld(&p1, &p2).unwrap();
        let res = algorithm2(&p1, &p2, 9).unwrap();
        assert!(rel(res.achieved_kld, full) < 1e-8);
        for r in 1..=9 {
            let res = algorithm2(&p1, &p2, r).unwrap();
            let recomputed = res.recovered_kld(&p1, &p2).unwrap();
            assert!(rel(res.achieved_kld, recomputed) < 1e-10, "r={r}");
            assert!((&res.matrix * res.matrix.transpose() - Matrix::identity(r, r)).norm() < 1e-12);
        }
    }

    #[test]
    fn alg2_class1_is_isotropic_after_projection() {
        let (p1, p2) = random_pair(13, 6);
        let res = algorithm2(&p1, &p2, 2).unwrap();
        let q1 = res.project_params(&p1).unwrap();
        assert!(q1.mean().norm() < 1e-12);
        assert!((q1.covariance() - Matrix::identity(2, 2)).norm() < 1e-10);
    }

    #[test]
    fn regime_rule() {
        let p1 = gp(&[0.0, 0.0], Matrix::identity(2, 2));
        let p2 = gp(&[5.0, 0.0], diag(&[1.0, 2.0]));
        let rep = select_regime(&p1, &p2, 2).unwrap();
        assert_eq!(rep.recommendation, Recommendation::Alg1);
        assert_eq!(rep.threshold, rep.d_sigma);
        let rep = select_regime(&p1, &p2, 1).unwrap();
        assert_eq!(rep.recommendation, Recommendation::CompareBoth);
        assert!(rep.threshold.is_infinite());

        let p3 = gp(&[0.01, 0.0], diag(&[20.0, 0.05]));
        let rep = select_regime(&p1, &p3, 2).unwrap();
        assert_eq!(rep.recommendation, Recommendation::Alg2);
    }

    #[test]
    fn regime_report_serializes_infinite_threshold_as_null() {
        let p1 = gp(&[0.0], Matrix::identity(1, 1));
        let p2 = gp(&[1.0], diag(&[2.0]));
        let rep = select_regime(&p1, &p2, 1).unwrap();
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"threshold\":null"), "{json}");
        let back: RegimeReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn fit_auto_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let cov = random_spd(&mut rng, 5);
        let p1 = GaussianParams::new(random_mean(&mut rng, 5, 1.0), cov.clone()).unwrap();
        let p2 = GaussianParams::new(random_mean(&mut rng, 5, 1.0), cov).unwrap();
        let res = fit_auto(&p1, &p2, 1, AutoMode::Rule).unwrap();
        assert_eq!(res.method, Method::Alg1);
        assert!(rel(res.achieved_kld, gaussian::kld(&p1, &p2).unwrap()) < 1e-8);

        let (q1, q2) = random_pair(42, 5);
        let q2 = GaussianParams::new(q1.mean().clone(), q2.covariance().clone()).unwrap();
        for r in 2..=4 {
            let res = fit_auto(&q1, &q2, r, AutoMode::Rule).unwrap();
            assert_eq!(res.method, Method::Alg2, "r={r}");
        }

        let (s1, s2) = random_pair(43, 6);
        let best = fit_auto(&s1, &s2, 2, AutoMode::Compare).unwrap();
        let a1 = algorithm1(&s1, &s2, 2).unwrap().achieved_kld;
        let a2 = algorithm2(&s1, &s2, 2).unwrap().achieved_kld;
        assert!((best.achieved_kld - a1.max(a2)).abs() <= AUTO_TIE_TOL * a1.max(a2).max(1.0));
    }

    #[test]
    fn multiclass_axes_example() {
        let i5 = Matrix::identity(5, 5);
        let mut e1 = [0.0; 5];
        e1[0] = 1.0;
        let mut e2 = [0.0; 5];
        e2[1] = 1.0;
        let params = vec![
            gp(&[0.0; 5], i5.clone()),
            gp(&e1, i5.clone()),
            gp(&e2, i5.clone()),
        ];
        let res = multiclass_lda(&params, Some(&i5)).unwrap();
        assert_eq!(res.rank(), 2);
        let target =
            Matrix::from_row_slice(2, 5, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let ang = linalg::principal_angles(&res.matrix, &target).unwrap();
        assert!(ang[1] < 1e-10);
        let expect = [(0, 1, 0.5), (0, 2, 0.5), (1, 2, 1.0)];
        for (i, j, v) in expect {
            let got = gaussian::kld_projected(&res.matrix, &params[i], &params[j]).unwrap();
            assert!((got - v).abs() < 1e-12);
        }
        assert!((res.achieved_kld - 2.0).abs() < 1e-12);
    }

    #[test]
    fn multiclass_two_classes_is_lda() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let cov = random_spd(&mut rng, 6);
        let p1 = GaussianParams::new(random_mean(&mut rng, 6, 1.0), cov.clone()).unwrap();
        let p2 = GaussianParams::new(random_mean(&mut rng, 6, 1.0), cov.clone()).unwrap();
        let m = multiclass_lda(&[p1.clone(), p2.clone()], Some(&cov)).unwrap();
        let l = lda_direction(&p1, &p2).unwrap();
        assert!(linalg::max_principal_angle(&m.matrix, &l.matrix).unwrap() < 1e-8);
    }

    #[test]
    fn multiclass_collinear_means_warns() {
        let i3 = Matrix::identity(3, 3);
        let params = vec![
            gp(&[0.0, 0.0, 0.0], i3.clone()),
            gp(&[1.0, 0.0, 0.0], i3.clone()),
            gp(&[2.0, 0.0, 0.0], i3.clone()),
        ];
        let res = multiclass_lda(&params, None).unwrap();
        assert_eq!(res.rank(), 1);
        assert!(res.warnings.contains(&Warning::RankDeficientMeans {
            rank: 1,
            expected: 2
        }));
        let same = vec![params[0].clone(), params[0].clone()];
        assert!(matches!(
            multiclass_lda(&same, None),
            Err(Error::RankDeficientMeans { rank: 0 })
        ));
    }

    #[test]
    fn lol_cases() {
        let p1 = gp(&[0.0, 0.0, 0.0], Matrix::identity(3, 3));
        let p2 = gp(&[1.0, 2.0, 0.0], diag(&[2.0, 1.0, 3.0]));
        let pooled = (p1.covariance() + p2.covariance()) * 0.5;
        let res = lol_projection(&p1, &p2, 1, &pooled).unwrap();
        let dir = Vector::from_row_slice(&[1.0, 2.0, 0.0]) / 5f64.sqrt();
        assert!((res.matrix.row(0).transpose().dot(&dir) - 1.0).abs() < 1e-14);

        let res = lol_projection(&p1, &p2, 3, &Matrix::identity(3, 3)).unwrap();
        assert!((&res.matrix * res.matrix.transpose() - Matrix::identity(3, 3)).norm() < 1e-14);
        assert!((res.matrix.row(0).transpose().dot(&dir) - 1.0).abs() < 1e-14);

        let q = gp(&[0.0, 0.0, 0.0], diag(&[5.0, 1.0, 1.0]));
        let res = lol_projection(&p1, &q, 1, q.covariance()).unwrap();
        assert!(res.warnings.contains(&Warning::EqualMeansFallback));
        assert!((res.matrix[(0, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn order_check_diagonal_examples() {
        let p1 = gp(&[0.0, 0.0], Matrix::identity(2, 2));
        let p2 = gp(&[0.0, 0.0], diag(&[2.0, 3.0]));
        let chk = equal_mean_order_check(&p1, &p2, 1).unwrap();
        assert!(chk.one_sided);
        assert!(chk.max_principal_angle < 1e-12);
        assert!((chk.subspace_12[(0, 1)].abs() - 1.0).abs() < 1e-14);

        let p3 = gp(&[0.0, 0.0], diag(&[4.0, 0.2]));
        let chk = equal_mean_order_check(&p1, &p3, 1).unwrap();
        assert!(!chk.one_sided);
        // g(0.2) > g(4) but g(0.25) > g(5): the two orders disagree.
        assert!((chk.max_principal_angle - std::f64::consts::FRAC_PI_2).abs() < 1e-12);

        let p4 = gp(&[1.0, 0.0], diag(&[2.0, 3.0]));
        assert!(matches!(
            equal_mean_order_check(&p1, &p4, 1),
            Err(Error::UnequalMeans)
        ));
    }

    #[test]
    fn ranking_tie_rule() {
        let order = rank_directions(&[0.5, 0.5, 0.5, 0.7], &[2.0, 0.1, 2.0, 1.0]);
        assert_eq!(order, vec![3, 0, 2, 1]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn monotone_in_r_and_exact_at_full_rank(seed in any::<u64>(), d in 2usize..7) {
                let (p1, p2) = random_pair(seed, d);
                let full = gaussian::kld(&p1, &p2).unwrap();
                let mut prev = [0.0_f64; 2];
                for r in 1..=d {
                    let a1 = algorithm1(&p1, &p2, r).unwrap().achieved_kld;
                    let a2 = algorithm2(&p1, &p2, r).unwrap().recovered_kld(&p1, &p2).unwrap();
                    for (k, v) in [a1, a2].into_iter().enumerate() {
                        prop_assert!(v <= full + 1e-8);
                        prop_assert!(v >= prev[k] - 1e-9 * full.max(1.0));
                        prev[k] = v;
                    }
                }
                prop_assert!(rel(prev[0], full) < 1e-8);
                prop_assert!(rel(prev[1], full) < 1e-8);
            }

            #[test]
            fn components_sum_to_full_kld(seed in any::<u64>(), d in 1usize..10) {
                let (p1, p2) = random_pair(seed, d);
                let dec = whitened_decomposition(&p1, &p2).unwrap();
                let sum: f64 = dec.component_klds.iter().sum();
                prop_assert!(rel(sum, gaussian::kld(&p1, &p2).unwrap()) < 1e-8);
            }
        }
    }
}
