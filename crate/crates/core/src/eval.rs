//! Experiment drivers: retained-divergence sweeps, pairwise preservation,
//! a Gaussian plug-in classifier and density grids for plotting.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{self, GaussianParams, LabeledDataset};
use crate::linalg::{self, Matrix, Vector};
use crate::projections::{self, Method};
use crate::refine::{self, AscentOptions};

/// Slack allowed when checking monotonicity in `r`.
pub const MONOTONE_SLACK: f64 = 1e-9;
/// Slack allowed above the full divergence.
pub const DPI_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Method tag, `refined_<tag>` for ascent rows.
    pub method: String,
    pub r: usize,
    pub kld: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub full_kld: f64,
    pub metadata: BTreeMap<String, String>,
}

impl SweepTable {
    pub fn methods(&self) -> Vec<&str> {
        let mut m: Vec<&str> = self.rows.iter().map(|r| r.method.as_str()).collect();
        m.dedup();
        m
    }

    pub fn get(&self, method: &str, r: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|row| row.method == method && row.r == r)
            .map(|row| row.kld)
    }

    /// Checks that every method's curve is nondecreasing in `r`, never
    /// exceeds the full divergence and reaches it at `r = d` (when present).
    /// Returns a description of the first violation.
    pub fn check_invariants(&self, d: usize) -> std::result::Result<(), String> {
        let slack = MONOTONE_SLACK * self.full_kld.max(1.0);
        for method in self.methods() {
            let mut curve: Vec<(usize, f64)> = self
                .rows
                .iter()
                .filter(|row| row.method == method)
                .map(|row| (row.r, row.kld))
                .collect();
            curve.sort_by_key(|&(r, _)| r);
            for w in curve.windows(2) {
                if w[1].1 < w[0].1 - slack {
                    return Err(format!(
                        "{method}: kld drops from {} at r={} to {} at r={}",
                        w[0].1, w[0].0, w[1].1, w[1].0
                    ));
                }
            }
            for &(r, k) in &curve {
                if k > self.full_kld + DPI_SLACK {
                    return Err(format!(
                        "{method}: kld {k} at r={r} exceeds full {}",
                        self.full_kld
                    ));
                }
                if r == d && (k - self.full_kld).abs() > 1e-8 * self.full_kld.max(f64::MIN_POSITIVE)
                {
                    return Err(format!(
                        "{method}: kld {k} at r=d differs from full {}",
                        self.full_kld
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Inputs for [`sweep_r`].
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub methods: Vec<Method>,
    pub r_values: Vec<usize>,
    /// Adds ascent rows started from each closed-form result.
    pub refine: Option<AscentOptions>,
    /// Covariance whose principal directions LoL uses; defaults to the
    /// average of the two class covariances.
    pub pooled_cov: Option<Matrix>,
    pub metadata: BTreeMap<String, String>,
}

fn closed_form(
    method: Method,
    p1: &GaussianParams,
    p2: &GaussianParams,
    r: usize,
    pooled: &Matrix,
) -> Result<projections::ProjectionResult> {
    match method {
        Method::Alg1 => projections::algorithm1(p1, p2, r),
        Method::Alg2 => projections::algorithm2(p1, p2, r),
        Method::Lol => projections::lol_projection(p1, p2, r, pooled),
        Method::Lda if r == 1 => projections::lda_direction(p1, p2),
        Method::MulticlassLda if r == 1 => {
            projections::multiclass_lda(&[p1.clone(), p2.clone()], None)
        }
        other => Err(Error::InvalidArgument(format!(
            "method {other} cannot be swept at r={r}"
        ))),
    }
}

/// Retained divergence of each method at each `r`. Rows are computed in
/// parallel and returned sorted by method, then `r`; each method's refined
/// rows follow its closed-form rows.
pub fn sweep_r(p1: &GaussianParams, p2: &GaussianParams, spec: &SweepSpec) -> Result<SweepTable> {
    let d = p1.dim();
    if let Some(&bad) = spec.r_values.iter().find(|&&r| r == 0 || r > d) {
        return Err(Error::InvalidArgument(format!("r={bad} outside [1, {d}]")));
    }
    let pooled = spec
        .pooled_cov
        .clone()
        .unwrap_or_else(|| (p1.covariance() + p2.covariance()) * 0.5);
    let mut methods = spec.methods.clone();
    methods.sort();
    methods.dedup();
    let jobs: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&m| {
            spec.r_values
                .iter()
                .filter(move |&&r| !matches!(m, Method::Lda | Method::MulticlassLda) || r == 1)
                .map(move |&r| (m, r))
        })
        .collect();

    let results: Vec<Vec<SweepRow>> = jobs
        .par_iter()
        .map(|&(method, r)| -> Result<Vec<SweepRow>> {
            let res = closed_form(method, p1, p2, r, &pooled)?;
            let kld = res.recovered_kld(p1, p2)?;
            let mut rows = vec![SweepRow {
                method: method.tag().to_string(),
                r,
                kld,
            }];
            if let Some(opts) = &spec.refine {
                let trace = refine::gradient_ascent(&res.original_rows, p1, p2, opts)?;
                rows.push(SweepRow {
                    method: format!("refined_{}", method.tag()),
                    r,
                    kld: trace.final_kld,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<SweepRow> = results.into_iter().flatten().collect();
    rows.sort_by(|a, b| a.method.cmp(&b.method).then(a.r.cmp(&b.r)));
    Ok(SweepTable {
        rows,
        full_kld: gaussian::kld(p1, p2)?,
        metadata: spec.metadata.clone(),
    })
}

/// `K × K` matrix of projected over full pairwise divergence, with `0/0`
/// read as 1.
pub fn pairwise_preservation(params: &[GaussianParams], a: &Matrix) -> Result<Matrix> {
    let r = a.nrows();
    if linalg::numerical_rank(a) < r {
        return Err(Error::RankDeficient {
            rank: linalg::numerical_rank(a),
            expected: r,
        });
    }
    let k = params.len();
    let mut out = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let full = gaussian::kld(&params[i], &params[j])?;
            let proj = gaussian::kld_projected(a, &params[i], &params[j])?;
            out[(i, j)] = if full == 0.0 && proj == 0.0 {
                1.0
            } else {
                proj / full
            };
        }
    }
    Ok(out)
}

/// Quadratic discriminant rule on projected features: per-class Gaussian
/// log-density plus log prior.
#[derive(Debug, Clone)]
pub struct PluginClassifier {
    projection: Matrix,
    center: Option<Vector>,
    classes: Vec<usize>,
    params: Vec<GaussianParams>,
    log_priors: Vec<f64>,
    // Cached Cholesky data per class: (inverse factor, log-determinant).
    factors: Vec<(Matrix, f64)>,
}

impl PluginClassifier {
    /// Fits projected class Gaussians and empirical priors. Each class needs
    /// more than `r + 1` samples.
    pub fn train(train: &LabeledDataset, a: &Matrix, center: Option<&Vector>) -> Result<Self> {
        let r = a.nrows();
        let projected = train.project(a, center)?;
        let classes = projected.classes();
        let n = projected.len() as f64;
        let mut params = Vec::with_capacity(classes.len());
        let mut log_priors = Vec::with_capacity(classes.len());
        let mut factors = Vec::with_capacity(classes.len());
        for &c in &classes {
            let count = projected.class_count(c);
            if count <= r + 1 {
                return Err(Error::InsufficientSamples {
                    class: c,
                    found: count,
                    needed: r + 2,
                });
            }
            let p = gaussian::estimate_params(&projected, c, 0.0)?;
            let chol = linalg::cholesky(p.covariance())?;
            let logdet = linalg::chol_logdet(&chol);
            let linv = chol
                .l()
                .solve_lower_triangular(&Matrix::identity(r, r))
                .ok_or(Error::NotPositiveDefinite {
                    eigenvalue: 0.0,
                    tolerance: 0.0,
                })?;
            factors.push((linv, logdet));
            log_priors.push((count as f64 / n).ln());
            params.push(p);
        }
        Ok(Self {
            projection: a.clone(),
            center: center.cloned(),
            classes,
            params,
            log_priors,
            factors,
        })
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn class_params(&self) -> &[GaussianParams] {
        &self.params
    }

    /// Log-density plus log prior of a projected point for each class.
    fn scores(&self, z: &Vector) -> Vec<f64> {
        let r = z.len() as f64;
        self.params
            .iter()
            .zip(&self.factors)
            .zip(&self.log_priors)
            .map(|((p, (linv, logdet)), lp)| {
                let u = linv * (z - p.mean());
                -0.5 * (u.norm_squared() + logdet + r * (2.0 * PI).ln()) + lp
            })
            .collect()
    }

    /// Predicted labels for raw (unprojected) sample rows.
    pub fn predict(&self, samples: &Matrix) -> Result<Vec<usize>> {
        if samples.ncols() != self.projection.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "samples have {} columns, classifier expects {}",
                samples.ncols(),
                self.projection.ncols()
            )));
        }
        Ok(samples
            .row_iter()
            .map(|row| {
                let mut x = row.transpose();
                if let Some(c) = &self.center {
                    x -= c;
                }
                let z = &self.projection * x;
                let s = self.scores(&z);
                let best = (0..s.len()).fold(0, |b, i| if s[i] > s[b] { i } else { b });
                self.classes[best]
            })
            .collect())
    }

    pub fn accuracy(&self, test: &LabeledDataset) -> Result<f64> {
        let pred = self.predict(test.samples())?;
        let hits = pred
            .iter()
            .zip(test.labels())
            .filter(|(p, l)| p == l)
            .count();
        Ok(hits as f64 / test.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// `[x_min, x_max, y_min, y_max]`; defaults to the union of each class's
    /// mean ± `half_width_sd` projected standard deviations.
    pub bounds: Option<[f64; 4]>,
    pub resolution: usize,
    pub half_width_sd: f64,
    pub contour_level_fraction: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            bounds: None,
            resolution: 200,
            half_width_sd: 4.0,
            contour_level_fraction: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub x_axis: Vec<f64>,
    pub y_axis: Vec<f64>,
    /// `values[i][j]` is the density at `(x_axis[i], y_axis[j])`.
    pub values_class1: Matrix,
    pub values_class2: Matrix,
    pub contour_level_fraction: f64,
    /// Analytic peak density of each class.
    pub peaks: [f64; 2],
    /// `contour_level_fraction × peak` for each class.
    pub contour_levels: [f64; 2],
}

/// Analytic density of a 2-D Gaussian.
fn density_fn(p: &GaussianParams) -> Result<(impl Fn(f64, f64) -> f64 + '_, f64)> {
    let s = p.covariance();
    let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
    if !(det > 0.0) {
        return Err(Error::NotPositiveDefinite {
            eigenvalue: det,
            tolerance: 0.0,
        });
    }
    let peak = 1.0 / (2.0 * PI * det.sqrt());
    let (a, b, c) = (s[(1, 1)] / det, -s[(0, 1)] / det, s[(0, 0)] / det);
    let (mx, my) = (p.mean()[0], p.mean()[1]);
    let f = move |x: f64, y: f64| {
        let (dx, dy) = (x - mx, y - my);
        peak * (-0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)).exp()
    };
    Ok((f, peak))
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Projects both classes to the plane with `a` (after subtracting `center`)
/// and evaluates their analytic densities on a regular grid.
pub fn density_grid(
    a: &Matrix,
    center: Option<&Vector>,
    p1: &GaussianParams,
    p2: &GaussianParams,
    spec: &GridSpec,
) -> Result<DensityGrid> {
    if a.nrows() != 2 {
        return Err(Error::InvalidArgument(format!(
            "density grids need a 2-row projection, got {}",
            a.nrows()
        )));
    }
    if spec.resolution == 0 {
        return Err(Error::InvalidArgument(
            "grid resolution must be positive".into(),
        ));
    }
    let q1 = p1.project_affine(a, center)?;
    let q2 = p2.project_affine(a, center)?;
    let bounds = spec.bounds.unwrap_or_else(|| {
        let mut b = [
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        ];
        for q in [&q1, &q2] {
            for axis in 0..2 {
                let half = spec.half_width_sd * q.covariance()[(axis, axis)].sqrt();
                b[2 * axis] = b[2 * axis].min(q.mean()[axis] - half);
                b[2 * axis + 1] = b[2 * axis + 1].max(q.mean()[axis] + half);
            }
        }
        b
    });
    let x_axis = linspace(bounds[0], bounds[1], spec.resolution);
    let y_axis = linspace(bounds[2], bounds[3], spec.resolution);
    let (f1, peak1) = density_fn(&q1)?;
    let (f2, peak2) = density_fn(&q2)?;
    let n = spec.resolution;
    let values_class1 = Matrix::from_fn(n, n, |i, j| f1(x_axis[i], y_axis[j]));
    let values_class2 = Matrix::from_fn(n, n, |i, j| f2(x_axis[i], y_axis[j]));
    Ok(DensityGrid {
        x_axis,
        y_axis,
        values_class1,
        values_class2,
        contour_level_fraction: spec.contour_level_fraction,
        peaks: [peak1, peak2],
        contour_levels: [
            peak1 * spec.contour_level_fraction,
            peak2 * spec.contour_level_fraction,
        ],
    })
}
