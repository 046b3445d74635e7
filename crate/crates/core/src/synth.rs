//! Seeded generators for class parameters, channels and samples.
//!
//! Every generator is a pure function of its inputs; randomness comes from
//! `ChaCha8Rng` seeded with an explicit 64-bit seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{self, GaussianParams};
use crate::linalg::{self, Matrix, Vector};

const CHANNEL_ATTEMPTS: usize = 5;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdSpec {
    pub dim: usize,
    pub eig_min: f64,
    pub eig_max: f64,
    pub seed: u64,
}

impl SpdSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dim must be positive".into()));
        }
        if !(self.eig_min > 0.0 && self.eig_min.is_finite()) {
            return Err(Error::NonPositiveInput(self.eig_min));
        }
        if !(self.eig_max >= self.eig_min && self.eig_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eig_max ({}) must be at least eig_min ({})",
                self.eig_max, self.eig_min
            )));
        }
        Ok(())
    }
}

/// `Q diag(λ) Qᵀ` with `Q` the orthogonal QR factor of a seeded Gaussian
/// matrix and `λ` log-uniform on `[eig_min, eig_max]`. Equal bounds give
/// exactly `c·I`.
pub fn random_spd(spec: &SpdSpec) -> Result<Matrix> {
    spec.validate()?;
    let d = spec.dim;
    if spec.eig_min == spec.eig_max {
        return Ok(Matrix::identity(d, d) * spec.eig_min);
    }
    let mut rng = rng(spec.seed);
    let q = normal_matrix(&mut rng, d, d).qr().q();
    let (lo, hi) = (spec.eig_min.ln(), spec.eig_max.ln());
    let lambdas = Vector::from_fn(d, |_, _| {
        let u: f64 = rng.random();
        (lo + u * (hi - lo)).exp().clamp(spec.eig_min, spec.eig_max)
    });
    let m = &q * Matrix::from_diagonal(&lambdas) * q.transpose();
    Ok(linalg::symmetrize(&m))
}

/// Standard-normal mean scaled by `scale`.
pub fn random_mean(dim: usize, scale: f64, seed: u64) -> Vector {
    normal_vector(&mut rng(seed), dim) * scale
}

/// Draws a pair of classes with independent random covariances and means.
/// Seeds for the four draws are derived from `seed`.
pub fn random_gaussian_pair(
    dim: usize,
    eig_range: (f64, f64),
    mean_scale: f64,
    seed: u64,
) -> Result<(GaussianParams, GaussianParams)> {
    let sub = derive_seeds(seed, 4);
    let cov = |s| {
        random_spd(&SpdSpec {
            dim,
            eig_min: eig_range.0,
            eig_max: eig_range.1,
            seed: s,
        })
    };
    let p1 = GaussianParams::new(random_mean(dim, mean_scale, sub[0]), cov(sub[1])?)?;
    let p2 = GaussianParams::new(random_mean(dim, mean_scale, sub[2]), cov(sub[3])?)?;
    Ok((p1, p2))
}

/// Deterministic child seeds.
pub fn derive_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    /// Ambient dimension.
    pub d: usize,
    /// Signal dimension.
    pub t: usize,
    /// Noise variance `σ²`.
    pub noise_var: f64,
    pub seed: u64,
}

/// Pushes two signal classes through `x = Hs + z`, `z ~ N(0, σ²I)`.
/// `H` is a seeded standard-normal `d × t` matrix, redrawn (from the same
/// stream) if it is numerically rank deficient.
pub fn embed_channel(
    s1: &GaussianParams,
    s2: &GaussianParams,
    chan: &ChannelSpec,
) -> Result<(GaussianParams, GaussianParams, Matrix)> {
    if chan.t == 0 || chan.t > chan.d {
        return Err(Error::InvalidArgument(format!(
            "signal dimension t={} must lie in [1, d={}]",
            chan.t, chan.d
        )));
    }
    if s1.dim() != chan.t || s2.dim() != chan.t {
        return Err(Error::DimensionMismatch(format!(
            "signal classes have dimension {} and {}, channel expects {}",
            s1.dim(),
            s2.dim(),
            chan.t
        )));
    }
    if !(chan.noise_var > 0.0 && chan.noise_var.is_finite()) {
        return Err(Error::NonPositiveInput(chan.noise_var));
    }
    let mut rng = rng(chan.seed);
    let h = (0..CHANNEL_ATTEMPTS)
        .map(|_| normal_matrix(&mut rng, chan.d, chan.t))
        .find(|h| linalg::numerical_rank(h) == chan.t)
        .ok_or(Error::ChannelRankFailure(CHANNEL_ATTEMPTS))?;
    let x1 = channel_output(s1, &h, chan.noise_var)?;
    let x2 = channel_output(s2, &h, chan.noise_var)?;
    Ok((x1, x2, h))
}

/// `N(Hμ, HΣHᵀ + σ²I)`.
pub fn channel_output(s: &GaussianParams, h: &Matrix, noise_var: f64) -> Result<GaussianParams> {
    let d = h.nrows();
    let cov = h * s.covariance() * h.transpose() + Matrix::identity(d, d) * noise_var;
    GaussianParams::new(h * s.mean(), linalg::symmetrize(&cov))
}

/// `n` rows drawn as `μ + Lz` with `L` the Cholesky factor of `Σ`.
pub fn sample(params: &GaussianParams, n: usize, seed: u64) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let l = linalg::cholesky(params.covariance())?.l();
    let z = normal_matrix(&mut rng(seed), params.dim(), n);
    let mut x = (l * z).transpose();
    for mut row in x.row_iter_mut() {
        row += params.mean().transpose();
    }
    Ok(x)
}

fn ratio_scale_factor(p1: &GaussianParams, p2: &GaussianParams, ratio: f64) -> Result<f64> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::NonPositiveInput(ratio));
    }
    let split = gaussian::kld_split(p1, p2)?;
    if split.d_mu <= 0.0 {
        return Err(Error::EqualMeans);
    }
    if split.d_sigma <= 0.0 {
        return Err(Error::InvalidArgument(
            "covariances are equal; the ratio is unbounded".into(),
        ));
    }
    Ok((ratio * split.d_sigma / split.d_mu).sqrt())
}

/// Rescales the mean difference of `(p1, p2)` about `p1`'s mean so that
/// `D_μ / D_Σ` equals `ratio`. `D_μ` scales with the square of the factor.
pub fn scale_to_ratio(
    p1: &GaussianParams,
    p2: &GaussianParams,
    ratio: f64,
) -> Result<GaussianParams> {
    let c = ratio_scale_factor(p1, p2, ratio)?;
    let mean = p1.mean() + (p2.mean() - p1.mean()) * c;
    GaussianParams::new(mean, p2.covariance().clone())
}

/// Signal pair, its channel image and the realized `H`.
#[derive(Debug, Clone)]
pub struct ChannelInstance {
    pub signal1: GaussianParams,
    pub signal2: GaussianParams,
    pub x1: GaussianParams,
    pub x2: GaussianParams,
    pub h: Matrix,
}

/// Draws a random signal pair of dimension `chan.t` and embeds it. With
/// `ratio`, the signal mean difference is rescaled so the embedded pair has
/// `D_μ / D_Σ = ratio`.
pub fn channel_instance(
    chan: &ChannelSpec,
    eig_range: (f64, f64),
    mean_scale: f64,
    ratio: Option<f64>,
) -> Result<ChannelInstance> {
    let signal_seed = derive_seeds(chan.seed, 1)[0];
    let (signal1, mut signal2) = random_gaussian_pair(chan.t, eig_range, mean_scale, signal_seed)?;
    let (mut x1, mut x2, mut h) = embed_channel(&signal1, &signal2, chan)?;
    if let Some(ratio) = ratio {
        let c = ratio_scale_factor(&x1, &x2, ratio)?;
        let mean = signal1.mean() + (signal2.mean() - signal1.mean()) * c;
        signal2 = GaussianParams::new(mean, signal2.covariance().clone())?;
        (x1, x2, h) = embed_channel(&signal1, &signal2, chan)?;
    }
    Ok(ChannelInstance {
        signal1,
        signal2,
        x1,
        x2,
        h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_equal_bounds_is_scaled_identity() {
        let m = random_spd(&SpdSpec {
            dim: 4,
            eig_min: 2.5,
            eig_max: 2.5,
            seed: 1,
        })
        .unwrap();
        assert_eq!(m, Matrix::identity(4, 4) * 2.5);
    }

    #[test]
    fn spd_is_deterministic() {
        let spec = SpdSpec {
            dim: 6,
            eig_min: 0.5,
            eig_max: 3.0,
            seed: 77,
        };
        assert_eq!(random_spd(&spec).unwrap(), random_spd(&spec).unwrap());
        let other = SpdSpec {
            seed: 78,
            ..spec.clone()
        };
        assert_ne!(random_spd(&spec).unwrap(), random_spd(&other).unwrap());
    }

    #[test]
    fn spd_eigenvalues_within_range() {
        let m = random_spd(&SpdSpec {
            dim: 50,
            eig_min: 0.1,
            eig_max: 10.0,
            seed: 3,
        })
        .unwrap();
        let eig = linalg::sym_eig(&m).unwrap();
        assert!(eig
            .eigenvalues
            .iter()
            .all(|&l| (0.1 - 1e-8..=10.0 + 1e-8).contains(&l)));
        assert!(linalg::spd_check(&m).is_ok());
    }

    #[test]
    fn spd_spec_validation() {
        assert!(random_spd(&SpdSpec {
            dim: 2,
            eig_min: 0.0,
            eig_max: 1.0,
            seed: 0
        })
        .is_err());
        assert!(random_spd(&SpdSpec {
            dim: 2,
            eig_min: 2.0,
            eig_max: 1.0,
            seed: 0
        })
        .is_err());
    }

    fn signal_pair(t: usize, seed: u64) -> (GaussianParams, GaussianParams) {
        random_gaussian_pair(t, (0.5, 2.0), 1.0, seed).unwrap()
    }

    #[test]
    fn channel_noise_drowns_signal_monotonically() {
        let (s1, s2) = signal_pair(3, 4);
        let mut prev = f64::INFINITY;
        for noise_var in [0.01, 0.1, 1.0, 10.0, 100.0, 1e4] {
            let chan = ChannelSpec {
                d: 8,
                t: 3,
                noise_var,
                seed: 5,
            };
            let (x1, x2, _) = embed_channel(&s1, &s2, &chan).unwrap();
            let k = gaussian::kld(&x1, &x2).unwrap();
            assert!(k < prev);
            prev = k;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn near_lossless_identity_channel() {
        let (s1, s2) = signal_pair(4, 6);
        let h = Matrix::identity(4, 4);
        let x1 = channel_output(&s1, &h, 1e-6).unwrap();
        let x2 = channel_output(&s2, &h, 1e-6).unwrap();
        let ks = gaussian::kld(&s1, &s2).unwrap();
        let kx = gaussian::kld(&x1, &x2).unwrap();
        assert!((kx - ks).abs() < 0.01 * ks);
    }

    #[test]
    fn channel_respects_processing_inequality() {
        for seed in 0..10 {
            let (s1, s2) = signal_pair(3, seed);
            let chan = ChannelSpec {
                d: 7,
                t: 3,
                noise_var: 0.5,
                seed: seed + 100,
            };
            let (x1, x2, h) = embed_channel(&s1, &s2, &chan).unwrap();
            assert_eq!(h.shape(), (7, 3));
            assert!(gaussian::kld(&x1, &x2).unwrap() <= gaussian::kld(&s1, &s2).unwrap() + 1e-8);
        }
    }

    #[test]
    fn channel_rejects_bad_shapes() {
        let (s1, s2) = signal_pair(3, 1);
        let chan = ChannelSpec {
            d: 2,
            t: 3,
            noise_var: 1.0,
            seed: 0,
        };
        assert!(matches!(
            embed_channel(&s1, &s2, &chan),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn sample_moments() {
        let p = GaussianParams::standard(2);
        let x = sample(&p, 100_000, 9).unwrap();
        let mean = x.row_mean();
        assert!(mean.amax() < 0.02);
        let centered = Matrix::from_fn(x.nrows(), 2, |i, j| x[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (x.nrows() - 1) as f64;
        assert!((cov - Matrix::identity(2, 2)).norm() < 0.03);
    }

    #[test]
    fn sample_is_deterministic_and_definitional() {
        let p = GaussianParams::new(
            Vector::from_row_slice(&[1.0, -2.0]),
            Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        assert_eq!(sample(&p, 10, 3).unwrap(), sample(&p, 10, 3).unwrap());
        let one = sample(&p, 1, 3).unwrap();
        let z = normal_vector(&mut rng(3), 2);
        let l = linalg::cholesky(p.covariance()).unwrap().l();
        let expect = p.mean() + l * z;
        assert_eq!(one.row(0).transpose(), expect);
    }

    #[test]
    fn channel_instance_hits_ratio() {
        let chan = ChannelSpec {
            d: 12,
            t: 3,
            noise_var: 1.0,
            seed: 2,
        };
        for ratio in [0.02, 5.0] {
            let inst = channel_instance(&chan, (0.5, 2.0), 1.0, Some(ratio)).unwrap();
            let s = gaussian::kld_split(&inst.x1, &inst.x2).unwrap();
            assert!((s.d_mu / s.d_sigma - ratio).abs() < 1e-8 * ratio.max(1.0));
        }
        let a = channel_instance(&chan, (0.5, 2.0), 1.0, None).unwrap();
        let b = channel_instance(&chan, (0.5, 2.0), 1.0, None).unwrap();
        assert_eq!(a.x2, b.x2);
    }

    #[test]
    fn ratio_scaling_hits_target() {
        let (p1, p2) = random_gaussian_pair(5, (0.3, 3.0), 1.0, 12).unwrap();
        for target in [0.01, 1.0, 5.0] {
            let q2 = scale_to_ratio(&p1, &p2, target).unwrap();
            let s = gaussian::kld_split(&p1, &q2).unwrap();
            assert!((s.d_mu / s.d_sigma - target).abs() < 1e-10 * target.max(1.0));
        }
        let base = gaussian::kld_split(&p1, &p2).unwrap();
        let doubled = GaussianParams::new(
            p1.mean() + (p2.mean() - p1.mean()) * 2.0,
            p2.covariance().clone(),
        )
        .unwrap();
        let s = gaussian::kld_split(&p1, &doubled).unwrap();
        assert!((s.d_mu - 4.0 * base.d_mu).abs() < 1e-10 * s.d_mu);
        assert!((s.d_sigma - base.d_sigma).abs() < 1e-12 * base.d_sigma.max(1.0));
    }
}
