//! With equal means, the best subspace for either divergence direction is the
//! same when every generalized eigenvalue sits on one side of 1.

use kldproj::gaussian::GaussianParams;
use kldproj::linalg::{Matrix, Vector};
use kldproj::projections;
use kldproj::synth::{self, SpdSpec};

fn main() -> kldproj::Result<()> {
    let d = 8;
    let spec = |seed, lo, hi| SpdSpec {
        dim: d,
        eig_min: lo,
        eig_max: hi,
        seed,
    };
    let noise = synth::random_spd(&spec(1, 0.5, 2.0))?;
    let signal = synth::random_spd(&spec(2, 0.1, 5.0))?;
    let mean = Vector::zeros(d);
    let p1 = GaussianParams::new(mean.clone(), noise.clone())?;
    let p2 = GaussianParams::new(mean.clone(), &noise + &signal)?;
    for r in [1, 3, 5] {
        let chk = projections::equal_mean_order_check(&p1, &p2, r)?;
        println!(
            "signal plus noise, r={r}: angle {:.2e} rad, one-sided {}",
            chk.max_principal_angle, chk.one_sided
        );
    }

    let q2 = GaussianParams::new(
        Vector::zeros(2),
        Matrix::from_diagonal(&Vector::from_row_slice(&[4.0, 0.2])),
    )?;
    let chk = projections::equal_mean_order_check(&GaussianParams::standard(2), &q2, 1)?;
    println!(
        "eigenvalues {:?}: angle {:.4} rad, one-sided {}",
        chk.eigenvalues.as_slice(),
        chk.max_principal_angle,
        chk.one_sided
    );
    Ok(())
}
