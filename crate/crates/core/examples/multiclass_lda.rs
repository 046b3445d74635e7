//! Five classes sharing one covariance: the 4-dimensional LDA subspace keeps
//! every pairwise divergence.

use kldproj::eval;
use kldproj::gaussian::GaussianParams;
use kldproj::projections;
use kldproj::synth::{self, SpdSpec};

fn main() -> kldproj::Result<()> {
    let (k, d) = (5, 30);
    let seeds = synth::derive_seeds(42, k + 1);
    let cov = synth::random_spd(&SpdSpec {
        dim: d,
        eig_min: 0.1,
        eig_max: 10.0,
        seed: seeds[0],
    })?;
    let params = seeds[1..]
        .iter()
        .map(|&s| GaussianParams::new(synth::random_mean(d, 1.0, s), cov.clone()))
        .collect::<kldproj::Result<Vec<_>>>()?;

    let res = projections::multiclass_lda(&params, Some(&cov))?;
    println!(
        "projection {}x{}, eigenvalues {:?}",
        res.rank(),
        res.dim(),
        res.component_scores
    );
    let ratios = eval::pairwise_preservation(&params, &res.matrix)?;
    println!("projected / full divergence per class pair:");
    for i in 0..k {
        let row: Vec<String> = (0..k).map(|j| format!("{:.10}", ratios[(i, j)])).collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}
