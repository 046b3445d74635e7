//! Divergence, its mean/covariance split and the per-direction components.

use kldproj::gaussian::{self, GaussianParams};
use kldproj::linalg::{Matrix, Vector};
use kldproj::projections;

fn main() -> kldproj::Result<()> {
    let p1 = GaussianParams::new(
        Vector::from_row_slice(&[0.0, 0.0, 0.0]),
        Matrix::identity(3, 3),
    )?;
    let p2 = GaussianParams::new(
        Vector::from_row_slice(&[1.0, 0.5, 0.0]),
        Matrix::from_diagonal(&Vector::from_row_slice(&[2.0, 1.0, 0.25])),
    )?;

    let split = gaussian::kld_split(&p1, &p2)?;
    println!("D(p1||p2) = {:.6}", split.total);
    println!("  mean part       {:.6}", split.d_mu);
    println!("  covariance part {:.6}", split.d_sigma);
    println!("D(p2||p1) = {:.6}", gaussian::kld(&p2, &p1)?);
    println!(
        "Chernoff information = {:.6}",
        gaussian::chernoff_information(&p1, &p2)?
    );

    let dec = projections::whitened_decomposition(&p1, &p2)?;
    println!("\nwhitened components (eigenvalue, mean shift, divergence):");
    for i in 0..dec.eigenvalues.len() {
        println!(
            "  {:>8.4} {:>8.4} {:>10.6}",
            dec.eigenvalues[i], dec.mean_shift[i], dec.component_klds[i]
        );
    }
    let sum: f64 = dec.component_klds.iter().sum();
    println!("sum of components = {sum:.6}");
    Ok(())
}
