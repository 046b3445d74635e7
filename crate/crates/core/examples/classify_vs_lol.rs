//! Six features reduced to two, fitted from samples and scored with a
//! plug-in Gaussian classifier, against the LoL baseline.

use kldproj::eval::PluginClassifier;
use kldproj::gaussian::{self, LabeledDataset};
use kldproj::projections;
use kldproj::synth;

fn main() -> kldproj::Result<()> {
    let seeds = synth::derive_seeds(14, 5);
    let (p1, p2) = synth::random_gaussian_pair(6, (1e-4, 1.0), 1.0, seeds[0])?;
    for (label, ratio) in [("large mean gap", 5.0), ("small mean gap", 0.01)] {
        let p2 = synth::scale_to_ratio(&p1, &p2, ratio)?;
        let train = LabeledDataset::from_classes(&[
            synth::sample(&p1, 10_000, seeds[1])?,
            synth::sample(&p2, 10_000, seeds[2])?,
        ])?;
        let test = LabeledDataset::from_classes(&[
            synth::sample(&p1, 1_000, seeds[3])?,
            synth::sample(&p2, 1_000, seeds[4])?,
        ])?;
        let e1 = gaussian::estimate_params(&train, 1, 0.0)?;
        let e2 = gaussian::estimate_params(&train, 2, 0.0)?;
        let pooled = gaussian::pooled_covariance(&train)?;

        println!("{label}:");
        for res in [
            projections::algorithm1(&e1, &e2, 2)?,
            projections::algorithm2(&e1, &e2, 2)?,
            projections::lol_projection(&e1, &e2, 2, &pooled)?,
        ] {
            let kld = res.recovered_kld(&e1, &e2)?;
            let clf = PluginClassifier::train(&train, &res.original_rows, res.center.as_ref())?;
            let acc = clf.accuracy(&test)?;
            println!(
                "  {:<5} divergence {kld:>9.2}  accuracy {:.2}%",
                res.method,
                100.0 * acc
            );
        }
    }
    Ok(())
}
