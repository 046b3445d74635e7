//! Adam ascent on the projected divergence, started from both closed forms.

use kldproj::gaussian;
use kldproj::projections;
use kldproj::refine::{self, AscentOptions};
use kldproj::synth;

fn main() -> kldproj::Result<()> {
    let (p1, p2) = synth::random_gaussian_pair(12, (0.1, 10.0), 1.0, 5)?;
    let full = gaussian::kld(&p1, &p2)?;
    println!("full divergence {full:.6}");
    let opts = AscentOptions::default();
    for r in [1, 2, 4] {
        for start in [
            projections::algorithm1(&p1, &p2, r)?,
            projections::algorithm2(&p1, &p2, r)?,
        ] {
            let trace = refine::gradient_ascent(&start.original_rows, &p1, &p2, &opts)?;
            println!(
                "r={r} {}: {:.6} -> {:.6} after {} iterations ({:?})",
                start.method,
                trace.initial_kld(),
                trace.final_kld,
                trace.iterations_run,
                trace.stop_reason
            );
        }
    }

    let a = refine::random_init(3, 12, 1);
    let trace = refine::gradient_ascent(&a, &p1, &p2, &opts)?;
    println!(
        "random start r=3: {:.6} -> {:.6}",
        trace.initial_kld(),
        trace.final_kld
    );
    Ok(())
}
