//! The same channel with nearly equal means: the divergence is carried by
//! covariance differences and the whitened construction wins.

use kldproj::gaussian;
use kldproj::projections::{self, AutoMode};
use kldproj::synth::{self, ChannelSpec};

fn main() -> kldproj::Result<()> {
    let chan = ChannelSpec {
        d: 100,
        t: 10,
        noise_var: 1.0,
        seed: 7,
    };
    let inst = synth::channel_instance(&chan, (0.1, 10.0), 1.0, Some(0.01))?;
    let (p1, p2) = (&inst.x1, &inst.x2);
    let split = gaussian::kld_split(p1, p2)?;
    println!(
        "full {:.4} (mean {:.4}, covariance {:.4})",
        split.total, split.d_mu, split.d_sigma
    );
    for r in 1..=4 {
        let a1 = projections::algorithm1(p1, p2, r)?.recovered_kld(p1, p2)?;
        let a2 = projections::algorithm2(p1, p2, r)?.recovered_kld(p1, p2)?;
        let auto = projections::fit_auto(p1, p2, r, AutoMode::Rule)?;
        println!(
            "r={r}: alg1 {a1:.4}  alg2 {a2:.4}  rule picks {}",
            auto.method
        );
    }
    Ok(())
}
