//! Brute-force ground truth from the synthetic generator next to the
//! closed-form stationary answer.

use evtss::dist::GevParams;
use evtss::synth::{true_collision_probability, SynthConfig};

fn main() -> evtss::Result<()> {
    let ttc = GevParams::new(-0.886, 0.431, -0.417)?;
    let thw = GevParams::gumbel(-1.417, 0.280)?;
    let cfg = SynthConfig::stationary_pair(ttc, thw, 0.865, 1000, 17);
    let truth = true_collision_probability(&cfg, 2_000_000)?;
    println!("simulated  head-on {:.5}  rear-end {:.5}  joint {:.5} (se {:.1e})",
        truth.head_on.p, truth.rear_end.p, truth.joint.p, truth.joint.se);
    if let Some((h, r, j)) = truth.closed_form {
        println!("closed     head-on {h:.5}  rear-end {r:.5}  joint {j:.5}");
    }
    Ok(())
}
