//! GEV shapes and the block-maxima collision probability `1 - G(0)`.

use evtss::dist::{gev_cdf, gev_quantile, GevParams};
use evtss::prob::bm_collision_probability;

fn main() -> evtss::Result<()> {
    let cases = [
        ("bounded (xi < 0)", GevParams::new(-0.886, 0.431, -0.417)?),
        ("Gumbel", GevParams::gumbel(-1.456, 0.256)?),
        ("heavy (xi > 0)", GevParams::new(-1.0, 0.3, 0.2)?),
    ];
    for (name, p) in cases {
        let tail = bm_collision_probability(&p);
        println!(
            "{name:<18} G(-1) = {:.4}  median = {:+.4}  endpoint = {:?}  P(X >= 0) = {:.5}",
            gev_cdf(&p, -1.0),
            gev_quantile(&p, 0.5)?,
            p.upper_endpoint(),
            tail.p
        );
    }
    Ok(())
}
