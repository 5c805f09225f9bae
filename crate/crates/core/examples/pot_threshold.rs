//! Generalized Pareto fit over a threshold and the tail probability at a
//! chosen point, with a parameter-uncertainty interval.

use evtss::dist::{gpd_sample, GpdParams};
use evtss::fit_pot::{fit_gpd, pot_collision_probability, pot_probability_ci};

fn main() -> evtss::Result<()> {
    let truth = GpdParams::new(0.0, 0.3, -0.2, 1.0)?;
    let excess = gpd_sample(&truth, 800, 3);
    let fit = fit_gpd(&excess, 0.0)?;
    println!(
        "sigma {:.4} ({:.4})  xi {:+.4} ({:.4})  exceedances {}",
        fit.params.sigma, fit.sigma_se, fit.params.xi, fit.xi_se, fit.n_exceed
    );
    for x in [0.5, 1.0, 1.4] {
        let p = pot_collision_probability(&fit, x)?;
        let ci = pot_probability_ci(&fit, x, 20_000, 4, 0.95)?;
        println!("P(Y > {x}) = {:.5}  interval ({:.5}, {:.5})", p.conditional, ci.ci.0, ci.ci.1);
    }
    Ok(())
}
