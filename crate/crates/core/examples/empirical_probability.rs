//! Binomial collision probability with its normal-approximation interval.

use evtss::dataset::empirical_collision_probability;

fn main() -> evtss::Result<()> {
    for (k, n) in [(9, 463), (2, 492), (11, 256)] {
        let p = empirical_collision_probability(k, n, 0.95)?;
        println!("{k:>2} collisions, {n:>3} maneuvers: {}", p.display());
    }
    Ok(())
}
