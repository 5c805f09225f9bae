//! Logistic bivariate extreme-value model: simulate, fit by full
//! likelihood, and report tail dependence and the joint probability.

use evtss::bivar::{
    fit_bev_logistic, joint_collision_probability, pickands_logistic, sample_bev_logistic, Dependence,
};
use evtss::dataset::Covariates;
use evtss::dist::GevParams;
use evtss::fit_uni::NonStationarySpec;

fn main() -> evtss::Result<()> {
    let m1 = GevParams::new(-0.886, 0.431, -0.417)?;
    let m2 = GevParams::new(-1.417, 0.280, 0.0)?;
    let (x, y) = sample_bev_logistic(&m1, &m2, 0.865, 600, 21);
    let stat = NonStationarySpec::stationary();
    let fit = fit_bev_logistic(&x, &y, &Covariates::empty(x.len()), [&stat, &stat])?;
    println!("r = {:.4} ({:.4}), chi = {:.4}, AIC = {:.2}", fit.r.value, fit.r.se, fit.chi, fit.aic);
    for t in [0.0, 0.25, 0.5] {
        println!("A({t}) = {:.4}", pickands_logistic(t, fit.r.value)?);
    }
    let (f0, g0) = (m1.cdf(0.0), m2.cdf(0.0));
    let jp = joint_collision_probability(f0, g0, &Dependence::Logistic { r: fit.r.value })?;
    println!(
        "joint {:.5}  head-on {:.5}  rear-end {:.5}  both {:.6}",
        jp.any.p, jp.head_on, jp.rear_end, jp.both
    );
    Ok(())
}
