//! Two-step copula estimation on ranks: Joe-Frank and Gumbel fits, the
//! Kendall-process goodness-of-fit test, and a rank-based independence test.

use evtss::bivar::{
    copula_gof, cvm_independence_test, fit_copula, kendall_tau, pseudo_observations, ArchimedeanCopula,
    CopulaFamily, JoeFrank,
};
use evtss::mc::stream_rng;

fn main() -> evtss::Result<()> {
    let truth = JoeFrank::new(1.631, 0.929)?;
    println!("implied tau of the generating copula: {:.4}", truth.kendall_tau());
    let raw = truth.sample(250, &mut stream_rng(8, 0));
    let pobs = pseudo_observations(&raw.u, &raw.v)?;
    let kt = kendall_tau(&raw.u, &raw.v)?;
    println!("sample tau {:.4} (p = {:.4})", kt.tau, kt.p_value);

    for family in [CopulaFamily::JoeFrank, CopulaFamily::Gumbel] {
        let fit = fit_copula(family, &pobs)?;
        println!("{family:?}: params {:?}  AIC {:.2}  tau {:.4}", fit.params, fit.aic, fit.kendall_tau_implied);
        let gof = copula_gof(&fit, &pobs, 199, 9)?;
        println!("  GoF CvM {:.4} (p {:.3})  KS {:.4} (p {:.3})", gof.cvm_statistic, gof.cvm_p, gof.ks_statistic, gof.ks_p);
    }
    let indep = cvm_independence_test(&pobs, 199, 10)?;
    println!("independence CvM {:.4}, p = {:.4}", indep.statistic, indep.p_value);
    Ok(())
}
