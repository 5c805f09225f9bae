//! End to end through the CLI layer: simulate a dataset, then fit it.

use evtss::cli::{execute, RunConfig};

fn main() -> evtss::Result<()> {
    let out = std::env::temp_dir().join("evtss_pipeline");
    let mut sim = RunConfig::new("simulate");
    sim.out = out.clone();
    sim.mc_size = 100_000;
    let s = execute(&sim)?;
    println!("{}", s.summary);

    let mut fit = RunConfig::new("fit-bm");
    fit.out = out;
    fit.input = Some(s.run_dir.join("synthetic.csv"));
    fit.covariates = vec!["speedfront".into(), "passinggap".into(), "curvature".into()];
    fit.mc_size = 20_000;
    fit.bootstrap = 99;
    let f = execute(&fit)?;
    println!("{}", f.summary);
    println!("outputs in {}", f.run_dir.display());
    Ok(())
}
