//! Threshold sweep over filter limits with both variants, stable shape
//! regions, and an SVG panel of the shape estimates.

use evtss::dataset::Measure;
use evtss::plot::{chart, write_svg, Style, Trace};
use evtss::sweep::{default_grid, stable_region, sweep_bm, Variant};
use evtss::synth::{generate, SynthConfig};

fn main() -> evtss::Result<()> {
    let ds = generate(&SynthConfig::calibrated(4))?;
    let values = ds.measure_series(Measure::Ttc);
    let k = ds.collision_counts().head_on;
    let mut traces = Vec::new();
    for variant in [Variant::Original, Variant::Normalized] {
        let sr = sweep_bm(&values, k, &default_grid(), variant)?;
        println!("{variant:?}: stable regions {:?}", stable_region(&sr, 0.1, 0.3));
        for (p, f) in sr.fitted() {
            println!("  {:.1} s  n {:>4}  xi {:+.3}  p {:.5}", p.threshold, p.n, f.shape.value, f.probability);
        }
        let pts = sr.fitted().map(|(p, f)| (p.threshold, f.shape.value)).collect();
        traces.push(Trace::new(format!("{variant:?}"), pts, Style::Line));
    }
    let path = std::env::temp_dir().join("evtss_sweep_shape.svg");
    write_svg(&path, &chart("shape", "threshold (s)", "xi", &traces))?;
    println!("wrote {}", path.display());
    Ok(())
}
