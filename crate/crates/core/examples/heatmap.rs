//! Renders one month of anomalies as a PNG with the diverging colormap.
//!
//! cargo run --example heatmap [out.png]

use nino::climatology::{compute_climatology, default_base_period};
use nino::preprocess::{colormap, render_heatmap};
use nino::synthetic::{generate, SynthSpec};

fn main() -> nino::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "heatmap.png".into());
    let (sst, _, _) = generate(&SynthSpec::scenario(7))?;
    let clim = compute_climatology(&sst, default_base_period(&sst)?)?;

    // month 37 sits near the peak of the first planted event
    let t = 37;
    let normal = clim.month_field(sst.time_at(t).month());
    let anomaly: Vec<f64> = sst.field(t).iter().zip(normal).map(|(v, c)| v - c).collect();
    let img = render_heatmap(&anomaly, sst.axes().n_lat(), sst.axes().n_lon(), (-3.0, 3.0), 24)?;
    img.write_png(&out)?;
    println!("{} anomaly -> {out} ({}x{})", sst.time_at(t), img.width, img.height);
    for s in [-3.0, -1.5, 0.0, 1.5, 3.0] {
        println!("{s:+.1} °C -> {:?}", colormap((s + 3.0) / 6.0));
    }
    Ok(())
}
