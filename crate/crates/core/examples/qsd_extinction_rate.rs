//! Extinction rate lambda^K from the quasi-stationary distribution, and the
//! fitted exponent of -log lambda^K against log K.

use std::path::PathBuf;

use episwitch::config::load_model;
use episwitch::experiment::{run_scaling_study, ScalingConfig};

fn main() -> episwitch::Result<()> {
    let spec = load_model(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("models/model_b.json"))?;
    let cfg = ScalingConfig {
        ladder: vec![200, 400, 800, 1600, 3200],
        ..ScalingConfig::default()
    };
    let study = run_scaling_study(&spec, &cfg)?;
    print!("{}", study.csv());
    if let Some(fit) = study.summary.qsd_exponent {
        println!("exponent {:.3} +/- {:.3}", fit.slope, fit.slope_half_width);
    }
    Ok(())
}
