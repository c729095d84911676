//! Compare the QSD at large K with the occupation measure of a long PDMP
//! path, and show where the QSD mass sits near the disease-free state.

use std::path::PathBuf;

use episwitch::config::load_model;
use episwitch::qsd::{compute_qsd, pdmp_stationary_estimate, qsd_histogram, qsd_mass_below, QsdOptions};
use episwitch::rng::RngStream;

const BINS: usize = 20;

fn main() -> episwitch::Result<()> {
    let spec = load_model(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("models/model_b.json"))?;
    let pdmp = pdmp_stationary_estimate(&spec, &[0.5], 2e4, 100.0, 0.05, BINS, RngStream::new(9, 0))?;
    for k in [100, 400, 1600] {
        let (index, qsd) = compute_qsd(&spec, &spec.group_sizes(k)?, &QsdOptions::default())?;
        let hist = qsd_histogram(&qsd, &index, BINS)?;
        println!(
            "K={k:>5}  L1(QSD, PDMP) = {:.3}  mass below 0.1 = {:.4}",
            hist.l1_distance(&pdmp)?,
            qsd_mass_below(&qsd, &index, 0.1)?
        );
    }
    Ok(())
}
