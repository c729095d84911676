//! Extinction times of the finite-population chain for a few population
//! sizes, started from half the population infected.

use std::path::PathBuf;

use episwitch::chain::{monte_carlo_extinction, ChainState, ExtinctionSummary};
use episwitch::config::load_model;

fn main() -> episwitch::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("models");
    let spec = load_model(&dir.join("model_n.json"))?;

    println!("{}", ExtinctionSummary::CSV_HEADER);
    for k in [100, 400, 1600] {
        let sizes = spec.group_sizes(k)?;
        let init = ChainState::floor_of(&[0.5], &sizes, 0);
        let s = monte_carlo_extinction(&spec, &sizes, &init, 500, 7)?;
        println!("{}", s.csv_row());
        // non-persistent case: mean time should grow like log K
        eprintln!("K={k}: E[tau]/log K = {:.3}", s.mean_tau / (k as f64).ln());
    }
    Ok(())
}
