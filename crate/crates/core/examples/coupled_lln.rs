//! Chain against PDMP with a shared environment: the sup distance on [0, 5]
//! shrinks as K grows.

use std::path::PathBuf;

use episwitch::chain::coupled_paths;
use episwitch::config::load_model;
use episwitch::rng::RngStream;

const REPS: u64 = 200;

fn main() -> episwitch::Result<()> {
    let spec = load_model(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("models/model_b.json"))?;
    for k in [100, 1_000, 10_000] {
        let sizes = spec.group_sizes(k)?;
        let mut far = 0;
        let mut worst: f64 = 0.0;
        for r in 0..REPS {
            let run = coupled_paths(&spec, &sizes, &[0.5], 0, 5.0, 0.1, RngStream::new(11, r))?;
            if run.sup_distance > 0.1 {
                far += 1;
            }
            worst = worst.max(run.sup_distance);
        }
        println!("K={k:>6}  P(sup > 0.1) = {:.3}  worst = {worst:.4}", far as f64 / REPS as f64);
    }
    Ok(())
}
