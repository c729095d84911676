//! One PDMP path of the two-environment model, printed as CSV.

use std::path::PathBuf;

use episwitch::config::load_model;
use episwitch::pdmp::simulate_pdmp;
use episwitch::rng::RngStream;

fn main() -> episwitch::Result<()> {
    let spec = load_model(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("models/model_s.json"))?;
    let path = simulate_pdmp(&spec, &[0.05], 1, 20.0, 0.25, RngStream::new(3, 0))?;
    println!("t,x,env");
    for ((t, x), e) in path.times.iter().zip(&path.states).zip(&path.envs) {
        println!("{t},{:.6},{e}", x[0]);
    }
    eprintln!("{} environment switches", path.jumps.len());
    Ok(())
}
