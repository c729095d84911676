//! Moment Lyapunov exponents g(p): the exact curve, a few Monte Carlo
//! checks, and the root p* of g(-p).

use std::path::PathBuf;

use episwitch::config::load_model;
use episwitch::lyapunov::{estimate_g, estimate_pstar, GParams, McParams, DEFAULT_P_MAX};
use episwitch::rng::RngStream;
use episwitch::spectral::g_exact_1d;

fn main() -> episwitch::Result<()> {
    let spec = load_model(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("models/model_b.json"))?;

    let params = GParams::default();
    println!("    p   exact      mc        se");
    for p in [-2.0, -1.0, 1.0, 2.0] {
        let mc = estimate_g(&spec, p, &params, RngStream::new(5, 0).derive(&format!("g{p}")))?;
        println!("{p:>5}  {:>8.5}  {:>8.5}  {:.5}", g_exact_1d(&spec, p)?, mc.g, mc.se);
    }

    let root = estimate_pstar(&spec, DEFAULT_P_MAX, 1e-8, &McParams::default())?;
    println!("p* = {:?} via {}", root.value, root.method.as_str());
    Ok(())
}
