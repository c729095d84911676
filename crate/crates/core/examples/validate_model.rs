//! Load a model file and check the standing assumptions.
//!
//! ```text
//! cargo run --example validate_model -- models/model_s.json
//! ```

use std::path::PathBuf;

use episwitch::config::load_model;
use episwitch::model::{validate_model, DEFAULT_GRID_RESOLUTION};
use episwitch::spectral::environment_exponents;

fn main() -> episwitch::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("models/model_b.json"));
    let spec = load_model(&path)?;
    let report = validate_model(&spec, DEFAULT_GRID_RESOLUTION)?;
    println!("{report}");

    for (e, pair) in environment_exponents(&spec)?.iter().enumerate() {
        println!("env {e}: principal eigenvalue {:+.4}", pair.value);
    }
    if !report.passed() {
        std::process::exit(2);
    }
    Ok(())
}
