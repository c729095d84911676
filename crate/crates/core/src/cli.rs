//! Command-line front end.
//!
//! `--out` ending in `.csv` or `.json` names the primary output file and the
//! manifest goes to `<out>.manifest.json`; any other value is a directory
//! that receives the outputs under fixed names plus `manifest.json`.
//! Without `--out` the primary output goes to standard output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::chain::{monte_carlo_extinction_capped, simulate_chain, ChainOptions, ChainState, DEFAULT_EVENT_CAP};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::experiment::{run_gcurve, run_scaling_study, Manifest, ScalingConfig};
use crate::lyapunov::{
    estimate_lambda, estimate_pstar, estimate_pstar_lower, GCurve, GEstimator, GParams, McParams, DEFAULT_P_MAX,
};
use crate::model::{validate_model, ModelSpec, DEFAULT_GRID_RESOLUTION};
use crate::pdmp::{simulate_angular, simulate_pdmp};
use crate::qsd::{compute_qsd, qsd_mass_below, qsd_moment, QsdMethod, QsdOptions};
use crate::rng::RngStream;

#[derive(Parser, Debug)]
#[command(name = "episwitch", version, about = "SIS epidemics in randomly switched environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Model file (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (.csv/.json) or directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the standing assumptions and print derived constants.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_GRID_RESOLUTION)]
        grid: usize,
    },
    /// Simulate the finite-population chain.
    Chain {
        #[command(flatten)]
        common: Common,
        #[arg(long = "K")]
        k: usize,
        /// Initial proportion infected, per group (one value is broadcast).
        #[arg(long, value_delimiter = ',', default_value = "0.5")]
        x0: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        env: usize,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<f64>,
        /// With 2 or more replicates, print an extinction-time summary.
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long, default_value_t = DEFAULT_EVENT_CAP)]
        event_cap: u64,
    },
    /// Simulate the PDMP or its angular part.
    Pdmp {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0.5")]
        x0: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        env: usize,
        #[arg(long = "T", default_value_t = 10.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
        /// Integrate the angular process from `x0 / |x0|` instead.
        #[arg(long)]
        angular: bool,
    },
    /// Estimate the top Lyapunov exponent.
    Lambda {
        #[command(flatten)]
        common: Common,
        #[arg(long = "T", default_value_t = 1e5)]
        horizon: f64,
        #[arg(long, default_value_t = 100.0)]
        burn_in: f64,
        #[arg(long, default_value_t = 20)]
        batches: usize,
    },
    /// Moment Lyapunov exponents on a grid of p, with derived p* and p_*.
    Gcurve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        g: GArgs,
        #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
        p_from: f64,
        #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
        p_to: f64,
        #[arg(long, default_value_t = 0.25)]
        p_step: f64,
        /// Use Monte Carlo even when the exact route applies.
        #[arg(long)]
        monte_carlo: bool,
        #[arg(long, default_value_t = DEFAULT_P_MAX)]
        p_max: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Root of g(-p) (or of g(p) with --lower).
    Pstar {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        g: GArgs,
        #[arg(long, default_value_t = DEFAULT_P_MAX)]
        p_max: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long)]
        lower: bool,
    },
    /// Quasi-stationary distribution and extinction rate.
    Qsd {
        #[command(flatten)]
        common: Common,
        #[arg(long = "K")]
        k: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 1000)]
        max_iter: usize,
        #[arg(long, value_enum, default_value_t = SolverArg::Inverse)]
        method: SolverArg,
    },
    /// Extinction rate and extinction time across a ladder of K.
    Scaling {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        ladder: Vec<usize>,
        /// Monte Carlo replicates per K (0 = QSD only).
        #[arg(long, default_value_t = 0)]
        mc_reps: usize,
        #[arg(long, default_value_t = 0.5)]
        x0: f64,
        #[arg(long)]
        no_qsd: bool,
        #[arg(long, default_value_t = DEFAULT_EVENT_CAP)]
        event_cap: u64,
    },
}

#[derive(Args, Debug, Clone)]
struct GArgs {
    #[arg(long, default_value_t = 2000)]
    n_rep: usize,
    #[arg(long, value_delimiter = ',', default_value = "25,50,100,200")]
    horizons: Vec<f64>,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Resampling)]
    estimator: EstimatorArg,
}

impl GArgs {
    fn params(&self) -> GParams {
        GParams {
            horizons: self.horizons.clone(),
            n_rep: self.n_rep,
            estimator: match self.estimator {
                EstimatorArg::Resampling => GEstimator::Resampling,
                EstimatorArg::Independent => GEstimator::Independent,
            },
            ..GParams::default()
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum EstimatorArg {
    Resampling,
    Independent,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SolverArg {
    Inverse,
    Power,
}

/// Where results go.
struct Sink {
    common: Common,
    manifest: Manifest,
}

impl Sink {
    fn new(subcommand: &str, common: &Common, params: serde_json::Value) -> Result<(Self, ModelSpec)> {
        let bytes = fs::read(&common.config)
            .map_err(|e| Error::Config(format!("{}: {e}", common.config.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Config(e.to_string()))?;
        let spec = ModelConfig::from_json(text)?.build()?;
        let manifest = Manifest::new(
            subcommand,
            &common.config.display().to_string(),
            &bytes,
            common.seed,
            params,
        );
        Ok((
            Self {
                common: common.clone(),
                manifest,
            },
            spec,
        ))
    }

    fn out_is_file(out: &Path) -> bool {
        matches!(out.extension().and_then(|e| e.to_str()), Some("csv" | "json"))
    }

    /// Write the primary output; `name` is its file name in directory mode.
    fn primary(&mut self, name: &str, content: &str) -> Result<()> {
        match &self.common.out {
            None => {
                print!("{content}");
                std::io::stdout().flush()?;
            }
            Some(out) if Self::out_is_file(out) => {
                if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                    fs::create_dir_all(parent)?;
                }
                fs::write(out, content)?;
                self.manifest.outputs.push(out.display().to_string());
            }
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let path = dir.join(name);
                fs::write(&path, content)?;
                self.manifest.outputs.push(path.display().to_string());
            }
        }
        Ok(())
    }

    /// Secondary output; only written in directory mode, or beside an
    /// output file, else printed to standard error.
    fn secondary(&mut self, name: &str, content: &str) -> Result<()> {
        let path = match &self.common.out {
            None => {
                eprint!("{content}");
                return Ok(());
            }
            Some(out) if Self::out_is_file(out) => {
                let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
                out.with_file_name(format!("{stem}.{name}"))
            }
            Some(dir) => dir.join(name),
        };
        fs::write(&path, content)?;
        self.manifest.outputs.push(path.display().to_string());
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let path = match &self.common.out {
            None => return Ok(()),
            Some(out) if Self::out_is_file(out) => {
                let mut p = out.clone().into_os_string();
                p.push(".manifest.json");
                PathBuf::from(p)
            }
            Some(dir) => dir.join("manifest.json"),
        };
        fs::write(path, serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        Ok(())
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn broadcast(x0: &[f64], d: usize) -> Result<Vec<f64>> {
    match x0.len() {
        1 => Ok(vec![x0[0]; d]),
        n if n == d => Ok(x0.to_vec()),
        n => Err(Error::Usage(format!("--x0 has {n} values for {d} groups"))),
    }
}

fn gcurve_csv(curve: &GCurve) -> String {
    let mut s = String::from(GCurve::CSV_HEADER);
    s.push('\n');
    for row in curve.csv_rows() {
        s.push_str(&row);
        s.push('\n');
    }
    s
}

fn p_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(to >= from) {
        return Err(Error::Usage("need --p-step > 0 and --p-to >= --p-from".into()));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    // snap to the step lattice so that 0 is hit exactly
    Ok((0..=n)
        .map(|k| {
            let p = from + k as f64 * step;
            let r = (p / step).round() * step;
            if (p - r).abs() < 1e-9 * step { r } else { p }
        })
        .collect())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Validate { common, grid } => {
            let (mut sink, spec) = Sink::new("validate", &common, json!({ "grid": grid }))?;
            let report = validate_model(&spec, grid)?;
            match &common.out {
                Some(_) => sink.primary("validation.json", &to_json(&report)?)?,
                None => println!("{report}"),
            }
            sink.finish()?;
            if !report.passed() {
                return Err(Error::InvalidModel("model fails the standing assumptions".into()));
            }
        }
        Command::Chain {
            common,
            k,
            x0,
            env,
            horizon,
            thresholds,
            reps,
            event_cap,
        } => {
            let params = json!({ "K": k, "x0": x0, "env": env, "horizon": horizon,
                "thresholds": thresholds, "reps": reps, "event_cap": event_cap });
            let (mut sink, spec) = Sink::new("chain", &common, params)?;
            let sizes = spec.group_sizes(k)?;
            let x0 = broadcast(&x0, spec.dim())?;
            let init = ChainState::floor_of(&x0, &sizes, env);
            if reps >= 2 {
                let s = monte_carlo_extinction_capped(&spec, &sizes, &init, reps, common.seed, event_cap)?;
                let csv = format!("{}\n{}\n", crate::chain::ExtinctionSummary::CSV_HEADER, s.csv_row());
                sink.primary("extinction.csv", &csv)?;
            } else {
                let opts = ChainOptions {
                    horizon,
                    thresholds,
                    event_cap,
                    record_events: true,
                };
                let path = simulate_chain(&spec, &sizes, &init, &opts, RngStream::new(common.seed, 0))?;
                let mut buf = Vec::new();
                path.write_csv(&mut buf)?;
                sink.primary("path.csv", &String::from_utf8_lossy(&buf))?;
                let summary = json!({
                    "termination": path.termination,
                    "extinction_time": path.extinction_time,
                    "hitting": path.hitting,
                    "event_count": path.event_count,
                });
                sink.secondary("summary.json", &to_json(&summary)?)?;
            }
            sink.finish()?;
        }
        Command::Pdmp {
            common,
            x0,
            env,
            horizon,
            dt,
            angular,
        } => {
            let params = json!({ "x0": x0, "env": env, "T": horizon, "dt": dt, "angular": angular });
            let (mut sink, spec) = Sink::new("pdmp", &common, params)?;
            let d = spec.dim();
            let x0 = broadcast(&x0, d)?;
            let rng = RngStream::new(common.seed, 0);
            let mut s = String::new();
            if angular {
                let r: f64 = x0.iter().sum();
                if !(r > 0.0) {
                    return Err(Error::Usage("--angular needs a nonzero --x0".into()));
                }
                let theta0: Vec<f64> = x0.iter().map(|v| v / r).collect();
                let path = simulate_angular(&spec, &theta0, env, horizon, dt, rng)?;
                let cols: Vec<String> = (1..=d).map(|i| format!("theta_{i}")).collect();
                s.push_str(&format!("t,{},S,env\n", cols.join(",")));
                for k in 0..path.times.len() {
                    let th: Vec<String> = path.thetas[k].iter().map(|v| v.to_string()).collect();
                    s.push_str(&format!("{},{},{},{}\n", path.times[k], th.join(","), path.s[k], path.envs[k]));
                }
                sink.primary("angular.csv", &s)?;
            } else {
                let path = simulate_pdmp(&spec, &x0, env, horizon, dt, rng)?;
                let cols: Vec<String> = (1..=d).map(|i| format!("x_{i}")).collect();
                s.push_str(&format!("t,{},env\n", cols.join(",")));
                for k in 0..path.times.len() {
                    let xs: Vec<String> = path.states[k].iter().map(|v| v.to_string()).collect();
                    s.push_str(&format!("{},{},{}\n", path.times[k], xs.join(","), path.envs[k]));
                }
                sink.primary("pdmp.csv", &s)?;
            }
            sink.finish()?;
        }
        Command::Lambda {
            common,
            horizon,
            burn_in,
            batches,
        } => {
            let params = json!({ "T": horizon, "burn_in": burn_in, "batches": batches });
            let (mut sink, spec) = Sink::new("lambda", &common, params)?;
            let est = estimate_lambda(&spec, horizon, burn_in, batches, RngStream::new(common.seed, 0).derive("lambda"))?;
            sink.primary("lambda.json", &to_json(&est)?)?;
            sink.finish()?;
        }
        Command::Gcurve {
            common,
            g,
            p_from,
            p_to,
            p_step,
            monte_carlo,
            p_max,
            tol,
        } => {
            let grid = p_grid(p_from, p_to, p_step)?;
            let params = json!({ "grid": grid, "n_rep": g.n_rep, "horizons": g.horizons,
                "estimator": format!("{:?}", g.estimator), "monte_carlo": monte_carlo, "p_max": p_max, "tol": tol });
            let (mut sink, spec) = Sink::new("gcurve", &common, params)?;
            let rng = RngStream::new(common.seed, 0).derive("gcurve");
            let run = run_gcurve(&spec, &grid, &g.params(), monte_carlo, p_max, tol, rng)?;
            sink.primary("gcurve.csv", &gcurve_csv(&run.curve))?;
            let roots = json!({ "pstar": run.pstar, "pstar_lower": run.pstar_lower });
            sink.secondary("pstar.json", &to_json(&roots)?)?;
            sink.finish()?;
        }
        Command::Pstar {
            common,
            g,
            p_max,
            tol,
            lower,
        } => {
            let params = json!({ "p_max": p_max, "tol": tol, "lower": lower, "n_rep": g.n_rep, "horizons": g.horizons });
            let (mut sink, spec) = Sink::new("pstar", &common, params)?;
            let mc = McParams {
                g: g.params(),
                rng: RngStream::new(common.seed, 0).derive("pstar"),
                ..McParams::default()
            };
            let r = if lower {
                estimate_pstar_lower(&spec, p_max, tol, &mc)?
            } else {
                estimate_pstar(&spec, p_max, tol, &mc)?
            };
            let out = json!({
                "status": r.status,
                "value": r.value,
                "bracket": r.bracket,
                "method": r.method.as_str(),
                "confident": r.confident,
                "lambda": r.lambda,
                "message": r.message,
            });
            sink.primary("pstar.json", &to_json(&out)?)?;
            sink.finish()?;
        }
        Command::Qsd {
            common,
            k,
            tol,
            max_iter,
            method,
        } => {
            let params = json!({ "K": k, "tol": tol, "max_iter": max_iter, "method": format!("{method:?}") });
            let (mut sink, spec) = Sink::new("qsd", &common, params)?;
            let sizes = spec.group_sizes(k)?;
            let opts = QsdOptions {
                tol,
                max_iter,
                method: match method {
                    SolverArg::Inverse => QsdMethod::InverseIteration,
                    SolverArg::Power => QsdMethod::Power,
                },
            };
            let (index, r) = compute_qsd(&spec, &sizes, &opts)?;
            let mut buf = Vec::new();
            r.write_csv(&index, &mut buf)?;
            sink.primary("qsd.csv", &String::from_utf8_lossy(&buf))?;
            let summary = json!({
                "K": k,
                "sizes": sizes,
                "lambda": r.lambda,
                "residual": r.residual,
                "iters": r.iterations,
                "converged": r.converged,
                "mean_extinction_time": 1.0 / r.lambda,
                "moment_p1": qsd_moment(&r, &index, 1.0),
                "mass_below_0.1": qsd_mass_below(&r, &index, 0.1)?,
            });
            sink.secondary("summary.json", &to_json(&summary)?)?;
            sink.finish()?;
            if !r.converged {
                return Err(Error::Numerical(format!(
                    "QSD solver stopped after {} iterations with residual {:e}",
                    r.iterations, r.residual
                )));
            }
        }
        Command::Scaling {
            common,
            ladder,
            mc_reps,
            x0,
            no_qsd,
            event_cap,
        } => {
            if ladder.is_empty() {
                return Err(Error::Usage("empty K ladder".into()));
            }
            let params = json!({ "ladder": ladder, "mc_reps": mc_reps, "x0": x0, "qsd": !no_qsd, "event_cap": event_cap });
            let (mut sink, spec) = Sink::new("scaling", &common, params)?;
            let cfg = ScalingConfig {
                ladder,
                qsd: !no_qsd,
                mc_reps,
                x0,
                event_cap,
                seed: common.seed,
                ..ScalingConfig::default()
            };
            let study = run_scaling_study(&spec, &cfg)?;
            sink.primary("scaling.csv", &study.csv())?;
            if mc_reps > 0 {
                sink.secondary("extinction.csv", &study.extinction_csv())?;
            }
            let errors: Vec<_> = study
                .rows
                .iter()
                .filter_map(|r| r.error.as_ref().map(|e| json!({ "K": r.k, "error": e })))
                .collect();
            sink.secondary("summary.json", &to_json(&json!({ "summary": study.summary, "errors": errors }))?)?;
            sink.finish()?;
        }
    }
    Ok(())
}

fn configure_threads() {
    if let Ok(v) = std::env::var("EPISWITCH_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// Run the command line `argv` (including the program name) and return
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_hits_zero() {
        let g = p_grid(-2.0, 2.0, 0.25).unwrap();
        assert_eq!(g.len(), 17);
        assert_eq!(g[8], 0.0);
        assert!(p_grid(1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(run(["episwitch", "frobnicate"]), 1);
        assert_eq!(run(["episwitch", "qsd", "--bogus"]), 1);
    }

    #[test]
    fn missing_config_is_model_error() {
        assert_eq!(run(["episwitch", "validate", "--config", "/nonexistent/model.json"]), 2);
    }
}
