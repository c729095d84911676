//! Orchestration of multi-K studies and run manifests.

use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::chain::{extinction_times, summarize_extinction, ChainState, ExtinctionSummary, DEFAULT_EVENT_CAP};
use crate::error::{Error, Result};
use crate::lyapunov::{
    estimate_lambda, estimate_pstar, estimate_pstar_lower, g_curve, has_exact_route, GCurve, GMethod, GParams,
    McParams, RootResult, RootStatus,
};
use crate::model::ModelSpec;
use crate::qsd::{compute_qsd, QsdOptions};
use crate::rng::RngStream;
use crate::spectral::lambda_exact_1d;

/// Provenance record written next to every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config_path: String,
    pub config_sha256: String,
    pub seed: u64,
    pub parameters: serde_json::Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(subcommand: &str, config_path: &str, config_bytes: &[u8], seed: u64, parameters: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            config_path: config_path.to_string(),
            config_sha256: sha256_hex(config_bytes),
            seed,
            parameters,
            outputs: Vec::new(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingConfig {
    pub ladder: Vec<usize>,
    /// Compute `lambda^K` from the QSD.
    pub qsd: bool,
    pub qsd_options: QsdOptions,
    /// Monte Carlo replicates of the extinction time per K (0 = none).
    pub mc_reps: usize,
    /// Initial proportion infected in every group for Monte Carlo runs.
    pub x0: f64,
    pub env0: usize,
    pub event_cap: u64,
    pub seed: u64,
    /// Parameters for the Lyapunov estimate when no exact route exists.
    pub lambda_horizon: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            ladder: Vec::new(),
            qsd: true,
            qsd_options: QsdOptions::default(),
            mc_reps: 0,
            x0: 0.5,
            env0: 0,
            event_cap: DEFAULT_EVENT_CAP,
            seed: 0,
            lambda_horizon: 1e4,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub k: usize,
    pub lambda: Option<f64>,
    pub residual: Option<f64>,
    pub iters: Option<usize>,
    pub extinction: Option<ExtinctionSummary>,
    pub error: Option<String>,
}

/// Least-squares fit `y = a + b x` with a 95% interval on `b`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_half_width: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let half = if n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        let se = (rss / (nf - 2.0) / sxx).sqrt();
        StudentsT::new(0.0, 1.0, nf - 2.0)
            .map(|t| t.inverse_cdf(0.975) * se)
            .unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    Some(LinearFit {
        intercept,
        slope,
        slope_half_width: half,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingSummary {
    pub lambda: f64,
    pub persistent: bool,
    /// Slope of `-log lambda^K` against `log K`.
    pub qsd_exponent: Option<LinearFit>,
    /// Slope of `log E[tau]` against `log K`.
    pub mc_exponent: Option<LinearFit>,
    /// Least-squares `c` in `E[tau] ~ c log K`.
    pub log_coefficient: Option<f64>,
    /// Mean extinction time over `log K` for each K with a Monte Carlo estimate.
    pub tau_over_log_k: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingStudy {
    pub rows: Vec<ScalingRow>,
    pub summary: ScalingSummary,
}

impl ScalingStudy {
    pub const CSV_HEADER: &'static str = "K,lambda,residual,iters";

    pub fn csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", Self::CSV_HEADER);
        for r in &self.rows {
            let f = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.k,
                f(r.lambda),
                f(r.residual),
                r.iters.map(|i| i.to_string()).unwrap_or_default()
            );
        }
        s
    }

    pub fn extinction_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", ExtinctionSummary::CSV_HEADER);
        for r in &self.rows {
            if let Some(e) = &r.extinction {
                let _ = writeln!(s, "{}", e.csv_row());
            }
        }
        s
    }
}

/// `lambda^K` and optionally Monte Carlo extinction times along a ladder of
/// population sizes. Errors at one K are recorded and the study goes on.
pub fn run_scaling_study(spec: &ModelSpec, cfg: &ScalingConfig) -> Result<ScalingStudy> {
    if cfg.ladder.is_empty() {
        return Err(Error::Usage("empty K ladder".into()));
    }
    if !(0.0..=1.0).contains(&cfg.x0) {
        return Err(Error::Domain(format!("initial proportion {} outside [0, 1]", cfg.x0)));
    }
    let lambda = if has_exact_route(spec) {
        lambda_exact_1d(spec)?
    } else {
        let mc = McParams::default();
        estimate_lambda(
            spec,
            cfg.lambda_horizon,
            mc.lambda_burn_in.min(cfg.lambda_horizon / 10.0),
            mc.lambda_batches,
            RngStream::new(cfg.seed, 0).derive("scaling-lambda"),
        )?
        .value
    };
    let base = RngStream::new(cfg.seed, 0).derive("scaling-chain");
    let mut rows = Vec::with_capacity(cfg.ladder.len());
    for (ki, &k) in cfg.ladder.iter().enumerate() {
        let mut row = ScalingRow {
            k,
            lambda: None,
            residual: None,
            iters: None,
            extinction: None,
            error: None,
        };
        let sizes = match spec.group_sizes(k) {
            Ok(s) => s,
            Err(e) => {
                row.error = Some(e.to_string());
                rows.push(row);
                continue;
            }
        };
        if cfg.qsd {
            match compute_qsd(spec, &sizes, &cfg.qsd_options) {
                Ok((_, r)) => {
                    row.lambda = Some(r.lambda);
                    row.residual = Some(r.residual);
                    row.iters = Some(r.iterations);
                    if !r.converged {
                        row.error = Some(format!("QSD solver did not converge (residual {:e})", r.residual));
                    }
                }
                Err(e) => row.error = Some(e.to_string()),
            }
        }
        if cfg.mc_reps > 0 {
            let init = ChainState::floor_of(&vec![cfg.x0; spec.dim()], &sizes, cfg.env0);
            let stream = RngStream::new(base.seed ^ (ki as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15), 0);
            let res = extinction_times(spec, &sizes, cfg.mc_reps, stream, cfg.event_cap, |_| init.clone())
                .and_then(|t| summarize_extinction(k, &t));
            match res {
                Ok(s) => row.extinction = Some(s),
                Err(e) => {
                    let msg = e.to_string();
                    row.error = Some(match row.error.take() {
                        Some(prev) => format!("{prev}; {msg}"),
                        None => msg,
                    });
                }
            }
        }
        rows.push(row);
    }

    let persistent = lambda > 0.0;
    let lam: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.lambda.filter(|l| *l > 0.0).map(|l| ((r.k as f64).ln(), -l.ln())))
        .collect();
    let taus: Vec<(usize, f64)> = rows
        .iter()
        .filter_map(|r| r.extinction.as_ref().map(|e| (r.k, e.mean_tau)))
        .collect();
    let qsd_exponent = linear_fit(
        &lam.iter().map(|p| p.0).collect::<Vec<_>>(),
        &lam.iter().map(|p| p.1).collect::<Vec<_>>(),
    );
    let mc_exponent = linear_fit(
        &taus.iter().map(|p| (p.0 as f64).ln()).collect::<Vec<_>>(),
        &taus.iter().map(|p| p.1.ln()).collect::<Vec<_>>(),
    );
    let log_coefficient = (!taus.is_empty()).then(|| {
        let num: f64 = taus.iter().map(|&(k, t)| t * (k as f64).ln()).sum();
        let den: f64 = taus.iter().map(|&(k, _)| (k as f64).ln().powi(2)).sum();
        num / den
    });
    let tau_over_log_k = taus.iter().map(|&(k, t)| (k, t / (k as f64).ln())).collect();
    Ok(ScalingStudy {
        rows,
        summary: ScalingSummary {
            lambda,
            persistent,
            qsd_exponent,
            mc_exponent,
            log_coefficient,
            tau_over_log_k,
        },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GCurveRun {
    pub curve: GCurve,
    pub pstar: RootResult,
    pub pstar_lower: RootResult,
}

/// First grid crossing of `g` above `2 SE` along `sign * p`, `p > 0`,
/// linearly interpolated.
fn root_from_curve(curve: &GCurve, sign: f64, lambda: (f64, f64)) -> RootResult {
    let mut pts: Vec<(f64, f64, f64)> = curve
        .points
        .iter()
        .filter(|pt| pt.p * sign > 0.0)
        .map(|pt| (pt.p.abs(), pt.g, pt.se))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut prev = (0.0, 0.0);
    let mut out = RootResult {
        status: RootStatus::NotFoundBelowPMax,
        value: None,
        bracket: None,
        method: GMethod::MonteCarlo,
        confident: true,
        lambda: lambda.0,
        lambda_half_width: lambda.1,
        message: "no confident sign change on the grid".into(),
    };
    for (p, g, se) in pts {
        if g > 2.0 * se {
            let v = if g > prev.1 { prev.0 + (p - prev.0) * (-prev.1) / (g - prev.1) } else { p };
            out.status = RootStatus::Finite;
            out.value = Some(v.clamp(prev.0, p));
            out.bracket = Some((prev.0, p));
            out.message = "interpolated between grid points".into();
            break;
        }
        prev = (p, g);
    }
    out
}

/// The g-curve on `grid` and the derived `p*` and `p_*`.
pub fn run_gcurve(
    spec: &ModelSpec,
    grid: &[f64],
    params: &GParams,
    force_mc: bool,
    p_max: f64,
    tol: f64,
    rng: RngStream,
) -> Result<GCurveRun> {
    let curve = g_curve(spec, grid, params, force_mc, rng)?;
    let mc = McParams {
        g: params.clone(),
        rng,
        ..McParams::default()
    };
    if has_exact_route(spec) && !force_mc {
        return Ok(GCurveRun {
            pstar: estimate_pstar(spec, p_max, tol, &mc)?,
            pstar_lower: estimate_pstar_lower(spec, p_max, tol, &mc)?,
            curve,
        });
    }
    let lam = estimate_lambda(spec, mc.lambda_horizon, mc.lambda_burn_in, mc.lambda_batches, rng)?;
    let pair = (lam.value, lam.half_width);
    let not_applicable = |msg: &str| RootResult {
        status: RootStatus::NotApplicable,
        value: None,
        bracket: None,
        method: GMethod::MonteCarlo,
        confident: true,
        lambda: pair.0,
        lambda_half_width: pair.1,
        message: msg.into(),
    };
    let pstar = if lam.value > 2.0 * lam.half_width {
        root_from_curve(&curve, -1.0, pair)
    } else {
        not_applicable("Lambda is not confidently positive")
    };
    let pstar_lower = if lam.value < -2.0 * lam.half_width {
        root_from_curve(&curve, 1.0, pair)
    } else {
        not_applicable("Lambda is not confidently negative")
    };
    Ok(GCurveRun {
        curve,
        pstar,
        pstar_lower,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    #[test]
    fn exact_line_fit() {
        let f = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!(f.slope_half_width.abs() < 1e-9);
    }

    #[test]
    fn empty_ladder_is_usage_error() {
        let spec = ModelSpec::scalar(&[2.0], 1.0, Matrix::zeros(1)).unwrap();
        let err = run_scaling_study(&spec, &ScalingConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
