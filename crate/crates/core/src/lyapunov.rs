//! Monte Carlo estimation of the top Lyapunov exponent and of the moment
//! Lyapunov exponents `g(p)`, root finding for `p*` and `p_*`, and the
//! zero-accessibility probe.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::pdmp::{linearizations, AngularProcess};
use crate::rng::RngStream;
use crate::spectral::{environment_exponents, g_exact_1d, lambda_exact_1d};

pub const DEFAULT_P_MAX: f64 = 20.0;
pub const DEFAULT_HORIZONS: [f64; 4] = [25.0, 50.0, 100.0, 200.0];

#[derive(Debug, Clone, Serialize)]
pub struct LambdaEstimate {
    pub value: f64,
    /// Half-width of the 95% batch-means confidence interval.
    pub half_width: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub n_batches: usize,
    pub batch_means: Vec<f64>,
}

impl LambdaEstimate {
    pub fn contains(&self, v: f64) -> bool {
        (self.value - v).abs() <= self.half_width
    }
}

/// `Lambda` as the time average of `G_0` along one long angular path started
/// from a uniform direction and environment.
pub fn estimate_lambda(
    spec: &ModelSpec,
    horizon: f64,
    burn_in: f64,
    n_batches: usize,
    rng: RngStream,
) -> Result<LambdaEstimate> {
    if !(horizon > burn_in) || burn_in < 0.0 {
        return Err(Error::Domain(format!(
            "need horizon > burn-in >= 0, got {horizon} and {burn_in}"
        )));
    }
    if n_batches < 10 {
        return Err(Error::Domain("at least 10 batches are needed".into()));
    }
    let mats = linearizations(spec)?;
    let mut init = rng.derive("lambda-init").generator();
    let theta0 = init.simplex(spec.dim());
    let env0 = init.below(spec.num_envs());
    let mut proc = AngularProcess::new(spec, &mats, &theta0, env0, rng.derive("lambda").generator())?;
    proc.advance_to(spec, burn_in)?;
    let s0 = proc.s;
    let width = (horizon - burn_in) / n_batches as f64;
    let mut batch_means = Vec::with_capacity(n_batches);
    let mut last = s0;
    for b in 1..=n_batches {
        let t = if b == n_batches { horizon } else { burn_in + b as f64 * width };
        proc.advance_to(spec, t)?;
        batch_means.push((proc.s - last) / width);
        last = proc.s;
    }
    let value = (proc.s - s0) / (horizon - burn_in);
    let nb = n_batches as f64;
    let mean = batch_means.iter().sum::<f64>() / nb;
    let var = batch_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (nb - 1.0);
    let t = StudentsT::new(0.0, 1.0, nb - 1.0)
        .map_err(|e| Error::Numerical(e.to_string()))?
        .inverse_cdf(0.975);
    let half_width = (t * (var / nb).sqrt()).max(f64::EPSILON * value.abs().max(1.0));
    if !value.is_finite() {
        return Err(Error::Numerical("non-finite Lyapunov estimate".into()));
    }
    Ok(LambdaEstimate {
        value,
        half_width,
        horizon,
        burn_in,
        n_batches,
        batch_means,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GMethod {
    Exact1d,
    MonteCarlo,
}

impl GMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            GMethod::Exact1d => "exact-1d",
            GMethod::MonteCarlo => "monte-carlo",
        }
    }
}

/// Monte Carlo scheme for `E[exp(p S_t)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GEstimator {
    /// Interacting particle system: particles carry weights `exp(p dS)` and
    /// are resampled (systematic) whenever the effective sample size drops
    /// below half the population. The normalising constants give an
    /// unbiased estimate of `E[exp(p S_t)]` whose variance stays bounded
    /// relative to its mean.
    Resampling,
    /// Independent replicates with a log-sum-exp average and a bootstrap
    /// standard error. Badly biased once `exp(p S_t)` is heavy tailed.
    Independent,
}

#[derive(Debug, Clone, Serialize)]
pub struct GParams {
    pub horizons: Vec<f64>,
    pub n_rep: usize,
    pub estimator: GEstimator,
    /// Time between weight checks in the resampling scheme.
    pub resample_dt: f64,
    pub bootstrap: usize,
    /// Batches for the standard error of the resampling scheme.
    pub se_batches: usize,
}

impl Default for GParams {
    fn default() -> Self {
        Self {
            horizons: DEFAULT_HORIZONS.to_vec(),
            n_rep: 2000,
            estimator: GEstimator::Resampling,
            resample_dt: 0.5,
            bootstrap: 200,
            se_batches: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GEstimate {
    pub p: f64,
    pub g: f64,
    pub se: f64,
    pub method: GMethod,
    pub horizons: Vec<f64>,
    /// `log E[exp(p S_t)] / t` at each horizon.
    pub per_horizon: Vec<f64>,
    /// Smallest effective sample size of the weights seen.
    pub min_ess: f64,
    /// Set when the effective sample size fell below 10.
    pub heavy_tail_warning: bool,
}

fn check_params(params: &GParams) -> Result<()> {
    if params.n_rep < 100 {
        return Err(Error::Domain("estimate_g needs at least 100 replicates".into()));
    }
    if params.horizons.len() < 3 {
        return Err(Error::Domain("estimate_g needs at least 3 horizons".into()));
    }
    if params.horizons.windows(2).any(|w| !(w[1] > w[0])) || !(params.horizons[0] > 0.0) {
        return Err(Error::Domain("horizons must be positive and increasing".into()));
    }
    if !(params.resample_dt > 0.0) || params.se_batches < 2 {
        return Err(Error::Domain("invalid resampling parameters".into()));
    }
    Ok(())
}

/// Slope of the least-squares line through `(t_k, y_k)`. With `y = t f(t)`
/// this is the weighted (`t^2`) extrapolation of `f` against `1/t`.
fn ls_slope(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let sxx: f64 = t.iter().map(|a| (a - mt).powi(2)).sum();
    sxy / sxx
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

fn ess(logw: &[f64]) -> f64 {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (s1, s2) = logw.iter().fold((0.0, 0.0), |(a, b), x| {
        let w = (x - m).exp();
        (a + w, b + w * w)
    });
    s1 * s1 / s2
}

/// Monte Carlo estimate of `g(p)`; particles start uniform on the simplex
/// and in a uniform environment.
pub fn estimate_g(spec: &ModelSpec, p: f64, params: &GParams, rng: RngStream) -> Result<GEstimate> {
    check_params(params)?;
    match params.estimator {
        GEstimator::Resampling => estimate_g_resampling(spec, p, params, rng),
        GEstimator::Independent => estimate_g_independent(spec, p, params, rng),
    }
}

fn estimate_g_resampling(spec: &ModelSpec, p: f64, params: &GParams, rng: RngStream) -> Result<GEstimate> {
    let n = params.n_rep;
    let mats = linearizations(spec)?;
    let t_first = params.horizons[0];
    let t_max = *params.horizons.last().unwrap_or(&t_first);

    // checkpoints: the resampling grid, the ladder and the SE batch edges
    let nb = params.se_batches;
    let batch_edges: Vec<f64> = (0..=nb)
        .map(|b| t_first + (t_max - t_first) * b as f64 / nb as f64)
        .collect();
    let mut checkpoints: Vec<f64> = (1..)
        .map(|k| k as f64 * params.resample_dt)
        .take_while(|&t| t < t_max)
        .chain(params.horizons.iter().copied())
        .chain(batch_edges.iter().copied())
        .collect();
    checkpoints.sort_by(f64::total_cmp);
    checkpoints.dedup_by(|a, b| (*a - *b).abs() < 1e-9);

    let mut init = rng.derive("g-init").generator();
    let stream = rng.derive("g-particles");
    let mut particles = (0..n)
        .map(|i| {
            let theta = init.simplex(spec.dim());
            let env = init.below(spec.num_envs());
            AngularProcess::new(spec, &mats, &theta, env, stream.with_index(i as u64).generator())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut base_s: Vec<f64> = vec![0.0; n];
    let mut log_w = vec![0.0; n];
    let mut log_z_base = 0.0;
    let mut epoch = 0u64;
    let mut min_ess = n as f64;
    let mut log_z_at = Vec::with_capacity(checkpoints.len());
    let mut resample_rng = rng.derive("g-resample").generator();

    for &t in &checkpoints {
        particles
            .par_iter_mut()
            .try_for_each(|pr| pr.advance_to(spec, t))?;
        for i in 0..n {
            log_w[i] = p * (particles[i].s - base_s[i]);
        }
        let log_z = log_z_base + if p == 0.0 { 0.0 } else { log_mean_exp(&log_w) };
        log_z_at.push((t, log_z));
        if p == 0.0 {
            continue;
        }
        let e = ess(&log_w);
        min_ess = min_ess.min(e);
        if e < 0.5 * n as f64 && t < t_max {
            // systematic resampling
            let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = log_w.iter().map(|x| (x - m).exp()).collect();
            let total: f64 = w.iter().sum();
            let u0 = resample_rng.uniform();
            let mut picks = Vec::with_capacity(n);
            let mut acc = w[0] / total;
            let mut j = 0;
            for k in 0..n {
                let u = (u0 + k as f64) / n as f64;
                while u > acc && j + 1 < n {
                    j += 1;
                    acc += w[j] / total;
                }
                picks.push(j);
            }
            let snapshot: Vec<(Vec<f64>, f64, usize, f64)> = particles
                .iter()
                .map(|pr| (pr.theta.clone(), pr.s, pr.env, pr.t))
                .collect();
            epoch += 1;
            for (k, pr) in particles.iter_mut().enumerate() {
                let (theta, s, env, tt) = &snapshot[picks[k]];
                pr.theta.copy_from_slice(theta);
                pr.s = *s;
                pr.env = *env;
                pr.t = *tt;
                pr.reseed(stream.with_index((epoch << 32) | k as u64).generator());
                base_s[k] = pr.s;
            }
            log_z_base = log_z;
        }
    }

    let lookup = |t: f64| {
        log_z_at
            .iter()
            .find(|(s, _)| (s - t).abs() < 1e-9)
            .map(|&(_, z)| z)
            .unwrap_or(f64::NAN)
    };
    let ys: Vec<f64> = params.horizons.iter().map(|&t| lookup(t)).collect();
    let per_horizon: Vec<f64> = params.horizons.iter().zip(&ys).map(|(t, y)| y / t).collect();
    let g = if p == 0.0 { 0.0 } else { ls_slope(&params.horizons, &ys) };
    let se = if p == 0.0 {
        0.0
    } else {
        let width = (t_max - t_first) / nb as f64;
        let rates: Vec<f64> = batch_edges
            .windows(2)
            .map(|w| (lookup(w[1]) - lookup(w[0])) / width)
            .collect();
        let m = rates.iter().sum::<f64>() / nb as f64;
        let var = rates.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (nb as f64 - 1.0);
        (var / nb as f64).sqrt()
    };
    if !g.is_finite() {
        return Err(Error::Numerical(format!("non-finite g estimate at p = {p}")));
    }
    Ok(GEstimate {
        p,
        g,
        se,
        method: GMethod::MonteCarlo,
        horizons: params.horizons.clone(),
        per_horizon,
        min_ess,
        heavy_tail_warning: min_ess < 10.0,
    })
}

fn estimate_g_independent(spec: &ModelSpec, p: f64, params: &GParams, rng: RngStream) -> Result<GEstimate> {
    let n = params.n_rep;
    let mats = linearizations(spec)?;
    let stream = rng.derive("g-independent");
    // s[j][k] = S_j(t_k)
    let s: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut g = stream.with_index(j as u64).generator();
            let theta = g.simplex(spec.dim());
            let env = g.below(spec.num_envs());
            let mut pr = AngularProcess::new(spec, &mats, &theta, env, g)?;
            params
                .horizons
                .iter()
                .map(|&t| pr.advance_to(spec, t).map(|_| pr.s))
                .collect()
        })
        .collect::<Result<_>>()?;
    let fit = |rows: &[usize]| -> (f64, Vec<f64>) {
        let ys: Vec<f64> = (0..params.horizons.len())
            .map(|k| {
                let v: Vec<f64> = rows.iter().map(|&j| p * s[j][k]).collect();
                log_mean_exp(&v)
            })
            .collect();
        (ls_slope(&params.horizons, &ys), ys)
    };
    let all: Vec<usize> = (0..n).collect();
    let (g, ys) = fit(&all);
    let last = params.horizons.len() - 1;
    let lw: Vec<f64> = (0..n).map(|j| p * s[j][last]).collect();
    let min_ess = ess(&lw);
    let se = if p == 0.0 {
        0.0
    } else {
        let mut b = rng.derive("g-bootstrap").generator();
        let reps: Vec<f64> = (0..params.bootstrap)
            .map(|_| {
                let rows: Vec<usize> = (0..n).map(|_| b.below(n)).collect();
                fit(&rows).0
            })
            .collect();
        let m = reps.iter().sum::<f64>() / reps.len() as f64;
        (reps.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (reps.len() as f64 - 1.0)).sqrt()
    };
    Ok(GEstimate {
        p,
        g: if p == 0.0 { 0.0 } else { g },
        se,
        method: GMethod::MonteCarlo,
        horizons: params.horizons.clone(),
        per_horizon: params.horizons.iter().zip(&ys).map(|(t, y)| y / t).collect(),
        min_ess,
        heavy_tail_warning: min_ess < 10.0,
    })
}

/// Whether the exact one-group route applies.
pub fn has_exact_route(spec: &ModelSpec) -> bool {
    spec.dim() == 1 && spec.constant_switch().is_some()
}

#[derive(Debug, Clone, Serialize)]
pub struct GPoint {
    pub p: f64,
    pub g: f64,
    pub se: f64,
    pub method: GMethod,
}

#[derive(Debug, Clone, Serialize)]
pub struct GCurve {
    pub points: Vec<GPoint>,
    /// Monte Carlo diagnostics per grid point; empty for the exact route.
    pub diagnostics: Vec<GEstimate>,
}

impl GCurve {
    pub const CSV_HEADER: &'static str = "p,g,se,method";

    pub fn csv_rows(&self) -> Vec<String> {
        self.points
            .iter()
            .map(|pt| format!("{},{},{},{}", pt.p, pt.g, pt.se, pt.method.as_str()))
            .collect()
    }

    /// Interior points where the second difference is below `-2 SE`.
    pub fn convexity_violations(&self) -> Vec<f64> {
        self.points
            .windows(3)
            .filter(|w| {
                let dd = w[0].g - 2.0 * w[1].g + w[2].g;
                let se = w[0].se + 2.0 * w[1].se + w[2].se;
                dd < -2.0 * se - 1e-9
            })
            .map(|w| w[1].p)
            .collect()
    }
}

/// `g` on a grid of `p`; exact when the model has one group and constant
/// switching unless `force_mc`. Monte Carlo points share their randomness.
pub fn g_curve(spec: &ModelSpec, grid: &[f64], params: &GParams, force_mc: bool, rng: RngStream) -> Result<GCurve> {
    if grid.is_empty() {
        return Err(Error::Domain("empty p grid".into()));
    }
    if has_exact_route(spec) && !force_mc {
        let points = grid
            .iter()
            .map(|&p| {
                Ok(GPoint {
                    p,
                    g: g_exact_1d(spec, p)?,
                    se: 0.0,
                    method: GMethod::Exact1d,
                })
            })
            .collect::<Result<_>>()?;
        return Ok(GCurve {
            points,
            diagnostics: Vec::new(),
        });
    }
    let mut points = Vec::with_capacity(grid.len());
    let mut diagnostics = Vec::with_capacity(grid.len());
    for &p in grid {
        let est = estimate_g(spec, p, params, rng)?;
        points.push(GPoint {
            p,
            g: est.g,
            se: est.se,
            method: est.method,
        });
        diagnostics.push(est);
    }
    Ok(GCurve { points, diagnostics })
}

#[derive(Debug, Clone, Serialize)]
pub struct McParams {
    pub g: GParams,
    pub lambda_horizon: f64,
    pub lambda_burn_in: f64,
    pub lambda_batches: usize,
    pub rng: RngStream,
}

impl Default for McParams {
    fn default() -> Self {
        Self {
            g: GParams::default(),
            lambda_horizon: 1e5,
            lambda_burn_in: 100.0,
            lambda_batches: 20,
            rng: RngStream::new(0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RootStatus {
    Finite,
    NotFoundBelowPMax,
    NotApplicable,
}

#[derive(Debug, Clone, Serialize)]
pub struct RootResult {
    pub status: RootStatus,
    pub value: Option<f64>,
    pub bracket: Option<(f64, f64)>,
    pub method: GMethod,
    /// False when bisection stopped on a sign test that was not
    /// significant at 2 SE; the bracket is then the last confident one.
    pub confident: bool,
    pub lambda: f64,
    pub lambda_half_width: f64,
    pub message: String,
}

fn lambda_for(spec: &ModelSpec, mc: &McParams) -> Result<(f64, f64, GMethod)> {
    if has_exact_route(spec) {
        Ok((lambda_exact_1d(spec)?, 0.0, GMethod::Exact1d))
    } else {
        let est = estimate_lambda(spec, mc.lambda_horizon, mc.lambda_burn_in, mc.lambda_batches, mc.rng)?;
        Ok((est.value, est.half_width, GMethod::MonteCarlo))
    }
}

/// Bisection for the first sign change of `h` on `(0, p_max]`, where `h` is
/// negative near 0. `h` returns `(value, se)`.
fn bisect_sign_change(
    p_max: f64,
    tol: f64,
    method: GMethod,
    lambda: (f64, f64),
    mut h: impl FnMut(f64) -> Result<(f64, f64)>,
) -> Result<RootResult> {
    let (top, top_se) = h(p_max)?;
    let mut result = RootResult {
        status: RootStatus::NotFoundBelowPMax,
        value: None,
        bracket: None,
        method,
        confident: true,
        lambda: lambda.0,
        lambda_half_width: lambda.1,
        message: String::new(),
    };
    if !(top > 2.0 * top_se) {
        result.message = format!("no confident sign change below p_max = {p_max}");
        return Ok(result);
    }
    let (mut lo, mut hi) = (0.0, p_max);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let (v, se) = h(mid)?;
        if v > 2.0 * se {
            hi = mid;
        } else if v < -2.0 * se {
            lo = mid;
        } else {
            result.confident = false;
            result.message = format!("sign of g at {mid} not significant at 2 SE");
            break;
        }
    }
    result.status = RootStatus::Finite;
    result.value = Some(0.5 * (lo + hi));
    result.bracket = Some((lo, hi));
    Ok(result)
}

fn validate_root_args(p_max: f64, tol: f64) -> Result<()> {
    if !(p_max > 0.0) || !(tol > 0.0) {
        return Err(Error::Domain("p_max and tol must be positive".into()));
    }
    Ok(())
}

/// `p* = inf{p > 0 : g(-p) > 0}` in the persistent regime.
pub fn estimate_pstar(spec: &ModelSpec, p_max: f64, tol: f64, mc: &McParams) -> Result<RootResult> {
    estimate_root(spec, p_max, tol, mc, -1.0)
}

/// `p_* = inf{p > 0 : g(p) > 0}` in the non-persistent regime.
pub fn estimate_pstar_lower(spec: &ModelSpec, p_max: f64, tol: f64, mc: &McParams) -> Result<RootResult> {
    estimate_root(spec, p_max, tol, mc, 1.0)
}

fn estimate_root(spec: &ModelSpec, p_max: f64, tol: f64, mc: &McParams, sign: f64) -> Result<RootResult> {
    validate_root_args(p_max, tol)?;
    let (lambda, hw, lmethod) = lambda_for(spec, mc)?;
    // p* needs Lambda > 0, p_* needs Lambda < 0
    let applicable = if sign < 0.0 {
        lambda > 2.0 * hw && lambda > 0.0
    } else {
        lambda < -2.0 * hw && lambda < 0.0
    };
    if !applicable {
        return Ok(RootResult {
            status: RootStatus::NotApplicable,
            value: None,
            bracket: None,
            method: lmethod,
            confident: true,
            lambda,
            lambda_half_width: hw,
            message: format!(
                "Lambda = {lambda} +/- {hw} does not have the sign this exponent requires"
            ),
        });
    }
    if has_exact_route(spec) {
        bisect_sign_change(p_max, tol, GMethod::Exact1d, (lambda, hw), |p| {
            Ok((g_exact_1d(spec, sign * p)?, 0.0))
        })
    } else {
        bisect_sign_change(p_max, tol, GMethod::MonteCarlo, (lambda, hw), |p| {
            let est = estimate_g(spec, sign * p, &mc.g, mc.rng)?;
            Ok((est.g, est.se))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ZeroAccess {
    Accessible { reason: String },
    /// Exact answer for one-group models.
    Inaccessible { reason: String },
    /// No evidence of accessibility up to `p_max`; not a certificate.
    InaccessibleUpToPMax { p_max: f64 },
    Undetermined { reason: String },
}

/// Whether `0` is accessible for the linearised process.
pub fn probe_zero_accessibility(spec: &ModelSpec, p_max: f64, mc: &McParams) -> Result<ZeroAccess> {
    if spec.dim() == 1 {
        let rates: Vec<f64> = (0..spec.num_envs())
            .map(|e| spec.linearization_at_zero(e).map(|a| a[(0, 0)]))
            .collect::<Result<_>>()?;
        let min = rates.iter().copied().fold(f64::INFINITY, f64::min);
        return Ok(if min < 0.0 {
            ZeroAccess::Accessible {
                reason: format!("one-group model with min A = {min} < 0"),
            }
        } else {
            ZeroAccess::Inaccessible {
                reason: format!("one-group model with min A = {min} >= 0"),
            }
        });
    }
    let exps = environment_exponents(spec)?;
    if let Some((e, pair)) = exps.iter().enumerate().find(|(_, pr)| pr.value < 0.0) {
        return Ok(ZeroAccess::Accessible {
            reason: format!("environment {e} has principal eigenvalue {} < 0", pair.value),
        });
    }
    let root = estimate_pstar(spec, p_max, 0.05, mc)?;
    Ok(match root.status {
        RootStatus::Finite => ZeroAccess::Accessible {
            reason: format!("p* finite, near {}", root.value.unwrap_or(f64::NAN)),
        },
        RootStatus::NotFoundBelowPMax => ZeroAccess::InaccessibleUpToPMax { p_max },
        RootStatus::NotApplicable => {
            if root.lambda < -2.0 * root.lambda_half_width {
                ZeroAccess::Accessible {
                    reason: format!("Lambda = {} < 0", root.lambda),
                }
            } else {
                ZeroAccess::Undetermined {
                    reason: format!("Lambda = {} +/- {} is indistinguishable from 0", root.lambda, root.lambda_half_width),
                }
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn scalar(b: [f64; 2]) -> ModelSpec {
        ModelSpec::scalar(&b, 1.0, Matrix::from_array([[-1.0, 1.0], [1.0, -1.0]])).unwrap()
    }

    #[test]
    fn slope_of_line() {
        assert!((ls_slope(&[1.0, 2.0, 4.0], &[3.0, 5.0, 9.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ess_bounds() {
        assert!((ess(&[0.0; 10]) - 10.0).abs() < 1e-12);
        assert!((ess(&[0.0, -1e9, -1e9]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn g_at_zero_is_zero() {
        let params = GParams {
            n_rep: 100,
            horizons: vec![1.0, 2.0, 4.0],
            ..GParams::default()
        };
        let est = estimate_g(&scalar([3.0, 0.5]), 0.0, &params, RngStream::new(1, 0)).unwrap();
        assert_eq!(est.g, 0.0);
        let ind = GParams {
            estimator: GEstimator::Independent,
            ..params
        };
        let est = estimate_g(&scalar([3.0, 0.5]), 0.0, &ind, RngStream::new(1, 0)).unwrap();
        assert_eq!(est.g, 0.0);
    }

    #[test]
    fn pstar_closed_form() {
        let r = estimate_pstar(&scalar([3.0, 0.5]), DEFAULT_P_MAX, 1e-8, &McParams::default()).unwrap();
        assert_eq!(r.status, RootStatus::Finite);
        assert!((r.value.unwrap() - 1.5).abs() < 1e-6);
    }

    #[test]
    fn pstar_strongly_supercritical_not_found() {
        let r = estimate_pstar(&scalar([3.0, 2.0]), DEFAULT_P_MAX, 1e-6, &McParams::default()).unwrap();
        assert_eq!(r.status, RootStatus::NotFoundBelowPMax);
    }

    #[test]
    fn pstar_not_applicable_when_subcritical() {
        let r = estimate_pstar(&scalar([0.4, 1.2]), DEFAULT_P_MAX, 1e-6, &McParams::default()).unwrap();
        assert_eq!(r.status, RootStatus::NotApplicable);
        let r = estimate_pstar_lower(&scalar([3.0, 0.5]), DEFAULT_P_MAX, 1e-6, &McParams::default()).unwrap();
        assert_eq!(r.status, RootStatus::NotApplicable);
    }

    #[test]
    fn lower_root_model_n() {
        let r = estimate_pstar_lower(&scalar([0.4, 1.2]), DEFAULT_P_MAX, 1e-9, &McParams::default()).unwrap();
        assert_eq!(r.status, RootStatus::Finite);
        let v = r.value.unwrap();
        // A = (-0.6, 0.2): root of eta_p = 0 is (A1 + A2) / (A1 A2)
        assert!((v - 10.0 / 3.0).abs() < 1e-6, "{v}");
        let r = estimate_pstar_lower(&scalar([0.4, 0.8]), DEFAULT_P_MAX, 1e-6, &McParams::default()).unwrap();
        assert_eq!(r.status, RootStatus::NotFoundBelowPMax);
    }

    #[test]
    fn accessibility_one_group() {
        let mc = McParams::default();
        assert!(matches!(
            probe_zero_accessibility(&scalar([3.0, 0.5]), 20.0, &mc).unwrap(),
            ZeroAccess::Accessible { .. }
        ));
        assert!(matches!(
            probe_zero_accessibility(&scalar([3.0, 2.0]), 20.0, &mc).unwrap(),
            ZeroAccess::Inaccessible { .. }
        ));
    }

    #[test]
    fn lambda_model_b_short() {
        let est = estimate_lambda(&scalar([3.0, 0.5]), 2e4, 10.0, 20, RngStream::new(3, 0)).unwrap();
        assert!((est.value - 0.75).abs() < 0.05, "{est:?}");
        assert!(est.half_width > 0.0);
    }

    #[test]
    fn lambda_rejects_bad_arguments() {
        let spec = scalar([3.0, 0.5]);
        assert!(estimate_lambda(&spec, 10.0, 20.0, 10, RngStream::new(0, 0)).is_err());
        assert!(estimate_lambda(&spec, 100.0, 1.0, 5, RngStream::new(0, 0)).is_err());
    }
}
