//! Exact event-driven simulation of the finite-population chain, extinction
//! time sampling and the coupled chain/PDMP construction.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Transition};
use crate::pdmp::{output_grid, EnvClock, FlowStepper, PdmpPath, StepControl};
use crate::rng::{RngStream, SimRng};

pub const DEFAULT_EVENT_CAP: u64 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainState {
    pub counts: Vec<usize>,
    pub env: usize,
    pub time: f64,
}

impl ChainState {
    pub fn new(counts: Vec<usize>, env: usize) -> Self {
        Self {
            counts,
            env,
            time: 0.0,
        }
    }

    /// `floor(x)_K`: componentwise `floor(K_i x_i)`.
    pub fn floor_of(x: &[f64], sizes: &[usize], env: usize) -> Self {
        let counts = x
            .iter()
            .zip(sizes)
            .map(|(&v, &k)| ((k as f64 * v).floor() as usize).min(k))
            .collect();
        Self::new(counts, env)
    }

    pub fn is_extinct(&self) -> bool {
        self.counts.iter().all(|&n| n == 0)
    }
}

/// l1 norm of the proportions `n_i / K_i`.
pub fn scaled_norm(counts: &[usize], sizes: &[usize]) -> f64 {
    counts.iter().zip(sizes).map(|(&n, &k)| n as f64 / k as f64).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Absorbed,
    Horizon,
    /// The event cap was hit first.
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainEvent {
    pub time: f64,
    pub kind: Transition,
    pub counts: Vec<usize>,
    pub env: usize,
}

/// First entrance times into `{|x| <= rho}` and `{|x| >= rho}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HittingTimes {
    pub rho: f64,
    pub below: Option<f64>,
    pub above: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainPath {
    pub sizes: Vec<usize>,
    pub initial: ChainState,
    /// Empty unless event recording was requested.
    pub events: Vec<ChainEvent>,
    pub termination: Termination,
    pub extinction_time: Option<f64>,
    pub hitting: Vec<HittingTimes>,
    pub final_state: ChainState,
    pub event_count: u64,
}

impl ChainPath {
    /// Dump as CSV `t,event,n_1..n_d,env`, starting with the initial state.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.sizes.len();
        let cols: Vec<String> = (1..=d).map(|i| format!("n_{i}")).collect();
        writeln!(w, "t,event,{},env", cols.join(","))?;
        let row = |w: &mut W, t: f64, ev: &str, counts: &[usize], env: usize| -> Result<()> {
            let ns: Vec<String> = counts.iter().map(|n| n.to_string()).collect();
            writeln!(w, "{t},{ev},{},{env}", ns.join(","))?;
            Ok(())
        };
        row(&mut w, self.initial.time, "start", &self.initial.counts, self.initial.env)?;
        for e in &self.events {
            let name = match e.kind {
                Transition::Infect(i) => format!("infect_{}", i + 1),
                Transition::Cure(i) => format!("cure_{}", i + 1),
                Transition::Switch(to) => format!("switch_{to}"),
            };
            row(&mut w, e.time, &name, &e.counts, e.env)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOptions {
    /// Stop at this time; `None` runs until absorption.
    pub horizon: Option<f64>,
    pub thresholds: Vec<f64>,
    pub event_cap: u64,
    pub record_events: bool,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            horizon: None,
            thresholds: Vec::new(),
            event_cap: DEFAULT_EVENT_CAP,
            record_events: false,
        }
    }
}

fn check_init(spec: &ModelSpec, sizes: &[usize], init: &ChainState) -> Result<()> {
    let d = spec.dim();
    if sizes.len() != d || init.counts.len() != d {
        return Err(Error::Domain(format!("sizes and counts must have length {d}")));
    }
    if sizes.contains(&0) {
        return Err(Error::Domain("group sizes must be positive".into()));
    }
    if let Some(i) = (0..d).find(|&i| init.counts[i] > sizes[i]) {
        return Err(Error::Domain(format!(
            "count {} exceeds group size {} in group {}",
            init.counts[i],
            sizes[i],
            i + 1
        )));
    }
    if init.env >= spec.num_envs() {
        return Err(Error::Domain(format!("environment {} out of range", init.env)));
    }
    if !(init.time >= 0.0) {
        return Err(Error::Domain("initial time must be nonnegative".into()));
    }
    Ok(())
}

struct Hitting {
    times: Vec<HittingTimes>,
}

impl Hitting {
    fn new(thresholds: &[f64]) -> Self {
        Self {
            times: thresholds
                .iter()
                .map(|&rho| HittingTimes {
                    rho,
                    below: None,
                    above: None,
                })
                .collect(),
        }
    }

    fn visit(&mut self, t: f64, norm: f64) {
        for h in &mut self.times {
            if h.below.is_none() && norm <= h.rho {
                h.below = Some(t);
            }
            if h.above.is_none() && norm >= h.rho {
                h.above = Some(t);
            }
        }
    }
}

/// Apply an epidemic transition to the counts.
fn apply(counts: &mut [usize], kind: Transition) {
    match kind {
        Transition::Infect(i) => counts[i] += 1,
        Transition::Cure(i) => counts[i] -= 1,
        Transition::Switch(_) => {}
    }
}

/// Gillespie simulation of the chain with group sizes `sizes`.
pub fn simulate_chain(
    spec: &ModelSpec,
    sizes: &[usize],
    init: &ChainState,
    opts: &ChainOptions,
    rng: RngStream,
) -> Result<ChainPath> {
    simulate_chain_with(spec, sizes, init, opts, &mut rng.generator())
}

pub(crate) fn simulate_chain_with(
    spec: &ModelSpec,
    sizes: &[usize],
    init: &ChainState,
    opts: &ChainOptions,
    rng: &mut SimRng,
) -> Result<ChainPath> {
    check_init(spec, sizes, init)?;
    let d = spec.dim();
    let ne = spec.num_envs();
    let mut counts = init.counts.clone();
    let mut env = init.env;
    let mut t = init.time;
    let mut x = vec![0.0; d];
    let mut rates = vec![0.0; 2 * d + ne];
    let mut hitting = Hitting::new(&opts.thresholds);
    hitting.visit(t, scaled_norm(&counts, sizes));
    let mut events = Vec::new();
    let mut event_count = 0u64;
    let mut extinction_time = counts.iter().all(|&n| n == 0).then_some(t);

    let termination = loop {
        if extinction_time.is_none() && counts.iter().all(|&n| n == 0) {
            extinction_time = Some(t);
        }
        if extinction_time.is_some() && opts.horizon.is_none() {
            break Termination::Absorbed;
        }
        spec.fill_epidemic_rates(sizes, &counts, env, &mut x, &mut rates[..2 * d]);
        for to in 0..ne {
            rates[2 * d + to] = spec.switch_rate(&x, env, to);
        }
        let total: f64 = rates.iter().sum();
        let dt = if total > 0.0 { rng.exponential(total) } else { f64::INFINITY };
        if let Some(h) = opts.horizon {
            if t + dt > h {
                t = h.max(t);
                break if extinction_time.is_some() {
                    Termination::Absorbed
                } else {
                    Termination::Horizon
                };
            }
        } else if !dt.is_finite() {
            return Err(Error::Numerical(format!(
                "no transition possible from {counts:?} in environment {env}"
            )));
        }
        t += dt;
        let k = rng.categorical(&rates, total);
        let kind = if k < d {
            Transition::Infect(k)
        } else if k < 2 * d {
            Transition::Cure(k - d)
        } else {
            Transition::Switch(k - 2 * d)
        };
        apply(&mut counts, kind);
        if let Transition::Switch(to) = kind {
            env = to;
        }
        event_count += 1;
        hitting.visit(t, scaled_norm(&counts, sizes));
        if opts.record_events {
            events.push(ChainEvent {
                time: t,
                kind,
                counts: counts.clone(),
                env,
            });
        }
        if event_count >= opts.event_cap {
            if extinction_time.is_none() && counts.iter().all(|&n| n == 0) {
                extinction_time = Some(t);
            }
            break if extinction_time.is_some() {
                Termination::Absorbed
            } else {
                Termination::Truncated
            };
        }
    };

    Ok(ChainPath {
        sizes: sizes.to_vec(),
        initial: init.clone(),
        events,
        termination,
        extinction_time,
        hitting: hitting.times,
        final_state: ChainState {
            counts,
            env,
            time: t,
        },
        event_count,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtinctionSummary {
    /// Total population `sum_i K_i`.
    pub k: usize,
    pub n_rep: usize,
    pub mean_tau: f64,
    pub se_tau: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub truncated: usize,
    /// Extinction times of the non-truncated replicates, by replicate index.
    #[serde(skip)]
    pub samples: Vec<f64>,
}

impl ExtinctionSummary {
    pub const CSV_HEADER: &'static str = "K,n_rep,mean_tau,se_tau,q05,q50,q95,truncated";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.k, self.n_rep, self.mean_tau, self.se_tau, self.q05, self.q50, self.q95, self.truncated
        )
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Extinction times of `n_rep` replicates; replicate `r` runs on stream
/// `(base.seed, r)` and starts from `init(r)`.
pub fn extinction_times(
    spec: &ModelSpec,
    sizes: &[usize],
    n_rep: usize,
    base: RngStream,
    event_cap: u64,
    init: impl Fn(usize) -> ChainState + Sync,
) -> Result<Vec<Option<f64>>> {
    let opts = ChainOptions {
        event_cap,
        ..ChainOptions::default()
    };
    (0..n_rep)
        .into_par_iter()
        .map(|r| {
            let path = simulate_chain(spec, sizes, &init(r), &opts, base.with_index(r as u64))?;
            Ok(path.extinction_time)
        })
        .collect()
}

pub fn summarize_extinction(k: usize, times: &[Option<f64>]) -> Result<ExtinctionSummary> {
    let mut samples: Vec<f64> = times.iter().flatten().copied().collect();
    let truncated = times.len() - samples.len();
    if samples.is_empty() {
        return Err(Error::AllTruncated(times.len()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let ordered = samples.clone();
    samples.sort_by(f64::total_cmp);
    Ok(ExtinctionSummary {
        k,
        n_rep: times.len(),
        mean_tau: mean,
        se_tau: (var / n).sqrt(),
        q05: quantile_sorted(&samples, 0.05),
        q50: quantile_sorted(&samples, 0.5),
        q95: quantile_sorted(&samples, 0.95),
        truncated,
        samples: ordered,
    })
}

/// Monte Carlo summary of the extinction time from a fixed initial state.
pub fn monte_carlo_extinction(
    spec: &ModelSpec,
    sizes: &[usize],
    init: &ChainState,
    n_rep: usize,
    base_seed: u64,
) -> Result<ExtinctionSummary> {
    monte_carlo_extinction_capped(spec, sizes, init, n_rep, base_seed, DEFAULT_EVENT_CAP)
}

pub fn monte_carlo_extinction_capped(
    spec: &ModelSpec,
    sizes: &[usize],
    init: &ChainState,
    n_rep: usize,
    base_seed: u64,
    event_cap: u64,
) -> Result<ExtinctionSummary> {
    if n_rep < 2 {
        return Err(Error::Domain("at least 2 replicates are needed".into()));
    }
    check_init(spec, sizes, init)?;
    let times = extinction_times(spec, sizes, n_rep, RngStream::new(base_seed, 0), event_cap, |_| {
        init.clone()
    })?;
    summarize_extinction(sizes.iter().sum(), &times)
}

/// Result of a coupled simulation.
#[derive(Debug, Clone, Serialize)]
pub struct CoupledRun {
    pub chain: ChainPath,
    pub pdmp: PdmpPath,
    /// `sup_t |X^K_t - X_t|_1 + 1{envs differ}` over the chain event times
    /// and the RK4 substeps.
    pub sup_distance: f64,
    /// Time of the first environment mismatch, if any.
    pub first_env_mismatch: Option<f64>,
}

/// Simulate the chain from `floor(x0)_K` and the PDMP from `x0` with shared
/// environment randomness: one stream of candidate epochs (rate
/// `q_bar |E|`, uniform mark, uniform level) is resolved separately against
/// each process' own state. The chain's infection and cure events use an
/// independent stream.
pub fn coupled_paths(
    spec: &ModelSpec,
    sizes: &[usize],
    x0: &[f64],
    env0: usize,
    horizon: f64,
    output_dt: f64,
    rng: RngStream,
) -> Result<CoupledRun> {
    spec.vector_field(x0, env0)?;
    if !(horizon >= 0.0) || !horizon.is_finite() || !(output_dt > 0.0) {
        return Err(Error::Domain("horizon and output step must be positive".into()));
    }
    let d = spec.dim();
    let init = ChainState::floor_of(x0, sizes, env0);
    check_init(spec, sizes, &init)?;

    let bound = match spec.constant_switch() {
        Some(q) => q.max_off_diagonal(),
        None => spec.switch_bound(),
    };
    let mut clock = EnvClock::thinning(bound, spec.num_envs(), 0.0, rng.derive("environment").generator());
    let mut epi = rng.derive("epidemic").generator();
    let mut stepper = FlowStepper::new(spec, StepControl::default());

    let mut counts = init.counts.clone();
    let mut cenv = env0;
    let mut cx = vec![0.0; d];
    let mut rates = vec![0.0; 2 * d];
    let mut x = x0.to_vec();
    let mut penv = env0;
    let mut t = 0.0;
    let mut events = Vec::new();
    let mut event_count = 0u64;
    let mut extinction_time = init.is_extinct().then_some(0.0);

    let grid = output_grid(horizon, output_dt);
    let mut pdmp = PdmpPath {
        times: Vec::with_capacity(grid.len()),
        states: Vec::with_capacity(grid.len()),
        envs: Vec::with_capacity(grid.len()),
        jumps: Vec::new(),
        log_radius_gain: None,
    };
    let mut next_out = 0usize;

    let distance = |counts: &[usize], cenv: usize, x: &[f64], penv: usize| {
        let mut s = 0.0;
        for i in 0..d {
            s += (counts[i] as f64 / sizes[i] as f64 - x[i]).abs();
        }
        s + if cenv != penv { 1.0 } else { 0.0 }
    };
    let mut sup = distance(&counts, cenv, &x, penv);
    let mut first_mismatch = None;

    let epi_total = |counts: &[usize], cenv: usize, cx: &mut [f64], rates: &mut [f64]| {
        spec.fill_epidemic_rates(sizes, counts, cenv, cx, rates);
        rates.iter().sum::<f64>()
    };
    let mut total = epi_total(&counts, cenv, &mut cx, &mut rates);
    let mut next_epi = if total > 0.0 { epi.exponential(total) } else { f64::INFINITY };

    loop {
        let t_next = next_epi.min(clock.next()).min(horizon);
        // flow the PDMP to t_next, emitting output samples on the way
        while next_out < grid.len() && grid[next_out] <= t_next {
            let to = grid[next_out];
            stepper.advance(&mut x, penv, t, to - t, |_, xs| {
                sup = sup.max(distance(&counts, cenv, xs, penv));
            })?;
            t = to;
            pdmp.times.push(t);
            pdmp.states.push(x.clone());
            pdmp.envs.push(penv);
            next_out += 1;
        }
        stepper.advance(&mut x, penv, t, t_next - t, |_, xs| {
            sup = sup.max(distance(&counts, cenv, xs, penv));
        })?;
        t = t_next;
        if t >= horizon {
            break;
        }
        if clock.next() <= next_epi {
            // shared candidate, resolved against each process
            let (mark, u) = clock.draw_candidate();
            if mark != penv && u < spec.switch_rate(&x, penv, mark) {
                penv = mark;
                pdmp.jumps.push((t, penv));
            }
            let cnorm: Vec<f64> = (0..d).map(|i| counts[i] as f64 / sizes[i] as f64).collect();
            if mark != cenv && u < spec.switch_rate(&cnorm, cenv, mark) {
                cenv = mark;
                event_count += 1;
                events.push(ChainEvent {
                    time: t,
                    kind: Transition::Switch(cenv),
                    counts: counts.clone(),
                    env: cenv,
                });
                total = epi_total(&counts, cenv, &mut cx, &mut rates);
                next_epi = if total > 0.0 { t + epi.exponential(total) } else { f64::INFINITY };
            }
        } else {
            let k = epi.categorical(&rates, total);
            let kind = if k < d { Transition::Infect(k) } else { Transition::Cure(k - d) };
            apply(&mut counts, kind);
            event_count += 1;
            events.push(ChainEvent {
                time: t,
                kind,
                counts: counts.clone(),
                env: cenv,
            });
            if extinction_time.is_none() && counts.iter().all(|&n| n == 0) {
                extinction_time = Some(t);
            }
            total = epi_total(&counts, cenv, &mut cx, &mut rates);
            next_epi = if total > 0.0 { t + epi.exponential(total) } else { f64::INFINITY };
        }
        if first_mismatch.is_none() && cenv != penv {
            first_mismatch = Some(t);
        }
        sup = sup.max(distance(&counts, cenv, &x, penv));
    }

    let chain = ChainPath {
        sizes: sizes.to_vec(),
        initial: init,
        events,
        termination: if extinction_time.is_some() {
            Termination::Absorbed
        } else {
            Termination::Horizon
        },
        extinction_time,
        hitting: Vec::new(),
        final_state: ChainState {
            counts,
            env: cenv,
            time: horizon,
        },
        event_count,
    };
    Ok(CoupledRun {
        chain,
        pdmp,
        sup_distance: sup,
        first_env_mismatch: first_mismatch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn model_b() -> ModelSpec {
        ModelSpec::scalar(&[3.0, 0.5], 1.0, Matrix::from_array([[-1.0, 1.0], [1.0, -1.0]])).unwrap()
    }

    #[test]
    fn extinct_start_only_switches() {
        let spec = model_b();
        let opts = ChainOptions {
            horizon: Some(10.0),
            record_events: true,
            ..Default::default()
        };
        let path = simulate_chain(&spec, &[50], &ChainState::new(vec![0], 0), &opts, RngStream::new(1, 0)).unwrap();
        assert_eq!(path.extinction_time, Some(0.0));
        assert_eq!(path.termination, Termination::Absorbed);
        assert!(!path.events.is_empty());
        assert!(path.events.iter().all(|e| matches!(e.kind, Transition::Switch(_))));
    }

    #[test]
    fn counts_stay_in_bounds_and_times_increase() {
        let spec = model_b();
        let opts = ChainOptions {
            horizon: Some(20.0),
            record_events: true,
            thresholds: vec![0.1, 0.9],
            ..Default::default()
        };
        let path = simulate_chain(&spec, &[50], &ChainState::new(vec![25], 0), &opts, RngStream::new(2, 0)).unwrap();
        let mut last = 0.0;
        let mut dead = false;
        for e in &path.events {
            assert!(e.time > last);
            last = e.time;
            assert!(e.counts[0] <= 50);
            if dead {
                assert!(matches!(e.kind, Transition::Switch(_)));
            }
            dead |= e.counts[0] == 0;
        }
        assert_eq!(path.hitting.len(), 2);
    }

    #[test]
    fn reproducible_paths() {
        let spec = model_b();
        let opts = ChainOptions {
            horizon: Some(5.0),
            record_events: true,
            ..Default::default()
        };
        let init = ChainState::new(vec![10], 1);
        let a = simulate_chain(&spec, &[20], &init, &opts, RngStream::new(9, 4)).unwrap();
        let b = simulate_chain(&spec, &[20], &init, &opts, RngStream::new(9, 4)).unwrap();
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn event_cap_truncates() {
        let spec = model_b();
        let opts = ChainOptions {
            event_cap: 10,
            ..Default::default()
        };
        let path = simulate_chain(&spec, &[1000], &ChainState::new(vec![500], 0), &opts, RngStream::new(3, 0)).unwrap();
        assert_eq!(path.termination, Termination::Truncated);
        assert_eq!(path.extinction_time, None);
        assert_eq!(path.event_count, 10);
    }

    #[test]
    fn rejects_out_of_bounds_start() {
        let spec = model_b();
        let r = simulate_chain(&spec, &[5], &ChainState::new(vec![6], 0), &ChainOptions::default(), RngStream::new(0, 0));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn single_exponential_clock() {
        let spec = ModelSpec::scalar(&[0.7], 1.0, Matrix::zeros(1)).unwrap();
        let s = monte_carlo_extinction(&spec, &[1], &ChainState::new(vec![1], 0), 100_000, 5).unwrap();
        assert!((s.mean_tau - 1.0).abs() < 0.01, "{}", s.mean_tau);
        assert_eq!(s.truncated, 0);
    }

    #[test]
    fn summary_is_thread_count_independent() {
        let spec = model_b();
        let init = ChainState::new(vec![3], 0);
        let a = monte_carlo_extinction(&spec, &[10], &init, 50, 17).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| monte_carlo_extinction(&spec, &[10], &init, 50, 17).unwrap());
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert!((quantile_sorted(&v, 0.95) - 4.8).abs() < 1e-12);
    }

    #[test]
    fn constant_environment_coupling_never_mismatches() {
        let spec = ModelSpec::scalar(&[2.0], 1.0, Matrix::zeros(1)).unwrap();
        let run = coupled_paths(&spec, &[100], &[0.5], 0, 5.0, 0.5, RngStream::new(4, 0)).unwrap();
        assert_eq!(run.first_env_mismatch, None);
        assert!(run.sup_distance < 1.0);
    }

    #[test]
    fn constant_switching_keeps_environments_equal() {
        let spec = model_b();
        for s in 0..5 {
            let run = coupled_paths(&spec, &[100], &[0.5], 0, 5.0, 0.5, RngStream::new(s, 0)).unwrap();
            assert_eq!(run.first_env_mismatch, None);
        }
    }
}
