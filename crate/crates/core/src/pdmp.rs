//! The switched ODE limit: flow integration, full PDMP paths, the polar
//! decomposition, the angular process on the simplex and the linearised
//! process in log-norm form.
//!
//! All flows use fixed-step classical RK4 with `h = min(h_max, 0.1 / C_F)`,
//! shortened so that every environment jump and output time is hit
//! exactly. Time integrals (`int G`, `int G_0`) are carried as an extra ODE
//! coordinate, so the quadrature is Simpson's rule on the RK4 sub-grid.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::ModelSpec;
use crate::rng::{RngStream, SimRng};

/// Overshoot outside the unit cube that is silently clamped.
pub const CLAMP_TOL: f64 = 1e-9;
/// Floor applied to the radius in the polar representation.
pub const RADIUS_FLOOR: f64 = 1e-300;
const SIMPLEX_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub h_max: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { h_max: 0.05 }
    }
}

impl StepControl {
    pub fn step(&self, spec: &ModelSpec) -> f64 {
        let lip = spec.constants().lipschitz_bound;
        if lip > 0.0 {
            self.h_max.min(0.1 / lip)
        } else {
            self.h_max
        }
    }
}

/// Number of equal substeps of length at most `h` covering `duration`.
fn substeps(duration: f64, h: f64) -> usize {
    ((duration / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

fn clamp_unit(x: &mut [f64], time: f64) -> Result<()> {
    for v in x.iter_mut() {
        if v.is_nan() {
            return Err(Error::Integration {
                time,
                reason: "NaN in state".into(),
            });
        }
        if *v < 0.0 {
            if *v < -CLAMP_TOL {
                return Err(Error::Integration {
                    time,
                    reason: format!("state left the cube: {v}"),
                });
            }
            *v = 0.0;
        } else if *v > 1.0 {
            if *v > 1.0 + CLAMP_TOL {
                return Err(Error::Integration {
                    time,
                    reason: format!("state left the cube: {v}"),
                });
            }
            *v = 1.0;
        }
    }
    Ok(())
}

/// RK4 integrator for `x' = F(x, env)` with the polar growth rate
/// `G(x) = <1, F(x)> / |x|` carried along.
pub(crate) struct FlowStepper<'a> {
    spec: &'a ModelSpec,
    pub h: f64,
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
}

impl<'a> FlowStepper<'a> {
    pub fn new(spec: &'a ModelSpec, ctl: StepControl) -> Self {
        let d = spec.dim();
        Self {
            spec,
            h: ctl.step(spec),
            k: [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]],
            stage: vec![0.0; d],
        }
    }

    fn eval(&mut self, idx: usize, env: usize) -> f64 {
        for v in self.stage.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        let spec = self.spec;
        spec.field_into(&self.stage, env, &mut self.k[idx]);
        let norm: f64 = self.stage.iter().sum();
        self.k[idx].iter().sum::<f64>() / norm.max(RADIUS_FLOOR)
    }

    /// One RK4 step of length `h`; returns the increment of `int G`.
    fn step(&mut self, x: &mut [f64], env: usize, h: f64) -> f64 {
        self.stage.copy_from_slice(x);
        let g1 = self.eval(0, env);
        for i in 0..x.len() {
            self.stage[i] = x[i] + 0.5 * h * self.k[0][i];
        }
        let g2 = self.eval(1, env);
        for i in 0..x.len() {
            self.stage[i] = x[i] + 0.5 * h * self.k[1][i];
        }
        let g3 = self.eval(2, env);
        for i in 0..x.len() {
            self.stage[i] = x[i] + h * self.k[2][i];
        }
        let g4 = self.eval(3, env);
        for i in 0..x.len() {
            x[i] += h / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
        h / 6.0 * (g1 + 2.0 * g2 + 2.0 * g3 + g4)
    }

    /// Integrate over `[t0, t0 + duration]`, calling `visit(t, x)` after each
    /// substep. Returns the increment of `int G`.
    pub fn advance(
        &mut self,
        x: &mut [f64],
        env: usize,
        t0: f64,
        duration: f64,
        mut visit: impl FnMut(f64, &[f64]),
    ) -> Result<f64> {
        if duration <= 0.0 {
            return Ok(0.0);
        }
        let n = substeps(duration, self.h);
        let h = duration / n as f64;
        let mut gain = 0.0;
        for k in 1..=n {
            gain += self.step(x, env, h);
            let t = t0 + k as f64 * h;
            clamp_unit(x, t)?;
            visit(t, x);
        }
        Ok(gain)
    }
}

/// `psi_t^env(x0)`: the semi-flow of `F(., env)` at time `t`.
pub fn integrate_flow(
    spec: &ModelSpec,
    env: usize,
    x0: &[f64],
    t: f64,
    ctl: StepControl,
) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("negative time {t}")));
    }
    spec.vector_field(x0, env)?;
    let mut x = x0.to_vec();
    clamp_unit(&mut x, 0.0)?;
    FlowStepper::new(spec, ctl).advance(&mut x, env, 0.0, t, |_, _| {})?;
    Ok(x)
}

/// Environment jump mechanism.
///
/// With a constant rate matrix the holding times are exact exponentials.
/// Otherwise candidate epochs arrive at rate `q_bar |E|`, each carrying a
/// uniform target mark and a uniform level `u` in `[0, q_bar)`; the jump to
/// the mark is accepted when the mark differs from the current environment
/// and `u < q(x, env, mark)` at the candidate instant.
pub(crate) enum EnvClock {
    Exact {
        q: Matrix,
        next: f64,
        rng: SimRng,
    },
    Thinning {
        bound: f64,
        num_env: usize,
        next: f64,
        rng: SimRng,
    },
}

impl EnvClock {
    pub fn exact(q: Matrix, env: usize, t: f64, mut rng: SimRng) -> Self {
        let out = -q[(env, env)];
        let next = if out > 0.0 { t + rng.exponential(out) } else { f64::INFINITY };
        EnvClock::Exact { q, next, rng }
    }

    pub fn thinning(bound: f64, num_env: usize, t: f64, mut rng: SimRng) -> Self {
        let rate = bound * num_env as f64;
        let next = if rate > 0.0 { t + rng.exponential(rate) } else { f64::INFINITY };
        EnvClock::Thinning {
            bound,
            num_env,
            next,
            rng,
        }
    }

    /// Exact clocks for constant switching, thinning otherwise.
    pub fn for_spec(spec: &ModelSpec, env: usize, t: f64, rng: SimRng) -> Self {
        match spec.constant_switch() {
            Some(q) => Self::exact(q.clone(), env, t, rng),
            None => Self::thinning(spec.switch_bound(), spec.num_envs(), t, rng),
        }
    }

    pub fn next(&self) -> f64 {
        match self {
            EnvClock::Exact { next, .. } | EnvClock::Thinning { next, .. } => *next,
        }
    }

    /// Resolve the pending epoch at state `(x, env)`; returns the new
    /// environment when a jump occurs.
    pub fn fire(&mut self, spec: &ModelSpec, x: &[f64], env: usize) -> Result<Option<usize>> {
        match self {
            EnvClock::Exact { q, next, rng } => {
                let t = *next;
                let out = -q[(env, env)];
                let weights: Vec<f64> = (0..q.dim())
                    .map(|b| if b == env { 0.0 } else { q[(env, b)] })
                    .collect();
                let to = rng.categorical(&weights, out);
                let out_new = -q[(to, to)];
                *next = if out_new > 0.0 { t + rng.exponential(out_new) } else { f64::INFINITY };
                Ok(Some(to))
            }
            EnvClock::Thinning { .. } => {
                let bound = match self {
                    EnvClock::Thinning { bound, .. } => *bound,
                    _ => unreachable!(),
                };
                let (mark, u) = self.draw_candidate();
                if mark == env {
                    return Ok(None);
                }
                let rate = spec.switch_rate(x, env, mark);
                if rate > bound * (1.0 + 1e-9) {
                    return Err(Error::Domain(format!(
                        "switching rate {rate} exceeds the thinning bound {bound} at x = {x:?}"
                    )));
                }
                Ok((u < rate).then_some(mark))
            }
        }
    }

    /// Mark and level of the pending candidate epoch of a thinning clock;
    /// schedules the next candidate.
    pub fn draw_candidate(&mut self) -> (usize, f64) {
        match self {
            EnvClock::Thinning {
                bound,
                num_env,
                next,
                rng,
            } => {
                let mark = rng.below(*num_env);
                let u = rng.uniform() * *bound;
                *next += rng.exponential(*bound * *num_env as f64);
                (mark, u)
            }
            EnvClock::Exact { .. } => panic!("draw_candidate on an exact clock"),
        }
    }

    /// Replace the generator and redraw the pending epoch from time `t`
    /// (valid by memorylessness).
    pub fn reseed(&mut self, env: usize, t: f64, new_rng: SimRng) {
        match self {
            EnvClock::Exact { q, next, rng } => {
                *rng = new_rng;
                let out = -q[(env, env)];
                *next = if out > 0.0 { t + rng.exponential(out) } else { f64::INFINITY };
            }
            EnvClock::Thinning {
                bound,
                num_env,
                next,
                rng,
            } => {
                *rng = new_rng;
                let rate = *bound * *num_env as f64;
                *next = if rate > 0.0 { t + rng.exponential(rate) } else { f64::INFINITY };
            }
        }
    }
}

/// Output grid `0, dt, 2dt, ..` up to `horizon`, plus `horizon` itself.
pub(crate) fn output_grid(horizon: f64, dt: f64) -> Vec<f64> {
    let n = (horizon / dt + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
    if let Some(&last) = grid.last() {
        if horizon - last > 1e-9 * dt {
            grid.push(horizon);
        }
    }
    grid
}

fn check_grid_args(horizon: f64, output_dt: f64) -> Result<()> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::Domain(format!("invalid horizon {horizon}")));
    }
    if !(output_dt > 0.0) {
        return Err(Error::Domain(format!("invalid output step {output_dt}")));
    }
    Ok(())
}

/// Sampled PDMP trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct PdmpPath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub envs: Vec<usize>,
    /// Exact jump times of the environment with the environment entered.
    pub jumps: Vec<(f64, usize)>,
    /// `int_0^t <1, F(X_s)> / |X_s| ds` at each output time; `None` from 0.
    pub log_radius_gain: Option<Vec<f64>>,
}

/// Simulate the PDMP from `(x0, env0)` on `[0, horizon]`.
pub fn simulate_pdmp(
    spec: &ModelSpec,
    x0: &[f64],
    env0: usize,
    horizon: f64,
    output_dt: f64,
    rng: RngStream,
) -> Result<PdmpPath> {
    simulate_pdmp_with(spec, x0, env0, horizon, output_dt, rng, StepControl::default())
}

pub fn simulate_pdmp_with(
    spec: &ModelSpec,
    x0: &[f64],
    env0: usize,
    horizon: f64,
    output_dt: f64,
    rng: RngStream,
    ctl: StepControl,
) -> Result<PdmpPath> {
    check_grid_args(horizon, output_dt)?;
    spec.vector_field(x0, env0)?;
    let mut x = x0.to_vec();
    clamp_unit(&mut x, 0.0)?;
    let track = x.iter().sum::<f64>() > 0.0;
    let mut env = env0;
    let mut clock = EnvClock::for_spec(spec, env, 0.0, rng.generator());
    let mut stepper = FlowStepper::new(spec, ctl);
    let grid = output_grid(horizon, output_dt);

    let mut path = PdmpPath {
        times: Vec::with_capacity(grid.len()),
        states: Vec::with_capacity(grid.len()),
        envs: Vec::with_capacity(grid.len()),
        jumps: Vec::new(),
        log_radius_gain: track.then(Vec::new),
    };
    let mut t = 0.0;
    let mut gain = 0.0;
    for &t_out in &grid {
        while clock.next() <= t_out {
            let tj = clock.next();
            gain += stepper.advance(&mut x, env, t, tj - t, |_, _| {})?;
            t = tj;
            if let Some(to) = clock.fire(spec, &x, env)? {
                env = to;
                path.jumps.push((t, env));
            }
        }
        gain += stepper.advance(&mut x, env, t, t_out - t, |_, _| {})?;
        t = t_out;
        path.times.push(t);
        path.states.push(x.clone());
        path.envs.push(env);
        if let Some(g) = path.log_radius_gain.as_mut() {
            g.push(gain);
        }
    }
    Ok(path)
}

/// PDMP in polar coordinates `x = r theta` with `|theta|_1 = 1`:
/// `r' = <1, F(r theta)>`, `theta' = (F(r theta) - <1, F(r theta)> theta) / r`.
#[derive(Debug, Clone, Serialize)]
pub struct PolarPath {
    pub times: Vec<f64>,
    pub radius: Vec<f64>,
    pub thetas: Vec<Vec<f64>>,
    pub envs: Vec<usize>,
    /// `int_0^t G ds` at each output time.
    pub g_integral: Vec<f64>,
}

/// Simulate the radius/angle pair from `x0 != 0`. Given the same `rng`
/// and constant switching, the environment path is the one of
/// [`simulate_pdmp`] from `x0`.
pub fn simulate_polar(
    spec: &ModelSpec,
    x0: &[f64],
    env0: usize,
    horizon: f64,
    output_dt: f64,
    rng: RngStream,
) -> Result<PolarPath> {
    check_grid_args(horizon, output_dt)?;
    spec.vector_field(x0, env0)?;
    let d = spec.dim();
    let r0: f64 = x0.iter().sum();
    if !(r0 > 0.0) {
        return Err(Error::Domain("polar representation needs x0 != 0".into()));
    }
    // state: [r, theta_1..theta_d, int G]
    let mut y: Vec<f64> = std::iter::once(r0)
        .chain(x0.iter().map(|v| v / r0))
        .chain(std::iter::once(0.0))
        .collect();
    let h = StepControl::default().step(spec);
    let mut env = env0;
    let mut clock = EnvClock::for_spec(spec, env, 0.0, rng.generator());
    let mut scratch = PolarScratch::new(d);
    let grid = output_grid(horizon, output_dt);
    let mut path = PolarPath {
        times: Vec::with_capacity(grid.len()),
        radius: Vec::with_capacity(grid.len()),
        thetas: Vec::with_capacity(grid.len()),
        envs: Vec::with_capacity(grid.len()),
        g_integral: Vec::with_capacity(grid.len()),
    };
    let mut t = 0.0;
    let mut xbuf = vec![0.0; d];
    for &t_out in &grid {
        while clock.next() <= t_out {
            let tj = clock.next();
            scratch.advance(spec, &mut y, env, tj - t, h);
            t = tj;
            for i in 0..d {
                xbuf[i] = (y[0] * y[1 + i]).clamp(0.0, 1.0);
            }
            if let Some(to) = clock.fire(spec, &xbuf, env)? {
                env = to;
            }
        }
        scratch.advance(spec, &mut y, env, t_out - t, h);
        t = t_out;
        path.times.push(t);
        path.radius.push(y[0]);
        path.thetas.push(y[1..=d].to_vec());
        path.envs.push(env);
        path.g_integral.push(y[d + 1]);
    }
    Ok(path)
}

struct PolarScratch {
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
    x: Vec<f64>,
    f: Vec<f64>,
}

impl PolarScratch {
    fn new(d: usize) -> Self {
        let n = d + 2;
        Self {
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            stage: vec![0.0; n],
            x: vec![0.0; d],
            f: vec![0.0; d],
        }
    }

    fn rhs(&mut self, spec: &ModelSpec, env: usize, idx: usize) {
        let d = self.x.len();
        let r = self.stage[0].max(RADIUS_FLOOR);
        for i in 0..d {
            self.x[i] = (r * self.stage[1 + i]).clamp(0.0, 1.0);
        }
        spec.field_into(&self.x, env, &mut self.f);
        let total: f64 = self.f.iter().sum();
        let k = &mut self.k[idx];
        k[0] = total;
        for i in 0..d {
            k[1 + i] = (self.f[i] - total * self.stage[1 + i]) / r;
        }
        k[d + 1] = total / r;
    }

    fn advance(&mut self, spec: &ModelSpec, y: &mut [f64], env: usize, duration: f64, h: f64) {
        if duration <= 0.0 {
            return;
        }
        let n = substeps(duration, h);
        let h = duration / n as f64;
        let m = y.len();
        for _ in 0..n {
            self.stage.copy_from_slice(y);
            self.rhs(spec, env, 0);
            for j in 0..m {
                self.stage[j] = y[j] + 0.5 * h * self.k[0][j];
            }
            self.rhs(spec, env, 1);
            for j in 0..m {
                self.stage[j] = y[j] + 0.5 * h * self.k[1][j];
            }
            self.rhs(spec, env, 2);
            for j in 0..m {
                self.stage[j] = y[j] + h * self.k[2][j];
            }
            self.rhs(spec, env, 3);
            for j in 0..m {
                y[j] += h / 6.0 * (self.k[0][j] + 2.0 * self.k[1][j] + 2.0 * self.k[2][j] + self.k[3][j]);
            }
            y[0] = y[0].max(RADIUS_FLOOR);
        }
    }
}

/// Linearizations `A^env` of every environment.
pub fn linearizations(spec: &ModelSpec) -> Result<Vec<Matrix>> {
    (0..spec.num_envs()).map(|e| spec.linearization_at_zero(e)).collect()
}

/// Worst simplex drift observed before renormalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimplexDiagnostics {
    /// Largest `| |theta|_1 - 1 |` before renormalization.
    pub max_norm_drift: f64,
    /// Smallest component before clamping.
    pub min_component: f64,
}

impl Default for SimplexDiagnostics {
    fn default() -> Self {
        Self {
            max_norm_drift: 0.0,
            min_component: f64::INFINITY,
        }
    }
}

/// The angular process `theta' = A theta - <1, A theta> theta` on the
/// simplex with `S' = <1, A theta>`, driven by the environment chain with
/// rates `Q(0)`.
pub struct AngularProcess<'a> {
    mats: &'a [Matrix],
    h: f64,
    pub theta: Vec<f64>,
    /// `int_0^t G_0`.
    pub s: f64,
    pub env: usize,
    pub t: f64,
    clock: EnvClock,
    pub diagnostics: SimplexDiagnostics,
    k: [Vec<f64>; 4],
    ks: [f64; 4],
    stage: Vec<f64>,
}

impl<'a> AngularProcess<'a> {
    pub fn new(
        spec: &ModelSpec,
        mats: &'a [Matrix],
        theta0: &[f64],
        env0: usize,
        rng: SimRng,
    ) -> Result<Self> {
        let d = spec.dim();
        if theta0.len() != d {
            return Err(Error::Domain(format!("direction must have length {d}")));
        }
        if theta0.iter().any(|&v| v < -SIMPLEX_CLAMP) || (theta0.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("{theta0:?} is not on the simplex")));
        }
        if env0 >= spec.num_envs() {
            return Err(Error::Domain(format!("environment {env0} out of range")));
        }
        let q0 = spec.switch_matrix(&vec![0.0; d]);
        Ok(Self {
            mats,
            h: StepControl::default().step(spec),
            theta: theta0.iter().map(|v| v.max(0.0)).collect(),
            s: 0.0,
            env: env0,
            t: 0.0,
            clock: EnvClock::exact(q0, env0, 0.0, rng),
            diagnostics: SimplexDiagnostics::default(),
            k: [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]],
            ks: [0.0; 4],
            stage: vec![0.0; d],
        })
    }

    fn rhs(&mut self, idx: usize) {
        let a = &self.mats[self.env];
        a.mul_vec(&self.stage, &mut self.k[idx]);
        let g: f64 = self.k[idx].iter().sum();
        for (ki, si) in self.k[idx].iter_mut().zip(&self.stage) {
            *ki -= g * si;
        }
        self.ks[idx] = g;
    }

    fn step(&mut self, h: f64) {
        let d = self.theta.len();
        self.stage.copy_from_slice(&self.theta);
        self.rhs(0);
        for i in 0..d {
            self.stage[i] = self.theta[i] + 0.5 * h * self.k[0][i];
        }
        self.rhs(1);
        for i in 0..d {
            self.stage[i] = self.theta[i] + 0.5 * h * self.k[1][i];
        }
        self.rhs(2);
        for i in 0..d {
            self.stage[i] = self.theta[i] + h * self.k[2][i];
        }
        self.rhs(3);
        for i in 0..d {
            self.theta[i] += h / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
        self.s += h / 6.0 * (self.ks[0] + 2.0 * self.ks[1] + 2.0 * self.ks[2] + self.ks[3]);

        let mut sum = 0.0;
        for v in self.theta.iter_mut() {
            if *v < self.diagnostics.min_component {
                self.diagnostics.min_component = *v;
            }
            if *v < 0.0 {
                *v = 0.0;
            }
            sum += *v;
        }
        let drift = (sum - 1.0).abs();
        if drift > self.diagnostics.max_norm_drift {
            self.diagnostics.max_norm_drift = drift;
        }
        for v in self.theta.iter_mut() {
            *v /= sum;
        }
    }

    fn flow(&mut self, duration: f64) {
        if duration <= 0.0 {
            return;
        }
        let n = substeps(duration, self.h);
        let h = duration / n as f64;
        for _ in 0..n {
            self.step(h);
        }
    }

    /// Advance to time `t_end`, resolving every environment jump on the way.
    pub fn advance_to(&mut self, spec: &ModelSpec, t_end: f64) -> Result<()> {
        let zero = [0.0; 0];
        while self.clock.next() <= t_end {
            let tj = self.clock.next();
            self.flow(tj - self.t);
            self.t = tj;
            if let Some(to) = self.clock.fire(spec, &zero, self.env)? {
                self.env = to;
            }
        }
        self.flow(t_end - self.t);
        self.t = t_end;
        Ok(())
    }

    /// Fresh randomness from the current state on.
    pub fn reseed(&mut self, rng: SimRng) {
        self.clock.reseed(self.env, self.t, rng);
    }

    /// Copy the dynamic state of `other`, keeping this process' generator.
    pub fn copy_state_from(&mut self, other: &AngularProcess<'_>) {
        self.theta.copy_from_slice(&other.theta);
        self.s = other.s;
        self.env = other.env;
        self.t = other.t;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AngularPath {
    pub times: Vec<f64>,
    pub thetas: Vec<Vec<f64>>,
    /// `S(t) = int_0^t G_0`.
    pub s: Vec<f64>,
    pub envs: Vec<usize>,
    pub diagnostics: SimplexDiagnostics,
}

pub fn simulate_angular(
    spec: &ModelSpec,
    theta0: &[f64],
    env0: usize,
    horizon: f64,
    output_dt: f64,
    rng: RngStream,
) -> Result<AngularPath> {
    check_grid_args(horizon, output_dt)?;
    let mats = linearizations(spec)?;
    let mut proc = AngularProcess::new(spec, &mats, theta0, env0, rng.generator())?;
    let grid = output_grid(horizon, output_dt);
    let mut path = AngularPath {
        times: Vec::with_capacity(grid.len()),
        thetas: Vec::with_capacity(grid.len()),
        s: Vec::with_capacity(grid.len()),
        envs: Vec::with_capacity(grid.len()),
        diagnostics: SimplexDiagnostics::default(),
    };
    for &t in &grid {
        proc.advance_to(spec, t)?;
        path.times.push(t);
        path.thetas.push(proc.theta.clone());
        path.s.push(proc.s);
        path.envs.push(proc.env);
    }
    path.diagnostics = proc.diagnostics;
    Ok(path)
}

/// The linearised process `Y' = A^env Y` in (direction, log-norm) form.
#[derive(Debug, Clone, Serialize)]
pub struct LinearPath {
    pub theta0: Vec<f64>,
    pub lognorm0: f64,
    pub times: Vec<f64>,
    pub thetas: Vec<Vec<f64>>,
    pub lognorms: Vec<f64>,
    pub envs: Vec<usize>,
}

pub fn simulate_linear(
    spec: &ModelSpec,
    theta0: &[f64],
    lognorm0: f64,
    env0: usize,
    horizon: f64,
    output_dt: f64,
    rng: RngStream,
) -> Result<LinearPath> {
    let ang = simulate_angular(spec, theta0, env0, horizon, output_dt, rng)?;
    Ok(LinearPath {
        theta0: theta0.to_vec(),
        lognorm0,
        lognorms: ang.s.iter().map(|s| lognorm0 + s).collect(),
        times: ang.times,
        thetas: ang.thetas,
        envs: ang.envs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(b: f64) -> ModelSpec {
        ModelSpec::scalar(&[b], 1.0, Matrix::zeros(1)).unwrap()
    }

    #[test]
    fn endemic_point_is_fixed() {
        let spec = scalar(2.0);
        let x = integrate_flow(&spec, 0, &[0.5], 13.7, StepControl::default()).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-14);
        let x = integrate_flow(&spec, 0, &[0.0], 10.0, StepControl::default()).unwrap();
        assert_eq!(x, vec![0.0]);
    }

    #[test]
    fn converges_to_endemic_point() {
        let spec = scalar(2.0);
        let x = integrate_flow(&spec, 0, &[0.9], 20.0, StepControl::default()).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn rk4_matches_logistic_solution() {
        // x' = x(1 - 2x): x(t) = x0 e^t / (1 + 2 x0 (e^t - 1))
        let spec = scalar(2.0);
        let x0 = 0.1;
        let t: f64 = 3.0;
        let exact = x0 * t.exp() / (1.0 + 2.0 * x0 * (t.exp() - 1.0));
        let x = integrate_flow(&spec, 0, &[x0], t, StepControl::default()).unwrap();
        assert!((x[0] - exact).abs() < 1e-9);
    }

    #[test]
    fn rejects_points_outside_cube() {
        let spec = scalar(2.0);
        assert!(integrate_flow(&spec, 0, &[1.5], 1.0, StepControl::default()).is_err());
    }

    #[test]
    fn output_grid_includes_horizon() {
        assert_eq!(output_grid(1.0, 0.5), vec![0.0, 0.5, 1.0]);
        assert_eq!(output_grid(1.2, 0.5), vec![0.0, 0.5, 1.0, 1.2]);
        assert_eq!(output_grid(0.0, 0.5), vec![0.0]);
    }
}
