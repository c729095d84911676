//! Model definition: infection, cure and environment-switching rates, the
//! mean-field vector field and its linearization at the disease-free state.
//!
//! Group `i` has `K_i` individuals of which `n_i` are infective; with
//! `x_i = n_i / K_i` and environment `env` the chain jumps
//!
//! | transition            | rate                          |
//! |-----------------------|-------------------------------|
//! | `n_i -> n_i + 1`      | `K_i (1 - x_i) b_i(x, env)`   |
//! | `n_i -> n_i - 1`      | `K_i x_i d_i(x, env)`         |
//! | `env -> env'`         | `q(x, env, env')`             |
//!
//! and the large-population limit follows `dx/dt = F(x, env)` with
//! `F_i = (1 - x_i) b_i - x_i d_i`.
//!
//! Environments are indexed from 0 in the API; file formats print them
//! from 1.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{l1_norm, Matrix};
use crate::rng::RngStream;

/// Rate callback `(group, x, env) -> rate`.
pub type RateFn = Arc<dyn Fn(usize, &[f64], usize) -> f64 + Send + Sync>;
/// Switching callback `x -> Q(x)`; only off-diagonal entries are read.
pub type SwitchFn = Arc<dyn Fn(&[f64]) -> Matrix + Send + Sync>;

const DOMAIN_TOL: f64 = 1e-9;
/// Finite-difference step for Jacobians.
pub const FD_STEP: f64 = 1e-6;
/// Safety factor applied to grid-estimated Lipschitz constants and bounds.
pub const GRID_SAFETY: f64 = 1.1;
pub const DEFAULT_GRID_RESOLUTION: usize = 21;
pub const GRID_SAMPLE_CAP: usize = 100_000;

#[derive(Clone)]
pub enum InfectionRates {
    /// `b_i(x, env) = sum_j C^env_ij x_j`, one nonnegative `d x d` matrix per environment.
    LajmanovichYorke(Vec<Matrix>),
    General(RateFn),
}

#[derive(Clone)]
pub enum CureRates {
    /// `d_i(x, env) = D^env_i`.
    Constant(Vec<Vec<f64>>),
    General(RateFn),
}

#[derive(Clone)]
pub enum SwitchRates {
    Constant(Matrix),
    /// `q(x, e, e') = base_ee' + m(x) slope_ee'` with `m(x) = sum_i alpha_i x_i`
    /// the population-wide prevalence.
    LinearInPrevalence { base: Matrix, slope: Matrix },
    /// Arbitrary continuous `Q(x)`. Without a `bound` the thinning bound is a
    /// grid maximum inflated by [`GRID_SAFETY`].
    General { rates: SwitchFn, bound: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Transition {
    Infect(usize),
    Cure(usize),
    Switch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    /// Upper bound on the l1 Lipschitz constant of every `F(., env)`.
    pub lipschitz_bound: f64,
    /// Upper bound on the Lipschitz constants of the per-capita jump rates
    /// `(1 - x_i) b_i` and `x_i d_i`.
    pub rate_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneFlags {
    pub cooperative: Vec<bool>,
    pub irreducible_interior: Vec<bool>,
    pub strongly_subhomogeneous: Vec<bool>,
}

impl MonotoneFlags {
    pub fn all(&self) -> bool {
        self.cooperative
            .iter()
            .chain(&self.irreducible_interior)
            .chain(&self.strongly_subhomogeneous)
            .all(|&b| b)
    }
}

#[derive(Clone)]
pub struct ModelSpec {
    group_fractions: Vec<f64>,
    num_env: usize,
    infection: InfectionRates,
    cure: CureRates,
    switch: SwitchRates,
    switch_bound: f64,
    constants: DerivedConstants,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("d", &self.dim())
            .field("num_env", &self.num_env)
            .field("group_fractions", &self.group_fractions)
            .field("lajmanovich_yorke", &self.is_lajmanovich_yorke())
            .field("switch_bound", &self.switch_bound)
            .finish()
    }
}

impl ModelSpec {
    pub fn new(
        group_fractions: Vec<f64>,
        num_env: usize,
        infection: InfectionRates,
        cure: CureRates,
        switch: SwitchRates,
    ) -> Result<Self> {
        let d = group_fractions.len();
        if d == 0 {
            return Err(Error::InvalidModel("at least one group is required".into()));
        }
        if num_env == 0 {
            return Err(Error::InvalidModel("at least one environment is required".into()));
        }
        if group_fractions.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "group fractions must be positive, got {group_fractions:?}"
            )));
        }
        let total: f64 = group_fractions.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!(
                "group fractions sum to {total}, expected 1"
            )));
        }
        if let InfectionRates::LajmanovichYorke(cs) = &infection {
            if cs.len() != num_env {
                return Err(Error::InvalidModel(format!(
                    "{} contact matrices for {num_env} environments",
                    cs.len()
                )));
            }
            for (e, c) in cs.iter().enumerate() {
                if c.dim() != d {
                    return Err(Error::InvalidModel(format!(
                        "contact matrix of environment {e} is {0}x{0}, expected {d}x{d}",
                        c.dim()
                    )));
                }
                if !c.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "contact matrix of environment {e} has non-finite entries"
                    )));
                }
            }
        }
        if let CureRates::Constant(ds) = &cure {
            if ds.len() != num_env || ds.iter().any(|v| v.len() != d) {
                return Err(Error::InvalidModel(format!(
                    "cure rates must be {num_env} vectors of length {d}"
                )));
            }
            if ds.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel("cure rates must be finite".into()));
            }
        }
        match &switch {
            SwitchRates::Constant(q) => check_rate_matrix(q, num_env, "Q")?,
            SwitchRates::LinearInPrevalence { base, slope } => {
                check_rate_matrix(base, num_env, "base")?;
                if slope.dim() != num_env || !slope.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "slope must be a finite {num_env}x{num_env} matrix"
                    )));
                }
                check_rate_matrix(&base.add(slope), num_env, "base + slope")?;
            }
            SwitchRates::General { bound, .. } => {
                if let Some(b) = bound {
                    if !(*b >= 0.0) || !b.is_finite() {
                        return Err(Error::InvalidModel(format!("invalid switch bound {b}")));
                    }
                }
            }
        }
        let mut spec = Self {
            group_fractions,
            num_env,
            infection,
            cure,
            switch,
            switch_bound: 0.0,
            constants: DerivedConstants {
                lipschitz_bound: 0.0,
                rate_bound: 0.0,
            },
        };
        spec.switch_bound = spec.compute_switch_bound();
        spec.constants = spec.compute_constants();
        Ok(spec)
    }

    /// Lajmanovich–Yorke model: `b^e = C^e x`, constant cure `D^e`, constant `Q`.
    pub fn lajmanovich_yorke(
        group_fractions: Vec<f64>,
        contact: Vec<Matrix>,
        cure: Vec<Vec<f64>>,
        q: Matrix,
    ) -> Result<Self> {
        let num_env = contact.len();
        Self::new(
            group_fractions,
            num_env,
            InfectionRates::LajmanovichYorke(contact),
            CureRates::Constant(cure),
            SwitchRates::Constant(q),
        )
    }

    /// One group, `b^e(x) = infection[e] x`, cure rate `cure` in every environment.
    pub fn scalar(infection: &[f64], cure: f64, q: Matrix) -> Result<Self> {
        Self::lajmanovich_yorke(
            vec![1.0],
            infection.iter().map(|&b| Matrix::from_array([[b]])).collect(),
            vec![vec![cure]; infection.len()],
            q,
        )
    }

    pub fn dim(&self) -> usize {
        self.group_fractions.len()
    }

    pub fn num_envs(&self) -> usize {
        self.num_env
    }

    pub fn group_fractions(&self) -> &[f64] {
        &self.group_fractions
    }

    pub fn infection(&self) -> &InfectionRates {
        &self.infection
    }

    pub fn cure(&self) -> &CureRates {
        &self.cure
    }

    pub fn switching(&self) -> &SwitchRates {
        &self.switch
    }

    /// `q-bar`: bound on every off-diagonal switching rate over the cube.
    pub fn switch_bound(&self) -> f64 {
        self.switch_bound
    }

    pub fn constants(&self) -> DerivedConstants {
        self.constants
    }

    pub fn is_lajmanovich_yorke(&self) -> bool {
        matches!(self.infection, InfectionRates::LajmanovichYorke(_))
            && matches!(self.cure, CureRates::Constant(_))
    }

    pub fn constant_switch(&self) -> Option<&Matrix> {
        match &self.switch {
            SwitchRates::Constant(q) => Some(q),
            _ => None,
        }
    }

    #[inline]
    pub fn infection_rate(&self, i: usize, x: &[f64], env: usize) -> f64 {
        match &self.infection {
            InfectionRates::LajmanovichYorke(cs) => {
                cs[env].row(i).iter().zip(x).map(|(c, xj)| c * xj).sum()
            }
            InfectionRates::General(f) => f(i, x, env),
        }
    }

    #[inline]
    pub fn cure_rate(&self, i: usize, x: &[f64], env: usize) -> f64 {
        match &self.cure {
            CureRates::Constant(ds) => ds[env][i],
            CureRates::General(f) => f(i, x, env),
        }
    }

    /// Mean prevalence `sum_i alpha_i x_i`.
    pub fn prevalence(&self, x: &[f64]) -> f64 {
        self.group_fractions.iter().zip(x).map(|(a, v)| a * v).sum()
    }

    /// Off-diagonal switching rate `q(x, from, to)`; zero when `from == to`.
    #[inline]
    pub fn switch_rate(&self, x: &[f64], from: usize, to: usize) -> f64 {
        if from == to {
            return 0.0;
        }
        match &self.switch {
            SwitchRates::Constant(q) => q[(from, to)],
            SwitchRates::LinearInPrevalence { base, slope } => {
                base[(from, to)] + self.prevalence(x) * slope[(from, to)]
            }
            SwitchRates::General { rates, .. } => rates(x)[(from, to)],
        }
    }

    /// Full rate matrix `Q(x)` with diagonal `-sum` of the off-diagonals.
    pub fn switch_matrix(&self, x: &[f64]) -> Matrix {
        let n = self.num_env;
        let raw = match &self.switch {
            SwitchRates::General { rates, .. } => Some(rates(x)),
            _ => None,
        };
        let mut q = Matrix::zeros(n);
        for a in 0..n {
            let mut out = 0.0;
            for b in 0..n {
                if a != b {
                    let v = match &raw {
                        Some(m) => m[(a, b)],
                        None => self.switch_rate(x, a, b),
                    };
                    q[(a, b)] = v;
                    out += v;
                }
            }
            q[(a, a)] = -out;
        }
        q
    }

    /// Total rate of leaving environment `env` at `x`.
    pub fn switch_out_rate(&self, x: &[f64], env: usize) -> f64 {
        (0..self.num_env).map(|b| self.switch_rate(x, env, b)).sum()
    }

    fn check_env(&self, env: usize) -> Result<()> {
        if env >= self.num_env {
            return Err(Error::Domain(format!(
                "environment {env} out of range (0..{})",
                self.num_env
            )));
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Domain(format!(
                "point has dimension {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        if let Some(v) = x
            .iter()
            .find(|&&v| !(-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&v))
        {
            return Err(Error::Domain(format!("coordinate {v} outside [0, 1]")));
        }
        Ok(())
    }

    /// `F(x, env)`; `x` must lie in the unit cube up to `1e-9`.
    pub fn vector_field(&self, x: &[f64], env: usize) -> Result<Vec<f64>> {
        self.check_point(x)?;
        self.check_env(env)?;
        let mut out = vec![0.0; self.dim()];
        self.field_into(x, env, &mut out);
        Ok(out)
    }

    /// Unchecked `F(x, env)` written into `out`.
    #[inline]
    pub fn field_into(&self, x: &[f64], env: usize, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let xi = x[i];
            *o = (1.0 - xi) * self.infection_rate(i, x, env) - xi * self.cure_rate(i, x, env);
        }
    }

    /// Jacobian of `F(., env)` at `x` by central differences, one-sided at
    /// the faces of the cube.
    pub fn field_jacobian(&self, x: &[f64], env: usize) -> Matrix {
        let d = self.dim();
        let mut jac = Matrix::zeros(d);
        let mut lo = x.to_vec();
        let mut hi = x.to_vec();
        let mut f_lo = vec![0.0; d];
        let mut f_hi = vec![0.0; d];
        for j in 0..d {
            lo[j] = (x[j] - FD_STEP).max(0.0);
            hi[j] = (x[j] + FD_STEP).min(1.0);
            self.field_into(&lo, env, &mut f_lo);
            self.field_into(&hi, env, &mut f_hi);
            let h = hi[j] - lo[j];
            for i in 0..d {
                jac[(i, j)] = (f_hi[i] - f_lo[i]) / h;
            }
            lo[j] = x[j];
            hi[j] = x[j];
        }
        jac
    }

    /// Jacobian of the infection rates `(d_j b_i(0, env))` at the origin.
    /// Exact for the Lajmanovich–Yorke form; otherwise a second-order
    /// one-sided difference with step [`FD_STEP`].
    pub fn infection_jacobian_at_zero(&self, env: usize) -> Matrix {
        match &self.infection {
            InfectionRates::LajmanovichYorke(cs) => cs[env].clone(),
            InfectionRates::General(f) => {
                let d = self.dim();
                let mut jac = Matrix::zeros(d);
                let zero = vec![0.0; d];
                let mut p1 = zero.clone();
                let mut p2 = zero.clone();
                for j in 0..d {
                    p1[j] = FD_STEP;
                    p2[j] = 2.0 * FD_STEP;
                    for i in 0..d {
                        jac[(i, j)] = (-3.0 * f(i, &zero, env) + 4.0 * f(i, &p1, env)
                            - f(i, &p2, env))
                            / (2.0 * FD_STEP);
                    }
                    p1[j] = 0.0;
                    p2[j] = 0.0;
                }
                jac
            }
        }
    }

    /// `A^env = DF(0, env) = (d_j b_i(0)) - Diag(d_i(0))`.
    pub fn linearization_at_zero(&self, env: usize) -> Result<Matrix> {
        self.check_env(env)?;
        let d = self.dim();
        let zero = vec![0.0; d];
        let mut a = self.infection_jacobian_at_zero(env);
        if !a.is_metzler(FD_STEP) {
            return Err(Error::Numerical(format!(
                "linearization in environment {env} is not Metzler: {a:?}"
            )));
        }
        for i in 0..d {
            for j in 0..d {
                if i != j && a[(i, j)] < 0.0 {
                    a[(i, j)] = 0.0;
                }
            }
            a[(i, i)] -= self.cure_rate(i, &zero, env);
        }
        Ok(a)
    }

    /// Group sizes `K_i` summing to `k`, proportional to the group fractions
    /// (largest-remainder rounding, every group at least 1).
    pub fn group_sizes(&self, k: usize) -> Result<Vec<usize>> {
        let d = self.dim();
        if k < d {
            return Err(Error::Domain(format!("population {k} smaller than {d} groups")));
        }
        let exact: Vec<f64> = self.group_fractions.iter().map(|a| a * k as f64).collect();
        let mut sizes: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut missing = k - sizes.iter().sum::<usize>();
        for &i in order.iter().cycle() {
            if missing == 0 {
                break;
            }
            sizes[i] += 1;
            missing -= 1;
        }
        while let Some(i) = sizes.iter().position(|&s| s == 0) {
            let j = (0..d).max_by_key(|&j| sizes[j]).unwrap_or(0);
            sizes[j] -= 1;
            sizes[i] += 1;
        }
        Ok(sizes)
    }

    /// Epidemic rates at integer state `counts`, written as
    /// `[infect_0, .., infect_{d-1}, cure_0, .., cure_{d-1}]`. `x` is scratch.
    #[inline]
    pub fn fill_epidemic_rates(
        &self,
        sizes: &[usize],
        counts: &[usize],
        env: usize,
        x: &mut [f64],
        rates: &mut [f64],
    ) {
        let d = self.dim();
        for i in 0..d {
            x[i] = counts[i] as f64 / sizes[i] as f64;
        }
        for i in 0..d {
            let k = sizes[i] as f64;
            let up = if counts[i] < sizes[i] {
                k * (1.0 - x[i]) * self.infection_rate(i, x, env)
            } else {
                0.0
            };
            let down = if counts[i] > 0 {
                k * x[i] * self.cure_rate(i, x, env)
            } else {
                0.0
            };
            rates[i] = up.max(0.0);
            rates[d + i] = down.max(0.0);
        }
    }

    /// All positive-rate transitions out of `(counts, env)`.
    pub fn transition_rates(
        &self,
        sizes: &[usize],
        counts: &[usize],
        env: usize,
    ) -> Result<Vec<(Transition, f64)>> {
        let d = self.dim();
        self.check_env(env)?;
        if sizes.len() != d || counts.len() != d {
            return Err(Error::Domain(format!(
                "sizes/counts must have length {d}"
            )));
        }
        for i in 0..d {
            if sizes[i] == 0 {
                return Err(Error::Domain(format!("group {i} has size 0")));
            }
            if counts[i] > sizes[i] {
                return Err(Error::Domain(format!(
                    "count {} exceeds group size {} in group {i}",
                    counts[i], sizes[i]
                )));
            }
        }
        let mut x = vec![0.0; d];
        let mut rates = vec![0.0; 2 * d];
        self.fill_epidemic_rates(sizes, counts, env, &mut x, &mut rates);
        let mut out = Vec::new();
        for i in 0..d {
            if rates[i] > 0.0 {
                out.push((Transition::Infect(i), rates[i]));
            }
        }
        for i in 0..d {
            if rates[d + i] > 0.0 {
                out.push((Transition::Cure(i), rates[d + i]));
            }
        }
        for to in 0..self.num_env {
            let q = self.switch_rate(&x, env, to);
            if q > 0.0 {
                out.push((Transition::Switch(to), q));
            }
        }
        Ok(out)
    }

    fn compute_switch_bound(&self) -> f64 {
        match &self.switch {
            SwitchRates::Constant(q) => q.max_off_diagonal(),
            SwitchRates::LinearInPrevalence { base, slope } => base
                .max_off_diagonal()
                .max(base.add(slope).max_off_diagonal()),
            SwitchRates::General { rates, bound } => bound.unwrap_or_else(|| {
                probe_points(self.dim(), DEFAULT_GRID_RESOLUTION, GRID_SAMPLE_CAP)
                    .iter()
                    .map(|x| rates(x).max_off_diagonal())
                    .fold(0.0, f64::max)
                    * GRID_SAFETY
            }),
        }
    }

    fn compute_constants(&self) -> DerivedConstants {
        if let (InfectionRates::LajmanovichYorke(cs), CureRates::Constant(ds)) =
            (&self.infection, &self.cure)
        {
            // l1 operator norm of DF: column j sums to at most
            // colsum_j(C) + rowsum_j(C) + D_j.
            let d = self.dim();
            let mut lip = 0.0_f64;
            let mut rate = 0.0_f64;
            for (c, dv) in cs.iter().zip(ds) {
                for j in 0..d {
                    let col: f64 = (0..d).map(|i| c[(i, j)].abs()).sum();
                    let row: f64 = c.row(j).iter().map(|v| v.abs()).sum();
                    lip = lip.max(col + row + dv[j].abs());
                    rate = rate.max(row.max(dv[j].abs()));
                }
            }
            return DerivedConstants {
                lipschitz_bound: lip,
                rate_bound: rate,
            };
        }
        let d = self.dim();
        let mut lip = 0.0_f64;
        let mut rate = 0.0_f64;
        let points = probe_points(d, DEFAULT_GRID_RESOLUTION, GRID_SAMPLE_CAP);
        for env in 0..self.num_env {
            for x in &points {
                let jac = self.field_jacobian(x, env);
                for j in 0..d {
                    let col: f64 = (0..d).map(|i| jac[(i, j)].abs()).sum();
                    lip = lip.max(col);
                }
                for i in 0..d {
                    let grads = self.rate_gradients(i, x, env);
                    rate = rate.max(grads.0).max(grads.1);
                }
            }
        }
        DerivedConstants {
            lipschitz_bound: lip * GRID_SAFETY,
            rate_bound: rate * GRID_SAFETY,
        }
    }

    /// Sup-norm of the gradients of `(1 - x_i) b_i` and `x_i d_i` at `x`.
    fn rate_gradients(&self, i: usize, x: &[f64], env: usize) -> (f64, f64) {
        let up = |p: &[f64]| (1.0 - p[i]) * self.infection_rate(i, p, env);
        let down = |p: &[f64]| p[i] * self.cure_rate(i, p, env);
        let mut g_up = 0.0_f64;
        let mut g_down = 0.0_f64;
        let mut lo = x.to_vec();
        let mut hi = x.to_vec();
        for j in 0..x.len() {
            lo[j] = (x[j] - FD_STEP).max(0.0);
            hi[j] = (x[j] + FD_STEP).min(1.0);
            let h = hi[j] - lo[j];
            g_up = g_up.max(((up(&hi) - up(&lo)) / h).abs());
            g_down = g_down.max(((down(&hi) - down(&lo)) / h).abs());
            lo[j] = x[j];
            hi[j] = x[j];
        }
        (g_up, g_down)
    }

    /// Cooperativity, irreducibility and strong sub-homogeneity of each
    /// `F(., env)`. Exact for the Lajmanovich–Yorke form, probed on a grid
    /// otherwise.
    pub fn monotone_flags(&self, grid_resolution: usize) -> MonotoneFlags {
        let n = self.num_env;
        if let InfectionRates::LajmanovichYorke(cs) = &self.infection {
            if matches!(self.cure, CureRates::Constant(_)) {
                let irreducible: Vec<bool> = cs.iter().map(|c| c.is_irreducible(0.0)).collect();
                let subhom = cs
                    .iter()
                    .map(|c| (0..c.dim()).all(|i| c.row(i).iter().any(|&v| v > 0.0)))
                    .collect();
                return MonotoneFlags {
                    cooperative: cs.iter().map(|c| c.is_metzler(0.0)).collect(),
                    irreducible_interior: irreducible,
                    strongly_subhomogeneous: subhom,
                };
            }
        }
        let d = self.dim();
        let points = probe_points(d, grid_resolution, GRID_SAMPLE_CAP);
        let mut flags = MonotoneFlags {
            cooperative: vec![true; n],
            irreducible_interior: vec![true; n],
            strongly_subhomogeneous: vec![true; n],
        };
        let mut fx = vec![0.0; d];
        let mut fl = vec![0.0; d];
        for env in 0..n {
            for x in &points {
                let jac = self.field_jacobian(x, env);
                if !jac.is_metzler(1e-6) {
                    flags.cooperative[env] = false;
                }
                if x.iter().all(|&v| v < 1.0) && !jac.is_irreducible(1e-9) {
                    flags.irreducible_interior[env] = false;
                }
                if x.iter().all(|&v| v > 0.0 && v < 1.0) {
                    self.field_into(x, env, &mut fx);
                    for lambda in [1.25, 1.5, 2.0] {
                        let y: Vec<f64> = x.iter().map(|v| v * lambda).collect();
                        if y.iter().any(|&v| v >= 1.0) {
                            continue;
                        }
                        self.field_into(&y, env, &mut fl);
                        if fl.iter().zip(&fx).any(|(a, b)| !(*a < lambda * b)) {
                            flags.strongly_subhomogeneous[env] = false;
                        }
                    }
                }
            }
        }
        flags
    }
}

fn check_rate_matrix(q: &Matrix, n: usize, name: &str) -> Result<()> {
    if q.dim() != n {
        return Err(Error::InvalidModel(format!(
            "{name} is {0}x{0}, expected {n}x{n}",
            q.dim()
        )));
    }
    if !q.is_finite() || !q.is_metzler(0.0) {
        return Err(Error::InvalidModel(format!(
            "{name} must have finite nonnegative off-diagonal entries"
        )));
    }
    for i in 0..n {
        let s: f64 = q.row(i).iter().sum();
        if s.abs() > 1e-9 * (1.0 + q.max_abs()) {
            return Err(Error::InvalidModel(format!(
                "row {i} of {name} sums to {s}, expected 0"
            )));
        }
    }
    Ok(())
}

/// Probe points in `[0,1]^d`: the full tensor grid with `resolution` points
/// per axis when it has at most `cap` points, otherwise `cap` uniform points
/// from a fixed stream.
pub fn probe_points(d: usize, resolution: usize, cap: usize) -> Vec<Vec<f64>> {
    let resolution = resolution.max(2);
    let total = (resolution as f64).powi(d as i32);
    if total <= cap as f64 {
        let total = total as usize;
        let step = 1.0 / (resolution - 1) as f64;
        (0..total)
            .map(|mut k| {
                let mut p = vec![0.0; d];
                for v in p.iter_mut().rev() {
                    *v = (k % resolution) as f64 * step;
                    k /= resolution;
                }
                p
            })
            .collect()
    } else {
        let mut rng = RngStream::new(0x5eed_9e1d, 0).generator();
        (0..cap)
            .map(|_| (0..d).map(|_| rng.uniform()).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Assumption {
    /// Rates are finite (smoothness itself cannot be probed).
    Regularity,
    /// `b_i(0, env) = 0`.
    NoExternalInfection,
    /// `d_i(x, env) > 0` on the cube.
    PositiveCure,
    /// `(d_j b_i)` nonnegative and irreducible.
    IrreducibleInfectionJacobian,
    /// `Q(x)` irreducible.
    IrreducibleSwitching,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub point: Vec<f64>,
    pub env: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub assumption: Assumption,
    pub passed: bool,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub grid_points: usize,
    pub checks: Vec<AssumptionCheck>,
    pub monotone: MonotoneFlags,
    pub constants: DerivedConstants,
    pub switch_bound: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, a: Assumption) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.assumption == a)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            write!(f, "{:<30} {}", format!("{:?}", c.assumption), if c.passed { "pass" } else { "FAIL" })?;
            if let Some(w) = &c.witness {
                write!(f, "  (env {}, x = {:?}: {})", w.env + 1, w.point, w.detail)?;
            }
            writeln!(f)?;
        }
        writeln!(f, "cooperative             {:?}", self.monotone.cooperative)?;
        writeln!(f, "irreducible interior    {:?}", self.monotone.irreducible_interior)?;
        writeln!(f, "strongly subhomogeneous {:?}", self.monotone.strongly_subhomogeneous)?;
        writeln!(f, "lipschitz bound C_F     {}", self.constants.lipschitz_bound)?;
        writeln!(f, "rate bound C_beta       {}", self.constants.rate_bound)?;
        write!(f, "switch bound            {}", self.switch_bound)
    }
}

/// Check the standing assumptions on a probe grid with `grid_resolution`
/// points per axis (capped at [`GRID_SAMPLE_CAP`] samples). Negative or
/// non-finite rates at a probed point are an error rather than a failed
/// check.
pub fn validate_model(spec: &ModelSpec, grid_resolution: usize) -> Result<ValidationReport> {
    let d = spec.dim();
    let n = spec.num_envs();
    let points = probe_points(d, grid_resolution, GRID_SAMPLE_CAP);
    let zero = vec![0.0; d];

    let mut regularity: Option<Witness> = None;
    let mut positive_cure: Option<Witness> = None;
    let mut switching: Option<Witness> = None;
    for x in &points {
        for env in 0..n {
            for i in 0..d {
                let b = spec.infection_rate(i, x, env);
                let c = spec.cure_rate(i, x, env);
                if !b.is_finite() || !c.is_finite() {
                    regularity.get_or_insert(Witness {
                        point: x.clone(),
                        env,
                        detail: format!("non-finite rate in group {i}"),
                    });
                    continue;
                }
                if b < 0.0 || c < 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "negative rate at x = {x:?}, env {}: b_{i} = {b}, d_{i} = {c}",
                        env + 1
                    )));
                }
                if !(c > 0.0) && positive_cure.is_none() {
                    positive_cure = Some(Witness {
                        point: x.clone(),
                        env,
                        detail: format!("d_{} = {c}", i + 1),
                    });
                }
            }
        }
        let q = spec.switch_matrix(x);
        if !q.is_finite() {
            regularity.get_or_insert(Witness {
                point: x.clone(),
                env: 0,
                detail: "non-finite switching rate".into(),
            });
        } else if !q.is_metzler(0.0) {
            return Err(Error::InvalidModel(format!(
                "negative switching rate at x = {x:?}: {q:?}"
            )));
        } else if !q.is_irreducible(0.0) && switching.is_none() {
            switching = Some(Witness {
                point: x.clone(),
                env: 0,
                detail: format!("Q = {q:?}"),
            });
        }
    }

    let mut external: Option<Witness> = None;
    let mut jacobian: Option<Witness> = None;
    for env in 0..n {
        for i in 0..d {
            let b0 = spec.infection_rate(i, &zero, env);
            if b0.abs() > 1e-12 && external.is_none() {
                external = Some(Witness {
                    point: zero.clone(),
                    env,
                    detail: format!("b_{}(0) = {b0}", i + 1),
                });
            }
        }
        let jac0 = spec.infection_jacobian_at_zero(env);
        let nonneg = (0..d).all(|i| (0..d).all(|j| jac0[(i, j)] >= -FD_STEP));
        if (!nonneg || !jac0.is_irreducible(FD_STEP)) && jacobian.is_none() {
            jacobian = Some(Witness {
                point: zero.clone(),
                env,
                detail: format!("Db(0) = {jac0:?}"),
            });
        }
    }

    let check = |assumption, witness: Option<Witness>| AssumptionCheck {
        assumption,
        passed: witness.is_none(),
        witness,
    };
    Ok(ValidationReport {
        grid_points: points.len(),
        checks: vec![
            check(Assumption::Regularity, regularity),
            check(Assumption::NoExternalInfection, external),
            check(Assumption::PositiveCure, positive_cure),
            check(Assumption::IrreducibleInfectionJacobian, jacobian),
            check(Assumption::IrreducibleSwitching, switching),
        ],
        monotone: spec.monotone_flags(grid_resolution),
        constants: spec.constants(),
        switch_bound: spec.switch_bound(),
    })
}

/// l1 norm of a proportion vector.
pub fn norm(x: &[f64]) -> f64 {
    l1_norm(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_q() -> Matrix {
        Matrix::from_array([[-1.0, 1.0], [1.0, -1.0]])
    }

    fn ly_2d() -> ModelSpec {
        ModelSpec::lajmanovich_yorke(
            vec![0.5, 0.5],
            vec![Matrix::from_array([[0.0, 2.0], [2.0, 0.0]]); 2],
            vec![vec![1.0, 1.0]; 2],
            two_state_q(),
        )
        .unwrap()
    }

    #[test]
    fn ly_model_passes_all_checks() {
        let r = validate_model(&ly_2d(), 21).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.monotone.all());
    }

    #[test]
    fn reducible_contact_fails_jacobian_check() {
        let spec = ModelSpec::lajmanovich_yorke(
            vec![0.5, 0.5],
            vec![Matrix::identity(2); 2],
            vec![vec![1.0, 1.0]; 2],
            two_state_q(),
        )
        .unwrap();
        let r = validate_model(&spec, 11).unwrap();
        assert!(!r.passed());
        let c = r.check(Assumption::IrreducibleInfectionJacobian).unwrap();
        assert!(!c.passed);
        assert!(c.witness.is_some());
        assert!(r.check(Assumption::PositiveCure).unwrap().passed);
    }

    #[test]
    fn zero_cure_fails_positive_cure() {
        let spec = ModelSpec::scalar(&[3.0, 0.5], 0.0, two_state_q()).unwrap();
        let r = validate_model(&spec, 11).unwrap();
        assert!(!r.check(Assumption::PositiveCure).unwrap().passed);
    }

    #[test]
    fn negative_rate_is_structured_error() {
        let f: RateFn = Arc::new(|_, x: &[f64], _| x[0] - 0.5);
        let spec = ModelSpec::new(
            vec![1.0],
            1,
            InfectionRates::General(f),
            CureRates::Constant(vec![vec![1.0]]),
            SwitchRates::Constant(Matrix::zeros(1)),
        )
        .unwrap();
        assert!(matches!(validate_model(&spec, 11), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let r = ModelSpec::lajmanovich_yorke(
            vec![0.5, 0.5],
            vec![Matrix::from_array([[1.0]])],
            vec![vec![1.0, 1.0]],
            Matrix::zeros(1),
        );
        assert!(matches!(r, Err(Error::InvalidModel(_))));
        let r = ModelSpec::scalar(&[1.0, 2.0], 1.0, Matrix::zeros(1));
        assert!(r.is_err());
    }

    #[test]
    fn vector_field_values() {
        let spec = ModelSpec::scalar(&[3.0], 1.0, Matrix::zeros(1)).unwrap();
        assert!((spec.vector_field(&[0.5], 0).unwrap()[0] - 0.25).abs() < 1e-15);
        assert_eq!(spec.vector_field(&[0.0], 0).unwrap(), vec![0.0]);
        let spec = ModelSpec::scalar(&[2.0], 1.0, Matrix::zeros(1)).unwrap();
        assert!(spec.vector_field(&[0.5], 0).unwrap()[0].abs() < 1e-15);
        assert!(matches!(spec.vector_field(&[1.1], 0), Err(Error::Domain(_))));
        assert!(spec.vector_field(&[1.0 + 1e-10], 0).is_ok());
    }

    #[test]
    fn linearization_values() {
        let a = ly_2d().linearization_at_zero(0).unwrap();
        assert_eq!(a, Matrix::from_array([[-1.0, 2.0], [2.0, -1.0]]));
        let spec = ModelSpec::scalar(&[3.0], 1.0, Matrix::zeros(1)).unwrap();
        assert_eq!(spec.linearization_at_zero(0).unwrap(), Matrix::from_array([[2.0]]));
    }

    #[test]
    fn finite_difference_linearization_matches_closed_form() {
        // b_i = tanh(C x)_i, Db(0) = C
        let c = Matrix::from_array([[0.5, 1.5], [2.0, 0.25]]);
        let cc = c.clone();
        let f: RateFn = Arc::new(move |i, x: &[f64], _| {
            (cc.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).tanh()
        });
        let spec = ModelSpec::new(
            vec![0.5, 0.5],
            1,
            InfectionRates::General(f),
            CureRates::Constant(vec![vec![1.0, 2.0]]),
            SwitchRates::Constant(Matrix::zeros(1)),
        )
        .unwrap();
        let a = spec.linearization_at_zero(0).unwrap();
        let expected = Matrix::from_array([[-0.5, 1.5], [2.0, -1.75]]);
        for i in 0..2 {
            for j in 0..2 {
                assert!((a[(i, j)] - expected[(i, j)]).abs() < 1e-8);
            }
        }
        let r = validate_model(&spec, 11).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn non_metzler_linearization_is_error() {
        let f: RateFn = Arc::new(|i, x: &[f64], _| if i == 0 { x[0] - 0.1 * x[1] } else { x[0] });
        let spec = ModelSpec::new(
            vec![0.5, 0.5],
            1,
            InfectionRates::General(f),
            CureRates::Constant(vec![vec![1.0, 1.0]]),
            SwitchRates::Constant(Matrix::zeros(1)),
        )
        .unwrap();
        assert!(matches!(spec.linearization_at_zero(0), Err(Error::Numerical(_))));
    }

    #[test]
    fn transition_rate_table() {
        let spec = ModelSpec::scalar(&[3.0, 0.5], 1.0, two_state_q()).unwrap();
        let r = spec.transition_rates(&[10], &[3], 0).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[0].0, Transition::Infect(0));
        assert!((r[0].1 - 6.3).abs() < 1e-12);
        assert_eq!(r[1], (Transition::Cure(0), 3.0));
        assert_eq!(r[2], (Transition::Switch(1), 1.0));

        let r = spec.transition_rates(&[10], &[0], 0).unwrap();
        assert_eq!(r, vec![(Transition::Switch(1), 1.0)]);

        let r = spec.transition_rates(&[10], &[10], 1).unwrap();
        assert!(r.iter().all(|(t, _)| !matches!(t, Transition::Infect(_))));

        assert!(matches!(spec.transition_rates(&[10], &[11], 0), Err(Error::Domain(_))));
    }

    #[test]
    fn group_sizes_sum_to_population() {
        let spec = ModelSpec::lajmanovich_yorke(
            vec![0.2, 0.3, 0.5],
            vec![Matrix::from_array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])],
            vec![vec![1.0; 3]],
            Matrix::zeros(1),
        )
        .unwrap();
        for k in [3usize, 7, 10, 101] {
            let s = spec.group_sizes(k).unwrap();
            assert_eq!(s.iter().sum::<usize>(), k);
            assert!(s.iter().all(|&v| v >= 1));
        }
        assert_eq!(spec.group_sizes(10).unwrap(), vec![2, 3, 5]);
        assert!(spec.group_sizes(2).is_err());
    }

    #[test]
    fn prevalence_dependent_switching() {
        let spec = ModelSpec::new(
            vec![1.0],
            2,
            InfectionRates::LajmanovichYorke(vec![Matrix::from_array([[3.0]]), Matrix::from_array([[0.5]])]),
            CureRates::Constant(vec![vec![1.0]; 2]),
            SwitchRates::LinearInPrevalence {
                base: two_state_q(),
                slope: Matrix::from_array([[-2.0, 2.0], [0.0, 0.0]]),
            },
        )
        .unwrap();
        assert_eq!(spec.switch_bound(), 3.0);
        assert!((spec.switch_rate(&[0.5], 0, 1) - 2.0).abs() < 1e-15);
        let q = spec.switch_matrix(&[0.5]);
        assert!((q[(0, 0)] + 2.0).abs() < 1e-15);
        assert!(validate_model(&spec, 11).unwrap().passed());
    }
}
