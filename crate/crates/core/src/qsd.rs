//! Quasi-stationary distributions of the finite chain: state enumeration,
//! the killed generator, the left Perron eigenproblem and diagnostics.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::pdmp::{output_grid, simulate_pdmp};
use crate::rng::{RngStream, SimRng};

pub const DEFAULT_STATE_CAP: usize = 5_000_000;
/// Largest band storage (in entries) used by the direct solver.
pub const BAND_STORAGE_CAP: usize = 20_000_000;

/// Bijection between surviving states `(n, env)`, `n != 0`, and
/// `0..len()`. Counts are ordered lexicographically with `n_1` most
/// significant; the environment varies fastest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StateIndex {
    sizes: Vec<usize>,
    num_env: usize,
    strides: Vec<usize>,
    len: usize,
}

impl StateIndex {
    pub fn new(sizes: &[usize], num_env: usize, cap: usize) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) || num_env == 0 {
            return Err(Error::Domain("group sizes and environment count must be positive".into()));
        }
        let d = sizes.len();
        let mut strides = vec![1usize; d];
        let mut total: usize = 1;
        for i in (0..d).rev() {
            strides[i] = total;
            total = total
                .checked_mul(sizes[i] + 1)
                .ok_or(Error::StateSpaceTooLarge { states: usize::MAX, cap })?;
        }
        let len = (total - 1)
            .checked_mul(num_env)
            .ok_or(Error::StateSpaceTooLarge { states: usize::MAX, cap })?;
        if len > cap {
            return Err(Error::StateSpaceTooLarge { states: len, cap });
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            num_env,
            strides,
            len,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_envs(&self) -> usize {
        self.num_env
    }

    /// Index of `(counts, env)`; `None` for extinct or out-of-range states.
    pub fn index(&self, counts: &[usize], env: usize) -> Option<usize> {
        if counts.len() != self.sizes.len() || env >= self.num_env {
            return None;
        }
        let mut lin = 0;
        for i in 0..counts.len() {
            if counts[i] > self.sizes[i] {
                return None;
            }
            lin += counts[i] * self.strides[i];
        }
        (lin > 0).then(|| (lin - 1) * self.num_env + env)
    }

    pub fn state_into(&self, idx: usize, counts: &mut [usize]) -> usize {
        let env = idx % self.num_env;
        let mut lin = idx / self.num_env + 1;
        for i in 0..self.sizes.len() {
            counts[i] = lin / self.strides[i];
            lin %= self.strides[i];
        }
        env
    }

    pub fn state(&self, idx: usize) -> (Vec<usize>, usize) {
        let mut counts = vec![0; self.sizes.len()];
        let env = self.state_into(idx, &mut counts);
        (counts, env)
    }

    /// `|x|_1` with `x_i = n_i / K_i`.
    pub fn norm(&self, idx: usize) -> f64 {
        let mut lin = idx / self.num_env + 1;
        let mut s = 0.0;
        for i in 0..self.sizes.len() {
            s += (lin / self.strides[i]) as f64 / self.sizes[i] as f64;
            lin %= self.strides[i];
        }
        s
    }

    /// Largest index distance between a state and its neighbours.
    fn bandwidth(&self) -> usize {
        self.strides[0] * self.num_env + self.num_env - 1
    }
}

pub fn enumerate_states(spec: &ModelSpec, sizes: &[usize]) -> Result<StateIndex> {
    if sizes.len() != spec.dim() {
        return Err(Error::Domain(format!("expected {} group sizes", spec.dim())));
    }
    StateIndex::new(sizes, spec.num_envs(), DEFAULT_STATE_CAP)
}

/// Generator of the chain killed at extinction, in compressed rows.
#[derive(Debug, Clone)]
pub struct KilledGenerator {
    pub diag: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    t_row_ptr: Vec<usize>,
    t_cols: Vec<usize>,
    t_vals: Vec<f64>,
    /// Rate into the extinct set from each state.
    pub flux: Vec<f64>,
    /// Uniformization constant `max_i |L_ii|`.
    pub gamma: f64,
}

impl KilledGenerator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Off-diagonal entries of row `i` as `(column, rate)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    /// Entry `(i, j)` of the generator.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    /// `out = mu L`, computed column by column in a fixed order.
    pub fn left_mul(&self, mu: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(j, o)| {
            let mut s = mu[j] * self.diag[j];
            for k in self.t_row_ptr[j]..self.t_row_ptr[j + 1] {
                s += mu[self.t_cols[k]] * self.t_vals[k];
            }
            *o = s;
        });
    }

    /// `|mu L + lambda mu|_1`.
    pub fn residual(&self, mu: &[f64], lambda: f64) -> f64 {
        let mut buf = vec![0.0; mu.len()];
        self.left_mul(mu, &mut buf);
        buf.iter().zip(mu).map(|(a, m)| (a + lambda * m).abs()).sum()
    }
}

pub fn build_killed_generator(spec: &ModelSpec, index: &StateIndex) -> Result<KilledGenerator> {
    let d = spec.dim();
    let ne = spec.num_envs();
    if index.sizes().len() != d || index.num_envs() != ne {
        return Err(Error::Domain("state index does not match the model".into()));
    }
    let sizes = index.sizes();
    let m = index.len();
    let rows: Vec<(f64, f64, Vec<(usize, f64)>)> = (0..m)
        .into_par_iter()
        .map_init(
            || (vec![0usize; d], vec![0.0; d], vec![0.0; 2 * d]),
            |(counts, x, rates), i| {
                let env = index.state_into(i, counts);
                spec.fill_epidemic_rates(sizes, counts, env, x, rates);
                let mut entries = Vec::with_capacity(2 * d + ne);
                let mut out = 0.0;
                let mut flux = 0.0;
                for g in 0..d {
                    let up = rates[g];
                    if up > 0.0 {
                        counts[g] += 1;
                        entries.push((index.index(counts, env).unwrap_or(usize::MAX), up));
                        counts[g] -= 1;
                        out += up;
                    }
                    let down = rates[d + g];
                    if down > 0.0 {
                        counts[g] -= 1;
                        match index.index(counts, env) {
                            Some(j) => entries.push((j, down)),
                            None => flux += down,
                        }
                        counts[g] += 1;
                        out += down;
                    }
                }
                for to in 0..ne {
                    let q = spec.switch_rate(x, env, to);
                    if q > 0.0 {
                        entries.push((i - env + to, q));
                        out += q;
                    }
                }
                entries.sort_by_key(|e| e.0);
                (-out, flux, entries)
            },
        )
        .collect();

    let mut diag = Vec::with_capacity(m);
    let mut flux = Vec::with_capacity(m);
    let mut row_ptr = Vec::with_capacity(m + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for (dg, fl, entries) in rows {
        diag.push(dg);
        flux.push(fl);
        for (j, v) in entries {
            cols.push(j);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    // transpose
    let mut counts = vec![0usize; m + 1];
    for &c in &cols {
        counts[c + 1] += 1;
    }
    for j in 0..m {
        counts[j + 1] += counts[j];
    }
    let t_row_ptr = counts.clone();
    let mut fill = counts;
    let mut t_cols = vec![0; cols.len()];
    let mut t_vals = vec![0.0; cols.len()];
    for i in 0..m {
        for k in row_ptr[i]..row_ptr[i + 1] {
            let j = cols[k];
            t_cols[fill[j]] = i;
            t_vals[fill[j]] = vals[k];
            fill[j] += 1;
        }
    }
    let gamma = diag.iter().fold(0.0_f64, |g, v| g.max(v.abs()));
    if !flux.iter().any(|&f| f > 0.0) {
        return Err(Error::InvalidModel("extinction is not accessible from any state".into()));
    }
    Ok(KilledGenerator {
        diag,
        row_ptr,
        cols,
        vals,
        t_row_ptr,
        t_cols,
        t_vals,
        flux,
        gamma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QsdMethod {
    /// Inverse iteration with a banded LU factorization of `-L^T`.
    InverseIteration,
    /// Power iteration on the uniformized matrix `I + L / gamma`.
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QsdOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub method: QsdMethod,
}

impl Default for QsdOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1000,
            method: QsdMethod::InverseIteration,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QsdResult {
    pub weights: Vec<f64>,
    /// Extinction rate from the QSD.
    pub lambda: f64,
    /// `|mu L + lambda mu|_1`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: QsdMethod,
}

/// Banded LU without pivoting. Valid for column diagonally dominant
/// matrices, which `-L^T` is.
struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    // row i holds columns i-kl ..= i+ku
    a: Vec<f64>,
}

impl BandLu {
    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    fn at(&self, i: usize, j: usize) -> usize {
        i * self.width() + (j + self.kl - i)
    }

    /// Factor `A = -L^T`.
    fn factor(gen: &KilledGenerator, bw: usize) -> Result<Self> {
        let n = gen.len();
        let mut lu = BandLu {
            n,
            kl: bw,
            ku: bw,
            a: vec![0.0; n * (2 * bw + 1)],
        };
        for i in 0..n {
            let p = lu.at(i, i);
            lu.a[p] = -gen.diag[i];
            for (j, v) in gen.row(i) {
                // A[j][i] = -L[i][j]
                let p = lu.at(j, i);
                lu.a[p] = -v;
            }
        }
        for k in 0..n {
            let pivot = lu.a[lu.at(k, k)];
            if !(pivot.abs() > 0.0) {
                return Err(Error::Numerical(format!("zero pivot at row {k}")));
            }
            let i_end = (k + lu.kl + 1).min(n);
            let j_end = (k + lu.ku + 1).min(n);
            for i in k + 1..i_end {
                let pik = lu.at(i, k);
                if lu.a[pik] == 0.0 {
                    continue;
                }
                let l = lu.a[pik] / pivot;
                lu.a[pik] = l;
                for j in k + 1..j_end {
                    let pkj = lu.at(k, j);
                    let pij = lu.at(i, j);
                    lu.a[pij] -= l * lu.a[pkj];
                }
            }
        }
        Ok(lu)
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let lo = i.saturating_sub(self.kl);
            let mut s = b[i];
            for j in lo..i {
                s -= self.a[self.at(i, j)] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + self.ku + 1).min(n);
            let mut s = b[i];
            for j in i + 1..hi {
                s -= self.a[self.at(i, j)] * b[j];
            }
            b[i] = s / self.a[self.at(i, i)];
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let s: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= s;
    }
    s
}

fn flux_rate(gen: &KilledGenerator, mu: &[f64]) -> f64 {
    mu.iter().zip(&gen.flux).map(|(m, f)| m * f).sum()
}

/// QSD and extinction rate of the chain with group sizes `sizes`.
pub fn compute_qsd(spec: &ModelSpec, sizes: &[usize], opts: &QsdOptions) -> Result<(StateIndex, QsdResult)> {
    let index = enumerate_states(spec, sizes)?;
    let gen = build_killed_generator(spec, &index)?;
    let result = qsd_from_generator(&gen, &index, opts)?;
    Ok((index, result))
}

pub fn qsd_from_generator(gen: &KilledGenerator, index: &StateIndex, opts: &QsdOptions) -> Result<QsdResult> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Domain("tolerance and iteration budget must be positive".into()));
    }
    let bw = index.bandwidth();
    let band_ok = gen.len().saturating_mul(2 * bw + 1) <= BAND_STORAGE_CAP;
    match opts.method {
        QsdMethod::InverseIteration if band_ok => inverse_iteration(gen, bw, opts),
        _ => power_iteration(gen, opts),
    }
}

fn inverse_iteration(gen: &KilledGenerator, bw: usize, opts: &QsdOptions) -> Result<QsdResult> {
    let n = gen.len();
    let lu = BandLu::factor(gen, bw)?;
    let mut mu = vec![1.0 / n as f64; n];
    let mut lambda = flux_rate(gen, &mu);
    let mut residual = gen.residual(&mu, lambda);
    let mut it = 0;
    let mut prev = f64::INFINITY;
    // past the tolerance, keep polishing while the residual still halves
    while it < opts.max_iter && (residual >= opts.tol || residual < 0.5 * prev) {
        prev = residual;
        lu.solve(&mut mu);
        for v in mu.iter_mut() {
            *v = v.max(0.0);
        }
        normalize(&mut mu);
        lambda = flux_rate(gen, &mu);
        residual = gen.residual(&mu, lambda);
        it += 1;
    }
    Ok(QsdResult {
        converged: residual < opts.tol,
        weights: mu,
        lambda,
        residual,
        iterations: it,
        method: QsdMethod::InverseIteration,
    })
}

fn power_iteration(gen: &KilledGenerator, opts: &QsdOptions) -> Result<QsdResult> {
    let n = gen.len();
    let gamma = gen.gamma;
    let mut mu = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut lambda = flux_rate(gen, &mu);
    let mut residual = gen.residual(&mu, lambda);
    let mut it = 0;
    while it < opts.max_iter && residual >= opts.tol {
        gen.left_mul(&mu, &mut next);
        for (nx, m) in next.iter_mut().zip(&mu) {
            *nx = (m + *nx / gamma).max(0.0);
        }
        let rho = normalize(&mut next);
        std::mem::swap(&mut mu, &mut next);
        lambda = gamma * (1.0 - rho);
        it += 1;
        if it % 16 == 0 || it == opts.max_iter {
            residual = gen.residual(&mu, lambda);
        }
    }
    // consistent final value with the residual actually reported
    let lambda_flux = flux_rate(gen, &mu);
    let res_flux = gen.residual(&mu, lambda_flux);
    if res_flux < residual {
        lambda = lambda_flux;
        residual = res_flux;
    }
    Ok(QsdResult {
        converged: residual < opts.tol,
        weights: mu,
        lambda,
        residual,
        iterations: it,
        method: QsdMethod::Power,
    })
}

impl QsdResult {
    pub fn write_csv<W: Write>(&self, index: &StateIndex, mut w: W) -> Result<()> {
        let d = index.sizes().len();
        let cols: Vec<String> = (1..=d).map(|i| format!("n_{i}")).collect();
        writeln!(w, "{},env,weight", cols.join(","))?;
        let mut counts = vec![0; d];
        for (i, wt) in self.weights.iter().enumerate() {
            let env = index.state_into(i, &mut counts);
            let ns: Vec<String> = counts.iter().map(|n| n.to_string()).collect();
            writeln!(w, "{},{env},{wt:e}", ns.join(","))?;
        }
        Ok(())
    }

    /// Draw a state from the QSD.
    pub fn sampler<'a>(&'a self, index: &'a StateIndex) -> QsdSampler<'a> {
        let mut acc = 0.0;
        let cumulative = self
            .weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        QsdSampler { index, cumulative }
    }
}

pub struct QsdSampler<'a> {
    index: &'a StateIndex,
    cumulative: Vec<f64>,
}

impl QsdSampler<'_> {
    pub fn sample(&self, rng: &mut SimRng) -> (Vec<usize>, usize) {
        let total = *self.cumulative.last().unwrap_or(&1.0);
        let u = rng.uniform() * total;
        let k = self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1);
        self.index.state(k)
    }
}

/// `int |x|^{-p} dmu`.
pub fn qsd_moment(result: &QsdResult, index: &StateIndex, p: f64) -> f64 {
    if p == 0.0 {
        return result.weights.iter().sum();
    }
    result
        .weights
        .iter()
        .enumerate()
        .map(|(i, w)| w * index.norm(i).powf(-p))
        .sum()
}

/// `mu{|x| < eps}`.
pub fn qsd_mass_below(result: &QsdResult, index: &StateIndex, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("threshold must be positive, got {eps}")));
    }
    Ok(result
        .weights
        .iter()
        .enumerate()
        .filter(|(i, _)| index.norm(*i) < eps)
        .fold(0.0, |acc, (_, w)| acc + w))
}

/// Histogram over `[0,1]^d x E` with `bins` cells per axis. Cell layout:
/// axis 1 most significant, environment fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub dim: usize,
    pub bins: usize,
    pub num_env: usize,
    pub mass: Vec<f64>,
}

impl Histogram {
    pub fn new(dim: usize, bins: usize, num_env: usize) -> Result<Self> {
        let cells = bins
            .checked_pow(dim as u32)
            .and_then(|c| c.checked_mul(num_env))
            .filter(|&c| c <= 50_000_000 && bins > 0)
            .ok_or_else(|| Error::Domain(format!("{bins}^{dim} histogram cells is too many")))?;
        Ok(Self {
            dim,
            bins,
            num_env,
            mass: vec![0.0; cells],
        })
    }

    pub fn cell(&self, x: &[f64], env: usize) -> usize {
        let mut c = 0;
        for &v in x {
            let b = ((v * self.bins as f64).floor().max(0.0) as usize).min(self.bins - 1);
            c = c * self.bins + b;
        }
        c * self.num_env + env
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn l1_distance(&self, other: &Histogram) -> Result<f64> {
        if self.mass.len() != other.mass.len() {
            return Err(Error::Domain("histograms have different layouts".into()));
        }
        Ok(self.mass.iter().zip(&other.mass).map(|(a, b)| (a - b).abs()).sum())
    }

    /// Mass within `radius` (sup norm) of `center`, counting whole cells
    /// whose midpoint lies in the ball.
    pub fn mass_near(&self, center: &[f64]) -> impl Fn(f64) -> f64 + '_ {
        let center = center.to_vec();
        move |radius| {
            let mut total = 0.0;
            for (c, m) in self.mass.iter().enumerate() {
                let mut cell = c / self.num_env;
                let mut inside = true;
                for axis in (0..self.dim).rev() {
                    let b = cell % self.bins;
                    cell /= self.bins;
                    let mid = (b as f64 + 0.5) / self.bins as f64;
                    inside &= (mid - center[axis]).abs() <= radius;
                }
                if inside {
                    total += m;
                }
            }
            total
        }
    }
}

/// Bin a QSD on the histogram layout of [`pdmp_stationary_estimate`].
pub fn qsd_histogram(result: &QsdResult, index: &StateIndex, bins: usize) -> Result<Histogram> {
    let d = index.sizes().len();
    let mut h = Histogram::new(d, bins, index.num_envs())?;
    let mut counts = vec![0; d];
    let mut x = vec![0.0; d];
    for (i, w) in result.weights.iter().enumerate() {
        let env = index.state_into(i, &mut counts);
        for g in 0..d {
            x[g] = counts[g] as f64 / index.sizes()[g] as f64;
        }
        let c = h.cell(&x, env);
        h.mass[c] += w;
    }
    Ok(h)
}

/// Occupation measure of one long PDMP path from `x0`, sampled on a
/// uniform grid after `burn_in`.
pub fn pdmp_stationary_estimate(
    spec: &ModelSpec,
    x0: &[f64],
    horizon: f64,
    burn_in: f64,
    output_dt: f64,
    bins: usize,
    rng: RngStream,
) -> Result<Histogram> {
    if !(horizon > burn_in) || burn_in < 0.0 {
        return Err(Error::Domain("need horizon > burn-in >= 0".into()));
    }
    if x0.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Domain("start from a nonzero state".into()));
    }
    let mut h = Histogram::new(spec.dim(), bins, spec.num_envs())?;
    let path = simulate_pdmp(spec, x0, 0, horizon, output_dt, rng)?;
    let grid = output_grid(horizon, output_dt);
    debug_assert_eq!(grid.len(), path.times.len());
    let mut n = 0usize;
    for k in 0..path.times.len() {
        if path.times[k] >= burn_in {
            let c = h.cell(&path.states[k], path.envs[k]);
            h.mass[c] += 1.0;
            n += 1;
        }
    }
    for m in h.mass.iter_mut() {
        *m /= n as f64;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn logistic() -> ModelSpec {
        ModelSpec::scalar(&[2.0], 1.0, Matrix::zeros(1)).unwrap()
    }

    #[test]
    fn state_counts() {
        assert_eq!(StateIndex::new(&[3], 2, DEFAULT_STATE_CAP).unwrap().len(), 6);
        assert_eq!(StateIndex::new(&[1, 1], 2, DEFAULT_STATE_CAP).unwrap().len(), 6);
        assert_eq!(StateIndex::new(&[3200], 2, DEFAULT_STATE_CAP).unwrap().len(), 6400);
        assert!(matches!(
            StateIndex::new(&[3200], 2, 100),
            Err(Error::StateSpaceTooLarge { states: 6400, cap: 100 })
        ));
    }

    #[test]
    fn index_round_trip() {
        let idx = StateIndex::new(&[3, 2], 3, DEFAULT_STATE_CAP).unwrap();
        for i in 0..idx.len() {
            let (c, e) = idx.state(i);
            assert_eq!(idx.index(&c, e), Some(i));
        }
        assert_eq!(idx.index(&[0, 0], 0), None);
    }

    #[test]
    fn two_state_generator() {
        let spec = logistic();
        let idx = enumerate_states(&spec, &[2]).unwrap();
        let gen = build_killed_generator(&spec, &idx).unwrap();
        assert_eq!(gen.get(0, 0), -2.0);
        assert_eq!(gen.get(0, 1), 1.0);
        assert_eq!(gen.get(1, 0), 2.0);
        assert_eq!(gen.get(1, 1), -2.0);
        assert_eq!(gen.flux, vec![1.0, 0.0]);
    }

    #[test]
    fn two_state_qsd() {
        let (idx, r) = compute_qsd(&logistic(), &[2], &QsdOptions::default()).unwrap();
        let s2 = 2f64.sqrt();
        assert!((r.lambda - (2.0 - s2)).abs() < 1e-12);
        assert!((r.weights[0] - (2.0 - s2)).abs() < 1e-12);
        assert!((r.weights[1] - (s2 - 1.0)).abs() < 1e-12);
        assert!((qsd_moment(&r, &idx, 1.0) - (2.0 * (2.0 - s2) + s2 - 1.0)).abs() < 1e-12);
        assert!((qsd_moment(&r, &idx, 0.0) - 1.0).abs() < 1e-12);
        assert!((qsd_mass_below(&r, &idx, 1.5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_and_inverse_agree() {
        let spec = ModelSpec::scalar(&[3.0, 0.5], 1.0, Matrix::from_array([[-1.0, 1.0], [1.0, -1.0]])).unwrap();
        let (_, a) = compute_qsd(&spec, &[20], &QsdOptions::default()).unwrap();
        let opts = QsdOptions {
            method: QsdMethod::Power,
            max_iter: 1_000_000,
            ..QsdOptions::default()
        };
        let (_, b) = compute_qsd(&spec, &[20], &opts).unwrap();
        assert!(a.converged && b.converged);
        assert!((a.lambda - b.lambda).abs() < 1e-9 * a.lambda.max(1e-3));
    }

    #[test]
    fn generator_rows_conserve_rate() {
        let spec = ModelSpec::lajmanovich_yorke(
            vec![0.5, 0.5],
            vec![
                Matrix::from_array([[0.0, 2.0], [2.0, 0.0]]),
                Matrix::from_array([[0.5, 0.0], [0.1, 0.5]]),
            ],
            vec![vec![1.0, 1.0], vec![1.0, 2.0]],
            Matrix::from_array([[-1.0, 1.0], [2.0, -2.0]]),
        )
        .unwrap();
        let idx = enumerate_states(&spec, &[3, 4]).unwrap();
        let gen = build_killed_generator(&spec, &idx).unwrap();
        for i in 0..gen.len() {
            let s: f64 = gen.diag[i] + gen.row(i).map(|(_, v)| v).sum::<f64>() + gen.flux[i];
            assert!(s.abs() < 1e-12);
        }
        let (c, e) = (vec![3, 4], 1);
        let full = idx.index(&c, e).unwrap();
        assert!(gen.row(full).all(|(j, _)| {
            let (cj, _) = idx.state(j);
            cj[0] <= 3 && cj[1] <= 4
        }));
        let r = qsd_from_generator(&gen, &idx, &QsdOptions::default()).unwrap();
        assert!(r.residual < 1e-10);
    }

    #[test]
    fn histogram_cells() {
        let h = Histogram::new(1, 50, 2).unwrap();
        assert_eq!(h.cell(&[1.0], 1), 99);
        assert_eq!(h.cell(&[0.0], 0), 0);
        assert_eq!(h.cell(&[0.5], 0), 50);
    }
}
