//! Grid operators: Riemann-Liouville integrals by product integration, the
//! Hilfer derivative, and the weighted sup-norms of `C_{1-γ}` / `PC_{1-γ}`.
//!
//! Every integral here is of the form
//! `∫_base^{t_i} (t_i - s)^{q-1} (s - base)^p φ(s) ds` with `φ` the
//! piecewise-linear interpolant of the samples. The power factors are
//! integrated exactly (closed forms or incomplete beta functions) so the
//! endpoint singularities never meet a quadrature node; only panels away
//! from both singular points fall back to Gauss-Legendre.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::quad;
use crate::specfun::{self, gamma, incomplete_beta};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FracError {
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, FracError>;

fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(FracError::Domain(msg.into()))
}

/// A vector-valued function sampled on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFn {
    pub grid: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl SampledFn {
    pub fn new(grid: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if grid.is_empty() {
            return domain("empty grid");
        }
        if grid.len() != values.len() {
            return domain(format!("grid has {} nodes but {} values", grid.len(), values.len()));
        }
        if !(grid[0] >= 0.0) {
            return domain(format!("grid starts at {} < 0", grid[0]));
        }
        if let Some(w) = grid.windows(2).find(|w| !(w[1] > w[0])) {
            return domain(format!("grid not strictly increasing at {} -> {}", w[0], w[1]));
        }
        let d = values[0].len();
        if d == 0 || values.iter().any(|v| v.len() != d) {
            return domain("values must share a positive dimension");
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Vec<f64>, f: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        let values = grid.iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn scalar(grid: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_fn(grid, |t| DVector::from_element(1, f(t)))
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[c]).collect()
    }

    fn with_values(&self, values: Vec<DVector<f64>>) -> Self {
        Self {
            grid: self.grid.clone(),
            values,
        }
    }
}

/// Uniform grid of `n + 1` nodes on `[a, b]`.
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    let h = (b - a) / n as f64;
    (0..=n).map(|j| if j == n { b } else { a + j as f64 * h }).collect()
}

/// Weights for `∫ (T-s)^{q-1} (s-base)^p ℓ(s) ds` over one panel `[a, b]`,
/// where `ℓ` is linear with value 1 at `a` (first weight) or at `b`
/// (second weight).
fn panel_weights(a: f64, b: f64, t: f64, base: f64, q: f64, p: f64) -> (f64, f64) {
    let h = b - a;
    if p == 0.0 {
        let da = t - a;
        let db = t - b;
        let m0 = (da.powf(q) - db.powf(q)) / q;
        let m1 = (da.powf(q + 1.0) - db.powf(q + 1.0)) / (q + 1.0);
        return ((m1 - db * m0) / h, (da * m0 - m1) / h);
    }
    let ax = a - base;
    let tx = t - base;
    if ax == 0.0 && b == t {
        let i0 = specfun::beta(p + 1.0, q + 1.0) * tx.powf(q + p);
        let i1 = specfun::beta(p + 2.0, q) * tx.powf(q + p);
        return (i0, i1);
    }
    if ax == 0.0 {
        // x = T u; the (s-base)^p singularity sits in the incomplete beta.
        let r = h / tx;
        let i0 = tx.powf(q + p) * incomplete_beta(r, p + 1.0, q);
        let i1 = tx.powf(q + p + 1.0) * incomplete_beta(r, p + 2.0, q);
        return (i0 - i1 / h, i1 / h);
    }
    if b == t {
        // y = T - s; the kernel singularity sits in the incomplete beta.
        let r = h / tx;
        let ia = tx.powf(q + p) * incomplete_beta(r, q, p + 1.0);
        let ib = tx.powf(q + p + 1.0) * incomplete_beta(r, q + 1.0, p + 1.0);
        return (ib / h, ia - ib / h);
    }
    let ratio = (ax / h).min((t - b) / h);
    let rule = if ratio < 2.0 {
        quad::gl10()
    } else if ratio < 4.0 {
        quad::gl8()
    } else if ratio < 16.0 {
        quad::gl6()
    } else {
        quad::gl4()
    };
    let mut wa = 0.0;
    let mut wb = 0.0;
    let half = 0.5 * h;
    let mid = 0.5 * (a + b);
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        let s = mid + half * x;
        let k = w * half * (t - s).powf(q - 1.0) * (s - base).powf(p);
        wa += k * (b - s) / h;
        wb += k * (s - a) / h;
    }
    (wa, wb)
}

/// Product-integration weights `w_j` (no `1/Γ(q)` factor) such that
/// `∫_base^{grid[i]} (grid[i]-s)^{q-1} (s-base)^p φ(s) ds ≈ Σ_{j≤i} w_j φ(grid[j])`
/// for `φ` piecewise linear on the grid and constant on `[base, grid[0]]`.
pub fn product_weights(grid: &[f64], base: f64, i: usize, q: f64, p: f64) -> Vec<f64> {
    let t = grid[i];
    let mut w = vec![0.0; i + 1];
    if grid[0] > base {
        let g0 = grid[0];
        w[0] += if p == 0.0 {
            ((t - base).powf(q) - (t - g0).powf(q)) / q
        } else {
            let tx = t - base;
            tx.powf(q + p) * incomplete_beta((g0 - base) / tx, p + 1.0, q)
        };
    }
    if p == 0.0 {
        // One power per node instead of four per panel.
        let dq: Vec<f64> = grid[..=i].iter().map(|s| (t - s).powf(q)).collect();
        for j in 0..i {
            let (da, db) = (t - grid[j], t - grid[j + 1]);
            let (wa, wb) = p0_weights(da, db, dq[j], dq[j + 1], grid[j + 1] - grid[j], q);
            w[j] += wa;
            w[j + 1] += wb;
        }
        return w;
    }
    for j in 0..i {
        let (wa, wb) = panel_weights(grid[j], grid[j + 1], t, base, q, p);
        w[j] += wa;
        w[j + 1] += wb;
    }
    w
}

#[inline]
fn p0_weights(da: f64, db: f64, da_q: f64, db_q: f64, h: f64, q: f64) -> (f64, f64) {
    let m0 = (da_q - db_q) / q;
    let m1 = (da * da_q - db * db_q) / (q + 1.0);
    ((m1 - db * m0) / h, (da * m0 - m1) / h)
}

/// Grid spacing if the grid is uniform to rounding, else `None`.
pub fn uniform_step(grid: &[f64]) -> Option<f64> {
    if grid.len() < 2 {
        return None;
    }
    let h = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    let tol = 1e-12 * grid[grid.len() - 1].abs().max(h);
    grid.iter()
        .enumerate()
        .all(|(j, x)| (x - (grid[0] + j as f64 * h)).abs() <= tol)
        .then_some(h)
}

/// Weights for a uniform grid starting at the base: they depend only on the
/// lag `i - j`, so `lag_weights[k]` serves every target. Returns
/// `(first, lag)` with `w_{i0} = first[i]` and `w_{ij} = lag[i - j]` for `j ≥ 1`.
pub fn uniform_p0_weights(n: usize, h: f64, q: f64) -> (Vec<f64>, Vec<f64>) {
    let dq: Vec<f64> = (0..=n).map(|k| (k as f64 * h).powf(q)).collect();
    // Panel [j, j+1] seen from target i has da = (i-j)h, db = (i-j-1)h.
    let panel = |m: usize| p0_weights(m as f64 * h, (m - 1) as f64 * h, dq[m], dq[m - 1], h, q);
    let mut lag = vec![0.0; n + 1];
    let mut first = vec![0.0; n + 1];
    for k in 1..=n {
        // Node at lag k is the left end of the panel with da = kh and the
        // right end of the panel with da = (k+1)h.
        let left = panel(k).0;
        let right = if k < n { panel(k + 1).1 } else { 0.0 };
        lag[k] = left + right;
        first[k] = left;
    }
    lag[0] = 0.0;
    if n >= 1 {
        lag[0] = panel(1).1;
    }
    (first, lag)
}

/// Lower-triangular table of [`product_weights`] for every target node.
#[derive(Debug, Clone)]
pub struct WeightTable {
    pub rows: Vec<Vec<f64>>,
}

impl WeightTable {
    pub fn new(grid: &[f64], base: f64, q: f64, p: f64) -> Self {
        let rows = (0..grid.len()).map(|i| product_weights(grid, base, i, q, p)).collect();
        Self { rows }
    }

    pub fn apply(&self, i: usize, values: &[DVector<f64>]) -> DVector<f64> {
        let mut acc = DVector::zeros(values[0].len());
        for (w, v) in self.rows[i].iter().zip(values) {
            acc.axpy(*w, v, 1.0);
        }
        acc
    }
}

fn check_order(order: f64) -> Result<()> {
    if !(order > 0.0) || !order.is_finite() {
        return domain(format!("fractional order must be positive, got {order}"));
    }
    Ok(())
}

/// `I^order f` on the grid of `f`, integral taken from `base`.
pub fn rl_integral(order: f64, f: &SampledFn, base: f64) -> Result<SampledFn> {
    rl_integral_weighted(order, 0.0, f, base, None)
}

/// `I^order[(s-base)^p h(s)]` on the grid of `h`.
///
/// With `fit = Some(exponents)`, `h` is first fitted near `base` by
/// `Σ c_k (s-base)^{e_k}` through its first samples; that part is integrated
/// in closed form and only the remainder (which vanishes at `base`) goes
/// through product integration. This restores accuracy for data with
/// fractional-power behaviour at the origin.
pub fn rl_integral_weighted(order: f64, p: f64, h: &SampledFn, base: f64, fit: Option<&[f64]>) -> Result<SampledFn> {
    check_order(order)?;
    if h.is_empty() {
        return domain("empty grid");
    }
    if base > h.grid[0] {
        return domain(format!("base {base} lies after the first node {}", h.grid[0]));
    }
    if !(p > -1.0) {
        return domain(format!("weight exponent must exceed -1, got {p}"));
    }
    let inv_g = 1.0 / gamma(order).map_err(|e| FracError::Domain(e.to_string()))?;
    if p == 0.0 && fit.is_none() && h.grid[0] == base {
        if let Some(step) = uniform_step(&h.grid) {
            let n = h.len() - 1;
            let (first, lag) = uniform_p0_weights(n, step, order);
            let mut values = vec![DVector::zeros(h.dim())];
            for i in 1..=n {
                let mut acc = &h.values[0] * first[i];
                for j in 1..=i {
                    acc.axpy(lag[i - j], &h.values[j], 1.0);
                }
                values.push(acc * inv_g);
            }
            return Ok(h.with_values(values));
        }
    }
    let Some(exps) = fit else {
        let values = (0..h.len())
            .map(|i| {
                let w = product_weights(&h.grid, base, i, order, p);
                let mut acc = DVector::zeros(h.dim());
                for (wj, v) in w.iter().zip(&h.values) {
                    acc.axpy(*wj, v, 1.0);
                }
                acc * inv_g
            })
            .collect();
        return Ok(h.with_values(values));
    };

    let coeffs = fit_expansion(h, base, exps)?;
    // Remainder on a grid that starts exactly at base, where it is zero.
    let mut grid = Vec::with_capacity(h.len() + 1);
    let mut rem = Vec::with_capacity(h.len() + 1);
    let offset = usize::from(h.grid[0] > base);
    if offset == 1 {
        grid.push(base);
        rem.push(DVector::zeros(h.dim()));
    }
    for (t, v) in h.grid.iter().zip(&h.values) {
        grid.push(*t);
        if *t == base {
            rem.push(DVector::zeros(h.dim()));
        } else {
            rem.push(v - eval_expansion(&coeffs, exps, t - base));
        }
    }
    let mut values = Vec::with_capacity(h.len());
    for i in offset..grid.len() {
        let t = grid[i];
        let w = product_weights(&grid, base, i, order, p);
        let mut acc = DVector::zeros(h.dim());
        for (wj, v) in w.iter().zip(&rem) {
            acc.axpy(*wj, v, 1.0);
        }
        acc *= inv_g;
        let x = t - base;
        for (c, e) in coeffs.iter().zip(exps) {
            let pe = p + e;
            let factor = specfun::rgamma(pe + 1.0 + order) * gamma(pe + 1.0).map_err(|e| FracError::Domain(e.to_string()))?;
            acc.axpy(factor * x.powf(pe + order), c, 1.0);
        }
        values.push(acc);
    }
    Ok(h.with_values(values))
}

/// Starting weights: per-row corrections at the first nodes that make a
/// product rule exact for `(s-base)^e`, `e` in a given exponent set. Holds
/// LU factors of `V_{kj} = j^{e_k}` for every leading size.
pub struct StartingWeights {
    exps: Vec<f64>,
    lus: Vec<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    /// Drop the node at the base (its value is unknown).
    skip_base: bool,
}

impl StartingWeights {
    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn new(exps: Vec<f64>, skip_base: bool) -> Self {
        let lus = (1..=exps.len())
            .map(|n| DMatrix::from_fn(n, n, |k, j| ((j + 1) as f64).powf(exps[k])).lu())
            .collect();
        Self { exps, lus, skip_base }
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    /// Adds starting weights to row `i` of the rule for
    /// `(t-s)^{q-1}(s-base)^p` on uniform nodes `base + j h`. Only nodes
    /// up to `i` are used, so short rows are exact for a prefix of the
    /// exponents.
    pub fn correct(&self, w: &mut [f64], i: usize, h: f64, q: f64, p: f64) {
        self.correct_n(w, i, i.min(self.len()), h, q, p);
    }

    /// Like [`correct`](Self::correct) but always uses the first `len()`
    /// nodes, reaching past `i` on short rows; `w` is extended as needed.
    pub fn correct_ahead(&self, w: &mut Vec<f64>, i: usize, h: f64, q: f64, p: f64) {
        if w.len() <= self.len() {
            w.resize(self.len() + 1, 0.0);
        }
        self.correct_n(w, i, self.len(), h, q, p);
    }

    fn correct_n(&self, w: &mut [f64], i: usize, n: usize, h: f64, q: f64, p: f64) {
        if self.skip_base {
            w[0] = 0.0;
        }
        if n == 0 {
            return;
        }
        let t = i as f64 * h;
        let rhs = DVector::from_iterator(
            n,
            self.exps[..n].iter().map(|&e| {
                let exact = t.powf(q + p + e) * specfun::beta(p + e + 1.0, q);
                let at_base = if e == 0.0 { w[0] } else { 0.0 };
                let rule: f64 = at_base + (1..w.len()).map(|j| w[j] * (j as f64 * h).powf(e)).sum::<f64>();
                (exact - rule) / h.powf(e)
            }),
        );
        if let Some(omega) = self.lus[n - 1].solve(&rhs) {
            for j in 1..=n {
                w[j] += omega[j - 1];
            }
        }
    }
}

/// `I^order[(s-base)^p h(s)]` at the nodes of a uniform grid `base + j·step`,
/// `j ≥ 1` (the value at `base` is not needed). Product weights for
/// piecewise-linear `h` plus starting weights for the exponents `exps`.
pub fn rl_integral_corrected(order: f64, p: f64, h: &SampledFn, base: f64, exps: &[f64]) -> Result<SampledFn> {
    check_order(order)?;
    if !(p > -1.0) {
        return domain(format!("weight exponent must exceed -1, got {p}"));
    }
    let n = h.len();
    let step = (h.grid[n - 1] - base) / n as f64;
    let mut grid = Vec::with_capacity(n + 1);
    grid.push(base);
    grid.extend_from_slice(&h.grid);
    if n <= exps.len() || uniform_step(&grid).is_none() || !(step > 0.0) {
        return domain("corrected integral needs a uniform grid starting one step after the base");
    }
    let inv_g = 1.0 / gamma(order).map_err(|e| FracError::Domain(e.to_string()))?;
    let st = StartingWeights::new(exps.to_vec(), true);
    let values = (1..=n)
        .map(|i| {
            let mut w = product_weights(&grid, base, i, order, p);
            st.correct_ahead(&mut w, i, step, order, p);
            let mut acc = DVector::zeros(h.dim());
            for j in 1..w.len() {
                acc.axpy(w[j], &h.values[j - 1], 1.0);
            }
            acc * inv_g
        })
        .collect();
    Ok(h.with_values(values))
}

/// Exponents `αk`, `k = 0..K`, `K = ceil(2/α) - 1` capped at 6: enough
/// terms of a power series in `s^α` to reach order `s^2`.
pub fn expansion_exponents(alpha: f64) -> Vec<f64> {
    let k = ((2.0 / alpha).ceil() as usize).saturating_sub(1).clamp(1, 6);
    (0..=k).map(|j| alpha * j as f64).collect()
}

/// Smallest spacing kept between two exponents of a fit or correction set.
const EXPONENT_GAP: f64 = 0.05;
/// Number of starting-weight exponents. More exponents make the correction
/// weights grow quickly and destroy the contraction of the discrete map.
const MAX_STARTING: usize = 3;
/// Largest number of exponents in a singular expansion fit.
const MAX_FIT: usize = 8;

/// Exponents `αk` and `1-γ+αk` below 2, ascending.
fn singular_candidates(alpha: f64, gamma: f64) -> Vec<f64> {
    let mut cand = Vec::new();
    for shift in [0.0, 1.0 - gamma] {
        let mut k = 0;
        loop {
            let e = shift + alpha * k as f64;
            if e >= 2.0 - 1e-9 {
                break;
            }
            cand.push(e);
            k += 1;
        }
    }
    cand.sort_by(f64::total_cmp);
    cand
}

fn thin(mut out: Vec<f64>, cand: Vec<f64>, cap: usize) -> Vec<f64> {
    for e in cand {
        if out.len() >= cap {
            break;
        }
        if out.iter().all(|k| (e - k).abs() >= EXPONENT_GAP) {
            out.push(e);
        }
    }
    out
}

/// Exponents for starting-weight corrections of data derived from a
/// solution with a `t^{γ-1}` singularity: `0` and `1` first (whose
/// exactness the corrections must preserve; short rows use a prefix), then
/// the smallest remaining member of `αk`, `1-γ+αk`.
pub fn starting_exponents(alpha: f64, gamma: f64) -> Vec<f64> {
    thin(vec![0.0, 1.0], singular_candidates(alpha, gamma), MAX_STARTING)
}

/// Exponents for fitting `s^{1-γ}(f - Au)` near the origin: the ascending
/// members of `αk` and `1-γ+αk` below 2, thinned and capped.
pub fn singular_exponents(alpha: f64, gamma: f64) -> Vec<f64> {
    thin(vec![0.0, 1.0], singular_candidates(alpha, gamma), MAX_FIT)
}

/// Interpolates `h` at its first `exps.len()` nodes strictly after `base`
/// with the basis `(s-base)^{e_k}`; returns one coefficient vector per
/// exponent.
pub fn fit_expansion(h: &SampledFn, base: f64, exps: &[f64]) -> Result<Vec<DVector<f64>>> {
    let nodes: Vec<usize> = (0..h.len()).filter(|&i| h.grid[i] > base).take(exps.len()).collect();
    if nodes.len() < exps.len() {
        return domain(format!("need {} nodes after base for the expansion fit", exps.len()));
    }
    let n = exps.len();
    let v = DMatrix::from_fn(n, n, |r, c| (h.grid[nodes[r]] - base).powf(exps[c]));
    let lu = v.lu();
    let d = h.dim();
    let mut coeffs = vec![DVector::zeros(d); n];
    for comp in 0..d {
        let rhs = DVector::from_iterator(n, nodes.iter().map(|&i| h.values[i][comp]));
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| FracError::Domain("singular expansion fit".into()))?;
        for k in 0..n {
            coeffs[k][comp] = sol[k];
        }
    }
    Ok(coeffs)
}

pub fn eval_expansion(coeffs: &[DVector<f64>], exps: &[f64], x: f64) -> DVector<f64> {
    let mut acc = DVector::zeros(coeffs[0].len());
    for (c, e) in coeffs.iter().zip(exps) {
        acc.axpy(x.powf(*e), c, 1.0);
    }
    acc
}

/// Derivative weights at `at` of the quadratic through three nodes.
fn lagrange_deriv(x: [f64; 3], at: f64) -> [f64; 3] {
    let [x0, x1, x2] = x;
    [
        ((at - x1) + (at - x2)) / ((x0 - x1) * (x0 - x2)),
        ((at - x0) + (at - x2)) / ((x1 - x0) * (x1 - x2)),
        ((at - x0) + (at - x1)) / ((x2 - x0) * (x2 - x1)),
    ]
}

/// Second-order finite-difference derivative on a (possibly non-uniform)
/// grid; one-sided three-point stencils at the ends.
pub fn differentiate(f: &SampledFn) -> Result<SampledFn> {
    let n = f.len();
    if n < 3 {
        return domain(format!("differentiation needs at least 3 nodes, got {n}"));
    }
    let g = &f.grid;
    let values = (0..n)
        .map(|i| {
            let s = i.clamp(1, n - 2) - 1;
            let c = lagrange_deriv([g[s], g[s + 1], g[s + 2]], g[i]);
            &f.values[s] * c[0] + &f.values[s + 1] * c[1] + &f.values[s + 2] * c[2]
        })
        .collect();
    Ok(f.with_values(values))
}

fn check_hilfer(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return domain(format!("alpha must lie in (0,1], got {alpha}"));
    }
    if !(0.0..=1.0).contains(&beta) {
        return domain(format!("beta must lie in [0,1], got {beta}"));
    }
    Ok(())
}

/// `D^{α,β} f = I^{β(1-α)} d/dt I^{(1-β)(1-α)} f`, integrals based at `grid[0]`.
pub fn hilfer_derivative(alpha: f64, beta: f64, f: &SampledFn) -> Result<SampledFn> {
    hilfer_derivative_weighted(alpha, beta, 0.0, f)
}

/// Hilfer derivative of `f(t) = (t - grid[0])^p h(t)`, given the samples of
/// `h`. Lets singular members of `C_{1-γ}` (take `p = γ - 1`) be passed as
/// bounded data. When `p < 0` the inner integral at the base node is taken
/// as its quadratic extrapolation from the next three nodes.
pub fn hilfer_derivative_weighted(alpha: f64, beta: f64, p: f64, h: &SampledFn) -> Result<SampledFn> {
    check_hilfer(alpha, beta)?;
    if h.len() < 3 {
        return domain(format!("hilfer_derivative needs at least 3 nodes, got {}", h.len()));
    }
    let base = h.grid[0];
    let inner_order = (1.0 - beta) * (1.0 - alpha);
    let outer_order = beta * (1.0 - alpha);
    let mut inner = if inner_order > 0.0 {
        rl_integral_weighted(inner_order, p, h, base, None)?
    } else {
        let values = h
            .grid
            .iter()
            .zip(&h.values)
            .map(|(t, v)| if p == 0.0 { v.clone() } else { v * (t - base).powf(p) })
            .collect();
        h.with_values(values)
    };
    if p < 0.0 && inner.len() >= 4 {
        let g = &inner.grid;
        let x = [g[1], g[2], g[3]];
        let l = |k: usize| {
            let others: Vec<usize> = (0..3).filter(|&m| m != k).collect();
            others
                .iter()
                .map(|&m| (g[0] - x[m]) / (x[k] - x[m]))
                .product::<f64>()
        };
        inner.values[0] = &inner.values[1] * l(0) + &inner.values[2] * l(1) + &inner.values[3] * l(2);
    }
    let d = differentiate(&inner)?;
    if outer_order > 0.0 {
        rl_integral(outer_order, &d, base)
    } else {
        Ok(d)
    }
}

/// `max_i ‖(t_i - origin)^{1-γ} u(t_i)‖₂`. Nodes at the origin carry weight
/// zero when `γ < 1`.
pub fn weighted_norm(f: &SampledFn, gamma: f64, origin: f64) -> Result<f64> {
    if f.is_empty() {
        return domain("empty grid");
    }
    if origin > f.grid[0] {
        return domain(format!("origin {origin} lies after the first node {}", f.grid[0]));
    }
    let e = 1.0 - gamma;
    let mut best = 0.0_f64;
    for (t, v) in f.grid.iter().zip(&f.values) {
        let w = if e == 0.0 { 1.0 } else { (t - origin).powf(e) };
        if w == 0.0 {
            continue;
        }
        best = best.max(w * v.norm());
    }
    Ok(best)
}

/// What a trajectory segment represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    /// `[0, t_1]`: evolution from the initial datum.
    Initial,
    /// `(t_k, s_k]`: the impulse `u = ζ_k(t, u)` is active.
    Impulse(usize),
    /// `(s_k, t_{k+1}]`: evolution restarted from the impulse state at `s_k`.
    Evolution(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub left: f64,
    pub right: f64,
    pub samples: SampledFn,
}

/// Piecewise trajectory on the impulse partition. Weights in the norm are
/// measured from each segment's left breakpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseTrajectory {
    pub segments: Vec<Segment>,
    pub gamma: f64,
}

impl PiecewiseTrajectory {
    pub fn new(segments: Vec<Segment>, gamma: f64) -> Result<Self> {
        if segments.is_empty() {
            return domain("trajectory has no segments");
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return domain(format!("gamma must lie in (0,1], got {gamma}"));
        }
        for (k, s) in segments.iter().enumerate() {
            if !(s.left < s.right) {
                return domain(format!("segment {k} has empty range [{}, {}]", s.left, s.right));
            }
            let g = &s.samples.grid;
            if g[0] < s.left || *g.last().unwrap() > s.right {
                return domain(format!("segment {k} samples leave [{}, {}]", s.left, s.right));
            }
            if k > 0 && segments[k - 1].right != s.left {
                return domain(format!("segment {k} does not start where segment {} ends", k - 1));
            }
        }
        Ok(Self { segments, gamma })
    }

    pub fn horizon(&self) -> f64 {
        self.segments.last().map(|s| s.right).unwrap_or(0.0)
    }

    pub fn dim(&self) -> usize {
        self.segments[0].samples.dim()
    }

    pub fn segment_norms(&self) -> Result<Vec<f64>> {
        self.segments
            .iter()
            .map(|s| weighted_norm(&s.samples, self.gamma, s.left))
            .collect()
    }
}

/// `PC_{1-γ}` norm: the largest segment-local weighted norm.
pub fn pc_norm(traj: &PiecewiseTrajectory) -> Result<f64> {
    Ok(traj.segment_norms()?.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_at(f: &SampledFn, t: f64) -> f64 {
        let i = f.grid.iter().position(|&x| (x - t).abs() < 1e-12).unwrap();
        f.values[i][0]
    }

    #[test]
    fn order_one_is_trapezoid_integral() {
        let f = SampledFn::scalar(uniform_grid(0.0, 1.0, 10), |_| 1.0).unwrap();
        let g = rl_integral(1.0, &f, 0.0).unwrap();
        for (t, v) in g.grid.iter().zip(&g.values) {
            assert!((v[0] - t).abs() < 1e-14);
        }
    }

    #[test]
    fn half_integral_of_identity() {
        let f = SampledFn::scalar(uniform_grid(0.0, 1.0, 50), |t| t).unwrap();
        let g = rl_integral(0.5, &f, 0.0).unwrap();
        assert!((scalar_at(&g, 1.0) - 0.752_252_778_063_675_1).abs() < 1e-13);
    }

    #[test]
    fn weights_are_exact_for_linear_data_with_weight() {
        // I^q[s^p (1 + s)] = Γ(p+1)/Γ(p+1+q) t^{p+q} + Γ(p+2)/Γ(p+2+q) t^{p+1+q}
        let (q, p) = (0.6, -0.35);
        let grid = uniform_grid(0.0, 1.0, 17);
        let f = SampledFn::scalar(grid, |s| 1.0 + s).unwrap();
        let g = rl_integral_weighted(q, p, &f, 0.0, None).unwrap();
        for (t, v) in g.grid.iter().zip(&g.values).skip(1) {
            let exact = gamma(p + 1.0).unwrap() / gamma(p + 1.0 + q).unwrap() * t.powf(p + q)
                + gamma(p + 2.0).unwrap() / gamma(p + 2.0 + q).unwrap() * t.powf(p + 1.0 + q);
            assert!((v[0] - exact).abs() < 1e-9 * exact.abs().max(1.0), "t={t}: {} vs {exact}", v[0]);
        }
    }

    #[test]
    fn constant_extension_before_first_node() {
        let f = SampledFn::scalar(vec![0.5, 1.0], |_| 1.0).unwrap();
        let g = rl_integral(0.5, &f, 0.0).unwrap();
        let exact = 1.0 / gamma(1.5).unwrap();
        assert!((scalar_at(&g, 1.0) - exact).abs() < 1e-14);
    }

    #[test]
    fn fitted_expansion_handles_fractional_powers() {
        let alpha = 0.4;
        let exps = expansion_exponents(alpha);
        let grid = uniform_grid(0.0, 1.0, 200);
        let f = SampledFn::scalar(grid, |s| 1.0 + s.powf(alpha) - 0.3 * s.powf(2.0 * alpha)).unwrap();
        let g = rl_integral_weighted(0.7, -0.2, &f, 0.0, Some(&exps)).unwrap();
        let ip = |e: f64| gamma(e + 1.0).unwrap() / gamma(e + 1.7).unwrap();
        let exact = ip(-0.2) + ip(-0.2 + alpha) - 0.3 * ip(-0.2 + 2.0 * alpha);
        assert!((scalar_at(&g, 1.0) - exact).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = SampledFn::scalar(uniform_grid(0.0, 1.0, 4), |t| t).unwrap();
        assert!(rl_integral(0.0, &f, 0.0).is_err());
        assert!(rl_integral(-1.0, &f, 0.0).is_err());
        assert!(SampledFn::new(vec![], vec![]).is_err());
        assert!(SampledFn::scalar(vec![0.0, 0.0], |t| t).is_err());
        assert!(hilfer_derivative(0.5, 0.5, &SampledFn::scalar(vec![0.0, 1.0], |t| t).unwrap()).is_err());
    }

    #[test]
    fn hilfer_at_alpha_one_is_classical() {
        let f = SampledFn::scalar(uniform_grid(0.0, 1.0, 100), |t| t * t).unwrap();
        let d = hilfer_derivative(1.0, 0.3, &f).unwrap();
        for (t, v) in d.grid.iter().zip(&d.values) {
            assert!((v[0] - 2.0 * t).abs() < 1e-10);
        }
    }

    #[test]
    fn norms() {
        let gamma_ = 0.6;
        let f = SampledFn::scalar(uniform_grid(0.0, 1.0, 10), |t| 2.5 * t.powf(gamma_)).unwrap();
        assert!((weighted_norm(&f, gamma_, 0.0).unwrap() - 2.5).abs() < 1e-14);
        let seg = |l: f64, r: f64, c: f64| Segment {
            kind: SegmentKind::Initial,
            left: l,
            right: r,
            samples: SampledFn::scalar(uniform_grid(l, r, 4), move |_| c).unwrap(),
        };
        let traj = PiecewiseTrajectory::new(vec![seg(0.0, 1.0, 1.0), seg(1.0, 2.0, 3.0)], 1.0).unwrap();
        assert_eq!(pc_norm(&traj).unwrap(), 3.0);
    }
}
