//! Solution-operator families for `u' = -Au` type problems of fractional
//! order: the semigroup `e^{-At}`, the subordinated families
//!
//! ```text
//! G_α(t) = ∫_0^∞ αθ M_α(θ) e^{-A t^α θ} dθ,
//! K_α(t) = t^e G_α(t),              e = α-1 by default,
//! P_{α,β}(t) = I^{β(1-α)} K_α (t),
//! ```
//!
//! and the derived constant `M = sup_{[0,a]} ‖e^{-At}‖₂`.
//!
//! In the scalar case `G_α(t) = E_{α,α}(-λt^α)` and, with `e = α - 1`,
//! `P_{α,β}(t) = t^{γ-1} E_{α,γ}(-λt^α)`, `γ = α + β(1-α)`. The literal
//! choice `e = γ - 1` is available as [`KernelExponent::GammaMinusOne`].

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::fracops::{self, FracError, SampledFn};
use crate::quad;
use crate::specfun::{gamma, rgamma, wright_m, SpecFunError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
    #[error(transparent)]
    Frac(#[from] FracError),
}

pub type Result<T> = std::result::Result<T, OpError>;

/// Which power of `t` multiplies `G_α` in `K_α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelExponent {
    /// `t^{α-1}`: the choice consistent with the integral equation.
    #[default]
    AlphaMinusOne,
    /// `t^{γ-1}`: the formula as literally written.
    GammaMinusOne,
}

impl KernelExponent {
    pub fn value(self, alpha: f64, gamma: f64) -> f64 {
        match self {
            KernelExponent::AlphaMinusOne => alpha - 1.0,
            KernelExponent::GammaMinusOne => gamma - 1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            KernelExponent::AlphaMinusOne => "alpha-1",
            KernelExponent::GammaMinusOne => "gamma-1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "alpha-1" => Some(KernelExponent::AlphaMinusOne),
            "gamma-1" => Some(KernelExponent::GammaMinusOne),
            _ => None,
        }
    }
}

/// The matrix `A`; the semigroup is `t ↦ e^{-At}`.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    a: DMatrix<f64>,
    eigen: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl GeneratorMatrix {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.nrows() != a.ncols() {
            return Err(OpError::Domain(format!("generator must be square and nonempty, got {}x{}", a.nrows(), a.ncols())));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(OpError::Domain("generator has non-finite entries".into()));
        }
        let symmetric = (0..a.nrows()).all(|i| (0..i).all(|j| a[(i, j)] == a[(j, i)]));
        let eigen = symmetric.then(|| {
            let e = SymmetricEigen::new(a.clone());
            (e.eigenvectors, e.eigenvalues)
        });
        Ok(Self { a, eigen })
    }

    pub fn from_row_major(d: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != d * d {
            return Err(OpError::Domain(format!("expected {} entries for a {d}x{d} matrix, got {}", d * d, entries.len())));
        }
        Self::new(DMatrix::from_row_slice(d, d, entries))
    }

    pub fn scalar(lambda: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, lambda))
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn is_symmetric(&self) -> bool {
        self.eigen.is_some()
    }

    /// `e^{-At}`.
    pub fn exp_neg(&self, t: f64) -> DMatrix<f64> {
        self.matrix_function(|lambda| (-lambda * t).exp())
            .unwrap_or_else(|| (&self.a * -t).exp())
    }

    /// `g(A)` through the eigendecomposition, when `A` is symmetric.
    pub fn matrix_function(&self, g: impl Fn(f64) -> f64) -> Option<DMatrix<f64>> {
        let (q, lam) = self.eigen.as_ref()?;
        let mut scaled = q.clone();
        for (j, l) in lam.iter().enumerate() {
            let gj = g(*l);
            scaled.column_mut(j).scale_mut(gj);
        }
        Some(scaled * q.transpose())
    }

    pub fn norm2(&self) -> f64 {
        spectral_norm(&self.a)
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// `e^{-At} v`.
pub fn semigroup_apply(a: &GeneratorMatrix, t: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(OpError::Domain(format!("semigroup time must be finite and >= 0, got {t}")));
    }
    if v.len() != a.dim() || v.iter().any(|x| !x.is_finite()) {
        return Err(OpError::Domain("vector must be finite with the generator's dimension".into()));
    }
    Ok(a.exp_neg(t) * v)
}

/// Quadrature for `∫_0^∞ (·) M_α(θ) dθ` on `[0, Θ_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaSettings {
    /// Minimum number of nodes; panels are bisected adaptively beyond this.
    pub nodes: usize,
    /// Bound on the neglected first-moment mass beyond `Θ_max`.
    pub tail_tol: f64,
}

impl Default for ThetaSettings {
    fn default() -> Self {
        Self {
            nodes: 256,
            tail_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ThetaQuadrature {
    pub alpha: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `M_α` at the nodes.
    pub density: Vec<f64>,
    pub cutoff: f64,
    /// `w_i α θ_i M_α(θ_i)`, the coefficients of `G_α`.
    pub coeffs: Vec<f64>,
}

const PANEL_ABS_TOL: f64 = 1e-14;
const PANEL_MAX_DEPTH: u32 = 12;

impl ThetaQuadrature {
    pub fn new(alpha: f64, settings: ThetaSettings) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(OpError::Domain(format!("theta quadrature needs 0 < alpha < 1, got {alpha}")));
        }
        if settings.nodes == 0 || !(settings.tail_tol > 0.0) {
            return Err(OpError::Config("theta quadrature needs nodes > 0 and tail_tol > 0".into()));
        }
        let m = |th: f64| wright_m(alpha, th).map(|v| v.max(0.0));
        let cutoff = cutoff(alpha, settings.tail_tol, &m)?;

        let rule = quad::gl16();
        let n_rule = rule.nodes.len();
        let panels = settings.nodes.div_ceil(n_rule).max(1);
        let width = cutoff / panels as f64;
        let mut leaves: Vec<(f64, f64, Vec<f64>)> = Vec::new();
        let sample = |a: f64, b: f64| -> Result<Vec<f64>> {
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            rule.nodes.iter().map(|x| m(mid + half * x).map_err(OpError::from)).collect()
        };
        let sums = |a: f64, b: f64, vals: &[f64]| {
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            let mut s0 = 0.0;
            let mut s1 = 0.0;
            for ((x, w), v) in rule.nodes.iter().zip(&rule.weights).zip(vals) {
                s0 += w * half * v;
                s1 += w * half * v * (mid + half * x);
            }
            (s0, s1)
        };
        let mut stack: Vec<(f64, f64, Vec<f64>, u32)> = Vec::new();
        for p in (0..panels).rev() {
            let a = p as f64 * width;
            let b = if p + 1 == panels { cutoff } else { a + width };
            stack.push((a, b, sample(a, b)?, 0));
        }
        while let Some((a, b, vals, depth)) = stack.pop() {
            let c = 0.5 * (a + b);
            let (lv, rv) = (sample(a, c)?, sample(c, b)?);
            let (w0, w1) = sums(a, b, &vals);
            let (l0, l1) = sums(a, c, &lv);
            let (r0, r1) = sums(c, b, &rv);
            let ok = (w0 - l0 - r0).abs() <= PANEL_ABS_TOL && (w1 - l1 - r1).abs() <= PANEL_ABS_TOL;
            if ok || depth >= PANEL_MAX_DEPTH {
                leaves.push((a, c, lv));
                leaves.push((c, b, rv));
            } else {
                stack.push((c, b, rv, depth + 1));
                stack.push((a, c, lv, depth + 1));
            }
        }
        leaves.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut nodes = Vec::with_capacity(leaves.len() * n_rule);
        let mut weights = Vec::with_capacity(nodes.capacity());
        let mut density = Vec::with_capacity(nodes.capacity());
        for (a, b, vals) in leaves {
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            for ((x, w), v) in rule.nodes.iter().zip(&rule.weights).zip(vals) {
                nodes.push(mid + half * x);
                weights.push(w * half);
                density.push(v);
            }
        }
        let coeffs = nodes
            .iter()
            .zip(&weights)
            .zip(&density)
            .map(|((th, w), m)| w * alpha * th * m)
            .collect();
        let q = Self {
            alpha,
            nodes,
            weights,
            density,
            cutoff,
            coeffs,
        };
        let mass = q.mass();
        if (mass - 1.0).abs() > 1e-6 {
            return Err(OpError::Config(format!(
                "Wright density quadrature for alpha={alpha} has mass {mass}, not 1 within 1e-6"
            )));
        }
        Ok(q)
    }

    /// Process-wide cache keyed by `(α, settings)`; quadratures are immutable.
    pub fn shared(alpha: f64, settings: ThetaSettings) -> Result<Arc<Self>> {
        type Key = (u64, usize, u64);
        static CACHE: OnceLock<Mutex<HashMap<Key, Arc<ThetaQuadrature>>>> = OnceLock::new();
        let key = (alpha.to_bits(), settings.nodes, settings.tail_tol.to_bits());
        let cache = CACHE.get_or_init(Default::default);
        if let Some(q) = cache.lock().unwrap().get(&key) {
            return Ok(q.clone());
        }
        let q = Arc::new(Self::new(alpha, settings)?);
        cache.lock().unwrap().insert(key, q.clone());
        Ok(q)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// `Σ w_i M_α(θ_i)`.
    pub fn mass(&self) -> f64 {
        self.moment(0.0)
    }

    /// `Σ w_i θ_i^δ M_α(θ_i)`.
    pub fn moment(&self, delta: f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .zip(&self.density)
            .map(|((th, w), m)| w * th.powf(delta) * m)
            .sum()
    }
}

/// Smallest `Θ ≥ 1` at which the tail bound
/// `Θ² M(Θ) (1 + (1-α)/(B Θ^{α/(1-α)}))`, `B = (1-α) α^{α/(1-α)}`, falls
/// below `tol`. Past the mode, `M_α` decays like `exp(-B θ^{1/(1-α)})`, so
/// the bracket is the reciprocal log-derivative and the bound dominates the
/// mass and first moment beyond `Θ`.
fn cutoff(alpha: f64, tol: f64, m: &impl Fn(f64) -> std::result::Result<f64, SpecFunError>) -> Result<f64> {
    let r = alpha / (1.0 - alpha);
    let b = (1.0 - alpha) * alpha.powf(r);
    let tail = |th: f64| -> Result<f64> { Ok(th * th * m(th)? * (1.0 + (1.0 - alpha) / (b * th.powf(r)))) };
    let mut hi = 1.0;
    while tail(hi)? >= tol {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(OpError::Config(format!("no Wright tail cutoff found for alpha={alpha}")));
        }
    }
    let mut lo = (hi / 2.0).max(1.0);
    if lo == hi {
        return Ok(hi);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if tail(mid)? < tol {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Evaluator for `G_α(t)`.
#[derive(Debug, Clone)]
pub struct GAlpha {
    gen: GeneratorMatrix,
    alpha: f64,
    quad: Option<Arc<ThetaQuadrature>>,
}

/// Coefficients below this fraction of their sum are skipped in the
/// general (non-symmetric) path, where each node costs a matrix exponential.
const NODE_SKIP: f64 = 1e-18;

impl GAlpha {
    pub fn new(gen: &GeneratorMatrix, alpha: f64, settings: ThetaSettings) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(OpError::Domain(format!("alpha must lie in (0,1], got {alpha}")));
        }
        let quad = if alpha < 1.0 {
            Some(ThetaQuadrature::shared(alpha, settings)?)
        } else {
            None
        };
        Ok(Self {
            gen: gen.clone(),
            alpha,
            quad,
        })
    }

    pub fn with_quadrature(gen: &GeneratorMatrix, q: Arc<ThetaQuadrature>) -> Self {
        Self {
            gen: gen.clone(),
            alpha: q.alpha,
            quad: Some(q),
        }
    }

    pub fn quadrature(&self) -> Option<&ThetaQuadrature> {
        self.quad.as_deref()
    }

    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        let d = self.gen.dim();
        let Some(q) = &self.quad else {
            return self.gen.exp_neg(t);
        };
        if t == 0.0 {
            return DMatrix::identity(d, d) * rgamma(self.alpha);
        }
        let tau = t.powf(self.alpha);
        let scalar = |lambda: f64| -> f64 {
            q.coeffs
                .iter()
                .zip(&q.nodes)
                .map(|(c, th)| c * (-lambda * tau * th).exp())
                .sum()
        };
        if let Some(m) = self.gen.matrix_function(scalar) {
            return m;
        }
        let total: f64 = q.coeffs.iter().sum();
        let mut acc = DMatrix::zeros(d, d);
        for (c, th) in q.coeffs.iter().zip(&q.nodes) {
            if *c > NODE_SKIP * total {
                acc += (self.gen.matrix() * (-tau * th)).exp() * *c;
            }
        }
        acc
    }
}

/// `G_α(t)`.
pub fn g_alpha(a: &GeneratorMatrix, alpha: f64, t: f64, q: &ThetaQuadrature) -> Result<DMatrix<f64>> {
    if !(t > 0.0) {
        return Err(OpError::Domain(format!("g_alpha needs t > 0, got {t}")));
    }
    if q.alpha != alpha {
        return Err(OpError::Config(format!("quadrature built for alpha={} used with alpha={alpha}", q.alpha)));
    }
    Ok(GAlpha::with_quadrature(a, Arc::new(q.clone())).eval(t))
}

/// `K_α(t) = t^e G_α(t)`.
pub fn k_alpha(a: &GeneratorMatrix, alpha: f64, t: f64, q: &ThetaQuadrature, exponent: f64) -> Result<DMatrix<f64>> {
    Ok(g_alpha(a, alpha, t, q)? * t.powf(exponent))
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(OpError::Domain("empty time grid".into()));
    }
    if !(grid[0] > 0.0) {
        return Err(OpError::Domain(format!("time grid must start after 0, got {}", grid[0])));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(OpError::Domain("time grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Largest number of series terms integrated analytically.
const HEAD_TERMS_MAX: usize = 80;
/// The head stops at the first term whose size on the horizon exceeds this,
/// bounding cancellation between head and remainder.
const HEAD_TERM_LIMIT: f64 = 1e6;

/// Tabulates `P_{α,β}` on `grid` (all times > 0).
///
/// The integral `I^ν[s^e G_α(s)]`, `ν = β(1-α)`, is split as
/// `G_α = S + R` with `S(s) = Σ_{k<k0} (-A)^k s^{αk}/Γ(αk+α)` the leading
/// terms of the power series of `G_α`. `S` is integrated exactly by the
/// power rule; the remainder `R = O(s^{α k0})` is smooth enough at the origin
/// for product integration with the weight `s^e` on the grid `{0} ∪ grid`.
/// `k0 ≥ ⌈2/α⌉` grows until the terms are negligible on the horizon, unless
/// a term exceeds `HEAD_TERM_LIMIT` (large `‖A‖ t^α`), where it stops.
pub fn p_alpha_beta(
    a: &GeneratorMatrix,
    alpha: f64,
    beta: f64,
    grid: &[f64],
    settings: ThetaSettings,
    exponent: KernelExponent,
) -> Result<Vec<DMatrix<f64>>> {
    let g = GAlpha::new(a, alpha, settings)?;
    Ok(OperatorTable::build(a, &g, beta, grid, exponent)?.p)
}

/// `G_α`, `K_α` and `P_{α,β}` tabulated on a common grid.
#[derive(Debug, Clone)]
pub struct OperatorTable {
    pub grid: Vec<f64>,
    pub g: Vec<DMatrix<f64>>,
    pub k: Vec<DMatrix<f64>>,
    pub p: Vec<DMatrix<f64>>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub kernel_exponent: f64,
}

impl OperatorTable {
    pub fn build(a: &GeneratorMatrix, g_alpha: &GAlpha, beta: f64, grid: &[f64], exponent: KernelExponent) -> Result<Self> {
        check_grid(grid)?;
        if !(0.0..=1.0).contains(&beta) {
            return Err(OpError::Domain(format!("beta must lie in [0,1], got {beta}")));
        }
        let alpha = g_alpha.alpha;
        let gamma_ = alpha + beta * (1.0 - alpha);
        let e = exponent.value(alpha, gamma_);
        let nu = beta * (1.0 - alpha);
        let g: Vec<DMatrix<f64>> = grid.iter().map(|&t| g_alpha.eval(t)).collect();
        let k: Vec<DMatrix<f64>> = grid.iter().zip(&g).map(|(t, gm)| gm * t.powf(e)).collect();
        let p = if nu == 0.0 {
            k.clone()
        } else {
            integrate_kernel(a, &g, grid, alpha, e, nu)?
        };
        Ok(Self {
            grid: grid.to_vec(),
            g,
            k,
            p,
            alpha,
            beta,
            gamma: gamma_,
            kernel_exponent: e,
        })
    }

    /// Sup over the grid of `t^{1-γ} ‖P_{α,β}(t)‖₂`.
    pub fn weighted_p_bound(&self) -> f64 {
        self.grid
            .iter()
            .zip(&self.p)
            .map(|(t, p)| t.powf(1.0 - self.gamma) * spectral_norm(p))
            .fold(0.0, f64::max)
    }
}

fn integrate_kernel(
    a: &GeneratorMatrix,
    g: &[DMatrix<f64>],
    grid: &[f64],
    alpha: f64,
    e: f64,
    nu: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let d = a.dim();
    let horizon = *grid.last().unwrap();
    let norm_a = a.norm2();
    let min_k = ((2.0 / alpha).ceil() as usize).max(1);
    let mut powers = vec![DMatrix::identity(d, d)];
    let mut head_coeff = vec![rgamma(alpha)];
    let mut largest = head_coeff[0].abs();
    for k in 1..HEAD_TERMS_MAX {
        let kf = k as f64;
        let size = norm_a.powi(k as i32) * horizon.powf(alpha * kf) * rgamma(alpha * kf + alpha).abs();
        if !(size <= HEAD_TERM_LIMIT) || (k >= min_k && size < 1e-17 * largest) {
            break;
        }
        largest = largest.max(size);
        powers.push(-a.matrix() * &powers[k - 1]);
        head_coeff.push(rgamma(alpha * kf + alpha));
    }
    let head = |s: f64| -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(d, d);
        for (k, (pw, c)) in powers.iter().zip(&head_coeff).enumerate() {
            acc += pw * (c * s.powf(alpha * k as f64));
        }
        acc
    };
    let mut nodes = Vec::with_capacity(grid.len() + 1);
    nodes.push(0.0);
    nodes.extend_from_slice(grid);
    let mut rem = Vec::with_capacity(nodes.len());
    rem.push(DMatrix::zeros(d, d));
    for (t, gm) in grid.iter().zip(g) {
        rem.push(gm - head(*t));
    }
    let inv_gnu = rgamma(nu);
    let mut out = Vec::with_capacity(grid.len());
    for i in 1..nodes.len() {
        let t = nodes[i];
        let w = fracops::product_weights(&nodes, 0.0, i, nu, e);
        let mut acc = DMatrix::zeros(d, d);
        for (wj, r) in w.iter().zip(&rem).skip(1) {
            acc += r * *wj;
        }
        acc *= inv_gnu;
        for (k, (pw, c)) in powers.iter().zip(&head_coeff).enumerate() {
            let x = e + alpha * k as f64;
            let factor = c * gamma(x + 1.0)? * rgamma(x + 1.0 + nu) * t.powf(x + nu);
            acc += pw * factor;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Number of samples used by [`estimate_m`].
pub const M_SAMPLES: usize = 1001;

/// `max_{t ∈ [0,a]} ‖e^{-At}‖₂` over a uniform grid; at least 1.
pub fn estimate_m(a: &GeneratorMatrix, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(OpError::Domain(format!("horizon must be positive, got {horizon}")));
    }
    let mut best = 1.0_f64;
    for j in 0..M_SAMPLES {
        let t = horizon * j as f64 / (M_SAMPLES - 1) as f64;
        best = best.max(spectral_norm(&a.exp_neg(t)));
    }
    Ok(best)
}

/// Points in the graded prefix added below the first grid time.
const PREFIX_POINTS: usize = 64;

/// Maximum over the grid and the unit basis of
/// `‖S(t)x - x + I^α[S(·)Ax](t)‖`, with `S = P_{α,1}` the candidate
/// resolvent family of `-A`. The integral runs from 0 on the grid extended
/// by a graded prefix `s_j = grid[0] (j/J)^{2/α}`.
pub fn resolvent_property_check(a: &GeneratorMatrix, alpha: f64, grid: &[f64], settings: ThetaSettings) -> Result<f64> {
    check_grid(grid)?;
    let d = a.dim();
    let grade = 2.0 / alpha;
    let mut ext: Vec<f64> = (1..PREFIX_POINTS)
        .map(|j| grid[0] * (j as f64 / PREFIX_POINTS as f64).powf(grade))
        .collect();
    ext.extend_from_slice(grid);
    let g = GAlpha::new(a, alpha, settings)?;
    let table = OperatorTable::build(a, &g, 1.0, &ext, KernelExponent::AlphaMinusOne)?;
    let mut full_grid = vec![0.0];
    full_grid.extend_from_slice(&ext);
    let mut s = vec![DMatrix::identity(d, d)];
    s.extend(table.p);
    let offset = PREFIX_POINTS;
    let mut worst = 0.0_f64;
    for m in 0..d {
        let x = DVector::from_fn(d, |i, _| if i == m { 1.0 } else { 0.0 });
        let ax = a.matrix() * &x;
        let y = SampledFn::new(full_grid.clone(), s.iter().map(|sm| sm * &ax).collect())?;
        let iy = fracops::rl_integral(alpha, &y, 0.0)?;
        for i in offset..full_grid.len() {
            let defect = &s[i] * &x - &x + &iy.values[i];
            worst = worst.max(defect.norm());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::mittag_leffler;

    #[test]
    fn semigroup_examples() {
        let z = GeneratorMatrix::new(DMatrix::zeros(3, 3)).unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(semigroup_apply(&z, 2.0, &v).unwrap(), v);
        let s = GeneratorMatrix::scalar(0.7).unwrap();
        let r = semigroup_apply(&s, 2.0, &DVector::from_element(1, 1.0)).unwrap();
        assert!((r[0] - (-1.4_f64).exp()).abs() < 1e-15);
        let dg = GeneratorMatrix::from_row_major(2, &[1.0, 0.0, 0.0, 2.0]).unwrap();
        let r = semigroup_apply(&dg, 1.0, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!((r[0] - (-1.0_f64).exp()).abs() < 1e-15 && (r[1] - (-2.0_f64).exp()).abs() < 1e-15);
        assert!(semigroup_apply(&s, -1.0, &DVector::from_element(1, 1.0)).is_err());
    }

    #[test]
    fn non_symmetric_uses_general_exponential() {
        // Rotation generator: e^{-At} is rotation by -t.
        let a = GeneratorMatrix::from_row_major(2, &[0.0, 1.0, -1.0, 0.0]).unwrap();
        assert!(!a.is_symmetric());
        let e = a.exp_neg(0.3);
        assert!((e[(0, 0)] - 0.3_f64.cos()).abs() < 1e-14);
        assert!((e[(0, 1)] + 0.3_f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn estimate_m_examples() {
        assert_eq!(estimate_m(&GeneratorMatrix::new(DMatrix::zeros(2, 2)).unwrap(), 1.0).unwrap(), 1.0);
        assert_eq!(estimate_m(&GeneratorMatrix::scalar(2.0).unwrap(), 1.0).unwrap(), 1.0);
        let m = estimate_m(&GeneratorMatrix::scalar(-1.0).unwrap(), 1.0).unwrap();
        assert!((m - std::f64::consts::E).abs() < 1e-14);
    }

    #[test]
    fn theta_quadrature_is_normalized() {
        for &alpha in &[0.2, 0.5, 0.8] {
            let q = ThetaQuadrature::new(alpha, ThetaSettings::default()).unwrap();
            assert!(q.node_count() >= 256);
            assert!(q.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(q.nodes.iter().all(|&t| t <= q.cutoff));
            assert!((q.mass() - 1.0).abs() < 1e-9, "alpha={alpha}: {}", q.mass());
        }
    }

    #[test]
    fn g_alpha_scalar_oracle() {
        let q = ThetaQuadrature::new(0.6, ThetaSettings::default()).unwrap();
        let z = GeneratorMatrix::new(DMatrix::zeros(2, 2)).unwrap();
        let g0 = g_alpha(&z, 0.6, 0.5, &q).unwrap();
        assert!((g0[(0, 0)] - 1.0 / gamma(0.6).unwrap()).abs() < 1e-10);
        assert!(g0[(0, 1)].abs() < 1e-15);
        for &lambda in &[0.5, 2.0, 5.0] {
            let a = GeneratorMatrix::scalar(lambda).unwrap();
            let g = g_alpha(&a, 0.6, 1.0, &q).unwrap()[(0, 0)];
            let oracle = mittag_leffler(0.6, 0.6, -lambda).unwrap();
            assert!((g - oracle).abs() < 1e-9, "lambda={lambda}: {g} vs {oracle}");
        }
    }

    #[test]
    fn k_alpha_at_unit_time_equals_g() {
        let q = ThetaQuadrature::new(0.4, ThetaSettings::default()).unwrap();
        let a = GeneratorMatrix::scalar(1.3).unwrap();
        let k = k_alpha(&a, 0.4, 1.0, &q, -0.6).unwrap();
        assert_eq!(k, g_alpha(&a, 0.4, 1.0, &q).unwrap());
    }

    #[test]
    fn p_table_scalar_oracle() {
        let grid: Vec<f64> = (1..=200).map(|j| j as f64 / 200.0).collect();
        let a = GeneratorMatrix::scalar(1.0).unwrap();
        let p = p_alpha_beta(&a, 0.6, 0.5, &grid, ThetaSettings::default(), KernelExponent::AlphaMinusOne).unwrap();
        let (alpha, gm) = (0.6, 0.8);
        let t: f64 = 0.8;
        let oracle = t.powf(gm - 1.0) * mittag_leffler(alpha, gm, -t.powf(alpha)).unwrap();
        assert!((p[159][(0, 0)] - oracle).abs() < 1e-5 * oracle, "{} vs {oracle}", p[159][(0, 0)]);
    }

    #[test]
    fn p_table_zero_generator_gives_leading_power() {
        let grid: Vec<f64> = (1..=50).map(|j| j as f64 / 50.0).collect();
        let z = GeneratorMatrix::new(DMatrix::zeros(1, 1)).unwrap();
        let p = p_alpha_beta(&z, 0.5, 0.4, &grid, ThetaSettings::default(), KernelExponent::AlphaMinusOne).unwrap();
        let gm: f64 = 0.5 + 0.4 * 0.5;
        for (t, pm) in grid.iter().zip(&p) {
            let exact = t.powf(gm - 1.0) / gamma(gm).unwrap();
            assert!((pm[(0, 0)] - exact).abs() < 1e-9 * exact);
        }
    }
}
