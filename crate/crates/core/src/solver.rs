//! Mild-solution solver: causal Picard iteration, segment by segment.
//!
//! On `[0, t_1]` the mild solution is `u = P(t) u0 + ∫_0^t K(t-s) f(s,u(s)) ds`;
//! on impulse pieces `u = ζ_k(t, u)` is solved pointwise; on `(s_k, t_{k+1}]`
//! it is `P(t) ζ_k(s_k, u(s_k)) + ∫_{s_k}^t K(t-s) f(s,u(s)) ds` with `P`
//! evaluated at the absolute time.

use std::collections::HashMap;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{ExprError, StateFn};
use crate::fracops::{
    self, FracError, PiecewiseTrajectory, SampledFn, Segment, SegmentKind,
};
use crate::operators::{GAlpha, KernelExponent, OpError, OperatorTable, ThetaSettings};
use crate::specfun::rgamma;
use rayon::prelude::*;
use crate::problem::{Piece, ProblemError, ProblemSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImpulseError {
    #[error("fixed-point map is not contractive (step grew {iterations} times in a row, last step {last_step:.3e})")]
    NotContractive { iterations: usize, last_step: f64 },
    #[error("fixed point not reached in {iterations} iterations (last step {last_step:.3e})")]
    NoConvergence { iterations: usize, last_step: f64 },
    #[error(transparent)]
    Eval(#[from] ExprError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("operator tables: {0}")]
    Operator(#[from] OpError),
    #[error("quadrature: {0}")]
    Frac(#[from] FracError),
    #[error("invalid solver settings: {0}")]
    Config(String),
    #[error("evaluating f at t = {t}: {source}")]
    Eval { t: f64, source: ExprError },
    #[error("impulse {} at t = {t}: {source}", .k + 1)]
    Impulse { k: usize, t: f64, source: ImpulseError },
    #[error("Picard iteration on segment {segment} did not converge in {iterations} iterations (last difference {last_diff:.3e})")]
    NoConvergence {
        segment: usize,
        iterations: usize,
        last_diff: f64,
        ratios: Vec<f64>,
    },
    #[error("Picard iteration diverged on segment {segment} at iteration {iteration} (difference {last_diff:.3e})")]
    Diverged {
        segment: usize,
        iteration: usize,
        last_diff: f64,
        ratios: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, SolveError>;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Grid intervals per partition piece (the first piece may get more to
    /// honour `t_min`).
    pub points_per_interval: usize,
    pub max_iterations: usize,
    /// Stop when the weighted difference of successive iterates falls below
    /// `tolerance · max(1, ‖u‖)`.
    pub tolerance: f64,
    pub impulse_tolerance: f64,
    pub impulse_max_iterations: usize,
    pub theta: ThetaSettings,
    pub kernel_exponent: KernelExponent,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            points_per_interval: 200,
            max_iterations: 500,
            tolerance: 1e-10,
            impulse_tolerance: 1e-12,
            impulse_max_iterations: 200,
            theta: ThetaSettings::default(),
            kernel_exponent: KernelExponent::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_interval < 8 {
            return Err(SolveError::Config(format!(
                "points_per_interval must be at least 8, got {}",
                self.points_per_interval
            )));
        }
        if self.max_iterations == 0 || self.impulse_max_iterations == 0 {
            return Err(SolveError::Config("iteration limits must be positive".into()));
        }
        if !(self.tolerance > 0.0) || !(self.impulse_tolerance > 0.0) {
            return Err(SolveError::Config("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Consecutive step growths after which an impulse map is declared
/// non-contractive.
const GROWTH_LIMIT: usize = 3;

/// Solves `v = ζ(t, v)` by fixed-point iteration from `guess`.
pub fn impulse_fixed_point(
    zeta: &StateFn,
    t: f64,
    guess: &DVector<f64>,
    tol: f64,
    max_iterations: usize,
) -> std::result::Result<(DVector<f64>, usize), ImpulseError> {
    let mut v = guess.clone();
    let mut prev_step = f64::INFINITY;
    let mut growths = 0;
    for it in 1..=max_iterations {
        let next = zeta.eval(t, &v)?;
        let step = (&next - &v).norm();
        v = next;
        if step <= tol * v.norm().max(1.0) {
            return Ok((v, it));
        }
        if step > prev_step {
            growths += 1;
            if growths >= GROWTH_LIMIT {
                return Err(ImpulseError::NotContractive {
                    iterations: it,
                    last_step: step,
                });
            }
        } else {
            growths = 0;
        }
        if !step.is_finite() {
            return Err(ImpulseError::NotContractive {
                iterations: it,
                last_step: step,
            });
        }
        prev_step = step;
    }
    Err(ImpulseError::NoConvergence {
        iterations: max_iterations,
        last_step: prev_step,
    })
}

/// Growth of the Picard difference over the first one that counts as
/// divergence.
const DIVERGENCE_GROWTH: f64 = 1e8;

/// Largest number of leading series terms of `G_α` integrated exactly.
const HEAD_TERMS_MAX: usize = 8;
/// Head terms larger than this on the piece are not split off (their
/// cancellation against the remainder would cost more than it gains).
const HEAD_TERM_LIMIT: f64 = 1e6;

/// Effective convolution matrices (`d²` entries, row-major) such that
/// `∫_{left}^{t_i} K(t_i - s) φ(s) ds ≈ Σ_j W_{ij} φ_j`.
///
/// `G_α(τ) = Σ_{k<k0} C_k τ^{αk} + R(τ)`, `C_k = (-A)^k/Γ(αk+α)`: each head
/// term is integrated exactly against piecewise-linear data, and only the
/// remainder `R = O(τ^{α k0})` is interpolated jointly with the data. Every
/// scalar rule carries starting weights on the first nodes that make it
/// exact for the powers `(s-left)^{e}` in [`fracops::starting_exponents`].
#[derive(Debug, Clone)]
enum Kernel {
    /// Uniform grid without a weight: `start[i]` holds the matrices for
    /// `j ≤ max(min(i, J), J)` (the first rows reach ahead to node `J`);
    /// beyond that `lag[i-j]`.
    Toeplitz { start: Vec<Vec<f64>>, lag: Vec<f64> },
    /// Row `i` holds `i + 1` matrices, more on the first rows where
    /// starting weights reach ahead.
    Full(Vec<Vec<f64>>),
}

impl Kernel {
    #[inline]
    fn mat(&self, i: usize, j: usize, dd: usize) -> &[f64] {
        match self {
            Kernel::Toeplitz { start, lag } => {
                let row = &start[i];
                if (j + 1) * dd <= row.len() {
                    &row[j * dd..(j + 1) * dd]
                } else {
                    &lag[(i - j) * dd..(i - j + 1) * dd]
                }
            }
            Kernel::Full(rows) => &rows[i][j * dd..(j + 1) * dd],
        }
    }

    fn last_col(&self, i: usize, dd: usize) -> usize {
        match self {
            Kernel::Toeplitz { start, .. } => i.max(start[i].len() / dd - 1),
            Kernel::Full(rows) => rows[i].len() / dd - 1,
        }
    }
}

/// Series head of `G_α` on a piece of length `len`: matrices `C_k` and
/// exponents `αk`.
fn kernel_head(a: &DMatrix<f64>, alpha: f64, len: f64) -> Vec<(DMatrix<f64>, f64)> {
    if alpha >= 1.0 {
        return Vec::new();
    }
    let d = a.nrows();
    let norm_a = crate::operators::spectral_norm(a);
    let wanted = ((2.0 / alpha).ceil() as usize).clamp(1, HEAD_TERMS_MAX);
    let mut out = Vec::with_capacity(wanted);
    let mut power = DMatrix::identity(d, d);
    for k in 0..wanted {
        let kf = k as f64;
        let c = rgamma(alpha * kf + alpha);
        let size = norm_a.powi(k as i32) * len.powf(alpha * kf) * c.abs();
        if !(size <= HEAD_TERM_LIMIT) {
            break;
        }
        out.push((&power * c, alpha * kf));
        power = -a * power;
    }
    out
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

fn build_kernel(
    g_alpha: &GAlpha,
    a: &DMatrix<f64>,
    alpha: f64,
    gamma: f64,
    e: f64,
    nodes: &[f64],
    p: f64,
    corrected: bool,
) -> Kernel {
    let d = a.nrows();
    let dd = d * d;
    let m = nodes.len() - 1;
    let base = nodes[0];
    let h = (nodes[m] - base) / m as f64;
    let head = kernel_head(a, alpha, nodes[m] - base);
    // Remainder R(jh) per lag.
    let rem: Vec<Vec<f64>> = (0..=m)
        .into_par_iter()
        .map(|j| {
            let tau = j as f64 * h;
            let mut r = g_alpha.eval(tau);
            for (c, x) in &head {
                r -= c * tau.powf(*x);
            }
            flat(&r)
        })
        .collect();
    let cmats: Vec<Vec<f64>> = head.iter().map(|(c, _)| flat(c)).collect();
    // Rule orders: remainder first, then one per head term.
    let q_rem = e + 1.0;
    let qs: Vec<f64> = std::iter::once(q_rem).chain(head.iter().map(|(_, x)| q_rem + x)).collect();
    let starting = if alpha < 1.0 && corrected {
        Some(fracops::StartingWeights::new(fracops::starting_exponents(alpha, gamma), p != 0.0))
    } else {
        None
    };
    let j_max = starting.as_ref().map_or(0, |s| s.len());
    // Effective matrix at column j of row i from the per-rule scalar weights.
    let combine_head = |out: &mut [f64], ws: &[f64]| {
        for (c, w) in cmats.iter().zip(&ws[1..]) {
            for (o, cv) in out.iter_mut().zip(c) {
                *o += w * cv;
            }
        }
    };
    let combine = |out: &mut [f64], ws: &[f64], lag: usize| {
        for (o, r) in out.iter_mut().zip(&rem[lag]) {
            *o += ws[0] * r;
        }
        combine_head(out, ws);
    };
    if p == 0.0 {
        let uni: Vec<(Vec<f64>, Vec<f64>)> = qs.iter().map(|&q| fracops::uniform_p0_weights(m, h, q)).collect();
        let mut lag = vec![0.0; (m + 1) * dd];
        for l in 0..=m {
            let ws: Vec<f64> = uni.iter().map(|(_, lw)| lw[l]).collect();
            combine(&mut lag[l * dd..(l + 1) * dd], &ws, l);
        }
        let start = (0..=m)
            .into_par_iter()
            .map(|i| {
                let cols = if starting.is_some() { j_max.min(m) + 1 } else { 1 };
                let rows: Vec<Vec<f64>> = uni
                    .iter()
                    .zip(&qs)
                    .enumerate()
                    .map(|(r, ((first, lw), &q))| {
                        let mut w: Vec<f64> = (0..=i).map(|j| if j == 0 { first[i] } else { lw[i - j] }).collect();
                        if let Some(st) = &starting {
                            if r == 0 || i == 0 {
                                st.correct(&mut w, i, h, q, 0.0);
                            } else {
                                st.correct_ahead(&mut w, i, h, q, 0.0);
                            }
                        }
                        w.resize(cols, 0.0);
                        w
                    })
                    .collect();
                let mut out = vec![0.0; cols * dd];
                for j in 0..cols {
                    let ws: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                    if j <= i {
                        combine(&mut out[j * dd..(j + 1) * dd], &ws, i - j);
                    } else {
                        combine_head(&mut out[j * dd..(j + 1) * dd], &ws);
                    }
                }
                out
            })
            .collect();
        return Kernel::Toeplitz { start, lag };
    }
    // Head rules see plain data, so their corrections may reach past node
    // i on short rows; the remainder's data R(t_i - s)h(s) ends at t_i.
    let rows = (0..=m)
        .into_par_iter()
        .map(|i| {
            let cols = i.max(j_max.min(m)) + 1;
            let ws_rows: Vec<Vec<f64>> = qs
                .iter()
                .enumerate()
                .map(|(r, &q)| {
                    let mut w = fracops::product_weights(nodes, base, i, q, p);
                    if let Some(st) = &starting {
                        if r == 0 || i == 0 {
                            st.correct(&mut w, i, h, q, p);
                        } else {
                            st.correct_ahead(&mut w, i, h, q, p);
                        }
                    }
                    w.resize(cols, 0.0);
                    w
                })
                .collect();
            let mut row = vec![0.0; cols * dd];
            for j in 0..cols {
                let ws: Vec<f64> = ws_rows.iter().map(|w| w[j]).collect();
                if j <= i {
                    combine(&mut row[j * dd..(j + 1) * dd], &ws, i - j);
                } else {
                    combine_head(&mut row[j * dd..(j + 1) * dd], &ws);
                }
            }
            row
        })
        .collect();
    Kernel::Full(rows)
}

#[derive(Debug, Clone)]
struct PiecePlan {
    piece: Piece,
    /// All nodes including the left end; on the initial piece node 0 (t = 0)
    /// is internal only.
    nodes: Vec<f64>,
    kernel: Option<Kernel>,
    /// Index into the `P` table per node (`usize::MAX` where unused).
    p_idx: Vec<usize>,
}

impl PiecePlan {
    fn first_stored(&self) -> usize {
        usize::from(self.piece.kind == SegmentKind::Initial)
    }
}

/// Per-segment Picard statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentReport {
    pub kind: SegmentKind,
    pub iterations: usize,
    pub final_diff: f64,
    /// Ratios of successive Picard differences (empty on impulse pieces).
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub trajectory: PiecewiseTrajectory,
    pub segments: Vec<SegmentReport>,
    pub warnings: Vec<String>,
}

impl SolveReport {
    /// Largest Picard iteration count over the evolving pieces.
    pub fn iterations(&self) -> usize {
        self.segments.iter().map(|s| s.iterations).max().unwrap_or(0)
    }

    pub fn final_diff(&self) -> f64 {
        self.segments.iter().map(|s| s.final_diff).fold(0.0, f64::max)
    }

    /// Largest observed contraction ratio, if any pair of differences exists.
    pub fn max_ratio(&self) -> Option<f64> {
        self.segments
            .iter()
            .flat_map(|s| s.ratios.iter().copied())
            .fold(None, |m, r| Some(m.map_or(r, |x: f64| x.max(r))))
    }
}

/// Discretised mild-solution operator for one problem.
#[derive(Debug, Clone)]
pub struct Solver<'a> {
    problem: &'a ProblemSpec,
    cfg: SolverConfig,
    plans: Vec<PiecePlan>,
    p_table: OperatorTable,
    gamma: f64,
    dim: usize,
}

impl<'a> Solver<'a> {
    pub fn new(problem: &'a ProblemSpec, cfg: &SolverConfig) -> Result<Self> {
        problem.validate()?;
        cfg.validate()?;
        let counts = default_counts(problem, cfg.points_per_interval);
        Self::with_counts(problem, cfg, &counts)
    }

    /// Solver with an explicit number of grid intervals per piece.
    pub fn with_counts(problem: &'a ProblemSpec, cfg: &SolverConfig, counts: &[usize]) -> Result<Self> {
        problem.validate()?;
        cfg.validate()?;
        let d = problem.dim();
        let alpha = problem.alpha;
        let gamma = problem.gamma();
        let e = cfg.kernel_exponent.value(alpha, gamma);
        let pieces = problem.pieces();
        if counts.len() != pieces.len() || counts.iter().any(|&c| c < 2) {
            return Err(SolveError::Config(format!(
                "need at least 2 intervals for each of the {} pieces",
                pieces.len()
            )));
        }

        let node_sets: Vec<Vec<f64>> = pieces
            .iter()
            .zip(counts)
            .map(|(pc, &c)| fracops::uniform_grid(pc.left, pc.right, c))
            .collect();

        // One P table over every node where it is needed.
        let mut p_times: Vec<f64> = Vec::new();
        for (pc, nodes) in pieces.iter().zip(&node_sets) {
            match pc.kind {
                SegmentKind::Initial => p_times.extend_from_slice(&nodes[1..]),
                SegmentKind::Evolution(_) => p_times.extend_from_slice(nodes),
                SegmentKind::Impulse(_) => {}
            }
        }
        p_times.sort_by(f64::total_cmp);
        p_times.dedup();
        let g_alpha = GAlpha::new(&problem.a, alpha, cfg.theta)?;
        let p_table = OperatorTable::build(&problem.a, &g_alpha, problem.beta, &p_times, cfg.kernel_exponent)?;
        let index: HashMap<u64, usize> = p_times.iter().enumerate().map(|(i, t)| (t.to_bits(), i)).collect();

        // Starting weights assume the integrand has a power expansion at each
        // restart. With a t^{γ-1} singularity in u that holds only when f is
        // affine in u; f∘u for nonlinear f (sin u, u²) has none.
        let corrected = gamma == 1.0 || problem.f.is_affine_in_state();
        if !corrected {
            log::debug!("f is nonlinear in u and γ < 1: starting corrections disabled");
        }
        let mut plans = Vec::with_capacity(pieces.len());
        for (pc, nodes) in pieces.into_iter().zip(node_sets) {
            let (kernel, p_idx) = if matches!(pc.kind, SegmentKind::Impulse(_)) {
                (None, Vec::new())
            } else {
                let p = if pc.kind == SegmentKind::Initial { gamma - 1.0 } else { 0.0 };
                let kernel = build_kernel(&g_alpha, problem.a.matrix(), alpha, gamma, e, &nodes, p, corrected);
                let p_idx = nodes
                    .iter()
                    .map(|t| index.get(&t.to_bits()).copied().unwrap_or(usize::MAX))
                    .collect();
                (Some(kernel), p_idx)
            };
            plans.push(PiecePlan {
                piece: pc,
                nodes,
                kernel,
                p_idx,
            });
        }
        debug!(
            "solver grid: {} pieces, {} P-table nodes, first step {:.3e}",
            plans.len(),
            p_table.grid.len(),
            plans[0].nodes[1]
        );
        Ok(Self {
            problem,
            cfg: cfg.clone(),
            plans,
            p_table,
            gamma,
            dim: d,
        })
    }

    pub fn operator_table(&self) -> &OperatorTable {
        &self.p_table
    }

    /// Node times of each piece as stored in trajectories.
    pub fn piece_grids(&self) -> Vec<Vec<f64>> {
        self.plans.iter().map(|p| p.nodes[p.first_stored()..].to_vec()).collect()
    }

    fn eval_f(&self, t: f64, u: &[f64]) -> Result<DVector<f64>> {
        self.problem
            .f
            .eval(t, &DVector::from_column_slice(u))
            .map_err(|source| SolveError::Eval { t, source })
    }

    /// `P(t_i) v` for every node of an evolving piece (zeros where unused).
    fn homogeneous(&self, plan: &PiecePlan, v: &DVector<f64>) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; plan.nodes.len() * d];
        for (i, &pi) in plan.p_idx.iter().enumerate() {
            if pi == usize::MAX {
                continue;
            }
            let pv = &self.p_table.p[pi] * v;
            out[i * d..(i + 1) * d].copy_from_slice(pv.as_slice());
        }
        out
    }

    /// Forcing data on the nodes of an evolving piece. On the initial piece
    /// with `γ < 1` this is `h = s^{1-γ} f`, with its value at `s = 0`
    /// extrapolated from a fitted expansion in powers of `s^α`.
    fn forcing_data(&self, plan: &PiecePlan, u: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim;
        let m = plan.nodes.len();
        let mut data = vec![0.0; m * d];
        let initial = plan.piece.kind == SegmentKind::Initial;
        for i in plan.first_stored()..m {
            let t = plan.nodes[i];
            let mut fv = self.eval_f(t, &u[i * d..(i + 1) * d])?;
            if initial && self.gamma < 1.0 {
                fv *= t.powf(1.0 - self.gamma);
            }
            data[i * d..(i + 1) * d].copy_from_slice(fv.as_slice());
        }
        if initial {
            // With γ < 1 the base node carries no weight; its value is unused.
            let h0 = if self.gamma < 1.0 {
                DVector::from_column_slice(&data[d..2 * d])
            } else {
                self.eval_f(0.0, self.problem.u0.as_slice())?
            };
            data[..d].copy_from_slice(h0.as_slice());
        }
        Ok(data)
    }

    /// `homog + ∫ K f` on an evolving piece for the iterate `u`.
    fn apply_evolving(&self, plan: &PiecePlan, homog: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim;
        let dd = d * d;
        let data = self.forcing_data(plan, u)?;
        let kernel = plan.kernel.as_ref().expect("evolving piece has a kernel");
        let mut out = homog.to_vec();
        for i in plan.first_stored().max(1)..plan.nodes.len() {
            for j in 0..=kernel.last_col(i, dd) {
                let g = kernel.mat(i, j, dd);
                let x = &data[j * d..(j + 1) * d];
                for r in 0..d {
                    let mut s = 0.0;
                    for c in 0..d {
                        s += g[r * d + c] * x[c];
                    }
                    out[i * d + r] += s;
                }
            }
        }
        Ok(out)
    }

    /// Weighted sup distance between two iterates on a piece.
    fn diff_norm(&self, plan: &PiecePlan, a: &[f64], b: &[f64]) -> f64 {
        let d = self.dim;
        let mut best = 0.0_f64;
        for i in plan.first_stored()..plan.nodes.len() {
            let w = weight(plan.nodes[i] - plan.piece.left, self.gamma);
            if w == 0.0 {
                continue;
            }
            let s: f64 = (0..d).map(|r| (a[i * d + r] - b[i * d + r]).powi(2)).sum();
            let v = w * s.sqrt();
            best = if v.is_nan() { f64::NAN } else { best.max(v) };
            if best.is_nan() {
                return best;
            }
        }
        best
    }

    fn impulse_piece(&self, plan: &PiecePlan, k: usize, left_value: &DVector<f64>) -> Result<Vec<f64>> {
        let d = self.dim;
        let zeta = &self.problem.impulses[k].zeta;
        let mut out = vec![0.0; plan.nodes.len() * d];
        let mut guess = left_value.clone();
        for (i, &t) in plan.nodes.iter().enumerate() {
            let (v, _) = impulse_fixed_point(zeta, t, &guess, self.cfg.impulse_tolerance, self.cfg.impulse_max_iterations)
                .map_err(|source| SolveError::Impulse { k, t, source })?;
            out[i * d..(i + 1) * d].copy_from_slice(v.as_slice());
            guess = v;
        }
        Ok(out)
    }

    /// The restart state `ζ_k(s_k, u(s_k))`.
    fn restart_state(&self, k: usize, u_sk: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.problem.impulses[k].s;
        self.problem.impulses[k]
            .zeta
            .eval(s, u_sk)
            .map_err(|e| SolveError::Impulse {
                k,
                t: s,
                source: ImpulseError::Eval(e),
            })
    }

    fn picard(&self, idx: usize, homog: &[f64]) -> Result<(Vec<f64>, SegmentReport)> {
        let plan = &self.plans[idx];
        let mut u = homog.to_vec();
        let mut ratios = Vec::new();
        let mut prev: Option<f64> = None;
        let mut first = None;
        for it in 1..=self.cfg.max_iterations {
            let next = self.apply_evolving(plan, homog, &u)?;
            let diff = self.diff_norm(plan, &next, &u);
            if let Some(p) = prev {
                if p > 0.0 {
                    ratios.push(diff / p);
                }
            }
            let first_diff = *first.get_or_insert(diff);
            if !diff.is_finite() || diff > DIVERGENCE_GROWTH * first_diff.max(f64::MIN_POSITIVE) {
                return Err(SolveError::Diverged {
                    segment: idx,
                    iteration: it,
                    last_diff: diff,
                    ratios,
                });
            }
            u = next;
            let scale = self.diff_norm(plan, &u, &vec![0.0; u.len()]).max(1.0);
            if diff <= self.cfg.tolerance * scale {
                debug!("segment {idx}: converged after {it} iterations, diff {diff:.3e}");
                return Ok((
                    u,
                    SegmentReport {
                        kind: plan.piece.kind,
                        iterations: it,
                        final_diff: diff,
                        ratios,
                    },
                ));
            }
            prev = Some(diff);
        }
        Err(SolveError::NoConvergence {
            segment: idx,
            iterations: self.cfg.max_iterations,
            last_diff: prev.unwrap_or(f64::NAN),
            ratios,
        })
    }

    fn last_value(flat: &[f64], d: usize) -> DVector<f64> {
        DVector::from_column_slice(&flat[flat.len() - d..])
    }

    /// Runs the causal iteration over all pieces.
    pub fn solve(&self) -> Result<SolveReport> {
        let d = self.dim;
        let mut flats: Vec<Vec<f64>> = Vec::with_capacity(self.plans.len());
        let mut reports = Vec::with_capacity(self.plans.len());
        for (idx, plan) in self.plans.iter().enumerate() {
            let (values, report) = match plan.piece.kind {
                SegmentKind::Initial => {
                    let homog = self.homogeneous(plan, &self.problem.u0);
                    self.picard(idx, &homog)?
                }
                SegmentKind::Impulse(k) => {
                    let left = Self::last_value(&flats[idx - 1], d);
                    let v = self.impulse_piece(plan, k, &left)?;
                    (
                        v,
                        SegmentReport {
                            kind: plan.piece.kind,
                            iterations: 0,
                            final_diff: 0.0,
                            ratios: Vec::new(),
                        },
                    )
                }
                SegmentKind::Evolution(k) => {
                    let u_sk = Self::last_value(&flats[idx - 1], d);
                    let z = self.restart_state(k, &u_sk)?;
                    let homog = self.homogeneous(plan, &z);
                    self.picard(idx, &homog)?
                }
            };
            flats.push(values);
            reports.push(report);
        }
        let trajectory = self.assemble(&flats)?;
        let mut warnings = Vec::new();
        let first = self.plans[0].nodes.len() - 1;
        if first > self.cfg.points_per_interval {
            warnings.push(format!(
                "first piece refined to {first} intervals so that its first node does not exceed t_min"
            ));
        }
        for (idx, r) in reports.iter().enumerate() {
            if let Some(worst) = r.ratios.iter().copied().filter(|x| *x >= 1.0).reduce(f64::max) {
                warnings.push(format!(
                    "segment {idx}: Picard differences grew at least once (largest ratio {worst:.3})"
                ));
            }
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        info!(
            "solved {} pieces, max Picard iterations {}",
            reports.len(),
            reports.iter().map(|r| r.iterations).max().unwrap_or(0)
        );
        Ok(SolveReport {
            trajectory,
            segments: reports,
            warnings,
        })
    }

    fn assemble(&self, flats: &[Vec<f64>]) -> Result<PiecewiseTrajectory> {
        let d = self.dim;
        let mut segs = Vec::with_capacity(self.plans.len());
        for (plan, flat) in self.plans.iter().zip(flats) {
            let s0 = plan.first_stored();
            let grid = plan.nodes[s0..].to_vec();
            let values = (s0..plan.nodes.len())
                .map(|i| DVector::from_column_slice(&flat[i * d..(i + 1) * d]))
                .collect();
            segs.push(Segment {
                kind: plan.piece.kind,
                left: plan.piece.left,
                right: plan.piece.right,
                samples: SampledFn::new(grid, values)?,
            });
        }
        Ok(PiecewiseTrajectory::new(segs, self.gamma)?)
    }

    /// One application of the mild-solution operator `F` to a trajectory on
    /// this solver's grid. Impulse pieces resolve `u = ζ_k(t, u)` starting
    /// from the given values.
    pub fn apply_f(&self, u: &PiecewiseTrajectory) -> Result<PiecewiseTrajectory> {
        let d = self.dim;
        if u.segments.len() != self.plans.len() || u.dim() != d {
            return Err(SolveError::Config("trajectory does not match the solver grid".into()));
        }
        let mut flats = Vec::with_capacity(self.plans.len());
        for (plan, seg) in self.plans.iter().zip(&u.segments) {
            let s0 = plan.first_stored();
            if seg.samples.grid.as_slice() != &plan.nodes[s0..] {
                return Err(SolveError::Config("trajectory does not match the solver grid".into()));
            }
            let mut flat = vec![0.0; plan.nodes.len() * d];
            for (i, v) in seg.samples.values.iter().enumerate() {
                flat[(i + s0) * d..(i + s0 + 1) * d].copy_from_slice(v.as_slice());
            }
            if s0 == 1 {
                // Node 0 is never read directly; keep it finite.
                let copy = flat[d..2 * d].to_vec();
                flat[..d].copy_from_slice(&copy);
            }
            flats.push(flat);
        }
        let mut out = Vec::with_capacity(flats.len());
        for (idx, plan) in self.plans.iter().enumerate() {
            let v = match plan.piece.kind {
                SegmentKind::Initial => {
                    let homog = self.homogeneous(plan, &self.problem.u0);
                    self.apply_evolving(plan, &homog, &flats[idx])?
                }
                SegmentKind::Impulse(k) => {
                    let zeta = &self.problem.impulses[k].zeta;
                    let mut v = vec![0.0; plan.nodes.len() * d];
                    for (i, &t) in plan.nodes.iter().enumerate() {
                        let guess = DVector::from_column_slice(&flats[idx][i * d..(i + 1) * d]);
                        let (x, _) = impulse_fixed_point(
                            zeta,
                            t,
                            &guess,
                            self.cfg.impulse_tolerance,
                            self.cfg.impulse_max_iterations,
                        )
                        .map_err(|source| SolveError::Impulse { k, t, source })?;
                        v[i * d..(i + 1) * d].copy_from_slice(x.as_slice());
                    }
                    v
                }
                SegmentKind::Evolution(k) => {
                    let u_sk = Self::last_value(&flats[idx - 1], d);
                    let z = self.restart_state(k, &u_sk)?;
                    let homog = self.homogeneous(plan, &z);
                    self.apply_evolving(plan, &homog, &flats[idx])?
                }
            };
            out.push(v);
        }
        self.assemble(&out)
    }

    /// `P(t)` at a node of the solver grid.
    pub fn p_at(&self, t: f64) -> Option<&DMatrix<f64>> {
        let i = self.p_table.grid.binary_search_by(|x| x.total_cmp(&t)).ok()?;
        Some(&self.p_table.p[i])
    }
}

#[inline]
fn weight(dt: f64, gamma: f64) -> f64 {
    if gamma == 1.0 {
        1.0
    } else {
        dt.powf(1.0 - gamma)
    }
}

/// Default intervals per piece: `n` everywhere, more on the first piece so
/// that its first node does not exceed `t_min`; always even, so that every
/// other node forms the grid of step `2h`.
pub fn default_counts(problem: &ProblemSpec, n: usize) -> Vec<usize> {
    problem
        .pieces()
        .iter()
        .map(|pc| {
            let c = if pc.kind == SegmentKind::Initial {
                n.max(((pc.right - pc.left) / problem.t_min()).ceil() as usize)
            } else {
                n
            };
            c + c % 2
        })
        .collect()
}

/// Solves the problem: tables, then causal Picard iteration piece by piece.
pub fn mild_solve(problem: &ProblemSpec, cfg: &SolverConfig) -> Result<SolveReport> {
    Solver::new(problem, cfg)?.solve()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::GeneratorMatrix;
    use crate::problem::{Declared, Impulse};
    use crate::specfun::mittag_leffler;

    fn scalar_problem(alpha: f64, beta: f64, lambda: f64, f: &str, impulses: Vec<Impulse>, horizon: f64) -> ProblemSpec {
        ProblemSpec {
            alpha,
            beta,
            a: GeneratorMatrix::scalar(lambda).unwrap(),
            u0: DVector::from_element(1, 1.0),
            f: StateFn::parse(f, 1).unwrap(),
            impulses,
            horizon,
            t_min: None,
            phi: None,
            psi: None,
            declared: Declared::default(),
        }
    }

    #[test]
    fn starting_weights_make_rules_exact_for_powers() {
        let (q, p) = (0.5, -0.5);
        let exps = fracops::starting_exponents(0.5, 0.5);
        let nodes = fracops::uniform_grid(0.0, 1.0, 50);
        for (i, p, skip) in [(1, p, true), (2, p, true), (3, p, true), (10, p, true), (50, p, true), (3, 0.0, false), (50, 0.0, false)] {
            let st = fracops::StartingWeights::new(exps.clone(), skip);
            let mut w = fracops::product_weights(&nodes, 0.0, i, q, p);
            st.correct(&mut w, i, 0.02, q, p);
            let t = nodes[i];
            let n = i.min(exps.len());
            for &e in &exps[..n] {
                let exact = t.powf(q + p + e) * crate::specfun::beta(p + e + 1.0, q);
                let rule: f64 = (0..=i).map(|j| w[j] * nodes[j].powf(e)).sum();
                assert!((rule - exact).abs() < 1e-10 * exact.abs().max(1.0), "i={i} e={e} {rule} {exact}");
            }
        }
    }

    #[test]
    fn constant_impulse_converges_at_once() {
        let z = StateFn::parse("0.3", 1).unwrap();
        let (v, it) = impulse_fixed_point(&z, 1.0, &DVector::from_element(1, 5.0), 1e-12, 50).unwrap();
        assert_eq!(v[0], 0.3);
        assert!(it <= 2);
    }

    #[test]
    fn expanding_impulse_is_rejected() {
        let z = StateFn::parse("2*u1 + 1", 1).unwrap();
        let err = impulse_fixed_point(&z, 1.0, &DVector::from_element(1, 0.0), 1e-12, 50).unwrap_err();
        assert!(matches!(err, ImpulseError::NotContractive { .. }));
    }

    #[test]
    fn zero_forcing_gives_p_times_datum() {
        let p = scalar_problem(0.6, 0.4, 1.0, "0", vec![], 1.0);
        let cfg = SolverConfig {
            points_per_interval: 50,
            ..Default::default()
        };
        let mut p2 = p.clone();
        p2.t_min = Some(0.02);
        let rep = mild_solve(&p2, &cfg).unwrap();
        let g = p.gamma();
        let seg = &rep.trajectory.segments[0];
        for (t, v) in seg.samples.grid.iter().zip(&seg.samples.values) {
            let exact = t.powf(g - 1.0) * mittag_leffler(0.6, g, -t.powf(0.6)).unwrap();
            assert!((v[0] - exact).abs() < 1e-9 * exact.abs().max(1.0), "t={t}");
        }
    }

    #[test]
    fn classical_linear_case_matches_closed_form() {
        // u' = -u + 1, u(0) = 1 → u ≡ 1.
        let mut p = scalar_problem(1.0, 0.0, 0.5, "-0.5*u1 + 1", vec![], 1.0);
        p.t_min = Some(0.01);
        let rep = mild_solve(&p, &SolverConfig::default()).unwrap();
        for v in &rep.trajectory.segments[0].samples.values {
            assert!((v[0] - 1.0).abs() < 5e-7, "{}", v[0]);
        }
    }

    #[test]
    fn impulse_piece_holds_fixed_point() {
        let imp = Impulse {
            t: 0.4,
            s: 0.6,
            zeta: StateFn::parse("0.5*u1 + 0.1", 1).unwrap(),
            k_zeta: Some(0.5),
        };
        let mut p = scalar_problem(0.8, 0.5, 1.0, "-u1", vec![imp], 1.0);
        p.t_min = Some(0.01);
        let cfg = SolverConfig {
            points_per_interval: 40,
            ..Default::default()
        };
        let rep = mild_solve(&p, &cfg).unwrap();
        assert_eq!(rep.trajectory.segments.len(), 3);
        for v in &rep.trajectory.segments[1].samples.values {
            assert!((v[0] - 0.2).abs() < 1e-10);
        }
    }
}
