//! Post-hoc checks of a computed trajectory against the integral form of
//! the problem and the weighted initial condition.

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::expr::ExprError;
use log::warn;

use crate::fracops::{self, FracError, PiecewiseTrajectory, SampledFn, Segment, SegmentKind};
use crate::operators::{GAlpha, KernelExponent, OpError, OperatorTable, ThetaSettings};
use crate::problem::{ProblemError, ProblemSpec};
use crate::solver::{Solver, SolverConfig};
use crate::specfun::rgamma;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("trajectory does not match the problem partition: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Frac(#[from] FracError),
    #[error(transparent)]
    Operator(#[from] OpError),
    #[error("evaluating at t = {t}: {source}")]
    Eval { t: f64, source: ExprError },
}

pub type Result<T> = std::result::Result<T, VerifyError>;

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualOptions {
    pub theta: ThetaSettings,
    pub kernel_exponent: KernelExponent,
    pub picard_tol: f64,
    /// Pass threshold for the largest segment residual.
    pub residual_tol: f64,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        Self {
            theta: ThetaSettings::default(),
            kernel_exponent: KernelExponent::default(),
            picard_tol: 1e-10,
            residual_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentResidual {
    pub segment: usize,
    pub kind: String,
    pub left: f64,
    pub right: f64,
    /// Weighted sup residual on the full grid.
    pub residual: f64,
    /// Same residual recomputed on every other node.
    pub coarse_residual: f64,
    /// Largest change of the pointwise residual between the two grids: the
    /// error of the residual's own quadrature.
    pub quadrature_shift: f64,
    /// Weighted defect of the trajectory, taken on every other node, under
    /// the solver's discrete operator at double step: a Richardson-type
    /// bound on the discretisation error of the trajectory (`None` when
    /// the grid cannot be halved).
    pub coarse_defect: Option<f64>,
    /// `quadrature_shift + coarse_defect`.
    pub quadrature_term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub segments: Vec<SegmentResidual>,
    pub initial_condition_defect: f64,
    pub kernel_exponent: String,
    pub picard_tol: f64,
    pub residual_tol: f64,
    pub max_residual: f64,
    /// Every segment satisfies `residual ≤ 50·picard_tol + quadrature_term`.
    pub within_quadrature_bound: bool,
    pub passed: bool,
}

pub fn kind_label(kind: SegmentKind) -> String {
    match kind {
        SegmentKind::Initial => "initial".into(),
        SegmentKind::Impulse(k) => format!("impulse_{}", k + 1),
        SegmentKind::Evolution(k) => format!("evolution_{}", k + 1),
    }
}

fn check_partition(p: &ProblemSpec, traj: &PiecewiseTrajectory) -> Result<()> {
    let pieces = p.pieces();
    if pieces.len() != traj.segments.len() {
        return Err(VerifyError::GridMismatch(format!(
            "expected {} segments, found {}",
            pieces.len(),
            traj.segments.len()
        )));
    }
    if traj.dim() != p.dim() {
        return Err(VerifyError::GridMismatch(format!("expected dimension {}, found {}", p.dim(), traj.dim())));
    }
    for (k, (pc, seg)) in pieces.iter().zip(&traj.segments).enumerate() {
        if pc.kind != seg.kind || pc.left != seg.left || pc.right != seg.right {
            return Err(VerifyError::GridMismatch(format!(
                "segment {k} is {} on [{}, {}], expected {} on [{}, {}]",
                kind_label(seg.kind),
                seg.left,
                seg.right,
                kind_label(pc.kind),
                pc.left,
                pc.right
            )));
        }
        let need = if pc.kind == SegmentKind::Initial { 8 } else { 3 };
        if seg.samples.len() < need {
            return Err(VerifyError::GridMismatch(format!("segment {k} has too few samples")));
        }
    }
    Ok(())
}

fn subsample(f: &SampledFn, keep: impl Fn(usize) -> bool) -> Result<SampledFn> {
    let idx: Vec<usize> = (0..f.len()).filter(|&i| keep(i)).collect();
    Ok(SampledFn::new(
        idx.iter().map(|&i| f.grid[i]).collect(),
        idx.iter().map(|&i| f.values[i].clone()).collect(),
    )?)
}

fn weight(dt: f64, gamma: f64) -> f64 {
    if gamma == 1.0 {
        1.0
    } else {
        dt.powf(1.0 - gamma)
    }
}

/// Pointwise weighted residual of the initial piece:
/// `u - t^{γ-1}u0/Γ(γ) - I^α[f - Au]`, with `f - Au = s^{γ-1} h(s)`.
fn initial_residual(p: &ProblemSpec, u: &SampledFn) -> Result<Vec<(f64, f64)>> {
    let gamma = p.gamma();
    let a = p.a.matrix();
    let mut hv = Vec::with_capacity(u.len());
    for (t, v) in u.grid.iter().zip(&u.values) {
        let fv = p.f.eval(*t, v).map_err(|source| VerifyError::Eval { t: *t, source })?;
        hv.push((fv - a * v) * weight(*t, gamma));
    }
    let h = SampledFn::new(u.grid.clone(), hv)?;
    let exps = fracops::singular_exponents(p.alpha, gamma);
    // Same rule as the solver: no power expansion of f∘u to correct for
    // when f is nonlinear in a singular u.
    let expandable = gamma == 1.0 || p.f.is_affine_in_state();
    let integral = if !expandable {
        fracops::rl_integral_weighted(p.alpha, gamma - 1.0, &h, 0.0, None)
    } else if fracops::uniform_step(&u.grid).is_some() {
        fracops::rl_integral_corrected(p.alpha, gamma - 1.0, &h, 0.0, &exps)
    } else {
        Err(FracError::Domain("non-uniform grid".into()))
    }
    .or_else(|_| fracops::rl_integral_weighted(p.alpha, gamma - 1.0, &h, 0.0, Some(&fracops::expansion_exponents(p.alpha))))?;
    let c0 = rgamma(gamma);
    Ok(u
        .grid
        .iter()
        .zip(&u.values)
        .zip(&integral.values)
        .map(|((t, v), iv)| {
            let w = weight(*t, gamma);
            let lead = &p.u0 * (c0 / w);
            (*t, w * (v - lead - iv).norm())
        })
        .collect())
}

/// Pointwise weighted residual of an evolving piece after the restart:
/// `v - I^α_{s_k}[f - Av]` with `v = u - P(t) ζ_k(s_k, u(s_k))`.
fn evolution_residual(p: &ProblemSpec, u: &SampledFn, homog: &[DVector<f64>], left: f64) -> Result<Vec<(f64, f64)>> {
    let gamma = p.gamma();
    let a = p.a.matrix();
    let v: Vec<DVector<f64>> = u.values.iter().zip(homog).map(|(x, h)| x - h).collect();
    let mut data = Vec::with_capacity(u.len());
    for ((t, x), vv) in u.grid.iter().zip(&u.values).zip(&v) {
        let fv = p.f.eval(*t, x).map_err(|source| VerifyError::Eval { t: *t, source })?;
        data.push(fv - a * vv);
    }
    let data = SampledFn::new(u.grid.clone(), data)?;
    let integral = fracops::rl_integral(p.alpha, &data, left)?;
    Ok(u
        .grid
        .iter()
        .zip(&v)
        .zip(&integral.values)
        .map(|((t, vv), iv)| (*t, weight(t - left, gamma) * (vv - iv).norm()))
        .collect())
}

fn sup(r: &[(f64, f64)]) -> f64 {
    r.iter().map(|x| x.1).fold(0.0, f64::max)
}

/// Largest change of the pointwise residual at nodes shared by both grids.
fn shift(fine: &[(f64, f64)], coarse: &[(f64, f64)]) -> f64 {
    let mut out = 0.0_f64;
    let mut j = 0;
    for (t, r) in coarse {
        while j < fine.len() && fine[j].0 < *t {
            j += 1;
        }
        if j < fine.len() && fine[j].0 == *t {
            out = out.max((fine[j].1 - r).abs());
        }
    }
    out
}

/// Residual of the integral form on every segment. Impulse pieces report
/// the unweighted `‖u - ζ_k(t, u)‖`.
pub fn integral_residual(p: &ProblemSpec, traj: &PiecewiseTrajectory, opts: &ResidualOptions) -> Result<ResidualReport> {
    p.validate()?;
    check_partition(p, traj)?;
    let gamma = p.gamma();

    // P at every evolution node, for the restart term.
    let mut p_times: Vec<f64> = traj
        .segments
        .iter()
        .filter(|s| matches!(s.kind, SegmentKind::Evolution(_)))
        .flat_map(|s| s.samples.grid.iter().copied())
        .collect();
    p_times.sort_by(f64::total_cmp);
    p_times.dedup();
    let table = if p_times.is_empty() {
        None
    } else {
        let g = GAlpha::new(&p.a, p.alpha, opts.theta)?;
        Some(OperatorTable::build(&p.a, &g, p.beta, &p_times, opts.kernel_exponent)?)
    };
    let p_at = |t: f64| {
        let tb = table.as_ref().expect("table built for evolution nodes");
        let i = tb.grid.binary_search_by(|x| x.total_cmp(&t)).expect("node in table");
        &tb.p[i]
    };

    let defects = coarse_defects(p, traj, opts);
    let mut segments = Vec::with_capacity(traj.segments.len());
    for (idx, seg) in traj.segments.iter().enumerate() {
        let u = &seg.samples;
        let (fine, coarse) = match seg.kind {
            SegmentKind::Initial => {
                let fine = initial_residual(p, u)?;
                let coarse = initial_residual(p, &subsample(u, |i| i % 2 == 1)?)?;
                (fine, coarse)
            }
            SegmentKind::Impulse(k) => {
                let zeta = &p.impulses[k].zeta;
                let mut r = Vec::with_capacity(u.len());
                for (t, v) in u.grid.iter().zip(&u.values) {
                    let z = zeta.eval(*t, v).map_err(|source| VerifyError::Eval { t: *t, source })?;
                    r.push((*t, (v - z).norm()));
                }
                (r.clone(), r)
            }
            SegmentKind::Evolution(k) => {
                let prev = &traj.segments[idx - 1].samples;
                let u_sk = prev.values.last().expect("nonempty segment");
                let s_k = p.impulses[k].s;
                let z = p.impulses[k]
                    .zeta
                    .eval(s_k, u_sk)
                    .map_err(|source| VerifyError::Eval { t: s_k, source })?;
                let homog: Vec<DVector<f64>> = u.grid.iter().map(|t| p_at(*t) * &z).collect();
                let fine = evolution_residual(p, u, &homog, seg.left)?;
                let keep = |i: usize| i % 2 == 0;
                let sub = subsample(u, keep)?;
                let sub_h: Vec<DVector<f64>> = homog
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| keep(*i))
                    .map(|(_, h)| h.clone())
                    .collect();
                let coarse = evolution_residual(p, &sub, &sub_h, seg.left)?;
                (fine, coarse)
            }
        };
        let quadrature_shift = shift(&fine, &coarse);
        let coarse_defect = defects.as_ref().map(|d| d[idx]);
        segments.push(SegmentResidual {
            segment: idx,
            kind: kind_label(seg.kind),
            left: seg.left,
            right: seg.right,
            residual: sup(&fine),
            coarse_residual: sup(&coarse),
            quadrature_shift,
            coarse_defect,
            quadrature_term: quadrature_shift + coarse_defect.unwrap_or(0.0),
        });
    }
    let max_residual = segments.iter().map(|s| s.residual).fold(0.0, f64::max);
    let within = segments
        .iter()
        .all(|s| s.residual <= 50.0 * opts.picard_tol + s.quadrature_term);
    let ic = initial_condition_check(traj, gamma, p.alpha, &p.u0)?;
    Ok(ResidualReport {
        segments,
        initial_condition_defect: ic,
        kernel_exponent: opts.kernel_exponent.label().into(),
        picard_tol: opts.picard_tol,
        residual_tol: opts.residual_tol,
        max_residual,
        within_quadrature_bound: within,
        passed: max_residual.is_finite() && max_residual <= opts.residual_tol,
    })
}

/// Per-segment weighted sup of `F_{2h}(u) - u` on the nodes of the halved
/// grid, where `F_{2h}` is the solver's discrete operator at double step.
/// For `u` a fixed point of `F_h` this estimates the consistency error of
/// the discretisation from above.
fn coarse_defects(p: &ProblemSpec, traj: &PiecewiseTrajectory, opts: &ResidualOptions) -> Option<Vec<f64>> {
    // Intervals per piece; the initial piece does not store its base node.
    let counts: Vec<usize> = traj
        .segments
        .iter()
        .map(|s| s.samples.len() - usize::from(s.kind != SegmentKind::Initial))
        .collect();
    if counts.iter().any(|c| c % 2 == 1 || *c < 16) {
        return None;
    }
    let half: Vec<usize> = counts.iter().map(|c| c / 2).collect();
    let cfg = SolverConfig {
        points_per_interval: 8,
        tolerance: opts.picard_tol,
        theta: opts.theta,
        kernel_exponent: opts.kernel_exponent,
        ..SolverConfig::default()
    };
    let solver = match Solver::with_counts(p, &cfg, &half) {
        Ok(s) => s,
        Err(e) => {
            warn!("coarse operator unavailable: {e}");
            return None;
        }
    };
    let mut segs = Vec::with_capacity(traj.segments.len());
    for (seg, grid) in traj.segments.iter().zip(solver.piece_grids()) {
        let offset = usize::from(seg.kind == SegmentKind::Initial);
        let values: Vec<DVector<f64>> = (0..grid.len()).map(|k| seg.samples.values[2 * k + offset].clone()).collect();
        let close = grid
            .iter()
            .enumerate()
            .all(|(k, t)| (t - seg.samples.grid[2 * k + offset]).abs() <= 1e-12 * t.abs().max(1.0));
        if !close {
            return None;
        }
        segs.push(Segment {
            kind: seg.kind,
            left: seg.left,
            right: seg.right,
            samples: SampledFn::new(grid, values).ok()?,
        });
    }
    let sub = PiecewiseTrajectory::new(segs, traj.gamma).ok()?;
    let image = match solver.apply_f(&sub) {
        Ok(x) => x,
        Err(e) => {
            warn!("coarse operator failed: {e}");
            return None;
        }
    };
    let gamma = p.gamma();
    Some(
        sub.segments
            .iter()
            .zip(&image.segments)
            .map(|(a, b)| {
                let impulse = matches!(a.kind, SegmentKind::Impulse(_));
                a.samples
                    .grid
                    .iter()
                    .zip(a.samples.values.iter().zip(&b.samples.values))
                    .map(|(t, (x, y))| {
                        let w = if impulse { 1.0 } else { weight(t - a.left, gamma) };
                        w * (x - y).norm()
                    })
                    .fold(0.0, f64::max)
            })
            .collect(),
    )
}

/// `‖lim_{t→0+} I^{1-γ}u(t) - u0‖`, the limit taken by Richardson
/// extrapolation through the two smallest nodes of the first segment. For a
/// mild solution `I^{1-γ}u(t) = u0 + O(t^α)`, so the error model is `c t^α`.
pub fn initial_condition_check(traj: &PiecewiseTrajectory, gamma: f64, alpha: f64, u0: &DVector<f64>) -> Result<f64> {
    let u = &traj.segments[0].samples;
    if u.len() < 2 {
        return Err(VerifyError::GridMismatch("first segment needs two samples".into()));
    }
    let base = traj.segments[0].left;
    let values = if gamma == 1.0 {
        u.values.clone()
    } else {
        // I^{1-γ}[s^{γ-1} h] with h = s^{1-γ} u.
        let hv = u
            .grid
            .iter()
            .zip(&u.values)
            .map(|(t, v)| v * (t - base).powf(1.0 - gamma))
            .collect();
        let h = SampledFn::new(u.grid.clone(), hv)?;
        let exps = fracops::expansion_exponents(alpha);
        let fit = (h.len() > exps.len()).then_some(exps.as_slice());
        fracops::rl_integral_weighted(1.0 - gamma, gamma - 1.0, &h, base, fit)?.values
    };
    let (t1, t2) = ((u.grid[0] - base).powf(alpha), (u.grid[1] - base).powf(alpha));
    let limit = (&values[0] * t2 - &values[1] * t1) / (t2 - t1);
    Ok((limit - u0).norm())
}
