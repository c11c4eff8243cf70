//! Problem data: orders, generator, forcing, impulse schedule.

use nalgebra::DVector;
use thiserror::Error;

use crate::expr::{Expr, StateFn};
use crate::fracops::SegmentKind;
use crate::operators::GeneratorMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid problem: {0}")]
pub struct ProblemError(pub String);

/// Non-instantaneous impulse: `u(t) = ζ(t, u(t))` on `(t, s]`.
#[derive(Debug, Clone)]
pub struct Impulse {
    pub t: f64,
    pub s: f64,
    pub zeta: StateFn,
    /// Declared Lipschitz constant of `ζ` in `u`.
    pub k_zeta: Option<f64>,
}

/// Constants the user may declare instead of having them estimated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Declared {
    pub m: Option<f64>,
    pub k: Option<f64>,
    pub lambda: Option<f64>,
    pub l: Option<f64>,
    pub rho: Option<f64>,
    /// Lipschitz constant of `f` in `u`, used for every window.
    pub lipschitz_f: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub alpha: f64,
    pub beta: f64,
    pub a: GeneratorMatrix,
    /// Datum of `I^{1-γ} u(0) = u0`.
    pub u0: DVector<f64>,
    /// Forcing `f(t, u)` over the variables `t, u1..ud`.
    pub f: StateFn,
    pub impulses: Vec<Impulse>,
    pub horizon: f64,
    /// Largest admissible first grid time on `[0, t_1]`; defaults to
    /// `1e-3 · horizon`.
    pub t_min: Option<f64>,
    /// Growth envelope `‖f(t,u)‖ ≤ φ(t) Ψ(‖u‖)`: `φ` over `t`, `Ψ` over `r`.
    pub phi: Option<Expr>,
    pub psi: Option<Expr>,
    pub declared: Declared,
}

/// One piece of the partition `[0,t_1], (t_1,s_1], (s_1,t_2], …`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub kind: SegmentKind,
    pub left: f64,
    pub right: f64,
}

impl ProblemSpec {
    pub fn gamma(&self) -> f64 {
        self.alpha + self.beta * (1.0 - self.alpha)
    }

    pub fn dim(&self) -> usize {
        self.u0.len()
    }

    pub fn t_min(&self) -> f64 {
        self.t_min.unwrap_or(1e-3 * self.horizon)
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let err = |m: String| Err(ProblemError(m));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return err(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return err(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        let d = self.dim();
        if d == 0 {
            return err("dimension must be at least 1".into());
        }
        if self.a.dim() != d {
            return err(format!("A is {}x{} but u0 has {d} entries", self.a.dim(), self.a.dim()));
        }
        if self.f.dim() != d {
            return err(format!("f has {} components, expected {d}", self.f.dim()));
        }
        if self.u0.iter().any(|x| !x.is_finite()) {
            return err("u0 must be finite".into());
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return err(format!("horizon must be positive, got {}", self.horizon));
        }
        if let Some(tm) = self.t_min {
            if !(tm > 0.0 && tm <= self.horizon) {
                return err(format!("t_min must lie in (0, horizon], got {tm}"));
            }
        }
        let mut prev = 0.0;
        let mut prev_name = "0".to_string();
        for (k, imp) in self.impulses.iter().enumerate() {
            let n = k + 1;
            if imp.zeta.dim() != d {
                return err(format!("impulse {n}: zeta has {} components, expected {d}", imp.zeta.dim()));
            }
            if !(imp.t > prev) {
                return err(format!(
                    "partition must satisfy 0 < t_1 < s_1 < t_2 < ... < s_m < horizon: t_{n} = {} does not exceed {prev_name} = {prev}",
                    imp.t
                ));
            }
            if !(imp.s > imp.t) {
                return err(format!(
                    "partition must satisfy 0 < t_1 < s_1 < t_2 < ... < s_m < horizon: s_{n} = {} does not exceed t_{n} = {}",
                    imp.s, imp.t
                ));
            }
            if let Some(kz) = imp.k_zeta {
                if !(kz >= 0.0) {
                    return err(format!("impulse {n}: K_zeta must be nonnegative"));
                }
            }
            prev = imp.s;
            prev_name = format!("s_{n}");
        }
        if !(self.horizon > prev) {
            return err(format!(
                "partition must satisfy 0 < t_1 < s_1 < t_2 < ... < s_m < horizon: horizon {} does not exceed {prev_name} = {prev}",
                self.horizon
            ));
        }
        for (name, v) in [
            ("M", self.declared.m),
            ("K", self.declared.k),
            ("Lambda", self.declared.lambda),
            ("L", self.declared.l),
            ("rho", self.declared.rho),
            ("lipschitz", self.declared.lipschitz_f),
        ] {
            if let Some(x) = v {
                if !(x >= 0.0) || !x.is_finite() {
                    return err(format!("declared {name} must be finite and nonnegative, got {x}"));
                }
            }
        }
        if let Some(m) = self.declared.m {
            if m < 1.0 {
                return err(format!("declared M must be at least 1, got {m}"));
            }
        }
        Ok(())
    }

    /// The partition pieces in time order.
    pub fn pieces(&self) -> Vec<Piece> {
        let first_end = self.impulses.first().map(|i| i.t).unwrap_or(self.horizon);
        let mut out = vec![Piece {
            kind: SegmentKind::Initial,
            left: 0.0,
            right: first_end,
        }];
        for (k, imp) in self.impulses.iter().enumerate() {
            let next = self.impulses.get(k + 1).map(|i| i.t).unwrap_or(self.horizon);
            out.push(Piece {
                kind: SegmentKind::Impulse(k),
                left: imp.t,
                right: imp.s,
            });
            out.push(Piece {
                kind: SegmentKind::Evolution(k),
                left: imp.s,
                right: next,
            });
        }
        out
    }

    /// Windows `[s_k, t_{k+1}]` with `s_0 = 0` on which `f` acts.
    pub fn forcing_windows(&self) -> Vec<(f64, f64)> {
        self.pieces()
            .into_iter()
            .filter(|p| !matches!(p.kind, SegmentKind::Impulse(_)))
            .map(|p| (p.left, p.right))
            .collect()
    }
}
