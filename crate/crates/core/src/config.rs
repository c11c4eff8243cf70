//! TOML problem files.
//!
//! ```toml
//! schema_version = 1
//!
//! [problem]
//! alpha = 0.6
//! beta = 0.5
//! dimension = 1
//! A = [1.0]            # row-major, dimension² entries
//! u0 = [1.0]
//! horizon = 1.0
//!
//! [forcing]
//! f = ["-u1 + sin(t)"]
//! phi = "1"            # optional growth envelope, over t
//! psi = "r"            # optional, over r
//!
//! [[impulse]]
//! t = 0.3
//! s = 0.4
//! zeta = ["0.5*u1 + 0.1"]
//! ```

use std::path::Path;

use nalgebra::DVector;
use serde::Deserialize;
use thiserror::Error;

use crate::checker::SamplingConfig;
use crate::expr::{self, StateFn};
use crate::operators::{GeneratorMatrix, KernelExponent, ThetaSettings};
use crate::problem::{Declared, Impulse, ProblemSpec};
use crate::solver::SolverConfig;
use crate::verifier::ResidualOptions;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema_version: u32,
    pub problem: ProblemSection,
    #[serde(default)]
    pub forcing: ForcingSection,
    #[serde(default, rename = "impulse")]
    pub impulses: Vec<ImpulseSection>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub quadrature: QuadratureSection,
    #[serde(default)]
    pub checker: CheckerSection,
    #[serde(default)]
    pub verify: VerifySection,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub alpha: f64,
    pub beta: f64,
    pub dimension: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    pub u0: Vec<f64>,
    pub horizon: f64,
    pub t_min: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct ForcingSection {
    /// One expression per component; omitted means `f ≡ 0`.
    pub f: Option<Vec<String>>,
    pub phi: Option<String>,
    pub psi: Option<String>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ImpulseSection {
    pub t: f64,
    pub s: f64,
    pub zeta: Vec<String>,
    #[serde(rename = "K_zeta")]
    pub k_zeta: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub points_per_interval: usize,
    pub max_picard_iters: usize,
    pub picard_tol: f64,
    pub impulse_tol: f64,
    pub impulse_max_iters: usize,
    pub kernel_exponent: String,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            points_per_interval: d.points_per_interval,
            max_picard_iters: d.max_iterations,
            picard_tol: d.tolerance,
            impulse_tol: d.impulse_tolerance,
            impulse_max_iters: d.impulse_max_iterations,
            kernel_exponent: d.kernel_exponent.label().into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSection {
    pub theta_nodes: usize,
    pub theta_tail_tol: f64,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        let d = ThetaSettings::default();
        Self {
            theta_nodes: d.nodes,
            theta_tail_tol: d.tail_tol,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CheckerSection {
    pub samples: usize,
    pub seed: u64,
    pub state_radius: f64,
    #[serde(rename = "M")]
    pub m: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<f64>,
    #[serde(rename = "Lambda")]
    pub lambda: Option<f64>,
    #[serde(rename = "L")]
    pub l: Option<f64>,
    pub rho: Option<f64>,
    /// Lipschitz constant of `f` in `u`, used on every window.
    pub lipschitz_f: Option<f64>,
}

impl Default for CheckerSection {
    fn default() -> Self {
        let d = SamplingConfig::default();
        Self {
            samples: d.samples,
            seed: d.seed,
            state_radius: d.state_radius,
            m: None,
            k: None,
            lambda: None,
            l: None,
            rho: None,
            lipschitz_f: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub residual_tol: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            residual_tol: ResidualOptions::default().residual_tol,
        }
    }
}

/// Everything a command needs, parsed and validated.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub file: ProblemFile,
    pub problem: ProblemSpec,
    pub solver: SolverConfig,
    pub sampling: SamplingConfig,
    pub residual: ResidualOptions,
}

impl ProblemFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ProblemFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Invalid(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn kernel_exponent(&self) -> Result<KernelExponent> {
        KernelExponent::parse(&self.solver.kernel_exponent).ok_or_else(|| {
            ConfigError::Invalid(format!(
                "[solver] kernel_exponent must be \"alpha-1\" or \"gamma-1\", got {:?}",
                self.solver.kernel_exponent
            ))
        })
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let p = &self.problem;
        let d = p.dimension;
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if d == 0 {
            return invalid("[problem] dimension must be at least 1".into());
        }
        if p.a.len() != d * d {
            return invalid(format!("[problem] A needs {} entries (row-major), got {}", d * d, p.a.len()));
        }
        if p.u0.len() != d {
            return invalid(format!("[problem] u0 needs {d} entries, got {}", p.u0.len()));
        }
        let a = GeneratorMatrix::from_row_major(d, &p.a).map_err(|e| ConfigError::Invalid(format!("[problem] A: {e}")))?;
        let f = match &self.forcing.f {
            Some(parts) => state_fn(parts, d, "[forcing] f")?,
            None => state_fn(&vec!["0".to_string(); d], d, "[forcing] f")?,
        };
        let scalar = |text: &Option<String>, var: &str, what: &str| -> Result<Option<expr::Expr>> {
            let Some(text) = text else { return Ok(None) };
            let e = expr::parse(text).map_err(|e| ConfigError::Invalid(format!("{what}: {e}")))?;
            if let Some(bad) = e.variables().into_iter().find(|v| v != var) {
                return Err(ConfigError::Invalid(format!("{what} may only use `{var}`, found `{bad}`")));
            }
            Ok(Some(e))
        };
        let phi = scalar(&self.forcing.phi, "t", "[forcing] phi")?;
        let psi = scalar(&self.forcing.psi, "r", "[forcing] psi")?;
        let mut impulses = Vec::with_capacity(self.impulses.len());
        for (n, imp) in self.impulses.iter().enumerate() {
            impulses.push(Impulse {
                t: imp.t,
                s: imp.s,
                zeta: state_fn(&imp.zeta, d, &format!("[[impulse]] #{} zeta", n + 1))?,
                k_zeta: imp.k_zeta,
            });
        }
        let c = &self.checker;
        let spec = ProblemSpec {
            alpha: p.alpha,
            beta: p.beta,
            a,
            u0: DVector::from_column_slice(&p.u0),
            f,
            impulses,
            horizon: p.horizon,
            t_min: p.t_min,
            phi,
            psi,
            declared: Declared {
                m: c.m,
                k: c.k,
                lambda: c.lambda,
                l: c.l,
                rho: c.rho,
                lipschitz_f: c.lipschitz_f,
            },
        };
        spec.validate().map_err(|e| ConfigError::Invalid(e.0))?;
        Ok(spec)
    }

    pub fn theta(&self) -> ThetaSettings {
        ThetaSettings {
            nodes: self.quadrature.theta_nodes,
            tail_tol: self.quadrature.theta_tail_tol,
        }
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let s = &self.solver;
        let cfg = SolverConfig {
            points_per_interval: s.points_per_interval,
            max_iterations: s.max_picard_iters,
            tolerance: s.picard_tol,
            impulse_tolerance: s.impulse_tol,
            impulse_max_iterations: s.impulse_max_iters,
            theta: self.theta(),
            kernel_exponent: self.kernel_exponent()?,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(format!("[solver] {e}")))?;
        if self.quadrature.theta_nodes < 8 || !(self.quadrature.theta_tail_tol > 0.0) {
            return Err(ConfigError::Invalid(
                "[quadrature] theta_nodes must be at least 8 and theta_tail_tol positive".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn load(self) -> Result<Loaded> {
        let problem = self.problem_spec()?;
        let solver = self.solver_config()?;
        let sampling = SamplingConfig {
            samples: self.checker.samples,
            seed: self.checker.seed,
            state_radius: self.checker.state_radius,
        };
        if !(self.verify.residual_tol > 0.0) {
            return Err(ConfigError::Invalid("[verify] residual_tol must be positive".into()));
        }
        let residual = ResidualOptions {
            theta: solver.theta,
            kernel_exponent: solver.kernel_exponent,
            picard_tol: solver.tolerance,
            residual_tol: self.verify.residual_tol,
        };
        Ok(Loaded {
            file: self,
            problem,
            solver,
            sampling,
            residual,
        })
    }
}

fn state_fn(parts: &[String], d: usize, what: &str) -> Result<StateFn> {
    if parts.len() != d {
        return Err(ConfigError::Invalid(format!("{what} needs {d} component(s), got {}", parts.len())));
    }
    let slots = expr::state_slots(d);
    let mut exprs = Vec::with_capacity(d);
    for (i, text) in parts.iter().enumerate() {
        let e = expr::parse(text).map_err(|e| ConfigError::Invalid(format!("{what}[{}]: {e}", i + 1)))?;
        if let Some(bad) = e.variables().into_iter().find(|v| !slots.contains(v)) {
            return Err(ConfigError::Invalid(format!(
                "{what}[{}]: unknown variable `{bad}` (allowed: {})",
                i + 1,
                slots.join(", ")
            )));
        }
        exprs.push(e);
    }
    StateFn::new(exprs, d).map_err(|e| ConfigError::Invalid(format!("{what}: {e}")))
}
