//! Existence certificate: the constants `M, K, Λ, L, ρ` and the contraction
//! criterion `M·max{ρΛ + K, K + 4KL} < 1`, together with the variant
//! `M·max{ρΛ + K, K + 4L} < 1` that the estimate of the measure of
//! non-compactness actually produces.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{self, Expr, ExprError, VarRange};
use crate::operators::{self, OpError};
use crate::problem::{ProblemError, ProblemSpec};
use crate::quad;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Operator(#[from] OpError),
    #[error("sampling {what}: {source}")]
    Sampling { what: String, source: ExprError },
    #[error("{0}")]
    Spec(String),
}

pub type Result<T> = std::result::Result<T, CheckError>;

/// How the Lipschitz constants are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SamplingConfig {
    pub samples: usize,
    pub seed: u64,
    /// Each state component ranges over `[-R, R]`.
    pub state_radius: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            seed: 0,
            state_radius: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Declared,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constants {
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "Lambda")]
    pub lambda: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub rho: f64,
    pub provenance: BTreeMap<String, Provenance>,
    /// Per-impulse `K_ζk`.
    pub k_zeta: Vec<f64>,
    /// Per-window `L_k` (before multiplying by the window length).
    pub l_windows: Vec<f64>,
    /// Per-window `‖φ‖_{L¹}`.
    pub phi_norms: Vec<f64>,
}

impl Constants {
    /// Constants with every provenance set to `declared`.
    pub fn declared(m: f64, k: f64, lambda: f64, l: f64, rho: f64) -> Self {
        let provenance = ["M", "K", "Lambda", "L", "rho"]
            .into_iter()
            .map(|n| (n.to_string(), Provenance::Declared))
            .collect();
        Self {
            m,
            k,
            lambda,
            l,
            rho,
            provenance,
            k_zeta: Vec::new(),
            l_windows: Vec::new(),
            phi_norms: Vec::new(),
        }
    }

    fn all_declared(&self) -> bool {
        self.provenance.values().all(|p| *p == Provenance::Declared)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    fn strict(lhs: f64) -> Self {
        // NaN compares false and therefore fails.
        if lhs < 1.0 {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExistenceCertificate {
    pub constants: Constants,
    /// `M·max{ρΛ + K, K + 4KL}`.
    pub lhs_paper: f64,
    /// `M·max{ρΛ + K, K + 4L}`.
    pub lhs_derivation: f64,
    pub verdict_paper: Verdict,
    pub verdict_derivation: Verdict,
    /// Verdict of the larger left-hand side.
    pub verdict: Verdict,
    pub sampling: Option<SamplingConfig>,
    pub caveat: Option<String>,
}

impl ExistenceCertificate {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Evaluates both forms of the criterion (strict inequality).
pub fn check_existence(c: &Constants) -> ExistenceCertificate {
    let first = c.rho * c.lambda + c.k;
    let lhs_paper = c.m * first.max(c.k + 4.0 * c.k * c.l);
    let lhs_derivation = c.m * first.max(c.k + 4.0 * c.l);
    let verdict_paper = Verdict::strict(lhs_paper);
    let verdict_derivation = Verdict::strict(lhs_derivation);
    let verdict = if verdict_paper == Verdict::Pass && verdict_derivation == Verdict::Pass {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let caveat = (!c.all_declared() && verdict == Verdict::Pass).then(|| {
        "PASS rests on sampled constants, which are lower bounds of the true suprema: \
         evidence, not proof"
            .to_string()
    });
    ExistenceCertificate {
        constants: c.clone(),
        lhs_paper,
        lhs_derivation,
        verdict_paper,
        verdict_derivation,
        verdict,
        sampling: None,
        caveat,
    }
}

/// Rungs `r = 10^j`, `j = 0..=6`, of the ladder for `liminf Ψ(r)/r`.
const LADDER: std::ops::RangeInclusive<i32> = 0..=6;
/// The tail of the ladder whose minimum is reported.
const LADDER_TAIL: usize = 4;

/// `liminf_{r→∞} Ψ(r)/r` estimated as the smallest `Ψ(r)/r` over the last
/// rungs of a geometric ladder.
pub fn rho_ladder(psi: &Expr) -> Result<f64> {
    let prog = expr::Compiled::new(psi, &["r"]).map_err(|source| CheckError::Sampling {
        what: "Psi".into(),
        source,
    })?;
    let mut vals = Vec::new();
    for j in LADDER {
        let r = 10f64.powi(j);
        let v = prog.eval(&[r]).map_err(|source| CheckError::Sampling {
            what: format!("Psi at r = {r}"),
            source,
        })?;
        vals.push(v / r);
    }
    let tail = &vals[vals.len() - LADDER_TAIL..];
    Ok(tail.iter().copied().fold(f64::INFINITY, f64::min).max(0.0))
}

fn phi_norm(phi: &Expr, a: f64, b: f64) -> Result<f64> {
    let prog = expr::Compiled::new(phi, &["t"]).map_err(|source| CheckError::Sampling {
        what: "phi".into(),
        source,
    })?;
    let mut err = None;
    let v = quad::adaptive(
        |t| match prog.eval(&[t]) {
            Ok(x) => x.abs(),
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        },
        a,
        b,
        quad::Adaptive {
            rel_tol: 1e-10,
            ..Default::default()
        },
    );
    if let Some(source) = err {
        return Err(CheckError::Sampling {
            what: format!("phi on [{a}, {b}]"),
            source,
        });
    }
    Ok(v.value)
}

/// `‖f(t)‖` integrated over `[a, b]` for a state-independent forcing.
fn forcing_norm(p: &ProblemSpec, a: f64, b: f64) -> Result<f64> {
    let zero = nalgebra::DVector::zeros(p.dim());
    let mut err = None;
    let v = quad::adaptive(
        |t| match p.f.eval(t, &zero) {
            Ok(x) => x.norm(),
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        },
        a,
        b,
        quad::Adaptive {
            rel_tol: 1e-10,
            ..Default::default()
        },
    );
    if let Some(source) = err {
        return Err(CheckError::Sampling {
            what: format!("f on [{a}, {b}]"),
            source,
        });
    }
    Ok(v.value)
}

/// Lipschitz constant in `u` of a vector field over `t ∈ [t0, t1]` and the
/// state box: the 2-norm of the matrix of sampled componentwise constants
/// (exact in one dimension).
fn field_lipschitz(exprs: &[Expr], t0: f64, t1: f64, cfg: &SamplingConfig, what: &str) -> Result<f64> {
    let d = exprs.len();
    let r = cfg.state_radius;
    let mut bx = vec![VarRange::new("t", t0, t1)];
    bx.extend((1..=d).map(|i| VarRange::new(format!("u{i}"), -r, r)));
    let mut m = DMatrix::zeros(d, d);
    for (i, e) in exprs.iter().enumerate() {
        for j in 0..d {
            let var = format!("u{}", j + 1);
            if !e.mentions(&var) {
                continue;
            }
            m[(i, j)] = expr::lipschitz_estimate(e, &var, &bx, cfg.samples, cfg.seed).map_err(|source| {
                CheckError::Sampling {
                    what: format!("{what}, component {} in {var}", i + 1),
                    source,
                }
            })?;
        }
    }
    Ok(operators::spectral_norm(&m))
}

/// Computes `M, K, Λ, L, ρ`, preferring declared values.
pub fn compute_constants(p: &ProblemSpec, cfg: &SamplingConfig) -> Result<Constants> {
    p.validate()?;
    if cfg.samples < 2 || !(cfg.state_radius > 0.0) || !cfg.state_radius.is_finite() {
        return Err(CheckError::Spec(
            "checker sampling needs samples >= 2 and a positive finite state radius".into(),
        ));
    }
    let dec = &p.declared;
    let mut prov = BTreeMap::new();
    let mut mark = |name: &str, declared: bool| {
        let v = if declared { Provenance::Declared } else { Provenance::Estimated };
        prov.insert(name.to_string(), v);
    };

    let m = match dec.m {
        Some(m) => m,
        None => operators::estimate_m(&p.a, p.horizon)?,
    };
    mark("M", dec.m.is_some());

    let mut k_zeta = Vec::with_capacity(p.impulses.len());
    for (n, imp) in p.impulses.iter().enumerate() {
        let kz = match imp.k_zeta {
            Some(v) => v,
            None => field_lipschitz(&imp.zeta.exprs, imp.t, imp.s, cfg, &format!("zeta_{}", n + 1))?,
        };
        k_zeta.push(kz);
    }
    let k = dec.k.unwrap_or_else(|| k_zeta.iter().copied().fold(0.0, f64::max));
    let k_declared = dec.k.is_some() || (!p.impulses.is_empty() && p.impulses.iter().all(|i| i.k_zeta.is_some()));
    mark("K", k_declared);

    let windows = p.forcing_windows();
    let mut l_windows = Vec::with_capacity(windows.len());
    if dec.l.is_none() {
        for (w, &(a, b)) in windows.iter().enumerate() {
            let lk = match dec.lipschitz_f {
                Some(v) => v,
                None => field_lipschitz(&p.f.exprs, a, b, cfg, &format!("f on window {w}"))?,
            };
            l_windows.push(lk);
        }
    }
    let l = dec.l.unwrap_or_else(|| {
        windows
            .iter()
            .zip(&l_windows)
            .map(|((a, b), lk)| lk * (b - a))
            .fold(0.0, f64::max)
    });
    mark("L", dec.l.is_some() || dec.lipschitz_f.is_some());

    // Growth envelope ‖f(t,u)‖ ≤ φ(t)Ψ(‖u‖). A forcing that ignores u factors
    // as φ = ‖f(t)‖, Ψ ≡ 1, hence ρ = 0.
    let state_free = p.f.is_state_independent();
    let mut phi_norms = Vec::new();
    let lambda = match (dec.lambda, &p.phi) {
        (Some(v), _) => v,
        (None, Some(phi)) => {
            for &(a, b) in &windows {
                phi_norms.push(phi_norm(phi, a, b)?);
            }
            phi_norms.iter().copied().fold(0.0, f64::max)
        }
        (None, None) if state_free => {
            for &(a, b) in &windows {
                phi_norms.push(forcing_norm(p, a, b)?);
            }
            phi_norms.iter().copied().fold(0.0, f64::max)
        }
        (None, None) => {
            return Err(CheckError::Spec(
                "f depends on u, so no growth bound can be inferred: declare phi and psi under \
                 [forcing] (or Lambda and rho under [checker])"
                    .into(),
            ))
        }
    };
    mark("Lambda", dec.lambda.is_some() || p.phi.is_some());

    let rho = match (dec.rho, &p.psi) {
        (Some(v), _) => v,
        (None, Some(psi)) => rho_ladder(psi)?,
        (None, None) if state_free => 0.0,
        (None, None) => {
            return Err(CheckError::Spec(
                "f depends on u, so no growth bound can be inferred: declare psi under [forcing] \
                 (or rho under [checker])"
                    .into(),
            ))
        }
    };
    mark("rho", dec.rho.is_some() || p.psi.is_some());

    Ok(Constants {
        m,
        k,
        lambda,
        l,
        rho,
        provenance: prov,
        k_zeta,
        l_windows,
        phi_norms,
    })
}

/// Constants, criterion and sampling metadata in one step.
pub fn certify(p: &ProblemSpec, cfg: &SamplingConfig) -> Result<ExistenceCertificate> {
    let c = compute_constants(p, cfg)?;
    let mut cert = check_existence(&c);
    cert.sampling = Some(*cfg);
    Ok(cert)
}
