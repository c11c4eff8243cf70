//! Gauss-Legendre rules and a small adaptive integrator.
//!
//! Everything here works on finite intervals; callers split improper
//! integrals themselves once they know where the integrand is negligible.

use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`,
/// nodes in increasing order.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A Gauss-Legendre rule cached for the life of the process.
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Integrates `f` over `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

macro_rules! cached_rule {
    ($name:ident, $n:expr) => {
        pub fn $name() -> &'static Rule {
            static RULE: OnceLock<Rule> = OnceLock::new();
            RULE.get_or_init(|| {
                let (nodes, weights) = gauss_legendre($n);
                Rule { nodes, weights }
            })
        }
    };
}

cached_rule!(gl4, 4);
cached_rule!(gl6, 6);
cached_rule!(gl8, 8);
cached_rule!(gl10, 10);
cached_rule!(gl16, 16);
cached_rule!(gl20, 20);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adaptive {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_depth: u32,
    /// Cap on the number of panels refined; bounds the cost on integrands
    /// that never meet the tolerance (noise, steep layers).
    pub max_panels: usize,
}

impl Default for Adaptive {
    fn default() -> Self {
        Self {
            rel_tol: 1e-13,
            abs_tol: 1e-300,
            max_depth: 48,
            max_panels: 4096,
        }
    }
}

/// Result of an adaptive integration; `converged` is false when some
/// panel hit the depth limit before meeting the tolerance.
#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

/// Adaptive bisection with a 20-point Gauss-Legendre rule, comparing each
/// panel against the sum of its two halves.
pub fn adaptive<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, opts: Adaptive) -> Integral {
    let rule = gl20();
    let whole = rule.integrate(a, b, &mut f);
    // Global tolerance is scaled against a running magnitude estimate.
    let mut out = Integral {
        value: 0.0,
        error: 0.0,
        converged: true,
    };
    let scale = whole.abs();
    let mut budget = opts.max_panels;
    recurse(&mut f, rule, a, b, whole, opts, 0, scale, &mut budget, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: FnMut(f64) -> f64>(
    f: &mut F,
    rule: &Rule,
    a: f64,
    b: f64,
    whole: f64,
    opts: Adaptive,
    depth: u32,
    scale: f64,
    budget: &mut usize,
    out: &mut Integral,
) {
    let mid = 0.5 * (a + b);
    let left = rule.integrate(a, mid, &mut *f);
    let right = rule.integrate(mid, b, &mut *f);
    let refined = left + right;
    let err = (refined - whole).abs();
    let tol = (opts.rel_tol * scale.max(refined.abs())).max(opts.abs_tol);
    *budget = budget.saturating_sub(1);
    if err <= tol || depth >= opts.max_depth || *budget == 0 || mid <= a || mid >= b {
        if err > tol {
            out.converged = false;
        }
        out.value += refined;
        out.error += err;
        return;
    }
    recurse(f, rule, a, mid, left, opts, depth + 1, scale, budget, out);
    recurse(f, rule, mid, b, right, opts, depth + 1, scale, budget, out);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_integrates_polynomials_exactly() {
        for n in [1, 2, 5, 8, 16, 20] {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((approx - exact).abs() < 1e-14, "n={n} deg={deg}: {approx} vs {exact}");
            }
        }
    }

    #[test]
    fn nodes_are_sorted_and_weights_sum_to_two() {
        let (x, w) = gauss_legendre(33);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        // ∫_0^1 x^{-1/2} dx = 2
        let r = adaptive(|x| if x > 0.0 { x.powf(-0.5) } else { 0.0 }, 0.0, 1.0, Adaptive {
            rel_tol: 1e-12,
            ..Adaptive::default()
        });
        assert!((r.value - 2.0).abs() < 1e-8, "{}", r.value);
    }

    #[test]
    fn adaptive_matches_smooth_integral() {
        let r = adaptive(|x| x.sin(), 0.0, std::f64::consts::PI, Adaptive::default());
        assert!((r.value - 2.0).abs() < 1e-14);
        assert!(r.converged);
    }
}
