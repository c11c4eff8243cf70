//! Independent reference integrators for the limiting cases: the fractional
//! Adams predictor–corrector for Caputo problems and classical RK4.

use nalgebra::DVector;

use crate::specfun::gamma;

/// Solution samples `(t_j, y_j)`, `t_j = j h`.
pub type Samples = Vec<(f64, DVector<f64>)>;

/// Caputo problem `D^α y = F(t, y)`, `y(0) = y0`, `0 < α ≤ 1`, on `[0, T]`
/// with `n` uniform steps (predictor–corrector of Adams type).
pub fn caputo_pece<F, E>(alpha: f64, y0: &DVector<f64>, horizon: f64, n: usize, mut rhs: F) -> Result<Samples, E>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>, E>,
{
    assert!(alpha > 0.0 && alpha <= 1.0 && n > 0);
    let h = horizon / n as f64;
    let g1 = gamma(alpha + 1.0).expect("finite gamma");
    let g2 = gamma(alpha + 2.0).expect("finite gamma");
    let ha = h.powf(alpha);
    let pw = |k: usize, e: f64| (k as f64).powf(e);
    let mut ys: Vec<DVector<f64>> = vec![y0.clone()];
    let mut fs: Vec<DVector<f64>> = vec![rhs(0.0, y0)?];
    for k in 0..n {
        let t1 = (k + 1) as f64 * h;
        // Predictor: rectangle rule, b_j = (k+1-j)^α - (k-j)^α.
        let mut pred = y0.clone();
        for (j, f) in fs.iter().enumerate() {
            let b = pw(k + 1 - j, alpha) - pw(k - j, alpha);
            pred.axpy(ha / g1 * b, f, 1.0);
        }
        // Corrector: product trapezoid.
        let mut corr = y0.clone();
        let fp = rhs(t1, &pred)?;
        corr.axpy(ha / g2, &fp, 1.0);
        for (j, f) in fs.iter().enumerate() {
            let a = if j == 0 {
                pw(k, alpha + 1.0) - (k as f64 - alpha) * pw(k + 1, alpha)
            } else {
                let m = k - j;
                pw(m + 2, alpha + 1.0) + pw(m, alpha + 1.0) - 2.0 * pw(m + 1, alpha + 1.0)
            };
            corr.axpy(ha / g2 * a, f, 1.0);
        }
        fs.push(rhs(t1, &corr)?);
        ys.push(corr);
    }
    Ok(ys.into_iter().enumerate().map(|(j, y)| (j as f64 * h, y)).collect())
}

/// Classical fourth-order Runge–Kutta for `y' = F(t, y)` on `[t0, t0 + T]`.
pub fn rk4<F, E>(y0: &DVector<f64>, t0: f64, horizon: f64, n: usize, mut rhs: F) -> Result<Samples, E>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>, E>,
{
    assert!(n > 0);
    let h = horizon / n as f64;
    let mut y = y0.clone();
    let mut out = vec![(t0, y.clone())];
    for k in 0..n {
        let t = t0 + k as f64 * h;
        let k1 = rhs(t, &y)?;
        let k2 = rhs(t + 0.5 * h, &(&y + &k1 * (0.5 * h)))?;
        let k3 = rhs(t + 0.5 * h, &(&y + &k2 * (0.5 * h)))?;
        let k4 = rhs(t + h, &(&y + &k3 * h))?;
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        out.push((t0 + (k + 1) as f64 * h, y.clone()));
    }
    Ok(out)
}
