//! Independent numerical oracles shared by the unit tests.

use crate::gev::GevParams;

/// Root of a monotone-sign function on `[lo, hi]` by plain bisection.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    assert!(flo * f(hi) <= 0.0, "root not bracketed");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(&f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Integral of the GEV density over its support, via `x = μ + σ sinh(u)`
/// so that heavy tails map onto a short interval.
pub fn integrate_gev_density(p: &GevParams) -> f64 {
    let (mu, sigma, xi) = (p.mu(), p.sigma(), p.xi());
    let lo = if xi > 0.0 { mu - sigma / xi } else { mu - 40.0 * sigma };
    let hi = if xi < 0.0 { mu - sigma / xi } else if xi > 0.0 { mu + 1e12 * sigma } else { mu + 60.0 * sigma };
    let to_u = |x: f64| ((x - mu) / sigma).asinh();
    let g = |u: f64| {
        let x = mu + sigma * u.sinh();
        let lp = p.ln_pdf(x);
        if lp.is_finite() { lp.exp() * sigma * u.cosh() } else { 0.0 }
    };
    // split at the mode region so the recursion sees the peak
    let (ua, ub) = (to_u(lo), to_u(hi));
    let cuts = [ua, ua.max(-3.0).min(ub), 0.0f64.max(ua).min(ub), 3.0f64.max(ua).min(ub), ub];
    cuts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| adaptive_simpson(g, w[0], w[1], 1e-11))
        .sum()
}
