//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every exported function returns a flat `Vec<f64>` (a `Float64Array` in
//! JavaScript) and reports invalid input as a thrown string.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use jlsgev::basis::{build_knots, BasisPair, Rect};
use jlsgev::crosscov::{cross_covariance, CoefCovariance, CrossCovSystem, LmcCoefficients};
use jlsgev::simgen::{coupled_fields, CrossCovKind, GenerativeSettings};
use jlsgev::GevParams;

fn js_err(e: jlsgev::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// `n` points over the central 99.8% of the GEV, laid out as
/// `[x_0..x_n, pdf_0..pdf_n, cdf_0..cdf_n]`.
pub fn gev_curve(mu: f64, sigma: f64, xi: f64, n: usize) -> jlsgev::Result<Vec<f64>> {
    let g = GevParams::new(mu, sigma, xi)?;
    let (lo, hi) = (g.quantile(0.001)?, g.quantile(0.999)?);
    let n = n.max(2);
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let mut out = xs.clone();
    out.extend(xs.iter().map(|&x| g.ln_pdf(x).exp()));
    out.extend(xs.iter().map(|&x| g.cdf(x)));
    Ok(out)
}

/// Return levels for each period in `periods`.
pub fn return_levels(mu: f64, sigma: f64, xi: f64, periods: &[f64]) -> jlsgev::Result<Vec<f64>> {
    let g = GevParams::new(mu, sigma, xi)?;
    periods.iter().map(|&t| g.return_level(t)).collect()
}

/// `Cov(w1(s), w2(t)) - Cov(w2(s), w1(t))` for `s` at the centre of `[0, 5]²`
/// and `t` on an `n × n` grid (row-major, `y` outer). Two bisquare levels;
/// process-2 knots are shifted by `offset`.
pub fn asymmetry_map(a21: f64, rho: f64, offset: [f64; 2], n: usize) -> jlsgev::Result<Vec<f64>> {
    let knots = build_knots(Rect::square(0.0, 5.0), 2)?;
    let basis = BasisPair::with_offset(knots, offset);
    let cov = CoefCovariance::new(1.0, 1.0, rho, basis.dim())?;
    let system = CrossCovSystem { basis, cov, lmc: LmcCoefficients::new(1.0, a21, 1.0) };
    let s = [2.5, 2.5];
    let n = n.max(2);
    let step = 5.0 / (n - 1) as f64;
    let mut out = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            let c = cross_covariance(&s, &[ix as f64 * step, iy as f64 * step], &system);
            out.push(c[(0, 1)] - c[(1, 0)]);
        }
    }
    Ok(out)
}

/// One draw of the two location surfaces on an `n × n` grid over `[0, 5]²`,
/// as `[μ1 (n²), μ2 (n²)]`.
pub fn simulate_surfaces(asymmetric: bool, coupling: f64, seed: u64, n: usize) -> jlsgev::Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&coupling) {
        return Err(jlsgev::Error::Validation(format!("coupling must lie in [0, 1], got {coupling}")));
    }
    let g = GenerativeSettings { coupling, ..GenerativeSettings::default() };
    let n = n.clamp(2, 60);
    let step = 5.0 / (n - 1) as f64;
    let sites: Vec<[f64; 2]> = (0..n * n).map(|i| [(i % n) as f64 * step, (i / n) as f64 * step]).collect();
    let kind = if asymmetric { CrossCovKind::Asymmetric } else { CrossCovKind::Symmetric };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [w1, w2] = coupled_fields(&sites, &g, kind, 1, &mut rng)?.remove(0);
    let mut out: Vec<f64> = w1.iter().map(|w| g.mu_offset[0] + g.mu_scale[0] * w).collect();
    out.extend(w2.iter().map(|w| g.mu_offset[1] + g.mu_scale[1] * w));
    Ok(out)
}

#[wasm_bindgen(js_name = gevCurve)]
pub fn gev_curve_js(mu: f64, sigma: f64, xi: f64, n: usize) -> Result<Vec<f64>, JsValue> {
    gev_curve(mu, sigma, xi, n).map_err(js_err)
}

#[wasm_bindgen(js_name = returnLevels)]
pub fn return_levels_js(mu: f64, sigma: f64, xi: f64, periods: Vec<f64>) -> Result<Vec<f64>, JsValue> {
    return_levels(mu, sigma, xi, &periods).map_err(js_err)
}

#[wasm_bindgen(js_name = asymmetryMap)]
pub fn asymmetry_map_js(a21: f64, rho: f64, offset_x: f64, offset_y: f64, n: usize) -> Result<Vec<f64>, JsValue> {
    asymmetry_map(a21, rho, [offset_x, offset_y], n).map_err(js_err)
}

#[wasm_bindgen(js_name = simulateSurfaces)]
pub fn simulate_surfaces_js(asymmetric: bool, coupling: f64, seed: u32, n: usize) -> Result<Vec<f64>, JsValue> {
    simulate_surfaces(asymmetric, coupling, seed as u64, n).map_err(js_err)
}
