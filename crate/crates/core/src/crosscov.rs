//! Correlated basis coefficients and the coregionalized latent surfaces.
//!
//! Coefficients follow `δ1 = τ1 Z1`, `δ2 = τ2 (ρ Z1 + sqrt(1 - ρ²) Z2)` with
//! independent standard normal `Z1, Z2`, so the joint covariance is
//! `[[τ1² I, ρ τ1 τ2 I], [ρ τ1 τ2 I, τ2² I]]`, positive semidefinite for every
//! `ρ ∈ [-1, 1]`. Latent surfaces are `w = A (Φ1ᵀ δ1, Φ2ᵀ δ2)` with a lower
//! triangular 2x2 coregionalization matrix `A`.

use nalgebra::{DMatrix, Matrix2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{eval_bisquare, eval_matrix, BasisMatrix, BasisPair, KnotSet};
use crate::error::{Error, Result};
use crate::{Point, Process};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefCovariance {
    pub tau1_sq: f64,
    pub tau2_sq: f64,
    pub rho: f64,
    pub dim: usize,
}

impl CoefCovariance {
    pub fn new(tau1_sq: f64, tau2_sq: f64, rho: f64, dim: usize) -> Result<Self> {
        if !(tau1_sq > 0.0 && tau2_sq > 0.0 && tau1_sq.is_finite() && tau2_sq.is_finite()) {
            return Err(Error::Validation(format!(
                "coefficient variances must be positive, got {tau1_sq}, {tau2_sq}"
            )));
        }
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::Validation(format!("rho must lie in [-1, 1], got {rho}")));
        }
        Ok(Self { tau1_sq, tau2_sq, rho, dim })
    }

    /// Covariance of `(δ1_i, δ2_i)` for any single index `i`.
    pub fn pair_block(&self) -> Matrix2<f64> {
        let c = self.rho * (self.tau1_sq * self.tau2_sq).sqrt();
        Matrix2::new(self.tau1_sq, c, c, self.tau2_sq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmcCoefficients {
    pub a11: f64,
    pub a21: f64,
    pub a22: f64,
}

impl LmcCoefficients {
    pub fn new(a11: f64, a21: f64, a22: f64) -> Self {
        Self { a11, a21, a22 }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0, 1.0)
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.a11, 0.0, self.a21, self.a22)
    }
}

/// Map standard normal vectors to correlated coefficients.
pub fn coefficients_from_normals(cov: &CoefCovariance, z1: &[f64], z2: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (t1, t2) = (cov.tau1_sq.sqrt(), cov.tau2_sq.sqrt());
    let c = (1.0 - cov.rho * cov.rho).max(0.0).sqrt();
    let d1 = z1.iter().map(|z| t1 * z).collect();
    let d2 = z1.iter().zip(z2).map(|(a, b)| t2 * (cov.rho * a + c * b)).collect();
    (d1, d2)
}

pub fn sample_coefficients<R: Rng + ?Sized>(cov: &CoefCovariance, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let z1: Vec<f64> = (0..cov.dim).map(|_| rng.sample(StandardNormal)).collect();
    let z2: Vec<f64> = (0..cov.dim).map(|_| rng.sample(StandardNormal)).collect();
    coefficients_from_normals(cov, &z1, &z2)
}

/// Explicit `2p x 2p` covariance of `(δ1, δ2)`.
pub fn joint_coef_cov_matrix(cov: &CoefCovariance) -> DMatrix<f64> {
    let p = cov.dim;
    let b = cov.pair_block();
    let mut m = DMatrix::zeros(2 * p, 2 * p);
    for i in 0..p {
        m[(i, i)] = b[(0, 0)];
        m[(i, p + i)] = b[(0, 1)];
        m[(p + i, i)] = b[(1, 0)];
        m[(p + i, p + i)] = b[(1, 1)];
    }
    m
}

/// Log density of `(δ1, δ2)` under the joint coefficient covariance, using
/// its 2x2-per-index block structure. `-inf` at `|ρ| >= 1`.
pub fn coef_log_density(cov: &CoefCovariance, delta1: &[f64], delta2: &[f64]) -> f64 {
    let one_m = 1.0 - cov.rho * cov.rho;
    if one_m <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let (t1, t2) = (cov.tau1_sq.sqrt(), cov.tau2_sq.sqrt());
    let mut quad = 0.0;
    for (x, y) in delta1.iter().zip(delta2) {
        let (u, v) = (x / t1, y / t2);
        quad += u * u - 2.0 * cov.rho * u * v + v * v;
    }
    let p = delta1.len() as f64;
    -p * LN_2PI - 0.5 * p * (cov.tau1_sq * cov.tau2_sq * one_m).ln() - 0.5 * quad / one_m
}

/// Location or scale latent values at a stacked site list.
///
/// `phi1`/`phi2` are evaluated at every site; `owner[i]` says which process
/// site `i` belongs to. Process-1 sites get `o1 + a11 v1`, process-2 sites
/// `o2 + a21 v1 + a22 v2`, with `v_k = Φ_k δ_k`.
pub fn latent_surface(
    phi1: &BasisMatrix,
    phi2: &BasisMatrix,
    delta1: &[f64],
    delta2: &[f64],
    lmc: &LmcCoefficients,
    offsets: (f64, f64),
    owner: &[Process],
) -> Result<Vec<f64>> {
    if phi1.n_rows != owner.len() || phi2.n_rows != owner.len() {
        return Err(Error::DimensionMismatch(format!(
            "basis rows ({}, {}) do not match site count {}",
            phi1.n_rows,
            phi2.n_rows,
            owner.len()
        )));
    }
    let v1 = phi1.mul_vec(delta1)?;
    let v2 = phi2.mul_vec(delta2)?;
    Ok(owner
        .iter()
        .enumerate()
        .map(|(i, p)| match p {
            Process::One => offsets.0 + lmc.a11 * v1[i],
            Process::Two => offsets.1 + lmc.a21 * v1[i] + lmc.a22 * v2[i],
        })
        .collect())
}

/// Everything needed to evaluate the implied cross-covariance.
#[derive(Debug, Clone)]
pub struct CrossCovSystem {
    pub basis: BasisPair,
    pub cov: CoefCovariance,
    pub lmc: LmcCoefficients,
}

fn basis_vector(s: &Point, knots: &KnotSet) -> Vec<f64> {
    (0..knots.len())
        .map(|m| eval_bisquare(s, &knots.knots[m], knots.bandwidth_of_knot(m)))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `C_w(s, t) = A C_v(s, t) Aᵀ`, entry `(i, j)` being `Cov(w_i(s), w_j(t))`.
pub fn cross_covariance(s: &Point, t: &Point, system: &CrossCovSystem) -> Matrix2<f64> {
    let b = system.cov.pair_block();
    let (f1s, f1t) = (basis_vector(s, &system.basis.process1), basis_vector(t, &system.basis.process1));
    let (f2s, f2t) = (basis_vector(s, &system.basis.process2), basis_vector(t, &system.basis.process2));
    let cv = Matrix2::new(
        b[(0, 0)] * dot(&f1s, &f1t),
        b[(0, 1)] * dot(&f1s, &f2t),
        b[(1, 0)] * dot(&f2s, &f1t),
        b[(1, 1)] * dot(&f2s, &f2t),
    );
    let a = system.lmc.matrix();
    a * cv * a.transpose()
}

/// Covariance of `(w1(x_1), w2(x_1), ..., w1(x_k), w2(x_k))`.
pub fn assembled_covariance(locations: &[Point], system: &CrossCovSystem) -> DMatrix<f64> {
    let k = locations.len();
    let mut m = DMatrix::zeros(2 * k, 2 * k);
    for (i, s) in locations.iter().enumerate() {
        for (j, t) in locations.iter().enumerate() {
            let c = cross_covariance(s, t, system);
            for a in 0..2 {
                for b in 0..2 {
                    m[(2 * i + a, 2 * j + b)] = c[(a, b)];
                }
            }
        }
    }
    m
}

/// Covariance of the stacked latent vector at process-1 sites `s` and
/// process-2 sites `t`, built as `A* Φ Σ Φᵀ A*ᵀ`.
pub fn latent_covariance(s: &[Point], t: &[Point], system: &CrossCovSystem) -> Result<DMatrix<f64>> {
    let n = s.len();
    let r = n + t.len();
    let sites: Vec<Point> = s.iter().chain(t).copied().collect();
    let phi1 = eval_matrix(&sites, &system.basis.process1)?;
    let phi2 = eval_matrix(&sites, &system.basis.process2)?;
    let p = system.cov.dim;
    let b = system.cov.pair_block();
    let lmc = system.lmc;
    // row i of the r x 2p loading matrix maps (δ1, δ2) to the latent value at site i
    let mut load = DMatrix::zeros(r, 2 * p);
    for i in 0..r {
        for m in 0..p {
            if i < n {
                load[(i, m)] = lmc.a11 * phi1.get(i, m);
            } else {
                load[(i, m)] = lmc.a21 * phi1.get(i, m);
                load[(i, p + m)] = lmc.a22 * phi2.get(i, m);
            }
        }
    }
    let mut sigma = DMatrix::zeros(2 * p, 2 * p);
    for m in 0..p {
        sigma[(m, m)] = b[(0, 0)];
        sigma[(m, p + m)] = b[(0, 1)];
        sigma[(p + m, m)] = b[(1, 0)];
        sigma[(p + m, p + m)] = b[(1, 1)];
    }
    Ok(&load * sigma * load.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_knots, Rect};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn min_eig(m: &DMatrix<f64>) -> f64 {
        m.clone().symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn independent_coefficients_when_rho_zero() {
        let cov = CoefCovariance::new(1.0, 1.0, 0.0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let (a, b) = sample_coefficients(&cov, &mut rng);
            sxy += a[0] * b[0];
            sxx += a[0] * a[0];
            syy += b[0] * b[0];
        }
        let corr = sxy / (sxx * syy).sqrt();
        assert!(corr.abs() < 0.01, "corr {corr}");
    }

    #[test]
    fn perfect_correlation_copies_draws() {
        let cov = CoefCovariance::new(2.0, 2.0, 1.0, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (a, b) = sample_coefficients(&cov, &mut rng);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empirical_cross_covariance_matches() {
        let cov = CoefCovariance::new(1.0, 4.0, -0.6, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 100_000;
        let mut acc = [0.0; 8];
        for _ in 0..n {
            let (a, b) = sample_coefficients(&cov, &mut rng);
            for i in 0..8 {
                acc[i] += a[i] * b[i];
            }
        }
        for v in acc {
            assert!((v / n as f64 + 1.2).abs() < 0.03, "{}", v / n as f64);
        }
    }

    #[test]
    fn joint_matrix_small_cases() {
        let m = joint_coef_cov_matrix(&CoefCovariance::new(1.0, 1.0, 0.5, 1).unwrap());
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        let mut ev: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((ev[0] - 0.5).abs() < 1e-14 && (ev[1] - 1.5).abs() < 1e-14);

        let m = joint_coef_cov_matrix(&CoefCovariance::new(1.0, 1.0, -1.0, 3).unwrap());
        assert!(min_eig(&m).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_covariance() {
        assert!(CoefCovariance::new(0.0, 1.0, 0.0, 2).is_err());
        assert!(CoefCovariance::new(1.0, 1.0, 1.5, 2).is_err());
    }

    #[test]
    fn coef_density_matches_bivariate_normal() {
        let cov = CoefCovariance::new(1.0, 1.0, 0.5, 1).unwrap();
        let (x, y) = (0.3, -1.1);
        let r: f64 = 0.5;
        let expected = -(2.0 * std::f64::consts::PI * (1.0 - r * r).sqrt()).ln()
            - (x * x - 2.0 * r * x * y + y * y) / (2.0 * (1.0 - r * r));
        assert!((coef_log_density(&cov, &[x], &[y]) - expected).abs() < 1e-13);
        // general case against the dense Gaussian formula
        let cov = CoefCovariance::new(0.7, 2.3, -0.35, 4).unwrap();
        let d1 = [0.1, -0.4, 1.2, 0.0];
        let d2 = [0.5, 0.9, -2.0, 0.3];
        let m = joint_coef_cov_matrix(&cov);
        let x = nalgebra::DVector::from_iterator(8, d1.iter().chain(&d2).copied());
        let chol = m.clone().cholesky().unwrap();
        let quad = x.dot(&chol.solve(&x));
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let dense = -4.0 * LN_2PI - 0.5 * logdet - 0.5 * quad;
        assert!((coef_log_density(&cov, &d1, &d2) - dense).abs() < 1e-12);
    }

    fn materialized_surface(
        phi1: &BasisMatrix,
        phi2: &BasisMatrix,
        d1: &[f64],
        d2: &[f64],
        lmc: &LmcCoefficients,
        offsets: (f64, f64),
        n: usize,
    ) -> Vec<f64> {
        // A* (r x 2r) times block-diagonal Φ (2r x 2p) times (δ1, δ2)
        let r = phi1.n_rows;
        let p = phi1.n_cols;
        let mut a_star = DMatrix::zeros(r, 2 * r);
        for i in 0..r {
            if i < n {
                a_star[(i, i)] = lmc.a11;
            } else {
                a_star[(i, i)] = lmc.a21;
                a_star[(i, r + i)] = lmc.a22;
            }
        }
        let mut phi = DMatrix::zeros(2 * r, 2 * p);
        for i in 0..r {
            for m in 0..p {
                phi[(i, m)] = phi1.get(i, m);
                phi[(r + i, p + m)] = phi2.get(i, m);
            }
        }
        let delta = nalgebra::DVector::from_iterator(2 * p, d1.iter().chain(d2).copied());
        let out = a_star * phi * delta;
        (0..r).map(|i| out[i] + if i < n { offsets.0 } else { offsets.1 }).collect()
    }

    #[test]
    fn surface_matches_materialized_product() {
        let knots = build_knots(Rect::square(0.0, 1.0), 1).unwrap();
        let sites = [[0.1, 0.2], [0.8, 0.4], [0.5, 0.5], [0.3, 0.9]];
        let phi1 = eval_matrix(&sites, &knots).unwrap();
        let phi2 = eval_matrix(&sites, &knots.translated([0.05, -0.1])).unwrap();
        let owner = [Process::One, Process::One, Process::Two, Process::Two];
        let d1 = [0.3, -1.0, 0.7, 2.0];
        let d2 = [-0.2, 0.4, 1.1, -0.6];
        let lmc = LmcCoefficients::new(1.3, -0.8, 0.6);
        let got = latent_surface(&phi1, &phi2, &d1, &d2, &lmc, (2.0, -1.0), &owner).unwrap();
        let want = materialized_surface(&phi1, &phi2, &d1, &d2, &lmc, (2.0, -1.0), 2);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-13);
        }
    }

    #[test]
    fn surface_special_cases() {
        let knots = build_knots(Rect::square(0.0, 1.0), 1).unwrap();
        let sites = [[0.1, 0.2], [0.8, 0.4], [0.5, 0.5]];
        let phi = eval_matrix(&sites, &knots).unwrap();
        let owner = [Process::One, Process::Two, Process::Two];
        let zero = [0.0; 4];
        let lmc = LmcCoefficients::new(1.0, 0.5, 1.0);
        let out = latent_surface(&phi, &phi, &zero, &zero, &lmc, (3.0, -2.0), &owner).unwrap();
        assert_eq!(out, vec![3.0, -2.0, -2.0]);

        // a21 = 0: process-2 values ignore δ1
        let d1 = [1.0, 2.0, 3.0, 4.0];
        let d2 = [0.5; 4];
        let decoupled = LmcCoefficients::new(1.0, 0.0, 1.0);
        let a = latent_surface(&phi, &phi, &d1, &d2, &decoupled, (0.0, 0.0), &owner).unwrap();
        let b = latent_surface(&phi, &phi, &[9.0; 4], &d2, &decoupled, (0.0, 0.0), &owner).unwrap();
        assert_eq!(a[1..], b[1..]);

        assert!(latent_surface(&phi, &phi, &d1, &d2, &lmc, (0.0, 0.0), &owner[..2]).is_err());
        assert!(latent_surface(&phi, &phi, &d1[..3], &d2, &lmc, (0.0, 0.0), &owner).is_err());
    }

    fn system(rho: f64, a21: f64, offset: Point) -> CrossCovSystem {
        let knots = build_knots(Rect::square(0.0, 5.0), 2).unwrap();
        CrossCovSystem {
            basis: BasisPair::with_offset(knots, offset),
            cov: CoefCovariance::new(1.5, 0.8, rho, 20).unwrap(),
            lmc: LmcCoefficients::new(1.0, a21, 0.7),
        }
    }

    #[test]
    fn symmetric_without_cross_correlation() {
        let sys = system(0.0, -0.9, [0.4, 0.2]);
        let c = cross_covariance(&[1.0, 1.0], &[1.0, 1.0], &sys);
        assert!((c - c.transpose()).abs().max() < 1e-12);
        let c = cross_covariance(&[1.0, 1.0], &[2.3, 1.6], &sys);
        assert!((c - c.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn asymmetry_witness() {
        let sys = system(-0.6, -0.9, [0.4, 0.2]);
        let (s, t) = ([1.0, 1.0], [1.9, 1.4]);
        let f = |x: &Point, k: &KnotSet| basis_vector(x, k);
        let cross_st = dot(&f(&s, &sys.basis.process1), &f(&t, &sys.basis.process2));
        let cross_ts = dot(&f(&t, &sys.basis.process1), &f(&s, &sys.basis.process2));
        assert!((cross_st - cross_ts).abs() > 1e-3);
        let c = cross_covariance(&s, &t, &sys);
        assert!((c - c.transpose()).abs().max() > 1e-3);
        // C_w(s, t)ᵀ = C_w(t, s) holds regardless
        let back = cross_covariance(&t, &s, &sys);
        assert!((c.transpose() - back).abs().max() < 1e-12);
    }

    #[test]
    fn assembled_matrix_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let sys = system(0.7, 1.2, [0.3, -0.2]);
        let locs: Vec<Point> = (0..10).map(|_| [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)]).collect();
        let m = assembled_covariance(&locs, &sys);
        assert!(min_eig(&m) >= -1e-9);
        let lat = latent_covariance(&locs[..6], &locs[6..], &sys).unwrap();
        assert!(min_eig(&lat) >= -1e-9);
    }

    proptest! {
        #[test]
        fn psd_for_any_rho(t1 in 0.01..10.0f64, t2 in 0.01..10.0f64, rho in -1.0..=1.0f64, p in 1usize..12) {
            let m = joint_coef_cov_matrix(&CoefCovariance::new(t1, t2, rho, p).unwrap());
            prop_assert!(min_eig(&m) >= -1e-10);
        }

        #[test]
        fn quadratic_form_decomposition(t1 in 0.01..5.0f64, t2 in 0.01..5.0f64, rho in -1.0..=1.0f64,
                                        xs in proptest::collection::vec(-3.0..3.0f64, 10)) {
            let p = 5;
            let cov = CoefCovariance::new(t1, t2, rho, p).unwrap();
            let m = joint_coef_cov_matrix(&cov);
            let x = nalgebra::DVector::from_column_slice(&xs);
            let direct = (x.transpose() * &m * &x)[(0, 0)];
            let u: Vec<f64> = xs[..p].iter().map(|v| t1.sqrt() * v).collect();
            let v: Vec<f64> = xs[p..].iter().map(|v| t2.sqrt() * v).collect();
            let uu = dot(&u, &u);
            let vv = dot(&v, &v);
            let s: f64 = u.iter().zip(&v).map(|(a, b)| (a + b) * (a + b)).sum();
            let alt = (1.0 - rho) * (uu + vv) + rho * s;
            prop_assert!((direct - alt).abs() < 1e-10 * (1.0 + direct.abs()));
        }
    }
}
