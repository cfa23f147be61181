//! Univariate generalized extreme value (GEV) kernels.
//!
//! `F(x) = exp{-[1 + ξ (x - μ)/σ]^(-1/ξ)}` on the support `1 + ξ (x - μ)/σ > 0`,
//! with the Gumbel limit `exp{-exp[-(x - μ)/σ]}` used when `|ξ| < XI_EPS`.
//! Positive ξ gives a heavy (Fréchet) upper tail, negative ξ a bounded
//! (Weibull) upper tail.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape magnitude below which the Gumbel limit is evaluated.
pub const XI_EPS: f64 = 1e-8;

/// Location, scale and shape of a GEV law. Always valid once constructed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    mu: f64,
    sigma: f64,
    xi: f64,
}

impl GevParams {
    pub fn new(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() || !xi.is_finite() {
            return Err(Error::InvalidParams(format!(
                "non-finite field (mu={mu}, sigma={sigma}, xi={xi})"
            )));
        }
        if sigma <= 0.0 {
            return Err(Error::InvalidParams(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(Self { mu, sigma, xi })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    #[inline]
    fn is_gumbel(&self) -> bool {
        self.xi.abs() < XI_EPS
    }

    /// Lower end of the support (`-inf` unless ξ > 0).
    pub fn lower_bound(&self) -> f64 {
        if !self.is_gumbel() && self.xi > 0.0 {
            self.mu - self.sigma / self.xi
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Upper end of the support (`+inf` unless ξ < 0).
    pub fn upper_bound(&self) -> f64 {
        if !self.is_gumbel() && self.xi < 0.0 {
            self.mu - self.sigma / self.xi
        } else {
            f64::INFINITY
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        if self.is_gumbel() {
            return (-(-z).exp()).exp();
        }
        let xz = self.xi * z;
        if xz <= -1.0 {
            // outside the support: below a lower bound or above an upper bound
            return if self.xi > 0.0 { 0.0 } else { 1.0 };
        }
        (-(-xz.ln_1p() / self.xi).exp()).exp()
    }

    /// Log density; `-inf` outside the support.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        if self.is_gumbel() {
            return -self.sigma.ln() - z - (-z).exp();
        }
        let xz = self.xi * z;
        if xz <= -1.0 {
            return f64::NEG_INFINITY;
        }
        let ln_t = xz.ln_1p();
        -self.sigma.ln() - (1.0 + 1.0 / self.xi) * ln_t - (-ln_t / self.xi).exp()
    }

    /// Inverse CDF.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {q}")));
        }
        Ok(self.quantile_from_neg_ln(-q.ln()))
    }

    /// Quantile expressed through `y = -ln q`, which keeps precision for q near 1.
    fn quantile_from_neg_ln(&self, y: f64) -> f64 {
        let ln_y = y.ln();
        if self.is_gumbel() {
            self.mu - self.sigma * ln_y
        } else {
            self.mu + self.sigma * (-self.xi * ln_y).exp_m1() / self.xi
        }
    }

    /// Level exceeded with probability `1/period` per block.
    pub fn return_level(&self, period: f64) -> Result<f64> {
        if !(period > 1.0) || !period.is_finite() {
            return Err(Error::Domain(format!("return period must be > 1, got {period}")));
        }
        Ok(self.quantile_from_neg_ln(-(-1.0 / period).ln_1p()))
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = loop {
            let u = rng.random::<f64>();
            if u > 0.0 {
                break u;
            }
        };
        self.quantile_from_neg_ln(-u.ln())
    }
}

pub fn gev_cdf(x: f64, p: &GevParams) -> f64 {
    p.cdf(x)
}

pub fn gev_logpdf(x: f64, p: &GevParams) -> f64 {
    p.ln_pdf(x)
}

pub fn gev_quantile(q: f64, p: &GevParams) -> Result<f64> {
    p.quantile(q)
}

pub fn return_level(period: f64, p: &GevParams) -> Result<f64> {
    p.return_level(period)
}

pub fn gev_sample<R: Rng + ?Sized>(p: &GevParams, rng: &mut R) -> f64 {
    p.sample(rng)
}
