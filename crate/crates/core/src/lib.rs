//! Joint latent spatial GEV (JLS-GEV) modelling of two spatial extreme
//! processes observed at distinct station networks.
//!
//! The location and scale surfaces of both processes are expanded in a
//! multi-resolution bisquare basis. Basis coefficients of the two processes
//! are correlated through a coregionalization construction that keeps the
//! joint covariance positive semidefinite while allowing an asymmetric
//! cross-covariance. Inference is by adaptive blocked Metropolis.

pub mod basis;
pub mod crosscov;
pub mod error;
pub mod gev;
pub mod ingest;
pub mod mcmc;
pub mod model;
pub mod simgen;
pub mod scoring;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use gev::GevParams;

/// A point in the planar domain, in domain units.
pub type Point = [f64; 2];

#[inline]
pub(crate) fn dist(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Which of the two modelled processes a site or quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Process {
    One,
    Two,
}

impl Process {
    pub fn index(self) -> usize {
        match self {
            Process::One => 0,
            Process::Two => 1,
        }
    }

    pub fn number(self) -> usize {
        self.index() + 1
    }

    pub fn from_number(n: usize) -> Option<Self> {
        match n {
            1 => Some(Process::One),
            2 => Some(Process::Two),
            _ => None,
        }
    }
}
