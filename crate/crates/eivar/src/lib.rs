//! Sequential Bayesian experimental design for calibrating expensive
//! black-box simulators.
//!
//! The toolkit emulates a multi-output simulator with a principal-component
//! Gaussian process (PCGP), estimates the unnormalized posterior of the
//! calibration parameters in closed form, and acquires new simulation
//! parameters one at a time or in synchronous/asynchronous batches using the
//! expected integrated variance (EIVAR) criterion and several competitors
//! (MAXVAR, MAXEXP, EI, IMSE, RND).
//!
//! Entry points:
//! - [`problems::builtin`] for the bundled test problems,
//! - [`design::run_sequential`], [`design::run_batch`], [`design::run_async`]
//!   for the three drivers,
//! - [`config`] for the JSON-configured command line front end.
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod acquisition;
pub mod config;
pub mod design;
pub mod emulator;
pub mod error;
pub mod gp;
pub mod posterior;
pub mod problems;
pub mod scheduler;

pub use error::Error;

/// Rectangular support for a parameter vector.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, Error> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidBounds);
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *x >= *l && *x <= *u)
    }

    /// Map a point into the unit hypercube.
    pub fn to_unit(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (l, u))| (x - l) / (u - l))
            .collect()
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }

    pub fn sample_uniform<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| rng.gen_range(*l..*u))
            .collect()
    }
}
