//! Named pass/fail checks shared by the verification reports.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bound {
    Below,
    AtMost,
    Above,
    AtLeast,
}

impl Bound {
    pub fn holds(self, worst: f64, threshold: f64) -> bool {
        match self {
            Bound::Below => worst < threshold,
            Bound::AtMost => worst <= threshold,
            Bound::Above => worst > threshold,
            Bound::AtLeast => worst >= threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub grid_n: usize,
    /// Worst sampled value; `None` when a prerequisite check failed.
    pub worst: Option<f64>,
    pub threshold: f64,
    pub bound: Bound,
    pub samples: usize,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, grid_n: usize, worst: f64, threshold: f64, bound: Bound, samples: usize) -> Self {
        let pass = worst.is_finite() && bound.holds(worst, threshold);
        Check { name: name.into(), grid_n, worst: Some(worst), threshold, bound, samples, pass }
    }

    pub fn skipped(name: &str, grid_n: usize, threshold: f64, bound: Bound) -> Self {
        Check { name: name.into(), grid_n, worst: None, threshold, bound, samples: 0, pass: false }
    }
}

