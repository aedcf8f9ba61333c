//! The three error-probability figures of a conformance test: the optimal
//! classical bound, photon counting with a classical probe, and photon
//! counting with a twin-beam probe.

use serde::{Deserialize, Serialize};

mod bound;
mod classical_pc;
mod quantum;
mod sweep;

pub use bound::classical_bound;
pub use classical_pc::{
    classical_pc_error, classical_pc_thresholds, gaussian_pc_error, single_threshold_q,
    ClassicalMode, GaussianPair, Thresholds,
};
pub use quantum::{quantum_pc_error, QuantumMode, MIN_MC_SAMPLES};
pub use sweep::{sweep_error_curves, QuantumSweepMode, ReferenceShape, SweepRow, SweepSpec};

/// How a figure was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    ExactLattice,
    GaussianApprox,
    MonteCarlo,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ClosedForm => "closed-form",
            Method::ExactLattice => "exact-lattice",
            Method::GaussianApprox => "gaussian-approx",
            Method::MonteCarlo => "monte-carlo",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    /// Error probability.
    pub value: f64,
    pub method: Method,
    /// Standard error; zero for deterministic methods.
    pub std_error: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub advisories: Vec<String>,
}

impl StrategyResult {
    pub fn exact(value: f64, method: Method) -> Self {
        StrategyResult {
            value,
            method,
            std_error: 0.0,
            advisories: Vec::new(),
        }
    }

    pub fn with_advisory(mut self, note: Option<String>) -> Self {
        self.advisories.extend(note);
        self
    }
}

/// `½ Σ min(p₀, p₁)` over two aligned lattices.
pub fn ml_error(
    p0: &crate::photon::CountDistribution,
    p1: &crate::photon::CountDistribution,
) -> crate::Result<f64> {
    let mut s = 0.0;
    crate::decision::for_each_cell_pair(p0, p1, |a, b| s += a.min(b))?;
    Ok((0.5 * s).min(0.5))
}
