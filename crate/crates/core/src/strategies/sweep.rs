use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{classical_bound, classical_pc_error, quantum_pc_error, ClassicalMode, QuantumMode, StrategyResult};
use crate::distributions::{ProcessPair, TransmittanceDistribution};
use crate::error::{Error, Result};
use crate::monte_carlo::splitmix;
use crate::photon::{DetectionModel, ProbeModel};

/// Largest pair number for which `Auto` still sums the exact joint lattice.
pub const AUTO_LATTICE_LIMIT: f64 = 2000.0;

/// Shape of the reference process placed at each grid value of τ0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceShape {
    Delta,
    Gaussian { sigma: f64 },
    Uniform { half_width: f64 },
}

impl ReferenceShape {
    pub fn at(&self, tau0: f64) -> Result<TransmittanceDistribution> {
        match *self {
            ReferenceShape::Delta => TransmittanceDistribution::delta(tau0),
            ReferenceShape::Gaussian { sigma } => TransmittanceDistribution::gaussian(tau0, sigma),
            ReferenceShape::Uniform { half_width } => TransmittanceDistribution::uniform(tau0, half_width),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantumSweepMode {
    /// Exact lattice up to [`AUTO_LATTICE_LIMIT`] pairs, Gaussian surrogate above.
    #[default]
    Auto,
    ExactLattice,
    GaussianApprox,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub reference: ReferenceShape,
    pub defective: TransmittanceDistribution,
    pub tau0: Vec<f64>,
    /// Mean signal photons, shared by both probes.
    pub n_mean: f64,
    #[serde(default = "DetectionModel::ideal")]
    pub detection: DetectionModel,
    #[serde(default = "default_classical")]
    pub classical: ClassicalMode,
    #[serde(default)]
    pub quantum: QuantumSweepMode,
    #[serde(default = "default_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_classical() -> ClassicalMode {
    ClassicalMode::ClosedForm
}

fn default_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau0: f64,
    /// `None` where the bound's quadrature did not converge.
    pub bound: Option<StrategyResult>,
    pub classical_pc: StrategyResult,
    pub quantum: StrategyResult,
    /// Seed used for this row's Monte Carlo entry.
    pub seed: u64,
}

/// `C`, `C^pc` and `Q` at every τ0 of the grid. Rows come back in grid
/// order and each Monte Carlo entry draws from its own seed, derived from
/// the spec seed and the row index.
pub fn sweep_error_curves(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.tau0.is_empty() {
        return Err(Error::invalid("tau0 grid is empty"));
    }
    if let Some(t) = spec.tau0.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::SupportOutOfRange { lo: *t, hi: *t });
    }
    spec.detection.validate()?;
    let probe = ProbeModel::tmsv(spec.n_mean)?;
    spec.tau0
        .par_iter()
        .enumerate()
        .map(|(k, &tau0)| {
            let pair = ProcessPair::new(spec.reference.at(tau0)?, spec.defective.clone());
            let seed = splitmix(spec.seed, k as u64);
            let bound = match classical_bound(&pair, spec.n_mean * spec.detection.eta_s) {
                Ok(r) => Some(r),
                Err(Error::QuadratureFailed { .. }) => None,
                Err(e) => return Err(e),
            };
            let classical_pc = classical_pc_error(&pair, spec.n_mean, &spec.detection, spec.classical)?;
            let mode = match spec.quantum {
                QuantumSweepMode::Auto if spec.n_mean <= AUTO_LATTICE_LIMIT => QuantumMode::ExactLattice,
                QuantumSweepMode::Auto => QuantumMode::GaussianApprox,
                QuantumSweepMode::ExactLattice => QuantumMode::ExactLattice,
                QuantumSweepMode::GaussianApprox => QuantumMode::GaussianApprox,
                QuantumSweepMode::MonteCarlo => QuantumMode::MonteCarlo {
                    samples: spec.mc_samples,
                    seed,
                },
            };
            let quantum = quantum_pc_error(&pair, &probe, &spec.detection, mode)?;
            Ok(SweepRow {
                tau0,
                bound,
                classical_pc,
                quantum,
                seed,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(tau0: Vec<f64>) -> SweepSpec {
        SweepSpec {
            reference: ReferenceShape::Delta,
            defective: TransmittanceDistribution::uniform(0.9, 0.05).unwrap(),
            tau0,
            n_mean: 200.0,
            detection: DetectionModel::ideal(),
            classical: ClassicalMode::ClosedForm,
            quantum: QuantumSweepMode::Auto,
            mc_samples: 10_000,
            seed: 3,
        }
    }

    #[test]
    fn single_point_matches_individual_calls() {
        let s = spec(vec![0.88]);
        let rows = sweep_error_curves(&s).unwrap();
        assert_eq!(rows.len(), 1);
        let pair = ProcessPair::new(TransmittanceDistribution::delta(0.88).unwrap(), s.defective.clone());
        let det = DetectionModel::ideal();
        assert_eq!(rows[0].bound.as_ref().unwrap(), &classical_bound(&pair, 200.0).unwrap());
        assert_eq!(rows[0].classical_pc, classical_pc_error(&pair, 200.0, &det, ClassicalMode::ClosedForm).unwrap());
        let q = quantum_pc_error(&pair, &ProbeModel::tmsv(200.0).unwrap(), &det, QuantumMode::ExactLattice).unwrap();
        assert_eq!(rows[0].quantum, q);
    }

    #[test]
    fn quantum_never_above_classical_pc() {
        let rows = sweep_error_curves(&spec((0..9).map(|k| 0.82 + 0.02 * k as f64).collect())).unwrap();
        for r in rows {
            assert!(r.quantum.value <= r.classical_pc.value + 1e-12, "{r:?}");
        }
    }

    #[test]
    fn empty_and_out_of_range_grids() {
        assert!(matches!(sweep_error_curves(&spec(vec![])), Err(Error::InvalidParameter(_))));
        assert!(matches!(sweep_error_curves(&spec(vec![1.2])), Err(Error::SupportOutOfRange { .. })));
    }

    #[test]
    fn monte_carlo_rows_are_seeded_per_point() {
        let mut s = spec(vec![0.85, 0.85]);
        s.quantum = QuantumSweepMode::MonteCarlo;
        let a = sweep_error_curves(&s).unwrap();
        let b = sweep_error_curves(&s).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].seed, a[1].seed);
    }
}
