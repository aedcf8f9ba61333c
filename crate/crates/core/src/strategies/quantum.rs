use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ml_error, Method, StrategyResult};
use crate::decision::DecisionRule;
use crate::distributions::{ProcessPair, TransmittanceDistribution};
use crate::error::{Error, Result};
use crate::monte_carlo::{estimate_error_frequencies, sample_process, splitmix};
use crate::photon::{process_count_distribution, required_cutoff, DetectionModel, ProbeModel};
use crate::quadrature;
use crate::special::normal_cdf;

/// Smallest Monte Carlo sample per process.
pub const MIN_MC_SAMPLES: usize = 1000;

/// Convergence threshold on Q for the Gaussian surrogate.
const GAUSSIAN_Q_TOL: f64 = 1e-7;

/// Half-width, in standard deviations, of the idler integration range and of
/// the signal windows.
const Z_MAX: f64 = 8.0;
const Z_STEP: f64 = 0.1;
const CELL_SPAN: f64 = 8.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QuantumMode {
    ExactLattice,
    GaussianApprox,
    MonteCarlo { samples: usize, seed: u64 },
}

/// Error of maximum-likelihood joint photon counting with a twin-beam probe.
pub fn quantum_pc_error(
    pair: &ProcessPair,
    probe: &ProbeModel,
    det: &DetectionModel,
    mode: QuantumMode,
) -> Result<StrategyResult> {
    pair.require_equal_prior()?;
    det.validate()?;
    let ProbeModel::TmsvPairSource { mean_pairs } = *probe else {
        return Err(Error::WrongArity { expected: "twin-beam probe" });
    };
    let (g0, g1) = (&pair.reference, &pair.defective);
    match mode {
        QuantumMode::ExactLattice => {
            if g0 == g1 {
                return Ok(StrategyResult::exact(0.5, Method::ExactLattice));
            }
            let cutoff = required_cutoff(probe, g0, det).max(required_cutoff(probe, g1, det));
            let p0 = process_count_distribution(probe, g0, det, Some(cutoff))?;
            let p1 = process_count_distribution(probe, g1, det, Some(cutoff))?;
            Ok(StrategyResult::exact(ml_error(&p0, &p1)?, Method::ExactLattice))
        }
        QuantumMode::GaussianApprox => {
            if g0 == g1 {
                return Ok(StrategyResult::exact(0.5, Method::GaussianApprox));
            }
            let q = quadrature::refine(
                1,
                GAUSSIAN_Q_TOL,
                |panels| Ok(gaussian_q(g0, g1, mean_pairs, det, panels)),
                |a, b| (a - b).abs(),
            )?;
            let advisory = crate::photon::gaussian_advisory(probe, g0, det)
                .or_else(|| crate::photon::gaussian_advisory(probe, g1, det));
            Ok(StrategyResult::exact(q, Method::GaussianApprox).with_advisory(advisory))
        }
        QuantumMode::MonteCarlo { samples, seed } => {
            if samples < MIN_MC_SAMPLES {
                return Err(Error::InsufficientSamples {
                    given: samples,
                    minimum: MIN_MC_SAMPLES,
                });
            }
            let cutoff = required_cutoff(probe, g0, det).max(required_cutoff(probe, g1, det));
            let p0 = process_count_distribution(probe, g0, det, Some(cutoff))?;
            let p1 = process_count_distribution(probe, g1, det, Some(cutoff))?;
            let r0 = sample_process(probe, det, g0, samples, splitmix(seed, 0))?;
            let r1 = sample_process(probe, det, g1, samples, splitmix(seed, 1))?;
            let f = estimate_error_frequencies(&r0, &r1, &p0, &p1, &DecisionRule::ml())?;
            let mut result = StrategyResult {
                value: f.p_err,
                method: Method::MonteCarlo,
                std_error: f.se,
                advisories: Vec::new(),
            };
            if f.fallback_labels > 0 {
                result.advisories.push(format!(
                    "{} records fell outside both lattices and were labeled by Gaussian surrogates",
                    f.fallback_labels
                ));
            }
            Ok(result)
        }
    }
}

/// Conditional law of n_S given n_I at one transmittance, under the
/// bivariate normal with the model's per-τ moments.
struct Conditional {
    offset: f64,
    slope: f64,
    sd: f64,
}

fn conditionals(rule: &[(f64, f64)], lambda: f64, det: &DetectionModel) -> Vec<(Conditional, f64)> {
    let mean_i = lambda * det.eta_i + det.dark;
    rule.iter()
        .map(|&(tau, w)| {
            let mean_s = lambda * det.eta_s * tau + det.dark;
            let cov = lambda * det.eta_s * det.eta_i * tau;
            let (slope, var) = if mean_i > 0.0 {
                (cov / mean_i, mean_s - cov * cov / mean_i)
            } else {
                (0.0, mean_s)
            };
            (
                Conditional {
                    offset: mean_s - slope * mean_i,
                    slope,
                    sd: var.max(0.0).sqrt(),
                },
                w,
            )
        })
        .collect()
}

/// Probability of the integer cell `n` under N(m, s²); a zero `s` puts all
/// mass in the cell containing `m`.
fn cell_masses(m: f64, s: f64, lo: i64, hi: i64, w: f64, out: &mut [f64], base: i64) {
    if s == 0.0 {
        let n = m.round() as i64;
        if n >= lo && n <= hi {
            out[(n - base) as usize] += w;
        }
        return;
    }
    let cdf = |x: f64| -> (f64, f64) {
        let z = (x - m) / s;
        (normal_cdf(z), normal_cdf(-z))
    };
    let mut prev = cdf(lo as f64 - 0.5);
    for n in lo..=hi {
        let next = cdf(n as f64 + 0.5);
        // Differences of upper tails above the mean, lower tails below.
        let p = if n as f64 > m { prev.1 - next.1 } else { next.0 - prev.0 };
        out[(n - base) as usize] += w * p.max(0.0);
        prev = next;
    }
}

fn window(c: &Conditional, n_i: f64) -> (f64, f64) {
    let m = c.offset + c.slope * n_i;
    let half = CELL_SPAN * c.sd + 0.5;
    (m - half, m + half)
}

fn support(cs: &[(Conditional, f64)], n_i: f64) -> (f64, f64) {
    cs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, _)| {
        let (lo, hi) = window(c, n_i);
        (a.min(lo), b.max(hi))
    })
}

fn conditional_pmf(cs: &[(Conditional, f64)], n_i: f64, lo: i64, hi: i64) -> Vec<f64> {
    let mut out = vec![0.0; (hi - lo + 1) as usize];
    for (c, w) in cs {
        let (a, b) = window(c, n_i);
        let a = (a.floor() as i64).max(lo);
        let b = (b.ceil() as i64).min(hi);
        if a <= b {
            cell_masses(c.offset + c.slope * n_i, c.sd, a, b, *w, &mut out, lo);
        }
    }
    out
}

/// `½ Σ min` over the per-τ bivariate normal surrogates, with n_I
/// integrated by the trapezoid rule on a ±8σ grid and n_S kept on integer
/// cells.
fn gaussian_q(
    g0: &TransmittanceDistribution,
    g1: &TransmittanceDistribution,
    lambda: f64,
    det: &DetectionModel,
    panels: usize,
) -> f64 {
    let c0 = conditionals(&g0.quadrature_rule(panels, &[]), lambda, det);
    let c1 = conditionals(&g1.quadrature_rule(panels, &[]), lambda, det);
    let mean_i = lambda * det.eta_i + det.dark;
    let sd_i = mean_i.sqrt();
    let steps = (2.0 * Z_MAX / Z_STEP).round() as usize;
    let nodes: Vec<(f64, f64)> = if sd_i == 0.0 {
        vec![(mean_i, 1.0)]
    } else {
        let raw: Vec<(f64, f64)> = (0..=steps)
            .map(|k| {
                let z = -Z_MAX + k as f64 * Z_STEP;
                let end = if k == 0 || k == steps { 0.5 } else { 1.0 };
                (mean_i + sd_i * z, end * (-0.5 * z * z).exp())
            })
            .collect();
        let total: f64 = raw.iter().map(|x| x.1).sum();
        raw.into_iter().map(|(x, w)| (x, w / total)).collect()
    };
    let terms: Vec<f64> = nodes
        .par_iter()
        .map(|&(n_i, wz)| {
            let (a0, b0) = support(&c0, n_i);
            let (a1, b1) = support(&c1, n_i);
            let lo = a0.max(a1).floor() as i64;
            let hi = b0.min(b1).ceil() as i64;
            if lo > hi {
                return 0.0;
            }
            let p0 = conditional_pmf(&c0, n_i, lo, hi);
            let p1 = conditional_pmf(&c1, n_i, lo, hi);
            wz * p0.iter().zip(&p1).map(|(a, b)| a.min(*b)).sum::<f64>()
        })
        .collect();
    (0.5 * terms.iter().sum::<f64>()).clamp(0.0, 0.5)
}
