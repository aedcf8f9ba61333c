use serde::{Deserialize, Serialize};

use super::{ml_error, Method, StrategyResult};
use crate::distributions::{ProcessPair, TransmittanceDistribution};
use crate::error::{Error, Result};
use crate::photon::{gaussian_advisory, marginal_compound, DetectionModel, ProbeModel};
use crate::special::{normal_cdf, normal_pdf};

/// Outcome Gaussians of the two processes, in detected counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPair {
    pub mean0: f64,
    pub sd0: f64,
    pub mean1: f64,
    pub sd1: f64,
}

impl GaussianPair {
    pub fn new(mean0: f64, sd0: f64, mean1: f64, sd1: f64) -> Result<Self> {
        if !(sd0 > 0.0 && sd1 > 0.0) {
            return Err(Error::invalid("outcome standard deviations must be positive"));
        }
        Ok(GaussianPair { mean0, sd0, mean1, sd1 })
    }

    pub fn density(&self, x: usize, n: f64) -> f64 {
        let (m, s) = if x == 0 { (self.mean0, self.sd0) } else { (self.mean1, self.sd1) };
        normal_pdf((n - m) / s) / s
    }
}

/// Counts at which the two outcome densities are equal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Thresholds {
    /// Equal variances: the midpoint of the means.
    Single(f64),
    Double { lower: f64, upper: f64 },
}

/// Solve `G₀(n) = G₁(n)`.
///
/// Taking logs gives `a n² − 2b n + c = 0` with `a = s₁² − s₀²`,
/// `b = s₁²μ₀ − s₀²μ₁` and `c = s₁²μ₀² − s₀²μ₁² − 2s₀²s₁² ln(s₁/s₀)`. The
/// discriminant `b² − ac` equals `s₀²s₁²[(μ₁ − μ₀)² + 2a ln(s₁/s₀)]`, which is
/// never negative. Roots use the cancellation-free pairing `q/a`, `c/q`.
pub fn classical_pc_thresholds(gp: &GaussianPair) -> Result<Thresholds> {
    let GaussianPair { mean0: m0, sd0: s0, mean1: m1, sd1: s1 } = *gp;
    if m0 == m1 && s0 == s1 {
        return Err(Error::NoThreshold);
    }
    let (v0, v1) = (s0 * s0, s1 * s1);
    let a = v1 - v0;
    if a == 0.0 {
        return Ok(Thresholds::Single(0.5 * (m0 + m1)));
    }
    let log_ratio = (s1 / s0).ln();
    let b = v1 * m0 - v0 * m1;
    let c = v1 * m0 * m0 - v0 * m1 * m1 - 2.0 * v0 * v1 * log_ratio;
    let disc = s0 * s1 * ((m1 - m0).powi(2) + 2.0 * a * log_ratio).max(0.0).sqrt();
    let q = b + disc.copysign(b);
    let (r1, r2) = if q == 0.0 {
        (0.0, 0.0)
    } else {
        (q / a, c / q)
    };
    Ok(Thresholds::Double {
        lower: r1.min(r2),
        upper: r1.max(r2),
    })
}

/// `½ ∫ min(G₀, G₁)` for two Gaussians, using both thresholds.
pub fn gaussian_pc_error(gp: &GaussianPair) -> Result<f64> {
    let th = match classical_pc_thresholds(gp) {
        Ok(t) => t,
        Err(Error::NoThreshold) => return Ok(0.5),
        Err(e) => return Err(e),
    };
    let p = match th {
        Thresholds::Single(t) => {
            let (lo, hi) = if gp.mean0 <= gp.mean1 { (gp.mean0, gp.mean1) } else { (gp.mean1, gp.mean0) };
            let s = gp.sd0;
            0.5 * (normal_cdf((lo - t) / s) + normal_cdf((t - hi) / s))
        }
        Thresholds::Double { lower, upper } => {
            // The narrower Gaussian dominates between the roots.
            let ((mn, sn), (mw, sw)) = if gp.sd0 < gp.sd1 {
                ((gp.mean0, gp.sd0), (gp.mean1, gp.sd1))
            } else {
                ((gp.mean1, gp.sd1), (gp.mean0, gp.sd0))
            };
            let wide_inside = normal_cdf((upper - mw) / sw) - normal_cdf((lower - mw) / sw);
            let narrow_outside = normal_cdf((lower - mn) / sn) + normal_cdf((mn - upper) / sn);
            0.5 * (wide_inside + narrow_outside)
        }
    };
    Ok(p.clamp(0.0, 0.5))
}

/// Single-threshold form of `q`, the success margin `1 − 2·p_err`, valid
/// when only one root sits where the densities matter.
pub fn single_threshold_q(gp: &GaussianPair, n_th: f64) -> f64 {
    let e0 = statrs::function::erf::erf((n_th - gp.mean0) / (std::f64::consts::SQRT_2 * gp.sd0));
    let e1 = statrs::function::erf::erf((n_th - gp.mean1) / (std::f64::consts::SQRT_2 * gp.sd1));
    0.5 * (e0 - e1).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassicalMode {
    /// Gaussian or flat-top surrogates of the count distributions.
    ClosedForm,
    /// Maximum-likelihood sum on the exact count lattice.
    ExactLattice,
}

/// Continuous surrogate of a detected-count distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Surrogate {
    Gauss { mean: f64, sd: f64 },
    Flat { lo: f64, hi: f64 },
}

impl Surrogate {
    fn density(&self, x: f64) -> f64 {
        match *self {
            Surrogate::Gauss { mean, sd } => normal_pdf((x - mean) / sd) / sd,
            Surrogate::Flat { lo, hi } => {
                if x >= lo && x <= hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
        }
    }

    fn mass(&self, a: f64, b: f64) -> f64 {
        match *self {
            Surrogate::Gauss { mean, sd } => {
                let (za, zb) = ((a - mean) / sd, (b - mean) / sd);
                if za > 0.0 {
                    normal_cdf(-za) - normal_cdf(-zb)
                } else {
                    normal_cdf(zb) - normal_cdf(za)
                }
            }
            Surrogate::Flat { lo, hi } => (b.min(hi) - a.max(lo)).max(0.0) / (hi - lo),
        }
    }

    fn edges(&self) -> Vec<f64> {
        match *self {
            Surrogate::Gauss { .. } => Vec::new(),
            Surrogate::Flat { lo, hi } => vec![lo, hi],
        }
    }
}

/// Points where a Gaussian crosses the height of a flat top.
fn crossings(g: &Surrogate, f: &Surrogate) -> Vec<f64> {
    let (Surrogate::Gauss { mean, sd }, Surrogate::Flat { lo, hi }) = (*g, *f) else {
        return Vec::new();
    };
    let h = 1.0 / (hi - lo);
    let r = -2.0 * (h * sd * (2.0 * std::f64::consts::PI).sqrt()).ln();
    if r < 0.0 {
        return Vec::new();
    }
    let d = sd * r.sqrt();
    vec![mean - d, mean + d]
}

/// `½ ∫ min(f₀, f₁)` for surrogates of which at least one is flat. Between
/// consecutive breakpoints one density stays below the other, so each piece
/// is an exact mass.
fn piecewise_error(f0: &Surrogate, f1: &Surrogate) -> f64 {
    let mut pts: Vec<f64> = [f0.edges(), f1.edges(), crossings(f0, f1), crossings(f1, f0)].concat();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut bounds = vec![f64::NEG_INFINITY];
    bounds.extend(pts);
    bounds.push(f64::INFINITY);
    let mut total = 0.0;
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = match (a.is_finite(), b.is_finite()) {
            (true, true) => 0.5 * (a + b),
            (false, true) => b - 1.0,
            (true, false) => a + 1.0,
            (false, false) => 0.0,
        };
        let lower = if f0.density(mid) <= f1.density(mid) { f0 } else { f1 };
        total += lower.mass(a, b);
    }
    (0.5 * total).clamp(0.0, 0.5)
}

/// Flat-top surrogates apply when the Poisson spread is a tenth of the
/// spread of means or less.
const FLAT_RATIO: f64 = 0.1;

/// Surrogate for the detected counts of one process, or `None` when neither
/// limiting form applies and the exact lattice must decide.
fn surrogate(g: &TransmittanceDistribution, m: f64, dark: f64) -> Option<Surrogate> {
    let gauss = |mean: f64, var: f64| (var > 0.0).then(|| Surrogate::Gauss { mean, sd: var.sqrt() });
    match g {
        TransmittanceDistribution::Uniform(u) => {
            let spread = m * u.half_width();
            let mean = m * u.mean() + dark;
            let shot = (m * u.mean() + dark).sqrt();
            if shot > spread {
                gauss(mean, shot * shot + spread * spread / 3.0)
            } else if shot < FLAT_RATIO * spread {
                Some(Surrogate::Flat {
                    lo: mean - spread,
                    hi: mean + spread,
                })
            } else {
                None
            }
        }
        _ => {
            let (et, vt) = g.moments();
            gauss(m * et + dark, m * et + m * m * vt + dark)
        }
    }
}

/// Error of maximum-likelihood photon counting with a classical probe of
/// `n_mean` photons. Detection efficiency enters only as `η_S · n_mean`.
pub fn classical_pc_error(
    pair: &ProcessPair,
    n_mean: f64,
    det: &DetectionModel,
    mode: ClassicalMode,
) -> Result<StrategyResult> {
    pair.require_equal_prior()?;
    det.validate()?;
    let probe = ProbeModel::classical(n_mean)?;
    let (g0, g1) = (&pair.reference, &pair.defective);
    if g0 == g1 {
        return Ok(StrategyResult::exact(0.5, Method::ClosedForm));
    }
    let lattice = || -> Result<f64> {
        let h0 = marginal_compound(&probe, g0, det)?;
        let h1 = marginal_compound(&probe, g1, det)?;
        ml_error(&h0, &h1)
    };
    if mode == ClassicalMode::ExactLattice {
        return Ok(StrategyResult::exact(lattice()?, Method::ExactLattice));
    }
    let m = n_mean * det.eta_s;
    let advisory = gaussian_advisory(&probe, g0, det).or_else(|| gaussian_advisory(&probe, g1, det));
    let (s0, s1) = match (surrogate(g0, m, det.dark), surrogate(g1, m, det.dark)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Ok(StrategyResult::exact(lattice()?, Method::ExactLattice).with_advisory(Some(
                "count distribution between its Gaussian and flat-top limits; exact lattice used"
                    .to_string(),
            )))
        }
    };
    let value = match (s0, s1) {
        (Surrogate::Gauss { mean: a, sd: sa }, Surrogate::Gauss { mean: b, sd: sb }) => {
            gaussian_pc_error(&GaussianPair::new(a, sa, b, sb)?)?
        }
        _ => piecewise_error(&s0, &s1),
    };
    Ok(StrategyResult::exact(value, Method::ClosedForm).with_advisory(advisory))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(g0: TransmittanceDistribution, g1: TransmittanceDistribution) -> ProcessPair {
        ProcessPair::new(g0, g1)
    }

    #[test]
    fn threshold_examples() {
        let t = classical_pc_thresholds(&GaussianPair::new(100.0, 10.0, 200.0, 10.0).unwrap()).unwrap();
        assert_eq!(t, Thresholds::Single(150.0));
        assert!(matches!(
            classical_pc_thresholds(&GaussianPair::new(100.0, 10.0, 100.0, 10.0).unwrap()),
            Err(Error::NoThreshold)
        ));
        let gp = GaussianPair::new(100.0, 10.0, 200.0, 30.0).unwrap();
        let Thresholds::Double { lower, upper } = classical_pc_thresholds(&gp).unwrap() else {
            panic!()
        };
        for r in [lower, upper] {
            let (a, b) = (gp.density(0, r), gp.density(1, r));
            assert!((a - b).abs() <= 1e-10 * a.max(b), "root {r}: {a} vs {b}");
        }
    }

    #[test]
    fn two_threshold_error_matches_numeric_min_integral() {
        for gp in [
            GaussianPair::new(100.0, 10.0, 200.0, 30.0).unwrap(),
            GaussianPair::new(1000.0, 31.6, 1010.0, 60.0).unwrap(),
            GaussianPair::new(500.0, 40.0, 480.0, 22.0).unwrap(),
            GaussianPair::new(300.0, 17.0, 320.0, 17.0).unwrap(),
        ] {
            let lo = gp.mean0.min(gp.mean1) - 12.0 * gp.sd0.max(gp.sd1);
            let hi = gp.mean0.max(gp.mean1) + 12.0 * gp.sd0.max(gp.sd1);
            // Split at the crossings so every piece is smooth.
            let mut cuts = vec![lo];
            match classical_pc_thresholds(&gp).unwrap() {
                Thresholds::Single(t) => cuts.push(t),
                Thresholds::Double { lower, upper } => {
                    cuts.extend([lower, upper].into_iter().filter(|t| *t > lo && *t < hi))
                }
            }
            cuts.push(hi);
            let numeric = 0.5
                * cuts
                    .windows(2)
                    .map(|w| {
                        crate::quadrature::integrate(|x| gp.density(0, x).min(gp.density(1, x)), w[0], w[1], 400)
                    })
                    .sum::<f64>();
            let closed = gaussian_pc_error(&gp).unwrap();
            assert!((closed - numeric).abs() < 1e-9, "{gp:?}: {closed} vs {numeric}");
        }
    }

    #[test]
    fn single_threshold_form_agrees_in_its_regime() {
        let gp = GaussianPair::new(1000.0, 31.6, 1100.0, 36.0).unwrap();
        let Thresholds::Double { lower, upper } = classical_pc_thresholds(&gp).unwrap() else {
            panic!()
        };
        let (inner, outer) = if lower > 1000.0 && lower < 1100.0 { (lower, upper) } else { (upper, lower) };
        assert!(gp.density(0, outer).max(gp.density(1, outer)) < 1e-12);
        let q = single_threshold_q(&gp, inner);
        assert!((0.5 * (1.0 - q) - gaussian_pc_error(&gp).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn identical_processes() {
        let g = TransmittanceDistribution::gaussian(0.8, 0.01).unwrap();
        let r = classical_pc_error(&pair(g.clone(), g), 1e4, &DetectionModel::ideal(), ClassicalMode::ClosedForm)
            .unwrap();
        assert_eq!(r.value, 0.5);
    }

    #[test]
    fn closed_form_tracks_lattice_for_uniform() {
        let p = pair(
            TransmittanceDistribution::delta(0.7).unwrap(),
            TransmittanceDistribution::uniform(0.8, 0.0866).unwrap(),
        );
        let det = DetectionModel::ideal();
        let a = classical_pc_error(&p, 1e3, &det, ClassicalMode::ClosedForm).unwrap();
        let b = classical_pc_error(&p, 1e3, &det, ClassicalMode::ExactLattice).unwrap();
        assert!((a.value - b.value).abs() < 1e-2, "{} vs {}", a.value, b.value);
    }

    #[test]
    fn flat_top_limit() {
        // Wide uniform at high photon number: flat-top surrogate.
        let p = pair(
            TransmittanceDistribution::delta(0.5).unwrap(),
            TransmittanceDistribution::uniform(0.6, 0.3).unwrap(),
        );
        let det = DetectionModel::ideal();
        let a = classical_pc_error(&p, 1e5, &det, ClassicalMode::ClosedForm).unwrap();
        assert_eq!(a.method, Method::ClosedForm);
        let b = classical_pc_error(&p, 1e5, &det, ClassicalMode::ExactLattice).unwrap();
        assert!((a.value - b.value).abs() < 2e-3, "{} vs {}", a.value, b.value);
    }

    #[test]
    fn efficiency_is_a_photon_rescaling() {
        let p = pair(
            TransmittanceDistribution::delta(0.99).unwrap(),
            TransmittanceDistribution::gaussian(0.997, 0.003).unwrap(),
        );
        for mode in [ClassicalMode::ClosedForm, ClassicalMode::ExactLattice] {
            let a = classical_pc_error(&p, 1e4, &DetectionModel::new(0.8, 0.3, 0.0).unwrap(), mode).unwrap();
            let b = classical_pc_error(&p, 8e3, &DetectionModel::ideal(), mode).unwrap();
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn small_photon_numbers_are_flagged() {
        let p = pair(
            TransmittanceDistribution::delta(0.5).unwrap(),
            TransmittanceDistribution::gaussian(0.6, 0.05).unwrap(),
        );
        let r = classical_pc_error(&p, 20.0, &DetectionModel::ideal(), ClassicalMode::ClosedForm).unwrap();
        assert!(!r.advisories.is_empty());
    }
}
