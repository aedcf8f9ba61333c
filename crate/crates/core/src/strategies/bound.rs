use rayon::prelude::*;

use super::{Method, StrategyResult};
use crate::distributions::{ProcessPair, TransmittanceDistribution};
use crate::error::{Error, Result};
use crate::quadrature;

const BOUND_TOL: f64 = 1e-10;

/// `√(1 − exp(−n̄(√τ₀ − √τ₁)²))`, one minus the coherent-state overlap
/// term, written with `expm1` so that it stays accurate near `τ₀ = τ₁`.
fn fidelity_gap(n: f64, t0: f64, t1: f64) -> f64 {
    let d = t0.sqrt() - t1.sqrt();
    (-(-n * d * d).exp_m1()).sqrt()
}

fn delta_point(g: &TransmittanceDistribution) -> Option<f64> {
    match g {
        TransmittanceDistribution::Delta(t) => Some(*t),
        _ => None,
    }
}

/// Lower bound on the error of any strategy with a classical probe of
/// `n_mean` photons, averaged over both processes.
///
/// The integrand has a kink on the diagonal `τ₀ = τ₁`; the inner rule is
/// split there for every outer node.
pub fn classical_bound(pair: &ProcessPair, n_mean: f64) -> Result<StrategyResult> {
    pair.require_equal_prior()?;
    if !(n_mean >= 0.0) || !n_mean.is_finite() {
        return Err(Error::invalid("mean photon number must be finite and >= 0"));
    }
    let (g0, g1) = (&pair.reference, &pair.defective);
    if n_mean == 0.0 || g0 == g1 && g0.is_delta() {
        return Ok(StrategyResult::exact(0.5, Method::ClosedForm));
    }
    let expectation = |panels: usize| -> Result<f64> {
        let outer_breaks: Vec<f64> = delta_point(g1).into_iter().collect();
        let outer = g0.quadrature_rule(panels, &outer_breaks);
        let terms: Vec<f64> = outer
            .par_iter()
            .map(|&(t0, w0)| {
                let inner = g1.quadrature_rule(panels, &[t0]);
                w0 * inner.iter().map(|&(t1, w1)| w1 * fidelity_gap(n_mean, t0, t1)).sum::<f64>()
            })
            .collect();
        Ok(terms.iter().sum())
    };
    let e = if g0.is_delta() && g1.is_delta() {
        expectation(1)?
    } else {
        quadrature::refine(2, BOUND_TOL, expectation, |a, b| (a - b).abs())?
    };
    let value = (0.5 * (1.0 - e)).clamp(0.0, 0.5);
    Ok(StrategyResult::exact(value, Method::ClosedForm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta(t: f64) -> TransmittanceDistribution {
        TransmittanceDistribution::delta(t).unwrap()
    }

    #[test]
    fn identical_deltas_are_indistinguishable() {
        for t in [0.0, 0.3, 1.0] {
            let r = classical_bound(&ProcessPair::new(delta(t), delta(t)), 1e4).unwrap();
            assert_eq!(r.value, 0.5);
        }
    }

    #[test]
    fn two_point_value() {
        let r = classical_bound(&ProcessPair::new(delta(0.5), delta(1.0)), 10.0).unwrap();
        let d = 0.5f64.sqrt() - 1.0;
        let exact = 0.5 * (1.0 - (1.0 - (-10.0 * d * d).exp()).sqrt());
        assert!((r.value - exact).abs() < 1e-15);
        assert!((r.value - 0.1206).abs() < 1e-4);
    }

    #[test]
    fn no_photons_no_information() {
        let g = TransmittanceDistribution::uniform(0.5, 0.2).unwrap();
        let r = classical_bound(&ProcessPair::new(delta(0.9), g), 0.0).unwrap();
        assert_eq!(r.value, 0.5);
    }

    #[test]
    fn smooth_pair_against_adaptive_oracle() {
        let g0 = TransmittanceDistribution::uniform(0.6, 0.05).unwrap();
        let g1 = TransmittanceDistribution::gaussian(0.62, 0.03).unwrap();
        let n = 500.0;
        let r = classical_bound(&ProcessPair::new(g0.clone(), g1.clone()), n).unwrap();
        // Independent oracle: nested adaptive integration of the densities.
        let inner = |t0: f64| {
            let f = |t1: f64| g1.pdf(t1).unwrap() * fidelity_gap(n, t0, t1);
            quadrature::integrate_adaptive(f, 0.0, t0, 1e-12).unwrap()
                + quadrature::integrate_adaptive(f, t0, 1.0, 1e-12).unwrap()
        };
        let e = quadrature::integrate_adaptive(|t0| g0.pdf(t0).unwrap() * inner(t0), 0.55, 0.65, 1e-11)
            .unwrap();
        assert!((r.value - 0.5 * (1.0 - e)).abs() < 1e-8, "{} vs {}", r.value, 0.5 * (1.0 - e));
    }

    #[test]
    fn rejects_unequal_prior() {
        let pair = ProcessPair::new(delta(0.5), delta(0.6)).with_prior(0.3).unwrap();
        assert!(matches!(classical_bound(&pair, 10.0), Err(Error::UnsupportedPrior(_))));
    }
}
