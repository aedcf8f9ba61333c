//! Biased maximum-likelihood labeling, conditional error probabilities and
//! cost optimization over the bias.
//!
//! A record is labeled `0` (reference) when `B⁰·p₀ ≥ B¹·p₁`, with
//! `B⁰ = (1 − b)/2` and `B¹ = (1 + b)/2`; ties go to the reference. Each
//! lattice cell therefore contributes to exactly one of the two error
//! types.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photon::{CountDistribution, JointLattice, SparseRow};

/// Default number of points on the bias grid.
pub const DEFAULT_BIAS_POINTS: usize = 201;

/// Relative change below which neighbouring costs count as equal when
/// checking the shape of a cost curve.
const PLATEAU_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    bias: f64,
}

impl DecisionRule {
    pub fn new(bias: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&bias) {
            return Err(Error::invalid(format!("bias {bias} must lie in [-1, 1]")));
        }
        Ok(DecisionRule { bias })
    }

    /// Plain maximum likelihood, `b = 0`.
    pub fn ml() -> Self {
        DecisionRule { bias: 0.0 }
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// `(B⁰, B¹)`.
    pub fn weights(&self) -> (f64, f64) {
        (0.5 * (1.0 - self.bias), 0.5 * (1.0 + self.bias))
    }

    fn picks_reference(&self, lik0: f64, lik1: f64) -> bool {
        let (b0, b1) = self.weights();
        b0 * lik0 >= b1 * lik1
    }
}

impl Default for DecisionRule {
    fn default() -> Self {
        DecisionRule::ml()
    }
}

/// Label a record from its two likelihoods: `0` for the reference process,
/// `1` for the defective one.
pub fn decide(lik0: f64, lik1: f64, rule: &DecisionRule) -> Result<u8> {
    if !(lik0 >= 0.0 && lik1 >= 0.0) {
        return Err(Error::invalid("likelihoods must be nonnegative"));
    }
    if lik0 == 0.0 && lik1 == 0.0 {
        return Err(Error::ZeroLikelihood);
    }
    Ok(if rule.picks_reference(lik0, lik1) { 0 } else { 1 })
}

/// Weight `S` of false negatives in the total cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    s: f64,
}

impl CostSpec {
    pub fn new(s: f64) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::invalid(format!("cost weight S = {s} must lie in (0, 1)")));
        }
        Ok(CostSpec { s })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// Bias minimizing the cost for exactly known likelihoods, `1 − 2S`.
    pub fn bayes_bias(&self) -> f64 {
        1.0 - 2.0 * self.s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Defective process labeled as reference (false positive).
    pub p01: f64,
    /// Reference process labeled as defective (false negative).
    pub p10: f64,
    pub p_err: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
}

impl ErrorReport {
    pub fn new(p01: f64, p10: f64) -> Self {
        ErrorReport {
            p01,
            p10,
            p_err: 0.5 * (p01 + p10),
            cost: None,
        }
    }

    pub fn with_cost(mut self, spec: &CostSpec) -> Self {
        self.cost = Some(cost(&self, spec));
        self
    }
}

/// `S·p10 + (1 − S)·p01`.
pub fn cost(report: &ErrorReport, spec: &CostSpec) -> f64 {
    if spec.s == 0.5 {
        return report.p_err;
    }
    spec.s * report.p10 + (1.0 - spec.s) * report.p01
}

/// Aligned likelihood pairs of two lattices, visited cell by cell.
pub(crate) fn for_each_cell_pair(
    p0: &CountDistribution,
    p1: &CountDistribution,
    mut f: impl FnMut(f64, f64),
) -> Result<()> {
    fn rows(a: &SparseRow, b: &SparseRow, f: &mut impl FnMut(f64, f64)) {
        let lo = a.start.min(b.start);
        let hi = a.end().max(b.end());
        for n in lo..hi {
            f(a.get(n), b.get(n));
        }
    }
    match (p0, p1) {
        (CountDistribution::Single(a), CountDistribution::Single(b)) => rows(a, b, &mut f),
        (CountDistribution::Joint(a), CountDistribution::Joint(b)) => {
            let lo = a.idler_start.min(b.idler_start);
            let hi = (a.idler_start + a.rows.len() as u64).max(b.idler_start + b.rows.len() as u64);
            let empty = SparseRow::default();
            fn row<'a>(j: &'a JointLattice, n: u64, empty: &'a SparseRow) -> &'a SparseRow {
                n.checked_sub(j.idler_start)
                    .and_then(|k| j.rows.get(k as usize))
                    .unwrap_or(empty)
            }
            for n in lo..hi {
                rows(row(a, n, &empty), row(b, n, &empty), &mut f);
            }
        }
        _ => return Err(Error::SupportMismatch),
    }
    Ok(())
}

/// Flattened likelihood pairs; used when the same lattices are scanned many
/// times.
fn cell_pairs(p0: &CountDistribution, p1: &CountDistribution) -> Result<Vec<(f64, f64)>> {
    let mut cells = Vec::new();
    for_each_cell_pair(p0, p1, |a, b| {
        if a > 0.0 || b > 0.0 {
            cells.push((a, b));
        }
    })?;
    Ok(cells)
}

fn errors_on_cells(cells: &[(f64, f64)], rule: &DecisionRule) -> ErrorReport {
    let (mut p01, mut p10) = (0.0, 0.0);
    for &(a, b) in cells {
        if rule.picks_reference(a, b) {
            p01 += b;
        } else {
            p10 += a;
        }
    }
    ErrorReport::new(p01, p10)
}

/// False-positive and false-negative probabilities of `rule` on two exact
/// lattices of the same arity.
pub fn conditional_errors(
    p0: &CountDistribution,
    p1: &CountDistribution,
    rule: &DecisionRule,
) -> Result<ErrorReport> {
    let (mut p01, mut p10) = (0.0, 0.0);
    for_each_cell_pair(p0, p1, |a, b| {
        if rule.picks_reference(a, b) {
            p01 += b;
        } else {
            p10 += a;
        }
    })?;
    Ok(ErrorReport::new(p01, p10))
}

/// `n` equally spaced bias values spanning [-1, 1].
pub fn bias_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasPoint {
    pub bias: f64,
    pub report: ErrorReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasOptimum {
    pub bias: f64,
    pub cost: f64,
    pub report: ErrorReport,
    /// Grid bounds of the flat stretch of minimal cost.
    pub plateau: (f64, f64),
    pub unimodal: bool,
    pub curve: Vec<BiasPoint>,
    pub advisories: Vec<String>,
}

fn same_cost(a: f64, b: f64) -> bool {
    (a - b).abs() <= PLATEAU_TOL * a.abs().max(b.abs()).max(1e-300)
}

/// Whether a sampled curve falls, then rises, with flat stretches allowed.
pub fn is_unimodal(values: &[f64]) -> bool {
    let mut rising = false;
    for w in values.windows(2) {
        if same_cost(w[0], w[1]) {
            continue;
        }
        if w[1] > w[0] {
            rising = true;
        } else if rising {
            return false;
        }
    }
    true
}

/// Minimize the cost over a bias grid, then refine with a parabola through
/// the minimum and its neighbours.
///
/// On a lattice the cost is piecewise constant in `b`, so the minimum is
/// usually a flat stretch. Among its grid points the one nearest `1 − 2S`
/// is returned; that bias is optimal for every pair of likelihoods.
pub fn optimize_bias(
    p0: &CountDistribution,
    p1: &CountDistribution,
    spec: &CostSpec,
    grid: &[f64],
) -> Result<BiasOptimum> {
    if grid.len() < 3 {
        return Err(Error::invalid("bias grid needs at least 3 points"));
    }
    if grid.iter().any(|b| !(-1.0..=1.0).contains(b)) {
        return Err(Error::invalid("bias grid must lie in [-1, 1]"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("bias grid must be strictly increasing"));
    }
    let cells = cell_pairs(p0, p1)?;
    let curve: Vec<BiasPoint> = grid
        .par_iter()
        .map(|&bias| BiasPoint {
            bias,
            report: errors_on_cells(&cells, &DecisionRule { bias }).with_cost(spec),
        })
        .collect();
    let costs: Vec<f64> = curve.iter().map(|p| p.report.cost.unwrap_or(f64::NAN)).collect();
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let first = costs.iter().position(|&c| same_cost(c, min)).unwrap_or(0);
    let mut last = first;
    while last + 1 < costs.len() && same_cost(costs[last + 1], min) {
        last += 1;
    }
    let target = spec.bayes_bias();
    let best = (first..=last)
        .min_by(|&a, &b| (grid[a] - target).abs().total_cmp(&(grid[b] - target).abs()))
        .unwrap_or(first);

    let mut advisories = Vec::new();
    let unimodal = is_unimodal(&costs);
    if !unimodal {
        advisories.push("non-unimodal cost curve; global grid minimum returned".to_string());
    }
    let (mut bias, mut report) = (grid[best], curve[best].report);
    if best > 0 && best + 1 < grid.len() {
        let (x0, x1, x2) = (grid[best - 1], grid[best], grid[best + 1]);
        let (y0, y1, y2) = (costs[best - 1], costs[best], costs[best + 1]);
        let denom = (x0 - x1) * (x0 - x2) * (x1 - x2);
        let a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom;
        let b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom;
        if a > 0.0 {
            let vertex = -b / (2.0 * a);
            if vertex > x0 && vertex < x2 {
                let r = errors_on_cells(&cells, &DecisionRule { bias: vertex }).with_cost(spec);
                if r.cost.unwrap_or(f64::INFINITY) < y1 && !same_cost(r.cost.unwrap_or(y1), y1) {
                    bias = vertex;
                    report = r;
                }
            }
        }
    }
    Ok(BiasOptimum {
        bias,
        cost: report.cost.unwrap_or(f64::NAN),
        report,
        plateau: (grid[first], grid[last]),
        unimodal,
        curve,
        advisories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::poisson_pmf_window;
    use proptest::prelude::*;

    fn poisson(mean: f64) -> CountDistribution {
        let (lo, v) = poisson_pmf_window(mean);
        CountDistribution::Single(SparseRow::new(lo, v))
    }

    #[test]
    fn decide_examples() {
        assert_eq!(decide(0.3, 0.1, &DecisionRule::ml()).unwrap(), 0);
        assert_eq!(decide(0.3, 0.1, &DecisionRule::new(1.0).unwrap()).unwrap(), 1);
        assert_eq!(decide(0.3, 0.2, &DecisionRule::new(0.6).unwrap()).unwrap(), 1);
        assert_eq!(decide(0.2, 0.2, &DecisionRule::ml()).unwrap(), 0);
        assert!(matches!(decide(0.0, 0.0, &DecisionRule::ml()), Err(Error::ZeroLikelihood)));
        assert!(DecisionRule::new(1.5).is_err());
    }

    #[test]
    fn extreme_biases() {
        let (a, b) = (poisson(20.0), poisson(30.0));
        let r = conditional_errors(&a, &b, &DecisionRule::new(-1.0).unwrap()).unwrap();
        assert!((r.p01 - 1.0).abs() < 1e-12 && r.p10 == 0.0);
        let r = conditional_errors(&a, &b, &DecisionRule::new(1.0).unwrap()).unwrap();
        assert!(r.p01 == 0.0 && (r.p10 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cost_examples() {
        let r = ErrorReport::new(0.2, 0.1);
        assert_eq!(cost(&r, &CostSpec::new(0.5).unwrap()), r.p_err);
        assert!((cost(&r, &CostSpec::new(0.25).unwrap()) - 0.175).abs() < 1e-15);
        assert_eq!(cost(&ErrorReport::new(0.0, 0.0), &CostSpec::new(0.3).unwrap()), 0.0);
        assert!(CostSpec::new(1.0).is_err());
    }

    #[test]
    fn ml_bias_is_optimal_for_equal_weights() {
        let (a, b) = (poisson(100.0), poisson(120.0));
        let opt = optimize_bias(&a, &b, &CostSpec::new(0.5).unwrap(), &bias_grid(201)).unwrap();
        assert!(opt.bias.abs() <= 0.01, "{}", opt.bias);
        assert!(opt.plateau.0 <= 0.0 && 0.0 <= opt.plateau.1);
        assert!(opt.unimodal);
    }

    #[test]
    fn optimum_tracks_bayes_bias() {
        let (a, b) = (poisson(100.0), poisson(120.0));
        for s in [0.1, 0.25, 0.6, 0.8] {
            let spec = CostSpec::new(s).unwrap();
            let opt = optimize_bias(&a, &b, &spec, &bias_grid(201)).unwrap();
            let bayes = conditional_errors(&a, &b, &DecisionRule::new(spec.bayes_bias()).unwrap())
                .unwrap()
                .with_cost(&spec);
            assert!(opt.cost <= bayes.cost.unwrap() + 1e-12);
            assert!(opt.plateau.0 - 0.01 <= spec.bayes_bias() && spec.bayes_bias() <= opt.plateau.1 + 0.01);
        }
    }

    #[test]
    fn short_grid_is_rejected() {
        let (a, b) = (poisson(10.0), poisson(12.0));
        assert!(optimize_bias(&a, &b, &CostSpec::new(0.5).unwrap(), &[0.0, 1.0]).is_err());
    }

    #[test]
    fn mismatched_arity() {
        let j = crate::photon::joint_conditional(
            &crate::photon::ProbeModel::tmsv(3.0).unwrap(),
            0.5,
            &crate::photon::DetectionModel::ideal(),
            None,
        )
        .unwrap();
        assert!(matches!(
            conditional_errors(&poisson(3.0), &j, &DecisionRule::ml()),
            Err(Error::SupportMismatch)
        ));
    }

    #[test]
    fn unimodality_check() {
        assert!(is_unimodal(&[3.0, 2.0, 2.0, 1.0, 1.0, 4.0]));
        assert!(!is_unimodal(&[3.0, 1.0, 2.0, 0.5, 4.0]));
    }

    proptest! {
        #[test]
        fn decide_is_scale_invariant(l0 in 0.0f64..1.0, l1 in 0.0f64..1.0, b in -1.0f64..1.0, k in 1e-6f64..1e6) {
            prop_assume!(l0 > 0.0 || l1 > 0.0);
            let r = DecisionRule::new(b).unwrap();
            // Products can round differently; skip near-ties.
            let (w0, w1) = r.weights();
            prop_assume!((w0 * l0 - w1 * l1).abs() > 1e-12 * (w0 * l0 + w1 * l1));
            prop_assert_eq!(decide(l0, l1, &r).unwrap(), decide(k * l0, k * l1, &r).unwrap());
        }

        #[test]
        fn error_types_are_monotone_in_bias(m0 in 5.0f64..50.0, m1 in 5.0f64..50.0, b in -1.0f64..0.99, step in 0.001f64..0.5) {
            let (a, c) = (poisson(m0), poisson(m1));
            let b2 = (b + step).min(1.0);
            let r1 = conditional_errors(&a, &c, &DecisionRule::new(b).unwrap()).unwrap();
            let r2 = conditional_errors(&a, &c, &DecisionRule::new(b2).unwrap()).unwrap();
            prop_assert!(r2.p01 <= r1.p01 + 1e-15);
            prop_assert!(r2.p10 >= r1.p10 - 1e-15);
        }

        #[test]
        fn half_weight_cost_is_error(p01 in 0.0f64..1.0, p10 in 0.0f64..1.0) {
            let r = ErrorReport::new(p01, p10);
            prop_assert_eq!(cost(&r, &CostSpec::new(0.5).unwrap()), r.p_err);
        }
    }
}
