//! Photon-count statistics of classical and twin-beam probes after a lossy
//! channel, imperfect detection and averaging over a transmittance density.
//!
//! The twin-beam source is taken in its Poisson-pair limit: a Poisson number
//! of pairs, each photon of which is independently lost. Thinning a Poisson
//! variable leaves it Poisson, so the detected counts split into three
//! independent Poisson components (shared, signal-only, idler-only) plus
//! dark counts. Conditioned on the idler count, the signal count is a
//! binomial draw from it convolved with a Poisson remainder. The idler
//! marginal does not depend on τ, which keeps averaged lattices aligned
//! row by row.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::TransmittanceDistribution;
use crate::error::{Error, Result};
use crate::quadrature;
use crate::special::{
    binomial_pmf_window, convolve, poisson_pmf_window, poisson_upper_tail,
    poisson_window, reg_gamma_lower, reg_gamma_upper,
};

/// Tail mass a lattice cutoff may drop.
pub const CUTOFF_TAIL: f64 = 1e-10;

/// Per-point tolerance for the τ quadrature of averaged lattices.
pub const LATTICE_TOL: f64 = 1e-9;

/// Below this many expected detected signal photons the Gaussian surrogates
/// are flagged as unreliable.
pub const GAUSSIAN_ADVISORY_MEAN: f64 = 50.0;

// τ nodes are accumulated in fixed-size chunks so that the summation order
// does not depend on the number of worker threads.
const NODE_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeModel {
    /// Coherent probe with `mean_photons` photons on average.
    ClassicalPoisson { mean_photons: f64 },
    /// Twin-beam source in the Poisson-pair limit with `mean_pairs` pairs.
    TmsvPairSource { mean_pairs: f64 },
}

impl ProbeModel {
    pub fn classical(mean_photons: f64) -> Result<Self> {
        check_mean(mean_photons)?;
        Ok(ProbeModel::ClassicalPoisson { mean_photons })
    }

    pub fn tmsv(mean_pairs: f64) -> Result<Self> {
        check_mean(mean_pairs)?;
        Ok(ProbeModel::TmsvPairSource { mean_pairs })
    }

    /// Mean photon number sent through the sample.
    pub fn mean_photons(&self) -> f64 {
        match *self {
            ProbeModel::ClassicalPoisson { mean_photons } => mean_photons,
            ProbeModel::TmsvPairSource { mean_pairs } => mean_pairs,
        }
    }
}

fn check_mean(m: f64) -> Result<()> {
    if !(m >= 0.0) || !m.is_finite() {
        return Err(Error::invalid(format!("mean photon number {m} must be finite and >= 0")));
    }
    Ok(())
}

/// Detector efficiencies and mean dark counts per frame and region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionModel {
    #[serde(default = "one")]
    pub eta_s: f64,
    #[serde(default = "one")]
    pub eta_i: f64,
    #[serde(default)]
    pub dark: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for DetectionModel {
    fn default() -> Self {
        DetectionModel::ideal()
    }
}

impl DetectionModel {
    pub fn ideal() -> Self {
        DetectionModel {
            eta_s: 1.0,
            eta_i: 1.0,
            dark: 0.0,
        }
    }

    pub fn new(eta_s: f64, eta_i: f64, dark: f64) -> Result<Self> {
        let d = DetectionModel { eta_s, eta_i, dark };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta_s", self.eta_s), ("eta_i", self.eta_i)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} must lie in [0, 1]")));
            }
        }
        if !(self.dark >= 0.0) || !self.dark.is_finite() {
            return Err(Error::invalid("dark counts must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Pmf on consecutive counts `start, start + 1, ...`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub start: u64,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn new(start: u64, values: Vec<f64>) -> Self {
        SparseRow { start, values }
    }

    pub fn end(&self) -> u64 {
        self.start + self.values.len() as u64
    }

    pub fn get(&self, n: u64) -> f64 {
        if n < self.start {
            return 0.0;
        }
        self.values.get((n - self.start) as usize).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.values.iter().enumerate().map(move |(i, &v)| (self.start + i as u64, v))
    }

    /// `self += w · (start, values)`, widening as needed.
    pub fn add_scaled(&mut self, start: u64, values: &[f64], w: f64) {
        if values.is_empty() {
            return;
        }
        if self.values.is_empty() {
            self.start = start;
            self.values = values.iter().map(|v| v * w).collect();
            return;
        }
        let end = start + values.len() as u64;
        let new_start = self.start.min(start);
        let new_end = self.end().max(end);
        if new_start < self.start || new_end > self.end() {
            let mut grown = vec![0.0; (new_end - new_start) as usize];
            let off = (self.start - new_start) as usize;
            grown[off..off + self.values.len()].copy_from_slice(&self.values);
            self.values = grown;
            self.start = new_start;
        }
        let off = (start - self.start) as usize;
        for (dst, v) in self.values[off..].iter_mut().zip(values) {
            *dst += v * w;
        }
    }

    /// Drop entries above `cutoff`.
    fn truncate_at(&mut self, cutoff: u64) {
        if self.start > cutoff {
            self.values.clear();
        } else {
            let keep = (cutoff - self.start + 1) as usize;
            self.values.truncate(keep);
        }
    }

    /// Largest pointwise difference to `other`.
    pub fn max_abs_diff(&self, other: &SparseRow) -> f64 {
        let lo = self.start.min(other.start);
        let hi = self.end().max(other.end());
        (lo..hi)
            .map(|n| (self.get(n) - other.get(n)).abs())
            .fold(0.0, f64::max)
    }

    fn moments(&self) -> (f64, f64, f64) {
        let mut m = [0.0; 3];
        for (n, v) in self.iter() {
            let x = n as f64;
            m[0] += v;
            m[1] += v * x;
            m[2] += v * x * x;
        }
        (m[0], m[1], m[2])
    }
}

/// Joint pmf of (n_S, n_I); `rows[i]` is the signal pmf (not conditional,
/// already weighted) at idler count `idler_start + i`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JointLattice {
    pub idler_start: u64,
    pub rows: Vec<SparseRow>,
}

impl JointLattice {
    pub fn get(&self, n_s: u64, n_i: u64) -> f64 {
        if n_i < self.idler_start {
            return 0.0;
        }
        self.rows
            .get((n_i - self.idler_start) as usize)
            .map_or(0.0, |r| r.get(n_s))
    }

    pub fn total(&self) -> f64 {
        self.rows.iter().map(SparseRow::total).sum()
    }

    pub fn idler_marginal(&self) -> SparseRow {
        SparseRow::new(self.idler_start, self.rows.iter().map(SparseRow::total).collect())
    }

    pub fn signal_marginal(&self) -> SparseRow {
        let mut out = SparseRow::default();
        for r in &self.rows {
            out.add_scaled(r.start, &r.values, 1.0);
        }
        out
    }

    /// Mean vector `[n_S, n_I]` and covariance.
    pub fn moments(&self) -> ([f64; 2], [[f64; 2]; 2]) {
        let mut s = [0.0; 6]; // total, Σs, Σi, Σs², Σi², Σsi
        for (k, r) in self.rows.iter().enumerate() {
            let ni = (self.idler_start + k as u64) as f64;
            let (m0, m1, m2) = r.moments();
            s[0] += m0;
            s[1] += m1;
            s[2] += ni * m0;
            s[3] += m2;
            s[4] += ni * ni * m0;
            s[5] += ni * m1;
        }
        let (ms, mi) = (s[1] / s[0], s[2] / s[0]);
        let vs = s[3] / s[0] - ms * ms;
        let vi = s[4] / s[0] - mi * mi;
        let c = s[5] / s[0] - ms * mi;
        ([ms, mi], [[vs, c], [c, vi]])
    }

    fn accumulate(&mut self, other: &JointLattice, w: f64) {
        if self.rows.is_empty() {
            self.idler_start = other.idler_start;
            self.rows = vec![SparseRow::default(); other.rows.len()];
        }
        debug_assert_eq!(self.idler_start, other.idler_start);
        for (dst, src) in self.rows.iter_mut().zip(&other.rows) {
            dst.add_scaled(src.start, &src.values, w);
        }
    }

    pub fn max_abs_diff(&self, other: &JointLattice) -> f64 {
        if self.idler_start != other.idler_start || self.rows.len() != other.rows.len() {
            return f64::INFINITY;
        }
        self.rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

/// Mean vector and covariance of a Gaussian surrogate (one or two axes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoments {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl GaussianMoments {
    pub fn sd(&self, axis: usize) -> f64 {
        self.cov[axis][axis].max(0.0).sqrt()
    }

    pub fn correlation(&self) -> Option<f64> {
        if self.mean.len() != 2 {
            return None;
        }
        Some(self.cov[0][1] / (self.sd(0) * self.sd(1)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CountDistribution {
    Single(SparseRow),
    Joint(JointLattice),
    Gaussian(GaussianMoments),
}

impl CountDistribution {
    pub fn as_single(&self) -> Result<&SparseRow> {
        match self {
            CountDistribution::Single(r) => Ok(r),
            _ => Err(Error::WrongArity { expected: "single-count lattice" }),
        }
    }

    pub fn as_joint(&self) -> Result<&JointLattice> {
        match self {
            CountDistribution::Joint(j) => Ok(j),
            _ => Err(Error::WrongArity { expected: "joint lattice" }),
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            CountDistribution::Single(r) => r.total(),
            CountDistribution::Joint(j) => j.total(),
            CountDistribution::Gaussian(_) => 1.0,
        }
    }

    /// Write `n,mass` or `n_s,n_i,mass` rows (lattices) or `{mean, cov}`
    /// JSON (Gaussian surrogates).
    pub fn export(&self, mut out: impl Write) -> Result<()> {
        match self {
            CountDistribution::Single(r) => {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(["n", "mass"])?;
                for (n, v) in r.iter() {
                    w.write_record([n.to_string(), v.to_string()])?;
                }
                w.flush()?;
            }
            CountDistribution::Joint(j) => {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(["n_s", "n_i", "mass"])?;
                for (k, r) in j.rows.iter().enumerate() {
                    let ni = j.idler_start + k as u64;
                    for (ns, v) in r.iter() {
                        w.write_record([ns.to_string(), ni.to_string(), v.to_string()])?;
                    }
                }
                w.flush()?;
            }
            CountDistribution::Gaussian(g) => {
                serde_json::to_writer_pretty(&mut out, g)?;
                writeln!(out)?;
            }
        }
        Ok(())
    }

    pub fn export_to_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.export(f)
    }
}

/// Binomial thinning of a single-count pmf.
pub fn loss_map(pmf: &CountDistribution, tau_eff: f64) -> Result<CountDistribution> {
    let row = pmf.as_single()?;
    if !(0.0..=1.0).contains(&tau_eff) {
        return Err(Error::invalid("effective transmittance must lie in [0, 1]"));
    }
    let mut out = SparseRow::default();
    for (m, p) in row.iter() {
        if p == 0.0 {
            continue;
        }
        let (lo, v) = binomial_pmf_window(m, tau_eff);
        out.add_scaled(lo, &v, p);
    }
    Ok(CountDistribution::Single(out))
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("transmittance {tau} must lie in [0, 1]")));
    }
    Ok(())
}

fn poisson_cutoff(rate: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let (_, mut hi) = poisson_window(rate);
    let mut lo = rate.floor() as u64;
    while poisson_upper_tail(hi, rate) > CUTOFF_TAIL {
        hi *= 2;
    }
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if poisson_upper_tail(mid, rate) <= CUTOFF_TAIL {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    hi
}

fn axis_cutoff(mean: f64, var: f64, rate_max: f64) -> u64 {
    let by_moments = (mean + 10.0 * var.max(0.0).sqrt()).ceil().max(0.0) as u64;
    by_moments.max(poisson_cutoff(rate_max))
}

/// Smallest lattice cutoff (largest count kept on any axis) for which the
/// dropped tail stays below [`CUTOFF_TAIL`].
pub fn required_cutoff(
    probe: &ProbeModel,
    g: &TransmittanceDistribution,
    det: &DetectionModel,
) -> u64 {
    let moments = gaussian_moments(probe, g, det);
    let (_, tau_max) = g.effective_support();
    let signal_rate = probe.mean_photons() * det.eta_s * tau_max + det.dark;
    let mut c = axis_cutoff(moments.mean[0], moments.cov[0][0], signal_rate);
    if moments.mean.len() == 2 {
        let idler_rate = probe.mean_photons() * det.eta_i + det.dark;
        c = c.max(axis_cutoff(moments.mean[1], moments.cov[1][1], idler_rate));
    }
    c
}

fn resolve_cutoff(required: u64, cutoff: Option<u64>) -> Result<u64> {
    match cutoff {
        Some(c) if c < required => Err(Error::CutoffTooSmall {
            given: c as usize,
            required: required as usize,
        }),
        Some(c) => Ok(c),
        None => Ok(required),
    }
}

/// Dark counts folded into a pmf by convolution with Poisson(ν).
fn add_dark(row: SparseRow, dark: f64) -> SparseRow {
    if dark <= 0.0 {
        return row;
    }
    let (dlo, d) = poisson_pmf_window(dark);
    let (start, values) = convolve(row.start, &row.values, dlo, &d);
    SparseRow::new(start, values)
}

/// Joint lattice at a single τ, without cutoff handling.
fn joint_at(lambda: f64, tau: f64, det: &DetectionModel) -> JointLattice {
    let a = det.eta_s * tau;
    let c = det.eta_i;
    let idler_rate = lambda * c + det.dark;
    let shared = if idler_rate > 0.0 { lambda * a * c / idler_rate } else { 0.0 };
    let signal_only = lambda * a * (1.0 - c) + det.dark;
    let (ilo, idler) = poisson_pmf_window(idler_rate);
    let (rlo, rest) = poisson_pmf_window(signal_only);
    let rows = idler
        .iter()
        .enumerate()
        .map(|(k, &pi)| {
            let n_i = ilo + k as u64;
            let (blo, b) = binomial_pmf_window(n_i, shared);
            let (start, mut values) = convolve(blo, &b, rlo, &rest);
            values.iter_mut().for_each(|v| *v *= pi);
            SparseRow::new(start, values)
        })
        .collect();
    JointLattice {
        idler_start: ilo,
        rows,
    }
}

fn truncate_joint(mut j: JointLattice, cutoff: u64) -> JointLattice {
    if j.idler_start > cutoff {
        j.rows.clear();
    } else {
        j.rows.truncate((cutoff - j.idler_start + 1) as usize);
    }
    for r in &mut j.rows {
        r.truncate_at(cutoff);
    }
    j
}

/// Joint count pmf of a twin-beam probe through a channel of transmittance
/// `tau`. With `cutoff = None` the smallest admissible cutoff is used.
pub fn joint_conditional(
    probe: &ProbeModel,
    tau: f64,
    det: &DetectionModel,
    cutoff: Option<u64>,
) -> Result<CountDistribution> {
    let ProbeModel::TmsvPairSource { mean_pairs } = *probe else {
        return Err(Error::WrongArity { expected: "twin-beam probe" });
    };
    check_tau(tau)?;
    det.validate()?;
    let g = TransmittanceDistribution::delta(tau)?;
    let cutoff = resolve_cutoff(required_cutoff(probe, &g, det), cutoff)?;
    Ok(CountDistribution::Joint(truncate_joint(joint_at(mean_pairs, tau, det), cutoff)))
}

fn uniform_closed_form(m: f64, lo: f64, hi: f64) -> SparseRow {
    let (x_lo, x_hi) = (m * lo, m * hi);
    let (start, _) = poisson_window(x_lo);
    let (_, end) = poisson_window(x_hi);
    let values = (start..=end)
        .map(|n| {
            let a = n as f64 + 1.0;
            let diff = if a > x_hi {
                reg_gamma_lower(a, x_hi) - reg_gamma_lower(a, x_lo)
            } else {
                reg_gamma_upper(a, x_lo) - reg_gamma_upper(a, x_hi)
            };
            (diff / (x_hi - x_lo)).max(0.0)
        })
        .collect();
    SparseRow::new(start, values)
}

/// Average `build(τ)` over the quadrature measure of `g`, doubling panels
/// until successive results differ by less than [`LATTICE_TOL`] pointwise.
fn average_over<T, B, A, D>(
    g: &TransmittanceDistribution,
    build: B,
    accumulate: A,
    distance: D,
) -> Result<T>
where
    T: Default + Send,
    B: Fn(f64) -> T + Sync,
    A: Fn(&mut T, &T, f64) + Sync,
    D: Fn(&T, &T) -> f64,
{
    let eval = |panels: usize| -> Result<T> {
        let rule = g.quadrature_rule(panels, &[]);
        let partials: Vec<T> = rule
            .par_chunks(NODE_CHUNK)
            .map(|chunk| {
                let mut acc = T::default();
                for &(tau, w) in chunk {
                    accumulate(&mut acc, &build(tau), w);
                }
                acc
            })
            .collect();
        let mut total = T::default();
        for p in &partials {
            accumulate(&mut total, p, 1.0);
        }
        Ok(total)
    };
    if g.is_delta() {
        return eval(1);
    }
    quadrature::refine(1, LATTICE_TOL, eval, distance)
}

fn accumulate_row(acc: &mut SparseRow, r: &SparseRow, w: f64) {
    acc.add_scaled(r.start, &r.values, w);
}

/// Detected-count pmf of a classical probe averaged over `g`. Efficiency
/// enters only through the product `η_S · n̄`.
pub fn marginal_compound(
    probe: &ProbeModel,
    g: &TransmittanceDistribution,
    det: &DetectionModel,
) -> Result<CountDistribution> {
    let ProbeModel::ClassicalPoisson { mean_photons } = *probe else {
        return Err(Error::WrongArity { expected: "classical probe" });
    };
    det.validate()?;
    let m = mean_photons * det.eta_s;
    let row = match g {
        TransmittanceDistribution::Uniform(u) if m * (u.hi() - u.lo()) >= 1.0 => {
            uniform_closed_form(m, u.lo(), u.hi())
        }
        _ => average_over(
            g,
            |tau| {
                let (lo, v) = poisson_pmf_window(m * tau);
                SparseRow::new(lo, v)
            },
            accumulate_row,
            SparseRow::max_abs_diff,
        )?,
    };
    Ok(CountDistribution::Single(add_dark(row, det.dark)))
}

/// Count distribution averaged over the process density `g` on the exact
/// lattice: single counts for a classical probe, joint counts for a
/// twin-beam probe.
pub fn process_count_distribution(
    probe: &ProbeModel,
    g: &TransmittanceDistribution,
    det: &DetectionModel,
    cutoff: Option<u64>,
) -> Result<CountDistribution> {
    det.validate()?;
    let cutoff = resolve_cutoff(required_cutoff(probe, g, det), cutoff)?;
    match *probe {
        ProbeModel::ClassicalPoisson { .. } => {
            let CountDistribution::Single(mut row) = marginal_compound(probe, g, det)? else {
                unreachable!()
            };
            row.truncate_at(cutoff);
            Ok(CountDistribution::Single(row))
        }
        ProbeModel::TmsvPairSource { mean_pairs } => {
            let joint = average_over(
                g,
                |tau| joint_at(mean_pairs, tau, det),
                JointLattice::accumulate,
                JointLattice::max_abs_diff,
            )?;
            Ok(CountDistribution::Joint(truncate_joint(joint, cutoff)))
        }
    }
}

/// Moment-matched Gaussian surrogate of the averaged count distribution.
pub fn gaussian_moments(
    probe: &ProbeModel,
    g: &TransmittanceDistribution,
    det: &DetectionModel,
) -> GaussianMoments {
    let (et, vt) = g.moments();
    let nu = det.dark;
    match *probe {
        ProbeModel::ClassicalPoisson { mean_photons } => {
            let m = mean_photons * det.eta_s;
            GaussianMoments {
                mean: vec![m * et + nu],
                cov: vec![vec![m * et + m * m * vt + nu]],
            }
        }
        ProbeModel::TmsvPairSource { mean_pairs: l } => {
            let ms = l * det.eta_s;
            let mi = l * det.eta_i;
            let c = ms * det.eta_i * et;
            GaussianMoments {
                mean: vec![ms * et + nu, mi + nu],
                cov: vec![vec![ms * et + ms * ms * vt + nu, c], vec![c, mi + nu]],
            }
        }
    }
}

/// Advisory text when the Gaussian surrogates are outside their regime.
pub fn gaussian_advisory(
    probe: &ProbeModel,
    g: &TransmittanceDistribution,
    det: &DetectionModel,
) -> Option<String> {
    let expected = probe.mean_photons() * det.eta_s * g.moments().0;
    (expected < GAUSSIAN_ADVISORY_MEAN).then(|| {
        format!(
            "only {expected:.3} detected signal photons expected; Gaussian surrogates \
             need at least {GAUSSIAN_ADVISORY_MEAN}"
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{binomial_pmf, poisson_pmf};

    fn poisson_row(mean: f64) -> CountDistribution {
        let (lo, v) = poisson_pmf_window(mean);
        CountDistribution::Single(SparseRow::new(lo, v))
    }

    #[test]
    fn thinning_poisson_stays_poisson() {
        let out = loss_map(&poisson_row(10.0), 0.5).unwrap();
        let row = out.as_single().unwrap();
        for n in 0..40 {
            assert!((row.get(n) - poisson_pmf(n, 5.0)).abs() < 1e-13);
        }
        let same = loss_map(&poisson_row(10.0), 1.0).unwrap();
        assert!(same.as_single().unwrap().max_abs_diff(poisson_row(10.0).as_single().unwrap()) < 1e-15);
    }

    #[test]
    fn thinning_two_photons() {
        let p = CountDistribution::Single(SparseRow::new(2, vec![1.0]));
        let out = loss_map(&p, 0.3).unwrap();
        let r = out.as_single().unwrap();
        for (n, e) in [(0, 0.49), (1, 0.42), (2, 0.09)] {
            assert!((r.get(n) - e).abs() < 1e-15);
        }
        let j = joint_conditional(&ProbeModel::tmsv(1.0).unwrap(), 0.5, &DetectionModel::ideal(), None)
            .unwrap();
        assert!(matches!(loss_map(&j, 0.5), Err(Error::WrongArity { .. })));
    }

    #[test]
    fn perfect_correlation_is_diagonal() {
        let probe = ProbeModel::tmsv(10.0).unwrap();
        let j = joint_conditional(&probe, 1.0, &DetectionModel::ideal(), Some(60)).unwrap();
        let j = j.as_joint().unwrap();
        for ni in 0..60 {
            for ns in 0..60 {
                let e = if ns == ni { poisson_pmf(ni, 10.0) } else { 0.0 };
                assert!((j.get(ns, ni) - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn opaque_sample_leaves_only_idler() {
        let probe = ProbeModel::tmsv(10.0).unwrap();
        let j = joint_conditional(&probe, 0.0, &DetectionModel::ideal(), Some(60)).unwrap();
        let j = j.as_joint().unwrap();
        for ni in 0..60 {
            assert!((j.get(0, ni) - poisson_pmf(ni, 10.0)).abs() < 1e-14);
            assert_eq!(j.get(1, ni), 0.0);
        }
    }

    /// Brute-force sum over the pair number N of
    /// Pois(N; λ) · Bin(n_S | N, η_S τ) · Bin(n_I | N, η_I).
    fn brute_joint(lambda: f64, a: f64, c: f64, ns: u64, ni: u64) -> f64 {
        (ns.max(ni)..200)
            .map(|n| poisson_pmf(n, lambda) * binomial_pmf(ns, n, a) * binomial_pmf(ni, n, c))
            .sum()
    }

    #[test]
    fn joint_matches_pair_sum_and_covariance() {
        let probe = ProbeModel::tmsv(5.0).unwrap();
        let det = DetectionModel::new(0.8, 0.8, 0.0).unwrap();
        let j = joint_conditional(&probe, 0.9, &det, Some(60)).unwrap();
        let j = j.as_joint().unwrap();
        let mut cov = 0.0;
        let (ms, mi) = (5.0 * 0.72, 5.0 * 0.8);
        for ni in 0..40 {
            for ns in 0..40 {
                let b = brute_joint(5.0, 0.72, 0.8, ns, ni);
                assert!((j.get(ns, ni) - b).abs() < 1e-13, "({ns},{ni}) {} {b}", j.get(ns, ni));
                cov += b * (ns as f64 - ms) * (ni as f64 - mi);
            }
        }
        assert!((cov - 2.88).abs() < 1e-9);
        let (_, c) = j.moments();
        assert!((c[0][1] - 2.88).abs() < 1e-9);
    }

    #[test]
    fn joint_marginals_with_dark_counts() {
        let probe = ProbeModel::tmsv(12.0).unwrap();
        let det = DetectionModel::new(0.7, 0.6, 0.4).unwrap();
        let j = joint_conditional(&probe, 0.8, &det, Some(60)).unwrap();
        let j = j.as_joint().unwrap();
        let idler = j.idler_marginal();
        let sig = j.signal_marginal();
        for n in 0..60 {
            assert!((idler.get(n) - poisson_pmf(n, 12.0 * 0.6 + 0.4)).abs() < 1e-12);
            assert!((sig.get(n) - poisson_pmf(n, 12.0 * 0.7 * 0.8 + 0.4)).abs() < 1e-12);
        }
    }

    #[test]
    fn cutoff_too_small_reports_requirement() {
        let probe = ProbeModel::tmsv(100.0).unwrap();
        match joint_conditional(&probe, 0.9, &DetectionModel::ideal(), Some(50)) {
            Err(Error::CutoffTooSmall { given, required }) => {
                assert_eq!(given, 50);
                assert!(required >= 200);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn delta_compound_is_poisson() {
        let probe = ProbeModel::classical(100.0).unwrap();
        let g = TransmittanceDistribution::delta(0.8).unwrap();
        let h = marginal_compound(&probe, &g, &DetectionModel::ideal()).unwrap();
        let h = h.as_single().unwrap();
        for n in 0..200 {
            assert!((h.get(n) - poisson_pmf(n, 80.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_closed_form_matches_quadrature() {
        for &(m, mean, hw) in &[(1000.0, 0.8, 0.0866), (1.0e5, 0.99, 0.005), (30.0, 0.5, 0.2)] {
            let row = uniform_closed_form(m, mean - hw, mean + hw);
            let g = TransmittanceDistribution::uniform(mean, hw).unwrap();
            let quad: SparseRow = average_over(
                &g,
                |tau| {
                    let (lo, v) = poisson_pmf_window(m * tau);
                    SparseRow::new(lo, v)
                },
                accumulate_row,
                SparseRow::max_abs_diff,
            )
            .unwrap();
            assert!(row.max_abs_diff(&quad) < 1e-9, "m={m}");
            assert!((row.total() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_compound_moments() {
        let probe = ProbeModel::classical(1.0e4).unwrap();
        let g = TransmittanceDistribution::gaussian(0.6, 0.02).unwrap();
        let h = marginal_compound(&probe, &g, &DetectionModel::ideal()).unwrap();
        let (m0, m1, m2) = h.as_single().unwrap().moments();
        let mean = m1 / m0;
        let var = m2 / m0 - mean * mean;
        assert!((mean / 6000.0 - 1.0).abs() < 1e-6);
        assert!((var / (6000.0 + 1.0e8 * 4e-4) - 1.0).abs() < 1e-6);
        let gm = gaussian_moments(&probe, &g, &DetectionModel::ideal());
        assert!((gm.cov[0][0] - (6000.0 + 1.0e8 * 4e-4)).abs() < 1e-6);
    }

    #[test]
    fn averaged_tmsv_keeps_poisson_idler() {
        let probe = ProbeModel::tmsv(8.0).unwrap();
        let g = TransmittanceDistribution::uniform(0.7, 0.1).unwrap();
        let p = process_count_distribution(&probe, &g, &DetectionModel::ideal(), None).unwrap();
        let j = p.as_joint().unwrap();
        assert!((j.total() - 1.0).abs() < 1e-8);
        let idler = j.idler_marginal();
        for n in 0..40 {
            assert!((idler.get(n) - poisson_pmf(n, 8.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn delta_average_equals_conditional() {
        let probe = ProbeModel::tmsv(10.0).unwrap();
        let det = DetectionModel::ideal();
        let g = TransmittanceDistribution::delta(0.9).unwrap();
        let a = process_count_distribution(&probe, &g, &det, None).unwrap();
        let b = joint_conditional(&probe, 0.9, &det, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tmsv_correlation_is_one_without_loss() {
        let probe = ProbeModel::tmsv(50.0).unwrap();
        let g = TransmittanceDistribution::delta(1.0).unwrap();
        let gm = gaussian_moments(&probe, &g, &DetectionModel::ideal());
        assert!((gm.correlation().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn export_formats() {
        let mut buf = Vec::new();
        CountDistribution::Single(SparseRow::new(1, vec![0.25, 0.75]))
            .export(&mut buf)
            .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "n,mass\n1,0.25\n2,0.75\n");
        let mut buf = Vec::new();
        let g = gaussian_moments(
            &ProbeModel::classical(10.0).unwrap(),
            &TransmittanceDistribution::delta(0.5).unwrap(),
            &DetectionModel::ideal(),
        );
        CountDistribution::Gaussian(g).export(&mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["mean"][0], 5.0);
    }
}
