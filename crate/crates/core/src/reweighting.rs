//! Reshape a dataset measured at many transmittance values into one that
//! follows a target density, by keeping a fraction `w_k` of the records in
//! each τ bin.
//!
//! With `P_k` records in bin `k` and `N_T` records to keep, the kept mass
//! fraction of bin `k` is `u_k = P_k w_k / N_T` and the Bhattacharyya
//! coefficient against the target `f` is
//!
//! ```text
//! T = Σ_k F_k √u_k,    F_k = ∫_bin √f dτ / √width
//! ```
//!
//! which is concave in `u`. Under `Σ u_k = 1` and `0 ≤ u_k ≤ P_k / N_T` the
//! maximizer is `u_k = min(P_k / N_T, t F_k²)` with the level `t` fixed by
//! the budget.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{Histogram, TransmittanceDistribution};
use crate::error::{Error, Result};
use crate::monte_carlo::{sample_counts, splitmix, CountRecord};
use crate::photon::{DetectionModel, ProbeModel};
use crate::quadrature;

/// Acceptance threshold on T used when none is given.
pub const DEFAULT_T_TH: f64 = 0.95;

const BC_PANELS: usize = 8;
const TAG_TAUS: u64 = 0x7461_7573;

/// Records grouped by the transmittance they were taken at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauGroup {
    pub tau: f64,
    pub records: Vec<CountRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EmpiricalDataset {
    groups: Vec<TauGroup>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRow {
    tau: f64,
    n_s: u64,
    n_i: Option<u64>,
}

impl EmpiricalDataset {
    /// Groups are sorted by τ; groups without records are dropped.
    pub fn new(mut groups: Vec<TauGroup>) -> Result<Self> {
        if let Some(g) = groups.iter().find(|g| !(0.0..=1.0).contains(&g.tau)) {
            return Err(Error::SupportOutOfRange { lo: g.tau, hi: g.tau });
        }
        groups.retain(|g| !g.records.is_empty());
        groups.sort_by(|a, b| a.tau.total_cmp(&b.tau));
        Ok(EmpiricalDataset { groups })
    }

    pub fn groups(&self) -> &[TauGroup] {
        &self.groups
    }

    /// Number of distinct τ values, `L`.
    pub fn distinct_taus(&self) -> usize {
        self.groups.len()
    }

    /// Total number of records, `N_U`.
    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.records.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn taus(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.tau).collect()
    }

    /// Simulated records: `per_tau` of them at each τ, every τ with its own
    /// seed derived from `seed` and its position.
    pub fn simulate(
        taus: &[f64],
        per_tau: usize,
        probe: &ProbeModel,
        det: &DetectionModel,
        seed: u64,
    ) -> Result<Self> {
        let groups = taus
            .iter()
            .enumerate()
            .map(|(i, &tau)| {
                Ok(TauGroup {
                    tau,
                    records: sample_counts(probe, det, tau, per_tau, splitmix(seed, i as u64))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        EmpiricalDataset::new(groups)
    }

    /// Read a `tau,n_s,n_i` CSV; records sharing a τ form one group.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut by_tau: BTreeMap<u64, TauGroup> = BTreeMap::new();
        for row in reader.deserialize::<DatasetRow>() {
            let row = row?;
            by_tau
                .entry(row.tau.to_bits())
                .or_insert_with(|| TauGroup {
                    tau: row.tau,
                    records: Vec::new(),
                })
                .records
                .push(CountRecord {
                    n_s: row.n_s,
                    n_i: row.n_i,
                    tau_true: row.tau,
                });
        }
        EmpiricalDataset::new(by_tau.into_values().collect())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_writer(std::fs::File::create(path)?)
    }

    pub fn to_writer(&self, out: impl std::io::Write) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for g in &self.groups {
            for r in &g.records {
                writer.serialize(DatasetRow {
                    tau: g.tau,
                    n_s: r.n_s,
                    n_i: r.n_i,
                })?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

/// `count` evenly spaced values from `lo` to `hi` inclusive.
pub fn grid_taus(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        n => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// `count` independent uniform draws from `[lo, hi]`.
pub fn random_taus(lo: f64, hi: f64, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed, TAG_TAUS));
    (0..count).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}

/// Equal-width binning of τ values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub edges: Vec<f64>,
    /// Number of τ values per bin.
    pub counts: Vec<usize>,
}

impl Binning {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn lo(&self) -> f64 {
        self.edges[0]
    }

    pub fn hi(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    pub fn bin_of(&self, tau: f64) -> Option<usize> {
        if !(tau >= self.lo() && tau <= self.hi()) {
            return None;
        }
        let k = self.bins();
        let i = ((tau - self.lo()) / (self.hi() - self.lo()) * k as f64).floor() as usize;
        Some(i.min(k - 1))
    }

    /// Normalized histogram of the binned values.
    pub fn histogram(&self) -> Result<Histogram> {
        let total: usize = self.counts.iter().sum();
        let masses = self.counts.iter().map(|&c| c as f64 / total as f64).collect();
        Histogram::new(self.lo(), self.hi(), masses)
    }
}

/// Sturges' rule `1 + ⌈log₂ L⌉`.
pub fn sturges_bins(distinct: usize) -> usize {
    1 + (distinct.max(1) as f64).log2().ceil() as usize
}

/// Bin the values into `bins` equal-width bins spanning their range, or
/// into a Sturges count when `bins` is `None`.
pub fn build_histogram(taus: &[f64], bins: Option<usize>) -> Result<Binning> {
    if taus.is_empty() {
        return Err(Error::invalid("need at least one transmittance value"));
    }
    if let Some(t) = taus.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::SupportOutOfRange { lo: *t, hi: *t });
    }
    let mut distinct = taus.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let k = bins.unwrap_or_else(|| sturges_bins(distinct.len()));
    if k == 0 {
        return Err(Error::invalid("bin count must be at least 1"));
    }
    let (mut lo, mut hi) = (distinct[0], distinct[distinct.len() - 1]);
    if hi == lo {
        // A single value still needs a bin of positive width.
        lo = (lo - 1e-6).max(0.0);
        hi = (hi + 1e-6).min(1.0);
    }
    // The last edge is pinned so the largest value stays inside.
    let edges: Vec<f64> = (0..=k)
        .map(|i| if i == k { hi } else { lo + (hi - lo) * i as f64 / k as f64 })
        .collect();
    let mut binning = Binning {
        edges,
        counts: vec![0; k],
    };
    for &t in taus {
        let i = binning.bin_of(t).expect("value inside its own range");
        binning.counts[i] += 1;
    }
    Ok(binning)
}

/// `∫ √f` over each bin of `edges`.
fn root_masses(f: &TransmittanceDistribution, edges: &[f64]) -> Result<Vec<f64>> {
    // Surface the Delta error before integrating.
    f.pdf(0.5)?;
    let (slo, shi) = f.effective_support();
    edges
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].max(slo), w[1].min(shi));
            if a >= b {
                return Ok(0.0);
            }
            Ok(quadrature::integrate(|t| f.pdf(t).unwrap_or(0.0).sqrt(), a, b, BC_PANELS))
        })
        .collect()
}

/// Bhattacharyya coefficient `∫ √(f g)` between a target density and a
/// histogram, integrated bin by bin.
pub fn bhattacharyya(f: &TransmittanceDistribution, g: &Histogram) -> Result<f64> {
    let roots = root_masses(f, &g.edges())?;
    let t: f64 = roots
        .iter()
        .enumerate()
        .map(|(k, r)| r * g.density(k).sqrt())
        .sum();
    Ok(t.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightReport {
    /// Fraction of each bin's records to keep.
    pub weights: Vec<f64>,
    pub edges: Vec<f64>,
    /// Records per bin before reweighting.
    pub populations: Vec<usize>,
    pub target_size: usize,
    /// T at the optimum.
    pub t_star: f64,
    /// T of plain truncation, every weight equal to `N_T / N_U`.
    pub t_baseline: f64,
    pub t_threshold: f64,
    pub accepted: bool,
    /// Records kept after floor rounding of `w_k · P_k`.
    pub final_size: usize,
}

impl ReweightReport {
    /// Histogram of the kept records implied by the weights.
    pub fn histogram(&self) -> Result<Histogram> {
        let kept: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.populations)
            .map(|(w, &p)| w * p as f64)
            .collect();
        let total: f64 = kept.iter().sum();
        let lo = self.edges[0];
        let hi = self.edges[self.edges.len() - 1];
        Histogram::new(lo, hi, kept.into_iter().map(|m| m / total).collect())
    }
}

fn populations(ds: &EmpiricalDataset, binning: &Binning) -> Vec<usize> {
    let mut pops = vec![0; binning.bins()];
    for g in ds.groups() {
        if let Some(k) = binning.bin_of(g.tau) {
            pops[k] += g.records.len();
        }
    }
    pops
}

/// Objective `Σ F_k √u_k` in terms of kept mass fractions.
fn objective(scores: &[f64], u: &[f64]) -> f64 {
    scores.iter().zip(u).map(|(f, u)| f * u.max(0.0).sqrt()).sum()
}

/// `min(cap_k, t · s_k)` with `t` chosen so the entries sum to one; the
/// caps must sum to at least one.
fn water_fill(levels: &[f64], caps: &[f64]) -> Vec<f64> {
    let fill = |t: f64| -> Vec<f64> { levels.iter().zip(caps).map(|(s, c)| (t * s).min(*c)).collect() };
    let total = |t: f64| fill(t).iter().sum::<f64>();
    if levels.iter().zip(caps).all(|(s, c)| *s <= 0.0 || *c <= 0.0) {
        // The target has no weight where data exists; spread by capacity.
        let cap: f64 = caps.iter().sum();
        return caps.iter().map(|c| c / cap).collect();
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while total(hi) < 1.0 {
        hi *= 2.0;
        if hi > 1e300 {
            // The occupied, target-supported bins cannot hold the budget.
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut u = fill(hi);
    // Put any remaining budget into bins with spare capacity, which only
    // happens when the target-supported bins are all full.
    let mut short = 1.0 - u.iter().sum::<f64>();
    for (x, c) in u.iter_mut().zip(caps) {
        if short <= 0.0 {
            break;
        }
        let add = (c - *x).min(short);
        *x += add;
        short -= add;
    }
    let s: f64 = u.iter().sum();
    u.iter().map(|x| x / s).collect()
}

/// Weights maximizing T with `target_size` records kept. `bins` overrides
/// the Sturges bin count.
pub fn optimize_weights(
    ds: &EmpiricalDataset,
    f: &TransmittanceDistribution,
    target_size: usize,
    t_threshold: f64,
    bins: Option<usize>,
) -> Result<ReweightReport> {
    if !(0.0..=1.0).contains(&t_threshold) {
        return Err(Error::invalid("acceptance threshold must lie in [0, 1]"));
    }
    if target_size == 0 {
        return Err(Error::invalid("target size must be at least 1"));
    }
    let available = ds.len();
    if target_size > available {
        return Err(Error::BudgetInfeasible {
            requested: target_size as f64,
            available: available as f64,
        });
    }
    let binning = build_histogram(&ds.taus(), bins)?;
    let pops = populations(ds, &binning);
    let width = binning.edges[1] - binning.edges[0];
    let scores: Vec<f64> = root_masses(f, &binning.edges)?
        .into_iter()
        .map(|r| r / width.sqrt())
        .collect();
    let n_t = target_size as f64;
    let caps: Vec<f64> = pops.iter().map(|&p| p as f64 / n_t).collect();
    let levels: Vec<f64> = scores.iter().map(|s| s * s).collect();
    let u = water_fill(&levels, &caps);
    let weights: Vec<f64> = u
        .iter()
        .zip(&pops)
        .map(|(u, &p)| if p == 0 { 0.0 } else { (u * n_t / p as f64).min(1.0) })
        .collect();
    let baseline: Vec<f64> = pops.iter().map(|&p| p as f64 / available as f64).collect();
    let t_star = objective(&scores, &u).clamp(0.0, 1.0);
    let final_size = weights
        .iter()
        .zip(&pops)
        .map(|(w, &p)| (w * p as f64).floor() as usize)
        .sum();
    Ok(ReweightReport {
        weights,
        edges: binning.edges,
        populations: pops,
        target_size,
        t_star,
        t_baseline: objective(&scores, &baseline).clamp(0.0, 1.0),
        t_threshold,
        accepted: t_star >= t_threshold,
        final_size,
    })
}

/// Projected gradient ascent on the same problem, started from plain
/// truncation. Slower than the level search in [`optimize_weights`]; kept
/// as an independent solver.
pub fn projected_ascent(scores: &[f64], caps: &[f64], iterations: usize) -> Vec<f64> {
    let total_cap: f64 = caps.iter().sum();
    let mut u: Vec<f64> = caps.iter().map(|c| c / total_cap).collect();
    let mut value = objective(scores, &u);
    for _ in 0..iterations {
        let grad: Vec<f64> = scores
            .iter()
            .zip(&u)
            .map(|(s, x)| if *s > 0.0 { s / (2.0 * x.max(1e-12).sqrt()) } else { 0.0 })
            .collect();
        // Armijo backtracking along the projected arc.
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-16 {
            let trial = project(&u.iter().zip(&grad).map(|(x, g)| x + step * g).collect::<Vec<_>>(), caps);
            let gain: f64 = grad.iter().zip(trial.iter().zip(&u)).map(|(g, (a, b))| g * (a - b)).sum();
            let v = objective(scores, &trial);
            if v >= value + 1e-4 * gain && v > value {
                accepted = Some((trial, v));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, v)) => {
                let moved = v - value;
                u = trial;
                value = v;
                if moved < 1e-15 {
                    break;
                }
            }
            None => break,
        }
    }
    u
}

/// Euclidean projection onto `{Σ u = 1, 0 ≤ u ≤ cap}`.
fn project(v: &[f64], caps: &[f64]) -> Vec<f64> {
    let clip = |th: f64| -> Vec<f64> { v.iter().zip(caps).map(|(x, c)| (x - th).clamp(0.0, *c)).collect() };
    let lo0 = v.iter().zip(caps).map(|(x, c)| x - c).fold(f64::INFINITY, f64::min);
    let hi0 = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clip(mid).iter().sum::<f64>() > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clip(0.5 * (lo + hi))
}

/// Keep `⌊w_k P_k⌋` records of each bin, drawn without replacement. Kept
/// records stay in their original order.
pub fn resample(ds: &EmpiricalDataset, report: &ReweightReport, seed: u64) -> Result<EmpiricalDataset> {
    let k = report.weights.len();
    let binning = Binning {
        edges: report.edges.clone(),
        counts: vec![0; k],
    };
    // Bin members as (group, record) positions.
    let mut members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k];
    for (gi, g) in ds.groups().iter().enumerate() {
        if let Some(b) = binning.bin_of(g.tau) {
            members[b].extend((0..g.records.len()).map(|ri| (gi, ri)));
        }
    }
    let mut keep: Vec<Vec<bool>> = ds.groups().iter().map(|g| vec![false; g.records.len()]).collect();
    for (b, m) in members.iter().enumerate() {
        let w = report.weights[b];
        if !(0.0..=1.0 + 1e-12).contains(&w) {
            return Err(Error::invalid(format!("weight {w} outside [0, 1]")));
        }
        let n = ((w.min(1.0) * m.len() as f64).floor() as usize).min(m.len());
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed, b as u64));
        for i in rand::seq::index::sample(&mut rng, m.len(), n) {
            let (gi, ri) = m[i];
            keep[gi][ri] = true;
        }
    }
    let groups = ds
        .groups()
        .iter()
        .zip(&keep)
        .map(|(g, flags)| TauGroup {
            tau: g.tau,
            records: g.records.iter().zip(flags).filter(|(_, k)| **k).map(|(r, _)| *r).collect(),
        })
        .collect();
    EmpiricalDataset::new(groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(taus: &[f64], per_tau: usize) -> EmpiricalDataset {
        EmpiricalDataset::simulate(taus, per_tau, &ProbeModel::tmsv(5.0).unwrap(), &DetectionModel::ideal(), 1)
            .unwrap()
    }

    #[test]
    fn sturges_count() {
        assert_eq!(sturges_bins(100), 8);
        let b = build_histogram(&grid_taus(0.3, 1.0, 100), None).unwrap();
        assert_eq!(b.bins(), 8);
        let (min, max) = (b.counts.iter().min().unwrap(), b.counts.iter().max().unwrap());
        assert!(max - min <= 1, "{:?}", b.counts);
        let h = b.histogram().unwrap();
        let integral: f64 = (0..h.bins()).map(|k| h.density(k) * h.width()).sum();
        assert!((integral - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_values_fill_one_bin() {
        let b = build_histogram(&[0.4; 10], Some(4)).unwrap();
        assert_eq!(b.counts.iter().filter(|c| **c > 0).count(), 1);
    }

    #[test]
    fn bhattacharyya_limits() {
        let h = Histogram::new(0.2, 0.4, vec![0.5, 0.5]).unwrap();
        let same = TransmittanceDistribution::uniform(0.3, 0.1).unwrap();
        assert!((bhattacharyya(&same, &h).unwrap() - 1.0).abs() < 1e-12);
        let apart = TransmittanceDistribution::uniform(0.8, 0.1).unwrap();
        assert_eq!(bhattacharyya(&apart, &h).unwrap(), 0.0);
    }

    #[test]
    fn self_target_keeps_equal_fractions() {
        let taus = grid_taus(0.2, 0.6, 40);
        let ds = dataset(&taus, 50);
        let b = build_histogram(&taus, None).unwrap();
        let target = TransmittanceDistribution::empirical(b.histogram().unwrap());
        let r = optimize_weights(&ds, &target, 1000, DEFAULT_T_TH, None).unwrap();
        assert!((r.t_star - 1.0).abs() < 1e-9, "{}", r.t_star);
        for w in &r.weights {
            assert!((w - 0.5).abs() < 1e-9, "{w}");
        }
    }

    #[test]
    fn infeasible_budget() {
        let ds = dataset(&grid_taus(0.2, 0.6, 10), 10);
        let f = TransmittanceDistribution::gaussian(0.4, 0.1).unwrap();
        assert!(matches!(
            optimize_weights(&ds, &f, 101, 0.9, None),
            Err(Error::BudgetInfeasible { .. })
        ));
    }

    #[test]
    fn level_search_matches_projected_ascent() {
        let scores = [0.1, 0.4, 0.9, 1.2, 0.8, 0.3, 0.0];
        let caps = [0.3, 0.3, 0.2, 0.25, 0.3, 0.3, 0.3];
        let levels: Vec<f64> = scores.iter().map(|s| s * s).collect();
        let a = water_fill(&levels, &caps);
        let b = projected_ascent(&scores, &caps, 100_000);
        let (ta, tb) = (objective(&scores, &a), objective(&scores, &b));
        assert!((ta - tb).abs() < 1e-9, "{ta} vs {tb}");
        assert!(objective(&scores, &a) >= objective(&scores, &b) - 1e-12);
    }

    #[test]
    fn resample_extremes() {
        let taus = grid_taus(0.2, 0.6, 20);
        let ds = dataset(&taus, 30);
        let f = TransmittanceDistribution::gaussian(0.4, 0.1).unwrap();
        let mut r = optimize_weights(&ds, &f, 300, 0.9, None).unwrap();
        r.weights.iter_mut().for_each(|w| *w = 1.0);
        assert_eq!(resample(&ds, &r, 4).unwrap(), ds);
        r.weights.iter_mut().for_each(|w| *w = 0.0);
        assert!(resample(&ds, &r, 4).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let ds = dataset(&[0.3, 0.5], 5);
        let dir = std::env::temp_dir().join(format!("rw-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.csv");
        ds.write_csv(&path).unwrap();
        assert_eq!(EmpiricalDataset::from_csv(&path).unwrap(), ds);
    }
}
