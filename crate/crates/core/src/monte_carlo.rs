//! Synthetic count records and error-frequency estimation.
//!
//! Every record draws from its own ChaCha8 stream, keyed by the run seed
//! and selected by the record index, so the output does not depend on how
//! records are spread over threads.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decision::{decide, DecisionRule};
use crate::distributions::TransmittanceDistribution;
use crate::error::{Error, Result};
use crate::photon::{CountDistribution, DetectionModel, ProbeModel};

/// Frames recorded per transmittance value in the reference experiment.
pub const DEFAULT_FRAMES: usize = 20_000;

const TAG_COUNTS: u64 = 0x636f_756e_7473;
const TAG_PROCESS: u64 = 0x7072_6f63_6573;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub n_s: u64,
    /// Idler count; absent for classical probes.
    pub n_i: Option<u64>,
    pub tau_true: f64,
}

/// SplitMix64 finalizer, used to derive independent stream keys.
pub fn splitmix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for record `index` of the run keyed by `key`.
pub fn record_rng(key: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

fn poisson<R: rand::Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map_or(0, |d| d.sample(rng) as u64)
}

fn binomial<R: rand::Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).map_or(0, |d| d.sample(rng))
}

fn draw<R: rand::Rng + ?Sized>(
    rng: &mut R,
    probe: &ProbeModel,
    det: &DetectionModel,
    tau: f64,
) -> CountRecord {
    match *probe {
        ProbeModel::ClassicalPoisson { mean_photons } => CountRecord {
            n_s: poisson(rng, mean_photons * det.eta_s * tau) + poisson(rng, det.dark),
            n_i: None,
            tau_true: tau,
        },
        ProbeModel::TmsvPairSource { mean_pairs } => {
            let pairs = poisson(rng, mean_pairs);
            let n_s = binomial(rng, pairs, det.eta_s * tau) + poisson(rng, det.dark);
            let n_i = binomial(rng, pairs, det.eta_i) + poisson(rng, det.dark);
            CountRecord {
                n_s,
                n_i: Some(n_i),
                tau_true: tau,
            }
        }
    }
}

fn check_inputs(det: &DetectionModel, count: usize) -> Result<()> {
    det.validate()?;
    if count == 0 {
        return Err(Error::invalid("record count must be at least 1"));
    }
    Ok(())
}

/// `count` records through a channel of fixed transmittance.
pub fn sample_counts(
    probe: &ProbeModel,
    det: &DetectionModel,
    tau: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<CountRecord>> {
    check_inputs(det, count)?;
    let g = TransmittanceDistribution::delta(tau)?;
    Ok(sample_with_key(probe, det, &g, count, splitmix(seed, TAG_COUNTS)))
}

/// `count` records, each through a channel whose transmittance is drawn
/// from `g`.
pub fn sample_process(
    probe: &ProbeModel,
    det: &DetectionModel,
    g: &TransmittanceDistribution,
    count: usize,
    seed: u64,
) -> Result<Vec<CountRecord>> {
    check_inputs(det, count)?;
    let key = if g.is_delta() { TAG_COUNTS } else { TAG_PROCESS };
    Ok(sample_with_key(probe, det, g, count, splitmix(seed, key)))
}

fn sample_with_key(
    probe: &ProbeModel,
    det: &DetectionModel,
    g: &TransmittanceDistribution,
    count: usize,
    key: u64,
) -> Vec<CountRecord> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = record_rng(key, i);
            let tau = match g {
                TransmittanceDistribution::Delta(t) => *t,
                _ => g.sample(&mut rng),
            };
            draw(&mut rng, probe, det, tau)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    /// Fraction of reference records labeled defective.
    pub f10: f64,
    /// Fraction of defective records labeled reference.
    pub f01: f64,
    pub se10: f64,
    pub se01: f64,
    pub n0: usize,
    pub n1: usize,
    pub p_err: f64,
    pub se: f64,
    /// Records outside both lattices, labeled with Gaussian surrogates.
    pub fallback_labels: usize,
}

fn binomial_se(f: f64, n: usize) -> f64 {
    (f * (1.0 - f) / n as f64).sqrt()
}

/// Log-density of the moment-matched Gaussian of a lattice; labels records
/// that fall outside both lattices.
struct Surrogate {
    mean: [f64; 2],
    inv: [[f64; 2]; 2],
    log_norm: f64,
    dims: usize,
}

impl Surrogate {
    fn of(p: &CountDistribution) -> Result<Self> {
        match p {
            CountDistribution::Single(r) => {
                let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
                for (n, v) in r.iter() {
                    let x = n as f64;
                    m0 += v;
                    m1 += v * x;
                    m2 += v * x * x;
                }
                let mean = m1 / m0;
                let var = (m2 / m0 - mean * mean).max(1e-12);
                Ok(Surrogate {
                    mean: [mean, 0.0],
                    inv: [[1.0 / var, 0.0], [0.0, 0.0]],
                    log_norm: -0.5 * var.ln(),
                    dims: 1,
                })
            }
            CountDistribution::Joint(j) => {
                let (mean, c) = j.moments();
                let (vs, vi) = (c[0][0].max(1e-12), c[1][1].max(1e-12));
                let det = (vs * vi - c[0][1] * c[0][1]).max(1e-12 * vs * vi);
                Ok(Surrogate {
                    mean,
                    inv: [[vi / det, -c[0][1] / det], [-c[0][1] / det, vs / det]],
                    log_norm: -0.5 * det.ln(),
                    dims: 2,
                })
            }
            CountDistribution::Gaussian(_) => Err(Error::WrongArity { expected: "exact lattice" }),
        }
    }

    fn log_density(&self, r: &CountRecord) -> f64 {
        let ds = r.n_s as f64 - self.mean[0];
        if self.dims == 1 {
            return self.log_norm - 0.5 * ds * ds * self.inv[0][0];
        }
        let di = r.n_i.unwrap_or(0) as f64 - self.mean[1];
        let q = ds * ds * self.inv[0][0] + 2.0 * ds * di * self.inv[0][1] + di * di * self.inv[1][1];
        self.log_norm - 0.5 * q
    }
}

fn likelihood(p: &CountDistribution, r: &CountRecord) -> Result<f64> {
    match p {
        CountDistribution::Single(row) => Ok(row.get(r.n_s)),
        CountDistribution::Joint(j) => {
            let n_i = r.n_i.ok_or(Error::SupportMismatch)?;
            Ok(j.get(r.n_s, n_i))
        }
        CountDistribution::Gaussian(_) => Err(Error::WrongArity { expected: "exact lattice" }),
    }
}

/// Label every record and count the errors of each type.
pub fn estimate_error_frequencies(
    records0: &[CountRecord],
    records1: &[CountRecord],
    lik0: &CountDistribution,
    lik1: &CountDistribution,
    rule: &DecisionRule,
) -> Result<FrequencyReport> {
    if records0.is_empty() || records1.is_empty() {
        return Err(Error::invalid("both record sets must be non-empty"));
    }
    let s0 = Surrogate::of(lik0)?;
    let s1 = Surrogate::of(lik1)?;
    let (b0, b1) = rule.weights();
    let label = |r: &CountRecord| -> Result<(u8, bool)> {
        match decide(likelihood(lik0, r)?, likelihood(lik1, r)?, rule) {
            Ok(y) => Ok((y, false)),
            Err(Error::ZeroLikelihood) => {
                let l0 = b0.ln() + s0.log_density(r);
                let l1 = b1.ln() + s1.log_density(r);
                Ok((if l0 >= l1 { 0 } else { 1 }, true))
            }
            Err(e) => Err(e),
        }
    };
    let tally = |records: &[CountRecord], wrong: u8| -> Result<(usize, usize)> {
        records
            .par_iter()
            .map(|r| label(r).map(|(y, fb)| ((y == wrong) as usize, fb as usize)))
            .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))
    };
    let (e10, fb0) = tally(records0, 1)?;
    let (e01, fb1) = tally(records1, 0)?;
    let (n0, n1) = (records0.len(), records1.len());
    let (f10, f01) = (e10 as f64 / n0 as f64, e01 as f64 / n1 as f64);
    let (se10, se01) = (binomial_se(f10, n0), binomial_se(f01, n1));
    Ok(FrequencyReport {
        f10,
        f01,
        se10,
        se01,
        n0,
        n1,
        p_err: 0.5 * (f10 + f01),
        se: 0.5 * (se10 * se10 + se01 * se01).sqrt(),
        fallback_labels: fb0 + fb1,
    })
}

/// Records as CSV `n_s,n_i,tau_true`; `n_i` is empty for classical probes.
pub fn write_records(path: impl AsRef<Path>, records: &[CountRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<CountRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let records = reader.deserialize().collect::<std::result::Result<Vec<CountRecord>, _>>()?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::conditional_errors;
    use crate::photon::process_count_distribution;

    #[test]
    fn opaque_channel_gives_no_signal() {
        let probe = ProbeModel::tmsv(50.0).unwrap();
        let r = sample_counts(&probe, &DetectionModel::ideal(), 0.0, 1000, 1).unwrap();
        assert!(r.iter().all(|x| x.n_s == 0));
    }

    #[test]
    fn lossless_pairs_are_equal() {
        let probe = ProbeModel::tmsv(50.0).unwrap();
        let r = sample_counts(&probe, &DetectionModel::ideal(), 1.0, 1000, 2).unwrap();
        assert!(r.iter().all(|x| Some(x.n_s) == x.n_i));
    }

    #[test]
    fn signal_mean_within_clt_bound() {
        let probe = ProbeModel::tmsv(1.0e5).unwrap();
        let det = DetectionModel::new(0.8, 1.0, 0.0).unwrap();
        let count = 2000;
        let r = sample_counts(&probe, &det, 0.9, count, 3).unwrap();
        let mean = r.iter().map(|x| x.n_s as f64).sum::<f64>() / count as f64;
        let expected = 1.0e5 * 0.8 * 0.9;
        assert!((mean - expected).abs() < 3.0 * (expected / count as f64).sqrt());
    }

    #[test]
    fn delta_process_equals_fixed_channel() {
        let probe = ProbeModel::classical(30.0).unwrap();
        let g = TransmittanceDistribution::delta(0.4).unwrap();
        let a = sample_process(&probe, &DetectionModel::ideal(), &g, 100, 9).unwrap();
        let b = sample_counts(&probe, &DetectionModel::ideal(), 0.4, 100, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_process_tau_mean() {
        let probe = ProbeModel::classical(10.0).unwrap();
        let g = TransmittanceDistribution::uniform(0.9, 0.09).unwrap();
        let count = 10_000;
        let r = sample_process(&probe, &DetectionModel::ideal(), &g, count, 4).unwrap();
        let mean = r.iter().map(|x| x.tau_true).sum::<f64>() / count as f64;
        assert!((mean - 0.9).abs() < 3.0 * (0.09 / 3f64.sqrt()) / (count as f64).sqrt());
    }

    #[test]
    fn thread_count_does_not_change_records() {
        let probe = ProbeModel::tmsv(20.0).unwrap();
        let g = TransmittanceDistribution::gaussian(0.7, 0.05).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sample_process(&probe, &DetectionModel::ideal(), &g, 5000, 11).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn frequencies_match_lattice_errors() {
        let probe = ProbeModel::tmsv(20.0).unwrap();
        let det = DetectionModel::ideal();
        let g0 = TransmittanceDistribution::delta(0.8).unwrap();
        let g1 = TransmittanceDistribution::uniform(0.7, 0.1).unwrap();
        let p0 = process_count_distribution(&probe, &g0, &det, None).unwrap();
        let p1 = process_count_distribution(&probe, &g1, &det, None).unwrap();
        let exact = conditional_errors(&p0, &p1, &DecisionRule::ml()).unwrap();
        let n = 100_000;
        let r0 = sample_process(&probe, &det, &g0, n, 5).unwrap();
        let r1 = sample_process(&probe, &det, &g1, n, 6).unwrap();
        let f = estimate_error_frequencies(&r0, &r1, &p0, &p1, &DecisionRule::ml()).unwrap();
        assert!((f.f10 - exact.p10).abs() <= 3.0 * f.se10 + 1e-12);
        assert!((f.f01 - exact.p01).abs() <= 3.0 * f.se01 + 1e-12);
    }

    #[test]
    fn records_round_trip_through_csv() {
        let dir = std::env::temp_dir().join(format!("records-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("r.csv");
        let probe = ProbeModel::classical(5.0).unwrap();
        let r = sample_counts(&probe, &DetectionModel::ideal(), 0.5, 10, 1).unwrap();
        write_records(&path, &r).unwrap();
        assert_eq!(read_records(&path).unwrap(), r);
        std::fs::remove_dir_all(dir).ok();
    }
}
