//! The five computations behind the subcommands. Each returns its files
//! as in-memory text so that callers decide where they go.

use conformance::decision::{bias_grid, conditional_errors, optimize_bias, CostSpec, DecisionRule};
use conformance::distributions::{ProcessPair, TransmittanceDistribution};
use conformance::monte_carlo::{estimate_error_frequencies, sample_process, splitmix, FrequencyReport};
use conformance::photon::{
    marginal_compound, process_count_distribution, required_cutoff, CountDistribution, DetectionModel, ProbeModel,
};
use conformance::reweighting::{
    bhattacharyya, grid_taus, optimize_weights, random_taus, resample, EmpiricalDataset, ReweightReport,
};
use conformance::strategies::{classical_bound, sweep_error_curves, SweepSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{
    BoundConfig, CostConfig, DatasetSource, Layout, Probe, ReweightConfig, SimulateConfig, SweepConfig,
};
use crate::CliError;

/// One output file: its name suffix after the run name, and its contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub suffix: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    pub advisories: Vec<String>,
}

impl RunOutput {
    fn push(&mut self, suffix: &str, contents: String) {
        self.artifacts.push(Artifact {
            suffix: suffix.to_string(),
            contents,
        });
    }

    fn advise(&mut self, notes: impl IntoIterator<Item = String>) {
        for n in notes {
            if !self.advisories.contains(&n) {
                self.advisories.push(n);
            }
        }
    }

    pub fn artifact(&self, suffix: &str) -> Option<&str> {
        self.artifacts
            .iter()
            .find(|a| a.suffix == suffix)
            .map(|a| a.contents.as_str())
    }
}

/// Shortest round-trip decimal, switching to exponent form for very small
/// or very large magnitudes.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x != 0.0 && x.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        writer.write_record(header).expect("writing to memory");
        Table { writer }
    }

    fn row(&mut self, fields: Vec<String>) {
        self.writer.write_record(&fields).expect("writing to memory");
    }

    fn finish(self) -> String {
        String::from_utf8(self.writer.into_inner().expect("writing to memory")).expect("CSV is UTF-8")
    }
}

fn json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

pub fn bound(c: &BoundConfig) -> Result<RunOutput, CliError> {
    let grid = c.tau0.values()?;
    c.detection.validate()?;
    let rows = grid
        .par_iter()
        .map(|&t| {
            let pair = ProcessPair::new(c.reference.at(t)?, c.defective.clone());
            classical_bound(&pair, c.n_mean * c.detection.eta_s)
        })
        .collect::<conformance::Result<Vec<_>>>()?;
    let mut table = Table::new(&["tau0", "C", "method"]);
    for (t, r) in grid.iter().zip(&rows) {
        table.row(vec![num(*t), num(r.value), r.method.to_string()]);
    }
    let mut out = RunOutput::default();
    out.push(".csv", table.finish());
    out.advise(rows.into_iter().flat_map(|r| r.advisories));
    Ok(out)
}

pub fn sweep(c: &SweepConfig) -> Result<RunOutput, CliError> {
    let spec = SweepSpec {
        reference: c.reference,
        defective: c.defective.clone(),
        tau0: c.tau0.values()?,
        n_mean: c.n_mean,
        detection: c.detection,
        classical: c.classical,
        quantum: c.quantum,
        mc_samples: c.mc_samples,
        seed: c.seed,
    };
    let rows = sweep_error_curves(&spec)?;
    let mut table = Table::new(&["tau0", "C", "Cpc", "Q", "Q_se", "C_method", "Cpc_method", "Q_method", "seed"]);
    let mut out = RunOutput::default();
    for r in &rows {
        table.row(vec![
            num(r.tau0),
            r.bound.as_ref().map(|b| num(b.value)).unwrap_or_default(),
            num(r.classical_pc.value),
            num(r.quantum.value),
            num(r.quantum.std_error),
            r.bound.as_ref().map(|b| b.method.to_string()).unwrap_or_default(),
            r.classical_pc.method.to_string(),
            r.quantum.method.to_string(),
            r.seed.to_string(),
        ]);
        if r.bound.is_none() {
            out.advise([format!("classical bound did not converge at tau0 = {}", r.tau0)]);
        }
        for s in [&r.classical_pc, &r.quantum] {
            out.advise(s.advisories.iter().cloned());
        }
    }
    out.push(".csv", table.finish());
    Ok(out)
}

/// Exact count distributions of both processes for one probe. Quantum
/// lattices share one cutoff so their cells line up.
pub fn outcome_lattices(
    probe: Probe,
    n_mean: f64,
    pair: &ProcessPair,
    det: &DetectionModel,
) -> conformance::Result<(CountDistribution, CountDistribution)> {
    let (g0, g1) = (&pair.reference, &pair.defective);
    match probe {
        Probe::Classical => {
            let p = ProbeModel::classical(n_mean)?;
            Ok((marginal_compound(&p, g0, det)?, marginal_compound(&p, g1, det)?))
        }
        Probe::Quantum => {
            let p = ProbeModel::tmsv(n_mean)?;
            let cutoff = required_cutoff(&p, g0, det).max(required_cutoff(&p, g1, det));
            Ok((
                process_count_distribution(&p, g0, det, Some(cutoff))?,
                process_count_distribution(&p, g1, det, Some(cutoff))?,
            ))
        }
    }
}

pub fn cost(c: &CostConfig) -> Result<RunOutput, CliError> {
    let n_grid = c.n_grid.values()?;
    let s_grid = c.s_grid.values()?;
    c.detection.validate()?;
    let fixed = DecisionRule::new(c.bias)?;
    let spec = CostSpec::new(c.s)?;
    let specs = s_grid.iter().map(|&s| CostSpec::new(s)).collect::<conformance::Result<Vec<_>>>()?;
    if c.probes.is_empty() {
        return Err(CliError::Usage("no probes selected".into()));
    }
    let pair = ProcessPair::new(c.reference.clone(), c.defective.clone());
    let mut out = RunOutput::default();

    let mut errors = Table::new(&["probe", "n_mean", "bias", "p01", "p10", "p_err"]);
    for &probe in &c.probes {
        let rows = n_grid
            .par_iter()
            .map(|&n| {
                let (p0, p1) = outcome_lattices(probe, n, &pair, &c.detection)?;
                Ok((
                    n,
                    conditional_errors(&p0, &p1, &DecisionRule::ml())?,
                    conditional_errors(&p0, &p1, &fixed)?,
                ))
            })
            .collect::<conformance::Result<Vec<_>>>()?;
        for (n, ml, biased) in rows {
            for (b, r) in [(0.0, ml), (c.bias, biased)] {
                errors.row(vec![probe.as_str().into(), num(n), num(b), num(r.p01), num(r.p10), num(r.p_err)]);
            }
        }
    }
    out.push("_errors.csv", errors.finish());

    let mut curve = Table::new(&["probe", "bias", "p01", "p10", "cost"]);
    let mut optimum = Table::new(&[
        "probe", "S", "b_star", "cost", "p01", "p10", "plateau_lo", "plateau_hi", "unimodal",
    ]);
    let grid = bias_grid(c.bias_points);
    for &probe in &c.probes {
        let (p0, p1) = outcome_lattices(probe, c.n_mean, &pair, &c.detection)?;
        if grid.len() < 3 {
            out.advise([format!(
                "bias grid of {} point(s) is degenerate; costs are reported at those points only",
                grid.len()
            )]);
            for &b in &grid {
                let r = conditional_errors(&p0, &p1, &DecisionRule::new(b)?)?.with_cost(&spec);
                curve.row(vec![probe.as_str().into(), num(b), num(r.p01), num(r.p10), num(r.cost.unwrap_or(f64::NAN))]);
            }
            continue;
        }
        let at_s = optimize_bias(&p0, &p1, &spec, &grid)?;
        for pt in &at_s.curve {
            curve.row(vec![
                probe.as_str().into(),
                num(pt.bias),
                num(pt.report.p01),
                num(pt.report.p10),
                num(pt.report.cost.unwrap_or(f64::NAN)),
            ]);
        }
        out.advise(at_s.advisories.iter().map(|a| format!("{} probe, S = {}: {a}", probe.as_str(), c.s)));
        for spec in &specs {
            let o = optimize_bias(&p0, &p1, spec, &grid)?;
            optimum.row(vec![
                probe.as_str().into(),
                num(spec.s()),
                num(o.bias),
                num(o.cost),
                num(o.report.p01),
                num(o.report.p10),
                num(o.plateau.0),
                num(o.plateau.1),
                o.unimodal.to_string(),
            ]);
        }
    }
    out.push("_curve.csv", curve.finish());
    out.push("_optimum.csv", optimum.finish());
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationRow {
    pub tau0: f64,
    pub probe: Probe,
    pub seed: u64,
    pub frequencies: FrequencyReport,
    /// Exact conditional errors of the same rule, for comparison.
    pub model_p01: f64,
    pub model_p10: f64,
    pub model_p_err: f64,
}

pub fn simulate(c: &SimulateConfig) -> Result<RunOutput, CliError> {
    let grid = c.tau0.values()?;
    c.detection.validate()?;
    let rule = DecisionRule::new(c.bias)?;
    let mut jobs = Vec::new();
    for (k, &t) in grid.iter().enumerate() {
        for (j, &probe) in c.probes.iter().enumerate() {
            jobs.push((k, t, j, probe));
        }
    }
    let rows = jobs
        .into_iter()
        .map(|(k, t, j, probe)| {
            let pair = ProcessPair::new(c.reference.at(t)?, c.defective.clone());
            let seed = splitmix(c.seed, (k * c.probes.len() + j) as u64);
            let model = match probe {
                Probe::Classical => ProbeModel::classical(c.n_mean)?,
                Probe::Quantum => ProbeModel::tmsv(c.n_mean)?,
            };
            let (p0, p1) = outcome_lattices(probe, c.n_mean, &pair, &c.detection)?;
            let r0 = sample_process(&model, &c.detection, &pair.reference, c.samples, splitmix(seed, 0))?;
            let r1 = sample_process(&model, &c.detection, &pair.defective, c.samples, splitmix(seed, 1))?;
            let frequencies = estimate_error_frequencies(&r0, &r1, &p0, &p1, &rule)?;
            let exact = conditional_errors(&p0, &p1, &rule)?;
            Ok(SimulationRow {
                tau0: t,
                probe,
                seed,
                frequencies,
                model_p01: exact.p01,
                model_p10: exact.p10,
                model_p_err: exact.p_err,
            })
        })
        .collect::<conformance::Result<Vec<_>>>()?;
    let mut table = Table::new(&[
        "tau0", "probe", "f10", "f01", "se10", "se01", "p_err", "se", "model_p_err", "fallback", "seed",
    ]);
    let mut out = RunOutput::default();
    for r in &rows {
        let f = &r.frequencies;
        table.row(vec![
            num(r.tau0),
            r.probe.as_str().into(),
            num(f.f10),
            num(f.f01),
            num(f.se10),
            num(f.se01),
            num(f.p_err),
            num(f.se),
            num(r.model_p_err),
            f.fallback_labels.to_string(),
            r.seed.to_string(),
        ]);
        if f.fallback_labels > 0 {
            out.advise([format!(
                "{} {} records at tau0 = {} were outside both lattices",
                f.fallback_labels,
                r.probe.as_str(),
                r.tau0
            )]);
        }
    }
    out.push(".csv", table.finish());
    out.push("_report.json", json(&rows));
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReweightSummary {
    #[serde(flatten)]
    pub report: ReweightReport,
    /// T of the resampled dataset's own histogram on the same bins.
    pub t_resampled: f64,
    pub dataset_size: usize,
    pub distinct_taus: usize,
    pub seed: u64,
}

pub fn load_dataset(source: &DatasetSource) -> Result<EmpiricalDataset, CliError> {
    match source {
        DatasetSource::Csv { path } => Ok(EmpiricalDataset::from_csv(path)?),
        DatasetSource::Synthetic {
            lo,
            hi,
            taus,
            layout,
            per_tau,
            mean_pairs,
            seed,
        } => {
            if !(0.0 <= *lo && lo <= hi && *hi <= 1.0) {
                return Err(CliError::Config(format!("synthetic range [{lo}, {hi}] is not inside [0, 1]")));
            }
            let values = match layout {
                Layout::Grid => grid_taus(*lo, *hi, *taus),
                Layout::Random => random_taus(*lo, *hi, *taus, *seed),
            };
            Ok(EmpiricalDataset::simulate(
                &values,
                *per_tau,
                &ProbeModel::tmsv(*mean_pairs)?,
                &DetectionModel::ideal(),
                *seed,
            )?)
        }
    }
}

pub fn reweight(c: &ReweightConfig) -> Result<RunOutput, CliError> {
    let ds = load_dataset(&c.dataset)?;
    let report = optimize_weights(&ds, &c.target, c.target_size, c.t_threshold, c.bins)?;
    let kept = resample(&ds, &report, c.seed)?;
    let t_resampled = rescore(&kept, &report, &c.target)?;
    let mut out = RunOutput::default();
    if !report.accepted {
        out.advise([format!(
            "T* = {} is below the threshold {}; the dataset cannot represent the target",
            report.t_star, report.t_threshold
        )]);
    }
    let summary = ReweightSummary {
        report,
        t_resampled,
        dataset_size: ds.len(),
        distinct_taus: ds.distinct_taus(),
        seed: c.seed,
    };
    let mut csv = Vec::new();
    kept.to_writer(&mut csv)?;
    out.push("_report.json", json(&summary));
    out.push("_dataset.csv", String::from_utf8(csv).expect("CSV is UTF-8"));
    Ok(out)
}

/// Bhattacharyya coefficient of a resampled dataset on the report's bins.
pub fn rescore(
    kept: &EmpiricalDataset,
    report: &ReweightReport,
    target: &TransmittanceDistribution,
) -> Result<f64, CliError> {
    let k = report.weights.len();
    let (lo, hi) = (report.edges[0], report.edges[k]);
    let mut counts = vec![0.0; k];
    for g in kept.groups() {
        let i = (((g.tau - lo) / (hi - lo) * k as f64).floor() as usize).min(k - 1);
        counts[i] += g.records.len() as f64;
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let h = conformance::Histogram::new(lo, hi, counts.into_iter().map(|c| c / total).collect())?;
    Ok(bhattacharyya(target, &h)?)
}
