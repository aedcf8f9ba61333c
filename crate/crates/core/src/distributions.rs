//! Densities over channel transmittance.
//!
//! A process is an ensemble of pure-loss channels whose transmittance is
//! drawn from one of these densities. All variants live on the unit
//! interval; Gaussians are truncated to it and, when the clipped mass is not
//! negligible, renormalized.

use std::path::{Path, PathBuf};

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::special::{normal_cdf, normal_pdf, normal_quantile};

/// Clipped Gaussian mass above which the density is renormalized on [0, 1].
pub const RENORMALIZE_THRESHOLD: f64 = 1e-9;

/// Probability content of the interval that quadrature rules cover.
pub const QUADRATURE_CONTENT: f64 = 1.0 - 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: f64,
    sigma: f64,
    clipped_mass: f64,
    renormalization: f64,
}

impl Gaussian {
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Mass of the untruncated Gaussian lying outside [0, 1].
    pub fn clipped_mass(&self) -> f64 {
        self.clipped_mass
    }

    /// Factor multiplying the Gaussian density on [0, 1]; 1 unless the
    /// clipped mass exceeds [`RENORMALIZE_THRESHOLD`].
    pub fn renormalization(&self) -> f64 {
        self.renormalization
    }

    pub fn is_renormalized(&self) -> bool {
        self.renormalization != 1.0
    }

    fn z(&self, tau: f64) -> f64 {
        (tau - self.mean) / self.sigma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Uniform {
    mean: f64,
    half_width: f64,
}

impl Uniform {
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn lo(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn hi(&self) -> f64 {
        self.mean + self.half_width
    }
}

/// Piecewise-constant density on equal-width bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    lo: f64,
    hi: f64,
    masses: Vec<f64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, masses: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || hi <= lo {
            return Err(Error::SupportOutOfRange { lo, hi });
        }
        if masses.is_empty() {
            return Err(Error::invalid("histogram needs at least one bin"));
        }
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::invalid("histogram masses must be nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("histogram masses sum to {total}, not 1")));
        }
        let masses = masses.into_iter().map(|m| m / total).collect();
        Ok(Histogram { lo, hi, masses })
    }

    /// Load from a two-column CSV `tau,mass` of equally spaced bin centres.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut centres = Vec::new();
        let mut masses = Vec::new();
        for row in reader.deserialize::<(f64, f64)>() {
            let (c, m) = row?;
            centres.push(c);
            masses.push(m);
        }
        if centres.len() < 2 {
            return Err(Error::invalid("histogram CSV needs at least two bins"));
        }
        let k = centres.len();
        let width = (centres[k - 1] - centres[0]) / (k - 1) as f64;
        for (i, c) in centres.iter().enumerate() {
            let expected = centres[0] + i as f64 * width;
            if (c - expected).abs() > 1e-9_f64.max(1e-6 * width) {
                return Err(Error::invalid("histogram bin centres must be equally spaced"));
            }
        }
        Histogram::new(centres[0] - 0.5 * width, centres[k - 1] + 0.5 * width, masses)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.masses.len() as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins()).map(|k| self.edge(k)).collect()
    }

    pub fn edge(&self, k: usize) -> f64 {
        if k == self.bins() {
            self.hi
        } else {
            self.lo + k as f64 * self.width()
        }
    }

    pub fn centre(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.width()
    }

    /// Bin containing `tau`; the upper edge belongs to the last bin.
    pub fn bin_of(&self, tau: f64) -> Option<usize> {
        if tau < self.lo || tau > self.hi {
            return None;
        }
        let k = ((tau - self.lo) / self.width()).floor() as usize;
        Some(k.min(self.bins() - 1))
    }

    pub fn density(&self, k: usize) -> f64 {
        self.masses[k] / self.width()
    }
}

/// Density g(τ) of a process over transmittance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionSpec", into = "DistributionSpec")]
pub enum TransmittanceDistribution {
    Delta(f64),
    Gaussian(Gaussian),
    Uniform(Uniform),
    Empirical(Histogram),
}

/// Serialized `{kind, params}` form of a [`TransmittanceDistribution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum DistributionSpec {
    Delta { tau: f64 },
    Gaussian { mean: f64, sigma: f64 },
    Uniform { mean: f64, half_width: f64 },
    /// Uniform whose variance equals `sigma²`.
    UniformMatched { mean: f64, sigma: f64 },
    Empirical { lo: f64, hi: f64, masses: Vec<f64> },
    EmpiricalCsv { path: PathBuf },
}

impl TryFrom<DistributionSpec> for TransmittanceDistribution {
    type Error = Error;

    fn try_from(spec: DistributionSpec) -> Result<Self> {
        match spec {
            DistributionSpec::Delta { tau } => Self::delta(tau),
            DistributionSpec::Gaussian { mean, sigma } => Self::gaussian(mean, sigma),
            DistributionSpec::Uniform { mean, half_width } => Self::uniform(mean, half_width),
            DistributionSpec::UniformMatched { mean, sigma } => uniform_matching_sigma(mean, sigma),
            DistributionSpec::Empirical { lo, hi, masses } => {
                Ok(Self::Empirical(Histogram::new(lo, hi, masses)?))
            }
            DistributionSpec::EmpiricalCsv { path } => Ok(Self::Empirical(Histogram::from_csv(path)?)),
        }
    }
}

impl From<TransmittanceDistribution> for DistributionSpec {
    fn from(d: TransmittanceDistribution) -> Self {
        match d {
            TransmittanceDistribution::Delta(tau) => DistributionSpec::Delta { tau },
            TransmittanceDistribution::Gaussian(g) => DistributionSpec::Gaussian {
                mean: g.mean,
                sigma: g.sigma,
            },
            TransmittanceDistribution::Uniform(u) => DistributionSpec::Uniform {
                mean: u.mean,
                half_width: u.half_width,
            },
            TransmittanceDistribution::Empirical(h) => DistributionSpec::Empirical {
                lo: h.lo,
                hi: h.hi,
                masses: h.masses,
            },
        }
    }
}

/// Reference process `g0`, defective process `g1` and the prior
/// probability of the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessPair {
    pub reference: TransmittanceDistribution,
    pub defective: TransmittanceDistribution,
    #[serde(default = "half")]
    pub prior: f64,
}

fn half() -> f64 {
    0.5
}

impl ProcessPair {
    /// Equiprobable pair.
    pub fn new(reference: TransmittanceDistribution, defective: TransmittanceDistribution) -> Self {
        ProcessPair {
            reference,
            defective,
            prior: 0.5,
        }
    }

    pub fn with_prior(mut self, prior: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&prior) {
            return Err(Error::invalid(format!("prior {prior} must lie in [0, 1]")));
        }
        self.prior = prior;
        Ok(self)
    }

    /// Error figures assume equiprobable processes; other priors are
    /// rejected rather than silently ignored.
    pub fn require_equal_prior(&self) -> Result<()> {
        if self.prior != 0.5 {
            return Err(Error::UnsupportedPrior(self.prior));
        }
        Ok(())
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("{name} = {v} must lie in [0, 1]")));
    }
    Ok(())
}

/// Uniform density with the same variance as a Gaussian of width `sigma`,
/// i.e. half-width √3·σ.
pub fn uniform_matching_sigma(mean: f64, sigma: f64) -> Result<TransmittanceDistribution> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma must be positive"));
    }
    TransmittanceDistribution::uniform(mean, 3f64.sqrt() * sigma)
}

impl TransmittanceDistribution {
    pub fn delta(tau: f64) -> Result<Self> {
        check_unit("tau", tau)?;
        Ok(Self::Delta(tau))
    }

    pub fn gaussian(mean: f64, sigma: f64) -> Result<Self> {
        check_unit("mean", mean)?;
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("gaussian sigma must be positive"));
        }
        let inside = normal_cdf((1.0 - mean) / sigma) - normal_cdf(-mean / sigma);
        let clipped_mass = 1.0 - inside;
        let renormalization = if clipped_mass > RENORMALIZE_THRESHOLD {
            1.0 / inside
        } else {
            1.0
        };
        Ok(Self::Gaussian(Gaussian {
            mean,
            sigma,
            clipped_mass,
            renormalization,
        }))
    }

    pub fn uniform(mean: f64, half_width: f64) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(Error::invalid("uniform half-width must be positive"));
        }
        let (lo, hi) = (mean - half_width, mean + half_width);
        // Tolerate round-off at the edges of the unit interval.
        if lo < -1e-12 || hi > 1.0 + 1e-12 {
            return Err(Error::SupportOutOfRange { lo, hi });
        }
        Ok(Self::Uniform(Uniform { mean, half_width }))
    }

    pub fn empirical(histogram: Histogram) -> Self {
        Self::Empirical(histogram)
    }

    pub fn is_delta(&self) -> bool {
        matches!(self, Self::Delta(_))
    }

    /// Density at `tau` (per unit transmittance).
    pub fn pdf(&self, tau: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&tau) {
            return Ok(0.0);
        }
        Ok(match self {
            Self::Delta(_) => return Err(Error::DeltaNotEvaluable),
            Self::Gaussian(g) => g.renormalization * normal_pdf(g.z(tau)) / g.sigma,
            Self::Uniform(u) => {
                if tau >= u.lo() && tau <= u.hi() {
                    0.5 / u.half_width
                } else {
                    0.0
                }
            }
            Self::Empirical(h) => h.bin_of(tau).map_or(0.0, |k| h.density(k)),
        })
    }

    /// Cumulative distribution on [0, 1].
    pub fn cdf(&self, tau: f64) -> f64 {
        let v = match self {
            Self::Delta(t) => {
                if tau >= *t {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Gaussian(g) => {
                let t = tau.clamp(0.0, 1.0);
                g.renormalization * (normal_cdf(g.z(t)) - normal_cdf(g.z(0.0)))
            }
            Self::Uniform(u) => (tau - u.lo()) / (2.0 * u.half_width),
            Self::Empirical(h) => {
                if tau <= h.lo {
                    0.0
                } else if tau >= h.hi {
                    1.0
                } else {
                    let k = h.bin_of(tau).unwrap_or(0);
                    let below: f64 = h.masses[..k].iter().sum();
                    below + h.masses[k] * (tau - h.edge(k)) / h.width()
                }
            }
        };
        v.clamp(0.0, 1.0)
    }

    /// Inverse of [`Self::cdf`].
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self {
            Self::Delta(t) => *t,
            Self::Gaussian(g) => {
                let (a, b) = (g.z(0.0), g.z(1.0));
                let z = if p <= 0.5 {
                    normal_quantile(normal_cdf(a) + p / g.renormalization)
                } else {
                    -normal_quantile(normal_cdf(-b) + (1.0 - p) / g.renormalization)
                };
                (g.mean + g.sigma * z).clamp(0.0, 1.0)
            }
            Self::Uniform(u) => u.lo() + p * 2.0 * u.half_width,
            Self::Empirical(h) => {
                let mut acc = 0.0;
                for (k, &m) in h.masses.iter().enumerate() {
                    if m > 0.0 && acc + m >= p {
                        return h.edge(k) + h.width() * ((p - acc) / m).clamp(0.0, 1.0);
                    }
                    acc += m;
                }
                h.hi
            }
        }
    }

    /// Mean and variance. Renormalized Gaussians use truncated-normal
    /// moments; histograms use bin midpoints.
    pub fn moments(&self) -> (f64, f64) {
        match self {
            Self::Delta(t) => (*t, 0.0),
            Self::Gaussian(g) => {
                if !g.is_renormalized() {
                    return (g.mean, g.sigma * g.sigma);
                }
                let (a, b) = (g.z(0.0), g.z(1.0));
                let z = 1.0 / g.renormalization;
                let (pa, pb) = (normal_pdf(a), normal_pdf(b));
                let shift = (pa - pb) / z;
                let mean = g.mean + g.sigma * shift;
                let var = g.sigma * g.sigma * (1.0 + (a * pa - b * pb) / z - shift * shift);
                (mean, var)
            }
            Self::Uniform(u) => (u.mean, u.half_width * u.half_width / 3.0),
            Self::Empirical(h) => {
                let mean: f64 = h.masses.iter().enumerate().map(|(k, m)| m * h.centre(k)).sum();
                let var = h
                    .masses
                    .iter()
                    .enumerate()
                    .map(|(k, m)| m * (h.centre(k) - mean).powi(2))
                    .sum();
                (mean, var)
            }
        }
    }

    /// Interval symmetric in probability carrying mass `r`.
    ///
    /// Gaussians use the untruncated law, so for a renormalized Gaussian the
    /// interval carries `r` times [`Gaussian::renormalization`] of the
    /// density on [0, 1].
    pub fn truncation_interval(&self, r: f64) -> Result<(f64, f64)> {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::invalid("probability content must lie in (0, 1]"));
        }
        match self {
            Self::Delta(_) => Err(Error::DeltaNotTruncatable),
            Self::Uniform(u) => Ok((u.mean - r * u.half_width, u.mean + r * u.half_width)),
            // Quantiles of the untruncated Gaussian, clipped to [0, 1].
            Self::Gaussian(g) => {
                let z = -normal_quantile(0.5 * (1.0 - r));
                Ok((
                    (g.mean - g.sigma * z).max(0.0),
                    (g.mean + g.sigma * z).min(1.0),
                ))
            }
            Self::Empirical(_) => Ok((self.quantile(0.5 * (1.0 - r)), self.quantile(0.5 * (1.0 + r)))),
        }
    }

    /// Smallest and largest transmittance reached by quadrature nodes.
    pub fn effective_support(&self) -> (f64, f64) {
        match self {
            Self::Delta(t) => (*t, *t),
            Self::Uniform(u) => (u.lo().max(0.0), u.hi().min(1.0)),
            Self::Gaussian(_) => self
                .truncation_interval(QUADRATURE_CONTENT)
                .expect("non-delta"),
            Self::Empirical(h) => {
                let first = h.masses.iter().position(|m| *m > 0.0).unwrap_or(0);
                let last = h.masses.iter().rposition(|m| *m > 0.0).unwrap_or(h.bins() - 1);
                (h.edge(first), h.edge(last + 1))
            }
        }
    }

    /// Smooth pieces of the density: `(lo, hi)` intervals.
    fn segments(&self) -> Vec<(f64, f64)> {
        match self {
            Self::Delta(t) => vec![(*t, *t)],
            Self::Empirical(h) => (0..h.bins())
                .filter(|&k| h.masses[k] > 0.0)
                .map(|k| (h.edge(k), h.edge(k + 1)))
                .collect(),
            _ => vec![self.effective_support()],
        }
    }

    /// Discrete measure `(τ, w)` approximating g with weights summing to 1.
    ///
    /// `panels` panels of the composite Gauss–Legendre rule are spread over
    /// the support in proportion to length; intervals are split at every
    /// breakpoint that falls strictly inside them.
    pub fn quadrature_rule(&self, panels: usize, breakpoints: &[f64]) -> Vec<(f64, f64)> {
        if let Self::Delta(t) = self {
            return vec![(*t, 1.0)];
        }
        let mut pieces = Vec::new();
        for (lo, hi) in self.segments() {
            let mut cuts: Vec<f64> = breakpoints
                .iter()
                .copied()
                .filter(|b| *b > lo && *b < hi)
                .collect();
            cuts.sort_by(f64::total_cmp);
            let mut a = lo;
            for c in cuts.into_iter().chain(std::iter::once(hi)) {
                if c > a {
                    pieces.push((a, c));
                }
                a = c;
            }
        }
        let total_len: f64 = pieces.iter().map(|(a, b)| b - a).sum();
        let mut rule = Vec::new();
        for (a, b) in pieces {
            let n = ((panels as f64 * (b - a) / total_len).ceil() as usize).max(1);
            let start = rule.len();
            quadrature::composite(a, b, n, &mut rule);
            let density = self.pdf(0.5 * (a + b)).unwrap_or(0.0);
            for node in &mut rule[start..] {
                node.1 *= match self {
                    Self::Uniform(_) | Self::Empirical(_) => density,
                    _ => self.pdf(node.0).unwrap_or(0.0),
                };
            }
        }
        let total: f64 = rule.iter().map(|(_, w)| w).sum();
        if total > 0.0 {
            for node in &mut rule {
                node.1 /= total;
            }
        }
        rule
    }

    /// Draw one transmittance.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Delta(t) => *t,
            Self::Uniform(u) => u.lo() + rng.random::<f64>() * 2.0 * u.half_width,
            _ => self.quantile(rng.random::<f64>()),
        }
    }
}
