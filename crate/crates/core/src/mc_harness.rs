//! Monte-Carlo experiments over the ensemble: sampling and measurement in
//! parallel, binning into a joint `(eigenvalue, overlap)` histogram,
//! goodness-of-fit against the analytic densities, and persistence.
//!
//! Matrix `i` of a run always comes from the random stream `(seed, i)`, and
//! work is cut into fixed index chunks, so the histogram does not depend on
//! the number of workers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::ensemble_sampler::{count_real_eigenvalues, real_eig_overlaps, sample_matrix, MeasureOptions};
use crate::error::{domain, Error, Result};
use crate::finite_n_jdf::{fn_density, marginal_density, JdfAtZ};
use crate::prt_kernels::EnsembleParams;
use crate::quad::{integrate_fallible, GaussLegendre};
use crate::scaling_limits::{bulk_jdf, weak_density, weak_jdf, BulkPoint, WeakPoint};

/// Version tag written into persisted histograms.
pub const FORMAT_VERSION: u32 = 1;

/// Matrices per work unit. Fixed so that the split is worker-independent.
const CHUNK: u64 = 16;

/// Correlation parameter, given directly or through the weak-regime
/// asymmetry `a` with `tau = 1 - a^2 / (2N)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauSpec {
    Fixed(f64),
    Weak(f64),
}

/// Coordinates used for binning.
///
/// | scaling | z axis | t axis |
/// |---|---|---|
/// | raw | `lambda` | `t` |
/// | bulk | `lambda / sqrt(N)` | `t / N` |
/// | edge | `(lambda - sqrt(N)(1+tau)) / sqrt(1-tau^2)` | `t / ((1-tau) sqrt(N (1-tau^2)))` |
/// | weak | `lambda / sqrt(N)` | `t` |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    Raw,
    Bulk,
    Edge,
    Weak,
}

/// Affine map from histogram coordinates back to raw ones:
/// `lambda = z_offset + z_scale * x`, `t = t_scale * y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoordinateMap {
    pub z_offset: f64,
    pub z_scale: f64,
    pub t_scale: f64,
}

impl CoordinateMap {
    pub fn to_scaled(&self, lambda: f64, t: f64) -> (f64, f64) {
        ((lambda - self.z_offset) / self.z_scale, t / self.t_scale)
    }

    pub fn to_raw(&self, x: f64, y: f64) -> (f64, f64) {
        (self.z_offset + self.z_scale * x, self.t_scale * y)
    }
}

#[derive(Deserialize)]
struct EdgeRange {
    lo: f64,
    hi: f64,
    bins: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BinSpec {
    Edges(Vec<f64>),
    Linear { linear: EdgeRange },
    Log { log: EdgeRange },
}

/// Strictly increasing, finite bin edges. Bin `i` is `[e_i, e_{i+1})`.
///
/// In JSON either an explicit array or `{"linear": {"lo", "hi", "bins"}}` /
/// `{"log": {...}}`; always written back as the explicit array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BinSpec", into = "Vec<f64>")]
pub struct BinEdges(Vec<f64>);

impl TryFrom<BinSpec> for BinEdges {
    type Error = Error;
    fn try_from(spec: BinSpec) -> Result<Self> {
        match spec {
            BinSpec::Edges(e) => Self::new(e),
            BinSpec::Linear { linear: r } => Self::linear(r.lo, r.hi, r.bins),
            BinSpec::Log { log: r } => Self::log(r.lo, r.hi, r.bins),
        }
    }
}

impl From<BinEdges> for Vec<f64> {
    fn from(b: BinEdges) -> Self {
        b.0
    }
}

impl BinEdges {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return domain("need at least two bin edges");
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return domain("bin edges must be finite");
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return domain("bin edges must be strictly increasing");
        }
        Ok(Self(edges))
    }

    pub fn linear(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 {
            return domain("need at least one bin");
        }
        let w = (hi - lo) / bins as f64;
        let mut e: Vec<f64> = (0..bins).map(|i| lo + w * i as f64).collect();
        e.push(hi);
        Self::new(e)
    }

    pub fn log(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo > 0.0) {
            return domain("log-spaced bins need a positive lower edge");
        }
        if bins == 0 {
            return domain("need at least one bin");
        }
        let r = (hi / lo).ln() / bins as f64;
        let mut e: Vec<f64> = (0..bins).map(|i| lo * (r * i as f64).exp()).collect();
        e.push(hi);
        Self::new(e)
    }

    pub fn edges(&self) -> &[f64] {
        &self.0
    }

    pub fn bins(&self) -> usize {
        self.0.len() - 1
    }

    pub fn lo(&self) -> f64 {
        self.0[0]
    }

    pub fn hi(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn bounds(&self, i: usize) -> (f64, f64) {
        (self.0[i], self.0[i + 1])
    }

    /// Bin holding `x`, or `None` outside `[lo, hi)`.
    pub fn find(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo() && x < self.hi()) {
            return None;
        }
        Some(self.0.partition_point(|&e| e <= x) - 1)
    }
}

/// Densities that a histogram can be tested against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    /// Exact finite-N joint density, cell by cell.
    FiniteJoint,
    /// Eigenvalue marginal of the exact joint density, per z bin.
    FiniteMarginal,
    /// Closed-form density of real eigenvalues (even N), per z bin.
    FiniteDensity,
    /// Bulk limit law in bulk coordinates, cell by cell.
    BulkJoint,
    /// Distribution of `t` conditional on `|z| < z_max`, against the weak
    /// law at `z = 0`.
    WeakSlice { z_max: f64 },
    /// Distribution of `t` conditional on `|z| < z_max`, against the exact
    /// finite-N joint density over the same slice.
    FiniteSlice { z_max: f64 },
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::FiniteJoint => "finite_joint",
            Model::FiniteMarginal => "finite_marginal",
            Model::FiniteDensity => "finite_density",
            Model::BulkJoint => "bulk_joint",
            Model::WeakSlice { .. } => "weak_slice",
            Model::FiniteSlice { .. } => "finite_slice",
        }
    }
}

fn default_max_abs_z() -> f64 {
    3.0
}

fn default_significance() -> f64 {
    1e-3
}

fn default_min_expected() -> f64 {
    20.0
}

/// Which model to compare against and how strict to be.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSpec {
    pub model: Model,
    /// Largest allowed `|observed - expected| / sqrt(expected)` in any used cell.
    #[serde(default = "default_max_abs_z")]
    pub max_abs_z: f64,
    /// Smallest allowed chi-square p-value.
    #[serde(default = "default_significance")]
    pub significance: f64,
    /// Cells with a smaller expectation are reported but not tested.
    #[serde(default = "default_min_expected")]
    pub min_expected: f64,
}

impl ComparisonSpec {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            max_abs_z: default_max_abs_z(),
            significance: default_significance(),
            min_expected: default_min_expected(),
        }
    }
}

/// Everything that defines a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub tau_spec: TauSpec,
    pub num_matrices: u64,
    pub seed: u64,
    pub scaling: Scaling,
    pub z_bins: BinEdges,
    pub t_bins: BinEdges,
    #[serde(default)]
    pub measure: MeasureOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonSpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn tau(&self) -> f64 {
        match self.tau_spec {
            TauSpec::Fixed(tau) => tau,
            TauSpec::Weak(a) => 1.0 - a * a / (2.0 * self.n as f64),
        }
    }

    pub fn params(&self) -> Result<EnsembleParams> {
        match self.tau_spec {
            TauSpec::Fixed(tau) => EnsembleParams::new(self.n, tau),
            TauSpec::Weak(a) => EnsembleParams::weak(self.n, a),
        }
    }

    pub fn coordinates(&self) -> CoordinateMap {
        let nf = self.n as f64;
        let tau = self.tau();
        match self.scaling {
            Scaling::Raw => CoordinateMap {
                z_offset: 0.0,
                z_scale: 1.0,
                t_scale: 1.0,
            },
            Scaling::Bulk => CoordinateMap {
                z_offset: 0.0,
                z_scale: nf.sqrt(),
                t_scale: nf,
            },
            Scaling::Weak => CoordinateMap {
                z_offset: 0.0,
                z_scale: nf.sqrt(),
                t_scale: 1.0,
            },
            Scaling::Edge => {
                let s = (1.0 - tau * tau).sqrt();
                CoordinateMap {
                    z_offset: nf.sqrt() * (1.0 + tau),
                    z_scale: s,
                    t_scale: (1.0 - tau) * nf.sqrt() * s,
                }
            }
        }
    }

    /// Checks every field before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.num_matrices == 0 {
            return domain("num_matrices must be at least 1");
        }
        if let TauSpec::Weak(a) = self.tau_spec {
            if !(a > 0.0) || a * a > 2.0 * self.n as f64 {
                return domain(format!("weak asymmetry a = {a} out of range for N = {}", self.n));
            }
        }
        let params = self.params()?;
        if self.t_bins.lo() < 0.0 {
            return domain("overlap bins must start at t >= 0");
        }
        if self.scaling == Scaling::Edge && !(params.tau < 1.0) {
            return domain("edge scaling needs tau < 1");
        }
        if let Some(spec) = &self.comparison {
            self.check_model(spec.model, params)?;
        }
        Ok(())
    }

    fn check_model(&self, model: Model, params: EnsembleParams) -> Result<()> {
        let need = |ok: bool, msg: &str| if ok { Ok(()) } else { domain(msg.to_string()) };
        match model {
            Model::FiniteJoint | Model::FiniteMarginal => {
                need(params.n >= 2 && params.tau < 1.0, "finite-N models need N >= 2 and tau < 1")
            }
            Model::FiniteDensity => {
                if params.n % 2 == 1 {
                    return Err(Error::Unsupported(format!(
                        "closed-form density is for even N only, got N = {}",
                        params.n
                    )));
                }
                need(params.tau > 0.0 && params.tau < 1.0, "closed-form density needs 0 < tau < 1")
            }
            Model::BulkJoint => need(
                self.scaling == Scaling::Bulk && params.tau < 1.0,
                "bulk model needs bulk scaling and tau < 1",
            ),
            Model::WeakSlice { z_max } => {
                need(
                    self.scaling == Scaling::Weak && matches!(self.tau_spec, TauSpec::Weak(_)),
                    "weak slice model needs weak scaling and a weak tau spec",
                )?;
                need(z_max > 0.0 && z_max < 2.0, "weak slice needs 0 < z_max < 2")
            }
            Model::FiniteSlice { z_max } => {
                need(params.n >= 2 && params.tau < 1.0, "finite-N models need N >= 2 and tau < 1")?;
                need(z_max > 0.0, "slice half-width must be positive")
            }
        }
    }
}

/// Counts of observations binned in scaled `(z, t)` coordinates.
///
/// Every accepted observation lands in exactly one of `counts`, `t_below`,
/// `t_above` (per z bin) or `z_outside`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointHistogram {
    pub config: ExperimentConfig,
    /// Row-major, `z_bins.bins()` rows by `t_bins.bins()` columns.
    pub counts: Vec<u64>,
    pub t_below: Vec<u64>,
    pub t_above: Vec<u64>,
    pub z_outside: u64,
    /// Real eigenvalues whose overlap could not be measured reliably.
    pub discards: u64,
    pub total_matrices: u64,
    pub total_observations: u64,
}

impl JointHistogram {
    pub fn empty(config: &ExperimentConfig) -> Self {
        let nz = config.z_bins.bins();
        let nt = config.t_bins.bins();
        Self {
            config: config.clone(),
            counts: vec![0; nz * nt],
            t_below: vec![0; nz],
            t_above: vec![0; nz],
            z_outside: 0,
            discards: 0,
            total_matrices: 0,
            total_observations: 0,
        }
    }

    pub fn z_bins(&self) -> usize {
        self.config.z_bins.bins()
    }

    pub fn t_bins(&self) -> usize {
        self.config.t_bins.bins()
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.t_bins() + j]
    }

    /// Bins one observation given in scaled coordinates.
    pub fn record(&mut self, x: f64, y: f64) {
        self.total_observations += 1;
        let Some(i) = self.config.z_bins.find(x) else {
            self.z_outside += 1;
            return;
        };
        match self.config.t_bins.find(y) {
            Some(j) => {
                let nt = self.t_bins();
                self.counts[i * nt + j] += 1;
            }
            None if y < self.config.t_bins.lo() => self.t_below[i] += 1,
            None => self.t_above[i] += 1,
        }
    }

    /// Adds another histogram of the same configuration.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.config != other.config {
            return Err(Error::Format("cannot merge histograms of different configurations".into()));
        }
        let add = |a: &mut [u64], b: &[u64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.counts, &other.counts);
        add(&mut self.t_below, &other.t_below);
        add(&mut self.t_above, &other.t_above);
        self.z_outside += other.z_outside;
        self.discards += other.discards;
        self.total_matrices += other.total_matrices;
        self.total_observations += other.total_observations;
        Ok(())
    }

    /// Observations per z bin, whatever their `t`.
    pub fn z_marginal(&self) -> Vec<u64> {
        let nt = self.t_bins();
        (0..self.z_bins())
            .map(|i| self.counts[i * nt..(i + 1) * nt].iter().sum::<u64>() + self.t_below[i] + self.t_above[i])
            .collect()
    }

    /// Observations per t bin over all in-range z bins.
    pub fn t_marginal(&self) -> Vec<u64> {
        let nt = self.t_bins();
        let mut out = vec![0; nt];
        for row in self.counts.chunks(nt) {
            out.iter_mut().zip(row).for_each(|(o, c)| *o += c);
        }
        out
    }

    /// Whether the bins account for every observation exactly once.
    pub fn is_conserved(&self) -> bool {
        let binned: u64 = self.counts.iter().chain(&self.t_below).chain(&self.t_above).sum();
        binned + self.z_outside == self.total_observations
    }

    fn body_csv(&self) -> String {
        let nt = self.t_bins();
        let mut s = String::from("z_bin,t_bin,count\n");
        for (k, &c) in self.counts.iter().enumerate() {
            if c > 0 {
                writeln!(s, "{},{},{}", k / nt, k % nt, c).expect("write to string");
            }
        }
        s
    }

    fn header(&self, body: &str) -> HistogramHeader {
        HistogramHeader {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            total_matrices: self.total_matrices,
            total_observations: self.total_observations,
            discards: self.discards,
            z_outside: self.z_outside,
            t_below: self.t_below.clone(),
            t_above: self.t_above.clone(),
            body_sha256: sha256_hex(body.as_bytes()),
        }
    }

    /// SHA-256 over the persisted form; equal histograms give equal digests.
    pub fn digest(&self) -> String {
        let body = self.body_csv();
        let header = serde_json::to_string(&self.header(&body)).expect("header serializes");
        sha256_hex(format!("{header}\n{body}").as_bytes())
    }

    /// Writes `histogram.json` and `histogram.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let body = self.body_csv();
        let header = serde_json::to_string_pretty(&self.header(&body))?;
        let hp = dir.join("histogram.json");
        let bp = dir.join("histogram.csv");
        fs::write(&hp, header + "\n")?;
        fs::write(&bp, body)?;
        Ok((hp, bp))
    }

    /// Reads back what [`JointHistogram::save`] wrote.
    pub fn load(dir: &Path) -> Result<Self> {
        let header: HistogramHeader = serde_json::from_str(&fs::read_to_string(dir.join("histogram.json"))?)?;
        let body = fs::read_to_string(dir.join("histogram.csv"))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unknown format version {}", header.format_version)));
        }
        if sha256_hex(body.as_bytes()) != header.body_sha256 {
            return Err(Error::Format("histogram body does not match its header checksum".into()));
        }
        header.config.validate()?;
        let mut h = Self::empty(&header.config);
        if header.t_below.len() != h.z_bins() || header.t_above.len() != h.z_bins() {
            return Err(Error::Format("overflow vectors do not match the z bins".into()));
        }
        let (nz, nt) = (h.z_bins(), h.t_bins());
        let mut lines = body.lines();
        if lines.next() != Some("z_bin,t_bin,count") {
            return Err(Error::Format("missing histogram body header".into()));
        }
        for line in lines {
            let bad = || Error::Format(format!("bad histogram row '{line}'"));
            let mut f = line.split(',').map(|v| v.parse::<u64>().map_err(|_| bad()));
            let (i, j, c) = match (f.next(), f.next(), f.next(), f.next()) {
                (Some(i), Some(j), Some(c), None) => (i? as usize, j? as usize, c?),
                _ => return Err(bad()),
            };
            if i >= nz || j >= nt {
                return Err(bad());
            }
            h.counts[i * nt + j] = c;
        }
        h.t_below = header.t_below;
        h.t_above = header.t_above;
        h.z_outside = header.z_outside;
        h.discards = header.discards;
        h.total_matrices = header.total_matrices;
        h.total_observations = header.total_observations;
        if !h.is_conserved() {
            return Err(Error::Format("histogram counts do not add up to the observation total".into()));
        }
        Ok(h)
    }
}

#[derive(Serialize, Deserialize)]
struct HistogramHeader {
    format_version: u32,
    config: ExperimentConfig,
    total_matrices: u64,
    total_observations: u64,
    discards: u64,
    z_outside: u64,
    t_below: Vec<u64>,
    t_above: Vec<u64>,
    body_sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").expect("write to string");
        s
    })
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Numeric(format!("cannot start worker pool: {e}")))
}

fn chunks(total: u64) -> impl IndexedParallelIterator<Item = (u64, u64)> {
    let count = usize::try_from(total.div_ceil(CHUNK)).expect("chunk count fits in usize");
    (0..count).into_par_iter().map(move |c| {
        let c = c as u64;
        (c * CHUNK, ((c + 1) * CHUNK).min(total))
    })
}

/// Samples, measures and bins `config.num_matrices` matrices on `workers`
/// threads. The result is identical for every worker count.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<JointHistogram> {
    config.validate()?;
    let tau = config.tau();
    let map = config.coordinates();
    let pool = thread_pool(workers)?;
    let h = pool.install(|| {
        chunks(config.num_matrices)
            .map(|(lo, hi)| -> Result<JointHistogram> {
                let mut h = JointHistogram::empty(config);
                for index in lo..hi {
                    let m = sample_matrix(config.n, tau, config.seed, index)?;
                    let r = real_eig_overlaps(&m, config.measure).map_err(|e| {
                        Error::Numeric(format!(
                            "matrix {index} of seed {} failed after {} matrices of its chunk: {e}",
                            config.seed,
                            index - lo
                        ))
                    })?;
                    for o in &r.observations {
                        let (x, y) = map.to_scaled(o.lambda, o.t);
                        h.record(x, y);
                    }
                    h.discards += r.discards as u64;
                    h.total_matrices += 1;
                }
                Ok(h)
            })
            .try_reduce(
                || JointHistogram::empty(config),
                |mut a, b| {
                    a.merge(&b)?;
                    Ok(a)
                },
            )
    })?;
    if !h.is_conserved() || h.total_matrices != config.num_matrices {
        return Err(Error::Numeric("observation accounting failed after merge".into()));
    }
    Ok(h)
}

/// Sample mean and variance of the number of real eigenvalues per matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CountSummary {
    pub n: usize,
    pub tau: f64,
    pub matrices: u64,
    pub mean: f64,
    pub variance: f64,
}

impl CountSummary {
    pub fn standard_error(&self) -> f64 {
        (self.variance / self.matrices as f64).sqrt()
    }
}

/// Counts real eigenvalues (1x1 Schur blocks) without measuring overlaps.
pub fn real_count_statistics(n: usize, tau: f64, matrices: u64, seed: u64, workers: usize) -> Result<CountSummary> {
    if matrices < 2 {
        return domain("need at least two matrices for a variance");
    }
    let pool = thread_pool(workers)?;
    let (sum, sum2) = pool.install(|| {
        chunks(matrices)
            .map(|(lo, hi)| -> Result<(u64, u64)> {
                let mut acc = (0u64, 0u64);
                for index in lo..hi {
                    let c = count_real_eigenvalues(&sample_matrix(n, tau, seed, index)?)? as u64;
                    acc.0 += c;
                    acc.1 += c * c;
                }
                Ok(acc)
            })
            .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))
    })?;
    let m = matrices as f64;
    let mean = sum as f64 / m;
    let variance = (sum2 as f64 - m * mean * mean) / (m - 1.0);
    Ok(CountSummary {
        n,
        tau,
        matrices,
        mean,
        variance,
    })
}

/// Least-squares line through `(ln x, ln y)`: returns `(slope, intercept)`.
pub fn log_log_fit(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData("need two positive points for a fit".into()));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Log-log slope of the overlap histogram (all z bins) over the t bins that
/// lie inside `[t_lo, t_hi]`, using count per unit `t` at the geometric bin
/// centre.
pub fn tail_slope(h: &JointHistogram, t_lo: f64, t_hi: f64) -> Result<f64> {
    let edges = &h.config.t_bins;
    let marg = h.t_marginal();
    let slack = 1e-9 * t_hi.abs();
    let pts: Vec<(f64, f64)> = (0..edges.bins())
        .filter_map(|j| {
            let (a, b) = edges.bounds(j);
            (a >= t_lo - slack && b <= t_hi + slack && a > 0.0 && marg[j] > 0).then(|| ((a * b).sqrt(), marg[j] as f64 / (b - a)))
        })
        .collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} populated t bins in [{t_lo}, {t_hi}], need 4",
            pts.len()
        )));
    }
    Ok(log_log_fit(&pts)?.0)
}

/// One tested cell of a comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellComparison {
    pub z_bin: Option<usize>,
    pub t_bin: Option<usize>,
    pub observed: u64,
    pub expected: f64,
    /// `(observed - expected) / sqrt(expected)`.
    pub z_score: f64,
    /// Whether the cell entered the statistics (`expected >= min_expected`).
    pub used: bool,
}

/// Outcome of [`compare_to_model`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub model: Model,
    pub total_matrices: u64,
    pub total_observations: u64,
    pub discards: u64,
    pub cells: Vec<CellComparison>,
    pub used_cells: usize,
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub max_abs_z: f64,
    pub spec: ComparisonSpec,
    pub passed: bool,
}

impl ComparisonReport {
    fn from_cells(h: &JointHistogram, spec: ComparisonSpec, mut cells: Vec<CellComparison>, constraints: usize) -> Result<Self> {
        let mut chi2 = 0.0;
        let mut used = 0;
        let mut max_z = 0.0f64;
        for c in cells.iter_mut() {
            c.z_score = if c.expected > 0.0 {
                (c.observed as f64 - c.expected) / c.expected.sqrt()
            } else {
                0.0
            };
            c.used = c.expected >= spec.min_expected;
            if c.used {
                used += 1;
                chi2 += c.z_score * c.z_score;
                max_z = max_z.max(c.z_score.abs());
            }
        }
        if used <= constraints {
            return Err(Error::InsufficientData(format!(
                "only {used} cells with expected count >= {}",
                spec.min_expected
            )));
        }
        let dof = used - constraints;
        let p_value = ChiSquared::new(dof as f64)
            .map_err(|e| Error::Numeric(e.to_string()))?
            .sf(chi2);
        Ok(Self {
            model: spec.model,
            total_matrices: h.total_matrices,
            total_observations: h.total_observations,
            discards: h.discards,
            cells,
            used_cells: used,
            chi_square: chi2,
            degrees_of_freedom: dof,
            p_value,
            max_abs_z: max_z,
            spec,
            passed: p_value > spec.significance && max_z <= spec.max_abs_z,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

const EXPECTED_REL_TOL: f64 = 1e-8;

/// `int_a^b f(t) dt` after `t = u^2`, which removes the `t^{-1/2}` behaviour
/// of the joint density at small overlap.
fn integrate_overlap<F: FnMut(f64) -> Result<f64>>(mut f: F, a: f64, b: f64) -> Result<f64> {
    integrate_fallible(
        |u| if u > 0.0 { Ok(2.0 * u * f(u * u)?) } else { Ok(0.0) },
        a.max(0.0).sqrt(),
        b.sqrt(),
        1e-14,
        EXPECTED_REL_TOL,
    )
}

/// Computes expected counts under `spec.model` and tests the histogram.
pub fn compare_to_model(h: &JointHistogram, spec: &ComparisonSpec) -> Result<ComparisonReport> {
    if h.total_matrices == 0 || h.total_observations == 0 {
        return Err(Error::InsufficientData("histogram is empty".into()));
    }
    let config = &h.config;
    let params = config.params()?;
    config.check_model(spec.model, params)?;
    let map = config.coordinates();
    let matrices = h.total_matrices as f64;
    let zb = &config.z_bins;
    let tb = &config.t_bins;
    let (nz, nt) = (zb.bins(), tb.bins());

    match spec.model {
        Model::FiniteMarginal | Model::FiniteDensity => {
            let observed = h.z_marginal();
            let density = |lambda: f64| match spec.model {
                Model::FiniteMarginal => marginal_density(params, lambda),
                _ => fn_density(params, lambda),
            };
            let mut cells = Vec::with_capacity(nz);
            for (i, &obs) in observed.iter().enumerate() {
                let (a, b) = zb.bounds(i);
                let (la, _) = map.to_raw(a, 0.0);
                let (lb, _) = map.to_raw(b, 0.0);
                let mass = integrate_fallible(density, la, lb, 1e-14, EXPECTED_REL_TOL)?;
                cells.push(cell(Some(i), None, obs, matrices * mass));
            }
            ComparisonReport::from_cells(h, *spec, cells, 0)
        }
        Model::FiniteJoint => {
            let gl = GaussLegendre::order64();
            let mut expected = vec![0.0; nz * nt];
            for i in 0..nz {
                let (a, b) = zb.bounds(i);
                let (la, _) = map.to_raw(a, 0.0);
                let (lb, _) = map.to_raw(b, 0.0);
                let (mid, half) = (0.5 * (la + lb), 0.5 * (lb - la));
                for (node, weight) in gl.nodes.iter().zip(&gl.weights) {
                    let at = JdfAtZ::new(params, mid + half * node)?;
                    for j in 0..nt {
                        let (c, d) = tb.bounds(j);
                        let (_, tc) = map.to_raw(0.0, c);
                        let (_, td) = map.to_raw(0.0, d);
                        expected[i * nt + j] += half * weight * integrate_overlap(|t| at.density_t(t), tc, td)?;
                    }
                }
            }
            let cells = joint_cells(h, &expected, matrices);
            ComparisonReport::from_cells(h, *spec, cells, 0)
        }
        Model::BulkJoint => {
            // count per matrix per unit (x, y) is sqrt(N) bulk_jdf(x, y)
            let gl = GaussLegendre::order64();
            let tau = params.tau;
            let edge = 1.0 + tau;
            let scale = (params.n as f64).sqrt();
            let mut expected = vec![0.0; nz * nt];
            for i in 0..nz {
                let (a, b) = zb.bounds(i);
                let (a, b) = (a.max(-edge), b.min(edge));
                if !(a < b) {
                    continue;
                }
                let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
                for (node, weight) in gl.nodes.iter().zip(&gl.weights) {
                    let x = mid + half * node;
                    for j in 0..nt {
                        let (c, d) = tb.bounds(j);
                        let f = |y: f64| Ok(if y > 0.0 { bulk_jdf(BulkPoint::new(tau, x, y)?) } else { 0.0 });
                        expected[i * nt + j] += scale * half * weight * integrate_overlap(f, c, d)?;
                    }
                }
            }
            let cells = joint_cells(h, &expected, matrices);
            ComparisonReport::from_cells(h, *spec, cells, 0)
        }
        Model::WeakSlice { z_max } => {
            let TauSpec::Weak(a) = config.tau_spec else {
                return domain("weak slice model needs a weak tau spec");
            };
            let (rows, in_slice) = slice_rows(h, z_max)?;
            let norm = weak_density(a, 0.0)?;
            let mut cells = Vec::with_capacity(nt);
            for j in 0..nt {
                let (c, d) = tb.bounds(j);
                let f = |t: f64| Ok(if t > 0.0 { weak_jdf(WeakPoint::new(a, 0.0, t)?) } else { 0.0 });
                let p = integrate_overlap(f, c, d)? / norm;
                let obs: u64 = rows.iter().map(|&i| h.count(i, j)).sum();
                cells.push(cell(None, Some(j), obs, in_slice as f64 * p));
            }
            ComparisonReport::from_cells(h, *spec, cells, 1)
        }
        Model::FiniteSlice { z_max } => {
            let (rows, in_slice) = slice_rows(h, z_max)?;
            let gl = GaussLegendre::new(16);
            let mut mass = 0.0;
            let mut per_bin = vec![0.0; nt];
            for &i in &rows {
                let (a, b) = zb.bounds(i);
                let (la, _) = map.to_raw(a, 0.0);
                let (lb, _) = map.to_raw(b, 0.0);
                let (mid, half) = (0.5 * (la + lb), 0.5 * (lb - la));
                for (node, weight) in gl.nodes.iter().zip(&gl.weights) {
                    let at = JdfAtZ::new(params, mid + half * node)?;
                    let w = half * weight;
                    mass += w * at.marginal()?;
                    for (j, e) in per_bin.iter_mut().enumerate() {
                        let (c, d) = tb.bounds(j);
                        let (_, tc) = map.to_raw(0.0, c);
                        let (_, td) = map.to_raw(0.0, d);
                        *e += w * integrate_overlap(|t| at.density_t(t), tc, td)?;
                    }
                }
            }
            let cells = (0..nt)
                .map(|j| {
                    let obs: u64 = rows.iter().map(|&i| h.count(i, j)).sum();
                    cell(None, Some(j), obs, in_slice as f64 * per_bin[j] / mass)
                })
                .collect();
            ComparisonReport::from_cells(h, *spec, cells, 1)
        }
    }
}

/// z bins inside `|z| <= z_max` and the number of observations in them.
fn slice_rows(h: &JointHistogram, z_max: f64) -> Result<(Vec<usize>, u64)> {
    let zb = &h.config.z_bins;
    let slack = 1e-9 * z_max;
    let rows: Vec<usize> = (0..zb.bins())
        .filter(|&i| {
            let (lo, hi) = zb.bounds(i);
            lo >= -z_max - slack && hi <= z_max + slack
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::InsufficientData(format!("no z bin lies inside |z| < {z_max}")));
    }
    let marg = h.z_marginal();
    let in_slice = rows.iter().map(|&i| marg[i]).sum();
    Ok((rows, in_slice))
}

fn cell(z_bin: Option<usize>, t_bin: Option<usize>, observed: u64, expected: f64) -> CellComparison {
    CellComparison {
        z_bin,
        t_bin,
        observed,
        expected,
        z_score: 0.0,
        used: false,
    }
}

fn joint_cells(h: &JointHistogram, expected_per_matrix: &[f64], matrices: f64) -> Vec<CellComparison> {
    let nt = h.t_bins();
    expected_per_matrix
        .iter()
        .enumerate()
        .map(|(k, &e)| cell(Some(k / nt), Some(k % nt), h.counts[k], matrices * e))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config(n: usize, tau: f64, matrices: u64) -> ExperimentConfig {
        ExperimentConfig {
            n,
            tau_spec: TauSpec::Fixed(tau),
            num_matrices: matrices,
            seed: 11,
            scaling: Scaling::Raw,
            z_bins: BinEdges::linear(-4.0, 4.0, 8).unwrap(),
            t_bins: BinEdges::new(vec![0.0, 0.1, 0.5, 2.0, 10.0]).unwrap(),
            measure: MeasureOptions::default(),
            comparison: None,
        }
    }

    #[test]
    fn bin_edges() {
        let b = BinEdges::linear(-1.0, 1.0, 4).unwrap();
        assert_eq!(b.edges(), &[-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(b.find(-1.0), Some(0));
        assert_eq!(b.find(-0.5), Some(1));
        assert_eq!(b.find(0.999), Some(3));
        assert_eq!(b.find(1.0), None);
        assert_eq!(b.find(f64::NAN), None);
        let l = BinEdges::log(1.0, 1000.0, 3).unwrap();
        assert!((l.edges()[1] - 10.0).abs() < 1e-12 && l.hi() == 1000.0);
        assert!(BinEdges::new(vec![0.0, 0.0, 1.0]).is_err());
        assert!(BinEdges::new(vec![0.0]).is_err());
        assert!(BinEdges::log(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn config_json_forms() {
        let text = r#"{
            "n": 6, "tau_spec": {"weak": 1.0}, "num_matrices": 10, "seed": 3,
            "scaling": "weak",
            "z_bins": {"linear": {"lo": -2, "hi": 2, "bins": 4}},
            "t_bins": [0, 1, 10],
            "comparison": {"model": {"kind": "weak_slice", "z_max": 0.5}}
        }"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(c.z_bins.bins(), 4);
        assert!((c.tau() - (1.0 - 1.0 / 12.0)).abs() < 1e-15);
        assert_eq!(c.comparison.unwrap().max_abs_z, 3.0);
        let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);

        let odd = text.replace("\"n\": 6", "\"n\": 5").replace(
            r#"{"kind": "weak_slice", "z_max": 0.5}"#,
            r#"{"kind": "finite_density"}"#,
        );
        assert!(matches!(ExperimentConfig::from_json(&odd), Err(Error::Unsupported(_))));
        let zero = text.replace("\"num_matrices\": 10", "\"num_matrices\": 0");
        assert!(ExperimentConfig::from_json(&zero).is_err());
        let typo = text.replace("\"seed\"", "\"sed\"");
        assert!(ExperimentConfig::from_json(&typo).is_err());
    }

    #[test]
    fn coordinate_maps_invert() {
        for scaling in [Scaling::Raw, Scaling::Bulk, Scaling::Edge, Scaling::Weak] {
            let mut c = small_config(50, 0.3, 1);
            c.scaling = scaling;
            let m = c.coordinates();
            let (x, y) = m.to_scaled(3.7, 12.5);
            let (l, t) = m.to_raw(x, y);
            assert!((l - 3.7).abs() < 1e-12 && (t - 12.5).abs() < 1e-12);
        }
    }

    fn random_histogram(config: &ExperimentConfig, seed: u64, count: usize) -> JointHistogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = JointHistogram::empty(config);
        for _ in 0..count {
            h.record(rng.random_range(-5.0..5.0), rng.random_range(-0.1..12.0));
        }
        h.total_matrices = count as u64 / 3;
        h.discards = seed % 4;
        h
    }

    proptest! {
        #[test]
        fn merge_is_commutative_and_associative(s1 in 0u64..1000, s2 in 0u64..1000, s3 in 0u64..1000) {
            let c = small_config(4, 0.5, 1);
            let (a, b, d) = (random_histogram(&c, s1, 50), random_histogram(&c, s2, 70), random_histogram(&c, s3, 30));
            let mut ab = a.clone();
            ab.merge(&b).unwrap();
            let mut ba = b.clone();
            ba.merge(&a).unwrap();
            prop_assert_eq!(&ab, &ba);
            let mut ab_d = ab.clone();
            ab_d.merge(&d).unwrap();
            let mut bd = b.clone();
            bd.merge(&d).unwrap();
            let mut a_bd = a.clone();
            a_bd.merge(&bd).unwrap();
            prop_assert_eq!(&ab_d, &a_bd);
            prop_assert!(ab_d.is_conserved());
            prop_assert_eq!(ab_d.total_observations, 150);
        }
    }

    #[test]
    fn merge_rejects_other_configs() {
        let mut a = JointHistogram::empty(&small_config(4, 0.5, 1));
        let b = JointHistogram::empty(&small_config(4, 0.6, 1));
        assert!(a.merge(&b).is_err());
    }

    #[test]
    fn runs_do_not_depend_on_worker_count() {
        let c = small_config(6, 0.4, 70);
        let h1 = run_experiment(&c, 1).unwrap();
        let h3 = run_experiment(&c, 3).unwrap();
        assert_eq!(h1, h3);
        assert_eq!(h1.digest(), h3.digest());
        assert_eq!(h1.total_matrices, 70);
        assert!(h1.is_conserved());
        let mut other = c.clone();
        other.seed += 1;
        assert_ne!(run_experiment(&other, 2).unwrap().digest(), h1.digest());
    }

    #[test]
    fn persistence_round_trip() {
        let mut c = small_config(5, 0.3, 40);
        c.t_bins = BinEdges::log(0.013, 77.7, 9).unwrap();
        let h = run_experiment(&c, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        h.save(dir.path()).unwrap();
        let back = JointHistogram::load(dir.path()).unwrap();
        assert_eq!(back, h);
        assert_eq!(back.config.t_bins.edges(), h.config.t_bins.edges());
        assert_eq!(back.digest(), h.digest());

        let csv = dir.path().join("histogram.csv");
        let text = std::fs::read_to_string(&csv).unwrap();
        std::fs::write(&csv, text.replacen(",1\n", ",2\n", 1)).unwrap();
        assert!(matches!(JointHistogram::load(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn tail_slope_of_exact_inverse_square_law() {
        let mut c = small_config(2, 0.5, 1);
        c.t_bins = BinEdges::log(1.0, 1000.0, 15).unwrap();
        c.z_bins = BinEdges::linear(-1.0, 1.0, 1).unwrap();
        let mut h = JointHistogram::empty(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lo_inv = 1.0;
        let hi_inv = 1e-3;
        for _ in 0..200_000 {
            // inverse CDF of density proportional to t^-2 on [1, 1000]
            let u: f64 = rng.random();
            h.record(0.0, 1.0 / (lo_inv - u * (lo_inv - hi_inv)));
        }
        let slope = tail_slope(&h, 1.0, 1000.0).unwrap();
        assert!((slope + 2.0).abs() < 0.1, "{slope}");
        assert!(matches!(tail_slope(&h, 1.0, 5.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn log_log_fit_recovers_power_laws() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 5.0, 9.0].iter().map(|&x: &f64| (x, 3.0 * x.powf(0.5))).collect();
        let (s, i) = log_log_fit(&pts).unwrap();
        assert!((s - 0.5).abs() < 1e-14 && (i - 3f64.ln()).abs() < 1e-14);
        assert!(log_log_fit(&pts[..1]).is_err());
    }

    #[test]
    fn empty_histogram_cannot_be_compared() {
        let h = JointHistogram::empty(&small_config(4, 0.5, 1));
        let r = compare_to_model(&h, &ComparisonSpec::new(Model::FiniteMarginal));
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn sampled_histogram_agrees_with_its_own_law() {
        let mut c = small_config(4, 0.5, 3000);
        c.z_bins = BinEdges::linear(-3.0, 3.0, 6).unwrap();
        let h = run_experiment(&c, 2).unwrap();
        for model in [Model::FiniteJoint, Model::FiniteMarginal, Model::FiniteDensity] {
            let r = compare_to_model(&h, &ComparisonSpec::new(model)).unwrap();
            assert!(r.passed, "{}", r.to_json());
            assert!(r.used_cells >= 6);
        }
        // a wrong law is rejected
        let mut wrong = h.clone();
        wrong.config.tau_spec = TauSpec::Fixed(0.2);
        let r = compare_to_model(&wrong, &ComparisonSpec::new(Model::FiniteJoint)).unwrap();
        assert!(!r.passed);
    }
}
