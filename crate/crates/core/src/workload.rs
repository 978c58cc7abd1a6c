//! Payload and background-load models.
//!
//! A payload is one multi-process simulation occupying a whole node: a fixed
//! setup phase followed by `events` independent event tasks list-scheduled on
//! `slots_per_node` worker slots. Durations are `f64` seconds here; callers
//! that feed the event loop round up to whole seconds.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::scheduler::{ClusterConfig, JobRequest, PriorityClass};
use crate::simcore::SimTime;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("invalid workload parameter `{key}`: {msg}")]
    Invalid { key: &'static str, msg: String },
}

fn invalid(key: &'static str, msg: impl Into<String>) -> WorkloadError {
    WorkloadError::Invalid {
        key,
        msg: msg.into(),
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f increasing, f(lo) < 0 < f(hi)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Parameters of the per-event duration distribution, in seconds at the
/// reference concurrency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventDurationParams {
    pub min_s: f64,
    pub max_s: f64,
    pub mean_s: f64,
    /// Log-space shape. The location is solved so the truncated mean hits
    /// `mean_s`.
    pub sigma: f64,
}

impl Default for EventDurationParams {
    fn default() -> Self {
        EventDurationParams {
            min_s: 120.0,
            max_s: 2400.0,
            mean_s: 840.0,
            sigma: 0.8,
        }
    }
}

/// Log-normal truncated to `[min_s, max_s]`, sampled by inverse CDF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventDurationModel {
    params: EventDurationParams,
    mu: f64,
    p_lo: f64,
    p_hi: f64,
}

/// Mean of a log-normal(mu, sigma) truncated to `[a, b]`.
pub fn truncated_lognormal_mean(mu: f64, sigma: f64, a: f64, b: f64) -> f64 {
    let n = std_normal();
    let alpha = (a.ln() - mu) / sigma;
    let beta = (b.ln() - mu) / sigma;
    let mass = n.cdf(beta) - n.cdf(alpha);
    (mu + 0.5 * sigma * sigma).exp() * (n.cdf(beta - sigma) - n.cdf(alpha - sigma)) / mass
}

impl EventDurationModel {
    pub fn new(params: EventDurationParams) -> Result<Self, WorkloadError> {
        let EventDurationParams {
            min_s,
            max_s,
            mean_s,
            sigma,
        } = params;
        if !(min_s > 0.0 && min_s <= max_s && max_s.is_finite()) {
            return Err(invalid("event_duration", "need 0 < min_s <= max_s"));
        }
        if min_s == max_s {
            if mean_s != min_s {
                return Err(invalid(
                    "event_duration.mean_s",
                    "must equal min_s when min_s == max_s",
                ));
            }
            // Degenerate: every event takes exactly `mean_s`.
            return Ok(EventDurationModel {
                params,
                mu: mean_s.ln(),
                p_lo: 0.0,
                p_hi: 0.0,
            });
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid("event_duration.sigma", "must be positive"));
        }
        let (lo, hi) = (min_s.ln(), max_s.ln());
        let f = |mu| truncated_lognormal_mean(mu, sigma, min_s, max_s) - mean_s;
        let (f_lo, f_hi) = (f(lo), f(hi));
        if !(f_lo < 0.0 && f_hi > 0.0) {
            return Err(invalid(
                "event_duration.mean_s",
                format!(
                    "{mean_s} is not reachable with sigma {sigma} on [{min_s}, {max_s}] \
                     (reachable range {:.1}..{:.1})",
                    f_lo + mean_s,
                    f_hi + mean_s
                ),
            ));
        }
        let mu = bisect(lo, hi, f);
        let n = std_normal();
        Ok(EventDurationModel {
            params,
            mu,
            p_lo: n.cdf((lo - mu) / sigma),
            p_hi: n.cdf((hi - mu) / sigma),
        })
    }

    pub fn params(&self) -> &EventDurationParams {
        &self.params
    }

    /// Fitted log-space location.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn mean_s(&self) -> f64 {
        self.params.mean_s
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = self.p_lo + (self.p_hi - self.p_lo) * rng.random::<f64>();
        if self.params.min_s == self.params.max_s {
            return self.params.min_s;
        }
        let u = u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
        let x = (self.mu + self.params.sigma * std_normal().inverse_cdf(u)).exp();
        x.clamp(self.params.min_s, self.params.max_s)
    }
}

impl Default for EventDurationModel {
    fn default() -> Self {
        EventDurationModel::new(EventDurationParams::default()).expect("default params fit")
    }
}

pub fn sample_event_durations<R: Rng + ?Sized>(
    model: &EventDurationModel,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    (0..n).map(|_| model.sample(rng)).collect()
}

/// Per-event slowdown as a function of concurrent workers on a node.
///
/// Flat at or below 8 workers, linear between the 8-way and 16-way operating
/// points, flat again above 16.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContentionModel {
    pub per_event_mean_8way_s: f64,
    pub per_event_mean_16way_s: f64,
    /// Concurrency at which the event-duration model is expressed.
    pub reference_concurrency: u32,
}

impl Default for ContentionModel {
    fn default() -> Self {
        ContentionModel {
            per_event_mean_8way_s: 648.0,
            per_event_mean_16way_s: 855.0,
            reference_concurrency: 16,
        }
    }
}

impl ContentionModel {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(self.per_event_mean_8way_s > 0.0
            && self.per_event_mean_16way_s >= self.per_event_mean_8way_s)
        {
            return Err(invalid(
                "contention",
                "need 0 < per_event_mean_8way_s <= per_event_mean_16way_s",
            ));
        }
        if self.reference_concurrency == 0 {
            return Err(invalid("contention.reference_concurrency", "must be > 0"));
        }
        Ok(())
    }

    /// Slowdown relative to 8-way execution.
    pub fn slowdown(&self, concurrency: u32) -> f64 {
        let c = f64::from(concurrency.clamp(8, 16));
        let top = self.per_event_mean_16way_s / self.per_event_mean_8way_s;
        1.0 + (top - 1.0) * (c - 8.0) / 8.0
    }

    /// Multiplier applied to reference-concurrency durations.
    pub fn factor(&self, concurrency: u32) -> f64 {
        self.slowdown(concurrency) / self.slowdown(self.reference_concurrency)
    }
}

/// Filesystem the software stack is loaded from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetupMode {
    None,
    SharedFs,
    #[default]
    ReadonlyFs,
}

/// Where input events are read from before processing starts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventInput {
    /// Read cost already folded into per-event durations.
    #[default]
    Included,
    Lustre,
    Ramdisk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetupModel {
    pub shared_fs_setup_s: f64,
    pub readonly_fs_setup_s: f64,
    pub event_read_s: f64,
    pub ramdisk_event_read_s: f64,
    pub mode: SetupMode,
    pub event_input: EventInput,
}

impl Default for SetupModel {
    fn default() -> Self {
        SetupModel {
            shared_fs_setup_s: 6300.0,
            readonly_fs_setup_s: 225.0,
            event_read_s: 1320.0,
            ramdisk_event_read_s: 40.0,
            mode: SetupMode::default(),
            event_input: EventInput::default(),
        }
    }
}

impl SetupModel {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let all = [
            self.shared_fs_setup_s,
            self.readonly_fs_setup_s,
            self.event_read_s,
            self.ramdisk_event_read_s,
        ];
        if all.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("setup", "durations must be finite and >= 0"));
        }
        if self.readonly_fs_setup_s >= self.shared_fs_setup_s {
            return Err(invalid(
                "setup.readonly_fs_setup_s",
                "must be below shared_fs_setup_s",
            ));
        }
        Ok(())
    }

    pub fn setup_s(&self) -> f64 {
        let fs = match self.mode {
            SetupMode::None => 0.0,
            SetupMode::SharedFs => self.shared_fs_setup_s,
            SetupMode::ReadonlyFs => self.readonly_fs_setup_s,
        };
        let read = match self.event_input {
            EventInput::Included => 0.0,
            EventInput::Lustre => self.event_read_s,
            EventInput::Ramdisk => self.ramdisk_event_read_s,
        };
        fs + read
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimJobSpec {
    pub events: u32,
    pub slots_per_node: u32,
}

impl Default for SimJobSpec {
    fn default() -> Self {
        SimJobSpec {
            events: 100,
            slots_per_node: 16,
        }
    }
}

impl SimJobSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.events == 0 {
            return Err(invalid("job.events", "must be > 0"));
        }
        if !(1..=16).contains(&self.slots_per_node) {
            return Err(invalid("job.slots_per_node", "must be within 1..=16"));
        }
        Ok(())
    }
}

/// Greedy list schedule of `durations`, in order, on `slots` workers.
pub fn list_schedule_makespan(durations: &[f64], slots: u32) -> f64 {
    let mut free_at = vec![0.0_f64; slots.max(1) as usize];
    for d in durations {
        let (i, _) = free_at
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("at least one slot");
        free_at[i] += d;
    }
    free_at.into_iter().fold(0.0, f64::max)
}

/// Setup plus the list-scheduled makespan of one payload.
pub fn job_makespan<R: Rng + ?Sized>(
    spec: &SimJobSpec,
    model: &EventDurationModel,
    contention: &ContentionModel,
    setup_s: f64,
    rng: &mut R,
) -> f64 {
    let k = contention.factor(spec.slots_per_node);
    let durations: Vec<f64> = (0..spec.events).map(|_| model.sample(rng) * k).collect();
    setup_s + list_schedule_makespan(&durations, spec.slots_per_node)
}

/// Everything needed to draw payload runtimes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayloadModel {
    pub events: EventDurationModel,
    pub contention: ContentionModel,
    pub setup: SetupModel,
}

impl PayloadModel {
    pub fn new(
        events: EventDurationParams,
        contention: ContentionModel,
        setup: SetupModel,
    ) -> Result<Self, WorkloadError> {
        contention.validate()?;
        setup.validate()?;
        Ok(PayloadModel {
            events: EventDurationModel::new(events)?,
            contention,
            setup,
        })
    }

    pub fn makespan<R: Rng + ?Sized>(&self, spec: &SimJobSpec, rng: &mut R) -> f64 {
        job_makespan(spec, &self.events, &self.contention, self.setup.setup_s(), rng)
    }

    /// Mean per-event time at the spec's concurrency.
    pub fn mean_event_s(&self, spec: &SimJobSpec) -> f64 {
        self.events.mean_s() * self.contention.factor(spec.slots_per_node)
    }
}

impl Default for PayloadModel {
    fn default() -> Self {
        PayloadModel::new(
            EventDurationParams::default(),
            ContentionModel::default(),
            SetupModel::default(),
        )
        .expect("defaults are valid")
    }
}

/// Summary statistics of one per-job I/O column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoColumn {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std_dev: f64,
}

/// Normal clipped to `[min, max]` whose truncated mean equals the column
/// mean. The scale is the column standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    column: IoColumn,
    loc: f64,
    p_lo: f64,
    p_hi: f64,
}

fn truncated_normal_mean(loc: f64, scale: f64, a: f64, b: f64) -> f64 {
    let n = std_normal();
    let alpha = (a - loc) / scale;
    let beta = (b - loc) / scale;
    let mass = n.sf(alpha) - n.sf(beta);
    loc + scale * (n.pdf(alpha) - n.pdf(beta)) / mass
}

impl TruncatedNormal {
    pub fn fit(column: IoColumn) -> Result<Self, WorkloadError> {
        let IoColumn {
            min,
            max,
            mean,
            std_dev,
        } = column;
        if !(min < mean && mean < max && std_dev > 0.0) {
            return Err(invalid("io", "need min < mean < max and std_dev > 0"));
        }
        let f = |loc| truncated_normal_mean(loc, std_dev, min, max) - mean;
        let loc = bisect(min - 8.0 * std_dev, max, f);
        let n = std_normal();
        Ok(TruncatedNormal {
            column,
            loc,
            p_lo: n.cdf((min - loc) / std_dev),
            p_hi: n.cdf((max - loc) / std_dev),
        })
    }

    pub fn loc(&self) -> f64 {
        self.loc
    }

    pub fn mean(&self) -> f64 {
        truncated_normal_mean(self.loc, self.column.std_dev, self.column.min, self.column.max)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = self.p_lo + (self.p_hi - self.p_lo) * rng.random::<f64>();
        let u = u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
        let x = self.loc + self.column.std_dev * std_normal().inverse_cdf(u);
        x.clamp(self.column.min, self.column.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoProfileParams {
    pub read_gb: IoColumn,
    pub written_gb: IoColumn,
    pub opens: IoColumn,
    pub closes: IoColumn,
}

impl Default for IoProfileParams {
    fn default() -> Self {
        let c = |min, max, mean, std_dev| IoColumn {
            min,
            max,
            mean,
            std_dev,
        };
        IoProfileParams {
            read_gb: c(0.01, 241.06, 20.36, 43.90),
            written_gb: c(0.03, 71.71, 6.87, 12.33),
            opens: c(1368.0, 1_260_185.0, 146_459.37, 231_346.55),
            closes: c(349.0, 294_908.0, 34_155.74, 53_799.08),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct IoSample {
    pub read_gb: f64,
    pub written_gb: f64,
    pub opens: u64,
    pub closes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IoProfile {
    pub read_gb: TruncatedNormal,
    pub written_gb: TruncatedNormal,
    pub opens: TruncatedNormal,
    pub closes: TruncatedNormal,
}

impl IoProfile {
    pub fn new(p: &IoProfileParams) -> Result<Self, WorkloadError> {
        Ok(IoProfile {
            read_gb: TruncatedNormal::fit(p.read_gb)?,
            written_gb: TruncatedNormal::fit(p.written_gb)?,
            opens: TruncatedNormal::fit(p.opens)?,
            closes: TruncatedNormal::fit(p.closes)?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> IoSample {
        IoSample {
            read_gb: self.read_gb.sample(rng),
            written_gb: self.written_gb.sample(rng),
            opens: self.opens.sample(rng).round() as u64,
            closes: self.closes.sample(rng).round() as u64,
        }
    }
}

impl Default for IoProfile {
    fn default() -> Self {
        IoProfile::new(&IoProfileParams::default()).expect("default columns fit")
    }
}

/// Node-count band for background jobs, drawn uniformly in
/// `[min_nodes, max_nodes]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeBand {
    pub min_nodes: u32,
    pub max_nodes: u32,
    pub weight: f64,
}

/// Synthetic capability load. Requested walltime is a uniform fraction of the
/// size-band cap; actual runtime a uniform fraction of the request.
///
/// Jobs arrive as a Poisson stream sized to `target_utilization`. On top of
/// that, `min_queued` keeps a standing backlog: whenever fewer capability jobs
/// are waiting, fresh ones are drawn and submitted at once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundProfile {
    pub target_utilization: f64,
    #[serde(default)]
    pub min_queued: u32,
    pub size_bands: Vec<SizeBand>,
    pub walltime_min_frac: f64,
    pub walltime_max_frac: f64,
    pub runtime_min_frac: f64,
    pub runtime_max_frac: f64,
}

impl Default for BackgroundProfile {
    fn default() -> Self {
        let band = |min_nodes, max_nodes, weight| SizeBand {
            min_nodes,
            max_nodes,
            weight,
        };
        BackgroundProfile {
            target_utilization: 0.90,
            min_queued: 0,
            size_bands: vec![
                band(1, 125, 0.40),
                band(126, 312, 0.25),
                band(313, 3_749, 0.25),
                band(3_750, 11_249, 0.08),
                band(11_250, 18_688, 0.02),
            ],
            walltime_min_frac: 0.25,
            walltime_max_frac: 1.0,
            runtime_min_frac: 0.3,
            runtime_max_frac: 1.0,
        }
    }
}

/// A capability job with its true runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundJob {
    pub submit: SimTime,
    pub nodes: u32,
    pub walltime_s: u64,
    pub runtime_s: u64,
}

impl BackgroundJob {
    pub fn request(&self) -> JobRequest {
        JobRequest {
            nodes: self.nodes,
            walltime_s: self.walltime_s,
            class: PriorityClass::Capability,
        }
    }
}

impl BackgroundProfile {
    pub fn validate(&self, cluster: &ClusterConfig) -> Result<(), WorkloadError> {
        if !(0.0..1.0).contains(&self.target_utilization) {
            return Err(invalid(
                "background.target_utilization",
                "must be within [0, 1)",
            ));
        }
        if (self.target_utilization > 0.0 || self.min_queued > 0) && self.size_bands.is_empty() {
            return Err(invalid("background.size_bands", "at least one band"));
        }
        for b in &self.size_bands {
            if b.min_nodes == 0 || b.min_nodes > b.max_nodes || b.max_nodes > cluster.total_nodes
            {
                return Err(invalid(
                    "background.size_bands",
                    format!(
                        "band {}..{} must satisfy 1 <= min <= max <= total_nodes",
                        b.min_nodes, b.max_nodes
                    ),
                ));
            }
            if !(b.weight >= 0.0 && b.weight.is_finite()) {
                return Err(invalid("background.size_bands", "weights must be >= 0"));
            }
        }
        let frac_ok = |lo: f64, hi: f64| 0.0 < lo && lo <= hi && hi <= 1.0;
        if !frac_ok(self.walltime_min_frac, self.walltime_max_frac) {
            return Err(invalid(
                "background.walltime_min_frac",
                "need 0 < walltime_min_frac <= walltime_max_frac <= 1",
            ));
        }
        if !frac_ok(self.runtime_min_frac, self.runtime_max_frac) {
            return Err(invalid(
                "background.runtime_min_frac",
                "need 0 < runtime_min_frac <= runtime_max_frac <= 1",
            ));
        }
        Ok(())
    }

    /// Expected node-seconds of actual work per job.
    pub fn mean_node_seconds(&self, cluster: &ClusterConfig) -> f64 {
        let total_w: f64 = self.size_bands.iter().map(|b| b.weight).sum();
        let mut acc = 0.0;
        for b in &self.size_bands {
            let n = f64::from(b.max_nodes - b.min_nodes + 1);
            let band_mean: f64 = (b.min_nodes..=b.max_nodes)
                .map(|k| {
                    f64::from(k) * cluster.walltime_cap(k, PriorityClass::Capability) as f64
                })
                .sum::<f64>()
                / n;
            acc += b.weight / total_w * band_mean;
        }
        let wall = 0.5 * (self.walltime_min_frac + self.walltime_max_frac);
        let run = 0.5 * (self.runtime_min_frac + self.runtime_max_frac);
        acc * wall * run
    }
}

/// Poisson arrivals over `[0, horizon)` whose offered load approximates
/// `target_utilization` of the cluster.
pub fn generate_background_jobs<R: Rng + ?Sized>(
    profile: &BackgroundProfile,
    cluster: &ClusterConfig,
    horizon: SimTime,
    rng: &mut R,
) -> Vec<BackgroundJob> {
    if profile.target_utilization <= 0.0 || profile.size_bands.is_empty() {
        return Vec::new();
    }
    let rate = profile.target_utilization * f64::from(cluster.total_nodes)
        / profile.mean_node_seconds(cluster);
    let gap = Exp::new(rate).expect("positive arrival rate");
    let mut out = Vec::new();
    let mut t = 0.0_f64;
    loop {
        t += gap.sample(rng);
        if t >= horizon.secs() as f64 {
            break;
        }
        out.push(profile.draw_job(cluster, SimTime::from_secs(t as u64), rng));
    }
    out
}

impl BackgroundProfile {
    /// One job submitted at `submit`.
    pub fn draw_job<R: Rng + ?Sized>(
        &self,
        cluster: &ClusterConfig,
        submit: SimTime,
        rng: &mut R,
    ) -> BackgroundJob {
        let total_w: f64 = self.size_bands.iter().map(|b| b.weight).sum();
        let mut pick = rng.random::<f64>() * total_w;
        let band = self
            .size_bands
            .iter()
            .find(|b| {
                pick -= b.weight;
                pick < 0.0
            })
            .unwrap_or_else(|| self.size_bands.last().expect("non-empty"));
        let nodes = rng.random_range(band.min_nodes..=band.max_nodes);
        let cap = cluster.walltime_cap(nodes, PriorityClass::Capability);
        let wf = rng.random_range(self.walltime_min_frac..=self.walltime_max_frac);
        let walltime_s = ((cap as f64 * wf).round() as u64).clamp(1, cap);
        let rf = rng.random_range(self.runtime_min_frac..=self.runtime_max_frac);
        let runtime_s = ((walltime_s as f64 * rf).round() as u64).clamp(1, walltime_s);
        BackgroundJob {
            submit,
            nodes,
            walltime_s,
            runtime_s,
        }
    }
}

/// Offered node-seconds of `jobs` over the cluster capacity for `horizon`.
pub fn offered_utilization(jobs: &[BackgroundJob], total_nodes: u32, horizon: SimTime) -> f64 {
    let work: f64 = jobs
        .iter()
        .map(|j| f64::from(j.nodes) * j.runtime_s as f64)
        .sum();
    work / (f64::from(total_nodes) * horizon.secs() as f64)
}
