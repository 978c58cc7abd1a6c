//! Scenario configuration: one TOML file per run, with `extends` for reuse.
//!
//! Resolution order, lowest precedence first: the built-in defaults for the
//! scenario kind, then each `extends` ancestor, then the file itself. An
//! `extends` value is either a built-in profile name or a path relative to the
//! extending file.

use std::fmt;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::broker::{BrokerConfig, StageModel};
use crate::metrics::{AccountingRules, AvailabilityCredit};
use crate::nge::OverheadModel;
use crate::scheduler::{ClusterConfig, PriorityClass};
use crate::workload::{
    BackgroundProfile, ContentionModel, EventDurationParams, IoProfile, IoProfileParams,
    PayloadModel, SetupModel, SizeBand,
};

use super::{HarnessError, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Broker fleet against a live scheduler.
    #[default]
    Fleet,
    /// Broker fleet against a recorded (or freshly synthesized) poll trace.
    FleetReplay,
    WeakScaling,
    MultiGeneration,
    StrongScaling,
    /// Broker bundles and pilots on the same slot sequence.
    ModeComparison,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Fleet,
        ScenarioKind::FleetReplay,
        ScenarioKind::WeakScaling,
        ScenarioKind::MultiGeneration,
        ScenarioKind::StrongScaling,
        ScenarioKind::ModeComparison,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Fleet => "fleet",
            ScenarioKind::FleetReplay => "fleet_replay",
            ScenarioKind::WeakScaling => "weak_scaling",
            ScenarioKind::MultiGeneration => "multi_generation",
            ScenarioKind::StrongScaling => "strong_scaling",
            ScenarioKind::ModeComparison => "mode_comparison",
        }
    }

    pub fn is_scaling(&self) -> bool {
        matches!(
            self,
            ScenarioKind::WeakScaling | ScenarioKind::MultiGeneration | ScenarioKind::StrongScaling
        )
    }

    fn uses_scheduler_load(&self) -> bool {
        matches!(self, ScenarioKind::Fleet | ScenarioKind::ModeComparison)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    pub events: EventDurationParams,
    pub contention: ContentionModel,
    pub setup: SetupModel,
    pub io: IoProfileParams,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            events: EventDurationParams::default(),
            contention: ContentionModel::default(),
            setup: SetupModel::default(),
            io: IoProfileParams::default(),
        }
    }
}

/// Pilot experiments: one pilot per entry of `sizes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NgeConfig {
    pub overhead: OverheadModel,
    pub queue: PriorityClass,
    pub sizes: Vec<u32>,
    pub units: u32,
    /// Whether `units` counts per pilot node or per pilot.
    pub units_basis: UnitsBasis,
    pub events_per_unit: u32,
    pub walltime_s: u64,
    /// Per-event times for units. Scaling runs use constant times so the
    /// measured overhead is the runtime's own.
    pub event_duration: EventDurationParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitsBasis {
    PerNode,
    Total,
}

fn constant(mean_s: f64) -> EventDurationParams {
    EventDurationParams {
        min_s: mean_s,
        max_s: mean_s,
        mean_s,
        ..EventDurationParams::default()
    }
}

impl NgeConfig {
    pub fn for_kind(kind: ScenarioKind) -> Self {
        let base = NgeConfig {
            overhead: OverheadModel::default(),
            queue: PriorityClass::Capability,
            sizes: vec![256, 512, 1024, 2048],
            units: 5,
            units_basis: UnitsBasis::PerNode,
            events_per_unit: 16,
            walltime_s: 10_800,
            event_duration: constant(975.0),
        };
        match kind {
            ScenarioKind::WeakScaling => NgeConfig {
                sizes: vec![250, 500, 1000, 2000],
                units: 1,
                events_per_unit: 100,
                walltime_s: 7_200,
                event_duration: constant(632.0),
                ..base
            },
            ScenarioKind::StrongScaling => NgeConfig {
                units: 2048,
                units_basis: UnitsBasis::Total,
                walltime_s: 21_600,
                ..base
            },
            _ => base,
        }
    }

    pub fn units_for(&self, nodes: u32) -> u32 {
        match self.units_basis {
            UnitsBasis::PerNode => self.units * nodes,
            UnitsBasis::Total => self.units,
        }
    }

    pub fn payload(&self, w: &WorkloadConfig) -> Result<PayloadModel, HarnessError> {
        Ok(PayloadModel::new(self.event_duration, w.contention, w.setup)?)
    }
}

impl Default for NgeConfig {
    fn default() -> Self {
        NgeConfig::for_kind(ScenarioKind::MultiGeneration)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub poll_interval_s: u64,
    pub credit: AvailabilityCredit,
    /// Row length of `ledger.csv`.
    pub ledger_window_s: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            poll_interval_s: 60,
            credit: AvailabilityCredit::Rate,
            ledger_window_s: 86_400,
        }
    }
}

/// Slot selection for the mode comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComparisonConfig {
    pub max_slots: u32,
    /// Minimum simulated time between two selected slots.
    pub min_spacing_s: u64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            max_slots: 24,
            min_spacing_s: 3_600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub horizon_s: u64,
    pub warmup_s: u64,
    pub output_dir: PathBuf,
    /// Calendar date of simulated time zero, for monthly reports.
    pub epoch: NaiveDate,
    pub cluster: ClusterConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<BackgroundProfile>,
    /// SWF file of capability jobs, instead of `background`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_trace: Option<PathBuf>,
    /// Poll trace CSV for `fleet_replay`; synthesized from a live run if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poll_trace: Option<PathBuf>,
    pub workload: WorkloadConfig,
    pub broker: BrokerConfig,
    pub nge: NgeConfig,
    pub metrics: MetricsConfig,
    pub comparison: ComparisonConfig,
}

impl ScenarioConfig {
    pub fn defaults_for(kind: ScenarioKind) -> Self {
        ScenarioConfig {
            scenario: kind,
            seed: 2016,
            horizon_s: 30 * 86_400,
            warmup_s: 2 * 86_400,
            output_dir: PathBuf::from(format!("out/{kind}")),
            epoch: NaiveDate::from_ymd_opt(2016, 1, 1).expect("valid date"),
            cluster: ClusterConfig::titan(),
            background: (kind.uses_scheduler_load() || kind == ScenarioKind::FleetReplay)
                .then(BackgroundProfile::default),
            background_trace: None,
            poll_trace: None,
            workload: WorkloadConfig::default(),
            broker: BrokerConfig::default(),
            nge: NgeConfig::for_kind(kind),
            metrics: MetricsConfig::default(),
            comparison: ComparisonConfig::default(),
        }
    }

    pub fn rules(&self) -> AccountingRules {
        AccountingRules {
            cores_per_node: self.cluster.cores_per_node,
            poll_interval_s: self.metrics.poll_interval_s,
            credit: self.metrics.credit,
        }
    }

    pub fn payload(&self) -> Result<PayloadModel, HarnessError> {
        let w = &self.workload;
        Ok(PayloadModel::new(w.events, w.contention, w.setup)?)
    }

    pub fn io(&self) -> Result<IoProfile, HarnessError> {
        Ok(IoProfile::new(&self.workload.io)?)
    }

    /// Canonical TOML text; hashing it identifies the run.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every problem found, not just the first.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut problems = Vec::new();
        let mut push = |key: &str, msg: String| {
            problems.push(Problem {
                key: key.to_string(),
                msg,
            })
        };
        if self.horizon_s == 0 {
            push("horizon_s", "must be > 0".into());
        }
        if let Err(e) = self.cluster.validate() {
            push("cluster", e.to_string());
        }
        let cluster_ok = self.cluster.validate().is_ok();
        if let Err(e) = self.broker.validate() {
            push_harness(&mut push, e.into());
        }
        let w = &self.workload;
        if let Err(e) = PayloadModel::new(w.events, w.contention, w.setup) {
            push_harness(&mut push, e.into());
        }
        if let Err(e) = IoProfile::new(&w.io) {
            push_harness(&mut push, e.into());
        }
        let m = &self.metrics;
        if m.poll_interval_s == 0 {
            push("metrics.poll_interval_s", "must be > 0".into());
        } else {
            if self.broker.poll_interval_s % m.poll_interval_s != 0 {
                push(
                    "broker.poll_interval_s",
                    "must be a multiple of metrics.poll_interval_s".into(),
                );
            }
            if self.warmup_s % m.poll_interval_s != 0 {
                push("warmup_s", "must be a multiple of metrics.poll_interval_s".into());
            }
        }
        if m.ledger_window_s == 0 {
            push("metrics.ledger_window_s", "must be > 0".into());
        }
        match (&self.background, &self.background_trace) {
            (Some(_), Some(_)) => push(
                "background, background_trace",
                "set exactly one of the synthetic profile and the trace path".into(),
            ),
            (None, None) if self.scenario.uses_scheduler_load() => push(
                "background, background_trace",
                format!("scenario {} needs a capability load", self.scenario),
            ),
            (Some(p), None) if cluster_ok => {
                if let Err(e) = p.validate(&self.cluster) {
                    push_harness(&mut push, e.into());
                }
            }
            _ => {}
        }
        if self.scenario.is_scaling() {
            let n = &self.nge;
            if let Err(e) = n.overhead.validate() {
                push("nge.overhead", e.to_string());
            }
            if n.sizes.is_empty() || n.sizes.contains(&0) {
                push("nge.sizes", "need at least one pilot size, all >= 1".into());
            }
            if cluster_ok && n.sizes.iter().any(|s| *s > self.cluster.total_nodes) {
                push("nge.sizes", "pilot larger than the cluster".into());
            }
            if n.units == 0 {
                push("nge.units", "must be >= 1".into());
            }
            if n.events_per_unit == 0 || n.events_per_unit > 10_000 {
                push("nge.events_per_unit", "must be within 1..=10000".into());
            }
            if n.walltime_s == 0 {
                push("nge.walltime_s", "must be > 0".into());
            }
            if cluster_ok {
                for &size in n.sizes.iter().filter(|s| **s <= self.cluster.total_nodes) {
                    let cap = self.cluster.walltime_cap(size, n.queue);
                    if n.walltime_s > cap {
                        push(
                            "nge.walltime_s",
                            format!("{}s exceeds the {cap}s cap for {size}-node pilots", n.walltime_s),
                        );
                    }
                }
            }
            if let Err(e) = n.payload(w) {
                push_harness(&mut push, e);
            }
        }
        if self.scenario == ScenarioKind::ModeComparison {
            if let Err(e) = self.nge.overhead.validate() {
                push("nge.overhead", e.to_string());
            }
            if self.comparison.max_slots == 0 {
                push("comparison.max_slots", "must be >= 1".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Invalid(problems))
        }
    }
}

fn push_harness(push: &mut impl FnMut(&str, String), e: HarnessError) {
    match e {
        HarnessError::Invalid(ps) => ps.into_iter().for_each(|p| push(&p.key, p.msg)),
        other => push("config", other.to_string()),
    }
}

/// Built-in profiles usable as `extends` targets.
pub const PROFILES: [&str; 2] = ["titan", "titan-calibrated"];

/// The calibrated Titan profile: a standing backlog of small and mid-size
/// capability jobs and serial staging at 30 s/GB. Against it a 20-broker
/// fleet sees slots near the observed 691-node, 126-minute means and uses a
/// fraction of availability inside the observed monthly range.
pub fn titan_calibrated() -> (BackgroundProfile, StageModel) {
    let band = |min_nodes, max_nodes, weight| SizeBand {
        min_nodes,
        max_nodes,
        weight,
    };
    let background = BackgroundProfile {
        target_utilization: 0.0,
        min_queued: 12,
        size_bands: vec![band(1, 125, 0.5), band(126, 312, 0.3), band(313, 3_749, 0.2)],
        walltime_min_frac: 0.5,
        walltime_max_frac: 1.0,
        runtime_min_frac: 0.3,
        runtime_max_frac: 1.0,
    };
    let stage = StageModel {
        base_s: 300.0,
        per_gb_s: 30.0,
        streams: 1,
    };
    (background, stage)
}

fn profile_table(name: &str) -> Option<Table> {
    match name {
        "titan" => Some(Table::new()),
        "titan-calibrated" => {
            let (background, stage) = titan_calibrated();
            let mut broker = Table::new();
            broker.insert("stage_in".into(), Value::try_from(stage).ok()?);
            broker.insert("stage_out".into(), Value::try_from(stage).ok()?);
            let mut t = Table::new();
            t.insert("background".into(), Value::try_from(background).ok()?);
            t.insert("broker".into(), Value::Table(broker));
            Some(t)
        }
        _ => None,
    }
}

/// `over` wins; tables merge key by key, everything else is replaced.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

const MAX_EXTENDS_DEPTH: usize = 16;

fn read_table(path: &Path) -> Result<Table, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.parse::<Table>().map_err(|e| HarnessError::Config {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// The file's table with its whole `extends` chain applied.
fn resolve_chain(path: &Path, depth: usize) -> Result<Table, HarnessError> {
    resolve_own(read_table(path)?, path, depth)
}

/// `own` is the table read from `path`; its ancestors are resolved from there.
fn resolve_own(mut own: Table, path: &Path, depth: usize) -> Result<Table, HarnessError> {
    let Some(ext) = own.remove("extends") else {
        return Ok(own);
    };
    let cfg_err = |msg: String| HarnessError::Config {
        path: path.to_path_buf(),
        msg,
    };
    let Value::String(name) = ext else {
        return Err(cfg_err("`extends` must be a string".into()));
    };
    if depth >= MAX_EXTENDS_DEPTH {
        return Err(cfg_err(format!(
            "`extends` chain deeper than {MAX_EXTENDS_DEPTH} (cycle?)"
        )));
    }
    let mut base = match profile_table(&name) {
        Some(t) => t,
        None => {
            let parent = path.parent().unwrap_or(Path::new(".")).join(&name);
            if !parent.exists() {
                return Err(cfg_err(format!(
                    "`extends = \"{name}\"` is neither a built-in profile ({}) nor an existing file",
                    PROFILES.join(", ")
                )));
            }
            resolve_chain(&parent, depth + 1)?
        }
    };
    merge(&mut base, own);
    Ok(base)
}

/// Resolve a table (already `extends`-free) on top of the scenario defaults.
pub fn from_table(table: Table, origin: &Path) -> Result<ScenarioConfig, HarnessError> {
    let cfg_err = |msg: String| HarnessError::Config {
        path: origin.to_path_buf(),
        msg,
    };
    let kind: ScenarioKind = match table.get("scenario") {
        None => ScenarioKind::default(),
        Some(v) => v
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| cfg_err(format!("scenario: {}", e.message())))?,
    };
    let mut defaults = ScenarioConfig::defaults_for(kind);
    if table.contains_key("background_trace") && !table.contains_key("background") {
        defaults.background = None;
    }
    let Value::Table(mut merged) = Value::try_from(&defaults).expect("defaults serialize") else {
        unreachable!("a struct serializes to a table")
    };
    merge(&mut merged, table);
    let cfg: ScenarioConfig = Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| cfg_err(e.message().to_string()))?;
    Ok(cfg)
}

/// Load, resolve and validate a scenario file. Relative trace paths are taken
/// relative to the file.
pub fn load(path: &Path) -> Result<ScenarioConfig, HarnessError> {
    load_with(path, &[])
}

/// `load` with dotted-key overrides applied after the `extends` chain.
pub fn load_with(path: &Path, overrides: &[(String, String)]) -> Result<ScenarioConfig, HarnessError> {
    finish(resolve_chain(path, 0)?, path, overrides)
}

/// Like `load`, for TOML text that never lived in a file. `origin` stands in
/// for the file path: relative `extends` and trace paths resolve next to it.
pub fn load_str(text: &str, origin: &Path) -> Result<ScenarioConfig, HarnessError> {
    let own = text.parse::<Table>().map_err(|e| HarnessError::Config {
        path: origin.to_path_buf(),
        msg: e.to_string(),
    })?;
    finish(resolve_own(own, origin, 0)?, origin, &[])
}

fn finish(
    mut table: Table,
    path: &Path,
    overrides: &[(String, String)],
) -> Result<ScenarioConfig, HarnessError> {
    for (k, v) in overrides {
        set_key(&mut table, k, v)?;
    }
    let mut cfg = from_table(table, path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    for p in [&mut cfg.background_trace, &mut cfg.poll_trace]
        .into_iter()
        .flatten()
    {
        if p.is_relative() {
            *p = dir.join(&*p);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Overwrite one dotted key (`broker.n_brokers`) with a value parsed as TOML,
/// falling back to a bare string.
pub fn set_key(table: &mut Table, dotted: &str, raw: &str) -> Result<(), HarnessError> {
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(HarnessError::invalid(dotted, "malformed key"));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(HarnessError::invalid(dotted, format!("`{part}` is not a table"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    #[test]
    fn every_scenario_default_validates() {
        for kind in ScenarioKind::ALL {
            ScenarioConfig::defaults_for(kind).validate().unwrap();
        }
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        for kind in ScenarioKind::ALL {
            let cfg = ScenarioConfig::defaults_for(kind);
            let table: Table = cfg.to_toml().parse().unwrap();
            assert_eq!(from_table(table, Path::new("x")).unwrap(), cfg);
        }
    }

    #[test]
    fn extends_chain_applies_in_order() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "base.toml",
            "extends = \"titan-calibrated\"\nseed = 5\n[broker]\nn_brokers = 4\n",
        );
        let child = write(
            dir.path(),
            "child.toml",
            "extends = \"base.toml\"\n[broker]\npoll_interval_s = 120\n",
        );
        let cfg = load(&child).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.broker.n_brokers, 4);
        assert_eq!(cfg.broker.poll_interval_s, 120);
        assert_eq!(cfg.broker.stage_in.per_gb_s, 30.0);
        assert_eq!(cfg.background.unwrap().min_queued, 12);
    }

    #[test]
    fn inline_text_resolves_extends_next_to_its_origin() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "base.toml", "seed = 9\n");
        let origin = dir.path().join("<inline>");
        let cfg = load_str("extends = \"base.toml\"\nhorizon_s = 7200\n", &origin).unwrap();
        assert_eq!((cfg.seed, cfg.horizon_s), (9, 7200));
        assert!(load_str("horizon_s = 0\n", &origin).is_err());
    }

    #[test]
    fn validation_lists_every_offending_key() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "bad.toml",
            "horizon_s = 0\nbackground_trace = \"jobs.swf\"\n[background]\ntarget_utilization = 0.5\n[broker]\nn_brokers = 0\n",
        );
        let err = load(&p).unwrap_err().to_string();
        for key in ["horizon_s", "background_trace", "broker.n_brokers"] {
            assert!(err.contains(key), "{key} missing from: {err}");
        }
    }

    #[test]
    fn pilot_walltime_must_fit_the_queue_cap() {
        let mut cfg = ScenarioConfig::defaults_for(ScenarioKind::MultiGeneration);
        cfg.nge.sizes = vec![64];
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("nge.walltime_s"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "typo.toml", "[broker]\nn_brokerz = 3\n");
        let err = load(&p).unwrap_err().to_string();
        assert!(err.contains("n_brokerz"), "{err}");
    }

    #[test]
    fn extends_cycle_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.toml", "extends = \"b.toml\"\n");
        let b = write(dir.path(), "b.toml", "extends = \"a.toml\"\n");
        assert!(load(&b).unwrap_err().to_string().contains("cycle"));
    }

    #[test]
    fn set_key_parses_toml_values() {
        let mut t = Table::new();
        set_key(&mut t, "broker.n_brokers", "4").unwrap();
        set_key(&mut t, "scenario", "weak_scaling").unwrap();
        assert_eq!(t["broker"]["n_brokers"].as_integer(), Some(4));
        assert_eq!(t["scenario"].as_str(), Some("weak_scaling"));
    }

    #[test]
    fn trace_source_replaces_the_default_profile() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "jobs.swf", "; empty\n");
        let p = write(dir.path(), "t.toml", "background_trace = \"jobs.swf\"\n");
        let cfg = load(&p).unwrap();
        assert!(cfg.background.is_none());
        assert_eq!(cfg.background_trace.unwrap(), dir.path().join("jobs.swf"));
    }
}
