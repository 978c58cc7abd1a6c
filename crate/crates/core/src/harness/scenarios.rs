//! The scenario library. Every scenario writes tidy CSV into the configured
//! output directory together with the resolved config and a manifest of
//! output hashes.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::broker::{self, plan_bundle, write_bundle_log, Bundle, BundleId};
use crate::metrics::{
    calendar_month_windows, fixed_windows, window_report, write_ledger_csv, write_monthly_csv,
    PollRecord, WindowReport,
};
use crate::nge::{PilotDesc, Session};
use crate::scheduler::{BackfillSlot, PriorityClass};
use crate::simcore::{RngStream, SimTime};
use crate::workload::SimJobSpec;

use super::config::{self, ScenarioConfig, ScenarioKind};
use super::traces::{self, poll_stats};
use super::world::{run_fleet, FleetOutcome, FleetSpec, SlotSource};
use super::HarnessError;

pub const ENGINE_VERSION: &str = concat!("hpcsim-", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

/// What a run produced and how to reproduce it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: ScenarioKind,
    /// Hash of the resolved config with `output_dir` cleared, so the same
    /// experiment hashes the same wherever it is written.
    pub config_sha256: String,
    pub seed: u64,
    pub engine_version: String,
    pub output_dir: PathBuf,
    pub outputs: Vec<OutputFile>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn config_hash(cfg: &ScenarioConfig) -> String {
    let mut c = cfg.clone();
    c.output_dir = PathBuf::new();
    sha256_hex(c.to_toml().as_bytes())
}

struct Outputs {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, bytes: Vec<u8>) -> Result<(), HarnessError> {
        let path = self.dir.join(name);
        fs::write(&path, &bytes).map_err(|e| HarnessError::io(&path, e))?;
        self.files.push(OutputFile {
            name: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    fn csv<F>(&mut self, name: &str, write: F) -> Result<(), HarnessError>
    where
        F: FnOnce(&mut Vec<u8>) -> csv::Result<()>,
    {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.put(name, buf)
    }
}

/// Run one scenario to completion and write its outputs.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunManifest, HarnessError> {
    cfg.validate()?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    out.put("config.toml", cfg.to_toml().into_bytes())?;
    info!("running {} into {}", cfg.scenario, cfg.output_dir.display());
    match cfg.scenario {
        ScenarioKind::Fleet => {
            let outcome = run_fleet(&fleet_spec(cfg, live_source(cfg)?))?;
            write_fleet(cfg, &outcome, &mut out)?;
        }
        ScenarioKind::FleetReplay => {
            let records = replay_trace(cfg)?;
            out.csv("poll_trace.csv", |w| traces::write_poll_trace(w, &records))?;
            let outcome = run_fleet(&replay_spec(cfg, records))?;
            write_fleet(cfg, &outcome, &mut out)?;
        }
        ScenarioKind::WeakScaling | ScenarioKind::MultiGeneration | ScenarioKind::StrongScaling => {
            let rows = run_scaling(cfg)?;
            out.csv("scaling.csv", |w| write_scaling_csv(w, &rows))?;
        }
        ScenarioKind::ModeComparison => {
            let rows = run_comparison(cfg)?;
            out.csv("comparison.csv", |w| write_comparison_csv(w, &rows))?;
        }
    }
    let manifest = RunManifest {
        scenario: cfg.scenario,
        config_sha256: config_hash(cfg),
        seed: cfg.seed,
        engine_version: ENGINE_VERSION.to_string(),
        output_dir: cfg.output_dir.clone(),
        outputs: out.files.clone(),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    let path = cfg.output_dir.join("manifest.json");
    fs::write(&path, json).map_err(|e| HarnessError::io(&path, e))?;
    Ok(manifest)
}

/// Capability load for a live scheduler.
pub fn live_source(cfg: &ScenarioConfig) -> Result<SlotSource, HarnessError> {
    match (&cfg.background, &cfg.background_trace) {
        (Some(p), _) => Ok(SlotSource::Synthetic(p.clone())),
        (None, Some(path)) => Ok(SlotSource::Trace(traces::ingest_swf(path)?.records)),
        (None, None) => Err(HarnessError::invalid(
            "background, background_trace",
            "a live scheduler needs a capability load",
        )),
    }
}

pub fn fleet_spec(cfg: &ScenarioConfig, source: SlotSource) -> FleetSpec {
    FleetSpec {
        cluster: cfg.cluster.clone(),
        source,
        broker: cfg.broker.clone(),
        payload: cfg.payload().expect("validated"),
        io: cfg.io().expect("validated"),
        rules: cfg.rules(),
        warmup_s: cfg.warmup_s,
        horizon_s: cfg.horizon_s,
        seed: cfg.seed,
    }
}

/// Replays start at the first record; there is no warmup to discard.
pub fn replay_spec(cfg: &ScenarioConfig, records: Vec<PollRecord>) -> FleetSpec {
    FleetSpec {
        warmup_s: 0,
        ..fleet_spec(cfg, SlotSource::Replay(records))
    }
}

/// The poll trace a replay runs on: the configured file, or the availability
/// series of a live run with the same config.
pub fn replay_trace(cfg: &ScenarioConfig) -> Result<Vec<PollRecord>, HarnessError> {
    if let Some(path) = &cfg.poll_trace {
        return Ok(traces::ingest_poll_trace(path)?.records);
    }
    Ok(run_fleet(&fleet_spec(cfg, live_source(cfg)?))?.polls)
}

pub fn window_reports(cfg: &ScenarioConfig, outcome: &FleetOutcome, len_s: u64) -> Vec<WindowReport> {
    fixed_windows(outcome.horizon, len_s)
        .into_iter()
        .map(|w| report(cfg, outcome, w))
        .collect()
}

pub fn monthly_reports(cfg: &ScenarioConfig, outcome: &FleetOutcome) -> Vec<WindowReport> {
    calendar_month_windows(cfg.epoch, outcome.horizon)
        .into_iter()
        .map(|w| report(cfg, outcome, w))
        .collect()
}

fn report(cfg: &ScenarioConfig, o: &FleetOutcome, w: crate::metrics::Window) -> WindowReport {
    window_report(&o.polls, &o.consumption, &o.outcomes, w, &cfg.rules())
}

fn write_fleet(cfg: &ScenarioConfig, o: &FleetOutcome, out: &mut Outputs) -> Result<(), HarnessError> {
    out.csv("polls.csv", |w| traces::write_poll_trace(w, &o.polls))?;
    out.csv("showbf.csv", |w| traces::write_poll_trace(w, &o.showbf))?;
    let daily = window_reports(cfg, o, cfg.metrics.ledger_window_s);
    out.csv("ledger.csv", |w| write_ledger_csv(w, &daily))?;
    let monthly = monthly_reports(cfg, o);
    out.csv("monthly_report.csv", |w| write_monthly_csv(w, cfg.epoch, &monthly))?;
    out.csv("bundles.csv", |w| write_bundle_log(w, &o.bundles))?;
    let whole = report(cfg, o, o.window());
    let (slot_nodes, slot_wall) = o.slot_means().unwrap_or((0.0, 0.0));
    let rows: Vec<(&str, String)> = vec![
        ("horizon_s", o.horizon.secs().to_string()),
        ("brokers", cfg.broker.n_brokers.to_string()),
        ("avail_core_hours", format!("{:.3}", whole.avail_core_hours())),
        ("used_core_hours", format!("{:.3}", whole.used_core_hours())),
        ("efficiency", whole.efficiency().map(|e| format!("{e:.6}")).unwrap_or_default()),
        ("jobs_done", o.totals.done.to_string()),
        ("jobs_failed", o.totals.failed.to_string()),
        ("events_done", o.totals.events_done.to_string()),
        ("bundles", o.bundles.len().to_string()),
        ("max_active_bundles", o.max_active_bundles.to_string()),
        ("slot_mean_nodes", format!("{slot_nodes:.3}")),
        ("slot_mean_walltime_s", format!("{slot_wall:.3}")),
        ("background_utilization", format!("{:.6}", o.background_utilization)),
        ("queued_at_end", o.queued_at_end.to_string()),
        ("trace_digest", format!("{:016x}", o.digest)),
    ];
    out.csv("summary.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["metric", "value"])?;
        for (k, v) in &rows {
            w.write_record([k, v.as_str()])?;
        }
        w.flush()?;
        Ok(())
    })
}

/// One pilot of a scaling experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub scenario: ScenarioKind,
    pub pilot_nodes: u32,
    pub units_dispatched: u32,
    /// Units that completed.
    pub units: u32,
    pub generations: u32,
    pub pilot_duration_s: u64,
    pub mean_task_s: f64,
    pub overhead_s: f64,
}

/// One pilot per configured size on an otherwise idle cluster.
pub fn run_scaling(cfg: &ScenarioConfig) -> Result<Vec<ScalingRow>, HarnessError> {
    let n = &cfg.nge;
    let payload = n.payload(&cfg.workload)?;
    let spec = SimJobSpec {
        events: n.events_per_unit,
        slots_per_node: cfg.broker.slots_per_node,
    };
    let mut rows = Vec::with_capacity(n.sizes.len());
    for &nodes in &n.sizes {
        let mut session = Session::new(cfg.cluster.clone(), payload, n.overhead, cfg.seed)?;
        let pilot = session.submit_pilot(PilotDesc {
            nodes,
            walltime_s: n.walltime_s,
            class: n.queue,
            exit_when_idle: true,
        })?;
        let units = n.units_for(nodes);
        session.dispatch_units(pilot, &vec![spec; units as usize])?;
        session.run();
        let r = session.pilot_report(pilot)?;
        rows.push(ScalingRow {
            scenario: cfg.scenario,
            pilot_nodes: nodes,
            units_dispatched: units,
            units: r.units_done as u32,
            generations: r.generations,
            pilot_duration_s: r.pilot_duration_s,
            mean_task_s: r.mean_task_s,
            overhead_s: r.overhead_s,
        });
    }
    Ok(rows)
}

pub fn write_scaling_csv<W: std::io::Write>(out: W, rows: &[ScalingRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario",
        "pilot_nodes",
        "units",
        "generations",
        "pilot_duration_s",
        "mean_task_s",
        "overhead_s",
    ])?;
    for r in rows {
        w.write_record([
            r.scenario.as_str().to_string(),
            r.pilot_nodes.to_string(),
            r.units.to_string(),
            r.generations.to_string(),
            r.pilot_duration_s.to_string(),
            format!("{:.3}", r.mean_task_s),
            format!("{:.3}", r.overhead_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One slot run both ways.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub slot: u32,
    pub timestamp_s: u64,
    pub slot_nodes: u32,
    pub slot_walltime_s: u64,
    /// Job shape both modes submit: the broker's plan for the slot.
    pub nodes: u32,
    pub walltime_s: u64,
    pub broker_run_s: u64,
    /// Walltime the bundle leaves unused.
    pub residual_s: u64,
    /// Mean payload duration in the bundle.
    pub mean_task_s: f64,
    pub broker_events: u64,
    pub broker_core_hours: f64,
    pub nge_pilot_s: u64,
    pub nge_units_done: u32,
    pub nge_events: u64,
    pub nge_core_hours: f64,
}

/// Qualifying slots from a live fleet run, at least `min_spacing_s` apart.
pub fn comparison_slots(cfg: &ScenarioConfig, showbf: &[PollRecord]) -> Vec<BackfillSlot> {
    let mut picked: Vec<BackfillSlot> = Vec::new();
    for p in showbf {
        if picked.len() >= cfg.comparison.max_slots as usize {
            break;
        }
        let slot = BackfillSlot {
            nodes: p.nodes,
            walltime_s: p.walltime_s,
            observed_at: p.observed_at,
        };
        if plan_bundle(&slot, &cfg.broker, &cfg.cluster).is_none() {
            continue;
        }
        if picked
            .last()
            .is_some_and(|q| slot.observed_at.since(q.observed_at) < cfg.comparison.min_spacing_s)
        {
            continue;
        }
        picked.push(slot);
    }
    picked
}

/// Broker bundles and pilots on the same slots. Each slot gets a fresh
/// random stream, shared in kind by both modes. A broker job ends with its
/// slowest payload; a pilot keeps pulling units until the walltime.
pub fn run_comparison(cfg: &ScenarioConfig) -> Result<Vec<ComparisonRow>, HarnessError> {
    let fleet = run_fleet(&fleet_spec(cfg, live_source(cfg)?))?;
    let slots = comparison_slots(cfg, &fleet.showbf);
    let payload = cfg.payload()?;
    let io = cfg.io()?;
    let cores = f64::from(cfg.cluster.cores_per_node);
    let mut rows = Vec::with_capacity(slots.len());
    for (i, slot) in slots.iter().enumerate() {
        let plan = plan_bundle(slot, &cfg.broker, &cfg.cluster).expect("slot qualifies");
        let events = cfg.broker.events_for(plan.walltime_s, &payload);
        let mut rng = RngStream::new(cfg.seed, "comparison").child(i);
        let (staged, _) = broker::stage_batch(&io, &cfg.broker.stage_in, plan.nodes, &mut rng);
        let bundle = Bundle::build(
            BundleId(i as u64),
            0,
            plan,
            events,
            cfg.broker.slots_per_node,
            &payload,
            &staged,
            SimTime::ZERO,
            &mut rng,
        );
        let run_s = bundle.run_length_s();
        let finished = bundle
            .payloads
            .iter()
            .filter(|p| p.makespan_s <= plan.walltime_s)
            .count() as u64;
        let mean_task_s = bundle.payloads.iter().map(|p| p.makespan_s as f64).sum::<f64>()
            / f64::from(plan.nodes);

        let spec = SimJobSpec {
            events,
            slots_per_node: cfg.broker.slots_per_node,
        };
        let mut session = Session::new(cfg.cluster.clone(), payload, cfg.nge.overhead, cfg.seed ^ i as u64)?;
        let pilot = session.submit_pilot(PilotDesc {
            nodes: plan.nodes,
            walltime_s: plan.walltime_s,
            class: PriorityClass::Backfill,
            exit_when_idle: true,
        })?;
        // Enough units that no node runs dry before the walltime.
        let floor_s = (payload.mean_event_s(&spec) * 0.5).max(1.0);
        let per_node = (plan.walltime_s as f64 / floor_s).ceil() as u32 + 1;
        session.dispatch_units(pilot, &vec![spec; (per_node * plan.nodes) as usize])?;
        session.run();
        let r = session.pilot_report(pilot)?;

        rows.push(ComparisonRow {
            slot: i as u32,
            timestamp_s: slot.observed_at.secs(),
            slot_nodes: slot.nodes,
            slot_walltime_s: slot.walltime_s,
            nodes: plan.nodes,
            walltime_s: plan.walltime_s,
            broker_run_s: run_s,
            residual_s: plan.walltime_s - run_s,
            mean_task_s,
            broker_events: finished * u64::from(events),
            broker_core_hours: f64::from(plan.nodes) * cores * run_s as f64 / 3600.0,
            nge_pilot_s: r.pilot_duration_s,
            nge_units_done: r.units_done as u32,
            nge_events: r.units_done as u64 * u64::from(events),
            nge_core_hours: f64::from(plan.nodes) * cores * r.pilot_duration_s as f64 / 3600.0,
        });
    }
    Ok(rows)
}

pub fn write_comparison_csv<W: std::io::Write>(out: W, rows: &[ComparisonRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "slot",
        "timestamp_s",
        "slot_nodes",
        "slot_walltime_s",
        "nodes",
        "walltime_s",
        "broker_run_s",
        "residual_s",
        "mean_task_s",
        "broker_events",
        "broker_core_hours",
        "nge_pilot_s",
        "nge_units_done",
        "nge_events",
        "nge_core_hours",
    ])?;
    for r in rows {
        w.write_record([
            r.slot.to_string(),
            r.timestamp_s.to_string(),
            r.slot_nodes.to_string(),
            r.slot_walltime_s.to_string(),
            r.nodes.to_string(),
            r.walltime_s.to_string(),
            r.broker_run_s.to_string(),
            r.residual_s.to_string(),
            format!("{:.3}", r.mean_task_s),
            r.broker_events.to_string(),
            format!("{:.3}", r.broker_core_hours),
            r.nge_pilot_s.to_string(),
            r.nge_units_done.to_string(),
            r.nge_events.to_string(),
            format!("{:.3}", r.nge_core_hours),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `key=v1,v2,...` into its key and values.
pub fn parse_param(s: &str) -> Result<(String, Vec<String>), HarnessError> {
    let (k, vs) = s
        .split_once('=')
        .ok_or_else(|| HarnessError::invalid(s, "expected key=v1,v2,..."))?;
    let values: Vec<String> = vs.split(',').map(|v| v.trim().to_string()).collect();
    if k.trim().is_empty() || values.iter().any(String::is_empty) {
        return Err(HarnessError::invalid(s, "expected key=v1,v2,..."));
    }
    Ok((k.trim().to_string(), values))
}

fn label(combo: &[(String, String)]) -> String {
    combo
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("__")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._=-".contains(c) { c } else { '_' })
        .collect()
}

/// Every combination of the parameter values, in order, each written to its
/// own subdirectory of the config's output directory.
pub fn sweep(path: &Path, params: &[(String, Vec<String>)]) -> Result<Vec<RunManifest>, HarnessError> {
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (k, vs) in params {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                vs.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((k.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    // Validate every point before running any.
    let cfgs = combos
        .iter()
        .map(|c| {
            let mut cfg = config::load_with(path, c)?;
            cfg.output_dir = cfg.output_dir.join(label(c));
            Ok(cfg)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    cfgs.iter().map(run_scenario).collect()
}

/// Summary line for `ingest-stats`.
pub fn describe_trace(path: &Path) -> Result<String, HarnessError> {
    if traces::is_poll_trace(path) {
        let t = traces::ingest_poll_trace(path)?;
        let s = poll_stats(&t.records);
        Ok(format!(
            "poll trace: {} records, mean nodes {:.1}, mean walltime {:.1} s; \
             non-empty: {} records, mean nodes {:.1}, mean walltime {:.1} s",
            s.count,
            s.mean_nodes,
            s.mean_walltime_s,
            s.nonzero,
            s.nonzero_mean_nodes,
            s.nonzero_mean_walltime_s
        ))
    } else {
        let t = traces::ingest_swf(path)?;
        let n = t.records.len();
        let d = n.max(1) as f64;
        let nodes = t.records.iter().map(|j| f64::from(j.nodes)).sum::<f64>() / d;
        let wall = t.records.iter().map(|j| j.walltime_s as f64).sum::<f64>() / d;
        let run = t.records.iter().map(|j| j.runtime_s as f64).sum::<f64>() / d;
        Ok(format!(
            "swf trace: {n} jobs, mean nodes {nodes:.1}, mean walltime {wall:.1} s, mean runtime {run:.1} s"
        ))
    }
}
