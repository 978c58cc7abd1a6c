//! Backfill broker: each broker stages input for a batch of payloads, polls
//! the backfill slot, packs one bundle shaped to the slot, waits for it and
//! stages output. One outstanding bundle per broker.
//!
//! This module holds the decision rules and bookkeeping. The event loop that
//! drives a fleet against a live scheduler lives in the harness.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, AccountingRules, ConsumptionRecord, OutcomeRecord, PollRecord, Window};
use crate::scheduler::{BackfillSlot, ClusterConfig, JobId, JobRequest, PriorityClass};
use crate::simcore::{RngStream, SimTime};
use crate::workload::{IoProfile, IoSample, PayloadModel, SimJobSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrokerError {
    #[error("invalid broker parameter `{key}`: {msg}")]
    Invalid { key: &'static str, msg: String },
}

fn invalid(key: &'static str, msg: impl Into<String>) -> BrokerError {
    BrokerError::Invalid {
        key,
        msg: msg.into(),
    }
}

/// Transfer time for one staging phase: `base_s` plus `per_gb_s` for every
/// GB, with up to `streams` payload transfers in flight at once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageModel {
    pub base_s: f64,
    pub per_gb_s: f64,
    pub streams: u32,
}

impl Default for StageModel {
    fn default() -> Self {
        StageModel {
            base_s: 300.0,
            per_gb_s: 10.0,
            streams: 300,
        }
    }
}

impl StageModel {
    /// The total volume shares `min(streams, transfers)` streams evenly.
    pub fn duration_s(&self, volumes_gb: impl Iterator<Item = f64>) -> u64 {
        let (n, sum) = volumes_gb.fold((0u32, 0.0), |(n, s), v| (n + 1, s + v));
        let lanes = n.min(self.streams).max(1);
        (self.base_s + self.per_gb_s * sum / f64::from(lanes)).ceil() as u64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizingPolicy {
    /// Every payload processes `events_per_job` events.
    #[default]
    Fixed,
    /// Events fill the requested walltime:
    /// `slots_per_node * floor((walltime - setup) / mean_event_time)`.
    FitToWalltime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    Broker,
    Dispatcher,
    Payload,
    Other,
    Walltime,
}

impl FailureCause {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureCause::Broker => "broker",
            FailureCause::Dispatcher => "dispatcher",
            FailureCause::Payload => "payload",
            FailureCause::Other => "other",
            FailureCause::Walltime => "walltime",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureModel {
    pub probability: f64,
    pub broker: f64,
    pub dispatcher: f64,
    pub payload: f64,
}

impl Default for FailureModel {
    fn default() -> Self {
        FailureModel {
            probability: 0.136,
            broker: 0.19,
            dispatcher: 0.29,
            payload: 0.13,
        }
    }
}

impl FailureModel {
    pub fn other(&self) -> f64 {
        1.0 - self.broker - self.dispatcher - self.payload
    }

    pub fn validate(&self) -> Result<(), BrokerError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.probability) {
            return Err(invalid("broker.failure.probability", "must be within [0, 1]"));
        }
        if ![self.broker, self.dispatcher, self.payload].into_iter().all(unit)
            || self.other() < -1e-12
        {
            return Err(invalid(
                "broker.failure",
                "cause shares must be within [0, 1] and sum to at most 1",
            ));
        }
        Ok(())
    }

    /// `None` for success, otherwise the drawn cause.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<FailureCause> {
        if rng.random::<f64>() >= self.probability {
            return None;
        }
        let u = rng.random::<f64>();
        let cause = if u < self.broker {
            FailureCause::Broker
        } else if u < self.broker + self.dispatcher {
            FailureCause::Dispatcher
        } else if u < self.broker + self.dispatcher + self.payload {
            FailureCause::Payload
        } else {
            FailureCause::Other
        };
        Some(cause)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrokerConfig {
    pub n_brokers: u32,
    pub poll_interval_s: u64,
    pub min_slot_walltime_s: u64,
    pub min_nodes_per_bundle: u32,
    pub max_nodes_per_bundle: u32,
    pub events_per_job: u32,
    pub slots_per_node: u32,
    pub sizing: SizingPolicy,
    pub stage_in: StageModel,
    pub stage_out: StageModel,
    pub failure: FailureModel,
    /// Payloads available in total; `None` is an endless supply.
    pub job_source: Option<u64>,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            n_brokers: 20,
            poll_interval_s: 60,
            min_slot_walltime_s: 6300,
            min_nodes_per_bundle: 15,
            max_nodes_per_bundle: 300,
            events_per_job: 100,
            slots_per_node: 16,
            sizing: SizingPolicy::Fixed,
            stage_in: StageModel::default(),
            stage_out: StageModel::default(),
            failure: FailureModel::default(),
            job_source: None,
        }
    }
}

impl BrokerConfig {
    pub fn validate(&self) -> Result<(), BrokerError> {
        if self.n_brokers == 0 {
            return Err(invalid("broker.n_brokers", "must be >= 1"));
        }
        if self.poll_interval_s == 0 {
            return Err(invalid("broker.poll_interval_s", "must be > 0"));
        }
        if self.min_nodes_per_bundle == 0 || self.min_nodes_per_bundle > self.max_nodes_per_bundle
        {
            return Err(invalid(
                "broker.min_nodes_per_bundle",
                "need 1 <= min_nodes_per_bundle <= max_nodes_per_bundle",
            ));
        }
        if self.min_slot_walltime_s == 0 {
            return Err(invalid("broker.min_slot_walltime_s", "must be > 0"));
        }
        SimJobSpec {
            events: self.events_per_job,
            slots_per_node: self.slots_per_node,
        }
        .validate()
        .map_err(|e| invalid("broker.events_per_job", e.to_string()))?;
        for (key, s) in [("broker.stage_in", self.stage_in), ("broker.stage_out", self.stage_out)] {
            if !(s.base_s >= 0.0 && s.per_gb_s >= 0.0) {
                return Err(invalid(key, "durations must be >= 0"));
            }
            if s.streams == 0 {
                return Err(invalid(key, "streams must be >= 1"));
            }
        }
        self.failure.validate()
    }

    /// Events per payload for a bundle of the given walltime.
    pub fn events_for(&self, walltime_s: u64, payload: &PayloadModel) -> u32 {
        match self.sizing {
            SizingPolicy::Fixed => self.events_per_job,
            SizingPolicy::FitToWalltime => {
                let spec = SimJobSpec {
                    events: 1,
                    slots_per_node: self.slots_per_node,
                };
                let usable = walltime_s as f64 - payload.setup.setup_s();
                let waves = (usable / payload.mean_event_s(&spec)).floor().max(1.0);
                self.slots_per_node * waves as u32
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrokerPhase {
    Idle,
    StagingIn,
    SlotPolling,
    Submitted,
    StagingOut,
}

#[derive(Debug, Clone)]
pub struct BrokerState {
    pub id: u32,
    pub phase: BrokerPhase,
    pub active_bundle: Option<BundleId>,
    pub rng: RngStream,
    pub polls: u64,
}

impl BrokerState {
    pub fn new(id: u32, seed: u64) -> Self {
        BrokerState {
            id,
            phase: BrokerPhase::Idle,
            active_bundle: None,
            rng: RngStream::new(seed, format!("broker/{id}")),
            polls: 0,
        }
    }
}

/// Shape of a bundle the broker would submit for a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BundlePlan {
    pub nodes: u32,
    pub walltime_s: u64,
}

impl BundlePlan {
    pub fn request(&self) -> JobRequest {
        JobRequest {
            nodes: self.nodes,
            walltime_s: self.walltime_s,
            class: PriorityClass::Backfill,
        }
    }
}

/// The slot decision: submit only when the slot meets both floors.
pub fn plan_bundle(
    slot: &BackfillSlot,
    cfg: &BrokerConfig,
    cluster: &ClusterConfig,
) -> Option<BundlePlan> {
    if slot.walltime_s < cfg.min_slot_walltime_s || slot.nodes < cfg.min_nodes_per_bundle {
        return None;
    }
    let nodes = slot
        .nodes
        .clamp(cfg.min_nodes_per_bundle, cfg.max_nodes_per_bundle);
    let walltime_s = slot
        .walltime_s
        .min(cluster.walltime_cap(nodes, PriorityClass::Backfill));
    (walltime_s >= cfg.min_slot_walltime_s).then_some(BundlePlan { nodes, walltime_s })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BundleId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PayloadOutcome {
    Done,
    Failed(FailureCause),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Payload {
    pub spec: SimJobSpec,
    /// Whole seconds from bundle start to payload completion.
    pub makespan_s: u64,
    pub io: IoSample,
    pub outcome: Option<PayloadOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub id: BundleId,
    pub broker: u32,
    pub payloads: Vec<Payload>,
    pub nodes: u32,
    pub walltime_s: u64,
    pub job: Option<JobId>,
    pub submit: SimTime,
    pub start: Option<SimTime>,
    pub end: Option<SimTime>,
}

impl Bundle {
    /// One payload per node, taking the first `plan.nodes` staged inputs.
    #[allow(clippy::too_many_arguments)]
    pub fn build<R: Rng + ?Sized>(
        id: BundleId,
        broker: u32,
        plan: BundlePlan,
        events: u32,
        slots_per_node: u32,
        payload: &PayloadModel,
        staged: &[IoSample],
        submit: SimTime,
        rng: &mut R,
    ) -> Bundle {
        assert!(staged.len() >= plan.nodes as usize, "not enough staged inputs");
        let spec = SimJobSpec {
            events,
            slots_per_node,
        };
        let payloads = staged[..plan.nodes as usize]
            .iter()
            .map(|io| Payload {
                spec,
                makespan_s: payload.makespan(&spec, rng).ceil() as u64,
                io: *io,
                outcome: None,
            })
            .collect();
        Bundle {
            id,
            broker,
            payloads,
            nodes: plan.nodes,
            walltime_s: plan.walltime_s,
            job: None,
            submit,
            start: None,
            end: None,
        }
    }

    /// Seconds from start until the batch job ends: the slowest payload, or
    /// the walltime if that comes first.
    pub fn run_length_s(&self) -> u64 {
        self.payloads
            .iter()
            .map(|p| p.makespan_s)
            .max()
            .unwrap_or(0)
            .min(self.walltime_s)
    }

    pub fn stage_out_s(&self, model: &StageModel) -> u64 {
        model.duration_s(self.payloads.iter().map(|p| p.io.written_gb))
    }

    pub fn consumption(&self) -> Option<ConsumptionRecord> {
        Some(ConsumptionRecord {
            job: self.id.0,
            nodes: self.nodes,
            start: self.start?,
            end: self.end?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BundleReport {
    pub done: u64,
    pub failed: u64,
    pub events_done: u64,
    pub by_cause: BTreeMap<FailureCause, u64>,
}

impl BundleReport {
    pub fn outcome_record(&self, at: SimTime) -> OutcomeRecord {
        OutcomeRecord {
            at,
            jobs_done: self.done,
            jobs_failed: self.failed,
            events_done: self.events_done,
        }
    }

    pub fn absorb(&mut self, other: &BundleReport) {
        self.done += other.done;
        self.failed += other.failed;
        self.events_done += other.events_done;
        for (c, n) in &other.by_cause {
            *self.by_cause.entry(*c).or_default() += n;
        }
    }
}

/// Draw input descriptions for `n` payloads and the time to stage them in.
pub fn stage_batch<R: Rng + ?Sized>(
    io: &IoProfile,
    model: &StageModel,
    n: u32,
    rng: &mut R,
) -> (Vec<IoSample>, u64) {
    let staged: Vec<IoSample> = (0..n).map(|_| io.sample(rng)).collect();
    let secs = model.duration_s(staged.iter().map(|s| s.read_gb));
    (staged, secs)
}

/// Settle every payload of a terminated bundle.
///
/// Payloads still running at the walltime fail with cause `Walltime`; the
/// rest go through the failure draw.
pub fn on_bundle_complete<R: Rng + ?Sized>(
    bundle: &mut Bundle,
    ended_at: SimTime,
    failure: &FailureModel,
    rng: &mut R,
) -> BundleReport {
    bundle.end = Some(ended_at);
    let ran = bundle.start.map(|s| ended_at.since(s)).unwrap_or(0);
    let mut report = BundleReport::default();
    for p in &mut bundle.payloads {
        let outcome = if p.makespan_s > ran {
            PayloadOutcome::Failed(FailureCause::Walltime)
        } else {
            match failure.draw(rng) {
                None => PayloadOutcome::Done,
                Some(c) => PayloadOutcome::Failed(c),
            }
        };
        p.outcome = Some(outcome);
        match outcome {
            PayloadOutcome::Done => {
                report.done += 1;
                report.events_done += u64::from(p.spec.events);
            }
            PayloadOutcome::Failed(c) => {
                report.failed += 1;
                *report.by_cause.entry(c).or_default() += 1;
            }
        }
    }
    report
}

/// Consumed over available core-hours in `window`; absent without
/// availability.
pub fn fleet_efficiency(
    polls: &[PollRecord],
    consumption: &[ConsumptionRecord],
    window: Window,
    rules: &AccountingRules,
) -> Option<f64> {
    metrics::window_report(polls, consumption, &[], window, rules).efficiency()
}

/// `bundle,broker,submit_s,start_s,end_s,nodes,walltime_s,events_per_job,done,failed,<causes>`
pub fn write_bundle_log<W: std::io::Write>(out: W, bundles: &[Bundle]) -> csv::Result<()> {
    let causes = [
        FailureCause::Broker,
        FailureCause::Dispatcher,
        FailureCause::Payload,
        FailureCause::Other,
        FailureCause::Walltime,
    ];
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "bundle",
        "broker",
        "submit_s",
        "start_s",
        "end_s",
        "nodes",
        "walltime_s",
        "events_per_job",
        "done",
        "failed",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(causes.iter().map(|c| format!("failed_{}", c.as_str())));
    w.write_record(&header)?;
    let opt = |t: Option<SimTime>| t.map(|t| t.secs().to_string()).unwrap_or_default();
    for b in bundles {
        let mut done = 0u64;
        let mut by_cause = BTreeMap::<FailureCause, u64>::new();
        for p in &b.payloads {
            match p.outcome {
                Some(PayloadOutcome::Done) => done += 1,
                Some(PayloadOutcome::Failed(c)) => *by_cause.entry(c).or_default() += 1,
                None => {}
            }
        }
        let failed: u64 = by_cause.values().sum();
        let mut row = vec![
            b.id.0.to_string(),
            b.broker.to_string(),
            b.submit.secs().to_string(),
            opt(b.start),
            opt(b.end),
            b.nodes.to_string(),
            b.walltime_s.to_string(),
            b.payloads
                .first()
                .map(|p| p.spec.events.to_string())
                .unwrap_or_default(),
            done.to_string(),
            failed.to_string(),
        ];
        row.extend(
            causes
                .iter()
                .map(|c| by_cause.get(c).copied().unwrap_or(0).to_string()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::AvailabilityCredit;

    fn slot(nodes: u32, walltime_s: u64) -> BackfillSlot {
        BackfillSlot {
            nodes,
            walltime_s,
            observed_at: SimTime::ZERO,
        }
    }

    fn plan(nodes: u32, walltime_s: u64) -> Option<BundlePlan> {
        plan_bundle(
            &slot(nodes, walltime_s),
            &BrokerConfig::default(),
            &ClusterConfig::titan(),
        )
    }

    #[test]
    fn mean_slot_is_clamped_to_three_hundred_nodes() {
        assert_eq!(
            plan(691, 126 * 60),
            Some(BundlePlan {
                nodes: 300,
                walltime_s: 7200
            })
        );
    }

    #[test]
    fn mean_slot_keeps_its_walltime_where_the_cap_allows() {
        let c = ClusterConfig::uniform(18_688, 16, 24 * 3600);
        let p = plan_bundle(&slot(691, 126 * 60), &BrokerConfig::default(), &c);
        assert_eq!(
            p,
            Some(BundlePlan {
                nodes: 300,
                walltime_s: 126 * 60
            })
        );
    }

    #[test]
    fn short_slots_are_skipped() {
        assert_eq!(plan(500, 100 * 60), None);
        assert_eq!(plan(500, 6299), None);
        assert!(plan(500, 6300).is_some());
    }

    #[test]
    fn narrow_slots_are_skipped() {
        assert_eq!(plan(10, 300 * 60), None);
        assert_eq!(plan(15, 7200).map(|p| p.nodes), Some(15));
    }

    fn bundle(n: u32, makespans: &[u64], walltime_s: u64) -> Bundle {
        let spec = SimJobSpec::default();
        Bundle {
            id: BundleId(0),
            broker: 0,
            payloads: makespans
                .iter()
                .map(|&m| Payload {
                    spec,
                    makespan_s: m,
                    io: IoSample::default(),
                    outcome: None,
                })
                .collect(),
            nodes: n,
            walltime_s,
            job: None,
            submit: SimTime::ZERO,
            start: Some(SimTime::ZERO),
            end: None,
        }
    }

    fn no_fail() -> FailureModel {
        FailureModel {
            probability: 0.0,
            ..FailureModel::default()
        }
    }

    #[test]
    fn certain_success_and_certain_failure() {
        let mut r = RngStream::new(1, "t");
        let mut b = bundle(3, &[10, 20, 30], 100);
        let rep = on_bundle_complete(&mut b, SimTime::from_secs(30), &no_fail(), &mut r);
        assert_eq!((rep.done, rep.failed, rep.events_done), (3, 0, 300));

        let always = FailureModel {
            probability: 1.0,
            ..FailureModel::default()
        };
        let mut b = bundle(3, &[10, 20, 30], 100);
        let rep = on_bundle_complete(&mut b, SimTime::from_secs(30), &always, &mut r);
        assert_eq!((rep.done, rep.failed), (0, 3));
    }

    #[test]
    fn walltime_cut_payloads_fail_with_walltime_cause() {
        let mut r = RngStream::new(1, "t");
        let mut b = bundle(3, &[50, 150, 200], 100);
        assert_eq!(b.run_length_s(), 100);
        let rep = on_bundle_complete(&mut b, SimTime::from_secs(100), &no_fail(), &mut r);
        assert_eq!(rep.done, 1);
        assert_eq!(rep.by_cause.get(&FailureCause::Walltime), Some(&2));
        assert!(b.payloads.iter().all(|p| p.outcome.is_some()));
    }

    #[test]
    fn failure_rate_and_cause_mix_converge() {
        let f = FailureModel::default();
        let mut r = RngStream::new(9, "failures");
        let n = 100_000;
        let mut counts = BTreeMap::<FailureCause, u64>::new();
        for _ in 0..n {
            if let Some(c) = f.draw(&mut r) {
                *counts.entry(c).or_default() += 1;
            }
        }
        let failed: u64 = counts.values().sum();
        let rate = failed as f64 / n as f64;
        assert!((rate - 0.136).abs() < 0.01, "rate {rate}");
        let share = |c| counts[&c] as f64 / failed as f64;
        assert!((share(FailureCause::Broker) - 0.19).abs() < 0.02);
        assert!((share(FailureCause::Dispatcher) - 0.29).abs() < 0.02);
        assert!((share(FailureCause::Payload) - 0.13).abs() < 0.02);
        assert!((share(FailureCause::Other) - 0.39).abs() < 0.02);
    }

    #[test]
    fn invalid_configs_name_the_key() {
        let c = BrokerConfig {
            min_nodes_per_bundle: 400,
            ..BrokerConfig::default()
        };
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("broker.min_nodes_per_bundle"), "{err}");
        let c = BrokerConfig {
            failure: FailureModel {
                broker: 0.9,
                dispatcher: 0.9,
                ..FailureModel::default()
            },
            ..BrokerConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn fit_to_walltime_sizing() {
        let payload = PayloadModel::default();
        let cfg = BrokerConfig {
            sizing: SizingPolicy::FitToWalltime,
            ..BrokerConfig::default()
        };
        // (7200 - 225) / 840 = 8.3 waves of 16 events.
        assert_eq!(cfg.events_for(7200, &payload), 128);
        assert_eq!(BrokerConfig::default().events_for(7200, &payload), 100);
    }

    #[test]
    fn stage_time_shares_streams() {
        let s = StageModel::default();
        // Two transfers on two streams: 300 + 10 * 40 / 2.
        assert_eq!(s.duration_s([10.0, 30.0].into_iter()), 500);
        assert_eq!(s.duration_s(std::iter::empty()), 300);
        let one = StageModel { streams: 1, ..s };
        assert_eq!(one.duration_s([10.0, 30.0].into_iter()), 700);
    }

    #[test]
    fn efficiency_edges() {
        let rules = AccountingRules {
            cores_per_node: 16,
            poll_interval_s: 60,
            credit: AvailabilityCredit::Rate,
        };
        let w = Window::new(SimTime::ZERO, SimTime::from_secs(60));
        assert_eq!(fleet_efficiency(&[], &[], w, &rules), None);
        let polls = [PollRecord {
            observed_at: SimTime::ZERO,
            nodes: 10,
            walltime_s: 600,
        }];
        assert_eq!(fleet_efficiency(&polls, &[], w, &rules), Some(0.0));
        let used = [ConsumptionRecord {
            job: 0,
            nodes: 10,
            start: SimTime::ZERO,
            end: SimTime::from_secs(60),
        }];
        assert_eq!(fleet_efficiency(&polls, &used, w, &rules), Some(1.0));
    }

    #[test]
    fn bundle_log_header() {
        let mut b = bundle(2, &[10, 20], 100);
        let mut r = RngStream::new(1, "t");
        on_bundle_complete(&mut b, SimTime::from_secs(20), &no_fail(), &mut r);
        let mut buf = Vec::new();
        write_bundle_log(&mut buf, &[b]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("bundle,broker,submit_s,start_s,end_s,nodes,walltime_s"));
        assert_eq!(lines[1], "0,0,0,0,20,2,100,100,2,0,0,0,0,0,0");
    }
}
