//! Broker fleet driven either by a live scheduler with synthetic or traced
//! capability load, or by a recorded poll trace.

use std::collections::BTreeMap;

use rand::Rng;

use crate::broker::{
    self, on_bundle_complete, plan_bundle, BrokerConfig, BrokerPhase, BrokerState, Bundle,
    BundleId, BundleReport,
};
use crate::metrics::{AccountingRules, ConsumptionRecord, OutcomeRecord, PollRecord, Window};
use crate::scheduler::{BackfillSlot, ClusterConfig, JobId, PollReplay, PriorityClass, Scheduler};
use crate::simcore::{Engine, RngStream, SimTime};
use crate::workload::{
    generate_background_jobs, BackgroundJob, BackgroundProfile, IoProfile, IoSample, PayloadModel,
};

use super::HarnessError;

/// Where backfill slots come from.
#[derive(Debug, Clone)]
pub enum SlotSource {
    /// Live scheduler with a synthetic capability load.
    Synthetic(BackgroundProfile),
    /// Live scheduler with a fixed list of capability jobs.
    Trace(Vec<BackgroundJob>),
    /// Recorded slot observations, no scheduler.
    Replay(Vec<PollRecord>),
}

#[derive(Debug, Clone)]
pub struct FleetSpec {
    pub cluster: ClusterConfig,
    pub source: SlotSource,
    pub broker: BrokerConfig,
    pub payload: PayloadModel,
    pub io: IoProfile,
    pub rules: AccountingRules,
    /// Simulated time discarded before reporting starts.
    pub warmup_s: u64,
    pub horizon_s: u64,
    pub seed: u64,
}

/// Everything a fleet run reports, with times relative to the end of warmup.
#[derive(Debug, Clone)]
pub struct FleetOutcome {
    pub horizon: SimTime,
    /// Availability samples for accounting: nodes held by the fleet count as
    /// available.
    pub polls: Vec<PollRecord>,
    /// The slot a backfill job would actually get at each sample instant.
    pub showbf: Vec<PollRecord>,
    pub bundles: Vec<Bundle>,
    pub outcomes: Vec<OutcomeRecord>,
    pub consumption: Vec<ConsumptionRecord>,
    pub totals: BundleReport,
    /// Most bundles held at once.
    pub max_active_bundles: u32,
    /// Capability node-seconds over capacity in the reporting window; zero
    /// in replay mode.
    pub background_utilization: f64,
    /// Jobs still waiting in the live queue at the end of the run.
    pub queued_at_end: usize,
    pub digest: u64,
}

impl FleetOutcome {
    pub fn window(&self) -> Window {
        Window::new(SimTime::ZERO, self.horizon)
    }

    /// Mean nodes and walltime over reported slots that were non-empty.
    pub fn slot_means(&self) -> Option<(f64, f64)> {
        let seen: Vec<&PollRecord> = self.showbf.iter().filter(|p| p.nodes > 0).collect();
        if seen.is_empty() {
            return None;
        }
        let n = seen.len() as f64;
        let nodes = seen.iter().map(|p| f64::from(p.nodes)).sum::<f64>() / n;
        let wall = seen.iter().map(|p| p.walltime_s as f64).sum::<f64>() / n;
        Some((nodes, wall))
    }
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    BackgroundSubmit(usize),
    JobEnd(JobId),
    BrokerStart(u32),
    StageInDone(u32),
    Poll(u32),
    BundleEnd(BundleId),
    StageOutDone(u32),
}

enum Slots {
    Live {
        sched: Box<Scheduler>,
        background: Vec<BackgroundJob>,
        /// Standing capability backlog and the stream it draws from.
        backlog: Option<(BackgroundProfile, RngStream)>,
    },
    Replay(PollReplay),
}

struct Agent {
    state: BrokerState,
    staged: Vec<IoSample>,
}

struct World<'a> {
    spec: &'a FleetSpec,
    engine: Engine<Ev>,
    slots: Slots,
    agents: Vec<Agent>,
    bundles: Vec<Bundle>,
    job_bundle: BTreeMap<JobId, BundleId>,
    runtimes: BTreeMap<JobId, u64>,
    held_nodes: u32,
    active: u32,
    max_active: u32,
    remaining: Option<u64>,
    polls: Vec<PollRecord>,
    showbf: Vec<PollRecord>,
    outcomes: Vec<OutcomeRecord>,
}

/// Run a broker fleet to `warmup_s + horizon_s`.
pub fn run_fleet(spec: &FleetSpec) -> Result<FleetOutcome, HarnessError> {
    spec.broker.validate()?;
    if spec.horizon_s == 0 {
        return Err(HarnessError::invalid("horizon_s", "must be > 0"));
    }
    let step = spec.rules.poll_interval_s;
    if step == 0 {
        return Err(HarnessError::invalid("metrics.poll_interval_s", "must be > 0"));
    }
    if spec.broker.poll_interval_s % step != 0 {
        return Err(HarnessError::invalid(
            "broker.poll_interval_s",
            "must be a multiple of metrics.poll_interval_s",
        ));
    }
    if spec.warmup_s % step != 0 {
        return Err(HarnessError::invalid(
            "warmup_s",
            "must be a multiple of metrics.poll_interval_s",
        ));
    }
    let end = SimTime::from_secs(spec.warmup_s + spec.horizon_s);
    let slots = match &spec.source {
        SlotSource::Synthetic(profile) => {
            profile.validate(&spec.cluster)?;
            let mut rng = RngStream::new(spec.seed, "background");
            let background = generate_background_jobs(profile, &spec.cluster, end, &mut rng);
            let backlog = (profile.min_queued > 0)
                .then(|| (profile.clone(), RngStream::new(spec.seed, "background/backlog")));
            Slots::Live {
                sched: Box::new(Scheduler::new(spec.cluster.clone())?),
                background,
                backlog,
            }
        }
        SlotSource::Trace(jobs) => {
            let mut background = jobs.clone();
            background.sort_by_key(|j| j.submit);
            Slots::Live {
                sched: Box::new(Scheduler::new(spec.cluster.clone())?),
                background,
                backlog: None,
            }
        }
        SlotSource::Replay(polls) => Slots::Replay(PollReplay::new(polls.clone())),
    };
    let mut w = World {
        spec,
        engine: Engine::new(),
        slots,
        agents: (0..spec.broker.n_brokers)
            .map(|id| Agent {
                state: BrokerState::new(id, spec.seed),
                staged: Vec::new(),
            })
            .collect(),
        bundles: Vec::new(),
        job_bundle: BTreeMap::new(),
        runtimes: BTreeMap::new(),
        held_nodes: 0,
        active: 0,
        max_active: 0,
        remaining: spec.broker.job_source,
        polls: Vec::new(),
        showbf: Vec::new(),
        outcomes: Vec::new(),
    };
    w.prime();
    w.top_up_backlog()?;
    // Availability is sampled on a fixed grid, after every event at the
    // sampled instant. Brokers also poll on this grid, so a bundle's nodes
    // are always inside the last sample taken before it consumes them.
    let mut sample_at = matches!(w.slots, Slots::Live { .. }).then_some(SimTime::ZERO);
    loop {
        let next = w.engine.peek_time().filter(|t| *t <= end);
        if let Some(at) = sample_at.filter(|at| *at < end) {
            if next.is_none_or(|t| t > at) {
                w.sample(at);
                sample_at = Some(at + spec.rules.poll_interval_s);
                continue;
            }
        }
        match w.engine.next_until(end) {
            Some(ev) => {
                w.handle(ev.kind)?;
                w.top_up_backlog()?;
            }
            None => break,
        }
    }
    Ok(w.finish(end))
}

impl World<'_> {
    fn prime(&mut self) {
        match &self.slots {
            Slots::Live { background, .. } => {
                if let Some(first) = background.first() {
                    let at = first.submit;
                    self.engine
                        .schedule(at, Ev::BackgroundSubmit(0))
                        .expect("clock at zero");
                }
            }
            Slots::Replay(replay) => {
                self.polls = replay.records().to_vec();
                self.showbf = self.polls.clone();
            }
        }
        // Stagger brokers over one poll interval so they do not move in lockstep.
        let interval = self.spec.broker.poll_interval_s;
        for a in &mut self.agents {
            let offset = a.state.rng.random_range(0..interval);
            self.engine
                .schedule(SimTime::from_secs(offset), Ev::BrokerStart(a.state.id))
                .expect("future offset");
        }
    }

    fn handle(&mut self, ev: Ev) -> Result<(), HarnessError> {
        let now = self.engine.now();
        match ev {
            Ev::BackgroundSubmit(i) => {
                let Slots::Live {
                    sched, background, ..
                } = &mut self.slots
                else {
                    unreachable!("background only in live mode")
                };
                let job = background[i];
                let id = sched.submit(job.request(), now)?;
                self.runtimes.insert(id, job.runtime_s);
                if let Some(next) = background.get(i + 1) {
                    self.engine
                        .schedule(next.submit.max(now), Ev::BackgroundSubmit(i + 1))
                        .expect("not in the past");
                }
                self.dispatch();
            }
            Ev::JobEnd(job) => {
                self.sched().terminate(job, now)?;
                self.dispatch();
            }
            Ev::BrokerStart(b) | Ev::StageOutDone(b) => self.stage_in(b),
            Ev::StageInDone(b) => self.poll_on_grid(b),
            Ev::Poll(b) => self.poll(b)?,
            Ev::BundleEnd(id) => self.bundle_end(id)?,
        }
        Ok(())
    }

    fn top_up_backlog(&mut self) -> Result<(), HarnessError> {
        let now = self.engine.now();
        let Slots::Live {
            sched,
            backlog: Some((profile, rng)),
            ..
        } = &mut self.slots
        else {
            return Ok(());
        };
        let waiting = |s: &Scheduler| {
            s.queued()
                .iter()
                .filter(|id| s.job(**id).is_some_and(|j| j.class == PriorityClass::Capability))
                .count()
        };
        let mut submitted = false;
        while waiting(sched) < profile.min_queued as usize {
            let job = profile.draw_job(&self.spec.cluster, now, rng);
            let id = sched.submit(job.request(), now)?;
            self.runtimes.insert(id, job.runtime_s);
            submitted = true;
        }
        if submitted {
            self.dispatch();
        }
        Ok(())
    }

    fn sample(&mut self, at: SimTime) {
        let Slots::Live { sched, .. } = &self.slots else {
            unreachable!("sampling only in live mode")
        };
        let record = |s: BackfillSlot| PollRecord {
            observed_at: at,
            nodes: s.nodes,
            walltime_s: s.walltime_s,
        };
        self.polls.push(record(sched.availability_slot(at)));
        self.showbf.push(record(sched.query_backfill(at)));
    }

    /// Poll at the next availability sample instant.
    fn poll_on_grid(&mut self, b: u32) {
        let step = self.spec.rules.poll_interval_s;
        let at = self.engine.now().secs().div_ceil(step) * step;
        self.engine
            .schedule(SimTime::from_secs(at), Ev::Poll(b))
            .expect("grid point not in the past");
    }

    fn sched(&mut self) -> &mut Scheduler {
        match &mut self.slots {
            Slots::Live { sched, .. } => sched,
            Slots::Replay(_) => unreachable!("no scheduler in replay mode"),
        }
    }

    /// Give every newly started job its end event.
    fn dispatch(&mut self) {
        let started = self.sched().take_dispatched();
        for id in started {
            let start = self
                .sched()
                .job(id)
                .and_then(|j| j.start)
                .expect("dispatched job started");
            match self.runtimes.remove(&id) {
                Some(runtime) => {
                    self.engine
                        .schedule(start + runtime, Ev::JobEnd(id))
                        .expect("end after start");
                }
                None => {
                    let bid = self.job_bundle[&id];
                    self.start_bundle(bid, start);
                }
            }
        }
    }

    fn start_bundle(&mut self, id: BundleId, start: SimTime) {
        let b = &mut self.bundles[id.0 as usize];
        b.start = Some(start);
        let end = start + b.run_length_s();
        self.engine
            .schedule(end, Ev::BundleEnd(id))
            .expect("end after start");
    }

    fn stage_in(&mut self, b: u32) {
        let cfg = &self.spec.broker;
        if self.remaining.is_some_and(|r| r < u64::from(cfg.min_nodes_per_bundle)) {
            self.agents[b as usize].state.phase = BrokerPhase::Idle;
            return;
        }
        let a = &mut self.agents[b as usize];
        let want = cfg.max_nodes_per_bundle as usize - a.staged.len().min(cfg.max_nodes_per_bundle as usize);
        if want == 0 {
            a.state.phase = BrokerPhase::SlotPolling;
            self.poll_on_grid(b);
            return;
        }
        let (fresh, secs) = broker::stage_batch(&self.spec.io, &cfg.stage_in, want as u32, &mut a.state.rng);
        a.staged.extend(fresh);
        a.state.phase = BrokerPhase::StagingIn;
        self.engine.schedule_in(secs, Ev::StageInDone(b));
    }

    fn observe(&mut self, now: SimTime) -> BackfillSlot {
        let held = self.held_nodes;
        match &mut self.slots {
            Slots::Live { sched, .. } => sched.query_backfill(now),
            Slots::Replay(replay) => replay.query(now, held),
        }
    }

    fn poll(&mut self, b: u32) -> Result<(), HarnessError> {
        let now = self.engine.now();
        let cfg = &self.spec.broker;
        self.agents[b as usize].state.phase = BrokerPhase::SlotPolling;
        self.agents[b as usize].state.polls += 1;
        let slot = self.observe(now);
        let Some(mut plan) = plan_bundle(&slot, cfg, &self.spec.cluster) else {
            self.engine.schedule_in(cfg.poll_interval_s, Ev::Poll(b));
            return Ok(());
        };
        let a = &mut self.agents[b as usize];
        plan.nodes = plan.nodes.min(a.staged.len() as u32);
        if let Some(r) = self.remaining {
            plan.nodes = plan.nodes.min(r.min(u64::from(u32::MAX)) as u32);
        }
        if plan.nodes < cfg.min_nodes_per_bundle {
            self.engine.schedule_in(cfg.poll_interval_s, Ev::Poll(b));
            return Ok(());
        }
        let id = BundleId(self.bundles.len() as u64);
        let events = cfg.events_for(plan.walltime_s, &self.spec.payload);
        let bundle = Bundle::build(
            id,
            b,
            plan,
            events,
            cfg.slots_per_node,
            &self.spec.payload,
            &a.staged,
            now,
            &mut a.state.rng,
        );
        a.staged.drain(..plan.nodes as usize);
        a.state.phase = BrokerPhase::Submitted;
        a.state.active_bundle = Some(id);
        self.bundles.push(bundle);
        if let Some(r) = self.remaining.as_mut() {
            *r -= u64::from(plan.nodes);
        }
        self.held_nodes += plan.nodes;
        self.active += 1;
        self.max_active = self.max_active.max(self.active);
        match &mut self.slots {
            Slots::Live { sched, .. } => {
                let job = sched.submit(plan.request(), now)?;
                self.bundles[id.0 as usize].job = Some(job);
                self.job_bundle.insert(job, id);
                self.dispatch();
            }
            Slots::Replay(_) => self.start_bundle(id, now),
        }
        Ok(())
    }

    fn bundle_end(&mut self, id: BundleId) -> Result<(), HarnessError> {
        let now = self.engine.now();
        let bundle = &mut self.bundles[id.0 as usize];
        let b = bundle.broker;
        let nodes = bundle.nodes;
        let job = bundle.job;
        let a = &mut self.agents[b as usize];
        let report = on_bundle_complete(bundle, now, &self.spec.broker.failure, &mut a.state.rng);
        let out_s = bundle.stage_out_s(&self.spec.broker.stage_out);
        self.outcomes.push(report.outcome_record(now));
        a.state.active_bundle = None;
        a.state.phase = BrokerPhase::StagingOut;
        self.held_nodes -= nodes;
        self.active -= 1;
        self.engine.schedule_in(out_s, Ev::StageOutDone(b));
        if let Some(job) = job {
            self.sched().terminate(job, now)?;
            self.dispatch();
        }
        Ok(())
    }

    fn finish(self, end: SimTime) -> FleetOutcome {
        let warmup = self.spec.warmup_s;
        let report = Window::new(SimTime::from_secs(warmup), end);
        let shift = |t: SimTime| SimTime::from_secs(t.secs().saturating_sub(warmup));

        let clip = |polls: &[PollRecord]| -> Vec<PollRecord> {
            polls
                .iter()
                .filter(|p| report.contains(p.observed_at))
                .map(|p| PollRecord {
                    observed_at: shift(p.observed_at),
                    ..*p
                })
                .collect()
        };
        let polls = clip(&self.polls);
        let showbf = clip(&self.showbf);
        let consumption = self
            .bundles
            .iter()
            .filter_map(|b| {
                let start = b.start?.max(report.start);
                let stop = b.end.unwrap_or(end).min(report.end);
                (stop > start).then(|| ConsumptionRecord {
                    job: b.id.0,
                    nodes: b.nodes,
                    start: shift(start),
                    end: shift(stop),
                })
            })
            .collect();
        let outcomes = self
            .outcomes
            .iter()
            .filter(|o| report.contains(o.at))
            .map(|o| OutcomeRecord { at: shift(o.at), ..*o })
            .collect();
        let mut totals = BundleReport::default();
        let bundles: Vec<Bundle> = self
            .bundles
            .into_iter()
            .filter(|b| b.submit >= report.start)
            .map(|mut b| {
                b.submit = shift(b.submit);
                b.start = b.start.map(shift);
                b.end = b.end.map(shift);
                b
            })
            .collect();
        for b in &bundles {
            if b.end.is_some() {
                totals.absorb(&settled(b));
            }
        }
        let queued_at_end = match &self.slots {
            Slots::Live { sched, .. } => sched.queued().len(),
            Slots::Replay(_) => 0,
        };
        let background_utilization = match &self.slots {
            Slots::Live { sched, .. } => {
                let work: u128 = sched
                    .jobs()
                    .iter()
                    .filter(|j| j.class == PriorityClass::Capability)
                    .filter_map(|j| {
                        let start = j.start?.max(report.start);
                        let stop = j.end.unwrap_or(end).min(report.end);
                        (stop > start).then(|| u128::from(j.nodes) * u128::from(stop.since(start)))
                    })
                    .sum();
                work as f64 / (f64::from(self.spec.cluster.total_nodes) * report.len_s() as f64)
            }
            Slots::Replay(_) => 0.0,
        };
        FleetOutcome {
            horizon: SimTime::from_secs(self.spec.horizon_s),
            polls,
            showbf,
            bundles,
            outcomes,
            consumption,
            totals,
            max_active_bundles: self.max_active,
            background_utilization,
            queued_at_end,
            digest: self.engine.trace_digest(),
        }
    }
}

/// Tally of a settled bundle's payload outcomes.
fn settled(b: &Bundle) -> BundleReport {
    let mut r = BundleReport::default();
    for p in &b.payloads {
        match p.outcome {
            Some(broker::PayloadOutcome::Done) => {
                r.done += 1;
                r.events_done += u64::from(p.spec.events);
            }
            Some(broker::PayloadOutcome::Failed(c)) => {
                r.failed += 1;
                *r.by_cause.entry(c).or_default() += 1;
            }
            None => {}
        }
    }
    r
}
