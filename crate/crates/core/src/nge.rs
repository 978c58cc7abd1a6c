//! Multi-generation pilot runtime.
//!
//! A pilot is a batch job that, once running, bootstraps an agent on its
//! nodes. A unit manager hands units to the agent one at a time; the agent
//! places each queued unit on the first free node after a serial launch
//! delay. Nodes keep taking units until the queue drains or the pilot hits
//! its walltime, at which point anything still running is cut off.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheduler::{ClusterConfig, JobId, JobRequest, PriorityClass, Scheduler, SchedulerError};
use crate::simcore::{Engine, RngStream, SimTime};
use crate::workload::{PayloadModel, SimJobSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NgeError {
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("unknown pilot {0}")]
    UnknownPilot(u64),
    #[error("pilot {0} has not finished")]
    PilotRunning(u64),
    #[error("invalid overhead parameter `{0}`: must be finite and >= 0")]
    InvalidOverhead(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverheadModel {
    /// Pilot job start to agent ready.
    pub bootstrap_s: f64,
    /// Serial unit-manager cost per unit.
    pub dispatch_per_unit_s: f64,
    /// Serial agent cost to launch one unit.
    pub launch_per_unit_s: f64,
}

impl Default for OverheadModel {
    fn default() -> Self {
        OverheadModel {
            bootstrap_s: 180.0,
            dispatch_per_unit_s: 0.05,
            launch_per_unit_s: 0.01,
        }
    }
}

impl OverheadModel {
    pub fn validate(&self) -> Result<(), NgeError> {
        for (k, v) in [
            ("nge.overhead.bootstrap_s", self.bootstrap_s),
            ("nge.overhead.dispatch_per_unit_s", self.dispatch_per_unit_s),
            ("nge.overhead.launch_per_unit_s", self.launch_per_unit_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(NgeError::InvalidOverhead(k));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PilotDesc {
    pub nodes: u32,
    pub walltime_s: u64,
    pub class: PriorityClass,
    /// Release the pilot once every dispatched unit has finished instead of
    /// holding the nodes until walltime.
    pub exit_when_idle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PilotId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitState {
    /// Handed to the unit manager, not yet at the agent.
    Pending,
    /// Waiting in the agent queue.
    Dispatched,
    /// Assigned a node; running once the launch completes.
    Running,
    Done,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub id: UnitId,
    pub spec: SimJobSpec,
    pub state: UnitState,
    pub pilot: PilotId,
    pub node: Option<u32>,
    pub start: Option<SimTime>,
    pub end: Option<SimTime>,
}

#[derive(Debug, Clone, Default)]
pub struct AgentState {
    pub ready: bool,
    pub nodes: Vec<Option<UnitId>>,
    pub queue: VecDeque<UnitId>,
    /// Units completed per node.
    pub generations: Vec<u32>,
    busy_s: Vec<u64>,
    launcher_free_at: f64,
}

impl AgentState {
    fn new(nodes: u32) -> Self {
        AgentState {
            ready: false,
            nodes: vec![None; nodes as usize],
            queue: VecDeque::new(),
            generations: vec![0; nodes as usize],
            busy_s: vec![0; nodes as usize],
            launcher_free_at: 0.0,
        }
    }

    fn occupied(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_some()).count()
    }
}

#[derive(Debug, Clone)]
pub struct Pilot {
    pub id: PilotId,
    pub desc: PilotDesc,
    pub job: JobId,
    pub submitted_at: SimTime,
    pub started_at: Option<SimTime>,
    pub agent_ready_at: Option<SimTime>,
    pub ended_at: Option<SimTime>,
    pub walltime_killed: bool,
    pub agent: AgentState,
    pub units: Vec<UnitId>,
    in_flight: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UnitSpan {
    pub unit: UnitId,
    pub node: u32,
    pub start: SimTime,
    pub end: SimTime,
    pub state: UnitState,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PilotReport {
    pub pilot: PilotId,
    pub nodes: u32,
    pub units_dispatched: usize,
    pub units_done: usize,
    pub units_incomplete: usize,
    pub units_pending: usize,
    /// Most units completed on any one node.
    pub generations: u32,
    /// Pilot job start to release; queue wait is excluded.
    pub pilot_duration_s: u64,
    pub mean_task_s: f64,
    pub node_busy_mean_s: f64,
    pub overhead_s: f64,
    pub spans: Vec<UnitSpan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NgeEvent {
    PilotStart(PilotId),
    AgentReady(PilotId),
    UnitArrive(PilotId, UnitId),
    UnitLaunch(PilotId, UnitId),
    UnitEnd(PilotId, UnitId),
    PilotWalltime(PilotId),
}

/// One pilot runtime bound to a cluster, with its own clock.
pub struct Session {
    engine: Engine<NgeEvent>,
    scheduler: Scheduler,
    payload: PayloadModel,
    overhead: OverheadModel,
    seed: u64,
    pilots: Vec<Pilot>,
    units: Vec<Unit>,
    manager_free_at: f64,
}

fn at_ceil(t: f64) -> SimTime {
    SimTime::from_secs(t.max(0.0).ceil() as u64)
}

impl Session {
    pub fn new(
        cluster: ClusterConfig,
        payload: PayloadModel,
        overhead: OverheadModel,
        seed: u64,
    ) -> Result<Self, NgeError> {
        overhead.validate()?;
        Ok(Session {
            engine: Engine::new(),
            scheduler: Scheduler::new(cluster)?,
            payload,
            overhead,
            seed,
            pilots: Vec::new(),
            units: Vec::new(),
            manager_free_at: 0.0,
        })
    }

    pub fn now(&self) -> SimTime {
        self.engine.now()
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn trace_digest(&self) -> u64 {
        self.engine.trace_digest()
    }

    pub fn pilot(&self, id: PilotId) -> Option<&Pilot> {
        self.pilots.get(id.0 as usize)
    }

    pub fn unit(&self, id: UnitId) -> Option<&Unit> {
        self.units.get(id.0 as usize)
    }

    pub fn submit_pilot(&mut self, desc: PilotDesc) -> Result<PilotId, NgeError> {
        let now = self.now();
        let job = self.scheduler.submit(
            JobRequest {
                nodes: desc.nodes,
                walltime_s: desc.walltime_s,
                class: desc.class,
            },
            now,
        )?;
        let id = PilotId(self.pilots.len() as u64);
        self.pilots.push(Pilot {
            id,
            desc,
            job,
            submitted_at: now,
            started_at: None,
            agent_ready_at: None,
            ended_at: None,
            walltime_killed: false,
            agent: AgentState::new(desc.nodes),
            units: Vec::new(),
            in_flight: 0,
        });
        self.absorb_dispatched();
        Ok(id)
    }

    /// Hand units to the unit manager, which forwards them to the agent one
    /// at a time. Units sent to a finished pilot are incomplete at once.
    pub fn dispatch_units(
        &mut self,
        pilot: PilotId,
        specs: &[SimJobSpec],
    ) -> Result<Vec<UnitId>, NgeError> {
        let now = self.now();
        let finished = self
            .pilots
            .get(pilot.0 as usize)
            .ok_or(NgeError::UnknownPilot(pilot.0))?
            .ended_at
            .is_some();
        let mut ids = Vec::with_capacity(specs.len());
        for spec in specs {
            let id = UnitId(self.units.len() as u64);
            let mut unit = Unit {
                id,
                spec: *spec,
                state: UnitState::Pending,
                pilot,
                node: None,
                start: None,
                end: None,
            };
            if finished {
                unit.state = UnitState::Incomplete;
                unit.end = Some(now);
            } else {
                self.manager_free_at =
                    self.manager_free_at.max(now.secs() as f64) + self.overhead.dispatch_per_unit_s;
                self.engine
                    .schedule(at_ceil(self.manager_free_at), NgeEvent::UnitArrive(pilot, id))
                    .expect("arrival is not in the past");
                self.pilots[pilot.0 as usize].in_flight += 1;
            }
            self.units.push(unit);
            self.pilots[pilot.0 as usize].units.push(id);
            ids.push(id);
        }
        Ok(ids)
    }

    /// Process events up to `limit` and leave the clock there, so later
    /// submissions and dispatches happen at `limit`.
    pub fn run_until(&mut self, limit: SimTime) -> SimTime {
        while let Some(ev) = self.engine.next_until(limit) {
            self.handle(ev.kind);
        }
        if limit != SimTime::MAX {
            self.engine
                .advance_to(limit)
                .expect("every event up to the limit has fired");
        }
        self.now()
    }

    /// Process events until the queue is empty.
    pub fn run(&mut self) -> SimTime {
        while let Some(ev) = self.engine.next_until(SimTime::MAX) {
            self.handle(ev.kind);
        }
        self.now()
    }

    fn absorb_dispatched(&mut self) {
        for job in self.scheduler.take_dispatched() {
            if let Some(p) = self.pilots.iter().find(|p| p.job == job) {
                let id = p.id;
                self.engine.schedule_in(0, NgeEvent::PilotStart(id));
            }
        }
    }

    fn handle(&mut self, ev: NgeEvent) {
        let now = self.now();
        match ev {
            NgeEvent::PilotStart(p) => {
                let pilot = &mut self.pilots[p.0 as usize];
                pilot.started_at = Some(now);
                let ready = at_ceil(now.secs() as f64 + self.overhead.bootstrap_s);
                let walltime = pilot.desc.walltime_s;
                self.engine
                    .schedule(ready, NgeEvent::AgentReady(p))
                    .expect("future");
                self.engine.schedule_in(walltime, NgeEvent::PilotWalltime(p));
            }
            NgeEvent::AgentReady(p) => {
                let pilot = &mut self.pilots[p.0 as usize];
                if pilot.ended_at.is_some() {
                    return;
                }
                pilot.agent.ready = true;
                pilot.agent_ready_at = Some(now);
                self.try_launch(p);
                self.maybe_exit(p);
            }
            NgeEvent::UnitArrive(p, u) => {
                let pilot = &mut self.pilots[p.0 as usize];
                pilot.in_flight -= 1;
                if pilot.ended_at.is_some() {
                    let unit = &mut self.units[u.0 as usize];
                    unit.state = UnitState::Incomplete;
                    unit.end = Some(now);
                    return;
                }
                self.units[u.0 as usize].state = UnitState::Dispatched;
                pilot.agent.queue.push_back(u);
                self.try_launch(p);
            }
            NgeEvent::UnitLaunch(p, u) => {
                if self.pilots[p.0 as usize].ended_at.is_some() {
                    return;
                }
                let unit = &mut self.units[u.0 as usize];
                unit.start = Some(now);
                let mut rng = RngStream::new(self.seed, format!("nge/unit/{}", u.0));
                let run_s = self.payload.makespan(&unit.spec, &mut rng).ceil() as u64;
                self.engine.schedule_in(run_s, NgeEvent::UnitEnd(p, u));
            }
            NgeEvent::UnitEnd(p, u) => {
                let unit = &mut self.units[u.0 as usize];
                if unit.state != UnitState::Running {
                    return;
                }
                unit.state = UnitState::Done;
                unit.end = Some(now);
                let node = unit.node.expect("running unit has a node") as usize;
                let ran = now.since(unit.start.expect("started"));
                let agent = &mut self.pilots[p.0 as usize].agent;
                agent.nodes[node] = None;
                agent.generations[node] += 1;
                agent.busy_s[node] += ran;
                self.try_launch(p);
                self.maybe_exit(p);
            }
            NgeEvent::PilotWalltime(p) => {
                if self.pilots[p.0 as usize].ended_at.is_none() {
                    self.end_pilot(p, true);
                }
            }
        }
    }

    fn try_launch(&mut self, p: PilotId) {
        let now = self.now().secs() as f64;
        let launch = self.overhead.launch_per_unit_s;
        let pilot = &mut self.pilots[p.0 as usize];
        let agent = &mut pilot.agent;
        if !agent.ready || pilot.ended_at.is_some() {
            return;
        }
        while !agent.queue.is_empty() {
            let Some(node) = agent.nodes.iter().position(|n| n.is_none()) else {
                break;
            };
            let u = agent.queue.pop_front().expect("non-empty");
            agent.nodes[node] = Some(u);
            agent.launcher_free_at = agent.launcher_free_at.max(now) + launch;
            let unit = &mut self.units[u.0 as usize];
            unit.state = UnitState::Running;
            unit.node = Some(node as u32);
            self.engine
                .schedule(at_ceil(agent.launcher_free_at), NgeEvent::UnitLaunch(p, u))
                .expect("launch is not in the past");
        }
    }

    fn maybe_exit(&mut self, p: PilotId) {
        let pilot = &self.pilots[p.0 as usize];
        let idle = pilot.agent.ready
            && pilot.in_flight == 0
            && pilot.agent.queue.is_empty()
            && pilot.agent.occupied() == 0;
        if pilot.desc.exit_when_idle && pilot.ended_at.is_none() && idle {
            self.end_pilot(p, false);
        }
    }

    fn end_pilot(&mut self, p: PilotId, at_walltime: bool) {
        let now = self.now();
        let pilot = &mut self.pilots[p.0 as usize];
        pilot.ended_at = Some(now);
        pilot.walltime_killed = at_walltime;
        for slot in pilot.agent.nodes.iter_mut() {
            if let Some(u) = slot.take() {
                let unit = &mut self.units[u.0 as usize];
                unit.state = UnitState::Incomplete;
                if let Some(start) = unit.start {
                    let node = unit.node.expect("placed") as usize;
                    pilot.agent.busy_s[node] += now.since(start);
                }
                unit.end = Some(now);
            }
        }
        let job = pilot.job;
        self.scheduler
            .terminate(job, now)
            .expect("pilot job is running");
        self.absorb_dispatched();
    }

    pub fn pilot_report(&self, id: PilotId) -> Result<PilotReport, NgeError> {
        let pilot = self
            .pilots
            .get(id.0 as usize)
            .ok_or(NgeError::UnknownPilot(id.0))?;
        let (Some(start), Some(end)) = (pilot.started_at, pilot.ended_at) else {
            return Err(NgeError::PilotRunning(id.0));
        };
        let units: Vec<&Unit> = pilot.units.iter().map(|u| &self.units[u.0 as usize]).collect();
        let count = |s: UnitState| units.iter().filter(|u| u.state == s).count();
        let done: Vec<&&Unit> = units.iter().filter(|u| u.state == UnitState::Done).collect();
        let mean_task_s = if done.is_empty() {
            0.0
        } else {
            done.iter()
                .map(|u| u.end.unwrap().since(u.start.unwrap()) as f64)
                .sum::<f64>()
                / done.len() as f64
        };
        let duration = end.since(start);
        let busy_mean = pilot.agent.busy_s.iter().sum::<u64>() as f64 / f64::from(pilot.desc.nodes);
        let spans = units
            .iter()
            .filter_map(|u| {
                Some(UnitSpan {
                    unit: u.id,
                    node: u.node?,
                    start: u.start?,
                    end: u.end?,
                    state: u.state,
                })
            })
            .collect();
        Ok(PilotReport {
            pilot: id,
            nodes: pilot.desc.nodes,
            units_dispatched: units.len(),
            units_done: done.len(),
            units_incomplete: count(UnitState::Incomplete),
            units_pending: count(UnitState::Pending) + count(UnitState::Dispatched),
            generations: pilot.agent.generations.iter().copied().max().unwrap_or(0),
            pilot_duration_s: duration,
            mean_task_s,
            node_busy_mean_s: busy_mean,
            overhead_s: duration as f64 - busy_mean,
            spans,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{ContentionModel, EventDurationParams, SetupMode, SetupModel};

    /// One-event payload taking exactly `secs`.
    fn constant_payload(secs: f64) -> PayloadModel {
        PayloadModel::new(
            EventDurationParams {
                min_s: secs,
                max_s: secs,
                mean_s: secs,
                sigma: 0.5,
            },
            ContentionModel::default(),
            SetupModel {
                mode: SetupMode::None,
                ..SetupModel::default()
            },
        )
        .unwrap()
    }

    fn one_event() -> SimJobSpec {
        SimJobSpec {
            events: 1,
            slots_per_node: 16,
        }
    }

    fn zero() -> OverheadModel {
        OverheadModel {
            bootstrap_s: 0.0,
            dispatch_per_unit_s: 0.0,
            launch_per_unit_s: 0.0,
        }
    }

    fn pilot(nodes: u32, walltime_s: u64) -> PilotDesc {
        PilotDesc {
            nodes,
            walltime_s,
            class: PriorityClass::Capability,
            exit_when_idle: true,
        }
    }

    fn session(nodes: u32, secs: f64, o: OverheadModel) -> Session {
        Session::new(
            ClusterConfig::uniform(nodes, 16, 24 * 3600),
            constant_payload(secs),
            o,
            7,
        )
        .unwrap()
    }

    #[test]
    fn single_unit_without_overheads() {
        let mut s = session(1, 4200.0, zero());
        let p = s.submit_pilot(pilot(1, 7200)).unwrap();
        s.dispatch_units(p, &[one_event()]).unwrap();
        s.run();
        let r = s.pilot_report(p).unwrap();
        assert_eq!(r.pilot_duration_s, 4200);
        assert_eq!(r.overhead_s, 0.0);
        assert_eq!(r.units_done, 1);
    }

    #[test]
    fn zero_node_pilot_is_rejected() {
        let mut s = session(4, 100.0, zero());
        assert_eq!(
            s.submit_pilot(pilot(0, 100)),
            Err(NgeError::Scheduler(SchedulerError::ZeroNodes))
        );
    }

    #[test]
    fn large_pilot_on_titan_is_accepted() {
        let mut s = Session::new(
            ClusterConfig::titan(),
            PayloadModel::default(),
            OverheadModel::default(),
            1,
        )
        .unwrap();
        assert!(s.submit_pilot(pilot(2000, 7200)).is_ok());
    }

    #[test]
    fn agent_is_ready_after_bootstrap() {
        let o = OverheadModel {
            bootstrap_s: 180.0,
            ..zero()
        };
        let mut s = session(4, 100.0, o);
        let p = s.submit_pilot(pilot(4, 1000)).unwrap();
        s.run_until(SimTime::from_secs(500));
        let pl = s.pilot(p).unwrap();
        assert_eq!(pl.started_at, Some(SimTime::ZERO));
        assert_eq!(pl.agent_ready_at, Some(SimTime::from_secs(180)));
    }

    #[test]
    fn one_unit_per_node_runs_in_one_generation() {
        let mut s = session(250, 600.0, zero());
        let p = s.submit_pilot(pilot(250, 7200)).unwrap();
        s.dispatch_units(p, &vec![one_event(); 250]).unwrap();
        s.run();
        let r = s.pilot_report(p).unwrap();
        assert_eq!(r.generations, 1);
        assert!(r.spans.iter().all(|sp| sp.start == SimTime::ZERO));
    }

    #[test]
    fn five_units_per_node_run_in_five_generations() {
        let mut s = session(8, 600.0, zero());
        let p = s.submit_pilot(pilot(8, 7200)).unwrap();
        s.dispatch_units(p, &vec![one_event(); 40]).unwrap();
        s.run();
        let pl = s.pilot(p).unwrap();
        assert!(pl.agent.generations.iter().all(|g| *g == 5));
        assert_eq!(s.pilot_report(p).unwrap().pilot_duration_s, 3000);
    }

    #[test]
    fn uniform_durations_give_exact_generations() {
        let mut s = session(256, 300.0, OverheadModel::default());
        let p = s.submit_pilot(pilot(256, 24 * 3600)).unwrap();
        s.dispatch_units(p, &vec![one_event(); 2048]).unwrap();
        s.run();
        let pl = s.pilot(p).unwrap();
        assert!(pl.agent.generations.iter().all(|g| *g == 8));
    }

    #[test]
    fn dispatch_to_a_finished_pilot_is_incomplete() {
        let mut s = session(1, 100.0, zero());
        let p = s.submit_pilot(pilot(1, 1000)).unwrap();
        s.dispatch_units(p, &[one_event()]).unwrap();
        s.run();
        let late = s.dispatch_units(p, &[one_event(), one_event()]).unwrap();
        assert!(late
            .iter()
            .all(|u| s.unit(*u).unwrap().state == UnitState::Incomplete));
    }

    #[test]
    fn walltime_cuts_running_units() {
        let mut s = session(2, 500.0, zero());
        let p = s.submit_pilot(pilot(2, 800)).unwrap();
        let ids = s.dispatch_units(p, &vec![one_event(); 5]).unwrap();
        s.run();
        let r = s.pilot_report(p).unwrap();
        assert_eq!(r.pilot_duration_s, 800);
        assert_eq!((r.units_done, r.units_incomplete, r.units_pending), (2, 2, 1));
        assert_eq!(s.unit(ids[4]).unwrap().state, UnitState::Dispatched);
        assert!(s.pilot(p).unwrap().walltime_killed);
        assert_eq!(s.scheduler().free_nodes(), 2);
    }

    #[test]
    fn launch_follows_a_freed_node() {
        let o = OverheadModel {
            launch_per_unit_s: 2.0,
            ..zero()
        };
        let mut s = session(1, 100.0, o);
        let p = s.submit_pilot(pilot(1, 1000)).unwrap();
        let ids = s.dispatch_units(p, &[one_event(), one_event()]).unwrap();
        s.run();
        assert_eq!(s.unit(ids[0]).unwrap().start, Some(SimTime::from_secs(2)));
        assert_eq!(s.unit(ids[1]).unwrap().start, Some(SimTime::from_secs(104)));
    }

    #[test]
    fn late_units_join_a_running_pilot() {
        let mut s = session(1, 100.0, zero());
        let p = s.submit_pilot(PilotDesc {
            exit_when_idle: false,
            ..pilot(1, 1000)
        })
        .unwrap();
        s.dispatch_units(p, &[one_event()]).unwrap();
        s.run_until(SimTime::from_secs(150));
        let late = s.dispatch_units(p, &[one_event()]).unwrap();
        s.run();
        let u = s.unit(late[0]).unwrap();
        assert_eq!(u.state, UnitState::Done);
        assert_eq!(u.start, Some(SimTime::from_secs(150)));
    }

    #[test]
    fn report_requires_a_finished_pilot() {
        let mut s = session(1, 100.0, zero());
        let p = s.submit_pilot(pilot(1, 1000)).unwrap();
        assert_eq!(s.pilot_report(p), Err(NgeError::PilotRunning(0)));
        assert_eq!(s.pilot_report(PilotId(9)), Err(NgeError::UnknownPilot(9)));
    }
}
