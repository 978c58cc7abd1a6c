//! Batch machine model: homogeneous nodes, a two-class priority queue, EASY
//! backfill and a `showbf`-style slot query.
//!
//! Projected completions always use requested walltime. Only the head of the
//! queue holds a reservation; any later job may start now if it fits the idle
//! nodes and either finishes before that reservation or only uses nodes the
//! head will not need.

mod replay;

pub use replay::PollReplay;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simcore::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JobId(pub u64);

impl std::fmt::Display for JobId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "job#{}", self.0)
    }
}

/// Queue priority. Declaration order is priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorityClass {
    Capability,
    /// Lowest priority; opportunistic backfill work.
    Backfill,
}

/// Walltime limits for jobs up to `max_nodes` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalltimeBand {
    pub max_nodes: u32,
    pub capability_cap_s: u64,
    pub backfill_cap_s: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub total_nodes: u32,
    pub cores_per_node: u32,
    /// Ascending by `max_nodes`; the last band must cover `total_nodes`.
    pub walltime_bands: Vec<WalltimeBand>,
}

const HOUR: u64 = 3600;

impl ClusterConfig {
    /// Titan-like profile: 18,688 CPU nodes of 16 cores. Backfill-class jobs
    /// below 3,750 nodes are capped at two hours.
    pub fn titan() -> Self {
        let band = |max_nodes, cap_h: u64, bf_h: u64| WalltimeBand {
            max_nodes,
            capability_cap_s: cap_h * HOUR,
            backfill_cap_s: bf_h * HOUR,
        };
        ClusterConfig {
            total_nodes: 18_688,
            cores_per_node: 16,
            walltime_bands: vec![
                band(125, 2, 2),
                band(312, 6, 2),
                band(3_749, 12, 2),
                band(11_249, 24, 24),
                band(18_688, 24, 24),
            ],
        }
    }

    /// One band covering every size, same cap for both classes.
    pub fn uniform(total_nodes: u32, cores_per_node: u32, cap_s: u64) -> Self {
        ClusterConfig {
            total_nodes,
            cores_per_node,
            walltime_bands: vec![WalltimeBand {
                max_nodes: total_nodes,
                capability_cap_s: cap_s,
                backfill_cap_s: cap_s,
            }],
        }
    }

    pub fn validate(&self) -> Result<(), SchedulerError> {
        let bad = |msg: &str| Err(SchedulerError::InvalidConfig(msg.to_string()));
        if self.total_nodes == 0 {
            return bad("total_nodes must be > 0");
        }
        if self.cores_per_node == 0 {
            return bad("cores_per_node must be > 0");
        }
        if self.walltime_bands.is_empty() {
            return bad("at least one walltime band is required");
        }
        let mut prev = 0;
        for b in &self.walltime_bands {
            if b.max_nodes <= prev {
                return bad("walltime bands must be strictly ascending by max_nodes");
            }
            if b.capability_cap_s == 0 || b.backfill_cap_s == 0 {
                return bad("walltime caps must be positive");
            }
            prev = b.max_nodes;
        }
        if prev < self.total_nodes {
            return bad("last walltime band must cover total_nodes");
        }
        Ok(())
    }

    pub fn walltime_cap(&self, nodes: u32, class: PriorityClass) -> u64 {
        let band = self
            .walltime_bands
            .iter()
            .find(|b| nodes <= b.max_nodes)
            .or(self.walltime_bands.last())
            .expect("validated config has bands");
        match class {
            PriorityClass::Capability => band.capability_cap_s,
            PriorityClass::Backfill => band.backfill_cap_s,
        }
    }

    pub fn core_hours(&self, nodes: u32, secs: u64) -> f64 {
        f64::from(nodes) * f64::from(self.cores_per_node) * secs as f64 / 3600.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRequest {
    pub nodes: u32,
    pub walltime_s: u64,
    pub class: PriorityClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobState {
    Queued,
    Running,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchJob {
    pub id: JobId,
    pub nodes: u32,
    pub walltime_s: u64,
    pub class: PriorityClass,
    pub submit: SimTime,
    pub start: Option<SimTime>,
    pub end: Option<SimTime>,
    pub walltime_killed: bool,
}

impl BatchJob {
    pub fn state(&self) -> JobState {
        match (self.start, self.end) {
            (None, _) => JobState::Queued,
            (Some(_), None) => JobState::Running,
            (Some(_), Some(_)) => JobState::Finished,
        }
    }

    /// Start plus requested walltime; `None` until dispatched.
    pub fn projected_end(&self) -> Option<SimTime> {
        self.start.map(|s| s + self.walltime_s)
    }
}

/// The (nodes, walltime) rectangle a lowest-priority job could use right now.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackfillSlot {
    pub nodes: u32,
    pub walltime_s: u64,
    pub observed_at: SimTime,
}

impl BackfillSlot {
    pub fn empty(observed_at: SimTime) -> Self {
        BackfillSlot {
            nodes: 0,
            walltime_s: 0,
            observed_at,
        }
    }
}

/// Earliest-start reservation held by the queue head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reservation {
    pub job: JobId,
    pub nodes: u32,
    pub start: SimTime,
    pub end: SimTime,
    /// Nodes idle at `start` beyond what the head needs.
    pub extra_nodes: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchedulerError {
    #[error("invalid cluster config: {0}")]
    InvalidConfig(String),
    #[error("job requests zero nodes")]
    ZeroNodes,
    #[error("job requests {requested} nodes but the cluster has {total}")]
    TooManyNodes { requested: u32, total: u32 },
    #[error("job requests zero walltime")]
    ZeroWalltime,
    #[error("walltime {requested_s}s exceeds the {cap_s}s cap for {nodes}-node {class:?} jobs")]
    WalltimeAboveCap {
        requested_s: u64,
        cap_s: u64,
        nodes: u32,
        class: PriorityClass,
    },
    #[error("unknown {0}")]
    UnknownJob(JobId),
    #[error("{0} is not running")]
    NotRunning(JobId),
    #[error("terminate at {at} precedes start of {job}")]
    EndBeforeStart { job: JobId, at: SimTime },
}

pub struct Scheduler {
    config: ClusterConfig,
    jobs: Vec<BatchJob>,
    /// Waiting jobs in priority order: class, then submit time, then id.
    queue: Vec<JobId>,
    running: Vec<JobId>,
    busy_nodes: u32,
    reservation: Option<Reservation>,
    dispatched: Vec<JobId>,
}

impl Scheduler {
    pub fn new(config: ClusterConfig) -> Result<Self, SchedulerError> {
        config.validate()?;
        Ok(Scheduler {
            config,
            jobs: Vec::new(),
            queue: Vec::new(),
            running: Vec::new(),
            busy_nodes: 0,
            reservation: None,
            dispatched: Vec::new(),
        })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn job(&self, id: JobId) -> Option<&BatchJob> {
        self.jobs.get(id.0 as usize)
    }

    pub fn jobs(&self) -> &[BatchJob] {
        &self.jobs
    }

    pub fn queued(&self) -> &[JobId] {
        &self.queue
    }

    pub fn running(&self) -> &[JobId] {
        &self.running
    }

    pub fn busy_nodes(&self) -> u32 {
        self.busy_nodes
    }

    pub fn free_nodes(&self) -> u32 {
        self.config.total_nodes - self.busy_nodes
    }

    pub fn busy_nodes_of(&self, class: PriorityClass) -> u32 {
        self.running
            .iter()
            .map(|id| &self.jobs[id.0 as usize])
            .filter(|j| j.class == class)
            .map(|j| j.nodes)
            .sum()
    }

    /// Head-of-queue reservation as of the last scheduling pass.
    pub fn reservation(&self) -> Option<Reservation> {
        self.reservation
    }

    /// Jobs dispatched by passes since the last call.
    pub fn take_dispatched(&mut self) -> Vec<JobId> {
        std::mem::take(&mut self.dispatched)
    }

    pub fn check_request(&self, req: &JobRequest) -> Result<(), SchedulerError> {
        if req.nodes == 0 {
            return Err(SchedulerError::ZeroNodes);
        }
        if req.nodes > self.config.total_nodes {
            return Err(SchedulerError::TooManyNodes {
                requested: req.nodes,
                total: self.config.total_nodes,
            });
        }
        if req.walltime_s == 0 {
            return Err(SchedulerError::ZeroWalltime);
        }
        let cap_s = self.config.walltime_cap(req.nodes, req.class);
        if req.walltime_s > cap_s {
            return Err(SchedulerError::WalltimeAboveCap {
                requested_s: req.walltime_s,
                cap_s,
                nodes: req.nodes,
                class: req.class,
            });
        }
        Ok(())
    }

    /// Queue a job and run a scheduling pass at `now`.
    pub fn submit(&mut self, req: JobRequest, now: SimTime) -> Result<JobId, SchedulerError> {
        self.check_request(&req)?;
        let id = JobId(self.jobs.len() as u64);
        self.jobs.push(BatchJob {
            id,
            nodes: req.nodes,
            walltime_s: req.walltime_s,
            class: req.class,
            submit: now,
            start: None,
            end: None,
            walltime_killed: false,
        });
        let key = (req.class, now, id);
        let pos = self.queue.partition_point(|q| {
            let j = &self.jobs[q.0 as usize];
            (j.class, j.submit, j.id) < key
        });
        self.queue.insert(pos, id);
        self.schedule_pass(now);
        Ok(id)
    }

    /// Release a running job's nodes at `at` and run a scheduling pass.
    ///
    /// A job ending exactly at start + walltime is flagged walltime-killed.
    pub fn terminate(&mut self, id: JobId, at: SimTime) -> Result<(), SchedulerError> {
        let job = self
            .jobs
            .get_mut(id.0 as usize)
            .ok_or(SchedulerError::UnknownJob(id))?;
        if job.state() != JobState::Running {
            return Err(SchedulerError::NotRunning(id));
        }
        let start = job.start.expect("running job has a start");
        if at < start {
            return Err(SchedulerError::EndBeforeStart { job: id, at });
        }
        job.end = Some(at);
        job.walltime_killed = at.since(start) >= job.walltime_s;
        self.busy_nodes -= job.nodes;
        self.running.retain(|r| *r != id);
        self.schedule_pass(at);
        Ok(())
    }

    /// One EASY-backfill pass. Returns the jobs it dispatched.
    pub fn schedule_pass(&mut self, now: SimTime) -> Vec<JobId> {
        let mut started = Vec::new();
        let mut free = self.free_nodes();

        // Start jobs in priority order until one does not fit.
        let mut n_head_started = 0;
        for &id in &self.queue {
            let nodes = self.jobs[id.0 as usize].nodes;
            if nodes > free {
                break;
            }
            free -= nodes;
            started.push(id);
            n_head_started += 1;
        }
        for &id in &started {
            self.start_job(id, now);
        }
        self.queue.drain(..n_head_started);

        self.reservation = None;
        if let Some(&head) = self.queue.first() {
            let head_job = &self.jobs[head.0 as usize];
            let (shadow, mut extra) = self.earliest_start(now, head_job.nodes, free);
            self.reservation = Some(Reservation {
                job: head,
                nodes: head_job.nodes,
                start: shadow,
                end: shadow + head_job.walltime_s,
                extra_nodes: extra,
            });

            let mut backfilled = Vec::new();
            for &id in &self.queue[1..] {
                if free == 0 {
                    break;
                }
                let job = &self.jobs[id.0 as usize];
                if job.nodes > free {
                    continue;
                }
                let ends_before_shadow = now + job.walltime_s <= shadow;
                if ends_before_shadow || job.nodes <= extra {
                    free -= job.nodes;
                    if !ends_before_shadow {
                        extra -= job.nodes;
                    }
                    backfilled.push(id);
                }
            }
            if !backfilled.is_empty() {
                if let Some(r) = self.reservation.as_mut() {
                    r.extra_nodes = extra;
                }
                for &id in &backfilled {
                    self.start_job(id, now);
                }
                self.queue.retain(|q| !backfilled.contains(q));
                started.extend(backfilled);
            }
        }
        debug_assert!(self.busy_nodes <= self.config.total_nodes);
        self.dispatched.extend_from_slice(&started);
        started
    }

    fn start_job(&mut self, id: JobId, now: SimTime) {
        let job = &mut self.jobs[id.0 as usize];
        job.start = Some(now);
        self.busy_nodes += job.nodes;
        self.running.push(id);
    }

    /// Earliest instant `need` nodes are idle given projected completions,
    /// and the idle surplus at that instant.
    fn earliest_start(&self, now: SimTime, need: u32, free: u32) -> (SimTime, u32) {
        let ends = self
            .running
            .iter()
            .map(|id| &self.jobs[id.0 as usize])
            .map(|j| (j.projected_end().expect("running"), j.nodes));
        earliest_start(now, need, free, ends)
    }

    /// The slot a lowest-priority job submitted right now would get.
    ///
    /// Among the rectangles that start immediately, returns the one with the
    /// most nodes, breaking ties by the longer walltime. Walltime is clipped to
    /// the backfill-class cap for that node count so the slot is submittable.
    pub fn query_backfill(&self, now: SimTime) -> BackfillSlot {
        slot_from_plan(&self.config, now, self.free_nodes(), self.reservation)
    }

    /// Slot counting nodes held by backfill-class jobs as still available.
    ///
    /// Used for availability accounting: opportunistic consumption then always
    /// sits inside the availability it draws from, because the node count is
    /// every node not running a capability job. The walltime is the window to
    /// the head reservation, as for [`Scheduler::query_backfill`].
    pub fn availability_slot(&self, now: SimTime) -> BackfillSlot {
        let free = self.config.total_nodes - self.busy_nodes_of(PriorityClass::Capability);
        slot_from_plan(&self.config, now, free, self.reservation)
    }
}

fn earliest_start(
    now: SimTime,
    need: u32,
    free: u32,
    ends: impl Iterator<Item = (SimTime, u32)>,
) -> (SimTime, u32) {
    if need <= free {
        return (now, free - need);
    }
    let mut ends: Vec<(SimTime, u32)> = ends.collect();
    ends.sort_unstable();
    let mut avail = free;
    let mut i = 0;
    while i < ends.len() {
        // Release everything ending at the same instant together.
        let t = ends[i].0;
        while i < ends.len() && ends[i].0 == t {
            avail += ends[i].1;
            i += 1;
        }
        if avail >= need {
            return (t.max(now), avail - need);
        }
    }
    unreachable!("a request within total_nodes always fits once all jobs end")
}

fn slot_from_plan(
    config: &ClusterConfig,
    now: SimTime,
    free: u32,
    reservation: Option<Reservation>,
) -> BackfillSlot {
    let cap = |n| config.walltime_cap(n, PriorityClass::Backfill);
    let (nodes, walltime_s) = match reservation {
        _ if free == 0 => (0, 0),
        None => (free, cap(free)),
        Some(r) if r.extra_nodes >= free => (free, cap(free)),
        Some(r) => {
            let window = r.start.since(now);
            if window > 0 {
                (free, window.min(cap(free)))
            } else if r.extra_nodes > 0 {
                (r.extra_nodes, cap(r.extra_nodes))
            } else {
                (0, 0)
            }
        }
    };
    BackfillSlot {
        nodes,
        walltime_s,
        observed_at: now,
    }
}
