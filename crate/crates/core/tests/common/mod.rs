//! Brute-force EASY backfill oracle and a driver that runs it side by side
//! with the real scheduler.
//!
//! The oracle decides a backfill candidate by literally recomputing the head
//! job's earliest start, second by second, with the candidate added. It shares
//! no code with the scheduler.

#![allow(dead_code)]

use std::collections::BTreeSet;

use hpcsim::scheduler::{ClusterConfig, JobId, JobRequest, PriorityClass, Scheduler};
use hpcsim::simcore::SimTime;
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct InstanceJob {
    pub submit: u64,
    pub nodes: u32,
    pub walltime: u64,
    pub runtime: u64,
    pub class: PriorityClass,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub total: u32,
    pub jobs: Vec<InstanceJob>,
}

/// Up to 8 nodes and 12 jobs with both priority classes.
pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let total = rng.random_range(1..=8);
    let n = rng.random_range(1..=12);
    let jobs = (0..n)
        .map(|_| {
            let walltime = rng.random_range(1..=30);
            InstanceJob {
                submit: rng.random_range(0..=20),
                nodes: rng.random_range(1..=total),
                walltime,
                runtime: rng.random_range(1..=walltime),
                class: if rng.random_bool(0.5) {
                    PriorityClass::Capability
                } else {
                    PriorityClass::Backfill
                },
            }
        })
        .collect();
    Instance { total, jobs }
}

#[derive(Debug, Clone)]
struct OJob {
    nodes: u32,
    walltime: u64,
    class: PriorityClass,
    submit: u64,
    start: Option<u64>,
    end: Option<u64>,
}

pub struct Oracle {
    total: u32,
    jobs: Vec<OJob>,
}

impl Oracle {
    pub fn new(total: u32) -> Self {
        Oracle {
            total,
            jobs: Vec::new(),
        }
    }

    /// First second from `now` at which `need` nodes are idle, treating the
    /// jobs in `extra` as started at `now`.
    fn earliest(&self, now: u64, need: u32, extra: &[usize]) -> u64 {
        (now..)
            .find(|&t| {
                let busy = self
                    .jobs
                    .iter()
                    .enumerate()
                    .filter(|(i, j)| (j.start.is_some() && j.end.is_none()) || extra.contains(i))
                    .filter(|(i, j)| {
                        let s = if extra.contains(i) { now } else { j.start.unwrap() };
                        s + j.walltime > t
                    })
                    .map(|(_, j)| j.nodes)
                    .sum::<u32>();
                self.total - busy >= need
            })
            .expect("everything ends eventually")
    }

    fn free_now(&self, extra: &[usize]) -> u32 {
        let busy: u32 = self
            .jobs
            .iter()
            .enumerate()
            .filter(|(i, j)| (j.start.is_some() && j.end.is_none()) || extra.contains(i))
            .map(|(_, j)| j.nodes)
            .sum();
        self.total - busy
    }

    fn queue(&self) -> Vec<usize> {
        let mut q: Vec<usize> = (0..self.jobs.len())
            .filter(|&i| self.jobs[i].start.is_none())
            .collect();
        q.sort_by_key(|&i| (self.jobs[i].class, self.jobs[i].submit, i));
        q
    }

    fn pass(&mut self, now: u64) -> Vec<usize> {
        let mut started = Vec::new();
        loop {
            let q = self.queue();
            match q.first() {
                Some(&h) if self.jobs[h].nodes <= self.free_now(&[]) => {
                    self.jobs[h].start = Some(now);
                    started.push(h);
                }
                _ => break,
            }
        }
        let q = self.queue();
        if let Some((&head, rest)) = q.split_first() {
            let need = self.jobs[head].nodes;
            let shadow = self.earliest(now, need, &[]);
            let mut chosen: Vec<usize> = Vec::new();
            for &c in rest {
                let mut trial = chosen.clone();
                trial.push(c);
                if self.jobs[c].nodes <= self.free_now(&chosen)
                    && self.earliest(now, need, &trial) <= shadow
                {
                    chosen = trial;
                }
            }
            for &c in &chosen {
                self.jobs[c].start = Some(now);
            }
            started.extend(chosen);
        }
        started
    }

    pub fn submit(&mut self, j: &InstanceJob, now: u64) -> Vec<usize> {
        self.jobs.push(OJob {
            nodes: j.nodes,
            walltime: j.walltime,
            class: j.class,
            submit: now,
            start: None,
            end: None,
        });
        self.pass(now)
    }

    pub fn end(&mut self, id: usize, now: u64) -> Vec<usize> {
        self.jobs[id].end = Some(now);
        self.pass(now)
    }
}

/// Per-event dispatch sets from the scheduler and the oracle.
#[derive(Debug, PartialEq, Eq)]
pub struct Trace {
    pub starts: Vec<Option<u64>>,
    pub steps: Vec<Vec<usize>>,
}

/// Drive both with the same events: at each instant, completions (by job
/// index) before submissions (by job index); one pass after each event.
pub fn run_both(inst: &Instance) -> (Trace, Trace) {
    let mut sched = Scheduler::new(ClusterConfig::uniform(inst.total, 16, 1_000)).unwrap();
    let mut oracle = Oracle::new(inst.total);
    let mut order: Vec<usize> = (0..inst.jobs.len()).collect();
    order.sort_by_key(|&i| (inst.jobs[i].submit, i));
    // Index in submission order, which is also the scheduler's job id.
    let jobs: Vec<InstanceJob> = order.iter().map(|&i| inst.jobs[i]).collect();

    let mut ends: BTreeSet<(u64, usize)> = BTreeSet::new();
    let (mut s_steps, mut o_steps) = (Vec::new(), Vec::new());
    let mut next_submit = 0;
    loop {
        let t_end = ends.first().map(|k| k.0);
        let t_sub = jobs.get(next_submit).map(|j| j.submit);
        let (is_end, now) = match (t_end, t_sub) {
            (None, None) => break,
            (Some(e), Some(s)) if e <= s => (true, e),
            (Some(e), None) => (true, e),
            (_, Some(s)) => (false, s),
        };
        let at = SimTime::from_secs(now);
        let mut o_started = if is_end {
            let &(_, id) = ends.iter().next().unwrap();
            ends.remove(&(now, id));
            sched.terminate(JobId(id as u64), at).unwrap();
            oracle.end(id, now)
        } else {
            let j = jobs[next_submit];
            sched
                .submit(
                    JobRequest {
                        nodes: j.nodes,
                        walltime_s: j.walltime,
                        class: j.class,
                    },
                    at,
                )
                .unwrap();
            next_submit += 1;
            oracle.submit(&j, now)
        };
        let mut s_started: Vec<usize> = sched
            .take_dispatched()
            .into_iter()
            .map(|id| id.0 as usize)
            .collect();
        s_started.sort_unstable();
        o_started.sort_unstable();
        for &id in &s_started {
            ends.insert((now + jobs[id].runtime, id));
        }
        s_steps.push(s_started);
        o_steps.push(o_started);
    }
    let s_starts = sched.jobs().iter().map(|j| j.start.map(|s| s.secs())).collect();
    let o_starts = oracle.jobs.iter().map(|j| j.start).collect();
    (
        Trace {
            starts: s_starts,
            steps: s_steps,
        },
        Trace {
            starts: o_starts,
            steps: o_steps,
        },
    )
}
