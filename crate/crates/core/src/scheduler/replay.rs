use crate::metrics::PollRecord;
use crate::simcore::SimTime;

use super::BackfillSlot;

/// Backfill slot source driven by a recorded poll trace instead of a live
/// scheduler.
///
/// A query at `now` answers with the latest record at or before `now`, less
/// the nodes the caller already holds: recorded slots count nodes as free
/// whether or not a replaying consumer occupies them. Before the first
/// record the slot is empty.
#[derive(Debug, Clone)]
pub struct PollReplay {
    records: Vec<PollRecord>,
    cursor: usize,
}

impl PollReplay {
    pub fn new(mut records: Vec<PollRecord>) -> Self {
        records.sort_by_key(|r| r.observed_at);
        PollReplay { records, cursor: 0 }
    }

    pub fn records(&self) -> &[PollRecord] {
        &self.records
    }

    pub fn last_time(&self) -> Option<SimTime> {
        self.records.last().map(|r| r.observed_at)
    }

    fn advance(&mut self, now: SimTime) -> Option<&PollRecord> {
        while self.cursor + 1 < self.records.len() && self.records[self.cursor + 1].observed_at <= now
        {
            self.cursor += 1;
        }
        self.records
            .get(self.cursor)
            .filter(|r| r.observed_at <= now)
    }

    /// Slot at `now`. Queries must be made in non-decreasing time order.
    pub fn query(&mut self, now: SimTime, held_nodes: u32) -> BackfillSlot {
        let Some(rec) = self.advance(now).copied() else {
            return BackfillSlot::empty(now);
        };
        let nodes = rec.nodes.saturating_sub(held_nodes);
        let walltime_s = rec.walltime_s.saturating_sub(now.since(rec.observed_at));
        if nodes == 0 || walltime_s == 0 {
            return BackfillSlot::empty(now);
        }
        BackfillSlot {
            nodes,
            walltime_s,
            observed_at: now,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(at: u64, nodes: u32, walltime_s: u64) -> PollRecord {
        PollRecord {
            observed_at: SimTime::from_secs(at),
            nodes,
            walltime_s,
        }
    }

    #[test]
    fn empty_before_the_first_record() {
        let mut r = PollReplay::new(vec![rec(60, 100, 7200)]);
        assert_eq!(r.query(SimTime::from_secs(10), 0).nodes, 0);
    }

    #[test]
    fn records_are_returned_verbatim_at_their_timestamp() {
        let mut r = PollReplay::new(vec![rec(60, 100, 7200), rec(0, 50, 3600)]);
        let s = r.query(SimTime::ZERO, 0);
        assert_eq!((s.nodes, s.walltime_s), (50, 3600));
        let s = r.query(SimTime::from_secs(60), 0);
        assert_eq!((s.nodes, s.walltime_s), (100, 7200));
    }

    #[test]
    fn walltime_ages_between_records() {
        let mut r = PollReplay::new(vec![rec(0, 50, 3600)]);
        let s = r.query(SimTime::from_secs(30), 0);
        assert_eq!((s.nodes, s.walltime_s), (50, 3570));
    }

    #[test]
    fn held_nodes_are_not_offered_again() {
        let mut r = PollReplay::new(vec![rec(0, 100, 7200)]);
        assert_eq!(r.query(SimTime::ZERO, 70).nodes, 30);
        assert_eq!(r.query(SimTime::ZERO, 100).nodes, 0);
    }
}
