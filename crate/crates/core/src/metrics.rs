//! Availability and consumption accounting.
//!
//! All sums are carried in integer core-seconds so that window reports are
//! exactly additive; core-hours are derived only for display.

use std::io;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::simcore::SimTime;

/// One observation of the backfill slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PollRecord {
    #[serde(rename = "timestamp_s")]
    pub observed_at: SimTime,
    pub nodes: u32,
    pub walltime_s: u64,
}

/// Nodes held by one backfill job between `start` and `end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsumptionRecord {
    pub job: u64,
    pub nodes: u32,
    pub start: SimTime,
    pub end: SimTime,
}

impl ConsumptionRecord {
    pub fn core_seconds(&self, cores_per_node: u32) -> u128 {
        u128::from(self.nodes) * u128::from(cores_per_node) * u128::from(self.end.since(self.start))
    }

    pub fn core_hours(&self, cores_per_node: u32) -> f64 {
        core_hours(self.core_seconds(cores_per_node))
    }

    /// Core-seconds falling inside `window`.
    pub fn core_seconds_within(&self, window: Window, cores_per_node: u32) -> u128 {
        let lo = self.start.max(window.start);
        let hi = self.end.min(window.end);
        u128::from(self.nodes) * u128::from(cores_per_node) * u128::from(hi.since(lo))
    }
}

/// Payload outcomes of one finished bundle or pilot, attributed to `at`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OutcomeRecord {
    pub at: SimTime,
    pub jobs_done: u64,
    pub jobs_failed: u64,
    pub events_done: u64,
}

/// Half-open interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: SimTime,
    pub end: SimTime,
}

impl Window {
    pub fn new(start: SimTime, end: SimTime) -> Self {
        debug_assert!(start <= end);
        Window { start, end }
    }

    pub fn contains(&self, t: SimTime) -> bool {
        self.start <= t && t < self.end
    }

    pub fn len_s(&self) -> u64 {
        self.end.since(self.start)
    }
}

/// How a poll converts into availability.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvailabilityCredit {
    /// Each poll credits nodes for one poll interval: availability is a rate
    /// sampled at the poll cadence, so overlapping polls never double-count.
    #[default]
    Rate,
    /// Each poll credits nodes for the whole reported walltime.
    FullWalltime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountingRules {
    pub cores_per_node: u32,
    pub poll_interval_s: u64,
    #[serde(default)]
    pub credit: AvailabilityCredit,
}

impl AccountingRules {
    pub fn poll_core_seconds(&self, p: &PollRecord) -> u128 {
        let secs = match self.credit {
            AvailabilityCredit::Rate => self.poll_interval_s,
            AvailabilityCredit::FullWalltime => p.walltime_s,
        };
        u128::from(p.nodes) * u128::from(self.cores_per_node) * u128::from(secs)
    }
}

pub fn core_hours(core_seconds: u128) -> f64 {
    core_seconds as f64 / 3600.0
}

pub fn total_backfill_availability_core_seconds(
    polls: &[PollRecord],
    window: Window,
    rules: &AccountingRules,
) -> u128 {
    polls
        .iter()
        .filter(|p| window.contains(p.observed_at))
        .map(|p| rules.poll_core_seconds(p))
        .sum()
}

/// Total backfill availability in `window`, in core-hours.
pub fn total_backfill_availability(
    polls: &[PollRecord],
    window: Window,
    rules: &AccountingRules,
) -> f64 {
    core_hours(total_backfill_availability_core_seconds(polls, window, rules))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowReport {
    pub window: Window,
    pub avail_core_seconds: u128,
    pub used_core_seconds: u128,
    pub jobs_done: u64,
    pub jobs_failed: u64,
    pub events_done: u64,
}

impl WindowReport {
    pub fn avail_core_hours(&self) -> f64 {
        core_hours(self.avail_core_seconds)
    }

    pub fn used_core_hours(&self) -> f64 {
        core_hours(self.used_core_seconds)
    }

    /// used / avail; absent when nothing was available.
    pub fn efficiency(&self) -> Option<f64> {
        (self.avail_core_seconds > 0)
            .then(|| self.used_core_seconds as f64 / self.avail_core_seconds as f64)
    }

    /// Field-wise sum of two adjacent windows.
    pub fn merge(&self, next: &WindowReport) -> WindowReport {
        WindowReport {
            window: Window::new(self.window.start, next.window.end),
            avail_core_seconds: self.avail_core_seconds + next.avail_core_seconds,
            used_core_seconds: self.used_core_seconds + next.used_core_seconds,
            jobs_done: self.jobs_done + next.jobs_done,
            jobs_failed: self.jobs_failed + next.jobs_failed,
            events_done: self.events_done + next.events_done,
        }
    }
}

pub fn window_report(
    polls: &[PollRecord],
    consumption: &[ConsumptionRecord],
    outcomes: &[OutcomeRecord],
    window: Window,
    rules: &AccountingRules,
) -> WindowReport {
    let mut report = WindowReport {
        window,
        avail_core_seconds: total_backfill_availability_core_seconds(polls, window, rules),
        used_core_seconds: consumption
            .iter()
            .map(|c| c.core_seconds_within(window, rules.cores_per_node))
            .sum(),
        jobs_done: 0,
        jobs_failed: 0,
        events_done: 0,
    };
    for o in outcomes.iter().filter(|o| window.contains(o.at)) {
        report.jobs_done += o.jobs_done;
        report.jobs_failed += o.jobs_failed;
        report.events_done += o.events_done;
    }
    report
}

/// Consecutive windows of `len_s` seconds covering `[0, horizon)`.
pub fn fixed_windows(horizon: SimTime, len_s: u64) -> Vec<Window> {
    assert!(len_s > 0, "window length must be positive");
    let mut out = Vec::new();
    let mut t = SimTime::ZERO;
    while t < horizon {
        let end = (t + len_s).min(horizon);
        out.push(Window::new(t, end));
        t = end;
    }
    out
}

/// Calendar-month windows over `[0, horizon)` with epoch 0 at midnight of
/// `epoch`. The first and last windows may be partial months.
pub fn calendar_month_windows(epoch: NaiveDate, horizon: SimTime) -> Vec<Window> {
    let mut out = Vec::new();
    let mut start = SimTime::ZERO;
    let mut date = epoch;
    while start < horizon {
        let next_month = if date.month() == 12 {
            NaiveDate::from_ymd_opt(date.year() + 1, 1, 1)
        } else {
            NaiveDate::from_ymd_opt(date.year(), date.month() + 1, 1)
        }
        .expect("valid month start");
        let secs = (next_month - epoch).num_seconds();
        let end = SimTime::from_secs(secs as u64).min(horizon);
        out.push(Window::new(start, end));
        start = end;
        date = next_month;
    }
    out
}

pub fn month_label(epoch: NaiveDate, w: &Window) -> String {
    let d = epoch + Duration::seconds(w.start.secs() as i64);
    format!("{:04}-{:02}", d.year(), d.month())
}

fn fmt_efficiency(e: Option<f64>) -> String {
    e.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// `window_start,window_end,avail_core_hours,used_core_hours,efficiency,jobs_done,jobs_failed`
pub fn write_ledger_csv<W: io::Write>(out: W, reports: &[WindowReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "window_start",
        "window_end",
        "avail_core_hours",
        "used_core_hours",
        "efficiency",
        "jobs_done",
        "jobs_failed",
    ])?;
    for r in reports {
        w.write_record([
            r.window.start.secs().to_string(),
            r.window.end.secs().to_string(),
            format!("{:.3}", r.avail_core_hours()),
            format!("{:.3}", r.used_core_hours()),
            fmt_efficiency(r.efficiency()),
            r.jobs_done.to_string(),
            r.jobs_failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per calendar month, with the month label and events processed.
pub fn write_monthly_csv<W: io::Write>(
    out: W,
    epoch: NaiveDate,
    reports: &[WindowReport],
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "month",
        "window_start",
        "window_end",
        "avail_core_hours",
        "used_core_hours",
        "efficiency",
        "jobs_done",
        "jobs_failed",
        "events_done",
    ])?;
    for r in reports {
        w.write_record([
            month_label(epoch, &r.window),
            r.window.start.secs().to_string(),
            r.window.end.secs().to_string(),
            format!("{:.3}", r.avail_core_hours()),
            format!("{:.3}", r.used_core_hours()),
            fmt_efficiency(r.efficiency()),
            r.jobs_done.to_string(),
            r.jobs_failed.to_string(),
            r.events_done.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: u64) -> SimTime {
        SimTime::from_secs(s)
    }

    fn rules() -> AccountingRules {
        AccountingRules {
            cores_per_node: 16,
            poll_interval_s: 60,
            credit: AvailabilityCredit::Rate,
        }
    }

    fn poll(at: u64, nodes: u32, walltime_s: u64) -> PollRecord {
        PollRecord {
            observed_at: t(at),
            nodes,
            walltime_s,
        }
    }

    #[test]
    fn no_polls_means_no_availability() {
        let w = Window::new(t(0), t(3600));
        assert_eq!(total_backfill_availability(&[], w, &rules()), 0.0);
    }

    #[test]
    fn single_poll_credits_one_interval() {
        let w = Window::new(t(0), t(3600));
        let got = total_backfill_availability(&[poll(0, 691, 7560)], w, &rules());
        let expected = 691.0 * 16.0 * 60.0 / 3600.0;
        assert!((got - expected).abs() < 1e-9);
        assert!((got - 184.2667).abs() < 1e-3);
    }

    #[test]
    fn rate_credit_does_not_depend_on_slot_walltime() {
        let w = Window::new(t(0), t(3600));
        let got = total_backfill_availability(&[poll(0, 10, 30)], w, &rules());
        assert!((got - 10.0 * 16.0 * 60.0 / 3600.0).abs() < 1e-12);
    }

    #[test]
    fn full_walltime_credit_is_available_for_comparison() {
        let r = AccountingRules {
            credit: AvailabilityCredit::FullWalltime,
            ..rules()
        };
        let w = Window::new(t(0), t(3600));
        let got = total_backfill_availability(&[poll(0, 10, 7200)], w, &r);
        assert!((got - 10.0 * 16.0 * 2.0).abs() < 1e-9);
    }

    #[test]
    fn efficiency_is_absent_without_availability() {
        let w = Window::new(t(0), t(100));
        let r = window_report(&[], &[], &[], w, &rules());
        assert_eq!(r.efficiency(), None);
    }

    #[test]
    fn efficiency_bounds() {
        let w = Window::new(t(0), t(120));
        let polls = [poll(0, 4, 600), poll(60, 4, 600)];
        let none = window_report(&polls, &[], &[], w, &rules());
        assert_eq!(none.efficiency(), Some(0.0));
        let all = [ConsumptionRecord {
            job: 0,
            nodes: 4,
            start: t(0),
            end: t(120),
        }];
        let full = window_report(&polls, &all, &[], w, &rules());
        assert_eq!(full.efficiency(), Some(1.0));
    }

    #[test]
    fn consumption_is_clipped_to_the_window() {
        let c = ConsumptionRecord {
            job: 1,
            nodes: 2,
            start: t(50),
            end: t(150),
        };
        assert_eq!(c.core_seconds_within(Window::new(t(0), t(100)), 16), 2 * 16 * 50);
        assert_eq!(c.core_seconds_within(Window::new(t(200), t(300)), 16), 0);
    }

    #[test]
    fn events_identity_over_bundle_outcomes() {
        // 2.25M jobs of 100 events each is 225M events.
        let outcomes = [OutcomeRecord {
            at: t(10),
            jobs_done: 2_250_000,
            jobs_failed: 0,
            events_done: 2_250_000 * 100,
        }];
        let r = window_report(&[], &[], &outcomes, Window::new(t(0), t(20)), &rules());
        assert_eq!(r.events_done, 225_000_000);
        assert_eq!(r.events_done, r.jobs_done * 100);
    }

    #[test]
    fn calendar_months_follow_the_epoch() {
        let epoch = NaiveDate::from_ymd_opt(2016, 1, 1).unwrap();
        let horizon = t((31 + 29 + 10) * 86_400);
        let w = calendar_month_windows(epoch, horizon);
        assert_eq!(w.len(), 3);
        assert_eq!(w[0].len_s(), 31 * 86_400);
        assert_eq!(w[1].len_s(), 29 * 86_400);
        assert_eq!(w[2].end, horizon);
        assert_eq!(month_label(epoch, &w[1]), "2016-02");
    }

    #[test]
    fn ledger_csv_has_the_expected_header() {
        let r = window_report(
            &[poll(0, 1, 3600)],
            &[],
            &[],
            Window::new(t(0), t(60)),
            &rules(),
        );
        let mut buf = Vec::new();
        write_ledger_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "window_start,window_end,avail_core_hours,used_core_hours,efficiency,jobs_done,jobs_failed"
        );
        assert_eq!(lines.next().unwrap(), "0,60,0.267,0.000,0.000000,0,0");
    }

    fn arb_ledger() -> impl Strategy<Value = (Vec<PollRecord>, Vec<ConsumptionRecord>)> {
        // Polls every 60 s; each consumption record takes at most the polled
        // nodes for at most one interval, i.e. backfill-only consumption.
        prop::collection::vec((0u32..50, 1u64..200, 0u32..50, 1u64..=60, 0u64..60), 1..80)
            .prop_map(|rows| {
                let mut polls = Vec::new();
                let mut cons = Vec::new();
                for (i, (nodes, wall, used, dur, off)) in rows.into_iter().enumerate() {
                    let at = i as u64 * 60;
                    polls.push(poll(at, nodes, wall));
                    let used = used.min(nodes);
                    let dur = dur.min(wall).min(60 - off.min(59));
                    if used > 0 && dur > 0 {
                        let start = at + off.min(59);
                        cons.push(ConsumptionRecord {
                            job: i as u64,
                            nodes: used,
                            start: t(start),
                            end: t((start + dur).min(at + 60)),
                        });
                    }
                }
                (polls, cons)
            })
    }

    proptest! {
        #[test]
        fn reports_are_additive((polls, cons) in arb_ledger(), cut in 0u64..5000) {
            let horizon = polls.len() as u64 * 60;
            let cut = cut.min(horizon);
            let outcomes: Vec<OutcomeRecord> = cons
                .iter()
                .map(|c| OutcomeRecord { at: c.end, jobs_done: 1, jobs_failed: 0, events_done: 100 })
                .collect();
            let r = rules();
            let whole = window_report(&polls, &cons, &outcomes, Window::new(t(0), t(horizon)), &r);
            let a = window_report(&polls, &cons, &outcomes, Window::new(t(0), t(cut)), &r);
            let b = window_report(&polls, &cons, &outcomes, Window::new(t(cut), t(horizon)), &r);
            prop_assert_eq!(a.merge(&b), whole);
        }

        #[test]
        fn backfill_only_use_never_exceeds_availability(
            (polls, cons) in arb_ledger(),
            lo in 0u64..80,
            span in 1u64..80,
        ) {
            let w = Window::new(t(lo * 60), t((lo + span) * 60));
            let rep = window_report(&polls, &cons, &[], w, &rules());
            prop_assert!(rep.used_core_seconds <= rep.avail_core_seconds);
        }
    }
}
