use proptest::prelude::*;

use hpcsim::broker::{BrokerConfig, PayloadOutcome};
use hpcsim::harness::config::titan_calibrated;
use hpcsim::harness::world::{run_fleet, FleetSpec, SlotSource};
use hpcsim::metrics::{fixed_windows, window_report, AccountingRules, AvailabilityCredit};
use hpcsim::scheduler::ClusterConfig;
use hpcsim::workload::{IoProfile, IoProfileParams, PayloadModel};

fn spec(seed: u64, brokers: u32, poll_mult: u64, min_queued: u32, days: u64) -> FleetSpec {
    let (mut background, stage) = titan_calibrated();
    background.min_queued = min_queued;
    let broker = BrokerConfig {
        n_brokers: brokers,
        poll_interval_s: 60 * poll_mult,
        stage_in: stage,
        stage_out: stage,
        ..BrokerConfig::default()
    };
    FleetSpec {
        cluster: ClusterConfig::titan(),
        source: SlotSource::Synthetic(background),
        broker,
        payload: PayloadModel::default(),
        io: IoProfile::new(&IoProfileParams::default()).unwrap(),
        rules: AccountingRules {
            cores_per_node: 16,
            poll_interval_s: 60,
            credit: AvailabilityCredit::Rate,
        },
        warmup_s: 6 * 3600,
        horizon_s: days * 86_400,
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Consumption stays inside availability in every hour, the fleet never
    /// holds more bundles than brokers, every bundle respects the floors, and
    /// every payload settles exactly once.
    #[test]
    fn fleet_invariants(
        seed in any::<u64>(),
        brokers in 1u32..=24,
        poll_mult in 1u64..=3,
        min_queued in 2u32..=16,
    ) {
        let s = spec(seed, brokers, poll_mult, min_queued, 2);
        let o = run_fleet(&s).unwrap();
        for w in fixed_windows(o.horizon, 3_600) {
            let r = window_report(&o.polls, &o.consumption, &o.outcomes, w, &s.rules);
            prop_assert!(r.used_core_seconds <= r.avail_core_seconds, "window {:?}", w);
        }
        prop_assert!(o.max_active_bundles <= brokers);
        let cfg = &s.broker;
        for b in &o.bundles {
            prop_assert!(b.walltime_s >= cfg.min_slot_walltime_s);
            prop_assert!((cfg.min_nodes_per_bundle..=cfg.max_nodes_per_bundle).contains(&b.nodes));
            prop_assert_eq!(b.payloads.len() as u32, b.nodes);
        }
        let settled: Vec<_> = o.bundles.iter().filter(|b| b.end.is_some()).collect();
        let done = settled
            .iter()
            .flat_map(|b| &b.payloads)
            .filter(|p| p.outcome == Some(PayloadOutcome::Done))
            .count() as u64;
        let total = settled.iter().map(|b| b.payloads.len() as u64).sum::<u64>();
        prop_assert!(settled.iter().flat_map(|b| &b.payloads).all(|p| p.outcome.is_some()));
        prop_assert_eq!(o.totals.done, done);
        prop_assert_eq!(o.totals.done + o.totals.failed, total);
        prop_assert_eq!(o.totals.events_done, done * u64::from(cfg.events_per_job));
    }
}

#[test]
fn replaying_a_live_run_respects_the_floors_and_availability() {
    let live = spec(3, 20, 1, 12, 3);
    let polls = run_fleet(&live).unwrap().polls;
    let replay = FleetSpec {
        source: SlotSource::Replay(polls),
        warmup_s: 0,
        ..live
    };
    let o = run_fleet(&replay).unwrap();
    assert!(!o.bundles.is_empty());
    assert!(o.max_active_bundles <= 20);
    let r = window_report(&o.polls, &o.consumption, &o.outcomes, o.window(), &replay.rules);
    assert!(r.used_core_seconds <= r.avail_core_seconds);
    assert_eq!(o.background_utilization, 0.0);
}
