mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hpcsim::scheduler::{ClusterConfig, JobRequest, PriorityClass, Scheduler, WalltimeBand};
use hpcsim::simcore::SimTime;

/// Small cluster with two walltime bands so slot capping is exercised.
fn small_cluster(total: u32) -> ClusterConfig {
    let mut c = ClusterConfig::uniform(total, 16, 400);
    if total > 2 {
        c.walltime_bands = vec![
            WalltimeBand {
                max_nodes: total / 2,
                capability_cap_s: 400,
                backfill_cap_s: 120,
            },
            WalltimeBand {
                max_nodes: total,
                capability_cap_s: 400,
                backfill_cap_s: 400,
            },
        ];
    }
    c
}

fn class(bf: bool) -> PriorityClass {
    if bf {
        PriorityClass::Backfill
    } else {
        PriorityClass::Capability
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matches_the_brute_force_oracle(seed in any::<u64>()) {
        let inst = common::random_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        let (sched, oracle) = common::run_both(&inst);
        prop_assert_eq!(sched, oracle);
    }

    /// Submitting exactly the reported slot starts at once, never moves the
    /// head's reservation, and never overcommits the machine.
    #[test]
    fn reported_slots_are_honest_and_safe(
        total in 1u32..=16,
        jobs in proptest::collection::vec((0u64..50, 1u32..=16, 1u64..=400, any::<bool>()), 0..20),
    ) {
        let cluster = small_cluster(total);
        let mut s = Scheduler::new(cluster.clone()).unwrap();
        let mut now = SimTime::ZERO;
        for (dt, nodes, wall, bf) in jobs {
            now = now + dt;
            let c = class(bf);
            let nodes = nodes.min(total);
            let req = JobRequest { nodes, walltime_s: wall.min(cluster.walltime_cap(nodes, c)), class: c };
            s.submit(req, now).unwrap();
            prop_assert!(s.busy_nodes() <= total);
            // Let the earliest running job finish now and then.
            if dt % 3 == 0 {
                if let Some(&id) = s.running().first() {
                    s.terminate(id, now).unwrap();
                }
            }
        }
        let before = s.reservation();
        let slot = s.query_backfill(now);
        if slot.nodes > 0 {
            let id = s
                .submit(
                    JobRequest { nodes: slot.nodes, walltime_s: slot.walltime_s, class: PriorityClass::Backfill },
                    now,
                )
                .unwrap();
            prop_assert_eq!(s.job(id).unwrap().start, Some(now));
            prop_assert!(s.busy_nodes() <= total);
            if let (Some(b), Some(a)) = (before, s.reservation()) {
                if a.job == b.job {
                    prop_assert_eq!(a.start, b.start);
                }
            }
        }
    }
}
