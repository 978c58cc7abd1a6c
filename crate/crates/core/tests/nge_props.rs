use std::collections::BTreeMap;

use proptest::prelude::*;

use hpcsim::nge::{OverheadModel, PilotDesc, Session, UnitState};
use hpcsim::scheduler::{ClusterConfig, PriorityClass};
use hpcsim::simcore::SimTime;
use hpcsim::workload::{ContentionModel, EventDurationParams, PayloadModel, SetupModel, SimJobSpec};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Units on a node never overlap, generations count the units each node
    /// finished, and every dispatched unit is accounted for at teardown, late
    /// arrivals included.
    #[test]
    fn pilots_conserve_and_serialize_units(
        seed in any::<u64>(),
        nodes in 1u32..=12,
        first in 0usize..40,
        late in 0usize..20,
        late_at in 0u64..20_000,
        walltime in 3_600u64..=21_600,
        exit_when_idle in any::<bool>(),
    ) {
        let payload = PayloadModel::new(
            EventDurationParams { min_s: 120.0, max_s: 2400.0, mean_s: 840.0, sigma: 0.8 },
            ContentionModel::default(),
            SetupModel::default(),
        )
        .unwrap();
        let cluster = ClusterConfig::uniform(16, 16, 86_400);
        let mut s = Session::new(cluster, payload, OverheadModel::default(), seed).unwrap();
        let p = s
            .submit_pilot(PilotDesc { nodes, walltime_s: walltime, class: PriorityClass::Capability, exit_when_idle })
            .unwrap();
        let spec = SimJobSpec { events: 16, slots_per_node: 16 };
        s.dispatch_units(p, &vec![spec; first]).unwrap();
        s.run_until(SimTime::from_secs(late_at));
        s.dispatch_units(p, &vec![spec; late]).unwrap();
        s.run();
        let r = s.pilot_report(p).unwrap();

        prop_assert_eq!(r.units_dispatched, first + late);
        prop_assert_eq!(r.units_done + r.units_incomplete + r.units_pending, r.units_dispatched);
        prop_assert!(r.pilot_duration_s <= walltime);

        let mut by_node: BTreeMap<u32, Vec<(SimTime, SimTime, UnitState)>> = BTreeMap::new();
        for sp in &r.spans {
            prop_assert!(sp.node < nodes);
            by_node.entry(sp.node).or_default().push((sp.start, sp.end, sp.state));
        }
        let mut most_done = 0;
        for spans in by_node.values_mut() {
            spans.sort_by_key(|x| (x.0, x.1));
            for w in spans.windows(2) {
                prop_assert!(w[0].1 <= w[1].0, "overlap on a node: {:?}", w);
            }
            most_done = most_done.max(spans.iter().filter(|x| x.2 == UnitState::Done).count() as u32);
        }
        prop_assert_eq!(r.generations, most_done);
    }
}
