mod support;

use coroam::sim::{run, Mode};
use coroam::wire::MacAddress;
use proptest::prelude::*;
use support::{check_proxy_identity, scenario, within};

proptest! {
    #[test]
    fn proxy_binding_matches_direct_binding(
        rmn in 1u32..500,
        amn in 500u32..1000,
        others in prop::collection::vec(1u32..1000, 0..20),
        xid in any::<u32>(),
    ) {
        let others: Vec<MacAddress> = others.into_iter().map(MacAddress::local).collect();
        check_proxy_identity(MacAddress::local(rmn), MacAddress::local(amn), &others, xid)
            .map_err(TestCaseError::fail)?;
    }
}

#[test]
fn simulated_proxy_exchanges_are_broadcast_and_take_dhcp_time() {
    let cfg = scenario("paper_open");
    let mut durations = Vec::new();
    for seed in 1..=40 {
        let r = run(&cfg, Mode::Cr, seed).unwrap();
        assert!(!r.metrics.proxy_exchanges.is_empty());
        for x in &r.metrics.proxy_exchanges {
            assert!(x.broadcast, "{x:?}");
            assert!(x.ok, "{x:?}");
            durations.push(x.duration.as_millis_f64());
        }
    }
    let m = support::mean(durations.iter().copied());
    assert!(within(m, 867.0, 0.10), "mean proxy exchange {m:.1} ms");
}

#[test]
fn lease_table_names_the_roaming_node() {
    let cfg = scenario("paper_open");
    let r = run(&cfg, Mode::Cr, 1).unwrap();
    let mn = cfg.nodes[cfg.node_index("mn").unwrap()].mac.to_string();
    let rows: Vec<&str> = r.lease_table.lines().filter(|l| l.contains(&mn)).collect();
    // One binding per subnet for the roaming node, never one for its helpers.
    assert_eq!(rows.len(), 2, "{}", r.lease_table);
    for x in &r.metrics.proxy_exchanges {
        assert!(!r.lease_table.lines().any(|l| l.contains(&x.amn.to_string()) && l.contains(&x.rmn.to_string())));
    }
}
