mod support;

use coroam::relay::AuthMechanism;
use coroam::report::{compare, ModeSummary, Report, SummaryReport};
use coroam::sim::{run, Mode};
use support::{conservation, loss_bound, mean, scenario, within};

const ALL_SCENARIOS: [&str; 7] =
    ["paper_open", "paper_80211i", "fake_ap_liar", "dos_redirector", "bad_amn", "relay_abuser", "spoofer"];

#[test]
fn open_network_matches_measurements() {
    let cfg = scenario("paper_open");
    let cr = run(&cfg, Mode::Cr, 1).unwrap();
    let legacy = run(&cfg, Mode::Legacy, 1).unwrap();
    assert_eq!(cr.records.len(), 30);
    let m = |f: &dyn Fn(&coroam::protocol::HandoffRecord) -> f64| mean(cr.records.iter().map(f));
    let l2 = m(&|r| r.l2.as_millis_f64());
    let l3 = m(&|r| r.l3.as_millis_f64());
    let total = m(&|r| r.total().as_millis_f64());
    let loss = m(&|r| r.lost_pkts as f64);
    assert!(within(l2, 4.2, 0.15), "l2 {l2}");
    assert!(within(l3, 11.4, 0.15), "l3 {l3}");
    assert!(within(total, 15.6, 0.15), "total {total}");
    assert!(within(loss, 1.3, 0.15), "loss {loss}");
    let legacy_total = mean(legacy.records.iter().map(|r| r.total().as_millis_f64()));
    assert!(within(legacy_total, 1210.0, 0.10), "legacy {legacy_total}");
    let ratio = total / legacy_total;
    assert!((ratio - 0.013).abs() <= 0.005, "ratio {ratio}");
}

#[test]
fn protected_network_overlaps_authentication() {
    let cfg = scenario("paper_80211i");
    let cr = run(&cfg, Mode::Cr, 1).unwrap();
    assert!(cr.records.iter().all(|r| r.overlapped && r.used_relay), "every handoff relayed");
    let total = mean(cr.records.iter().map(|r| r.total().as_millis_f64()));
    assert!(within(total, 21.0, 0.15), "cr {total}");
    let base = run(&cfg, Mode::Legacy, 1).unwrap();
    for (mech, target) in
        [(AuthMechanism::EapTls1024, 1580.0), (AuthMechanism::EapTls2048, 1669.0), (AuthMechanism::PeapMschapv2, 1531.0)]
    {
        let t = mean(base.records.iter().filter(|r| r.auth == mech).map(|r| r.total().as_millis_f64()));
        assert!(within(t, target, 0.10), "{mech}: {t}");
    }
}

#[test]
fn streams_conserve_packets_and_losses_stay_bounded() {
    for name in ALL_SCENARIOS {
        let cfg = scenario(name);
        for mode in [Mode::Cr, Mode::Legacy] {
            for seed in 1..=3 {
                let r = run(&cfg, mode, seed).unwrap();
                conservation(&r).unwrap_or_else(|e| panic!("{name}/{mode}/{seed}: {e}"));
                loss_bound(&r).unwrap_or_else(|e| panic!("{name}/{mode}/{seed}: {e}"));
            }
        }
    }
}

#[test]
fn same_seed_same_bytes() {
    for name in ALL_SCENARIOS {
        let cfg = scenario(name);
        for mode in [Mode::Cr, Mode::Legacy] {
            let a = run(&cfg, mode, 42).unwrap();
            let b = run(&cfg, mode, 42).unwrap();
            let csv = |r| Report::from_runs(&[r]).unwrap().to_csv();
            assert_eq!(a.trace_text(), b.trace_text(), "{name}");
            assert_eq!(a.security_text(), b.security_text(), "{name}");
            assert_eq!(a.audit_text(), b.audit_text(), "{name}");
            assert_eq!(a.lease_table, b.lease_table, "{name}");
            assert_eq!(csv(a), csv(b), "{name}");
        }
    }
}

#[test]
fn different_seeds_differ() {
    let cfg = scenario("paper_open");
    let a = run(&cfg, Mode::Cr, 1).unwrap();
    let b = run(&cfg, Mode::Cr, 2).unwrap();
    assert_ne!(a.trace_text(), b.trace_text());
}

#[test]
fn csv_from_real_runs_parses_back_and_summaries_recompute() {
    let cfg = scenario("paper_80211i");
    let runs: Vec<_> = (1..=3).map(|s| run(&cfg, Mode::Cr, s).unwrap()).collect();
    let report = Report::from_runs(&runs).unwrap();
    let text = report.to_csv();
    assert_eq!(Report::parse_csv(&text).unwrap(), report);

    // Recompute the mean total from the raw text, the way an external
    // script would.
    let mut lines = text.lines().skip(1);
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "total_ms").unwrap();
    let totals: Vec<f64> = lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    assert_eq!(totals.len(), 3 * 105);
    let s = ModeSummary::of(&report);
    assert!((s.total.mean - mean(totals)).abs() < 1e-9);
}

#[test]
fn summary_and_comparison_of_both_modes() {
    let cfg = scenario("paper_open");
    let cr = Report::from_runs(&[run(&cfg, Mode::Cr, 1).unwrap()]).unwrap();
    let legacy = Report::from_runs(&[run(&cfg, Mode::Legacy, 1).unwrap()]).unwrap();
    let summary = SummaryReport::new(&[cr.clone(), legacy.clone()]).unwrap();
    let ratio = summary.ratio().unwrap();
    assert!(ratio > 0.0 && ratio <= 1.0);
    let c = compare(&cr, &legacy).unwrap();
    let total = c.rows.iter().find(|r| r.metric == "total_ms").unwrap();
    assert!((total.ratio - ratio).abs() < 1e-12);

    let other = Report::from_runs(&[run(&scenario("bad_amn"), Mode::Cr, 1).unwrap()]).unwrap();
    assert!(compare(&cr, &other).is_err());
}

#[test]
fn bundled_scenarios_have_distinct_topologies() {
    let prints: std::collections::BTreeSet<String> =
        ALL_SCENARIOS.iter().map(|n| coroam::sim::topology_fingerprint(&scenario(n))).collect();
    assert_eq!(prints.len(), ALL_SCENARIOS.len());
}
