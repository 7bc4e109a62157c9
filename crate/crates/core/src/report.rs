//! Handoff reports: the per-handoff CSV, summaries and side-by-side comparison.
//!
//! CSV layout, one file per mode:
//!
//! ```text
//! # scenario=paper_open fingerprint=3f2a9c0d11e4b7a8 mode=cr seed=1
//! rep,node,from_ap,to_ap,auth,l2_ms,l3_ms,auth_ms,total_ms,overlapped,lost_pkts,used_relay,used_cache,legacy_fallback
//! 0,02:00:00:00:00:01,02:00:00:00:10:00,02:00:00:00:10:01,open,4.012,11.370,0.000,15.382,false,1,false,true,false
//! ```
//!
//! Durations are milliseconds with three decimals, which is exactly the
//! simulator's microsecond resolution. `total_ms` is derived
//! (`l2 + l3`, plus `auth` unless `overlapped`) and is checked on parse.
//! Repetition `rep` ran with seed `seed + rep`.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::protocol::HandoffRecord;
use crate::relay::AuthMechanism;
use crate::sim::{Mode, RunReport};
use crate::time::SimDuration;
use crate::wire::MacAddress;

pub const COLUMNS: [&str; 14] = [
    "rep",
    "node",
    "from_ap",
    "to_ap",
    "auth",
    "l2_ms",
    "l3_ms",
    "auth_ms",
    "total_ms",
    "overlapped",
    "lost_pkts",
    "used_relay",
    "used_cache",
    "legacy_fallback",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing `# scenario=... fingerprint=... mode=... seed=...` header line")]
    MissingHeader,
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("unexpected columns: {0}")]
    BadColumns(String),
    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error("reports describe different topologies ({a} vs {b})")]
    TopologyMismatch { a: String, b: String },
    #[error("no reports to merge")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportHeader {
    pub scenario: String,
    pub fingerprint: String,
    pub mode: Mode,
    pub seed: u64,
}

impl fmt::Display for ReportHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "# scenario={} fingerprint={} mode={} seed={}",
            self.scenario, self.fingerprint, self.mode, self.seed
        )
    }
}

impl FromStr for ReportHeader {
    type Err = ReportError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let body = line.strip_prefix('#').ok_or(ReportError::MissingHeader)?;
        let mut fields = BTreeMap::new();
        for tok in body.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| ReportError::BadHeader(format!("`{tok}` is not key=value")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| ReportError::BadHeader(format!("missing `{k}`")));
        Ok(ReportHeader {
            scenario: get("scenario")?.to_string(),
            fingerprint: get("fingerprint")?.to_string(),
            mode: get("mode")?.parse().map_err(ReportError::BadHeader)?,
            seed: get("seed")?.parse().map_err(|_| ReportError::BadHeader("seed is not an integer".into()))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportRow {
    pub rep: u32,
    pub record: HandoffRecord,
}

/// Every handoff of one mode across all repetitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub header: ReportHeader,
    pub rows: Vec<ReportRow>,
}

impl Report {
    /// Merges repetitions of one scenario and mode. `runs[i]` is repetition
    /// `i`; the header seed is that of the first run.
    pub fn from_runs(runs: &[RunReport]) -> Result<Report, ReportError> {
        let first = runs.first().ok_or(ReportError::Empty)?;
        let mut rows = Vec::new();
        for (rep, run) in runs.iter().enumerate() {
            if run.fingerprint != first.fingerprint {
                return Err(ReportError::TopologyMismatch { a: first.fingerprint.clone(), b: run.fingerprint.clone() });
            }
            rows.extend(run.records.iter().map(|r| ReportRow { rep: rep as u32, record: r.clone() }));
        }
        Ok(Report {
            header: ReportHeader {
                scenario: first.scenario.clone(),
                fingerprint: first.fingerprint.clone(),
                mode: first.mode,
                seed: first.seed,
            },
            rows,
        })
    }

    pub fn records(&self) -> impl Iterator<Item = &HandoffRecord> {
        self.rows.iter().map(|r| &r.record)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", self.header);
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        // Writing to a Vec cannot fail.
        w.write_record(COLUMNS).expect("in-memory write");
        for row in &self.rows {
            let r = &row.record;
            w.write_record([
                row.rep.to_string(),
                r.node.to_string(),
                r.from_ap.to_string(),
                r.to_ap.to_string(),
                r.auth.to_string(),
                ms(r.l2),
                ms(r.l3),
                ms(r.auth_time),
                ms(r.total()),
                r.overlapped.to_string(),
                r.lost_pkts.to_string(),
                r.used_relay.to_string(),
                r.used_cache.to_string(),
                r.legacy_fallback.to_string(),
            ])
            .expect("in-memory write");
        }
        let bytes = w.into_inner().expect("in-memory flush");
        out.push_str(std::str::from_utf8(&bytes).expect("ascii fields"));
        out
    }

    pub fn parse_csv(text: &str) -> Result<Report, ReportError> {
        let (first, rest) = text.split_once('\n').ok_or(ReportError::MissingHeader)?;
        let header: ReportHeader = first.trim_end_matches('\r').parse()?;
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
        let cols = rd.headers()?.clone();
        if cols.iter().ne(COLUMNS) {
            return Err(ReportError::BadColumns(cols.iter().collect::<Vec<_>>().join(",")));
        }
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let row = parse_row(&rec).map_err(|message| ReportError::BadRow { row: i + 1, message })?;
            rows.push(row);
        }
        Ok(Report { header, rows })
    }
}

fn ms(d: SimDuration) -> String {
    format!("{:.3}", d.as_millis_f64())
}

fn parse_ms(s: &str) -> Result<SimDuration, String> {
    // Parse as integer microseconds to stay exact.
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() || frac.len() > 3 || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(format!("`{s}` is not a millisecond value with at most three decimals"));
    }
    let mut frac = frac.to_string();
    while frac.len() < 3 {
        frac.push('0');
    }
    let whole: u64 = int.parse().map_err(|_| format!("`{s}` out of range"))?;
    let micros = whole
        .checked_mul(1000)
        .and_then(|w| w.checked_add(frac.parse::<u64>().unwrap_or(0)))
        .ok_or_else(|| format!("`{s}` out of range"))?;
    Ok(SimDuration::from_micros(micros))
}

fn parse_row(rec: &csv::StringRecord) -> Result<ReportRow, String> {
    if rec.len() != COLUMNS.len() {
        return Err(format!("expected {} fields, found {}", COLUMNS.len(), rec.len()));
    }
    let f = |i: usize| &rec[i];
    let mac = |i: usize| f(i).parse::<MacAddress>().map_err(|e| e.to_string());
    let flag = |i: usize| f(i).parse::<bool>().map_err(|_| format!("{}: `{}` is not true/false", COLUMNS[i], f(i)));
    let record = HandoffRecord {
        node: mac(1)?,
        from_ap: mac(2)?,
        to_ap: mac(3)?,
        auth: f(4).parse::<AuthMechanism>()?,
        l2: parse_ms(f(5))?,
        l3: parse_ms(f(6))?,
        auth_time: parse_ms(f(7))?,
        overlapped: flag(9)?,
        lost_pkts: f(10).parse().map_err(|_| format!("lost_pkts: `{}` is not an integer", f(10)))?,
        used_relay: flag(11)?,
        used_cache: flag(12)?,
        legacy_fallback: flag(13)?,
    };
    let total = parse_ms(f(8))?;
    if total != record.total() {
        return Err(format!("total_ms {} disagrees with its components ({})", f(8), ms(record.total())));
    }
    let rep = f(0).parse().map_err(|_| format!("rep: `{}` is not an integer", f(0)))?;
    Ok(ReportRow { rep, record })
}

/// Mean and median of one column.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    pub mean: f64,
    pub median: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat::default();
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        let median = if v.len().is_multiple_of(2) { (v[mid - 1] + v[mid]) / 2.0 } else { v[mid] };
        Stat { mean, median }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub mode: Mode,
    pub handoffs: usize,
    pub l2: Stat,
    pub l3: Stat,
    pub auth: Stat,
    pub total: Stat,
    pub loss: Stat,
    /// Total handoff time per authentication mechanism.
    pub by_auth: BTreeMap<AuthMechanism, (usize, Stat)>,
}

impl ModeSummary {
    pub fn of(report: &Report) -> ModeSummary {
        let col = |f: &dyn Fn(&HandoffRecord) -> f64| Stat::of(&report.records().map(f).collect::<Vec<_>>());
        let mut groups: BTreeMap<AuthMechanism, Vec<f64>> = BTreeMap::new();
        for r in report.records() {
            groups.entry(r.auth).or_default().push(r.total().as_millis_f64());
        }
        ModeSummary {
            mode: report.header.mode,
            handoffs: report.rows.len(),
            l2: col(&|r| r.l2.as_millis_f64()),
            l3: col(&|r| r.l3.as_millis_f64()),
            auth: col(&|r| r.auth_time.as_millis_f64()),
            total: col(&|r| r.total().as_millis_f64()),
            loss: col(&|r| r.lost_pkts as f64),
            by_auth: groups.into_iter().map(|(k, v)| (k, (v.len(), Stat::of(&v)))).collect(),
        }
    }

    fn metrics(&self) -> [(&'static str, Stat); 5] {
        [
            ("l2_ms", self.l2),
            ("l3_ms", self.l3),
            ("auth_ms", self.auth),
            ("total_ms", self.total),
            ("lost_pkts", self.loss),
        ]
    }
}

/// Per-mode summaries of one scenario; `ratio` is cr total / legacy total.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryReport {
    pub scenario: String,
    pub fingerprint: String,
    pub modes: Vec<ModeSummary>,
}

impl SummaryReport {
    pub fn new(reports: &[Report]) -> Result<SummaryReport, ReportError> {
        let first = reports.first().ok_or(ReportError::Empty)?;
        for r in reports {
            check_topology(&first.header, &r.header)?;
        }
        Ok(SummaryReport {
            scenario: first.header.scenario.clone(),
            fingerprint: first.header.fingerprint.clone(),
            modes: reports.iter().map(ModeSummary::of).collect(),
        })
    }

    pub fn mode(&self, mode: Mode) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn ratio(&self) -> Option<f64> {
        let cr = self.mode(Mode::Cr)?;
        let legacy = self.mode(Mode::Legacy)?;
        Some(ratio(cr.total.mean, legacy.total.mean))
    }
}

impl fmt::Display for SummaryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario {} (topology {})", self.scenario, self.fingerprint)?;
        for m in &self.modes {
            writeln!(f)?;
            writeln!(f, "mode {}: {} handoffs", m.mode, m.handoffs)?;
            writeln!(f, "  {:<10} {:>12} {:>12}", "metric", "mean", "median")?;
            for (name, s) in m.metrics() {
                writeln!(f, "  {:<10} {:>12.3} {:>12.3}", name, s.mean, s.median)?;
            }
            for (auth, (n, s)) in &m.by_auth {
                writeln!(f, "  total_ms[{auth}] n={n} mean={:.3} median={:.3}", s.mean, s.median)?;
            }
        }
        if let Some(r) = self.ratio() {
            writeln!(f)?;
            writeln!(f, "ratio cr/legacy total_ms: {r:.4} ({:.2}%)", r * 100.0)?;
        }
        Ok(())
    }
}

fn check_topology(a: &ReportHeader, b: &ReportHeader) -> Result<(), ReportError> {
    if a.fingerprint != b.fingerprint {
        return Err(ReportError::TopologyMismatch { a: a.fingerprint.clone(), b: b.fingerprint.clone() });
    }
    Ok(())
}

/// `a / b`, taking 0/0 as 1 so identical all-zero columns compare equal.
pub fn ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        1.0
    } else {
        a / b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    pub ratio: f64,
}

/// Side-by-side means of two reports over the same topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub a: ReportHeader,
    pub b: ReportHeader,
    pub rows: Vec<CompareRow>,
}

pub fn compare(a: &Report, b: &Report) -> Result<Comparison, ReportError> {
    check_topology(&a.header, &b.header)?;
    let sa = ModeSummary::of(a);
    let sb = ModeSummary::of(b);
    let mut rows: Vec<CompareRow> = sa
        .metrics()
        .into_iter()
        .zip(sb.metrics())
        .map(|((name, x), (_, y))| CompareRow { metric: name.to_string(), a: x.mean, b: y.mean, ratio: ratio(x.mean, y.mean) })
        .collect();
    let auths: std::collections::BTreeSet<_> = sa.by_auth.keys().chain(sb.by_auth.keys()).copied().collect();
    for auth in auths {
        let x = sa.by_auth.get(&auth).map_or(0.0, |(_, s)| s.mean);
        let y = sb.by_auth.get(&auth).map_or(0.0, |(_, s)| s.mean);
        rows.push(CompareRow { metric: format!("total_ms[{auth}]"), a: x, b: y, ratio: ratio(x, y) });
    }
    Ok(Comparison { a: a.header.clone(), b: b.header.clone(), rows })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = |h: &ReportHeader| format!("{}@{}", h.mode, h.seed);
        let (la, lb) = (label(&self.a), label(&self.b));
        let mut out = String::new();
        let _ = writeln!(out, "scenario {} (topology {})", self.a.scenario, self.a.fingerprint);
        let _ = writeln!(out, "{:<24} {:>12} {:>12} {:>10}", "metric", la, lb, "a/b");
        for r in &self.rows {
            let _ = writeln!(out, "{:<24} {:>12.3} {:>12.3} {:>10.4}", r.metric, r.a, r.b, r.ratio);
        }
        f.write_str(&out)
    }
}
