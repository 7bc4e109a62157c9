#![no_main]

use coroam::report::Report;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = Report::parse_csv(text) {
        let csv = report.to_csv();
        assert_eq!(Report::parse_csv(&csv).expect("written report parses back"), report);
    }
});
