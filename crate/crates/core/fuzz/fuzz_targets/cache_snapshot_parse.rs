#![no_main]

use coroam::cache::Cache;
use coroam::time::SimTime;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cache) = Cache::from_snapshot(text, SimTime::ZERO) {
        let snap = cache.to_snapshot();
        let again = Cache::from_snapshot(&snap, SimTime::ZERO).expect("snapshot parses back");
        assert_eq!(again.to_snapshot(), snap);
    }
});
