#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = coroam::wire::decode(data) {
        let bytes = coroam::wire::encode(&m).expect("decoded message re-encodes");
        assert_eq!(coroam::wire::decode(&bytes).expect("re-encoded message decodes"), m);
    }
});
