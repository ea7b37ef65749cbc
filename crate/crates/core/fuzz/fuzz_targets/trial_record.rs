#![no_main]

use libfuzzer_sys::fuzz_target;
use stoq::ssmc::TrialRecord;

fuzz_target!(|data: &[u8]| {
    let Ok(rec) = serde_json::from_slice::<TrialRecord>(data) else { return };
    let text = serde_json::to_string(&rec).unwrap();
    let back: TrialRecord = serde_json::from_str(&text).unwrap();
    assert_eq!(back, rec);
});
