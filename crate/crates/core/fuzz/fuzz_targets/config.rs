#![no_main]

use libfuzzer_sys::fuzz_target;
use stoq::config::ProblemConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = ProblemConfig::from_json(text) else { return };
    // Accepted configs build an instance and survive a round trip.
    let inst = cfg.instance().expect("validated config builds");
    let _ = cfg.schedule_for(&inst);
    let back = ProblemConfig::from_json(&cfg.to_json()).expect("re-parse");
    assert_eq!(back, cfg);
});
