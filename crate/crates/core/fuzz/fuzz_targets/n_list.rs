#![no_main]

use std::collections::HashSet;

use libfuzzer_sys::fuzz_target;
use stoq::config::parse_n_list;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(ns) = parse_n_list(text) else { return };
    assert!(!ns.is_empty());
    assert!(ns.iter().all(|&n| n > 0));
    assert_eq!(ns.iter().collect::<HashSet<_>>().len(), ns.len());
});
