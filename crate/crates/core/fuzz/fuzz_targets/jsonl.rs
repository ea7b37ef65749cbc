#![no_main]

use libfuzzer_sys::fuzz_target;
use stoq::output::{read_jsonl, write_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(values) = read_jsonl::<_, serde_json::Value>(data) else { return };
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &values).unwrap();
    let again: Vec<serde_json::Value> = read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(again, values);
});
