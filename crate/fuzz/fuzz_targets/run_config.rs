#![no_main]

use libfuzzer_sys::fuzz_target;
use tsqnet::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = RunConfig::from_json(text) else {
        return;
    };
    if cfg.validate().is_err() {
        return;
    }
    let echoed = serde_json::to_string(&cfg).expect("config serializes");
    let back = RunConfig::from_json(&echoed).expect("echoed config parses");
    assert_eq!(serde_json::to_string(&back).unwrap(), echoed);
});
