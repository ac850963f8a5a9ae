#![no_main]

use libfuzzer_sys::fuzz_target;
use tsqnet::metrics::FlopsConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(cfg) = serde_json::from_slice::<FlopsConfig>(data) else {
        return;
    };
    if let Ok(b) = cfg.breakdown() {
        let _ = b.render();
    }
});
