#![no_main]

use libfuzzer_sys::fuzz_target;
use tsqnet::io::{decode_dataset, encode_dataset};

// Input: manifest text, a NUL byte, then the binary payload.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(manifest) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let payload = data.get(split + 1..).unwrap_or(&[]);
    let Ok(dataset) = decode_dataset(manifest, payload) else {
        return;
    };
    // Whatever decodes must re-encode to a fixed point.
    let (m1, p1) = encode_dataset(&dataset, "dataset.bin").expect("decoded dataset encodes");
    let again = decode_dataset(&m1, &p1).expect("encoded dataset decodes");
    let (m2, p2) = encode_dataset(&again, "dataset.bin").unwrap();
    assert_eq!((m1, p1), (m2, p2));
});
