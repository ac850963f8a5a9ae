#![no_main]

use libfuzzer_sys::fuzz_target;
use tsqnet::io::{decode_vocabulary, encode_vocabulary};

// Input: manifest text, a NUL byte, then the binary payload.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(manifest) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let payload = data.get(split + 1..).unwrap_or(&[]);
    let Ok(vocab) = decode_vocabulary(manifest, payload) else {
        return;
    };
    let (m1, p1) = encode_vocabulary(&vocab, "vocab.bin").expect("decoded vocabulary encodes");
    let again = decode_vocabulary(&m1, &p1).expect("encoded vocabulary decodes");
    let (m2, p2) = encode_vocabulary(&again, "vocab.bin").unwrap();
    assert_eq!((m1, p1), (m2, p2));
});
