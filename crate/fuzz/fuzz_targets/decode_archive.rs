#![no_main]

use libfuzzer_sys::fuzz_target;
use tsqnet::io::TensorArchive;

// Input: manifest text, a NUL byte, then the binary payload.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(manifest) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let payload = data.get(split + 1..).unwrap_or(&[]);
    let Ok(archive) = TensorArchive::decode(manifest, payload) else {
        return;
    };
    let (m1, p1) = archive
        .encode("model.bin")
        .expect("decoded archive encodes");
    let again = TensorArchive::decode(&m1, &p1).expect("encoded archive decodes");
    let (m2, p2) = again.encode("model.bin").unwrap();
    assert_eq!((m1, p1), (m2, p2));
});
