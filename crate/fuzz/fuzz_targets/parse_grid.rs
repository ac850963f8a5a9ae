#![no_main]

use libfuzzer_sys::fuzz_target;
use tsqnet::config::RunConfig;
use tsqnet::experiment::{grid_settings, parse_grid};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // One axis per line, applied to the default configuration.
    let Ok(axes) = text
        .lines()
        .take(3)
        .map(parse_grid)
        .collect::<Result<Vec<_>, _>>()
    else {
        return;
    };
    if axes.iter().map(|(_, v)| v.len()).product::<usize>() > 64 {
        return;
    }
    let _ = grid_settings(&RunConfig::default(), &axes);
});
