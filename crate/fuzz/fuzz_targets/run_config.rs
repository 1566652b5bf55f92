#![no_main]
use std::path::Path;

use libfuzzer_sys::fuzz_target;
use tenso::io::RunConfig;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = RunConfig::parse(text, Path::new("/nonexistent")) {
        let _ = cfg.validate();
        let _ = cfg.antenna_pairs();
    }
});
