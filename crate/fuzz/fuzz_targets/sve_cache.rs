#![no_main]
use libfuzzer_sys::fuzz_target;
use tenso::sve::SveSystem;

fuzz_target!(|data: &[u8]| {
    let _ = SveSystem::from_bytes(data);
});
