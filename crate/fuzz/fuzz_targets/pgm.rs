#![no_main]
use libfuzzer_sys::fuzz_target;
use tenso::io::read_pgm16;

fuzz_target!(|data: &[u8]| {
    let _ = read_pgm16(data);
});
