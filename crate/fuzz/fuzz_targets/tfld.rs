#![no_main]
use libfuzzer_sys::fuzz_target;
use tenso::io::{read_tfld, write_tfld};

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = read_tfld(data) {
        let bytes = write_tfld(&f).expect("accepted field must serialize");
        let again = read_tfld(&bytes).expect("written field must parse");
        assert_eq!(write_tfld(&again).unwrap(), bytes);
    }
});
