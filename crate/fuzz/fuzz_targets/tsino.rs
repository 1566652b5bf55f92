#![no_main]
use libfuzzer_sys::fuzz_target;
use tenso::io::{read_tsino, write_tsino};

fuzz_target!(|data: &[u8]| {
    // Anything the reader accepts must survive a write/read cycle unchanged.
    if let Ok(g) = read_tsino(data) {
        let bytes = write_tsino(&g).expect("accepted sinogram must serialize");
        let again = read_tsino(&bytes).expect("written sinogram must parse");
        assert_eq!(write_tsino(&again).unwrap(), bytes);
    }
});
