#![no_main]

use latassist::dataset::{read_demos, write_demos};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Anything that parses must survive a write/read cycle unchanged.
    if let Ok(set) = read_demos(data) {
        let mut buf = Vec::new();
        write_demos(&set, &mut buf).unwrap();
        assert_eq!(read_demos(buf.as_slice()).unwrap(), set);
    }
});
