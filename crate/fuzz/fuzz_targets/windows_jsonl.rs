#![no_main]

use libfuzzer_sys::fuzz_target;
use scanstat::io::{parse_windows, write_windows, IdMap};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let ids = IdMap::numbered(10);
    if let Ok(family) = parse_windows(text, &ids) {
        let again = parse_windows(&write_windows(&family, &ids), &ids).expect("written family parses");
        assert_eq!(again, family);
    }
});
