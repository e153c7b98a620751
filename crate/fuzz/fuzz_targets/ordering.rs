#![no_main]

use libfuzzer_sys::fuzz_target;
use scanstat::io::{parse_ordering, IdMap};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let ids = IdMap::numbered(9);
    if let Ok(ordering) = parse_ordering(text, &ids) {
        for position in 0..ordering.len() {
            assert_eq!(ordering.position_of(ordering.vertex_at(position)), position);
        }
    }
});
