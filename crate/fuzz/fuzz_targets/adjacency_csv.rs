#![no_main]

use libfuzzer_sys::fuzz_target;
use scanstat::io::{parse_adjacency, IdMap};
use scanstat::windows::spatial_windows;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let ids = IdMap::numbered(12);
    if let Ok(adjacency) = parse_adjacency(text, &ids) {
        let family = spatial_windows(&adjacency, 2).expect("sizes 1 and 2 are supported");
        assert_eq!(family.len(), 12 + adjacency.edges().len());
    }
});
