#![no_main]

use libfuzzer_sys::fuzz_target;
use scanstat::io::parse_assignment;
use scanstat::windows::{partition_by_assignment, temporal_windows};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(groups) = parse_assignment(text) else { return };
    let family = temporal_windows(6, 3).unwrap();
    if let Ok(parts) = partition_by_assignment(&family, &groups) {
        assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), family.len());
    }
});
