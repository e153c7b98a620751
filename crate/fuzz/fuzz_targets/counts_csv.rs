#![no_main]

use libfuzzer_sys::fuzz_target;
use scanstat::io::parse_counts;
use scanstat::CellModel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(table) = parse_counts(text) {
        assert_eq!(table.counts.len(), table.ids.len());
        // anything the parser accepts must make a valid model
        CellModel::new(table.counts, table.baselines).expect("parsed counts form a model");
    }
});
