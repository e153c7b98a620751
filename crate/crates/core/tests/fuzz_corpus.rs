//! Replays the checked-in fuzz seeds through the same checks the fuzz targets
//! make, so the parsers' contracts are exercised on every test run.

use std::fs;
use std::path::PathBuf;

use scanstat::io::{self, IdMap};
use scanstat::windows::{partition_by_assignment, spatial_windows, temporal_windows};
use scanstat::CellModel;

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, String)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|entry| {
            let path = entry.unwrap().path();
            (path.display().to_string(), String::from_utf8_lossy(&fs::read(&path).unwrap()).into_owned())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn counts_seeds() {
    for (name, text) in seeds("counts_csv") {
        let table = io::parse_counts(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(table.counts.len(), table.ids.len());
        CellModel::new(table.counts, table.baselines).unwrap();
    }
}

#[test]
fn adjacency_seeds() {
    let ids = IdMap::numbered(12);
    for (name, text) in seeds("adjacency_csv") {
        let adjacency = io::parse_adjacency(&text, &ids).unwrap_or_else(|e| panic!("{name}: {e}"));
        let family = spatial_windows(&adjacency, 2).unwrap();
        assert_eq!(family.len(), 12 + adjacency.edges().len());
    }
}

#[test]
fn windows_seeds() {
    let ids = IdMap::numbered(10);
    for (name, text) in seeds("windows_jsonl") {
        let family = io::parse_windows(&text, &ids).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(io::parse_windows(&io::write_windows(&family, &ids), &ids).unwrap(), family);
    }
}

#[test]
fn ordering_seeds() {
    let ids = IdMap::numbered(9);
    for (_, text) in seeds("ordering") {
        if let Ok(ordering) = io::parse_ordering(&text, &ids) {
            for position in 0..ordering.len() {
                assert_eq!(ordering.position_of(ordering.vertex_at(position)), position);
            }
        }
    }
}

#[test]
fn assignment_seeds() {
    let family = temporal_windows(6, 3).unwrap();
    for (name, text) in seeds("assignment") {
        let groups = io::parse_assignment(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        if let Ok(parts) = partition_by_assignment(&family, &groups) {
            assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), family.len());
        }
    }
}

#[test]
fn data_files_parse() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let monthly = io::parse_counts(&fs::read_to_string(root.join("monthly/counts.csv")).unwrap()).unwrap();
    assert_eq!(monthly.counts.iter().sum::<u32>(), 62);
    let nine = io::parse_counts(&fs::read_to_string(root.join("nine-districts/counts.csv")).unwrap()).unwrap();
    let family = io::parse_windows(&fs::read_to_string(root.join("nine-districts/windows.jsonl")).unwrap(), &nine.ids).unwrap();
    assert_eq!(family, scanstat::fixtures::z20_windows());
    let ordering = io::parse_ordering(&fs::read_to_string(root.join("nine-districts/ordering.txt")).unwrap(), &nine.ids).unwrap();
    assert_eq!(ordering, scanstat::fixtures::reference_ordering());
}
