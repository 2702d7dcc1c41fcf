//! Test support: the fixture corpus, a seeded random model generator and a
//! reference explorer for interaction soundness that shares no code with the
//! checker in `sbpm-core`.

pub mod generate;
pub mod interp;
pub mod oracle;

use std::path::PathBuf;

use sbpm_core::model::{parse_model_dir, FileMap, ProcessModel};

/// Names of the checked-in fixture models.
pub const FIXTURES: &[&str] = &["ping-pong", "mutual-wait", "direction-flip", "order", "stream", "firehose"];

pub fn fixture_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Parses a checked-in fixture, panicking on failure.
pub fn fixture(name: &str) -> ProcessModel {
    parse_model_dir(&fixture_dir(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

/// Raw files of a fixture, for tests that edit XML before parsing.
pub fn fixture_files(name: &str) -> FileMap {
    let mut files = FileMap::new();
    for entry in std::fs::read_dir(fixture_dir(name)).expect("fixture directory") {
        let path = entry.expect("directory entry").path();
        let file = path.file_name().unwrap().to_string_lossy().into_owned();
        files.insert(file, std::fs::read(&path).expect("fixture file"));
    }
    files
}

/// Replaces `from` with `to` in one file of `files`, panicking if absent.
pub fn edit(files: &mut FileMap, file: &str, from: &str, to: &str) {
    let text = String::from_utf8(files[file].clone()).expect("utf-8 fixture");
    assert!(text.contains(from), "{file} does not contain {from:?}");
    files.insert(file.to_string(), text.replacen(from, to, 1).into_bytes());
}
