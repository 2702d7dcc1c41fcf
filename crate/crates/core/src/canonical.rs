//! Canonical JSON: keys sorted lexicographically, no insignificant whitespace.
//!
//! Bundles, wire frames and event-log lines are all written through here so
//! that equal values always produce equal bytes.

use serde::Serialize;

/// Serializes `value` to canonical JSON bytes.
pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<Vec<u8>> {
    // `serde_json::Value` keeps object keys in a BTreeMap, so a round trip
    // through it sorts every nested object.
    let tree = serde_json::to_value(value)?;
    serde_json::to_vec(&tree)
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let bytes = to_vec(value)?;
    Ok(String::from_utf8(bytes).expect("serde_json emits UTF-8"))
}
