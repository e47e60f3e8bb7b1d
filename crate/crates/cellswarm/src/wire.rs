//! Canonical JSON rendering shared by the message codec, trace stream,
//! metrics documents, and scenario files.
//!
//! Canonical form: object keys sorted lexicographically, no insignificant
//! whitespace, numbers in shortest round-trip decimal form. Identical
//! values always render to identical bytes.

use serde::Serialize;
use serde_json::Value;

/// Renders any serializable value to canonical JSON bytes.
///
/// Serialization goes through `serde_json::Value`, whose object map is a
/// `BTreeMap`, so keys come out sorted regardless of struct field order.
pub fn canonical_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    serde_json::to_vec(&v)
}

pub fn canonical_string<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}

/// Pretty variant with sorted keys, used for human-edited documents such
/// as scenario files and metrics reports.
pub fn pretty_string<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let v: Value = serde_json::to_value(value)?;
    serde_json::to_string_pretty(&v)
}
