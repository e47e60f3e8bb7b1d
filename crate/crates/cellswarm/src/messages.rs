//! The eight command-and-control message types and their canonical,
//! bit-exact wire encoding.
//!
//! Every message is a UTF-8 JSON object with a top-level `"type"`
//! discriminator (snake_case message name), keys sorted lexicographically,
//! no insignificant whitespace, and shortest round-trip numbers. The same
//! encoding is used by the in-process simulated transport and the optional
//! UDP transport (one message per datagram).

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{ip_wire, role_wire, Imei, MachineId, NetworkTableEntry, Role};
use crate::wire;

pub mod udp;

/// Codec failures. Encoding only ever reports `InvalidMessage`; decoding
/// reports the other three.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

/// Why a machine announces itself to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryCause {
    Initial,
    Reconnection,
}

/// Why a machine leaves. `FailureAlert` is the leader's proactive bail-out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitCause {
    Normal,
    FailureAlert,
}

/// Why a transition was requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionCause {
    Scheduled,
    Emergency,
}

/// Why the leader refused a transition request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionFailureCause {
    NotTopScore,
    Illegitimate,
    Busy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryNotification {
    pub source_machine_id: MachineId,
    pub destination_machine_id: MachineId,
    pub timestamp: f64,
    pub imei: Imei,
    #[serde(with = "role_wire")]
    pub role: Role,
    pub performance: f64,
    #[serde(with = "ip_wire")]
    pub ip_address: Option<Ipv4Addr>,
    pub gps_x: f64,
    pub gps_y: f64,
    pub gps_z: f64,
    pub cause: EntryCause,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryNotificationReply {
    pub source_machine_id: MachineId,
    pub destination_machine_id: MachineId,
    pub timestamp: f64,
    pub selection_timer_interval: f64,
    pub heartbeat_timer_interval: f64,
    pub evaluation_timer_interval: f64,
    /// Seconds until the next performance evaluation cycle.
    pub estimated_performance: f64,
    /// Seconds until the next leader selection cycle.
    pub estimated_leader_selection: f64,
    pub network_table_entries: Vec<NetworkTableEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitNotification {
    pub source_machine_id: MachineId,
    pub destination_machine_id: MachineId,
    pub timestamp: f64,
    #[serde(with = "role_wire")]
    pub role: Role,
    pub cause: ExitCause,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerformanceReport {
    pub source_machine_id: MachineId,
    pub destination_machine_id: MachineId,
    pub timestamp: f64,
    pub performance_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeartbeatNotification {
    pub source_machine_id: MachineId,
    pub destination_machine_id: MachineId,
    pub timestamp: f64,
    pub cellular_status: u8,
    pub vehicle_type: u8,
    pub autopilot: u8,
    pub base_mode: u8,
    pub system_status: u8,
    /// Velocities in the north, east and down directions, m/s.
    pub vn: f64,
    pub ve: f64,
    pub vd: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Degrees in [0, 360).
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRequest {
    pub source_machine_id: MachineId,
    pub destination_machine_id: MachineId,
    pub timestamp: f64,
    pub candidate_score: f64,
    pub cause: TransitionCause,
    pub network_status: String,
    pub transition_plan: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionAlert {
    pub source_machine_id: MachineId,
    pub destination_machine_id: MachineId,
    pub timestamp: f64,
    pub approved_candidate_id: MachineId,
    pub transition_start_time: f64,
    pub network_configuration_change: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionFailure {
    pub source_machine_id: MachineId,
    pub destination_machine_id: MachineId,
    pub timestamp: f64,
    pub failure_cause: TransitionFailureCause,
    pub retry_policy: String,
    pub suggestive_action: String,
    pub supporting_data: String,
}

/// Tagged union of all command-and-control messages.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    EntryNotification(EntryNotification),
    EntryNotificationReply(EntryNotificationReply),
    ExitNotification(ExitNotification),
    PerformanceReport(PerformanceReport),
    HeartbeatNotification(HeartbeatNotification),
    TransitionRequest(TransitionRequest),
    TransitionAlert(TransitionAlert),
    TransitionFailure(TransitionFailure),
}

impl Message {
    /// Wire discriminator carried in the `"type"` field.
    pub fn type_name(&self) -> &'static str {
        match self {
            Message::EntryNotification(_) => "entry_notification",
            Message::EntryNotificationReply(_) => "entry_notification_reply",
            Message::ExitNotification(_) => "exit_notification",
            Message::PerformanceReport(_) => "performance_report",
            Message::HeartbeatNotification(_) => "heartbeat_notification",
            Message::TransitionRequest(_) => "transition_request",
            Message::TransitionAlert(_) => "transition_alert",
            Message::TransitionFailure(_) => "transition_failure",
        }
    }

    pub const TYPE_NAMES: [&'static str; 8] = [
        "entry_notification",
        "entry_notification_reply",
        "exit_notification",
        "performance_report",
        "heartbeat_notification",
        "transition_request",
        "transition_alert",
        "transition_failure",
    ];

    pub fn source(&self) -> &MachineId {
        match self {
            Message::EntryNotification(m) => &m.source_machine_id,
            Message::EntryNotificationReply(m) => &m.source_machine_id,
            Message::ExitNotification(m) => &m.source_machine_id,
            Message::PerformanceReport(m) => &m.source_machine_id,
            Message::HeartbeatNotification(m) => &m.source_machine_id,
            Message::TransitionRequest(m) => &m.source_machine_id,
            Message::TransitionAlert(m) => &m.source_machine_id,
            Message::TransitionFailure(m) => &m.source_machine_id,
        }
    }

    pub fn destination(&self) -> &MachineId {
        match self {
            Message::EntryNotification(m) => &m.destination_machine_id,
            Message::EntryNotificationReply(m) => &m.destination_machine_id,
            Message::ExitNotification(m) => &m.destination_machine_id,
            Message::PerformanceReport(m) => &m.destination_machine_id,
            Message::HeartbeatNotification(m) => &m.destination_machine_id,
            Message::TransitionRequest(m) => &m.destination_machine_id,
            Message::TransitionAlert(m) => &m.destination_machine_id,
            Message::TransitionFailure(m) => &m.destination_machine_id,
        }
    }

    pub fn timestamp(&self) -> f64 {
        match self {
            Message::EntryNotification(m) => m.timestamp,
            Message::EntryNotificationReply(m) => m.timestamp,
            Message::ExitNotification(m) => m.timestamp,
            Message::PerformanceReport(m) => m.timestamp,
            Message::HeartbeatNotification(m) => m.timestamp,
            Message::TransitionRequest(m) => m.timestamp,
            Message::TransitionAlert(m) => m.timestamp,
            Message::TransitionFailure(m) => m.timestamp,
        }
    }

    /// Checks the per-type invariants that define message validity.
    pub fn validate(&self) -> Result<(), String> {
        fn finite(name: &str, v: f64) -> Result<(), String> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(format!("{name} must be finite, got {v}"))
            }
        }
        fn score_range(name: &str, v: f64) -> Result<(), String> {
            finite(name, v)?;
            if (0.0..=100.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} must be in [0,100], got {v}"))
            }
        }

        match self {
            Message::EntryNotification(m) => {
                finite("timestamp", m.timestamp)?;
                score_range("performance", m.performance)?;
                for (name, v) in [("gps_x", m.gps_x), ("gps_y", m.gps_y), ("gps_z", m.gps_z)] {
                    finite(name, v)?;
                }
                if m.role.wire_code().is_none() {
                    return Err("entry notification role must be leader or follower".into());
                }
                if m.cause == EntryCause::Reconnection && m.performance != 0.0 {
                    return Err(format!(
                        "reconnection entries must carry performance 0, got {}",
                        m.performance
                    ));
                }
                Ok(())
            }
            Message::EntryNotificationReply(m) => {
                finite("timestamp", m.timestamp)?;
                for (name, v) in [
                    ("selection_timer_interval", m.selection_timer_interval),
                    ("heartbeat_timer_interval", m.heartbeat_timer_interval),
                    ("evaluation_timer_interval", m.evaluation_timer_interval),
                ] {
                    finite(name, v)?;
                    if v <= 0.0 {
                        return Err(format!("{name} must be positive, got {v}"));
                    }
                }
                finite("estimated_performance", m.estimated_performance)?;
                finite("estimated_leader_selection", m.estimated_leader_selection)?;
                if m.estimated_performance < 0.0
                    || m.estimated_performance > m.evaluation_timer_interval
                {
                    return Err(format!(
                        "estimated_performance must be in [0, {}], got {}",
                        m.evaluation_timer_interval, m.estimated_performance
                    ));
                }
                if m.estimated_leader_selection < 0.0
                    || m.estimated_leader_selection > m.selection_timer_interval
                {
                    return Err(format!(
                        "estimated_leader_selection must be in [0, {}], got {}",
                        m.selection_timer_interval, m.estimated_leader_selection
                    ));
                }
                for entry in &m.network_table_entries {
                    score_range("table entry score", entry.score)?;
                    if !entry.coords.is_finite() {
                        return Err("table entry coordinates must be finite".into());
                    }
                }
                Ok(())
            }
            Message::ExitNotification(m) => {
                finite("timestamp", m.timestamp)?;
                if m.role.wire_code().is_none() {
                    return Err("exit notification role must be leader or follower".into());
                }
                if m.cause == ExitCause::FailureAlert && m.role != Role::Leader {
                    return Err("failure_alert exits are only permitted from a leader".into());
                }
                Ok(())
            }
            Message::PerformanceReport(m) => {
                finite("timestamp", m.timestamp)?;
                score_range("performance_score", m.performance_score)
            }
            Message::HeartbeatNotification(m) => {
                finite("timestamp", m.timestamp)?;
                for (name, v) in [
                    ("vn", m.vn),
                    ("ve", m.ve),
                    ("vd", m.vd),
                    ("x", m.x),
                    ("y", m.y),
                    ("z", m.z),
                ] {
                    finite(name, v)?;
                }
                finite("heading", m.heading)?;
                if !(0.0..360.0).contains(&m.heading) {
                    return Err(format!("heading must be in [0,360), got {}", m.heading));
                }
                Ok(())
            }
            Message::TransitionRequest(m) => {
                finite("timestamp", m.timestamp)?;
                score_range("candidate_score", m.candidate_score)
            }
            Message::TransitionAlert(m) => {
                finite("timestamp", m.timestamp)?;
                finite("transition_start_time", m.transition_start_time)?;
                if m.transition_start_time < m.timestamp {
                    return Err(format!(
                        "transition_start_time {} precedes timestamp {}",
                        m.transition_start_time, m.timestamp
                    ));
                }
                Ok(())
            }
            Message::TransitionFailure(m) => finite("timestamp", m.timestamp),
        }
    }
}

macro_rules! message_from {
    ($($variant:ident),+) => {
        $(impl From<$variant> for Message {
            fn from(m: $variant) -> Message {
                Message::$variant(m)
            }
        })+
    };
}
message_from!(
    EntryNotification,
    EntryNotificationReply,
    ExitNotification,
    PerformanceReport,
    HeartbeatNotification,
    TransitionRequest,
    TransitionAlert,
    TransitionFailure
);

/// Encodes a message to its canonical byte form.
pub fn encode(msg: &Message) -> Result<Vec<u8>, CodecError> {
    msg.validate().map_err(CodecError::InvalidMessage)?;
    let mut value = match msg {
        Message::EntryNotification(m) => serde_json::to_value(m),
        Message::EntryNotificationReply(m) => serde_json::to_value(m),
        Message::ExitNotification(m) => serde_json::to_value(m),
        Message::PerformanceReport(m) => serde_json::to_value(m),
        Message::HeartbeatNotification(m) => serde_json::to_value(m),
        Message::TransitionRequest(m) => serde_json::to_value(m),
        Message::TransitionAlert(m) => serde_json::to_value(m),
        Message::TransitionFailure(m) => serde_json::to_value(m),
    }
    .map_err(|e| CodecError::InvalidMessage(e.to_string()))?;

    let obj = value.as_object_mut().expect("message serializes to an object");
    obj.insert("type".to_string(), Value::String(msg.type_name().to_string()));
    wire::canonical_bytes(&value).map_err(|e| CodecError::InvalidMessage(e.to_string()))
}

/// Decodes canonical bytes back into a message. Inverse of [`encode`] on
/// its image; rejects unknown types, missing or extra fields, wrong
/// primitive kinds, and invariant violations.
pub fn decode(bytes: &[u8]) -> Result<Message, CodecError> {
    let value: Value = serde_json::from_slice(bytes)
        .map_err(|e| CodecError::MalformedMessage(e.to_string()))?;

    let mut obj = match value {
        Value::Object(obj) => obj,
        other => {
            return Err(CodecError::SchemaViolation(format!(
                "expected a JSON object, got {other}"
            )))
        }
    };
    let type_name = match obj.remove("type") {
        Some(Value::String(s)) => s,
        Some(other) => {
            return Err(CodecError::SchemaViolation(format!(
                "\"type\" must be a string, got {other}"
            )))
        }
        None => return Err(CodecError::SchemaViolation("missing \"type\" field".into())),
    };

    let rest = Value::Object(obj);
    let schema = |e: serde_json::Error| CodecError::SchemaViolation(e.to_string());
    let msg = match type_name.as_str() {
        "entry_notification" => {
            Message::EntryNotification(serde_json::from_value(rest).map_err(schema)?)
        }
        "entry_notification_reply" => {
            Message::EntryNotificationReply(serde_json::from_value(rest).map_err(schema)?)
        }
        "exit_notification" => {
            Message::ExitNotification(serde_json::from_value(rest).map_err(schema)?)
        }
        "performance_report" => {
            Message::PerformanceReport(serde_json::from_value(rest).map_err(schema)?)
        }
        "heartbeat_notification" => {
            Message::HeartbeatNotification(serde_json::from_value(rest).map_err(schema)?)
        }
        "transition_request" => {
            Message::TransitionRequest(serde_json::from_value(rest).map_err(schema)?)
        }
        "transition_alert" => {
            Message::TransitionAlert(serde_json::from_value(rest).map_err(schema)?)
        }
        "transition_failure" => {
            Message::TransitionFailure(serde_json::from_value(rest).map_err(schema)?)
        }
        _ => return Err(CodecError::UnknownType(type_name)),
    };

    msg.validate().map_err(CodecError::SchemaViolation)?;
    Ok(msg)
}

/// Re-entry rule: a reconnecting machine must announce itself with a zero
/// score so it rejoins with temporary low privileges.
pub fn validate_reentry(msg: &EntryNotification) -> bool {
    msg.cause != EntryCause::Reconnection || msg.performance == 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{MachineIdentity, Position};

    fn exit_alert() -> ExitNotification {
        ExitNotification {
            source_machine_id: MachineId::from("A1"),
            destination_machine_id: MachineId::from("B2"),
            timestamp: 10.0,
            role: Role::Leader,
            cause: ExitCause::FailureAlert,
        }
    }

    fn heartbeat() -> HeartbeatNotification {
        HeartbeatNotification {
            source_machine_id: MachineId::from("A1"),
            destination_machine_id: MachineId::from("B2"),
            timestamp: 3.0,
            cellular_status: 0,
            vehicle_type: 0,
            autopilot: 0,
            base_mode: 0,
            system_status: 0,
            vn: 2.0,
            ve: 0.0,
            vd: 0.0,
            x: 1.0,
            y: 2.0,
            z: 10.0,
            heading: 90.0,
        }
    }

    fn table_entry(id: &str, ip: &str, role: Role, score: f64) -> NetworkTableEntry {
        NetworkTableEntry {
            machine: MachineIdentity {
                id: MachineId::from(id),
                imei: Imei::new("900000000000009").unwrap(),
            },
            session_ip: Some(ip.parse().unwrap()),
            coords: Position::new(1.0, 2.0, 3.0),
            role,
            score,
        }
    }

    #[test]
    fn exit_alert_encodes_with_sorted_keys() {
        let bytes = encode(&exit_alert().into()).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains(r#""cause":"failure_alert""#));
        // sorted keys: cause < destination_machine_id < role < source_machine_id < timestamp < type
        let keys: Vec<usize> = ["\"cause\"", "\"destination_machine_id\"", "\"role\"",
            "\"source_machine_id\"", "\"timestamp\"", "\"type\""]
            .iter()
            .map(|k| text.find(k).unwrap())
            .collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
        assert!(!text.contains(' '));
    }

    #[test]
    fn failure_alert_from_follower_is_invalid() {
        let mut m = exit_alert();
        m.role = Role::Follower;
        assert!(matches!(encode(&m.into()), Err(CodecError::InvalidMessage(_))));
    }

    #[test]
    fn heading_at_360_is_rejected() {
        let mut m = heartbeat();
        m.heading = 360.0;
        assert!(matches!(encode(&m.into()), Err(CodecError::InvalidMessage(_))));
    }

    #[test]
    fn performance_report_round_trips() {
        let report = Message::PerformanceReport(PerformanceReport {
            source_machine_id: MachineId::from("B2"),
            destination_machine_id: MachineId::from("A1"),
            timestamp: 12.0,
            performance_score: 72.3,
        });
        let bytes = encode(&report).unwrap();
        assert_eq!(decode(&bytes).unwrap(), report);
    }

    #[test]
    fn encode_after_decode_is_identity_on_canonical_bytes() {
        let reply = Message::EntryNotificationReply(EntryNotificationReply {
            source_machine_id: MachineId::from("A1"),
            destination_machine_id: MachineId::from("B2"),
            timestamp: 6.01,
            selection_timer_interval: 26.0,
            heartbeat_timer_interval: 3.0,
            evaluation_timer_interval: 6.0,
            estimated_performance: 3.49,
            estimated_leader_selection: 23.49,
            network_table_entries: vec![
                table_entry("A1", "10.45.0.1", Role::Leader, 100.0),
                table_entry("B2", "10.45.0.2", Role::Follower, 0.0),
            ],
        });
        let bytes = encode(&reply).unwrap();
        let again = encode(&decode(&bytes).unwrap()).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn unknown_type_is_rejected() {
        let err = decode(br#"{"type":"warp_drive"}"#).unwrap_err();
        assert_eq!(err, CodecError::UnknownType("warp_drive".into()));
    }

    #[test]
    fn garbage_is_malformed() {
        assert!(matches!(decode(b"{nope"), Err(CodecError::MalformedMessage(_))));
        assert!(matches!(decode(b""), Err(CodecError::MalformedMessage(_))));
    }

    #[test]
    fn missing_type_and_non_object_are_schema_violations() {
        assert!(matches!(decode(b"{}"), Err(CodecError::SchemaViolation(_))));
        assert!(matches!(decode(b"[1,2]"), Err(CodecError::SchemaViolation(_))));
    }

    #[test]
    fn out_of_range_score_is_schema_violation() {
        let raw = br#"{"destination_machine_id":"A1","performance_score":120.0,"source_machine_id":"B2","timestamp":1.0,"type":"performance_report"}"#;
        assert!(matches!(decode(raw), Err(CodecError::SchemaViolation(_))));
    }

    #[test]
    fn extra_fields_are_schema_violations() {
        let raw = br#"{"destination_machine_id":"A1","extra":1,"performance_score":50.0,"source_machine_id":"B2","timestamp":1.0,"type":"performance_report"}"#;
        assert!(matches!(decode(raw), Err(CodecError::SchemaViolation(_))));
    }

    #[test]
    fn reentry_rule() {
        let mut entry = EntryNotification {
            source_machine_id: MachineId::from("C3"),
            destination_machine_id: MachineId::from("A1"),
            timestamp: 20.0,
            imei: Imei::new("900000000000007").unwrap(),
            role: Role::Follower,
            performance: 0.0,
            ip_address: Some("10.45.0.3".parse().unwrap()),
            gps_x: 0.0,
            gps_y: 0.0,
            gps_z: 0.0,
            cause: EntryCause::Reconnection,
        };
        assert!(validate_reentry(&entry));

        entry.performance = 50.0;
        assert!(!validate_reentry(&entry));

        entry.cause = EntryCause::Initial;
        entry.performance = 100.0;
        assert!(validate_reentry(&entry));
    }

    #[test]
    fn encoding_is_deterministic() {
        let m: Message = heartbeat().into();
        assert_eq!(encode(&m).unwrap(), encode(&m).unwrap());
    }

    #[test]
    fn reply_with_256_entries_stays_under_64_kib() {
        let entries: Vec<NetworkTableEntry> = (0..256)
            .map(|i| {
                let mut e = table_entry(
                    &format!("M{i:03}"),
                    &format!("10.45.{}.{}", i / 250, i % 250 + 2),
                    Role::Follower,
                    // awkward fractions force long shortest-round-trip forms
                    0.1 + 0.2 + i as f64 * 0.3,
                );
                e.score = e.score.min(100.0);
                e.coords = Position::new(0.1 + i as f64, 0.2 + i as f64, 0.3 + i as f64);
                e
            })
            .collect();
        let reply = Message::EntryNotificationReply(EntryNotificationReply {
            source_machine_id: MachineId::from("A1"),
            destination_machine_id: MachineId::from("B2"),
            timestamp: 0.30000000000000004,
            selection_timer_interval: 26.0,
            heartbeat_timer_interval: 3.0,
            evaluation_timer_interval: 6.0,
            estimated_performance: 5.999999999999999,
            estimated_leader_selection: 25.999999999999996,
            network_table_entries: entries,
        });
        let bytes = encode(&reply).unwrap();
        assert!(bytes.len() <= 64 * 1024, "encoded reply is {} bytes", bytes.len());
    }
}
