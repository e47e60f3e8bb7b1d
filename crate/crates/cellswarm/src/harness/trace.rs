//! Timestamped trace records: every state transition, message, timer fire,
//! cellular action, election, and reorganization marker, serialized as
//! canonical JSON lines for replay comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::controller::EventSymbol;
use crate::domain::{MachineId, Role};
use crate::wire;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReorgTrigger {
    Scheduled,
    Emergency,
}

/// What happened. `payload` fields carry the encoded message verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceKind {
    FsmTransition { from: Role, to: Role, event_symbol: EventSymbol },
    MsgSent { to: String, msg_type: String, payload: String },
    MsgReceived { from: String, msg_type: String, payload: String },
    MsgDropped { reason: String, msg_type: String },
    TimerFired { which: String },
    Cellular { detail: String },
    Election { candidate: MachineId, outcome: String, scores: BTreeMap<String, f64> },
    FailureSuspected { suspect: MachineId, class: String },
    ReorgStart { trigger: ReorgTrigger, candidate: MachineId },
    ReorgComplete { leader: MachineId },
}

/// One trace line: when, who, what.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: f64,
    pub machine: MachineId,
    #[serde(flatten)]
    pub kind: TraceKind,
}

impl TraceEvent {
    pub fn to_canonical_line(&self) -> String {
        wire::canonical_string(self).expect("trace events always serialize")
    }
}

/// Renders a whole trace as canonical JSON lines.
pub fn trace_to_jsonl(trace: &[TraceEvent]) -> String {
    let mut out = String::new();
    for ev in trace {
        out.push_str(&ev.to_canonical_line());
        out.push('\n');
    }
    out
}

/// Replay comparison: true iff the two traces serialize to byte-identical
/// streams. Callers are expected to have produced both from the same
/// scenario and seed.
pub fn replay_check(trace_a: &[TraceEvent], trace_b: &[TraceEvent]) -> bool {
    trace_to_jsonl(trace_a) == trace_to_jsonl(trace_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_lines_are_canonical_and_tagged() {
        let ev = TraceEvent {
            t: 3.5,
            machine: MachineId::from("A1"),
            kind: TraceKind::FsmTransition {
                from: Role::Null,
                to: Role::Leader,
                event_symbol: EventSymbol::Initialization,
            },
        };
        let line = ev.to_canonical_line();
        assert_eq!(
            line,
            r#"{"event_symbol":"E_I","from":"null","kind":"fsm_transition","machine":"A1","t":3.5,"to":"leader"}"#
        );
        let back: TraceEvent = serde_json::from_str(&line).unwrap();
        assert_eq!(back, ev);
    }

    #[test]
    fn replay_check_spots_any_divergence() {
        let a = vec![TraceEvent {
            t: 1.0,
            machine: MachineId::from("A1"),
            kind: TraceKind::TimerFired { which: "heartbeat".into() },
        }];
        let mut b = a.clone();
        assert!(replay_check(&a, &b));
        b[0].t = 1.0000001;
        assert!(!replay_check(&a, &b));
    }
}
