//! Run metrics derived from the trace stream: reorganization windows,
//! leader tenure, message counts, and failure-detection latencies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{MachineId, Role};
use crate::harness::trace::{ReorgTrigger, TraceEvent, TraceKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reorganization {
    pub start: f64,
    /// Last re-association of the wave; `None` if the run ended mid-wave.
    pub end: Option<f64>,
    pub trigger: ReorgTrigger,
    pub old_leader: Option<MachineId>,
    pub new_leader: MachineId,
}

impl Reorganization {
    pub fn duration(&self) -> Option<f64> {
        self.end.map(|e| e - self.start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureDetection {
    pub machine: MachineId,
    pub failed_at: f64,
    pub suspected_at: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub duration: f64,
    pub reorganizations: Vec<Reorganization>,
    pub leader_tenure: BTreeMap<MachineId, f64>,
    pub messages_sent: BTreeMap<String, u64>,
    pub messages_received: BTreeMap<String, u64>,
    pub messages_dropped: BTreeMap<String, u64>,
    pub failure_detections: Vec<FailureDetection>,
    pub violations: Vec<String>,
}

struct OpenWave {
    start: f64,
    trigger: ReorgTrigger,
    candidate: MachineId,
    old_leader: Option<MachineId>,
    last_complete: Option<f64>,
    participants: BTreeSet<MachineId>,
    completed: BTreeSet<MachineId>,
}

impl OpenWave {
    fn close(self) -> Reorganization {
        Reorganization {
            start: self.start,
            end: self.last_complete,
            trigger: self.trigger,
            old_leader: self.old_leader,
            new_leader: self.candidate,
        }
    }
}

impl RunMetrics {
    /// Folds a trace into metrics. Message counts are exactly the counts
    /// over the stream; reorganization windows span from the first
    /// `reorg_start` of a wave to its last `reorg_complete`.
    pub fn from_trace(trace: &[TraceEvent], duration: f64, violations: Vec<String>) -> Self {
        let mut metrics = RunMetrics { duration, violations, ..RunMetrics::default() };

        let mut current_leader: Option<MachineId> = None;
        let mut last_leader: Option<MachineId> = None;
        let mut leader_since: f64 = 0.0;
        let mut wave: Option<OpenWave> = None;
        let mut failed_at: BTreeMap<MachineId, f64> = BTreeMap::new();
        let mut suspected: BTreeSet<MachineId> = BTreeSet::new();

        for ev in trace {
            match &ev.kind {
                TraceKind::MsgSent { msg_type, .. } => {
                    *metrics.messages_sent.entry(msg_type.clone()).or_insert(0) += 1;
                }
                TraceKind::MsgReceived { msg_type, .. } => {
                    *metrics.messages_received.entry(msg_type.clone()).or_insert(0) += 1;
                }
                TraceKind::MsgDropped { msg_type, .. } => {
                    *metrics.messages_dropped.entry(msg_type.clone()).or_insert(0) += 1;
                }
                TraceKind::FsmTransition { from, to, .. } => {
                    if *to == Role::Leader {
                        current_leader = Some(ev.machine.clone());
                        last_leader = Some(ev.machine.clone());
                        leader_since = ev.t;
                    } else if *from == Role::Leader {
                        if current_leader.as_ref() == Some(&ev.machine) {
                            *metrics.leader_tenure.entry(ev.machine.clone()).or_insert(0.0) +=
                                ev.t - leader_since;
                            current_leader = None;
                        }
                    }
                    if *to == Role::Null {
                        failed_at.entry(ev.machine.clone()).or_insert(ev.t);
                        suspected.remove(&ev.machine);
                    } else {
                        // rejoined; eligible for a fresh detection record
                        failed_at.remove(&ev.machine);
                        suspected.remove(&ev.machine);
                    }
                }
                TraceKind::FailureSuspected { suspect, .. } => {
                    if let Some(failed) = failed_at.get(suspect) {
                        if suspected.insert(suspect.clone()) {
                            metrics.failure_detections.push(FailureDetection {
                                machine: suspect.clone(),
                                failed_at: *failed,
                                suspected_at: ev.t,
                            });
                        }
                    }
                }
                TraceKind::ReorgStart { trigger, candidate } => {
                    let open_new = match &wave {
                        Some(w) => w.candidate != *candidate,
                        None => true,
                    };
                    if open_new {
                        if let Some(w) = wave.take() {
                            metrics.reorganizations.push(w.close());
                        }
                        wave = Some(OpenWave {
                            start: ev.t,
                            trigger: *trigger,
                            candidate: candidate.clone(),
                            old_leader: current_leader.clone().or_else(|| last_leader.clone()),
                            last_complete: None,
                            participants: BTreeSet::new(),
                            completed: BTreeSet::new(),
                        });
                    }
                    if let Some(w) = wave.as_mut() {
                        w.participants.insert(ev.machine.clone());
                    }
                }
                TraceKind::ReorgComplete { leader } => {
                    if let Some(w) = wave.as_mut() {
                        if w.candidate == *leader {
                            w.completed.insert(ev.machine.clone());
                            w.last_complete = Some(ev.t);
                            let done = w
                                .participants
                                .iter()
                                .all(|p| w.completed.contains(p) || failed_at.contains_key(p));
                            if done {
                                metrics.reorganizations.push(wave.take().unwrap().close());
                            }
                        }
                    }
                }
                _ => {}
            }
        }

        if let Some(w) = wave.take() {
            metrics.reorganizations.push(w.close());
        }
        if let Some(leader) = current_leader {
            *metrics.leader_tenure.entry(leader).or_insert(0.0) += duration - leader_since;
        }
        metrics
    }

    pub fn to_canonical_json(&self) -> String {
        crate::wire::pretty_string(self).expect("metrics always serialize")
    }
}

/// Human-readable run summary: reorganization table, leader tenure, and
/// message counts.
pub fn summarize(metrics: &RunMetrics) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "duration: {:.3} s", metrics.duration);

    if metrics.reorganizations.is_empty() {
        let _ = writeln!(out, "reorganizations: none");
    } else {
        let _ = writeln!(out, "reorganizations:");
        let _ = writeln!(out, "  #  trigger    start      end        duration  old -> new");
        for (i, r) in metrics.reorganizations.iter().enumerate() {
            let trigger = match r.trigger {
                ReorgTrigger::Scheduled => "scheduled",
                ReorgTrigger::Emergency => "emergency",
            };
            let (end, dur) = match r.end {
                Some(e) => (format!("{e:<10.3}"), format!("{:<8.3}", e - r.start)),
                None => ("unfinished".into(), "-".into()),
            };
            let old = r.old_leader.as_ref().map_or("?", |m| m.as_str());
            let _ = writeln!(
                out,
                "  {}  {:<9}  {:<9.3}  {}  {}  {} -> {}",
                i + 1,
                trigger,
                r.start,
                end,
                dur,
                old,
                r.new_leader
            );
        }
    }

    if !metrics.leader_tenure.is_empty() {
        let _ = writeln!(out, "leader tenure:");
        for (id, secs) in &metrics.leader_tenure {
            let _ = writeln!(out, "  {id}: {secs:.3} s");
        }
    }

    if !metrics.failure_detections.is_empty() {
        let _ = writeln!(out, "failure detections:");
        for d in &metrics.failure_detections {
            let _ = writeln!(
                out,
                "  {} failed at {:.3}, suspected at {:.3} (latency {:.3} s)",
                d.machine,
                d.failed_at,
                d.suspected_at,
                d.suspected_at - d.failed_at
            );
        }
    }

    let _ = writeln!(out, "messages (sent/received/dropped):");
    let mut types: BTreeSet<&String> = BTreeSet::new();
    types.extend(metrics.messages_sent.keys());
    types.extend(metrics.messages_received.keys());
    types.extend(metrics.messages_dropped.keys());
    for ty in types {
        let s = metrics.messages_sent.get(ty).copied().unwrap_or(0);
        let r = metrics.messages_received.get(ty).copied().unwrap_or(0);
        let d = metrics.messages_dropped.get(ty).copied().unwrap_or(0);
        let _ = writeln!(out, "  {ty}: {s}/{r}/{d}");
    }

    if metrics.violations.is_empty() {
        let _ = writeln!(out, "invariant violations: none");
    } else {
        let _ = writeln!(out, "invariant violations:");
        for v in &metrics.violations {
            let _ = writeln!(out, "  {v}");
        }
    }
    out
}
