//! Shared helpers for integration tests: scenario builders and trace
//! queries.

#![allow(dead_code)]

use std::path::PathBuf;

use cellswarm::cellsim::{LinkModel, StackDelays};
use cellswarm::controller::ProtocolParams;
use cellswarm::domain::{
    Imei, MachineId, Position, ResourceProfile, Role, ScoringParams, Subnet, TimerConfig,
};
use cellswarm::harness::{
    MachineSpec, ReorgTrigger, ScenarioConfig, TimelineEntry, TraceEvent, TraceKind,
};

pub fn machine(id: &str, imei: &str, boot_score: f64, x: f64, y: f64, z: f64) -> MachineSpec {
    MachineSpec {
        id: MachineId::from(id),
        imei: Imei::new(imei).unwrap(),
        boot_score,
        position: Position::new(x, y, z),
        resources: ResourceProfile::full(),
    }
}

pub fn base_scenario(name: &str, machines: Vec<MachineSpec>, duration: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        description: String::new(),
        machines,
        timers: TimerConfig::default(),
        scoring: ScoringParams::default(),
        protocol: ProtocolParams::default(),
        stack_delays: StackDelays::default(),
        link: LinkModel::default(),
        subnet: Subnet::default(),
        timeline: Vec::new(),
        duration,
        seed: 1,
    }
}

pub fn at(time: f64, action: cellswarm::harness::TimelineAction) -> TimelineEntry {
    TimelineEntry { at: time, action }
}

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

pub fn bundled(name: &str) -> ScenarioConfig {
    let path = scenario_path(name);
    let text = std::fs::read(&path).unwrap_or_else(|e| panic!("read {path:?}: {e}"));
    ScenarioConfig::from_json(&text).expect("bundled scenarios are valid")
}

/// Who held the leader role at virtual time `t`, by replaying transitions.
pub fn leader_at(trace: &[TraceEvent], t: f64) -> Option<MachineId> {
    let mut leader: Option<MachineId> = None;
    for ev in trace {
        if ev.t > t {
            break;
        }
        if let TraceKind::FsmTransition { from, to, .. } = &ev.kind {
            if *to == Role::Leader {
                leader = Some(ev.machine.clone());
            } else if *from == Role::Leader && leader.as_ref() == Some(&ev.machine) {
                leader = None;
            }
        }
    }
    leader
}

/// First instant after `t` at which some machine became leader.
pub fn leader_rise_after(trace: &[TraceEvent], t: f64) -> Option<(f64, MachineId)> {
    trace.iter().find_map(|ev| match &ev.kind {
        TraceKind::FsmTransition { to: Role::Leader, .. } if ev.t > t => {
            Some((ev.t, ev.machine.clone()))
        }
        _ => None,
    })
}

pub fn elections<'a>(
    trace: &'a [TraceEvent],
    outcome: &'a str,
) -> impl Iterator<Item = &'a TraceEvent> + 'a {
    trace.iter().filter(move |ev| {
        matches!(&ev.kind, TraceKind::Election { outcome: o, .. } if o == outcome)
    })
}

pub fn scheduled_reorgs(trace: &[TraceEvent]) -> usize {
    trace
        .iter()
        .filter(|ev| {
            matches!(&ev.kind, TraceKind::ReorgStart { trigger: ReorgTrigger::Scheduled, .. })
        })
        .count()
}

/// One fixed instance of every message type, used for golden encodings
/// and fuzz corpus seeds.
pub fn sample_messages() -> Vec<cellswarm::messages::Message> {
    use cellswarm::domain::{MachineIdentity, NetworkTableEntry};
    use cellswarm::messages::*;

    let entry = |mid: &str, imei: &str, ip: &str, role: Role, score: f64| NetworkTableEntry {
        machine: MachineIdentity { id: MachineId::from(mid), imei: Imei::new(imei).unwrap() },
        session_ip: Some(ip.parse().unwrap()),
        coords: Position::new(1.5, -2.25, 10.0),
        role,
        score,
    };

    vec![
        Message::EntryNotification(EntryNotification {
            source_machine_id: MachineId::from("B2"),
            destination_machine_id: MachineId::from("A1"),
            timestamp: 6.0,
            imei: Imei::new("900000000000008").unwrap(),
            role: Role::Follower,
            performance: 0.0,
            ip_address: Some("10.45.0.2".parse().unwrap()),
            gps_x: 30.0,
            gps_y: 0.0,
            gps_z: 10.0,
            cause: EntryCause::Initial,
        }),
        Message::EntryNotificationReply(EntryNotificationReply {
            source_machine_id: MachineId::from("A1"),
            destination_machine_id: MachineId::from("B2"),
            timestamp: 6.01,
            selection_timer_interval: 26.0,
            heartbeat_timer_interval: 3.0,
            evaluation_timer_interval: 6.0,
            estimated_performance: 3.49,
            estimated_leader_selection: 23.49,
            network_table_entries: vec![
                entry("A1", "900000000000009", "10.45.0.1", Role::Leader, 85.6),
                entry("B2", "900000000000008", "10.45.0.2", Role::Follower, 72.3),
                entry("C3", "900000000000007", "10.45.0.3", Role::Follower, 67.8),
                entry("D4", "900000000000006", "10.45.0.4", Role::Follower, 63.2),
            ],
        }),
        Message::ExitNotification(ExitNotification {
            source_machine_id: MachineId::from("A1"),
            destination_machine_id: MachineId::from("*"),
            timestamp: 31.5,
            role: Role::Leader,
            cause: ExitCause::FailureAlert,
        }),
        Message::PerformanceReport(PerformanceReport {
            source_machine_id: MachineId::from("C3"),
            destination_machine_id: MachineId::from("A1"),
            timestamp: 12.0,
            performance_score: 67.8,
        }),
        Message::HeartbeatNotification(HeartbeatNotification {
            source_machine_id: MachineId::from("D4"),
            destination_machine_id: MachineId::from("B2"),
            timestamp: 9.0,
            cellular_status: 1,
            vehicle_type: 2,
            autopilot: 3,
            base_mode: 81,
            system_status: 4,
            vn: 2.0,
            ve: -0.5,
            vd: 0.25,
            x: 12.5,
            y: -7.125,
            z: 10.0,
            heading: 273.5,
        }),
        Message::TransitionRequest(TransitionRequest {
            source_machine_id: MachineId::from("B2"),
            destination_machine_id: MachineId::from("A1"),
            timestamp: 29.5,
            candidate_score: 70.0,
            cause: TransitionCause::Scheduled,
            network_status: "synchronized".into(),
            transition_plan: "host:B2".into(),
        }),
        Message::TransitionAlert(TransitionAlert {
            source_machine_id: MachineId::from("A1"),
            destination_machine_id: MachineId::from("*"),
            timestamp: 29.505,
            approved_candidate_id: MachineId::from("B2"),
            transition_start_time: 29.505,
            network_configuration_change: "host_change".into(),
        }),
        Message::TransitionFailure(TransitionFailure {
            source_machine_id: MachineId::from("A1"),
            destination_machine_id: MachineId::from("C3"),
            timestamp: 29.5,
            failure_cause: TransitionFailureCause::NotTopScore,
            retry_policy: "retry_next_selection_cycle".into(),
            suggestive_action: "resynchronize tables".into(),
            supporting_data: String::new(),
        }),
    ]
}
