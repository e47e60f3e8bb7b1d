//! End-to-end simulation behavior: boot and association, scheduled and
//! emergency reorganizations, re-entry, congestion recovery, proactive
//! exits, and replay determinism.

mod common;

use cellswarm::cellsim::Fault;
use cellswarm::domain::{MachineId, Role};
use cellswarm::harness::{
    replay_check, run, MachineCommand, ReorgTrigger, ResourceField, TimelineAction, TraceKind,
};
use common::*;

fn id(s: &str) -> MachineId {
    MachineId::from(s)
}

#[test]
fn two_machine_boot_assigns_gateway_and_first_ue_address() {
    let config = base_scenario(
        "boot2",
        vec![
            machine("A1", "900000000000009", 100.0, 0.0, 0.0, 10.0),
            machine("B2", "900000000000008", 0.0, 30.0, 0.0, 10.0),
        ],
        15.0,
    );
    let out = run(&config).unwrap();
    assert!(out.metrics.violations.is_empty(), "{:?}", out.metrics.violations);

    let a = &out.final_states[&id("A1")];
    let b = &out.final_states[&id("B2")];
    assert_eq!(a.role, Role::Leader);
    assert_eq!(b.role, Role::Follower);
    assert_eq!(
        a.table.get(&id("A1")).unwrap().session_ip,
        Some("10.45.0.1".parse().unwrap())
    );
    assert_eq!(
        a.table.get(&id("B2")).unwrap().session_ip,
        Some("10.45.0.2".parse().unwrap())
    );
    assert_eq!(a.table, b.table);
}

#[test]
fn single_machine_scenario_hosts_alone() {
    let config = base_scenario(
        "boot1",
        vec![machine("A1", "900000000000009", 100.0, 0.0, 0.0, 10.0)],
        15.0,
    );
    let out = run(&config).unwrap();
    assert!(out.metrics.violations.is_empty());
    let a = &out.final_states[&id("A1")];
    assert_eq!(a.role, Role::Leader);
    assert_eq!(a.table.len(), 1);
}

#[test]
fn three_machine_boot_converges_to_three_entry_tables() {
    let config = base_scenario(
        "boot3",
        vec![
            machine("A1", "900000000000009", 100.0, 0.0, 0.0, 10.0),
            machine("B2", "900000000000008", 0.0, 15.0, 0.0, 10.0),
            machine("C3", "900000000000007", 0.0, 30.0, 0.0, 10.0),
        ],
        20.0,
    );
    let out = run(&config).unwrap();
    assert!(out.metrics.violations.is_empty());
    for (mid, state) in &out.final_states {
        assert_eq!(state.table.len(), 3, "{mid} table incomplete: {:?}", state.table);
        assert!(state.quiescent);
    }
    // forwarded entry notifications taught everyone the IMEIs
    for state in out.final_states.values() {
        for entry in state.table.entries.values() {
            assert!(entry.machine.imei.is_known());
        }
    }
}

#[test]
fn scheduled_transition_swaps_roles_and_readdresses() {
    // leader's battery collapses under the capacity gate; the follower
    // must take over within six seconds of the handshake
    let config = bundled("battery_drop.scenario");
    let out = run(&config).unwrap();
    assert!(out.metrics.violations.is_empty(), "{:?}", out.metrics.violations);

    assert_eq!(out.metrics.reorganizations.len(), 1);
    let reorg = &out.metrics.reorganizations[0];
    assert_eq!(reorg.trigger, ReorgTrigger::Scheduled);
    assert_eq!(reorg.old_leader, Some(id("d1")));
    assert_eq!(reorg.new_leader, id("d2"));
    assert!(reorg.duration().unwrap() <= 6.0);

    let d1 = &out.final_states[&id("d1")];
    let d2 = &out.final_states[&id("d2")];
    assert_eq!(d1.role, Role::Follower);
    assert_eq!(d2.role, Role::Leader);
    assert_eq!(
        d2.table.get(&id("d2")).unwrap().session_ip,
        Some("10.45.0.1".parse().unwrap())
    );
    // the old leader re-attached and got a fresh UE address
    assert_eq!(
        d2.table.get(&id("d1")).unwrap().session_ip,
        Some("10.45.0.2".parse().unwrap())
    );
    // identical membership view; coordinates may differ while machines are
    // still moving (own samples run ahead of the last heartbeat)
    let view = |t: &cellswarm::domain::NetworkTable| -> Vec<_> {
        t.entries
            .values()
            .map(|e| (e.machine.clone(), e.session_ip, e.role, e.score))
            .collect()
    };
    assert_eq!(view(&d1.table), view(&d2.table));
}

#[test]
fn killed_leader_triggers_exactly_one_new_core() {
    let config = bundled("leader_kill.scenario");
    let out = run(&config).unwrap();
    assert!(out.metrics.violations.is_empty(), "{:?}", out.metrics.violations);

    // every survivor computed the same successor and exactly one new core
    // + RAN came up after the kill
    let starts_after_kill = out
        .trace
        .iter()
        .filter(|ev| {
            ev.t > 15.0
                && matches!(&ev.kind, TraceKind::Cellular { detail } if detail == "command:start_core_ran")
        })
        .count();
    assert_eq!(starts_after_kill, 1);

    assert_eq!(out.final_states[&id("m2")].role, Role::Leader);
    assert_eq!(out.final_states[&id("m3")].role, Role::Follower);
    assert_eq!(out.final_states[&id("m1")].role, Role::Null);
    assert_eq!(out.final_states[&id("m2")].table, out.final_states[&id("m3")].table);
    assert!(!out.final_states[&id("m2")].table.contains(&id("m1")));
}

#[test]
fn revived_leader_reenters_as_zero_score_follower() {
    let mut config = bundled("leader_kill.scenario");
    config.timeline.push(at(
        26.0,
        TimelineAction::InjectFault { fault: Fault::Restore { machine: Some(id("m1")) } },
    ));
    let out = run(&config).unwrap();
    assert!(out.metrics.violations.is_empty(), "{:?}", out.metrics.violations);

    // recovery transition lands in follower, never leader
    assert!(out.trace.iter().any(|ev| matches!(
        &ev.kind,
        TraceKind::FsmTransition { from: Role::Null, to: Role::Follower, event_symbol }
            if event_symbol.code() == "E_R" && ev.machine == id("m1")
    )));
    let m1 = &out.final_states[&id("m1")];
    assert_eq!(m1.role, Role::Follower);

    // it announced itself with a reconnection cause and zero score, and
    // the new leader admitted it
    let m2 = &out.final_states[&id("m2")];
    assert_eq!(m2.table.get(&id("m1")).unwrap().role, Role::Follower);
    assert_eq!(m2.role, Role::Leader);
}

#[test]
fn follower_exit_is_removed_without_reorganization() {
    let mut config = base_scenario(
        "exit_follower",
        vec![
            machine("A1", "900000000000009", 100.0, 0.0, 0.0, 10.0),
            machine("B2", "900000000000008", 0.0, 15.0, 0.0, 10.0),
            machine("C3", "900000000000007", 0.0, 30.0, 0.0, 10.0),
        ],
        30.0,
    );
    config.timeline.push(at(
        15.0,
        TimelineAction::Command { machine: id("C3"), command: MachineCommand::Exit },
    ));
    let out = run(&config).unwrap();
    assert!(out.metrics.violations.is_empty());
    assert!(out.metrics.reorganizations.is_empty());
    assert_eq!(out.final_states[&id("C3")].role, Role::Null);
    assert!(!out.final_states[&id("A1")].table.contains(&id("C3")));
    assert!(!out.final_states[&id("B2")].table.contains(&id("C3")));
}

#[test]
fn leader_exit_hands_over_to_next_best() {
    let mut config = base_scenario(
        "exit_leader",
        vec![
            machine("A1", "900000000000009", 100.0, 0.0, 0.0, 10.0),
            machine("B2", "900000000000008", 0.0, 6.0, 0.0, 10.0),
            machine("C3", "900000000000007", 0.0, 30.0, 0.0, 10.0),
        ],
        30.0,
    );
    config.timeline.push(at(
        15.0,
        TimelineAction::Command { machine: id("A1"), command: MachineCommand::Exit },
    ));
    let out = run(&config).unwrap();
    assert!(out.metrics.violations.is_empty(), "{:?}", out.metrics.violations);
    assert_eq!(out.metrics.reorganizations.len(), 1);
    assert_eq!(out.metrics.reorganizations[0].trigger, ReorgTrigger::Emergency);
    // B2 sits nearer the center of mass, so it holds the better score
    assert_eq!(out.final_states[&id("B2")].role, Role::Leader);
    assert_eq!(out.final_states[&id("C3")].role, Role::Follower);
}

#[test]
fn proactive_floor_breach_fires_failure_alert_and_reorganizes() {
    let mut config = base_scenario(
        "proactive",
        vec![
            machine("A1", "900000000000009", 100.0, 0.0, 0.0, 10.0),
            machine("B2", "900000000000008", 0.0, 15.0, 0.0, 10.0),
        ],
        30.0,
    );
    config.timeline.push(at(
        12.0,
        TimelineAction::SetResources {
            machine: id("A1"),
            memory_pct: 100.0,
            battery_pct: 9.0,
            processor_pct: 100.0,
        },
    ));
    let out = run(&config).unwrap();
    assert!(out.metrics.violations.is_empty(), "{:?}", out.metrics.violations);

    // the leader bailed out with a failure alert before hard failure
    assert!(out.trace.iter().any(|ev| matches!(
        &ev.kind,
        TraceKind::MsgSent { msg_type, payload, .. }
            if msg_type == "exit_notification" && payload.contains("failure_alert")
    )));
    assert_eq!(out.final_states[&id("A1")].role, Role::Null);
    assert_eq!(out.final_states[&id("B2")].role, Role::Leader);
}

#[test]
fn congested_follower_reattaches_without_election() {
    // drop everything the leader sends for a while: B2 misses heartbeats,
    // runs its checks, finds the network alive, and comes back without
    // electing anyone
    let mut config = base_scenario(
        "congestion",
        vec![
            machine("A1", "900000000000009", 100.0, 0.0, 0.0, 10.0),
            machine("B2", "900000000000008", 0.0, 15.0, 0.0, 10.0),
        ],
        45.0,
    );
    // silence the leader's outbound traffic between 10 s and 19 s
    config.timeline.push(at(
        10.0,
        TimelineAction::InjectFault { fault: Fault::DropAllFrom { machine: id("A1") } },
    ));
    config.timeline.push(at(
        19.0,
        TimelineAction::InjectFault { fault: Fault::Restore { machine: Some(id("A1")) } },
    ));
    let out = run(&config).unwrap();
    assert!(out.metrics.violations.is_empty(), "{:?}", out.metrics.violations);
    // checks passed; no emergency election ever happened
    assert_eq!(elections(&out.trace, "emergency").count(), 0);
    assert_eq!(out.final_states[&id("A1")].role, Role::Leader);
    assert_eq!(out.final_states[&id("B2")].role, Role::Follower);
}

#[test]
fn same_seed_replays_byte_identically() {
    let config = bundled("leader_kill.scenario");
    let a = run(&config).unwrap();
    let b = run(&config).unwrap();
    assert!(replay_check(&a.trace, &b.trace));
}

#[test]
fn lossless_runs_are_seed_independent() {
    let mut config = bundled("battery_drop.scenario");
    assert_eq!(config.link.loss_probability, 0.0);
    let reference = run(&config).unwrap();
    for seed in 2..=10 {
        config.seed = seed;
        let out = run(&config).unwrap();
        assert!(
            replay_check(&reference.trace, &out.trace),
            "lossless trace diverged for seed {seed}"
        );
    }
}

#[test]
fn lossy_runs_depend_on_the_seed() {
    let mut config = base_scenario(
        "lossy",
        vec![
            machine("A1", "900000000000009", 100.0, 0.0, 0.0, 10.0),
            machine("B2", "900000000000008", 0.0, 15.0, 0.0, 10.0),
            machine("C3", "900000000000007", 0.0, 30.0, 0.0, 10.0),
        ],
        30.0,
    );
    config.link.loss_probability = 0.3;
    let mut distinct = std::collections::BTreeSet::new();
    for seed in 1..=5 {
        config.seed = seed;
        let out = run(&config).unwrap();
        distinct.insert(cellswarm::harness::trace_to_jsonl(&out.trace));
    }
    assert!(distinct.len() > 1, "loss with different seeds should diverge");
}

#[test]
fn virtual_time_never_exceeds_duration() {
    let config = bundled("deviant_leader.scenario");
    let out = run(&config).unwrap();
    assert!(out.trace.iter().all(|ev| ev.t <= config.duration));
    // trace timestamps are non-decreasing
    assert!(out.trace.windows(2).all(|w| w[0].t <= w[1].t));
}

#[test]
fn metrics_message_counts_match_the_trace() {
    let config = bundled("deviant_leader.scenario");
    let out = run(&config).unwrap();
    let mut sent = 0u64;
    let mut received = 0u64;
    let mut dropped = 0u64;
    for ev in &out.trace {
        match &ev.kind {
            TraceKind::MsgSent { .. } => sent += 1,
            TraceKind::MsgReceived { .. } => received += 1,
            TraceKind::MsgDropped { .. } => dropped += 1,
            _ => {}
        }
    }
    assert_eq!(out.metrics.messages_sent.values().sum::<u64>(), sent);
    assert_eq!(out.metrics.messages_received.values().sum::<u64>(), received);
    assert_eq!(out.metrics.messages_dropped.values().sum::<u64>(), dropped);
}
