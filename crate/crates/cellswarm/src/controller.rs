//! Per-machine state controller: boot, discovery and association, the
//! three timer-driven processes (heartbeat, performance evaluation, leader
//! selection), the leader transition handshake, and failure detection and
//! recovery.
//!
//! `handle_event` is the single mutation point. It consumes one timestamped
//! event and returns the effects to apply: outbound messages, cellular
//! commands, timer schedules, and trace records. All cross-machine
//! interaction goes through those effects, which keeps a whole swarm
//! deterministic under the discrete-event scheduler.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::cellsim::{CellularCommand, CellularSignal, StackDelays};
use crate::domain::{
    HeartbeatRecords, Imei, MachineId, MachineIdentity, NetworkTable, NetworkTableEntry,
    Position, ResourceProfile, Role, ScoringParams, Subnet, ThresholdPolicy, TimerConfig,
    Velocity, BROADCAST_ID,
};
use crate::harness::trace::{ReorgTrigger, TraceKind};
use crate::messages::{
    EntryCause, EntryNotification, EntryNotificationReply, ExitCause, ExitNotification,
    HeartbeatNotification, Message, PerformanceReport, TransitionAlert, TransitionCause,
    TransitionFailure, TransitionFailureCause, TransitionRequest,
};
use crate::scoring::{aggregate_score, center_of_mass, ScoreBreakdown};

/// Heartbeat deadlines fire just past the timeout boundary so the strict
/// "gap exceeds timeout" rule holds at the firing instant.
pub const DETECT_EPSILON: f64 = 1e-3;

/// Leader-side tolerance when matching a requested candidate score against
/// the table.
pub const SCORE_MATCH_TOLERANCE: f64 = 1e-9;

/// The six legal state-machine transitions, as carried in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventSymbol {
    #[serde(rename = "E_I")]
    Initialization,
    #[serde(rename = "E_E")]
    Entering,
    #[serde(rename = "E_LS")]
    LeaderSelection,
    #[serde(rename = "E_X")]
    Exiting,
    #[serde(rename = "E_F")]
    Failure,
    #[serde(rename = "E_R")]
    Recovery,
}

impl EventSymbol {
    pub fn code(&self) -> &'static str {
        match self {
            EventSymbol::Initialization => "E_I",
            EventSymbol::Entering => "E_E",
            EventSymbol::LeaderSelection => "E_LS",
            EventSymbol::Exiting => "E_X",
            EventSymbol::Failure => "E_F",
            EventSymbol::Recovery => "E_R",
        }
    }

    /// Whether `from -> to` is a legal transition under this event.
    pub fn permits(&self, from: Role, to: Role) -> bool {
        use Role::*;
        match self {
            EventSymbol::Initialization => from == Null && (to == Leader || to == Follower),
            EventSymbol::Entering => from == Null && to == Follower,
            EventSymbol::LeaderSelection => {
                (from == Follower && to == Leader) || (from == Leader && to == Follower)
            }
            EventSymbol::Exiting => (from == Leader || from == Follower) && to == Null,
            EventSymbol::Failure => (from == Leader || from == Follower) && to == Null,
            EventSymbol::Recovery => from == Null && to == Follower,
        }
    }
}

/// Recovery and handshake knobs that are not part of the three protocol
/// timers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolParams {
    /// A leader whose memory, battery, or processor falls below this floor
    /// proactively exits with a failure alert.
    pub critical_floor_pct: f64,
    /// Spacing between cellular-level probes of a suspected leader.
    pub check_interval: f64,
    /// Consecutive failed RRC/NAS probes that confirm leader death (a lost
    /// synchronization signal confirms immediately).
    pub check_attempts: u32,
    /// Delay between a transition approval and its start time.
    pub transition_grace: f64,
    /// Extra slack on top of the worst-case reorganization time before a
    /// stalled transition triggers re-election.
    pub stall_margin: f64,
    /// Association reply timeout, as a multiple of the heartbeat interval.
    pub association_timeout_factor: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            critical_floor_pct: 10.0,
            check_interval: 0.2,
            check_attempts: 3,
            transition_grace: 0.0,
            stall_margin: 1.0,
            association_timeout_factor: 2.0,
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), String> {
        if !self.critical_floor_pct.is_finite() || !(0.0..=100.0).contains(&self.critical_floor_pct)
        {
            return Err(format!("critical_floor_pct must be in [0,100], got {}", self.critical_floor_pct));
        }
        if !self.check_interval.is_finite() || self.check_interval <= 0.0 {
            return Err(format!("check_interval must be positive, got {}", self.check_interval));
        }
        if self.check_attempts == 0 {
            return Err("check_attempts must be at least 1".into());
        }
        if !self.transition_grace.is_finite() || self.transition_grace < 0.0 {
            return Err(format!("transition_grace must be >= 0, got {}", self.transition_grace));
        }
        if !self.stall_margin.is_finite() || self.stall_margin <= 0.0 {
            return Err(format!("stall_margin must be positive, got {}", self.stall_margin));
        }
        if !self.association_timeout_factor.is_finite() || self.association_timeout_factor <= 0.0 {
            return Err(format!(
                "association_timeout_factor must be positive, got {}",
                self.association_timeout_factor
            ));
        }
        Ok(())
    }
}

/// Static per-machine configuration handed to the controller at boot.
#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub me: MachineId,
    pub imei: Imei,
    /// Exactly one machine per scenario boots with 100 and hosts first.
    pub boot_score: f64,
    pub timers: TimerConfig,
    pub scoring: ScoringParams,
    pub protocol: ProtocolParams,
    pub delays: StackDelays,
    pub subnet: Subnet,
}

/// Cellular attachment status, as the controller sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttachStatus {
    Detached,
    Attaching,
    Attached { ip: Ipv4Addr },
    StartingHost,
    Hosting { ip: Ipv4Addr },
}

impl AttachStatus {
    pub fn ip(&self) -> Option<Ipv4Addr> {
        match self {
            AttachStatus::Attached { ip } | AttachStatus::Hosting { ip } => Some(*ip),
            _ => None,
        }
    }
}

/// Timers the controller asks the scheduler to fire. The three periodic
/// protocol timers come first; the rest are internal one-shots.
#[derive(Debug, Clone, PartialEq)]
pub enum TimerKind {
    Heartbeat,
    Evaluation,
    Selection,
    BootAttach,
    AssociationTimeout { attempt: u32 },
    HeartbeatDeadline { peer: MachineId, seen: f64 },
    CheckTick { attempt: u32 },
    TransitionStart { epoch: u64 },
    TransitionHostStart { epoch: u64 },
    TransitionAttach { epoch: u64 },
    TransitionStall { epoch: u64 },
}

impl TimerKind {
    pub fn name(&self) -> &'static str {
        match self {
            TimerKind::Heartbeat => "heartbeat",
            TimerKind::Evaluation => "evaluation",
            TimerKind::Selection => "selection",
            TimerKind::BootAttach => "boot_attach",
            TimerKind::AssociationTimeout { .. } => "association_timeout",
            TimerKind::HeartbeatDeadline { .. } => "heartbeat_deadline",
            TimerKind::CheckTick { .. } => "check_tick",
            TimerKind::TransitionStart { .. } => "transition_start",
            TimerKind::TransitionHostStart { .. } => "transition_host_start",
            TimerKind::TransitionAttach { .. } => "transition_attach",
            TimerKind::TransitionStall { .. } => "transition_stall",
        }
    }
}

/// Operator-style commands delivered through the scenario timeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommandKind {
    /// Graceful exit with notification.
    Exit,
    /// Silent death; the machine stops without any notification.
    InjectKill,
}

/// One timestamped input to the controller.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    TimerFired { kind: TimerKind, scheduled_for: f64 },
    MessageReceived { msg: Message },
    Cellular { signal: CellularSignal },
    HealthSample { resources: ResourceProfile, position: Position, velocity: Velocity },
    Command { kind: CommandKind },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Destination {
    Unicast(MachineId),
    /// Fan-out to every attached machine; encoded with destination "*".
    Broadcast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub to: Destination,
    pub msg: Message,
}

/// Everything a single `handle_event` call wants done.
#[derive(Debug, Default)]
pub struct Effects {
    pub sends: Vec<Outbound>,
    pub cellular: Vec<CellularCommand>,
    pub timers: Vec<(TimerKind, f64)>,
    pub traces: Vec<TraceKind>,
}

impl Effects {
    fn send(&mut self, to: MachineId, msg: impl Into<Message>) {
        self.sends.push(Outbound { to: Destination::Unicast(to), msg: msg.into() });
    }

    fn broadcast(&mut self, msg: impl Into<Message>) {
        self.sends.push(Outbound { to: Destination::Broadcast, msg: msg.into() });
    }

    fn cell(&mut self, cmd: CellularCommand) {
        self.cellular.push(cmd);
    }

    fn timer(&mut self, kind: TimerKind, at: f64) {
        self.timers.push((kind, at));
    }

    fn trace(&mut self, kind: TraceKind) {
        self.traces.push(kind);
    }
}

/// How this controller instance entered the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinKind {
    /// Initial boot as part of the configured swarm.
    Boot,
    /// Revived after a silent failure; announces with zero score and
    /// reconnection cause.
    Reentry,
    /// Joining (or rejoining after a clean exit) an established network;
    /// zero score, initial cause.
    Rejoin,
    /// Already a member; re-associations keep the current score.
    Member,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum AssocState {
    Idle,
    Sent { attempt: u32 },
    Established,
}

#[derive(Debug, Clone, PartialEq)]
struct PendingTransition {
    candidate: MachineId,
    start_time: f64,
    epoch: u64,
    started: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct Suspicion {
    target: MachineId,
    failed_probes: u32,
    attempt: u32,
}

/// Failure classification produced by heartbeat monitoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    FollowerFailure,
    LeaderSuspect,
}

impl FailureClass {
    pub fn name(&self) -> &'static str {
        match self {
            FailureClass::FollowerFailure => "follower_failure",
            FailureClass::LeaderSuspect => "leader_suspect",
        }
    }
}

pub struct Controller {
    cfg: ControllerConfig,
    now: f64,
    alive: bool,
    retired: bool,
    fsm: Role,
    attach: AttachStatus,
    assoc: AssocState,
    join_kind: JoinKind,
    ever_associated: bool,
    serving_host: Option<MachineId>,
    table: NetworkTable,
    heartbeats: HeartbeatRecords,
    /// Recent score rounds per member, keyed by the *sender's* round
    /// timestamp so every replica files a value under the same instant.
    score_rounds: std::collections::BTreeMap<MachineId, std::collections::VecDeque<(f64, f64)>>,
    my_score: ScoreBreakdown,
    position: Position,
    velocity: Velocity,
    resources: ResourceProfile,
    timers: TimerConfig,
    next_heartbeat: Option<f64>,
    next_evaluation: Option<f64>,
    next_selection: Option<f64>,
    pending: Option<PendingTransition>,
    suspicion: Option<Suspicion>,
    reorg_epoch: u64,
}

impl Controller {
    /// Boots a machine at virtual time zero. The score-100 machine starts
    /// the core + RAN immediately; everyone else waits out the host
    /// bring-up window before attaching as a UE.
    pub fn boot(
        cfg: ControllerConfig,
        position: Position,
        resources: ResourceProfile,
    ) -> (Self, Effects) {
        let boot_score = cfg.boot_score;
        let mut c = Controller::blank(cfg, JoinKind::Boot, position, resources, 0.0);
        c.my_score = ScoreBreakdown { sp: 0.0, cc: 0.0, total: boot_score };
        let mut fx = Effects::default();
        if boot_score == 100.0 {
            c.attach = AttachStatus::StartingHost;
            fx.cell(CellularCommand::StartCoreRan);
        } else {
            // compensate for the host's core + RAN bring-up before attaching
            let wait = c.cfg.delays.host_start() + c.cfg.delays.teardown;
            fx.timer(TimerKind::BootAttach, wait);
        }
        (c, fx)
    }

    /// Builds a controller for a machine entering (or re-entering) an
    /// already-running network.
    pub fn rejoin(
        cfg: ControllerConfig,
        kind: JoinKind,
        position: Position,
        resources: ResourceProfile,
        now: f64,
    ) -> (Self, Effects) {
        let mut c = Controller::blank(cfg, kind, position, resources, now);
        c.my_score = ScoreBreakdown { sp: 0.0, cc: 0.0, total: 0.0 };
        c.attach = AttachStatus::Attaching;
        let mut fx = Effects::default();
        fx.cell(CellularCommand::AttachUe);
        (c, fx)
    }

    fn blank(
        cfg: ControllerConfig,
        join_kind: JoinKind,
        position: Position,
        resources: ResourceProfile,
        now: f64,
    ) -> Self {
        let timers = cfg.timers;
        Controller {
            cfg,
            now,
            alive: true,
            retired: false,
            fsm: Role::Null,
            attach: AttachStatus::Detached,
            assoc: AssocState::Idle,
            join_kind,
            ever_associated: false,
            serving_host: None,
            table: NetworkTable::new(),
            heartbeats: HeartbeatRecords::new(),
            score_rounds: std::collections::BTreeMap::new(),
            my_score: ScoreBreakdown { sp: 0.0, cc: 0.0, total: 0.0 },
            position,
            velocity: Velocity::default(),
            resources,
            timers,
            next_heartbeat: None,
            next_evaluation: None,
            next_selection: None,
            pending: None,
            suspicion: None,
            reorg_epoch: 0,
        }
    }

    // ------------------------------------------------------------------
    // Views
    // ------------------------------------------------------------------

    pub fn id(&self) -> &MachineId {
        &self.cfg.me
    }

    pub fn fsm(&self) -> Role {
        self.fsm
    }

    pub fn attach_status(&self) -> &AttachStatus {
        &self.attach
    }

    pub fn table(&self) -> &NetworkTable {
        &self.table
    }

    pub fn my_score(&self) -> ScoreBreakdown {
        self.my_score
    }

    pub fn is_alive(&self) -> bool {
        self.alive
    }

    pub fn is_retired(&self) -> bool {
        self.retired
    }

    pub fn in_transition(&self) -> bool {
        self.pending.is_some()
    }

    /// A machine is quiescent when it is a settled member: associated and
    /// not mid-reorganization. Table invariants are asserted only here.
    pub fn is_quiescent(&self) -> bool {
        self.alive
            && !self.retired
            && self.assoc == AssocState::Established
            && self.pending.is_none()
    }

    /// Pure failure-detection query: peers whose heartbeat gap strictly
    /// exceeds the timeout, classified by their table role.
    pub fn detect_failures(&self, now: f64) -> Vec<(MachineId, FailureClass)> {
        let timeout = self.timers.heartbeat_timeout();
        let mut out = Vec::new();
        for (peer, seen) in self.heartbeats.peers() {
            if now - seen > timeout {
                let class = match self.table.get(peer).map(|e| e.role) {
                    Some(Role::Leader) => FailureClass::LeaderSuspect,
                    _ => FailureClass::FollowerFailure,
                };
                out.push((peer.clone(), class));
            }
        }
        out
    }

    // ------------------------------------------------------------------
    // Event dispatch
    // ------------------------------------------------------------------

    pub fn handle_event(&mut self, at: f64, ev: Event) -> Effects {
        let mut fx = Effects::default();
        if !self.alive {
            return fx;
        }
        debug_assert!(at >= self.now, "event at {at} precedes {}", self.now);
        self.now = at;

        if self.retired {
            // a retired machine ignores the world; it only comes back via
            // a fresh rejoin controller
            return fx;
        }

        match ev {
            Event::HealthSample { resources, position, velocity } => {
                self.on_health_sample(&mut fx, resources, position, velocity)
            }
            Event::TimerFired { kind, scheduled_for } => {
                self.on_timer(&mut fx, kind, scheduled_for)
            }
            Event::Cellular { signal } => self.on_cellular(&mut fx, signal),
            Event::MessageReceived { msg } => self.on_message(&mut fx, msg),
            Event::Command { kind } => self.on_command(&mut fx, kind),
        }

        debug_assert!(
            self.pending.is_none()
                || (self.next_heartbeat.is_none()
                    && self.next_evaluation.is_none()
                    && self.next_selection.is_none()),
            "periodic timers must be suspended during a transition"
        );
        fx
    }

    // ------------------------------------------------------------------
    // Health samples and the proactive monitor
    // ------------------------------------------------------------------

    fn on_health_sample(
        &mut self,
        fx: &mut Effects,
        resources: ResourceProfile,
        position: Position,
        velocity: Velocity,
    ) {
        self.resources = resources;
        self.position = position;
        self.velocity = velocity;
        let me = self.cfg.me.clone();
        if let Some(entry) = self.table.get_mut(&me) {
            entry.coords = position;
        }

        if self.fsm == Role::Leader
            && resources.min_vital() < self.cfg.protocol.critical_floor_pct
        {
            // vital sign under the critical floor: bail out before a hard
            // failure and let the network reorganize around a successor
            self.exit_network(fx, ExitCause::FailureAlert);
        }
    }

    fn on_command(&mut self, fx: &mut Effects, kind: CommandKind) {
        match kind {
            CommandKind::Exit => {
                if self.fsm != Role::Null || !matches!(self.attach, AttachStatus::Detached) {
                    self.exit_network(fx, ExitCause::Normal);
                }
            }
            CommandKind::InjectKill => {
                if self.fsm != Role::Null {
                    fx.trace(TraceKind::FsmTransition {
                        from: self.fsm,
                        to: Role::Null,
                        event_symbol: EventSymbol::Failure,
                    });
                }
                self.fsm = Role::Null;
                self.alive = false;
                self.retired = true;
                self.attach = AttachStatus::Detached;
            }
        }
    }

    fn exit_network(&mut self, fx: &mut Effects, cause: ExitCause) {
        if self.attach.ip().is_some() && self.fsm != Role::Null {
            fx.broadcast(ExitNotification {
                source_machine_id: self.cfg.me.clone(),
                destination_machine_id: MachineId::new(BROADCAST_ID),
                timestamp: self.now,
                role: self.fsm,
                cause,
            });
        }
        if self.fsm != Role::Null {
            fx.trace(TraceKind::FsmTransition {
                from: self.fsm,
                to: Role::Null,
                event_symbol: EventSymbol::Exiting,
            });
        }
        match self.attach {
            // a half-started stack still owns the host slot
            AttachStatus::Hosting { .. } | AttachStatus::StartingHost => {
                fx.cell(CellularCommand::TeardownHost)
            }
            AttachStatus::Attached { .. } | AttachStatus::Attaching => {
                fx.cell(CellularCommand::DetachUe)
            }
            AttachStatus::Detached => {}
        }
        self.fsm = Role::Null;
        self.retired = true;
        self.attach = AttachStatus::Detached;
        self.assoc = AssocState::Idle;
        self.pending = None;
        self.suspicion = None;
        self.next_heartbeat = None;
        self.next_evaluation = None;
        self.next_selection = None;
    }

    // ------------------------------------------------------------------
    // Timers
    // ------------------------------------------------------------------

    fn on_timer(&mut self, fx: &mut Effects, kind: TimerKind, scheduled_for: f64) {
        match kind {
            TimerKind::Heartbeat => {
                if self.pending.is_some() || self.next_heartbeat != Some(scheduled_for) {
                    return;
                }
                fx.trace(TraceKind::TimerFired { which: "heartbeat".into() });
                self.heartbeat_tick(fx);
                let next = scheduled_for + self.timers.t_heartbeat;
                self.next_heartbeat = Some(next);
                fx.timer(TimerKind::Heartbeat, next);
            }
            TimerKind::Evaluation => {
                if self.pending.is_some() || self.next_evaluation != Some(scheduled_for) {
                    return;
                }
                fx.trace(TraceKind::TimerFired { which: "evaluation".into() });
                self.evaluation_tick(fx);
                let next = scheduled_for + self.timers.t_performance;
                self.next_evaluation = Some(next);
                fx.timer(TimerKind::Evaluation, next);
            }
            TimerKind::Selection => {
                if self.pending.is_some() || self.next_selection != Some(scheduled_for) {
                    return;
                }
                fx.trace(TraceKind::TimerFired { which: "selection".into() });
                self.selection_tick(fx);
                if self.pending.is_none() {
                    let next = scheduled_for + self.timers.t_selection;
                    self.next_selection = Some(next);
                    fx.timer(TimerKind::Selection, next);
                }
            }
            TimerKind::BootAttach => {
                if matches!(self.attach, AttachStatus::Detached)
                    && self.assoc == AssocState::Idle
                {
                    self.attach = AttachStatus::Attaching;
                    fx.cell(CellularCommand::AttachUe);
                }
            }
            TimerKind::AssociationTimeout { attempt } => {
                if self.assoc == (AssocState::Sent { attempt }) && self.pending.is_none() {
                    // no reply: run cellular-level checks against the host
                    fx.trace(TraceKind::TimerFired { which: "association_timeout".into() });
                    if let Some(host) = self.serving_host.clone() {
                        self.begin_checks(fx, host);
                    }
                }
            }
            TimerKind::HeartbeatDeadline { peer, seen } => {
                self.on_heartbeat_deadline(fx, peer, seen);
            }
            TimerKind::CheckTick { attempt } => {
                if let Some(s) = &self.suspicion {
                    if s.attempt == attempt {
                        fx.cell(CellularCommand::Check);
                    }
                }
            }
            TimerKind::TransitionStart { epoch } => {
                if let Some(p) = &self.pending {
                    if p.epoch == epoch && !p.started {
                        self.perform_transition_start(fx);
                    }
                }
            }
            TimerKind::TransitionHostStart { epoch } => {
                if self.pending.as_ref().is_some_and(|p| p.epoch == epoch) {
                    self.attach = AttachStatus::StartingHost;
                    fx.cell(CellularCommand::StartCoreRan);
                }
            }
            TimerKind::TransitionAttach { epoch } => {
                if self.pending.as_ref().is_some_and(|p| p.epoch == epoch) {
                    self.attach = AttachStatus::Attaching;
                    fx.cell(CellularCommand::AttachUe);
                }
            }
            TimerKind::TransitionStall { epoch } => {
                if self.pending.as_ref().is_some_and(|p| p.epoch == epoch) {
                    self.on_transition_stall(fx);
                }
            }
        }
    }

    fn on_heartbeat_deadline(&mut self, fx: &mut Effects, peer: MachineId, seen: f64) {
        if self.pending.is_some() {
            return;
        }
        if self.heartbeats.last_seen(&peer) != Some(seen) {
            return; // a fresher heartbeat re-armed this deadline
        }
        if !self.table.contains(&peer) {
            return;
        }
        let suspected = self
            .detect_failures(self.now)
            .into_iter()
            .find(|(id, _)| *id == peer);
        let Some((_, class)) = suspected else { return };
        match class {
            FailureClass::FollowerFailure => {
                if self.fsm != Role::Leader {
                    if self.suspicion.is_some() {
                        // leader checks underway; their outcome decides
                        // whether this silence was a routing casualty
                        return;
                    }
                    // peer-to-peer traffic hairpins through the host, so a
                    // silent peer plus a quiet leader points at dead
                    // routing, not a dead peer
                    if let Some(leader_id) = self.stale_leader() {
                        fx.trace(TraceKind::FailureSuspected {
                            suspect: leader_id.clone(),
                            class: FailureClass::LeaderSuspect.name().into(),
                        });
                        self.begin_checks(fx, leader_id);
                        return;
                    }
                }
                // silent follower on a routable network: drop it outright;
                // the network keeps running without it
                fx.trace(TraceKind::FailureSuspected {
                    suspect: peer.clone(),
                    class: class.name().into(),
                });
                self.drop_member(&peer);
            }
            FailureClass::LeaderSuspect => {
                fx.trace(TraceKind::FailureSuspected {
                    suspect: peer.clone(),
                    class: class.name().into(),
                });
                self.begin_checks(fx, peer);
            }
        }
    }

    /// The known leader, if we have not heard a heartbeat from it within
    /// one heartbeat interval.
    fn stale_leader(&self) -> Option<MachineId> {
        let leader = self.table.leader()?;
        let leader_id = leader.machine.id.clone();
        if leader_id == self.cfg.me {
            return None;
        }
        match self.heartbeats.last_seen(&leader_id) {
            Some(seen) if self.now - seen <= self.timers.t_heartbeat => None,
            _ => Some(leader_id),
        }
    }

    // ------------------------------------------------------------------
    // Periodic processes
    // ------------------------------------------------------------------

    fn heartbeat_tick(&mut self, fx: &mut Effects) {
        let peers: Vec<MachineId> =
            self.table.ids().filter(|id| **id != self.cfg.me).cloned().collect();
        for peer in peers {
            fx.send(
                peer.clone(),
                HeartbeatNotification {
                    source_machine_id: self.cfg.me.clone(),
                    destination_machine_id: peer,
                    timestamp: self.now,
                    cellular_status: 1,
                    vehicle_type: 0,
                    autopilot: 0,
                    base_mode: 0,
                    system_status: 0,
                    vn: self.velocity.vn,
                    ve: self.velocity.ve,
                    vd: self.velocity.vd,
                    x: self.position.x,
                    y: self.position.y,
                    z: self.position.z,
                    heading: heading_degrees(&self.velocity),
                },
            );
        }
    }

    fn evaluation_tick(&mut self, fx: &mut Effects) {
        let positions: Vec<Position> = self.table.entries.values().map(|e| e.coords).collect();
        let Ok(com) = center_of_mass(&positions) else { return };
        let Ok(score) = aggregate_score(&self.position, &com, &self.resources, &self.cfg.scoring)
        else {
            return;
        };
        self.my_score = score;
        let me = self.cfg.me.clone();
        if let Some(entry) = self.table.get_mut(&me) {
            entry.score = score.total;
            entry.coords = self.position;
        }
        self.record_score(&me, self.now, score.total);
        let peers: Vec<MachineId> =
            self.table.ids().filter(|id| **id != self.cfg.me).cloned().collect();
        for peer in peers {
            fx.send(
                peer.clone(),
                PerformanceReport {
                    source_machine_id: self.cfg.me.clone(),
                    destination_machine_id: peer,
                    timestamp: self.now,
                    performance_score: score.total,
                },
            );
        }
    }

    fn selection_tick(&mut self, fx: &mut Effects) {
        let Some((best_id, best_score)) = self.table.top_scorer(None) else { return };
        let best_id = best_id.clone();
        let Some(leader) = self.table.leader() else { return };
        let leader_id = leader.machine.id.clone();
        let leader_score = leader.score;

        if best_id == leader_id || best_id != self.cfg.me {
            // either the leader stays, or the decision belongs to the
            // top-scoring machine
            return;
        }

        let passes = match self.cfg.scoring.threshold_policy {
            ThresholdPolicy::MarginOverLeader => {
                best_score - leader_score > self.cfg.scoring.score_thres
            }
            ThresholdPolicy::AbsoluteFloor => best_score > self.cfg.scoring.score_thres,
            ThresholdPolicy::GapOverSecondBest => match self.table.second_best(&best_id) {
                Some(second) => best_score - second > self.cfg.scoring.score_thres,
                None => true,
            },
        };
        if !passes {
            return;
        }

        fx.trace(TraceKind::Election {
            candidate: self.cfg.me.clone(),
            outcome: "transition_requested".into(),
            scores: self.score_snapshot(),
        });
        fx.send(
            leader_id.clone(),
            TransitionRequest {
                source_machine_id: self.cfg.me.clone(),
                destination_machine_id: leader_id,
                timestamp: self.now,
                candidate_score: best_score,
                cause: TransitionCause::Scheduled,
                network_status: "synchronized".into(),
                transition_plan: format!("host:{}", self.cfg.me),
            },
        );
    }

    fn score_snapshot(&self) -> std::collections::BTreeMap<String, f64> {
        self.table
            .entries
            .iter()
            .map(|(id, e)| (id.to_string(), e.score))
            .collect()
    }

    /// Files a score under its round timestamp. Kept short: only rounds
    /// near a failure window ever matter.
    fn record_score(&mut self, id: &MachineId, round_t: f64, score: f64) {
        let rounds = self.score_rounds.entry(id.clone()).or_default();
        rounds.push_back((round_t, score));
        while rounds.len() > 4 {
            rounds.pop_front();
        }
    }

    fn drop_member(&mut self, id: &MachineId) {
        self.table.remove(id);
        self.heartbeats.remove(id);
        self.score_rounds.remove(id);
    }

    /// The newest score filed at or before `sync_point`, falling back to
    /// the oldest known round, then to the live table value.
    fn score_as_of(&self, id: &MachineId, sync_point: f64) -> Option<f64> {
        let rounds = self.score_rounds.get(id)?;
        rounds
            .iter()
            .rev()
            .find(|(t, _)| *t <= sync_point)
            .or_else(|| rounds.front())
            .map(|(_, s)| *s)
    }

    /// Rewinds every table score to its latest value from a round no newer
    /// than `sync_point`. Rounds after that instant cannot have reached the
    /// other replicas (the host carrying them was already gone), so this
    /// reconstructs the view every live machine shares before electing.
    fn rewind_scores_to(&mut self, sync_point: f64) {
        let rewound: Vec<(MachineId, f64)> = self
            .table
            .ids()
            .filter_map(|id| self.score_as_of(id, sync_point).map(|s| (id.clone(), s)))
            .collect();
        for (id, score) in rewound {
            if let Some(entry) = self.table.get_mut(&id) {
                entry.score = score;
            }
            if id == self.cfg.me {
                self.my_score.total = score;
            }
        }
    }

    // ------------------------------------------------------------------
    // Cellular signals
    // ------------------------------------------------------------------

    fn on_cellular(&mut self, fx: &mut Effects, signal: CellularSignal) {
        match signal {
            CellularSignal::StackReady { session_ip } => self.on_stack_ready(fx, session_ip),
            CellularSignal::RrcConnected { session_ip: Some(ip), host } => {
                self.on_attached(fx, ip, host)
            }
            CellularSignal::RrcConnected { session_ip: None, host: _ } => {
                self.on_check_passed(fx)
            }
            CellularSignal::RrcFailed | CellularSignal::NasFailed => {
                if matches!(self.attach, AttachStatus::Attaching) {
                    // attach attempts retry until a host appears; each
                    // attempt occupies a full attach window of virtual time
                    fx.cell(CellularCommand::AttachUe);
                } else if self.suspicion.is_some() {
                    self.on_check_failed(fx, false);
                }
            }
            CellularSignal::SsLost => {
                if self.suspicion.is_some() {
                    self.on_check_failed(fx, true);
                }
            }
        }
    }

    fn on_stack_ready(&mut self, fx: &mut Effects, ip: Ipv4Addr) {
        if !matches!(self.attach, AttachStatus::StartingHost) {
            return;
        }
        self.attach = AttachStatus::Hosting { ip };
        self.serving_host = Some(self.cfg.me.clone());

        let (from, symbol) = match self.fsm {
            Role::Null => (Role::Null, EventSymbol::Initialization),
            from => (from, EventSymbol::LeaderSelection),
        };
        fx.trace(TraceKind::FsmTransition { from, to: Role::Leader, event_symbol: symbol });
        self.fsm = Role::Leader;

        self.table.upsert(NetworkTableEntry {
            machine: MachineIdentity { id: self.cfg.me.clone(), imei: self.cfg.imei.clone() },
            session_ip: Some(ip),
            coords: self.position,
            role: Role::Leader,
            score: self.my_score.total,
        });
        let me = self.cfg.me.clone();
        let total = self.my_score.total;
        self.record_score(&me, self.now, total);

        let completed_reorg = self.pending.take();
        self.assoc = AssocState::Established;
        self.ever_associated = true;
        self.join_kind = JoinKind::Member;
        self.suspicion = None;
        self.start_periodic_timers(fx, None, None);
        self.reseed_heartbeats(fx);
        if completed_reorg.is_some() {
            fx.trace(TraceKind::ReorgComplete { leader: self.cfg.me.clone() });
        }
    }

    fn on_attached(&mut self, fx: &mut Effects, ip: Ipv4Addr, host: Option<MachineId>) {
        if !matches!(self.attach, AttachStatus::Attaching) {
            return;
        }
        self.attach = AttachStatus::Attached { ip };
        self.serving_host = host;

        let (cause, performance) = match self.join_kind {
            JoinKind::Boot => (EntryCause::Initial, self.cfg.boot_score),
            JoinKind::Reentry => (EntryCause::Reconnection, 0.0),
            JoinKind::Rejoin => (EntryCause::Initial, 0.0),
            JoinKind::Member => (EntryCause::Initial, self.my_score.total),
        };

        if self.fsm == Role::Null {
            let symbol = match self.join_kind {
                JoinKind::Boot => EventSymbol::Initialization,
                JoinKind::Reentry => EventSymbol::Recovery,
                _ => EventSymbol::Entering,
            };
            fx.trace(TraceKind::FsmTransition {
                from: Role::Null,
                to: Role::Follower,
                event_symbol: symbol,
            });
            self.fsm = Role::Follower;
        }

        self.table.upsert(NetworkTableEntry {
            machine: MachineIdentity { id: self.cfg.me.clone(), imei: self.cfg.imei.clone() },
            session_ip: Some(ip),
            coords: self.position,
            role: Role::Follower,
            score: performance,
        });
        let me = self.cfg.me.clone();
        self.record_score(&me, self.now, performance);

        self.send_entry_notification(fx, cause, performance, ip);
    }

    fn send_entry_notification(
        &mut self,
        fx: &mut Effects,
        cause: EntryCause,
        performance: f64,
        ip: Ipv4Addr,
    ) {
        let Some(host) = self.serving_host.clone() else { return };
        let attempt = match self.assoc {
            AssocState::Sent { attempt } => attempt + 1,
            _ => 1,
        };
        fx.send(
            host.clone(),
            EntryNotification {
                source_machine_id: self.cfg.me.clone(),
                destination_machine_id: host,
                timestamp: self.now,
                imei: self.cfg.imei.clone(),
                role: Role::Follower,
                performance,
                ip_address: Some(ip),
                gps_x: self.position.x,
                gps_y: self.position.y,
                gps_z: self.position.z,
                cause,
            },
        );
        self.assoc = AssocState::Sent { attempt };
        let timeout =
            self.cfg.protocol.association_timeout_factor * self.timers.t_heartbeat;
        fx.timer(TimerKind::AssociationTimeout { attempt }, self.now + timeout);
    }

    fn on_check_passed(&mut self, fx: &mut Effects) {
        if self.suspicion.take().is_none() {
            return;
        }
        if let Some(host) = self.serving_host.clone() {
            // the host is alive after all; give it a fresh timeout window
            self.heartbeats.observe(&host, self.now);
            self.arm_deadline(fx, &host, self.now);
        }
        // the network is routable, so peers still silent past the timeout
        // really are gone
        for (peer, class) in self.detect_failures(self.now) {
            if class == FailureClass::FollowerFailure {
                fx.trace(TraceKind::FailureSuspected {
                    suspect: peer.clone(),
                    class: class.name().into(),
                });
                self.drop_member(&peer);
            }
        }
        match self.attach {
            AttachStatus::Detached => {
                self.attach = AttachStatus::Attaching;
                fx.cell(CellularCommand::AttachUe);
            }
            AttachStatus::Attached { ip } if self.assoc != AssocState::Established => {
                // association reply never arrived but the host is fine:
                // announce again
                let (cause, performance) = match self.join_kind {
                    JoinKind::Boot => (EntryCause::Initial, self.cfg.boot_score),
                    JoinKind::Reentry => (EntryCause::Reconnection, 0.0),
                    JoinKind::Rejoin => (EntryCause::Initial, 0.0),
                    JoinKind::Member => (EntryCause::Initial, self.my_score.total),
                };
                self.send_entry_notification(fx, cause, performance, ip);
            }
            _ => {}
        }
    }

    fn on_check_failed(&mut self, fx: &mut Effects, ss_lost: bool) {
        let Some(s) = self.suspicion.as_mut() else { return };
        s.failed_probes += 1;
        let confirmed = ss_lost || s.failed_probes >= self.cfg.protocol.check_attempts;
        if !confirmed {
            s.attempt += 1;
            let attempt = s.attempt;
            fx.timer(
                TimerKind::CheckTick { attempt },
                self.now + self.cfg.protocol.check_interval,
            );
            return;
        }
        let dead = self.suspicion.take().unwrap().target;
        // everything shared after the dead host's last sign of life never
        // reached the other replicas
        let sync_point = self.heartbeats.last_seen(&dead).unwrap_or(self.now);
        self.drop_member(&dead);
        if self.serving_host.as_ref() == Some(&dead) {
            self.serving_host = None;
        }
        self.start_emergency(fx, false, sync_point);
    }

    fn begin_checks(&mut self, fx: &mut Effects, target: MachineId) {
        if self.suspicion.is_some() {
            return;
        }
        self.suspicion = Some(Suspicion { target, failed_probes: 0, attempt: 0 });
        fx.timer(TimerKind::CheckTick { attempt: 0 }, self.now + self.cfg.protocol.check_interval);
    }

    // ------------------------------------------------------------------
    // Messages
    // ------------------------------------------------------------------

    fn on_message(&mut self, fx: &mut Effects, msg: Message) {
        let dest = msg.destination();
        if *dest != self.cfg.me && !dest.is_broadcast() {
            fx.trace(TraceKind::MsgDropped {
                reason: "misaddressed".into(),
                msg_type: msg.type_name().into(),
            });
            return;
        }
        if self.pending.is_some() && !matches!(msg, Message::EntryNotificationReply(_)) {
            // application processes are suspended mid-reorganization
            fx.trace(TraceKind::MsgDropped {
                reason: "reorganizing".into(),
                msg_type: msg.type_name().into(),
            });
            return;
        }

        match msg {
            Message::EntryNotification(m) => self.on_entry_notification(fx, m),
            Message::EntryNotificationReply(m) => self.on_entry_reply(fx, m),
            Message::ExitNotification(m) => self.on_exit_notification(fx, m),
            Message::PerformanceReport(m) => self.on_performance_report(fx, m),
            Message::HeartbeatNotification(m) => self.on_heartbeat(fx, m),
            Message::TransitionRequest(m) => self.on_transition_request(fx, m),
            Message::TransitionAlert(m) => self.on_transition_alert(fx, m),
            Message::TransitionFailure(m) => {
                fx.trace(TraceKind::Election {
                    candidate: self.cfg.me.clone(),
                    outcome: format!("request_refused_{:?}", m.failure_cause),
                    scores: self.score_snapshot(),
                });
            }
        }
    }

    fn on_entry_notification(&mut self, fx: &mut Effects, m: EntryNotification) {
        if !crate::messages::validate_reentry(&m) {
            fx.trace(TraceKind::MsgDropped {
                reason: "reentry with nonzero score".into(),
                msg_type: "entry_notification".into(),
            });
            return;
        }
        match self.fsm {
            Role::Leader => {
                let entrant = m.source_machine_id.clone();
                self.admit_entry(&m);
                self.heartbeats.observe(&entrant, self.now);
                self.arm_deadline(fx, &entrant, self.now);

                let reply = EntryNotificationReply {
                    source_machine_id: self.cfg.me.clone(),
                    destination_machine_id: entrant.clone(),
                    timestamp: self.now,
                    selection_timer_interval: self.timers.t_selection,
                    heartbeat_timer_interval: self.timers.t_heartbeat,
                    evaluation_timer_interval: self.timers.t_performance,
                    estimated_performance: self.time_until(self.next_evaluation, self.timers.t_performance),
                    estimated_leader_selection: self.time_until(self.next_selection, self.timers.t_selection),
                    network_table_entries: self.table.entries.values().cloned().collect(),
                };
                fx.send(entrant.clone(), reply);

                // keep the established followers' tables current
                let others: Vec<MachineId> = self
                    .table
                    .entries
                    .values()
                    .filter(|e| e.role == Role::Follower && e.machine.id != entrant)
                    .map(|e| e.machine.id.clone())
                    .collect();
                for peer in others {
                    let mut forwarded = m.clone();
                    forwarded.destination_machine_id = peer.clone();
                    fx.send(peer, forwarded);
                }
            }
            Role::Follower => {
                // forwarded by the leader so our table learns the entrant
                self.admit_entry(&m);
                self.heartbeats.observe(&m.source_machine_id, self.now);
                let peer = m.source_machine_id.clone();
                self.arm_deadline(fx, &peer, self.now);
            }
            Role::Null => {}
        }
    }

    fn admit_entry(&mut self, m: &EntryNotification) {
        self.table.upsert(NetworkTableEntry {
            machine: MachineIdentity { id: m.source_machine_id.clone(), imei: m.imei.clone() },
            session_ip: m.ip_address,
            coords: Position::new(m.gps_x, m.gps_y, m.gps_z),
            role: Role::Follower,
            score: m.performance,
        });
        self.record_score(&m.source_machine_id, m.timestamp, m.performance);
    }

    fn time_until(&self, next: Option<f64>, interval: f64) -> f64 {
        next.map_or(interval, |n| (n - self.now).clamp(0.0, interval))
    }

    fn on_entry_reply(&mut self, fx: &mut Effects, m: EntryNotificationReply) {
        let AssocState::Sent { .. } = self.assoc else {
            fx.trace(TraceKind::MsgDropped {
                reason: "unsolicited reply".into(),
                msg_type: "entry_notification_reply".into(),
            });
            return;
        };

        self.timers = TimerConfig {
            t_heartbeat: m.heartbeat_timer_interval,
            t_performance: m.evaluation_timer_interval,
            t_selection: m.selection_timer_interval,
            heartbeat_timeout_factor: self.timers.heartbeat_timeout_factor,
        };

        for entry in m.network_table_entries {
            self.record_score(&entry.machine.id.clone(), m.timestamp, entry.score);
            self.table.upsert(entry);
        }
        // our own row is authoritative locally
        self.table.upsert(NetworkTableEntry {
            machine: MachineIdentity { id: self.cfg.me.clone(), imei: self.cfg.imei.clone() },
            session_ip: self.attach.ip(),
            coords: self.position,
            role: self.fsm,
            score: self.my_score.total,
        });

        self.assoc = AssocState::Established;
        self.ever_associated = true;
        self.join_kind = JoinKind::Member;
        self.suspicion = None;
        let completed_reorg = self.pending.take().map(|p| p.candidate);

        self.start_periodic_timers(
            fx,
            Some(m.estimated_performance),
            Some(m.estimated_leader_selection),
        );
        self.reseed_heartbeats(fx);

        if let Some(leader) = completed_reorg {
            fx.trace(TraceKind::ReorgComplete { leader });
        }
    }

    fn start_periodic_timers(
        &mut self,
        fx: &mut Effects,
        eval_estimate: Option<f64>,
        selection_estimate: Option<f64>,
    ) {
        let hb = self.now + self.timers.t_heartbeat;
        let eval = self.now + eval_estimate.unwrap_or(self.timers.t_performance);
        let sel = self.now + selection_estimate.unwrap_or(self.timers.t_selection);
        self.next_heartbeat = Some(hb);
        self.next_evaluation = Some(eval);
        self.next_selection = Some(sel);
        fx.timer(TimerKind::Heartbeat, hb);
        fx.timer(TimerKind::Evaluation, eval);
        fx.timer(TimerKind::Selection, sel);
    }

    fn reseed_heartbeats(&mut self, fx: &mut Effects) {
        self.heartbeats.clear();
        let peers: Vec<MachineId> =
            self.table.ids().filter(|id| **id != self.cfg.me).cloned().collect();
        for peer in peers {
            self.heartbeats.observe(&peer, self.now);
            self.arm_deadline(fx, &peer, self.now);
        }
    }

    fn arm_deadline(&mut self, fx: &mut Effects, peer: &MachineId, seen: f64) {
        fx.timer(
            TimerKind::HeartbeatDeadline { peer: peer.clone(), seen },
            seen + self.timers.heartbeat_timeout() + DETECT_EPSILON,
        );
    }

    fn on_exit_notification(&mut self, fx: &mut Effects, m: ExitNotification) {
        let leaver = m.source_machine_id.clone();
        if !self.table.contains(&leaver) {
            fx.trace(TraceKind::MsgDropped {
                reason: "exit from unknown machine".into(),
                msg_type: "exit_notification".into(),
            });
            return;
        }
        let was_leader = self.table.get(&leaver).map(|e| e.role) == Some(Role::Leader);
        let sync_point = self.heartbeats.last_seen(&leaver).unwrap_or(m.timestamp);
        self.drop_member(&leaver);
        if self.suspicion.as_ref().map(|s| &s.target) == Some(&leaver) {
            self.suspicion = None;
        }
        if was_leader {
            // the host is going away; its stack still needs the teardown
            // window before a successor can start
            if self.serving_host.as_ref() == Some(&leaver) {
                self.serving_host = None;
            }
            self.start_emergency(fx, true, sync_point);
        }
    }

    fn on_performance_report(&mut self, fx: &mut Effects, m: PerformanceReport) {
        if !(0.0..=100.0).contains(&m.performance_score) {
            fx.trace(TraceKind::MsgDropped {
                reason: "score out of range".into(),
                msg_type: "performance_report".into(),
            });
            return;
        }
        match self.table.get_mut(&m.source_machine_id) {
            Some(entry) => {
                entry.score = m.performance_score;
                self.record_score(&m.source_machine_id, m.timestamp, m.performance_score);
            }
            None => fx.trace(TraceKind::MsgDropped {
                reason: "report from unknown machine".into(),
                msg_type: "performance_report".into(),
            }),
        }
    }

    fn on_heartbeat(&mut self, fx: &mut Effects, m: HeartbeatNotification) {
        let src = m.source_machine_id.clone();
        if !self.table.contains(&src) {
            fx.trace(TraceKind::MsgDropped {
                reason: "heartbeat from unknown machine".into(),
                msg_type: "heartbeat_notification".into(),
            });
            return;
        }
        self.heartbeats.observe(&src, self.now);
        self.arm_deadline(fx, &src, self.now);
        if let Some(entry) = self.table.get_mut(&src) {
            entry.coords = Position::new(m.x, m.y, m.z);
        }
        if self.suspicion.as_ref().map(|s| &s.target) == Some(&src) {
            // proof of life beats any pending probes
            self.suspicion = None;
        }
    }

    fn on_transition_request(&mut self, fx: &mut Effects, m: TransitionRequest) {
        if self.fsm != Role::Leader {
            fx.trace(TraceKind::MsgDropped {
                reason: "transition request at non-leader".into(),
                msg_type: "transition_request".into(),
            });
            return;
        }
        let candidate = m.source_machine_id.clone();
        let refusal = |cause: TransitionFailureCause, action: &str| TransitionFailure {
            source_machine_id: self.cfg.me.clone(),
            destination_machine_id: candidate.clone(),
            timestamp: self.now,
            failure_cause: cause,
            retry_policy: "retry_next_selection_cycle".into(),
            suggestive_action: action.into(),
            supporting_data: String::new(),
        };

        let Some(entry) = self.table.get(&candidate) else {
            fx.trace(TraceKind::Election {
                candidate: candidate.clone(),
                outcome: "rejected_illegitimate".into(),
                scores: self.score_snapshot(),
            });
            fx.send(candidate.clone(), refusal(TransitionFailureCause::Illegitimate, "associate first"));
            return;
        };
        if self.pending.is_some() {
            fx.send(candidate.clone(), refusal(TransitionFailureCause::Busy, "transition in progress"));
            return;
        }
        let score_matches = (entry.score - m.candidate_score).abs() <= SCORE_MATCH_TOLERANCE;
        let is_top = self.table.top_scorer(None).map(|(id, _)| id.clone()) == Some(candidate.clone());
        if !score_matches || !is_top {
            fx.trace(TraceKind::Election {
                candidate: candidate.clone(),
                outcome: "rejected_not_top_score".into(),
                scores: self.score_snapshot(),
            });
            fx.send(candidate.clone(), refusal(TransitionFailureCause::NotTopScore, "resynchronize tables"));
            return;
        }

        let start_time = self.now + self.cfg.protocol.transition_grace;
        fx.trace(TraceKind::Election {
            candidate: candidate.clone(),
            outcome: "approved".into(),
            scores: self.score_snapshot(),
        });
        let alert = TransitionAlert {
            source_machine_id: self.cfg.me.clone(),
            destination_machine_id: MachineId::new(BROADCAST_ID),
            timestamp: self.now,
            approved_candidate_id: candidate,
            transition_start_time: start_time,
            network_configuration_change: "host_change".into(),
        };
        fx.broadcast(alert.clone());
        // the broadcast never loops back; apply the alert locally
        self.accept_alert(fx, &alert);
    }

    fn on_transition_alert(&mut self, fx: &mut Effects, m: TransitionAlert) {
        let from_leader = self
            .table
            .get(&m.source_machine_id)
            .map(|e| e.role == Role::Leader)
            .unwrap_or(false);
        if !from_leader {
            fx.trace(TraceKind::MsgDropped {
                reason: "alert not from the known leader".into(),
                msg_type: "transition_alert".into(),
            });
            return;
        }
        if !self.table.contains(&m.approved_candidate_id) {
            fx.trace(TraceKind::MsgDropped {
                reason: "alert names unknown candidate".into(),
                msg_type: "transition_alert".into(),
            });
            return;
        }
        self.accept_alert(fx, &m);
    }

    fn accept_alert(&mut self, fx: &mut Effects, m: &TransitionAlert) {
        self.reorg_epoch += 1;
        let epoch = self.reorg_epoch;
        let start_time = m.transition_start_time.max(self.now);
        self.pending = Some(PendingTransition {
            candidate: m.approved_candidate_id.clone(),
            start_time,
            epoch,
            started: false,
        });
        self.suspicion = None;
        self.next_heartbeat = None;
        self.next_evaluation = None;
        self.next_selection = None;
        if start_time > self.now {
            fx.timer(TimerKind::TransitionStart { epoch }, start_time);
        } else {
            self.perform_transition_start(fx);
        }
    }

    /// Executes the local half of a scheduled transition: release
    /// everything, flip the table roles, and line up the re-attach.
    fn perform_transition_start(&mut self, fx: &mut Effects) {
        let Some(pending) = self.pending.as_mut() else { return };
        pending.started = true;
        let candidate = pending.candidate.clone();
        let start = pending.start_time;
        let epoch = pending.epoch;

        fx.trace(TraceKind::ReorgStart {
            trigger: ReorgTrigger::Scheduled,
            candidate: candidate.clone(),
        });

        self.flip_table_roles(&candidate);
        self.heartbeats.clear();
        self.assoc = AssocState::Idle;

        let delays = self.cfg.delays;
        match self.attach {
            AttachStatus::Hosting { .. } => {
                fx.trace(TraceKind::FsmTransition {
                    from: Role::Leader,
                    to: Role::Follower,
                    event_symbol: EventSymbol::LeaderSelection,
                });
                self.fsm = Role::Follower;
                fx.cell(CellularCommand::TeardownHost);
            }
            AttachStatus::Attached { .. } | AttachStatus::Attaching => {
                fx.cell(CellularCommand::DetachUe);
            }
            _ => {}
        }
        self.attach = AttachStatus::Detached;

        if candidate == self.cfg.me {
            fx.timer(TimerKind::TransitionHostStart { epoch }, start + delays.teardown);
        } else {
            // begin the attach so its RRC phase lands right after the new
            // host comes up
            let wait = (delays.teardown + delays.host_start() - delays.ue_init).max(0.0);
            fx.timer(TimerKind::TransitionAttach { epoch }, start + wait);
        }
        fx.timer(
            TimerKind::TransitionStall { epoch },
            start + delays.teardown + delays.host_start() + delays.attach()
                + self.cfg.protocol.stall_margin,
        );
    }

    /// Handshake-free reorganization after a confirmed leader death or a
    /// leader exit: the next-best scorer hosts, everyone re-attaches.
    /// `sync_point` is the last instant the departed host was provably
    /// routing; scores from rounds after it are rewound so every replica
    /// elects over the same snapshot.
    fn start_emergency(&mut self, fx: &mut Effects, host_tearing_down: bool, sync_point: f64) {
        if !self.ever_associated {
            // never synchronized with anyone: electing ourselves could
            // split the network, so just keep trying to attach
            if matches!(self.attach, AttachStatus::Attached { .. } | AttachStatus::Detached) {
                self.attach = AttachStatus::Attaching;
                self.assoc = AssocState::Idle;
                fx.cell(CellularCommand::DetachUe);
                fx.cell(CellularCommand::AttachUe);
            }
            return;
        }
        self.rewind_scores_to(sync_point);
        let Some((candidate, _)) = self.table.top_scorer(None) else { return };
        let candidate = candidate.clone();

        fx.trace(TraceKind::Election {
            candidate: candidate.clone(),
            outcome: "emergency".into(),
            scores: self.score_snapshot(),
        });

        self.reorg_epoch += 1;
        let epoch = self.reorg_epoch;
        self.pending = Some(PendingTransition {
            candidate: candidate.clone(),
            start_time: self.now,
            epoch,
            started: true,
        });
        self.suspicion = None;
        self.next_heartbeat = None;
        self.next_evaluation = None;
        self.next_selection = None;

        fx.trace(TraceKind::ReorgStart {
            trigger: ReorgTrigger::Emergency,
            candidate: candidate.clone(),
        });

        self.flip_table_roles(&candidate);
        self.heartbeats.clear();
        self.assoc = AssocState::Idle;

        if matches!(self.attach, AttachStatus::Attached { .. } | AttachStatus::Attaching) {
            fx.cell(CellularCommand::DetachUe);
        }
        self.attach = AttachStatus::Detached;

        let delays = self.cfg.delays;
        let teardown_wait = if host_tearing_down { delays.teardown } else { 0.0 };
        if candidate == self.cfg.me {
            if host_tearing_down {
                fx.timer(TimerKind::TransitionHostStart { epoch }, self.now + teardown_wait);
            } else {
                self.attach = AttachStatus::StartingHost;
                fx.cell(CellularCommand::StartCoreRan);
            }
        } else {
            let wait = (teardown_wait + delays.host_start() - delays.ue_init).max(0.0);
            fx.timer(TimerKind::TransitionAttach { epoch }, self.now + wait);
        }
        fx.timer(
            TimerKind::TransitionStall { epoch },
            self.now + teardown_wait + delays.host_start() + delays.attach()
                + self.cfg.protocol.stall_margin,
        );
    }

    /// New roles take effect atomically: the candidate owns the gateway,
    /// everyone else is a follower whose PDU address is released until it
    /// re-attaches.
    fn flip_table_roles(&mut self, candidate: &MachineId) {
        let gateway = self.cfg.subnet.gateway();
        for (id, entry) in self.table.entries.iter_mut() {
            if id == candidate {
                entry.role = Role::Leader;
                entry.session_ip = Some(gateway);
            } else {
                entry.role = Role::Follower;
                entry.session_ip = None;
            }
        }
    }

    /// The incoming host never appeared: drop it and elect the next best.
    fn on_transition_stall(&mut self, fx: &mut Effects) {
        let Some(pending) = self.pending.take() else { return };
        let failed = pending.candidate;
        fx.trace(TraceKind::FailureSuspected {
            suspect: failed.clone(),
            class: "stalled_candidate".into(),
        });
        self.drop_member(&failed);
        if self.table.get(&self.cfg.me).is_none() {
            // we were the stalled candidate; nothing sane to do locally
            return;
        }
        // scores have been frozen since the wave began, so the current
        // values are already the shared snapshot
        self.start_emergency(fx, false, self.now);
    }
}

/// Wire heading from the active velocity, degrees in [0, 360).
fn heading_degrees(v: &Velocity) -> f64 {
    if v.vn == 0.0 && v.ve == 0.0 {
        return 0.0;
    }
    let h = v.ve.atan2(v.vn).to_degrees().rem_euclid(360.0);
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}
