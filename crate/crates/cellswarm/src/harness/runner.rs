//! The discrete-event loop: boots every machine, routes controller
//! effects through the radio domain, applies the scenario timeline, and
//! checks the safety invariants after every event.

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use crate::cellsim::{
    CellularCommand, Delivery, Fault, PendingOp, RadioDomain, SendOutcome,
};
use crate::controller::{
    CommandKind, Controller, ControllerConfig, Destination, Effects, Event, JoinKind, TimerKind,
};
use crate::domain::{
    validate_table, MachineId, NetworkTable, Position, ResourceProfile, Role, Velocity,
    BROADCAST_ID,
};
use crate::harness::scenario::{
    ConfigError, MachineSpec, ResourceField, ScenarioConfig, TimelineAction,
};
use crate::harness::scheduler::EventQueue;
use crate::harness::trace::{TraceEvent, TraceKind};
use crate::harness::metrics::RunMetrics;
use crate::messages::{encode, Message};

/// End-of-run view of one machine.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineEndState {
    pub role: Role,
    pub alive: bool,
    pub quiescent: bool,
    pub table: NetworkTable,
}

/// Everything a run produces.
#[derive(Debug)]
pub struct RunOutput {
    pub trace: Vec<TraceEvent>,
    pub metrics: RunMetrics,
    pub final_states: BTreeMap<MachineId, MachineEndState>,
}

/// Runs a scenario to its configured duration.
pub fn run(config: &ScenarioConfig) -> Result<RunOutput, ConfigError> {
    run_with_observer(config, |_| {})
}

/// Like [`run`], invoking `observer` on every trace event as it is
/// emitted (for incremental writers).
pub fn run_with_observer(
    config: &ScenarioConfig,
    observer: impl FnMut(&TraceEvent),
) -> Result<RunOutput, ConfigError> {
    config.validate()?;
    let mut sim = Sim::new(config, Box::new(observer));
    sim.boot_all();
    for (i, entry) in config.timeline.iter().enumerate() {
        sim.queue.push(entry.at, QueueItem::Timeline(i));
    }
    while let Some((t, item)) = sim.queue.pop() {
        if t > config.duration {
            break;
        }
        sim.process(t, item);
    }
    Ok(sim.finish())
}

enum QueueItem {
    Machine(MachineId, Event),
    Deliver { from: MachineId, delivery: Delivery, msg: Message, payload: Rc<String> },
    Cell(PendingOp),
    Timeline(usize),
}

/// Ground-truth mobility: piecewise-constant velocity.
struct Mobility {
    anchor_t: f64,
    anchor_pos: Position,
    velocity: Velocity,
}

impl Mobility {
    fn position_at(&self, t: f64) -> Position {
        self.velocity.displace(self.anchor_pos, t - self.anchor_t)
    }

    fn set_velocity(&mut self, t: f64, v: Velocity) {
        self.anchor_pos = self.position_at(t);
        self.anchor_t = t;
        self.velocity = v;
    }
}

#[derive(Clone, Copy)]
struct Ramp {
    from: f64,
    to: f64,
    start: f64,
    end: f64,
}

#[derive(Clone, Copy)]
struct FieldState {
    base: f64,
    ramp: Option<Ramp>,
}

impl FieldState {
    fn value_at(&self, t: f64) -> f64 {
        match self.ramp {
            Some(r) if t >= r.start => {
                if t >= r.end {
                    r.to
                } else {
                    r.from + (r.to - r.from) * (t - r.start) / (r.end - r.start)
                }
            }
            _ => self.base,
        }
    }
}

/// Ground-truth resources: settable base values plus at most one active
/// linear ramp per field.
struct Resources {
    memory: FieldState,
    battery: FieldState,
    processor: FieldState,
}

impl Resources {
    fn new(r: ResourceProfile) -> Self {
        Resources {
            memory: FieldState { base: r.memory_pct, ramp: None },
            battery: FieldState { base: r.battery_pct, ramp: None },
            processor: FieldState { base: r.processor_pct, ramp: None },
        }
    }

    fn value_at(&self, t: f64) -> ResourceProfile {
        ResourceProfile::new(
            self.memory.value_at(t),
            self.battery.value_at(t),
            self.processor.value_at(t),
        )
    }

    fn set(&mut self, r: ResourceProfile) {
        *self = Resources::new(r);
    }

    fn ramp(&mut self, field: ResourceField, ramp: Ramp) {
        let slot = match field {
            ResourceField::Memory => &mut self.memory,
            ResourceField::Battery => &mut self.battery,
            ResourceField::Processor => &mut self.processor,
        };
        slot.ramp = Some(ramp);
    }
}

struct Sim<'a> {
    config: &'a ScenarioConfig,
    cell: RadioDomain,
    controllers: BTreeMap<MachineId, Controller>,
    mobility: BTreeMap<MachineId, Mobility>,
    resources: BTreeMap<MachineId, Resources>,
    queue: EventQueue<QueueItem>,
    trace: Vec<TraceEvent>,
    violations: BTreeSet<String>,
    observer: Box<dyn FnMut(&TraceEvent) + 'a>,
}

impl<'a> Sim<'a> {
    fn new(config: &'a ScenarioConfig, observer: Box<dyn FnMut(&TraceEvent) + 'a>) -> Self {
        Sim {
            config,
            cell: RadioDomain::new(config.subnet, config.stack_delays, config.link, config.seed),
            controllers: BTreeMap::new(),
            mobility: BTreeMap::new(),
            resources: BTreeMap::new(),
            queue: EventQueue::new(),
            trace: Vec::new(),
            violations: BTreeSet::new(),
            observer,
        }
    }

    fn controller_config(&self, spec: &MachineSpec) -> ControllerConfig {
        ControllerConfig {
            me: spec.id.clone(),
            imei: spec.imei.clone(),
            boot_score: spec.boot_score,
            timers: self.config.timers,
            scoring: self.config.scoring,
            protocol: self.config.protocol,
            delays: self.config.stack_delays,
            subnet: self.config.subnet,
        }
    }

    fn boot_all(&mut self) {
        for spec in &self.config.machines {
            self.mobility.insert(
                spec.id.clone(),
                Mobility { anchor_t: 0.0, anchor_pos: spec.position, velocity: Velocity::default() },
            );
            self.resources.insert(spec.id.clone(), Resources::new(spec.resources));
            let (controller, fx) =
                Controller::boot(self.controller_config(spec), spec.position, spec.resources);
            self.controllers.insert(spec.id.clone(), controller);
            self.apply_effects(0.0, spec.id.clone(), fx);
        }
        self.post_checks(0.0);
    }

    fn process(&mut self, t: f64, item: QueueItem) {
        match item {
            QueueItem::Timeline(idx) => {
                let action = self.config.timeline[idx].action.clone();
                self.apply_timeline(t, action);
            }
            QueueItem::Machine(id, ev) => {
                if !self.controller_can_receive(&id) {
                    return;
                }
                match &ev {
                    Event::TimerFired { kind, .. }
                        if matches!(kind, TimerKind::Heartbeat | TimerKind::Evaluation) =>
                    {
                        self.deliver_sample(t, &id);
                    }
                    Event::Cellular { signal } => {
                        self.emit(
                            t,
                            id.clone(),
                            TraceKind::Cellular { detail: format!("signal:{}", signal.name()) },
                        );
                    }
                    _ => {}
                }
                self.controller_event(t, id, ev);
            }
            QueueItem::Deliver { from, delivery, msg, payload } => {
                let to = delivery.to.clone();
                if !self.cell.deliverable(&delivery) || !self.controller_can_receive(&to) {
                    self.emit(
                        t,
                        to,
                        TraceKind::MsgDropped {
                            reason: "undeliverable".into(),
                            msg_type: msg.type_name().into(),
                        },
                    );
                    return;
                }
                self.emit(
                    t,
                    to.clone(),
                    TraceKind::MsgReceived {
                        from: from.to_string(),
                        msg_type: msg.type_name().into(),
                        payload: payload.as_ref().clone(),
                    },
                );
                self.controller_event(t, to, Event::MessageReceived { msg });
            }
            QueueItem::Cell(op) => {
                let (machine, signal) = match op {
                    PendingOp::HostReady { machine, epoch } => {
                        let sig = self.cell.resolve_host_ready(&machine, epoch);
                        (machine, sig)
                    }
                    PendingOp::AttachDone { machine, epoch } => {
                        let sig = self.cell.resolve_attach(&machine, epoch);
                        (machine, sig)
                    }
                };
                if let Some(signal) = signal {
                    self.queue.push(t, QueueItem::Machine(machine, Event::Cellular { signal }));
                }
            }
        }
    }

    fn controller_can_receive(&self, id: &MachineId) -> bool {
        self.controllers.get(id).is_some_and(|c| c.is_alive())
    }

    fn deliver_sample(&mut self, t: f64, id: &MachineId) {
        let (position, velocity) = {
            let m = &self.mobility[id];
            (m.position_at(t), m.velocity)
        };
        let resources = self.resources[id].value_at(t);
        self.controller_event(
            t,
            id.clone(),
            Event::HealthSample { resources, position, velocity },
        );
    }

    fn controller_event(&mut self, t: f64, id: MachineId, ev: Event) {
        let Some(controller) = self.controllers.get_mut(&id) else { return };
        if !controller.is_alive() {
            return;
        }
        let fx = controller.handle_event(t, ev);
        self.apply_effects(t, id, fx);
        self.post_checks(t);
    }

    /// Effects apply in a fixed order: traces, sends (while the sender is
    /// still attached), cellular commands, then timer schedules.
    fn apply_effects(&mut self, t: f64, from: MachineId, fx: Effects) {
        for kind in fx.traces {
            self.emit(t, from.clone(), kind);
        }
        for outbound in fx.sends {
            let payload = match encode(&outbound.msg) {
                Ok(bytes) => Rc::new(String::from_utf8(bytes).expect("canonical JSON is UTF-8")),
                Err(e) => {
                    self.violation(format!("outbound message failed to encode: {e}"));
                    continue;
                }
            };
            match outbound.to {
                Destination::Unicast(to) => {
                    self.emit(
                        t,
                        from.clone(),
                        TraceKind::MsgSent {
                            to: to.to_string(),
                            msg_type: outbound.msg.type_name().into(),
                            payload: payload.as_ref().clone(),
                        },
                    );
                    self.transmit(t, &from, &to, &outbound.msg, &payload);
                }
                Destination::Broadcast => {
                    self.emit(
                        t,
                        from.clone(),
                        TraceKind::MsgSent {
                            to: BROADCAST_ID.into(),
                            msg_type: outbound.msg.type_name().into(),
                            payload: payload.as_ref().clone(),
                        },
                    );
                    let recipients = self.cell.addressable();
                    for to in recipients {
                        if to != from {
                            self.transmit(t, &from, &to, &outbound.msg, &payload);
                        }
                    }
                }
            }
        }
        for cmd in fx.cellular {
            self.do_cellular(t, &from, cmd);
        }
        for (kind, at) in fx.timers {
            self.queue.push(
                at,
                QueueItem::Machine(from.clone(), Event::TimerFired { kind, scheduled_for: at }),
            );
        }
    }

    fn transmit(&mut self, t: f64, from: &MachineId, to: &MachineId, msg: &Message, payload: &Rc<String>) {
        match self.cell.send(from, to, t) {
            Ok(SendOutcome::Scheduled(delivery)) => {
                let at = delivery.at;
                self.queue.push(
                    at,
                    QueueItem::Deliver {
                        from: from.clone(),
                        delivery,
                        msg: msg.clone(),
                        payload: payload.clone(),
                    },
                );
            }
            Ok(SendOutcome::DroppedLoss) => self.emit(
                t,
                from.clone(),
                TraceKind::MsgDropped { reason: "lost".into(), msg_type: msg.type_name().into() },
            ),
            Ok(SendOutcome::NoRoute(reason)) => self.emit(
                t,
                from.clone(),
                TraceKind::MsgDropped { reason: reason.into(), msg_type: msg.type_name().into() },
            ),
            Err(e) => self.emit(
                t,
                from.clone(),
                TraceKind::MsgDropped {
                    reason: format!("not attached: {e}"),
                    msg_type: msg.type_name().into(),
                },
            ),
        }
    }

    fn do_cellular(&mut self, t: f64, id: &MachineId, cmd: CellularCommand) {
        self.emit(t, id.clone(), TraceKind::Cellular { detail: format!("command:{}", cmd.name()) });
        match cmd {
            CellularCommand::StartCoreRan => match self.cell.start_core_ran(id, t) {
                Ok((op, at)) => self.queue.push(at, QueueItem::Cell(op)),
                Err(e) => {
                    self.violation(format!("single-hosting safety breached at t={t}: {e}"));
                    self.emit(
                        t,
                        id.clone(),
                        TraceKind::Cellular { detail: "error:already_hosting".into() },
                    );
                }
            },
            CellularCommand::TeardownHost => self.cell.teardown(id, t),
            CellularCommand::AttachUe => {
                let (op, at) = self.cell.attach_ue(id, t);
                self.queue.push(at, QueueItem::Cell(op));
            }
            CellularCommand::DetachUe => self.cell.detach(id),
            CellularCommand::Check => {
                let report = self.cell.cellular_check(id);
                let host = self.cell.hosting().cloned();
                let signal = report.into_signal(host);
                self.queue.push(t, QueueItem::Machine(id.clone(), Event::Cellular { signal }));
            }
        }
    }

    fn apply_timeline(&mut self, t: f64, action: TimelineAction) {
        match action {
            TimelineAction::SetVelocity { machine, vn, ve, vd } => {
                if let Some(m) = self.mobility.get_mut(&machine) {
                    m.set_velocity(t, Velocity::new(vn, ve, vd));
                }
            }
            TimelineAction::SetResources { machine, memory_pct, battery_pct, processor_pct } => {
                if let Some(r) = self.resources.get_mut(&machine) {
                    r.set(ResourceProfile::new(memory_pct, battery_pct, processor_pct));
                }
            }
            TimelineAction::RampResources { machine, field, from, to, over_seconds } => {
                if let Some(r) = self.resources.get_mut(&machine) {
                    r.ramp(field, Ramp { from, to, start: t, end: t + over_seconds });
                }
            }
            TimelineAction::InjectFault { fault } => self.apply_fault(t, fault),
            TimelineAction::Command { machine, command: _ } => {
                self.controller_event(t, machine, Event::Command { kind: CommandKind::Exit });
            }
        }
    }

    fn apply_fault(&mut self, t: f64, fault: Fault) {
        match &fault {
            Fault::Kill { machine } => {
                let machine = machine.clone();
                self.cell.apply_fault(&fault);
                self.controller_event(t, machine, Event::Command { kind: CommandKind::InjectKill });
            }
            Fault::Restore { machine: Some(machine) } => {
                let machine = machine.clone();
                self.cell.apply_fault(&fault);
                let rebirth = self.controllers.get(&machine).and_then(|c| {
                    if !c.is_alive() {
                        Some(JoinKind::Reentry)
                    } else if c.is_retired() {
                        Some(JoinKind::Rejoin)
                    } else {
                        None
                    }
                });
                if let Some(kind) = rebirth {
                    let spec = self
                        .config
                        .machine(&machine)
                        .expect("validated timeline references known machines")
                        .clone();
                    let position = self.mobility[&machine].position_at(t);
                    let resources = self.resources[&machine].value_at(t);
                    let (controller, fx) = Controller::rejoin(
                        self.controller_config(&spec),
                        kind,
                        position,
                        resources,
                        t,
                    );
                    self.controllers.insert(machine.clone(), controller);
                    self.apply_effects(t, machine, fx);
                }
            }
            _ => self.cell.apply_fault(&fault),
        }
    }

    fn emit(&mut self, t: f64, machine: MachineId, kind: TraceKind) {
        if let TraceKind::FsmTransition { from, to, event_symbol } = &kind {
            if !event_symbol.permits(*from, *to) {
                self.violation(format!(
                    "illegal transition {from}->{to} under {} at t={t} on {machine}",
                    event_symbol.code(),
                ));
            }
        }
        let ev = TraceEvent { t, machine, kind };
        (self.observer)(&ev);
        self.trace.push(ev);
    }

    fn violation(&mut self, message: String) {
        self.violations.insert(message);
    }

    /// Safety checks after every controller step: a single hosting machine
    /// and clean tables at every quiescent machine.
    fn post_checks(&mut self, t: f64) {
        let hosting: Vec<&MachineId> = self
            .controllers
            .values()
            .filter(|c| {
                c.is_alive()
                    && matches!(c.attach_status(), crate::controller::AttachStatus::Hosting { .. })
            })
            .map(|c| c.id())
            .collect();
        if hosting.len() > 1 {
            let ids: Vec<&str> = hosting.iter().map(|m| m.as_str()).collect();
            self.violation(format!("multiple hosting machines at t={t}: {}", ids.join(", ")));
        }

        let mut table_violations = Vec::new();
        for c in self.controllers.values() {
            if c.is_quiescent() {
                for v in validate_table(c.table()) {
                    table_violations.push(format!("table invariant at t={t} on {}: {v}", c.id()));
                }
            }
        }
        for v in table_violations {
            self.violation(v);
        }
    }

    fn finish(self) -> RunOutput {
        let violations: Vec<String> = self.violations.into_iter().collect();
        let metrics = RunMetrics::from_trace(&self.trace, self.config.duration, violations);
        let final_states = self
            .controllers
            .iter()
            .map(|(id, c)| {
                (
                    id.clone(),
                    MachineEndState {
                        role: c.fsm(),
                        alive: c.is_alive() && !c.is_retired(),
                        quiescent: c.is_quiescent(),
                        table: c.table().clone(),
                    },
                )
            })
            .collect();
        RunOutput { trace: self.trace, metrics, final_states }
    }
}
