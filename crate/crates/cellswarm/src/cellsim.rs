//! Abstracted cellular substrate: stack lifecycles with configurable
//! initialization delays, IP assignment, attachment, synchronization-signal
//! visibility, message delivery, and fault injection.
//!
//! The substrate never waits in real time; every operation either resolves
//! immediately or hands back a pending op for the discrete-event scheduler
//! to resolve at a later virtual instant.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{MachineId, Subnet};

/// Virtual durations of the stack lifecycle phases, in seconds.
///
/// Defaults are calibrated so a full emergency reorganization completes
/// within six seconds of failure confirmation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StackDelays {
    pub core_init: f64,
    pub ran_init: f64,
    pub ue_init: f64,
    pub attach_complete: f64,
    pub teardown: f64,
}

impl Default for StackDelays {
    fn default() -> Self {
        StackDelays {
            core_init: 2.0,
            ran_init: 1.5,
            ue_init: 1.0,
            attach_complete: 1.0,
            teardown: 0.5,
        }
    }
}

impl StackDelays {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("core_init", self.core_init),
            ("ran_init", self.ran_init),
            ("ue_init", self.ue_init),
            ("attach_complete", self.attach_complete),
            ("teardown", self.teardown),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be >= 0, got {v}"));
            }
        }
        Ok(())
    }

    /// Core + RAN bring-up time for a new host.
    pub fn host_start(&self) -> f64 {
        self.core_init + self.ran_init
    }

    /// Full UE attach attempt duration.
    pub fn attach(&self) -> f64 {
        self.ue_init + self.attach_complete
    }
}

/// Per-pair link model. Latency is `latency + U(0,jitter)` per hop; UE-UE
/// traffic hairpins through the hosting machine and pays double.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkModel {
    pub latency: f64,
    pub jitter: f64,
    pub loss_probability: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel { latency: 0.005, jitter: 0.0, loss_probability: 0.0 }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), String> {
        if !self.latency.is_finite() || self.latency < 0.0 {
            return Err(format!("latency must be >= 0, got {}", self.latency));
        }
        if !self.jitter.is_finite() || self.jitter < 0.0 {
            return Err(format!("jitter must be >= 0, got {}", self.jitter));
        }
        if !self.loss_probability.is_finite() || !(0.0..=1.0).contains(&self.loss_probability) {
            return Err(format!("loss_probability must be in [0,1], got {}", self.loss_probability));
        }
        Ok(())
    }
}

/// Commands the controller can issue to its local stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellularCommand {
    StartCoreRan,
    TeardownHost,
    AttachUe,
    DetachUe,
    Check,
}

impl CellularCommand {
    pub fn name(&self) -> &'static str {
        match self {
            CellularCommand::StartCoreRan => "start_core_ran",
            CellularCommand::TeardownHost => "teardown_host",
            CellularCommand::AttachUe => "attach_ue",
            CellularCommand::DetachUe => "detach_ue",
            CellularCommand::Check => "check",
        }
    }
}

/// Signals delivered back to a controller by the substrate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellularSignal {
    /// Core + RAN are up; the machine is hosting and owns the gateway IP.
    StackReady { session_ip: Ipv4Addr },
    /// Attach outcome or a passed health probe. Attach success carries the
    /// fresh PDU session IP; a bare probe carries none.
    RrcConnected { session_ip: Option<Ipv4Addr>, host: Option<MachineId> },
    RrcFailed,
    NasFailed,
    SsLost,
}

impl CellularSignal {
    pub fn name(&self) -> &'static str {
        match self {
            CellularSignal::StackReady { .. } => "stack_ready",
            CellularSignal::RrcConnected { .. } => "rrc_connected",
            CellularSignal::RrcFailed => "rrc_failed",
            CellularSignal::NasFailed => "nas_failed",
            CellularSignal::SsLost => "ss_lost",
        }
    }
}

/// Result of the cellular-level health probes run after a heartbeat
/// anomaly against the leader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckReport {
    pub ss_visible: bool,
    pub rrc_ok: bool,
    pub nas_ok: bool,
}

impl CheckReport {
    /// Collapses the report onto the signal a probing UE would observe.
    pub fn into_signal(self, host: Option<MachineId>) -> CellularSignal {
        if !self.ss_visible {
            CellularSignal::SsLost
        } else if !self.rrc_ok {
            CellularSignal::RrcFailed
        } else if !self.nas_ok {
            CellularSignal::NasFailed
        } else {
            CellularSignal::RrcConnected { session_ip: None, host }
        }
    }
}

/// Scenario-addressable fault injections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Fault {
    /// Machine dies silently: no exit notification, no further traffic.
    Kill { machine: MachineId },
    /// Synchronization signal invisible to everyone; attaches and probes
    /// fail even if a live host exists.
    SsBlackout,
    /// All traffic sent by this machine is silently dropped.
    DropAllFrom { machine: MachineId },
    /// Revives a killed machine (it rejoins as a follower) or clears its
    /// drop rule; without a machine, clears the blackout and all drops.
    Restore { machine: Option<MachineId> },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CellsimError {
    /// A second core + RAN start while another host is live. Reaching this
    /// is a safety failure, not a recoverable condition.
    #[error("{0} cannot host: another machine already is")]
    AlreadyHosting(MachineId),
    #[error("{0} is not attached")]
    NotAttached(MachineId),
}

/// A substrate operation that resolves at a later virtual time.
#[derive(Debug, Clone, PartialEq)]
pub enum PendingOp {
    HostReady { machine: MachineId, epoch: u64 },
    AttachDone { machine: MachineId, epoch: u64 },
}

/// Outcome of a transport send.
#[derive(Debug, Clone, PartialEq)]
pub enum SendOutcome {
    /// Delivery scheduled at `at`.
    Scheduled(Delivery),
    /// Lost to the link model's loss probability.
    DroppedLoss,
    /// No route: destination detached, unknown, or no host for UE-UE.
    NoRoute(&'static str),
}

/// An in-flight message. Validated again at delivery time: the recipient
/// must still hold the same session IP, and hairpinned traffic dies with
/// the host epoch it was routed through.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub to: MachineId,
    pub at: f64,
    to_ip: Ipv4Addr,
    via_host_epoch: Option<u64>,
}

/// The shared radio domain: one subnet, at most one host, attachments,
/// link model, and injected faults.
#[derive(Debug)]
pub struct RadioDomain {
    subnet: Subnet,
    delays: StackDelays,
    link: LinkModel,
    rng: ChaCha20Rng,
    hosting: Option<(MachineId, Ipv4Addr)>,
    /// Host slot stays occupied until this instant after a teardown.
    slot_busy_until: Option<(MachineId, f64)>,
    pending_host: Option<(MachineId, u64)>,
    attached: BTreeMap<MachineId, Ipv4Addr>,
    attach_epoch: BTreeMap<MachineId, u64>,
    host_epoch: u64,
    start_epoch: u64,
    killed: BTreeSet<MachineId>,
    drop_from: BTreeSet<MachineId>,
    ss_blackout: bool,
}

impl RadioDomain {
    pub fn new(subnet: Subnet, delays: StackDelays, link: LinkModel, seed: u64) -> Self {
        RadioDomain {
            subnet,
            delays,
            link,
            rng: ChaCha20Rng::seed_from_u64(seed),
            hosting: None,
            slot_busy_until: None,
            pending_host: None,
            attached: BTreeMap::new(),
            attach_epoch: BTreeMap::new(),
            host_epoch: 0,
            start_epoch: 0,
            killed: BTreeSet::new(),
            drop_from: BTreeSet::new(),
            ss_blackout: false,
        }
    }

    pub fn subnet(&self) -> Subnet {
        self.subnet
    }

    pub fn delays(&self) -> StackDelays {
        self.delays
    }

    pub fn hosting(&self) -> Option<&MachineId> {
        self.hosting.as_ref().map(|(id, _)| id)
    }

    pub fn session_ip(&self, m: &MachineId) -> Option<Ipv4Addr> {
        match &self.hosting {
            Some((id, ip)) if id == m => Some(*ip),
            _ => self.attached.get(m).copied(),
        }
    }

    pub fn is_killed(&self, m: &MachineId) -> bool {
        self.killed.contains(m)
    }

    /// Every machine reachable on the subnet right now (host plus attached
    /// UEs), in a stable order for broadcast fan-out.
    pub fn addressable(&self) -> Vec<MachineId> {
        let mut out: Vec<MachineId> = self.attached.keys().cloned().collect();
        if let Some((host, _)) = &self.hosting {
            out.push(host.clone());
        }
        out.sort();
        out.dedup();
        out
    }

    fn slot_free(&self, now: f64) -> bool {
        self.hosting.is_none()
            && self.pending_host.is_none()
            && self.slot_busy_until.as_ref().map_or(true, |(_, until)| *until <= now)
    }

    /// Begins core + RAN bring-up. The returned op resolves after
    /// `core_init + ran_init`.
    pub fn start_core_ran(
        &mut self,
        m: &MachineId,
        now: f64,
    ) -> Result<(PendingOp, f64), CellsimError> {
        if !self.slot_free(now) {
            return Err(CellsimError::AlreadyHosting(m.clone()));
        }
        self.slot_busy_until = None;
        self.start_epoch += 1;
        self.pending_host = Some((m.clone(), self.start_epoch));
        let op = PendingOp::HostReady { machine: m.clone(), epoch: self.start_epoch };
        Ok((op, now + self.delays.host_start()))
    }

    /// Resolves a host bring-up. Returns the signal for the machine, or
    /// `None` if the start was voided (machine killed in the meantime).
    pub fn resolve_host_ready(&mut self, m: &MachineId, epoch: u64) -> Option<CellularSignal> {
        match &self.pending_host {
            Some((id, e)) if id == m && *e == epoch => {}
            _ => return None,
        }
        self.pending_host = None;
        if self.killed.contains(m) {
            return None;
        }
        let ip = self.subnet.gateway();
        self.attached.remove(m);
        self.hosting = Some((m.clone(), ip));
        Some(CellularSignal::StackReady { session_ip: ip })
    }

    /// Begins a UE attach attempt; resolves after `ue_init +
    /// attach_complete`, succeeding only if a live, visible host exists at
    /// that instant.
    pub fn attach_ue(&mut self, m: &MachineId, now: f64) -> (PendingOp, f64) {
        let epoch = self.attach_epoch.entry(m.clone()).or_insert(0);
        *epoch += 1;
        let op = PendingOp::AttachDone { machine: m.clone(), epoch: *epoch };
        (op, now + self.delays.attach())
    }

    pub fn resolve_attach(&mut self, m: &MachineId, epoch: u64) -> Option<CellularSignal> {
        if self.attach_epoch.get(m) != Some(&epoch) {
            return None;
        }
        if self.killed.contains(m) {
            return None;
        }
        if self.ss_blackout || self.hosting.is_none() {
            return Some(CellularSignal::RrcFailed);
        }
        let (host_id, _) = self.hosting.clone().unwrap();
        let ip = self.lowest_free_ip();
        self.attached.insert(m.clone(), ip);
        Some(CellularSignal::RrcConnected { session_ip: Some(ip), host: Some(host_id) })
    }

    fn lowest_free_ip(&self) -> Ipv4Addr {
        let taken: BTreeSet<Ipv4Addr> = self.attached.values().copied().collect();
        for index in 2..=self.subnet.max_hosts() {
            let ip = self.subnet.host(index);
            if !taken.contains(&ip) {
                return ip;
            }
        }
        unreachable!("subnet exhausted");
    }

    /// Releases a UE attachment immediately and voids any in-flight attach.
    pub fn detach(&mut self, m: &MachineId) {
        self.attached.remove(m);
        *self.attach_epoch.entry(m.clone()).or_insert(0) += 1;
    }

    /// Tears the host down. The synchronization signal disappears at once;
    /// the host slot stays occupied until the teardown delay elapses. A
    /// still-pending bring-up by the same machine is simply aborted.
    pub fn teardown(&mut self, m: &MachineId, now: f64) {
        if let Some((id, _)) = &self.hosting {
            if id == m {
                self.hosting = None;
                self.host_epoch += 1;
                self.slot_busy_until = Some((m.clone(), now + self.delays.teardown));
            }
        }
        if self.pending_host.as_ref().map(|(id, _)| id) == Some(m) {
            self.pending_host = None;
        }
    }

    /// Pure probe of the domain; no state change.
    pub fn cellular_check(&self, _m: &MachineId) -> CheckReport {
        // Core and RAN live and die together in this substrate, so the
        // three probes agree; the blackout hides even a live host.
        let host_live = self.hosting.is_some();
        let visible = host_live && !self.ss_blackout;
        CheckReport { ss_visible: visible, rrc_ok: visible, nas_ok: visible }
    }

    /// Attempts a transport send of one encoded message at `now`.
    pub fn send(
        &mut self,
        from: &MachineId,
        to: &MachineId,
        now: f64,
    ) -> Result<SendOutcome, CellsimError> {
        let from_ip = self.session_ip(from);
        if from_ip.is_none() {
            return Err(CellsimError::NotAttached(from.clone()));
        }
        if self.drop_from.contains(from) {
            return Ok(SendOutcome::DroppedLoss);
        }
        let Some(to_ip) = self.session_ip(to) else {
            return Ok(SendOutcome::NoRoute("destination detached"));
        };
        let host = match &self.hosting {
            Some((id, _)) => id.clone(),
            None => return Ok(SendOutcome::NoRoute("no host")),
        };
        // UE-UE traffic hairpins through the host and pays double latency.
        let hops = if from == &host || to == &host { 1.0 } else { 2.0 };
        if self.link.loss_probability > 0.0
            && self.rng.gen::<f64>() < self.link.loss_probability
        {
            return Ok(SendOutcome::DroppedLoss);
        }
        let jitter = if self.link.jitter > 0.0 { self.rng.gen::<f64>() * self.link.jitter } else { 0.0 };
        let latency = (self.link.latency + jitter) * hops;
        let via_host_epoch = (hops > 1.0).then_some(self.host_epoch);
        Ok(SendOutcome::Scheduled(Delivery {
            to: to.clone(),
            at: now + latency,
            to_ip,
            via_host_epoch,
        }))
    }

    /// Re-validates an in-flight message at delivery time.
    pub fn deliverable(&self, d: &Delivery) -> bool {
        if self.killed.contains(&d.to) {
            return false;
        }
        if self.session_ip(&d.to) != Some(d.to_ip) {
            return false;
        }
        match d.via_host_epoch {
            Some(epoch) => epoch == self.host_epoch,
            None => true,
        }
    }

    pub fn apply_fault(&mut self, fault: &Fault) {
        match fault {
            Fault::Kill { machine } => self.kill(machine),
            Fault::SsBlackout => self.ss_blackout = true,
            Fault::DropAllFrom { machine } => {
                self.drop_from.insert(machine.clone());
            }
            Fault::Restore { machine: Some(m) } => {
                self.killed.remove(m);
                self.drop_from.remove(m);
            }
            Fault::Restore { machine: None } => {
                self.ss_blackout = false;
                self.drop_from.clear();
            }
        }
    }

    fn kill(&mut self, m: &MachineId) {
        self.killed.insert(m.clone());
        if self.hosting.as_ref().map(|(id, _)| id) == Some(m) {
            self.hosting = None;
            self.host_epoch += 1;
            // a dead host leaves no slot to wait on
            self.slot_busy_until = None;
        }
        if self.pending_host.as_ref().map(|(id, _)| id) == Some(m) {
            self.pending_host = None;
        }
        if let Some((id, _)) = &self.slot_busy_until {
            if id == m {
                self.slot_busy_until = None;
            }
        }
        self.attached.remove(m);
        *self.attach_epoch.entry(m.clone()).or_insert(0) += 1;
    }
}
