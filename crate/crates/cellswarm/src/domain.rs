//! Core data types shared across the protocol stack: machine identity,
//! roles, 3D positions, resource profiles, timer settings, subnet
//! conventions, and the replicated network table.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Destination label reserved for broadcast messages on the wire.
pub const BROADCAST_ID: &str = "*";

/// Short alphanumeric machine label, unique within a scenario.
///
/// Ordering is lexicographic; it is the deterministic tie-break used by
/// every election-style decision in the network.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MachineId(pub String);

impl MachineId {
    pub fn new(id: impl Into<String>) -> Self {
        MachineId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_broadcast(&self) -> bool {
        self.0 == BROADCAST_ID
    }
}

impl fmt::Display for MachineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for MachineId {
    fn from(s: &str) -> Self {
        MachineId(s.to_string())
    }
}

/// 15-digit decimal device identifier. The empty value means "not learned
/// yet": followers only discover each other's IMEIs through forwarded entry
/// notifications, so a table entry may exist before its IMEI is known.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Imei(String);

impl Imei {
    pub fn new(digits: impl Into<String>) -> Result<Self, String> {
        let digits = digits.into();
        if Self::valid(&digits) {
            Ok(Imei(digits))
        } else {
            Err(format!("imei must be 15 decimal digits, got {digits:?}"))
        }
    }

    pub fn unknown() -> Self {
        Imei(String::new())
    }

    pub fn is_known(&self) -> bool {
        !self.0.is_empty()
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn valid(s: &str) -> bool {
        s.is_empty() || (s.len() == 15 && s.bytes().all(|b| b.is_ascii_digit()))
    }
}

impl<'de> Deserialize<'de> for Imei {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Imei::new(s).map_err(D::Error::custom)
    }
}

/// Machine identity as replicated in network tables: label plus IMEI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineIdentity {
    pub id: MachineId,
    pub imei: Imei,
}

/// Controller role. `Leader` hosts the core + RAN and owns the subnet's .1
/// address; `Follower` acts as UE; `Null` participates in nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Null,
    Leader,
    Follower,
}

impl Role {
    /// Wire encoding used in tables and messages: Leader=1, Follower=0.
    /// `Null` never appears on the wire.
    pub fn wire_code(self) -> Option<u8> {
        match self {
            Role::Leader => Some(1),
            Role::Follower => Some(0),
            Role::Null => None,
        }
    }

    pub fn from_wire_code(code: u8) -> Option<Role> {
        match code {
            1 => Some(Role::Leader),
            0 => Some(Role::Follower),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Null => "null",
            Role::Leader => "leader",
            Role::Follower => "follower",
        };
        f.write_str(s)
    }
}

/// Serde adapter for the 0/1 role encoding in tables and messages.
pub mod role_wire {
    use super::Role;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(role: &Role, s: S) -> Result<S::Ok, S::Error> {
        match role.wire_code() {
            Some(code) => s.serialize_u8(code),
            None => Err(serde::ser::Error::custom("null role has no wire encoding")),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Role, D::Error> {
        let code = u8::deserialize(d)?;
        Role::from_wire_code(code)
            .ok_or_else(|| D::Error::custom(format!("role code must be 0 or 1, got {code}")))
    }
}

/// 3D position in meters, in a local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Position { x, y, z }
    }

    pub fn origin() -> Self {
        Position::new(0.0, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Velocity in NED convention (north/east/down), meters per second.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Velocity {
    pub vn: f64,
    pub ve: f64,
    pub vd: f64,
}

impl Velocity {
    pub fn new(vn: f64, ve: f64, vd: f64) -> Self {
        Velocity { vn, ve, vd }
    }

    /// Integrates this velocity over `dt` seconds. East maps to +x, north
    /// to +y and down to -z.
    pub fn displace(&self, p: Position, dt: f64) -> Position {
        Position::new(p.x + self.ve * dt, p.y + self.vn * dt, p.z - self.vd * dt)
    }
}

/// Available memory / battery / processor headroom, as percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceProfile {
    pub memory_pct: f64,
    pub battery_pct: f64,
    pub processor_pct: f64,
}

impl ResourceProfile {
    pub fn new(memory_pct: f64, battery_pct: f64, processor_pct: f64) -> Self {
        ResourceProfile { memory_pct, battery_pct, processor_pct }
    }

    pub fn full() -> Self {
        ResourceProfile::new(100.0, 100.0, 100.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("memory_pct", self.memory_pct),
            ("battery_pct", self.battery_pct),
            ("processor_pct", self.processor_pct),
        ] {
            if !v.is_finite() || !(0.0..=100.0).contains(&v) {
                return Err(format!("{name} must be in [0,100], got {v}"));
            }
        }
        Ok(())
    }

    pub fn min_vital(&self) -> f64 {
        self.memory_pct.min(self.battery_pct).min(self.processor_pct)
    }
}

impl Default for ResourceProfile {
    fn default() -> Self {
        ResourceProfile::full()
    }
}

/// Policy for the score threshold that gates a scheduled leader change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Candidate must beat the current leader's score by more than the
    /// threshold (default).
    #[default]
    MarginOverLeader,
    /// Candidate's own score must exceed the threshold.
    AbsoluteFloor,
    /// Candidate must beat the second-best score by more than the threshold.
    GapOverSecondBest,
}

/// Scoring knobs: spatial intensity factor, capacity gate thresholds, and
/// the transition threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringParams {
    pub intensity_a: f64,
    pub m_thres: f64,
    pub b_thres: f64,
    pub p_thres: f64,
    pub score_thres: f64,
    pub threshold_policy: ThresholdPolicy,
}

impl Default for ScoringParams {
    fn default() -> Self {
        ScoringParams {
            intensity_a: 0.1,
            m_thres: 80.0,
            b_thres: 80.0,
            p_thres: 80.0,
            score_thres: 2.0,
            threshold_policy: ThresholdPolicy::MarginOverLeader,
        }
    }
}

impl ScoringParams {
    pub fn validate(&self) -> Result<(), String> {
        if !self.intensity_a.is_finite() || self.intensity_a <= 0.0 || self.intensity_a >= 1.0 {
            return Err(format!("intensity_a must be in (0,1), got {}", self.intensity_a));
        }
        for (name, v) in [
            ("m_thres", self.m_thres),
            ("b_thres", self.b_thres),
            ("p_thres", self.p_thres),
        ] {
            if !v.is_finite() || !(0.0..=100.0).contains(&v) {
                return Err(format!("{name} must be in [0,100], got {v}"));
            }
        }
        if !self.score_thres.is_finite() || self.score_thres < 0.0 {
            return Err(format!("score_thres must be >= 0, got {}", self.score_thres));
        }
        Ok(())
    }
}

/// The three protocol timers plus the heartbeat timeout multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimerConfig {
    pub t_heartbeat: f64,
    pub t_performance: f64,
    pub t_selection: f64,
    pub heartbeat_timeout_factor: f64,
}

impl Default for TimerConfig {
    fn default() -> Self {
        TimerConfig {
            t_heartbeat: 3.0,
            t_performance: 6.0,
            t_selection: 26.0,
            heartbeat_timeout_factor: 2.5,
        }
    }
}

impl TimerConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("t_heartbeat", self.t_heartbeat),
            ("t_performance", self.t_performance),
            ("t_selection", self.t_selection),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.t_heartbeat < self.t_performance && self.t_performance < self.t_selection) {
            return Err(format!(
                "timer intervals must satisfy heartbeat < performance < selection, got {}/{}/{}",
                self.t_heartbeat, self.t_performance, self.t_selection
            ));
        }
        if !self.heartbeat_timeout_factor.is_finite() || self.heartbeat_timeout_factor <= 1.0 {
            return Err(format!(
                "heartbeat_timeout_factor must exceed 1, got {}",
                self.heartbeat_timeout_factor
            ));
        }
        Ok(())
    }

    /// Gap after which a silent peer is suspected.
    pub fn heartbeat_timeout(&self) -> f64 {
        self.heartbeat_timeout_factor * self.t_heartbeat
    }
}

/// IPv4 subnet shared by the whole swarm. The hosting machine always owns
/// the .1 address; followers get the lowest free address from .2 upward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Subnet {
    base: Ipv4Addr,
    prefix_len: u8,
}

impl Subnet {
    pub fn new(base: Ipv4Addr, prefix_len: u8) -> Result<Self, String> {
        if prefix_len == 0 || prefix_len > 30 {
            return Err(format!("prefix length must be in 1..=30, got {prefix_len}"));
        }
        let mask = u32::MAX << (32 - prefix_len);
        let base_bits = u32::from(base) & mask;
        Ok(Subnet { base: Ipv4Addr::from(base_bits), prefix_len })
    }

    pub fn parse(s: &str) -> Result<Self, String> {
        let (addr, len) = s
            .split_once('/')
            .ok_or_else(|| format!("subnet must look like a.b.c.d/len, got {s:?}"))?;
        let base: Ipv4Addr = addr.parse().map_err(|e| format!("bad subnet address: {e}"))?;
        let prefix_len: u8 = len.parse().map_err(|e| format!("bad prefix length: {e}"))?;
        Subnet::new(base, prefix_len)
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        let mask = u32::MAX << (32 - self.prefix_len);
        (u32::from(ip) & mask) == u32::from(self.base)
    }

    /// Returns the host address with the given index (.1 is the leader).
    pub fn host(&self, index: u32) -> Ipv4Addr {
        Ipv4Addr::from(u32::from(self.base) + index)
    }

    /// The address always owned by the machine hosting the core + RAN.
    pub fn gateway(&self) -> Ipv4Addr {
        self.host(1)
    }

    pub fn max_hosts(&self) -> u32 {
        (1u32 << (32 - self.prefix_len)) - 2
    }
}

impl Default for Subnet {
    fn default() -> Self {
        Subnet::new(Ipv4Addr::new(10, 45, 0, 0), 24).unwrap()
    }
}

impl fmt::Display for Subnet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.base, self.prefix_len)
    }
}

impl Serialize for Subnet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Subnet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Subnet::parse(&s).map_err(D::Error::custom)
    }
}

/// Serde adapter for session IPs: `None` (released / not assigned yet)
/// encodes as the empty string.
pub mod ip_wire {
    use super::*;

    pub fn serialize<S: Serializer>(ip: &Option<Ipv4Addr>, s: S) -> Result<S::Ok, S::Error> {
        match ip {
            Some(ip) => s.serialize_str(&ip.to_string()),
            None => s.serialize_str(""),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Ipv4Addr>, D::Error> {
        let s = String::deserialize(d)?;
        if s.is_empty() {
            return Ok(None);
        }
        s.parse::<Ipv4Addr>().map(Some).map_err(D::Error::custom)
    }
}

/// One row of the replicated network table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkTableEntry {
    pub machine: MachineIdentity,
    #[serde(with = "ip_wire")]
    pub session_ip: Option<Ipv4Addr>,
    pub coords: Position,
    #[serde(with = "role_wire")]
    pub role: Role,
    pub score: f64,
}

/// Per-machine replicated view of all members, keyed by machine id.
///
/// Map semantics make equality order-independent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NetworkTable {
    pub entries: BTreeMap<MachineId, NetworkTableEntry>,
}

impl NetworkTable {
    pub fn new() -> Self {
        NetworkTable::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &MachineId) -> Option<&NetworkTableEntry> {
        self.entries.get(id)
    }

    pub fn get_mut(&mut self, id: &MachineId) -> Option<&mut NetworkTableEntry> {
        self.entries.get_mut(id)
    }

    pub fn upsert(&mut self, entry: NetworkTableEntry) {
        self.entries.insert(entry.machine.id.clone(), entry);
    }

    pub fn remove(&mut self, id: &MachineId) -> Option<NetworkTableEntry> {
        self.entries.remove(id)
    }

    pub fn contains(&self, id: &MachineId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &MachineId> {
        self.entries.keys()
    }

    /// The current leader entry, if any.
    pub fn leader(&self) -> Option<&NetworkTableEntry> {
        self.entries.values().find(|e| e.role == Role::Leader)
    }

    /// Highest-scoring member, excluding `exclude` if given. Ties resolve
    /// to the lowest machine id, which every replica computes identically.
    pub fn top_scorer(&self, exclude: Option<&MachineId>) -> Option<(&MachineId, f64)> {
        let mut best: Option<(&MachineId, f64)> = None;
        for (id, entry) in &self.entries {
            if exclude == Some(id) {
                continue;
            }
            match best {
                Some((_, score)) if entry.score <= score => {}
                _ => best = Some((id, entry.score)),
            }
        }
        best
    }

    /// Score of the runner-up behind `first`, if any.
    pub fn second_best(&self, first: &MachineId) -> Option<f64> {
        self.top_scorer(Some(first)).map(|(_, s)| s)
    }
}

/// Checks the table invariants: at most one leader and no duplicate
/// session IPs. Violations are returned as data rather than errors.
pub fn validate_table(table: &NetworkTable) -> Vec<String> {
    let mut violations = Vec::new();

    let leaders: Vec<&MachineId> = table
        .entries
        .iter()
        .filter(|(_, e)| e.role == Role::Leader)
        .map(|(id, _)| id)
        .collect();
    if leaders.len() > 1 {
        let ids: Vec<&str> = leaders.iter().map(|id| id.as_str()).collect();
        violations.push(format!("multiple leaders: {}", ids.join(", ")));
    }

    let mut seen: BTreeMap<Ipv4Addr, &MachineId> = BTreeMap::new();
    for (id, entry) in &table.entries {
        if let Some(ip) = entry.session_ip {
            if let Some(other) = seen.insert(ip, id) {
                violations.push(format!("duplicate session ip {ip} for {other} and {id}"));
            }
        }
    }

    violations
}

/// Last-seen heartbeat timestamps per peer, in simulated seconds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeartbeatRecords {
    last_seen: BTreeMap<MachineId, f64>,
}

impl HeartbeatRecords {
    pub fn new() -> Self {
        HeartbeatRecords::default()
    }

    /// Records a sighting. Timestamps never move backwards.
    pub fn observe(&mut self, id: &MachineId, t: f64) {
        let slot = self.last_seen.entry(id.clone()).or_insert(t);
        if t > *slot {
            *slot = t;
        }
    }

    pub fn last_seen(&self, id: &MachineId) -> Option<f64> {
        self.last_seen.get(id).copied()
    }

    pub fn remove(&mut self, id: &MachineId) {
        self.last_seen.remove(id);
    }

    pub fn clear(&mut self) {
        self.last_seen.clear();
    }

    pub fn peers(&self) -> impl Iterator<Item = (&MachineId, f64)> {
        self.last_seen.iter().map(|(id, t)| (id, *t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, imei: &str, ip: Option<&str>, role: Role, score: f64) -> NetworkTableEntry {
        NetworkTableEntry {
            machine: MachineIdentity {
                id: MachineId::from(id),
                imei: Imei::new(imei).unwrap(),
            },
            session_ip: ip.map(|s| s.parse().unwrap()),
            coords: Position::origin(),
            role,
            score,
        }
    }

    /// The published four-row example table: one leader at .1, three
    /// followers, descending scores.
    fn reference_table() -> NetworkTable {
        let mut t = NetworkTable::new();
        t.upsert(entry("A1", "900000000000009", Some("10.45.0.1"), Role::Leader, 85.6));
        t.upsert(entry("B2", "900000000000008", Some("10.45.0.2"), Role::Follower, 72.3));
        t.upsert(entry("C3", "900000000000007", Some("10.45.0.3"), Role::Follower, 67.8));
        t.upsert(entry("D4", "900000000000006", Some("10.45.0.4"), Role::Follower, 63.2));
        t
    }

    #[test]
    fn validate_reference_table_is_clean() {
        assert!(validate_table(&reference_table()).is_empty());
    }

    #[test]
    fn validate_empty_table_is_clean() {
        assert!(validate_table(&NetworkTable::new()).is_empty());
    }

    #[test]
    fn validate_flags_multiple_leaders() {
        let mut t = reference_table();
        t.get_mut(&MachineId::from("B2")).unwrap().role = Role::Leader;
        let violations = validate_table(&t);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("multiple leaders"));
    }

    #[test]
    fn validate_flags_duplicate_ips() {
        let mut t = reference_table();
        t.get_mut(&MachineId::from("C3")).unwrap().session_ip = Some("10.45.0.2".parse().unwrap());
        let violations = validate_table(&t);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("duplicate session ip"));
    }

    #[test]
    fn released_ips_do_not_collide() {
        let mut t = reference_table();
        t.get_mut(&MachineId::from("C3")).unwrap().session_ip = None;
        t.get_mut(&MachineId::from("D4")).unwrap().session_ip = None;
        assert!(validate_table(&t).is_empty());
    }

    #[test]
    fn role_round_trips_through_wire_code() {
        for role in [Role::Leader, Role::Follower] {
            let code = role.wire_code().unwrap();
            assert_eq!(Role::from_wire_code(code), Some(role));
        }
        assert_eq!(Role::Null.wire_code(), None);
        assert_eq!(Role::from_wire_code(7), None);
    }

    #[test]
    fn table_equality_is_order_independent() {
        let forward = reference_table();
        let mut reverse = NetworkTable::new();
        let mut rows: Vec<_> = forward.entries.values().cloned().collect();
        rows.reverse();
        for row in rows {
            reverse.upsert(row);
        }
        assert_eq!(forward, reverse);
    }

    #[test]
    fn top_scorer_breaks_ties_toward_lowest_id() {
        let mut t = NetworkTable::new();
        t.upsert(entry("B2", "900000000000008", None, Role::Follower, 50.0));
        t.upsert(entry("A1", "900000000000009", None, Role::Follower, 50.0));
        t.upsert(entry("C3", "900000000000007", None, Role::Follower, 49.0));
        let (id, score) = t.top_scorer(None).unwrap();
        assert_eq!(id.as_str(), "A1");
        assert_eq!(score, 50.0);
        let (id, _) = t.top_scorer(Some(&MachineId::from("A1"))).unwrap();
        assert_eq!(id.as_str(), "B2");
    }

    #[test]
    fn heartbeat_records_never_move_backwards() {
        let mut records = HeartbeatRecords::new();
        let id = MachineId::from("A1");
        records.observe(&id, 5.0);
        records.observe(&id, 3.0);
        assert_eq!(records.last_seen(&id), Some(5.0));
        records.observe(&id, 6.5);
        assert_eq!(records.last_seen(&id), Some(6.5));
    }

    #[test]
    fn imei_validation() {
        assert!(Imei::new("900000000000009").is_ok());
        assert!(Imei::new("90000000000000").is_err());
        assert!(Imei::new("90000000000000a").is_err());
        assert!(!Imei::unknown().is_known());
    }

    #[test]
    fn subnet_membership_and_hosts() {
        let subnet = Subnet::default();
        assert_eq!(subnet.gateway(), Ipv4Addr::new(10, 45, 0, 1));
        assert!(subnet.contains(Ipv4Addr::new(10, 45, 0, 200)));
        assert!(!subnet.contains(Ipv4Addr::new(10, 46, 0, 2)));
        assert_eq!(Subnet::parse("10.45.0.0/24").unwrap(), subnet);
        assert!(Subnet::parse("10.45.0.0").is_err());
    }
}
