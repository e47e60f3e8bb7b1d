//! Scenario definition: machines, protocol parameters, mobility and
//! resource timelines, fault injections, duration, and seed. Scenario
//! files are human-editable JSON following the same conventions as the
//! wire format.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cellsim::{Fault, LinkModel, StackDelays};
use crate::controller::ProtocolParams;
use crate::domain::{
    Imei, MachineId, Position, ResourceProfile, ScoringParams, Subnet, TimerConfig,
    BROADCAST_ID,
};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("config error in {field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        ConfigError { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineSpec {
    pub id: MachineId,
    pub imei: Imei,
    /// Exactly one machine boots with 100 and hosts the network first.
    pub boot_score: f64,
    pub position: Position,
    #[serde(default)]
    pub resources: ResourceProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceField {
    Memory,
    Battery,
    Processor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineCommand {
    Exit,
}

// no deny_unknown_fields here: it is incompatible with the flatten in
// TimelineEntry
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TimelineAction {
    SetVelocity { machine: MachineId, vn: f64, ve: f64, vd: f64 },
    SetResources { machine: MachineId, memory_pct: f64, battery_pct: f64, processor_pct: f64 },
    RampResources {
        machine: MachineId,
        field: ResourceField,
        from: f64,
        to: f64,
        over_seconds: f64,
    },
    InjectFault {
        #[serde(flatten)]
        fault: Fault,
    },
    Command { machine: MachineId, command: MachineCommand },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub at: f64,
    #[serde(flatten)]
    pub action: TimelineAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub machines: Vec<MachineSpec>,
    #[serde(default)]
    pub timers: TimerConfig,
    #[serde(default)]
    pub scoring: ScoringParams,
    #[serde(default)]
    pub protocol: ProtocolParams,
    #[serde(default)]
    pub stack_delays: StackDelays,
    #[serde(default)]
    pub link: LinkModel,
    #[serde(default)]
    pub subnet: Subnet,
    #[serde(default)]
    pub timeline: Vec<TimelineEntry>,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, ConfigError> {
        let config: ScenarioConfig = serde_json::from_slice(bytes)
            .map_err(|e| ConfigError::new("json", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_pretty_json(&self) -> String {
        crate::wire::pretty_string(self).expect("scenario configs always serialize")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.is_empty() {
            return Err(ConfigError::new("name", "must not be empty"));
        }
        if !self.duration.is_finite() || self.duration <= 0.0 {
            return Err(ConfigError::new("duration", format!("must be positive, got {}", self.duration)));
        }
        if self.machines.is_empty() {
            return Err(ConfigError::new("machines", "at least one machine is required"));
        }

        let mut boot_leaders = 0usize;
        let mut ids = std::collections::BTreeSet::new();
        for m in &self.machines {
            if m.id.as_str().is_empty() || m.id.as_str() == BROADCAST_ID {
                return Err(ConfigError::new("machines.id", format!("invalid machine id {:?}", m.id.as_str())));
            }
            if !ids.insert(m.id.clone()) {
                return Err(ConfigError::new("machines.id", format!("duplicate machine id {}", m.id)));
            }
            if !m.position.is_finite() {
                return Err(ConfigError::new("machines.position", format!("{}: position must be finite", m.id)));
            }
            m.resources
                .validate()
                .map_err(|e| ConfigError::new("machines.resources", format!("{}: {e}", m.id)))?;
            if !m.boot_score.is_finite() || !(0.0..=100.0).contains(&m.boot_score) {
                return Err(ConfigError::new(
                    "machines.boot_score",
                    format!("{}: must be in [0,100], got {}", m.id, m.boot_score),
                ));
            }
            if m.boot_score == 100.0 {
                boot_leaders += 1;
            }
        }
        if boot_leaders != 1 {
            return Err(ConfigError::new(
                "machines.boot_score",
                format!("exactly one machine must boot with score 100, found {boot_leaders}"),
            ));
        }

        self.timers.validate().map_err(|e| ConfigError::new("timers", e))?;
        self.scoring.validate().map_err(|e| ConfigError::new("scoring", e))?;
        self.protocol.validate().map_err(|e| ConfigError::new("protocol", e))?;
        self.stack_delays.validate().map_err(|e| ConfigError::new("stack_delays", e))?;
        self.link.validate().map_err(|e| ConfigError::new("link", e))?;
        if (self.machines.len() as u32) > self.subnet.max_hosts() {
            return Err(ConfigError::new("subnet", "too small for the machine count"));
        }

        let mut last_at = f64::NEG_INFINITY;
        for (i, entry) in self.timeline.iter().enumerate() {
            let field = format!("timeline[{i}]");
            if !entry.at.is_finite() || entry.at < 0.0 {
                return Err(ConfigError::new(&field, format!("time must be >= 0, got {}", entry.at)));
            }
            if entry.at < last_at {
                return Err(ConfigError::new(&field, "timeline must be sorted by time"));
            }
            last_at = entry.at;
            let mentioned: Option<&MachineId> = match &entry.action {
                TimelineAction::SetVelocity { machine, .. } => Some(machine),
                TimelineAction::SetResources { machine, .. } => Some(machine),
                TimelineAction::RampResources { machine, .. } => Some(machine),
                TimelineAction::Command { machine, .. } => Some(machine),
                TimelineAction::InjectFault { fault } => match fault {
                    Fault::Kill { machine } | Fault::DropAllFrom { machine } => Some(machine),
                    Fault::Restore { machine } => machine.as_ref(),
                    Fault::SsBlackout => None,
                },
            };
            if let Some(id) = mentioned {
                if !ids.contains(id) {
                    return Err(ConfigError::new(&field, format!("unknown machine {id}")));
                }
            }
            if let TimelineAction::SetResources { memory_pct, battery_pct, processor_pct, .. } =
                &entry.action
            {
                ResourceProfile::new(*memory_pct, *battery_pct, *processor_pct)
                    .validate()
                    .map_err(|e| ConfigError::new(&field, e))?;
            }
            if let TimelineAction::RampResources { from, to, over_seconds, .. } = &entry.action {
                for (name, v) in [("from", *from), ("to", *to)] {
                    if !v.is_finite() || !(0.0..=100.0).contains(&v) {
                        return Err(ConfigError::new(&field, format!("{name} must be in [0,100], got {v}")));
                    }
                }
                if !over_seconds.is_finite() || *over_seconds <= 0.0 {
                    return Err(ConfigError::new(&field, format!("over_seconds must be positive, got {over_seconds}")));
                }
            }
        }
        Ok(())
    }

    pub fn machine(&self, id: &MachineId) -> Option<&MachineSpec> {
        self.machines.iter().find(|m| &m.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(boot_scores: &[f64]) -> ScenarioConfig {
        ScenarioConfig {
            name: "test".into(),
            description: String::new(),
            machines: boot_scores
                .iter()
                .enumerate()
                .map(|(i, score)| MachineSpec {
                    id: MachineId::new(format!("m{}", i + 1)),
                    imei: Imei::new(format!("90000000000000{}", i + 1)).unwrap(),
                    boot_score: *score,
                    position: Position::new(i as f64 * 10.0, 0.0, 10.0),
                    resources: ResourceProfile::full(),
                })
                .collect(),
            timers: TimerConfig::default(),
            scoring: ScoringParams::default(),
            protocol: ProtocolParams::default(),
            stack_delays: StackDelays::default(),
            link: LinkModel::default(),
            subnet: Subnet::default(),
            timeline: Vec::new(),
            duration: 40.0,
            seed: 1,
        }
    }

    #[test]
    fn valid_config_passes() {
        assert!(minimal(&[100.0, 0.0]).validate().is_ok());
    }

    #[test]
    fn zero_or_multiple_boot_leaders_are_rejected() {
        let err = minimal(&[50.0, 0.0]).validate().unwrap_err();
        assert_eq!(err.field, "machines.boot_score");
        let err = minimal(&[100.0, 100.0]).validate().unwrap_err();
        assert_eq!(err.field, "machines.boot_score");
    }

    #[test]
    fn unsorted_timeline_is_rejected() {
        let mut config = minimal(&[100.0, 0.0]);
        config.timeline = vec![
            TimelineEntry {
                at: 10.0,
                action: TimelineAction::SetVelocity {
                    machine: MachineId::from("m1"),
                    vn: 1.0,
                    ve: 0.0,
                    vd: 0.0,
                },
            },
            TimelineEntry {
                at: 5.0,
                action: TimelineAction::SetVelocity {
                    machine: MachineId::from("m2"),
                    vn: 1.0,
                    ve: 0.0,
                    vd: 0.0,
                },
            },
        ];
        assert!(config.validate().is_err());
    }

    #[test]
    fn timeline_referencing_unknown_machine_is_rejected() {
        let mut config = minimal(&[100.0, 0.0]);
        config.timeline = vec![TimelineEntry {
            at: 1.0,
            action: TimelineAction::InjectFault {
                fault: Fault::Kill { machine: MachineId::from("ghost") },
            },
        }];
        assert!(config.validate().is_err());
    }

    #[test]
    fn json_round_trip_preserves_the_config() {
        let mut config = minimal(&[100.0, 0.0, 0.0]);
        config.timeline = vec![
            TimelineEntry {
                at: 8.0,
                action: TimelineAction::RampResources {
                    machine: MachineId::from("m1"),
                    field: ResourceField::Battery,
                    from: 100.0,
                    to: 70.0,
                    over_seconds: 10.0,
                },
            },
            TimelineEntry {
                at: 15.0,
                action: TimelineAction::InjectFault {
                    fault: Fault::Kill { machine: MachineId::from("m1") },
                },
            },
            TimelineEntry {
                at: 20.0,
                action: TimelineAction::Command {
                    machine: MachineId::from("m2"),
                    command: MachineCommand::Exit,
                },
            },
        ];
        let json = config.to_pretty_json();
        let back = ScenarioConfig::from_json(json.as_bytes()).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn malformed_json_reports_a_config_error() {
        let err = ScenarioConfig::from_json(b"{oops").unwrap_err();
        assert_eq!(err.field, "json");
    }
}
