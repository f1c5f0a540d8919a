//! Scenario files: TOML with every key optional except `name`. Unknown keys
//! are rejected; everything left out takes the documented default, and the
//! resolved form is written next to each run.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{
    Ablations, AgentSpec, BodySource, BootstrapSpec, HVarSpec, MotorSpec, Segment, SubsystemSpec,
};
use crate::homeostat::Thresholds;
use crate::world::{validate_schedule, Event, WorldParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoMemory,
    NoTopdown,
    NoPlasticity,
    NoIgnoreCost,
}

impl Ablation {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "no_memory" => Ok(Self::NoMemory),
            "no_topdown" => Ok(Self::NoTopdown),
            "no_plasticity" => Ok(Self::NoPlasticity),
            "no_ignore_cost" => Ok(Self::NoIgnoreCost),
            other => Err(Error::Config(format!("ablations: unknown ablation {other:?}"))),
        }
    }

    pub fn set(list: &[Ablation]) -> Ablations {
        Ablations {
            no_memory: list.contains(&Self::NoMemory),
            no_topdown: list.contains(&Self::NoTopdown),
            no_plasticity: list.contains(&Self::NoPlasticity),
            no_ignore_cost: list.contains(&Self::NoIgnoreCost),
        }
    }
}

/// Replaces selected fields of one agent hvar, addressed as `sub.hvar`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HVarOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privileged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<BodySource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ticks")]
    pub ticks: i64,
    #[serde(default)]
    pub ablations: Vec<Ablation>,
    #[serde(default)]
    pub world: WorldParams,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "standard_agent")]
    pub agent: AgentSpec,
    #[serde(default)]
    pub hvar_overrides: BTreeMap<String, HVarOverride>,
    #[serde(default)]
    pub events: Vec<Event>,
}

fn default_ticks() -> i64 {
    2000
}

impl ScenarioConfig {
    /// A scenario with every default and the given name.
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            seed: 0,
            ticks: default_ticks(),
            ablations: Vec::new(),
            world: WorldParams::default(),
            thresholds: Thresholds::default(),
            agent: standard_agent(),
            hvar_overrides: BTreeMap::new(),
            events: Vec::new(),
        }
    }

    pub fn from_toml_str(text: &str, path: &str) -> Result<Self> {
        let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            let message = e
                .message()
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join("; ");
            Error::Parse {
                path: path.into(),
                line,
                message,
            }
        })?;
        cfg.apply_overrides()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config always serialises")
    }

    pub fn ablation_set(&self) -> Ablations {
        Ablation::set(&self.ablations)
    }

    /// Adds ablations, keeping the list sorted and free of repeats.
    pub fn add_ablations(&mut self, extra: &[Ablation]) {
        let set: BTreeSet<Ablation> = self.ablations.iter().chain(extra).copied().collect();
        self.ablations = set.into_iter().collect();
    }

    /// Writes the override values into the agent spec. Idempotent.
    pub fn apply_overrides(&mut self) -> Result<()> {
        for (key, o) in &self.hvar_overrides {
            let (sub, hvar) = key
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("hvar_overrides: key {key:?} must be sub.hvar")))?;
            let spec = self
                .agent
                .subsystems
                .iter_mut()
                .find(|s| s.name == sub)
                .and_then(|s| s.hvars.iter_mut().find(|h| h.name == hvar))
                .ok_or_else(|| Error::Config(format!("hvar_overrides: no hvar {key}")))?;
            if let Some(v) = o.target {
                spec.target = v;
            }
            if let Some(v) = o.band {
                spec.band = v;
            }
            if let Some(v) = o.priority {
                spec.priority = v;
            }
            if let Some(v) = o.privileged {
                spec.privileged = v;
            }
            if let Some(v) = o.source {
                spec.source = v;
            }
            if let Some(v) = o.initial {
                spec.initial = Some(v);
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("name must not be empty".into()));
        }
        if self.ticks < 0 {
            return Err(Error::Config(format!("ticks must be non-negative, got {}", self.ticks)));
        }
        self.world.validate()?;
        self.thresholds.validate()?;
        validate_schedule(&self.events, &self.world)?;
        let a = &self.agent;
        if !(a.drive_cap > 0.0) || !(a.valence_cap > 0.0) {
            return Err(Error::Config("agent.drive_cap and agent.valence_cap must be positive".into()));
        }
        if a.capacity == 0 {
            return Err(Error::Config("agent.capacity must be positive".into()));
        }
        for s in &a.subsystems {
            for h in &s.hvars {
                if !(h.band > 0.0) || !(h.priority > 0.0) || !h.target.is_finite() {
                    return Err(Error::Config(format!(
                        "agent hvar {}.{}: target must be finite, band and priority positive",
                        s.name, h.name
                    )));
                }
            }
        }
        // a full structural check: builds and discards the agent
        crate::hierarchy::AgentGraph::build(a, &self.thresholds, self.ablation_set())?;
        Ok(())
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScenarioConfig::from_toml_str(&text, &path.display().to_string())
}

fn hvar(name: &str, target: f64, band: f64, priority: f64, privileged: bool, source: BodySource) -> HVarSpec {
    HVarSpec {
        name: name.to_string(),
        target,
        band,
        priority,
        privileged,
        source,
        initial: None,
    }
}

fn seg(hold: usize, set: &[(&str, f64)]) -> Segment {
    Segment {
        hold,
        set: set.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

/// Innate records are strong: strength u/(1+u) of about 0.99.
const INNATE_UTILITY: f64 = 100.0;

fn boot(sub: &str, label: &str, mask: &[(&str, f64)], segments: Vec<Segment>) -> BootstrapSpec {
    BootstrapSpec {
        subsystem: sub.to_string(),
        label: label.to_string(),
        utility: INNATE_UTILITY,
        mask: mask.iter().map(|(k, w)| (k.to_string(), *w)).collect(),
        segments,
    }
}

/// Three levels: `motor` turns drives into actions, `body` keeps the
/// physiological hvars in band, `mind` holds cognitive goals such as a fast.
pub fn standard_agent() -> AgentSpec {
    use BodySource as B;
    let subsystems = vec![
        SubsystemSpec {
            name: "motor".into(),
            level: 0,
            children: vec![],
            extero: ["ambient", "food_here", "looming", "looming_rate"]
                .map(String::from)
                .to_vec(),
            hvars: vec![
                hvar("thermo", 0.0, 1.0, 1.0, false, B::None),
                hvar("forage", 0.0, 1.0, 1.0, false, B::None),
                hvar("flee", 0.0, 1.0, 1.0, false, B::None),
            ],
        },
        SubsystemSpec {
            name: "body".into(),
            level: 1,
            children: vec!["motor".into()],
            extero: vec![],
            hvars: vec![
                hvar("core_temp", 37.0, 1.0, 2.0, true, B::CoreTemp),
                hvar("energy", 80.0, 20.0, 1.0, true, B::Energy),
                hvar("integrity", 100.0, 20.0, 1.0, false, B::Integrity),
                hvar("fast", 0.0, 1.0, 1.0, false, B::None),
            ],
        },
        SubsystemSpec {
            name: "mind".into(),
            level: 2,
            children: vec!["body".into()],
            extero: vec![],
            hvars: vec![hvar("resolve", 0.0, 5.0, 3.0, false, B::None)],
        },
    ];

    // Motor drives are what a record steers, not what it recognises, so they
    // carry little weight in matching.
    const STEER: f64 = 0.25;
    let threat = [("drive:flee", 1.0), ("extero:looming", 1.0), ("extero:looming_rate", 1.0)];
    let thermal = [("drive:core_temp", 1.0), ("drive:motor.thermo", STEER)];
    let feeding = [("drive:energy", 1.0), ("drive:fast", 1.0), ("drive:motor.forage", STEER)];
    let quiet = [
        ("drive:core_temp", 1.0),
        ("drive:energy", 1.0),
        ("drive:fast", 1.0),
        ("drive:motor.thermo", STEER),
        ("drive:motor.forage", STEER),
    ];
    // the mind decides on its resolve alone
    let mind = [("drive:resolve", 1.0), ("drive:body.fast", 0.01)];
    let bootstrap = vec![
        boot("motor", "calm", &threat, vec![seg(6, &[])]),
        boot(
            "motor",
            "escape",
            &threat,
            vec![
                seg(2, &[("extero:looming", 1.5), ("extero:looming_rate", 0.6)]),
                seg(4, &[("drive:flee", 3.0)]),
            ],
        ),
        boot("body", "rest", &quiet, vec![seg(12, &[])]),
        boot(
            "body",
            "thermoregulate",
            &thermal,
            vec![
                seg(4, &[("drive:core_temp", 4.0)]),
                seg(4, &[("drive:motor.thermo", 2.0)]),
                seg(4, &[("drive:core_temp", 2.0)]),
            ],
        ),
        boot(
            "body",
            "thermoregulate_mild",
            &thermal,
            vec![
                seg(4, &[("drive:core_temp", 1.5)]),
                seg(8, &[("drive:motor.thermo", 2.0)]),
            ],
        ),
        boot(
            "body",
            "forage",
            &feeding,
            vec![
                seg(4, &[("drive:energy", 2.0)]),
                seg(8, &[("drive:motor.forage", 2.0)]),
            ],
        ),
        boot(
            "body",
            "forage_starving",
            &feeding,
            vec![
                seg(4, &[("drive:energy", 4.0)]),
                seg(8, &[("drive:motor.forage", 2.0)]),
            ],
        ),
        boot(
            "body",
            "restrain",
            &feeding,
            vec![
                seg(4, &[("drive:energy", 2.0), ("drive:fast", 2.0)]),
                seg(8, &[("drive:motor.forage", 0.0)]),
            ],
        ),
        boot(
            "body",
            "restrain_starving",
            &feeding,
            vec![
                seg(4, &[("drive:energy", 4.0), ("drive:fast", 4.0)]),
                seg(8, &[("drive:motor.forage", 0.0)]),
            ],
        ),
        boot("mind", "rest", &mind, vec![seg(24, &[])]),
        boot(
            "mind",
            "fasting",
            &mind,
            vec![seg(24, &[("drive:resolve", 4.0), ("drive:body.fast", 4.0)])],
        ),
    ];

    AgentSpec {
        drive_cap: 4.0,
        valence_cap: 4.0,
        capacity: 64,
        looming_scale: 0.15,
        subsystems,
        motor: MotorSpec {
            subsystem: "motor".into(),
            escape: "flee".into(),
            forage: "forage".into(),
            thermal: "thermo".into(),
            thermal_reference: "body.core_temp".into(),
        },
        bootstrap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg = ScenarioConfig::from_toml_str("name = \"x\"\nseed = 7\n", "mem").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.ticks, 2000);
        assert_eq!(cfg.world, WorldParams::default());
        assert_eq!(cfg.thresholds, Thresholds::default());
        assert_eq!(cfg.agent, standard_agent());
    }

    #[test]
    fn negative_ticks_named() {
        let err = ScenarioConfig::from_toml_str("name = \"x\"\nticks = -5\n", "mem").unwrap_err();
        assert!(err.to_string().contains("ticks"), "{err}");
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = ScenarioConfig::from_toml_str("name = \"x\"\n\n[world]\nwidht = 3\n", "mem")
            .unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 4);
                assert!(message.contains("widht"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn resolved_round_trip() {
        let text = r#"
name = "rt"
seed = 3
ablations = ["no_topdown"]

[hvar_overrides."mind.resolve"]
source = "fasted_ticks"
target = 60.0

[[events]]
kind = "pyrogen_on"
tick = 5
delta = 1.5
duration = 20

[[events]]
kind = "cold_snap"
tick = 6
temp_drop = -3.0
region = { x0 = 0, y0 = 0, x1 = 3, y1 = 3 }

[[events]]
kind = "cold_snap"
tick = 7
temp_drop = 3.0
region = "all"
"#;
        let cfg = ScenarioConfig::from_toml_str(text, "mem").unwrap();
        let again = ScenarioConfig::from_toml_str(&cfg.to_toml(), "resolved").unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.to_toml(), again.to_toml());
    }

    #[test]
    fn cyclic_topology_rejected() {
        let mut cfg = ScenarioConfig::named("cyc");
        cfg.agent.subsystems[0].children = vec!["mind".into()];
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn bad_override_key() {
        let text = "name = \"x\"\n[hvar_overrides.\"body.nope\"]\ntarget = 1.0\n";
        let err = ScenarioConfig::from_toml_str(text, "mem").unwrap_err();
        assert!(err.to_string().contains("body.nope"));
    }

    #[test]
    fn unsorted_events_rejected() {
        let text = "name = \"x\"\n[[events]]\nkind = \"place_food\"\ntick = 9\nposition = [1, 1]\n\
                    [[events]]\nkind = \"place_food\"\ntick = 2\nposition = [1, 1]\n";
        let err = ScenarioConfig::from_toml_str(text, "mem").unwrap_err();
        assert!(err.to_string().contains("sorted"));
    }
}
