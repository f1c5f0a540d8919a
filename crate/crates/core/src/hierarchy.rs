//! The agent: a DAG of homeostatic subsystems stepped bottom-up each tick,
//! with top-down expectations delivered afterwards so they take effect on
//! the following tick.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homeostat::{
    ignore_cost, Expectation, HVar, InteroSignal, StepOutput, Subsystem, Switches, Thresholds,
};
use crate::memory::MemoryBank;
use crate::trace::{trace_update, window_to_trajectory, Signal, StateMask, TemporalTrace, Tick};
use crate::world::{Action, Body, Dir, Observation};

const DELTA_BASE: f64 = 0.9;
const DELTA_RATIO: f64 = 0.5;
const DELTA_FLOOR: f64 = 0.05;
const TAU_BASE: usize = 6;

/// `(delta, tau, replay_T)` for a level: higher levels blur more and
/// remember longer.
pub fn level_params(level: i64) -> Result<(f64, usize, usize)> {
    if level < 0 {
        return Err(Error::Config(format!("negative level {level}")));
    }
    if level > 16 {
        return Err(Error::Config(format!("level {level} too deep")));
    }
    let delta = (DELTA_BASE * DELTA_RATIO.powi(level as i32)).max(DELTA_FLOOR);
    let tau = TAU_BASE << level;
    Ok((delta, tau, tau.div_ceil(2)))
}

/// Body quantities an hvar can be bound to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodySource {
    None,
    CoreTemp,
    Energy,
    Integrity,
    FastedTicks,
}

impl BodySource {
    fn read(self, body: &Body) -> Option<f64> {
        match self {
            BodySource::None => None,
            BodySource::CoreTemp => Some(body.core_temp),
            BodySource::Energy => Some(body.energy),
            BodySource::Integrity => Some(body.integrity),
            BodySource::FastedTicks => Some(body.fasted_ticks as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HVarSpec {
    pub name: String,
    pub target: f64,
    pub band: f64,
    #[serde(default = "one")]
    pub priority: f64,
    #[serde(default)]
    pub privileged: bool,
    #[serde(default = "no_source")]
    pub source: BodySource,
    /// Starting value for unbound hvars; defaults to the target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn no_source() -> BodySource {
    BodySource::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemSpec {
    pub name: String,
    pub level: i64,
    #[serde(default)]
    pub children: Vec<String>,
    #[serde(default)]
    pub extero: Vec<String>,
    #[serde(default)]
    pub hvars: Vec<HVarSpec>,
}

/// A run of identical frames; features not listed keep their previous value
/// (0 before the first segment).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub hold: usize,
    #[serde(default)]
    pub set: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSpec {
    pub subsystem: String,
    pub label: String,
    pub utility: f64,
    pub mask: BTreeMap<String, f64>,
    pub segments: Vec<Segment>,
}

/// Which leaf hvars drive which actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorSpec {
    pub subsystem: String,
    pub escape: String,
    pub forage: String,
    pub thermal: String,
    /// Qualified hvar whose effective target the thermal move homes on;
    /// also the hvar world pyrogen events act on.
    pub thermal_reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default = "crate::scenario::standard_agent", deny_unknown_fields)]
pub struct AgentSpec {
    pub drive_cap: f64,
    pub valence_cap: f64,
    pub capacity: usize,
    /// Exteroceptive looming features are divided by this.
    pub looming_scale: f64,
    pub subsystems: Vec<SubsystemSpec>,
    pub motor: MotorSpec,
    pub bootstrap: Vec<BootstrapSpec>,
}

pub const EXTERO_FEATURES: [&str; 4] = ["ambient", "food_here", "looming", "looming_rate"];

/// Registry values for the exteroceptive features.
pub fn extero_features(obs: &Observation, looming_scale: f64) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("ambient".to_string(), (obs.ambient - 37.0) / 10.0),
        ("food_here".to_string(), if obs.food_here { 1.0 } else { 0.0 }),
        ("looming".to_string(), obs.looming / looming_scale),
        ("looming_rate".to_string(), obs.looming_rate / looming_scale),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablations {
    pub no_memory: bool,
    pub no_topdown: bool,
    pub no_plasticity: bool,
    pub no_ignore_cost: bool,
}

/// Everything one tick produced, per subsystem in step order.
#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub action: Action,
    pub ignore_cost: f64,
    pub outputs: Vec<(String, StepOutput)>,
    /// Abort flags from the root, which has no parent to escalate to.
    pub dropped_escalations: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentGraph {
    subsystems: BTreeMap<String, Subsystem>,
    parents: BTreeMap<String, Vec<String>>,
    order: Vec<String>,
    root: String,
    motor: MotorSpec,
    bindings: Vec<(String, String, BodySource)>,
    thresholds: Thresholds,
    ablations: Ablations,
    looming_scale: f64,
    pending_errors: BTreeMap<String, BTreeMap<String, f64>>,
}

fn topo_order(specs: &[SubsystemSpec]) -> Result<(Vec<String>, String)> {
    let names: BTreeSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
    if names.len() != specs.len() {
        return Err(Error::Config("agent: duplicate subsystem names".into()));
    }
    let mut remaining_children: BTreeMap<&str, usize> = BTreeMap::new();
    let mut parents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in specs {
        let unique: BTreeSet<&str> = s.children.iter().map(String::as_str).collect();
        if unique.len() != s.children.len() {
            return Err(Error::Config(format!("agent: {} lists a child twice", s.name)));
        }
        for c in &s.children {
            if !names.contains(c.as_str()) {
                return Err(Error::Config(format!("agent: {} has unknown child {c}", s.name)));
            }
            parents.entry(c.as_str()).or_default().push(&s.name);
        }
        remaining_children.insert(&s.name, s.children.len());
    }
    let roots: Vec<&str> = names
        .iter()
        .copied()
        .filter(|n| !parents.contains_key(n))
        .collect();
    let root = match roots.as_slice() {
        [r] => r.to_string(),
        [] => return Err(Error::Config("agent: topology has a cycle (no root)".into())),
        _ => return Err(Error::Config(format!("agent: several roots {roots:?}"))),
    };
    let mut ready: BTreeSet<&str> = remaining_children
        .iter()
        .filter(|(_, &n)| n == 0)
        .map(|(k, _)| *k)
        .collect();
    let mut order = Vec::new();
    while let Some(next) = ready.pop_first() {
        order.push(next.to_string());
        for p in parents.get(next).into_iter().flatten() {
            let n = remaining_children.get_mut(p).expect("parent registered");
            *n -= 1;
            if *n == 0 {
                ready.insert(p);
            }
        }
    }
    if order.len() != specs.len() {
        return Err(Error::Config("agent: topology has a cycle".into()));
    }
    Ok((order, root))
}

/// Turns segments into frames, then into temporal traces at `delta`
/// starting from the first frame.
pub fn bootstrap_traces(
    spec: &BootstrapSpec,
    sub: &Subsystem,
) -> Result<(Vec<TemporalTrace>, StateMask)> {
    let reg = sub.registry();
    let bad = |m: String| Error::Config(format!("bootstrap {}: {m}", spec.label));
    let mut current = BTreeMap::new();
    let mut frames = Vec::new();
    for seg in &spec.segments {
        for (k, v) in &seg.set {
            current.insert(k.clone(), *v);
        }
        let dense = reg.dense(&current).map_err(|e| bad(e.to_string()))?;
        for _ in 0..seg.hold {
            frames.push(Signal::new(dense.clone())?);
        }
    }
    if frames.len() < 2 {
        return Err(bad("needs at least two frames".into()));
    }
    let mut traces = Vec::with_capacity(frames.len());
    let mut trace = TemporalTrace::from_signal(&frames[0], sub.delta)?;
    traces.push(trace.clone());
    for f in &frames[1..] {
        trace = trace_update(&trace, f, sub.delta)?;
        traces.push(trace.clone());
    }
    let mask = StateMask::new(reg.dense(&spec.mask).map_err(|e| bad(e.to_string()))?)
        .map_err(|e| bad(e.to_string()))?;
    Ok((traces, mask))
}

impl AgentGraph {
    pub fn build(spec: &AgentSpec, thresholds: &Thresholds, ablations: Ablations) -> Result<Self> {
        thresholds.validate()?;
        if !(spec.looming_scale > 0.0) {
            return Err(Error::Config("agent.looming_scale must be positive".into()));
        }
        let (order, root) = topo_order(&spec.subsystems)?;
        let by_name: BTreeMap<&str, &SubsystemSpec> =
            spec.subsystems.iter().map(|s| (s.name.as_str(), s)).collect();

        let mut parents: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for s in &spec.subsystems {
            for c in &s.children {
                let child = by_name[c.as_str()];
                if child.level >= s.level {
                    return Err(Error::Config(format!(
                        "agent: child {c} (level {}) must sit below parent {} (level {})",
                        child.level, s.name, s.level
                    )));
                }
                parents.entry(c.clone()).or_default().push(s.name.clone());
            }
            for x in &s.extero {
                if !EXTERO_FEATURES.contains(&x.as_str()) {
                    return Err(Error::Config(format!("agent: unknown extero feature {x}")));
                }
            }
        }

        let switches = Switches {
            learning: !ablations.no_memory,
            plasticity: !ablations.no_plasticity,
        };
        let mut subsystems = BTreeMap::new();
        let mut bindings = Vec::new();
        for s in &spec.subsystems {
            let params = level_params(s.level)?;
            let mut hvars = Vec::new();
            for h in &s.hvars {
                let initial = h.initial.unwrap_or(h.target);
                hvars.push(HVar::new(&h.name, initial, h.target, h.band, h.priority, h.privileged)?);
                if h.source != BodySource::None {
                    bindings.push((s.name.clone(), h.name.clone(), h.source));
                }
            }
            let children = s
                .children
                .iter()
                .map(|c| {
                    let hv = by_name[c.as_str()].hvars.iter().map(|h| h.name.clone()).collect();
                    (c.clone(), hv)
                })
                .collect();
            let bank = MemoryBank::with_boost_max(spec.capacity, thresholds.boost_max)?;
            let mut sub = Subsystem::new(
                &s.name,
                s.level as u32,
                params,
                hvars,
                children,
                s.extero.clone(),
                bank,
                (spec.drive_cap, spec.valence_cap),
            )?;
            sub.set_switches(switches);
            subsystems.insert(s.name.clone(), sub);
        }

        // invariant: lower levels blur less and remember shorter
        for (child, ps) in &parents {
            let c = &subsystems[child];
            for p in ps {
                let p = &subsystems[p];
                assert!(c.delta >= p.delta && c.tau <= p.tau && c.replay_t <= p.replay_t);
            }
        }

        let motor_sub = subsystems
            .get(&spec.motor.subsystem)
            .ok_or_else(|| Error::Config(format!("agent: motor subsystem {} missing", spec.motor.subsystem)))?;
        if !motor_sub.is_leaf() {
            return Err(Error::Config("agent: motor subsystem must be a leaf".into()));
        }
        for h in [&spec.motor.escape, &spec.motor.forage, &spec.motor.thermal] {
            if motor_sub.hvar(h).is_none() {
                return Err(Error::Config(format!("agent: motor hvar {h} missing")));
            }
        }
        let (rs, rh) = spec
            .motor
            .thermal_reference
            .split_once('.')
            .ok_or_else(|| Error::Config("agent.motor.thermal_reference must be subsystem.hvar".into()))?;
        if subsystems.get(rs).and_then(|s| s.hvar(rh)).is_none() {
            return Err(Error::Config(format!(
                "agent: thermal reference {} missing",
                spec.motor.thermal_reference
            )));
        }

        if !ablations.no_memory {
            for b in &spec.bootstrap {
                let sub = subsystems
                    .get_mut(&b.subsystem)
                    .ok_or_else(|| Error::Config(format!("bootstrap {}: unknown subsystem {}", b.label, b.subsystem)))?;
                if !(b.utility > 0.0) {
                    return Err(Error::Config(format!("bootstrap {}: utility must be positive", b.label)));
                }
                let (traces, mask) = bootstrap_traces(b, sub)?;
                let traj = window_to_trajectory(&traces, mask, 0)?;
                sub.imprint_labeled(&b.label, traj, b.utility, 0)?;
            }
        }

        Ok(Self {
            subsystems,
            parents,
            order,
            root,
            motor: spec.motor.clone(),
            bindings,
            thresholds: thresholds.clone(),
            ablations,
            looming_scale: spec.looming_scale,
            pending_errors: BTreeMap::new(),
        })
    }

    pub fn subsystem(&self, name: &str) -> Option<&Subsystem> {
        self.subsystems.get(name)
    }

    pub fn subsystem_mut(&mut self, name: &str) -> Option<&mut Subsystem> {
        self.subsystems.get_mut(name)
    }

    pub fn subsystems(&self) -> impl Iterator<Item = &Subsystem> {
        self.order.iter().map(|n| &self.subsystems[n])
    }

    /// Leaves first, root last; ties broken by name.
    pub fn order(&self) -> &[String] {
        &self.order
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn parents_of(&self, name: &str) -> &[String] {
        self.parents.get(name).map_or(&[], Vec::as_slice)
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn pending_errors(&self) -> &BTreeMap<String, BTreeMap<String, f64>> {
        &self.pending_errors
    }

    /// Reads bound hvars from the body.
    pub fn sense(&mut self, body: &Body) {
        for (sub, hvar, source) in &self.bindings {
            if let Some(v) = source.read(body) {
                if let Some(h) = self.subsystems.get_mut(sub).and_then(|s| s.hvar_mut(hvar)) {
                    h.set_current(v);
                }
            }
        }
        for sub in self.subsystems.values_mut() {
            let unbound: Vec<String> = sub
                .hvars()
                .iter()
                .filter(|h| {
                    !self
                        .bindings
                        .iter()
                        .any(|(s, n, _)| s == &sub.name && n == &h.name)
                })
                .map(|h| h.name.clone())
                .collect();
            for name in unbound {
                let h = sub.hvar_mut(&name).expect("listed above");
                let v = h.current;
                h.set_current(v);
            }
        }
    }

    /// Delivers a setpoint shift from outside the hierarchy (a pyrogen).
    pub fn inject(&mut self, delta: f64, horizon: u64, now: Tick) -> Result<()> {
        if self.ablations.no_topdown {
            return Ok(());
        }
        let hvar = self.motor.thermal_reference.clone();
        self.deliver(
            Expectation {
                hvar,
                delta,
                horizon,
                issued_tick: now,
            },
            now,
        )
    }

    fn deliver(&mut self, e: Expectation, now: Tick) -> Result<()> {
        let (sub, _) = e
            .hvar
            .split_once('.')
            .ok_or_else(|| Error::Routing(format!("unqualified hvar {}", e.hvar)))?;
        let target = self
            .subsystems
            .get_mut(sub)
            .ok_or_else(|| Error::Routing(format!("no subsystem {sub}")))?;
        target.apply_expectation(e, now)
    }

    /// Records that `sub` abandoned replay with error `err`; each parent
    /// sees it in its reserved slot on the next tick.
    pub fn escalate_error(&mut self, sub: &str, err: f64) -> bool {
        if err <= self.thresholds.err {
            return false;
        }
        let parents = self.parents_of(sub).to_vec();
        if parents.is_empty() {
            return false;
        }
        for p in parents {
            self.pending_errors
                .entry(p)
                .or_default()
                .insert(sub.to_string(), err);
        }
        true
    }

    pub fn tick(&mut self, obs: &Observation, now: Tick) -> Result<TickReport> {
        let extero = extero_features(obs, self.looming_scale);
        let errors_in = std::mem::take(&mut self.pending_errors);
        let mut intero: BTreeMap<String, Vec<InteroSignal>> = BTreeMap::new();
        let mut outputs = Vec::with_capacity(self.order.len());
        let mut dropped = Vec::new();
        let mut cost = 0.0;

        for name in self.order.clone() {
            let sub = &self.subsystems[&name];
            let children_in: Vec<InteroSignal> = sub
                .children()
                .iter()
                .flat_map(|c| intero.get(c).cloned().unwrap_or_default())
                .collect();
            let errors = errors_in.get(&name).cloned().unwrap_or_default();
            let ext: BTreeMap<String, f64> = sub
                .registry()
                .features()
                .iter()
                .filter_map(|f| match f {
                    crate::homeostat::Feature::Extero(x) => Some((x.clone(), extero[x])),
                    _ => None,
                })
                .collect();
            let state = sub.assemble_state(&children_in, &errors, &ext)?;
            let sub = self.subsystems.get_mut(&name).expect("ordered name");
            let out = sub.step(&state, &children_in, now, &self.thresholds)?;
            if !self.ablations.no_ignore_cost {
                cost += ignore_cost(&children_in, &out.expectations_down, self.thresholds.ignore_cost);
            }
            if let Some(err) = out.aborted {
                if !self.escalate_error(&name, err) && self.parents_of(&name).is_empty() {
                    dropped.push((name.clone(), err));
                }
            }
            intero.insert(name.clone(), out.intero_up.clone());
            outputs.push((name, out));
        }

        let action = self.translate(obs);

        if !self.ablations.no_topdown {
            for (_, out) in outputs.iter().rev() {
                for e in &out.expectations_down {
                    self.deliver(e.clone(), now)?;
                }
            }
        }

        Ok(TickReport {
            action,
            ignore_cost: cost,
            outputs,
            dropped_escalations: dropped,
        })
    }

    /// Fixed priority table: escape, eat, a move that serves the stronger of
    /// the thermal and forage drives, otherwise stay.
    pub fn translate(&self, obs: &Observation) -> Action {
        let leaf = &self.subsystems[&self.motor.subsystem];
        let drive = |h: &str| leaf.hvar(h).map_or(0.0, HVar::drive);
        if drive(&self.motor.escape) > 1.0 {
            return Action::EscapeDash;
        }
        let forage = drive(&self.motor.forage);
        if forage > 1.0 && obs.food_here {
            return Action::Eat;
        }
        let thermal = drive(&self.motor.thermal);
        let thermal_move = || {
            let (s, h) = self.motor.thermal_reference.split_once('.')?;
            let target = self.subsystems.get(s)?.hvar(h)?.target_eff();
            let here = (obs.ambient - target).abs();
            let (best, gap) = Dir::ALL
                .iter()
                .zip(obs.neighbors)
                .filter_map(|(d, a)| a.map(|a| (*d, (a - target).abs())))
                .min_by(|a, b| a.1.total_cmp(&b.1))?;
            (gap < here).then_some(Action::Move(best))
        };
        let forage_move = || {
            let (dx, dy) = obs.food_offset?;
            Dir::toward(dx, dy).map(Action::Move)
        };
        let mut wants = Vec::new();
        if thermal > 1.0 {
            wants.push((thermal, 0));
        }
        if forage > 1.0 {
            wants.push((forage, 1));
        }
        wants.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, which) in wants {
            let step = if which == 0 { thermal_move() } else { forage_move() };
            if let Some(a) = step {
                return a;
            }
        }
        Action::Stay
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homeostat::Mode;
    use crate::scenario::standard_agent;

    fn quiet() -> Observation {
        Observation {
            ambient: 37.0,
            food_here: false,
            looming: 0.0,
            looming_rate: 0.0,
            neighbors: [Some(37.0); 4],
            food_offset: None,
            threat_offset: None,
        }
    }

    fn hvar(name: &str) -> HVarSpec {
        HVarSpec {
            name: name.into(),
            target: 0.0,
            band: 1.0,
            priority: 1.0,
            privileged: false,
            source: BodySource::None,
            initial: None,
        }
    }

    /// A motor leaf under one level-1 parent that remembers wanting the
    /// leaf's thermo drive at 3.
    fn two_level() -> AgentSpec {
        AgentSpec {
            drive_cap: 4.0,
            valence_cap: 4.0,
            capacity: 8,
            looming_scale: 1.0,
            subsystems: vec![
                SubsystemSpec {
                    name: "motor".into(),
                    level: 0,
                    children: vec![],
                    extero: vec![],
                    hvars: vec![hvar("thermo"), hvar("forage"), hvar("flee")],
                },
                SubsystemSpec {
                    name: "top".into(),
                    level: 1,
                    children: vec!["motor".into()],
                    extero: vec![],
                    hvars: vec![hvar("calm")],
                },
            ],
            motor: MotorSpec {
                subsystem: "motor".into(),
                escape: "flee".into(),
                forage: "forage".into(),
                thermal: "thermo".into(),
                thermal_reference: "motor.thermo".into(),
            },
            bootstrap: vec![BootstrapSpec {
                subsystem: "top".into(),
                label: "warm_up".into(),
                utility: 10.0,
                mask: BTreeMap::from([("drive:motor.thermo".into(), 1.0)]),
                segments: vec![Segment {
                    hold: 12,
                    set: BTreeMap::from([("drive:motor.thermo".into(), 3.0)]),
                }],
            }],
        }
    }

    fn build(spec: &AgentSpec) -> AgentGraph {
        AgentGraph::build(spec, &Thresholds::default(), Ablations::default()).unwrap()
    }

    #[test]
    fn level_params_examples() {
        assert_eq!(level_params(0).unwrap(), (0.9, 6, 3));
        assert_eq!(level_params(1).unwrap(), (0.45, 12, 6));
        assert_eq!(level_params(2).unwrap(), (0.225, 24, 12));
        assert!(matches!(level_params(-1), Err(Error::Config(_))));
        for l in 0..6 {
            let (d0, t0, r0) = level_params(l).unwrap();
            let (d1, t1, r1) = level_params(l + 1).unwrap();
            assert!(d0 >= d1 && t0 < t1 && r0 < r1);
        }
        assert_eq!(level_params(8).unwrap().0, 0.05);
    }

    #[test]
    fn no_bootstrap_means_idle_and_still() {
        let mut spec = standard_agent();
        spec.bootstrap.clear();
        let mut agent = build(&spec);
        for now in 0..5 {
            let report = agent.tick(&quiet(), now).unwrap();
            assert_eq!(report.action, Action::Stay);
            assert_eq!(report.ignore_cost, 0.0);
        }
        for sub in agent.subsystems() {
            assert!(sub.bank().is_empty());
            assert_eq!(sub.mode(), &Mode::Idle);
        }
    }

    #[test]
    fn one_bootstrap_one_record() {
        let mut spec = standard_agent();
        spec.bootstrap.retain(|b| b.label == "calm");
        let agent = build(&spec);
        let motor = agent.subsystem("motor").unwrap();
        assert_eq!(motor.bank().len(), 1);
        assert_eq!(motor.bank().records()[0].id, 0);
        assert_eq!(motor.label(0), Some("calm"));
        assert!(agent.subsystem("body").unwrap().bank().is_empty());
    }

    #[test]
    fn structural_errors_are_named() {
        let mut spec = two_level();
        spec.subsystems[0].children = vec!["top".into()];
        let err = AgentGraph::build(&spec, &Thresholds::default(), Ablations::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));

        let mut spec = two_level();
        spec.subsystems[1].level = 0;
        assert!(AgentGraph::build(&spec, &Thresholds::default(), Ablations::default()).is_err());

        let mut spec = two_level();
        spec.bootstrap[0].mask = BTreeMap::from([("drive:nowhere".into(), 1.0)]);
        assert!(AgentGraph::build(&spec, &Thresholds::default(), Ablations::default()).is_err());
    }

    #[test]
    fn order_is_leaves_first() {
        let agent = build(&standard_agent());
        assert_eq!(agent.order(), ["motor", "body", "mind"]);
        assert_eq!(agent.root(), "mind");
        assert_eq!(agent.parents_of("motor"), ["body"]);
    }

    #[test]
    fn escalation_reaches_parent_next_tick() {
        let mut agent = build(&standard_agent());
        agent.tick(&quiet(), 0).unwrap();
        assert!(!agent.escalate_error("body", 0.1));
        assert!(agent.pending_errors().is_empty());
        assert!(agent.escalate_error("body", 0.5));
        assert_eq!(agent.pending_errors()["mind"]["body"], 0.5);
        // the root has nobody to tell
        assert!(!agent.escalate_error("mind", 0.5));
        assert!(!agent.pending_errors().contains_key("body"));

        let mind = agent.subsystem("mind").unwrap();
        let slot = mind.registry().slot("error:body").unwrap();
        let before = mind.history().last().unwrap().values()[slot];
        agent.tick(&quiet(), 1).unwrap();
        let mind = agent.subsystem("mind").unwrap();
        let after = mind.history().last().unwrap().values()[slot];
        let d = mind.delta;
        assert!((after - ((1.0 - d) * before + d * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn expectations_land_on_the_next_tick() {
        let mut agent = build(&two_level());
        let (_, _, t_parent) = level_params(1).unwrap();
        let first = agent.tick(&quiet(), 0).unwrap();
        let (_, top) = &first.outputs[1];
        assert_eq!(top.replayed, Some(0));
        let leaf_drive = |r: &TickReport| r.outputs[0].1.intero_up[0].drive;
        // the leaf stepped before its parent spoke
        assert_eq!(leaf_drive(&first), 0.0);
        let thermo = agent.subsystem("motor").unwrap().hvar("thermo").unwrap();
        assert!(thermo.target_eff() > 0.0);
        let mut shifted_at = None;
        for now in 1..=t_parent as u64 {
            let r = agent.tick(&quiet(), now).unwrap();
            if shifted_at.is_none() && leaf_drive(&r) > 0.0 {
                shifted_at = Some(now);
            }
        }
        assert_eq!(shifted_at, Some(1));
    }

    #[test]
    fn no_topdown_keeps_targets_put() {
        let mut agent = AgentGraph::build(
            &two_level(),
            &Thresholds::default(),
            Ablations {
                no_topdown: true,
                ..Ablations::default()
            },
        )
        .unwrap();
        for now in 0..10 {
            agent.tick(&quiet(), now).unwrap();
        }
        agent.inject(1.5, 200, 10).unwrap();
        assert_eq!(agent.subsystem("motor").unwrap().hvar("thermo").unwrap().target_eff(), 0.0);
    }

    #[test]
    fn translate_priorities() {
        let mut agent = build(&two_level());
        let set = |agent: &mut AgentGraph, h: &str, v: f64| {
            agent.subsystem_mut("motor").unwrap().hvar_mut(h).unwrap().set_current(v);
        };
        assert_eq!(agent.translate(&quiet()), Action::Stay);
        set(&mut agent, "forage", 2.0);
        let mut obs = quiet();
        obs.food_offset = Some((0, -3));
        assert_eq!(agent.translate(&obs), Action::Move(Dir::N));
        obs.food_here = true;
        assert_eq!(agent.translate(&obs), Action::Eat);
        set(&mut agent, "flee", 1.5);
        assert_eq!(agent.translate(&obs), Action::EscapeDash);
    }

    #[test]
    fn ticks_are_deterministic() {
        let (mut a, mut b) = (build(&standard_agent()), build(&standard_agent()));
        let mut obs = quiet();
        for now in 0..50 {
            obs.ambient = 30.0 + (now % 7) as f64;
            obs.neighbors = [Some(obs.ambient - 1.0), Some(obs.ambient + 1.0), None, Some(obs.ambient)];
            assert_eq!(a.tick(&obs, now).unwrap(), b.tick(&obs, now).unwrap());
        }
    }
}
