//! Homeostatic subsystems.
//!
//! A subsystem owns hvars, a trajectory memory bank and a rolling temporal
//! trace of its assembled state. Each step it recalls the stored trajectory
//! that best continues its recent history and replays it to its children as
//! setpoint shifts. When several memories fit about equally well it cycles
//! through them, using short-term boosts to break the tie. Useful stretches
//! of its own experience are imprinted back into the bank.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{MatchQuery, MatchResult, MemoryBank};
use crate::trace::{
    masked_distance, trace_update, window_to_trajectory, Signal, StateMask, TemporalTrace, Tick,
};

/// Every tunable of the recall/replay loop in one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Minimum top-2 margin for a clear winner.
    pub win: f64,
    /// Minimum score for a memory to be acted on at all.
    pub act: f64,
    /// Minimum margin for a recall to become a goal.
    pub goal: f64,
    /// Prediction error above which replay is considered failing.
    pub err: f64,
    /// Consecutive failing ticks before replay is abandoned.
    pub err_ticks: u32,
    /// Number of candidates cycled through when there is no winner.
    pub candidates: usize,
    pub max_cycles: u32,
    pub boost_factor: f64,
    pub goal_boost: f64,
    pub boost_max: f64,
    pub ignore_cost: f64,
    pub novelty_floor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            win: 0.05,
            act: 0.1,
            goal: 0.15,
            err: 0.2,
            err_ticks: 3,
            candidates: 3,
            max_cycles: 8,
            boost_factor: 1.3,
            goal_boost: 1.2,
            boost_max: 2.0,
            ignore_cost: 0.05,
            novelty_floor: 0.05,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("win", self.win),
            ("act", self.act),
            ("goal", self.goal),
            ("err", self.err),
        ];
        for (key, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("thresholds.{key} must be positive")));
            }
        }
        if self.err_ticks == 0 || self.candidates == 0 || self.max_cycles == 0 {
            return Err(Error::Config(
                "thresholds.err_ticks, candidates and max_cycles must be positive".into(),
            ));
        }
        if !(self.boost_factor > 1.0) || !(self.goal_boost > 1.0) || !(self.boost_max >= 1.0) {
            return Err(Error::Config(
                "thresholds.boost_factor and goal_boost must exceed 1, boost_max must be >= 1"
                    .into(),
            ));
        }
        if !(self.ignore_cost >= 0.0) || !(self.novelty_floor >= 0.0) {
            return Err(Error::Config(
                "thresholds.ignore_cost and novelty_floor must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Positive when the variable moved toward its target.
pub fn valence(prev: f64, curr: f64, target: f64) -> f64 {
    (prev - target).abs() - (curr - target).abs()
}

/// A top-down setpoint shift for one hvar, addressed as `subsystem.hvar`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expectation {
    pub hvar: String,
    pub delta: f64,
    pub horizon: u64,
    pub issued_tick: Tick,
}

impl Expectation {
    pub fn expires_at(&self) -> Tick {
        self.issued_tick + self.horizon
    }

    pub fn is_live(&self, now: Tick) -> bool {
        now < self.expires_at()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HVar {
    pub name: String,
    pub current: f64,
    prev_current: f64,
    pub target_base: f64,
    target_eff: f64,
    pub band: f64,
    pub priority: f64,
    pub privileged: bool,
    active: Vec<Expectation>,
}

impl HVar {
    pub fn new(
        name: impl Into<String>,
        current: f64,
        target: f64,
        band: f64,
        priority: f64,
        privileged: bool,
    ) -> Result<Self> {
        let name = name.into();
        if !(band > 0.0) || !(priority > 0.0) {
            return Err(Error::Config(format!(
                "hvar {name}: band and priority must be positive"
            )));
        }
        if !current.is_finite() || !target.is_finite() {
            return Err(Error::Config(format!("hvar {name}: values must be finite")));
        }
        Ok(Self {
            name,
            current,
            prev_current: current,
            target_base: target,
            target_eff: target,
            band,
            priority,
            privileged,
            active: Vec::new(),
        })
    }

    pub fn target_eff(&self) -> f64 {
        self.target_eff
    }

    pub fn drive(&self) -> f64 {
        (self.current - self.target_eff).abs() / self.band
    }

    /// Valence of the most recent change of `current`.
    pub fn last_valence(&self) -> f64 {
        valence(self.prev_current, self.current, self.target_eff)
    }

    /// Which side of `current` the effective target lies on (+1 when level).
    pub fn direction(&self) -> f64 {
        if self.target_eff < self.current {
            -1.0
        } else {
            1.0
        }
    }

    pub fn set_current(&mut self, value: f64) {
        self.prev_current = self.current;
        self.current = value;
    }

    pub fn active_expectations(&self) -> &[Expectation] {
        &self.active
    }

    fn recompute(&mut self, now: Tick) {
        self.active.retain(|e| e.is_live(now));
        self.target_eff = self.target_base + self.active.iter().map(|e| e.delta).sum::<f64>();
    }
}

/// Normalised deviation from the effective target.
pub fn drive(hvar: &HVar) -> f64 {
    hvar.drive()
}

/// Bottom-up report of one hvar's homeostatic state.
#[derive(Debug, Clone, PartialEq)]
pub struct InteroSignal {
    pub subsystem: String,
    pub hvar: String,
    pub drive: f64,
    pub valence: f64,
    pub privileged: bool,
    /// Band and target side of the source hvar, so a parent can turn a
    /// desired drive into a setpoint shift.
    pub band: f64,
    pub direction: f64,
}

impl InteroSignal {
    pub fn qualified(&self) -> String {
        format!("{}.{}", self.subsystem, self.hvar)
    }
}

/// `c_ig * sum(max(0, drive - 1))` over privileged signals that no
/// expectation in `expectations_down` addresses.
pub fn ignore_cost(privileged: &[InteroSignal], expectations_down: &[Expectation], c_ig: f64) -> f64 {
    privileged
        .iter()
        .filter(|s| s.privileged && s.drive > 1.0)
        .filter(|s| {
            let q = s.qualified();
            !expectations_down.iter().any(|e| e.hvar == q)
        })
        .map(|s| c_ig * (s.drive - 1.0))
        .sum()
}

/// One hvar at one tick, as recorded for utility computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HVarSample {
    pub current: f64,
    pub target: f64,
}

/// Priority-weighted valence summed over a recorded window. The only
/// learning signal in the system: there is no external reward.
pub fn trajectory_utility(window: &[Vec<HVarSample>], priorities: &[f64]) -> f64 {
    window
        .windows(2)
        .map(|pair| {
            pair[0]
                .iter()
                .zip(&pair[1])
                .zip(priorities)
                .map(|((prev, curr), p)| p * valence(prev.current, curr.current, curr.target))
                .sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Feature {
    Drive(String),
    Valence(String),
    Error(String),
    Extero(String),
}

impl Feature {
    pub fn name(&self) -> String {
        match self {
            Feature::Drive(h) => format!("drive:{h}"),
            Feature::Valence(h) => format!("valence:{h}"),
            Feature::Error(c) => format!("error:{c}"),
            Feature::Extero(x) => format!("extero:{x}"),
        }
    }
}

/// Maps inputs to signal positions: own hvars (drive, valence), then per
/// child its hvars (drive, valence) and a reserved error slot, then
/// exteroceptive features.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    features: Vec<Feature>,
    index: BTreeMap<String, usize>,
    drive_cap: f64,
    valence_cap: f64,
}

impl Registry {
    pub fn new(
        own: &[String],
        children: &[(String, Vec<String>)],
        extero: &[String],
        drive_cap: f64,
        valence_cap: f64,
    ) -> Result<Self> {
        if !(drive_cap > 0.0) || !(valence_cap > 0.0) {
            return Err(Error::Config("feature caps must be positive".into()));
        }
        let mut features = Vec::new();
        for h in own {
            features.push(Feature::Drive(h.clone()));
            features.push(Feature::Valence(h.clone()));
        }
        for (child, hvars) in children {
            for h in hvars {
                features.push(Feature::Drive(format!("{child}.{h}")));
                features.push(Feature::Valence(format!("{child}.{h}")));
            }
            features.push(Feature::Error(child.clone()));
        }
        for x in extero {
            features.push(Feature::Extero(x.clone()));
        }
        let mut index = BTreeMap::new();
        for (i, f) in features.iter().enumerate() {
            if index.insert(f.name(), i).is_some() {
                return Err(Error::Config(format!("duplicate feature {}", f.name())));
            }
        }
        Ok(Self {
            features,
            index,
            drive_cap,
            valence_cap,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(Feature::name).collect()
    }

    pub fn drive_feature(&self, drive: f64) -> f64 {
        drive.min(self.drive_cap)
    }

    pub fn valence_feature(&self, valence: f64, band: f64) -> f64 {
        (valence / band).clamp(-self.valence_cap, self.valence_cap)
    }

    /// Builds a dense vector from named values; unnamed features are 0.
    pub fn dense(&self, named: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        for (k, &v) in named {
            let i = self
                .slot(k)
                .ok_or_else(|| Error::Config(format!("unregistered feature {k}")))?;
            out[i] = v;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Idle,
    Cycling {
        candidates: Vec<u64>,
        cycle: u32,
        record: u64,
        offset: usize,
        ticks_left: usize,
    },
    Replaying {
        record: u64,
        offset: usize,
    },
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Idle => "idle",
            Mode::Cycling { .. } => "cycling",
            Mode::Replaying { .. } => "replaying",
        }
    }

    pub fn record(&self) -> Option<u64> {
        match self {
            Mode::Idle => None,
            Mode::Cycling { record, .. } | Mode::Replaying { record, .. } => Some(*record),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalInstance {
    pub record: u64,
    pub instantiated_tick: Tick,
    pub ttl: u64,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GoalEvent {
    Started(u64),
    Completed(u64),
    Expired(u64),
}

impl GoalEvent {
    pub fn label(&self) -> String {
        match self {
            GoalEvent::Started(id) => format!("start:{id}"),
            GoalEvent::Completed(id) => format!("complete:{id}"),
            GoalEvent::Expired(id) => format!("expire:{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepOutput {
    pub expectations_down: Vec<Expectation>,
    pub intero_up: Vec<InteroSignal>,
    pub prediction_error: f64,
    /// Set on the tick replay was abandoned for persistent prediction error.
    pub aborted: Option<f64>,
    pub goal_events: Vec<GoalEvent>,
    pub imprinted: Option<u64>,
    /// Record whose trace was replayed this tick.
    pub replayed: Option<u64>,
    /// Top match of this tick.
    pub top: Option<MatchResult>,
}

/// Switches that ablations flip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Switches {
    pub learning: bool,
    pub plasticity: bool,
}

impl Default for Switches {
    fn default() -> Self {
        Self {
            learning: true,
            plasticity: true,
        }
    }
}

/// Outcome of one cycle of winner selection.
#[derive(Debug, Clone, PartialEq)]
pub enum CycleStep {
    /// Nothing clears the activation threshold.
    Idle,
    Winner(u64),
    /// No winner yet; `record` is the candidate to try out next.
    Candidate { candidates: Vec<u64>, record: u64 },
}

/// One cycle: takes candidate `cycle mod k` of the current top-k, boosts it,
/// decays every boost and re-matches. A clear margin, or reaching
/// `max_cycles`, makes the top record the winner.
pub fn cycle_step(
    bank: &mut MemoryBank,
    query: &MatchQuery<'_>,
    cycle: u32,
    th: &Thresholds,
    plastic: bool,
) -> Result<CycleStep> {
    let candidates: Vec<u64> = bank
        .match_query(query)?
        .iter()
        .take(th.candidates)
        .map(|r| r.record_id)
        .collect();
    if candidates.is_empty() {
        return Ok(CycleStep::Idle);
    }
    let record = candidates[cycle as usize % candidates.len()];
    if plastic {
        bank.boost(record, th.boost_factor)?;
    }
    bank.decay_boosts();
    let ranked = bank.match_query(query)?;
    let top = &ranked[0];
    if top.score < th.act {
        return Ok(CycleStep::Idle);
    }
    if top.margin.unwrap_or(0.0) >= th.win || cycle >= th.max_cycles {
        return Ok(CycleStep::Winner(top.record_id));
    }
    Ok(CycleStep::Candidate { candidates, record })
}

/// Result of running the cycling loop to completion without replay ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub winner: Option<u64>,
    /// Candidate tried at each cycle, in order.
    pub tried: Vec<u64>,
    /// Cycle index at which the loop stopped.
    pub cycles: u32,
}

/// Runs [`cycle_step`] from cycle 0 until a winner (or nothing) emerges.
pub fn select_winner(bank: &mut MemoryBank, query: &MatchQuery<'_>, th: &Thresholds) -> Result<Selection> {
    let mut tried = Vec::new();
    let mut cycle = 0;
    loop {
        match cycle_step(bank, query, cycle, th, true)? {
            CycleStep::Idle => {
                return Ok(Selection {
                    winner: None,
                    tried,
                    cycles: cycle,
                })
            }
            CycleStep::Winner(id) => {
                return Ok(Selection {
                    winner: Some(id),
                    tried,
                    cycles: cycle,
                })
            }
            CycleStep::Candidate { record, .. } => tried.push(record),
        }
        cycle += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subsystem {
    pub name: String,
    pub level: u32,
    pub delta: f64,
    pub tau: usize,
    pub replay_t: usize,
    pub prefix_len: usize,
    hvars: Vec<HVar>,
    children: Vec<String>,
    registry: Registry,
    bank: MemoryBank,
    labels: BTreeMap<u64, String>,
    mode: Mode,
    active_goal: Option<GoalInstance>,
    evicted_goal: Option<u64>,
    trace: Option<TemporalTrace>,
    history: Vec<TemporalTrace>,
    samples: VecDeque<Vec<HVarSample>>,
    pending: Option<(TemporalTrace, StateMask)>,
    err_streak: u32,
    switches: Switches,
}

impl Subsystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        level: u32,
        (delta, tau, replay_t): (f64, usize, usize),
        hvars: Vec<HVar>,
        children: Vec<(String, Vec<String>)>,
        extero: Vec<String>,
        bank: MemoryBank,
        (drive_cap, valence_cap): (f64, f64),
    ) -> Result<Self> {
        let name = name.into();
        if tau < 2 || replay_t == 0 {
            return Err(Error::Config(format!("{name}: tau must be >= 2 and T >= 1")));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::Config(format!("{name}: delta outside (0, 1]")));
        }
        let own: Vec<String> = hvars.iter().map(|h| h.name.clone()).collect();
        let registry = Registry::new(&own, &children, &extero, drive_cap, valence_cap)?;
        Ok(Self {
            name,
            level,
            delta,
            tau,
            replay_t,
            prefix_len: tau.div_ceil(3),
            hvars,
            children: children.into_iter().map(|(c, _)| c).collect(),
            registry,
            bank,
            labels: BTreeMap::new(),
            mode: Mode::Idle,
            active_goal: None,
            evicted_goal: None,
            trace: None,
            history: Vec::with_capacity(tau),
            samples: VecDeque::with_capacity(tau),
            pending: None,
            err_streak: 0,
            switches: Switches::default(),
        })
    }

    pub fn hvars(&self) -> &[HVar] {
        &self.hvars
    }

    pub fn hvar(&self, name: &str) -> Option<&HVar> {
        self.hvars.iter().find(|h| h.name == name)
    }

    pub fn hvar_mut(&mut self, name: &str) -> Option<&mut HVar> {
        self.hvars.iter_mut().find(|h| h.name == name)
    }

    pub fn children(&self) -> &[String] {
        &self.children
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn bank_mut(&mut self) -> &mut MemoryBank {
        &mut self.bank
    }

    pub fn mode(&self) -> &Mode {
        &self.mode
    }

    pub fn active_goal(&self) -> Option<&GoalInstance> {
        self.active_goal.as_ref()
    }

    pub fn label(&self, id: u64) -> Option<&str> {
        self.labels.get(&id).map(String::as_str)
    }

    pub fn set_switches(&mut self, switches: Switches) {
        self.switches = switches;
    }

    pub fn history(&self) -> &[TemporalTrace] {
        &self.history
    }

    /// Imprints a named trajectory, e.g. from a bootstrap set.
    pub fn imprint_labeled(
        &mut self,
        label: &str,
        trajectory: crate::trace::TraceTrajectory,
        utility: f64,
        now: Tick,
    ) -> Result<Option<u64>> {
        if trajectory.dim() != self.registry.dim() {
            return Err(Error::Config(format!(
                "{}: trajectory {label} has {} features, registry has {}",
                self.name,
                trajectory.dim(),
                self.registry.dim()
            )));
        }
        let out = self.bank.imprint(trajectory, utility, now)?;
        if let Some(imp) = out {
            if let Some(gone) = imp.evicted {
                self.forget(gone);
            }
            self.labels.insert(imp.id, label.to_string());
        }
        Ok(out.map(|i| i.id))
    }

    /// Drops every reference to an evicted record.
    fn forget(&mut self, gone: u64) {
        self.labels.remove(&gone);
        if self.active_goal.as_ref().is_some_and(|g| g.record == gone) {
            self.active_goal = None;
            self.evicted_goal = Some(gone);
        }
        match &mut self.mode {
            Mode::Replaying { record, .. } if *record == gone => self.mode = Mode::Idle,
            Mode::Cycling {
                candidates, record, ..
            } => {
                candidates.retain(|c| *c != gone);
                if *record == gone || candidates.is_empty() {
                    self.mode = Mode::Idle;
                }
            }
            _ => {}
        }
    }

    /// Adds `e` to its hvar's active set after dropping expired entries.
    pub fn apply_expectation(&mut self, e: Expectation, now: Tick) -> Result<()> {
        let local = e
            .hvar
            .strip_prefix(&self.name)
            .and_then(|r| r.strip_prefix('.'))
            .unwrap_or(&e.hvar)
            .to_string();
        let hvar = self
            .hvar_mut(&local)
            .ok_or_else(|| Error::Routing(format!("no hvar {} in subsystem", e.hvar)))?;
        hvar.active.push(e);
        hvar.recompute(now);
        Ok(())
    }

    /// Drops expired expectations and refreshes effective targets.
    pub fn expire(&mut self, now: Tick) {
        for h in &mut self.hvars {
            h.recompute(now);
        }
    }

    pub fn intero_up(&self) -> Vec<InteroSignal> {
        self.hvars
            .iter()
            .map(|h| InteroSignal {
                subsystem: self.name.clone(),
                hvar: h.name.clone(),
                drive: h.drive(),
                valence: h.last_valence(),
                privileged: h.privileged,
                band: h.band,
                direction: h.direction(),
            })
            .collect()
    }

    /// Concatenates own hvar state, child reports, pending child error flags
    /// and exteroceptive features in registry order. Children that reported
    /// nothing read as zero drive and zero valence.
    pub fn assemble_state(
        &self,
        intero_in: &[InteroSignal],
        errors: &BTreeMap<String, f64>,
        extero: &BTreeMap<String, f64>,
    ) -> Result<Signal> {
        let reg = &self.registry;
        let mut out = vec![0.0; reg.dim()];
        let mut put = |name: String, v: f64| -> Result<()> {
            let i = reg
                .slot(&name)
                .ok_or_else(|| Error::Config(format!("{}: unregistered input {name}", self.name)))?;
            out[i] = v;
            Ok(())
        };
        for h in &self.hvars {
            put(format!("drive:{}", h.name), reg.drive_feature(h.drive()))?;
            put(
                format!("valence:{}", h.name),
                reg.valence_feature(h.last_valence(), h.band),
            )?;
        }
        for s in intero_in {
            let q = s.qualified();
            put(format!("drive:{q}"), reg.drive_feature(s.drive))?;
            put(format!("valence:{q}"), reg.valence_feature(s.valence, s.band))?;
        }
        for (child, &err) in errors {
            put(format!("error:{child}"), err)?;
        }
        for (x, &v) in extero {
            put(format!("extero:{x}"), v)?;
        }
        Signal::new(out)
    }

    fn query_len(&self) -> usize {
        self.prefix_len.min(self.history.len())
    }

    fn rematch(&self) -> Result<Vec<MatchResult>> {
        if self.bank.is_empty() || self.history.is_empty() {
            return Ok(Vec::new());
        }
        self.bank
            .match_query(&MatchQuery::new(&self.history, self.query_len())?)
    }

    /// Replay start offset for a record: just past the prefix it was matched on.
    fn start_offset(&self, record: u64) -> Result<Option<usize>> {
        let tau = self.bank.get(record)?.trajectory.tau();
        let p = self.query_len().min(tau);
        Ok((p < tau).then_some(p))
    }

    fn begin_replay(&mut self, record: u64, now: Tick) -> Result<()> {
        self.mode = match self.start_offset(record)? {
            Some(offset) => {
                self.bank.touch(record, now)?;
                Mode::Replaying { record, offset }
            }
            None => Mode::Idle,
        };
        self.err_streak = 0;
        Ok(())
    }

    /// Moves to cycle `cycle` of winner selection; see [`cycle_step`].
    fn switch_candidate(&mut self, cycle: u32, th: &Thresholds, now: Tick) -> Result<()> {
        if self.bank.is_empty() || self.history.is_empty() {
            self.mode = Mode::Idle;
            return Ok(());
        }
        let query = MatchQuery::new(&self.history, self.query_len())?;
        let step = cycle_step(&mut self.bank, &query, cycle, th, self.switches.plasticity)?;
        match step {
            CycleStep::Idle => self.mode = Mode::Idle,
            CycleStep::Winner(id) => self.begin_replay(id, now)?,
            CycleStep::Candidate { candidates, record } => {
                self.mode = match self.start_offset(record)? {
                    Some(offset) => Mode::Cycling {
                        candidates,
                        cycle,
                        record,
                        offset,
                        ticks_left: self.replay_t,
                    },
                    // nothing left to replay of this candidate; count it as a cycle
                    None => return self.switch_candidate(cycle + 1, th, now),
                };
            }
        }
        Ok(())
    }

    fn leave_idle(&mut self, ranked: &[MatchResult], th: &Thresholds, now: Tick) -> Result<()> {
        match ranked.first() {
            None => Ok(()),
            Some(top) if top.score < th.act => Ok(()),
            Some(top) if top.margin.unwrap_or(0.0) >= th.win => self.begin_replay(top.record_id, now),
            Some(_) => self.switch_candidate(0, th, now),
        }
    }

    /// Setpoint shifts that steer each masked child hvar (own hvars for a
    /// leaf) toward the drive level the replayed trace shows.
    fn expectations_from(
        &self,
        replayed: &TemporalTrace,
        mask: &StateMask,
        state: &Signal,
        intero_in: &[InteroSignal],
        now: Tick,
    ) -> Vec<Expectation> {
        let mut out = Vec::new();
        for (i, feature) in self.registry.features().iter().enumerate() {
            let Feature::Drive(hvar) = feature else { continue };
            if mask.weights()[i] <= 0.0 {
                continue;
            }
            let (qualified, band, direction) = match hvar.split_once('.') {
                Some(_) => match intero_in.iter().find(|s| &s.qualified() == hvar) {
                    Some(s) => (hvar.clone(), s.band, s.direction),
                    None => continue,
                },
                None if self.is_leaf() => match self.hvar(hvar) {
                    Some(h) => (format!("{}.{}", self.name, h.name), h.band, h.direction()),
                    None => continue,
                },
                None => continue,
            };
            let delta = (replayed.values()[i] - state.values()[i]) * band * direction;
            out.push(Expectation {
                hvar: qualified,
                delta,
                horizon: self.replay_t as u64,
                issued_tick: now,
            });
        }
        out
    }

    /// One tick of recall, replay, goal bookkeeping and learning.
    pub fn step(
        &mut self,
        state: &Signal,
        intero_in: &[InteroSignal],
        now: Tick,
        th: &Thresholds,
    ) -> Result<StepOutput> {
        if state.dim() != self.registry.dim() {
            return Err(Error::Structural(format!(
                "{}: state has {} features, registry has {}",
                self.name,
                state.dim(),
                self.registry.dim()
            )));
        }
        self.expire(now);
        let trace = match &self.trace {
            Some(prev) => trace_update(prev, state, self.delta)?,
            None => TemporalTrace::from_signal(state, self.delta)?,
        };
        self.trace = Some(trace.clone());
        if self.history.len() == self.tau {
            self.history.remove(0);
        }
        self.history.push(trace.clone());
        if self.samples.len() == self.tau {
            self.samples.pop_front();
        }
        self.samples.push_back(
            self.hvars
                .iter()
                .map(|h| HVarSample {
                    current: h.current,
                    target: h.target_eff(),
                })
                .collect(),
        );

        let mut out = StepOutput::default();
        if let Some((predicted, mask)) = self.pending.take() {
            out.prediction_error = masked_distance(
                std::slice::from_ref(&predicted),
                std::slice::from_ref(&trace),
                &mask,
            )?;
        }

        let ranked = self.rematch()?;
        out.top = ranked.first().cloned();

        match self.mode.clone() {
            Mode::Idle => self.leave_idle(&ranked, th, now)?,
            Mode::Replaying { .. } => {
                if out.prediction_error > th.err {
                    self.err_streak += 1;
                } else {
                    self.err_streak = 0;
                }
                if self.err_streak >= th.err_ticks {
                    out.aborted = Some(out.prediction_error);
                    self.err_streak = 0;
                    self.switch_candidate(0, th, now)?;
                }
            }
            Mode::Cycling {
                cycle, ticks_left, ..
            } => {
                if ticks_left == 0 {
                    self.switch_candidate(cycle + 1, th, now)?;
                }
            }
        }

        let mut completed = None;
        if let Some(record) = self.mode.record() {
            let offset = match &self.mode {
                Mode::Replaying { offset, .. } | Mode::Cycling { offset, .. } => *offset,
                Mode::Idle => unreachable!(),
            };
            let replayed = self.bank.replay_step(record, offset)?.clone();
            let mask = self.bank.get(record)?.trajectory.mask().clone();
            let tau = self.bank.get(record)?.trajectory.tau();
            out.expectations_down = self.expectations_from(&replayed, &mask, state, intero_in, now);
            out.replayed = Some(record);
            self.pending = Some((replayed, mask));
            match &mut self.mode {
                Mode::Replaying { offset, .. } => {
                    *offset += 1;
                    if *offset >= tau {
                        completed = Some(record);
                        self.mode = Mode::Idle;
                    }
                }
                Mode::Cycling {
                    offset, ticks_left, ..
                } => {
                    *offset += 1;
                    *ticks_left -= 1;
                    if *offset >= tau {
                        *ticks_left = 0;
                    }
                }
                Mode::Idle => {}
            }
        }

        self.manage_goals(out.top.as_ref(), completed, now, th, &mut out.goal_events)?;

        if self.switches.learning {
            out.imprinted = self.learn(out.replayed, now, th)?;
            if let Some(gone) = self.evicted_goal.take() {
                out.goal_events.push(GoalEvent::Expired(gone));
            }
        }
        out.intero_up = self.intero_up();
        Ok(out)
    }

    /// Goal lifecycle: a confident recall that is being replayed becomes a
    /// goal; the goal holds a standing boost until its replay completes or
    /// its ttl runs out.
    pub fn manage_goals(
        &mut self,
        top: Option<&MatchResult>,
        completed: Option<u64>,
        now: Tick,
        th: &Thresholds,
        events: &mut Vec<GoalEvent>,
    ) -> Result<()> {
        if let Some(goal) = &self.active_goal {
            let id = goal.record;
            if completed == Some(id) {
                events.push(GoalEvent::Completed(id));
                self.active_goal = None;
            } else if now >= goal.instantiated_tick + goal.ttl {
                events.push(GoalEvent::Expired(id));
                self.active_goal = None;
            }
        } else if let (Some(top), Mode::Replaying { record, .. }) = (top, &self.mode) {
            let margin = top.margin.unwrap_or(0.0);
            if top.record_id == *record && margin >= th.goal {
                let tau = self.bank.get(*record)?.trajectory.tau();
                if tau > self.replay_t {
                    self.active_goal = Some(GoalInstance {
                        record: *record,
                        instantiated_tick: now,
                        ttl: 2 * tau as u64,
                        confidence: margin,
                    });
                    events.push(GoalEvent::Started(*record));
                }
            }
        }
        match &self.active_goal {
            Some(goal) if self.switches.plasticity => {
                self.bank.boost(goal.record, th.goal_boost)?;
            }
            Some(_) => {}
            None => {
                if !matches!(self.mode, Mode::Cycling { .. }) {
                    self.bank.decay_boosts();
                }
            }
        }
        Ok(())
    }

    /// Imprints the trailing window when it was homeostatically useful and
    /// is not a near-copy of something already stored. The window inherits
    /// the partial-state mask of the memory that was driving replay.
    fn learn(&mut self, driving: Option<u64>, now: Tick, th: &Thresholds) -> Result<Option<u64>> {
        let Some(driving) = driving else { return Ok(None) };
        if self.history.len() < self.tau || self.samples.len() < self.tau {
            return Ok(None);
        }
        let samples: Vec<Vec<HVarSample>> = self.samples.iter().cloned().collect();
        let priorities: Vec<f64> = self.hvars.iter().map(|h| h.priority).collect();
        let utility = trajectory_utility(&samples, &priorities);
        if !(utility > 0.0) {
            return Ok(None);
        }
        let mask = self.bank.get(driving)?.trajectory.mask().clone();
        let window = self.history.clone();
        for rec in self.bank.records() {
            let stored = rec.trajectory.traces();
            let len = stored.len().min(window.len());
            if masked_distance(&window[..len], &stored[..len], &mask)? <= th.novelty_floor {
                return Ok(None);
            }
        }
        let source = now + 1 - self.tau as u64;
        let trajectory = window_to_trajectory(&window, mask, source)?;
        self.imprint_labeled("learned", trajectory, utility, now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::window_to_trajectory;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    fn temp(current: f64) -> HVar {
        HVar::new("temp", current, 37.0, 1.0, 1.0, true).unwrap()
    }

    fn shift(delta: f64, horizon: u64, issued_tick: Tick) -> Expectation {
        Expectation {
            hvar: "s.temp".into(),
            delta,
            horizon,
            issued_tick,
        }
    }

    fn leaf(hvars: Vec<HVar>, params: (f64, usize, usize)) -> Subsystem {
        Subsystem::new("s", 0, params, hvars, vec![], vec![], MemoryBank::new(16).unwrap(), (4.0, 4.0))
            .unwrap()
    }

    fn signal(v: &[f64]) -> Signal {
        Signal::new(v.to_vec()).unwrap()
    }

    /// `n` traces of `sig` folded from scratch with `delta`.
    fn steady(sig: &Signal, delta: f64, n: usize) -> Vec<TemporalTrace> {
        let mut t = TemporalTrace::from_signal(sig, delta).unwrap();
        let mut out = vec![t.clone()];
        while out.len() < n {
            t = trace_update(&t, sig, delta).unwrap();
            out.push(t.clone());
        }
        out
    }

    #[test]
    fn valence_examples() {
        assert_eq!(valence(3.0, 3.0, -4.0), 0.0);
        assert_eq!(valence(5.0, 3.0, 0.0), 2.0);
        assert!(close(valence(36.5, 36.0, 37.0), -0.5));
    }

    #[test]
    fn drive_examples() {
        assert_eq!(drive(&temp(37.0)), 0.0);
        assert_eq!(drive(&temp(35.0)), 2.0);
        let wide = HVar::new("temp", 35.0, 37.0, 2.0, 1.0, false).unwrap();
        assert_eq!(drive(&wide), 1.0);
        assert!(HVar::new("x", 0.0, 0.0, 0.0, 1.0, false).is_err());
        assert!(HVar::new("x", 0.0, 0.0, 1.0, -1.0, false).is_err());
    }

    #[test]
    fn expectations_shift_and_restore_target() {
        let mut s = leaf(vec![temp(37.0)], (0.9, 6, 3));
        assert_eq!(s.hvar("temp").unwrap().target_eff(), 37.0);
        s.apply_expectation(shift(1.5, 200, 500), 500).unwrap();
        assert!(close(s.hvar("temp").unwrap().target_eff(), 38.5));

        let mut s = leaf(vec![temp(37.0)], (0.9, 6, 3));
        s.apply_expectation(shift(1.0, 5, 0), 0).unwrap();
        s.apply_expectation(shift(-0.5, 3, 0), 0).unwrap();
        assert!(close(s.hvar("temp").unwrap().target_eff(), 37.5));
        s.expire(2);
        assert_eq!(s.hvar("temp").unwrap().active_expectations().len(), 2);
        s.expire(3);
        assert!(close(s.hvar("temp").unwrap().target_eff(), 38.0));
        s.expire(5);
        assert_eq!(s.hvar("temp").unwrap().target_eff(), 37.0);
    }

    #[test]
    fn expectation_for_unknown_hvar_is_a_routing_error() {
        let mut s = leaf(vec![temp(37.0)], (0.9, 6, 3));
        let mut e = shift(1.0, 3, 0);
        e.hvar = "s.pressure".into();
        assert!(matches!(s.apply_expectation(e, 0), Err(Error::Routing(_))));
    }

    #[test]
    fn assemble_state_layout() {
        let own = vec![temp(35.0), HVar::new("energy", 80.0, 80.0, 20.0, 1.0, false).unwrap()];
        let s = Subsystem::new(
            "body",
            1,
            (0.45, 12, 6),
            own,
            vec![("motor".into(), vec!["thermo".into()])],
            vec!["light".into()],
            MemoryBank::new(4).unwrap(),
            (4.0, 4.0),
        )
        .unwrap();
        let child = InteroSignal {
            subsystem: "motor".into(),
            hvar: "thermo".into(),
            drive: 2.0,
            valence: 0.0,
            privileged: false,
            band: 1.0,
            direction: 1.0,
        };
        let extero = BTreeMap::from([("light".to_string(), 0.25)]);
        let st = s.assemble_state(&[child], &BTreeMap::new(), &extero).unwrap();
        assert_eq!(st.values(), &[2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.25]);
        // a silent child reads as zero
        let quiet = s.assemble_state(&[], &BTreeMap::new(), &extero).unwrap();
        assert_eq!(quiet.values()[4], 0.0);
        assert_eq!(st, s.assemble_state(&[child_again()], &BTreeMap::new(), &extero).unwrap());

        let stray = BTreeMap::from([("sound".to_string(), 1.0)]);
        assert!(matches!(s.assemble_state(&[], &BTreeMap::new(), &stray), Err(Error::Config(_))));
    }

    fn child_again() -> InteroSignal {
        InteroSignal {
            subsystem: "motor".into(),
            hvar: "thermo".into(),
            drive: 2.0,
            valence: 0.0,
            privileged: false,
            band: 1.0,
            direction: 1.0,
        }
    }

    #[test]
    fn own_hvars_only() {
        let mut s = leaf(vec![temp(36.0)], (0.9, 6, 3));
        let st = s.assemble_state(&[], &BTreeMap::new(), &BTreeMap::new()).unwrap();
        assert_eq!(st.values(), &[1.0, 0.0]);
        s.hvar_mut("temp").unwrap().set_current(35.5);
        let st = s.assemble_state(&[], &BTreeMap::new(), &BTreeMap::new()).unwrap();
        assert_eq!(st.values(), &[1.5, -0.5]);
    }

    #[test]
    fn empty_bank_stays_idle() {
        let mut s = leaf(vec![temp(35.0)], (0.9, 6, 3));
        let out = s.step(&signal(&[2.0, 0.0]), &[], 0, &Thresholds::default()).unwrap();
        assert_eq!(s.mode(), &Mode::Idle);
        assert!(out.expectations_down.is_empty());
        assert_eq!(out.intero_up.len(), 1);
        assert_eq!(out.intero_up[0].drive, 2.0);
    }

    #[test]
    fn exact_single_record_replays_at_once() {
        let mut s = leaf(vec![temp(35.0)], (0.9, 6, 3));
        let sig = signal(&[2.0, 0.0]);
        let traj = window_to_trajectory(&steady(&sig, 0.9, 6), StateMask::full(2), 0).unwrap();
        let id = s.imprint_labeled("warm", traj, 4.0, 0).unwrap().unwrap();
        let out = s.step(&sig, &[], 0, &Thresholds::default()).unwrap();
        assert_eq!(out.replayed, Some(id));
        assert_eq!(s.mode(), &Mode::Replaying { record: id, offset: 2 });
        assert_eq!(out.expectations_down.len(), 1);
    }

    #[test]
    fn tied_records_resolve_to_lower_id() {
        let sig = signal(&[2.0, 0.0]);
        let run = || {
            let mut s = leaf(vec![temp(35.0)], (0.9, 6, 3));
            let traj = window_to_trajectory(&steady(&sig, 0.9, 6), StateMask::full(2), 0).unwrap();
            s.imprint_labeled("a", traj.clone(), 4.0, 0).unwrap();
            s.imprint_labeled("b", traj, 4.0, 0).unwrap();
            let mut modes = Vec::new();
            for now in 0..4 {
                s.step(&sig, &[], now, &Thresholds::default()).unwrap();
                modes.push(s.mode().clone());
            }
            modes
        };
        let modes = run();
        assert!(matches!(modes[0], Mode::Replaying { record: 0, .. }));
        assert_eq!(modes, run());
    }

    #[test]
    fn select_winner_on_a_tie() {
        let sig = signal(&[1.0]);
        let traj = window_to_trajectory(&steady(&sig, 0.5, 4), StateMask::full(1), 0).unwrap();
        let mut bank = MemoryBank::new(4).unwrap();
        bank.imprint(traj.clone(), 4.0, 0).unwrap();
        bank.imprint(traj, 4.0, 0).unwrap();
        let history = steady(&sig, 0.5, 2);
        let q = MatchQuery::new(&history, 2).unwrap();
        let sel = select_winner(&mut bank, &q, &Thresholds::default()).unwrap();
        assert_eq!(sel.winner, Some(0));
        assert_eq!(sel.cycles, 0);
    }

    #[test]
    fn utility_examples() {
        let at = |v: f64| vec![HVarSample { current: v, target: 0.0 }];
        assert_eq!(trajectory_utility(&[at(5.0), at(3.0), at(1.0)], &[1.0]), 4.0);
        assert_eq!(trajectory_utility(&[at(2.0), at(2.0), at(2.0)], &[1.0]), 0.0);
        assert_eq!(trajectory_utility(&[at(1.0), at(3.0), at(5.0)], &[1.0]), -4.0);
        assert_eq!(trajectory_utility(&[at(5.0), at(3.0)], &[3.0]), 6.0);
    }

    #[test]
    fn ignore_cost_examples() {
        let hot = InteroSignal {
            subsystem: "body".into(),
            hvar: "core_temp".into(),
            drive: 2.0,
            valence: 0.0,
            privileged: true,
            band: 1.0,
            direction: 1.0,
        };
        assert_eq!(ignore_cost(&[], &[], 0.05), 0.0);
        assert!(close(ignore_cost(std::slice::from_ref(&hot), &[], 0.05), 0.05));
        let addressed = Expectation {
            hvar: "body.core_temp".into(),
            delta: 0.0,
            horizon: 1,
            issued_tick: 0,
        };
        assert_eq!(ignore_cost(std::slice::from_ref(&hot), &[addressed], 0.05), 0.0);
        let plain = InteroSignal {
            privileged: false,
            ..hot
        };
        assert_eq!(ignore_cost(&[plain], &[], 0.05), 0.0);
    }

    #[test]
    fn goal_completes_with_its_replay() {
        let mut s = leaf(vec![temp(35.0)], (0.9, 6, 3));
        s.set_switches(Switches {
            learning: false,
            plasticity: true,
        });
        let sig = signal(&[2.0, 0.0]);
        let traj = window_to_trajectory(&steady(&sig, 0.9, 6), StateMask::full(2), 0).unwrap();
        s.imprint_labeled("warm", traj, 4.0, 0).unwrap();
        let th = Thresholds::default();
        let mut events = Vec::new();
        for now in 0..8 {
            let out = s.step(&sig, &[], now, &th).unwrap();
            events.extend(out.goal_events.iter().map(|e| (now, *e)));
        }
        assert_eq!(events[0], (0, GoalEvent::Started(0)));
        // replay starts at offset 1 and runs to tau = 6
        assert_eq!(events[1], (4, GoalEvent::Completed(0)));
    }

    #[test]
    fn goal_expires_at_ttl() {
        let mut s = leaf(vec![temp(35.0)], (0.5, 12, 3));
        s.set_switches(Switches {
            learning: false,
            plasticity: true,
        });
        let sig = signal(&[2.0, 0.0]);
        let traj = window_to_trajectory(&steady(&sig, 0.5, 12), StateMask::full(2), 0).unwrap();
        s.imprint_labeled("warm", traj, 4.0, 0).unwrap();
        let th = Thresholds::default();
        s.step(&sig, &[], 0, &th).unwrap();
        let goal = s.active_goal().cloned().unwrap();
        assert_eq!(goal.ttl, 24);
        // a world that never matches the replay keeps aborting it, so the
        // goal can only end by running out of time
        let mut ended = None;
        for now in 1..40 {
            let off = signal(if now % 2 == 0 { &[4.0, 4.0] } else { &[0.0, -4.0] });
            let out = s.step(&off, &[], now, &th).unwrap();
            if let Some(e) = out.goal_events.iter().find(|e| !matches!(e, GoalEvent::Started(_))) {
                ended = Some((now, *e));
                break;
            }
        }
        assert_eq!(ended, Some((24, GoalEvent::Expired(0))));
    }

    #[test]
    fn unreachable_goal_margin_means_no_goal() {
        let mut s = leaf(vec![temp(35.0)], (0.9, 6, 3));
        let sig = signal(&[2.0, 0.0]);
        let traj = window_to_trajectory(&steady(&sig, 0.9, 6), StateMask::full(2), 0).unwrap();
        s.imprint_labeled("warm", traj, 4.0, 0).unwrap();
        let th = Thresholds {
            goal: 10.0,
            ..Thresholds::default()
        };
        let out = s.step(&sig, &[], 0, &th).unwrap();
        assert!(out.goal_events.is_empty());
        assert!(s.active_goal().is_none());
    }

    #[test]
    fn persistent_error_aborts_replay() {
        let mut s = leaf(vec![temp(35.0)], (0.9, 6, 3));
        s.set_switches(Switches {
            learning: false,
            plasticity: true,
        });
        let sig = signal(&[2.0, 0.0]);
        let traj = window_to_trajectory(&steady(&sig, 0.9, 6), StateMask::full(2), 0).unwrap();
        s.imprint_labeled("warm", traj, 4.0, 0).unwrap();
        let th = Thresholds::default();
        s.step(&sig, &[], 0, &th).unwrap();
        let far = signal(&[-4.0, 4.0]);
        let aborts: Vec<_> = (1..4).map(|now| s.step(&far, &[], now, &th).unwrap().aborted).collect();
        assert_eq!(aborts[..2], [None, None]);
        assert!(aborts[2].is_some_and(|e| e > th.err));
    }

    #[test]
    fn step_is_deterministic() {
        let build = || {
            let mut s = leaf(vec![temp(35.0)], (0.9, 6, 3));
            let traj =
                window_to_trajectory(&steady(&signal(&[1.0, 0.5]), 0.9, 6), StateMask::full(2), 0).unwrap();
            s.imprint_labeled("x", traj, 2.0, 0).unwrap();
            s
        };
        let (mut a, mut b) = (build(), build());
        for now in 0..20 {
            let sig = signal(&[(now % 5) as f64 * 0.5, -0.25]);
            let th = Thresholds::default();
            assert_eq!(a.step(&sig, &[], now, &th).unwrap(), b.step(&sig, &[], now, &th).unwrap());
        }
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_state_width_is_structural() {
        let mut s = leaf(vec![temp(35.0)], (0.9, 6, 3));
        let r = s.step(&signal(&[1.0]), &[], 0, &Thresholds::default());
        assert!(matches!(r, Err(Error::Structural(_))));
    }
}
