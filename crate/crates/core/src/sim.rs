//! The run loop: events, sensing, one agent tick, one world step, one log
//! row, until the tick budget runs out or the agent dies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hierarchy::{AgentGraph, TickReport};
use crate::homeostat::GoalEvent;
use crate::scenario::ScenarioConfig;
use crate::trace::Tick;
use crate::world::{apply_events, observe, world_step, Action, EnergyLedger, WorldState};

/// Stream ids for the scenario seed; the world and the agent never share one.
pub const WORLD_STREAM: u64 = 1;
pub const AGENT_STREAM: u64 = 2;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemRow {
    pub mode: String,
    pub replay: Option<u64>,
    pub goal: Option<u64>,
    /// `;`-joined goal events of the tick, e.g. `start:3`.
    pub goal_event: String,
    pub prediction_error: f64,
    pub aborted: bool,
    pub imprinted: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HVarRow {
    pub current: f64,
    pub target: f64,
    pub drive: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub tick: Tick,
    pub action: Action,
    pub x: i64,
    pub y: i64,
    pub ambient: f64,
    pub food_here: bool,
    pub looming: f64,
    pub looming_rate: f64,
    pub ledger: EnergyLedger,
    pub core_temp_after: f64,
    pub integrity_after: f64,
    pub subsystems: Vec<SubsystemRow>,
    pub hvars: Vec<HVarRow>,
}

/// Column layout shared by every row of a log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogLayout {
    /// `(name, level)` in step order.
    pub subsystems: Vec<(String, u32)>,
    /// Qualified `sub.hvar` names in step order.
    pub hvars: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub layout: LogLayout,
    pub rows: Vec<LogRow>,
    /// Why the run stopped early, if it did.
    pub truncation: Option<String>,
}

impl RunLog {
    pub fn died(&self) -> bool {
        self.rows.last().is_some_and(|r| r.integrity_after <= 0.0)
    }

    pub fn hvar_index(&self, qualified: &str) -> Option<usize> {
        self.layout.hvars.iter().position(|h| h == qualified)
    }

    pub fn subsystem_index(&self, name: &str) -> Option<usize> {
        self.layout.subsystems.iter().position(|(s, _)| s == name)
    }
}

pub struct Simulation {
    config: ScenarioConfig,
    world: WorldState,
    agent: AgentGraph,
    world_rng: ChaCha8Rng,
    now: Tick,
    log: RunLog,
    finished: bool,
}

impl Simulation {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let mut world_rng = stream(config.seed, WORLD_STREAM);
        let world = WorldState::new(&config.world, &mut world_rng)?;
        let agent = AgentGraph::build(&config.agent, &config.thresholds, config.ablation_set())?;
        let layout = LogLayout {
            subsystems: agent.subsystems().map(|s| (s.name.clone(), s.level)).collect(),
            hvars: agent
                .subsystems()
                .flat_map(|s| s.hvars().iter().map(move |h| format!("{}.{}", s.name, h.name)))
                .collect(),
        };
        Ok(Self {
            config: config.clone(),
            world,
            agent,
            world_rng,
            now: 0,
            log: RunLog {
                layout,
                rows: Vec::new(),
                truncation: None,
            },
            finished: config.ticks == 0,
        })
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn agent(&self) -> &AgentGraph {
        &self.agent
    }

    pub fn agent_mut(&mut self) -> &mut AgentGraph {
        &mut self.agent
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    /// Advances one tick; returns the agent's report, or `None` once the
    /// run is over.
    pub fn step(&mut self) -> Result<Option<TickReport>> {
        if self.finished {
            return Ok(None);
        }
        let now = self.now;
        for inj in apply_events(&mut self.world, &self.config.events, now, &mut self.world_rng) {
            self.agent.inject(inj.delta, inj.duration, now)?;
        }
        self.agent.sense(&self.world.agent);
        let obs = observe(&self.world);
        let report = self.agent.tick(&obs, now)?;
        let (next, ledger) = world_step(&self.world, report.action, report.ignore_cost, &self.config.world);
        if ledger.after != ledger.expected_after() {
            return Err(Error::Integrity(format!(
                "tick {now}: energy ledger does not balance ({} vs {})",
                ledger.after,
                ledger.expected_after()
            )));
        }

        let subsystems = self
            .agent
            .subsystems()
            .zip(&report.outputs)
            .map(|(sub, (_, out))| SubsystemRow {
                mode: sub.mode().label().to_string(),
                replay: out.replayed,
                goal: sub.active_goal().map(|g| g.record),
                goal_event: out
                    .goal_events
                    .iter()
                    .map(GoalEvent::label)
                    .collect::<Vec<_>>()
                    .join(";"),
                prediction_error: out.prediction_error,
                aborted: out.aborted.is_some(),
                imprinted: out.imprinted,
            })
            .collect();
        let hvars = self
            .agent
            .subsystems()
            .flat_map(|s| s.hvars().iter())
            .map(|h| HVarRow {
                current: h.current,
                target: h.target_eff(),
                drive: h.drive(),
            })
            .collect();
        self.log.rows.push(LogRow {
            tick: now,
            action: report.action,
            x: self.world.agent.x,
            y: self.world.agent.y,
            ambient: obs.ambient,
            food_here: obs.food_here,
            looming: obs.looming,
            looming_rate: obs.looming_rate,
            ledger,
            core_temp_after: next.agent.core_temp,
            integrity_after: next.agent.integrity,
            subsystems,
            hvars,
        });

        self.world = next;
        self.now += 1;
        if !self.world.alive() {
            self.log.truncation = Some(format!("death at tick {now}"));
            self.finished = true;
        } else if self.now >= self.config.ticks as u64 {
            self.finished = true;
        }
        Ok(Some(report))
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        while self.step()?.is_some() {}
        Ok(())
    }

    pub fn into_log(self) -> RunLog {
        self.log
    }
}

pub fn run(config: &ScenarioConfig) -> Result<(RunLog, AgentGraph)> {
    let mut sim = Simulation::new(config)?;
    sim.run_to_end()?;
    Ok((sim.log, sim.agent))
}
