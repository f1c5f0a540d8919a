//! Desk-scale survival world: a grid with an ambient temperature field,
//! food cells and pursuing threats, plus the agent's body (core
//! temperature, energy, integrity).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::Tick;

pub const CORE_TEMP_RANGE: (f64, f64) = (20.0, 45.0);
pub const ENERGY_RANGE: (f64, f64) = (0.0, 100.0);
pub const INTEGRITY_RANGE: (f64, f64) = (0.0, 100.0);
pub const AMBIENT_RANGE: (f64, f64) = (-30.0, 60.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub width: i64,
    pub height: i64,
    /// Ambient temperature at cell (x, y) is
    /// `ambient_base + ambient_grad_x * x + ambient_grad_y * y`.
    pub ambient_base: f64,
    pub ambient_grad_x: f64,
    pub ambient_grad_y: f64,
    pub start: [i64; 2],
    /// Start position is shifted by a uniform draw in `[-j, j]` per axis.
    pub start_jitter: i64,
    pub core_temp: f64,
    pub energy: f64,
    pub integrity: f64,
    pub food: Vec<[i64; 2]>,
    pub alpha: f64,
    pub basal: f64,
    pub cost_move: f64,
    pub cost_escape: f64,
    pub cost_eat: f64,
    pub eat_gain: f64,
    pub shiver_heat: f64,
    pub shiver_below: f64,
    pub damage: f64,
    pub escape_cells: i64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            width: 16,
            height: 16,
            ambient_base: 37.0,
            ambient_grad_x: 0.0,
            ambient_grad_y: 0.0,
            start: [8, 8],
            start_jitter: 0,
            core_temp: 37.0,
            energy: 80.0,
            integrity: 100.0,
            food: Vec::new(),
            alpha: 0.1,
            basal: 0.05,
            cost_move: 0.1,
            cost_escape: 0.5,
            cost_eat: 0.02,
            eat_gain: 10.0,
            shiver_heat: 0.2,
            shiver_below: 36.0,
            damage: 20.0,
            escape_cells: 3,
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<()> {
        if self.width <= 0 || self.height <= 0 {
            return Err(Error::Config("world.width and world.height must be positive".into()));
        }
        let inside = |p: [i64; 2]| p[0] >= 0 && p[1] >= 0 && p[0] < self.width && p[1] < self.height;
        if !inside(self.start) {
            return Err(Error::Config("world.start lies outside the grid".into()));
        }
        if let Some(f) = self.food.iter().find(|p| !inside(**p)) {
            return Err(Error::Config(format!("world.food {f:?} lies outside the grid")));
        }
        if self.start_jitter < 0 || self.escape_cells < 0 {
            return Err(Error::Config("world.start_jitter and escape_cells must be >= 0".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config("world.alpha must lie in [0, 1]".into()));
        }
        for (key, v) in [
            ("basal", self.basal),
            ("cost_move", self.cost_move),
            ("cost_escape", self.cost_escape),
            ("cost_eat", self.cost_eat),
            ("eat_gain", self.eat_gain),
            ("shiver_heat", self.shiver_heat),
            ("damage", self.damage),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("world.{key} must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn action_cost(&self, action: Action) -> f64 {
        match action {
            Action::Stay => 0.0,
            Action::Move(_) => self.cost_move,
            Action::Eat => self.cost_eat,
            Action::EscapeDash => self.cost_escape,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dir {
    N,
    S,
    E,
    W,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::N, Dir::S, Dir::E, Dir::W];

    pub fn offset(self) -> (i64, i64) {
        match self {
            Dir::N => (0, -1),
            Dir::S => (0, 1),
            Dir::E => (1, 0),
            Dir::W => (-1, 0),
        }
    }

    /// Single-axis step toward `(dx, dy)`, larger axis first, x on ties.
    pub fn toward(dx: i64, dy: i64) -> Option<Dir> {
        if dx == 0 && dy == 0 {
            None
        } else if dx.abs() >= dy.abs() {
            Some(if dx > 0 { Dir::E } else { Dir::W })
        } else {
            Some(if dy > 0 { Dir::S } else { Dir::N })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Stay,
    Move(Dir),
    Eat,
    EscapeDash,
}

impl Action {
    pub fn label(&self) -> &'static str {
        match self {
            Action::Stay => "stay",
            Action::Move(Dir::N) => "move_n",
            Action::Move(Dir::S) => "move_s",
            Action::Move(Dir::E) => "move_e",
            Action::Move(Dir::W) => "move_w",
            Action::Eat => "eat",
            Action::EscapeDash => "escape",
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        Some(match label {
            "stay" => Action::Stay,
            "move_n" => Action::Move(Dir::N),
            "move_s" => Action::Move(Dir::S),
            "move_e" => Action::Move(Dir::E),
            "move_w" => Action::Move(Dir::W),
            "eat" => Action::Eat,
            "escape" => Action::EscapeDash,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub ambient: f64,
    pub food: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub x: i64,
    pub y: i64,
    pub core_temp: f64,
    pub energy: f64,
    pub integrity: f64,
    /// Ticks since the last successful meal.
    pub fasted_ticks: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Threat {
    pub x: i64,
    pub y: i64,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub width: i64,
    pub height: i64,
    pub cells: Vec<Cell>,
    pub agent: Body,
    pub threats: Vec<Threat>,
    pub tick: Tick,
    /// Looming of the nearest threat as seen on the previous tick.
    pub last_looming: f64,
}

/// Exteroceptive reading plus the local context motor translation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub ambient: f64,
    pub food_here: bool,
    pub looming: f64,
    pub looming_rate: f64,
    /// Ambient temperature of the N, S, E, W neighbours (None at walls).
    pub neighbors: [Option<f64>; 4],
    /// Offset to the nearest food cell (Manhattan, then x, then y).
    pub food_offset: Option<(i64, i64)>,
    pub threat_offset: Option<(i64, i64)>,
}

/// Energy terms of one tick; `after` is the clamped sum of the rest.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyLedger {
    pub before: f64,
    pub basal: f64,
    pub action_cost: f64,
    pub ignore_cost: f64,
    pub intake: f64,
    pub after: f64,
}

impl EnergyLedger {
    pub fn expected_after(&self) -> f64 {
        (self.before - self.basal - self.action_cost - self.ignore_cost + self.intake)
            .clamp(ENERGY_RANGE.0, ENERGY_RANGE.1)
    }
}

fn clamp(v: f64, range: (f64, f64)) -> f64 {
    v.clamp(range.0, range.1)
}

impl WorldState {
    pub fn new(params: &WorldParams, rng: &mut impl Rng) -> Result<Self> {
        params.validate()?;
        let mut cells = Vec::with_capacity((params.width * params.height) as usize);
        for y in 0..params.height {
            for x in 0..params.width {
                let ambient = params.ambient_base
                    + params.ambient_grad_x * x as f64
                    + params.ambient_grad_y * y as f64;
                cells.push(Cell {
                    ambient: clamp(ambient, AMBIENT_RANGE),
                    food: false,
                });
            }
        }
        let mut state = Self {
            width: params.width,
            height: params.height,
            cells,
            agent: Body {
                x: params.start[0],
                y: params.start[1],
                core_temp: clamp(params.core_temp, CORE_TEMP_RANGE),
                energy: clamp(params.energy, ENERGY_RANGE),
                integrity: clamp(params.integrity, INTEGRITY_RANGE),
                fasted_ticks: 0,
            },
            threats: Vec::new(),
            tick: 0,
            last_looming: 0.0,
        };
        if params.start_jitter > 0 {
            let j = params.start_jitter;
            let (x, y) = state.clamp_pos(
                params.start[0] + rng.gen_range(-j..=j),
                params.start[1] + rng.gen_range(-j..=j),
            );
            state.agent.x = x;
            state.agent.y = y;
        }
        for f in &params.food {
            state.cell_mut(f[0], f[1]).food = true;
        }
        Ok(state)
    }

    pub fn alive(&self) -> bool {
        self.agent.integrity > 0.0
    }

    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width && y < self.height
    }

    fn clamp_pos(&self, x: i64, y: i64) -> (i64, i64) {
        (x.clamp(0, self.width - 1), y.clamp(0, self.height - 1))
    }

    pub fn cell(&self, x: i64, y: i64) -> &Cell {
        &self.cells[(y * self.width + x) as usize]
    }

    fn cell_mut(&mut self, x: i64, y: i64) -> &mut Cell {
        &mut self.cells[(y * self.width + x) as usize]
    }

    fn nearest_threat(&self) -> Option<(&Threat, f64)> {
        let (ax, ay) = (self.agent.x, self.agent.y);
        self.threats
            .iter()
            .map(|t| {
                let d = (((t.x - ax).pow(2) + (t.y - ay).pow(2)) as f64).sqrt();
                (t, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// `size / d^2` for the nearest threat, with d floored at one cell.
    pub fn looming(&self) -> f64 {
        self.nearest_threat()
            .map_or(0.0, |(t, d)| t.size / d.max(1.0).powi(2))
    }
}

pub fn observe(state: &WorldState) -> Observation {
    let (ax, ay) = (state.agent.x, state.agent.y);
    let here = state.cell(ax, ay);
    let looming = state.looming();
    let neighbors = Dir::ALL.map(|d| {
        let (dx, dy) = d.offset();
        state
            .in_bounds(ax + dx, ay + dy)
            .then(|| state.cell(ax + dx, ay + dy).ambient)
    });
    let mut food_offset: Option<(i64, i64)> = None;
    for y in 0..state.height {
        for x in 0..state.width {
            if !state.cell(x, y).food {
                continue;
            }
            let off = (x - ax, y - ay);
            let key = |o: (i64, i64)| (o.0.abs() + o.1.abs(), o.0 + ax, o.1 + ay);
            if food_offset.is_none_or(|best| key(off) < key(best)) {
                food_offset = Some(off);
            }
        }
    }
    Observation {
        ambient: here.ambient,
        food_here: here.food,
        looming,
        looming_rate: looming - state.last_looming,
        neighbors,
        food_offset,
        threat_offset: state.nearest_threat().map(|(t, _)| (t.x - ax, t.y - ay)),
    }
}

/// Advances the world one tick under `action`. `ignore_cost` is the
/// metabolic charge the agent's controllers incurred this tick and is
/// debited from energy together with basal and action costs.
pub fn world_step(
    state: &WorldState,
    action: Action,
    ignore_cost: f64,
    params: &WorldParams,
) -> (WorldState, EnergyLedger) {
    let mut next = state.clone();
    next.last_looming = state.looming();
    let body = &state.agent;
    let ambient = state.cell(body.x, body.y).ambient;

    let shiver = if action == Action::Stay && body.core_temp < params.shiver_below {
        params.shiver_heat
    } else {
        0.0
    };
    next.agent.core_temp = clamp(
        body.core_temp + params.alpha * (ambient - body.core_temp) + shiver,
        CORE_TEMP_RANGE,
    );

    let mut intake = 0.0;
    next.agent.fasted_ticks = body.fasted_ticks + 1;
    match action {
        Action::Stay => {}
        Action::Move(dir) => {
            let (dx, dy) = dir.offset();
            let (x, y) = next.clamp_pos(body.x + dx, body.y + dy);
            next.agent.x = x;
            next.agent.y = y;
        }
        Action::Eat => {
            if state.cell(body.x, body.y).food {
                next.cell_mut(body.x, body.y).food = false;
                intake = params.eat_gain;
                next.agent.fasted_ticks = 0;
            }
        }
        Action::EscapeDash => {
            if let Some((t, _)) = state.nearest_threat() {
                let (tx, ty) = (t.x, t.y);
                for _ in 0..params.escape_cells {
                    let (ax, ay) = (next.agent.x, next.agent.y);
                    let (dx, dy) = (ax - tx, ay - ty);
                    let sx = if dx >= 0 { 1 } else { -1 };
                    let sy = if dy >= 0 { 1 } else { -1 };
                    let mut steps = if dx.abs() >= dy.abs() {
                        [(sx, 0), (0, sy)]
                    } else {
                        [(0, sy), (sx, 0)]
                    };
                    if dx == 0 && dy == 0 {
                        steps = [(1, 0), (0, 1)];
                    }
                    if let Some(&(mx, my)) =
                        steps.iter().find(|(mx, my)| next.in_bounds(ax + mx, ay + my))
                    {
                        next.agent.x = ax + mx;
                        next.agent.y = ay + my;
                    }
                }
            }
        }
    }

    let ledger = EnergyLedger {
        before: body.energy,
        basal: params.basal,
        action_cost: params.action_cost(action),
        ignore_cost,
        intake,
        after: 0.0,
    };
    next.agent.energy = ledger.expected_after();
    let ledger = EnergyLedger {
        after: next.agent.energy,
        ..ledger
    };

    // threats pursue, then strike once on contact
    let (ax, ay) = (next.agent.x, next.agent.y);
    let mut struck = 0;
    next.threats.retain_mut(|t| {
        if let Some(d) = Dir::toward(ax - t.x, ay - t.y) {
            let (dx, dy) = d.offset();
            t.x += dx;
            t.y += dy;
        }
        if t.x == ax && t.y == ay {
            struck += 1;
            false
        } else {
            true
        }
    });
    next.agent.integrity = clamp(
        next.agent.integrity - params.damage * struck as f64,
        INTEGRITY_RANGE,
    );
    next.tick = state.tick + 1;
    (next, ledger)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Region {
    Named(String),
    Rect { x0: i64, y0: i64, x1: i64, y1: i64 },
}

impl Region {
    fn contains(&self, x: i64, y: i64) -> bool {
        match self {
            Region::Named(_) => true,
            Region::Rect { x0, y0, x1, y1 } => x >= *x0 && x <= *x1 && y >= *y0 && y <= *y1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    /// Raises the temperature hvar's setpoint by `delta` for `duration` ticks.
    PyrogenOn { tick: Tick, delta: f64, duration: u64 },
    /// Adds `temp_drop` (usually negative) to the ambient of every cell in
    /// `region` ("all" or a rectangle).
    ColdSnap { tick: Tick, temp_drop: f64, region: Region },
    /// Places a threat; `jitter` shifts it by a uniform draw in `[-j, j]`
    /// per axis from the world stream.
    SpawnThreat {
        tick: Tick,
        position: [i64; 2],
        size: f64,
        #[serde(default)]
        jitter: i64,
    },
    PlaceFood { tick: Tick, position: [i64; 2] },
}

impl Event {
    pub fn tick(&self) -> Tick {
        match self {
            Event::PyrogenOn { tick, .. }
            | Event::ColdSnap { tick, .. }
            | Event::SpawnThreat { tick, .. }
            | Event::PlaceFood { tick, .. } => *tick,
        }
    }
}

/// A setpoint shift for the agent's temperature hvar caused by a world event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Injection {
    pub delta: f64,
    pub duration: u64,
}

pub fn validate_schedule(events: &[Event], params: &WorldParams) -> Result<()> {
    if events.windows(2).any(|w| w[0].tick() > w[1].tick()) {
        return Err(Error::Config("events must be sorted by tick".into()));
    }
    for e in events {
        match e {
            Event::PyrogenOn { duration, .. } if *duration == 0 => {
                return Err(Error::Config("events: pyrogen duration must be positive".into()))
            }
            Event::ColdSnap {
                region: Region::Named(n),
                ..
            } if n != "all" => {
                return Err(Error::Config(format!("events: unknown region {n:?}")))
            }
            Event::SpawnThreat { position, size, jitter, .. } => {
                if !(*size > 0.0) || *jitter < 0 {
                    return Err(Error::Config("events: threat size must be positive".into()));
                }
                check_pos(*position, params)?;
            }
            Event::PlaceFood { position, .. } => check_pos(*position, params)?,
            _ => {}
        }
    }
    Ok(())
}

fn check_pos(p: [i64; 2], params: &WorldParams) -> Result<()> {
    if p[0] < 0 || p[1] < 0 || p[0] >= params.width || p[1] >= params.height {
        return Err(Error::Config(format!("events: position {p:?} outside the grid")));
    }
    Ok(())
}

/// Applies every event scheduled for `now`; returns setpoint injections.
pub fn apply_events(
    state: &mut WorldState,
    schedule: &[Event],
    now: Tick,
    rng: &mut impl Rng,
) -> Vec<Injection> {
    let mut injections = Vec::new();
    for event in schedule.iter().filter(|e| e.tick() == now) {
        match event {
            Event::PyrogenOn { delta, duration, .. } => injections.push(Injection {
                delta: *delta,
                duration: *duration,
            }),
            Event::ColdSnap {
                temp_drop, region, ..
            } => {
                for y in 0..state.height {
                    for x in 0..state.width {
                        if region.contains(x, y) {
                            let c = state.cell_mut(x, y);
                            c.ambient = clamp(c.ambient + temp_drop, AMBIENT_RANGE);
                        }
                    }
                }
            }
            Event::SpawnThreat {
                position,
                size,
                jitter,
                ..
            } => {
                let (mut x, mut y) = (position[0], position[1]);
                if *jitter > 0 {
                    x += rng.gen_range(-jitter..=*jitter);
                    y += rng.gen_range(-jitter..=*jitter);
                }
                let (x, y) = state.clamp_pos(x, y);
                state.threats.push(Threat { x, y, size: *size });
            }
            Event::PlaceFood { position, .. } => {
                state.cell_mut(position[0], position[1]).food = true;
            }
        }
    }
    injections
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world(params: &WorldParams) -> WorldState {
        WorldState::new(params, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn relaxation_fixed_point() {
        let p = WorldParams::default();
        let w = world(&p);
        let (next, _) = world_step(&w, Action::Stay, 0.0, &p);
        assert_eq!(next.agent.core_temp, 37.0);
    }

    #[test]
    fn cold_cell_with_shivering() {
        let p = WorldParams {
            ambient_base: 20.0,
            core_temp: 30.0,
            ..Default::default()
        };
        let (next, _) = world_step(&world(&p), Action::Stay, 0.0, &p);
        assert!((next.agent.core_temp - 29.2).abs() < 1e-9);
    }

    #[test]
    fn eating_on_food() {
        let p = WorldParams {
            energy: 50.0,
            food: vec![[8, 8]],
            ..Default::default()
        };
        let (next, ledger) = world_step(&world(&p), Action::Eat, 0.0, &p);
        assert!((next.agent.energy - 59.93).abs() < 1e-9);
        assert!(!next.cell(8, 8).food);
        assert_eq!(next.agent.fasted_ticks, 0);
        assert_eq!(ledger.after, ledger.expected_after());
    }

    #[test]
    fn looming_values() {
        let p = WorldParams::default();
        let mut w = world(&p);
        let o = observe(&w);
        assert_eq!((o.looming, o.looming_rate), (0.0, 0.0));
        w.threats.push(Threat { x: 11, y: 8, size: 4.0 });
        let (w, _) = world_step(&w, Action::Stay, 0.0, &p);
        let o = observe(&w);
        assert!((o.looming - 1.0).abs() < 1e-12);
        assert!((o.looming_rate - (1.0 - 4.0 / 9.0)).abs() < 1e-12);
        assert!((o.looming_rate - 0.556).abs() < 1e-3);
    }

    #[test]
    fn pyrogen_injection_on_its_tick() {
        let p = WorldParams::default();
        let mut w = world(&p);
        let sched = vec![Event::PyrogenOn {
            tick: 500,
            delta: 1.5,
            duration: 200,
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(apply_events(&mut w, &sched, 499, &mut rng).is_empty());
        let inj = apply_events(&mut w, &sched, 500, &mut rng);
        assert_eq!(inj, vec![Injection { delta: 1.5, duration: 200 }]);
        assert!(apply_events(&mut w, &[], 500, &mut rng).is_empty());
    }

    #[test]
    fn cold_snap_everywhere() {
        let p = WorldParams {
            ambient_base: 10.0,
            ambient_grad_x: 1.0,
            ..Default::default()
        };
        let mut w = world(&p);
        let before: Vec<f64> = w.cells.iter().map(|c| c.ambient).collect();
        let sched = vec![Event::ColdSnap {
            tick: 0,
            temp_drop: -10.0,
            region: Region::Named("all".into()),
        }];
        apply_events(&mut w, &sched, 0, &mut ChaCha8Rng::seed_from_u64(0));
        for (c, b) in w.cells.iter().zip(before) {
            assert!((c.ambient - (b - 10.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn unsorted_schedule_rejected() {
        let sched = vec![
            Event::PlaceFood { tick: 5, position: [0, 0] },
            Event::PlaceFood { tick: 2, position: [0, 0] },
        ];
        assert!(matches!(
            validate_schedule(&sched, &WorldParams::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn escape_moves_away() {
        let p = WorldParams::default();
        let mut w = world(&p);
        w.threats.push(Threat { x: 6, y: 8, size: 4.0 });
        let (next, ledger) = world_step(&w, Action::EscapeDash, 0.0, &p);
        assert_eq!((next.agent.x, next.agent.y), (11, 8));
        assert_eq!(ledger.action_cost, 0.5);
        // pinned against the east wall the dash slides along y
        let mut w = world(&p);
        w.agent.x = 15;
        w.threats.push(Threat { x: 13, y: 8, size: 4.0 });
        let (next, _) = world_step(&w, Action::EscapeDash, 0.0, &p);
        assert_eq!(next.agent.x, 15);
        assert_eq!(next.agent.y, 11);
    }

    #[test]
    fn threat_contact_damages() {
        let p = WorldParams::default();
        let mut w = world(&p);
        w.threats.push(Threat { x: 9, y: 8, size: 4.0 });
        let (next, _) = world_step(&w, Action::Stay, 0.0, &p);
        assert_eq!(next.agent.integrity, 80.0);
        assert!(next.threats.is_empty());
    }

    #[test]
    fn fuzz_clamps_and_pursuit() {
        let p = WorldParams {
            ambient_base: -30.0,
            ambient_grad_x: 6.0,
            food: vec![[1, 1], [2, 2]],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let actions = [
            Action::Stay,
            Action::Move(Dir::N),
            Action::Move(Dir::S),
            Action::Move(Dir::E),
            Action::Move(Dir::W),
            Action::Eat,
            Action::EscapeDash,
        ];
        let mut w = world(&p);
        for i in 0..100_000u64 {
            if i % 97 == 0 {
                let (x, y) = (rng.gen_range(0..16), rng.gen_range(0..16));
                w.threats.push(Threat { x, y, size: 3.0 });
                w.agent.integrity = 100.0;
            }
            let a = actions[rng.gen_range(0..actions.len())];
            let cost = rng.gen_range(0.0..2.0);
            let (next, ledger) = world_step(&w, a, cost, &p);
            let b = &next.agent;
            assert!(b.core_temp >= 20.0 && b.core_temp <= 45.0);
            assert!(b.energy >= 0.0 && b.energy <= 100.0);
            assert!(b.integrity >= 0.0 && b.integrity <= 100.0);
            assert!(next.in_bounds(b.x, b.y));
            assert_eq!(ledger.after, ledger.expected_after());
            if a == Action::Stay && !w.threats.is_empty() && next.threats.len() == w.threats.len() {
                let dist = |s: &WorldState| {
                    s.threats
                        .iter()
                        .map(|t| (t.x - s.agent.x).abs() + (t.y - s.agent.y).abs())
                        .collect::<Vec<_>>()
                };
                for (before, after) in dist(&w).iter().zip(dist(&next)) {
                    assert!(after <= *before);
                }
            }
            w = next;
        }
    }
}
