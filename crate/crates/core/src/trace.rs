//! Signals, temporal traces, partial-state masks and trace trajectories.
//!
//! A temporal trace is the motion-blurred version of a signal: an
//! exponentially decaying running summary `(1 - delta) * prev + delta * signal`.
//! Trajectories are fixed-length runs of traces together with a mask that
//! selects the partial state they describe.

use crate::error::{Error, Result};

/// Simulation clock.
pub type Tick = u64;

/// One instantaneous reading of a subsystem's features, in registry order.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    values: Vec<f64>,
}

impl Signal {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Structural(format!(
                "signal feature {i} is not finite"
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalTrace {
    values: Vec<f64>,
    delta: f64,
}

impl TemporalTrace {
    pub fn new(values: Vec<f64>, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Structural("trace values must be finite".into()));
        }
        Ok(Self { values, delta })
    }

    /// Starts a trace sequence at the signal itself.
    pub fn from_signal(signal: &Signal, delta: f64) -> Result<Self> {
        Self::new(signal.values.clone(), delta)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Per-feature weights in `[0, 1]` selecting the partial state a trajectory
/// describes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMask {
    weights: Vec<f64>,
}

impl StateMask {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Config("mask weights must lie in [0, 1]".into()));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::Config(
                "mask needs at least one positive weight".into(),
            ));
        }
        Ok(Self { weights })
    }

    pub fn full(dim: usize) -> Self {
        Self {
            weights: vec![1.0; dim],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceTrajectory {
    traces: Vec<TemporalTrace>,
    mask: StateMask,
    source_tick: Tick,
}

impl TraceTrajectory {
    pub fn traces(&self) -> &[TemporalTrace] {
        &self.traces
    }

    pub fn mask(&self) -> &StateMask {
        &self.mask
    }

    pub fn source_tick(&self) -> Tick {
        self.source_tick
    }

    pub fn tau(&self) -> usize {
        self.traces.len()
    }

    pub fn dim(&self) -> usize {
        self.mask.dim()
    }

    pub fn delta(&self) -> f64 {
        self.traces[0].delta
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("decay factor {delta} outside (0, 1]")))
    }
}

pub fn trace_update(prev: &TemporalTrace, signal: &Signal, delta: f64) -> Result<TemporalTrace> {
    check_delta(delta)?;
    if prev.dim() != signal.dim() {
        return Err(Error::Structural(format!(
            "trace has {} features, signal has {}",
            prev.dim(),
            signal.dim()
        )));
    }
    let values = prev
        .values
        .iter()
        .zip(&signal.values)
        .map(|(&m, &s)| (1.0 - delta) * m + delta * s)
        .collect();
    Ok(TemporalTrace { values, delta })
}

/// Length-normalised, mask-weighted RMS distance between two trace sequences.
pub fn masked_distance(a: &[TemporalTrace], b: &[TemporalTrace], mask: &StateMask) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::Structural(format!(
            "sequence lengths {} and {} (need equal and >= 1)",
            a.len(),
            b.len()
        )));
    }
    let total = mask.total();
    if total <= 0.0 {
        return Err(Error::Config("all-zero mask".into()));
    }
    let dim = mask.dim();
    let mut sum = 0.0;
    for (ta, tb) in a.iter().zip(b) {
        if ta.dim() != dim || tb.dim() != dim {
            return Err(Error::Structural(format!(
                "trace dimension {}/{} does not match mask dimension {dim}",
                ta.dim(),
                tb.dim()
            )));
        }
        for ((&w, &x), &y) in mask.weights.iter().zip(&ta.values).zip(&tb.values) {
            if w > 0.0 {
                let d = x - y;
                sum += w * d * d;
            }
        }
    }
    Ok((sum / (a.len() as f64 * total)).sqrt())
}

pub fn window_to_trajectory(
    window: &[TemporalTrace],
    mask: StateMask,
    source_tick: Tick,
) -> Result<TraceTrajectory> {
    if window.len() < 2 {
        return Err(Error::Structural(format!(
            "trajectory needs at least 2 traces, got {}",
            window.len()
        )));
    }
    let dim = window[0].dim();
    let delta = window[0].delta;
    if window.iter().any(|t| t.dim() != dim || t.delta != delta) {
        return Err(Error::Structural(
            "window traces differ in dimension or decay factor".into(),
        ));
    }
    if mask.dim() != dim {
        return Err(Error::Structural(format!(
            "mask dimension {} does not match trace dimension {dim}",
            mask.dim()
        )));
    }
    Ok(TraceTrajectory {
        traces: window.to_vec(),
        mask,
        source_tick,
    })
}

/// Smallest `n >= 1` with `(1 - delta)^n <= epsilon`.
pub fn effective_memory_horizon(delta: f64, epsilon: f64) -> Result<u32> {
    check_delta(delta)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!("epsilon {epsilon} outside (0, 1)")));
    }
    let keep = 1.0 - delta;
    if keep == 0.0 {
        return Ok(1);
    }
    // The closed form can land one off either way in floating point; settle
    // it against the exact power.
    let mut n = (epsilon.ln() / keep.ln()).ceil().max(1.0) as u32;
    while n > 1 && keep.powi(n as i32 - 1) <= epsilon {
        n -= 1;
    }
    while keep.powi(n as i32) > epsilon {
        n += 1;
    }
    Ok(n)
}
