//! Autoassociative trajectory memory.
//!
//! Records are imprinted with a strength derived from how homeostatically
//! useful their trajectory was, recalled by prefix similarity, and replayed
//! trace by trace. A multiplicative short-term boost implements temporary
//! plasticity on top of the immutable base strength.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::trace::{masked_distance, StateMask, TemporalTrace, Tick, TraceTrajectory};
use crate::trace::window_to_trajectory;

pub const DEFAULT_BOOST_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryRecord {
    pub id: u64,
    pub trajectory: TraceTrajectory,
    pub base_strength: f64,
    pub boost: f64,
    pub imprint_tick: Tick,
    pub last_match_tick: Tick,
}

impl MemoryRecord {
    pub fn effective_strength(&self) -> f64 {
        self.base_strength * self.boost
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    records: Vec<MemoryRecord>,
    capacity: usize,
    next_id: u64,
    boost_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchQuery<'a> {
    history: &'a [TemporalTrace],
    prefix_len: usize,
}

impl<'a> MatchQuery<'a> {
    pub fn new(history: &'a [TemporalTrace], prefix_len: usize) -> Result<Self> {
        if history.is_empty() {
            return Err(Error::Query("empty history".into()));
        }
        if prefix_len == 0 || prefix_len > history.len() {
            return Err(Error::Query(format!(
                "prefix length {prefix_len} not in 1..={}",
                history.len()
            )));
        }
        Ok(Self {
            history,
            prefix_len,
        })
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub record_id: u64,
    pub score: f64,
    pub distance: f64,
    /// Top score minus runner-up score; only set on the head of a ranking.
    pub margin: Option<f64>,
}

/// Outcome of an imprint that made it into the bank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Imprinted {
    pub id: u64,
    pub evicted: Option<u64>,
}

/// `u / (1 + u)`, clamped into `(0, 1]`.
pub fn strength_from_utility(utility: f64) -> f64 {
    (utility / (1.0 + utility)).clamp(f64::MIN_POSITIVE, 1.0)
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Result<Self> {
        Self::with_boost_max(capacity, DEFAULT_BOOST_MAX)
    }

    pub fn with_boost_max(capacity: usize, boost_max: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("bank capacity must be positive".into()));
        }
        if !(boost_max >= 1.0) {
            return Err(Error::Config("boost_max must be >= 1".into()));
        }
        Ok(Self {
            records: Vec::new(),
            capacity,
            next_id: 0,
            boost_max,
        })
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn boost_max(&self) -> f64 {
        self.boost_max
    }

    pub fn get(&self, id: u64) -> Result<&MemoryRecord> {
        // ids are strictly increasing, so the records are sorted by id
        self.records
            .binary_search_by_key(&id, |r| r.id)
            .map(|i| &self.records[i])
            .map_err(|_| Error::UnknownRecord(id))
    }

    fn get_mut(&mut self, id: u64) -> Result<&mut MemoryRecord> {
        match self.records.binary_search_by_key(&id, |r| r.id) {
            Ok(i) => Ok(&mut self.records[i]),
            Err(_) => Err(Error::UnknownRecord(id)),
        }
    }

    pub fn imprint(
        &mut self,
        trajectory: TraceTrajectory,
        utility: f64,
        tick: Tick,
    ) -> Result<Option<Imprinted>> {
        if let Some(first) = self.records.first() {
            if first.trajectory.dim() != trajectory.dim() {
                return Err(Error::Structural(format!(
                    "bank holds {}-feature trajectories, got {}",
                    first.trajectory.dim(),
                    trajectory.dim()
                )));
            }
        }
        if !(utility > 0.0) {
            return Ok(None);
        }
        let mut evicted = None;
        if self.records.len() >= self.capacity {
            // weakest effective strength goes; on ties the oldest id
            let victim = self
                .records
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    a.effective_strength()
                        .total_cmp(&b.effective_strength())
                        .then(a.id.cmp(&b.id))
                })
                .map(|(i, _)| i)
                .expect("full bank is non-empty");
            evicted = Some(self.records.remove(victim).id);
        }
        let id = self.next_id;
        self.next_id += 1;
        self.records.push(MemoryRecord {
            id,
            trajectory,
            base_strength: strength_from_utility(utility),
            boost: 1.0,
            imprint_tick: tick,
            last_match_tick: tick,
        });
        Ok(Some(Imprinted { id, evicted }))
    }

    /// Ranks every record against the tail of the query history.
    pub fn match_query(&self, query: &MatchQuery<'_>) -> Result<Vec<MatchResult>> {
        let history = query.history;
        let mut results = Vec::with_capacity(self.records.len());
        for rec in &self.records {
            let traces = rec.trajectory.traces();
            let p = query.prefix_len.min(traces.len());
            let recent = &history[history.len() - p..];
            let distance = masked_distance(recent, &traces[..p], rec.trajectory.mask())?;
            results.push(MatchResult {
                record_id: rec.id,
                score: rec.effective_strength() / (1.0 + distance),
                distance,
                margin: None,
            });
        }
        results.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.record_id.cmp(&b.record_id)));
        if let Some(head) = results.first().map(|r| r.score) {
            let second = results.get(1).map_or(0.0, |r| r.score);
            results[0].margin = Some(head - second);
        }
        Ok(results)
    }

    pub fn replay_step(&self, id: u64, offset: usize) -> Result<&TemporalTrace> {
        let traces = self.get(id)?.trajectory.traces();
        traces.get(offset).ok_or(Error::Range {
            offset,
            tau: traces.len(),
        })
    }

    pub fn boost(&mut self, id: u64, factor: f64) -> Result<()> {
        if !(factor > 1.0) {
            return Err(Error::Config(format!("boost factor {factor} must exceed 1")));
        }
        let cap = self.boost_max;
        let rec = self.get_mut(id)?;
        rec.boost = (rec.boost * factor).min(cap);
        Ok(())
    }

    /// Halves every log-boost, flooring at 1.
    pub fn decay_boosts(&mut self) {
        for rec in &mut self.records {
            if rec.boost > 1.0 {
                rec.boost = rec.boost.sqrt().max(1.0);
            }
        }
    }

    pub fn reset_boosts(&mut self) {
        for rec in &mut self.records {
            rec.boost = 1.0;
        }
    }

    pub fn touch(&mut self, id: u64, tick: Tick) -> Result<()> {
        self.get_mut(id)?.last_match_tick = tick;
        Ok(())
    }

    /// Line-oriented snapshot: a `#` header, then one tab-separated record per
    /// line holding id, strength, boost, tau, comma-joined mask weights and
    /// the comma-joined flattened traces (trace-major).
    pub fn dump(&self, name: &str) -> String {
        let mut out = String::new();
        let dim = self.records.first().map_or(0, |r| r.trajectory.dim());
        let delta = self.records.first().map_or(1.0, |r| r.trajectory.delta());
        let _ = writeln!(
            out,
            "# bank {name} capacity={} dim={dim} delta={delta} records={}",
            self.capacity,
            self.records.len()
        );
        let _ = writeln!(out, "# id\tstrength\tboost\ttau\tmask\ttraces");
        for rec in &self.records {
            let mask = join(rec.trajectory.mask().weights().iter());
            let traces = join(rec.trajectory.traces().iter().flat_map(|t| t.values().iter()));
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{mask}\t{traces}",
                rec.id,
                rec.base_strength,
                rec.boost,
                rec.trajectory.tau()
            );
        }
        out
    }

    /// Inverse of [`MemoryBank::dump`]. Imprint and match ticks are not part
    /// of the snapshot and come back as the trajectory's source tick 0.
    pub fn parse_dump(text: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: "<bank dump>".into(),
            line,
            message,
        };
        let mut capacity = None;
        let mut delta = 1.0;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if let Some(header) = line.strip_prefix("# bank ") {
                for field in header.split_whitespace() {
                    if let Some(v) = field.strip_prefix("capacity=") {
                        capacity = Some(v.parse().map_err(|e| parse_err(lineno, format!("{e}")))?);
                    } else if let Some(v) = field.strip_prefix("delta=") {
                        delta = v.parse().map_err(|e| parse_err(lineno, format!("{e}")))?;
                    }
                }
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(parse_err(lineno, format!("expected 6 columns, got {}", cols.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(lineno, format!("{e}")));
            let list = |s: &str| -> Result<Vec<f64>> { s.split(',').map(num).collect() };
            let id: u64 = cols[0].parse().map_err(|e| parse_err(lineno, format!("{e}")))?;
            let tau: usize = cols[3].parse().map_err(|e| parse_err(lineno, format!("{e}")))?;
            let mask = StateMask::new(list(cols[4])?)?;
            let flat = list(cols[5])?;
            let dim = mask.dim();
            if flat.len() != tau * dim {
                return Err(parse_err(lineno, "trace count does not match tau * dim".into()));
            }
            let traces = flat
                .chunks(dim)
                .map(|c| TemporalTrace::new(c.to_vec(), delta))
                .collect::<Result<Vec<_>>>()?;
            records.push(MemoryRecord {
                id,
                trajectory: window_to_trajectory(&traces, mask, 0)?,
                base_strength: num(cols[1])?,
                boost: num(cols[2])?,
                imprint_tick: 0,
                last_match_tick: 0,
            });
        }
        let capacity = capacity.unwrap_or(records.len().max(1));
        let next_id = records.last().map_or(0, |r| r.id + 1);
        Ok(Self {
            records,
            capacity,
            next_id,
            boost_max: DEFAULT_BOOST_MAX,
        })
    }
}

fn join<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v}");
    }
    s
}
