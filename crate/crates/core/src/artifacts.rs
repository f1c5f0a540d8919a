//! On-disk run artifacts: `trace.csv`, `metrics.json`,
//! `resolved_config.toml`, `plots/*.svg` and optional `banks/*.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::hierarchy::AgentGraph;
use crate::metrics::Metrics;
use crate::scenario::ScenarioConfig;
use crate::sim::{HVarRow, LogLayout, LogRow, RunLog, SubsystemRow};
use crate::world::{Action, EnergyLedger};

const FIXED: [&str; 16] = [
    "tick",
    "action",
    "x",
    "y",
    "ambient",
    "food_here",
    "looming",
    "looming_rate",
    "energy_before",
    "basal",
    "action_cost",
    "ignore_cost",
    "intake",
    "energy_after",
    "core_temp_after",
    "integrity_after",
];
const SUB_COLS: [&str; 7] = ["mode", "replay", "goal", "goal_event", "pred_err", "abort", "imprint"];
const HVAR_COLS: [&str; 3] = ["current", "target", "drive"];

pub fn csv_header(layout: &LogLayout) -> Vec<String> {
    let mut h: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    for (s, level) in &layout.subsystems {
        h.extend(SUB_COLS.iter().map(|c| format!("{s}[{level}].{c}")));
    }
    for q in &layout.hvars {
        h.extend(HVAR_COLS.iter().map(|c| format!("{q}.{c}")));
    }
    h
}

fn opt(v: Option<u64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn row_fields(r: &LogRow) -> Vec<String> {
    let l = &r.ledger;
    let mut f = vec![
        r.tick.to_string(),
        r.action.label().to_string(),
        r.x.to_string(),
        r.y.to_string(),
        r.ambient.to_string(),
        u8::from(r.food_here).to_string(),
        r.looming.to_string(),
        r.looming_rate.to_string(),
        l.before.to_string(),
        l.basal.to_string(),
        l.action_cost.to_string(),
        l.ignore_cost.to_string(),
        l.intake.to_string(),
        l.after.to_string(),
        r.core_temp_after.to_string(),
        r.integrity_after.to_string(),
    ];
    for s in &r.subsystems {
        f.extend([
            s.mode.clone(),
            opt(s.replay),
            opt(s.goal),
            s.goal_event.clone(),
            s.prediction_error.to_string(),
            u8::from(s.aborted).to_string(),
            opt(s.imprinted),
        ]);
    }
    for h in &r.hvars {
        f.extend([h.current.to_string(), h.target.to_string(), h.drive.to_string()]);
    }
    f
}

pub fn emit_csv(log: &RunLog) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(csv_header(&log.layout)).expect("in-memory write");
    for r in &log.rows {
        w.write_record(row_fields(r)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

fn parse_layout(header: &csv::StringRecord, path: &str) -> Result<LogLayout> {
    let bad = |m: String| Error::Parse {
        path: path.into(),
        line: 1,
        message: m,
    };
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < FIXED.len() || cols[..FIXED.len()] != FIXED {
        return Err(bad("header does not start with the fixed trace columns".into()));
    }
    let mut subsystems = Vec::new();
    let mut i = FIXED.len();
    while i < cols.len() {
        let Some(prefix) = cols[i].strip_suffix(".mode") else { break };
        let Some((name, level)) = prefix
            .strip_suffix(']')
            .and_then(|p| p.split_once('['))
            .and_then(|(n, l)| l.parse::<u32>().ok().map(|l| (n, l)))
        else {
            break;
        };
        for (k, c) in SUB_COLS.iter().enumerate() {
            if cols.get(i + k) != Some(&format!("{prefix}.{c}").as_str()) {
                return Err(bad(format!("expected column {prefix}.{c}")));
            }
        }
        subsystems.push((name.to_string(), level));
        i += SUB_COLS.len();
    }
    let mut hvars = Vec::new();
    while i < cols.len() {
        let q = cols[i]
            .strip_suffix(".current")
            .ok_or_else(|| bad(format!("unexpected column {}", cols[i])))?;
        for (k, c) in HVAR_COLS.iter().enumerate() {
            if cols.get(i + k) != Some(&format!("{q}.{c}").as_str()) {
                return Err(bad(format!("expected column {q}.{c}")));
            }
        }
        hvars.push(q.to_string());
        i += HVAR_COLS.len();
    }
    Ok(LogLayout { subsystems, hvars })
}

pub fn parse_csv(text: &str, path: &str) -> Result<RunLog> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Parse {
        path: path.into(),
        line: 1,
        message: e.to_string(),
    })?;
    let layout = parse_layout(header, path)?;
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let line = n + 2;
        let bad = |m: String| Error::Parse {
            path: path.into(),
            line,
            message: m,
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let mut it = rec.iter();
        let mut next = || it.next().ok_or_else(|| bad("row too short".into()));
        fn num<T: std::str::FromStr>(s: &str, bad: &dyn Fn(String) -> Error) -> Result<T> {
            s.parse().map_err(|_| bad(format!("bad number {s:?}")))
        }
        fn optnum(s: &str, bad: &dyn Fn(String) -> Error) -> Result<Option<u64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s, bad).map(Some)
            }
        }
        let tick = num(next()?, &bad)?;
        let action_label = next()?;
        let action =
            Action::parse(action_label).ok_or_else(|| bad(format!("unknown action {action_label:?}")))?;
        let x = num(next()?, &bad)?;
        let y = num(next()?, &bad)?;
        let ambient = num(next()?, &bad)?;
        let food_here = num::<u8>(next()?, &bad)? != 0;
        let looming = num(next()?, &bad)?;
        let looming_rate = num(next()?, &bad)?;
        let ledger = EnergyLedger {
            before: num(next()?, &bad)?,
            basal: num(next()?, &bad)?,
            action_cost: num(next()?, &bad)?,
            ignore_cost: num(next()?, &bad)?,
            intake: num(next()?, &bad)?,
            after: num(next()?, &bad)?,
        };
        let core_temp_after = num(next()?, &bad)?;
        let integrity_after = num(next()?, &bad)?;
        let mut subsystems = Vec::with_capacity(layout.subsystems.len());
        for _ in &layout.subsystems {
            subsystems.push(SubsystemRow {
                mode: next()?.to_string(),
                replay: optnum(next()?, &bad)?,
                goal: optnum(next()?, &bad)?,
                goal_event: next()?.to_string(),
                prediction_error: num(next()?, &bad)?,
                aborted: num::<u8>(next()?, &bad)? != 0,
                imprinted: optnum(next()?, &bad)?,
            });
        }
        let mut hvars = Vec::with_capacity(layout.hvars.len());
        for _ in &layout.hvars {
            hvars.push(HVarRow {
                current: num(next()?, &bad)?,
                target: num(next()?, &bad)?,
                drive: num(next()?, &bad)?,
            });
        }
        rows.push(LogRow {
            tick,
            action,
            x,
            y,
            ambient,
            food_here,
            looming,
            looming_rate,
            ledger,
            core_temp_after,
            integrity_after,
            subsystems,
            hvars,
        });
    }
    let truncation = rows
        .last()
        .filter(|r| r.integrity_after <= 0.0)
        .map(|r| format!("death at tick {}", r.tick));
    Ok(RunLog {
        layout,
        rows,
        truncation,
    })
}

pub fn read_csv(path: &Path) -> Result<RunLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, &path.display().to_string())
}

pub fn metrics_json(m: &Metrics) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("metrics serialise");
    s.push('\n');
    s
}

const W: f64 = 640.0;
const H: f64 = 240.0;
const PAD: f64 = 40.0;

/// A plain line chart of one or more series over tick index.
pub fn svg_lines(title: &str, series: &[(&str, &str, Vec<f64>)]) -> String {
    let n = series.iter().map(|s| s.2.len()).max().unwrap_or(0);
    let finite = series.iter().flat_map(|s| s.2.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let sx = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / (n.max(2) - 1) as f64;
    let sy = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r##"<rect width="{W}" height="{H}" fill="#fff"/>"##);
    let _ = writeln!(
        out,
        r##"<text x="{PAD}" y="20" font-family="sans-serif" font-size="13">{title}</text>"##
    );
    let _ = writeln!(
        out,
        r##"<path d="M{PAD} {PAD}V{y}H{x}" fill="none" stroke="#999"/>"##,
        y = H - PAD,
        x = W - PAD
    );
    for (v, y) in [(hi, PAD), (lo, H - PAD)] {
        let _ = writeln!(
            out,
            r##"<text x="2" y="{y:.1}" font-family="sans-serif" font-size="10">{v:.2}</text>"##
        );
    }
    let _ = writeln!(
        out,
        r##"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="10">{n} ticks</text>"##,
        x = W - PAD - 40.0,
        y = H - PAD + 14.0
    );
    for (k, (label, color, values)) in series.iter().enumerate() {
        let mut d = String::new();
        for (i, v) in values.iter().enumerate() {
            let _ = write!(d, "{}{:.1},{:.1}", if i == 0 { "M" } else { "L" }, sx(i), sy(*v));
        }
        if !d.is_empty() {
            let _ = writeln!(
                out,
                r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1"/>"#
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="20" font-family="sans-serif" font-size="11" fill="{color}">{label}</text>"#,
            x = W - PAD - 160.0 + 80.0 * k as f64
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One plot per hvar (current against effective target) and one per level
/// (mean prediction error of that level's subsystems).
pub fn plots(log: &RunLog) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for (i, q) in log.layout.hvars.iter().enumerate() {
        let cur = log.rows.iter().map(|r| r.hvars[i].current).collect();
        let tgt = log.rows.iter().map(|r| r.hvars[i].target).collect();
        out.insert(
            format!("hvar_{q}.svg"),
            svg_lines(q, &[("current", "#1f5fbf", cur), ("target", "#c0392b", tgt)]),
        );
    }
    let mut levels: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, (_, l)) in log.layout.subsystems.iter().enumerate() {
        levels.entry(*l).or_default().push(i);
    }
    for (l, subs) in levels {
        let err = log
            .rows
            .iter()
            .map(|r| subs.iter().map(|&i| r.subsystems[i].prediction_error).sum::<f64>() / subs.len() as f64)
            .collect();
        out.insert(
            format!("level_{l}_prediction_error.svg"),
            svg_lines(&format!("level {l} prediction error"), &[("error", "#6c3483", err)]),
        );
    }
    out
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

pub fn write_plots(log: &RunLog, out_dir: &Path) -> Result<usize> {
    let plots = plots(log);
    for (name, svg) in &plots {
        write(out_dir.join("plots").join(name), svg)?;
    }
    Ok(plots.len())
}

/// Writes every artifact of a run; returns the paths written, sorted.
pub fn emit_artifacts(
    config: &ScenarioConfig,
    log: &RunLog,
    metrics: &Metrics,
    agent: Option<&AgentGraph>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = vec![
        out_dir.join("trace.csv"),
        out_dir.join("metrics.json"),
        out_dir.join("resolved_config.toml"),
    ];
    write(written[0].clone(), &emit_csv(log))?;
    write(written[1].clone(), &metrics_json(metrics))?;
    write(written[2].clone(), &config.to_toml())?;
    write_plots(log, out_dir)?;
    written.extend(plots(log).keys().map(|k| out_dir.join("plots").join(k)));
    if let Some(agent) = agent {
        for sub in agent.subsystems() {
            let p = out_dir.join("banks").join(format!("{}.txt", sub.name));
            write(p.clone(), &sub.bank().dump(&sub.name))?;
            written.push(p);
        }
    }
    written.sort();
    Ok(written)
}
