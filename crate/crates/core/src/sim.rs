//! Deterministic time-slotted simulator of the edge-assisted pipeline.
//!
//! A device streams keyframes; each slot it (1) ingests the arrivals,
//! (2) builds a local map around the newest keyframe using its lagged copy
//! of the global map, (3) uplinks as many keyframes as the bandwidth trace
//! allows — chosen by the configured strategy — and (4) receives the
//! server's global set after a fixed downlink delay. Every quantity in the
//! report is a pure function of (config, stream, trace), so identical runs
//! produce byte-identical CSV.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::time::Instant;

use serde::Deserialize;

use crate::baselines::{make_strategy, strategy_names};
use crate::error::Error;
use crate::graph::{parse_stream, KeyframeId, KeyframeRecord, PoseGraph};
use crate::selection::{
    construct_local_map, Objective, SelectionBudget, SelectionStrategy, SelectionTask, TopHConfig,
};
use crate::uncertainty::{global_uncertainty, Uncertainty};

/// Per-slot uplink capacities, sparse over slot indices: slots absent from
/// the trace have zero capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthTrace {
    entries: Vec<(u64, f64)>,
}

pub const TRACE_HEADER: &str = "slot,bits_per_slot";

impl BandwidthTrace {
    /// Parses trace CSV: a `slot,bits_per_slot` header, then one
    /// `index,bits` row per slot with strictly increasing indices and
    /// non-negative capacities. Errors carry 1-based line and field
    /// positions.
    pub fn parse(text: &str) -> Result<Self, Error> {
        let fail = |line: usize, column: usize, message: String| Error::TraceParse {
            line,
            column,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, header)) if header == TRACE_HEADER => {}
            Some((line, header)) => {
                return Err(fail(
                    line,
                    1,
                    format!("expected header `{TRACE_HEADER}`, got `{header}`"),
                ))
            }
            None => return Err(fail(1, 1, format!("missing `{TRACE_HEADER}` header"))),
        }
        let mut entries: Vec<(u64, f64)> = Vec::new();
        for (line, row) in lines {
            let fields: Vec<&str> = row.split(',').collect();
            if fields.len() != 2 {
                return Err(fail(
                    line,
                    1,
                    format!("expected 2 fields, got {}", fields.len()),
                ));
            }
            let slot: u64 = fields[0]
                .trim()
                .parse()
                .map_err(|e| fail(line, 1, format!("bad slot index: {e}")))?;
            let bits: f64 = fields[1]
                .trim()
                .parse()
                .map_err(|e| fail(line, 2, format!("bad capacity: {e}")))?;
            if !bits.is_finite() || bits < 0.0 {
                return Err(fail(
                    line,
                    2,
                    format!("capacity {bits} must be finite and ≥ 0"),
                ));
            }
            if let Some(&(prev, _)) = entries.last() {
                if slot <= prev {
                    return Err(fail(
                        line,
                        1,
                        format!("slot {slot} does not increase on previous slot {prev}"),
                    ));
                }
            }
            entries.push((slot, bits));
        }
        Ok(BandwidthTrace { entries })
    }

    /// Capacity of one slot in bits; slots outside the trace carry zero.
    pub fn capacity_bits(&self, slot: u64) -> f64 {
        self.entries
            .binary_search_by_key(&slot, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<BandwidthTrace, Error> {
    let path = path.as_ref();
    BandwidthTrace::parse(&fs::read_to_string(path).map_err(|e| Error::in_file(e, path))?)
}

/// Budget knobs that are fixed for a run; the per-slot uplink capacity
/// comes from the bandwidth trace instead.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub l_loc: usize,
    pub l_f: usize,
    pub keyframe_bits: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Wall-clock length of one slot; keyframe timestamps map to slot
    /// `floor(timestamp / slot_seconds)`.
    pub slot_seconds: f64,
    /// Weight of the inertial edge added between consecutive keyframes.
    pub imu_weight: f64,
    /// Slots until the device sees a server-side global set.
    pub downlink_delay_slots: u64,
    /// Registry name of the uplink selection policy.
    pub strategy: String,
    #[serde(default)]
    pub seed: u64,
    pub budget: BudgetConfig,
    #[serde(default)]
    pub topk: TopHConfig,
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::in_file(e, path))?)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !self.slot_seconds.is_finite() || self.slot_seconds <= 0.0 {
            return Err(Error::Config(format!(
                "slot_seconds must be a positive number, got {}",
                self.slot_seconds
            )));
        }
        if !self.imu_weight.is_finite() || self.imu_weight < 1.0 {
            return Err(Error::Config(format!(
                "imu_weight must be at least 1, got {}",
                self.imu_weight
            )));
        }
        if !strategy_names().contains(&self.strategy.as_str()) {
            return Err(Error::UnknownStrategy(self.strategy.clone()));
        }
        self.budget_for(0.0).validate()?;
        self.topk.validate()
    }

    fn budget_for(&self, capacity_bits: f64) -> SelectionBudget {
        SelectionBudget {
            l_loc: self.budget.l_loc,
            l_f: self.budget.l_f,
            capacity_bits,
            keyframe_bits: self.budget.keyframe_bits,
        }
    }
}

/// The evolving device/server view.
#[derive(Debug, Clone, Default)]
pub struct SimState {
    pub graph: PoseGraph,
    /// Server-side global set: everything uplinked so far.
    pub k_g_edge: BTreeSet<KeyframeId>,
    /// Device-side copy of the global set, `downlink_delay_slots` behind.
    pub k_g_user: BTreeSet<KeyframeId>,
    pub current_slot: u64,
    /// `k_g_edge` as of the end of each completed slot; the downlink delay
    /// indexes into this.
    history: Vec<BTreeSet<KeyframeId>>,
}

impl SimState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keyframes still awaiting uplink.
    pub fn pending(&self) -> BTreeSet<KeyframeId> {
        self.graph
            .nodes()
            .filter(|n| !self.k_g_edge.contains(n))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: u64,
    pub new_keyframes: usize,
    pub uplinked: usize,
    /// Uncertainty of the local map built this slot (fixed keyframes
    /// included); absent when no keyframe arrived.
    pub local_uncertainty: Option<Uncertainty>,
    /// Uncertainty of the server's global set at slot end; absent while it
    /// has fewer than two keyframes.
    pub global_uncertainty: Option<Uncertainty>,
    /// Objective evaluations spent on selection this slot (local + fixed +
    /// global stages).
    pub evaluations: u64,
    /// Measured, not simulated — excluded from the CSV so reports stay
    /// byte-identical across runs.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub strategy: String,
    pub records: Vec<SlotRecord>,
}

pub const REPORT_HEADER: &str =
    "slot,new_keyframes,uplinked,local_uncertainty,global_uncertainty,evaluations";

impl SimReport {
    /// Mean over slots that produced a local map; `None` if none did.
    pub fn mean_local_uncertainty(&self) -> Option<f64> {
        mean(self.records.iter().filter_map(|r| r.local_uncertainty))
    }

    /// Mean over slots where the global set had two or more keyframes.
    pub fn mean_global_uncertainty(&self) -> Option<f64> {
        mean(self.records.iter().filter_map(|r| r.global_uncertainty))
    }

    pub fn total_uplinked(&self) -> usize {
        self.records.iter().map(|r| r.uplinked).sum()
    }

    /// Fixed-column CSV. Undefined uncertainties render as empty fields;
    /// wall time is deliberately not a column (see `SlotRecord`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.records {
            let local = r
                .local_uncertainty
                .map(|u| u.value().to_string())
                .unwrap_or_default();
            let global = r
                .global_uncertainty
                .map(|u| u.value().to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.slot, r.new_keyframes, r.uplinked, local, global, r.evaluations
            ));
        }
        out
    }
}

fn mean(values: impl Iterator<Item = Uncertainty>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v.value();
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Advances the world by one slot: ingest arrivals, build the local map
/// around the newest keyframe (device view, so against the lagged
/// `k_g_user`), uplink what the capacity allows, then deliver the delayed
/// downlink. Zero-capacity slots uplink nothing.
pub fn step(
    state: &mut SimState,
    strategy: &mut dyn SelectionStrategy,
    slot_keyframes: &[KeyframeRecord],
    capacity_bits: f64,
    config: &SimConfig,
) -> Result<SlotRecord, Error> {
    let started = Instant::now();
    let slot = state.current_slot;

    for record in slot_keyframes {
        state.graph.ingest(record, config.imu_weight)?;
    }

    let mut evaluations = 0u64;
    let mut local_uncertainty = None;
    if let Some(record) = slot_keyframes.last() {
        let k = record.id;
        let candidates: BTreeSet<KeyframeId> = state
            .graph
            .nodes()
            .filter(|n| *n != k && !state.k_g_user.contains(n))
            .collect();
        let budget = config.budget_for(capacity_bits);
        let (local, fixed) = construct_local_map(
            &state.graph,
            &candidates,
            k,
            &state.k_g_user,
            &budget,
            &config.topk,
        )?;
        evaluations += local.evaluations + fixed.evaluations;
        local_uncertainty = Some(fixed.uncertainty);
    }

    let picks = config.budget_for(capacity_bits).global_picks();
    let pending = state.pending();
    let mut uplinked = 0usize;
    if picks > 0 && !pending.is_empty() {
        let task = SelectionTask {
            graph: &state.graph,
            candidates: &pending,
            existing: &state.k_g_edge,
            budget: picks,
            objective: Objective::Global,
            tuning: config.topk,
        };
        let result = strategy.select(&task)?;
        evaluations += result.evaluations;
        uplinked = result.chosen.len();
        state.k_g_edge.extend(result.chosen.iter().copied());
    }
    debug_assert!(uplinked as f64 * config.budget.keyframe_bits <= capacity_bits + f64::EPSILON);

    state.history.push(state.k_g_edge.clone());
    state.k_g_user = slot
        .checked_sub(config.downlink_delay_slots)
        .map(|s| state.history[s as usize].clone())
        .unwrap_or_default();

    let global_uncertainty = if state.k_g_edge.len() < 2 {
        None
    } else {
        Some(global_uncertainty(&state.graph, &state.k_g_edge)?)
    };

    state.current_slot += 1;
    Ok(SlotRecord {
        slot,
        new_keyframes: slot_keyframes.len(),
        uplinked,
        local_uncertainty,
        global_uncertainty,
        evaluations,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn slot_of(timestamp_s: f64, slot_seconds: f64) -> u64 {
    (timestamp_s / slot_seconds).floor() as u64
}

/// Runs the full slot loop over a parsed stream and trace. Slots range from
/// 0 through the last keyframe's slot; an empty stream yields an empty
/// report. Errors carry the slot in which they occurred.
pub fn run(
    config: &SimConfig,
    records: &[KeyframeRecord],
    trace: &BandwidthTrace,
) -> Result<SimReport, Error> {
    config.validate()?;
    let mut report = SimReport {
        strategy: config.strategy.clone(),
        records: Vec::new(),
    };
    let mut prev_ts = 0.0f64;
    for record in records {
        if !record.timestamp_s.is_finite() || record.timestamp_s < 0.0 {
            return Err(Error::Config(format!(
                "keyframe {} has invalid timestamp {}",
                record.id, record.timestamp_s
            )));
        }
        if record.timestamp_s < prev_ts {
            return Err(Error::Config(format!(
                "keyframe {} timestamp {} precedes an earlier keyframe",
                record.id, record.timestamp_s
            )));
        }
        prev_ts = record.timestamp_s;
    }
    let Some(last) = records.last() else {
        return Ok(report);
    };
    let mut strategy = make_strategy(&config.strategy, config.seed)?;
    let mut state = SimState::new();
    let last_slot = slot_of(last.timestamp_s, config.slot_seconds);
    let mut cursor = 0usize;
    for slot in 0..=last_slot {
        let from = cursor;
        while cursor < records.len()
            && slot_of(records[cursor].timestamp_s, config.slot_seconds) == slot
        {
            cursor += 1;
        }
        let record = step(
            &mut state,
            strategy.as_mut(),
            &records[from..cursor],
            trace.capacity_bits(slot),
            config,
        )
        .map_err(|e| e.in_slot(slot))?;
        report.records.push(record);
    }
    Ok(report)
}

/// Convenience wrapper: parse the stream and trace files, then run.
pub fn run_from_paths(
    config: &SimConfig,
    stream_path: impl AsRef<Path>,
    trace_path: impl AsRef<Path>,
) -> Result<SimReport, Error> {
    let stream_path = stream_path.as_ref();
    let stream = fs::File::open(stream_path).map_err(|e| Error::in_file(e, stream_path))?;
    let records = parse_stream(BufReader::new(stream))?;
    let trace = load_trace(trace_path)?;
    run(config, &records, &trace)
}
