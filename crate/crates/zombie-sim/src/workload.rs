//! Synthetic workloads.
//!
//! Benign workloads exercise the hierarchy without the flush-then-reload-
//! identical pattern, so mitigation modes must not slow them down. The
//! flush-hot workload *does* flush and re-read its own lines (a benign
//! same-core pattern that the extended mitigation recovers). The model
//! calibration workload engineers an exact (miss rate, flush fraction,
//! identical-reload probability) mix to compare measured latency against
//! the analytical prediction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::cache::{CoreId, LineAddr, LineData, LINE_SIZE};
use crate::hierarchy::{Hierarchy, StatsCounters};
use crate::model::ModelParams;

const PRIVATE_REGION_BASE: u64 = 0x10_0000;
const PRIVATE_REGION_STRIDE: u64 = 0x1_0000;
const SHARED_REGION_BASE: u64 = 0x8_0000;
const SHARED_REGION_LINES: u64 = 512;
const MIX_REGION_LINES: u64 = 2048;
const IO_BUFFER_LINES: u64 = 256;
const HOT_LINES: u64 = 16;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BenignKind {
    /// Random reads and writes over private regions plus a shared
    /// read-only region; no flushes at all.
    Mix,
    /// Write-then-flush buffer cycling, as when persisting I/O buffers;
    /// every line is rewritten with fresh bytes before it is read again.
    IoFlush,
    /// Same-core flush of hot lines that are then re-read unchanged.
    FlushHot,
}

impl BenignKind {
    pub fn label(self) -> &'static str {
        match self {
            BenignKind::Mix => "mix",
            BenignKind::IoFlush => "io-flush",
            BenignKind::FlushHot => "flush-hot",
        }
    }

    pub const ALL: [BenignKind; 3] = [BenignKind::Mix, BenignKind::IoFlush, BenignKind::FlushHot];
}

#[derive(Clone, Copy, Debug)]
pub struct BenignParams {
    pub kind: BenignKind,
    /// Total operations, round-robined across all cores.
    pub ops: u64,
    pub seed: u64,
}

impl BenignParams {
    pub fn new(kind: BenignKind, ops: u64, seed: u64) -> Self {
        BenignParams { kind, ops, seed }
    }
}

#[derive(Clone, Debug)]
pub struct BenignOutcome {
    pub total_cycles: u64,
    pub stats: StatsCounters,
    pub alarm_count: usize,
}

fn private_line(core: CoreId, index: u64) -> LineAddr {
    LineAddr::from_line_number(PRIVATE_REGION_BASE + core as u64 * PRIVATE_REGION_STRIDE + index)
}

fn counter_data(counter: u64) -> LineData {
    let mut data = [0u8; LINE_SIZE as usize];
    for (i, chunk) in data.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&(counter.wrapping_add(i as u64)).to_le_bytes());
    }
    data
}

/// Runs the chosen benign pattern; the operation stream depends only on the
/// parameters, never on observed latencies, so runs under different
/// mitigation modes execute identical operations.
pub fn run_benign(sim: &mut Hierarchy, p: &BenignParams) -> BenignOutcome {
    let cores = sim.config().cores;
    let start = sim.now();
    let mut rng = ChaCha12Rng::seed_from_u64(p.seed);
    let mut write_counter: u64 = 1;
    let mut per_core_pos = vec![0u64; cores];

    for op in 0..p.ops {
        let core = (op % cores as u64) as usize;
        let pos = per_core_pos[core];
        per_core_pos[core] += 1;
        match p.kind {
            BenignKind::Mix => {
                let roll: u8 = rng.gen_range(0..8);
                if roll == 0 {
                    let idx = rng.gen_range(0..SHARED_REGION_LINES);
                    sim.read(core, LineAddr::from_line_number(SHARED_REGION_BASE + idx));
                } else {
                    let idx = rng.gen_range(0..MIX_REGION_LINES);
                    if roll < 3 {
                        sim.write(core, private_line(core, idx), counter_data(write_counter));
                        write_counter += 1;
                    } else {
                        sim.read(core, private_line(core, idx));
                    }
                }
            }
            BenignKind::IoFlush => {
                let line = private_line(core, (pos / 2) % IO_BUFFER_LINES);
                if pos % 2 == 0 {
                    sim.write(core, line, counter_data(write_counter));
                    write_counter += 1;
                } else {
                    sim.clflush(core, line);
                }
            }
            BenignKind::FlushHot => {
                let line = private_line(core, (pos / 3) % HOT_LINES);
                match pos % 3 {
                    0 | 1 => {
                        sim.read(core, line);
                    }
                    _ => {
                        sim.clflush(core, line);
                    }
                }
            }
        }
    }

    BenignOutcome {
        total_cycles: sim.now() - start,
        stats: sim.snapshot_stats(),
        alarm_count: sim.alarms().len(),
    }
}

const CALIBRATION_POOL_BASE: u64 = 0x40_0000;
const CALIBRATION_FRESH_BASE: u64 = 0x80_0000;

#[derive(Clone, Copy, Debug)]
pub struct CalibrationParams {
    /// Resident lines cycled round-robin to supply cache hits; must exceed
    /// combined L1+L2 capacity so every access reaches the shared cache.
    pub pool_lines: u64,
    /// Measured victim accesses.
    pub samples: u64,
    /// Engineered fraction of accesses that miss (fresh, never-seen lines).
    pub miss_rate: f64,
    /// Engineered fraction of would-be hits whose line was flushed.
    pub flush_fraction: f64,
    /// Engineered probability the flushed line reloads identical bytes.
    pub identical_reload_prob: f64,
    pub victim_core: CoreId,
    pub flusher_core: CoreId,
}

impl CalibrationParams {
    pub fn new(miss_rate: f64, flush_fraction: f64, identical_reload_prob: f64) -> Self {
        CalibrationParams {
            pool_lines: 16_384,
            samples: 40_000,
            miss_rate,
            flush_fraction,
            identical_reload_prob,
            victim_core: 0,
            flusher_core: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CalibrationOutcome {
    /// Mean shared-cache leg latency over the measured accesses (cycles
    /// spent beyond the private-cache lookups).
    pub measured_l3_latency: f64,
    /// Analytical prediction for the same latency.
    pub predicted_l3_latency: f64,
    pub params: ModelParams,
    pub samples: u64,
    pub fresh_misses: u64,
    pub zombie_events: u64,
}

impl CalibrationOutcome {
    pub fn relative_error(&self) -> f64 {
        (self.measured_l3_latency - self.predicted_l3_latency).abs() / self.predicted_l3_latency
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Step {
    FreshMiss,
    PoolHit,
    FlushedReload,
}

/// Error-accumulator schedule giving exact step counts with even spacing.
fn calibration_schedule(p: &CalibrationParams) -> Vec<Step> {
    let product = p.flush_fraction * p.identical_reload_prob;
    let mut steps = Vec::with_capacity(p.samples as usize);
    let mut miss_acc = 0.0f64;
    let mut zombie_acc = 0.0f64;
    for _ in 0..p.samples {
        miss_acc += p.miss_rate;
        if miss_acc >= 1.0 {
            miss_acc -= 1.0;
            steps.push(Step::FreshMiss);
        } else {
            zombie_acc += product;
            if zombie_acc >= 1.0 {
                zombie_acc -= 1.0;
                steps.push(Step::FlushedReload);
            } else {
                steps.push(Step::PoolHit);
            }
        }
    }
    steps
}

/// Runs the engineered access mix and compares the measured mean
/// shared-cache latency against the analytical model.
///
/// Layout: a warm pool supplies hits; brand-new lines supply misses; a
/// reserve of pre-loaded lines supplies flush-then-reload-identical events
/// (each flushed by the flusher core, reloaded by the victim exactly once).
pub fn run_model_calibration(sim: &mut Hierarchy, p: &CalibrationParams) -> CalibrationOutcome {
    assert!(p.samples > 0, "calibration needs at least one sample");
    assert!(
        (0.0..=1.0).contains(&p.miss_rate)
            && (0.0..=1.0).contains(&p.flush_fraction)
            && (0.0..=1.0).contains(&p.identical_reload_prob),
        "calibration rates must lie in [0, 1]"
    );
    let cfg = sim.config().clone();
    let private_prefix = (cfg.l3_hit_latency() - cfg.l3.hit_latency) as f64;
    let l2_lines = (cfg.l2.num_sets * cfg.l2.ways) as u64;
    assert!(
        p.pool_lines > 2 * l2_lines,
        "pool must not fit in the private caches"
    );

    let schedule = calibration_schedule(p);
    let zombie_events = schedule
        .iter()
        .filter(|s| **s == Step::FlushedReload)
        .count() as u64;
    let fresh_misses = schedule.iter().filter(|s| **s == Step::FreshMiss).count() as u64;

    // Reserve lines for flush events, loaded before the pool walk so they
    // have left the private caches (but not the shared cache) by the time
    // they are flushed and re-read.
    for i in 0..zombie_events {
        sim.read(
            p.victim_core,
            LineAddr::from_line_number(CALIBRATION_FRESH_BASE + i),
        );
    }
    for i in 0..p.pool_lines {
        sim.read(
            p.victim_core,
            LineAddr::from_line_number(CALIBRATION_POOL_BASE + i),
        );
    }

    let mut next_fresh = CALIBRATION_FRESH_BASE + zombie_events;
    let mut next_reserve = CALIBRATION_FRESH_BASE;
    let mut pool_cursor = 0u64;
    let mut total_latency = 0u64;
    for step in &schedule {
        let addr = match step {
            Step::FreshMiss => {
                let line = next_fresh;
                next_fresh += 1;
                LineAddr::from_line_number(line)
            }
            Step::PoolHit => {
                let line = CALIBRATION_POOL_BASE + pool_cursor;
                pool_cursor = (pool_cursor + 1) % p.pool_lines;
                LineAddr::from_line_number(line)
            }
            Step::FlushedReload => {
                let addr = LineAddr::from_line_number(next_reserve);
                next_reserve += 1;
                sim.clflush(p.flusher_core, addr);
                addr
            }
        };
        total_latency += sim.read(p.victim_core, addr).latency;
    }

    let params = ModelParams {
        miss_rate: p.miss_rate,
        l3_hit_cycles: cfg.l3.hit_latency as f64,
        mem_cycles: cfg.mem_latency as f64,
        flush_fraction: p.flush_fraction,
        identical_reload_prob: p.identical_reload_prob,
        ..ModelParams::reference()
    };
    CalibrationOutcome {
        measured_l3_latency: total_latency as f64 / p.samples as f64 - private_prefix,
        predicted_l3_latency: params.l3lat_zbm(),
        params,
        samples: p.samples,
        fresh_misses,
        zombie_events,
    }
}
