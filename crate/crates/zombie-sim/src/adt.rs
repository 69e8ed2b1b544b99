//! Attack Detection Table: an N×N grid of 4-bit saturating counters indexed
//! by (flushing core, zombie-missing core). Flush+Reload spying shows up as
//! a hot off-diagonal cell — the spy flushes, the victim zombie-misses — so
//! a counter hitting saturation off the diagonal raises an alarm. Same-core
//! flush/reload traffic lands on the diagonal and never alarms. All
//! counters halve periodically so sparse benign activity cannot accumulate.

use crate::cache::CoreId;

pub const COUNTER_MAX: u8 = 15;
pub const DEFAULT_DECAY_PERIOD_CYCLES: u64 = 32_000_000;

#[derive(Clone, Copy, Debug)]
pub struct AdtConfig {
    pub cores: usize,
    /// Cycles between counter-halving boundaries.
    pub decay_period_cycles: u64,
    /// Also count repeat flushes of zombie lines (attributed to the new and
    /// prior flushing cores), catching Flush+Flush-style repetition. Off by
    /// default: the base detector counts zombie misses only.
    pub count_flush_on_zombie: bool,
}

impl AdtConfig {
    pub fn new(cores: usize) -> Self {
        AdtConfig {
            cores,
            decay_period_cycles: DEFAULT_DECAY_PERIOD_CYCLES,
            count_flush_on_zombie: false,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Alarm {
    pub cycle: u64,
    pub spy_core: CoreId,
    pub victim_core: CoreId,
}

#[derive(Clone, Debug)]
pub struct Adt {
    cfg: AdtConfig,
    counters: Vec<u8>,
    /// Number of decay boundaries already applied.
    decay_epoch: u64,
    alarms: Vec<Alarm>,
}

impl Adt {
    pub fn new(cfg: AdtConfig) -> Self {
        assert!(cfg.cores > 0 && cfg.decay_period_cycles > 0);
        Adt {
            counters: vec![0; cfg.cores * cfg.cores],
            cfg,
            decay_epoch: 0,
            alarms: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdtConfig {
        &self.cfg
    }

    pub fn counter(&self, flusher: CoreId, accessor: CoreId) -> u8 {
        self.counters[flusher * self.cfg.cores + accessor]
    }

    pub fn alarms(&self) -> &[Alarm] {
        &self.alarms
    }

    /// Applies every decay boundary at or before `now`. Counter changes are
    /// driven lazily from recorded events, so this is also called directly
    /// before reading counters at a known cycle.
    pub fn sync(&mut self, now: u64) {
        let epoch = now / self.cfg.decay_period_cycles;
        if epoch <= self.decay_epoch {
            return;
        }
        // Four halvings send a saturated 4-bit counter to zero.
        let halvings = (epoch - self.decay_epoch).min(4) as u32;
        for c in self.counters.iter_mut() {
            *c >>= halvings;
        }
        self.decay_epoch = epoch;
    }

    fn bump(&mut self, now: u64, flusher: CoreId, accessor: CoreId) {
        self.sync(now);
        let cell = &mut self.counters[flusher * self.cfg.cores + accessor];
        if *cell < COUNTER_MAX {
            *cell += 1;
        }
        if *cell == COUNTER_MAX && flusher != accessor {
            *cell = 0;
            self.alarms.push(Alarm {
                cycle: now,
                spy_core: flusher,
                victim_core: accessor,
            });
        }
    }

    /// A zombie miss at cycle `now` by `accessor` on a line flushed by
    /// `flusher`: the core event the detector watches.
    pub fn record_zombie_miss(&mut self, now: u64, flusher: CoreId, accessor: CoreId) {
        self.bump(now, flusher, accessor);
    }

    /// A repeat flush of a line that was already a zombie. Counted only
    /// with `count_flush_on_zombie` enabled.
    pub fn record_flush_on_zombie(&mut self, now: u64, new_flusher: CoreId, prior_flusher: CoreId) {
        if self.cfg.count_flush_on_zombie {
            self.bump(now, new_flusher, prior_flusher);
        }
    }
}
