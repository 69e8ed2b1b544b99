//! Whole-machine cache hierarchy: N cores with private write-through L1/L2
//! over a shared inclusive write-back L3, flat backing memory, and cycle
//! accounting. Zombie tracking lives only in the L3.
//!
//! Mitigation modes:
//! * `Baseline` — zombies are tracked for instrumentation but have no timing
//!   consequence: a zombie hit is served at hit latency.
//! * `Zbm` — a zombie hit triggers a dummy memory request whose data is
//!   discarded; the access completes at miss latency and the performance
//!   counters record a miss, making it indistinguishable from a zombie miss.
//! * `Zbmx` — like `Zbm`, except an access from the very core that flushed
//!   the line clears the Z-bit (and on a zombie hit is served as a normal
//!   hit), restoring hit latency for benign same-core flush/reload patterns.

use std::collections::HashMap;

use crate::adt::{AdtConfig, Alarm};
use crate::cache::{
    AccessOutcome, Cache, CacheGeometry, CoreId, FlushOutcome, Indexing, LineAddr, LineData,
    Replacement, ZERO_LINE,
};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Baseline,
    Zbm,
    Zbmx,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Zbm => "zbm",
            Mode::Zbmx => "zbmx",
        }
    }
}

/// How `clflush` latency is served.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FlushTiming {
    /// Latency depends on residency: a valid line costs the full
    /// invalidation, anything else returns quickly. This leaves the
    /// Flush+Flush timing channel open.
    Variable,
    /// Every flush costs the worst-case latency; channel closed.
    Constant,
    /// Only flushes that touch a line with the Z-bit set take the constant
    /// worst-case path; first-time flushes keep variable timing. Closes the
    /// repeat-flush channel at lower benign cost than `Constant`.
    ZombieGated,
}

impl FlushTiming {
    pub fn label(self) -> &'static str {
        match self {
            FlushTiming::Variable => "variable",
            FlushTiming::Constant => "constant",
            FlushTiming::ZombieGated => "zombie-gated",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HierarchyConfig {
    pub cores: usize,
    pub mode: Mode,
    pub l1: CacheGeometry,
    pub l2: CacheGeometry,
    pub l3: CacheGeometry,
    pub mem_latency: u64,
    pub flush_resident_latency: u64,
    pub flush_absent_latency: u64,
    pub flush_timing: FlushTiming,
    pub adt: Option<AdtSettings>,
}

/// Detector knobs carried by the hierarchy config; the core count comes
/// from the hierarchy itself.
#[derive(Clone, Copy, Debug)]
pub struct AdtSettings {
    pub decay_period_cycles: u64,
    pub count_flush_on_zombie: bool,
}

impl Default for AdtSettings {
    fn default() -> Self {
        AdtSettings {
            decay_period_cycles: crate::adt::DEFAULT_DECAY_PERIOD_CYCLES,
            count_flush_on_zombie: false,
        }
    }
}

impl HierarchyConfig {
    /// The reference machine: 8 cores, 32 KiB 8-way L1 (4 cycles), 256 KiB
    /// 8-way L2 (+12), shared 16 MiB 16-way SRRIP L3 (+24) with keyed set
    /// indexing, 145-cycle memory.
    pub fn standard(mode: Mode, l3_key: u64) -> Self {
        HierarchyConfig {
            cores: 8,
            mode,
            l1: CacheGeometry::new(32 * 1024, 8, 4, Replacement::Lru, Indexing::Direct),
            l2: CacheGeometry::new(256 * 1024, 8, 12, Replacement::Lru, Indexing::Direct),
            l3: CacheGeometry::new(
                16 * 1024 * 1024,
                16,
                24,
                Replacement::Srrip,
                Indexing::Keyed(l3_key),
            ),
            mem_latency: 145,
            flush_resident_latency: 30,
            flush_absent_latency: 10,
            flush_timing: FlushTiming::Variable,
            adt: None,
        }
    }

    /// Latency of an access served by the L3 (hit path).
    pub fn l3_hit_latency(&self) -> u64 {
        self.l1.hit_latency + self.l2.hit_latency + self.l3.hit_latency
    }

    /// Latency of an access served by memory (miss path).
    pub fn miss_latency(&self) -> u64 {
        self.l3_hit_latency() + self.mem_latency
    }
}

/// Hit/miss as seen by the machine's performance counters. Under mitigation
/// a zombie hit is deliberately counted as a miss.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Counted {
    Hit,
    Miss,
}

#[derive(Clone, Copy, Debug)]
pub struct AccessResponse {
    /// L3-level classification; `None` when the access was satisfied by the
    /// requesting core's L1 or L2.
    pub outcome: Option<AccessOutcome>,
    /// Cycles observed by the requesting core.
    pub latency: u64,
    pub counted_as: Counted,
    pub data: LineData,
}

#[derive(Clone, Copy, Default, PartialEq, Eq, Debug)]
pub struct CoreCounters {
    /// Accesses the performance counters saw as hits / misses.
    pub hits: u64,
    pub misses: u64,
    pub zombie_hits: u64,
    pub zombie_misses: u64,
    pub flushes: u64,
    /// Flushes that targeted a line whose Z-bit was already set.
    pub flushes_on_zombies: u64,
    pub dummy_mem_requests: u64,
}

impl CoreCounters {
    fn add(&mut self, other: &CoreCounters) {
        self.hits += other.hits;
        self.misses += other.misses;
        self.zombie_hits += other.zombie_hits;
        self.zombie_misses += other.zombie_misses;
        self.flushes += other.flushes;
        self.flushes_on_zombies += other.flushes_on_zombies;
        self.dummy_mem_requests += other.dummy_mem_requests;
    }
}

#[derive(Clone, Default, PartialEq, Eq, Debug)]
pub struct StatsCounters {
    pub per_core: Vec<CoreCounters>,
}

impl StatsCounters {
    pub fn total(&self) -> CoreCounters {
        let mut t = CoreCounters::default();
        for c in &self.per_core {
            t.add(c);
        }
        t
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OpKind {
    Read,
    Write,
    Flush,
    NtStore,
}

impl OpKind {
    pub fn label(self) -> &'static str {
        match self {
            OpKind::Read => "read",
            OpKind::Write => "write",
            OpKind::Flush => "clflush",
            OpKind::NtStore => "nt_store",
        }
    }
}

/// One entry of the serializable run log.
#[derive(Clone, Copy, Debug)]
pub struct LogRecord {
    pub cycle: u64,
    pub core: CoreId,
    pub op: OpKind,
    pub addr: LineAddr,
    pub outcome: &'static str,
    pub latency: u64,
}

pub struct Hierarchy {
    cfg: HierarchyConfig,
    l1: Vec<Cache>,
    l2: Vec<Cache>,
    l3: Cache,
    /// Flat backing memory; absent entries read as all-zero lines.
    memory: HashMap<LineAddr, LineData>,
    now: u64,
    stats: StatsCounters,
    adt: Option<crate::adt::Adt>,
    log: Option<Vec<LogRecord>>,
}

impl Hierarchy {
    pub fn new(cfg: HierarchyConfig) -> Self {
        assert!(cfg.cores > 0, "need at least one core");
        let adt = cfg.adt.map(|s| {
            crate::adt::Adt::new(AdtConfig {
                cores: cfg.cores,
                decay_period_cycles: s.decay_period_cycles,
                count_flush_on_zombie: s.count_flush_on_zombie,
            })
        });
        Hierarchy {
            l1: (0..cfg.cores).map(|_| Cache::new(cfg.l1)).collect(),
            l2: (0..cfg.cores).map(|_| Cache::new(cfg.l2)).collect(),
            l3: Cache::new(cfg.l3),
            memory: HashMap::new(),
            now: 0,
            stats: StatsCounters {
                per_core: vec![CoreCounters::default(); cfg.cores],
            },
            adt,
            log: None,
            cfg,
        }
    }

    pub fn config(&self) -> &HierarchyConfig {
        &self.cfg
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn snapshot_stats(&self) -> StatsCounters {
        self.stats.clone()
    }

    pub fn alarms(&self) -> &[Alarm] {
        self.adt.as_ref().map_or(&[], |a| a.alarms())
    }

    pub fn adt(&self) -> Option<&crate::adt::Adt> {
        self.adt.as_ref()
    }

    /// L3 state inspection for tests and reports.
    pub fn l3(&self) -> &Cache {
        &self.l3
    }

    pub fn set_logging(&mut self, on: bool) {
        if on {
            self.log.get_or_insert_with(Vec::new);
        } else {
            self.log = None;
        }
    }

    pub fn take_log(&mut self) -> Vec<LogRecord> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn memory_line(&self, addr: LineAddr) -> LineData {
        self.memory.get(&addr).copied().unwrap_or(ZERO_LINE)
    }

    /// Whether backing memory has ever been written at this line (by a
    /// writeback or non-temporal store).
    pub fn memory_contains(&self, addr: LineAddr) -> bool {
        self.memory.contains_key(&addr)
    }

    /// Writes back every dirty L3 line; returns how many lines drained.
    pub fn writeback_all(&mut self) -> usize {
        let drained = self.l3.drain_dirty();
        let n = drained.len();
        for (addr, data) in drained {
            self.memory.insert(addr, data);
        }
        n
    }

    fn record(&mut self, rec: LogRecord) {
        if let Some(log) = self.log.as_mut() {
            log.push(rec);
        }
    }

    /// Removes the line from every core's private caches (coherence-style:
    /// no zombie is created). L1/L2 are write-through, so never dirty.
    fn invalidate_private_all(&mut self, addr: LineAddr) {
        for core in 0..self.cfg.cores {
            self.l1[core].invalidate(addr);
            self.l2[core].invalidate(addr);
        }
    }

    /// Installs `data` for `addr` into one private cache, evicting silently.
    fn fill_level(cache: &mut Cache, addr: LineAddr, data: LineData) {
        let set = cache.set_index(addr);
        let probe = cache.probe(addr, false).expect("private set corruption");
        if let (AccessOutcome::NormalHit, Some(way)) = (probe.outcome, probe.way) {
            cache.touch_hit(set, way);
            cache.write_update(set, way, data, false);
            return;
        }
        let way = cache.select_victim(set);
        cache.evict(set, way);
        cache.install(set, way, addr, data, false);
    }

    fn fill_private(&mut self, core: CoreId, addr: LineAddr, data: LineData) {
        Self::fill_level(&mut self.l2[core], addr, data);
        Self::fill_level(&mut self.l1[core], addr, data);
    }

    /// Frees an L3 way: back-invalidates private copies of a valid victim
    /// (inclusion) and writes back dirty data.
    fn evict_from_l3(&mut self, set: usize, way: usize) {
        if let Some(evicted) = self.l3.evict(set, way) {
            if evicted.was_valid {
                self.invalidate_private_all(evicted.addr);
            }
            if let Some(data) = evicted.writeback {
                self.memory.insert(evicted.addr, data);
            }
        }
    }

    /// Shared L3 leg of both loads and stores. `store` carries the data a
    /// store wants to leave in the line; loads pass `None` and get the
    /// line's data back. Returns (extra latency beyond the L3 hit path,
    /// outcome, counted_as, data).
    fn l3_access(
        &mut self,
        core: CoreId,
        addr: LineAddr,
        store: Option<LineData>,
    ) -> (u64, AccessOutcome, Counted, LineData) {
        let set = self.l3.set_index(addr);
        let probe = self.l3.probe(addr, true).expect("L3 set corruption");
        let is_store = store.is_some();
        match probe.outcome {
            AccessOutcome::NormalHit => {
                let way = probe.way.unwrap();
                self.l3.touch_hit(set, way);
                let data = if let Some(new) = store {
                    self.l3.write_update(set, way, new, true);
                    new
                } else {
                    self.l3.line(set, way).unwrap().data
                };
                self.stats.per_core[core].hits += 1;
                (0, AccessOutcome::NormalHit, Counted::Hit, data)
            }
            AccessOutcome::ZombieHit => {
                let way = probe.way.unwrap();
                let same_core_flusher = self.l3.line(set, way).unwrap().fcid == Some(core);
                let (extra, outcome, counted) = match self.cfg.mode {
                    Mode::Baseline => {
                        self.stats.per_core[core].hits += 1;
                        self.stats.per_core[core].zombie_hits += 1;
                        (0, AccessOutcome::ZombieHit, Counted::Hit)
                    }
                    Mode::Zbmx if same_core_flusher => {
                        // The flushing core takes its line back: Z clears and
                        // the access is an ordinary hit.
                        self.l3.clear_zombie(set, way);
                        self.stats.per_core[core].hits += 1;
                        (0, AccessOutcome::NormalHit, Counted::Hit)
                    }
                    Mode::Zbm | Mode::Zbmx => {
                        // Dummy memory request: data discarded, latency and
                        // performance counters match a zombie miss.
                        self.stats.per_core[core].misses += 1;
                        self.stats.per_core[core].zombie_hits += 1;
                        self.stats.per_core[core].dummy_mem_requests += 1;
                        (
                            self.cfg.mem_latency,
                            AccessOutcome::ZombieHit,
                            Counted::Miss,
                        )
                    }
                };
                self.l3.touch_hit(set, way);
                let data = if let Some(new) = store {
                    self.l3.write_update(set, way, new, true);
                    new
                } else {
                    self.l3.line(set, way).unwrap().data
                };
                (extra, outcome, counted, data)
            }
            AccessOutcome::ZombieMiss => {
                let way = probe.way.unwrap();
                let flusher = self
                    .l3
                    .line(set, way)
                    .unwrap()
                    .fcid
                    .expect("zombie sans fcid");
                let incoming = store.unwrap_or_else(|| self.memory_line(addr));
                let kept = self.l3.install_on_zombie_miss(set, way, incoming);
                if kept && self.cfg.mode == Mode::Zbmx && flusher == core {
                    self.l3.clear_zombie(set, way);
                }
                if is_store {
                    self.l3.write_update(set, way, incoming, true);
                }
                self.stats.per_core[core].misses += 1;
                self.stats.per_core[core].zombie_misses += 1;
                if let Some(adt) = self.adt.as_mut() {
                    adt.record_zombie_miss(self.now, flusher, core);
                }
                (
                    self.cfg.mem_latency,
                    AccessOutcome::ZombieMiss,
                    Counted::Miss,
                    incoming,
                )
            }
            AccessOutcome::NormalMiss => {
                let data = store.unwrap_or_else(|| self.memory_line(addr));
                let way = self.l3.select_victim(set);
                self.evict_from_l3(set, way);
                self.l3.install(set, way, addr, data, is_store);
                self.stats.per_core[core].misses += 1;
                (
                    self.cfg.mem_latency,
                    AccessOutcome::NormalMiss,
                    Counted::Miss,
                    data,
                )
            }
        }
    }

    fn access(&mut self, core: CoreId, addr: LineAddr, store: Option<LineData>) -> AccessResponse {
        assert!(core < self.cfg.cores, "core {core} out of range");
        let addr = LineAddr::new(addr.value());
        let start = self.now;
        let op = if store.is_some() {
            OpKind::Write
        } else {
            OpKind::Read
        };
        let is_store = store.is_some();

        let response = 'serve: {
            // L1 leg.
            let mut latency = self.cfg.l1.hit_latency;
            let l1 = &mut self.l1[core];
            let l1_set = l1.set_index(addr);
            let l1_probe = l1.probe(addr, false).expect("L1 set corruption");
            if let (AccessOutcome::NormalHit, Some(way)) = (l1_probe.outcome, l1_probe.way) {
                l1.touch_hit(l1_set, way);
                let data = if let Some(new) = store {
                    l1.write_update(l1_set, way, new, false);
                    new
                } else {
                    l1.line(l1_set, way).unwrap().data
                };
                if is_store {
                    self.write_through(core, addr, data);
                }
                self.stats.per_core[core].hits += 1;
                break 'serve AccessResponse {
                    outcome: None,
                    latency,
                    counted_as: Counted::Hit,
                    data,
                };
            }

            // L2 leg.
            latency += self.cfg.l2.hit_latency;
            let l2 = &mut self.l2[core];
            let l2_set = l2.set_index(addr);
            let l2_probe = l2.probe(addr, false).expect("L2 set corruption");
            if let (AccessOutcome::NormalHit, Some(way)) = (l2_probe.outcome, l2_probe.way) {
                l2.touch_hit(l2_set, way);
                let data = if let Some(new) = store {
                    l2.write_update(l2_set, way, new, false);
                    new
                } else {
                    l2.line(l2_set, way).unwrap().data
                };
                Self::fill_level(&mut self.l1[core], addr, data);
                if is_store {
                    self.write_through(core, addr, data);
                }
                self.stats.per_core[core].hits += 1;
                break 'serve AccessResponse {
                    outcome: None,
                    latency,
                    counted_as: Counted::Hit,
                    data,
                };
            }

            // L3 leg.
            latency += self.cfg.l3.hit_latency;
            let (extra, outcome, counted, data) = self.l3_access(core, addr, store);
            latency += extra;
            let fills = matches!(outcome, AccessOutcome::NormalHit | AccessOutcome::ZombieHit);
            if fills {
                self.fill_private(core, addr, data);
            }
            if is_store {
                self.invalidate_other_private(core, addr);
            }
            AccessResponse {
                outcome: Some(outcome),
                latency,
                counted_as: counted,
                data,
            }
        };

        self.record(LogRecord {
            cycle: start,
            core,
            op,
            addr,
            outcome: response.outcome.map_or("private_hit", |o| o.label()),
            latency: response.latency,
        });
        self.now += response.latency;
        response
    }

    /// Store propagation when the store was satisfied above the L3: the L3
    /// copy (guaranteed valid by inclusion) updates in place — clearing Z on
    /// a data change, turning dirty — and other cores' private copies are
    /// invalidated. No extra latency: this models the write-through buffer.
    fn write_through(&mut self, core: CoreId, addr: LineAddr, data: LineData) {
        let set = self.l3.set_index(addr);
        let probe = self.l3.probe(addr, true).expect("L3 set corruption");
        debug_assert!(
            matches!(
                probe.outcome,
                AccessOutcome::NormalHit | AccessOutcome::ZombieHit
            ),
            "inclusion: private hit implies valid L3 line"
        );
        if let Some(way) = probe.way {
            self.l3.write_update(set, way, data, true);
        }
        self.invalidate_other_private(core, addr);
    }

    fn invalidate_other_private(&mut self, core: CoreId, addr: LineAddr) {
        for other in 0..self.cfg.cores {
            if other != core {
                self.l1[other].invalidate(addr);
                self.l2[other].invalidate(addr);
            }
        }
    }

    pub fn read(&mut self, core: CoreId, addr: LineAddr) -> AccessResponse {
        self.access(core, addr, None)
    }

    pub fn write(&mut self, core: CoreId, addr: LineAddr, data: LineData) -> AccessResponse {
        self.access(core, addr, Some(data))
    }

    /// Flush-caused invalidation of one line from the whole hierarchy.
    /// Private copies invalidate without zombie-marking; the L3 copy becomes
    /// (or stays) a zombie recording `core` as the flusher.
    pub fn clflush(&mut self, core: CoreId, addr: LineAddr) -> u64 {
        assert!(core < self.cfg.cores, "core {core} out of range");
        let addr = LineAddr::new(addr.value());
        let start = self.now;

        let set = self.l3.set_index(addr);
        let pre = self.l3.probe(addr, true).expect("L3 set corruption");
        let (was_valid, had_zombie) = match (pre.outcome, pre.way) {
            (_, Some(way)) => {
                let line = self.l3.line(set, way).unwrap();
                (line.valid, line.zombie)
            }
            _ => (false, false),
        };

        let latency = match self.cfg.flush_timing {
            FlushTiming::Constant => self.cfg.flush_resident_latency,
            FlushTiming::Variable if was_valid => self.cfg.flush_resident_latency,
            FlushTiming::Variable => self.cfg.flush_absent_latency,
            FlushTiming::ZombieGated if was_valid || had_zombie => self.cfg.flush_resident_latency,
            FlushTiming::ZombieGated => self.cfg.flush_absent_latency,
        };

        self.invalidate_private_all(addr);
        let outcome = self.l3.flush(addr, core);
        self.stats.per_core[core].flushes += 1;
        let (label, zombie_target) = match outcome {
            FlushOutcome::Absent => ("absent", None),
            FlushOutcome::Invalidated {
                writeback,
                prior_zombie_fcid,
            } => {
                if let Some(data) = writeback {
                    self.memory.insert(addr, data);
                }
                ("invalidated", prior_zombie_fcid)
            }
            FlushOutcome::RepeatOnZombie { prior_fcid } => ("repeat_on_zombie", Some(prior_fcid)),
        };
        if let Some(prior) = zombie_target {
            self.stats.per_core[core].flushes_on_zombies += 1;
            if let Some(adt) = self.adt.as_mut() {
                adt.record_flush_on_zombie(self.now, core, prior);
            }
        }

        self.record(LogRecord {
            cycle: start,
            core,
            op: OpKind::Flush,
            addr,
            outcome: label,
            latency,
        });
        self.now += latency;
        latency
    }

    /// Non-temporal store: memory is written directly; a cached L3 copy
    /// (valid or invalid zombie) updates in place — clearing Z on a data
    /// change — without eviction or allocation. Private copies invalidate.
    /// Charged a flat memory latency.
    pub fn nt_store(&mut self, core: CoreId, addr: LineAddr, data: LineData) -> u64 {
        assert!(core < self.cfg.cores, "core {core} out of range");
        let addr = LineAddr::new(addr.value());
        let start = self.now;
        self.memory.insert(addr, data);

        let set = self.l3.set_index(addr);
        let probe = self.l3.probe(addr, true).expect("L3 set corruption");
        let label = match (probe.outcome, probe.way) {
            (
                AccessOutcome::NormalHit | AccessOutcome::ZombieHit | AccessOutcome::ZombieMiss,
                Some(way),
            ) => {
                self.l3.write_update(set, way, data, false);
                "in_place_update"
            }
            _ => "memory_only",
        };
        self.invalidate_private_all(addr);

        let latency = self.cfg.mem_latency;
        self.record(LogRecord {
            cycle: start,
            core,
            op: OpKind::NtStore,
            addr,
            outcome: label,
            latency,
        });
        self.now += latency;
        latency
    }
}
