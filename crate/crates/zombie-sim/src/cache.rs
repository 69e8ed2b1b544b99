//! Set-associative cache engine with zombie-line tracking.
//!
//! A *zombie* is a line that was invalidated by a flush-caused invalidation
//! (FCI, i.e. an explicit `clflush`) while its tag and data stay physically
//! resident. Each line carries a Z-bit that is set only by FCI — never by
//! coherence-style invalidation — and cleared only when the line's tag or
//! data change. Lookups classify every access by (Z, V, tag-match):
//!
//! | Z | V | tag match | outcome     |
//! |---|---|-----------|-------------|
//! | - | - | no        | normal miss |
//! | 0 | 0 | yes       | normal miss |
//! | 0 | 1 | yes       | normal hit  |
//! | 1 | 0 | yes       | zombie miss |
//! | 1 | 1 | yes       | zombie hit  |
//!
//! Replacement ranks invalid zombies exactly as if they were valid — they
//! are not treated as free slots — so a flushed line leaves the cache at the
//! step its pre-flush recency would have evicted it anyway. A zombie miss
//! reinstalls into the zombie's own way and keeps the Z-bit only when the
//! incoming data equals the resident data.

use std::error::Error;
use std::fmt;

pub const LINE_SIZE: u64 = 64;

/// Full contents of one cache line.
pub type LineData = [u8; LINE_SIZE as usize];

/// Identifies one core of the simulated machine.
pub type CoreId = usize;

pub const ZERO_LINE: LineData = [0u8; LINE_SIZE as usize];

/// A byte address aligned down to its 64-byte line.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LineAddr(u64);

impl LineAddr {
    pub fn new(addr: u64) -> Self {
        LineAddr(addr & !(LINE_SIZE - 1))
    }

    pub fn from_line_number(n: u64) -> Self {
        LineAddr(n * LINE_SIZE)
    }

    pub fn line_number(self) -> u64 {
        self.0 / LINE_SIZE
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Debug for LineAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LineAddr(0x{:x})", self.0)
    }
}

impl fmt::Display for LineAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:x}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Replacement {
    Lru,
    Srrip,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Indexing {
    /// Set index = line number mod number of sets.
    Direct,
    /// Set index = keyed pseudorandom permutation of the line number,
    /// reduced mod number of sets. Same key + same address → same set.
    Keyed(u64),
}

#[derive(Clone, Copy, Debug)]
pub struct CacheGeometry {
    pub num_sets: usize,
    pub ways: usize,
    pub hit_latency: u64,
    pub replacement: Replacement,
    pub indexing: Indexing,
}

/// Number of sets implied by a capacity/associativity pair, if the division
/// is exact and yields a power of two.
pub fn sets_for_capacity(capacity_bytes: u64, ways: usize) -> Option<usize> {
    if ways == 0 {
        return None;
    }
    let lines = capacity_bytes / LINE_SIZE;
    if lines * LINE_SIZE != capacity_bytes || lines % ways as u64 != 0 {
        return None;
    }
    let sets = (lines / ways as u64) as usize;
    if sets > 0 && sets.is_power_of_two() {
        Some(sets)
    } else {
        None
    }
}

impl CacheGeometry {
    pub fn new(
        capacity_bytes: u64,
        ways: usize,
        hit_latency: u64,
        replacement: Replacement,
        indexing: Indexing,
    ) -> Self {
        let num_sets = sets_for_capacity(capacity_bytes, ways).unwrap_or_else(|| {
            panic!(
                "cache capacity {capacity_bytes} B / {ways} ways does not give a power-of-two set count"
            )
        });
        CacheGeometry {
            num_sets,
            ways,
            hit_latency,
            replacement,
            indexing,
        }
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.num_sets as u64 * self.ways as u64 * LINE_SIZE
    }

    pub fn set_index(&self, addr: LineAddr) -> usize {
        let n = addr.line_number();
        match self.indexing {
            Indexing::Direct => (n % self.num_sets as u64) as usize,
            Indexing::Keyed(key) => (feistel_permute(n, key) % self.num_sets as u64) as usize,
        }
    }
}

/// Finalizer from the splitmix64 generator; a good 64-bit mixing function.
fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// 3-round Feistel permutation of the 64-bit line-number space. A Feistel
/// network is a bijection for any round function, so distinct line numbers
/// always map to distinct outputs.
pub(crate) fn feistel_permute(n: u64, key: u64) -> u64 {
    let mut left = (n >> 32) as u32;
    let mut right = n as u32;
    for round in 0..3u64 {
        let round_key = mix64(key ^ mix64(round));
        let f = (mix64(right as u64 ^ round_key) >> 32) as u32;
        let next_right = left ^ f;
        left = right;
        right = next_right;
    }
    ((left as u64) << 32) | right as u64
}

/// Access classification of one lookup.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AccessOutcome {
    NormalHit,
    NormalMiss,
    ZombieMiss,
    ZombieHit,
}

impl AccessOutcome {
    pub fn label(self) -> &'static str {
        match self {
            AccessOutcome::NormalHit => "normal_hit",
            AccessOutcome::NormalMiss => "normal_miss",
            AccessOutcome::ZombieMiss => "zombie_miss",
            AccessOutcome::ZombieHit => "zombie_hit",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Probe {
    pub outcome: AccessOutcome,
    /// Way whose tag matched; None only for a match-free normal miss.
    pub way: Option<usize>,
}

/// Internal-corruption report: two ways of one set claim the same tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorruptSet {
    pub set: usize,
    pub tag: u64,
}

impl fmt::Display for CorruptSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cache corruption: duplicate tag 0x{:x} in set {}",
            self.tag, self.set
        )
    }
}

impl Error for CorruptSet {}

/// One way of one set. The slot around it being `None` means the way has
/// never held a line (or was freed by eviction).
#[derive(Clone, Debug)]
pub struct CacheLine {
    pub tag: u64,
    pub valid: bool,
    pub zombie: bool,
    pub dirty: bool,
    /// Core whose flush last turned this line into a zombie; tracked iff
    /// the Z-bit is set.
    pub fcid: Option<CoreId>,
    pub data: LineData,
    /// Replacement metadata: recency stamp under LRU (higher = newer),
    /// re-reference prediction value under SRRIP (0..=3).
    pub repl: u64,
}

pub const SRRIP_MAX: u64 = 3;
pub const SRRIP_INSERT: u64 = 2;

/// Outcome of a flush-caused invalidation attempt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FlushOutcome {
    /// No valid or zombie line with this tag; nothing happened.
    Absent,
    /// A valid line became an invalid zombie. `writeback` carries the data
    /// if the line was dirty; `prior_zombie_fcid` is the previous flusher
    /// when the line was already a (valid) zombie.
    Invalidated {
        writeback: Option<LineData>,
        prior_zombie_fcid: Option<CoreId>,
    },
    /// Repeat flush of an invalid zombie: Z stays set, flusher id updated.
    RepeatOnZombie { prior_fcid: CoreId },
}

/// Line removed from a set, with its writeback obligation if dirty.
#[derive(Clone, Debug)]
pub struct Evicted {
    pub addr: LineAddr,
    pub was_valid: bool,
    pub writeback: Option<LineData>,
}

pub struct Cache {
    geometry: CacheGeometry,
    sets: Vec<Vec<Option<CacheLine>>>,
    /// Monotone clock for LRU recency stamps.
    tick: u64,
}

impl Cache {
    pub fn new(geometry: CacheGeometry) -> Self {
        let sets = (0..geometry.num_sets)
            .map(|_| vec![None; geometry.ways])
            .collect();
        Cache {
            geometry,
            sets,
            tick: 0,
        }
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    pub fn set_index(&self, addr: LineAddr) -> usize {
        self.geometry.set_index(addr)
    }

    /// The full line number serves as the tag: with keyed indexing the set
    /// is a hash of the address, so only the whole line number uniquely
    /// identifies a line and lets eviction reconstruct its address.
    pub fn tag_of(addr: LineAddr) -> u64 {
        addr.line_number()
    }

    pub fn addr_of_tag(tag: u64) -> LineAddr {
        LineAddr::from_line_number(tag)
    }

    pub fn line(&self, set: usize, way: usize) -> Option<&CacheLine> {
        self.sets[set][way].as_ref()
    }

    /// Replaces a slot wholesale. Intended for tests and workload setup that
    /// need to construct specific line states.
    pub fn put_line(&mut self, set: usize, way: usize, line: Option<CacheLine>) {
        self.sets[set][way] = line;
    }

    /// Classifies an access. With `include_invalid_zombies` the tag match is
    /// performed even for invalid lines (zombie or residue); without it the
    /// lookup behaves like a conventional cache and skips invalid lines.
    pub fn probe(
        &self,
        addr: LineAddr,
        include_invalid_zombies: bool,
    ) -> Result<Probe, CorruptSet> {
        let set = self.set_index(addr);
        let tag = Self::tag_of(addr);
        let mut found: Option<(usize, &CacheLine)> = None;
        for (way, slot) in self.sets[set].iter().enumerate() {
            let line = match slot {
                Some(line) => line,
                None => continue,
            };
            if line.tag != tag {
                continue;
            }
            if !include_invalid_zombies && !line.valid {
                continue;
            }
            if found.is_some() {
                return Err(CorruptSet { set, tag });
            }
            found = Some((way, line));
        }
        Ok(match found {
            None => Probe {
                outcome: AccessOutcome::NormalMiss,
                way: None,
            },
            Some((way, line)) => {
                let outcome = match (line.zombie, line.valid) {
                    (false, false) => AccessOutcome::NormalMiss,
                    (false, true) => AccessOutcome::NormalHit,
                    (true, false) => AccessOutcome::ZombieMiss,
                    (true, true) => AccessOutcome::ZombieHit,
                };
                Probe {
                    outcome,
                    way: Some(way),
                }
            }
        })
    }

    /// Recency/re-reference update for a hit.
    pub fn touch_hit(&mut self, set: usize, way: usize) {
        match self.geometry.replacement {
            Replacement::Lru => {
                self.tick += 1;
                let tick = self.tick;
                if let Some(line) = self.sets[set][way].as_mut() {
                    line.repl = tick;
                }
            }
            Replacement::Srrip => {
                if let Some(line) = self.sets[set][way].as_mut() {
                    line.repl = 0;
                }
            }
        }
    }

    fn touch_install(&mut self, set: usize, way: usize) {
        match self.geometry.replacement {
            Replacement::Lru => {
                self.tick += 1;
                let tick = self.tick;
                if let Some(line) = self.sets[set][way].as_mut() {
                    line.repl = tick;
                }
            }
            Replacement::Srrip => {
                if let Some(line) = self.sets[set][way].as_mut() {
                    line.repl = SRRIP_INSERT;
                }
            }
        }
    }

    /// Picks the way an install should evict. Invalid non-zombie ways are
    /// free slots and are preferred; invalid zombies are ranked by their
    /// (frozen) replacement metadata exactly as if they were valid, so a
    /// zombie is only chosen at its natural eviction point. Ties break to
    /// the lowest way index. Under SRRIP, the search ages the whole set
    /// until some line reaches the distant re-reference value.
    pub fn select_victim(&mut self, set: usize) -> usize {
        for (way, slot) in self.sets[set].iter().enumerate() {
            match slot {
                None => return way,
                Some(line) if !line.valid && !line.zombie => return way,
                _ => {}
            }
        }
        match self.geometry.replacement {
            Replacement::Lru => {
                let mut best = 0usize;
                let mut best_repl = u64::MAX;
                for (way, slot) in self.sets[set].iter().enumerate() {
                    let line = slot.as_ref().expect("full set");
                    if line.repl < best_repl {
                        best_repl = line.repl;
                        best = way;
                    }
                }
                best
            }
            Replacement::Srrip => loop {
                for (way, slot) in self.sets[set].iter().enumerate() {
                    if slot.as_ref().expect("full set").repl >= SRRIP_MAX {
                        return way;
                    }
                }
                for slot in self.sets[set].iter_mut() {
                    if let Some(line) = slot.as_mut() {
                        line.repl += 1;
                    }
                }
            },
        }
    }

    /// Removes a line, reporting its address and writeback obligation.
    pub fn evict(&mut self, set: usize, way: usize) -> Option<Evicted> {
        let line = self.sets[set][way].take()?;
        debug_assert!(!line.dirty || line.valid, "dirty implies valid");
        Some(Evicted {
            addr: Self::addr_of_tag(line.tag),
            was_valid: line.valid,
            writeback: (line.valid && line.dirty).then_some(line.data),
        })
    }

    /// Installs a fresh valid line into `way` (which the caller has freed or
    /// chosen for replacement). Clears any invalid non-zombie residue of the
    /// same tag elsewhere in the set so tags stay unique.
    pub fn install(&mut self, set: usize, way: usize, addr: LineAddr, data: LineData, dirty: bool) {
        let tag = Self::tag_of(addr);
        for (w, slot) in self.sets[set].iter_mut().enumerate() {
            if w == way {
                continue;
            }
            if let Some(line) = slot {
                if line.tag == tag {
                    debug_assert!(
                        !line.valid && !line.zombie,
                        "installing over a live duplicate tag"
                    );
                    *slot = None;
                }
            }
        }
        self.sets[set][way] = Some(CacheLine {
            tag,
            valid: true,
            zombie: false,
            dirty,
            fcid: None,
            data,
            repl: 0,
        });
        self.touch_install(set, way);
    }

    /// Fill for a miss whose set held an invalid zombie with this tag: the
    /// line goes back into the zombie's own way. The Z-bit survives exactly
    /// when the incoming data equals the resident data (the flush turned out
    /// to be unnecessary); otherwise zombie status and flusher id are
    /// dropped. Returns whether the zombie was kept.
    pub fn install_on_zombie_miss(&mut self, set: usize, way: usize, data: LineData) -> bool {
        let line = self.sets[set][way]
            .as_mut()
            .expect("zombie-miss install into empty way");
        debug_assert!(line.zombie && !line.valid, "way is not an invalid zombie");
        let kept = line.data == data;
        line.data = data;
        line.valid = true;
        line.dirty = false;
        line.zombie = kept;
        if !kept {
            line.fcid = None;
        }
        self.touch_install(set, way);
        kept
    }

    /// Flush-caused invalidation: a valid line keeps tag, data and
    /// replacement metadata but becomes an invalid zombie recording the
    /// flusher; dirty data is written back first. Re-flushing an invalid
    /// zombie only updates the flusher id. Anything else is a no-op.
    pub fn flush(&mut self, addr: LineAddr, flusher: CoreId) -> FlushOutcome {
        let set = self.set_index(addr);
        let tag = Self::tag_of(addr);
        for slot in self.sets[set].iter_mut() {
            let line = match slot {
                Some(line) if line.tag == tag && (line.valid || line.zombie) => line,
                _ => continue,
            };
            if line.valid {
                let writeback = line.dirty.then_some(line.data);
                let prior_zombie_fcid = line.fcid;
                line.valid = false;
                line.dirty = false;
                line.zombie = true;
                line.fcid = Some(flusher);
                return FlushOutcome::Invalidated {
                    writeback,
                    prior_zombie_fcid,
                };
            }
            let prior_fcid = line.fcid.expect("invalid zombie without flusher id");
            line.fcid = Some(flusher);
            return FlushOutcome::RepeatOnZombie { prior_fcid };
        }
        FlushOutcome::Absent
    }

    /// In-place data update (store write-through or non-temporal store).
    /// A data change clears zombie status; `mark_dirty` distinguishes the
    /// cached-store path (line owns newer data than memory) from the
    /// non-temporal path (memory was written alongside, line is clean).
    /// Returns whether the data changed.
    pub fn write_update(
        &mut self,
        set: usize,
        way: usize,
        data: LineData,
        mark_dirty: bool,
    ) -> bool {
        let line = self.sets[set][way]
            .as_mut()
            .expect("write_update on empty way");
        debug_assert!(line.valid || line.zombie, "write_update on dead residue");
        debug_assert!(
            !mark_dirty || line.valid,
            "store hit must be on a valid line"
        );
        let changed = line.data != data;
        if changed {
            line.data = data;
            line.zombie = false;
            line.fcid = None;
        }
        line.dirty = mark_dirty;
        changed
    }

    /// Coherence-style invalidation: never creates a zombie, and clears any
    /// zombie state the line had. Tag and data stay as inert residue.
    pub fn invalidate(&mut self, addr: LineAddr) -> Option<LineData> {
        let set = self.set_index(addr);
        let tag = Self::tag_of(addr);
        for slot in self.sets[set].iter_mut() {
            let line = match slot {
                Some(line) if line.tag == tag && (line.valid || line.zombie) => line,
                _ => continue,
            };
            let writeback = (line.valid && line.dirty).then_some(line.data);
            line.valid = false;
            line.zombie = false;
            line.fcid = None;
            line.dirty = false;
            return writeback;
        }
        None
    }

    /// Clears zombie status (and the flusher id with it) on one line.
    pub fn clear_zombie(&mut self, set: usize, way: usize) {
        if let Some(line) = self.sets[set][way].as_mut() {
            line.zombie = false;
            line.fcid = None;
        }
    }

    /// Writes back every dirty line and marks it clean; returns the drained
    /// (address, data) pairs.
    pub fn drain_dirty(&mut self) -> Vec<(LineAddr, LineData)> {
        let mut out = Vec::new();
        for set in self.sets.iter_mut() {
            for slot in set.iter_mut() {
                if let Some(line) = slot {
                    if line.valid && line.dirty {
                        line.dirty = false;
                        out.push((Self::addr_of_tag(line.tag), line.data));
                    }
                }
            }
        }
        out
    }

    /// Iterates every occupied (set, way, line) triple.
    pub fn occupied_lines(&self) -> impl Iterator<Item = (usize, usize, &CacheLine)> {
        self.sets.iter().enumerate().flat_map(|(s, ways)| {
            ways.iter()
                .enumerate()
                .filter_map(move |(w, slot)| slot.as_ref().map(|line| (s, w, line)))
        })
    }
}
