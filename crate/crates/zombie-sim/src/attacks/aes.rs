//! Chosen-plaintext attack on a table-driven AES victim.
//!
//! The victim's first encryption round reads T-table entries indexed by
//! x_i = p_i XOR k_i; each table line holds 16 entries, so a spy that
//! learns which *line* x_0 touched recovers the upper nibble of k_0. The
//! spy fixes p_0, randomizes the other plaintext bytes, and flush-reloads
//! all 16 table lines once per encryption: flush, let the first round run,
//! reload, then let the remaining rounds run as background noise. The
//! argmax line per p_0 value traces out the recovered-nibble staircase.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::{
    default_hit_threshold, spy_probe, AesHeatmap, AttackKind, AttackReport, Inferred, SpyConfig,
};
use crate::cache::{CoreId, LineAddr};
use crate::hierarchy::Hierarchy;

/// One 1 KiB T-table: 256 four-byte entries over 16 cache lines.
pub const TABLE_LINES: usize = 16;
pub const ENTRIES_PER_LINE: usize = 16;
const ROUNDS_PER_ENCRYPTION: usize = 10;
const ACCESSES_PER_ROUND: usize = 16;
const TABLE_BASE_LINE: u64 = 0x1000;

pub fn table_line_addr(index: usize) -> LineAddr {
    LineAddr::from_line_number(TABLE_BASE_LINE + index as u64)
}

#[derive(Clone, Copy, Debug)]
pub struct AesParams {
    /// k_0, the key byte under attack.
    pub key_byte: u8,
    pub plaintexts_per_p0: u32,
    /// Victim operations between the spy's flush and reload phases. The
    /// default of 16 aligns the reload to the end of the first round, where
    /// the chosen-plaintext signal lives.
    pub wait_interval: usize,
    pub victim_core: CoreId,
    pub spy_core: CoreId,
    pub seed: u64,
}

impl AesParams {
    pub fn new(key_byte: u8, plaintexts_per_p0: u32, seed: u64) -> Self {
        AesParams {
            key_byte,
            plaintexts_per_p0,
            wait_interval: ACCESSES_PER_ROUND,
            victim_core: 0,
            spy_core: 1,
            seed,
        }
    }
}

pub fn run_aes_attack(sim: &mut Hierarchy, p: &AesParams) -> AttackReport {
    let spy = SpyConfig {
        probe_addrs: (0..TABLE_LINES).map(table_line_addr).collect(),
        wait_interval: p.wait_interval,
        hit_threshold: default_hit_threshold(sim.config()),
        rounds: 256 * p.plaintexts_per_p0 as usize,
    };
    spy.validate(sim.config());

    let mut rng = ChaCha12Rng::seed_from_u64(p.seed);
    // Full victim key: the attacked byte plus fixed pseudorandom others.
    let mut key = [0u8; 16];
    rng.fill(&mut key);
    key[0] = p.key_byte;

    let mut counts = vec![[0u64; TABLE_LINES]; 256];
    for p0 in 0..=255u8 {
        for _ in 0..p.plaintexts_per_p0 {
            // The victim's table-line access sequence for one encryption:
            // round 1 is the keyed plaintext mix, rounds 2..10 are modeled
            // as pseudorandom table touches.
            let mut accesses = Vec::with_capacity(ROUNDS_PER_ENCRYPTION * ACCESSES_PER_ROUND);
            for (i, &k) in key.iter().enumerate() {
                let p_i = if i == 0 { p0 } else { rng.gen() };
                accesses.push(((p_i ^ k) as usize) / ENTRIES_PER_LINE);
            }
            for _ in 0..(ROUNDS_PER_ENCRYPTION - 1) * ACCESSES_PER_ROUND {
                accesses.push(rng.gen_range(0..TABLE_LINES));
            }

            for &addr in &spy.probe_addrs {
                sim.clflush(p.spy_core, addr);
            }
            let (observed, background) = accesses.split_at(spy.wait_interval.min(accesses.len()));
            for &line in observed {
                sim.read(p.victim_core, table_line_addr(line));
            }
            for (j, &addr) in spy.probe_addrs.iter().enumerate() {
                if spy_probe(sim, p.spy_core, addr, spy.hit_threshold) == Inferred::Hit {
                    counts[p0 as usize][j] += 1;
                }
            }
            for &line in background {
                sim.read(p.victim_core, table_line_addr(line));
            }
        }
    }

    let recovered_nibbles: Vec<u8> = counts
        .iter()
        .map(|row| {
            let mut best = 0usize;
            for (j, &c) in row.iter().enumerate() {
                if c > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect();
    let correct = recovered_nibbles
        .iter()
        .enumerate()
        .filter(|&(p0, &nib)| nib == (p0 as u8 ^ p.key_byte) >> 4)
        .count();

    AttackReport {
        heatmap: Some(AesHeatmap {
            counts,
            recovered_nibbles,
        }),
        accuracy: Some(correct as f64 / 256.0),
        ..AttackReport::empty(AttackKind::Aes)
    }
}
