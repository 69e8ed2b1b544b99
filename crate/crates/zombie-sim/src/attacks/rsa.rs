//! Spying on a square-and-multiply exponentiation loop.
//!
//! The victim processes its key one bit per round: it always executes the
//! squaring routine, and additionally the multiply routine when the bit is
//! set. The spy flush-reloads the two routines' entry-point lines every
//! round; a hit sequence of SQR followed by MUL decodes to a 1-bit, SQR
//! followed by another SQR to a 0-bit.

use std::error::Error;
use std::fmt;

use super::{
    default_hit_threshold, spy_probe, AttackKind, AttackReport, Inferred, RsaProbe, SpyConfig,
    TimelineHit,
};
use crate::cache::{CoreId, LineAddr};
use crate::hierarchy::Hierarchy;

const SQR_ENTRY_LINE: u64 = 0x2000;
const MUL_ENTRY_LINE: u64 = 0x2100;
/// Instruction lines each routine touches beyond its entry point.
const FILLER_LINES: u64 = 16;

pub fn sqr_entry_addr() -> LineAddr {
    LineAddr::from_line_number(SQR_ENTRY_LINE)
}

pub fn mul_entry_addr() -> LineAddr {
    LineAddr::from_line_number(MUL_ENTRY_LINE)
}

#[derive(Clone, Debug)]
pub struct RsaParams {
    /// Exponent bits, most significant first.
    pub key: Vec<bool>,
    pub victim_core: CoreId,
    pub spy_core: CoreId,
}

impl RsaParams {
    pub fn new(key: Vec<bool>) -> Self {
        RsaParams {
            key,
            victim_core: 0,
            spy_core: 1,
        }
    }
}

/// The reference secret: every eighth bit set, the rest clear.
pub fn every_eighth_bit_key(bits: usize) -> Vec<bool> {
    (0..bits).map(|i| i % 8 == 7).collect()
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct RsaKeyError {
    pub bits: usize,
}

impl fmt::Display for RsaKeyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RSA key must be at least 8 bits, got {}", self.bits)
    }
}

impl Error for RsaKeyError {}

fn run_routine(sim: &mut Hierarchy, core: CoreId, entry_line: u64) {
    sim.read(core, LineAddr::from_line_number(entry_line));
    for i in 1..=FILLER_LINES {
        sim.read(core, LineAddr::from_line_number(entry_line + i));
    }
}

/// Drops spy hits that repeat MUL without an intervening SQR; on real
/// hardware the multiply routine's duration can straddle two probe rounds.
fn filter_duplicate_muls(timeline: &[TimelineHit]) -> Vec<TimelineHit> {
    let mut out: Vec<TimelineHit> = Vec::with_capacity(timeline.len());
    for &hit in timeline {
        if hit.probe == RsaProbe::Mul && out.last().map(|h| h.probe) == Some(RsaProbe::Mul) {
            continue;
        }
        out.push(hit);
    }
    out
}

/// Decodes bits from a filtered hit sequence: each SQR hit contributes one
/// bit — 1 when the next hit is MUL, 0 otherwise.
fn decode_bits(filtered: &[TimelineHit]) -> Vec<bool> {
    filtered
        .iter()
        .enumerate()
        .filter(|(_, h)| h.probe == RsaProbe::Sqr)
        .map(|(i, _)| filtered.get(i + 1).map(|h| h.probe) == Some(RsaProbe::Mul))
        .collect()
}

pub fn run_rsa_attack(sim: &mut Hierarchy, p: &RsaParams) -> Result<AttackReport, RsaKeyError> {
    if p.key.len() < 8 {
        return Err(RsaKeyError { bits: p.key.len() });
    }
    let spy = SpyConfig {
        probe_addrs: vec![sqr_entry_addr(), mul_entry_addr()],
        wait_interval: 1, // one exponent bit per flush-reload round
        hit_threshold: default_hit_threshold(sim.config()),
        rounds: p.key.len(),
    };
    spy.validate(sim.config());

    // The victim is already mid-run when the spy attaches: both routines
    // are resident, so every spy flush lands on a cached line.
    run_routine(sim, p.victim_core, SQR_ENTRY_LINE);
    run_routine(sim, p.victim_core, MUL_ENTRY_LINE);

    let mut timeline = Vec::new();
    for &bit in &p.key {
        for &addr in &spy.probe_addrs {
            sim.clflush(p.spy_core, addr);
        }
        run_routine(sim, p.victim_core, SQR_ENTRY_LINE);
        if bit {
            run_routine(sim, p.victim_core, MUL_ENTRY_LINE);
        }
        for (probe, addr) in [
            (RsaProbe::Sqr, sqr_entry_addr()),
            (RsaProbe::Mul, mul_entry_addr()),
        ] {
            let cycle = sim.now();
            if spy_probe(sim, p.spy_core, addr, spy.hit_threshold) == Inferred::Hit {
                timeline.push(TimelineHit { cycle, probe });
            }
        }
    }

    let decoded = decode_bits(&filter_duplicate_muls(&timeline));
    let matches = decoded.iter().zip(&p.key).filter(|(d, k)| d == k).count();
    let recovered = matches as f64 / p.key.len() as f64;

    Ok(AttackReport {
        timeline: Some(timeline),
        decoded_bits: Some(decoded),
        recovered_bits: Some(recovered),
        accuracy: Some(recovered),
        ..AttackReport::empty(AttackKind::Rsa)
    })
}
