//! Watching which of several victim functions executes.
//!
//! The victim repeatedly calls one of four functions chosen by a secret
//! random draw. The spy flush-reloads each function's entry-point line
//! around every call and infers the callee when exactly one entry produces
//! a hit; otherwise it falls back to a uniform random guess.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::{
    default_hit_threshold, spy_probe, AttackKind, AttackReport, ConfusionMatrix, Inferred,
    SpyConfig,
};
use crate::cache::{CoreId, LineAddr};
use crate::hierarchy::Hierarchy;

pub const FUNCTIONS: usize = 4;
const ENTRY_BASE_LINE: u64 = 0x3000;
const ENTRY_STRIDE_LINES: u64 = 0x100;
/// Distinguishes the spy's guess stream from the victim's secret stream.
const SPY_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn entry_addr(f: usize) -> LineAddr {
    assert!(f < FUNCTIONS);
    LineAddr::from_line_number(ENTRY_BASE_LINE + f as u64 * ENTRY_STRIDE_LINES)
}

/// Instruction-footprint lines beyond the entry point; each function gets a
/// distinct size so the bodies are distinguishable in traces.
pub fn body_lines(f: usize) -> u64 {
    assert!(f < FUNCTIONS);
    96 + 32 * f as u64
}

/// Reads a function performs per call; distinct per function.
pub fn touches_per_call(f: usize) -> u64 {
    assert!(f < FUNCTIONS);
    5000 + 250 * f as u64
}

#[derive(Clone, Copy, Debug)]
pub struct FwParams {
    pub calls: u32,
    pub victim_core: CoreId,
    pub spy_core: CoreId,
    pub seed: u64,
}

impl FwParams {
    pub fn new(calls: u32, seed: u64) -> Self {
        FwParams {
            calls,
            victim_core: 0,
            spy_core: 1,
            seed,
        }
    }
}

fn call_function(sim: &mut Hierarchy, core: CoreId, f: usize) {
    let entry = entry_addr(f).line_number();
    sim.read(core, LineAddr::from_line_number(entry));
    let body = body_lines(f);
    for t in 0..touches_per_call(f) {
        sim.read(core, LineAddr::from_line_number(entry + 1 + t % body));
    }
}

pub fn run_function_watcher(sim: &mut Hierarchy, p: &FwParams) -> AttackReport {
    let spy = SpyConfig {
        probe_addrs: (0..FUNCTIONS).map(entry_addr).collect(),
        wait_interval: 1, // one victim call per flush-reload round
        hit_threshold: default_hit_threshold(sim.config()),
        rounds: p.calls as usize,
    };
    spy.validate(sim.config());

    let mut secrets = ChaCha12Rng::seed_from_u64(p.seed);
    let mut guesses = ChaCha12Rng::seed_from_u64(p.seed ^ SPY_STREAM_SALT);
    let mut confusion = ConfusionMatrix::default();
    let mut correct = 0u64;

    for _ in 0..p.calls {
        for &addr in &spy.probe_addrs {
            sim.clflush(p.spy_core, addr);
        }
        let secret = secrets.gen_range(0..FUNCTIONS);
        call_function(sim, p.victim_core, secret);

        let hits: Vec<usize> = (0..FUNCTIONS)
            .filter(|&f| {
                spy_probe(sim, p.spy_core, entry_addr(f), spy.hit_threshold) == Inferred::Hit
            })
            .collect();
        let inferred = match hits.as_slice() {
            [one] => *one,
            _ => guesses.gen_range(0..FUNCTIONS),
        };
        confusion.counts[secret][inferred] += 1;
        if inferred == secret {
            correct += 1;
        }
    }

    let accuracy = (p.calls > 0).then(|| correct as f64 / p.calls as f64);
    AttackReport {
        confusion: Some(confusion),
        accuracy,
        ..AttackReport::empty(AttackKind::Fw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{HierarchyConfig, Mode};

    fn run(mode: Mode, calls: u32, seed: u64) -> AttackReport {
        let mut sim = Hierarchy::new(HierarchyConfig::standard(mode, 13));
        run_function_watcher(&mut sim, &FwParams::new(calls, seed))
    }

    #[test]
    fn footprints_are_distinct_per_function() {
        assert_eq!(
            (0..FUNCTIONS).map(body_lines).collect::<Vec<_>>(),
            vec![96, 128, 160, 192]
        );
        assert_eq!(
            (0..FUNCTIONS).map(touches_per_call).collect::<Vec<_>>(),
            vec![5000, 5250, 5500, 5750]
        );
        let entries: Vec<_> = (0..FUNCTIONS)
            .map(|f| entry_addr(f).line_number())
            .collect();
        assert_eq!(entries, vec![0x3000, 0x3100, 0x3200, 0x3300]);
    }

    #[test]
    fn zero_calls_yields_no_accuracy() {
        let report = run(Mode::Baseline, 0, 7);
        assert_eq!(report.accuracy, None);
        let confusion = report.confusion.unwrap();
        assert!(confusion.counts.iter().flatten().all(|&c| c == 0));
    }

    #[test]
    fn baseline_identifies_every_call() {
        let report = run(Mode::Baseline, 200, 42);
        assert_eq!(report.accuracy, Some(1.0));
        let confusion = report.confusion.unwrap();
        for (s, row) in confusion.counts.iter().enumerate() {
            for (i, &c) in row.iter().enumerate() {
                assert_eq!(c == 0, s != i || row[s] == 0, "cell ({s},{i}) = {c}");
            }
        }
        assert_eq!(confusion.counts.iter().flatten().sum::<u64>(), 200);
    }

    #[test]
    fn zbm_reduces_the_spy_to_chance() {
        let report = run(Mode::Zbm, 800, 42);
        let accuracy = report.accuracy.unwrap();
        assert!(
            (0.15..=0.35).contains(&accuracy),
            "expected near 25% guessing, got {accuracy}"
        );
        // Off-diagonal mass confirms the guesses are independent of the secret.
        let confusion = report.confusion.unwrap();
        let off_diagonal: u64 = confusion
            .counts
            .iter()
            .enumerate()
            .flat_map(|(s, row)| row.iter().enumerate().filter(move |(i, _)| *i != s))
            .map(|(_, &c)| c)
            .sum();
        assert!(off_diagonal > 400);
    }

    #[test]
    fn runs_are_deterministic() {
        let a = run(Mode::Zbm, 100, 9);
        let b = run(Mode::Zbm, 100, 9);
        assert_eq!(a.confusion.unwrap().counts, b.confusion.unwrap().counts);
        assert_eq!(a.accuracy, b.accuracy);
    }

    #[test]
    fn different_seeds_draw_different_secrets() {
        let a = run(Mode::Baseline, 50, 1);
        let b = run(Mode::Baseline, 50, 2);
        assert_ne!(a.confusion.unwrap().counts, b.confusion.unwrap().counts);
    }
}
