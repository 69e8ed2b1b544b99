//! Scripted spy/victim workload pairs for the three flush-based attacks,
//! the spy's latency-threshold measurement primitive, and key-recovery
//! scoring. Spy and victim interleave deterministically — flush all probes,
//! let the victim execute its slice of work, reload — modeling a noise-free
//! setting with perfect phase alignment.

pub mod aes;
pub mod fw;
pub mod rsa;

pub use aes::{run_aes_attack, AesParams};
pub use fw::{run_function_watcher, FwParams};
pub use rsa::{every_eighth_bit_key, run_rsa_attack, RsaKeyError, RsaParams};

use crate::cache::{CoreId, LineAddr};
use crate::hierarchy::{Hierarchy, HierarchyConfig};

/// What the spy concludes from one timed reload.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Inferred {
    Hit,
    Miss,
}

/// The spy side of an attack: which lines it watches, how many victim
/// operations run between its flush and reload phases, the latency cut-off
/// separating inferred hits from misses, and how many flush-reload rounds
/// the attack performs.
#[derive(Clone, Debug)]
pub struct SpyConfig {
    pub probe_addrs: Vec<LineAddr>,
    pub wait_interval: usize,
    pub hit_threshold: u64,
    pub rounds: usize,
}

impl SpyConfig {
    /// The threshold must fall strictly between the L3-hit and memory-miss
    /// latencies, otherwise the timing test cannot separate them.
    pub fn validate(&self, cfg: &HierarchyConfig) {
        assert!(
            self.hit_threshold > cfg.l3_hit_latency() && self.hit_threshold < cfg.miss_latency(),
            "hit threshold {} outside ({}, {})",
            self.hit_threshold,
            cfg.l3_hit_latency(),
            cfg.miss_latency()
        );
    }
}

/// Midpoint of the bimodal reload latencies: maximally separating in a
/// noise-free simulator.
pub fn default_hit_threshold(cfg: &HierarchyConfig) -> u64 {
    (cfg.l3_hit_latency() + cfg.miss_latency()) / 2
}

/// Timed reload of one probe address on the spy's core.
pub fn spy_probe(
    sim: &mut Hierarchy,
    spy_core: CoreId,
    addr: LineAddr,
    hit_threshold: u64,
) -> Inferred {
    if sim.read(spy_core, addr).latency < hit_threshold {
        Inferred::Hit
    } else {
        Inferred::Miss
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AttackKind {
    Aes,
    Rsa,
    Fw,
}

impl AttackKind {
    pub fn label(self) -> &'static str {
        match self {
            AttackKind::Aes => "aes",
            AttackKind::Rsa => "rsa",
            AttackKind::Fw => "fw",
        }
    }
}

/// AES spy-hit counts: one row per fixed plaintext byte value, one column
/// per monitored table line.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AesHeatmap {
    pub counts: Vec<[u64; aes::TABLE_LINES]>,
    /// argmax table line per row: the recovered upper nibble candidates.
    pub recovered_nibbles: Vec<u8>,
}

impl AesHeatmap {
    pub fn max(&self) -> u64 {
        self.counts.iter().flatten().copied().max().unwrap_or(0)
    }

    pub fn mean(&self) -> f64 {
        let cells = (self.counts.len() * aes::TABLE_LINES) as f64;
        if cells == 0.0 {
            return 0.0;
        }
        self.counts.iter().flatten().sum::<u64>() as f64 / cells
    }
}

/// Which RSA probe line a spy hit landed on.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RsaProbe {
    Sqr,
    Mul,
}

impl RsaProbe {
    pub fn label(self) -> &'static str {
        match self {
            RsaProbe::Sqr => "sqr",
            RsaProbe::Mul => "mul",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TimelineHit {
    pub cycle: u64,
    pub probe: RsaProbe,
}

/// Function-watcher tallies of (true function, spy-inferred function).
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; fw::FUNCTIONS]; fw::FUNCTIONS],
}

impl ConfusionMatrix {
    pub fn row_total(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum()
    }

    /// Row-normalized percentage; an unobserved row reads as 0.
    pub fn percent(&self, truth: usize, inferred: usize) -> f64 {
        let total = self.row_total(truth);
        if total == 0 {
            0.0
        } else {
            self.counts[truth][inferred] as f64 / total as f64 * 100.0
        }
    }

    pub fn diagonal_percents(&self) -> [f64; fw::FUNCTIONS] {
        std::array::from_fn(|f| self.percent(f, f))
    }
}

/// Result container shared by the three attacks; each fills the sections
/// that apply to it.
#[derive(Clone, PartialEq, Debug)]
pub struct AttackReport {
    pub kind: AttackKind,
    pub heatmap: Option<AesHeatmap>,
    pub timeline: Option<Vec<TimelineHit>>,
    pub confusion: Option<ConfusionMatrix>,
    pub decoded_bits: Option<Vec<bool>>,
    /// Fraction of true key bits recovered (RSA).
    pub recovered_bits: Option<f64>,
    /// Kind-specific headline accuracy: argmax-correct fraction (AES),
    /// diagonal fraction (FW), bit-recovery fraction (RSA).
    pub accuracy: Option<f64>,
}

impl AttackReport {
    pub fn empty(kind: AttackKind) -> Self {
        AttackReport {
            kind,
            heatmap: None,
            timeline: None,
            confusion: None,
            decoded_bits: None,
            recovered_bits: None,
            accuracy: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::Mode;

    fn line(n: u64) -> LineAddr {
        LineAddr::from_line_number(n)
    }

    fn sim(mode: Mode) -> Hierarchy {
        Hierarchy::new(HierarchyConfig::standard(mode, 42))
    }

    #[test]
    fn default_threshold_is_the_latency_midpoint() {
        let cfg = HierarchyConfig::standard(Mode::Baseline, 1);
        assert_eq!(default_hit_threshold(&cfg), 112); // (40 + 185) / 2
        SpyConfig {
            probe_addrs: vec![line(1)],
            wait_interval: 1,
            hit_threshold: 112,
            rounds: 1,
        }
        .validate(&cfg);
    }

    #[test]
    #[should_panic(expected = "hit threshold")]
    fn threshold_at_hit_latency_is_rejected() {
        let cfg = HierarchyConfig::standard(Mode::Baseline, 1);
        SpyConfig {
            probe_addrs: vec![],
            wait_interval: 1,
            hit_threshold: 40,
            rounds: 1,
        }
        .validate(&cfg);
    }

    #[test]
    fn probe_sees_victim_access_in_baseline() {
        let mut sim = sim(Mode::Baseline);
        let a = line(100);
        let t = default_hit_threshold(sim.config());
        sim.read(0, a); // preload
        sim.clflush(1, a); // spy flush
        sim.read(0, a); // victim re-access (identical data: valid zombie)
        assert_eq!(spy_probe(&mut sim, 1, a, t), Inferred::Hit);
    }

    #[test]
    fn probe_is_blinded_by_zbm() {
        let mut sim = sim(Mode::Zbm);
        let a = line(100);
        let t = default_hit_threshold(sim.config());
        sim.read(0, a);
        sim.clflush(1, a);
        sim.read(0, a);
        assert_eq!(spy_probe(&mut sim, 1, a, t), Inferred::Miss);
    }

    #[test]
    fn probe_reports_miss_when_victim_is_silent() {
        for mode in [Mode::Baseline, Mode::Zbm, Mode::Zbmx] {
            let mut sim = sim(mode);
            let a = line(100);
            let t = default_hit_threshold(sim.config());
            sim.read(0, a);
            sim.clflush(1, a);
            // no victim access
            assert_eq!(spy_probe(&mut sim, 1, a, t), Inferred::Miss, "{mode:?}");
        }
    }

    #[test]
    fn confusion_matrix_percentages_row_normalize() {
        let mut m = ConfusionMatrix::default();
        m.counts[0] = [3, 1, 0, 0];
        assert_eq!(m.percent(0, 0), 75.0);
        assert_eq!(m.percent(0, 1), 25.0);
        assert_eq!(m.percent(1, 1), 0.0, "empty row has no share");
        let total: f64 = (0..4).map(|i| m.percent(0, i)).sum();
        assert!((total - 100.0).abs() < 1e-9);
    }

    #[test]
    fn heatmap_summary_statistics() {
        let mut counts = vec![[0u64; 16]; 2];
        counts[0][3] = 32;
        let h = AesHeatmap {
            counts,
            recovered_nibbles: vec![3, 0],
        };
        assert_eq!(h.max(), 32);
        assert_eq!(h.mean(), 1.0);
    }
}
