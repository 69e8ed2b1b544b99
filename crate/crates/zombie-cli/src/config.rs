//! Scenario config files: sectioned `key = value` text.
//!
//! ```text
//! [aes-baseline]
//! experiment = aes
//! mode = baseline
//! seed = 42
//! ```
//!
//! Unset fields fall back to the standard machine (8 cores, 16 MiB 16-way
//! keyed-SRRIP shared cache); desk-scale runs shrink the shared cache and
//! iteration counts unless a field is set explicitly.

use std::error::Error;
use std::fmt;
use std::path::PathBuf;

use zombie_sim::cache::{sets_for_capacity, CacheGeometry, Indexing, Replacement};
use zombie_sim::hierarchy::{AdtSettings, FlushTiming, HierarchyConfig, Mode};
use zombie_sim::workload::BenignKind;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Experiment {
    Aes,
    Rsa,
    Fw,
    ModelSweep,
    Benign,
    FlushFlush,
}

impl Experiment {
    pub fn label(self) -> &'static str {
        match self {
            Experiment::Aes => "aes",
            Experiment::Rsa => "rsa",
            Experiment::Fw => "fw",
            Experiment::ModelSweep => "model-sweep",
            Experiment::Benign => "benign",
            Experiment::FlushFlush => "flushflush",
        }
    }
}

/// One `[section]` of the config; every field is optional until resolution.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct Scenario {
    pub name: String,
    pub header_line: usize,
    pub experiment: Option<Experiment>,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub log: Option<bool>,

    pub cores: Option<usize>,
    pub l3_mib: Option<u64>,
    pub l3_ways: Option<usize>,
    pub l3_replacement: Option<Replacement>,
    pub l3_keyed_index: Option<bool>,
    pub mem_latency: Option<u64>,
    pub flush_timing: Option<FlushTiming>,

    pub adt: Option<bool>,
    pub adt_decay_cycles: Option<u64>,
    pub adt_count_flush_on_zombie: Option<bool>,

    pub spy_core: Option<usize>,
    pub victim_core: Option<usize>,

    pub encryptions: Option<u32>,
    pub key_byte: Option<u8>,
    pub rsa_bits: Option<usize>,
    pub fw_calls: Option<u32>,
    pub benign_kind: Option<BenignKind>,
    pub benign_ops: Option<u64>,

    pub miss_rate: Option<f64>,
    pub mem_time_fraction: Option<f64>,
    pub grid_step: Option<f64>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl ConfigError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        ConfigError {
            line,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl Error for ConfigError {}

fn parse_u64(line: usize, key: &str, v: &str) -> Result<u64, ConfigError> {
    let parsed = if let Some(hex) = v.strip_prefix("0x").or_else(|| v.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16)
    } else {
        v.parse()
    };
    parsed.map_err(|_| ConfigError::new(line, format!("{key}: expected an integer, got `{v}`")))
}

fn parse_int<T: TryFrom<u64>>(line: usize, key: &str, v: &str) -> Result<T, ConfigError> {
    T::try_from(parse_u64(line, key, v)?)
        .map_err(|_| ConfigError::new(line, format!("{key}: value `{v}` is out of range")))
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64, ConfigError> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| ConfigError::new(line, format!("{key}: expected a number, got `{v}`")))
}

fn parse_fraction(line: usize, key: &str, v: &str) -> Result<f64, ConfigError> {
    let x = parse_f64(line, key, v)?;
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(ConfigError::new(
            line,
            format!("{key}: `{v}` is outside [0, 1]"),
        ))
    }
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(ConfigError::new(
            line,
            format!("{key}: expected on/off/true/false, got `{v}`"),
        )),
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

pub fn parse_config(text: &str) -> Result<Vec<Scenario>, ConfigError> {
    let mut scenarios: Vec<Scenario> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }

        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::new(line, "unterminated [section] header"))?
                .trim();
            if !valid_name(name) {
                return Err(ConfigError::new(
                    line,
                    format!("scenario name `{name}` must be non-empty and use only letters, digits, `-`, `_`, `.`"),
                ));
            }
            if scenarios.iter().any(|s| s.name == name) {
                return Err(ConfigError::new(
                    line,
                    format!("duplicate scenario name `{name}`"),
                ));
            }
            scenarios.push(Scenario {
                name: name.to_string(),
                header_line: line,
                ..Scenario::default()
            });
            continue;
        }

        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::new(line, "expected `key = value` or `[section]`"))?;
        let (key, v) = (key.trim(), value.trim());
        let s = scenarios
            .last_mut()
            .ok_or_else(|| ConfigError::new(line, "key before any [scenario] section"))?;

        macro_rules! set {
            ($field:ident, $parsed:expr) => {{
                if s.$field.is_some() {
                    return Err(ConfigError::new(
                        line,
                        format!("duplicate key `{key}` in scenario `{}`", s.name),
                    ));
                }
                s.$field = Some($parsed);
            }};
        }

        match key {
            "experiment" => set!(
                experiment,
                match v {
                    "aes" => Experiment::Aes,
                    "rsa" => Experiment::Rsa,
                    "fw" => Experiment::Fw,
                    "model-sweep" => Experiment::ModelSweep,
                    "benign" => Experiment::Benign,
                    "flushflush" => Experiment::FlushFlush,
                    _ => {
                        return Err(ConfigError::new(
                            line,
                            format!("unknown experiment `{v}` (expected aes, rsa, fw, model-sweep, benign, flushflush)"),
                        ));
                    }
                }
            ),
            "mode" => set!(
                mode,
                match v {
                    "baseline" => Mode::Baseline,
                    "zbm" => Mode::Zbm,
                    "zbmx" => Mode::Zbmx,
                    _ => {
                        return Err(ConfigError::new(
                            line,
                            format!("unknown mode `{v}` (expected baseline, zbm, zbmx)"),
                        ));
                    }
                }
            ),
            "seed" => set!(seed, parse_u64(line, key, v)?),
            "out_dir" => set!(out_dir, PathBuf::from(v)),
            "log" => set!(log, parse_bool(line, key, v)?),
            "cores" => {
                let n: usize = parse_int(line, key, v)?;
                if !(1..=64).contains(&n) {
                    return Err(ConfigError::new(
                        line,
                        format!("cores: `{v}` not in 1..=64"),
                    ));
                }
                set!(cores, n)
            }
            "l3_mib" => {
                let n = parse_u64(line, key, v)?;
                if !(1..=1024).contains(&n) {
                    return Err(ConfigError::new(
                        line,
                        format!("l3_mib: `{v}` not in 1..=1024"),
                    ));
                }
                set!(l3_mib, n)
            }
            "l3_ways" => {
                let n: usize = parse_int(line, key, v)?;
                if n == 0 {
                    return Err(ConfigError::new(line, "l3_ways: must be positive"));
                }
                set!(l3_ways, n)
            }
            "l3_replacement" => set!(
                l3_replacement,
                match v {
                    "lru" => Replacement::Lru,
                    "srrip" => Replacement::Srrip,
                    _ => {
                        return Err(ConfigError::new(
                            line,
                            format!("unknown replacement `{v}` (expected lru, srrip)"),
                        ));
                    }
                }
            ),
            "l3_indexing" => set!(
                l3_keyed_index,
                match v {
                    "keyed" => true,
                    "direct" => false,
                    _ => {
                        return Err(ConfigError::new(
                            line,
                            format!("unknown indexing `{v}` (expected direct, keyed)"),
                        ));
                    }
                }
            ),
            "mem_latency" => {
                let n = parse_u64(line, key, v)?;
                // Bounded so cycle arithmetic can never overflow in a run.
                if !(1..=10_000_000).contains(&n) {
                    return Err(ConfigError::new(
                        line,
                        format!("mem_latency: `{v}` not in 1..=10000000"),
                    ));
                }
                set!(mem_latency, n)
            }
            "flush_timing" => set!(
                flush_timing,
                match v {
                    "variable" => FlushTiming::Variable,
                    "constant" => FlushTiming::Constant,
                    "zombie-gated" => FlushTiming::ZombieGated,
                    _ => {
                        return Err(ConfigError::new(
                            line,
                            format!("unknown flush timing `{v}` (expected variable, constant, zombie-gated)"),
                        ));
                    }
                }
            ),
            "adt" => set!(adt, parse_bool(line, key, v)?),
            "adt_decay_cycles" => {
                let n = parse_u64(line, key, v)?;
                if n == 0 {
                    return Err(ConfigError::new(line, "adt_decay_cycles: must be positive"));
                }
                set!(adt_decay_cycles, n)
            }
            "adt_count_flush_on_zombie" => {
                set!(adt_count_flush_on_zombie, parse_bool(line, key, v)?)
            }
            "spy_core" => set!(spy_core, parse_int(line, key, v)?),
            "victim_core" => set!(victim_core, parse_int(line, key, v)?),
            "encryptions" => set!(encryptions, parse_int(line, key, v)?),
            "key_byte" => set!(key_byte, parse_int(line, key, v)?),
            "rsa_bits" => {
                let n: usize = parse_int(line, key, v)?;
                if n < 8 {
                    return Err(ConfigError::new(
                        line,
                        format!("rsa_bits: key must be at least 8 bits, got {n}"),
                    ));
                }
                set!(rsa_bits, n)
            }
            "fw_calls" => set!(fw_calls, parse_int(line, key, v)?),
            "benign_kind" => set!(
                benign_kind,
                match v {
                    "mix" => BenignKind::Mix,
                    "io-flush" => BenignKind::IoFlush,
                    "flush-hot" => BenignKind::FlushHot,
                    _ => {
                        return Err(ConfigError::new(
                            line,
                            format!(
                                "unknown benign kind `{v}` (expected mix, io-flush, flush-hot)"
                            ),
                        ));
                    }
                }
            ),
            "benign_ops" => {
                let n = parse_u64(line, key, v)?;
                if n == 0 {
                    return Err(ConfigError::new(line, "benign_ops: must be positive"));
                }
                set!(benign_ops, n)
            }
            "miss_rate" => set!(miss_rate, parse_fraction(line, key, v)?),
            "mem_time_fraction" => set!(mem_time_fraction, parse_fraction(line, key, v)?),
            "grid_step" => {
                let x = parse_f64(line, key, v)?;
                if !(x > 0.0 && x <= 1.0) {
                    return Err(ConfigError::new(
                        line,
                        format!("grid_step: `{v}` is outside (0, 1]"),
                    ));
                }
                set!(grid_step, x)
            }
            _ => {
                return Err(ConfigError::new(line, format!("unknown key `{key}`")));
            }
        }
    }

    for s in &scenarios {
        let at = s.header_line;
        let name = &s.name;
        if s.experiment.is_none() {
            return Err(ConfigError::new(
                at,
                format!("scenario `{name}` is missing the `experiment` key"),
            ));
        }
        let cores = s.cores.unwrap_or(8);
        let spy = s.spy_core.unwrap_or(1);
        let victim = s.victim_core.unwrap_or(0);
        if spy >= cores || victim >= cores {
            return Err(ConfigError::new(
                at,
                format!("scenario `{name}`: spy_core {spy} / victim_core {victim} must be below cores {cores}"),
            ));
        }
        if spy == victim {
            return Err(ConfigError::new(
                at,
                format!("scenario `{name}`: spy_core and victim_core must differ"),
            ));
        }
    }

    Ok(scenarios)
}

/// A scenario with every knob decided, ready to execute.
#[derive(Clone, Debug)]
pub struct ResolvedScenario {
    pub name: String,
    pub experiment: Experiment,
    pub mode: Mode,
    pub seed: u64,
    pub hierarchy: HierarchyConfig,
    pub log: bool,
    pub out_dir: Option<PathBuf>,
    pub spy_core: usize,
    pub victim_core: usize,
    pub encryptions: u32,
    pub key_byte: u8,
    pub rsa_bits: usize,
    pub fw_calls: u32,
    pub benign_kind: BenignKind,
    pub benign_ops: u64,
    pub miss_rate: f64,
    pub mem_time_fraction: f64,
    pub grid_step: f64,
}

pub const PAPER_DECAY_CYCLES: u64 = 32_000_000;
/// Desk runs are ~16x smaller, so the decay period shrinks to match.
pub const DESK_DECAY_CYCLES: u64 = 2_000_000;

impl Scenario {
    /// Fills defaults. `paper_scale` selects the full-size shared cache and
    /// iteration counts; otherwise desk-scale values keep runs fast.
    /// `seed_override` (the CLI `--seed`) replaces every scenario's seed.
    pub fn resolve(
        &self,
        paper_scale: bool,
        seed_override: Option<u64>,
    ) -> Result<ResolvedScenario, String> {
        let mode = self.mode.unwrap_or(Mode::Baseline);
        let seed = seed_override.unwrap_or(self.seed.unwrap_or(42));

        let l3_mib = self.l3_mib.unwrap_or(if paper_scale { 16 } else { 1 });
        let ways = self.l3_ways.unwrap_or(16);
        let capacity = l3_mib * 1024 * 1024;
        let num_sets = sets_for_capacity(capacity, ways).ok_or(format!(
            "scenario `{}`: {l3_mib} MiB / {ways} ways does not give a power-of-two set count",
            self.name
        ))?;
        let indexing = if self.l3_keyed_index.unwrap_or(true) {
            Indexing::Keyed(seed)
        } else {
            Indexing::Direct
        };

        let mut hierarchy = HierarchyConfig::standard(mode, seed);
        hierarchy.cores = self.cores.unwrap_or(8);
        hierarchy.l3 = CacheGeometry {
            num_sets,
            ways,
            hit_latency: hierarchy.l3.hit_latency,
            replacement: self.l3_replacement.unwrap_or(Replacement::Srrip),
            indexing,
        };
        if let Some(m) = self.mem_latency {
            hierarchy.mem_latency = m;
        }
        if let Some(t) = self.flush_timing {
            hierarchy.flush_timing = t;
        }
        if self.adt.unwrap_or(false) {
            hierarchy.adt = Some(AdtSettings {
                decay_period_cycles: self.adt_decay_cycles.unwrap_or(if paper_scale {
                    PAPER_DECAY_CYCLES
                } else {
                    DESK_DECAY_CYCLES
                }),
                count_flush_on_zombie: self.adt_count_flush_on_zombie.unwrap_or(false),
            });
        }

        Ok(ResolvedScenario {
            name: self.name.clone(),
            experiment: self.experiment.ok_or("missing experiment")?,
            mode,
            seed,
            hierarchy,
            log: self.log.unwrap_or(false),
            out_dir: self.out_dir.clone(),
            spy_core: self.spy_core.unwrap_or(1),
            victim_core: self.victim_core.unwrap_or(0),
            encryptions: self
                .encryptions
                .unwrap_or(if paper_scale { 10_000 } else { 2_000 }),
            key_byte: self.key_byte.unwrap_or(0x5a),
            rsa_bits: self.rsa_bits.unwrap_or(3072),
            fw_calls: self.fw_calls.unwrap_or(10_000),
            benign_kind: self.benign_kind.unwrap_or(BenignKind::Mix),
            benign_ops: self.benign_ops.unwrap_or(200_000),
            miss_rate: self.miss_rate.unwrap_or(0.5),
            mem_time_fraction: self.mem_time_fraction.unwrap_or(0.5),
            grid_step: self.grid_step.unwrap_or(0.1),
        })
    }
}
