//! Scenario execution: runs each parsed scenario on its own simulator,
//! optionally in parallel, then renders CSV/SVG reports and a summary
//! table. A failing scenario never aborts its siblings.

use std::fmt::Write as _;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use zombie_sim::adt::Alarm;
use zombie_sim::attacks::{
    every_eighth_bit_key, run_aes_attack, run_function_watcher, run_rsa_attack, AesParams,
    AttackReport, FwParams, RsaParams,
};
use zombie_sim::cache::LineAddr;
use zombie_sim::hierarchy::{FlushTiming, Hierarchy, LogRecord, Mode};
use zombie_sim::model::{sweep, unit_grid, ModelParams, SweepRow};
use zombie_sim::workload::{run_benign, BenignParams};

use crate::config::{Experiment, ResolvedScenario, Scenario};
use crate::report::{self, FlushProbeRow};

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub parallel: usize,
    pub paper_scale: bool,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug)]
pub enum Payload {
    Attack {
        report: AttackReport,
        alarms: Vec<Alarm>,
        log: Vec<LogRecord>,
    },
    Sweep {
        rows: Vec<SweepRow>,
    },
    Benign {
        metrics: Vec<(&'static str, String)>,
        cycle_delta: i128,
        zombie_hits: u64,
        alarms: Vec<Alarm>,
    },
    FlushFlush {
        rows: Vec<FlushProbeRow>,
    },
}

pub const FLUSH_PROBE_STATES: [&str; 4] =
    ["resident", "absent", "zombie-reloaded", "zombie-unreloaded"];

/// Measures clflush latency against four line states under the simulator's
/// configured flush-timing policy. The repeat-flush timing channel is open
/// when the two zombie states (the victim reloaded the flushed line vs.
/// did not) are distinguishable.
pub fn run_flushflush_probe(sim: &mut Hierarchy) -> Vec<FlushProbeRow> {
    let timing = sim.config().flush_timing.label();
    let core = 0;
    let line = |i: u64| LineAddr::from_line_number(0x5000 + i);

    sim.read(core, line(0));
    let resident = sim.clflush(core, line(0));

    let absent = sim.clflush(core, line(1));

    sim.read(core, line(2));
    sim.clflush(core, line(2));
    sim.read(core, line(2)); // the victim reloaded it: valid zombie
    let reloaded = sim.clflush(core, line(2));

    sim.read(core, line(3));
    sim.clflush(core, line(3)); // never reloaded: invalid zombie
    let unreloaded = sim.clflush(core, line(3));

    [resident, absent, reloaded, unreloaded]
        .into_iter()
        .zip(FLUSH_PROBE_STATES)
        .map(|(latency, state)| FlushProbeRow {
            timing,
            state,
            latency,
        })
        .collect()
}

fn attack_sim(r: &ResolvedScenario) -> Result<Hierarchy, String> {
    let hit = r.hierarchy.l3_hit_latency();
    let miss = r.hierarchy.miss_latency();
    if miss < hit + 2 {
        return Err(format!(
            "no usable reload hit threshold: hit latency {hit} vs miss latency {miss}"
        ));
    }
    let mut sim = Hierarchy::new(r.hierarchy.clone());
    if r.log {
        sim.set_logging(true);
    }
    Ok(sim)
}

fn execute_inner(r: &ResolvedScenario) -> Result<Payload, String> {
    match r.experiment {
        Experiment::Aes => {
            let mut sim = attack_sim(r)?;
            let mut p = AesParams::new(r.key_byte, r.encryptions, r.seed);
            p.victim_core = r.victim_core;
            p.spy_core = r.spy_core;
            let report = run_aes_attack(&mut sim, &p);
            Ok(Payload::Attack {
                report,
                alarms: sim.alarms().to_vec(),
                log: sim.take_log(),
            })
        }
        Experiment::Rsa => {
            let mut sim = attack_sim(r)?;
            let mut p = RsaParams::new(every_eighth_bit_key(r.rsa_bits));
            p.victim_core = r.victim_core;
            p.spy_core = r.spy_core;
            let report = run_rsa_attack(&mut sim, &p).map_err(|e| e.to_string())?;
            Ok(Payload::Attack {
                report,
                alarms: sim.alarms().to_vec(),
                log: sim.take_log(),
            })
        }
        Experiment::Fw => {
            let mut sim = attack_sim(r)?;
            let mut p = FwParams::new(r.fw_calls, r.seed);
            p.victim_core = r.victim_core;
            p.spy_core = r.spy_core;
            let report = run_function_watcher(&mut sim, &p);
            Ok(Payload::Attack {
                report,
                alarms: sim.alarms().to_vec(),
                log: sim.take_log(),
            })
        }
        Experiment::ModelSweep => {
            let base = ModelParams {
                miss_rate: r.miss_rate,
                mem_time_fraction: r.mem_time_fraction,
                ..ModelParams::reference()
            };
            base.validate()?;
            let grid = unit_grid(r.grid_step);
            Ok(Payload::Sweep {
                rows: sweep(&grid, &grid, base),
            })
        }
        Experiment::Benign => {
            let run_mode = |mode: Mode| {
                let mut cfg = r.hierarchy.clone();
                cfg.mode = mode;
                let mut sim = Hierarchy::new(cfg);
                let out = run_benign(
                    &mut sim,
                    &BenignParams::new(r.benign_kind, r.benign_ops, r.seed),
                );
                let alarms = sim.alarms().to_vec();
                (out, alarms)
            };
            let (main, alarms) = run_mode(r.mode);
            let (base, _) = run_mode(Mode::Baseline);
            let totals = main.stats.total();
            let cycle_delta = main.total_cycles as i128 - base.total_cycles as i128;
            let metrics = vec![
                ("kind", r.benign_kind.label().to_string()),
                ("mode", r.mode.label().to_string()),
                ("ops", r.benign_ops.to_string()),
                ("total_cycles", main.total_cycles.to_string()),
                ("baseline_total_cycles", base.total_cycles.to_string()),
                ("cycle_delta_vs_baseline", cycle_delta.to_string()),
                ("zombie_hits", totals.zombie_hits.to_string()),
                ("zombie_misses", totals.zombie_misses.to_string()),
                ("dummy_mem_requests", totals.dummy_mem_requests.to_string()),
                ("flushes", totals.flushes.to_string()),
                ("alarms", alarms.len().to_string()),
            ];
            Ok(Payload::Benign {
                metrics,
                cycle_delta,
                zombie_hits: totals.zombie_hits,
                alarms,
            })
        }
        Experiment::FlushFlush => {
            let mut rows = Vec::new();
            for timing in [
                FlushTiming::Variable,
                FlushTiming::Constant,
                FlushTiming::ZombieGated,
            ] {
                let mut cfg = r.hierarchy.clone();
                cfg.flush_timing = timing;
                let mut sim = Hierarchy::new(cfg);
                rows.extend(run_flushflush_probe(&mut sim));
            }
            Ok(Payload::FlushFlush { rows })
        }
    }
}

/// Runs one scenario, converting panics into scenario errors so siblings
/// keep running.
pub fn execute(r: &ResolvedScenario) -> Result<Payload, String> {
    match panic::catch_unwind(AssertUnwindSafe(|| execute_inner(r))) {
        Ok(result) => result,
        Err(cause) => Err(cause
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| cause.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "scenario panicked".to_string())),
    }
}

fn channel_states(rows: &[FlushProbeRow]) -> String {
    let mut parts = Vec::new();
    for timing in ["variable", "constant", "zombie-gated"] {
        let lat = |state: &str| {
            rows.iter()
                .find(|r| r.timing == timing && r.state == state)
                .map(|r| r.latency)
        };
        if let (Some(a), Some(b)) = (lat("zombie-reloaded"), lat("zombie-unreloaded")) {
            parts.push(format!(
                "{timing}:{}",
                if a == b { "closed" } else { "open" }
            ));
        }
    }
    parts.join(" ")
}

fn headline(r: &ResolvedScenario, payload: &Payload) -> String {
    match payload {
        Payload::Attack { report, alarms, .. } => {
            let pct = report.accuracy.map(|a| a * 100.0);
            let mut line = match r.experiment {
                Experiment::Aes => {
                    let hm = report
                        .heatmap
                        .as_ref()
                        .expect("aes reports carry a heatmap");
                    let ratio = if hm.mean() > 0.0 {
                        hm.max() as f64 / hm.mean()
                    } else {
                        0.0
                    };
                    format!(
                        "argmax correct {:.1}% of p0 rows, max/mean {ratio:.2}",
                        pct.unwrap_or(0.0)
                    )
                }
                Experiment::Rsa => format!(
                    "recovered {:.1}% of {} bits, {} spy hits",
                    pct.unwrap_or(0.0),
                    r.rsa_bits,
                    report.timeline.as_ref().map_or(0, Vec::len)
                ),
                _ => format!(
                    "diagonal {:.1}% over {} calls",
                    pct.unwrap_or(0.0),
                    r.fw_calls
                ),
            };
            if r.hierarchy.adt.is_some() {
                let _ = write!(line, ", alarms {}", alarms.len());
            }
            line
        }
        Payload::Sweep { rows } => {
            let peak = rows
                .iter()
                .map(|x| x.slowdown)
                .fold(f64::NEG_INFINITY, f64::max);
            format!("{} points, peak slowdown {peak:.4}", rows.len())
        }
        Payload::Benign {
            cycle_delta,
            zombie_hits,
            alarms,
            ..
        } => format!(
            "cycle delta vs baseline {cycle_delta}, zombie hits {zombie_hits}, alarms {}",
            alarms.len()
        ),
        Payload::FlushFlush { rows } => format!("repeat-flush channel {}", channel_states(rows)),
    }
}

/// Files (name, contents) a scenario produces. `aes_shared_max` is the
/// largest heatmap count across every successful AES scenario in the batch,
/// so paired runs are normalized to one scale.
fn render_files(
    r: &ResolvedScenario,
    payload: &Payload,
    aes_shared_max: u64,
) -> Vec<(String, String)> {
    let mut files = Vec::new();
    let title = format!("{} ({})", r.name, r.mode.label());
    match payload {
        Payload::Attack {
            report,
            alarms,
            log,
        } => {
            match r.experiment {
                Experiment::Aes => {
                    let hm = report
                        .heatmap
                        .as_ref()
                        .expect("aes reports carry a heatmap");
                    files.push((
                        format!("{}.csv", r.name),
                        report::aes_heatmap_csv(hm, aes_shared_max),
                    ));
                    files.push((
                        format!("{}.svg", r.name),
                        report::aes_heatmap_svg(&title, hm, aes_shared_max),
                    ));
                }
                Experiment::Rsa => {
                    let timeline = report.timeline.as_deref().unwrap_or(&[]);
                    files.push((
                        format!("{}.csv", r.name),
                        report::rsa_timeline_csv(timeline),
                    ));
                }
                _ => {
                    let confusion = report
                        .confusion
                        .as_ref()
                        .expect("fw reports carry a matrix");
                    files.push((
                        format!("{}.csv", r.name),
                        report::fw_confusion_csv(confusion),
                    ));
                    files.push((
                        format!("{}.svg", r.name),
                        report::fw_confusion_svg(&title, confusion),
                    ));
                }
            }
            if r.hierarchy.adt.is_some() {
                files.push((format!("{}_alarms.csv", r.name), report::alarms_csv(alarms)));
            }
            if r.log {
                files.push((format!("{}_log.csv", r.name), report::run_log_csv(log)));
            }
        }
        Payload::Sweep { rows } => {
            files.push((format!("{}.csv", r.name), report::sweep_csv(rows)));
        }
        Payload::Benign {
            metrics, alarms, ..
        } => {
            let rows: Vec<(&str, String)> = metrics.iter().map(|(k, v)| (*k, v.clone())).collect();
            files.push((format!("{}.csv", r.name), report::benign_csv(&rows)));
            if r.hierarchy.adt.is_some() {
                files.push((format!("{}_alarms.csv", r.name), report::alarms_csv(alarms)));
            }
        }
        Payload::FlushFlush { rows } => {
            files.push((format!("{}.csv", r.name), report::flushflush_csv(rows)));
        }
    }
    files
}

pub struct BatchOutcome {
    pub summary: String,
    pub ok: bool,
}

/// Resolves and executes every scenario (at most `parallel` at a time),
/// writes reports, and assembles the summary table.
pub fn run_batch(scenarios: &[Scenario], opts: &RunOptions) -> BatchOutcome {
    let resolved: Vec<Result<ResolvedScenario, String>> = scenarios
        .iter()
        .map(|s| s.resolve(opts.paper_scale, opts.seed))
        .collect();

    let jobs: Vec<usize> = resolved
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_ok())
        .map(|(i, _)| i)
        .collect();
    let results: Mutex<Vec<Option<Result<Payload, String>>>> =
        Mutex::new(resolved.iter().map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = opts.parallel.max(1).min(jobs.len().max(1));
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&idx) = jobs.get(j) else { break };
                let out = execute(resolved[idx].as_ref().expect("jobs hold only Ok entries"));
                results.lock().expect("no poisoned result slots")[idx] = Some(out);
            });
        }
    });
    let results = results.into_inner().expect("workers finished");

    let mut finished: Vec<(&Result<ResolvedScenario, String>, Result<Payload, String>)> =
        Vec::new();
    for (i, res) in resolved.iter().enumerate() {
        let payload = match res {
            Ok(_) => results[i].clone().expect("every resolved scenario ran"),
            Err(e) => Err(e.clone()),
        };
        finished.push((res, payload));
    }

    let aes_shared_max = finished
        .iter()
        .filter_map(|(res, payload)| match (res, payload) {
            (Ok(r), Ok(Payload::Attack { report, .. })) if r.experiment == Experiment::Aes => {
                report.heatmap.as_ref().map(|h| h.max())
            }
            _ => None,
        })
        .max()
        .unwrap_or(0);

    let mut summary = format!(
        "{:<24} {:<12} {:<9} {:<6} {}\n",
        "scenario", "experiment", "mode", "status", "headline"
    );
    let mut ok = true;
    for (i, (res, payload)) in finished.iter().enumerate() {
        let name = res.as_ref().map_or(&scenarios[i].name, |r| &r.name);
        let (experiment, mode) = match res {
            Ok(r) => (r.experiment.label(), r.mode.label()),
            Err(_) => ("?", "?"),
        };
        let (status, detail) = match (res, payload) {
            (Ok(r), Ok(p)) => {
                let mut failure = None;
                for (file, contents) in render_files(r, p, aes_shared_max) {
                    let dir = r.out_dir.clone().unwrap_or_else(|| opts.out_dir.clone());
                    let path = dir.join(file);
                    if let Err(e) =
                        fs::create_dir_all(&dir).and_then(|_| fs::write(&path, contents))
                    {
                        failure = Some(format!("writing {}: {e}", path.display()));
                        break;
                    }
                }
                match failure {
                    None => ("ok", headline(r, p)),
                    Some(e) => ("error", e),
                }
            }
            (_, Err(e)) | (Err(e), _) => ("error", e.clone()),
        };
        ok &= status == "ok";
        let _ = writeln!(
            summary,
            "{name:<24} {experiment:<12} {mode:<9} {status:<6} {detail}"
        );
    }

    BatchOutcome { summary, ok }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use zombie_sim::hierarchy::HierarchyConfig;

    fn resolve_one(text: &str) -> ResolvedScenario {
        parse_config(text).unwrap()[0].resolve(false, None).unwrap()
    }

    #[test]
    fn flush_probe_distinguishes_states_only_under_variable_timing() {
        let expected = [
            ("variable", [30, 10, 30, 10]),
            ("constant", [30, 30, 30, 30]),
            ("zombie-gated", [30, 10, 30, 30]),
        ];
        for (timing, latencies) in expected {
            let mut cfg = HierarchyConfig::standard(Mode::Baseline, 1);
            cfg.flush_timing = match timing {
                "variable" => FlushTiming::Variable,
                "constant" => FlushTiming::Constant,
                _ => FlushTiming::ZombieGated,
            };
            let rows = run_flushflush_probe(&mut Hierarchy::new(cfg));
            let got: Vec<u64> = rows.iter().map(|r| r.latency).collect();
            assert_eq!(got, latencies, "{timing}");
            assert_eq!(rows[0].timing, timing);
        }
    }

    #[test]
    fn flushflush_scenario_reports_channel_closure() {
        let r = resolve_one("[ff]\nexperiment = flushflush\n");
        let payload = execute(&r).unwrap();
        assert_eq!(
            headline(&r, &payload),
            "repeat-flush channel variable:open constant:closed zombie-gated:closed"
        );
        match payload {
            Payload::FlushFlush { rows } => assert_eq!(rows.len(), 12),
            _ => panic!("wrong payload"),
        }
    }

    #[test]
    fn benign_scenario_shows_no_mitigation_cost() {
        let r = resolve_one(
            "[b]\nexperiment = benign\nmode = zbm\nbenign_kind = io-flush\nbenign_ops = 16000\n",
        );
        match execute(&r).unwrap() {
            Payload::Benign {
                cycle_delta,
                zombie_hits,
                metrics,
                ..
            } => {
                assert_eq!(cycle_delta, 0);
                assert_eq!(zombie_hits, 0);
                assert!(metrics.contains(&("cycle_delta_vs_baseline", "0".to_string())));
            }
            _ => panic!("wrong payload"),
        }
    }

    #[test]
    fn sweep_scenario_produces_the_grid() {
        let r = resolve_one("[m]\nexperiment = model-sweep\ngrid_step = 0.5\n");
        match execute(&r).unwrap() {
            Payload::Sweep { rows } => {
                assert_eq!(rows.len(), 9);
                let peak = rows.iter().map(|x| x.slowdown).fold(f64::MIN, f64::max);
                assert!((peak - 1.3756476683937824).abs() < 1e-12);
            }
            _ => panic!("wrong payload"),
        }
    }

    #[test]
    fn unusable_timing_threshold_fails_gracefully() {
        let r = resolve_one("[a]\nexperiment = aes\nmem_latency = 1\n");
        let err = execute(&r).unwrap_err();
        assert!(err.contains("no usable reload hit threshold"), "{err}");
    }

    #[test]
    fn batch_isolates_failures_and_reports_them() {
        let scenarios = parse_config(
            "[bad]\nexperiment = rsa\nmem_latency = 1\n\n[good]\nexperiment = flushflush\n",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_batch(
            &scenarios,
            &RunOptions {
                parallel: 2,
                paper_scale: false,
                seed: None,
                out_dir: dir.path().to_path_buf(),
            },
        );
        assert!(!outcome.ok);
        assert!(outcome.summary.contains("bad"));
        assert!(outcome.summary.contains("error"));
        assert!(outcome.summary.contains("no usable reload hit threshold"));
        assert!(outcome
            .summary
            .lines()
            .any(|l| l.contains("good") && l.contains("ok")));
        assert!(dir.path().join("good.csv").exists());
        assert!(!dir.path().join("bad.csv").exists());
    }

    #[test]
    fn aes_pair_normalizes_to_the_shared_maximum() {
        let scenarios = parse_config(
            "[pair-base]\nexperiment = aes\nmode = baseline\nencryptions = 40\nkey_byte = 0\n\n\
             [pair-zbm]\nexperiment = aes\nmode = zbm\nencryptions = 40\nkey_byte = 0\n",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_batch(
            &scenarios,
            &RunOptions {
                parallel: 2,
                paper_scale: false,
                seed: None,
                out_dir: dir.path().to_path_buf(),
            },
        );
        assert!(outcome.ok, "{}", outcome.summary);

        let base = fs::read_to_string(dir.path().join("pair-base.csv")).unwrap();
        let zbm = fs::read_to_string(dir.path().join("pair-zbm.csv")).unwrap();
        assert!(base.lines().any(|l| l.ends_with(",1.000000")));
        assert!(
            !zbm.lines().any(|l| l.ends_with(",1.000000")),
            "mitigated heatmap should sit well below the shared maximum"
        );
        assert!(dir.path().join("pair-base.svg").exists());
        assert!(dir.path().join("pair-zbm.svg").exists());
    }

    #[test]
    fn identical_batches_write_identical_bytes() {
        let text = "[d]\nexperiment = fw\nfw_calls = 120\nseed = 11\nadt = on\n";
        let scenarios = parse_config(text).unwrap();
        let read_all = |dir: &std::path::Path| {
            let mut names: Vec<_> = fs::read_dir(dir)
                .unwrap()
                .map(|e| e.unwrap().file_name().into_string().unwrap())
                .collect();
            names.sort();
            names
                .iter()
                .map(|n| (n.clone(), fs::read(dir.join(n)).unwrap()))
                .collect::<Vec<_>>()
        };
        let mut snapshots = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let outcome = run_batch(
                &scenarios,
                &RunOptions {
                    parallel: 1,
                    paper_scale: false,
                    seed: None,
                    out_dir: dir.path().to_path_buf(),
                },
            );
            assert!(outcome.ok, "{}", outcome.summary);
            snapshots.push(read_all(dir.path()));
        }
        assert_eq!(snapshots[0], snapshots[1]);
        let names: Vec<&str> = snapshots[0].iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["d.csv", "d.svg", "d_alarms.csv"]);
    }

    #[test]
    fn run_log_is_written_when_requested() {
        let scenarios = parse_config("[r]\nexperiment = rsa\nrsa_bits = 16\nlog = on\n").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_batch(
            &scenarios,
            &RunOptions {
                parallel: 1,
                paper_scale: false,
                seed: None,
                out_dir: dir.path().to_path_buf(),
            },
        );
        assert!(outcome.ok, "{}", outcome.summary);
        let log = fs::read_to_string(dir.path().join("r_log.csv")).unwrap();
        assert!(log.starts_with("cycle,core,op,addr,outcome,latency\n"));
        assert!(log.lines().count() > 100);
        assert!(log.contains(",clflush,"));
    }
}
