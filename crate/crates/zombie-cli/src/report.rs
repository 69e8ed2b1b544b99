//! CSV and SVG output builders.
//!
//! Every builder returns the complete file contents as a `String` with LF
//! line endings and fixed headers, so identical inputs produce
//! byte-identical files.

use std::fmt::Write as _;

use zombie_sim::attacks::aes::TABLE_LINES;
use zombie_sim::attacks::{AesHeatmap, ConfusionMatrix, TimelineHit};
use zombie_sim::hierarchy::LogRecord;
use zombie_sim::model::SweepRow;

pub const AES_CSV_HEADER: &str = "p0,line,count,normalized";
pub const RSA_CSV_HEADER: &str = "cycle,probe";
pub const FW_CSV_HEADER: &str = "true_function,inferred_function,count,percent";
pub const SWEEP_CSV_HEADER: &str = "flush_fraction,identical_reload_prob,l3lat_norm,slowdown";
pub const BENIGN_CSV_HEADER: &str = "metric,value";
pub const FLUSHFLUSH_CSV_HEADER: &str = "timing,state,latency";
pub const ALARM_CSV_HEADER: &str = "cycle,spy_core,victim_core";
pub const LOG_CSV_HEADER: &str = "cycle,core,op,addr,outcome,latency";

/// One measured clflush latency in the Flush+Flush probe.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct FlushProbeRow {
    pub timing: &'static str,
    pub state: &'static str,
    pub latency: u64,
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

/// Spy-hit counts per (fixed plaintext byte, table line), with a column
/// normalized to `shared_max` — the largest count across every heatmap in
/// the batch, so paired runs share one scale.
pub fn aes_heatmap_csv(map: &AesHeatmap, shared_max: u64) -> String {
    let mut out = String::from(AES_CSV_HEADER);
    out.push('\n');
    for (p0, row) in map.counts.iter().enumerate() {
        for (line, &count) in row.iter().enumerate() {
            let normalized = if shared_max == 0 {
                0.0
            } else {
                count as f64 / shared_max as f64
            };
            let _ = writeln!(out, "{p0},{line},{count},{}", f6(normalized));
        }
    }
    out
}

pub fn rsa_timeline_csv(timeline: &[TimelineHit]) -> String {
    let mut out = String::from(RSA_CSV_HEADER);
    out.push('\n');
    for hit in timeline {
        let _ = writeln!(out, "{},{}", hit.cycle, hit.probe.label());
    }
    out
}

pub fn fw_confusion_csv(confusion: &ConfusionMatrix) -> String {
    let mut out = String::from(FW_CSV_HEADER);
    out.push('\n');
    for (truth, row) in confusion.counts.iter().enumerate() {
        for (inferred, &count) in row.iter().enumerate() {
            let _ = writeln!(
                out,
                "{truth},{inferred},{count},{}",
                f6(confusion.percent(truth, inferred))
            );
        }
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            f6(r.flush_fraction),
            f6(r.identical_reload_prob),
            f6(r.l3lat_norm),
            f6(r.slowdown)
        );
    }
    out
}

pub fn benign_csv(metrics: &[(&str, String)]) -> String {
    let mut out = String::from(BENIGN_CSV_HEADER);
    out.push('\n');
    for (metric, value) in metrics {
        let _ = writeln!(out, "{metric},{value}");
    }
    out
}

pub fn flushflush_csv(rows: &[FlushProbeRow]) -> String {
    let mut out = String::from(FLUSHFLUSH_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.timing, r.state, r.latency);
    }
    out
}

pub fn alarms_csv(alarms: &[zombie_sim::adt::Alarm]) -> String {
    let mut out = String::from(ALARM_CSV_HEADER);
    out.push('\n');
    for a in alarms {
        let _ = writeln!(out, "{},{},{}", a.cycle, a.spy_core, a.victim_core);
    }
    out
}

pub fn run_log_csv(records: &[LogRecord]) -> String {
    let mut out = String::from(LOG_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},0x{:x},{},{}",
            r.cycle,
            r.core,
            r.op.label(),
            r.addr.value(),
            r.outcome,
            r.latency
        );
    }
    out
}

/// White-to-dark-red ramp over a [0, 1] intensity.
fn heat_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!(
        "rgb({},{},{})",
        lerp(255.0, 165.0),
        lerp(255.0, 15.0),
        lerp(255.0, 21.0)
    )
}

fn svg_open(width: u64, height: u64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" \
         version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    )
}

/// Heat map of spy hits: plaintext byte value along x, table line along y,
/// cells shaded on the shared scale.
pub fn aes_heatmap_svg(title: &str, map: &AesHeatmap, shared_max: u64) -> String {
    const CELL_W: u64 = 4;
    const CELL_H: u64 = 16;
    const LEFT: u64 = 46;
    const TOP: u64 = 28;
    let rows = TABLE_LINES as u64;
    let cols = map.counts.len() as u64;
    let width = LEFT + cols * CELL_W + 12;
    let height = TOP + rows * CELL_H + 36;

    let mut out = svg_open(width, height);
    let _ = writeln!(
        out,
        "<title>{title}</title>\n<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n\
         <text x=\"{LEFT}\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">{title} \
         (max {shared_max} hits)</text>"
    );
    for (p0, row) in map.counts.iter().enumerate() {
        for (line, &count) in row.iter().enumerate() {
            let t = if shared_max == 0 {
                0.0
            } else {
                count as f64 / shared_max as f64
            };
            let x = LEFT + p0 as u64 * CELL_W;
            let y = TOP + line as u64 * CELL_H;
            let _ = writeln!(
                out,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL_W}\" height=\"{CELL_H}\" fill=\"{}\"/>",
                heat_color(t)
            );
        }
    }
    for line in 0..rows {
        let y = TOP + line * CELL_H + CELL_H / 2 + 4;
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"10\" \
             text-anchor=\"end\">0x{line:x}</text>",
            LEFT - 6
        );
    }
    for tick in (0..=cols).step_by(64) {
        let x = LEFT + tick * CELL_W;
        let y = TOP + rows * CELL_H + 14;
        let _ = writeln!(
            out,
            "<text x=\"{x}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"10\" \
             text-anchor=\"middle\">{tick}</text>"
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
         text-anchor=\"middle\">fixed plaintext byte p0</text>",
        LEFT + cols * CELL_W / 2,
        TOP + rows * CELL_H + 30
    );
    out.push_str("</svg>\n");
    out
}

/// Confusion-matrix heat map: true function along y, inferred along x,
/// cells shaded by row percentage and labeled with the value.
pub fn fw_confusion_svg(title: &str, confusion: &ConfusionMatrix) -> String {
    const CELL: u64 = 84;
    const LEFT: u64 = 110;
    const TOP: u64 = 56;
    let n = confusion.counts.len() as u64;
    let width = LEFT + n * CELL + 14;
    let height = TOP + n * CELL + 18;

    let mut out = svg_open(width, height);
    let _ = writeln!(
        out,
        "<title>{title}</title>\n<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n\
         <text x=\"{LEFT}\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">{title}</text>"
    );
    for truth in 0..n as usize {
        for inferred in 0..n as usize {
            let pct = confusion.percent(truth, inferred);
            let x = LEFT + inferred as u64 * CELL;
            let y = TOP + truth as u64 * CELL;
            let _ = writeln!(
                out,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{}\" \
                 stroke=\"#999\"/>",
                heat_color(pct / 100.0)
            );
            let text_color = if pct > 55.0 { "white" } else { "black" };
            let _ = writeln!(
                out,
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" \
                 text-anchor=\"middle\" fill=\"{text_color}\">{}%</text>",
                x + CELL / 2,
                y + CELL / 2 + 5,
                f6(pct).trim_end_matches('0').trim_end_matches('.')
            );
        }
    }
    for f in 0..n {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"end\">true f{f}</text>",
            LEFT - 8,
            TOP + f * CELL + CELL / 2 + 4
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"middle\">guess f{f}</text>",
            LEFT + f * CELL + CELL / 2,
            TOP - 10
        );
    }
    out.push_str("</svg>\n");
    out
}
