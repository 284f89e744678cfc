//! Report files. Every file is a pure function of the report, so identical
//! runs produce byte-identical output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::io::{scene_string, trace_csv};

use super::experiment::{AblationRow, ExperimentReport};

pub const REPORT_CSV: &str = "report.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const TRACE_CSV: &str = "trace.csv";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const CONFIG_TXT: &str = "config.txt";
pub const SCENE_TXT: &str = "watermarked_scene.txt";
pub const ABLATION_CSV: &str = "ablation.csv";

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        v.to_string()
    }
}

/// Per-attack accuracies: `split,attack,param,seed,mean_bit_acc,min_bit_acc`.
pub fn report_csv(r: &ExperimentReport) -> String {
    let mut out = String::from("split,attack,param,seed,mean_bit_acc,min_bit_acc\n");
    for row in &r.attacks {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.split,
            row.spec.kind,
            row.spec.param,
            row.spec.seed,
            num(row.mean_bit_acc),
            num(row.min_bit_acc)
        );
    }
    out
}

/// Scalar metrics as `metric,value` rows.
pub fn metrics_csv(r: &ExperimentReport) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("variant".into(), r.config.variant().into()),
        ("clean_bit_acc".into(), num(r.clean_bit_acc)),
        ("clean_min_bit_acc".into(), num(r.clean_min_bit_acc)),
    ];
    if let (Some(m), Some(n)) = (r.heldout_bit_acc, r.heldout_min_bit_acc) {
        rows.push(("heldout_bit_acc".into(), num(m)));
        rows.push(("heldout_min_bit_acc".into(), num(n)));
    }
    rows.extend([
        ("mean_attacked_bit_acc".into(), num(r.mean_attacked_bit_acc())),
        ("psnr_db".into(), num(r.psnr)),
        ("flicker".into(), num(r.flicker)),
        ("epochs".into(), r.epochs.to_string()),
        ("converged".into(), r.converged.to_string()),
    ]);
    for (v, acc) in r.view_bit_acc.iter().enumerate() {
        rows.push((format!("view_{v}_bit_acc"), num(*acc)));
    }
    let mut out = String::from("metric,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

pub fn summary_text(r: &ExperimentReport) -> String {
    let c = &r.config;
    let mut out = String::new();
    let _ = writeln!(out, "scene        {} (n = {}, frames = {}, seed = {})", c.scene.kind, c.scene.n, c.scene.frames, c.scene.seed);
    let _ = writeln!(out, "variant      {}", c.variant());
    let _ = writeln!(out, "views        {} at {} deg{}", r.view_bit_acc.len(), c.view_interval, if c.holdout_views { ", odd views held out" } else { "" });
    let _ = writeln!(out, "message      {} ({} bits)", r.message, r.message.len());
    let _ = writeln!(out, "epochs       {} (converged: {})", r.epochs, r.converged);
    let _ = writeln!(out, "clean acc    mean {:.4}, min {:.4}", r.clean_bit_acc, r.clean_min_bit_acc);
    if let (Some(m), Some(n)) = (r.heldout_bit_acc, r.heldout_min_bit_acc) {
        let _ = writeln!(out, "held-out acc mean {m:.4}, min {n:.4}");
    }
    let psnr = if r.psnr.is_infinite() { "inf".to_string() } else { format!("{:.2}", r.psnr) };
    let _ = writeln!(out, "psnr         {psnr} dB");
    let _ = writeln!(out, "flicker      {:.6e}", r.flicker);
    let _ = writeln!(out, "\nattacks");
    for row in &r.attacks {
        let _ = writeln!(out, "  {:<10} {:<8} {:<12} mean {:.4}  min {:.4}", row.split, row.spec.kind.name(), row.spec.param.to_string(), row.mean_bit_acc, row.min_bit_acc);
    }
    let _ = writeln!(out, "\nconfig\n{}", indent(&c.to_text()));
    out
}

fn indent(text: &str) -> String {
    text.lines().map(|l| format!("  {l}\n")).collect()
}

/// Writes every report file into `dir` (created if missing) and returns the
/// paths written.
pub fn write_report(r: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let files = [
        (REPORT_CSV, report_csv(r)),
        (METRICS_CSV, metrics_csv(r)),
        (TRACE_CSV, trace_csv(&r.trace)),
        (SUMMARY_TXT, summary_text(r)),
        (CONFIG_TXT, r.config.to_text()),
        (SCENE_TXT, scene_string(&r.watermarked)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,seed,clean_bit_acc,mean_attacked_bit_acc,psnr_db,flicker,epochs\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.variant,
            r.seed,
            num(r.clean_bit_acc),
            num(r.mean_attacked_bit_acc),
            num(r.psnr),
            num(r.flicker),
            r.epochs
        );
    }
    out
}

pub fn write_ablation(rows: &[AblationRow], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(ABLATION_CSV);
    fs::write(&path, ablation_csv(rows))?;
    Ok(path)
}
