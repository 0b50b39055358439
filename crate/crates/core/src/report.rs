//! Analysis-ready CSV emission (and re-parsing for the report command).
//!
//! Three files per run: `records.csv` with one row per
//! (record, layer, k); `histograms.csv` with 20 bins on [0, 1] of the
//! k-LRP values per (model, sample count, layer, k) group; `scatter.csv`
//! pairing the pre-softmax k-LRP (k = 100 cell) with softmax robustness
//! per point. Deterministic replicas are deduplicated for histograms and
//! scatter, never for `records.csv`.

use crate::error::{Error, Result};
use crate::experiment::{dedup_group, scatter_cell, GeometryOutput, Summary};
use crate::config::ExperimentConfig;
use crate::metrics::{ModelKind, RobustnessRecord};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub const RECORDS_HEADER: &str =
    "point_id,model_kind,sample_count,layer,k,klrp,softmax_rob,attack_succeeded,clean_pred,adv_pred,true_label";

const HISTOGRAM_BINS: usize = 20;

/// One `records.csv` row per (record, layer, k).
pub fn record_lines(records: &[RobustnessRecord]) -> Vec<String> {
    let mut lines = Vec::new();
    for r in records {
        for (&(layer, k), &v) in &r.klrp {
            lines.push(format!(
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.point_id,
                r.model_kind.as_str(),
                r.sample_count,
                layer,
                k,
                v,
                r.softmax_robustness,
                r.attack_succeeded,
                r.clean_prediction,
                r.adversarial_prediction,
                r.true_label
            ));
        }
    }
    lines
}

fn write_lines(path: &Path, header: &str, lines: &[String]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{header}")?;
    for line in lines {
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

fn group_keys(records: &[RobustnessRecord]) -> Vec<(ModelKind, usize)> {
    let mut keys = Vec::new();
    for r in records {
        let key = (r.model_kind, r.sample_count);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys
}

/// Histogram rows: 20 bins on [0, 1] of k-LRP per group and (layer, k).
fn histogram_lines(records: &[RobustnessRecord]) -> Vec<String> {
    let mut lines = Vec::new();
    for (kind, n) in group_keys(records) {
        let rows = dedup_group(records, kind, n);
        let mut cells: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for r in &rows {
            for (&cell, &v) in &r.klrp {
                cells.entry(cell).or_default().push(v);
            }
        }
        for ((layer, k), values) in cells {
            let mut counts = vec![0usize; HISTOGRAM_BINS];
            for &v in &values {
                let bin = ((v * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
                counts[bin] += 1;
            }
            for (bin, &count) in counts.iter().enumerate() {
                lines.push(format!(
                    "{},{},{},{},{},{},{},{}",
                    kind.as_str(),
                    n,
                    layer,
                    k,
                    bin,
                    bin as f64 / HISTOGRAM_BINS as f64,
                    (bin + 1) as f64 / HISTOGRAM_BINS as f64,
                    count
                ));
            }
        }
    }
    lines
}

/// Scatter rows at the (pre-softmax, k=100) cell.
fn scatter_lines(records: &[RobustnessRecord], layer: usize, k: usize) -> Vec<String> {
    let mut lines = Vec::new();
    for (kind, n) in group_keys(records) {
        for r in dedup_group(records, kind, n) {
            if let Some(&v) = r.klrp.get(&(layer, k)) {
                lines.push(format!(
                    "{},{},{},{},{}",
                    kind.as_str(),
                    n,
                    r.point_id,
                    v,
                    r.softmax_robustness
                ));
            }
        }
    }
    lines
}

/// Write `records.csv`, `histograms.csv` and `scatter.csv` into `dir`.
pub fn emit_report(records: &[RobustnessRecord], cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_lines(&dir.join("records.csv"), RECORDS_HEADER, &record_lines(records))?;
    write_lines(
        &dir.join("histograms.csv"),
        "model_kind,sample_count,layer,k,bin,bin_lo,bin_hi,count",
        &histogram_lines(records),
    )?;
    let (layer, k) = scatter_cell(cfg);
    write_lines(
        &dir.join("scatter.csv"),
        "model_kind,sample_count,point_id,klrp,softmax_rob",
        &scatter_lines(records, layer, k),
    )?;
    Ok(())
}

/// Load `records.csv` back into records (inverse of `record_lines`).
pub fn parse_records(path: &Path) -> Result<Vec<RobustnessRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RECORDS_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "records.csv header mismatch: got {other:?}"
            )))
        }
    }
    let mut by_key: BTreeMap<(usize, String, usize), RobustnessRecord> = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Format(format!(
                "records.csv line {}: expected 11 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| Error::Format(format!("records.csv line {}: bad {what}", lineno + 2));
        let point_id: usize = fields[0].parse().map_err(|_| bad("point_id"))?;
        let kind = ModelKind::parse(fields[1])?;
        let sample_count: usize = fields[2].parse().map_err(|_| bad("sample_count"))?;
        let layer: usize = fields[3].parse().map_err(|_| bad("layer"))?;
        let k: usize = fields[4].parse().map_err(|_| bad("k"))?;
        let klrp: f64 = fields[5].parse().map_err(|_| bad("klrp"))?;
        let softmax_rob: f64 = fields[6].parse().map_err(|_| bad("softmax_rob"))?;
        let attack_succeeded: bool = fields[7].parse().map_err(|_| bad("attack_succeeded"))?;
        let clean_pred: usize = fields[8].parse().map_err(|_| bad("clean_pred"))?;
        let adv_pred: usize = fields[9].parse().map_err(|_| bad("adv_pred"))?;
        let true_label: usize = fields[10].parse().map_err(|_| bad("true_label"))?;
        let entry = by_key
            .entry((point_id, fields[1].to_string(), sample_count))
            .or_insert_with(|| RobustnessRecord {
                point_id,
                model_kind: kind,
                sample_count,
                true_label,
                clean_prediction: clean_pred,
                adversarial_prediction: adv_pred,
                softmax_robustness: softmax_rob,
                klrp: BTreeMap::new(),
                klrp_expected: BTreeMap::new(),
                attack_succeeded,
            });
        entry.klrp.insert((layer, k), klrp);
        entry.klrp_expected.insert((layer, k), klrp);
    }
    Ok(by_key.into_values().collect())
}

/// Human-readable run summary (also written next to the CSVs).
pub fn format_summary(summary: &Summary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "train accuracy {:.4}, test accuracy {:.4}\n",
        summary.train_accuracy, summary.test_accuracy
    ));
    if let Some(acc) = summary.hmc_acceptance {
        out.push_str(&format!("hmc acceptance rate {acc:.3}\n"));
    }
    out.push_str(&format!(
        "scatter cell: layer {}, k = {}\n",
        summary.scatter_layer, summary.scatter_k
    ));
    for g in &summary.groups {
        out.push_str(&format!(
            "\n[{} N={}] points {}, attack success {:.3}, mean softmax robustness {:.4}\n",
            g.kind.as_str(),
            g.sample_count,
            g.points,
            g.attack_success_rate,
            g.mean_softmax_robustness
        ));
        for (&(layer, k), &v) in &g.mean_klrp {
            let e = g.mean_klrp_expected[&(layer, k)];
            out.push_str(&format!(
                "  layer {layer} k {k:>4}: mean k-LRP {v:.4} (expected-robustness mode {e:.4})\n"
            ));
        }
        match g.lrp_softmax_pearson {
            Some(r) => out.push_str(&format!("  pearson(k-LRP, softmax rob) = {r:.4}\n")),
            None => out.push_str("  pearson(k-LRP, softmax rob) = degenerate\n"),
        }
    }
    if !summary.gaps.is_empty() {
        out.push_str("\nbayes - deterministic mean k-LRP gaps:\n");
        for &(n, layer, k, gap) in &summary.gaps {
            out.push_str(&format!("  N={n} layer {layer} k {k:>4}: {gap:+.4}\n"));
        }
    }
    out
}

/// Geometry CSVs: per-N summary ratios and the per-point table.
pub fn emit_geometry(out: &GeometryOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let lines: Vec<String> = out
        .ratios
        .iter()
        .map(|(n, r)| format!("{n},{r}"))
        .collect();
    write_lines(&dir.join("geometry.csv"), "sample_count,zero_avg_ratio", &lines)?;
    let lines: Vec<String> = out
        .per_point
        .iter()
        .map(|(n, i, r, d)| format!("{n},{i},{r},{d}"))
        .collect();
    write_lines(
        &dir.join("geometry_points.csv"),
        "sample_count,point,ratio,degenerate",
        &lines,
    )?;
    Ok(())
}
