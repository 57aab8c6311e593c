//! Test-split evaluation grouped by talker count, SNR, and room novelty.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::dsp::GammatoneBank;
use crate::geometry::{PredictionGrid, SectorGrid, TargetGrid};
use crate::loss_metrics::{evaluate, MetricReport};
use crate::model::FeatureInput;

use super::featurize::load_features;
use super::manifest::{DatasetManifest, Split};
use super::train::load_trained_model;
use super::PipelineError;

/// Default detection threshold for all evaluation and decoding.
pub const DETECTION_THRESHOLD: f64 = 0.5;

/// One prediction/target pair with its grouping keys.
pub struct EvalRow {
    pub talkers: usize,
    pub snr_db: Option<f64>,
    pub seen: Option<bool>,
    pub pred: PredictionGrid,
    pub target: TargetGrid,
}

/// Metrics for one talker-count x SNR condition.
#[derive(Debug, Clone, Serialize)]
pub struct EvalCell {
    pub talkers: usize,
    pub snr_db: Option<f64>,
    pub overall: MetricReport,
    pub seen: Option<MetricReport>,
    pub unseen: Option<MetricReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub cells: Vec<EvalCell>,
    /// Pooled over every test clip.
    pub average: EvalCell,
}

fn group_rows<'a>(
    grid: &SectorGrid,
    rows: &'a [EvalRow],
    threshold: f64,
) -> (MetricReport, Option<MetricReport>, Option<MetricReport>) {
    let all: (Vec<_>, Vec<_>) = rows
        .iter()
        .map(|r| (r.pred.clone(), r.target.clone()))
        .unzip();
    let overall = evaluate(grid, &all.0, &all.1, threshold);
    let subset = |flag: bool| -> Option<MetricReport> {
        let subset: (Vec<_>, Vec<_>) = rows
            .iter()
            .filter(|r| r.seen == Some(flag))
            .map(|r| (r.pred.clone(), r.target.clone()))
            .unzip();
        if subset.0.is_empty() {
            None
        } else {
            Some(evaluate(grid, &subset.0, &subset.1, threshold))
        }
    };
    (overall, subset(true), subset(false))
}

/// Builds the grouped report from prediction rows. Exposed separately
/// from [`run_eval`] so oracle predictions can be scored directly.
pub fn build_report(grid: &SectorGrid, rows: &[EvalRow], threshold: f64) -> EvalReport {
    // cell keys in first-appearance order: (talkers, snr in millibels)
    let mut keys: Vec<(usize, Option<i64>)> = Vec::new();
    for row in rows {
        let key = (row.talkers, row.snr_db.map(|s| (s * 1000.0).round() as i64));
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.sort();
    let mut cells = Vec::new();
    for (talkers, snr_key) in keys {
        let members: Vec<&EvalRow> = rows
            .iter()
            .filter(|r| {
                r.talkers == talkers
                    && r.snr_db.map(|s| (s * 1000.0).round() as i64) == snr_key
            })
            .collect();
        let member_rows: Vec<EvalRow> = members
            .iter()
            .map(|r| EvalRow {
                talkers: r.talkers,
                snr_db: r.snr_db,
                seen: r.seen,
                pred: r.pred.clone(),
                target: r.target.clone(),
            })
            .collect();
        let (overall, seen, unseen) = group_rows(grid, &member_rows, threshold);
        cells.push(EvalCell {
            talkers,
            snr_db: snr_key.map(|k| k as f64 / 1000.0),
            overall,
            seen,
            unseen,
        });
    }
    let (overall, seen, unseen) = group_rows(grid, rows, threshold);
    EvalReport {
        cells,
        average: EvalCell {
            talkers: 0,
            snr_db: None,
            overall,
            seen,
            unseen,
        },
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.fract() == 0.0 => format!("{x:.0}"),
        Some(x) => format!("{x:.2}"),
        None => String::new(),
    }
}

fn metric_columns(report: Option<&MetricReport>) -> String {
    match report {
        Some(r) => format!(
            "{:.6},{:.6},{},{},{},{}",
            r.detection_accuracy,
            r.f1,
            fmt_opt(r.azimuth_dae_deg),
            fmt_opt(r.elevation_dae_deg),
            fmt_opt(r.combined_dae_deg),
            r.n_valid
        ),
        None => ",,,,,".to_string(),
    }
}

/// Machine-readable table: one row per condition cell plus one average
/// row.
pub fn write_csv(report: &EvalReport, path: &Path) -> Result<(), PipelineError> {
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| PipelineError::io(path, e))?,
    );
    writeln!(
        w,
        "cell,talkers,snr_db,clips,\
         accuracy,f1,azimuth_dae,elevation_dae,combined_dae,n_valid,\
         accuracy_seen,f1_seen,azimuth_dae_seen,elevation_dae_seen,combined_dae_seen,n_valid_seen,\
         accuracy_unseen,f1_unseen,azimuth_dae_unseen,elevation_dae_unseen,combined_dae_unseen,n_valid_unseen"
    )
    .map_err(|e| PipelineError::io(path, e))?;
    for cell in &report.cells {
        writeln!(
            w,
            "{}t_snr{},{},{},{},{},{},{}",
            cell.talkers,
            fmt_opt(cell.snr_db),
            cell.talkers,
            fmt_opt(cell.snr_db),
            cell.overall.clip_count,
            metric_columns(Some(&cell.overall)),
            metric_columns(cell.seen.as_ref()),
            metric_columns(cell.unseen.as_ref()),
        )
        .map_err(|e| PipelineError::io(path, e))?;
    }
    writeln!(
        w,
        "average,,,{},{},{},{}",
        report.average.overall.clip_count,
        metric_columns(Some(&report.average.overall)),
        metric_columns(report.average.seen.as_ref()),
        metric_columns(report.average.unseen.as_ref()),
    )
    .map_err(|e| PipelineError::io(path, e))?;
    w.flush().map_err(|e| PipelineError::io(path, e))?;
    Ok(())
}

fn pair(seen: Option<&MetricReport>, unseen: Option<&MetricReport>, f: impl Fn(&MetricReport) -> String) -> String {
    match (seen, unseen) {
        (Some(s), Some(u)) => format!("{} / {}", f(s), f(u)),
        (Some(s), None) => f(s),
        (None, Some(u)) => format!("- / {}", f(u)),
        (None, None) => "-".into(),
    }
}

/// Human-readable table grouped like the performance comparison tables:
/// one block per metric, cells as talker-count x SNR, seen/unseen values
/// side by side.
pub fn format_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let header = |out: &mut String, title: &str| {
        out.push_str(&format!("\n{title} (seen / unseen rooms)\n"));
        out.push_str("  talkers  snr_db   value\n");
    };
    let acc = |r: &MetricReport| format!("{:.2}%", 100.0 * r.detection_accuracy);
    let f1 = |r: &MetricReport| format!("{:.2}%", 100.0 * r.f1);
    let azi = |r: &MetricReport| {
        r.azimuth_dae_deg
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "n/a".into())
    };
    let ele = |r: &MetricReport| {
        r.elevation_dae_deg
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "n/a".into())
    };
    type Extract = (&'static str, Box<dyn Fn(&MetricReport) -> String>);
    let metrics: Vec<Extract> = vec![
        ("Sound detection accuracy", Box::new(acc)),
        ("Sound detection F1", Box::new(f1)),
        ("Azimuth DAE (deg)", Box::new(azi)),
        ("Elevation DAE (deg)", Box::new(ele)),
    ];
    for (title, extract) in &metrics {
        header(&mut out, title);
        for cell in &report.cells {
            let value = if cell.seen.is_none() && cell.unseen.is_none() {
                extract(&cell.overall)
            } else {
                pair(cell.seen.as_ref(), cell.unseen.as_ref(), extract)
            };
            out.push_str(&format!(
                "  {:>7}  {:>6}   {}\n",
                cell.talkers,
                fmt_opt(cell.snr_db),
                value
            ));
        }
        let avg = if report.average.seen.is_none() && report.average.unseen.is_none() {
            extract(&report.average.overall)
        } else {
            pair(report.average.seen.as_ref(), report.average.unseen.as_ref(), extract)
        };
        out.push_str(&format!("  average          {avg}\n"));
    }
    out
}

/// Evaluates a trained checkpoint on the manifest's test split and writes
/// `eval.csv` and `eval.txt` under `out_dir`.
pub fn run_eval(
    manifest: &DatasetManifest,
    cache_dir: &Path,
    checkpoint_dir: &Path,
    out_dir: &Path,
    threshold: f64,
) -> Result<EvalReport, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let (net, _sidecar) = load_trained_model(checkpoint_dir)?;
    let bank = GammatoneBank::default_64();
    let mut rows = Vec::new();
    for record in manifest.split(Split::Test) {
        let features = load_features(manifest, cache_dir, record, &bank)?;
        let pred = net.predict(&FeatureInput::from_features(&features))?;
        rows.push(EvalRow {
            talkers: record.talkers,
            snr_db: record.snr_db,
            seen: record.seen,
            pred,
            target: record.target.clone(),
        });
    }
    if rows.is_empty() {
        return Err(PipelineError::EmptySplit { split: "test" });
    }
    let report = build_report(&manifest.header.grid, &rows, threshold);
    write_csv(&report, &out_dir.join("eval.csv"))?;
    std::fs::write(out_dir.join("eval.txt"), format_text(&report))
        .map_err(|e| PipelineError::io(&out_dir.join("eval.txt"), e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{encode_targets, Doa};

    fn oracle_rows(grid: &SectorGrid) -> Vec<EvalRow> {
        let mut rows = Vec::new();
        for talkers in 1..=3usize {
            for snr in [20.0, 10.0, 0.0] {
                for k in 0..2 {
                    let doas: Vec<Doa> = (0..talkers)
                        .map(|t| {
                            Doa::new(
                                (k * 95 + t * 120) as f64 % 360.0,
                                ((t * 30) as f64) - 30.0,
                            )
                            .unwrap()
                        })
                        .collect();
                    let target = encode_targets(grid, &doas).unwrap();
                    rows.push(EvalRow {
                        talkers,
                        snr_db: Some(snr),
                        seen: Some(k % 2 == 0),
                        pred: PredictionGrid::from_targets(&target),
                        target,
                    });
                }
            }
        }
        rows
    }

    #[test]
    fn ground_truth_predictions_score_perfectly() {
        let grid = SectorGrid::default_8x3();
        let rows = oracle_rows(&grid);
        let report = build_report(&grid, &rows, 0.5);
        assert_eq!(report.cells.len(), 9, "3 talker counts x 3 SNRs");
        for cell in &report.cells {
            assert_eq!(cell.overall.detection_accuracy, 1.0);
            assert_eq!(cell.overall.f1, 1.0);
            assert_eq!(cell.overall.combined_dae_deg, Some(0.0));
        }
        assert_eq!(report.average.overall.detection_accuracy, 1.0);
        assert_eq!(report.average.overall.combined_dae_deg, Some(0.0));
        assert!(report.average.seen.is_some());
        assert!(report.average.unseen.is_some());
    }

    #[test]
    fn csv_row_count_is_cells_plus_average() {
        let dir = tempfile::tempdir().unwrap();
        let grid = SectorGrid::default_8x3();
        let rows = oracle_rows(&grid);
        let report = build_report(&grid, &rows, 0.5);
        let path = dir.path().join("eval.csv");
        write_csv(&report, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // header + 9 cells + 1 average
        assert_eq!(text.lines().count(), 1 + 9 + 1);
    }

    #[test]
    fn text_table_mentions_every_metric_block() {
        let grid = SectorGrid::default_8x3();
        let report = build_report(&grid, &oracle_rows(&grid), 0.5);
        let text = format_text(&report);
        for needle in [
            "Sound detection accuracy",
            "Sound detection F1",
            "Azimuth DAE",
            "Elevation DAE",
            "average",
        ] {
            assert!(text.contains(needle), "missing {needle} in:\n{text}");
        }
    }
}
