//! Segmentation scores: Jaccard, Dice, TPR, TNR and pixel accuracy.
//!
//! Each class is scored one-vs-rest; the macro figure is the unweighted mean
//! over the classes present in the ground truth. Ambiguous pixels are not
//! counted.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::LabelImage;
use crate::probmap::Segmentation;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricSet {
    pub jaccard: f64,
    pub dice: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub accuracy: f64,
}

impl MetricSet {
    pub const NAMES: [&'static str; 5] = ["jaccard", "dice", "tpr", "tnr", "accuracy"];

    pub fn values(&self) -> [f64; 5] {
        [self.jaccard, self.dice, self.tpr, self.tnr, self.accuracy]
    }

    fn from_values(v: [f64; 5]) -> Self {
        MetricSet {
            jaccard: v[0],
            dice: v[1],
            tpr: v[2],
            tnr: v[3],
            accuracy: v[4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    fn ratio(num: u64, den: u64) -> f64 {
        if den == 0 {
            1.0
        } else {
            num as f64 / den as f64
        }
    }

    pub fn metrics(&self, accuracy: f64) -> MetricSet {
        MetricSet {
            jaccard: Self::ratio(self.tp, self.tp + self.fp + self.fn_),
            dice: Self::ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_),
            tpr: Self::ratio(self.tp, self.tp + self.fn_),
            tnr: Self::ratio(self.tn, self.tn + self.fp),
            accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    /// `None` for classes absent from the ground truth (in every fold).
    pub per_class: Vec<Option<MetricSet>>,
    pub per_class_std: Vec<Option<MetricSet>>,
    pub macro_mean: MetricSet,
    pub macro_std: MetricSet,
    pub folds: usize,
    pub notices: Vec<String>,
}

/// Per-class confusion counts and the evaluated pixel count.
pub fn confusion(pred: &Segmentation, truth: &LabelImage, classes: usize) -> Result<(Vec<Confusion>, u64, u64)> {
    if pred.width != truth.width() || pred.height != truth.height() {
        return Err(Error::data(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.width,
            pred.height,
            truth.width(),
            truth.height()
        )));
    }
    // rows: truth, cols: prediction (UNKNOWN lands in an extra column)
    let cols = classes + 1;
    let mut table = vec![0u64; classes * cols];
    let mut evaluated = 0u64;
    for ((&p, &t), &amb) in pred.classes.iter().zip(truth.classes()).zip(truth.ambiguous()) {
        if amb {
            continue;
        }
        let t = usize::from(t);
        if t >= classes {
            return Err(Error::data(format!("ground-truth class {t} is not below {classes}")));
        }
        let p = usize::from(p).min(classes);
        table[t * cols + p] += 1;
        evaluated += 1;
    }
    let correct: u64 = (0..classes).map(|c| table[c * cols + c]).sum();
    let per_class = (0..classes)
        .map(|c| {
            let tp = table[c * cols + c];
            let row: u64 = table[c * cols..(c + 1) * cols].iter().sum();
            let col: u64 = (0..classes).map(|t| table[t * cols + c]).sum();
            let fn_ = row - tp;
            let fp = col - tp;
            Confusion {
                tp,
                fp,
                fn_,
                tn: evaluated - tp - fn_ - fp,
            }
        })
        .collect();
    Ok((per_class, correct, evaluated))
}

pub fn score(pred: &Segmentation, truth: &LabelImage, classes: usize) -> Result<ScoreReport> {
    let (conf, correct, evaluated) = confusion(pred, truth, classes)?;
    let accuracy = if evaluated == 0 {
        1.0
    } else {
        correct as f64 / evaluated as f64
    };
    let mut notices = Vec::new();
    let mut per_class = Vec::with_capacity(classes);
    for (c, cf) in conf.iter().enumerate() {
        if cf.tp + cf.fn_ == 0 {
            notices.push(format!("class {c} absent from ground truth; excluded from macro average"));
            per_class.push(None);
        } else {
            per_class.push(Some(cf.metrics(accuracy)));
        }
    }
    let present: Vec<MetricSet> = per_class.iter().flatten().copied().collect();
    let macro_mean = if present.is_empty() {
        notices.push("no class present in ground truth".to_string());
        MetricSet::from_values([1.0; 5])
    } else {
        mean_std(&present).0
    };
    Ok(ScoreReport {
        per_class_std: per_class.iter().map(|c| c.map(|_| MetricSet::default())).collect(),
        per_class,
        macro_mean,
        macro_std: MetricSet::default(),
        folds: 1,
        notices,
    })
}

/// Unweighted mean and population standard deviation per metric.
pub fn mean_std(sets: &[MetricSet]) -> (MetricSet, MetricSet) {
    let n = sets.len() as f64;
    let mut mean = [0.0; 5];
    for s in sets {
        for (m, v) in mean.iter_mut().zip(s.values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; 5];
    for s in sets {
        for ((acc, v), m) in var.iter_mut().zip(s.values()).zip(mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let std = var.map(|v| (v / n).sqrt());
    (MetricSet::from_values(mean), MetricSet::from_values(std))
}

/// Combines per-fold (or per-image) reports: mean and population std of the
/// macro figures, and of each class over the folds where it was present.
pub fn aggregate(reports: &[ScoreReport]) -> Result<ScoreReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::data("cannot aggregate an empty report list"))?;
    let classes = first.per_class.len();
    let macros: Vec<MetricSet> = reports.iter().map(|r| r.macro_mean).collect();
    let (macro_mean, macro_std) = mean_std(&macros);
    let mut per_class = Vec::with_capacity(classes);
    let mut per_class_std = Vec::with_capacity(classes);
    for c in 0..classes {
        let sets: Vec<MetricSet> = reports.iter().filter_map(|r| r.per_class.get(c).copied().flatten()).collect();
        if sets.is_empty() {
            per_class.push(None);
            per_class_std.push(None);
        } else {
            let (m, s) = mean_std(&sets);
            per_class.push(Some(m));
            per_class_std.push(Some(s));
        }
    }
    let mut notices: Vec<String> = reports.iter().flat_map(|r| r.notices.iter().cloned()).collect();
    notices.dedup();
    Ok(ScoreReport {
        per_class,
        per_class_std,
        macro_mean,
        macro_std,
        folds: reports.len(),
        notices,
    })
}

/// Aligned table, one row per method, cells formatted `mean ± std`.
pub fn format_table(rows: &[(String, &ScoreReport)]) -> String {
    let width = rows.iter().map(|(m, _)| m.chars().count()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "Method");
    for h in ["Jaccard", "Dice", "TPR", "TNR", "Accuracy"] {
        let _ = write!(out, " | {h:<13}");
    }
    out.push('\n');
    let _ = writeln!(out, "{}", "-".repeat(width + 5 * 16));
    for (method, r) in rows {
        let _ = write!(out, "{method:<width$}");
        for (m, s) in r.macro_mean.values().iter().zip(r.macro_std.values()) {
            let _ = write!(out, " | {m:.3} ± {s:.3}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "(macro average over classes present in ground truth)");
    out
}

/// One `key=value` record per metric and aggregation level.
pub fn format_records(method: &str, report: &ScoreReport) -> String {
    let mut out = String::new();
    for (name, (m, s)) in MetricSet::NAMES
        .iter()
        .zip(report.macro_mean.values().iter().zip(report.macro_std.values()))
    {
        let _ = writeln!(
            out,
            "method={method} scope=macro metric={name} mean={m:.6} std={s:.6} folds={}",
            report.folds
        );
    }
    for (c, (mean, std)) in report.per_class.iter().zip(&report.per_class_std).enumerate() {
        if let (Some(mean), Some(std)) = (mean, std) {
            for (name, (m, s)) in MetricSet::NAMES.iter().zip(mean.values().iter().zip(std.values())) {
                let _ = writeln!(
                    out,
                    "method={method} scope=class{c} metric={name} mean={m:.6} std={s:.6} folds={}",
                    report.folds
                );
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(width: usize, height: usize, classes: Vec<u8>) -> Segmentation {
        Segmentation {
            width,
            height,
            heat: vec![1; classes.len()],
            classes,
            unknown: 0,
        }
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let truth = LabelImage::from_fn(4, 4, |x, y| ((x + y) % 3) as u8);
        let pred = seg(4, 4, truth.classes().to_vec());
        let r = score(&pred, &truth, 3).unwrap();
        assert_eq!(r.macro_mean.values(), [1.0; 5]);
    }

    #[test]
    fn complement_on_binary_image() {
        let truth = LabelImage::from_fn(2, 2, |x, _| x as u8);
        let pred = seg(2, 2, vec![1, 0, 1, 0]);
        let r = score(&pred, &truth, 2).unwrap();
        for c in r.per_class.iter().flatten() {
            assert_eq!(c.jaccard, 0.0);
            assert_eq!(c.tpr, 0.0);
        }
        assert_eq!(r.macro_mean.accuracy, 0.0);
    }

    #[test]
    fn hand_computed_two_by_two() {
        let truth = LabelImage::new(2, 2, vec![0, 0, 1, 1], vec![false; 4]).unwrap();
        let pred = seg(2, 2, vec![0, 1, 1, 1]);
        let r = score(&pred, &truth, 2).unwrap();
        let c0 = r.per_class[0].unwrap();
        let c1 = r.per_class[1].unwrap();
        assert!((c0.jaccard - 0.5).abs() < 1e-15);
        assert!((c1.jaccard - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.macro_mean.jaccard - 7.0 / 12.0).abs() < 1e-15);
        assert!((r.macro_mean.accuracy - 0.75).abs() < 1e-15);
    }

    #[test]
    fn absent_class_is_excluded_with_notice() {
        let truth = LabelImage::filled(2, 2, 0);
        let pred = seg(2, 2, vec![0, 0, 0, 1]);
        let r = score(&pred, &truth, 3).unwrap();
        assert!(r.per_class[1].is_none() && r.per_class[2].is_none());
        assert_eq!(r.notices.len(), 2);
        assert!((r.macro_mean.jaccard - 0.75).abs() < 1e-15);
    }

    #[test]
    fn ambiguous_pixels_are_ignored() {
        let mut truth = LabelImage::filled(2, 1, 0);
        truth.set_ambiguous(1, 0, true);
        let r = score(&seg(2, 1, vec![0, 1]), &truth, 2).unwrap();
        assert_eq!(r.macro_mean.accuracy, 1.0);
    }

    #[test]
    fn dimension_mismatch() {
        let truth = LabelImage::filled(2, 2, 0);
        assert!(score(&seg(4, 1, vec![0; 4]), &truth, 2).is_err());
    }

    #[test]
    fn aggregate_mean_and_population_std() {
        let mk = |j: f64| ScoreReport {
            per_class: vec![Some(MetricSet {
                jaccard: j,
                ..Default::default()
            })],
            per_class_std: vec![Some(MetricSet::default())],
            macro_mean: MetricSet {
                jaccard: j,
                ..Default::default()
            },
            macro_std: MetricSet::default(),
            folds: 1,
            notices: vec![],
        };
        let a = aggregate(&[mk(0.8), mk(0.9)]).unwrap();
        assert!((a.macro_mean.jaccard - 0.85).abs() < 1e-12);
        assert!((a.macro_std.jaccard - 0.05).abs() < 1e-12);
        let single = aggregate(&[mk(0.8)]).unwrap();
        assert_eq!(single.macro_std.jaccard, 0.0);
        let same = aggregate(&[mk(0.7), mk(0.7)]).unwrap();
        assert_eq!(same.macro_std.jaccard, 0.0);
        assert!((same.macro_mean.jaccard - 0.7).abs() < 1e-15);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn table_layout() {
        let truth = LabelImage::filled(2, 2, 0);
        let r = score(&seg(2, 2, vec![0; 4]), &truth, 2).unwrap();
        let t = format_table(&[("ResLv-3".to_string(), &r)]);
        assert!(t.contains("1.000 ± 0.000"));
        assert!(t.starts_with("Method "));
        assert!(format_records("ResLv-3", &r).contains("method=ResLv-3 scope=macro metric=jaccard mean=1.000000"));
    }
}
