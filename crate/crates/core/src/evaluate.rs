//! Multi-label evaluation of one tagger against a reference tagger.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::goals::{all_goals, GoalSet, GOAL_COUNT};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no publication ids in common between the two label sets")]
    EmptyOverlap,
    #[error("label matrices are not aligned")]
    NotAligned,
    #[error("duplicate publication id {0:?}")]
    DuplicateId(String),
    #[error("goal {0} outside 1..=17")]
    InvalidLabel(i64),
    #[error("cannot evaluate an empty label set")]
    Empty,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Goal labels per publication, in a fixed publication order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelMatrix {
    ids: Vec<String>,
    labels: Vec<GoalSet>,
}

impl LabelMatrix {
    pub fn new(rows: impl IntoIterator<Item = (String, GoalSet)>) -> Result<Self, EvalError> {
        let mut seen = HashSet::new();
        let mut m = LabelMatrix::default();
        for (id, labels) in rows {
            if !seen.insert(id.clone()) {
                return Err(EvalError::DuplicateId(id));
            }
            m.ids.push(id);
            m.labels.push(labels);
        }
        Ok(m)
    }

    /// Builds from raw goal numbers, rejecting any outside 1..=17.
    pub fn from_goal_lists<I, G>(rows: I) -> Result<Self, EvalError>
    where
        I: IntoIterator<Item = (String, G)>,
        G: IntoIterator<Item = i64>,
    {
        let rows = rows
            .into_iter()
            .map(|(id, goals)| {
                let mut set = GoalSet::empty();
                for g in goals {
                    if !set.insert(u8::try_from(g).unwrap_or(0)) {
                        return Err(EvalError::InvalidLabel(g));
                    }
                }
                Ok((id, set))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rows)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[GoalSet] {
        &self.labels
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, GoalSet)> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.labels.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub predicted: LabelMatrix,
    pub actual: LabelMatrix,
    pub dropped_predicted: usize,
    pub dropped_actual: usize,
}

/// Restricts both matrices to their common ids, in the predicted matrix's order.
pub fn align(predicted: &LabelMatrix, actual: &LabelMatrix) -> Result<Alignment, EvalError> {
    let actual_index: HashMap<&str, GoalSet> = actual.rows().collect();
    let mut p_rows = Vec::new();
    let mut a_rows = Vec::new();
    for (id, labels) in predicted.rows() {
        if let Some(&reference) = actual_index.get(id) {
            p_rows.push((id.to_string(), labels));
            a_rows.push((id.to_string(), reference));
        }
    }
    if p_rows.is_empty() {
        return Err(EvalError::EmptyOverlap);
    }
    let common = p_rows.len();
    Ok(Alignment {
        predicted: LabelMatrix::new(p_rows)?,
        actual: LabelMatrix::new(a_rows)?,
        dropped_predicted: predicted.len() - common,
        dropped_actual: actual.len() - common,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn check_aligned(predicted: &LabelMatrix, actual: &LabelMatrix) -> Result<(), EvalError> {
    if predicted.ids != actual.ids {
        return Err(EvalError::NotAligned);
    }
    Ok(())
}

pub fn per_label_confusion(
    predicted: &LabelMatrix,
    actual: &LabelMatrix,
) -> Result<BTreeMap<u8, ConfusionCounts>, EvalError> {
    check_aligned(predicted, actual)?;
    let mut out: BTreeMap<u8, ConfusionCounts> = all_goals()
        .map(|g| (g, ConfusionCounts::default()))
        .collect();
    for (p, a) in predicted.labels.iter().zip(&actual.labels) {
        for (goal, c) in out.iter_mut() {
            match (p.contains(*goal), a.contains(*goal)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn harmonic(precision: f64, recall: f64) -> f64 {
    safe_div(2.0 * precision * recall, precision + recall)
}

/// Precision, recall and F1 with zero for any zero denominator.
pub fn prf(c: &ConfusionCounts) -> Prf {
    let precision = safe_div(c.tp as f64, (c.tp + c.fp) as f64);
    let recall = safe_div(c.tp as f64, (c.tp + c.fn_) as f64);
    Prf {
        precision,
        recall,
        f1: harmonic(precision, recall),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowLabel {
    Goal(u8),
    Micro,
    Macro,
    Weighted,
    Samples,
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowLabel::Goal(g) => write!(f, "SDG{g}"),
            RowLabel::Micro => f.write_str("micro avg"),
            RowLabel::Macro => f.write_str("macro avg"),
            RowLabel::Weighted => f.write_str("weighted avg"),
            RowLabel::Samples => f.write_str("samples avg"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub label: RowLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReportOptions {
    /// Leave samples with no predicted goals out of the samples average
    /// instead of counting them as precision 0.
    pub skip_empty_predictions: bool,
}

/// Seventeen per-goal rows followed by micro, macro, weighted and samples averages.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub rows: Vec<MetricRow>,
}

impl ClassificationReport {
    pub fn row(&self, label: RowLabel) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// CSV with metrics at six decimal places.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "label,precision,recall,f1,support")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{}",
                r.label, r.precision, r.recall, r.f1, r.support
            )?;
        }
        Ok(())
    }
}

pub fn classification_report(
    predicted: &LabelMatrix,
    actual: &LabelMatrix,
    options: ReportOptions,
) -> Result<ClassificationReport, EvalError> {
    check_aligned(predicted, actual)?;
    if predicted.is_empty() {
        return Err(EvalError::Empty);
    }
    let confusion = per_label_confusion(predicted, actual)?;
    let mut rows = Vec::with_capacity(GOAL_COUNT as usize + 4);
    for (&goal, c) in &confusion {
        let m = prf(c);
        rows.push(MetricRow {
            label: RowLabel::Goal(goal),
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            support: c.support(),
        });
    }
    let total_support: u64 = confusion.values().map(ConfusionCounts::support).sum();

    let summed = confusion
        .values()
        .fold(ConfusionCounts::default(), |acc, c| ConfusionCounts {
            tp: acc.tp + c.tp,
            fp: acc.fp + c.fp,
            fn_: acc.fn_ + c.fn_,
            tn: acc.tn + c.tn,
        });
    let micro = prf(&summed);
    rows.push(MetricRow {
        label: RowLabel::Micro,
        precision: micro.precision,
        recall: micro.recall,
        f1: micro.f1,
        support: total_support,
    });

    let per_goal = rows[..GOAL_COUNT as usize].to_vec();
    let n = per_goal.len() as f64;
    rows.push(MetricRow {
        label: RowLabel::Macro,
        precision: per_goal.iter().map(|r| r.precision).sum::<f64>() / n,
        recall: per_goal.iter().map(|r| r.recall).sum::<f64>() / n,
        f1: per_goal.iter().map(|r| r.f1).sum::<f64>() / n,
        support: total_support,
    });

    // Terms are formed as support·tp/denominator so that weighted recall
    // reduces to Σtp/Σsupport bit-for-bit, i.e. equals micro recall.
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for (c, r) in confusion.values().zip(&per_goal) {
        let s = c.support() as f64;
        wp += safe_div(s * c.tp as f64, (c.tp + c.fp) as f64);
        wr += safe_div(s * c.tp as f64, (c.tp + c.fn_) as f64);
        wf += s * r.f1;
    }
    let ts = total_support as f64;
    rows.push(MetricRow {
        label: RowLabel::Weighted,
        precision: safe_div(wp, ts),
        recall: safe_div(wr, ts),
        f1: safe_div(wf, ts),
        support: total_support,
    });

    let (mut sp, mut sr, mut sf, mut counted) = (0.0, 0.0, 0.0, 0usize);
    for (p, a) in predicted.labels.iter().zip(&actual.labels) {
        if options.skip_empty_predictions && p.is_empty() {
            continue;
        }
        let hit = p.intersection(a).len() as f64;
        let precision = safe_div(hit, p.len() as f64);
        let recall = safe_div(hit, a.len() as f64);
        sp += precision;
        sr += recall;
        sf += harmonic(precision, recall);
        counted += 1;
    }
    let cn = counted as f64;
    rows.push(MetricRow {
        label: RowLabel::Samples,
        precision: safe_div(sp, cn),
        recall: safe_div(sr, cn),
        f1: safe_div(sf, cn),
        support: total_support,
    });

    Ok(ClassificationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[(&str, &[i64])]) -> LabelMatrix {
        LabelMatrix::from_goal_lists(
            rows.iter()
                .map(|(id, g)| (id.to_string(), g.iter().copied())),
        )
        .unwrap()
    }

    #[test]
    fn align_examples() {
        let p = matrix(&[("p1", &[1]), ("p2", &[2]), ("p3", &[3])]);
        let a = matrix(&[("p2", &[2]), ("p3", &[4]), ("p4", &[5])]);
        let al = align(&p, &a).unwrap();
        assert_eq!(al.predicted.ids(), ["p2", "p3"]);
        assert_eq!(al.actual.ids(), ["p2", "p3"]);
        assert_eq!((al.dropped_predicted, al.dropped_actual), (1, 1));
        let same = align(&p, &p).unwrap();
        assert_eq!(same.predicted, p);
        let other = matrix(&[("x", &[1])]);
        assert!(matches!(align(&p, &other), Err(EvalError::EmptyOverlap)));
    }

    #[test]
    fn matrix_validation() {
        assert!(matches!(
            LabelMatrix::from_goal_lists([("a".to_string(), vec![18i64])]),
            Err(EvalError::InvalidLabel(18))
        ));
        assert!(matches!(
            LabelMatrix::from_goal_lists([
                ("a".to_string(), vec![1i64]),
                ("a".to_string(), vec![2])
            ]),
            Err(EvalError::DuplicateId(_))
        ));
    }

    #[test]
    fn confusion_examples() {
        let c = per_label_confusion(&matrix(&[("s", &[7])]), &matrix(&[("s", &[7])])).unwrap();
        assert_eq!(
            c[&7],
            ConfusionCounts {
                tp: 1,
                fp: 0,
                fn_: 0,
                tn: 0
            }
        );
        assert!(all_goals().filter(|g| *g != 7).all(|g| c[&g].tn == 1));
        let c = per_label_confusion(&matrix(&[("s", &[7])]), &matrix(&[("s", &[11])])).unwrap();
        assert_eq!(c[&7].fp, 1);
        assert_eq!(c[&11].fn_, 1);
        assert!(matches!(
            per_label_confusion(&matrix(&[("s", &[7])]), &matrix(&[("t", &[7])])),
            Err(EvalError::NotAligned)
        ));
    }

    #[test]
    fn prf_examples() {
        let m = prf(&ConfusionCounts {
            tp: 2,
            fp: 1,
            fn_: 1,
            tn: 0,
        });
        for v in [m.precision, m.recall, m.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-12);
        }
        let m = prf(&ConfusionCounts {
            tp: 0,
            fp: 0,
            fn_: 5,
            tn: 0,
        });
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let m = prf(&ConfusionCounts {
            tp: 411,
            fp: 652,
            fn_: 384,
            tn: 0,
        });
        assert!((m.precision - 0.386642).abs() < 2e-5);
        assert!((m.recall - 0.516981).abs() < 2e-5);
        assert!((m.f1 - 0.442413).abs() < 2e-5);
    }

    #[test]
    fn perfect_prediction() {
        let m = matrix(&[("a", &[1, 4]), ("b", &[11]), ("c", &[4, 11, 17])]);
        let r = classification_report(&m, &m, ReportOptions::default()).unwrap();
        for row in &r.rows {
            if row.support > 0 && row.label != RowLabel::Macro {
                assert_eq!(
                    (row.precision, row.recall, row.f1),
                    (1.0, 1.0, 1.0),
                    "{}",
                    row.label
                );
            }
        }
        // 4 of 17 goals present; the absent ones count as zeros.
        let macro_avg = r.row(RowLabel::Macro).unwrap();
        assert!((macro_avg.f1 - 4.0 / 17.0).abs() < 1e-12);
        assert_eq!(r.rows.len(), 21);
        assert_eq!(r.row(RowLabel::Micro).unwrap().support, 6);
    }

    #[test]
    fn samples_average_and_skip_flag() {
        let p = matrix(&[("a", &[1, 2]), ("b", &[])]);
        let a = matrix(&[("a", &[1]), ("b", &[3])]);
        let r = classification_report(&p, &a, ReportOptions::default()).unwrap();
        let s = r.row(RowLabel::Samples).unwrap();
        assert!((s.precision - 0.25).abs() < 1e-15);
        assert!((s.recall - 0.5).abs() < 1e-15);
        assert!((s.f1 - (2.0 / 3.0) / 2.0).abs() < 1e-15);
        let r = classification_report(
            &p,
            &a,
            ReportOptions {
                skip_empty_predictions: true,
            },
        )
        .unwrap();
        let s = r.row(RowLabel::Samples).unwrap();
        assert!((s.precision - 0.5).abs() < 1e-15);
        assert!((s.recall - 1.0).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let m = matrix(&[("a", &[1])]);
        let r = classification_report(&m, &m, ReportOptions::default()).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "label,precision,recall,f1,support");
        assert_eq!(lines[1], "SDG1,1.000000,1.000000,1.000000,1");
        assert_eq!(lines[2], "SDG2,0.000000,0.000000,0.000000,0");
        assert_eq!(lines[18], "micro avg,1.000000,1.000000,1.000000,1");
        assert_eq!(lines[21], "samples avg,1.000000,1.000000,1.000000,1");
    }
}
