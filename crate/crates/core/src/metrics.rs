//! Confusion matrix and precision/recall/F1 reporting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ingest::{Beat, BeatSet};
use crate::par::{self, Execution};
use crate::{Class, Error, Result};

/// Rows are ground truth, columns are predictions, both in `[N, S, V, F]`
/// order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 4]; 4]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn record(&mut self, truth: Class, predicted: Class) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..4).map(|i| self.counts[i][i]).sum()
    }

    /// Ground-truth count of class `i`.
    pub fn support(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// Number of beats predicted as class `i`.
    pub fn predicted(&self, i: usize) -> u64 {
        self.counts.iter().map(|row| row[i]).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }
}

pub fn confusion(truth: &[Class], predicted: &[Class]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::shape(
            format!("{} predictions", truth.len()),
            predicted.len(),
        ));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.record(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: [ClassScores; 4],
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub accuracy: f64,
    pub total: u64,
    pub confusion: ConfusionMatrix,
    /// Scores whose denominator was zero and were set to 0, e.g. `"S precision"`.
    pub undefined: Vec<String>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn scores(cm: &ConfusionMatrix) -> Result<EvalReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyInput("confusion matrix".into()));
    }
    let mut undefined = Vec::new();
    let mut per_class = [ClassScores::default(); 4];
    for (i, class) in Class::ALL.iter().enumerate() {
        let tp = cm.counts[i][i];
        let support = cm.support(i);
        let mut get = |r: Option<f64>, what: &str| {
            r.unwrap_or_else(|| {
                undefined.push(format!("{class} {what}"));
                0.0
            })
        };
        let precision = get(ratio(tp, cm.predicted(i)), "precision");
        let recall = get(ratio(tp, support), "recall");
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            undefined.push(format!("{class} f1"));
            0.0
        };
        per_class[i] = ClassScores {
            precision,
            recall,
            f1,
            support,
        };
    }

    let avg = |f: fn(&ClassScores) -> f64, weighted: bool| -> f64 {
        if weighted {
            per_class
                .iter()
                .map(|c| c.support as f64 * f(c))
                .sum::<f64>()
                / total as f64
        } else {
            per_class.iter().map(f).sum::<f64>() / 4.0
        }
    };
    let averages = |weighted| Averages {
        precision: avg(|c| c.precision, weighted),
        recall: avg(|c| c.recall, weighted),
        f1: avg(|c| c.f1, weighted),
    };

    Ok(EvalReport {
        per_class,
        macro_avg: averages(false),
        weighted_avg: averages(true),
        accuracy: cm.trace() as f64 / total as f64,
        total,
        confusion: *cm,
        undefined,
    })
}

impl EvalReport {
    /// Fixed-width table: one row per score, one column per class, then the
    /// weighted and macro averages and accuracy.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>10} {:>10} {:>10} {:>10} {:>13} {:>10} {:>10}",
            "", "N", "S", "V", "F", "Weighted avg", "Macro avg", "Accuracy"
        );
        let rows: [(&str, fn(&ClassScores) -> f64, f64, f64, bool); 3] = [
            ("Precision", |c| c.precision, self.weighted_avg.precision, self.macro_avg.precision, false),
            ("Recall", |c| c.recall, self.weighted_avg.recall, self.macro_avg.recall, true),
            ("F1-score", |c| c.f1, self.weighted_avg.f1, self.macro_avg.f1, false),
        ];
        for (name, get, w, m, acc) in rows {
            let _ = write!(s, "{name:<10}");
            for c in &self.per_class {
                let _ = write!(s, " {:>10.6}", get(c));
            }
            let _ = write!(s, " {w:>13.6} {m:>10.6}");
            if acc {
                let _ = write!(s, " {:>10.6}", self.accuracy);
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<10}", "Samples");
        for c in &self.per_class {
            let _ = write!(s, " {:>10}", c.support);
        }
        let _ = writeln!(s, " {:>13}", self.total);
        if !self.undefined.is_empty() {
            let _ = writeln!(s, "undefined (set to 0): {}", self.undefined.join(", "));
        }
        s
    }

    /// `metric,N,S,V,F,weighted_avg,macro_avg` rows plus accuracy and support.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,N,S,V,F,weighted_avg,macro_avg\n");
        let rows: [(&str, fn(&ClassScores) -> f64, f64, f64); 3] = [
            ("precision", |c| c.precision, self.weighted_avg.precision, self.macro_avg.precision),
            ("recall", |c| c.recall, self.weighted_avg.recall, self.macro_avg.recall),
            ("f1", |c| c.f1, self.weighted_avg.f1, self.macro_avg.f1),
        ];
        for (name, get, w, m) in rows {
            let cols: Vec<String> = self.per_class.iter().map(|c| get(c).to_string()).collect();
            let _ = writeln!(s, "{name},{},{w},{m}", cols.join(","));
        }
        let support: Vec<String> = self.per_class.iter().map(|c| c.support.to_string()).collect();
        let _ = writeln!(s, "support,{},{},", support.join(","), self.total);
        let _ = writeln!(s, "accuracy,,,,,{},", self.accuracy);
        s
    }
}

/// Classifies every beat with `classify` and scores the result.
pub fn evaluate<F>(beats: &BeatSet, exec: Execution, classify: F) -> Result<EvalReport>
where
    F: Fn(&[f64]) -> Result<Class> + Sync + Send,
{
    let parts = par::map_chunks(&beats.beats, par::DEFAULT_CHUNK, exec, |chunk: &[Beat]| {
        let mut cm = ConfusionMatrix::default();
        for b in chunk {
            cm.record(b.label, classify(b.window())?);
        }
        Ok::<_, Error>(cm)
    });
    let mut cm = ConfusionMatrix::default();
    for part in parts {
        cm.merge(&part?);
    }
    scores(&cm)
}
