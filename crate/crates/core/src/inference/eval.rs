use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::classifier::Classifier;
use super::classmap::ClassMap;
use super::prompt::prompt_labels;
use crate::contrastive::UartModel;
use crate::data::{assign_folds, check_disjoint, Dataset};
use crate::dsp::AudioSegment;
use crate::error::Result;

/// Anything that maps audio segments to vessel types.
pub trait Predictor {
    fn predict_labels(&self, segments: &[&AudioSegment]) -> Result<Vec<String>>;
    /// Recordings seen in training.
    fn train_sources(&self) -> &[String];
}

impl Predictor for UartModel {
    fn predict_labels(&self, segments: &[&AudioSegment]) -> Result<Vec<String>> {
        prompt_labels(self, segments, &self.labels)
    }

    fn train_sources(&self) -> &[String] {
        &self.train_sources
    }
}

impl Predictor for Classifier {
    fn predict_labels(&self, segments: &[&AudioSegment]) -> Result<Vec<String>> {
        self.predict(segments)
    }

    fn train_sources(&self) -> &[String] {
        &self.train_sources
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub segments: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn build(pairs: &[(String, String)], map: &ClassMap) -> Self {
        let classes = map.classes_of(pairs.iter().flat_map(|(t, p)| [t.as_str(), p.as_str()]));
        let pos = |c: &str| classes.iter().position(|x| x == c).expect("class listed");
        let mut counts = vec![vec![0; classes.len()]; classes.len()];
        for (t, p) in pairs {
            counts[pos(map.class_of(t))][pos(map.class_of(p))] += 1;
        }
        Self { classes, counts }
    }

    pub fn is_diagonal(&self) -> bool {
        self.counts
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, c)| i == j || *c == 0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub class_map: ClassMap,
}

/// Score `(truth, prediction)` pairs after mapping both through `map`.
pub fn score(fold: usize, pairs: &[(String, String)], map: &ClassMap) -> FoldResult {
    let correct = pairs.iter().filter(|(t, p)| map.same_class(t, p)).count();
    FoldResult {
        fold,
        segments: pairs.len(),
        correct,
        accuracy: if pairs.is_empty() {
            0.0
        } else {
            correct as f64 / pairs.len() as f64
        },
    }
}

/// Predict every segment of `test` and pair it with its truth. Fails if
/// the predictor was trained on any of the test recordings.
pub fn predict_fold(predictor: &dyn Predictor, test: &Dataset) -> Result<Vec<(String, String)>> {
    let test_sources: Vec<String> = test.sources().into_iter().map(|(s, _)| s).collect();
    check_disjoint(
        predictor.train_sources().iter().map(String::as_str),
        test_sources.iter().map(String::as_str),
    )?;
    let segs: Vec<&AudioSegment> = test.examples.iter().map(|e| &e.segment).collect();
    let preds = predictor.predict_labels(&segs)?;
    Ok(test
        .examples
        .iter()
        .zip(preds)
        .map(|(e, p)| (e.label().to_string(), p))
        .collect())
}

pub fn evaluate(predictor: &dyn Predictor, test: &Dataset, map: &ClassMap) -> Result<EvalReport> {
    let pairs = predict_fold(predictor, test)?;
    Ok(EvalReport::from_folds(vec![(0, pairs)], map))
}

impl EvalReport {
    /// Mean of the per-fold accuracies; the confusion matrix pools folds.
    pub fn from_folds(folds: Vec<(usize, Vec<(String, String)>)>, map: &ClassMap) -> Self {
        let results: Vec<FoldResult> = folds.iter().map(|(f, p)| score(*f, p, map)).collect();
        let all: Vec<(String, String)> = folds.into_iter().flat_map(|(_, p)| p).collect();
        Self {
            mean_accuracy: mean(results.iter().map(|r| r.accuracy)),
            folds: results,
            confusion: ConfusionMatrix::build(&all, map),
            class_map: map.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Readable summary followed by the JSON form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for f in &self.folds {
            let _ = writeln!(
                s,
                "fold {}: accuracy {:.4} ({}/{})",
                f.fold, f.accuracy, f.correct, f.segments
            );
        }
        let _ = writeln!(s, "mean accuracy: {:.4}", self.mean_accuracy);
        let _ = writeln!(s, "confusion (rows true, columns predicted):");
        let width = self
            .confusion
            .classes
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(1)
            .max(5);
        let _ = write!(s, "{:>width$}", "");
        for c in &self.confusion.classes {
            let _ = write!(s, " {c:>width$}");
        }
        s.push('\n');
        for (c, row) in self.confusion.classes.iter().zip(&self.confusion.counts) {
            let _ = write!(s, "{c:>width$}");
            for n in row {
                let _ = write!(s, " {n:>width$}");
            }
            s.push('\n');
        }
        s.push_str("json:\n");
        s.push_str(&self.to_json());
        s.push('\n');
        s
    }
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `k`-fold cross-validation grouped by source recording. `train` builds a
/// predictor from each fold's training split.
pub fn cross_validate<P: Predictor>(
    ds: &Dataset,
    k: usize,
    seed: u64,
    map: &ClassMap,
    mut train: impl FnMut(usize, &Dataset) -> Result<P>,
) -> Result<EvalReport> {
    let folds = assign_folds(&ds.sources(), k, seed)?;
    let mut out = Vec::with_capacity(k);
    for fold in 0..k {
        let test_ids = folds.test_sources(fold);
        let train_ids: BTreeSet<String> = folds.train_sources(fold);
        let train_ds = ds.from_sources(&train_ids);
        let test_ds = ds.from_sources(&test_ids);
        check_disjoint(
            train_ds.examples.iter().map(|e| e.source_id()),
            test_ds.examples.iter().map(|e| e.source_id()),
        )?;
        let predictor = train(fold, &train_ds)?;
        out.push((fold, predict_fold(&predictor, &test_ds)?));
    }
    Ok(EvalReport::from_folds(out, map))
}
