use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::adapters::{FitReport, Hyperparams, SentimentClassifier};
use crate::corpus::{Corpus, Polarity};

pub const DEFAULT_BATCH_GRID: [usize; 8] = [1, 2, 3, 4, 8, 16, 32, 64];

/// Labeled texts from pair sides: positive then negative for each pair.
pub fn classifier_training_data(corpus: &Corpus) -> (Vec<String>, Vec<Polarity>) {
    corpus
        .pairs
        .iter()
        .flat_map(|p| {
            [
                (p.positive.clone(), Polarity::Positive),
                (p.negative.clone(), Polarity::Negative),
            ]
        })
        .unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub fit: FitReport,
    pub train_texts: usize,
    /// Percent; `None` when the dev split is empty.
    pub dev_accuracy: Option<f64>,
}

/// Percent of `corpus` sides classified as their own polarity.
pub fn classification_accuracy(
    classifier: &dyn SentimentClassifier,
    corpus: &Corpus,
) -> Result<Option<f64>, PipelineError> {
    let (texts, labels) = classifier_training_data(corpus);
    if texts.is_empty() {
        return Ok(None);
    }
    let mut correct = 0usize;
    for (t, l) in texts.iter().zip(&labels) {
        if classifier.predict(t)? == *l {
            correct += 1;
        }
    }
    Ok(Some(100.0 * correct as f64 / texts.len() as f64))
}

pub fn train_classifier(
    classifier: &mut dyn SentimentClassifier,
    train: &Corpus,
    dev: &Corpus,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<ClassifierReport, PipelineError> {
    let (texts, labels) = classifier_training_data(train);
    if texts.is_empty() {
        return Err(PipelineError::EmptyExamples);
    }
    let fit = classifier.fit(&texts, &labels, hyper, seed)?;
    let dev_accuracy = classification_accuracy(classifier, dev)?;
    Ok(ClassifierReport {
        fit,
        train_texts: texts.len(),
        dev_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSearch {
    pub best: usize,
    pub best_score: f64,
    /// `(batch_size, score)` in grid order.
    pub table: Vec<(usize, f64)>,
}

/// Runs `trial` once per grid point and returns the highest-scoring batch size.
/// Equal scores go to the smaller batch; NaN never wins.
pub fn batch_size_search<E>(
    grid: &[usize],
    mut trial: impl FnMut(usize) -> Result<f64, E>,
) -> Result<BatchSearch, E>
where
    E: From<PipelineError>,
{
    if grid.is_empty() {
        return Err(PipelineError::EmptyGrid.into());
    }
    let mut table = Vec::with_capacity(grid.len());
    for &b in grid {
        table.push((b, trial(b)?));
    }
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    let &(best, best_score) = table
        .iter()
        .reduce(|a, b| {
            let (ka, kb) = (key(a.1), key(b.1));
            if kb > ka || (kb == ka && b.0 < a.0) {
                b
            } else {
                a
            }
        })
        .expect("non-empty grid");
    Ok(BatchSearch {
        best,
        best_score,
        table,
    })
}
