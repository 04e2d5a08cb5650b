//! Confusion matrices, per-class/averaged classification scores, and
//! one-vs-rest ROC curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} true labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        if classes == 0 {
            return Err(Error::InvalidArgument("confusion matrix needs at least one class".into()));
        }
        let mut counts = vec![0u64; classes * classes];
        for (i, (&t, &p)) in truth.iter().zip(predicted).enumerate() {
            if t >= classes || p >= classes {
                return Err(Error::InvalidArgument(format!(
                    "sample {i}: label pair ({t}, {p}) outside 0..{classes}"
                )));
            }
            counts[t * classes + p] += 1;
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    /// Builds a matrix directly from row-major counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if classes == 0 || counts.len() != classes * classes {
            return Err(Error::ShapeMismatch(format!(
                "{} counts for {classes} classes",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.classes)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    /// `(tp, fp, fn)` for class `k` treated as positive.
    pub fn one_vs_rest(&self, k: usize) -> (u64, u64, u64) {
        let tp = self.get(k, k);
        let col: u64 = (0..self.classes).map(|t| self.get(t, k)).sum();
        let row: u64 = (0..self.classes).map(|p| self.get(k, p)).sum();
        (tp, col - tp, row - tp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Unweighted mean over classes.
    #[default]
    Macro,
    /// Mean weighted by class support.
    Weighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub per_class: Vec<ClassScores>,
    /// Set when some ratio was 0/0 and therefore reported as 0.
    pub zero_division: bool,
}

fn ratio(num: u64, den: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("metrics of an empty confusion matrix".into()));
    }
    let mut zero_division = false;
    let per_class = (0..cm.classes())
        .map(|k| {
            let (tp, fp, fn_) = cm.one_vs_rest(k);
            let precision = ratio(tp, tp + fp, &mut zero_division);
            let recall = ratio(tp, tp + fn_, &mut zero_division);
            let f1 = if precision + recall == 0.0 {
                zero_division = true;
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores { precision, recall, f1, support: tp + fn_ }
        })
        .collect();
    Ok(ClassificationMetrics {
        accuracy: cm.trace() as f64 / total as f64,
        per_class,
        zero_division,
    })
}

impl ClassificationMetrics {
    pub fn averaged(&self, how: Averaging) -> Averages {
        let weights: Vec<f64> = match how {
            Averaging::Macro => vec![1.0; self.per_class.len()],
            Averaging::Weighted => self.per_class.iter().map(|s| s.support as f64).collect(),
        };
        let total: f64 = weights.iter().sum();
        let avg = |f: fn(&ClassScores) -> f64| {
            if total == 0.0 {
                return 0.0;
            }
            self.per_class.iter().zip(&weights).map(|(s, w)| f(s) * w).sum::<f64>() / total
        };
        Averages {
            precision: avg(|s| s.precision),
            recall: avg(|s| s.recall),
            f1: avg(|s| s.f1),
        }
    }

    pub fn macro_avg(&self) -> Averages {
        self.averaged(Averaging::Macro)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive; the first point uses +inf.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub class: usize,
    /// Empty when the curve is undefined.
    pub points: Vec<RocPoint>,
    /// `None` when the class has no positives or no negatives.
    pub auc: Option<f64>,
}

/// One ROC curve per class from a single score column. Tied scores form a
/// single step, so the trapezoidal area equals the Mann–Whitney statistic.
pub fn roc_curve(scores: &[f64], positive: &[bool], class: usize) -> Result<RocCurve> {
    if scores.len() != positive.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidArgument(format!("score {s} is not a number")));
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(RocCurve { class, points: Vec::new(), auc: None });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // Trapezoid in integer units; divided by pos·neg once at the end.
        auc += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold,
        });
    }
    Ok(RocCurve { class, points, auc: Some(auc / (pos as f64 * neg as f64)) })
}

/// One-vs-rest ROC for every class of an `N×C` score matrix.
pub fn roc_auc(scores: &Tensor, labels: &[usize]) -> Result<Vec<RocCurve>> {
    let (n, c) = match scores.dims() {
        &[n, c] => (n, c),
        other => return Err(Error::InvalidShape(format!("scores must be N×C, got {other:?}"))),
    };
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{n} score rows vs {} labels", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArgument(format!("label {l} outside 0..{c}")));
    }
    let data = scores.data();
    (0..c)
        .map(|k| {
            let column: Vec<f64> = (0..n).map(|i| data[i * c + k]).collect();
            let positive: Vec<bool> = labels.iter().map(|&l| l == k).collect();
            roc_curve(&column, &positive, k)
        })
        .collect()
}

/// Mean AUC over classes whose curve is defined.
pub fn mean_auc(curves: &[RocCurve]) -> Option<f64> {
    let defined: Vec<f64> = curves.iter().filter_map(|c| c.auc).collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}
