//! Evaluation measures: accuracy, macro recall/F1, balanced accuracy, ROC
//! AUC (Mann-Whitney and trapezoidal routes), and the normal-vs-rest binary
//! collapse for multi-class runs.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no predictions to evaluate")]
    EmptyInput,
    #[error("AUC undefined: class {class} has no {missing} examples")]
    UndefinedAuc { class: usize, missing: &'static str },
    #[error("scores for sample {id} sum to {sum}, not 1")]
    BadScores { id: String, sum: f64 },
    #[error("class index {0} out of range")]
    BadClass(usize),
}

/// One sample's post-softmax class scores and ground truth.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub sample_id: String,
    pub true_label: usize,
    pub scores: Vec<f64>,
}

impl Prediction {
    pub fn new(
        sample_id: impl Into<String>,
        true_label: usize,
        scores: Vec<f64>,
    ) -> Result<Self, MetricsError> {
        let sample_id = sample_id.into();
        let sum: f64 = scores.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MetricsError::BadScores { id: sample_id, sum });
        }
        if true_label >= scores.len() {
            return Err(MetricsError::BadClass(true_label));
        }
        Ok(Prediction {
            sample_id,
            true_label,
            scores,
        })
    }

    /// Argmax over scores, ties to the lowest index.
    pub fn predicted_label(&self) -> usize {
        let mut best = 0usize;
        for (i, v) in self.scores.iter().enumerate() {
            if *v > self.scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn num_classes(&self) -> usize {
        self.scores.len()
    }
}

fn confusion_matrix(preds: &[Prediction], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0usize; classes]; classes];
    for p in preds {
        m[p.true_label][p.predicted_label()] += 1;
    }
    m
}

/// Per-class recall for classes present in truth; absent classes are `None`.
fn per_class_recall(confusion: &[Vec<usize>]) -> Vec<Option<f64>> {
    confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                None
            } else {
                Some(row[c] as f64 / total as f64)
            }
        })
        .collect()
}

pub fn accuracy(preds: &[Prediction]) -> Result<f64, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let correct = preds
        .iter()
        .filter(|p| p.predicted_label() == p.true_label)
        .count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Macro-averaged recall over classes present in truth. This is also the
/// balanced accuracy.
pub fn recall_macro(preds: &[Prediction]) -> Result<f64, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let classes = preds[0].num_classes();
    let recalls = per_class_recall(&confusion_matrix(preds, classes));
    let present: Vec<f64> = recalls.into_iter().flatten().collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

pub fn balanced_accuracy(preds: &[Prediction]) -> Result<f64, MetricsError> {
    recall_macro(preds)
}

/// Recall of one designated class.
pub fn recall_of_class(preds: &[Prediction], class: usize) -> Result<f64, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let classes = preds[0].num_classes();
    if class >= classes {
        return Err(MetricsError::BadClass(class));
    }
    per_class_recall(&confusion_matrix(preds, classes))[class].ok_or(MetricsError::UndefinedAuc {
        class,
        missing: "positive",
    })
}

/// Macro-averaged F1 over classes present in truth.
pub fn f1_macro(preds: &[Prediction]) -> Result<f64, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let classes = preds[0].num_classes();
    let m = confusion_matrix(preds, classes);
    let mut f1s = Vec::new();
    for (c, row) in m.iter().enumerate() {
        let truth_total: usize = row.iter().sum();
        if truth_total == 0 {
            continue;
        }
        let tp = row[c];
        let pred_total: usize = (0..classes).map(|r| m[r][c]).sum();
        let recall = tp as f64 / truth_total as f64;
        let precision = if pred_total == 0 {
            0.0
        } else {
            tp as f64 / pred_total as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        f1s.push(f1);
    }
    Ok(f1s.iter().sum::<f64>() / f1s.len() as f64)
}

/// Binary AUC over raw (score, is_positive) pairs via the Mann-Whitney
/// rank-sum with average ranks for ties: the probability that a random
/// positive outranks a random negative, ties counting one half.
pub fn binary_auc_from_scores(scores: &[f64], is_positive: &[bool]) -> Result<f64, MetricsError> {
    let pos = is_positive.iter().filter(|&&p| p).count();
    let neg = is_positive.len() - pos;
    if pos == 0 {
        return Err(MetricsError::UndefinedAuc {
            class: 1,
            missing: "positive",
        });
    }
    if neg == 0 {
        return Err(MetricsError::UndefinedAuc {
            class: 0,
            missing: "negative",
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // Average ranks across tie groups, accumulated for positives only.
    let mut rank_sum_pos = 0.0;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0; // 1-based ranks i+1 ..= j+1
        for &idx in &order[i..=j] {
            if is_positive[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// The same quantity built from the ROC curve: thresholds at distinct scores,
/// trapezoids in (FPR, TPR) accumulated in integer arithmetic. Agrees with
/// the pair-count definition exactly.
pub fn auc_trapezoidal_from_scores(
    scores: &[f64],
    is_positive: &[bool],
) -> Result<f64, MetricsError> {
    let pos = is_positive.iter().filter(|&&p| p).count();
    let neg = is_positive.len() - pos;
    if pos == 0 {
        return Err(MetricsError::UndefinedAuc {
            class: 1,
            missing: "positive",
        });
    }
    if neg == 0 {
        return Err(MetricsError::UndefinedAuc {
            class: 0,
            missing: "negative",
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Descending score: the curve sweeps thresholds from strictest to loosest.
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut tp = 0u64;
    let mut fp = 0u64;
    // Twice the unnormalized area, so every trapezoid is an integer.
    let mut area2 = 0u128;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let (prev_tp, prev_fp) = (tp, fp);
        for &idx in &order[i..=j] {
            if is_positive[idx] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        area2 += u128::from(fp - prev_fp) * u128::from(tp + prev_tp);
        i = j + 1;
    }
    Ok(area2 as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Binary AUC of `positive_class` from prediction scores.
pub fn auc(preds: &[Prediction], positive_class: usize) -> Result<f64, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if positive_class >= preds[0].num_classes() {
        return Err(MetricsError::BadClass(positive_class));
    }
    let scores: Vec<f64> = preds.iter().map(|p| p.scores[positive_class]).collect();
    let labels: Vec<bool> = preds
        .iter()
        .map(|p| p.true_label == positive_class)
        .collect();
    binary_auc_from_scores(&scores, &labels)
}

/// How one-vs-rest AUCs are combined for the multi-class summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucMethod {
    /// Unweighted mean over classes present in truth (default).
    OneVsRestMacro,
    /// Mean weighted by class prevalence in truth.
    OneVsRestWeighted,
}

/// One-vs-rest AUC combined over every class present in the truth.
pub fn multiclass_auc(preds: &[Prediction], method: AucMethod) -> Result<f64, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let classes = preds[0].num_classes();
    let mut terms: Vec<(f64, f64)> = Vec::new(); // (auc, weight)
    for c in 0..classes {
        let count = preds.iter().filter(|p| p.true_label == c).count();
        if count == 0 {
            continue;
        }
        if count == preds.len() {
            return Err(MetricsError::UndefinedAuc {
                class: c,
                missing: "negative",
            });
        }
        terms.push((auc(preds, c)?, count as f64));
    }
    match method {
        AucMethod::OneVsRestMacro => {
            Ok(terms.iter().map(|(a, _)| a).sum::<f64>() / terms.len() as f64)
        }
        AucMethod::OneVsRestWeighted => {
            let total: f64 = terms.iter().map(|(_, w)| w).sum();
            Ok(terms.iter().map(|(a, w)| a * w).sum::<f64>() / total)
        }
    }
}

/// A multi-class prediction collapsed to normal-vs-rest. The labels come
/// from mapping the original truth/argmax labels (normal -> 0, any other
/// class -> 1), NOT from re-argmaxing the two collapsed scores, so subtype
/// confusions stay correct.
#[derive(Debug, Clone)]
pub struct CollapsedPrediction {
    pub sample_id: String,
    pub true_label: u8,
    pub predicted_label: u8,
    /// `1 - score(normal)`: the positive-class score used for binary AUC.
    pub positive_score: f64,
}

pub fn binary_collapse(
    preds: &[Prediction],
    normal_class: usize,
) -> Result<Vec<CollapsedPrediction>, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if normal_class >= preds[0].num_classes() {
        return Err(MetricsError::BadClass(normal_class));
    }
    Ok(preds
        .iter()
        .map(|p| CollapsedPrediction {
            sample_id: p.sample_id.clone(),
            true_label: u8::from(p.true_label != normal_class),
            predicted_label: u8::from(p.predicted_label() != normal_class),
            positive_score: 1.0 - p.scores[normal_class],
        })
        .collect())
}

pub fn collapsed_accuracy(collapsed: &[CollapsedPrediction]) -> Result<f64, MetricsError> {
    if collapsed.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let correct = collapsed
        .iter()
        .filter(|c| c.true_label == c.predicted_label)
        .count();
    Ok(correct as f64 / collapsed.len() as f64)
}

pub fn collapsed_auc(collapsed: &[CollapsedPrediction]) -> Result<f64, MetricsError> {
    let scores: Vec<f64> = collapsed.iter().map(|c| c.positive_score).collect();
    let labels: Vec<bool> = collapsed.iter().map(|c| c.true_label == 1).collect();
    binary_auc_from_scores(&scores, &labels)
}

/// Everything the evaluation protocol reports for one prediction set.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub accuracy: f64,
    /// Macro recall: the headline recall for any class count.
    pub recall: f64,
    /// Recall of the designated positive class, reported alongside the macro
    /// value in the two-class case.
    pub recall_positive: Option<f64>,
    pub f1: f64,
    pub balanced_accuracy: f64,
    /// Binary AUC when two classes, otherwise the multi-class summary.
    pub auc: f64,
    pub binary_accuracy: Option<f64>,
    pub binary_auc: Option<f64>,
    pub confusion: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct MetricsOptions {
    /// Class collapsed to 0 in the binary-task metrics; `None` skips them.
    pub normal_class: Option<usize>,
    pub auc_method: AucMethod,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        MetricsOptions {
            normal_class: Some(0),
            auc_method: AucMethod::OneVsRestMacro,
        }
    }
}

impl MetricsReport {
    pub fn compute(preds: &[Prediction], options: MetricsOptions) -> Result<Self, MetricsError> {
        if preds.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        let classes = preds[0].num_classes();
        let confusion = confusion_matrix(preds, classes);
        let mut warnings = Vec::new();
        for (c, row) in confusion.iter().enumerate() {
            if row.iter().sum::<usize>() == 0 {
                warnings.push(format!(
                    "class {c} absent from truth; excluded from macro averages"
                ));
            }
        }
        let auc_value = if classes == 2 {
            auc(preds, 1)?
        } else {
            multiclass_auc(preds, options.auc_method)?
        };
        let (binary_accuracy, binary_auc_value) = match options.normal_class {
            Some(normal) => {
                let collapsed = binary_collapse(preds, normal)?;
                let acc = collapsed_accuracy(&collapsed)?;
                match collapsed_auc(&collapsed) {
                    Ok(a) => (Some(acc), Some(a)),
                    Err(MetricsError::UndefinedAuc { .. }) => {
                        warnings.push("binary AUC undefined: collapsed truth single-class".into());
                        (Some(acc), None)
                    }
                    Err(e) => return Err(e),
                }
            }
            None => (None, None),
        };
        Ok(MetricsReport {
            n_samples: preds.len(),
            accuracy: accuracy(preds)?,
            recall: recall_macro(preds)?,
            recall_positive: if classes == 2 {
                Some(recall_of_class(preds, 1)?)
            } else {
                None
            },
            f1: f1_macro(preds)?,
            balanced_accuracy: balanced_accuracy(preds)?,
            auc: auc_value,
            binary_accuracy,
            binary_auc: binary_auc_value,
            confusion,
            warnings,
        })
    }
}

/// Mean and sample standard deviation (n-1; zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
