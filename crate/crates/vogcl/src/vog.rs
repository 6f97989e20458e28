//! Per-sample difficulty from the variance of input gradients across
//! checkpoints.
//!
//! For every sample and every checkpoint, the gradient of the chosen
//! pre-softmax logit w.r.t. the input pixels is reduced to a channel-averaged
//! map. Across the K checkpoint maps we take the per-pixel mean, then the
//! per-pixel deviation statistic, then the mean over pixels as the sample's
//! score. High scores mean the gradients kept moving late in training, i.e.
//! the sample is hard. Ranking highest-to-lowest gives rank 1 to the hardest
//! sample and the rank-derived difficulty `(N - rank) / N * 100`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::data::Dataset;
use crate::model::ModelError;
use crate::tensor::Tensor;
use crate::trainer::ModelCheckpoint;

#[derive(Debug, Error)]
pub enum VogError {
    #[error("need at least 2 checkpoints for a variance, got {0}")]
    TooFewCheckpoints(usize),
    #[error("checkpoint at epoch {epoch} has a different architecture")]
    ArchMismatch { epoch: usize },
    #[error("gradient maps disagree in shape: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("score for sample {0} is NaN")]
    NanScore(String),
    #[error("sample {0} has no label entry")]
    UnlabeledSample(String),
    #[error("no samples to rank")]
    EmptyInput,
    #[error("malformed scores file {path}: {detail}")]
    MalformedScores { path: String, detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which logit the gradient is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassChoice {
    /// The sample's ground-truth label (default).
    TrueLabel,
    /// Each checkpoint model's own argmax prediction on the clean image.
    Predicted,
}

/// Deviation statistic applied per pixel across the K maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VogFormula {
    /// sqrt(mean squared deviation): the standard deviation per pixel.
    Standard,
    /// sqrt(1/K) * sum of squared deviations, as sometimes printed; monotone
    /// in the same quantity for fixed K, so rankings agree with `Standard`.
    Literal,
}

/// Channel-averaged input-gradient map of one sample at one checkpoint.
#[derive(Debug, Clone)]
pub struct GradientMap {
    pub sample_id: String,
    pub checkpoint_epoch: usize,
    pub values: Tensor,
}

/// All K maps of one sample, in checkpoint order.
#[derive(Debug, Clone)]
pub struct SampleMaps {
    pub sample_id: String,
    pub maps: Vec<GradientMap>,
}

/// Score, rank and rank-derived difficulty of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct VogResult {
    pub sample_id: String,
    pub vog_score: f64,
    /// 1 = highest score.
    pub rank: usize,
    /// `(N - rank) / N * 100`, in [0, 100).
    pub difficulty: f64,
}

/// Computes the K gradient maps of every sample in `dataset` under the given
/// checkpoints. Pure in its inputs; samples are processed in parallel and the
/// result is identical to sequential evaluation.
pub fn compute_gradient_maps(
    checkpoints: &[ModelCheckpoint],
    dataset: &Dataset,
    class_choice: ClassChoice,
) -> Result<Vec<SampleMaps>, VogError> {
    if checkpoints.len() < 2 {
        return Err(VogError::TooFewCheckpoints(checkpoints.len()));
    }
    let arch = &checkpoints[0].arch;
    for c in &checkpoints[1..] {
        if c.arch != *arch {
            return Err(VogError::ArchMismatch { epoch: c.epoch });
        }
    }
    let models: Vec<(usize, crate::model::Model)> = checkpoints
        .iter()
        .map(|c| Ok((c.epoch, c.to_model()?)))
        .collect::<Result<_, ModelError>>()?;

    let n = dataset.len();
    let mut out: Vec<Option<SampleMaps>> = (0..n).map(|_| None).collect();
    let threads = std::thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(1)
        .min(8)
        .min(n.max(1));
    let chunk_len = n.div_ceil(threads.max(1)).max(1);

    let result: Result<(), VogError> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (chunk_idx, slot_chunk) in out.chunks_mut(chunk_len).enumerate() {
            let models = &models;
            let start = chunk_idx * chunk_len;
            handles.push(scope.spawn(move || -> Result<(), VogError> {
                for (offset, slot) in slot_chunk.iter_mut().enumerate() {
                    let sample = &dataset.samples()[start + offset];
                    let mut maps = Vec::with_capacity(models.len());
                    for (epoch, model) in models {
                        let class = match class_choice {
                            ClassChoice::TrueLabel => sample.label,
                            ClassChoice::Predicted => {
                                let shape = sample.image.shape();
                                let batch = Tensor::new(
                                    [&[1], shape].concat(),
                                    sample.image.data().to_vec(),
                                )
                                .expect("image shape");
                                let logits = model.forward(&batch)?;
                                crate::model::Model::predict_classes(&logits)[0]
                            }
                        };
                        let values = model.input_gradient(&sample.image, class)?;
                        maps.push(GradientMap {
                            sample_id: sample.id.clone(),
                            checkpoint_epoch: *epoch,
                            values,
                        });
                    }
                    *slot = Some(SampleMaps {
                        sample_id: sample.id.clone(),
                        maps,
                    });
                }
                Ok(())
            }));
        }
        for h in handles {
            h.join().expect("worker panicked")?;
        }
        Ok(())
    });
    result?;
    Ok(out
        .into_iter()
        .map(|s| s.expect("all slots filled"))
        .collect())
}

/// The per-pixel deviation statistic across the K maps, one value per pixel.
///
/// Maps are put in checkpoint-epoch order first, so the result is exactly
/// invariant under permutations of the input. Pixels whose K values are all
/// identical contribute exactly 0, so identical checkpoints give a score of
/// exactly zero rather than summation noise. Both formula variants are
/// monotone in the squared-deviation sum for fixed K, so they order pixels
/// identically.
pub fn pixelwise_vog(maps: &[GradientMap], formula: VogFormula) -> Result<Vec<f64>, VogError> {
    if maps.len() < 2 {
        return Err(VogError::TooFewCheckpoints(maps.len()));
    }
    let shape = maps[0].values.shape();
    for m in &maps[1..] {
        if m.values.shape() != shape {
            return Err(VogError::ShapeMismatch {
                lhs: shape.to_vec(),
                rhs: m.values.shape().to_vec(),
            });
        }
    }
    let mut order: Vec<usize> = (0..maps.len()).collect();
    order.sort_by_key(|&i| maps[i].checkpoint_epoch);

    let k = maps.len() as f64;
    let pixels = maps[0].values.numel();
    let mut out = Vec::with_capacity(pixels);
    for p in 0..pixels {
        let first = maps[order[0]].values.data()[p];
        if order.iter().all(|&i| maps[i].values.data()[p] == first) {
            out.push(0.0);
            continue;
        }
        let mut mean = 0.0;
        for &i in &order {
            mean += maps[i].values.data()[p];
        }
        mean /= k;
        let mut ss = 0.0;
        for &i in &order {
            let d = maps[i].values.data()[p] - mean;
            ss += d * d;
        }
        out.push(match formula {
            VogFormula::Standard => (ss / k).sqrt(),
            VogFormula::Literal => (1.0 / k).sqrt() * ss,
        });
    }
    Ok(out)
}

/// Per-sample score from its K maps: the mean over pixels of the per-pixel
/// deviation statistic.
pub fn compute_vog_with(maps: &[GradientMap], formula: VogFormula) -> Result<f64, VogError> {
    let per_pixel = pixelwise_vog(maps, formula)?;
    Ok(per_pixel.iter().sum::<f64>() / per_pixel.len() as f64)
}

/// `compute_vog_with` using the standard per-pixel deviation.
pub fn compute_vog(maps: &[GradientMap]) -> Result<f64, VogError> {
    compute_vog_with(maps, VogFormula::Standard)
}

/// Ranks samples by score, highest first; ties break by ascending sample id.
/// Returns results in rank order.
pub fn rank_samples(scores: &[(String, f64)]) -> Result<Vec<VogResult>, VogError> {
    if scores.is_empty() {
        return Err(VogError::EmptyInput);
    }
    for (id, s) in scores {
        if s.is_nan() {
            return Err(VogError::NanScore(id.clone()));
        }
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .1
            .partial_cmp(&scores[a].1)
            .expect("no NaN after check")
            .then_with(|| scores[a].0.cmp(&scores[b].0))
    });
    let n = scores.len() as f64;
    Ok(order
        .iter()
        .enumerate()
        .map(|(pos, &i)| {
            let rank = pos + 1;
            VogResult {
                sample_id: scores[i].0.clone(),
                vog_score: scores[i].1,
                rank,
                difficulty: (n - rank as f64) / n * 100.0,
            }
        })
        .collect())
}

/// Z-score normalizes raw scores within each class (classes whose scores are
/// all equal map to 0). Off by default; rankings then compare samples to
/// their own class's score distribution instead of the global one.
pub fn class_normalized_scores(
    scores: &[(String, f64)],
    labels: &BTreeMap<String, usize>,
) -> Result<Vec<(String, f64)>, VogError> {
    let mut stats: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for (id, v) in scores {
        let class = labels
            .get(id)
            .ok_or_else(|| VogError::UnlabeledSample(id.clone()))?;
        let e = stats.entry(*class).or_insert((0.0, 0.0, 0));
        e.0 += v;
        e.2 += 1;
    }
    for (class, (sum, var, count)) in &mut stats {
        let mean = *sum / *count as f64;
        *var = scores
            .iter()
            .filter(|(id, _)| labels[id] == *class)
            .map(|(_, v)| (v - mean) * (v - mean))
            .sum::<f64>()
            / *count as f64;
        *sum = mean;
    }
    Ok(scores
        .iter()
        .map(|(id, v)| {
            let (mean, var, _) = stats[&labels[id]];
            let std = var.sqrt();
            let z = if std > 0.0 { (v - mean) / std } else { 0.0 };
            (id.clone(), z)
        })
        .collect())
}

/// Mean difficulty per class. Classes with no samples are simply absent.
pub fn class_level_scores(
    results: &[VogResult],
    labels: &BTreeMap<String, usize>,
) -> Result<BTreeMap<usize, f64>, VogError> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in results {
        let class = labels
            .get(&r.sample_id)
            .ok_or_else(|| VogError::UnlabeledSample(r.sample_id.clone()))?;
        let entry = sums.entry(*class).or_insert((0.0, 0));
        entry.0 += r.difficulty;
        entry.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(class, (sum, count))| (class, sum / count as f64))
        .collect())
}

/// Histogram-ready CSV of class-level scores: `class,class_name,mean_difficulty`.
pub fn class_scores_csv(scores: &BTreeMap<usize, f64>, class_names: &[String]) -> String {
    let mut out = String::from("class,class_name,mean_difficulty\n");
    for (class, score) in scores {
        let name = class_names
            .get(*class)
            .map(String::as_str)
            .unwrap_or("unknown");
        out.push_str(&format!("{class},{name},{score:.6}\n"));
    }
    out
}

/// Scores CSV: `sample_id,vog_score,rank,difficulty`, scores at 17
/// significant digits so they round-trip exactly.
pub fn write_scores_csv(results: &[VogResult], path: &Path) -> Result<(), VogError> {
    let mut out = String::from("sample_id,vog_score,rank,difficulty\n");
    for r in results {
        out.push_str(&format!(
            "{},{:.16e},{},{:.16e}\n",
            r.sample_id, r.vog_score, r.rank, r.difficulty
        ));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| VogError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    fs::write(path, out).map_err(|source| VogError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads `sample_id,vog_score` pairs back from a scores CSV. Used both for
/// re-loading our own scores and for externally supplied difficulty files,
/// where the `vog_score` column carries the external value.
pub fn read_scores_csv(path: &Path) -> Result<Vec<(String, f64)>, VogError> {
    let text = fs::read_to_string(path).map_err(|source| VogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.starts_with("sample_id,vog_score") => {}
        other => {
            return Err(VogError::MalformedScores {
                path: path.display().to_string(),
                detail: format!(
                    "expected header starting with 'sample_id,vog_score', found {other:?}"
                ),
            })
        }
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default().trim();
        let score: f64 = fields
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| VogError::MalformedScores {
                path: path.display().to_string(),
                detail: format!("line {}: cannot parse vog_score", lineno + 2),
            })?;
        out.push((id.to_string(), score));
    }
    Ok(out)
}
