//! The rank-driven training scheduler.
//!
//! Samples start with probabilities proportional to their rank position
//! (rank 1 = hardest = least probable; the easiest sample is most probable).
//! Each epoch every probability is multiplied by its per-sample scalar
//! `lambda_i = ((1/N) / p_i_initial)^(1/L)` and renormalized, which drifts the
//! distribution exponentially toward uniform; after epoch `L` it is frozen at
//! exactly `1/N` and the scheduler behaves like a plain shuffle. Epoch orders
//! are drawn by sequential weighted sampling without replacement.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::data::Dataset;
use crate::rng::Rng;
use crate::trainer::EpochSampler;
use crate::vog::VogResult;

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("ranks must be a permutation of 1..={n}")]
    NotAPermutation { n: usize },
    #[error("curriculum horizon L must be at least 1")]
    ZeroHorizon,
    #[error("no score entry for sample {0}")]
    MissingScore(String),
    #[error("schedule has {expected} samples but {found} were requested")]
    SizeMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurriculumMode {
    /// Easy-first: highest sampling probability on the easiest sample.
    Curriculum,
    /// Hard-first control: the ranking is reversed before initialization.
    AntiCurriculum,
}

fn check_permutation(ranks: &[usize]) -> Result<(), CurriculumError> {
    let n = ranks.len();
    let mut seen = vec![false; n + 1];
    for &r in ranks {
        if r == 0 || r > n || seen[r] {
            return Err(CurriculumError::NotAPermutation { n });
        }
        seen[r] = true;
    }
    if n == 0 {
        return Err(CurriculumError::NotAPermutation { n });
    }
    Ok(())
}

/// Initial sampling probabilities from ranks: `p_i = s_i / sum(s)`, where
/// `s_i` is the sample's rank counted from the hardest (rank 1). In
/// anti-curriculum mode the ranking is reversed first.
pub fn init_probabilities(
    ranks: &[usize],
    mode: CurriculumMode,
) -> Result<Vec<f64>, CurriculumError> {
    check_permutation(ranks)?;
    let n = ranks.len();
    let effective = |r: usize| -> usize {
        match mode {
            CurriculumMode::Curriculum => r,
            CurriculumMode::AntiCurriculum => n + 1 - r,
        }
    };
    let total: f64 = (n * (n + 1) / 2) as f64;
    Ok(ranks.iter().map(|&r| effective(r) as f64 / total).collect())
}

/// Per-sample update scalar: `lambda_i = ((1/N) / p1_i)^(1/L)`, so that
/// `p1_i * lambda_i^L = 1/N`.
pub fn compute_lambda(p1_i: f64, n: usize, horizon: usize) -> Result<f64, CurriculumError> {
    if horizon == 0 {
        return Err(CurriculumError::ZeroHorizon);
    }
    debug_assert!(p1_i > 0.0);
    Ok(((1.0 / n as f64) / p1_i).powf(1.0 / horizon as f64))
}

/// The schedule state: current epoch (1-based), probabilities, per-sample
/// update scalars, and the horizon after which everything is uniform.
#[derive(Debug, Clone)]
pub struct CurriculumSchedule {
    n: usize,
    horizon: usize,
    epoch: usize,
    p: Vec<f64>,
    lambda: Vec<f64>,
    mode: CurriculumMode,
}

impl CurriculumSchedule {
    pub fn new(
        ranks: &[usize],
        mode: CurriculumMode,
        horizon: usize,
    ) -> Result<Self, CurriculumError> {
        if horizon == 0 {
            return Err(CurriculumError::ZeroHorizon);
        }
        let p = init_probabilities(ranks, mode)?;
        let n = p.len();
        let lambda = p
            .iter()
            .map(|&p1| compute_lambda(p1, n, horizon))
            .collect::<Result<_, _>>()?;
        Ok(CurriculumSchedule {
            n,
            horizon,
            epoch: 1,
            p,
            lambda,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn mode(&self) -> CurriculumMode {
        self.mode
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    /// Moves to the next epoch. Up to the horizon the probabilities are
    /// multiplied by their scalars and renormalized; past it they are set to
    /// exactly `1/N` and stay there.
    pub fn advance_epoch(&mut self) {
        self.epoch += 1;
        if self.epoch <= self.horizon {
            for (p, l) in self.p.iter_mut().zip(&self.lambda) {
                *p *= l;
            }
            let total: f64 = self.p.iter().sum();
            for p in &mut self.p {
                *p /= total;
            }
        } else {
            let uniform = 1.0 / self.n as f64;
            for p in &mut self.p {
                *p = uniform;
            }
        }
    }

    /// One epoch order by sequential weighted draws without replacement:
    /// draw an index with probability proportional to its current weight
    /// among the remaining ones, remove it, repeat.
    pub fn sample_permutation(&self, rng: &mut Rng) -> Vec<usize> {
        let mut remaining: Vec<(usize, f64)> = self.p.iter().copied().enumerate().collect();
        let mut total: f64 = self.p.iter().sum();
        let mut out = Vec::with_capacity(self.n);
        while remaining.len() > 1 {
            let u = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut pick = remaining.len() - 1;
            for (j, (_, w)) in remaining.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = j;
                    break;
                }
            }
            let (idx, w) = remaining.swap_remove(pick);
            total -= w;
            out.push(idx);
        }
        out.push(remaining[0].0);
        out
    }
}

/// Rank of every dataset sample (in dataset order) from ranked results.
pub fn ranks_for_dataset(
    results: &[VogResult],
    dataset: &Dataset,
) -> Result<Vec<usize>, CurriculumError> {
    let by_id: BTreeMap<&str, usize> = results
        .iter()
        .map(|r| (r.sample_id.as_str(), r.rank))
        .collect();
    dataset
        .samples()
        .iter()
        .map(|s| {
            by_id
                .get(s.id.as_str())
                .copied()
                .ok_or_else(|| CurriculumError::MissingScore(s.id.clone()))
        })
        .collect()
}

/// Epoch sampler backed by a schedule and the `curriculum-sampling` stream.
pub struct CurriculumSampler {
    schedule: CurriculumSchedule,
    rng: Rng,
}

impl CurriculumSampler {
    pub fn new(
        ranks: &[usize],
        mode: CurriculumMode,
        horizon: usize,
        master_seed: u64,
    ) -> Result<Self, CurriculumError> {
        Ok(CurriculumSampler {
            schedule: CurriculumSchedule::new(ranks, mode, horizon)?,
            rng: Rng::stream(master_seed, "curriculum-sampling"),
        })
    }

    pub fn schedule(&self) -> &CurriculumSchedule {
        &self.schedule
    }
}

impl EpochSampler for CurriculumSampler {
    fn permutation(&mut self, epoch: usize, n: usize) -> Vec<usize> {
        assert_eq!(
            n,
            self.schedule.len(),
            "sampler built for {} samples, asked for {n}",
            self.schedule.len()
        );
        while self.schedule.epoch() < epoch {
            self.schedule.advance_epoch();
        }
        self.schedule.sample_permutation(&mut self.rng)
    }
}

/// Probability-trajectory CSV `epoch,sample_id,probability` over
/// `1..=epochs`, for plotting the transition to uniform.
pub fn schedule_preview_csv(
    ranks: &[usize],
    sample_ids: &[String],
    mode: CurriculumMode,
    horizon: usize,
    epochs: usize,
) -> Result<String, CurriculumError> {
    if ranks.len() != sample_ids.len() {
        return Err(CurriculumError::SizeMismatch {
            expected: ranks.len(),
            found: sample_ids.len(),
        });
    }
    let mut schedule = CurriculumSchedule::new(ranks, mode, horizon)?;
    let mut out = String::from("epoch,sample_id,probability\n");
    for epoch in 1..=epochs {
        while schedule.epoch() < epoch {
            schedule.advance_epoch();
        }
        for (id, p) in sample_ids.iter().zip(schedule.probabilities()) {
            out.push_str(&format!("{epoch},{id},{p:.16e}\n"));
        }
    }
    Ok(out)
}
