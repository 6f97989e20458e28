//! Acceptance suite: every criterion below runs in order and prints one
//! PASS/FAIL line; the test fails if any criterion fails. The full-protocol
//! criteria run the real pipeline twice, so this target takes tens of
//! minutes; run it with `cargo test --test acceptance -- --nocapture` to
//! watch progress.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use vogcl::curriculum::{init_probabilities, CurriculumMode, CurriculumSchedule};
use vogcl::data::{generate_synthetic, load_directory, SplitTag, SyntheticProfile};
use vogcl::metrics::{
    auc_trapezoidal_from_scores, balanced_accuracy, binary_auc_from_scores, binary_collapse,
    collapsed_accuracy, Prediction,
};
use vogcl::model::{build_model, ModelArch};
use vogcl::rng::Rng;
use vogcl::tensor::Tensor;
use vogcl::trainer::{ModelCheckpoint, CHECKPOINT_VERSION};
use vogcl::vog::{
    compute_gradient_maps, compute_vog, compute_vog_with, pixelwise_vog, rank_samples,
    read_scores_csv, write_scores_csv, ClassChoice, GradientMap, VogFormula,
};
use vogcl_cli::commands::{cmd_compare, cmd_generate_data, cmd_train, cmd_vog};
use vogcl_cli::config::ExperimentConfig;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    cov / (vx.sqrt() * vy.sqrt())
}

/// One-sided upper-tail normal p-value via the Abramowitz-Stegun erfc
/// approximation (absolute error < 1.5e-7).
fn normal_tail(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    0.5 * poly * (-x * x).exp()
}

// ---------------------------------------------------------------- criteria

/// Input gradients of the desk model match central finite differences.
fn criterion_1() -> Result<String, String> {
    let started = Instant::now();
    let arch = ModelArch::desk(1, 7);
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for cfg in 0..20u64 {
        let model = build_model(&arch, 1000 + cfg).map_err(|e| e.to_string())?;
        let mut rng = Rng::stream(2000 + cfg, "acceptance-fd");
        let img: Vec<f64> = (0..1024).map(|_| rng.next_f64()).collect();
        let image = Tensor::new(vec![1, 32, 32], img).map_err(|e| e.to_string())?;
        let class = (cfg % 7) as usize;
        let analytic = model
            .input_gradient(&image, class)
            .map_err(|e| e.to_string())?;
        let eval = |t: &Tensor| -> f64 {
            let batch = Tensor::new(vec![1, 1, 32, 32], t.data().to_vec()).expect("shape");
            let pass = model.forward_pass(&batch, false, false).expect("forward");
            pass.graph.output(pass.logits).data()[class]
        };
        for _ in 0..32 {
            let i = rng.next_below(1024);
            let mut plus = image.clone();
            plus.data_mut()[i] += step;
            let mut minus = image.clone();
            minus.data_mut()[i] -= step;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    let elapsed = started.elapsed();
    ensure!(worst < 1e-4, "max relative error {worst:.3e} >= 1e-4");
    ensure!(
        elapsed.as_secs() < 60,
        "gradient check took {elapsed:.1?} (budget 60 s)"
    );
    Ok(format!(
        "20 configs x 32 pixels, max rel err {worst:.2e}, {elapsed:.1?}"
    ))
}

/// Identical checkpoints give a VoG score of exactly zero.
fn criterion_2() -> Result<String, String> {
    let profile = SyntheticProfile {
        classes: vec![("a".into(), 10), ("b".into(), 10), ("c".into(), 10)],
    };
    let data =
        generate_synthetic(&profile, (0.0, 1.0), 31, SplitTag::Train).map_err(|e| e.to_string())?;
    let arch = ModelArch::desk(1, 3);
    let model = build_model(&arch, 77).map_err(|e| e.to_string())?;
    let checkpoints: Vec<ModelCheckpoint> = [26, 28, 30]
        .into_iter()
        .map(|epoch| ModelCheckpoint {
            format_version: CHECKPOINT_VERSION,
            epoch,
            arch: arch.clone(),
            parameters: model.parameters().to_vec(),
            train_config_digest: 0,
        })
        .collect();
    let maps = compute_gradient_maps(&checkpoints, &data, ClassChoice::TrueLabel)
        .map_err(|e| e.to_string())?;
    for m in &maps {
        let standard = compute_vog(&m.maps).map_err(|e| e.to_string())?;
        let literal = compute_vog_with(&m.maps, VogFormula::Literal).map_err(|e| e.to_string())?;
        ensure!(
            standard == 0.0 && literal == 0.0,
            "sample {}: vog {standard:e} / {literal:e}, expected exactly 0",
            m.sample_id
        );
    }
    Ok(format!("{} samples, every score exactly 0.0", maps.len()))
}

/// Literal and standard deviation statistics rank pixels identically.
fn criterion_3() -> Result<String, String> {
    let mut rng = Rng::stream(3, "acceptance-variants");
    for set in 0..100 {
        let maps: Vec<GradientMap> = (0..3)
            .map(|k| GradientMap {
                sample_id: format!("set{set}"),
                checkpoint_epoch: k,
                values: Tensor::new(
                    vec![4, 6],
                    (0..24).map(|_| rng.next_f64() * 2.0 - 1.0).collect(),
                )
                .expect("shape"),
            })
            .collect();
        let std_px = pixelwise_vog(&maps, VogFormula::Standard).map_err(|e| e.to_string())?;
        let lit_px = pixelwise_vog(&maps, VogFormula::Literal).map_err(|e| e.to_string())?;
        let rank = |vals: &[f64]| -> Vec<usize> {
            let mut order: Vec<usize> = (0..vals.len()).collect();
            order.sort_by(|&a, &b| {
                vals[b]
                    .partial_cmp(&vals[a])
                    .expect("finite")
                    .then(a.cmp(&b))
            });
            order
        };
        ensure!(
            rank(&std_px) == rank(&lit_px),
            "set {set}: pixel rank permutations differ"
        );
        let rho = spearman(&std_px, &lit_px);
        ensure!(rho == 1.0, "set {set}: spearman {rho} != 1.0 exactly");
    }
    Ok("100 random map sets (K=3), rank permutations identical, rho = 1.0".into())
}

/// Initial probabilities, per-sample scalars, and the uniform freeze.
fn criterion_4() -> Result<String, String> {
    let mut rng = Rng::stream(4, "acceptance-scheduler");
    let trials = 200;
    for trial in 0..trials {
        let n = 2 + rng.next_below(999);
        let horizon = 1 + rng.next_below(30);
        let mut ranks: Vec<usize> = (1..=n).collect();
        rng.shuffle(&mut ranks);
        let p1 =
            init_probabilities(&ranks, CurriculumMode::Curriculum).map_err(|e| e.to_string())?;
        let sum: f64 = p1.iter().sum();
        ensure!(
            (sum - 1.0).abs() < 1e-12,
            "trial {trial}: sum(p1) = {sum} off by {:.2e}",
            (sum - 1.0).abs()
        );
        let uniform = 1.0 / n as f64;
        for &p in &p1 {
            let lambda = ((1.0 / n as f64) / p).powf(1.0 / horizon as f64);
            let reached = p * lambda.powi(horizon as i32);
            ensure!(
                (reached - uniform).abs() < 1e-12,
                "trial {trial}: p1*lambda^L = {reached} vs 1/N = {uniform}"
            );
        }
        let argsort = |vals: &[f64]| -> Vec<usize> {
            let mut order: Vec<usize> = (0..vals.len()).collect();
            order.sort_by(|&a, &b| {
                vals[a]
                    .partial_cmp(&vals[b])
                    .expect("finite")
                    .then(a.cmp(&b))
            });
            order
        };
        let mut schedule = CurriculumSchedule::new(&ranks, CurriculumMode::Curriculum, horizon)
            .map_err(|e| e.to_string())?;
        let base_order = argsort(schedule.probabilities());
        for _ in 1..horizon {
            schedule.advance_epoch();
            ensure!(
                argsort(schedule.probabilities()) == base_order,
                "trial {trial}: ordering changed before the horizon"
            );
        }
        schedule.advance_epoch(); // epoch L+1
        for &p in schedule.probabilities() {
            ensure!(
                p == uniform,
                "trial {trial}: epoch L+1 probability {p} != exactly {uniform}"
            );
        }
    }
    Ok(format!(
        "{trials} random (N, ranks, L): sums, lambda identity, freeze, ordering all hold"
    ))
}

/// The worked 4-sample schedule.
fn criterion_5() -> Result<String, String> {
    let p1 =
        init_probabilities(&[1, 2, 3, 4], CurriculumMode::Curriculum).map_err(|e| e.to_string())?;
    for (got, expect) in p1.iter().zip(&[0.1, 0.2, 0.3, 0.4]) {
        ensure!(
            (got - expect).abs() < 1e-6,
            "init probability {got} vs {expect}"
        );
    }
    // Long-hand arithmetic: raw update p*lambda = 0.5*sqrt(p); renormalize.
    let raw: Vec<f64> = [0.1f64, 0.2, 0.3, 0.4]
        .iter()
        .map(|p| 0.5 * p.sqrt())
        .collect();
    let total: f64 = raw.iter().sum();
    let oracle: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let mut schedule = CurriculumSchedule::new(&[1, 2, 3, 4], CurriculumMode::Curriculum, 2)
        .map_err(|e| e.to_string())?;
    schedule.advance_epoch();
    for (got, expect) in schedule.probabilities().iter().zip(&oracle) {
        ensure!(
            (got - expect).abs() < 1e-6,
            "epoch-2 probability {got} vs long-hand {expect}"
        );
    }
    // Frozen long-hand values at full precision.
    let frozen = [
        0.16270045344786255,
        0.2300931878702196,
        0.2818054517861928,
        0.3254009068957251,
    ];
    for (got, expect) in schedule.probabilities().iter().zip(&frozen) {
        ensure!((got - expect).abs() < 1e-12, "{got} vs frozen {expect}");
    }
    Ok("p1 = [0.1, 0.2, 0.3, 0.4]; epoch-2 matches long-hand arithmetic to 1e-12".into())
}

/// Weighted sampling without replacement: bijections and first-draw marginals.
fn criterion_6() -> Result<String, String> {
    let draws = 100_000usize;
    // Rank-derived weights for N=3: p = [1/6, 2/6, 3/6].
    let schedule = CurriculumSchedule::new(&[3, 2, 1], CurriculumMode::Curriculum, 5)
        .map_err(|e| e.to_string())?;
    let mut rng = Rng::stream(6, "acceptance-sampler");
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        let perm = schedule.sample_permutation(&mut rng);
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        ensure!(
            sorted == vec![0, 1, 2],
            "non-bijective permutation {perm:?}"
        );
        counts[perm[0]] += 1;
    }
    let mut detail = String::new();
    for (i, &expect) in schedule.probabilities().iter().enumerate() {
        let freq = counts[i] as f64 / draws as f64;
        let sigma = (expect * (1.0 - expect) / draws as f64).sqrt();
        ensure!(
            (freq - expect).abs() < 3.0 * sigma,
            "index {i}: first-position freq {freq:.5} vs p {expect:.5} (3 sigma = {:.5})",
            3.0 * sigma
        );
        detail.push_str(&format!("{freq:.4}/{expect:.4} "));
    }

    // Past the horizon the schedule is uniform: every ordering of 0..3 must
    // show up and first positions must match 1/3 within 3 sigma.
    let mut uniform = CurriculumSchedule::new(&[3, 2, 1], CurriculumMode::Curriculum, 1)
        .map_err(|e| e.to_string())?;
    uniform.advance_epoch();
    let mut seen = std::collections::BTreeSet::new();
    let mut first = [0usize; 3];
    for _ in 0..draws {
        let perm = uniform.sample_permutation(&mut rng);
        first[perm[0]] += 1;
        seen.insert(perm);
    }
    ensure!(
        seen.len() == 6,
        "uniform draws produced {} of 6 orderings",
        seen.len()
    );
    let p = 1.0 / 3.0;
    let sigma = (p * (1.0 - p) / draws as f64).sqrt();
    for (i, &c) in first.iter().enumerate() {
        let freq = c as f64 / draws as f64;
        ensure!(
            (freq - p).abs() < 3.0 * sigma,
            "uniform index {i}: freq {freq:.5} vs 1/3"
        );
    }
    Ok(format!(
        "{draws} weighted + {draws} uniform permutations, all bijections, all 6 orderings seen, freq/p: {detail}"
    ))
}

/// Metric oracles: AUC route agreement, balanced accuracy, binary collapse.
fn criterion_7() -> Result<String, String> {
    // Brute-force pair counting in integer space.
    let pair_count = |scores: &[f64], pos: &[bool]| -> f64 {
        let mut wins2 = 0u64;
        let mut pairs = 0u64;
        for (i, &pi) in pos.iter().enumerate() {
            if !pi {
                continue;
            }
            for (j, &pj) in pos.iter().enumerate() {
                if pj {
                    continue;
                }
                pairs += 1;
                wins2 += match scores[i].partial_cmp(&scores[j]).expect("finite") {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
        wins2 as f64 / (2.0 * pairs as f64)
    };
    let mut rng = Rng::stream(7, "acceptance-auc");
    for trial in 0..200 {
        let n = 2 + rng.next_below(49);
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.next_f64() * 6.0).floor() / 6.0)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.5).collect();
        if labels.iter().all(|&l| l) {
            labels[0] = false;
        }
        if labels.iter().all(|&l| !l) {
            labels[0] = true;
        }
        let trap = auc_trapezoidal_from_scores(&scores, &labels).map_err(|e| e.to_string())?;
        let mw = binary_auc_from_scores(&scores, &labels).map_err(|e| e.to_string())?;
        let oracle = pair_count(&scores, &labels);
        ensure!(
            trap == oracle && mw == oracle,
            "trial {trial}: trapezoid {trap} / rank {mw} / pairs {oracle} differ"
        );
    }

    // Balanced accuracy of confusion [[9,1],[4,6]].
    let mut preds = Vec::new();
    let add = |truth: usize, predicted: usize, preds: &mut Vec<Prediction>| {
        let id = format!("p{}", preds.len());
        let scores = if predicted == 1 {
            vec![0.2, 0.8]
        } else {
            vec![0.8, 0.2]
        };
        preds.push(Prediction::new(id, truth, scores).expect("valid"));
    };
    for _ in 0..9 {
        add(0, 0, &mut preds);
    }
    add(0, 1, &mut preds);
    for _ in 0..4 {
        add(1, 0, &mut preds);
    }
    for _ in 0..6 {
        add(1, 1, &mut preds);
    }
    let ba = balanced_accuracy(&preds).map_err(|e| e.to_string())?;
    ensure!(ba == 0.75, "balanced accuracy {ba} != 0.75");

    // Binary collapse: normal -> 0, any subtype -> 1, including predictions.
    let multi = vec![
        Prediction::new("n", 0, vec![0.8, 0.1, 0.1]).expect("valid"),
        Prediction::new("u", 1, vec![0.2, 0.3, 0.5]).expect("valid"), // subtype confusion
        Prediction::new("r", 2, vec![0.1, 0.2, 0.7]).expect("valid"),
    ];
    let collapsed = binary_collapse(&multi, 0).map_err(|e| e.to_string())?;
    let truth: Vec<u8> = collapsed.iter().map(|c| c.true_label).collect();
    ensure!(truth == vec![0, 1, 1], "collapsed truth {truth:?}");
    let acc = collapsed_accuracy(&collapsed).map_err(|e| e.to_string())?;
    ensure!(
        acc == 1.0,
        "subtype confusion must be forgiven, accuracy {acc}"
    );
    for (p, c) in multi.iter().zip(&collapsed) {
        ensure!(
            c.positive_score == 1.0 - p.scores[0],
            "positive score must be 1 - score(normal)"
        );
    }
    Ok(
        "200 AUC instances exact across 3 routes; BA([[9,1],[4,6]]) = 0.75; collapse rules hold"
            .into(),
    )
}

struct PipelineArtifacts {
    comparison_first: Vec<u8>,
    comparison_second: Vec<u8>,
    extended_first: Vec<u8>,
    extended_second: Vec<u8>,
    scores_first: Vec<u8>,
    scores_second: Vec<u8>,
    out_dir: PathBuf,
    first_wall: std::time::Duration,
}

fn run_full_pipeline(config: &ExperimentConfig) -> Result<(), String> {
    cmd_generate_data(config).map_err(|e| e.to_string())?;
    cmd_train(config).map_err(|e| e.to_string())?;
    cmd_vog(config).map_err(|e| e.to_string())?;
    cmd_compare(config, None).map_err(|e| e.to_string())?;
    Ok(())
}

/// The full protocol at the real scale, twice, with shape and timing checks.
fn criterion_8(artifacts: &mut Option<PipelineArtifacts>) -> Result<String, String> {
    let out_dir = std::env::temp_dir().join(format!("vogcl-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&out_dir);
    fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;

    let mut config = ExperimentConfig {
        output_dir: out_dir.clone(),
        ..ExperimentConfig::default()
    };

    // External difficulty file: plausible class-level scores, every sample
    // inheriting its class value, written in the standard scores format.
    let (train_data, _) = vogcl_cli::commands::load_datasets(&config).map_err(|e| e.to_string())?;
    ensure!(
        train_data.len() == 1392,
        "default train profile must have 1392 samples"
    );
    let class_scores = [5.0, 40.0, 30.0, 50.0, 90.0, 95.0, 70.0];
    let scores: Vec<(String, f64)> = train_data
        .samples()
        .iter()
        .map(|s| (s.id.clone(), class_scores[s.label]))
        .collect();
    let ranked = rank_samples(&scores).map_err(|e| e.to_string())?;
    let external = out_dir.join("external_scores.csv");
    write_scores_csv(&ranked, &external).map_err(|e| e.to_string())?;
    config.external_scores_path = Some(external);

    let started = Instant::now();
    run_full_pipeline(&config)?;
    let first_wall = started.elapsed();
    ensure!(
        first_wall.as_secs() < 30 * 60,
        "pipeline took {first_wall:.0?}, budget 30 min"
    );

    let read = |name: &str| -> Result<Vec<u8>, String> {
        fs::read(out_dir.join(name)).map_err(|e| format!("{name}: {e}"))
    };
    let comparison_first = read("comparison.csv")?;
    let extended_first = read("comparison_extended.csv")?;
    let scores_first = read("vog_scores.csv")?;

    let text = String::from_utf8_lossy(&comparison_first).to_string();
    let lines: Vec<&str> = text.lines().collect();
    ensure!(
        lines.first().copied()
            == Some("mode,accuracy_mean,accuracy_std,recall_mean,recall_std,auc_mean,auc_std,f1_mean,f1_std"),
        "unexpected header {:?}",
        lines.first()
    );
    ensure!(
        lines.len() == 5,
        "expected 4 mode rows, got {}",
        lines.len() - 1
    );
    for (row, name) in lines[1..]
        .iter()
        .zip(["Baseline", "RS-CL", "VoG-CL", "Anti-VoG-CL"])
    {
        ensure!(
            row.starts_with(&format!("{name},")),
            "row {row:?} does not start with {name}"
        );
        ensure!(row.split(',').count() == 9, "row {row:?} has wrong arity");
    }

    // Second invocation of the identical pipeline, same config, same outputs.
    run_full_pipeline(&config)?;
    let comparison_second = read("comparison.csv")?;
    let extended_second = read("comparison_extended.csv")?;
    let scores_second = read("vog_scores.csv")?;
    ensure!(
        scores_first == scores_second,
        "vog_scores.csv differs between reruns"
    );

    *artifacts = Some(PipelineArtifacts {
        comparison_first,
        comparison_second,
        extended_first,
        extended_second,
        scores_first,
        scores_second,
        out_dir,
        first_wall,
    });
    let a = artifacts.as_ref().expect("just set");
    ensure!(
        a.comparison_first == a.comparison_second,
        "comparison.csv differs between reruns"
    );
    Ok(format!(
        "1392 train / 473 test, 30 epochs, 4 modes x 5 runs in {first_wall:.0?} (< 30 min); rerun byte-identical"
    ))
}

/// VoG scores correlate positively with the injected difficulty knob.
fn criterion_9(artifacts: &Option<PipelineArtifacts>) -> Result<String, String> {
    let a = artifacts
        .as_ref()
        .ok_or("pipeline artifacts unavailable (criterion 8 failed)")?;
    let train = load_directory(&a.out_dir.join("data").join("train")).map_err(|e| e.to_string())?;
    let scores = read_scores_csv(&a.out_dir.join("vog_scores.csv")).map_err(|e| e.to_string())?;
    let by_id: std::collections::BTreeMap<&str, f64> =
        scores.iter().map(|(id, s)| (id.as_str(), *s)).collect();
    let mut vogs = Vec::new();
    let mut knobs = Vec::new();
    for s in train.samples() {
        let vog = by_id
            .get(s.id.as_str())
            .ok_or_else(|| format!("no score for {}", s.id))?;
        let knob = s
            .meta
            .get("difficulty")
            .ok_or_else(|| format!("no difficulty knob for {}", s.id))?;
        vogs.push(*vog);
        knobs.push(*knob);
    }
    ensure!(
        vogs.len() >= 500,
        "need at least 500 samples, got {}",
        vogs.len()
    );
    let rho = spearman(&vogs, &knobs);
    let z = rho * ((vogs.len() - 1) as f64).sqrt();
    let p = normal_tail(z);
    ensure!(rho > 0.0, "spearman rho {rho} not positive");
    ensure!(
        z > 2.3263478740408408,
        "one-sided p {p:.3e} not below 0.01 (z = {z:.2})"
    );
    Ok(format!(
        "{} samples, spearman rho = {rho:.4}, z = {z:.1}, one-sided p = {p:.1e}",
        vogs.len()
    ))
}

/// Two invocations of compare with the same config emit identical tables.
fn criterion_10(artifacts: &Option<PipelineArtifacts>) -> Result<String, String> {
    let a = artifacts
        .as_ref()
        .ok_or("pipeline artifacts unavailable (criterion 8 failed)")?;
    ensure!(
        a.comparison_first == a.comparison_second,
        "comparison.csv differs between invocations"
    );
    ensure!(
        a.extended_first == a.extended_second,
        "comparison_extended.csv differs between invocations"
    );
    ensure!(
        a.scores_first == a.scores_second,
        "vog_scores.csv differs between invocations"
    );
    // Mean/std equality to the last digit, also as parsed values.
    let parse = |bytes: &[u8]| -> Vec<Vec<String>> {
        String::from_utf8_lossy(bytes)
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect()
    };
    let first = parse(&a.comparison_first);
    let second = parse(&a.comparison_second);
    ensure!(first == second, "parsed tables differ");
    Ok(format!(
        "mean/std tables identical to the last digit across {} mode rows (first run {:.0?})",
        first.len(),
        a.first_wall
    ))
}

#[test]
fn acceptance_criteria() {
    let mut artifacts: Option<PipelineArtifacts> = None;
    type CriterionFn = Box<dyn FnOnce(&mut Option<PipelineArtifacts>) -> Result<String, String>>;
    let criteria: Vec<(&str, CriterionFn)> = vec![
        (
            "criterion 1: gradient correctness",
            Box::new(|_| criterion_1()),
        ),
        (
            "criterion 2: VoG degenerate case",
            Box::new(|_| criterion_2()),
        ),
        (
            "criterion 3: formula variant equivalence",
            Box::new(|_| criterion_3()),
        ),
        (
            "criterion 4: scheduler algebra",
            Box::new(|_| criterion_4()),
        ),
        ("criterion 5: worked schedule", Box::new(|_| criterion_5())),
        (
            "criterion 6: sampler statistics",
            Box::new(|_| criterion_6()),
        ),
        ("criterion 7: metrics oracles", Box::new(|_| criterion_7())),
        ("criterion 8: protocol shape", Box::new(criterion_8)),
        (
            "criterion 9: difficulty validity signal",
            Box::new(|a: &mut Option<PipelineArtifacts>| criterion_9(a)),
        ),
        (
            "criterion 10: comparison determinism",
            Box::new(|a: &mut Option<PipelineArtifacts>| criterion_10(a)),
        ),
    ];

    let mut failures = Vec::new();
    for (name, run) in criteria {
        let started = Instant::now();
        match run(&mut artifacts) {
            Ok(detail) => {
                println!("PASS {name}: {detail} [{:.1?}]", started.elapsed());
            }
            Err(reason) => {
                println!("FAIL {name}: {reason} [{:.1?}]", started.elapsed());
                failures.push(format!("{name}: {reason}"));
            }
        }
    }
    if let Some(a) = &artifacts {
        fs::remove_dir_all(&a.out_dir).ok();
    }
    assert!(
        failures.is_empty(),
        "{} acceptance criteria failed:\n{}",
        failures.len(),
        failures.join("\n")
    );
}
