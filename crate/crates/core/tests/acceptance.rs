//! Acceptance suite. Every criterion runs in one sequential test so timing
//! checks are not disturbed by other tests, and each prints one status line.

use std::fmt::Display;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tiny_siamese::data::{balanced_pairs, generate_synthetic, Dataset, PairSampler};
use tiny_siamese::eval::{bench_matching, classify_gallery_probe, evaluate_verification, Aggregation};
use tiny_siamese::model::{distance_vector, init_model, DistanceMode, ModelConfig, TinyModel};
use tiny_siamese::training::{bce_loss, relative_error, train, TrainConfig};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Display) -> Outcome {
    Outcome {
        pass,
        detail: detail.to_string(),
    }
}

fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [2usize, 4, 8] {
        for instance in 0..20u64 {
            let mut model = init_model(n, 100 * n as u64 + instance).unwrap();
            let x1 = normal_vec(&mut rng, n);
            let x2 = normal_vec(&mut rng, n);
            let y = f64::from(rng.random_range(0..2u8));
            let loss = |m: &TinyModel| {
                let p = m.score(&x1, &x2).unwrap().p();
                bce_loss(&[p], &[y]).unwrap().0
            };

            let (score, acts) = model.score_pair(&x1, &x2).unwrap();
            let (_, dl_dp) = bce_loss(&[score.p()], &[y]).unwrap();
            let grads = model.backward_pair(&acts, dl_dp[0]).unwrap();

            let shapes: Vec<usize> = model.parameters().iter().map(|t| t.len()).collect();
            for (t, &len) in shapes.iter().enumerate() {
                for k in 0..len {
                    let orig = model.parameters()[t][k];
                    model.parameters_mut()[t][k] = orig + h;
                    let plus = loss(&model);
                    model.parameters_mut()[t][k] = orig - h;
                    let minus = loss(&model);
                    model.parameters_mut()[t][k] = orig;
                    let numeric = (plus - minus) / (2.0 * h);
                    worst = worst.max(relative_error(grads.tensors()[t][k], numeric));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-5 && secs < 10.0,
        format!("max relative error {worst:.3e} (limit 1e-5), {secs:.2} s (limit 10 s)"),
    )
}

fn distance_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=64);
        let a = normal_vec(&mut rng, n);
        let b = normal_vec(&mut rng, n);
        let mut expected = vec![0.0; 2 * n];
        for i in 0..n {
            expected[i] = (a[i] - b[i]) * (a[i] - b[i]);
            expected[n + i] = a[i] * b[i];
        }
        let got = distance_vector(&a, &b).unwrap();
        if got.len() != expected.len() || got.iter().zip(&expected).any(|(g, e)| g.to_bits() != e.to_bits()) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of 1000 pairs differ bitwise"))
}

fn loss_anchor() -> Outcome {
    let (loss, _) = bce_loss(&[0.5], &[1.0]).unwrap();
    let err = (loss - std::f64::consts::LN_2).abs();
    outcome(err <= 1e-12, format!("|loss - ln 2| = {err:.3e}"))
}

fn symmetry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = init_model(64, 4).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a = normal_vec(&mut rng, 64);
        let b = normal_vec(&mut rng, 64);
        let ab = model.score(&a, &b).unwrap().p();
        let ba = model.score(&b, &a).unwrap().p();
        worst = worst.max((ab - ba).abs());
    }
    outcome(worst <= 1e-15, format!("max |s(a,b) - s(b,a)| = {worst:.3e}"))
}

fn balanced_sampling() -> Outcome {
    let ds = generate_synthetic(20, 6, 8, 1.0, 0.05, 5).unwrap();
    let mut sampler = PairSampler::new(&ds, 5).unwrap();
    let mut bad = 0;
    for _ in 0..1000 {
        let batch = sampler.next_batch(9).unwrap();
        let similar = batch.iter().filter(|p| p.label == 1).count();
        let consistent = batch.iter().all(|p| {
            let same = ds.subject(p.left) == ds.subject(p.right);
            p.label == u8::from(same) && p.left != p.right
        });
        if batch.len() != 18 || similar != 9 || !consistent {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{bad} of 1000 batches malformed"))
}

fn held_out_accuracy(noise: f64, seed: u64, distance: DistanceMode) -> (f64, f64) {
    let ds = generate_synthetic(20, 6, 64, 1.0, noise, 7).unwrap();
    let (train_set, test_set) = ds.split_per_subject(4).unwrap();
    let start = Instant::now();
    let model = TinyModel::init(ModelConfig::new(64).with_distance(distance), seed).unwrap();
    let config = TrainConfig {
        epochs: 30,
        seed,
        ..TrainConfig::default()
    };
    let (model, _) = train(model, &train_set, &config).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pairs = balanced_pairs(&test_set, 100, 9, 1000 + seed).unwrap();
    let report = evaluate_verification(&model, &test_set, &pairs, 0.5).unwrap();
    (report.accuracy, secs)
}

fn desk_verification() -> Outcome {
    let (acc, secs) = held_out_accuracy(0.05, 0, DistanceMode::Full);
    outcome(
        acc >= 0.95 && secs < 60.0,
        format!("held-out accuracy {acc:.4} (min 0.95), training {secs:.2} s (limit 60 s)"),
    )
}

fn desk_classification() -> Outcome {
    let ds = generate_synthetic(4, 6, 64, 1.0, 0.05, 11).unwrap();
    let (gallery, probes) = ds.split_per_subject(4).unwrap();
    let config = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let (model, _) = train(init_model(64, 0).unwrap(), &gallery, &config).unwrap();
    let report = classify_gallery_probe(&model, &gallery, &probes, Aggregation::Mean).unwrap();

    let oracle = brute_force_argmax(&model, &gallery, &probes);
    let predicted: Vec<u32> = report.predictions.iter().map(|p| p.predicted).collect();
    let agrees = predicted == oracle;
    outcome(
        report.accuracy >= 0.95 && agrees && report.evaluated == probes.len(),
        format!(
            "accuracy {:.4} over {} probes (min 0.95), oracle agreement {agrees}",
            report.accuracy, report.evaluated
        ),
    )
}

/// Scores every (probe, gallery record) pair without cached embeddings.
fn brute_force_argmax(model: &TinyModel, gallery: &Dataset, probes: &Dataset) -> Vec<u32> {
    let mut classes: Vec<u32> = gallery.records().iter().map(|r| r.subject_id).collect();
    classes.sort_unstable();
    classes.dedup();
    probes
        .records()
        .iter()
        .map(|probe| {
            let mut best = (u32::MAX, f64::NEG_INFINITY);
            for &c in &classes {
                let scores: Vec<f64> = gallery
                    .records()
                    .iter()
                    .filter(|g| g.subject_id == c)
                    .map(|g| model.score(&probe.vector, &g.vector).unwrap().p())
                    .collect();
                let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                if mean > best.1 {
                    best = (c, mean);
                }
            }
            best.0
        })
        .collect()
}

fn parameter_count() -> Outcome {
    let model = init_model(4096, 0).unwrap();
    let stored: usize = model.parameters().iter().map(|t| t.len()).sum();
    let reported = model.param_count();
    outcome(
        stored == 16_791_553 && reported == 16_791_553,
        format!("stored {stored}, reported {reported}, expected 16791553"),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_tinysiamese"))
        .current_dir(dir)
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let gen = ["gen", "--subjects", "6", "--samples", "4", "--dim", "16", "--seed", "9", "--out", "train.bin"];
    let train = [
        "train", "--train", "train.bin", "--out", "model.tsmd", "--trace", "trace.tsv", "--epochs", "5", "--seed", "3",
    ];
    let mut ok = true;
    for d in &dirs {
        ok &= run_cli(d.path(), &gen) && run_cli(d.path(), &train);
    }
    if !ok {
        return outcome(false, "a CLI run failed");
    }
    let read = |name: &str| dirs.each_ref().map(|d| std::fs::read(d.path().join(name)).unwrap());
    let [m1, m2] = read("model.tsmd");
    let [t1, t2] = read("trace.tsv");
    outcome(
        m1 == m2 && t1 == t2,
        format!("checkpoints identical {}, traces identical {}", m1 == m2, t1 == t2),
    )
}

fn latency() -> Outcome {
    let model = init_model(4096, 0).unwrap();
    let ds = generate_synthetic(4, 2, 4096, 1.0, 0.05, 0).unwrap();
    let report = bench_matching(&model, &ds, 10, 0).unwrap();
    let cached = report.mean_cached_match_seconds();
    outcome(
        report.cached_match_seconds.len() == 10 && cached < 5e-3,
        format!(
            "cached mean {:.3} ms (limit 5 ms), uncached mean {:.3} ms",
            cached * 1e3,
            report.mean_match_seconds() * 1e3
        ),
    )
}

fn hadamard_ablation() -> Outcome {
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..5 {
        let (full, _) = held_out_accuracy(0.15, seed, DistanceMode::Full);
        let (ablated, _) = held_out_accuracy(0.15, seed, DistanceMode::SquaredDifferenceOnly);
        if ablated <= full {
            wins += 1;
        }
        rows.push(format!("seed {seed}: full {full:.4} ablated {ablated:.4}"));
    }
    outcome(wins >= 3, format!("full >= ablated on {wins}/5 seeds [{}]", rows.join("; ")))
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 11] = [
        ("gradient correctness", gradient_correctness),
        ("distance oracle", distance_oracle),
        ("loss anchor", loss_anchor),
        ("symmetry", symmetry),
        ("balanced sampling", balanced_sampling),
        ("desk-scale verification", desk_verification),
        ("desk-scale classification", desk_classification),
        ("parameter count", parameter_count),
        ("determinism", determinism),
        ("latency", latency),
        ("hadamard ablation", hadamard_ablation),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let status = if o.pass { "PASS" } else { "FAIL" };
        // Written straight to stderr so the lines survive output capture.
        let _ = writeln!(std::io::stderr(), "[{status}] {:>2}. {name}: {}", i + 1, o.detail);
        if !o.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
