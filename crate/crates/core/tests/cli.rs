use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use tiny_siamese::data::{balanced_pairs, load_dataset_auto, Dataset};
use tiny_siamese::eval::{classify_gallery_probe, evaluate_verification, Aggregation};
use tiny_siamese::model::load_model;

fn tinysiamese(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tinysiamese"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tinysiamese(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    tinysiamese(dir, args).status.code().unwrap()
}

fn kv(output: &str, key: &str) -> f64 {
    output
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from {output}"))
        .parse()
        .unwrap()
}

/// Generates a data set and trains a small model on it inside `dir`.
fn trained(dir: &Path, subjects: &str, dim: &str) {
    ok(
        dir,
        &["gen", "--subjects", subjects, "--samples", "6", "--dim", dim, "--seed", "4", "--out", "data.bin"],
    );
    ok(dir, &["train", "--train", "data.bin", "--out", "m.tsmd", "--epochs", "10", "--seed", "1"]);
}

#[test]
fn gen_is_reproducible_and_loads_back() {
    let dir = TempDir::new().unwrap();
    let args = |out: &'static str| ["gen", "--subjects", "20", "--samples", "6", "--dim", "64", "--seed", "7", "--out", out];
    ok(dir.path(), &args("a.bin"));
    ok(dir.path(), &args("b.bin"));
    let a = fs::read(dir.path().join("a.bin")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.bin")).unwrap());
    assert_eq!(&a[..4], b"TSFV");
    assert_eq!(u32::from_le_bytes(a[6..10].try_into().unwrap()), 64);
    assert_eq!(u32::from_le_bytes(a[10..14].try_into().unwrap()), 120);
    let ds = load_dataset_auto(dir.path().join("a.bin")).unwrap();
    assert_eq!((ds.dim(), ds.len(), ds.subject_count()), (64, 120, 20));

    ok(dir.path(), &["gen", "--subjects", "3", "--samples", "2", "--dim", "4", "--format", "text", "--out", "t.txt"]);
    assert!(fs::read_to_string(dir.path().join("t.txt")).unwrap().starts_with('#'));
}

#[test]
fn usage_errors() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(dir.path(), &["gen", "--subjects", "1", "--out", "x.bin"]), 1);
    assert_eq!(code(dir.path(), &["gen", "--noise", "2", "--out", "x.bin"]), 1);
    assert_eq!(code(dir.path(), &["gen"]), 1);
    assert_eq!(code(dir.path(), &["nope"]), 1);
    assert_eq!(code(dir.path(), &["--help"]), 0);
    assert!(!dir.path().join("x.bin").exists());
}

#[test]
fn data_errors() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("junk.bin"), b"TSFV\x09\x00").unwrap();
    assert_eq!(code(dir.path(), &["train", "--train", "junk.bin", "--out", "m.tsmd"]), 2);
    assert_eq!(code(dir.path(), &["train", "--train", "missing.bin", "--out", "m.tsmd"]), 2);

    ok(dir.path(), &["gen", "--dim", "8", "--out", "a.bin"]);
    ok(dir.path(), &["gen", "--dim", "16", "--out", "b.bin"]);
    assert_eq!(
        code(dir.path(), &["train", "--train", "a.bin", "--val", "b.bin", "--out", "m.tsmd", "--epochs", "1"]),
        2
    );
    assert_eq!(code(dir.path(), &["verify", "--model", "a.bin", "--left", "1", "--right", "1"]), 2);
}

#[test]
fn one_epoch_writes_checkpoint_trace_and_manifest() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["gen", "--subjects", "5", "--samples", "4", "--dim", "8", "--out", "d.bin"]);
    let out = ok(
        dir.path(),
        &["train", "--train", "d.bin", "--val", "d.bin", "--out", "m.tsmd", "--epochs", "1", "--manifest", "run.txt"],
    );
    assert!(out.contains("epoch\tmean_loss\tseconds"));
    assert!(out.contains("accuracy"));
    let model = load_model(dir.path().join("m.tsmd")).unwrap();
    assert_eq!(model.dim(), 8);
    let trace = fs::read_to_string(dir.path().join("m.tsmd.trace.tsv")).unwrap();
    assert_eq!(trace.lines().count(), 2);
    let manifest = fs::read_to_string(dir.path().join("run.txt")).unwrap();
    for needle in ["command=train", "seed=0", "config.epochs=1", "config.batch_size=18", "input=d.bin", "artifact=m.tsmd"] {
        assert!(manifest.contains(needle), "{manifest}");
    }
}

#[test]
fn ablated_and_deeper_models_round_trip_through_files() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["gen", "--subjects", "4", "--samples", "3", "--dim", "8", "--out", "d.bin"]);
    ok(
        dir.path(),
        &["train", "--train", "d.bin", "--out", "m.tsmd", "--epochs", "1", "--no-hadamard", "--depth", "3"],
    );
    let model = load_model(dir.path().join("m.tsmd")).unwrap();
    assert_eq!(model.config().depth, 3);
    let v = "1,2,3,4,5,6,7,8";
    ok(dir.path(), &["verify", "--model", "m.tsmd", "--left", v, "--right", v]);
}

#[test]
fn verify_single_pair_is_repeatable() {
    let dir = TempDir::new().unwrap();
    trained(dir.path(), "5", "4");
    let args = ["verify", "--model", "m.tsmd", "--left", "0.1,0.2,0.3,0.4", "--right", "0.1,0.2,0.3,0.4"];
    let first = ok(dir.path(), &args);
    assert_eq!(first, ok(dir.path(), &args));
    let p: f64 = first.split('\t').next().unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(code(dir.path(), &["verify", "--model", "m.tsmd", "--left", "1,2", "--right", "1,2"]), 2);
    assert_eq!(code(dir.path(), &["verify", "--model", "m.tsmd"]), 1);
}

fn pair_file(ds: &Dataset, pairs: &[tiny_siamese::data::Pair]) -> String {
    let mut text = String::from("# label,left,right\n");
    for p in pairs {
        let fields: Vec<String> = std::iter::once(p.label.to_string())
            .chain(ds.vector(p.left).iter().map(|v| v.to_string()))
            .chain(ds.vector(p.right).iter().map(|v| v.to_string()))
            .collect();
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    text
}

#[test]
fn labeled_pair_file_matches_library_report() {
    let dir = TempDir::new().unwrap();
    trained(dir.path(), "6", "8");
    let ds = load_dataset_auto(dir.path().join("data.bin")).unwrap();
    let model = load_model(dir.path().join("m.tsmd")).unwrap();
    let pairs = balanced_pairs(&ds, 10, 9, 99).unwrap();
    fs::write(dir.path().join("pairs.csv"), pair_file(&ds, &pairs)).unwrap();

    for t in ["0.1", "0.5", "0.9"] {
        let out = ok(dir.path(), &["verify", "--model", "m.tsmd", "--pairs", "pairs.csv", "--threshold", t, "--report", "kv"]);
        let lib = evaluate_verification(&model, &ds, &pairs, t.parse().unwrap()).unwrap();
        assert_eq!(kv(&out, "accuracy"), lib.accuracy);
        assert_eq!(kv(&out, "fpr"), lib.fpr);
        assert_eq!(kv(&out, "fnr"), lib.fnr);
        assert_eq!(kv(&out, "tp") as usize, lib.confusion.tp);
    }

    let fpr = |t: &str| {
        let out = ok(dir.path(), &["verify", "--model", "m.tsmd", "--pairs", "pairs.csv", "--threshold", t, "--report", "kv"]);
        kv(&out, "fpr")
    };
    assert!(fpr("0.9") <= fpr("0.1"));

    let swept = ok(dir.path(), &["verify", "--model", "m.tsmd", "--pairs", "pairs.csv", "--sweep", "9"]);
    assert!(swept.contains("threshold"));
}

#[test]
fn classify_through_files() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["gen", "--subjects", "4", "--samples", "6", "--dim", "16", "--seed", "2", "--out", "all.bin"]);
    let all = load_dataset_auto(dir.path().join("all.bin")).unwrap();
    let (gallery, probes) = all.split_per_subject(4).unwrap();
    tiny_siamese::data::save_dataset(&gallery, dir.path().join("g.bin"), tiny_siamese::data::FeatureFormat::Binary)
        .unwrap();
    tiny_siamese::data::save_dataset(&probes, dir.path().join("p.txt"), tiny_siamese::data::FeatureFormat::Text)
        .unwrap();
    ok(dir.path(), &["train", "--train", "g.bin", "--out", "m.tsmd", "--epochs", "20"]);

    let out = ok(dir.path(), &["classify", "--model", "m.tsmd", "--gallery", "g.bin", "--probes", "p.txt", "--report", "kv"]);
    let model = load_model(dir.path().join("m.tsmd")).unwrap();
    let probes = load_dataset_auto(dir.path().join("p.txt")).unwrap();
    let lib = classify_gallery_probe(&model, &gallery, &probes, Aggregation::Mean).unwrap();
    assert_eq!(kv(&out, "accuracy"), lib.accuracy);
    assert_eq!(kv(&out, "evaluated"), 8.0);

    // A probe from an unknown class is excluded and reported.
    let mut text = fs::read_to_string(dir.path().join("p.txt")).unwrap();
    text.push_str(&format!("77,{}\n", vec!["0.5"; 16].join(",")));
    fs::write(dir.path().join("p2.txt"), text).unwrap();
    let raw = tinysiamese(dir.path(), &["classify", "--model", "m.tsmd", "--gallery", "g.bin", "--probes", "p2.txt", "--report", "kv"]);
    assert!(raw.status.success());
    let stdout = String::from_utf8(raw.stdout).unwrap();
    assert_eq!(kv(&stdout, "missing"), 1.0);
    assert_eq!(kv(&stdout, "evaluated"), 8.0);
    assert!(String::from_utf8_lossy(&raw.stderr).contains("warning"));
}

#[test]
fn bench_reports_both_match_times() {
    let dir = TempDir::new().unwrap();
    let a = ok(dir.path(), &["bench", "--dim", "32", "--trials", "10", "--report", "kv"]);
    let b = ok(dir.path(), &["bench", "--dim", "32", "--trials", "10", "--report", "kv", "--no-train"]);
    assert_eq!(kv(&a, "trials"), 10.0);
    assert!(kv(&a, "train10_seconds") > 0.0);
    assert!(!b.contains("train10_seconds"));
    let (ca, cb) = (kv(&a, "mean_cached_match_seconds"), kv(&b, "mean_cached_match_seconds"));
    assert!(kv(&a, "mean_match_seconds") > 0.0 && ca > 0.0 && cb > 0.0);
    // Soft check: same order of magnitude, with generous slack for noise.
    assert!(ca / cb < 100.0 && cb / ca < 100.0, "{ca} vs {cb}");
}
