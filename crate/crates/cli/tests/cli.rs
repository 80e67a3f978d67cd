use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pointebm::data::load_cloud;
use pointebm::trainer::SeedStreams;
use pointebm::{load_checkpoint, EnergyNet, NetConfig};

const BIN: &str = env!("CARGO_BIN_EXE_pointebm");

const TINY: &str = "encoder_widths=8,16\nhead_widths=8,1\nnum_points=32\nbatch_size=8\n";

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn pointebm")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn files(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with(prefix))
        .collect();
    v.sort();
    v
}

/// Sphere data, a tiny config and a model trained for a few iterations.
struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let f = Fixture { dir };
        fs::write(f.path("tiny.cfg"), TINY).unwrap();
        ok(&["synth-data", "--out", p(&f.path("spheres")), "--count", "16", "--num-points", "32", "--seed", "1"]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) -> PathBuf {
        let manifest = self.path("spheres/manifest.tsv");
        let cfg = self.path("tiny.cfg");
        let outdir = self.path(out);
        let mut args = vec!["train", "--data", p(&manifest), "--config", p(&cfg), "--out", p(&outdir)];
        args.extend_from_slice(extra);
        ok(&args);
        outdir
    }
}

#[test]
fn synth_data_writes_files_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(&["synth-data", "--out", p(&out), "--count", "3", "--kind", "sphere", "--num-points", "20"]);
    assert_eq!(files(&out, "sphere_").len(), 3);
    let manifest = fs::read_to_string(out.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    for f in files(&out, "sphere_") {
        for q in load_cloud(&f).unwrap().points() {
            assert!(((q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    let again = dir.path().join("e");
    ok(&["synth-data", "--out", p(&again), "--count", "3", "--kind", "sphere", "--num-points", "20"]);
    for (a, b) in files(&out, "sphere_").iter().zip(files(&again, "sphere_")) {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    let bad = run(&["synth-data", "--out", p(&dir.path().join("f")), "--kind", "cone"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("sphere|box|torus|plane"));
}

#[test]
fn usage_data_and_divergence_exit_codes() {
    let fx = Fixture::new();
    let manifest = fx.path("spheres/manifest.tsv");
    assert_eq!(code(&["train"]), 1);
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["--help"]), 0);

    fs::write(fx.path("bad.cfg"), "learnin_rate=1\n").unwrap();
    let out = run(&["train", "--data", p(&manifest), "--config", p(&fx.path("bad.cfg")), "--out", p(&fx.path("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learnin_rate"));

    let missing = fx.path("missing.tsv");
    fs::write(&missing, "nowhere.xyz\n").unwrap();
    assert_eq!(code(&["train", "--data", p(&missing), "--out", p(&fx.path("y"))]), 2);

    let cfg = fx.path("tiny.cfg");
    let z = fx.path("z");
    let diverge = [
        "train", "--data", p(&manifest), "--config", p(&cfg), "--out", p(&z), "--epochs", "1",
        "--step-size", "1e200", "--noise-scale", "0",
    ];
    assert_eq!(code(&diverge), 3);

    // An existing output directory needs --force.
    assert_eq!(code(&["synth-data", "--out", p(&fx.path("spheres")), "--count", "1"]), 1);
    ok(&["synth-data", "--out", p(&fx.path("spheres")), "--count", "1", "--force"]);
}

#[test]
fn train_logs_and_reproduces() {
    let fx = Fixture::new();
    let a = fx.train("a", &["--epochs", "25", "--seed", "3"]);
    let log = fs::read_to_string(a.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 51, "header + 50 iterations");
    let b = fx.train("b", &["--epochs", "25", "--seed", "3"]);
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    assert_eq!(fs::read(a.join("config.txt")).unwrap(), fs::read(b.join("config.txt")).unwrap());

    // Replaying the written config reproduces the run.
    let replay = fx.path("replay");
    ok(&["train", "--data", p(&fx.path("spheres/manifest.tsv")), "--config", p(&a.join("config.txt")), "--out", p(&replay)]);
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(replay.join("model.ckpt")).unwrap());
}

#[test]
fn zero_epochs_checkpoint_is_the_seeded_init() {
    let fx = Fixture::new();
    let out = fx.train("init", &["--epochs", "0", "--seed", "9"]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let train_seed: u64 = manifest["notes"]["train_seed"].as_str().unwrap().parse().unwrap();
    let cfg = NetConfig { encoder_widths: vec![8, 16], head_widths: vec![8, 1], use_batch_norm_encoder: true };
    let expected = EnergyNet::new(cfg, SeedStreams::new(train_seed).seed(0)).unwrap();
    assert_eq!(load_checkpoint(&out.join("model.ckpt")).unwrap().net, expected);
}

#[test]
fn sample_and_interpolate() {
    let fx = Fixture::new();
    let model = fx.train("m", &["--epochs", "2"]);
    let ckpt = model.join("model.ckpt");

    let none = fx.path("none");
    ok(&["sample", "--checkpoint", p(&ckpt), "--out", p(&none), "--count", "0"]);
    assert!(files(&none, "sample_").is_empty());

    let s1 = fx.path("s1");
    let s2 = fx.path("s2");
    for dir in [&s1, &s2] {
        ok(&["sample", "--checkpoint", p(&ckpt), "--out", p(dir), "--count", "3", "--seed", "4"]);
    }
    let got = files(&s1, "sample_");
    assert_eq!(got.len(), 3);
    for (a, b) in got.iter().zip(files(&s2, "sample_")) {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
        assert_eq!(load_cloud(a).unwrap().len(), 32);
    }

    // Interpolation endpoints are the noise-free samples of the same seed.
    let frames = fx.path("frames");
    ok(&["interpolate", "--checkpoint", p(&ckpt), "--out", p(&frames), "--steps", "2", "--seed", "5"]);
    let endpoints = fx.path("endpoints");
    ok(&[
        "sample", "--checkpoint", p(&ckpt), "--out", p(&endpoints), "--count", "2", "--seed", "5", "--noise-scale", "0",
    ]);
    let f = files(&frames, "frame_");
    assert_eq!(f.len(), 2);
    for (a, b) in f.iter().zip(files(&endpoints, "sample_")) {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    let eight = fx.path("eight");
    ok(&["interpolate", "--checkpoint", p(&ckpt), "--out", p(&eight), "--steps", "8"]);
    assert_eq!(files(&eight, "frame_").len(), 8);
    assert_eq!(code(&["interpolate", "--checkpoint", p(&ckpt), "--out", p(&fx.path("one")), "--steps", "1"]), 1);
}

#[test]
fn evaluate_self_comparison() {
    let fx = Fixture::new();
    let data = fx.path("spheres");
    let out = fx.path("eval");
    ok(&["evaluate", "--gen", p(&data), "--ref", p(&data), "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("jsd,mmd_cd,mmd_emd,cov_cd,cov_emd,n_gen,n_ref"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!(row[0].abs() < 1e-12);
    assert_eq!(&row[1..], &[0.0, 0.0, 1.0, 1.0, 16.0, 16.0]);
    assert!(fs::read_to_string(out.join("manifest.json")).unwrap().contains("emd_solver"));

    let empty = fx.path("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(code(&["evaluate", "--gen", p(&empty), "--ref", p(&data), "--out", p(&fx.path("e2"))]), 1);
}

#[test]
fn reconstruct_is_deterministic() {
    let fx = Fixture::new();
    let model = fx.train("m", &["--epochs", "2"]);
    let ckpt = model.join("model.ckpt");
    let target = fx.path("spheres/sphere_0000.xyz");
    let mut outs = Vec::new();
    for name in ["r1", "r2"] {
        let out = fx.path(name);
        ok(&[
            "reconstruct", "--checkpoint", p(&ckpt), "--out", p(&out), "--recon-steps", "5", "--restarts", "2",
            "--num-steps", "4", p(&target),
        ]);
        outs.push(out);
    }
    let csv = fs::read_to_string(outs[0].join("reconstruction.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(csv, fs::read_to_string(outs[1].join("reconstruction.csv")).unwrap());
    assert_eq!(code(&["reconstruct", "--checkpoint", p(&ckpt), "--out", p(&fx.path("r3"))]), 1);
}

#[test]
fn classify_and_features() {
    let fx = Fixture::new();
    let model = fx.train("m", &["--epochs", "2"]);
    let ckpt = model.join("model.ckpt");
    ok(&["synth-data", "--out", p(&fx.path("boxes")), "--kind", "box", "--count", "16", "--num-points", "32"]);
    let both = fx.path("both.tsv");
    let mut text = String::new();
    for kind in ["spheres", "boxes"] {
        for line in fs::read_to_string(fx.path(&format!("{kind}/manifest.tsv"))).unwrap().lines() {
            text.push_str(&format!("{kind}/{line}\n"));
        }
    }
    fs::write(&both, text).unwrap();

    let feats = fx.path("feats");
    ok(&["features", "--checkpoint", p(&ckpt), "--data", p(&both), "--out", p(&feats)]);
    assert_eq!(fs::read_to_string(feats.join("features.csv")).unwrap().lines().count(), 33);

    let cls = fx.path("cls");
    ok(&[
        "classify", "--checkpoint", p(&ckpt), "--data", p(&both), "--out", p(&cls), "--corrupt", "missing:0,0.5",
        "--corrupt", "perturb:0,10",
    ]);
    let report = fs::read_to_string(cls.join("classify.csv")).unwrap();
    let clean: f64 = report.lines().last().unwrap().rsplit(',').next().unwrap().parse().unwrap();
    for kind in ["missing", "perturb"] {
        let curve = fs::read_to_string(cls.join(format!("robustness_{kind}.csv"))).unwrap();
        let at_zero: f64 = curve.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(at_zero, clean);
    }

    let single = fx.path("spheres/manifest.tsv");
    assert_eq!(code(&["classify", "--checkpoint", p(&ckpt), "--data", p(&single), "--out", p(&fx.path("c2"))]), 1);
}
