use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use retseg::dataio::{read_png_text, DatasetManifest};

fn retseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retseg"))
        .args(args)
        .env_remove("RETSEG_THREADS")
        .output()
        .expect("run retseg")
}

fn ok(args: &[&str]) -> Output {
    let out = retseg(args);
    assert!(
        out.status.success(),
        "retseg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "-d",
    "32",
    "-r",
    "2",
    "--architecture",
    "a,c4,p,f16",
    "--epochs",
    "2",
    "--patches-per-image",
    "12",
    "--learning-rate",
    "0.003",
];

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&[
            "synth", "--out", s(&root.join("data")), "--count", "4", "--width", "64", "--height", "48", "--seed", "3",
        ]);
        Fixture { _dir: dir, root }
    }

    fn manifest(&self) -> PathBuf {
        self.root.join("data/manifest.txt")
    }

    fn train(&self, out: &str, extra: &[&str]) -> PathBuf {
        let ck = self.root.join(out);
        let manifest = self.manifest();
        let mut args = vec!["train", "--manifest", s(&manifest), "--out", s(&ck)];
        args.extend_from_slice(SMALL);
        args.extend_from_slice(extra);
        ok(&args);
        ck
    }
}

#[test]
fn grid_command_writes_golden_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.txt");
    ok(&["grid", "-d", "64", "-r", "3", "--out", s(&out)]);
    let golden = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/grid_d64_r3.txt")).unwrap();
    assert_eq!(fs::read_to_string(out).unwrap(), golden);
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = retseg(&["grid", "-d", "96", "-r", "5", "--out", s(&dir.path().join("g.txt"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not divisible"));
    assert!(!dir.path().join("g.txt").exists());

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "sigma = -1.0\n").unwrap();
    let out = retseg(&["grid", "--config", s(&cfg), "--out", s(&dir.path().join("g.txt"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = retseg(&[
        "train",
        "--manifest",
        s(&dir.path().join("nope.txt")),
        "--out",
        s(&dir.path().join("m.ck")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
}

#[test]
fn config_file_and_flags_combine() {
    let fx = Fixture::new();
    let cfg = fx.root.join("run.toml");
    fs::write(&cfg, "subarea_size = 32\nlevel = 1\nepochs = 1\narchitecture = \"a,c2,p,f8\"\npatches_per_image = 4\n").unwrap();
    let ck = fx.root.join("m.ck");
    ok(&["train", "--config", s(&cfg), "--level", "2", "--manifest", s(&fx.manifest()), "--out", s(&ck)]);
    let model = retseg::predictor::checkpoint::load(&ck).unwrap();
    assert_eq!((model.config.input_size, model.config.level, model.config.epochs), (32, 2, 1));
}

#[test]
fn training_is_reproducible_and_logged() {
    let fx = Fixture::new();
    let a = fx.train("a.ck", &[]);
    let b = fx.train("b.ck", &["--threads", "2"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let log = fs::read_to_string(fx.root.join("a.ck.log")).unwrap();
    assert!(log.contains("# retseg.config_hash="));
    assert!(log.contains("# retseg.manifest_hash="));
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch=")).count(), 2);
    let c = fx.train("c.ck", &["--seed", "9"]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn fold_training_holds_out_images() {
    let fx = Fixture::new();
    let folded = fx.root.join("data/folds.txt");
    ok(&["folds", "--manifest", s(&fx.manifest()), "--folds", "2", "--out", s(&folded)]);
    let m = DatasetManifest::load(&folded).unwrap();
    assert_eq!(m.folds, 2);
    assert_eq!(m.split(Some(0)).unwrap().1.len(), 2);
    let ck = fx.root.join("f.ck");
    let mut args = vec!["train", "--manifest", s(&folded), "--fold", "1", "--out", s(&ck)];
    args.extend_from_slice(SMALL);
    ok(&args);
    assert!(fs::read_to_string(fx.root.join("f.ck.log")).unwrap().contains("# retseg.fold=1"));
}

fn segment(fx: &Fixture, ck: &Path, out: &str, threads: &str) -> PathBuf {
    let dir = fx.root.join(out);
    let image = fx.root.join("data/images/img_001.png");
    let mut args = vec![
        "segment",
        "--threads",
        threads,
        "--checkpoint",
        s(ck),
        "--image",
        s(&image),
        "--out",
        s(&dir),
        "--probmap",
    ];
    args.extend_from_slice(&SMALL[..4]);
    ok(&args);
    dir
}

#[test]
fn segmentation_is_deterministic_across_thread_counts() {
    let fx = Fixture::new();
    let ck = fx.train("m.ck", &[]);
    let a = segment(&fx, &ck, "seg_a", "1");
    let b = segment(&fx, &ck, "seg_b", "1");
    let c = segment(&fx, &ck, "seg_c", "3");
    for f in ["segmentation.png", "heat.png", "trace.txt", "probmap.bin"] {
        let fa = fs::read(a.join(f)).unwrap();
        assert_eq!(fa, fs::read(b.join(f)).unwrap(), "{f} differs between runs");
        assert_eq!(fa, fs::read(c.join(f)).unwrap(), "{f} differs across thread counts");
    }

    let trace = fs::read_to_string(a.join("trace.txt")).unwrap();
    let records: Vec<&str> = trace.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(trace.lines().find(|l| !l.starts_with('#')), Some("row\tx\ty\tH\tstep"));
    assert!(trace.contains("# retseg.checkpoint_hash="));
    // rows 0, 10 and the clamped row 16 of a 48-pixel-high image
    let rows: std::collections::BTreeSet<&str> = records.iter().map(|l| l.split('\t').nth(2).unwrap()).collect();
    assert_eq!(rows.into_iter().collect::<Vec<_>>(), ["0", "10", "16"]);
    for r in &records {
        let f: Vec<&str> = r.split('\t').collect();
        assert_eq!(f.len(), 5, "record {r:?}");
        let h: f64 = f[3].parse().unwrap();
        assert!((0.0..=3f64.ln() + 1e-12).contains(&h));
    }

    let meta = read_png_text(&a.join("segmentation.png")).unwrap();
    assert!(meta.iter().any(|(k, v)| k == "retseg.version" && v == env!("CARGO_PKG_VERSION")));
    assert!(meta.iter().any(|(k, _)| k == "retseg.config_hash"));

    let raw = fs::read(a.join("probmap.bin")).unwrap();
    let text_end = raw.windows(15).position(|w| w == b"retseg-probmap ").unwrap();
    let nl = text_end + raw[text_end..].iter().position(|&b| b == b'\n').unwrap();
    assert_eq!(raw.len() - nl - 1, 64 * 48 * 3 * 8);
}

#[test]
fn oracle_segmentation_and_evaluation() {
    let fx = Fixture::new();
    let out = fx.root.join("oracle");
    ok(&[
        "segment",
        "--oracle-mask",
        s(&fx.root.join("data/masks/img_000.png")),
        "--image",
        s(&fx.root.join("data/images/img_000.png")),
        "--out",
        s(&out),
        "-d",
        "16",
        "-r",
        "2",
        "--manifest",
        s(&fx.manifest()),
    ]);
    let truth = DatasetManifest::load(&fx.manifest()).unwrap().load_pair(0).unwrap().labels;
    let pred = retseg::dataio::read_png(&out.join("segmentation.png")).unwrap();
    let palette = retseg::dataio::ClassPalette::for_classes(3).unwrap();
    let decoded = retseg::dataio::decode_mask(&pred, &palette).unwrap();
    let agree = decoded.classes().iter().zip(truth.classes()).filter(|(a, b)| a == b).count();
    assert!(agree as f64 / truth.classes().len() as f64 > 0.97);

    let eval = fx.root.join("eval_oracle");
    ok(&["evaluate", "--oracle", "--manifest", s(&fx.manifest()), "--out", s(&eval), "-d", "16", "-r", "2"]);
    let table = fs::read_to_string(eval.join("scores.txt")).unwrap();
    assert!(table.contains("Jaccard"));
    assert!(table.contains(" ± "));
}

#[test]
fn perfect_predictions_score_one() {
    let fx = Fixture::new();
    let eval = fx.root.join("eval");
    ok(&[
        "evaluate",
        "--predictions",
        s(&fx.root.join("data/masks")),
        "--manifest",
        s(&fx.manifest()),
        "--out",
        s(&eval),
    ]);
    let records = fs::read_to_string(eval.join("scores.records")).unwrap();
    let macros: Vec<&str> = records.lines().filter(|l| l.contains("scope=macro")).collect();
    assert_eq!(macros.len(), 5);
    for l in macros {
        assert!(l.contains("mean=1.000000 std=0.000000"), "{l}");
    }
}

#[test]
fn cross_validation_and_baseline_produce_tables() {
    let fx = Fixture::new();
    let cv = fx.root.join("cv");
    let manifest = fx.manifest();
    let mut args = vec!["evaluate", "--manifest", s(&manifest), "--out", s(&cv), "--folds", "2"];
    args.extend_from_slice(SMALL);
    let out = ok(&args);
    assert!(String::from_utf8_lossy(&out.stderr).contains("fold 1:"));
    assert!(fs::read_to_string(cv.join("scores.records")).unwrap().contains("folds=2"));

    let ck = fx.train("pc.ck", &["--head", "patch-center"]);
    let bl = fx.root.join("bl");
    let mut args = vec![
        "baseline",
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&ck),
        "--out",
        s(&bl),
        "--baseline-stride",
        "8",
    ];
    args.extend_from_slice(SMALL);
    ok(&args);
    assert!(fs::read_to_string(bl.join("scores.txt")).unwrap().contains("patch-center d=32"));

    // a retina checkpoint is not a baseline model
    let rc = fx.train("r.ck", &[]);
    let out = retseg(&["baseline", "--manifest", s(&fx.manifest()), "--checkpoint", s(&rc), "--out", s(&bl), "-d", "32", "-r", "2"]);
    assert_eq!(out.status.code(), Some(2));
}
