use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use makeup_prior::fit::{fit_coeffs, warm_start, FitConfig};
use makeup_prior::prior::load_model;
use makeup_prior::uvtex::{compose_visual, load_texture, save_texture, BitDepth, FaceMask};
use makeup_prior::Coefficients;

fn makeup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_makeup"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = makeup(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}\nstderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic corpus plus a model built from it.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    corpus: PathBuf,
    model: PathBuf,
}

fn fixture(size: usize, k: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let corpus = root.join("corpus");
    let model = root.join("model");
    ok(&["gen-synthetic", "--out", s(&corpus), "--seed", "5", "--count", "10", "--size", &size.to_string()]);
    ok(&["build-prior", "--corpus", s(&corpus), "--k", &k.to_string(), "--out", s(&model)]);
    Fixture {
        _dir: dir,
        root,
        corpus,
        model,
    }
}

#[test]
fn usage_and_help_codes() {
    assert_eq!(makeup(&["--help"]).status.code(), Some(0));
    assert_eq!(makeup(&["--version"]).status.code(), Some(0));
    assert_eq!(makeup(&["fit", "--help"]).status.code(), Some(0));
    assert_eq!(makeup(&[]).status.code(), Some(2));
    assert_eq!(makeup(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(makeup(&["sample", "--model", "m", "--out", "c.json"]).status.code(), Some(2));
    assert_eq!(makeup(&["gen-synthetic", "--out", "x"]).status.code(), Some(2));
    assert_eq!(makeup(&["build-prior", "--corpus", "c", "--out", "m", "--k", "ten"]).status.code(), Some(2));
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let ghost = dir.path().join("no_such_model");
    let out = makeup(&["sample", "--model", s(&ghost), "--seed", "1", "--out", s(&dir.path().join("c.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: missing_file: "), "{err}");
    assert!(err.contains("no_such_model"), "{err}");
}

#[test]
fn corrupt_model_is_reported_by_class() {
    let f = fixture(32, 4);
    let payload = f.model.join("payload.bin");
    let mut bytes = fs::read(&payload).unwrap();
    bytes[10] ^= 0xff;
    fs::write(&payload, &bytes).unwrap();
    let out = makeup(&["sample", "--model", s(&f.model), "--seed", "1", "--out", s(&f.root.join("c.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: checksum_mismatch: "));
}

#[test]
fn build_prior_reports_rank_bound() {
    let f = fixture(32, 8);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(f.model.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["k"].as_u64().unwrap() <= 9);
    let dim = manifest["width"].as_u64().unwrap() * manifest["height"].as_u64().unwrap() * 4;
    assert_eq!(dim, 32 * 32 * 4);

    let out = ok(&["build-prior", "--corpus", s(&f.corpus), "--k", "50", "--out", s(&f.root.join("m2"))]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["requested_k"], 50);
    assert_eq!(report["samples"], 10);
    assert_eq!(report["dimension"], 32 * 32 * 4);
    assert!(report["k"].as_u64().unwrap() <= 9);

    let empty = f.root.join("empty");
    fs::create_dir(&empty).unwrap();
    let out = makeup(&["build-prior", "--corpus", s(&empty), "--out", s(&f.root.join("m3"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: empty_corpus"));
}

#[test]
fn fit_matches_in_process_and_decodes_bit_exactly() {
    let f = fixture(32, 8);
    let bare = f.corpus.join("bare_002.png");
    let mask = f.corpus.join("face_mask.png");
    let coeffs = f.root.join("sampled.json");
    let target = f.root.join("target.png");
    ok(&["sample", "--model", s(&f.model), "--seed", "11", "--scale", "0.5", "--out", s(&coeffs)]);
    ok(&["transfer", "--model", s(&f.model), "--coeffs", s(&coeffs), "--bare", s(&bare), "--out", s(&target)]);
    let fit_dir = f.root.join("fit");
    let out = ok(&[
        "fit", "--model", s(&f.model), "--bare", s(&bare), "--target", s(&target), "--mask", s(&mask),
        "--out", s(&fit_dir),
    ]);
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["iterations"], 40);

    let prior = load_model(&f.model).unwrap();
    let bare_map = load_texture(&bare, 3).unwrap();
    let target_map = load_texture(&target, 3).unwrap();
    let face = FaceMask::load(&mask).unwrap();
    let init = warm_start(&prior, &bare_map, &target_map).unwrap();
    let fit = fit_coeffs(&prior, &bare_map, &target_map, &face, &FitConfig::default(), &init).unwrap();
    let on_disk = Coefficients::load_json(fit_dir.join("coeffs.json")).unwrap();
    assert_eq!(on_disk, fit.coefficients);
    assert_eq!(fs::read_to_string(fit_dir.join("loss_history.csv")).unwrap(), fit.history_csv());

    let decoded = f.root.join("decoded");
    ok(&["decode", "--model", s(&f.model), "--coeffs", s(&fit_dir.join("coeffs.json")), "--out", s(&decoded)]);
    let layer = prior.decode(&fit.coefficients).unwrap();
    let reference = f.root.join("reference");
    fs::create_dir(&reference).unwrap();
    save_texture(layer.bases(), reference.join("bases.png"), BitDepth::Sixteen).unwrap();
    save_texture(layer.alpha(), reference.join("alpha.png"), BitDepth::Sixteen).unwrap();
    save_texture(&compose_visual(&layer), reference.join("visual.png"), BitDepth::Sixteen).unwrap();
    for name in ["bases.png", "alpha.png", "visual.png"] {
        assert_eq!(fs::read(decoded.join(name)).unwrap(), fs::read(reference.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn fit_options() {
    let f = fixture(32, 4);
    let bare = f.corpus.join("bare_001.png");
    let mask = f.corpus.join("face_mask.png");
    let target = f.corpus.join("bare_004.png");
    let cfg = f.root.join("cfg.json");
    fs::write(&cfg, r#"{"iterations": 7, "w_sym": 0.0}"#).unwrap();
    let common = ["fit", "--model", s(&f.model), "--bare", s(&bare), "--target", s(&target), "--mask", s(&mask)];

    let out_a = f.root.join("a");
    let mut args = common.to_vec();
    args.extend(["--config", s(&cfg), "--out", s(&out_a)]);
    ok(&args);
    let csv = fs::read_to_string(out_a.join("loss_history.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);

    let out_b = f.root.join("b");
    let init = out_a.join("coeffs.json");
    let mut args = common.to_vec();
    args.extend(["--config", s(&cfg), "--iters", "3", "--init", s(&init), "--out", s(&out_b)]);
    ok(&args);
    let csv_b = fs::read_to_string(out_b.join("loss_history.csv")).unwrap();
    assert_eq!(csv_b.lines().count(), 1 + 4);
    let total = |line: &str| line.rsplit(',').next().unwrap().parse::<f64>().unwrap();
    let best_a = csv.lines().skip(1).map(total).fold(f64::INFINITY, f64::min);
    assert_eq!(total(csv_b.lines().nth(1).unwrap()), best_a);

    fs::write(&cfg, r#"{"iterations": 7, "bogus": 1}"#).unwrap();
    let out_c = f.root.join("c");
    let mut args = common.to_vec();
    args.extend(["--config", s(&cfg), "--out", s(&out_c)]);
    let out = makeup(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: invalid_config"));
}

#[test]
fn interpolation_modes() {
    let f = fixture(32, 4);
    let c = |name: &str| f.root.join(name);
    fs::write(c("a.json"), r#"{"k":4,"values":[0.0,1.0,2.0,3.0]}"#).unwrap();
    fs::write(c("b.json"), r#"{"k":4,"values":[4.0,5.0,6.0,7.0]}"#).unwrap();
    fs::write(c("c.json"), r#"{"k":4,"values":[8.0,8.0,8.0,8.0]}"#).unwrap();
    fs::write(c("d.json"), r#"{"k":4,"values":[0.0,0.0,0.0,0.0]}"#).unwrap();
    let load = |name: &str| Coefficients::load_json(c(name)).unwrap().into_values();

    ok(&["interpolate", "--mode", "coeff", "--a", s(&c("a.json")), "--b", s(&c("b.json")), "--t", "0.25", "--out", s(&c("lerp.json"))]);
    assert_eq!(load("lerp.json"), vec![1.0, 2.0, 3.0, 4.0]);

    ok(&["interpolate", "--mode", "mix", "--a", s(&c("a.json")), "--b", s(&c("b.json")), "--take", "0-1,3", "--out", s(&c("mix.json"))]);
    assert_eq!(load("mix.json"), vec![4.0, 5.0, 2.0, 7.0]);

    ok(&[
        "interpolate", "--mode", "bilerp", "--a", s(&c("a.json")), "--b", s(&c("b.json")), "--c", s(&c("c.json")),
        "--d", s(&c("d.json")), "--u", "1", "--v", "0", "--out", s(&c("bi.json")),
    ]);
    assert_eq!(load("bi.json"), load("c.json"));

    let faded = c("faded");
    ok(&["interpolate", "--mode", "fade", "--a", s(&c("a.json")), "--t", "0", "--model", s(&f.model), "--out", s(&faded)]);
    let alpha = load_texture(faded.join("alpha.png"), 1).unwrap();
    assert!(alpha.values().iter().all(|&v| v == 0.0));

    let (a, b) = (c("a.json"), c("b.json"));
    let (a, b) = (s(&a), s(&b));
    let bad = [
        vec!["interpolate", "--mode", "coeff", "--a", a, "--b", b, "--t", "1.5", "--out", "x.json"],
        vec!["interpolate", "--mode", "coeff", "--a", a, "--t", "0.5", "--out", "x.json"],
        vec!["interpolate", "--mode", "mix", "--a", a, "--b", b, "--take", "9", "--out", "x.json"],
        vec!["interpolate", "--mode", "fade", "--a", a, "--t", "0.5", "--out", "x"],
        vec!["interpolate", "--mode", "blend", "--a", a, "--out", "x"],
    ];
    for args in bad {
        let out = makeup(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn eval_reports_records() {
    let f = fixture(32, 4);
    let a = f.corpus.join("bare_000.png");
    let b = f.corpus.join("bare_001.png");
    let mask = f.corpus.join("face_mask.png");
    let report = f.root.join("report.json");
    let out = ok(&["eval", "--target", s(&a), "--input", s(&a), "--mask", s(&mask), "--out", s(&report)]);
    let records: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(records, serde_json::from_str::<serde_json::Value>(&fs::read_to_string(&report).unwrap()).unwrap());
    assert_eq!(records[0]["metric"], "rmse");
    assert_eq!(records[0]["value"], 0.0);
    assert_eq!(records[1]["value"], 1.0);
    assert_eq!(records[2]["value"], 0.0);

    let out = ok(&["eval", "--target", s(&a), "--input", s(&b), "--mask", s(&mask)]);
    let records: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(records[0]["value"].as_f64().unwrap() > 0.0);

    assert_eq!(makeup(&["eval", "--target", s(&a), "--input", s(&b)]).status.code(), Some(2));
}

#[test]
fn commands_are_deterministic() {
    let f = fixture(32, 4);
    let again = fixture(32, 4);
    for name in ["manifest.json", "payload.bin"] {
        assert_eq!(fs::read(f.model.join(name)).unwrap(), fs::read(again.model.join(name)).unwrap());
    }
    let one = f.root.join("one.json");
    let two = f.root.join("two.json");
    ok(&["sample", "--model", s(&f.model), "--seed", "3", "--out", s(&one)]);
    ok(&["sample", "--model", s(&f.model), "--seed", "3", "--out", s(&two)]);
    assert_eq!(fs::read(&one).unwrap(), fs::read(&two).unwrap());
    let other = f.root.join("other.json");
    ok(&["sample", "--model", s(&f.model), "--seed", "4", "--out", s(&other)]);
    assert_ne!(fs::read(&one).unwrap(), fs::read(&other).unwrap());
}
