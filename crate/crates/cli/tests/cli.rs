use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use vdeval_core::CcaModel;

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn vdeval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vdeval"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = vdeval(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn result(path: impl AsRef<Path>) -> Value {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(v["tool"], "vdeval");
    assert!(v["config_hash"].as_str().unwrap().len() == 64);
    v["result"].clone()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Fits a model on the training fixture into `dir` and returns its path.
fn fit(dir: &Path) -> PathBuf {
    let model = dir.join("model.json");
    ok(&[
        "fit",
        "--train-corpus",
        &fixture("train.json"),
        "--embeddings",
        &fixture("words.vec"),
        "--model",
        &s(&model),
        "--out",
        &s(dir),
    ]);
    model
}

#[test]
fn fitted_model_reloads_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let model = fit(dir.path());
    let text = std::fs::read_to_string(&model).unwrap();
    let loaded = CcaModel::load(&model).unwrap();
    assert_eq!(loaded.to_json().trim_end(), text.trim_end());
    let report = result(dir.path().join("fit.json"));
    let eig: Vec<f64> = serde_json::from_value(report["eigenvalues"].clone()).unwrap();
    assert_eq!(eig, loaded.eigenvalues());
    assert!(eig.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn human_refsets_verify_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&[
        "build-refsets",
        "--method",
        "human",
        "--corpus",
        &fixture("val.json"),
        "--dense",
        &fixture("val_dense.json"),
        "--out",
        &s(d),
    ]);
    ok(&[
        "verify-refsets",
        "--corpus",
        &fixture("val.json"),
        "--dense",
        &fixture("val_dense.json"),
        "--refsets",
        &s(&d.join("refsets.json")),
        "--out",
        &s(d),
    ]);
    let r = result(d.join("verify.json"));
    assert_eq!(r["rounds"], 6);
    for key in ["iou", "precision", "recall"] {
        assert_eq!(r[key]["mean"].as_f64(), Some(100.0), "{key}");
    }
}

#[test]
fn gen_eval_matches_independent_oracle() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "gen-eval",
        "--corpus",
        &fixture("val.json"),
        "--dense",
        &fixture("val_dense.json"),
        "--embeddings",
        &fixture("words.vec"),
        "--generations",
        &fixture("oracle_generations.jsonl"),
        "--out",
        &s(dir.path()),
    ]);
    let expected: Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("oracle_expected.json")).unwrap()).unwrap();
    let report = result(dir.path().join("consensus.json"))["report"].clone();
    assert_eq!(report["rounds"], expected["rounds"]);
    let mu = expected["mu"].as_object().unwrap();
    let metrics = report["metrics"].as_array().unwrap();
    assert_eq!(metrics.len(), mu.len());
    for m in metrics {
        let name = m["metric"].as_str().unwrap();
        let want = mu[name].as_f64().unwrap();
        let got = m["mu"].as_f64().unwrap();
        assert!((got - want).abs() < 1e-9, "{name}: {got} vs {want}");
        // one generation per round: no spread, gamma equals the score
        assert_eq!(m["sigma"].as_f64(), Some(0.0));
        assert!((m["gamma"].as_f64().unwrap() - got).abs() < 1e-12);
    }
}

#[test]
fn empty_generations_are_excluded_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "gen-eval",
        "--corpus",
        &fixture("val.json"),
        "--dense",
        &fixture("val_dense.json"),
        "--generations",
        &fixture("generations.jsonl"),
        "--metrics",
        "cider4,meteor",
        "--out",
        &s(dir.path()),
    ]);
    let report = result(dir.path().join("consensus.json"))["report"].clone();
    assert_eq!(report["rounds"], 6);
    assert_eq!(report["excluded_empty_generations"], 1);
    let csv = std::fs::read_to_string(dir.path().join("consensus.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config_hash=") && lines[1].starts_with("# conventions_fingerprint="));
    assert_eq!(lines[2], "metric,mu,sigma,gamma");
    assert_eq!(lines.len(), 5);
}

#[test]
fn gamma_baseline_meteor_is_one() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "gen-eval",
        "--baseline",
        "gamma",
        "--corpus",
        &fixture("val.json"),
        "--dense",
        &fixture("val_dense.json"),
        "--metrics",
        "meteor,bleu4",
        "--out",
        &s(dir.path()),
    ]);
    let r = result(dir.path().join("consensus.json"));
    assert_eq!(r["input"], "baseline:gamma");
    for m in r["report"]["metrics"].as_array().unwrap() {
        assert!((m["mu"].as_f64().unwrap() - 1.0).abs() < 1e-12, "{m}");
    }
}

#[test]
fn rank_eval_and_histogram_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = fit(d);
    ok(&[
        "rank-eval",
        "--corpus",
        &fixture("val.json"),
        "--dense",
        &fixture("val_dense.json"),
        "--embeddings",
        &fixture("words.vec"),
        "--model",
        &s(&model),
        "--out",
        &s(d),
    ]);
    let r = result(d.join("rank_report.json"));
    assert_eq!(r["summary"]["count"], 60);
    assert_eq!(r["ndcg"]["evaluated"], 6);
    let ndcg = r["ndcg"]["mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&ndcg));

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(d.join("ranks.csv"))
        .unwrap();
    let ranks: Vec<f64> = rdr
        .records()
        .map(|rec| rec.unwrap()[2].parse::<f64>().unwrap())
        .collect();
    assert_eq!(ranks.len(), 60);
    let mr = ranks.iter().sum::<f64>() / 60.0;
    assert!((mr - r["summary"]["mr"].as_f64().unwrap()).abs() < 1e-9);
    let r1 = 100.0 * ranks.iter().filter(|&&x| x == 1.0).count() as f64 / 60.0;
    assert!((r1 - r["summary"]["r1"].as_f64().unwrap()).abs() < 1e-9);

    ok(&["histogram", "--ranks", &s(&d.join("ranks.csv")), "--out", &s(d)]);
    let h = result(d.join("histogram.json"));
    assert_eq!(h["count"], 60);
    assert!((h["mean_rank"].as_f64().unwrap() - mr).abs() < 1e-9);
}

#[test]
fn nn_ranker_reports_clamping() {
    let dir = tempfile::tempdir().unwrap();
    let run = |k: &str| {
        ok(&[
            "rank-eval",
            "--ranker",
            "nn",
            "--k-nn",
            k,
            "--train-corpus",
            &fixture("train.json"),
            "--corpus",
            &fixture("val.json"),
            "--embeddings",
            &fixture("words.vec"),
            "--out",
            &s(dir.path()),
        ]);
        result(dir.path().join("rank_report.json"))
    };
    let small = run("20");
    assert_eq!(small["k_nn_clamped"], false);
    assert_eq!(small["ranker"], "nn");
    let big = run("100000");
    assert_eq!(big["k_nn_clamped"], true);
}

#[test]
fn generate_is_seeded_and_feeds_gen_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = fit(d);
    let generate = |seed: &str, out: &Path| {
        ok(&[
            "generate",
            "--corpus",
            &fixture("val.json"),
            "--train-corpus",
            &fixture("train.json"),
            "--embeddings",
            &fixture("words.vec"),
            "--model",
            &s(&model),
            "--k-gen",
            "4",
            "--seed",
            seed,
            "--out",
            &s(out),
        ]);
        std::fs::read(out.join("generations.jsonl")).unwrap()
    };
    let a = generate("11", &d.join("a"));
    let b = generate("11", &d.join("b"));
    let c = generate("12", &d.join("c"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 60);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["generations"].as_array().unwrap().len(), 4);
    }
    ok(&[
        "gen-eval",
        "--corpus",
        &fixture("val.json"),
        "--dense",
        &fixture("val_dense.json"),
        "--generations",
        &s(&d.join("a/generations.jsonl")),
        "--metrics",
        "cider1,bleu1",
        "--out",
        &s(d),
    ]);
    let r = result(d.join("consensus.json"));
    assert_eq!(r["report"]["rounds"], 6);
}

#[test]
fn audit_counts_match_fixture() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "audit",
        "--corpus",
        &fixture("val.json"),
        "--dense",
        &fixture("val_dense.json"),
        "--out",
        &s(dir.path()),
    ]);
    let corpus: Value = serde_json::from_str(&std::fs::read_to_string(fixture("val.json")).unwrap()).unwrap();
    let dense: Value = serde_json::from_str(&std::fs::read_to_string(fixture("val_dense.json")).unwrap()).unwrap();
    let (mut no_one, mut gt_zero) = (0, 0);
    for ann in dense.as_array().unwrap() {
        let rel: Vec<f64> = serde_json::from_value(ann["gt_relevance"].clone()).unwrap();
        let dialog = corpus["data"]["dialogs"]
            .as_array()
            .unwrap()
            .iter()
            .find(|d| d["image_id"] == ann["image_id"])
            .unwrap();
        let round = &dialog["dialog"][ann["round_id"].as_u64().unwrap() as usize - 1];
        no_one += usize::from(!rel.contains(&1.0));
        gt_zero += usize::from(rel[round["gt_index"].as_u64().unwrap() as usize] == 0.0);
    }
    let r = result(dir.path().join("audit.json"));
    assert_eq!(r["annotated_rounds"], 6);
    assert_eq!(r["no_relevance_one"], no_one);
    assert_eq!(r["gt_irrelevant"], gt_zero);
}

#[test]
fn cluster_audit_covers_every_round() {
    let dir = tempfile::tempdir().unwrap();
    let model = fit(dir.path());
    ok(&[
        "cluster-audit",
        "--corpus",
        &fixture("val.json"),
        "--embeddings",
        &fixture("words.vec"),
        "--model",
        &s(&model),
        "--out",
        &s(dir.path()),
    ]);
    let r = result(dir.path().join("cluster_audit.json"));
    assert_eq!(r["rounds"], 60);
    let c = r["mean_correlation"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&c));
}

#[test]
fn config_file_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "corpus = {:?}\ndense = {:?}\nout = \"from_file\"\n[consensus]\nmetrics = [\"meteor\"]\n",
            fixture("val.json"),
            fixture("val_dense.json")
        ),
    )
    .unwrap();
    ok(&["gen-eval", "--config", &s(&cfg), "--baseline", "gt"]);
    ok(&[
        "gen-eval",
        "--baseline",
        "gt",
        "--corpus",
        &fixture("val.json"),
        "--dense",
        &fixture("val_dense.json"),
        "--metrics",
        "meteor",
        "--out",
        &s(&d.join("from_flags")),
    ]);
    let a = std::fs::read(d.join("from_file/consensus.json")).unwrap();
    let b = std::fs::read(d.join("from_flags/consensus.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn exit_codes_and_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = vdeval(&["audit", "--out", &s(d), "--error-json"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["class"], "usage");

    assert_eq!(vdeval(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(vdeval(&["--help"]).status.code(), Some(0));

    let bad = d.join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    let out = vdeval(&["audit", "--corpus", &s(&bad), "--dense", &s(&bad), "--out", &s(d), "--error-json"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["class"], "data");

    // a single repeated question has zero variance; without ridge the fit is singular
    let degenerate = d.join("one_question.json");
    std::fs::write(
        &degenerate,
        r#"{"version":"1.0","split":"train","data":{"questions":["what color is it"],
        "answers":["red","blue","two dogs"],"dialogs":[{"image_id":1,"caption":"c","dialog":[
        {"question":0,"answer":0},{"question":0,"answer":1},{"question":0,"answer":2}]}]}}"#,
    )
    .unwrap();
    let out = vdeval(&[
        "fit",
        "--train-corpus",
        &s(&degenerate),
        "--embeddings",
        &fixture("words.vec"),
        "--ridge",
        "0",
        "--model",
        &s(&d.join("m.json")),
        "--out",
        &s(d),
        "--error-json",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["class"], "numeric");
    assert!(!d.join("m.json").exists());
}

#[test]
fn dense_pairing_counts_distinct_human_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&[
        "fit",
        "--pairing",
        "dense",
        "--corpus",
        &fixture("val.json"),
        "--dense",
        &fixture("val_dense.json"),
        "--embeddings",
        &fixture("words.vec"),
        "--model",
        &s(&d.join("m.json")),
        "--out",
        &s(d),
    ]);
    let corpus: Value = serde_json::from_str(&std::fs::read_to_string(fixture("val.json")).unwrap()).unwrap();
    let dense: Value = serde_json::from_str(&std::fs::read_to_string(fixture("val_dense.json")).unwrap()).unwrap();
    let mut pairs = std::collections::BTreeSet::new();
    for ann in dense.as_array().unwrap() {
        let dialog = corpus["data"]["dialogs"]
            .as_array()
            .unwrap()
            .iter()
            .find(|d| d["image_id"] == ann["image_id"])
            .unwrap();
        let round = &dialog["dialog"][ann["round_id"].as_u64().unwrap() as usize - 1];
        let gt = round["gt_index"].as_u64().unwrap() as usize;
        for (i, rho) in ann["gt_relevance"].as_array().unwrap().iter().enumerate() {
            if rho.as_f64().unwrap() > 0.0 || i == gt {
                pairs.insert((round["question"].as_u64().unwrap(), round["answer_options"][i].as_u64().unwrap()));
            }
        }
    }
    let r = result(d.join("fit.json"));
    assert_eq!(r["pairing"], "dense");
    assert_eq!(r["num_pairs"].as_u64().unwrap() as usize, pairs.len());
}
