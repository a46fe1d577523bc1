use super::*;

fn run_args(args: &[&str]) -> i32 {
    main_with(std::iter::once("pixmae").chain(args.iter().copied()))
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(run_args(&["--help"]), 0);
    assert_eq!(run_args(&["pretrain", "--help"]), 0);
    assert_eq!(run_args(&["pretrain", "--out", "x.ckpt"]), 1);
    assert_eq!(run_args(&["synth", "--out", "x.pts", "--bogus"]), 1);
    assert_eq!(run_args(&["pretrain", "--data", "d.pts", "--out", "x", "--strategies", "random,zigzag"]), 1);
    assert_eq!(run_args(&[]), 1);
}

#[test]
fn missing_dataset_is_a_data_error_with_a_hint() {
    let dir = tempfile::tempdir().unwrap();
    let e = load_dataset(&dir.path().join("none.pts")).unwrap_err();
    assert!(e.to_string().contains("pixmae synth --out"), "{e}");
    assert_eq!(e.exit_code(), 2);
    assert_eq!(run_args(&["pretrain", "--data", &p(dir.path(), "none.pts"), "--out", &p(dir.path(), "m.ckpt")]), 2);
}

#[test]
fn precedence_flags_over_file_over_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"epochs": 7, "lambda": 0.5, "model": {"depth": 3}}"#).unwrap();
    let o = TrainOverrides { config: Some(cfg), lambda: Some(1.5), ..Default::default() };
    let c = o.resolve().unwrap();
    assert_eq!((c.epochs, c.lambda, c.model.depth, c.batch_size), (7, 1.5, 3, 256));
    assert_eq!(c.model.d_e, 128);
    let bad = TrainOverrides { mask_ratio: Some(1.2), ..Default::default() };
    assert_eq!(Error::from(bad.resolve().unwrap_err()).exit_code(), 1);
}

#[test]
fn end_to_end_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run_args(&["synth", "--samples", "24", "--seed", "3", "--out", &p(d, "train.pts")]), 0);
    assert_eq!(run_args(&["synth", "--samples", "16", "--seed", "4", "--out", &p(d, "val.csv")]), 0);
    assert!(d.join("train.pts.manifest.json").exists());
    let train = ["pretrain", "--data", &p(d, "train.pts"), "--val", &p(d, "val.csv"), "--epochs", "2", "--batch-size", "8", "--depth", "1", "--width", "32"];
    let mut a: Vec<&str> = train.to_vec();
    let out_a = p(d, "a.ckpt");
    a.extend(["--out", &out_a]);
    assert_eq!(run_args(&a), 0);
    let mut b: Vec<&str> = train.to_vec();
    let out_b = p(d, "b.ckpt");
    b.extend(["--out", &out_b]);
    assert_eq!(run_args(&b), 0);
    assert_eq!(std::fs::read(&out_a).unwrap(), std::fs::read(&out_b).unwrap());
    let ma: RunManifest = serde_json::from_str(&std::fs::read_to_string(d.join("a.ckpt.manifest.json")).unwrap()).unwrap();
    let mb: RunManifest = serde_json::from_str(&std::fs::read_to_string(d.join("b.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(ma.content_hash, mb.content_hash);
    assert_eq!(ma.config["model"]["depth"], 1);
    assert!(d.join("a.ckpt.history.csv").exists());
    assert!(d.join("a.ckpt.epochs").join("best.ckpt").exists());

    assert_eq!(run_args(&["embed", "--ckpt", &out_a, "--data", &p(d, "val.csv"), "--out", &p(d, "emb.csv")]), 0);
    let emb = std::fs::read_to_string(d.join("emb.csv")).unwrap();
    assert_eq!(emb.lines().count(), 17);
    assert!(emb.starts_with("sample,label,e0,e1,"));

    for kind in ["logistic", "knn", "linear"] {
        let out = p(d, &format!("probe-{kind}.csv"));
        assert_eq!(run_args(&["probe", "--ckpt", &out_a, "--train", &p(d, "train.pts"), "--eval", &p(d, "val.csv"), "--kind", kind, "--out", &out]), 0);
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("kind,k,n_train,n_eval,accuracy,macro_f1,rmse"), "{text}");
    }
    let ft = p(d, "ft.csv");
    assert_eq!(run_args(&["finetune", "--ckpt", &out_a, "--data", &p(d, "train.pts"), "--epochs", "2", "--batch-size", "8", "--seeds", "0,42", "--out", &ft]), 0);
    let text = std::fs::read_to_string(&ft).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.contains("\nmean,") && text.contains("\nstderr,"));
}

#[test]
fn divergence_exits_with_numeric_status() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run_args(&["synth", "--samples", "16", "--out", &p(d, "t.pts")]), 0);
    let code = run_args(&["pretrain", "--data", &p(d, "t.pts"), "--out", &p(d, "m.ckpt"), "--epochs", "2", "--batch-size", "8", "--depth", "1", "--width", "32", "--lr", "1e30", "--warmup-steps", "0"]);
    assert_eq!(code, 3);
}

#[test]
fn flop_report_rows() {
    let rows = flop_rows("2x128", &ModelConfig::default(), &FlopInput::ALL, FlopMode::EncoderDecoder).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].tokens, 110);
    assert_eq!(rows[0].total, 100_760_960);
    assert_eq!(rows[0].params, 819_354);
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "f.csv");
    assert_eq!(run_args(&["flops", "--grid", "--input", "full", "--out", &out]), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 4);
}
