use std::path::Path;
use std::process::{Command, Output};

use omnicap::ErpImage;
use serde_json::Value;

fn omnicap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omnicap")).args(args).env("RUST_LOG", "info").output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().last().expect("some output")).expect("JSON on stdout")
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("error line");
    serde_json::from_str(line).expect("one-line JSON error")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_is_stratified_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let res = omnicap(&["--seed", "7", "synth", "--out", p(out), "--n", "200", "--width", "32", "--height", "16"]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        let v = stdout_json(&res);
        assert_eq!(v["images"], 200);
        assert_eq!(v["per_situation"], serde_json::json!([50, 50, 50, 50]));
    }
    let (ma, mb) = (std::fs::read(a.join("manifest.csv")).unwrap(), std::fs::read(b.join("manifest.csv")).unwrap());
    assert_eq!(ma, mb);
    assert_eq!(std::fs::read(a.join("synth_0013.erpf")).unwrap(), std::fs::read(b.join("synth_0013.erpf")).unwrap());
}

#[test]
fn every_command_logs_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.erpf");
    ErpImage::constant(32, 16, 3, 0.4).unwrap().save(&img).unwrap();
    let res = omnicap(&["--plan.m", "4", "content", "--input", p(&img)]);
    assert!(res.status.success());
    let log = String::from_utf8_lossy(&res.stderr);
    let line = log.lines().find(|l| l.contains("resolved config")).expect("config echo");
    assert!(line.contains("\"m\":4") || line.contains("\"m\": 4"), "{line}");
    let v = stdout_json(&res);
    assert_eq!(v["si"], 0.0);
}

#[test]
fn metrics_report_inf_for_identical_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.erpf");
    let b = dir.path().join("b.erpf");
    let img = ErpImage::from_fn(64, 32, 3, |x, y, c| ((x + 2 * y + c) % 7) as f64 / 10.0).unwrap();
    img.save(&a).unwrap();
    let mut shifted = img.clone();
    for v in shifted.pixels_mut() {
        *v += 0.1;
    }
    shifted.save(&b).unwrap();

    let same = stdout_json(&omnicap(&[
        "metrics",
        "--reference",
        p(&a),
        "--distorted",
        p(&a),
        "--metric",
        "psnr",
        "--metric",
        "ws-psnr",
    ]));
    assert_eq!(same[0]["value"], "inf");
    assert_eq!(same[1]["metric"], "ws-psnr");
    let diff = stdout_json(&omnicap(&["metrics", "--reference", p(&a), "--distorted", p(&b), "--metric", "psnr"]));
    // the raster format stores f32, so the difference is 0.1 to single precision
    assert!((diff[0]["value"].as_f64().unwrap() - 20.0).abs() < 1e-5);
}

#[test]
fn viewports_are_written_per_plan() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.erpf");
    ErpImage::constant(64, 32, 3, 0.5).unwrap().save(&img).unwrap();
    let out = dir.path().join("vp");
    let res = omnicap(&[
        "--plan.m",
        "4",
        "--plan.offset-deg",
        "90",
        "--plan.size",
        "16",
        "viewports",
        "--input",
        p(&img),
        "--out",
        p(&out),
        "--format",
        "erpf",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let v = stdout_json(&res);
    assert_eq!(v["viewports"].as_array().unwrap().len(), 4);
    let vp = ErpImage::load(out.join("viewport_03.erpf")).unwrap();
    assert_eq!((vp.width(), vp.height()), (16, 16));
    assert!(vp.pixels().iter().all(|&x| x == 0.5));
}

#[test]
fn mos_writes_csv_and_screening_report() {
    let dir = tempfile::tempdir().unwrap();
    let ratings = dir.path().join("ratings.csv");
    let mut csv = String::from("subject_id,image_id,score\n");
    for s in ["s1", "s2", "s3", "s4", "s5"] {
        csv += &format!("{s},img_a,3\n{s},img_b,2\n");
    }
    std::fs::write(&ratings, csv).unwrap();
    let out = dir.path().join("mos.csv");
    let res = omnicap(&["mos", "--ratings", p(&ratings), "--out", p(&out)]);
    assert!(res.status.success());
    let v = stdout_json(&res);
    assert_eq!(v["images"], 2);
    assert!(v["screening"]["rejected"].as_array().unwrap().is_empty());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("image_id,mos,variance,n"));
    assert!(text.contains("img_a,3.0,0.0,5"));
}

#[test]
fn failures_are_one_line_json() {
    let res = omnicap(&["content", "--input", "/no/such/file.erpf"]);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(stderr_error(&res)["error"], "io");

    let res = omnicap(&["--model.k", "9", "content", "--input", "/no/such/file.erpf"]);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(stderr_error(&res)["error"], "config");

    let res = omnicap(&["frobnicate"]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(stderr_error(&res)["error"], "usage");

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[plan]\nbogus = 1\n").unwrap();
    let res = omnicap(&["--config", p(&cfg), "content", "--input", "/no/such/file.erpf"]);
    assert_eq!(stderr_error(&res)["error"], "config");
}

#[test]
fn gradcheck_command_passes() {
    let res = omnicap(&["gradcheck", "--seeds", "1", "--entries", "2"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stdout));
    assert_eq!(stdout_json(&res)["passed"], true);
}

#[test]
fn train_eval_and_caption_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let common = ["--preset", "micro", "--seed", "3", "--train.epochs", "2", "--train.batch-size", "4"];
    let synth = [&common[..], &["synth", "--out", p(&data), "--n", "24", "--width", "64", "--height", "32"]].concat();
    assert!(omnicap(&synth).status.success());
    let manifest = data.join("manifest.csv");
    let train = [&common[..], &["train", "--manifest", p(&manifest), "--out", p(&run)]].concat();
    let res = omnicap(&train);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(run.join("final.ckpt").exists() && run.join("config.json").exists());
    assert_eq!(std::fs::read_to_string(run.join("train_log.jsonl")).unwrap().lines().count(), 2);

    let ckpt = run.join("final.ckpt");
    let eval = |_: ()| stdout_json(&omnicap(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&manifest)]));
    let (e1, e2) = (eval(()), eval(()));
    assert_eq!(e1, e2);
    assert!(e1["srcc"].is_number() && e1["acc"].is_number() && e1["beta"].as_array().unwrap().len() == 5);

    let res = omnicap(&["caption", "--checkpoint", p(&ckpt), "--input", p(&data.join("synth_0000.erpf"))]);
    assert!(res.status.success());
    let text = String::from_utf8_lossy(&res.stdout);
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("A ") && first.contains("-quality omnidirectional image with "));
    assert_eq!(stdout_json(&res)["text"], first);
}
