use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn freqface(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_freqface")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// The single stderr line of a failed run, split into kind and message.
fn failure(out: &Output) -> (String, String) {
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    let rest = lines[0].strip_prefix("error[").expect(lines[0]);
    let (kind, msg) = rest.split_once("]: ").expect(lines[0]);
    (kind.to_string(), msg.to_string())
}

#[test]
fn prepare_train_infer_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = (tmp.path().join("data"), tmp.path().join("run"));
    let out = freqface(&["prepare-data", "--synthetic", "3", "--hr-size", "32", "--out", p(&data)]);
    assert!(out.status.success(), "{out:?}");
    assert_eq!(fs::read_to_string(data.join("index.tsv")).unwrap().lines().count(), 4);

    let out = freqface(&["train", "--data", p(&data), "--out", p(&run), "--preset", "tiny", "--steps", "3", "--set", "batch_size=2"]);
    assert!(out.status.success(), "{out:?}");
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.starts_with("step,"));

    let ckpt = run.join("checkpoint");
    let (a, b) = (tmp.path().join("a.ppm"), tmp.path().join("b.png"));
    let lr = data.join("lr").join("face_0000.ppm");
    assert!(freqface(&["infer", "--checkpoint", p(&ckpt), "--input", p(&lr), "--output", p(&a)]).status.success());
    assert!(freqface(&["infer", "--checkpoint", p(&ckpt), "--input", p(&lr), "--output", p(&b)]).status.success());
    let bytes = fs::read(&a).unwrap();
    assert!(bytes.starts_with(b"P6\n32 32\n255\n"));
    assert!(fs::read(&b).unwrap().starts_with(b"\x89PNG"));

    let csv = tmp.path().join("eval.csv");
    let out = freqface(&["evaluate", "--checkpoint", p(&ckpt), "--data", p(&data), "--output", p(&csv)]);
    assert!(out.status.success(), "{out:?}");
    let table = fs::read_to_string(&csv).unwrap();
    assert_eq!(table.lines().next(), Some("name,psnr,ssim,bicubic_psnr,bicubic_ssim"));
    assert_eq!(table.lines().count(), 5);

    let out = freqface(&["train", "--data", p(&data), "--out", p(&run), "--resume", p(&ckpt), "--steps", "4"]);
    assert!(out.status.success(), "{out:?}");
    assert_eq!(fs::read_to_string(run.join("train_log.csv")).unwrap().lines().count(), 5);
    let out = freqface(&["train", "--data", p(&data), "--out", p(&run), "--resume", p(&ckpt), "--lr", "1"]);
    assert_eq!(failure(&out).0, "usage");
}

#[test]
fn errors_are_one_machine_readable_line() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(freqface(&["prepare-data", "--synthetic", "1", "--out", p(&data)]).status.success());

    let out = freqface(&["train", "--data", p(&data), "--out", p(&tmp.path().join("r")), "--set", "colour=blue"]);
    let (kind, msg) = failure(&out);
    assert_eq!(kind, "parse");
    assert!(msg.contains("colour"));

    let out = freqface(&["train", "--data", p(&data), "--out", p(&tmp.path().join("r")), "--preset", "tiny"]);
    assert_eq!(failure(&out).0, "dimension");

    let out = freqface(&["infer", "--checkpoint", p(&tmp.path().join("none")), "--input", "x.png", "--output", "y.png"]);
    assert_eq!(failure(&out).0, "io");

    assert_eq!(failure(&freqface(&["transmogrify"])).0, "usage");
    assert_eq!(failure(&freqface(&["gradcheck", "--select", "everything"])).0, "usage");
    assert_eq!(failure(&freqface(&["gradcheck", "--select", "corrupted"])).0, "gradcheck");
}

#[test]
fn gradcheck_subset_passes() {
    let out = freqface(&["gradcheck", "--select", "dct"]);
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("dct_fusion_path"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn help_exits_zero() {
    assert!(freqface(&["--help"]).status.success());
    assert!(freqface(&["train", "--help"]).status.success());
}
