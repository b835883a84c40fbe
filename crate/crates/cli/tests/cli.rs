use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lnrm_core::eval::{bd_rate, read_curves_csv, Column};
use lnrm_core::imageio::{load_frame, save_frame};
use lnrm_core::synth::{self, UgcParams};

fn lnrm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lnrm"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = lnrm(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn sample(dir: &Path, name: &str, planes: usize) -> std::path::PathBuf {
    let path = dir.join(name);
    save_frame(
        &path,
        &synth::ugc(21, 64, 48, planes, UgcParams::default()).unwrap(),
    )
    .unwrap();
    path
}

#[test]
fn encode_sse_writes_stream_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path(), "in.pgm", 1);
    let stream = dir.path().join("out.lnrmc");
    let out = ok(&[
        "encode",
        p(&input),
        p(&stream),
        "--qp",
        "28",
        "--mode",
        "sse",
    ]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let bytes = fs::read(&stream).unwrap();
    assert_eq!(
        report["total_bits"].as_u64().unwrap(),
        8 * bytes.len() as u64
    );
    assert_eq!(report["mode"], "sse");
    assert!(report["lambda"].as_f64().unwrap() > 0.0);
    assert!(!report["choice_histogram"].as_array().unwrap().is_empty());
    assert!(out.stderr.is_empty());
}

#[test]
fn lnrm_round_trip_matches_encoder_reconstruction() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path(), "in.ppm", 3);
    let stream = dir.path().join("out.lnrmc");
    let recon = dir.path().join("recon.ppm");
    let decoded = dir.path().join("dec.ppm");
    let out = ok(&[
        "encode",
        p(&input),
        p(&stream),
        "--mode",
        "lnrm",
        "--metric",
        "tv",
        "--alpha",
        "0.5",
        "--recon",
        p(&recon),
    ]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let tau = report["tau"].as_f64().unwrap();
    let tau_tilde = report["tau_tilde"].as_f64().unwrap();
    assert_eq!(tau, 0.5 * tau_tilde);
    ok(&["decode", p(&stream), p(&decoded)]);
    assert_eq!(load_frame(&decoded).unwrap(), load_frame(&recon).unwrap());
}

#[test]
fn external_gradient_matches_builtin_metric() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path(), "in.ppm", 3);
    let grad = dir.path().join("g.lnrmg");
    ok(&["grad", p(&input), p(&grad)]);
    let a = dir.path().join("a.lnrmc");
    let b = dir.path().join("b.lnrmc");
    let ra = ok(&["encode", p(&input), p(&a), "--mode", "lnrm", "--alpha", "2"]);
    let external = format!("external:{}", p(&grad));
    let rb = ok(&[
        "encode",
        p(&input),
        p(&b),
        "--mode",
        "lnrm",
        "--alpha",
        "2",
        "--metric",
        &external,
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let ja: serde_json::Value = serde_json::from_slice(&ra.stdout).unwrap();
    let jb: serde_json::Value = serde_json::from_slice(&rb.stdout).unwrap();
    assert_eq!(ja["tau"], jb["tau"]);
    assert_eq!(ja["lnrm"], jb["lnrm"]);
}

#[test]
fn threads_do_not_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path(), "in.ppm", 3);
    let mut outputs = Vec::new();
    for t in ["1", "3"] {
        let stream = dir.path().join(format!("t{t}.lnrmc"));
        let out = ok(&[
            "encode",
            p(&input),
            p(&stream),
            "--mode",
            "lnrm",
            "--threads",
            t,
        ]);
        outputs.push((out.stdout, fs::read(&stream).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn sweep_and_bdrate_agree_with_library() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path(), "img.pgm", 1);
    let anchor = dir.path().join("sse.csv");
    let test = dir.path().join("lnrm.csv");
    ok(&["sweep", p(&input), "--mode", "sse", "-o", p(&anchor)]);
    let stdout = ok(&["sweep", p(&input), "--mode", "lnrm", "--alpha", "0.5"]).stdout;
    fs::write(&test, &stdout).unwrap();
    let text = String::from_utf8(stdout.clone()).unwrap();
    assert!(text.starts_with("image,variant,qp,bpp,psnr_db,sse,nrm_score,nrm_gap,lnrm\n"));
    assert_eq!(text.lines().count(), 6);
    // deterministic
    assert_eq!(
        ok(&["sweep", p(&input), "--mode", "lnrm", "--alpha", "0.5"]).stdout,
        stdout
    );

    let out = ok(&["bdrate", p(&anchor), p(&test), "--column", "psnr_db"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let got: f64 = row[3].parse().unwrap();
    let a = read_curves_csv(fs::File::open(&anchor).unwrap())
        .unwrap()
        .remove(0);
    let t = read_curves_csv(fs::File::open(&test).unwrap())
        .unwrap()
        .remove(0);
    assert_eq!(got, bd_rate(&a, &t, Column::Psnr).unwrap().bd_rate);
}

#[test]
fn corpus_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(&[
        "corpus",
        p(&corpus),
        "--count",
        "2",
        "--width",
        "48",
        "--height",
        "32",
        "--planes",
        "1",
    ]);
    assert_eq!(fs::read_dir(&corpus).unwrap().count(), 2);
    let curves = dir.path().join("curves.csv");
    let out = ok(&[
        "report",
        p(&corpus),
        "--variants",
        "sse,lnrm:1",
        "--curves",
        p(&curves),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("image,anchor,variant,column,bd_rate_pct,points_used,restricted\n"));
    assert!(text
        .lines()
        .any(|l| l.starts_with("mean,sse,lnrm_a1,nrm_score,")));
    assert!(text
        .lines()
        .any(|l| l.starts_with("stderr,sse,lnrm_a1,psnr_db,")));
    assert_eq!(
        read_curves_csv(fs::File::open(&curves).unwrap())
            .unwrap()
            .len(),
        4
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path(), "in.pgm", 1);
    let out = dir.path().join("o.lnrmc");
    assert_eq!(lnrm(&[]).status.code(), Some(1));
    assert_eq!(lnrm(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        lnrm(&["encode", p(&input), p(&out), "--mode", "fast"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        lnrm(&["encode", p(&input), p(&out), "--qp", "60"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        lnrm(&["encode", p(&input), p(&out), "--alpha", "-1"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        lnrm(&["encode", p(&input), p(&out), "--metric", "brisque"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(lnrm(&["--help"]).status.code(), Some(0));

    let missing = dir.path().join("missing.pgm");
    assert_eq!(
        lnrm(&["encode", p(&missing), p(&out)]).status.code(),
        Some(2)
    );
    let junk = dir.path().join("junk.lnrmc");
    fs::write(&junk, b"LNRMC1\x00").unwrap();
    let r = lnrm(&["decode", p(&junk), p(&dir.path().join("x.pgm"))]);
    assert_eq!(r.status.code(), Some(2));
    assert!(r.stdout.is_empty());
    assert!(!r.stderr.is_empty());

    let small = dir.path().join("small.lnrmg");
    lnrm_core::imageio::write_gradient(&small, &lnrm_core::GradientField::zeros(16, 16, 1))
        .unwrap();
    let ext = format!("external:{}", p(&small));
    let r = lnrm(&[
        "encode",
        p(&input),
        p(&out),
        "--mode",
        "lnrm",
        "--metric",
        &ext,
    ]);
    assert_eq!(r.status.code(), Some(2));
}
