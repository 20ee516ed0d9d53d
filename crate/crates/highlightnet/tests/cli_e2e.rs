//! End-to-end command-line runs over real files, including the installed
//! binary (for the HLN_THREADS determinism contract).

mod common;

use std::path::Path;
use std::process::Command;

use common::*;
use highlightnet::cli::run;
use highlightnet::enhancer::ModelWeights;
use highlightnet::imgio::{write_rgb, Rgb32Image};
use highlightnet::tensor::{AdamState, Tensor};
use highlightnet::trainer::{save_checkpoint, Checkpoint};

fn write_weights(path: &Path, seed: u64) {
    let weights = ModelWeights::seeded_init(seed);
    let params: Vec<&Tensor> = weights.params().into_iter().map(|(_, t)| t).collect();
    let adam = AdamState::for_params(&params);
    save_checkpoint(
        &Checkpoint {
            weights,
            adam,
            epoch: 0,
            config: vec![],
        },
        path,
    )
    .unwrap();
}

#[test]
fn eval_pairs_directories_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let low_dir = dir.path().join("low");
    let ref_dir = dir.path().join("ref");
    std::fs::create_dir_all(&low_dir).unwrap();
    std::fs::create_dir_all(&ref_dir).unwrap();
    for (i, seed) in [(0u32, 10u64), (1, 11)] {
        let reference = synthetic_dark_image(seed, 48);
        // A darker copy plays the low-light input.
        let low = Rgb32Image::new(
            48,
            48,
            reference.data.iter().map(|v| v * 0.4).collect(),
        )
        .unwrap();
        write_rgb(&low_dir.join(format!("{i}.png")), &low).unwrap();
        write_rgb(&ref_dir.join(format!("{i}.png")), &reference).unwrap();
    }
    let weights = dir.path().join("w.hln");
    write_weights(&weights, 2);
    let report = dir.path().join("report.txt");

    let code = run(&[
        "eval",
        "--low-dir",
        low_dir.to_str().unwrap(),
        "--ref-dir",
        ref_dir.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("mean_psnr_enh="), "report: {text}");
    assert!(text.lines().filter(|l| l.starts_with("pair=")).count() == 2);
}

#[test]
fn eval_rejects_mismatched_directories() {
    let dir = tempfile::tempdir().unwrap();
    let low_dir = dir.path().join("low");
    let ref_dir = dir.path().join("ref");
    std::fs::create_dir_all(&low_dir).unwrap();
    std::fs::create_dir_all(&ref_dir).unwrap();
    write_rgb(&low_dir.join("a.png"), &Rgb32Image::filled(32, 32, [0.1; 3])).unwrap();
    let weights = dir.path().join("w.hln");
    write_weights(&weights, 2);
    let code = run(&[
        "eval",
        "--low-dir",
        low_dir.to_str().unwrap(),
        "--ref-dir",
        ref_dir.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn track_command_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let frames_dir = dir.path().join("frames");
    std::fs::create_dir_all(&frames_dir).unwrap();
    let (frames, gt) = square_sequence(6);
    for (i, f) in frames.iter().enumerate() {
        write_rgb(&frames_dir.join(format!("{i:03}.png")), f).unwrap();
    }
    let gt_path = dir.path().join("gt.txt");
    let lines: Vec<String> = gt.iter().map(|b| format!("{},{},{},{}", b.x, b.y, b.w, b.h)).collect();
    std::fs::write(&gt_path, lines.join("\n")).unwrap();
    let report = dir.path().join("track.txt");

    let code = run(&[
        "track",
        "--frames",
        frames_dir.to_str().unwrap(),
        "--gt",
        gt_path.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("precision_20=1.0000"), "report: {text}");
    assert!(text.contains("mean_cle=0.0000"), "report: {text}");
}

#[test]
fn train_and_resume_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    std::fs::create_dir_all(&data_dir).unwrap();
    for seed in 0..2u64 {
        write_rgb(
            &data_dir.join(format!("{seed}.png")),
            &synthetic_dark_image(seed + 40, 48),
        )
        .unwrap();
    }
    let ckpt = dir.path().join("w.hln");
    let base = [
        "train",
        "--data-dir",
        data_dir.to_str().unwrap(),
        "--resize",
        "32",
        "--batch",
        "2",
        "--seed",
        "5",
        "--out",
        ckpt.to_str().unwrap(),
    ];

    let mut args: Vec<&str> = base.to_vec();
    args.extend_from_slice(&["--epochs", "2"]);
    assert_eq!(run(&args), 0);
    assert!(ckpt.exists());

    let mut resume_args: Vec<&str> = base.to_vec();
    let ckpt_str = ckpt.to_str().unwrap().to_string();
    resume_args.extend_from_slice(&["--epochs", "3", "--resume", &ckpt_str]);
    assert_eq!(run(&resume_args), 0);
}

#[test]
fn binary_enhance_is_bit_identical_across_thread_counts() {
    let bin = env!("CARGO_BIN_EXE_highlightnet");
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    write_rgb(&input, &synthetic_dark_image(77, 64)).unwrap();
    let weights = dir.path().join("w.hln");
    write_weights(&weights, 9);

    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("out{threads}.png"));
        let status = Command::new(bin)
            .args([
                "enhance",
                "--input",
                input.to_str().unwrap(),
                "--output",
                out.to_str().unwrap(),
                "--weights",
                weights.to_str().unwrap(),
            ])
            .env("HLN_THREADS", threads)
            .status()
            .expect("spawn binary");
        assert!(status.success());
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "thread count changed the output bytes");
}
