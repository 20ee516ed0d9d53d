//! Command-line surface: `enhance`, `train`, `eval`, `track`, `gradcheck`.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::enhancer::{enhance, EnhanceConfig, ModelWeights, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::eval::{ncc_track, one_pass_eval, parse_gt_file, psnr, ssim, MetricReport};
use crate::gradsuite::{run_op_suite, run_pipeline_check};
use crate::imgio::{read_image, resize_area, write_gray, write_rgb};
use crate::trainer::{load_checkpoint, resume, train, AblationFlags, TrainConfig};

#[derive(Parser)]
#[command(
    name = "highlightnet",
    version,
    about = "Low-light image enhancer for nighttime tracking pipelines"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance one image with trained weights.
    Enhance(EnhanceArgs),
    /// Train on an unpaired image directory.
    Train(TrainArgs),
    /// Paired PSNR/SSIM table: enhance a low-light directory against references.
    Eval(EvalArgs),
    /// Track a ground-truth box through a frame directory with the baseline
    /// NCC tracker, optionally enhancing frames first.
    Track(TrackArgs),
    /// Verify autodiff gradients against fp64 central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct EnhanceArgs {
    /// Input image (png/ppm/pgm).
    #[arg(long)]
    input: PathBuf,
    /// Output image path; format from the extension.
    #[arg(long)]
    output: PathBuf,
    /// Checkpoint file with the model weights.
    #[arg(long)]
    weights: PathBuf,
    /// Write the range mask as an 8-bit grayscale image.
    #[arg(long)]
    save_mask: Option<PathBuf>,
    /// Write the enhanced gray channel as an 8-bit grayscale image.
    #[arg(long)]
    save_gray: Option<PathBuf>,
    /// Write the anti-noise mask magnitude as an 8-bit grayscale image.
    #[arg(long)]
    save_tmap: Option<PathBuf>,
    /// Disable the per-pixel range mask (use its spatial mean).
    #[arg(long)]
    no_rm: bool,
    /// Disable the transformer parameter head (use fallback constants).
    #[arg(long)]
    no_tpa: bool,
    /// Disable soft truncation.
    #[arg(long)]
    no_st: bool,
    /// Reducing-range constant of the truncation cubic.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f32,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of training images.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    resize: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint output path (default checkpoint.hln).
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value config file; flags override it, it overrides defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Resume from an existing checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f32>,
    /// Train with the range mask ablated.
    #[arg(long)]
    no_rm: bool,
    /// Train with the parameter head ablated.
    #[arg(long)]
    no_tpa: bool,
    /// Train without soft truncation.
    #[arg(long)]
    no_st: bool,
    /// Drop the dark-area loss from the objective.
    #[arg(long)]
    no_ldan: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Low-light inputs.
    #[arg(long)]
    low_dir: PathBuf,
    /// Reference images, paired with the inputs by sorted filename order.
    #[arg(long)]
    ref_dir: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Also write the metric lines to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TrackArgs {
    /// Directory of frames (lexicographic order).
    #[arg(long)]
    frames: PathBuf,
    /// Ground-truth file, one x,y,w,h line per frame.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Enhance every frame before tracking (requires --weights).
    #[arg(long, requires = "weights")]
    enhance: bool,
    /// Also write the metric lines to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Side length of the gray test image for the pipeline check.
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses and dispatches; never panics on user input.
pub fn run<S: AsRef<str>>(args: &[S]) -> i32 {
    let mut argv: Vec<OsString> = Vec::with_capacity(args.len() + 1);
    argv.push("highlightnet".into());
    argv.extend(args.iter().map(|a| OsString::from(a.as_ref())));

    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };

    match execute(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Enhance(a) => cmd_enhance(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Track(a) => cmd_track(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn load_weights_file(path: &Path) -> Result<ModelWeights> {
    let ckpt = load_checkpoint(path)?;
    Ok(ckpt.weights)
}

fn cmd_enhance(a: EnhanceArgs) -> Result<()> {
    let img = read_image(&a.input)?;
    let weights = load_weights_file(&a.weights)?;
    let cfg = EnhanceConfig {
        range_mask: !a.no_rm,
        tpa: !a.no_tpa,
        soft_truncation: !a.no_st,
        tau: a.tau,
        ..EnhanceConfig::default()
    };
    let start = Instant::now();
    let out = enhance(&img, &weights, &cfg)?;
    let elapsed = start.elapsed();
    write_rgb(&a.output, &out.rgb)?;

    let (h, w) = (img.height, img.width);
    if let Some(p) = &a.save_mask {
        write_gray(p, h, w, out.diagnostics.mask.data())?;
    }
    if let Some(p) = &a.save_gray {
        write_gray(p, h, w, out.gray.data())?;
    }
    if let Some(p) = &a.save_tmap {
        let mag: Vec<f32> = out.diagnostics.tmap.data().iter().map(|v| v.abs()).collect();
        write_gray(p, h, w, &mag)?;
    }
    println!("alpha={}", out.diagnostics.params.alpha);
    println!("beta={}", out.diagnostics.params.beta);
    println!("mean_in={}", img.mean());
    println!("mean_out={}", out.rgb.mean());
    println!("elapsed_ms={}", elapsed.as_millis());
    println!("output={}", a.output.display());
    Ok(())
}

fn parse_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::NotFound(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::invalid_argument(format!(
                "{}:{}: expected key=value",
                path.display(),
                lineno + 1
            )));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_from<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::invalid_argument(format!("config key '{key}' has bad value '{v}'")))
}

fn build_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig {
        data_dir: a.data_dir.clone(),
        out_path: Some(a.out.clone().unwrap_or_else(|| PathBuf::from("checkpoint.hln"))),
        ..TrainConfig::default()
    };

    // Config file first, flags after, so flags win.
    if let Some(path) = &a.config {
        for (k, v) in parse_config_file(path)? {
            match k.as_str() {
                "epochs" => cfg.epochs = parse_from(&k, &v)?,
                "batch_size" => cfg.batch_size = parse_from(&k, &v)?,
                "learning_rate" => cfg.learning_rate = parse_from(&k, &v)?,
                "resize" => cfg.resize = parse_from(&k, &v)?,
                "seed" => cfg.seed = parse_from(&k, &v)?,
                "tau" => cfg.tau = parse_from(&k, &v)?,
                "lambda_dan" => cfg.loss_weights.lambda_dan = parse_from(&k, &v)?,
                "lambda_exp" => cfg.loss_weights.lambda_exp = parse_from(&k, &v)?,
                "lambda_tv" => cfg.loss_weights.lambda_tv = parse_from(&k, &v)?,
                "ablate_rm" => cfg.ablation.range_mask = !parse_from::<bool>(&k, &v)?,
                "ablate_tpa" => cfg.ablation.tpa = !parse_from::<bool>(&k, &v)?,
                "ablate_st" => cfg.ablation.soft_truncation = !parse_from::<bool>(&k, &v)?,
                "ablate_l_dan" => cfg.ablation.l_dan = !parse_from::<bool>(&k, &v)?,
                "data_dir" => {} // positional on the command line only
                other => {
                    return Err(Error::invalid_argument(format!("unknown config key '{other}'")))
                }
            }
        }
    }

    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.resize {
        cfg.resize = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.tau {
        cfg.tau = v;
    }
    cfg.ablation = AblationFlags {
        range_mask: cfg.ablation.range_mask && !a.no_rm,
        tpa: cfg.ablation.tpa && !a.no_tpa,
        soft_truncation: cfg.ablation.soft_truncation && !a.no_st,
        l_dan: cfg.ablation.l_dan && !a.no_ldan,
    };
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = build_train_config(&a)?;
    let out = if let Some(ckpt_path) = &a.resume {
        let ckpt = load_checkpoint(ckpt_path)?;
        resume(&cfg, ckpt)?
    } else {
        train(&cfg)?
    };
    for l in &out.log {
        println!(
            "epoch={} total={:.6} l_dan={:.6} l_spa={:.6} l_exp={:.6} l_tv={:.6}",
            l.epoch, l.report.total, l.report.l_dan, l.report.l_spa, l.report.l_exp, l.report.l_tv
        );
    }
    if let Some(p) = &cfg.out_path {
        println!("checkpoint={}", p.display());
    }
    Ok(())
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::NotFound(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.path())
        .collect();
    files.sort();
    Ok(files)
}

fn emit(lines: &[String], report: Option<&Path>) -> Result<()> {
    for l in lines {
        println!("{l}");
    }
    if let Some(path) = report {
        std::fs::write(path, lines.join("\n") + "\n")?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let lows = sorted_files(&a.low_dir)?;
    let refs = sorted_files(&a.ref_dir)?;
    if lows.len() != refs.len() {
        return Err(Error::invalid_argument(format!(
            "{} low images vs {} references; directories must pair by sorted order",
            lows.len(),
            refs.len()
        )));
    }
    if lows.is_empty() {
        return Err(Error::NotFound("no images to evaluate".to_string()));
    }
    let weights = load_weights_file(&a.weights)?;
    let cfg = EnhanceConfig::default();

    let mut lines = Vec::new();
    let mut sums = [0.0f64; 4]; // psnr_low, ssim_low, psnr_enh, ssim_enh
    for (low_path, ref_path) in lows.iter().zip(&refs) {
        let mut low = read_image(low_path)?;
        let reference = read_image(ref_path)?;
        if (low.height, low.width) != (reference.height, reference.width) {
            // Metrics run at the reference resolution.
            low = resize_area(&low, reference.height, reference.width)?;
        }
        let enhanced = enhance(&low, &weights, &cfg)?.rgb;
        let p_low = psnr(&low, &reference)?;
        let s_low = ssim(&low, &reference)?;
        let p_enh = psnr(&enhanced, &reference)?;
        let s_enh = ssim(&enhanced, &reference)?;
        sums[0] += p_low as f64;
        sums[1] += s_low as f64;
        sums[2] += p_enh as f64;
        sums[3] += s_enh as f64;
        let name = low_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        lines.push(format!(
            "pair={name} psnr_low={p_low:.4} ssim_low={s_low:.4} psnr_enh={p_enh:.4} ssim_enh={s_enh:.4}"
        ));
    }
    let n = lows.len() as f64;
    lines.push(format!("mean_psnr_low={:.4}", sums[0] / n));
    lines.push(format!("mean_ssim_low={:.4}", sums[1] / n));
    lines.push(format!("mean_psnr_enh={:.4}", sums[2] / n));
    lines.push(format!("mean_ssim_enh={:.4}", sums[3] / n));
    emit(&lines, a.report.as_deref())
}

fn cmd_track(a: TrackArgs) -> Result<()> {
    let frame_paths = sorted_files(&a.frames)?;
    let mut frames = Vec::new();
    for p in &frame_paths {
        match read_image(p) {
            Ok(img) => frames.push(img),
            Err(e) => eprintln!("warning: skipping {}: {e}", p.display()),
        }
    }
    if frames.len() < 2 {
        return Err(Error::invalid_argument("need at least 2 decodable frames".to_string()));
    }
    let gt = parse_gt_file(&a.gt)?;
    if gt.len() != frames.len() {
        return Err(Error::invalid_argument(format!(
            "{} ground-truth boxes vs {} frames",
            gt.len(),
            frames.len()
        )));
    }

    let weights = match (&a.weights, a.enhance) {
        (Some(path), true) => Some(load_weights_file(path)?),
        _ => None,
    };
    let cfg = EnhanceConfig::default();
    let enhancer = weights.as_ref().map(|w| (w, &cfg));

    let boxes = ncc_track(&frames, gt[0], enhancer)?;
    let MetricReport::Tracking { precision_at_20, success_auc, cle } = one_pass_eval(&boxes, &gt)?
    else {
        unreachable!("one_pass_eval returns a tracking report")
    };
    let mean_cle = cle.iter().map(|&v| v as f64).sum::<f64>() / cle.len() as f64;
    let lines = vec![
        format!("frames={}", frames.len()),
        format!("enhanced={}", a.enhance),
        format!("precision_20={precision_at_20:.4}"),
        format!("success_auc={success_auc:.4}"),
        format!("mean_cle={mean_cle:.4}"),
    ];
    emit(&lines, a.report.as_deref())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    if a.size < 8 {
        return Err(Error::invalid_argument("gradcheck size must be at least 8".to_string()));
    }
    let ops = run_op_suite(a.seed)?;
    let mut ops_max = 0.0f64;
    for (name, err) in &ops {
        println!("op.{name}={err:.3e}");
        ops_max = ops_max.max(*err);
    }
    let pipeline = run_pipeline_check(a.size, a.seed)?;
    println!("ops_max_rel_err={ops_max:.3e}");
    println!("pipeline_max_rel_err={pipeline:.3e}");
    let pass = ops_max < 1e-4 && pipeline < 1e-3;
    println!("gradcheck={}", if pass { "PASS" } else { "FAIL" });
    if !pass {
        return Err(Error::invalid_state(format!(
            "gradient check failed: ops {ops_max:.3e} (limit 1e-4), pipeline {pipeline:.3e} (limit 1e-3)"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::Rgb32Image;
    use crate::tensor::{AdamState, Tensor};
    use crate::trainer::{save_checkpoint, Checkpoint};

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
    fn missing_required_flag_names_it() {
        // Missing flags are a usage error naming the flag, not a crash.
        assert_eq!(run(&["enhance"]), 1);
    }

    #[test]
    fn unknown_flag_rejected() {
        assert_eq!(run(&["enhance", "--bogus", "x"]), 1);
    }

    #[test]
    fn enhance_track_without_weights_rejected() {
        assert_eq!(run(&["track", "--frames", "f", "--gt", "g", "--enhance"]), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(&["--help"]), 0);
    }

    #[test]
    fn enhance_writes_output_with_same_dims() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.png");
        let output = dir.path().join("out.png");
        let weights = dir.path().join("w.hln");
        write_weights(&weights, 3);

        let mut data = Vec::new();
        for i in 0..(40 * 48) {
            let v = (i % 97) as f32 / 400.0;
            data.extend_from_slice(&[v, v * 0.8, v * 0.6]);
        }
        let img = Rgb32Image::new(40, 48, data).unwrap();
        write_rgb(&input, &img).unwrap();

        let code = run(&[
            "enhance",
            "--input",
            input.to_str().unwrap(),
            "--output",
            output.to_str().unwrap(),
            "--weights",
            weights.to_str().unwrap(),
            "--save-mask",
            dir.path().join("mask.png").to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let out = read_image(&output).unwrap();
        assert_eq!((out.height, out.width), (40, 48));
        assert!(dir.path().join("mask.png").exists());
        // Input untouched.
        let back = read_image(&input).unwrap();
        assert_eq!((back.height, back.width), (40, 48));
    }

    #[test]
    fn enhance_runtime_error_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let weights = dir.path().join("w.hln");
        write_weights(&weights, 3);
        // Too small for the pipeline: runtime error, not usage error.
        let input = dir.path().join("small.png");
        write_rgb(&input, &Rgb32Image::filled(16, 16, [0.2, 0.2, 0.2])).unwrap();
        let code = run(&[
            "enhance",
            "--input",
            input.to_str().unwrap(),
            "--output",
            dir.path().join("o.png").to_str().unwrap(),
            "--weights",
            weights.to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn config_file_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("train.cfg");
        std::fs::write(&cfg_path, "epochs=7\nbatch_size=3\nseed=12\n").unwrap();
        let args = TrainArgs {
            data_dir: PathBuf::from("unused"),
            epochs: Some(9),
            batch: None,
            lr: None,
            resize: None,
            seed: None,
            out: None,
            config: Some(cfg_path),
            resume: None,
            tau: None,
            no_rm: false,
            no_tpa: false,
            no_st: false,
            no_ldan: false,
        };
        let cfg = build_train_config(&args).unwrap();
        assert_eq!(cfg.epochs, 9); // flag beats config file
        assert_eq!(cfg.batch_size, 3); // config file beats default
        assert_eq!(cfg.seed, 12);
        assert_eq!(cfg.learning_rate, 0.001); // default
    }
}
