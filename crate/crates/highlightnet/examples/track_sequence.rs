//! Track a bright square through a synthetic sequence with the baseline NCC
//! tracker and score it under one-pass evaluation, on both the clean and a
//! darkened noisy copy of the sequence.
//!
//!     cargo run --example track_sequence

use highlightnet::eval::{ncc_track, one_pass_eval, BoundingBox, MetricReport};
use highlightnet::imgio::Rgb32Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sequence() -> (Vec<Rgb32Image>, Vec<BoundingBox>) {
    let (h, w, sq) = (96usize, 96usize, 16usize);
    let mut frames = Vec::new();
    let mut gt = Vec::new();
    for i in 0..20 {
        let x = 12 + 2 * i;
        let mut data = vec![0.05f32; h * w * 3];
        for r in 40..40 + sq {
            for c in x..x + sq {
                for ch in 0..3 {
                    data[(r * w + c) * 3 + ch] = 0.9;
                }
            }
        }
        frames.push(Rgb32Image::new(h, w, data).unwrap());
        gt.push(BoundingBox::new(x as f32 - 4.0, 36.0, 24.0, 24.0).unwrap());
    }
    (frames, gt)
}

fn score(name: &str, frames: &[Rgb32Image], gt: &[BoundingBox]) -> highlightnet::Result<()> {
    let boxes = ncc_track(frames, gt[0], None)?;
    let MetricReport::Tracking { precision_at_20, success_auc, cle } = one_pass_eval(&boxes, gt)?
    else {
        unreachable!()
    };
    let mean_cle = cle.iter().sum::<f32>() / cle.len() as f32;
    println!("{name:>8}: precision@20 {precision_at_20:.3}  success AUC {success_auc:.3}  mean CLE {mean_cle:.2}px");
    Ok(())
}

fn main() -> highlightnet::Result<()> {
    let (frames, gt) = sequence();
    score("clean", &frames, &gt)?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let degraded: Vec<Rgb32Image> = frames
        .iter()
        .map(|f| {
            Rgb32Image::new(
                f.height,
                f.width,
                f.data
                    .iter()
                    .map(|&v| (v * 0.1 + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0))
                    .collect(),
            )
            .unwrap()
        })
        .collect();
    score("dark", &degraded, &gt)?;
    Ok(())
}
