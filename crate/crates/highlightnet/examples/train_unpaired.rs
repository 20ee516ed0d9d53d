//! Short unpaired training run on synthetic dark images, then an A/B of the
//! exposure loss before and after.
//!
//!     cargo run --example train_unpaired

use highlightnet::enhancer::{enhance, to_gray, EnhanceConfig};
use highlightnet::imgio::Rgb32Image;
use highlightnet::losses::l_exp;
use highlightnet::trainer::{train_on_images, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A dim textured scene with a few near-black "night sky" blobs.
fn dark_image(seed: u64, side: usize) -> Rgb32Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f32, f32, f32)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.0..side as f32),
                rng.gen_range(0.0..side as f32),
                rng.gen_range(side as f32 * 0.08..side as f32 * 0.18),
            )
        })
        .collect();
    let mut data = Vec::with_capacity(side * side * 3);
    for i in 0..side * side {
        let (y, x) = ((i / side) as f32, (i % side) as f32);
        let in_blob = blobs
            .iter()
            .any(|&(by, bx, rad)| (y - by).powi(2) + (x - bx).powi(2) < rad * rad);
        let v: f32 = if in_blob {
            rng.gen_range(0.0..0.005)
        } else {
            let u: f32 = rng.gen_range(0.0..1.0);
            0.045 + 0.21 * u * u
        };
        data.extend_from_slice(&[
            (v * rng.gen_range(0.85..1.15)).clamp(0.0, 1.0),
            v,
            (v * rng.gen_range(0.85..1.15)).clamp(0.0, 1.0),
        ]);
    }
    Rgb32Image::new(side, side, data).unwrap()
}

fn main() -> highlightnet::Result<()> {
    let images: Vec<Rgb32Image> = (1..=4).map(|s| dark_image(s, 64)).collect();
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 4,
        learning_rate: 0.001,
        seed: 11,
        out_path: Some(std::env::temp_dir().join("highlightnet_example.hln")),
        ..TrainConfig::default()
    };
    let out = train_on_images(&cfg, &images)?;

    for l in out.log.iter().step_by(10) {
        println!(
            "epoch {:>3}: total {:8.4}  l_dan {:.4}  l_spa {:.4}  l_exp {:.4}  l_tv {:.5}",
            l.epoch, l.report.total, l.report.l_dan, l.report.l_spa, l.report.l_exp, l.report.l_tv
        );
    }

    let holdout = dark_image(99, 64);
    let (gray_in, _) = to_gray(&holdout)?;
    let enhanced = enhance(&holdout, &out.weights, &EnhanceConfig::default())?;
    println!(
        "held-out image: mean gray {:.3} -> {:.3}, l_exp {:.3} -> {:.3}",
        gray_in.mean(),
        enhanced.gray.mean(),
        l_exp(&gray_in.to_tensor())?,
        l_exp(&enhanced.gray.to_tensor())?,
    );
    println!("checkpoint written to {}", cfg.out_path.unwrap().display());
    Ok(())
}
