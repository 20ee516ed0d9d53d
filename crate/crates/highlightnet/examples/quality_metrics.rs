//! PSNR/SSIM on a clean image versus progressively degraded copies.
//!
//!     cargo run --example quality_metrics

use highlightnet::eval::{psnr, ssim};
use highlightnet::imgio::Rgb32Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> highlightnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut data = Vec::with_capacity(64 * 64 * 3);
    for i in 0..64 * 64 {
        let v = 0.2 + 0.6 * ((i % 64) as f32 / 64.0) * ((i / 64) as f32 / 64.0);
        data.extend_from_slice(&[v, (v * 0.8).min(1.0), (v * 1.2).min(1.0)]);
    }
    let clean = Rgb32Image::new(64, 64, data).unwrap();

    println!("{:>10} {:>10} {:>8}", "noise", "psnr(dB)", "ssim");
    for sigma in [0.0f32, 0.01, 0.03, 0.1] {
        let noisy = Rgb32Image::new(
            64,
            64,
            clean
                .data
                .iter()
                .map(|&v| (v + rng.gen_range(-sigma..=sigma)).clamp(0.0, 1.0))
                .collect(),
        )
        .unwrap();
        println!(
            "{sigma:>10.2} {:>10.2} {:>8.4}",
            psnr(&clean, &noisy)?,
            ssim(&clean, &noisy)?
        );
    }
    Ok(())
}
