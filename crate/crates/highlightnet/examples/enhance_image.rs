//! Enhance a synthetic low-light photo and save the result plus the
//! pipeline's diagnostic maps.
//!
//!     cargo run --example enhance_image

use highlightnet::enhancer::{enhance, EnhanceConfig, ModelWeights};
use highlightnet::imgio::{write_gray, write_rgb, Rgb32Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic_night_scene(side: usize) -> Rgb32Image {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut data = Vec::with_capacity(side * side * 3);
    for i in 0..side * side {
        let (r, c) = (i / side, i % side);
        // A dim gradient with a brighter "street lamp" blob.
        let base = 0.02 + 0.1 * (r as f32 / side as f32);
        let dx = r as f32 - side as f32 * 0.3;
        let dy = c as f32 - side as f32 * 0.7;
        let lamp = 0.5 * (-(dx * dx + dy * dy) / 80.0).exp();
        let v = (base + lamp + rng.gen_range(-0.01..0.01)).clamp(0.0, 1.0);
        data.extend_from_slice(&[v, (v * 0.9).min(1.0), (v * 1.1).min(1.0)]);
    }
    Rgb32Image::new(side, side, data).unwrap()
}

fn main() -> highlightnet::Result<()> {
    let out_dir = std::env::temp_dir().join("highlightnet_enhance_example");
    std::fs::create_dir_all(&out_dir)?;

    let img = synthetic_night_scene(128);
    let weights = ModelWeights::seeded_init(42);
    let out = enhance(&img, &weights, &EnhanceConfig::default())?;

    write_rgb(&out_dir.join("input.png"), &img)?;
    write_rgb(&out_dir.join("enhanced.png"), &out.rgb)?;
    write_gray(&out_dir.join("range_mask.png"), 128, 128, out.diagnostics.mask.data())?;
    write_gray(&out_dir.join("enhanced_gray.png"), 128, 128, out.gray.data())?;

    println!("alpha = {:.4}", out.diagnostics.params.alpha);
    println!("beta  = {:.4}", out.diagnostics.params.beta);
    println!("mean brightness: {:.4} -> {:.4}", img.mean(), out.rgb.mean());
    println!("wrote input/enhanced/mask images to {}", out_dir.display());
    Ok(())
}
