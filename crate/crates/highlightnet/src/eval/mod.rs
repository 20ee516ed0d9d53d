//! Quantitative evaluation: full-reference image quality (PSNR, SSIM) and a
//! baseline template tracker under one-pass evaluation.

mod track;

pub use track::{ncc_track, one_pass_eval, parse_gt_file, BoundingBox};

use crate::error::{Error, Result};
use crate::imgio::Rgb32Image;

/// Either half of the evaluation harness's output.
#[derive(Clone, Debug)]
pub enum MetricReport {
    Quality {
        psnr: f32,
        ssim: f32,
    },
    Tracking {
        precision_at_20: f32,
        success_auc: f32,
        /// Center location error per frame, pixels.
        cle: Vec<f32>,
    },
}

/// Peak signal-to-noise ratio in dB over all pixels and channels, capped at
/// 100 dB for (near-)zero MSE.
pub fn psnr(a: &Rgb32Image, b: &Rgb32Image) -> Result<f32> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::invalid_argument(format!(
            "psnr: shape mismatch {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse <= 1e-10 {
        return Ok(100.0);
    }
    Ok(((10.0 * (1.0 / mse).log10()) as f32).min(100.0))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01; // (K1 * L)^2 with L = 1
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-mode Gaussian filter; output is (h-10) x (w-10).
fn gauss_valid(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0f64; h * ow];
    for r in 0..h {
        for c in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * src[r * w + c + i];
            }
            rows[r * ow + c] = acc;
        }
    }
    let mut out = vec![0.0f64; oh * ow];
    for c in 0..ow {
        for r in 0..oh {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * rows[(r + i) * ow + c];
            }
            out[r * ow + c] = acc;
        }
    }
    out
}

fn gray64(img: &Rgb32Image) -> Vec<f64> {
    img.data
        .chunks_exact(3)
        .map(|px| (px[0] as f64 + px[1] as f64 + px[2] as f64) / 3.0)
        .collect()
}

/// Mean local SSIM over the gray conversions, 11x11 Gaussian window with
/// sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1.
pub fn ssim(a: &Rgb32Image, b: &Rgb32Image) -> Result<f32> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::invalid_argument(format!(
            "ssim: shape mismatch {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let (h, w) = (a.height, a.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid_argument(format!(
            "ssim requires at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let x = gray64(a);
    let y = gray64(b);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();

    let mu_x = gauss_valid(&x, h, w);
    let mu_y = gauss_valid(&y, h, w);
    let e_xx = gauss_valid(&xx, h, w);
    let e_yy = gauss_valid(&yy, h, w);
    let e_xy = gauss_valid(&xy, h, w);

    let mut acc = 0.0f64;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = e_xx[i] - mx * mx;
        let var_y = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        let s = ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((mx * mx + my * my + SSIM_C1) * (var_x + var_y + SSIM_C2));
        acc += s;
    }
    Ok((acc / mu_x.len() as f64) as f32)
}
