//! The enhancement pipeline: gray conversion with stored color ratios, the
//! range-mask CNN, the transformer parameter head, curve fusion and gamma
//! transform, soft truncation, pixel-wise addition, and color restoration.

mod forward;
mod weights;

pub use forward::{build_pipeline, load_weights, param_head_graph, range_mask_graph, PipelineVars, WeightVars};
pub use weights::{AttentionHead, ConvParams, EncoderLayer, ModelWeights, EMBED, ENCODER_LAYERS, FFN_HIDDEN, HEADS, HEAD_DIM, RM_CHANNELS, RM_PLAN, TOKENS};

use crate::error::{Error, Result};
use crate::imgio::{cell_bounds, Rgb32Image};
use crate::tensor::{Tape, Tensor};

/// Floor applied to gamma-transform bases so the exponent gradient's
/// `ln(base)` stays finite on black pixels.
pub const POW_FLOOR: f32 = 1e-4;
/// Floor for the gray value when forming color ratios.
pub const RATIO_FLOOR: f32 = 1e-4;
pub const ALPHA_MIN: f32 = 0.1;
pub const ALPHA_SPAN: f32 = 0.9;
pub const BETA_MAX: f32 = 0.16;
pub const DEFAULT_TAU: f32 = 100.0;
/// Constants substituted when the parameter head is ablated: the midpoints
/// of the alpha/beta ranges.
pub const ALPHA_FALLBACK: f32 = 0.55;
pub const BETA_FALLBACK: f32 = 0.08;
/// Smallest image the pipeline accepts (the parameter head's grid
/// resolution).
pub const MIN_SIDE: usize = 32;

/// Single-channel working image with values in [0, 1] and sides of at least
/// 8 pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height < 8 || width < 8 {
            return Err(Error::invalid_argument(format!(
                "gray image must be at least 8x8, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::invalid_argument(format!(
                "gray image dims {height}x{width} do not match data length {}",
                data.len()
            )));
        }
        if data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid_argument("gray image values must lie in [0, 1]".to_string()));
        }
        Ok(GrayImage { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn mean(&self) -> f32 {
        (self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64) as f32
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.height, self.width], self.data.clone()).expect("consistent")
    }
}

/// Stored per-pixel channel proportions rho_c = C_c / max(G, 1e-4), used to
/// restore color after gray-channel enhancement.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorRatios {
    height: usize,
    width: usize,
    /// Interleaved r,g,b ratios, length = height*width*3.
    data: Vec<f32>,
}

impl ColorRatios {
    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Output of the range-mask net; the sigmoid keeps net outputs inside
/// (0, 1), hand-built masks may use the closed interval.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeMask {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl RangeMask {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid_argument("range mask dims do not match data".to_string()));
        }
        if data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid_state("range mask values must lie in [0, 1]".to_string()));
        }
        Ok(RangeMask { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// True when every value is strictly inside (0, 1).
    pub fn is_strictly_open(&self) -> bool {
        self.data.iter().all(|&v| v > 0.0 && v < 1.0)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.height, self.width], self.data.clone()).expect("consistent")
    }
}

/// Per-pixel gamma exponents in [alpha, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct GammaMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
    alpha: f32,
}

impl GammaMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>, alpha: f32) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid_argument("gamma map dims do not match data".to_string()));
        }
        if data.iter().any(|&v| v < alpha || v > 1.0) {
            return Err(Error::invalid_state(format!(
                "gamma map values must lie in [{alpha}, 1]"
            )));
        }
        Ok(GammaMap { height, width, data, alpha })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }
}

/// Non-positive anti-noise correction with codomain [-tau*beta^3, 0].
#[derive(Clone, Debug, PartialEq)]
pub struct AntiNoiseMask {
    height: usize,
    width: usize,
    data: Vec<f32>,
    floor: f32,
}

impl AntiNoiseMask {
    pub fn new(height: usize, width: usize, data: Vec<f32>, beta: f32, tau: f32) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid_argument("anti-noise mask dims do not match data".to_string()));
        }
        // Mirrors the op's multiplication order so the bound is exact in f32.
        let floor = -(((beta * beta) * beta) * tau);
        if data.iter().any(|&v| v < floor || v > 0.0) {
            return Err(Error::invalid_state(format!(
                "anti-noise mask values must lie in [{floor}, 0]"
            )));
        }
        Ok(AntiNoiseMask { height, width, data, floor })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// The codomain lower bound -tau*beta^3.
    pub fn floor(&self) -> f32 {
        self.floor
    }
}

/// The two adaptive curve parameters plus the truncation range constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnhanceParams {
    /// Global curve constraint; gamma lies in [alpha, 1].
    pub alpha: f32,
    /// Truncation threshold; pixels darker than beta are pushed back down.
    pub beta: f32,
    /// Reducing-range constant of the truncation cubic.
    pub tau: f32,
}

/// Runtime module toggles and constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnhanceConfig {
    /// Use the per-pixel range mask; when off the mask is replaced by its
    /// spatial mean.
    pub range_mask: bool,
    /// Use the transformer parameter head; when off `alpha_fallback` /
    /// `beta_fallback` are used.
    pub tpa: bool,
    /// Apply the anti-noise truncation term.
    pub soft_truncation: bool,
    pub tau: f32,
    pub alpha_fallback: f32,
    pub beta_fallback: f32,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        EnhanceConfig {
            range_mask: true,
            tpa: true,
            soft_truncation: true,
            tau: DEFAULT_TAU,
            alpha_fallback: ALPHA_FALLBACK,
            beta_fallback: BETA_FALLBACK,
        }
    }
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(Error::invalid_argument(format!("tau must be positive, got {}", self.tau)));
        }
        if !(ALPHA_MIN..=1.0).contains(&self.alpha_fallback) {
            return Err(Error::invalid_argument(format!(
                "alpha fallback must lie in [{ALPHA_MIN}, 1], got {}",
                self.alpha_fallback
            )));
        }
        if !(0.0..=BETA_MAX).contains(&self.beta_fallback) {
            return Err(Error::invalid_argument(format!(
                "beta fallback must lie in [0, {BETA_MAX}], got {}",
                self.beta_fallback
            )));
        }
        Ok(())
    }
}

/// Converts RGB to the working gray image (arithmetic channel mean) and the
/// stored color ratios.
pub fn to_gray(rgb: &Rgb32Image) -> Result<(GrayImage, ColorRatios)> {
    if rgb.data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::invalid_argument("rgb values must lie in [0, 1]".to_string()));
    }
    let n = rgb.height * rgb.width;
    let mut gray = vec![0.0f32; n];
    let mut ratios = vec![0.0f32; n * 3];
    for i in 0..n {
        let r = rgb.data[i * 3];
        let g = rgb.data[i * 3 + 1];
        let b = rgb.data[i * 3 + 2];
        let mean = (r + g + b) / 3.0;
        gray[i] = mean;
        let denom = mean.max(RATIO_FLOOR);
        ratios[i * 3] = r / denom;
        ratios[i * 3 + 1] = g / denom;
        ratios[i * 3 + 2] = b / denom;
    }
    Ok((
        GrayImage::new(rgb.height, rgb.width, gray)?,
        ColorRatios {
            height: rgb.height,
            width: rgb.width,
            data: ratios,
        },
    ))
}

/// Rebuilds RGB from an enhanced gray image: C'_c = clamp(O * rho_c, 0, 1).
pub fn restore_color(enhanced_gray: &GrayImage, ratios: &ColorRatios) -> Result<Rgb32Image> {
    if enhanced_gray.height != ratios.height || enhanced_gray.width != ratios.width {
        return Err(Error::invalid_argument(format!(
            "gray {}x{} vs ratios {}x{}",
            enhanced_gray.height, enhanced_gray.width, ratios.height, ratios.width
        )));
    }
    let n = enhanced_gray.data.len();
    let mut out = vec![0.0f32; n * 3];
    for i in 0..n {
        let o = enhanced_gray.data[i];
        for c in 0..3 {
            out[i * 3 + c] = (o * ratios.data[i * 3 + c]).clamp(0.0, 1.0);
        }
    }
    Rgb32Image::new(enhanced_gray.height, enhanced_gray.width, out)
}

/// Area-average pooling of the gray image onto the parameter head's fixed
/// 32x32 grid.
pub fn downsample_32(gray: &GrayImage) -> Result<Tensor> {
    let (h, w) = (gray.height, gray.width);
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::invalid_argument(format!(
            "downsample requires at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}"
        )));
    }
    let mut out = vec![0.0f32; 32 * 32];
    for ty in 0..32 {
        let (r0, r1) = cell_bounds(ty, 32, h);
        for tx in 0..32 {
            let (c0, c1) = cell_bounds(tx, 32, w);
            let mut acc = 0.0f64;
            for r in r0..r1 {
                for c in c0..c1 {
                    acc += gray.data[r * w + c] as f64;
                }
            }
            out[ty * 32 + tx] = (acc / ((r1 - r0) * (c1 - c0)) as f64) as f32;
        }
    }
    Tensor::new(&[1, 32, 32], out)
}

/// Runs the range-mask net on its own.
pub fn range_mask(gray: &GrayImage, weights: &ModelWeights) -> Result<RangeMask> {
    weights.validate()?;
    let mut tape = Tape::new();
    let wv = load_weights(&mut tape, weights, false);
    let g = tape.leaf(&gray.to_tensor());
    let g3 = tape.reshape(g, &[1, gray.height, gray.width])?;
    let mask = range_mask_graph(&mut tape, g3, &wv)?;
    RangeMask::new(gray.height, gray.width, tape.values(mask).to_vec())
}

/// Runs the parameter head on a `[1, 32, 32]` (or `[32, 32]`) downsample.
pub fn param_head(low: &Tensor, weights: &ModelWeights) -> Result<EnhanceParams> {
    weights.validate()?;
    let mut tape = Tape::new();
    let wv = load_weights(&mut tape, weights, false);
    let l = tape.leaf(low);
    let l3 = match low.shape() {
        [32, 32] => tape.reshape(l, &[1, 32, 32])?,
        [1, 32, 32] => l,
        other => {
            return Err(Error::invalid_argument(format!(
                "parameter head input must be 32x32, got {other:?}"
            )))
        }
    };
    let (alpha, beta) = param_head_graph(&mut tape, l3, &wv)?;
    Ok(EnhanceParams {
        alpha: tape.scalar_value(alpha),
        beta: tape.scalar_value(beta),
        tau: DEFAULT_TAU,
    })
}

/// Fusion function gamma = alpha^M mapping the mask into [alpha, 1].
pub fn fuse(mask: &RangeMask, alpha: f32) -> Result<GammaMap> {
    if !(ALPHA_MIN..=1.0).contains(&alpha) {
        return Err(Error::invalid_argument(format!(
            "alpha must lie in [{ALPHA_MIN}, 1], got {alpha}"
        )));
    }
    let data: Vec<f32> = mask.data.iter().map(|&m| alpha.powf(m)).collect();
    GammaMap::new(mask.height, mask.width, data, alpha)
}

/// Gamma transform O = G^gamma; brightens since gamma <= 1 and G <= 1. The
/// base is clamped to [1e-4, 1].
pub fn apply_curve(gray: &GrayImage, gamma: &GammaMap) -> Result<GrayImage> {
    if gray.height != gamma.height || gray.width != gamma.width {
        return Err(Error::invalid_argument("gray/gamma shape mismatch".to_string()));
    }
    let data: Vec<f32> = gray
        .data
        .iter()
        .zip(&gamma.data)
        .map(|(&g, &e)| g.clamp(POW_FLOOR, 1.0).powf(e))
        .collect();
    GrayImage::new(gray.height, gray.width, data)
}

/// Anti-noise mask T = -tau * max(beta - G, 0)^3, zero on pixels at or above
/// the threshold.
pub fn soft_truncate(gray: &GrayImage, beta: f32, tau: f32) -> Result<AntiNoiseMask> {
    if !(0.0..=BETA_MAX).contains(&beta) {
        return Err(Error::invalid_argument(format!(
            "beta must lie in [0, {BETA_MAX}], got {beta}"
        )));
    }
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::invalid_argument(format!("tau must be positive, got {tau}")));
    }
    let data: Vec<f32> = gray
        .data
        .iter()
        .map(|&g| {
            let d = (beta - g).max(0.0);
            ((d * d) * d) * -tau
        })
        .collect();
    AntiNoiseMask::new(gray.height, gray.width, data, beta, tau)
}

/// Everything the forward pass produces besides the restored RGB image.
#[derive(Clone, Debug)]
pub struct Diagnostics {
    pub mask: RangeMask,
    pub gamma: GammaMap,
    pub tmap: AntiNoiseMask,
    pub params: EnhanceParams,
}

#[derive(Clone, Debug)]
pub struct EnhanceOutput {
    pub rgb: Rgb32Image,
    /// Final enhanced gray O' clamped to [0, 1].
    pub gray: GrayImage,
    pub diagnostics: Diagnostics,
}

/// Full pipeline over an RGB image of at least 32x32 pixels.
pub fn enhance(rgb: &Rgb32Image, weights: &ModelWeights, config: &EnhanceConfig) -> Result<EnhanceOutput> {
    config.validate()?;
    weights.validate()?;
    if rgb.height < MIN_SIDE || rgb.width < MIN_SIDE {
        return Err(Error::invalid_argument(format!(
            "enhance requires at least {MIN_SIDE}x{MIN_SIDE}, got {}x{}",
            rgb.height, rgb.width
        )));
    }
    let (gray, ratios) = to_gray(rgb)?;
    let low = if config.tpa { Some(downsample_32(&gray)?) } else { None };

    let mut tape = Tape::new();
    let wv = load_weights(&mut tape, weights, false);
    let vars = build_pipeline(&mut tape, &gray.to_tensor(), low.as_ref(), &wv, config)?;

    let (h, w) = (gray.height, gray.width);
    let alpha = tape.scalar_value(vars.alpha);
    let beta = tape.scalar_value(vars.beta);
    let mask = RangeMask::new(h, w, tape.values(vars.mask_raw).to_vec())?;
    let gamma = GammaMap::new(h, w, tape.values(vars.gamma).to_vec(), alpha)?;
    let tmap = AntiNoiseMask::new(h, w, tape.values(vars.tmap).to_vec(), beta, config.tau)?;
    let out_clamped: Vec<f32> = tape.values(vars.out).iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let gray_out = GrayImage::new(h, w, out_clamped)?;
    let rgb_out = restore_color(&gray_out, &ratios)?;

    Ok(EnhanceOutput {
        rgb: rgb_out,
        gray: gray_out,
        diagnostics: Diagnostics {
            mask,
            gamma,
            tmap,
            params: EnhanceParams { alpha, beta, tau: config.tau },
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray_const(h: usize, w: usize, v: f32) -> GrayImage {
        GrayImage::new(h, w, vec![v; h * w]).unwrap()
    }

    #[test]
    fn to_gray_examples() {
        let img = Rgb32Image::filled(8, 8, [0.2, 0.2, 0.2]);
        let (g, r) = to_gray(&img).unwrap();
        assert!((g.data()[0] - 0.2).abs() < 1e-7);
        assert!(r.data()[..3].iter().all(|&v| (v - 1.0).abs() < 1e-6));

        let img2 = Rgb32Image::filled(8, 8, [0.3, 0.0, 0.0]);
        let (g2, r2) = to_gray(&img2).unwrap();
        assert!((g2.data()[0] - 0.1).abs() < 1e-7);
        assert!((r2.data()[0] - 3.0).abs() < 1e-5);
        assert_eq!(r2.data()[1], 0.0);
        assert_eq!(r2.data()[2], 0.0);
    }

    #[test]
    fn to_gray_rejects_out_of_range() {
        let img = Rgb32Image::filled(8, 8, [1.2, 0.0, 0.0]);
        assert!(to_gray(&img).is_err());
    }

    #[test]
    fn restore_color_examples() {
        let gray = gray_const(8, 8, 0.5);
        let ratios = ColorRatios {
            height: 8,
            width: 8,
            data: vec![1.0; 8 * 8 * 3],
        };
        let rgb = restore_color(&gray, &ratios).unwrap();
        assert_eq!(rgb.pixel(0, 0), [0.5, 0.5, 0.5]);

        let mut data = Vec::new();
        for _ in 0..64 {
            data.extend_from_slice(&[3.0, 0.0, 0.0]);
        }
        let ratios3 = ColorRatios { height: 8, width: 8, data };
        let rgb2 = restore_color(&gray_const(8, 8, 0.2), &ratios3).unwrap();
        let p = rgb2.pixel(0, 0);
        assert!((p[0] - 0.6).abs() < 1e-6 && p[1] == 0.0 && p[2] == 0.0);

        // Saturation clamps.
        let rgb3 = restore_color(&gray_const(8, 8, 0.9), &ratios3).unwrap();
        assert_eq!(rgb3.pixel(0, 0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn round_trip_without_enhancement_recovers_input() {
        let mut data = Vec::new();
        for i in 0..(16 * 16) {
            let v = 0.05 + 0.9 * ((i * 37 % 101) as f32 / 101.0);
            data.extend_from_slice(&[v, (v * 0.7).min(1.0), (v * 0.3).min(1.0)]);
        }
        let img = Rgb32Image::new(16, 16, data).unwrap();
        let (g, r) = to_gray(&img).unwrap();
        let back = restore_color(&g, &r).unwrap();
        for (a, b) in back.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn fuse_examples() {
        let mask1 = RangeMask::new(2, 2, vec![0.2, 0.5, 0.8, 0.99]).unwrap();
        let g1 = fuse(&mask1, 1.0).unwrap();
        assert!(g1.data().iter().all(|&v| (v - 1.0).abs() < 1e-7));

        let mask2 = RangeMask::new(1, 2, vec![1.0, 0.0]).unwrap();
        let g2 = fuse(&mask2, 0.5).unwrap();
        assert!((g2.data()[0] - 0.5).abs() < 1e-7);
        assert!((g2.data()[1] - 1.0).abs() < 1e-7);

        let mask3 = RangeMask::new(1, 1, vec![0.5]).unwrap();
        let g3 = fuse(&mask3, 0.25).unwrap();
        assert!((g3.data()[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn apply_curve_examples() {
        let g = gray_const(8, 8, 0.25);
        let gamma = GammaMap::new(8, 8, vec![0.5; 64], 0.5).unwrap();
        let o = apply_curve(&g, &gamma).unwrap();
        assert!((o.data()[0] - 0.5).abs() < 1e-6);

        let g2 = gray_const(8, 8, 0.37);
        let identity = GammaMap::new(8, 8, vec![1.0; 64], 1.0).unwrap();
        let o2 = apply_curve(&g2, &identity).unwrap();
        assert!((o2.data()[0] - 0.37).abs() < 1e-6);

        let g3 = gray_const(8, 8, 1.0);
        let gamma3 = GammaMap::new(8, 8, vec![0.3; 64], 0.3).unwrap();
        let o3 = apply_curve(&g3, &gamma3).unwrap();
        assert!(o3.data().iter().all(|&v| (v - 1.0).abs() < 1e-7));
    }

    #[test]
    fn soft_truncate_examples() {
        let bright = gray_const(8, 8, 0.5);
        let t = soft_truncate(&bright, 0.08, 100.0).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));

        let black = gray_const(8, 8, 0.0);
        let t2 = soft_truncate(&black, 0.08, 100.0).unwrap();
        assert!((t2.data()[0] - -5.12e-2).abs() < 1e-7);

        let mid = gray_const(8, 8, 0.04);
        let t3 = soft_truncate(&mid, 0.08, 100.0).unwrap();
        assert!((t3.data()[0] - -6.4e-3).abs() < 1e-7);
    }

    #[test]
    fn zero_weights_give_half_mask() {
        let w = ModelWeights::zeros();
        let g = gray_const(32, 32, 0.1);
        let mask = range_mask(&g, &w).unwrap();
        assert!(mask.data().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn mask_shape_matches_input() {
        let w = ModelWeights::seeded_init(3);
        for (h, wd) in [(64, 64), (40, 56)] {
            let g = gray_const(h, wd, 0.2);
            let mask = range_mask(&g, &w).unwrap();
            assert_eq!((mask.height(), mask.width()), (h, wd));
        }
    }

    #[test]
    fn downsample_constant_and_blocks() {
        let g = gray_const(64, 64, 0.42);
        let d = downsample_32(&g).unwrap();
        assert!(d.data().iter().all(|&v| (v - 0.42).abs() < 1e-6));

        let mut data = vec![0.0f32; 64 * 64];
        for (i, v) in data.iter_mut().enumerate() {
            *v = (i % 256) as f32 / 255.0;
        }
        let g2 = GrayImage::new(64, 64, data.clone()).unwrap();
        let d2 = downsample_32(&g2).unwrap();
        for ty in 0..32 {
            for tx in 0..32 {
                let mut want = 0.0;
                for dr in 0..2 {
                    for dc in 0..2 {
                        want += data[(ty * 2 + dr) * 64 + tx * 2 + dc];
                    }
                }
                want /= 4.0;
                assert!((d2.data()[ty * 32 + tx] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn downsample_rejects_small_images() {
        let g = gray_const(16, 40, 0.5);
        assert!(downsample_32(&g).is_err());
    }

    #[test]
    fn zero_fc_head_gives_midpoint_params() {
        // Only the FC layer zeroed: logits are exactly 0 regardless of the
        // encoder output, so s = (0.5, 0.5).
        let mut w = ModelWeights::seeded_init(5);
        w.fc_weight.data_mut().fill(0.0);
        w.fc_bias.data_mut().fill(0.0);
        let low = Tensor::new(&[1, 32, 32], (0..1024).map(|i| (i % 97) as f32 / 96.0).collect()).unwrap();
        let p = param_head(&low, &w).unwrap();
        assert!((p.alpha - 0.55).abs() < 1e-6);
        assert!((p.beta - 0.08).abs() < 1e-6);
    }

    #[test]
    fn param_head_respects_ranges() {
        let w = ModelWeights::seeded_init(11);
        for seed in 0..5u64 {
            let data: Vec<f32> = (0..1024).map(|i| (((i as u64 * 2654435761 + seed) % 991) as f32) / 990.0).collect();
            let low = Tensor::new(&[1, 32, 32], data).unwrap();
            let p = param_head(&low, &w).unwrap();
            assert!((ALPHA_MIN..=1.0).contains(&p.alpha));
            assert!((0.0..=BETA_MAX).contains(&p.beta));
        }
    }

    #[test]
    fn enhance_identity_configuration() {
        let w = ModelWeights::seeded_init(7);
        let mut data = Vec::new();
        for i in 0..(40 * 40) {
            let v = (i * 53 % 211) as f32 / 210.0;
            data.extend_from_slice(&[v, (v * 0.8).min(1.0), (v * 0.5).min(1.0)]);
        }
        let img = Rgb32Image::new(40, 40, data).unwrap();
        let cfg = EnhanceConfig {
            range_mask: false,
            tpa: false,
            soft_truncation: false,
            alpha_fallback: 1.0,
            ..EnhanceConfig::default()
        };
        let out = enhance(&img, &w, &cfg).unwrap();
        for (a, b) in out.rgb.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-3, "identity config deviated: {a} vs {b}");
        }
    }

    #[test]
    fn enhance_constant_dark_image_with_forced_mask() {
        // gamma = fuse(mask == 1, alpha = 0.5) = 0.5 applied to G = 0.1.
        let mask = RangeMask::new(8, 8, vec![1.0; 64]).unwrap();
        let gamma = fuse(&mask, 0.5).unwrap();
        let g = gray_const(8, 8, 0.1);
        let o = apply_curve(&g, &gamma).unwrap();
        for &v in o.data() {
            assert!((v - 0.31622776).abs() < 1e-5);
        }
    }

    #[test]
    fn enhance_rejects_small_images() {
        let w = ModelWeights::seeded_init(1);
        let img = Rgb32Image::filled(16, 64, [0.1, 0.1, 0.1]);
        assert!(enhance(&img, &w, &EnhanceConfig::default()).is_err());
    }

    #[test]
    fn enhance_is_deterministic() {
        let w = ModelWeights::seeded_init(9);
        let mut data = Vec::new();
        for i in 0..(36 * 36) {
            let v = (i * 31 % 173) as f32 / 800.0;
            data.extend_from_slice(&[v, v * 0.9, v * 0.7]);
        }
        let img = Rgb32Image::new(36, 36, data).unwrap();
        let a = enhance(&img, &w, &EnhanceConfig::default()).unwrap();
        let b = enhance(&img, &w, &EnhanceConfig::default()).unwrap();
        assert_eq!(a.rgb.data, b.rgb.data);
        assert_eq!(a.gray.data(), b.gray.data());
    }

    #[test]
    fn weights_are_shareable_across_threads() {
        // enhance is pure in the weights: one loaded value, two threads.
        let weights = ModelWeights::seeded_init(21);
        let a = Rgb32Image::filled(32, 32, [0.1, 0.12, 0.08]);
        let b = Rgb32Image::filled(40, 36, [0.2, 0.18, 0.25]);
        let (out_a, out_b) = std::thread::scope(|s| {
            let ha = s.spawn(|| enhance(&a, &weights, &EnhanceConfig::default()).unwrap());
            let hb = s.spawn(|| enhance(&b, &weights, &EnhanceConfig::default()).unwrap());
            (ha.join().unwrap(), hb.join().unwrap())
        });
        let again = enhance(&a, &weights, &EnhanceConfig::default()).unwrap();
        assert_eq!(out_a.rgb.data, again.rgb.data);
        assert_eq!((out_b.rgb.height, out_b.rgb.width), (40, 36));
    }

    #[test]
    fn alpha_beta_depend_only_on_downsample() {
        // A blocky image equal to its own 2x2 cell means has a bit-identical
        // downsample, so the head must produce bit-identical parameters.
        let w = ModelWeights::seeded_init(13);
        let mut data = vec![0.0f32; 64 * 64];
        for (i, v) in data.iter_mut().enumerate() {
            *v = ((i * 127 + 17) % 251) as f32 / 250.0;
        }
        let g = GrayImage::new(64, 64, data.clone()).unwrap();
        let low = downsample_32(&g).unwrap();
        let mut blocky = vec![0.0f32; 64 * 64];
        for ty in 0..32 {
            for tx in 0..32 {
                let v = low.data()[ty * 32 + tx];
                for dr in 0..2 {
                    for dc in 0..2 {
                        blocky[(ty * 2 + dr) * 64 + tx * 2 + dc] = v;
                    }
                }
            }
        }
        let g2 = GrayImage::new(64, 64, blocky).unwrap();
        let low2 = downsample_32(&g2).unwrap();
        assert_eq!(low.data(), low2.data());
        let p1 = param_head(&low, &w).unwrap();
        let p2 = param_head(&low2, &w).unwrap();
        assert_eq!((p1.alpha, p1.beta), (p2.alpha, p2.beta));
    }
}
