//! The four non-reference training losses, differentiable through the tape.
//!
//! * dark-area noise: mean enhancement over dark pixels of 16x16 regions,
//! * spatial consistency: preservation of pooled neighbor differences,
//! * exposure control: pooled distance from the well-exposedness level,
//! * illumination smoothness: squared forward differences of the range mask.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Gray level below which a pixel counts as dark for the dark-area loss.
pub const DARK_THRESHOLD: f32 = 0.04;
/// Region size of the dark-area loss.
pub const DAN_REGION: usize = 16;
/// Pooling cell size of the spatial-consistency loss.
pub const SPA_CELL: usize = 4;
/// Pooling cell size of the exposure loss.
pub const EXP_CELL: usize = 16;
/// Well-exposedness level targeted by the exposure loss.
pub const EXPOSURE_LEVEL: f32 = 0.6;

/// Per-term weights of the total loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_dan: f32,
    pub lambda_exp: f32,
    pub lambda_tv: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_dan: 200.0,
            lambda_exp: 50.0,
            lambda_tv: 20.0,
        }
    }
}

/// Scalar values of the four losses and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub l_dan: f32,
    pub l_spa: f32,
    pub l_exp: f32,
    pub l_tv: f32,
    pub total: f32,
}

impl LossReport {
    pub fn from_components(l_dan: f32, l_spa: f32, l_exp: f32, l_tv: f32, w: &LossWeights) -> Self {
        LossReport {
            l_dan,
            l_spa,
            l_exp,
            l_tv,
            total: w.lambda_dan * l_dan + l_spa + w.lambda_exp * l_exp + w.lambda_tv * l_tv,
        }
    }
}

/// Tape handles to the loss terms of one image.
pub struct LossVars {
    pub dan: Var,
    pub spa: Var,
    pub exp: Var,
    pub tv: Var,
    /// Weighted total per the loss formula (all terms included).
    pub total: Var,
}

impl LossVars {
    pub fn report(&self, tape: &Tape) -> LossReport {
        LossReport {
            l_dan: tape.scalar_value(self.dan),
            l_spa: tape.scalar_value(self.spa),
            l_exp: tape.scalar_value(self.exp),
            l_tv: tape.scalar_value(self.tv),
            total: tape.scalar_value(self.total),
        }
    }
}

fn check_2d(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [h, w] => Ok((*h, *w)),
        other => Err(Error::invalid_argument(format!("{what} must be 2-d, got {other:?}"))),
    }
}

fn check_same_2d(tape: &Tape, a: &Tensor, b: Var, what: &str) -> Result<(usize, usize)> {
    let (h, w) = check_2d(a, what)?;
    if tape.shape(b) != [h, w] {
        return Err(Error::invalid_argument(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.shape(),
            tape.shape(b)
        )));
    }
    Ok((h, w))
}

/// Dark-area noise loss over the recorded output `gray_out`.
///
/// The image is partitioned into 16x16 regions (edge regions may be
/// smaller); each region with at least one dark input pixel contributes the
/// mean of max(O - G, 0) over its dark pixels, and the loss is the mean over
/// contributing regions (0 when there are none). Only the positive part of
/// the enhancement counts: the loss limits how far dark pixels are raised
/// and never rewards pushing them below the input.
pub fn l_dan_graph(tape: &mut Tape, gray_in: &Tensor, gray_out: Var) -> Result<Var> {
    let (h, w) = check_same_2d(tape, gray_in, gray_out, "l_dan")?;
    let g = gray_in.data();

    let gh = h.div_ceil(DAN_REGION);
    let gw = w.div_ceil(DAN_REGION);
    let mut region_dark: Vec<Vec<usize>> = Vec::with_capacity(gh * gw);
    let mut contributing = 0usize;
    for gy in 0..gh {
        for gx in 0..gw {
            let r1 = ((gy + 1) * DAN_REGION).min(h);
            let c1 = ((gx + 1) * DAN_REGION).min(w);
            let mut dark = Vec::new();
            for r in gy * DAN_REGION..r1 {
                for c in gx * DAN_REGION..c1 {
                    if g[r * w + c] < DARK_THRESHOLD {
                        dark.push(r * w + c);
                    }
                }
            }
            if !dark.is_empty() {
                contributing += 1;
            }
            region_dark.push(dark);
        }
    }
    if contributing == 0 {
        return tape.leaf_values(&[1], vec![0.0], false);
    }

    let mut weights = vec![0.0f32; h * w];
    for dark in &region_dark {
        if dark.is_empty() {
            continue;
        }
        let wgt = 1.0 / (contributing as f32 * dark.len() as f32);
        for &p in dark {
            weights[p] = wgt;
        }
    }
    let w_leaf = tape.leaf_values(&[h, w], weights, false)?;
    let in_leaf = tape.leaf(gray_in);
    let diff = tape.sub(gray_out, in_leaf)?;
    let raised = tape.relu(diff);
    let weighted = tape.mul(w_leaf, raised)?;
    let loss = tape.sum(weighted);
    tape.set_label(loss, "l_dan");
    Ok(loss)
}

/// Absolute pooled forward differences along both axes (None when the grid
/// is a single row/column in that direction).
fn pooled_abs_diffs(tape: &mut Tape, pooled: Var) -> Result<(Option<Var>, Option<Var>)> {
    let (gh, gw) = (tape.shape(pooled)[0], tape.shape(pooled)[1]);
    let dh = if gw > 1 {
        let right = tape.slice2d(pooled, 0, 1, gh, gw - 1)?;
        let left = tape.slice2d(pooled, 0, 0, gh, gw - 1)?;
        let d = tape.sub(right, left)?;
        Some(tape.abs(d))
    } else {
        None
    };
    let dv = if gh > 1 {
        let down = tape.slice2d(pooled, 1, 0, gh - 1, gw)?;
        let up = tape.slice2d(pooled, 0, 0, gh - 1, gw)?;
        let d = tape.sub(down, up)?;
        Some(tape.abs(d))
    } else {
        None
    };
    Ok((dh, dv))
}

/// Spatial consistency loss: both images are average-pooled into 4x4 cells
/// and, for every cell and 4-neighbor, the squared change in the absolute
/// neighbor difference is averaged over cells. Each unordered neighbor pair
/// appears in both directions, hence the factor 2/K.
pub fn l_spa_graph(tape: &mut Tape, gray_in: &Tensor, gray_out: Var) -> Result<Var> {
    check_same_2d(tape, gray_in, gray_out, "l_spa")?;
    let in_leaf = tape.leaf(gray_in);
    let pooled_in = tape.avg_pool_cells(in_leaf, SPA_CELL, SPA_CELL)?;
    let pooled_out = tape.avg_pool_cells(gray_out, SPA_CELL, SPA_CELL)?;
    let cells = tape.values(pooled_in).len();

    let (ih, iv) = pooled_abs_diffs(tape, pooled_in)?;
    let (oh, ov) = pooled_abs_diffs(tape, pooled_out)?;

    let mut acc: Option<Var> = None;
    for (i, o) in [(ih, oh), (iv, ov)] {
        if let (Some(i), Some(o)) = (i, o) {
            let d = tape.sub(o, i)?;
            let sq = tape.mul(d, d)?;
            let s = tape.sum(sq);
            acc = Some(match acc {
                Some(a) => tape.add(a, s)?,
                None => s,
            });
        }
    }
    let loss = match acc {
        Some(a) => tape.mul_scalar(a, 2.0 / cells as f32),
        None => tape.leaf_values(&[1], vec![0.0], false)?,
    };
    tape.set_label(loss, "l_spa");
    Ok(loss)
}

/// Exposure control loss: mean absolute distance of 16x16 pooled cells from
/// the well-exposedness level 0.6.
pub fn l_exp_graph(tape: &mut Tape, gray_out: Var) -> Result<Var> {
    if tape.shape(gray_out).len() != 2 {
        return Err(Error::invalid_argument("l_exp: output must be 2-d".to_string()));
    }
    let pooled = tape.avg_pool_cells(gray_out, EXP_CELL, EXP_CELL)?;
    let dev = tape.add_scalar(pooled, -EXPOSURE_LEVEL);
    let a = tape.abs(dev);
    let loss = tape.mean(a);
    tape.set_label(loss, "l_exp");
    Ok(loss)
}

/// Illumination smoothness loss on the range mask: mean over pixels of the
/// squared horizontal plus vertical forward differences (last column/row
/// excluded per direction).
pub fn l_tv_graph(tape: &mut Tape, mask: Var) -> Result<Var> {
    let s = tape.shape(mask).to_vec();
    if s.len() != 2 || s[0] < 2 || s[1] < 2 {
        return Err(Error::invalid_argument(format!("l_tv: mask must be at least 2x2, got {s:?}")));
    }
    let (h, w) = (s[0], s[1]);
    let right = tape.slice2d(mask, 0, 1, h, w - 1)?;
    let left = tape.slice2d(mask, 0, 0, h, w - 1)?;
    let dh = tape.sub(right, left)?;
    let dh2 = tape.mul(dh, dh)?;
    let sh = tape.sum(dh2);

    let down = tape.slice2d(mask, 1, 0, h - 1, w)?;
    let up = tape.slice2d(mask, 0, 0, h - 1, w)?;
    let dv = tape.sub(down, up)?;
    let dv2 = tape.mul(dv, dv)?;
    let sv = tape.sum(dv2);

    let total = tape.add(sh, sv)?;
    let loss = tape.mul_scalar(total, 1.0 / (h * w) as f32);
    tape.set_label(loss, "l_tv");
    Ok(loss)
}

/// Records all four losses and the weighted total.
pub fn total_loss_graph(
    tape: &mut Tape,
    gray_in: &Tensor,
    gray_out: Var,
    mask: Var,
    weights: &LossWeights,
) -> Result<LossVars> {
    let dan = l_dan_graph(tape, gray_in, gray_out)?;
    let spa = l_spa_graph(tape, gray_in, gray_out)?;
    let exp = l_exp_graph(tape, gray_out)?;
    let tv = l_tv_graph(tape, mask)?;

    let wdan = tape.mul_scalar(dan, weights.lambda_dan);
    let wexp = tape.mul_scalar(exp, weights.lambda_exp);
    let wtv = tape.mul_scalar(tv, weights.lambda_tv);
    let s1 = tape.add(wdan, spa)?;
    let s2 = tape.add(s1, wexp)?;
    let total = tape.add(s2, wtv)?;
    tape.set_label(total, "total_loss");
    Ok(LossVars { dan, spa, exp, tv, total })
}

fn eager<F>(build: F) -> Result<f32>
where
    F: FnOnce(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = build(&mut tape)?;
    Ok(tape.scalar_value(v))
}

pub fn l_dan(gray_in: &Tensor, gray_out: &Tensor) -> Result<f32> {
    eager(|tape| {
        let out = tape.leaf(gray_out);
        l_dan_graph(tape, gray_in, out)
    })
}

pub fn l_spa(gray_in: &Tensor, gray_out: &Tensor) -> Result<f32> {
    eager(|tape| {
        let out = tape.leaf(gray_out);
        l_spa_graph(tape, gray_in, out)
    })
}

pub fn l_exp(gray_out: &Tensor) -> Result<f32> {
    eager(|tape| {
        let out = tape.leaf(gray_out);
        l_exp_graph(tape, out)
    })
}

pub fn l_tv(mask: &Tensor) -> Result<f32> {
    eager(|tape| {
        let m = tape.leaf(mask);
        l_tv_graph(tape, m)
    })
}

/// All four losses over one (input, output, mask) triple.
pub fn total_loss(
    gray_in: &Tensor,
    gray_out: &Tensor,
    mask: &Tensor,
    weights: &LossWeights,
) -> Result<LossReport> {
    let mut tape = Tape::new();
    let out = tape.leaf(gray_out);
    let m = tape.leaf(mask);
    let vars = total_loss_graph(&mut tape, gray_in, out, m, weights)?;
    Ok(vars.report(&tape))
}
