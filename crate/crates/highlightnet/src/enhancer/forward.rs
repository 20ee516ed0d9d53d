use crate::enhancer::weights::{
    AttentionHead, EncoderLayer, ModelWeights, EMBED, HEAD_DIM, TOKENS,
};
use crate::enhancer::{EnhanceConfig, ALPHA_MIN, ALPHA_SPAN, BETA_MAX, POW_FLOOR};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub struct HeadVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

pub struct EncoderLayerVars {
    pub heads: Vec<HeadVars>,
    pub wo: Var,
    pub ffn_w1: Var,
    pub ffn_w2: Var,
    pub ln1_gain: Var,
    pub ln1_shift: Var,
    pub ln2_gain: Var,
    pub ln2_shift: Var,
}

/// All weights loaded onto a tape, in the same canonical order as
/// [`ModelWeights::params`].
pub struct WeightVars {
    pub rm: Vec<(Var, Var)>,
    pub head_conv: (Var, Var),
    pub pos_embedding: Var,
    pub encoder: Vec<EncoderLayerVars>,
    pub fc_weight: Var,
    pub fc_bias: Var,
}

impl WeightVars {
    /// Flat list of the weight vars in canonical parameter order.
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for &(w, b) in &self.rm {
            out.push(w);
            out.push(b);
        }
        out.push(self.head_conv.0);
        out.push(self.head_conv.1);
        out.push(self.pos_embedding);
        for layer in &self.encoder {
            for h in &layer.heads {
                out.push(h.wq);
                out.push(h.wk);
                out.push(h.wv);
            }
            out.push(layer.wo);
            out.push(layer.ffn_w1);
            out.push(layer.ffn_w2);
            out.push(layer.ln1_gain);
            out.push(layer.ln1_shift);
            out.push(layer.ln2_gain);
            out.push(layer.ln2_shift);
        }
        out.push(self.fc_weight);
        out.push(self.fc_bias);
        out
    }
}

fn load_tensor(tape: &mut Tape, t: &Tensor, name: &str, trainable: bool) -> Var {
    let v = tape
        .leaf_values(t.shape(), t.data().to_vec(), trainable)
        .expect("weight tensor is self-consistent");
    tape.set_label(v, name);
    v
}

/// Copies every weight onto the tape. With `trainable` the leaves require
/// gradients, so a later backward pass fills them in.
pub fn load_weights(tape: &mut Tape, w: &ModelWeights, trainable: bool) -> WeightVars {
    let rm = w
        .rm
        .iter()
        .enumerate()
        .map(|(i, cp)| {
            (
                load_tensor(tape, &cp.weight, &format!("rm{}.weight", i + 1), trainable),
                load_tensor(tape, &cp.bias, &format!("rm{}.bias", i + 1), trainable),
            )
        })
        .collect();
    let head_conv = (
        load_tensor(tape, &w.head_conv.weight, "head_conv.weight", trainable),
        load_tensor(tape, &w.head_conv.bias, "head_conv.bias", trainable),
    );
    let pos_embedding = load_tensor(tape, &w.pos_embedding, "pos_embedding", trainable);
    let encoder = w
        .encoder
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let EncoderLayer {
                heads,
                wo,
                ffn_w1,
                ffn_w2,
                ln1_gain,
                ln1_shift,
                ln2_gain,
                ln2_shift,
            } = layer;
            EncoderLayerVars {
                heads: heads
                    .iter()
                    .enumerate()
                    .map(|(j, AttentionHead { wq, wk, wv })| HeadVars {
                        wq: load_tensor(tape, wq, &format!("encoder.{l}.attn.head.{j}.wq"), trainable),
                        wk: load_tensor(tape, wk, &format!("encoder.{l}.attn.head.{j}.wk"), trainable),
                        wv: load_tensor(tape, wv, &format!("encoder.{l}.attn.head.{j}.wv"), trainable),
                    })
                    .collect(),
                wo: load_tensor(tape, wo, &format!("encoder.{l}.attn.wo"), trainable),
                ffn_w1: load_tensor(tape, ffn_w1, &format!("encoder.{l}.ffn.w1"), trainable),
                ffn_w2: load_tensor(tape, ffn_w2, &format!("encoder.{l}.ffn.w2"), trainable),
                ln1_gain: load_tensor(tape, ln1_gain, &format!("encoder.{l}.ln1.gain"), trainable),
                ln1_shift: load_tensor(tape, ln1_shift, &format!("encoder.{l}.ln1.shift"), trainable),
                ln2_gain: load_tensor(tape, ln2_gain, &format!("encoder.{l}.ln2.gain"), trainable),
                ln2_shift: load_tensor(tape, ln2_shift, &format!("encoder.{l}.ln2.shift"), trainable),
            }
        })
        .collect();
    let fc_weight = load_tensor(tape, &w.fc_weight, "fc.weight", trainable);
    let fc_bias = load_tensor(tape, &w.fc_bias, "fc.bias", trainable);
    WeightVars {
        rm,
        head_conv,
        pos_embedding,
        encoder,
        fc_weight,
        fc_bias,
    }
}

/// Seven-layer range-mask net over a `[1, H, W]` gray image: four plain conv
/// layers, then three layers fed by symmetric skip concatenations, ReLU after
/// every layer except the final sigmoid. Output is `[1, H, W]` in (0, 1).
pub fn range_mask_graph(tape: &mut Tape, gray: Var, wv: &WeightVars) -> Result<Var> {
    let conv = |tape: &mut Tape, x: Var, i: usize| -> Result<Var> {
        let (w, b) = wv.rm[i];
        tape.conv2d(x, w, b, 1, 1)
    };
    let c1 = conv(tape, gray, 0)?;
    let o1 = tape.relu(c1);
    let c2 = conv(tape, o1, 1)?;
    let o2 = tape.relu(c2);
    let c3 = conv(tape, o2, 2)?;
    let o3 = tape.relu(c3);
    let c4 = conv(tape, o3, 3)?;
    let o4 = tape.relu(c4);

    let in5 = tape.concat_channels(o4, o3)?;
    let c5 = conv(tape, in5, 4)?;
    let o5 = tape.relu(c5);
    let in6 = tape.concat_channels(o5, o2)?;
    let c6 = conv(tape, in6, 5)?;
    let o6 = tape.relu(c6);
    let in7 = tape.concat_channels(o6, o1)?;
    let c7 = conv(tape, in7, 6)?;
    let mask = tape.sigmoid(c7);
    tape.set_label(mask, "range_mask");
    Ok(mask)
}

/// Transformer parameter head over the `[1, 32, 32]` downsample: stride-2
/// conv to 16 tokens of 256 dims, learned positional embedding, two encoder
/// layers (4-head attention + feed-forward, post-norm residuals), then a
/// fully connected bivector head mapped to `alpha` in [0.1, 1] and `beta` in
/// [0, 0.16].
pub fn param_head_graph(tape: &mut Tape, low: Var, wv: &WeightVars) -> Result<(Var, Var)> {
    if tape.shape(low) != [1, 32, 32] {
        return Err(Error::invalid_argument(format!(
            "param head expects a [1, 32, 32] input, got {:?}",
            tape.shape(low)
        )));
    }
    let (hw, hb) = wv.head_conv;
    let conv = tape.conv2d(low, hw, hb, 2, 1)?; // [16, 16, 16]
    let tokens = tape.reshape(conv, &[TOKENS, EMBED])?;
    let mut x = tape.add(tokens, wv.pos_embedding)?;

    let scale = 1.0 / (HEAD_DIM as f32).sqrt();
    for layer in &wv.encoder {
        // Multi-head attention; the concat-then-project form is computed as a
        // sum of per-head projections through row blocks of W^O.
        let mut attn: Option<Var> = None;
        for (j, head) in layer.heads.iter().enumerate() {
            let q = tape.matmul(x, head.wq)?;
            let k = tape.matmul(x, head.wk)?;
            let v = tape.matmul(x, head.wv)?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scaled = tape.mul_scalar(scores, scale);
            let att = tape.softmax_rows(scaled)?;
            let hv = tape.matmul(att, v)?;
            let wo_j = tape.slice2d(layer.wo, j * HEAD_DIM, 0, HEAD_DIM, EMBED)?;
            let contrib = tape.matmul(hv, wo_j)?;
            attn = Some(match attn {
                Some(acc) => tape.add(acc, contrib)?,
                None => contrib,
            });
        }
        let attn = attn.expect("at least one head");
        let res1 = tape.add(attn, x)?;
        x = tape.layer_norm(res1, layer.ln1_gain, layer.ln1_shift)?;

        let h1 = tape.matmul(x, layer.ffn_w1)?;
        let h1a = tape.relu(h1);
        let h2 = tape.matmul(h1a, layer.ffn_w2)?;
        let res2 = tape.add(h2, x)?;
        x = tape.layer_norm(res2, layer.ln2_gain, layer.ln2_shift)?;
    }

    let flat = tape.reshape(x, &[1, TOKENS * EMBED])?;
    let proj = tape.matmul(flat, wv.fc_weight)?;
    let logits = tape.add_row_vec(proj, wv.fc_bias)?;
    let s = tape.sigmoid(logits);
    let sa2 = tape.slice2d(s, 0, 0, 1, 1)?;
    let sb2 = tape.slice2d(s, 0, 1, 1, 1)?;
    let sa = tape.reshape(sa2, &[1])?;
    let sb = tape.reshape(sb2, &[1])?;
    let alpha_scaled = tape.mul_scalar(sa, ALPHA_SPAN);
    let alpha = tape.add_scalar(alpha_scaled, ALPHA_MIN);
    let beta = tape.mul_scalar(sb, BETA_MAX);
    tape.set_label(alpha, "alpha");
    tape.set_label(beta, "beta");
    Ok((alpha, beta))
}

/// Handles to every intermediate of one recorded forward pass.
pub struct PipelineVars {
    /// Raw sigmoid mask, `[H, W]`.
    pub mask_raw: Var,
    /// Mask actually fused (equals `mask_raw` unless the range mask is
    /// ablated, in which case it is the mask's spatial mean).
    pub mask_used: Var,
    pub gamma: Var,
    /// Curve output `O = G^gamma` before truncation.
    pub curve: Var,
    pub tmap: Var,
    /// Final gray `O' = O + T`, pre-clamp.
    pub out: Var,
    pub alpha: Var,
    pub beta: Var,
}

/// Records the full enhancement forward pass for one image.
///
/// `gray` is the `[H, W]` input in [0, 1]; `low` is its `[1, 32, 32]`
/// downsample (required when the parameter head is enabled). Ablations per
/// `cfg`: range mask off replaces the mask with its spatial mean, parameter
/// head off substitutes the fallback constants, soft truncation off zeroes
/// the anti-noise term.
pub fn build_pipeline(
    tape: &mut Tape,
    gray: &Tensor,
    low: Option<&Tensor>,
    wv: &WeightVars,
    cfg: &EnhanceConfig,
) -> Result<PipelineVars> {
    let shape = gray.shape();
    if shape.len() != 2 {
        return Err(Error::invalid_argument(format!("pipeline expects a 2-d gray image, got {shape:?}")));
    }
    let (h, w) = (shape[0], shape[1]);
    let g = tape.leaf(gray);
    tape.set_label(g, "gray_input");

    let g3 = tape.reshape(g, &[1, h, w])?;
    let mask3 = range_mask_graph(tape, g3, wv)?;
    let mask_raw = tape.reshape(mask3, &[h, w])?;

    let mask_used = if cfg.range_mask {
        mask_raw
    } else {
        let m = tape.mean(mask_raw);
        tape.expand_scalar(m, &[h, w])?
    };

    let (alpha, beta) = if cfg.tpa {
        let low = low.ok_or_else(|| {
            Error::invalid_argument("parameter head enabled but no 32x32 downsample provided".to_string())
        })?;
        let lv = tape.leaf(low);
        tape.set_label(lv, "head_input");
        param_head_graph(tape, lv, wv)?
    } else {
        let a = tape.scalar(cfg.alpha_fallback);
        let b = tape.scalar(cfg.beta_fallback);
        (a, b)
    };

    let alpha_exp = tape.expand_scalar(alpha, &[h, w])?;
    let gamma = tape.pow(alpha_exp, mask_used)?;
    tape.set_label(gamma, "gamma_map");

    let g_clamped = tape.clamp(g, POW_FLOOR, 1.0);
    let curve = tape.pow(g_clamped, gamma)?;
    tape.set_label(curve, "curve_out");

    let tmap = if cfg.soft_truncation {
        let beta_exp = tape.expand_scalar(beta, &[h, w])?;
        let d = tape.sub(beta_exp, g)?;
        let r = tape.relu(d);
        let r2 = tape.mul(r, r)?;
        let r3 = tape.mul(r2, r)?;
        tape.mul_scalar(r3, -cfg.tau)
    } else {
        tape.leaf_values(&[h, w], vec![0.0; h * w], false)?
    };
    tape.set_label(tmap, "anti_noise_mask");

    let out = tape.add(curve, tmap)?;
    tape.set_label(out, "enhanced_gray");

    Ok(PipelineVars {
        mask_raw,
        mask_used,
        gamma,
        curve,
        tmap,
        out,
        alpha,
        beta,
    })
}
