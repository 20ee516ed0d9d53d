use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of tokens entering the encoder (channels of the head conv).
pub const TOKENS: usize = 16;
/// Token embedding width (16x16 flattened spatial block).
pub const EMBED: usize = 256;
pub const HEADS: usize = 4;
pub const HEAD_DIM: usize = 64;
pub const FFN_HIDDEN: usize = 512;
pub const ENCODER_LAYERS: usize = 2;
/// Range-mask net conv width.
pub const RM_CHANNELS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub heads: Vec<AttentionHead>,
    pub wo: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_w2: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_shift: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_shift: Tensor,
}

/// All learned parameters of the pipeline.
///
/// * `rm[0..7]`: the range-mask net. Layers 1-4 map 1→4→4→4→4 channels;
///   layers 5-7 take symmetric skip concatenations (out4‖out3, out5‖out2,
///   out6‖out1, 8 channels each), with layer 7 producing the single sigmoid
///   channel. All 3x3, stride 1, padding 1.
/// * `head_conv`: 1→16 channels, 3x3, stride 2, turning the 32x32 downsample
///   into 16 tokens of 256 dims.
/// * `pos_embedding`: learned [16, 256] positional embedding.
/// * `encoder`: two identical layers of 4-head attention (d_k = d_v = 64)
///   plus a 256→512→256 feed-forward, post-norm residuals.
/// * `fc_weight`/`fc_bias`: [4096, 2] head producing the (alpha, beta)
///   logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub rm: Vec<ConvParams>,
    pub head_conv: ConvParams,
    pub pos_embedding: Tensor,
    pub encoder: Vec<EncoderLayer>,
    pub fc_weight: Tensor,
    pub fc_bias: Tensor,
}

/// Channel plan of the range-mask net: (in, out) per layer.
pub const RM_PLAN: [(usize, usize); 7] = [
    (1, RM_CHANNELS),
    (RM_CHANNELS, RM_CHANNELS),
    (RM_CHANNELS, RM_CHANNELS),
    (RM_CHANNELS, RM_CHANNELS),
    (2 * RM_CHANNELS, RM_CHANNELS),
    (2 * RM_CHANNELS, RM_CHANNELS),
    (2 * RM_CHANNELS, 1),
];

const INIT_STD: f64 = 0.02;

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f32 {
    // Box-Muller; good enough for init and fully deterministic per seed.
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen::<f64>();
    ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() * std) as f32
}

fn init_tensor(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f32> = (0..numel).map(|_| normal(rng, std)).collect();
    Tensor::new(shape, data).expect("shape/data consistent").with_grad()
}

impl ModelWeights {
    /// Fresh weights: zero-mean normal with std 0.02 for conv/linear weights
    /// and the positional embedding, zero biases, unit layer-norm gains.
    pub fn seeded_init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rm = RM_PLAN
            .iter()
            .map(|&(cin, cout)| ConvParams {
                weight: init_tensor(&mut rng, &[cout, cin, 3, 3], INIT_STD),
                bias: Tensor::zeros(&[cout]).with_grad(),
            })
            .collect();
        let head_conv = ConvParams {
            weight: init_tensor(&mut rng, &[TOKENS, 1, 3, 3], INIT_STD),
            bias: Tensor::zeros(&[TOKENS]).with_grad(),
        };
        let pos_embedding = init_tensor(&mut rng, &[TOKENS, EMBED], INIT_STD);
        let encoder = (0..ENCODER_LAYERS)
            .map(|_| EncoderLayer {
                heads: (0..HEADS)
                    .map(|_| AttentionHead {
                        wq: init_tensor(&mut rng, &[EMBED, HEAD_DIM], INIT_STD),
                        wk: init_tensor(&mut rng, &[EMBED, HEAD_DIM], INIT_STD),
                        wv: init_tensor(&mut rng, &[EMBED, HEAD_DIM], INIT_STD),
                    })
                    .collect(),
                wo: init_tensor(&mut rng, &[EMBED, EMBED], INIT_STD),
                ffn_w1: init_tensor(&mut rng, &[EMBED, FFN_HIDDEN], INIT_STD),
                ffn_w2: init_tensor(&mut rng, &[FFN_HIDDEN, EMBED], INIT_STD),
                ln1_gain: Tensor::full(&[EMBED], 1.0).with_grad(),
                ln1_shift: Tensor::zeros(&[EMBED]).with_grad(),
                ln2_gain: Tensor::full(&[EMBED], 1.0).with_grad(),
                ln2_shift: Tensor::zeros(&[EMBED]).with_grad(),
            })
            .collect();
        let fc_weight = init_tensor(&mut rng, &[TOKENS * EMBED, 2], INIT_STD);
        let fc_bias = Tensor::zeros(&[2]).with_grad();
        ModelWeights {
            rm,
            head_conv,
            pos_embedding,
            encoder,
            fc_weight,
            fc_bias,
        }
    }

    /// Same layout with all-zero values; useful for shape-contract tests.
    pub fn zeros() -> Self {
        let mut w = Self::seeded_init(0);
        for (_, t) in w.params_mut() {
            t.data_mut().fill(0.0);
        }
        w
    }

    /// Checks every tensor against the declared layout and for finiteness.
    pub fn validate(&self) -> Result<()> {
        for (name, t) in self.params() {
            let expected = expected_shape(&name).ok_or_else(|| {
                Error::invalid_state(format!("unexpected parameter '{name}'"))
            })?;
            if t.shape() != expected.as_slice() {
                return Err(Error::invalid_state(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    t.shape(),
                    expected
                )));
            }
            if !t.is_finite() {
                return Err(Error::invalid_state(format!("parameter '{name}' contains non-finite values")));
            }
        }
        if self.rm.len() != 7 || self.encoder.len() != ENCODER_LAYERS {
            return Err(Error::invalid_state("wrong number of layers".to_string()));
        }
        Ok(())
    }

    /// Parameters in canonical (checkpoint) order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, cp) in self.rm.iter().enumerate() {
            out.push((format!("rm{}.weight", i + 1), &cp.weight));
            out.push((format!("rm{}.bias", i + 1), &cp.bias));
        }
        out.push(("head_conv.weight".to_string(), &self.head_conv.weight));
        out.push(("head_conv.bias".to_string(), &self.head_conv.bias));
        out.push(("pos_embedding".to_string(), &self.pos_embedding));
        for (l, layer) in self.encoder.iter().enumerate() {
            for (j, head) in layer.heads.iter().enumerate() {
                out.push((format!("encoder.{l}.attn.head.{j}.wq"), &head.wq));
                out.push((format!("encoder.{l}.attn.head.{j}.wk"), &head.wk));
                out.push((format!("encoder.{l}.attn.head.{j}.wv"), &head.wv));
            }
            out.push((format!("encoder.{l}.attn.wo"), &layer.wo));
            out.push((format!("encoder.{l}.ffn.w1"), &layer.ffn_w1));
            out.push((format!("encoder.{l}.ffn.w2"), &layer.ffn_w2));
            out.push((format!("encoder.{l}.ln1.gain"), &layer.ln1_gain));
            out.push((format!("encoder.{l}.ln1.shift"), &layer.ln1_shift));
            out.push((format!("encoder.{l}.ln2.gain"), &layer.ln2_gain));
            out.push((format!("encoder.{l}.ln2.shift"), &layer.ln2_shift));
        }
        out.push(("fc.weight".to_string(), &self.fc_weight));
        out.push(("fc.bias".to_string(), &self.fc_bias));
        out
    }

    /// Mutable view of the parameters, same order as [`ModelWeights::params`].
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        for (i, cp) in self.rm.iter_mut().enumerate() {
            let ConvParams { weight, bias } = cp;
            out.push((format!("rm{}.weight", i + 1), weight));
            out.push((format!("rm{}.bias", i + 1), bias));
        }
        let ConvParams { weight, bias } = &mut self.head_conv;
        out.push(("head_conv.weight".to_string(), weight));
        out.push(("head_conv.bias".to_string(), bias));
        out.push(("pos_embedding".to_string(), &mut self.pos_embedding));
        for (l, layer) in self.encoder.iter_mut().enumerate() {
            for (j, head) in layer.heads.iter_mut().enumerate() {
                let AttentionHead { wq, wk, wv } = head;
                out.push((format!("encoder.{l}.attn.head.{j}.wq"), wq));
                out.push((format!("encoder.{l}.attn.head.{j}.wk"), wk));
                out.push((format!("encoder.{l}.attn.head.{j}.wv"), wv));
            }
            out.push((format!("encoder.{l}.attn.wo"), &mut layer.wo));
            out.push((format!("encoder.{l}.ffn.w1"), &mut layer.ffn_w1));
            out.push((format!("encoder.{l}.ffn.w2"), &mut layer.ffn_w2));
            out.push((format!("encoder.{l}.ln1.gain"), &mut layer.ln1_gain));
            out.push((format!("encoder.{l}.ln1.shift"), &mut layer.ln1_shift));
            out.push((format!("encoder.{l}.ln2.gain"), &mut layer.ln2_gain));
            out.push((format!("encoder.{l}.ln2.shift"), &mut layer.ln2_shift));
        }
        out.push(("fc.weight".to_string(), &mut self.fc_weight));
        out.push(("fc.bias".to_string(), &mut self.fc_bias));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }
}

fn expected_shape(name: &str) -> Option<Vec<usize>> {
    for (i, &(cin, cout)) in RM_PLAN.iter().enumerate() {
        if name == format!("rm{}.weight", i + 1) {
            return Some(vec![cout, cin, 3, 3]);
        }
        if name == format!("rm{}.bias", i + 1) {
            return Some(vec![cout]);
        }
    }
    match name {
        "head_conv.weight" => return Some(vec![TOKENS, 1, 3, 3]),
        "head_conv.bias" => return Some(vec![TOKENS]),
        "pos_embedding" => return Some(vec![TOKENS, EMBED]),
        "fc.weight" => return Some(vec![TOKENS * EMBED, 2]),
        "fc.bias" => return Some(vec![2]),
        _ => {}
    }
    for l in 0..ENCODER_LAYERS {
        for j in 0..HEADS {
            for m in ["wq", "wk", "wv"] {
                if name == format!("encoder.{l}.attn.head.{j}.{m}") {
                    return Some(vec![EMBED, HEAD_DIM]);
                }
            }
        }
        if name == format!("encoder.{l}.attn.wo") {
            return Some(vec![EMBED, EMBED]);
        }
        if name == format!("encoder.{l}.ffn.w1") {
            return Some(vec![EMBED, FFN_HIDDEN]);
        }
        if name == format!("encoder.{l}.ffn.w2") {
            return Some(vec![FFN_HIDDEN, EMBED]);
        }
        for m in ["ln1.gain", "ln1.shift", "ln2.gain", "ln2.shift"] {
            if name == format!("encoder.{l}.{m}") {
                return Some(vec![EMBED]);
            }
        }
    }
    None
}
