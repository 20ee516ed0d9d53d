//! Shared test support: brute-force oracles kept independent of the library
//! implementation paths, plus synthetic data generators.

#![allow(dead_code)]

use highlightnet::enhancer::{ModelWeights, EMBED, HEADS, HEAD_DIM, RM_PLAN, TOKENS};
use highlightnet::eval::BoundingBox;
use highlightnet::imgio::Rgb32Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

// ---- direct-loop numeric oracles -------------------------------------------

/// Six-nested-loop cross-correlation in f64.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_oracle(
    x: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    k: &[f32],
    cout: usize,
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let oh = (h + 2 * padding - 3) / stride + 1;
    let ow = (w + 2 * padding - 3) / stride + 1;
    let mut out = vec![0.0f64; cout * oh * ow];
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[co] as f64;
                for ci in 0..cin {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * stride + ky) as i64 - padding as i64;
                            let ix = (ox * stride + kx) as i64 - padding as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            acc += k[((co * cin + ci) * 3 + ky) * 3 + kx] as f64
                                * x[(ci * h + iy as usize) * w + ix as usize] as f64;
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

pub fn softmax_rows_oracle(x: &[f32], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; n * d];
    for i in 0..n {
        let row: Vec<f64> = x[i * d..(i + 1) * d].iter().map(|&v| v as f64).collect();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for j in 0..d {
            out[i * d + j] = exps[j] / sum;
        }
    }
    out
}

pub fn layer_norm_oracle(x: &[f32], n: usize, d: usize, gain: &[f32], shift: &[f32]) -> Vec<f64> {
    let mut out = vec![0.0f64; n * d];
    for i in 0..n {
        let row: Vec<f64> = x[i * d..(i + 1) * d].iter().map(|&v| v as f64).collect();
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for j in 0..d {
            out[i * d + j] = (row[j] - mean) * inv * gain[j] as f64 + shift[j] as f64;
        }
    }
    out
}

/// Per-cell means over the ragged `cell x cell` partition, f64.
pub fn pool_cells_oracle(x: &[f32], h: usize, w: usize, cell: usize) -> (Vec<f64>, usize, usize) {
    let gh = h.div_ceil(cell);
    let gw = w.div_ceil(cell);
    let mut out = vec![0.0f64; gh * gw];
    for gy in 0..gh {
        for gx in 0..gw {
            let r1 = ((gy + 1) * cell).min(h);
            let c1 = ((gx + 1) * cell).min(w);
            let mut acc = 0.0;
            let mut n = 0usize;
            for r in gy * cell..r1 {
                for c in gx * cell..c1 {
                    acc += x[r * w + c] as f64;
                    n += 1;
                }
            }
            out[gy * gw + gx] = acc / n as f64;
        }
    }
    (out, gh, gw)
}

/// Dark-area loss by direct region scan (positive-part enhancement).
pub fn l_dan_oracle(g: &[f32], o: &[f32], h: usize, w: usize) -> f64 {
    let region = 16;
    let gh = h.div_ceil(region);
    let gw = w.div_ceil(region);
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for gy in 0..gh {
        for gx in 0..gw {
            let r1 = ((gy + 1) * region).min(h);
            let c1 = ((gx + 1) * region).min(w);
            let mut acc = 0.0f64;
            let mut dark = 0usize;
            for r in gy * region..r1 {
                for c in gx * region..c1 {
                    if g[r * w + c] < 0.04 {
                        acc += (o[r * w + c] - g[r * w + c]).max(0.0) as f64;
                        dark += 1;
                    }
                }
            }
            if dark > 0 {
                sum += acc / dark as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Spatial-consistency loss by the literal cell/neighbor double sum.
pub fn l_spa_oracle(g: &[f32], o: &[f32], h: usize, w: usize) -> f64 {
    let (pi, gh, gw) = pool_cells_oracle(g, h, w, 4);
    let (po, _, _) = pool_cells_oracle(o, h, w, 4);
    let mut sum = 0.0f64;
    for gy in 0..gh {
        for gx in 0..gw {
            let k = gy * gw + gx;
            let mut neighbors = Vec::new();
            if gy > 0 {
                neighbors.push(k - gw);
            }
            if gy + 1 < gh {
                neighbors.push(k + gw);
            }
            if gx > 0 {
                neighbors.push(k - 1);
            }
            if gx + 1 < gw {
                neighbors.push(k + 1);
            }
            for j in neighbors {
                let dy = (po[k] - po[j]).abs();
                let di = (pi[k] - pi[j]).abs();
                sum += (dy - di) * (dy - di);
            }
        }
    }
    sum / (gh * gw) as f64
}

pub fn l_exp_oracle(o: &[f32], h: usize, w: usize) -> f64 {
    let (p, gh, gw) = pool_cells_oracle(o, h, w, 16);
    p.iter().map(|v| (v - 0.6).abs()).sum::<f64>() / (gh * gw) as f64
}

pub fn l_tv_oracle(m: &[f32], h: usize, w: usize) -> f64 {
    let mut sum = 0.0f64;
    for r in 0..h {
        for c in 0..w - 1 {
            let d = m[r * w + c + 1] as f64 - m[r * w + c] as f64;
            sum += d * d;
        }
    }
    for r in 0..h - 1 {
        for c in 0..w {
            let d = m[(r + 1) * w + c] as f64 - m[r * w + c] as f64;
            sum += d * d;
        }
    }
    sum / (h * w) as f64
}

pub fn psnr_oracle(a: &Rgb32Image, b: &Rgb32Image) -> f64 {
    let mut mse = 0.0f64;
    for (x, y) in a.data.iter().zip(&b.data) {
        let d = *x as f64 - *y as f64;
        mse += d * d;
    }
    mse /= a.data.len() as f64;
    if mse <= 1e-10 {
        return 100.0;
    }
    (10.0 * (1.0 / mse).log10()).min(100.0)
}

/// Windowed SSIM oracle: per-position weighted statistics with the 2-d
/// Gaussian window, rather than separable filtering.
pub fn ssim_oracle(a: &Rgb32Image, b: &Rgb32Image) -> f64 {
    let (h, w) = (a.height, a.width);
    let gray = |img: &Rgb32Image| -> Vec<f64> {
        img.data
            .chunks_exact(3)
            .map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0)
            .collect()
    };
    let x = gray(a);
    let y = gray(b);

    let mut k1 = [0.0f64; 11];
    let mut ksum = 0.0;
    for (i, v) in k1.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *v = (-d * d / (2.0 * 1.5 * 1.5)).exp();
        ksum += *v;
    }
    for v in &mut k1 {
        *v /= ksum;
    }

    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for wy in 0..h - 10 {
        for wx in 0..w - 10 {
            let (mut mx, mut my) = (0.0f64, 0.0f64);
            for dy in 0..11 {
                for dx in 0..11 {
                    let wgt = k1[dy] * k1[dx];
                    mx += wgt * x[(wy + dy) * w + wx + dx];
                    my += wgt * y[(wy + dy) * w + wx + dx];
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0f64, 0.0f64, 0.0f64);
            for dy in 0..11 {
                for dx in 0..11 {
                    let wgt = k1[dy] * k1[dx];
                    let xv = x[(wy + dy) * w + wx + dx] - mx;
                    let yv = y[(wy + dy) * w + wx + dx] - my;
                    vx += wgt * xv * xv;
                    vy += wgt * yv * yv;
                    cov += wgt * xv * yv;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

// ---- fp64 replays of the model forward (layer-by-layer oracles) -------------

fn conv_layer_f64(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kt: &highlightnet::Tensor,
    bt: &highlightnet::Tensor,
    stride: usize,
) -> (Vec<f64>, usize, usize) {
    let cout = kt.shape()[0];
    let k64: Vec<f64> = kt.data().iter().map(|&v| v as f64).collect();
    let b64: Vec<f64> = bt.data().iter().map(|&v| v as f64).collect();
    let oh = (h + 2 - 3) / stride + 1;
    let ow = (w + 2 - 3) / stride + 1;
    let mut out = vec![0.0f64; cout * oh * ow];
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b64[co];
                for ci in 0..cin {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * stride + ky) as i64 - 1;
                            let ix = (ox * stride + kx) as i64 - 1;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            acc += k64[((co * cin + ci) * 3 + ky) * 3 + kx]
                                * x[(ci * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (out, oh, ow)
}

/// fp64 replay of the seven-layer range-mask net.
pub fn range_mask_oracle(gray: &[f32], h: usize, w: usize, weights: &ModelWeights) -> Vec<f64> {
    let relu = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| x.max(0.0)).collect() };
    let x0: Vec<f64> = gray.iter().map(|&v| v as f64).collect();

    let mut acts: Vec<Vec<f64>> = Vec::new();
    let mut cur = x0;
    let mut cur_c = 1usize;
    for i in 0..4 {
        let (out, _, _) = conv_layer_f64(&cur, cur_c, h, w, &weights.rm[i].weight, &weights.rm[i].bias, 1);
        cur = relu(out);
        cur_c = RM_PLAN[i].1;
        acts.push(cur.clone());
    }
    // acts[0..4] = o1..o4; skips: (o4,o3), (o5,o2), (o6,o1)
    let concat = |a: &[f64], b: &[f64]| -> Vec<f64> {
        let mut v = a.to_vec();
        v.extend_from_slice(b);
        v
    };
    let in5 = concat(&acts[3], &acts[2]);
    let (c5, _, _) = conv_layer_f64(&in5, 8, h, w, &weights.rm[4].weight, &weights.rm[4].bias, 1);
    let o5 = relu(c5);
    let in6 = concat(&o5, &acts[1]);
    let (c6, _, _) = conv_layer_f64(&in6, 8, h, w, &weights.rm[5].weight, &weights.rm[5].bias, 1);
    let o6 = relu(c6);
    let in7 = concat(&o6, &acts[0]);
    let (c7, _, _) = conv_layer_f64(&in7, 8, h, w, &weights.rm[6].weight, &weights.rm[6].bias, 1);
    c7.into_iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
}

fn matmul_f64(a: &[f64], n: usize, m: usize, b: &[f64], p: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; n * p];
    for i in 0..n {
        for j in 0..m {
            let av = a[i * m + j];
            for c in 0..p {
                out[i * p + c] += av * b[j * p + c];
            }
        }
    }
    out
}

fn t64(t: &highlightnet::Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// fp64 replay of the parameter head, using the textbook concat-then-project
/// multi-head form.
pub fn param_head_oracle(low: &[f32], weights: &ModelWeights) -> (f64, f64) {
    let (conv, oh, ow) = conv_layer_f64(
        &low.iter().map(|&v| v as f64).collect::<Vec<_>>(),
        1,
        32,
        32,
        &weights.head_conv.weight,
        &weights.head_conv.bias,
        2,
    );
    assert_eq!((oh, ow), (16, 16));
    // [16 channels, 16x16 spatial] -> tokens x embed, plus positions.
    let pos = t64(&weights.pos_embedding);
    let mut x: Vec<f64> = conv;
    for (i, v) in x.iter_mut().enumerate() {
        *v += pos[i];
    }

    let ln = |x: &[f64], gain: &[f64], shift: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0f64; x.len()];
        for i in 0..TOKENS {
            let row = &x[i * EMBED..(i + 1) * EMBED];
            let mean = row.iter().sum::<f64>() / EMBED as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / EMBED as f64;
            let inv = 1.0 / (var + 1e-5).sqrt();
            for j in 0..EMBED {
                out[i * EMBED + j] = (row[j] - mean) * inv * gain[j] + shift[j];
            }
        }
        out
    };

    for layer in &weights.encoder {
        // Concatenated heads, then one projection through W^O.
        let mut cat = vec![0.0f64; TOKENS * EMBED];
        for (j, head) in layer.heads.iter().enumerate() {
            let q = matmul_f64(&x, TOKENS, EMBED, &t64(&head.wq), HEAD_DIM);
            let k = matmul_f64(&x, TOKENS, EMBED, &t64(&head.wk), HEAD_DIM);
            let v = matmul_f64(&x, TOKENS, EMBED, &t64(&head.wv), HEAD_DIM);
            // scores = q k^T / sqrt(d_k)
            let mut scores = vec![0.0f64; TOKENS * TOKENS];
            for a in 0..TOKENS {
                for b in 0..TOKENS {
                    let mut acc = 0.0;
                    for d in 0..HEAD_DIM {
                        acc += q[a * HEAD_DIM + d] * k[b * HEAD_DIM + d];
                    }
                    scores[a * TOKENS + b] = acc / (HEAD_DIM as f64).sqrt();
                }
            }
            for a in 0..TOKENS {
                let row = &mut scores[a * TOKENS..(a + 1) * TOKENS];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            let hv = matmul_f64(&scores, TOKENS, TOKENS, &v, HEAD_DIM);
            for a in 0..TOKENS {
                for d in 0..HEAD_DIM {
                    cat[a * EMBED + j * HEAD_DIM + d] = hv[a * HEAD_DIM + d];
                }
            }
        }
        let attn = matmul_f64(&cat, TOKENS, EMBED, &t64(&layer.wo), EMBED);
        let mut res1 = vec![0.0f64; TOKENS * EMBED];
        for i in 0..res1.len() {
            res1[i] = attn[i] + x[i];
        }
        let x1 = ln(&res1, &t64(&layer.ln1_gain), &t64(&layer.ln1_shift));

        let h1 = matmul_f64(&x1, TOKENS, EMBED, &t64(&layer.ffn_w1), 512);
        let h1a: Vec<f64> = h1.into_iter().map(|v| v.max(0.0)).collect();
        let h2 = matmul_f64(&h1a, TOKENS, 512, &t64(&layer.ffn_w2), EMBED);
        let mut res2 = vec![0.0f64; TOKENS * EMBED];
        for i in 0..res2.len() {
            res2[i] = h2[i] + x1[i];
        }
        x = ln(&res2, &t64(&layer.ln2_gain), &t64(&layer.ln2_shift));
    }

    let fcw = t64(&weights.fc_weight);
    let fcb = t64(&weights.fc_bias);
    let logits = matmul_f64(&x, 1, TOKENS * EMBED, &fcw, 2);
    let s_a = 1.0 / (1.0 + (-(logits[0] + fcb[0])).exp());
    let s_b = 1.0 / (1.0 + (-(logits[1] + fcb[1])).exp());
    let _ = HEADS;
    (0.1 + 0.9 * s_a, 0.16 * s_b)
}

// ---- oracle sweep runners (used by the acceptance suite) --------------------

/// Max |impl - oracle| over random conv instances.
pub fn conv_oracle_max_dev(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut max = 0.0f64;
    for case in 0..instances {
        let cin = r.gen_range(1..=8);
        let cout = r.gen_range(1..=8);
        let h = r.gen_range(4..=32);
        let w = r.gen_range(4..=32);
        let stride = if case % 3 == 0 { 2 } else { 1 };
        let x = rand_vec(&mut r, cin * h * w, -1.0, 1.0);
        let k = rand_vec(&mut r, cout * cin * 9, -1.0, 1.0);
        let b = rand_vec(&mut r, cout, -0.5, 0.5);
        let mut tape = highlightnet::Tape::new();
        let xv = tape.leaf_values(&[cin, h, w], x.clone(), false).unwrap();
        let kv = tape.leaf_values(&[cout, cin, 3, 3], k.clone(), false).unwrap();
        let bv = tape.leaf_values(&[cout], b.clone(), false).unwrap();
        let y = tape.conv2d(xv, kv, bv, stride, 1).unwrap();
        let want = conv2d_oracle(&x, cin, h, w, &k, cout, &b, stride, 1);
        for (g, e) in tape.values(y).iter().zip(&want) {
            max = max.max((*g as f64 - e).abs());
        }
    }
    max
}

pub fn softmax_oracle_max_dev(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut max = 0.0f64;
    for _ in 0..instances {
        let n = r.gen_range(1..=8);
        let d = r.gen_range(2..=16);
        let x = rand_vec(&mut r, n * d, -4.0, 4.0);
        let mut tape = highlightnet::Tape::new();
        let xv = tape.leaf_values(&[n, d], x.clone(), false).unwrap();
        let y = tape.softmax_rows(xv).unwrap();
        for (g, e) in tape.values(y).iter().zip(&softmax_rows_oracle(&x, n, d)) {
            max = max.max((*g as f64 - e).abs());
        }
    }
    max
}

pub fn layer_norm_oracle_max_dev(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut max = 0.0f64;
    for _ in 0..instances {
        let n = r.gen_range(1..=8);
        let d = r.gen_range(2..=32);
        let x = rand_vec(&mut r, n * d, -2.0, 2.0);
        let g = rand_vec(&mut r, d, 0.5, 1.5);
        let s = rand_vec(&mut r, d, -0.5, 0.5);
        let mut tape = highlightnet::Tape::new();
        let xv = tape.leaf_values(&[n, d], x.clone(), false).unwrap();
        let gv = tape.leaf_values(&[d], g.clone(), false).unwrap();
        let sv = tape.leaf_values(&[d], s.clone(), false).unwrap();
        let y = tape.layer_norm(xv, gv, sv).unwrap();
        for (got, e) in tape.values(y).iter().zip(&layer_norm_oracle(&x, n, d, &g, &s)) {
            max = max.max((*got as f64 - e).abs());
        }
    }
    max
}

/// Max |impl - oracle| over all four losses on random 64x64 pairs.
pub fn losses_oracle_max_dev(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut max = 0.0f64;
    for _ in 0..instances {
        let (h, w) = (64usize, 64usize);
        let g: Vec<f32> = (0..h * w)
            .map(|_| {
                if r.gen_bool(0.1) {
                    r.gen_range(0.0..0.04)
                } else {
                    r.gen_range(0.0..1.0)
                }
            })
            .collect();
        let o: Vec<f32> = g.iter().map(|&v| (v + r.gen_range(0.0..0.3)).min(1.0)).collect();
        let mask = rand_vec(&mut r, h * w, 0.0, 1.0);
        let gt = highlightnet::Tensor::new(&[h, w], g.clone()).unwrap();
        let ot = highlightnet::Tensor::new(&[h, w], o.clone()).unwrap();
        let mt = highlightnet::Tensor::new(&[h, w], mask.clone()).unwrap();
        max = max.max((highlightnet::losses::l_dan(&gt, &ot).unwrap() as f64 - l_dan_oracle(&g, &o, h, w)).abs());
        max = max.max((highlightnet::losses::l_spa(&gt, &ot).unwrap() as f64 - l_spa_oracle(&g, &o, h, w)).abs());
        max = max.max((highlightnet::losses::l_exp(&ot).unwrap() as f64 - l_exp_oracle(&o, h, w)).abs());
        max = max.max((highlightnet::losses::l_tv(&mt).unwrap() as f64 - l_tv_oracle(&mask, h, w)).abs());
    }
    max
}

pub fn psnr_oracle_max_dev(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut max = 0.0f64;
    for _ in 0..instances {
        let h = r.gen_range(8..=32);
        let w = r.gen_range(8..=32);
        let a = Rgb32Image::new(h, w, rand_vec(&mut r, h * w * 3, 0.0, 1.0)).unwrap();
        let b = Rgb32Image::new(h, w, rand_vec(&mut r, h * w * 3, 0.0, 1.0)).unwrap();
        max = max.max((highlightnet::eval::psnr(&a, &b).unwrap() as f64 - psnr_oracle(&a, &b)).abs());
    }
    max
}

pub fn ssim_oracle_max_dev(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut max = 0.0f64;
    for _ in 0..instances {
        let h = r.gen_range(12..=24);
        let w = r.gen_range(12..=24);
        let a = Rgb32Image::new(h, w, rand_vec(&mut r, h * w * 3, 0.0, 1.0)).unwrap();
        let b = Rgb32Image::new(h, w, rand_vec(&mut r, h * w * 3, 0.0, 1.0)).unwrap();
        max = max.max((highlightnet::eval::ssim(&a, &b).unwrap() as f64 - ssim_oracle(&a, &b)).abs());
    }
    max
}

// ---- synthetic data ----------------------------------------------------------

/// Dark scene: a dim textured background (skewed towards low values) with a
/// couple of near-black "night sky" blobs, mildly colored channels. Mean
/// gray stays well under 0.15 and a few percent of pixels sit below the 0.04
/// dark threshold.
pub fn synthetic_dark_image(seed: u64, side: usize) -> Rgb32Image {
    let mut r = rng(seed);
    let blobs: Vec<(f32, f32, f32)> = (0..3)
        .map(|_| {
            (
                r.gen_range(0.0..side as f32),
                r.gen_range(0.0..side as f32),
                r.gen_range(side as f32 * 0.08..side as f32 * 0.18),
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
            // Night-sky blobs are near-black, well below the dark threshold.
            r.gen_range(0.0..0.005)
        } else {
            let u: f32 = r.gen_range(0.0..1.0);
            0.045 + 0.21 * u * u
        };
        let jr: f32 = r.gen_range(0.85..1.15);
        let jb: f32 = r.gen_range(0.85..1.15);
        data.extend_from_slice(&[(v * jr).clamp(0.0, 1.0), v, (v * jb).clamp(0.0, 1.0)]);
    }
    Rgb32Image::new(side, side, data).unwrap()
}

/// Bright square translating 2 px/frame; the ground-truth box is larger than
/// the square so the template carries its edges.
pub fn square_sequence(frames: usize) -> (Vec<Rgb32Image>, Vec<BoundingBox>) {
    let (h, w) = (96usize, 96usize);
    let sq = 16usize;
    let margin = 4usize;
    let y = 40usize;
    let mut imgs = Vec::new();
    let mut gt = Vec::new();
    for i in 0..frames {
        let x = 12 + 2 * i;
        let mut data = vec![0.05f32; h * w * 3];
        for r in y..y + sq {
            for c in x..x + sq {
                for ch in 0..3 {
                    data[(r * w + c) * 3 + ch] = 0.9;
                }
            }
        }
        imgs.push(Rgb32Image::new(h, w, data).unwrap());
        gt.push(
            BoundingBox::new(
                (x - margin) as f32,
                (y - margin) as f32,
                (sq + 2 * margin) as f32,
                (sq + 2 * margin) as f32,
            )
            .unwrap(),
        );
    }
    (imgs, gt)
}

/// Darkens to `factor` of the original intensity and adds clamped Gaussian
/// noise of the given sigma; one noise sample per pixel, shared across the
/// channels, so the gray channel sees the full sigma.
pub fn degrade(frames: &[Rgb32Image], factor: f32, sigma: f32, seed: u64) -> Vec<Rgb32Image> {
    let mut r = rng(seed);
    frames
        .iter()
        .map(|f| {
            let mut data = Vec::with_capacity(f.data.len());
            for px in f.data.chunks_exact(3) {
                let u1: f64 = r.gen::<f64>().max(1e-12);
                let u2: f64 = r.gen::<f64>();
                let n = ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32;
                for &v in px {
                    data.push((v * factor + sigma * n).clamp(0.0, 1.0));
                }
            }
            Rgb32Image::new(f.height, f.width, data).unwrap()
        })
        .collect()
}
