use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::tensor::{numel_of, ParamStore, Tape, Tensor};

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rt(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..numel_of(shape)).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn set_param(store: &mut ParamStore<f64>, id: crate::tensor::ParamId, values: Vec<f64>) {
    store.param_mut(id).value = values;
}

#[test]
fn linear_identity_passthrough() {
    let mut store = ParamStore::<f64>::new();
    let lin = Linear::new(&mut store, "lin", 3, 3, true, &mut rng(1));
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 3 + i] = 1.0;
    }
    set_param(&mut store, lin.weight, eye);
    let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = lin.forward(&mut tape, &store, xv).unwrap();
    assert_eq!(tape.value(y).data, x.data);
}

#[test]
fn linear_hand_example() {
    // in=2, out=1, W=[[1,1]], b=[0.5], x=[[1,2]] -> [[3.5]]
    let mut store = ParamStore::<f64>::new();
    let lin = Linear::new(&mut store, "lin", 2, 1, true, &mut rng(2));
    set_param(&mut store, lin.weight, vec![1.0, 1.0]);
    set_param(&mut store, lin.bias.unwrap(), vec![0.5]);
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap());
    let y = lin.forward(&mut tape, &store, xv).unwrap();
    assert_eq!(tape.value(y).data, vec![3.5]);
}

#[test]
fn linear_rejects_extent_mismatch() {
    let mut store = ParamStore::<f64>::new();
    let lin = Linear::new(&mut store, "lin", 2, 4, true, &mut rng(3));
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::<f64>::zeros(&[1, 3]));
    assert!(matches!(
        lin.forward(&mut tape, &store, xv),
        Err(Error::Shape(_))
    ));
}

#[test]
fn linear_parameter_count() {
    let mut store = ParamStore::<f64>::new();
    let _lin = Linear::new(&mut store, "lin", 4, 3, true, &mut rng(4));
    assert_eq!(store.count_trainable(), 15); // 12 weights + 3 biases
}

#[test]
fn conv_identity_1x1_depthwise() {
    let mut store = ParamStore::<f64>::new();
    let conv = Conv2d::new(&mut store, "c", 3, 3, (1, 1), 1, 0, 3, true, &mut rng(5));
    set_param(&mut store, conv.weight, vec![1.0, 1.0, 1.0]);
    let x = rt(&mut rng(6), &[2, 3, 4, 4], -1.0, 1.0);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = conv.forward(&mut tape, &store, xv).unwrap();
    assert_eq!(tape.value(y).data, x.data);
}

#[test]
fn conv_all_ones_3x3_sums_input() {
    let mut store = ParamStore::<f64>::new();
    let conv = Conv2d::new(&mut store, "c", 1, 1, (3, 3), 1, 0, 1, false, &mut rng(7));
    set_param(&mut store, conv.weight, vec![1.0; 9]);
    let x = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let y = conv.forward(&mut tape, &store, xv).unwrap();
    assert_eq!(tape.value(y).shape, vec![1, 1, 1, 1]);
    assert_eq!(tape.value(y).data, vec![45.0]);
}

// quadruple-loop reference convolution, groups=1, written independently
fn conv_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &[f64],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let (n, c, h, wid) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (oc, _, kh, kw) = (w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wid + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * oc * oh * ow];
    for ni in 0..n {
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wid as isize {
                                    continue;
                                }
                                acc += x.data
                                    [((ni * c + ic) * h + iy as usize) * wid + ix as usize]
                                    * w.data[((o * c + ic) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((ni * oc + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv_matches_naive_oracle() {
    let mut r = rng(8);
    // (stride, pad, input size) combos with integral output extents
    let combos = [(1, 0, 8), (1, 1, 8), (2, 1, 9), (2, 0, 9), (3, 0, 6)];
    for (trial, &(stride, pad, size)) in combos.iter().cycle().take(10).enumerate() {
        let x = rt(&mut r, &[1, 2, size, size], -1.0, 1.0);
        let w = rt(&mut r, &[3, 2, 3, 3], -0.5, 0.5);
        let b: Vec<f64> = (0..3).map(|_| r.gen_range(-0.5..0.5)).collect();
        let expected = conv_oracle(&x, &w, &b, stride, pad);

        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        let bv = tape.constant(Tensor::from_vec(&[3], b.clone()).unwrap());
        let y = tape.conv2d(xv, wv, Some(bv), stride, pad, 1).unwrap();
        for (a, e) in tape.value(y).data.iter().zip(&expected) {
            assert!((a - e).abs() < 1e-6, "conv mismatch trial {trial}");
        }
    }
}

#[test]
fn conv_rejects_non_integral_output() {
    let mut store = ParamStore::<f64>::new();
    let conv = Conv2d::new(&mut store, "c", 1, 1, (3, 3), 2, 0, 1, false, &mut rng(9));
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::<f64>::zeros(&[1, 1, 6, 6]));
    assert!(matches!(
        conv.forward(&mut tape, &store, xv),
        Err(Error::Shape(_))
    ));
}

#[test]
fn depthwise_separable_identity_and_count() {
    let mut store = ParamStore::<f64>::new();
    let _ds = DepthwiseSeparable::new(&mut store, "ds", 3, 8, (3, 3), 1, &mut rng(10));
    // (27 + 3) depthwise + (24 + 8) pointwise
    assert_eq!(store.count_trainable(), 62);

    // identity: depthwise delta kernel, pointwise 3->3 identity
    let mut store2 = ParamStore::<f64>::new();
    let ds2 = DepthwiseSeparable::new(&mut store2, "ds", 3, 3, (3, 3), 1, &mut rng(11));
    let mut delta = vec![0.0; 3 * 9];
    for c in 0..3 {
        delta[c * 9 + 4] = 1.0; // center tap
    }
    set_param(&mut store2, ds2.depthwise.weight, delta);
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 3 + i] = 1.0;
    }
    set_param(&mut store2, ds2.pointwise.weight, eye);
    let x = rt(&mut rng(12), &[1, 3, 5, 5], -1.0, 1.0);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = ds2.forward(&mut tape, &store2, xv).unwrap();
    assert_eq!(tape.value(y).data, x.data);
}

#[test]
fn depthwise_separable_equals_composed_oracles() {
    // depthwise as grouped conv == per-channel naive conv, then 1x1 pointwise
    let mut r = rng(13);
    let x = rt(&mut r, &[1, 3, 6, 6], -1.0, 1.0);
    let mut store = ParamStore::<f64>::new();
    let ds = DepthwiseSeparable::new(&mut store, "ds", 3, 4, (3, 3), 1, &mut r);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let got = ds.forward(&mut tape, &store, xv).unwrap();

    // oracle: each channel convolved with its own 1-channel kernel
    let dw = store.param(ds.depthwise.weight);
    let dwb = store.param(ds.depthwise.bias.unwrap());
    let mut mid = vec![0.0; 3 * 6 * 6];
    for c in 0..3 {
        let xc = Tensor::from_vec(&[1, 1, 6, 6], x.data[c * 36..(c + 1) * 36].to_vec()).unwrap();
        let wc = Tensor::from_vec(&[1, 1, 3, 3], dw.value[c * 9..(c + 1) * 9].to_vec()).unwrap();
        let out = conv_oracle(&xc, &wc, &[dwb.value[c]], 1, 1);
        mid[c * 36..(c + 1) * 36].copy_from_slice(&out);
    }
    let pw = store.param(ds.pointwise.weight);
    let pwb = store.param(ds.pointwise.bias.unwrap());
    let mid_t = Tensor::from_vec(&[1, 3, 6, 6], mid).unwrap();
    let pw_t = Tensor::from_vec(&[4, 3, 1, 1], pw.value.clone()).unwrap();
    let expected = conv_oracle(&mid_t, &pw_t, &pwb.value, 1, 0);
    for (a, e) in tape.value(got).data.iter().zip(&expected) {
        assert!((a - e).abs() < 1e-9);
    }
}

#[test]
fn layer_norm_constant_row_is_beta() {
    let mut store = ParamStore::<f64>::new();
    let ln = LayerNorm::new(&mut store, "ln", 3);
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::from_vec(&[1, 3], vec![1.0, 1.0, 1.0]).unwrap());
    let y = ln.forward(&mut tape, &store, xv).unwrap();
    assert_eq!(tape.value(y).data, vec![0.0, 0.0, 0.0]);
}

#[test]
fn layer_norm_unit_variance_row() {
    let mut store = ParamStore::<f64>::new();
    let ln = LayerNorm::new(&mut store, "ln", 2);
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::from_vec(&[1, 2], vec![1.0, -1.0]).unwrap());
    let y = ln.forward(&mut tape, &store, xv).unwrap();
    // closed form with eps = 1e-5: +-1 / sqrt(1 + eps)
    let expected = 1.0 / (1.0 + 1e-5f64).sqrt();
    assert!((tape.value(y).data[0] - expected).abs() < 1e-12);
    assert!((tape.value(y).data[1] + expected).abs() < 1e-12);
    assert!((tape.value(y).data[0] - 1.0).abs() < 1e-4);
}

#[test]
fn batch_norm_eval_is_bitwise_deterministic() {
    let mut store = ParamStore::<f64>::new();
    let bn = BatchNorm2d::new(&mut store, "bn", 2);
    let x = rt(&mut rng(14), &[2, 2, 3, 3], -1.0, 1.0);
    let run = |store: &mut ParamStore<f64>| {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = bn.forward(&mut tape, store, xv, Mode::Eval).unwrap();
        tape.value(y).data.clone()
    };
    let a = run(&mut store);
    let b = run(&mut store);
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn batch_norm_train_updates_running_stats() {
    let mut store = ParamStore::<f64>::new();
    let bn = BatchNorm2d::new(&mut store, "bn", 1);
    let x = Tensor::from_vec(&[1, 1, 2, 2], vec![2.0, 2.0, 2.0, 2.0]).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    bn.forward(&mut tape, &mut store, xv, Mode::Train).unwrap();
    // running_mean = 0.9 * 0 + 0.1 * 2, running_var = 0.9 * 1 + 0.1 * 0
    assert!((store.buffer(bn.running_mean).value[0] - 0.2).abs() < 1e-12);
    assert!((store.buffer(bn.running_var).value[0] - 0.9).abs() < 1e-12);
}

#[test]
fn relu_examples_and_gradient() {
    let mut tape = Tape::new();
    let xv = tape.input(Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
    let y = tape.relu(xv);
    assert_eq!(tape.value(y).data, vec![0.0, 0.0, 2.0]);

    let mut tape = Tape::new();
    let xv = tape.input(Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap());
    let y = tape.relu(xv);
    let loss = tape.sum_all(y);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(xv).unwrap(), &[0.0, 1.0]);

    let mut tape = Tape::new();
    let pos = Tensor::from_vec(&[3], vec![0.5, 1.0, 7.0]).unwrap();
    let xv = tape.constant(pos.clone());
    let y = tape.relu(xv);
    assert_eq!(tape.value(y).data, pos.data);
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap());
    let y = tape.softmax(xv, 1).unwrap();
    assert_eq!(tape.value(y).data, vec![0.5, 0.5]);

    let xv = tape.constant(Tensor::from_vec(&[1, 2], vec![2.0f64.ln(), 0.0]).unwrap());
    let y = tape.softmax(xv, 1).unwrap();
    assert!((tape.value(y).data[0] - 2.0 / 3.0).abs() < 1e-9);
    assert!((tape.value(y).data[1] - 1.0 / 3.0).abs() < 1e-9);

    // shift invariance and argmax preservation
    let mut r = rng(15);
    let x = rt(&mut r, &[1, 6], -3.0, 3.0);
    let shifted = Tensor::from_vec(&[1, 6], x.data.iter().map(|v| v + 123.0).collect()).unwrap();
    let xv = tape.constant(x.clone());
    let sv = tape.constant(shifted);
    let a = tape.softmax(xv, 1).unwrap();
    let b = tape.softmax(sv, 1).unwrap();
    let (av, bv) = (tape.value(a).data.clone(), tape.value(b).data.clone());
    let sum: f64 = av.iter().sum();
    assert!((sum - 1.0).abs() < 1e-6);
    for (p, q) in av.iter().zip(&bv) {
        assert!((p - q).abs() < 1e-6);
    }
    let argmax = |v: &[f64]| {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0
    };
    assert_eq!(argmax(&av), argmax(&x.data));
}

fn identity_attention(store: &mut ParamStore<f64>, attn: &MultiHeadAttention) {
    let d = attn.embed_dim;
    let mut eye = vec![0.0; d * d];
    for i in 0..d {
        eye[i * d + i] = 1.0;
    }
    for lin in [&attn.q_proj, &attn.k_proj, &attn.v_proj, &attn.out_proj] {
        store.param_mut(lin.weight).value = eye.clone();
    }
}

#[test]
fn attention_single_token_identity() {
    let mut store = ParamStore::<f64>::new();
    let attn = MultiHeadAttention::new(&mut store, "attn", 4, 2, &mut rng(16));
    identity_attention(&mut store, &attn);
    let x = rt(&mut rng(17), &[2, 1, 4], -1.0, 1.0);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = attn.forward(&mut tape, &store, xv).unwrap();
    for (a, e) in tape.value(y).data.iter().zip(&x.data) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn attention_identical_tokens_average_to_token() {
    let mut store = ParamStore::<f64>::new();
    let attn = MultiHeadAttention::new(&mut store, "attn", 4, 2, &mut rng(18));
    identity_attention(&mut store, &attn);
    let token: Vec<f64> = vec![0.3, -0.7, 1.1, 0.2];
    let mut data = token.clone();
    data.extend_from_slice(&token);
    let x = Tensor::from_vec(&[1, 2, 4], data).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let y = attn.forward(&mut tape, &store, xv).unwrap();
    for row in 0..2 {
        for j in 0..4 {
            assert!((tape.value(y).data[row * 4 + j] - token[j]).abs() < 1e-12);
        }
    }
}

// direct per-head attention computed from the raw projection matrices
fn attention_oracle(
    store: &ParamStore<f64>,
    attn: &MultiHeadAttention,
    x: &Tensor<f64>,
) -> Vec<f64> {
    let (n, t, d) = (x.shape[0], x.shape[1], x.shape[2]);
    let hd = d / attn.num_heads;
    let project = |lin: &Linear, row: &[f64]| -> Vec<f64> {
        let w = &store.param(lin.weight).value;
        let b = &store.param(lin.bias.unwrap()).value;
        (0..d)
            .map(|o| {
                let mut acc = b[o];
                for i in 0..d {
                    acc += w[o * d + i] * row[i];
                }
                acc
            })
            .collect()
    };
    let mut out = vec![0.0; n * t * d];
    for ni in 0..n {
        let rows: Vec<&[f64]> = (0..t)
            .map(|ti| &x.data[(ni * t + ti) * d..(ni * t + ti + 1) * d])
            .collect();
        let q: Vec<Vec<f64>> = rows.iter().map(|r| project(&attn.q_proj, r)).collect();
        let k: Vec<Vec<f64>> = rows.iter().map(|r| project(&attn.k_proj, r)).collect();
        let v: Vec<Vec<f64>> = rows.iter().map(|r| project(&attn.v_proj, r)).collect();
        let mut merged = vec![vec![0.0; d]; t];
        for h in 0..attn.num_heads {
            let span = h * hd..(h + 1) * hd;
            for ti in 0..t {
                let scores: Vec<f64> = (0..t)
                    .map(|tj| {
                        let dot: f64 = q[ti][span.clone()]
                            .iter()
                            .zip(&k[tj][span.clone()])
                            .map(|(a, b)| a * b)
                            .sum();
                        dot / (hd as f64).sqrt()
                    })
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let denom: f64 = exps.iter().sum();
                for (tj, e) in exps.iter().enumerate() {
                    for (jj, vj) in v[tj][span.clone()].iter().enumerate() {
                        merged[ti][h * hd + jj] += e / denom * vj;
                    }
                }
            }
        }
        for ti in 0..t {
            let o = project(&attn.out_proj, &merged[ti]);
            out[(ni * t + ti) * d..(ni * t + ti + 1) * d].copy_from_slice(&o);
        }
    }
    out
}

#[test]
fn attention_matches_per_head_oracle() {
    let mut r = rng(19);
    let mut store = ParamStore::<f64>::new();
    let attn = MultiHeadAttention::new(&mut store, "attn", 8, 2, &mut r);
    let x = rt(&mut r, &[1, 4, 8], -1.0, 1.0);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = attn.forward(&mut tape, &store, xv).unwrap();
    let expected = attention_oracle(&store, &attn, &x);
    for (a, e) in tape.value(y).data.iter().zip(&expected) {
        assert!((a - e).abs() < 1e-6);
    }
}

#[test]
fn ffn_zeroed_second_layer() {
    let mut store = ParamStore::<f64>::new();
    let ffn = FeedForward::new(&mut store, "ffn", 3, 6, &mut rng(20));
    store.param_mut(ffn.fc2.weight).value = vec![0.0; 18];
    let x = rt(&mut rng(21), &[2, 3], -1.0, 1.0);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let y = ffn.forward(&mut tape, &store, xv).unwrap();
    assert!(tape.value(y).data.iter().all(|&v| v == 0.0));
}

#[test]
fn ffn_hand_example() {
    // 2->2->2, all-ones weights, zero bias, x=[[1,-1]] -> [[0,0]]
    let mut store = ParamStore::<f64>::new();
    let ffn = FeedForward::new(&mut store, "ffn", 2, 2, &mut rng(22));
    store.param_mut(ffn.fc1.weight).value = vec![1.0; 4];
    store.param_mut(ffn.fc2.weight).value = vec![1.0; 4];
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::from_vec(&[1, 2], vec![1.0, -1.0]).unwrap());
    let y = ffn.forward(&mut tape, &store, xv).unwrap();
    assert_eq!(tape.value(y).data, vec![0.0, 0.0]);
}

#[test]
fn patch_embed_token_counts() {
    let mut store = ParamStore::<f64>::new();
    let pe = PatchEmbed::new(&mut store, "patch", 3, 16, 8, &mut rng(23));
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::<f64>::zeros(&[1, 3, 224, 224]));
    let tokens = pe.forward(&mut tape, &store, xv).unwrap();
    assert_eq!(tape.value(tokens).shape, vec![1, 196, 8]);

    let mut store = ParamStore::<f64>::new();
    let pe = PatchEmbed::new(&mut store, "patch", 3, 8, 4, &mut rng(24));
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::<f64>::zeros(&[2, 3, 32, 32]));
    let tokens = pe.forward(&mut tape, &store, xv).unwrap();
    assert_eq!(tape.value(tokens).shape, vec![2, 16, 4]);

    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::<f64>::zeros(&[1, 3, 30, 30]));
    assert!(matches!(
        pe.forward(&mut tape, &store, xv),
        Err(Error::Shape(_))
    ));
}

#[test]
fn positional_table_add() {
    let mut store = ParamStore::<f64>::new();
    let pos = PositionalTable::new(&mut store, "pos", 4, 2);
    let x = rt(&mut rng(25), &[2, 4, 2], -1.0, 1.0);

    // zero table leaves tokens unchanged
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = pos.add(&mut tape, &store, xv).unwrap();
    assert_eq!(tape.value(y).data, x.data);

    // all-ones table increments every element
    store.param_mut(pos.table).value = vec![1.0; 8];
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = pos.add(&mut tape, &store, xv).unwrap();
    for (a, e) in tape.value(y).data.iter().zip(&x.data) {
        assert_eq!(*a, e + 1.0);
    }
}

#[test]
fn positional_table_breaks_permutation_symmetry() {
    let mut store = ParamStore::<f64>::new();
    let pos = PositionalTable::new(&mut store, "pos", 2, 2);
    store.param_mut(pos.table).value = vec![0.0, 0.0, 5.0, 5.0]; // non-constant
    let fwd = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let rev = Tensor::from_vec(&[1, 2, 2], vec![3.0, 4.0, 1.0, 2.0]).unwrap();
    let mut tape = Tape::new();
    let a = tape.constant(fwd);
    let b = tape.constant(rev);
    let ya = pos.add(&mut tape, &store, a).unwrap();
    let yb = pos.add(&mut tape, &store, b).unwrap();
    // tokens permuted, output is not merely the same permutation
    let va = tape.value(ya).data.clone();
    let vb = tape.value(yb).data.clone();
    assert_ne!(&va[0..2], &vb[2..4]);
}

#[test]
fn avg_pool_examples() {
    let mut tape = Tape::new();
    let constv = tape.constant(Tensor::filled(&[1, 1, 4, 4], 3.25f64));
    let y = tape.avg_pool(constv, 2, 2).unwrap();
    assert!(tape.value(y).data.iter().all(|&v| v == 3.25));

    let xv = tape.constant(Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = tape.avg_pool(xv, 1, 1).unwrap();
    assert_eq!(tape.value(y).data, vec![2.5]);

    // per-channel mean is preserved under exact tiling
    let x = rt(&mut rng(26), &[2, 3, 4, 4], -1.0, 1.0);
    let xv = tape.constant(x.clone());
    let y = tape.avg_pool(xv, 2, 2).unwrap();
    for nc in 0..6 {
        let before: f64 = x.data[nc * 16..(nc + 1) * 16].iter().sum::<f64>() / 16.0;
        let after: f64 = tape.value(y).data[nc * 4..(nc + 1) * 4].iter().sum::<f64>() / 4.0;
        assert!((before - after).abs() < 1e-6);
    }

    let bad = tape.constant(Tensor::<f64>::zeros(&[1, 1, 4, 4]));
    assert!(tape.avg_pool(bad, 3, 3).is_err());
}
