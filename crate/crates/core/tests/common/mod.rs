//! Oracles and checking helpers shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slu::ndnum::{rel_err, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Central finite differences of `f` with respect to `inputs[which]`.
pub fn central_diff(
    inputs: &[Tensor<f64>],
    which: usize,
    h: f64,
    f: &dyn Fn(&[Tensor<f64>]) -> f64,
) -> Tensor<f64> {
    let mut work = inputs.to_vec();
    let n = work[which].len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let orig = work[which].data()[i];
        work[which].data_mut()[i] = orig + h;
        let up = f(&work);
        work[which].data_mut()[i] = orig - h;
        let down = f(&work);
        work[which].data_mut()[i] = orig;
        out[i] = (up - down) / (2.0 * h);
    }
    Tensor::from_vec(inputs[which].shape(), out).unwrap()
}

/// Largest element-wise `|a−b|/max(1,|a|,|b|)`.
pub fn max_rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}

/// Plain triple loop.
pub fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.data()[i * k + p] * b.data()[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    Tensor::from_vec(&[m, n], out).unwrap()
}

/// O(N²) DFT returning (re, im) for bins `0..=n/2`.
pub fn naive_dft(x: &[f64], n: usize) -> Vec<(f64, f64)> {
    (0..=n / 2)
        .map(|k| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, &v) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            (re, im)
        })
        .collect()
}

/// Nested-loop linear convolution truncated to the signal length.
pub fn naive_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for n in 0..x.len() {
        for k in 0..h.len() {
            if k <= n {
                y[n] += h[k] * x[n - k];
            }
        }
    }
    y
}

/// Word-level Levenshtein distance.
pub fn edit_distance(a: &[String], b: &[String]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Scalar-loop GRU cell: `w` is 3H×I, `u` is 3H×H, gate order (z, r, n).
pub fn scalar_gru_step(x: &[f64], h: &[f64], w: &[f64], u: &[f64], b: &[f64]) -> Vec<f64> {
    let hd = h.len();
    let id = x.len();
    let pre = |row: usize, hv: &[f64]| -> f64 {
        let mut s = b[row];
        for i in 0..id {
            s += w[row * id + i] * x[i];
        }
        for j in 0..hd {
            s += u[row * hd + j] * hv[j];
        }
        s
    };
    let z: Vec<f64> = (0..hd).map(|j| sigmoid(pre(j, h))).collect();
    let r: Vec<f64> = (0..hd).map(|j| sigmoid(pre(hd + j, h))).collect();
    let rh: Vec<f64> = (0..hd).map(|j| r[j] * h[j]).collect();
    (0..hd)
        .map(|j| {
            let n = pre(2 * hd + j, &rh).tanh();
            (1.0 - z[j]) * h[j] + z[j] * n
        })
        .collect()
}

/// Worst relative error between tape gradients and central differences of
/// the mean cross-entropy, for every named parameter tensor.
pub fn network_param_gradcheck<N: slu::nn::Network<f64>>(
    net: &N,
    inputs: &[&N::Input],
    labels: &[usize],
    mode: slu::nn::Mode,
    h: f64,
) -> Vec<(String, f64)> {
    use slu::ndnum::Tape;
    use slu::nn::bind_params;
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, net);
    let fwd = net.forward(&mut tape, &vars, inputs, mode, false).unwrap();
    let loss = tape.softmax_xent(fwd.logits, labels).unwrap();
    let g = tape.backward(loss).unwrap();

    let named = net.named_params();
    let values: Vec<Tensor<f64>> = named.iter().map(|(_, t)| (*t).clone()).collect();
    let f = |ps: &[Tensor<f64>]| {
        let mut n = net.clone();
        for (slot, p) in n.params_mut().into_iter().zip(ps) {
            *slot = p.clone();
        }
        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, &n);
        let fwd = n.forward(&mut tape, &vars, inputs, mode, false).unwrap();
        let loss = tape.softmax_xent(fwd.logits, labels).unwrap();
        tape.value(loss).item()
    };
    named
        .iter()
        .enumerate()
        .map(|(k, (name, _))| (name.clone(), max_rel_err(&g.get(vars[k]), &central_diff(&values, k, h, &f))))
        .collect()
}

/// Same check for the input feature matrices.
pub fn network_input_gradcheck<N: slu::nn::Network<f64, Input = Tensor<f64>>>(
    net: &N,
    inputs: &[Tensor<f64>],
    labels: &[usize],
    mode: slu::nn::Mode,
    h: f64,
) -> f64 {
    use slu::ndnum::Tape;
    use slu::nn::bind_params;
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, net);
    let fwd = net.forward(&mut tape, &vars, &refs, mode, true).unwrap();
    let loss = tape.softmax_xent(fwd.logits, labels).unwrap();
    let g = tape.backward(loss).unwrap();
    let f = |xs: &[Tensor<f64>]| {
        let refs: Vec<&Tensor<f64>> = xs.iter().collect();
        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, net);
        let fwd = net.forward(&mut tape, &vars, &refs, mode, false).unwrap();
        let loss = tape.softmax_xent(fwd.logits, labels).unwrap();
        tape.value(loss).item()
    };
    (0..inputs.len())
        .map(|k| max_rel_err(&g.get(fwd.inputs[k]), &central_diff(inputs, k, h, &f)))
        .fold(0.0, f64::max)
}

/// Sine burst plus low-level white noise, peak below 0.5.
pub fn tone(freq: f64, seconds: f64, sample_rate: u32, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = (seconds * sample_rate as f64).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            0.3 * (2.0 * std::f64::consts::PI * freq * t).sin() + noise * rng.gen_range(-1.0..1.0)
        })
        .collect()
}
