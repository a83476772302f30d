//! Plain fully connected networks with hand-written backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Architecture of a multilayer perceptron. Hidden layers share one
/// activation; the output layer is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, activation: Activation) -> Self {
        assert!(input_dim > 0 && output_dim > 0, "zero-width layer");
        assert!(hidden.iter().all(|&h| h > 0), "zero-width hidden layer");
        MlpSpec { input_dim, hidden: hidden.to_vec(), output_dim, activation }
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden.len() + 2);
        d.push(self.input_dim);
        d.extend_from_slice(&self.hidden);
        d.push(self.output_dim);
        d
    }

    pub fn layer_count(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn param_len(&self) -> usize {
        let d = self.dims();
        (0..self.layer_count()).map(|l| d[l + 1] * d[l] + d[l + 1]).sum()
    }

    /// Named segment shapes (`{prefix}w{l}` row-major `[out, in]`, then
    /// `{prefix}b{l}`), in the order the flat parameter slice stores them.
    pub fn layout(&self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        let d = self.dims();
        let mut out = Vec::with_capacity(2 * self.layer_count());
        for l in 0..self.layer_count() {
            out.push((format!("{prefix}w{l}"), vec![d[l + 1], d[l]]));
            out.push((format!("{prefix}b{l}"), vec![d[l + 1]]));
        }
        out
    }
}

/// Glorot-uniform weights, zero biases, fully determined by `seed`.
pub fn glorot_init(spec: &MlpSpec, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.dims();
    let mut params = Vec::with_capacity(spec.param_len());
    for l in 0..spec.layer_count() {
        let (n_out, n_in) = (d[l + 1], d[l]);
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        for _ in 0..n_out * n_in {
            let u: f64 = rng.random();
            params.push((2.0 * u - 1.0) * limit);
        }
        params.extend(std::iter::repeat(0.0).take(n_out));
    }
    params
}

/// Runs the network. Panics on dimension mismatch: shapes are part of the
/// caller's configuration contract, not runtime data.
pub fn mlp_forward(spec: &MlpSpec, params: &[f64], x: &[f64]) -> Vec<f64> {
    assert_eq!(params.len(), spec.param_len(), "parameter slice length mismatch");
    assert_eq!(x.len(), spec.input_dim, "input dimension mismatch");
    let d = spec.dims();
    let last = spec.layer_count() - 1;
    let mut cur = x.to_vec();
    let mut offset = 0;
    for l in 0..spec.layer_count() {
        let (n_out, n_in) = (d[l + 1], d[l]);
        let w = &params[offset..offset + n_out * n_in];
        let b = &params[offset + n_out * n_in..offset + n_out * n_in + n_out];
        offset += n_out * n_in + n_out;
        let mut next = Vec::with_capacity(n_out);
        for j in 0..n_out {
            let row = &w[j * n_in..(j + 1) * n_in];
            let mut z = b[j];
            for i in 0..n_in {
                z = row[i].mul_add(cur[i], z);
            }
            next.push(if l < last { spec.activation.apply(z) } else { z });
        }
        cur = next;
    }
    cur
}

/// Reverse pass. Accumulates parameter gradients into `grad` (same layout
/// as `params`) and returns the gradient with respect to `x`.
pub fn mlp_backward(
    spec: &MlpSpec,
    params: &[f64],
    x: &[f64],
    grad_out: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    assert_eq!(params.len(), spec.param_len(), "parameter slice length mismatch");
    assert_eq!(grad.len(), spec.param_len(), "gradient slice length mismatch");
    assert_eq!(x.len(), spec.input_dim, "input dimension mismatch");
    assert_eq!(grad_out.len(), spec.output_dim, "output gradient dimension mismatch");

    let d = spec.dims();
    let last = spec.layer_count() - 1;

    // Forward, keeping every post-activation (input counts as layer 0).
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(spec.layer_count() + 1);
    acts.push(x.to_vec());
    let mut layer_offsets = Vec::with_capacity(spec.layer_count());
    let mut offset = 0;
    for l in 0..spec.layer_count() {
        let (n_out, n_in) = (d[l + 1], d[l]);
        layer_offsets.push(offset);
        let w = &params[offset..offset + n_out * n_in];
        let b = &params[offset + n_out * n_in..offset + n_out * n_in + n_out];
        offset += n_out * n_in + n_out;
        let cur = &acts[l];
        let mut next = Vec::with_capacity(n_out);
        for j in 0..n_out {
            let row = &w[j * n_in..(j + 1) * n_in];
            let mut z = b[j];
            for i in 0..n_in {
                z = row[i].mul_add(cur[i], z);
            }
            next.push(if l < last { spec.activation.apply(z) } else { z });
        }
        acts.push(next);
    }

    let mut delta = grad_out.to_vec();
    for l in (0..spec.layer_count()).rev() {
        let (n_out, n_in) = (d[l + 1], d[l]);
        if l < last {
            for j in 0..n_out {
                delta[j] *= spec.activation.derivative_from_output(acts[l + 1][j]);
            }
        }
        let off = layer_offsets[l];
        let input = &acts[l];
        {
            let (gw, gb) = grad[off..off + n_out * n_in + n_out].split_at_mut(n_out * n_in);
            for j in 0..n_out {
                gb[j] += delta[j];
                let row = &mut gw[j * n_in..(j + 1) * n_in];
                for i in 0..n_in {
                    row[i] = delta[j].mul_add(input[i], row[i]);
                }
            }
        }
        let w = &params[off..off + n_out * n_in];
        let mut prev = vec![0.0; n_in];
        for j in 0..n_out {
            let row = &w[j * n_in..(j + 1) * n_in];
            for i in 0..n_in {
                prev[i] = delta[j].mul_add(row[i], prev[i]);
            }
        }
        delta = prev;
    }
    delta
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(activation: Activation) -> MlpSpec {
        MlpSpec::new(2, &[2], 1, activation)
    }

    #[test]
    fn param_len_counts_weights_and_biases() {
        let spec = MlpSpec::new(3, &[8, 8], 2, Activation::Relu);
        assert_eq!(spec.param_len(), 3 * 8 + 8 + 8 * 8 + 8 + 8 * 2 + 2);
        let layout = spec.layout("q.");
        assert_eq!(layout[0], ("q.w0".to_string(), vec![8, 3]));
        assert_eq!(layout[5], ("q.b2".to_string(), vec![2]));
    }

    #[test]
    fn forward_matches_hand_computation() {
        let spec = tiny_spec(Activation::Tanh);
        // identity first layer, summing head with bias 0.5
        let params = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.5];
        let y = mlp_forward(&spec, &params, &[0.3, -0.2]);
        assert_eq!(y.len(), 1);
        let expected = 0.3f64.tanh() + (-0.2f64).tanh() + 0.5;
        assert!((y[0] - expected).abs() < 1e-15);
        assert!((y[0] - 0.5939372922266869).abs() < 1e-12);
    }

    #[test]
    fn relu_zeroes_negative_preactivations() {
        let spec = tiny_spec(Activation::Relu);
        let params = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let y = mlp_forward(&spec, &params, &[-0.7, 0.4]);
        assert!((y[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "input dimension mismatch")]
    fn forward_rejects_wrong_input_dim() {
        let spec = tiny_spec(Activation::Tanh);
        let params = vec![0.0; spec.param_len()];
        let _ = mlp_forward(&spec, &params, &[1.0]);
    }

    #[test]
    fn glorot_init_is_seed_deterministic() {
        let spec = MlpSpec::new(4, &[16], 3, Activation::Tanh);
        let a = glorot_init(&spec, 9);
        let b = glorot_init(&spec, 9);
        let c = glorot_init(&spec, 10);
        assert_eq!(a, b);
        assert_ne!(a, c);
        // biases stay zero
        let bias0 = 4 * 16;
        assert!(a[bias0..bias0 + 16].iter().all(|&v| v == 0.0));
        let limit = (6.0 / 20.0f64).sqrt();
        assert!(a[..bias0].iter().all(|&v| v.abs() < limit));
    }

    fn fd_check(activation: Activation, seed: u64) {
        let spec = MlpSpec::new(3, &[5, 4], 2, activation);
        let params = glorot_init(&spec, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let g_out: Vec<f64> = (0..2).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let loss = |p: &[f64], xin: &[f64]| -> f64 {
            let y = mlp_forward(&spec, p, xin);
            y.iter().zip(&g_out).map(|(a, b)| a * b).sum()
        };

        let mut grad = vec![0.0; spec.param_len()];
        let gx = mlp_backward(&spec, &params, &x, &g_out, &mut grad);

        let h = 1e-6;
        let mut worst = 0.0f64;
        let mut p = params.clone();
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + h;
            let up = loss(&p, &x);
            p[i] = orig - h;
            let down = loss(&p, &x);
            p[i] = orig;
            let num = (up - down) / (2.0 * h);
            let rel = (grad[i] - num).abs() / grad[i].abs().max(num.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        let mut xv = x.clone();
        for i in 0..xv.len() {
            let orig = xv[i];
            xv[i] = orig + h;
            let up = loss(&params, &xv);
            xv[i] = orig - h;
            let down = loss(&params, &xv);
            xv[i] = orig;
            let num = (up - down) / (2.0 * h);
            let rel = (gx[i] - num).abs() / gx[i].abs().max(num.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-6, "finite-difference mismatch: {worst}");
    }

    #[test]
    fn backward_matches_finite_differences_tanh() {
        for seed in 0..3 {
            fd_check(Activation::Tanh, 100 + seed);
        }
    }

    #[test]
    fn backward_matches_finite_differences_relu() {
        for seed in 0..3 {
            fd_check(Activation::Relu, 200 + seed);
        }
    }

    #[test]
    fn backward_accumulates_into_existing_gradient() {
        let spec = tiny_spec(Activation::Tanh);
        let params = glorot_init(&spec, 5);
        let mut g1 = vec![0.0; spec.param_len()];
        mlp_backward(&spec, &params, &[0.1, 0.2], &[1.0], &mut g1);
        let mut g2 = g1.clone();
        mlp_backward(&spec, &params, &[0.1, 0.2], &[1.0], &mut g2);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
    }
}
