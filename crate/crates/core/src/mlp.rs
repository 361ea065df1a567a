//! Two-layer perceptron (ReLU hidden layer, linear output) over a flat
//! parameter slice, with a manual backward pass.
//!
//! Parameter order inside the slice: `W1 (h x in)`, `b1 (h)`, `W2 (out x h)`,
//! `b2 (out)`, all row-major.

use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl MlpShape {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        assert!(input >= 1 && hidden >= 1 && output >= 1);
        Self {
            input,
            hidden,
            output,
        }
    }

    pub fn len(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        (b1, w2, b2)
    }

    /// He-scaled hidden weights, `1/sqrt(h)` output weights, zero biases.
    pub fn init(&self, out: &mut [f64], rng: &mut impl Rng) {
        assert_eq!(out.len(), self.len());
        let (b1, w2, b2) = self.offsets();
        let n1 = Normal::new(0.0, (2.0 / self.input as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, (1.0 / self.hidden as f64).sqrt()).unwrap();
        for v in &mut out[..b1] {
            *v = n1.sample(rng);
        }
        for v in &mut out[b1..w2] {
            *v = 0.0;
        }
        for v in &mut out[w2..b2] {
            *v = n2.sample(rng);
        }
        for v in &mut out[b2..] {
            *v = 0.0;
        }
    }
}

/// Owned parameters for one MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub shape: MlpShape,
    pub data: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(shape: MlpShape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn view(&self) -> Mlp<'_> {
        Mlp::new(self.shape, &self.data)
    }

    pub fn w1_mut(&mut self) -> &mut [f64] {
        let (b1, _, _) = self.shape.offsets();
        &mut self.data[..b1]
    }

    pub fn b1_mut(&mut self) -> &mut [f64] {
        let (b1, w2, _) = self.shape.offsets();
        &mut self.data[b1..w2]
    }

    pub fn w2_mut(&mut self) -> &mut [f64] {
        let (_, w2, b2) = self.shape.offsets();
        &mut self.data[w2..b2]
    }

    pub fn b2_mut(&mut self) -> &mut [f64] {
        let (_, _, b2) = self.shape.offsets();
        &mut self.data[b2..]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Mlp<'a> {
    pub shape: MlpShape,
    params: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpCache {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub out: Vec<f64>,
}

impl<'a> Mlp<'a> {
    pub fn new(shape: MlpShape, params: &'a [f64]) -> Self {
        assert_eq!(params.len(), shape.len(), "mlp parameter slice has wrong length");
        Self { shape, params }
    }

    pub fn forward(&self, x: &[f64]) -> MlpCache {
        let MlpShape {
            input,
            hidden,
            output,
        } = self.shape;
        assert_eq!(x.len(), input);
        let (b1, w2, b2) = self.shape.offsets();
        let p = self.params;
        let mut pre = vec![0.0; hidden];
        for (r, v) in pre.iter_mut().enumerate() {
            let row = &p[r * input..(r + 1) * input];
            *v = p[b1 + r] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
        let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let mut out = vec![0.0; output];
        for (o, v) in out.iter_mut().enumerate() {
            let row = &p[w2 + o * hidden..w2 + (o + 1) * hidden];
            *v = p[b2 + o] + row.iter().zip(&act).map(|(w, h)| w * h).sum::<f64>();
        }
        MlpCache {
            pre,
            hidden: act,
            out,
        }
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).out
    }

    /// Accumulates parameter gradients into `grad` and returns d(loss)/d(x).
    pub fn backward(&self, x: &[f64], cache: &MlpCache, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let MlpShape {
            input,
            hidden,
            output,
        } = self.shape;
        assert_eq!(grad.len(), self.shape.len());
        assert_eq!(dout.len(), output);
        let (b1, w2, b2) = self.shape.offsets();
        let p = self.params;
        let mut dh = vec![0.0; hidden];
        for (o, &g) in dout.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[b2 + o] += g;
            let base = w2 + o * hidden;
            for j in 0..hidden {
                grad[base + j] += g * cache.hidden[j];
                dh[j] += g * p[base + j];
            }
        }
        let mut dx = vec![0.0; input];
        for j in 0..hidden {
            if cache.pre[j] <= 0.0 || dh[j] == 0.0 {
                continue;
            }
            let g = dh[j];
            grad[b1 + j] += g;
            let base = j * input;
            for i in 0..input {
                grad[base + i] += g * x[i];
                dx[i] += g * p[base + i];
            }
        }
        dx
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_logits() {
        let p = MlpParams::zeros(MlpShape::new(4, 3, 2));
        assert_eq!(p.view().output(&[1.0, 2.0, 3.0, 4.0]), [0.0, 0.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let shape = MlpShape::new(5, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data = vec![0.0; shape.len()];
        shape.init(&mut data, &mut rng);
        for v in data.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = [0.3, -1.2, 0.7];
        let loss = |d: &[f64], x: &[f64]| -> f64 {
            Mlp::new(shape, d).output(x).iter().zip(&w).map(|(o, w)| o * w).sum()
        };
        let mlp = Mlp::new(shape, &data);
        let cache = mlp.forward(&x);
        let mut grad = vec![0.0; shape.len()];
        let dx = mlp.backward(&x, &cache, &w, &mut grad);
        let h = 1e-6;
        for i in 0..data.len() {
            let mut a = data.clone();
            a[i] += h;
            let mut b = data.clone();
            b[i] -= h;
            let fd = (loss(&a, &x) - loss(&b, &x)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "param {i}: {fd} vs {}", grad[i]);
        }
        for i in 0..x.len() {
            let mut a = x.clone();
            a[i] += h;
            let mut b = x.clone();
            b[i] -= h;
            let fd = (loss(&data, &a) - loss(&data, &b)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn stable_helpers() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) > 0.0 || sigmoid(-800.0) == 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-12);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
