use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// `C = A·B + beta·C` over row-major buffers. `ta`/`tb` read `A`/`B`
/// transposed: with `ta`, `a` holds a `k × m` matrix.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the bounds above cover every element addressed by the strides
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

fn sgemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: as in `gemm`
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

/// Fully connected network with ReLU hidden layers and a linear output.
///
/// `weights[l]` is the row-major `sizes[l] × sizes[l + 1]` matrix mapping
/// layer `l` to layer `l + 1`, so a batch propagates as `H·W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Activations of every layer for one batch.
pub struct Trace {
    n: usize,
    layers: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().map_or(&[], |v| v)
    }

    pub fn rows(&self) -> usize {
        self.n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// He-normal weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Mlp {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0));
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let d = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive sd");
            weights.push((0..w[0] * w[1]).map(|_| d.sample(rng)).collect());
            biases.push(vec![0.0; w[1]]);
        }
        Mlp {
            sizes: sizes.to_vec(),
            activation: Activation::Relu,
            weights,
            biases,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Layer shapes chain and every parameter is finite.
    pub fn is_consistent(&self) -> bool {
        self.sizes.len() >= 2
            && self.weights.len() == self.sizes.len() - 1
            && self.biases.len() == self.sizes.len() - 1
            && self.sizes.windows(2).zip(&self.weights).all(|(s, w)| w.len() == s[0] * s[1])
            && self.sizes[1..].iter().zip(&self.biases).all(|(&s, b)| b.len() == s)
            && self.weights.iter().chain(&self.biases).flatten().all(|x| x.is_finite())
    }

    /// Forward pass over `n` row-major inputs, keeping activations.
    pub fn trace(&self, x: &[f64], n: usize) -> Trace {
        let mut layers = vec![x[..n * self.sizes[0]].to_vec()];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (k, m) = (self.sizes[l], self.sizes[l + 1]);
            let mut h: Vec<f64> = b.iter().copied().cycle().take(n * m).collect();
            gemm(n, k, m, &layers[l], false, w, false, 1.0, &mut h);
            if l < last {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            layers.push(h);
        }
        Trace { n, layers }
    }

    /// Outputs for `n` row-major inputs.
    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        self.trace(x, n).layers.pop().unwrap_or_default()
    }

    /// Parameter gradients of a loss whose gradient with respect to the
    /// network output is `d_out`.
    pub fn backward(&self, trace: &Trace, d_out: &[f64]) -> Gradients {
        let n = trace.n;
        let mut gw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut delta = d_out.to_vec();
        for l in (0..self.weights.len()).rev() {
            let (k, m) = (self.sizes[l], self.sizes[l + 1]);
            gemm(k, n, m, &trace.layers[l], true, &delta, false, 0.0, &mut gw[l]);
            for row in delta.chunks_exact(m) {
                for (g, d) in gb[l].iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; n * k];
                gemm(n, m, k, &delta, false, &self.weights[l], true, 0.0, &mut prev);
                for (p, a) in prev.iter_mut().zip(&trace.layers[l]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Gradients {
            weights: gw,
            biases: gb,
        }
    }

    /// Mean squared error over all entries and its gradient.
    pub fn mse_loss(&self, x: &[f64], y: &[f64], n: usize) -> (f64, Gradients) {
        let trace = self.trace(x, n);
        let out = trace.output();
        let scale = 1.0 / (n * self.n_outputs()) as f64;
        let mut loss = 0.0;
        let d: Vec<f64> = out
            .iter()
            .zip(y)
            .map(|(o, t)| {
                let e = o - t;
                loss += e * e;
                2.0 * e * scale
            })
            .collect();
        (loss * scale, self.backward(&trace, &d))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut()).flatten()
    }

    pub fn to_f32(&self) -> FastMlp {
        FastMlp {
            sizes: self.sizes.clone(),
            weights: self.weights.iter().map(|w| w.iter().map(|&v| v as f32).collect()).collect(),
            biases: self.biases.iter().map(|b| b.iter().map(|&v| v as f32).collect()).collect(),
        }
    }
}

impl Gradients {
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.biases).flatten()
    }
}

/// Single-precision copy of an [`Mlp`] for screening.
#[derive(Clone, Debug)]
pub struct FastMlp {
    sizes: Vec<usize>,
    weights: Vec<Vec<f32>>,
    biases: Vec<Vec<f32>>,
}

impl FastMlp {
    pub fn forward(&self, x: &[f32], n: usize) -> Vec<f32> {
        let mut h = x[..n * self.sizes[0]].to_vec();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (k, m) = (self.sizes[l], self.sizes[l + 1]);
            let mut next = vec![0.0f32; n * m];
            sgemm(n, k, m, &h, w, &mut next);
            for row in next.chunks_exact_mut(m) {
                for (v, bias) in row.iter_mut().zip(b) {
                    *v += bias;
                    if l < last && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            h = next;
        }
        h
    }
}
