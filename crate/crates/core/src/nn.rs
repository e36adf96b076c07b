//! Fully-connected feedforward networks with hand-written reverse-mode
//! differentiation.
//!
//! Parameters live in one flat `Vec<f64>` laid out layer by layer: the
//! row-major `(out, in)` weight matrix followed by the bias vector. Hidden
//! layers use `tanh`; the output layer is linear. Keeping everything flat
//! makes the optimizers, soft target updates and finite-difference checks
//! plain slice arithmetic.

use rand::Rng;

use crate::error::ShapeError;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded during a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `layers[0]` is the input, `layers[k]` the output of layer `k`.
    layers: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("trace has at least the input")
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn check_sizes(sizes: &[usize]) -> Result<(), ShapeError> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(ShapeError::Layers(sizes.to_vec()));
    }
    Ok(())
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Result<Self, ShapeError> {
        check_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self, ShapeError> {
        check_sizes(sizes)?;
        let expected = param_count(sizes);
        if params.len() != expected {
            return Err(ShapeError::ParamCount {
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    /// Glorot-uniform weights with the tanh gain on every layer, zero biases.
    /// The last layer is additionally multiplied by `output_scale`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], output_scale: f64, rng: &mut R) -> Result<Self, ShapeError> {
        let mut net = Self::zeros(sizes)?;
        let n_layers = sizes.len() - 1;
        let mut offset = 0;
        for (k, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let gain = 5.0 / 3.0;
            let mut bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
            if k + 1 == n_layers {
                bound *= output_scale;
            }
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-1.0..1.0) * bound;
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.sizes == other.sizes
    }

    /// Round every parameter through `f32`.
    pub fn quantize_f32(&mut self) {
        for p in &mut self.params {
            *p = f64::from(*p as f32);
        }
    }

    /// `(weights, biases)` of layer `k`.
    pub fn layer(&self, k: usize) -> (&[f64], &[f64]) {
        let mut offset = 0;
        for w in self.sizes.windows(2).take(k) {
            offset += w[0] * w[1] + w[1];
        }
        let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
        let weights = &self.params[offset..offset + n_in * n_out];
        let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        (weights, biases)
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ShapeError> {
        if x.len() != self.input_dim() {
            return Err(ShapeError::InputSize {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ShapeError> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    /// Convenience for single-output networks.
    pub fn forward_scalar(&self, x: &[f64]) -> Result<f64, ShapeError> {
        Ok(self.forward(x)?[0])
    }

    fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut current = x.to_vec();
        let mut offset = 0;
        let n_layers = self.sizes.len() - 1;
        for (k, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let mut next = biases.to_vec();
            for (o, acc) in next.iter_mut().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                *acc += row.iter().zip(&current).map(|(a, b)| a * b).sum::<f64>();
            }
            if k + 1 < n_layers {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            current = next;
            offset += n_in * n_out + n_out;
        }
        current
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace, ShapeError> {
        self.check_input(x)?;
        let mut layers = Vec::with_capacity(self.sizes.len());
        layers.push(x.to_vec());
        let mut offset = 0;
        let n_layers = self.sizes.len() - 1;
        for (k, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let input = layers.last().unwrap();
            let mut next = biases.to_vec();
            for (o, acc) in next.iter_mut().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                *acc += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            if k + 1 < n_layers {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            layers.push(next);
            offset += n_in * n_out + n_out;
        }
        Ok(Trace { layers })
    }

    /// Back-propagates `grad_output` (dL/d output) through a recorded pass,
    /// accumulating dL/d params into `grad_params`. Returns dL/d input.
    pub fn backward(&self, trace: &Trace, grad_output: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad_params.len(), self.params.len());
        debug_assert_eq!(grad_output.len(), self.output_dim());
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }

        // gradient w.r.t. the pre-activation of the current layer
        let mut delta = grad_output.to_vec();
        for k in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let off = offsets[k];
            let input = &trace.layers[k];
            {
                let (gw, gb) = grad_params[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = delta[o];
                    gb[o] += d;
                    for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            let weights = &self.params[off..off + n_in * n_out];
            let mut grad_in = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                for (g, w) in grad_in.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                    *g += d * w;
                }
            }
            if k > 0 {
                // input of layer k is tanh output of layer k-1
                for (g, a) in grad_in.iter_mut().zip(input) {
                    *g *= 1.0 - a * a;
                }
            }
            delta = grad_in;
        }
        delta
    }
}

/// `target <- tau * live + (1 - tau) * target`, elementwise.
pub fn soft_update(live: &Mlp, target: &mut Mlp, tau: f64) {
    assert!(live.same_shape(target), "soft update between differently shaped networks");
    if tau == 1.0 {
        target.params.copy_from_slice(&live.params);
        return;
    }
    // written as a step towards `live` so equal networks stay bitwise equal
    for (t, l) in target.params.iter_mut().zip(&live.params) {
        *t += tau * (l - *t);
    }
}

/// Adam optimizer over a flat parameter slice.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        if self.lr == 0.0 {
            return;
        }
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
