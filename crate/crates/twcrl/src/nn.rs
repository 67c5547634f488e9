//! Dense feed-forward networks with analytic reverse-mode gradients and an
//! Adam optimizer.
//!
//! Hidden layers use ReLU (with subgradient 0 at exactly zero pre-activation);
//! the output layer is linear, tanh, or bound-scaled tanh. Parameters live in
//! flat row-major buffers per layer, and [`DenseNet::backward`] also returns
//! the gradient with respect to the input, which the actor update chains
//! through a critic.
//!
//! Checkpoints are plain JSON holding layer sizes, the output activation tag,
//! and the parameter arrays; the round trip is bit-exact.

use crate::error::{Error, Result};
use crate::Scalar;
use rand::Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

/// Output-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Tanh,
    /// `b * tanh(z)`, keeping outputs in `[-b, b]`.
    TanhScaled(f64),
}

/// Fully-connected network. `sizes` lists layer widths, input first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet<T = crate::Real> {
    sizes: Vec<usize>,
    /// `weights[l]` is `sizes[l+1] x sizes[l]`, row-major.
    weights: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
    output_activation: Activation,
}

/// Per-parameter buffers shaped like a [`DenseNet`]'s weights and biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients<T = crate::Real> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &DenseNet<T>) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![T::zero(); w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for w in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for x in w.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|buf| buf.iter().all(|x| x.is_finite()))
    }

    /// Flat view over all entries: per layer, weights then biases.
    pub fn flat(&self, mut index: usize) -> T {
        for l in 0..self.weights.len() {
            if index < self.weights[l].len() {
                return self.weights[l][index];
            }
            index -= self.weights[l].len();
            if index < self.biases[l].len() {
                return self.biases[l][index];
            }
            index -= self.biases[l].len();
        }
        panic!("gradient index out of range");
    }
}

/// Intermediate activations from [`DenseNet::forward_trace`]:
/// `post[0]` is the input, `post[l+1]` the post-activation of layer `l`.
pub struct Trace<T> {
    pub post: Vec<Vec<T>>,
}

impl<T: Scalar> DenseNet<T> {
    /// Glorot-uniform initialization (`±sqrt(6 / (fan_in + fan_out))`), zero biases.
    pub fn new<R: Rng>(sizes: &[usize], output_activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output layers");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<T> = (0..fan_in * fan_out)
                .map(|_| T::from_f64(rng.gen_range(-bound..bound)).unwrap())
                .collect();
            weights.push(w);
            biases.push(vec![T::zero(); fan_out]);
        }
        Self { sizes: sizes.to_vec(), weights, biases, output_activation }
    }

    pub fn zeros(sizes: &[usize], output_activation: Activation) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            weights.push(vec![T::zero(); sizes[l] * sizes[l + 1]]);
            biases.push(vec![T::zero(); sizes[l + 1]]);
        }
        Self { sizes: sizes.to_vec(), weights, biases, output_activation }
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

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Flat parameter access: per layer, weights then biases.
    pub fn param(&self, mut index: usize) -> T {
        for l in 0..self.weights.len() {
            if index < self.weights[l].len() {
                return self.weights[l][index];
            }
            index -= self.weights[l].len();
            if index < self.biases[l].len() {
                return self.biases[l][index];
            }
            index -= self.biases[l].len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut index: usize, value: T) {
        for l in 0..self.weights.len() {
            if index < self.weights[l].len() {
                self.weights[l][index] = value;
                return;
            }
            index -= self.weights[l].len();
            if index < self.biases[l].len() {
                self.biases[l][index] = value;
                return;
            }
            index -= self.biases[l].len();
        }
        panic!("parameter index out of range");
    }

    pub fn params_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|buf| buf.iter().all(|x| x.is_finite()))
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        if input.len() != self.sizes[0] {
            return Err(Error::DimensionMismatch { expected: self.sizes[0], got: input.len() });
        }
        Ok(())
    }

    fn apply_output(&self, z: &mut [T]) {
        match self.output_activation {
            Activation::Linear => {}
            Activation::Tanh => {
                for v in z.iter_mut() {
                    *v = v.tanh();
                }
            }
            Activation::TanhScaled(b) => {
                let b = T::from_f64(b).unwrap();
                for v in z.iter_mut() {
                    *v = b * v.tanh();
                }
            }
        }
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let mut out = self.affine(l, &cur);
            if l < last {
                for v in out.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            } else {
                self.apply_output(&mut out);
            }
            cur = out;
        }
        Ok(cur)
    }

    /// Forward pass keeping per-layer post-activations for [`Self::backward`].
    pub fn forward_trace(&self, input: &[T]) -> Result<Trace<T>> {
        self.check_input(input)?;
        let mut post = Vec::with_capacity(self.sizes.len());
        post.push(input.to_vec());
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let mut out = self.affine(l, &post[l]);
            if l < last {
                for v in out.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            } else {
                self.apply_output(&mut out);
            }
            post.push(out);
        }
        Ok(Trace { post })
    }

    fn affine(&self, l: usize, input: &[T]) -> Vec<T> {
        let n_in = self.sizes[l];
        let w = &self.weights[l];
        let mut out = self.biases[l].clone();
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &w[o * n_in..(o + 1) * n_in];
            let mut acc = T::zero();
            for (wv, xv) in row.iter().zip(input) {
                acc += *wv * *xv;
            }
            *out_v += acc;
        }
        out
    }

    /// Exact reverse-mode gradients of `upstream . output` with respect to
    /// every parameter, plus the gradient with respect to the input.
    pub fn backward(&self, trace: &Trace<T>, upstream: &[T]) -> Result<(Gradients<T>, Vec<T>)> {
        let last = self.weights.len() - 1;
        if upstream.len() != self.sizes[last + 1] {
            return Err(Error::DimensionMismatch {
                expected: self.sizes[last + 1],
                got: upstream.len(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        // Output activation derivative, expressed through the post-activation.
        let mut delta: Vec<T> = match self.output_activation {
            Activation::Linear => upstream.to_vec(),
            Activation::Tanh => upstream
                .iter()
                .zip(&trace.post[last + 1])
                .map(|(u, y)| *u * (T::one() - *y * *y))
                .collect(),
            Activation::TanhScaled(b) => {
                let b = T::from_f64(b).unwrap();
                upstream
                    .iter()
                    .zip(&trace.post[last + 1])
                    .map(|(u, y)| {
                        let t = *y / b;
                        *u * b * (T::one() - t * t)
                    })
                    .collect()
            }
        };
        for l in (0..=last).rev() {
            let n_in = self.sizes[l];
            let x = &trace.post[l];
            let mut input_grad = vec![T::zero(); n_in];
            {
                let gw = &mut grads.weights[l];
                let gb = &mut grads.biases[l];
                let w = &self.weights[l];
                for (o, d) in delta.iter().enumerate() {
                    gb[o] += *d;
                    let grow = &mut gw[o * n_in..(o + 1) * n_in];
                    let wrow = &w[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        grow[i] += *d * x[i];
                        input_grad[i] += *d * wrow[i];
                    }
                }
            }
            if l == 0 {
                return Ok((grads, input_grad));
            }
            // ReLU derivative: pass-through where the post-activation is
            // strictly positive, zero otherwise (including exactly zero).
            for (g, post) in input_grad.iter_mut().zip(&trace.post[l]) {
                if !(*post > T::zero()) {
                    *g = T::zero();
                }
            }
            delta = input_grad;
        }
        unreachable!()
    }

    /// `self = tau * other + (1 - tau) * self`, the target-network trail.
    pub fn soft_update_from(&mut self, other: &Self, tau: T) {
        debug_assert_eq!(self.sizes, other.sizes);
        let keep = T::one() - tau;
        for (dst, src) in self.weights.iter_mut().zip(&other.weights) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = tau * *s + keep * *d;
            }
        }
        for (dst, src) in self.biases.iter_mut().zip(&other.biases) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = tau * *s + keep * *d;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2
            || self.weights.len() != self.sizes.len() - 1
            || self.biases.len() != self.sizes.len() - 1
        {
            return Err(Error::Validation("layer count mismatch".into()));
        }
        for l in 0..self.weights.len() {
            if self.weights[l].len() != self.sizes[l] * self.sizes[l + 1]
                || self.biases[l].len() != self.sizes[l + 1]
            {
                return Err(Error::Validation(format!("layer {l}: parameter shape mismatch")));
            }
        }
        if !self.params_finite() {
            return Err(Error::Validation("non-finite parameters".into()));
        }
        Ok(())
    }
}

impl<T: Scalar + Serialize> DenseNet<T> {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serialization")
    }
}

impl<T: Scalar + DeserializeOwned> DenseNet<T> {
    pub fn from_json(text: &str) -> Result<Self> {
        let net: Self = serde_json::from_str(text)?;
        net.validate()?;
        Ok(net)
    }
}

/// Adam with bias correction. Moment buffers are shaped like the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T = crate::Real> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub step_count: u64,
    m: Gradients<T>,
    v: Gradients<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(learning_rate: T, net: &DenseNet<T>) -> Self {
        Self {
            learning_rate,
            beta1: T::from_f64(0.9).unwrap(),
            beta2: T::from_f64(0.999).unwrap(),
            epsilon: T::from_f64(1e-8).unwrap(),
            step_count: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    /// One bias-corrected update of `net` along `-grads`.
    pub fn step(&mut self, net: &mut DenseNet<T>, grads: &Gradients<T>) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::OptimDiverged("non-finite gradient".into()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let corr1 = T::one() - self.beta1.powi(t);
        let corr2 = T::one() - self.beta2.powi(t);
        for l in 0..net.weights.len() {
            update_buf(
                &mut net.weights[l],
                &grads.weights[l],
                &mut self.m.weights[l],
                &mut self.v.weights[l],
                (self.learning_rate, self.beta1, self.beta2, self.epsilon),
                (corr1, corr2),
            );
            update_buf(
                &mut net.biases[l],
                &grads.biases[l],
                &mut self.m.biases[l],
                &mut self.v.biases[l],
                (self.learning_rate, self.beta1, self.beta2, self.epsilon),
                (corr1, corr2),
            );
        }
        if !net.params_finite() {
            return Err(Error::OptimDiverged("non-finite parameters after update".into()));
        }
        Ok(())
    }
}

fn update_buf<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    (lr, beta1, beta2, eps): (T, T, T, T),
    (corr1, corr2): (T, T),
) {
    let one = T::one();
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (one - beta1) * g;
        v[i] = beta2 * v[i] + (one - beta2) * g * g;
        let m_hat = m[i] / corr1;
        let v_hat = v[i] / corr2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}
