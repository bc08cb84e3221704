//! Fully-connected networks with hand-written backpropagation.
//!
//! Hidden layers use the rectifier; the output layer is hyperbolic tangent
//! for actors (bounded actions) and identity for critics. All math is f64
//! so finite-difference gradient checks resolve to 1e-4 relative error.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Saturating output in (-1, 1); used by actors.
    Tanh,
    /// Unbounded output; used by critics.
    Identity,
}

impl Activation {
    fn token(self) -> &'static str {
        match self {
            Activation::Tanh => "actor",
            Activation::Identity => "critic",
        }
    }
}

/// An MLP usable both as a trainable network and as a frozen policy.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    dims: Vec<usize>,
    /// One weight matrix per layer, shape `[out, in]`.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    output_activation: Activation,
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Cached intermediate values of a batch forward pass.
pub struct ForwardCache {
    /// Activations per layer, `activations[0]` being the input batch.
    activations: Vec<Array2<f64>>,
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("policy file format error: {0}")]
    Format(String),
    #[error("unsupported policy file version: `{0}`")]
    Version(String),
    #[error("dimension mismatch: {0}")]
    Dims(String),
}

impl PolicyNet {
    /// Random network with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights.
    pub fn new<R: Rng>(dims: &[usize], output_activation: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((n_out, n_in), |_| {
                rng.gen_range(-bound..bound)
            }));
            biases.push(Array1::from_shape_fn(n_out, |_| rng.gen_range(-bound..bound)));
        }
        PolicyNet {
            dims: dims.to_vec(),
            weights,
            biases,
            output_activation,
        }
    }

    /// All-zero network; outputs exactly zero everywhere.
    pub fn zeros(dims: &[usize], output_activation: Activation) -> Self {
        let weights = dims
            .windows(2)
            .map(|w| Array2::zeros((w[1], w[0])))
            .collect();
        let biases = dims.windows(2).map(|w| Array1::zeros(w[1])).collect();
        PolicyNet {
            dims: dims.to_vec(),
            weights,
            biases,
            output_activation,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.dim())).collect(),
        }
    }

    pub fn forward(&self, input: ArrayView1<f64>) -> Array1<f64> {
        let batch = input.insert_axis(Axis(0));
        let (out, _) = self.forward_batch(batch);
        out.index_axis(Axis(0), 0).to_owned()
    }

    /// Single-sample inference from a plain slice.
    pub fn forward_slice(&self, input: &[f64]) -> Vec<f64> {
        self.forward(ndarray::ArrayView1::from(input)).to_vec()
    }

    /// Batch forward pass returning outputs and the cache needed by
    /// [`PolicyNet::backward`].
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> (Array2<f64>, ForwardCache) {
        assert_eq!(
            input.ncols(),
            self.input_dim(),
            "input dim {} does not match network input {}",
            input.ncols(),
            self.input_dim()
        );
        let mut activations = vec![input.to_owned()];
        let last = self.n_layers() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = activations[l].dot(&w.t());
            z += &b.view().insert_axis(Axis(0));
            let a = if l == last {
                match self.output_activation {
                    Activation::Tanh => z.mapv(f64::tanh),
                    Activation::Identity => z,
                }
            } else {
                z.mapv(|x| x.max(0.0))
            };
            activations.push(a);
        }
        let out = activations.last().unwrap().clone();
        (out, ForwardCache { activations })
    }

    /// Backpropagate `grad_output` (dLoss/dOutput, `[batch, out]`) through
    /// the cached forward pass. Returns parameter gradients and the
    /// gradient with respect to the input batch.
    pub fn backward(&self, cache: &ForwardCache, grad_output: ArrayView2<f64>) -> (Gradients, Array2<f64>) {
        let last = self.n_layers() - 1;
        let mut grads = self.zero_gradients();
        let mut delta = grad_output.to_owned();
        for l in (0..self.n_layers()).rev() {
            let post = &cache.activations[l + 1];
            if l == last {
                if self.output_activation == Activation::Tanh {
                    delta = &delta * &post.mapv(|y| 1.0 - y * y);
                }
            } else {
                delta = &delta * &post.mapv(|y| if y > 0.0 { 1.0 } else { 0.0 });
            }
            grads.weights[l] = delta.t().dot(&cache.activations[l]);
            grads.biases[l] = delta.sum_axis(Axis(0));
            delta = delta.dot(&self.weights[l]);
        }
        (grads, delta)
    }

    /// Soft update toward `main`: every parameter becomes
    /// `retain * self + (1 - retain) * main`.
    pub fn soft_update_from(&mut self, main: &PolicyNet, retain: f64) {
        for (t, m) in self.weights.iter_mut().zip(&main.weights) {
            t.zip_mut_with(m, |t, m| *t = retain * *t + (1.0 - retain) * *m);
        }
        for (t, m) in self.biases.iter_mut().zip(&main.biases) {
            t.zip_mut_with(m, |t, m| *t = retain * *t + (1.0 - retain) * *m);
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Read or write a single parameter by flat index; weights first
    /// (row-major per layer), then biases, layer by layer.
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in 0..self.weights.len() {
            let wlen = self.weights[l].len();
            if index < wlen {
                return self.weights[l].iter_mut().nth(index).unwrap();
            }
            index -= wlen;
            let blen = self.biases[l].len();
            if index < blen {
                return self.biases[l].iter_mut().nth(index).unwrap();
            }
            index -= blen;
        }
        panic!("parameter index out of range");
    }

    pub fn grad_at(grads: &Gradients, mut index: usize) -> f64 {
        for l in 0..grads.weights.len() {
            let wlen = grads.weights[l].len();
            if index < wlen {
                return *grads.weights[l].iter().nth(index).unwrap();
            }
            index -= wlen;
            let blen = grads.biases[l].len();
            if index < blen {
                return *grads.biases[l].iter().nth(index).unwrap();
            }
            index -= blen;
        }
        panic!("gradient index out of range");
    }

    /// Serialize to the versioned text policy format.
    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let mut out = String::new();
        let _ = writeln!(out, "td3-policy v1 {}", self.output_activation.token());
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "{}", dims.join(" "));
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let mut line = String::new();
            for x in w.iter() {
                if !line.is_empty() {
                    line.push(' ');
                }
                let _ = write!(line, "{x}");
            }
            for x in b.iter() {
                line.push(' ');
                let _ = write!(line, "{x}");
            }
            out.push_str(&line);
            out.push('\n');
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let text = fs::read_to_string(path)?;
        Self::from_policy_text(&text)
    }

    /// Load and verify the consumer's expected interface up front.
    pub fn load_expecting(
        path: &Path,
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self, NetError> {
        let net = Self::load(path)?;
        if net.input_dim() != input_dim || net.output_dim() != output_dim {
            return Err(NetError::Dims(format!(
                "policy {} has dims {}x{}, consumer expects {}x{}",
                path.display(),
                net.input_dim(),
                net.output_dim(),
                input_dim,
                output_dim
            )));
        }
        if net.output_activation != activation {
            return Err(NetError::Format(format!(
                "policy {} is a {}, consumer expects a {}",
                path.display(),
                net.output_activation.token(),
                activation.token()
            )));
        }
        Ok(net)
    }

    pub fn from_policy_text(text: &str) -> Result<Self, NetError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| NetError::Format("empty policy file".into()))?;
        let mut head = header.split_whitespace();
        match (head.next(), head.next()) {
            (Some("td3-policy"), Some("v1")) => {}
            _ => return Err(NetError::Version(header.to_string())),
        }
        let output_activation = match head.next() {
            Some("actor") => Activation::Tanh,
            Some("critic") => Activation::Identity,
            other => {
                return Err(NetError::Format(format!(
                    "expected `actor` or `critic` kind, found {other:?}"
                )))
            }
        };
        let dims_line = lines
            .next()
            .ok_or_else(|| NetError::Format("missing dims line".into()))?;
        let dims: Vec<usize> = dims_line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| NetError::Format(format!("bad dim `{t}`")))
            })
            .collect::<Result<_, _>>()?;
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(NetError::Dims(format!("invalid dims {dims:?}")));
        }

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let line = lines.next().ok_or_else(|| {
                NetError::Format(format!("truncated file: missing layer {n_in}x{n_out}"))
            })?;
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| NetError::Format(format!("bad number `{t}`")))
                })
                .collect::<Result<_, _>>()?;
            let expected = n_in * n_out + n_out;
            if values.len() != expected {
                return Err(NetError::Dims(format!(
                    "layer expects {expected} values, found {}",
                    values.len()
                )));
            }
            let (wv, bv) = values.split_at(n_in * n_out);
            weights.push(Array2::from_shape_vec((n_out, n_in), wv.to_vec()).unwrap());
            biases.push(Array1::from_vec(bv.to_vec()));
        }
        Ok(PolicyNet {
            dims,
            weights,
            biases,
            output_activation,
        })
    }
}

/// Adaptive-moment optimizer bound to one network's shape.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &PolicyNet, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: net.zero_gradients(),
            v: net.zero_gradients(),
        }
    }

    pub fn step(&mut self, net: &mut PolicyNet, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);

        let update = move |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };

        for l in 0..net.weights.len() {
            ndarray::Zip::from(&mut net.weights[l])
                .and(&grads.weights[l])
                .and(&mut self.m.weights[l])
                .and(&mut self.v.weights[l])
                .for_each(update);
            ndarray::Zip::from(&mut net.biases[l])
                .and(&grads.biases[l])
                .and(&mut self.m.biases[l])
                .and(&mut self.v.biases[l])
                .for_each(update);
        }
    }
}
