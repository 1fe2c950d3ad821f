use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::seeded_rng;

/// Hidden widths of the probe, input side first.
pub const HIDDEN_DIMS: [usize; 3] = [256, 128, 64];

/// Predictions are clamped into this band before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Weights and biases for every affine layer. Also used for gradients and
/// optimizer moments, which share the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `weights[l]` has shape `(fan_in, fan_out)`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Params {
    pub fn zeros_like(other: &Params) -> Self {
        Self {
            weights: other.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: other.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
            && self.weights.iter().zip(&other.weights).all(|(a, b)| a.dim() == b.dim())
            && self.biases.iter().zip(&other.biases).all(|(a, b)| a.dim() == b.dim())
    }

    /// Flattened view in layer order: W0, b0, W1, b1, ...
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Optional per-feature standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Feedforward probe: ReLU hidden layers and a single sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    layer_dims: Vec<usize>,
    pub params: Params,
    pub seed: u64,
    pub scaling: Option<InputScaling>,
}

/// Uniform Kaiming initialisation: hidden layers use bound sqrt(6 / fan_in)
/// (ReLU gain), the output layer sqrt(3 / fan_in). Biases start at zero.
pub fn init_probe(input_dim: usize, seed: u64) -> Result<ProbeModel> {
    let mut dims = vec![input_dim];
    dims.extend(HIDDEN_DIMS);
    dims.push(1);
    ProbeModel::with_dims(dims, seed)
}

impl ProbeModel {
    /// Builds a probe with arbitrary layer widths. The last width must be 1.
    pub fn with_dims(layer_dims: Vec<usize>, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d < 1) {
            return Err(Error::Parameter(format!(
                "layer dims {layer_dims:?} must all be >= 1 with at least one affine layer"
            )));
        }
        if *layer_dims.last().unwrap() != 1 {
            return Err(Error::Parameter("output width must be 1".into()));
        }
        let mut rng = seeded_rng(seed);
        let n_layers = layer_dims.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for (l, pair) in layer_dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let gain = if l + 1 == n_layers { 3.0 } else { 6.0 };
            let bound = (gain / fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..bound)));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            layer_dims,
            params: Params { weights, biases },
            seed,
            scaling: None,
        })
    }

    pub(crate) fn from_parts(layer_dims: Vec<usize>, params: Params, seed: u64, scaling: Option<InputScaling>) -> Result<Self> {
        if layer_dims.len() < 2 || params.weights.len() != layer_dims.len() - 1 {
            return Err(Error::Shape("parameter blocks do not match layer dims".into()));
        }
        for (l, pair) in layer_dims.windows(2).enumerate() {
            if params.weights[l].dim() != (pair[0], pair[1]) || params.biases[l].len() != pair[1] {
                return Err(Error::Shape(format!("layer {l} parameter shape mismatch")));
            }
        }
        if !params.all_finite() {
            return Err(Error::Validation("non-finite parameter".into()));
        }
        Ok(Self {
            layer_dims,
            params,
            seed,
            scaling,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has width {cols}, probe expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn scaled(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut x = x.to_owned();
        if let Some(s) = &self.scaling {
            for mut row in x.rows_mut() {
                for ((v, m), k) in row.iter_mut().zip(&s.mean).zip(&s.inv_std) {
                    *v = (*v - m) * k;
                }
            }
        }
        x
    }

    /// Probability that a single statement vector is true.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite input".into()));
        }
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous row");
        Ok(self.forward_batch(view)?[0])
    }

    /// Probabilities for each row of `x`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_input(x.ncols())?;
        let trace = self.trace(x);
        Ok(trace.logits.mapv(|z| open_unit(sigmoid(z))))
    }

    /// Forward pass keeping every pre-activation for backprop.
    fn trace(&self, x: ArrayView2<f64>) -> Trace {
        let input = self.scaled(x);
        let n_layers = self.params.weights.len();
        let mut activations = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut a = input;
        for l in 0..n_layers {
            let z = a.dot(&self.params.weights[l]) + &self.params.biases[l];
            activations.push(a);
            if l + 1 < n_layers {
                a = z.mapv(|v| v.max(0.0));
            } else {
                a = z.clone();
            }
            pre.push(z);
        }
        let logits = a.index_axis(Axis(1), 0).to_owned();
        Trace {
            activations,
            pre,
            logits,
        }
    }

    /// Mean binary cross-entropy (with clamped predictions) and its gradient.
    pub fn loss_and_gradients(&self, x: ArrayView2<f64>, labels: &[bool]) -> Result<(f64, Params)> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Parameter("empty batch".into()));
        }
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
        }
        self.check_input(x.ncols())?;
        let trace = self.trace(x);
        let probs = trace.logits.mapv(sigmoid);

        let mut loss = 0.0;
        let mut delta = Array2::zeros((n, 1));
        for (i, (&p, &y)) in probs.iter().zip(labels).enumerate() {
            loss += bce(p, y);
            // Inside the clamp band d(BCE)/dz = p - y; outside it the loss is flat.
            if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
                delta[[i, 0]] = (p - f64::from(u8::from(y))) / n as f64;
            }
        }
        loss /= n as f64;

        let n_layers = self.params.weights.len();
        let mut grads = Params::zeros_like(&self.params);
        for l in (0..n_layers).rev() {
            grads.weights[l] = trace.activations[l].t().dot(&delta);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.params.weights[l].t());
                Zip::from(&mut upstream)
                    .and(&trace.pre[l - 1])
                    .for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
                delta = upstream;
            }
        }
        Ok((loss, grads))
    }
}

struct Trace {
    /// Input to each affine layer.
    activations: Vec<Array2<f64>>,
    /// Output of each affine layer before the nonlinearity.
    pre: Vec<Array2<f64>>,
    logits: Array1<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Keeps a reported probability strictly inside (0, 1): the sigmoid rounds to
/// exactly 1.0 once the logit passes about 37 and to 0.0 below about -745.
fn open_unit(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Per-example binary cross-entropy with the prediction clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn bce(p: f64, label: bool) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}
