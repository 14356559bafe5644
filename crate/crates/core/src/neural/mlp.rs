use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::shape::{Shape4, SHAPE_DIM};

/// Which outputs a network carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// One class output.
    Plain,
    /// Class output followed by the 8 shape coordinates.
    Joint,
}

impl Head {
    pub fn output_dim(self) -> usize {
        match self {
            Head::Plain => 1,
            Head::Joint => 1 + SHAPE_DIM,
        }
    }
}

/// One fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }
}

/// Fully connected network with a sigmoid on every non-input layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    head: Head,
    layers: Vec<Layer>,
}

/// Largest double below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, kept strictly inside (0, 1) even when saturated.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    (1.0 / (1.0 + (-x).exp())).clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

/// Reusable activation buffers for allocation-free forward passes.
#[derive(Clone, Debug, Default)]
pub struct Activations {
    layers: Vec<Vec<f64>>,
}

impl MlpModel {
    /// All-zero parameters.
    pub fn zeros(layer_dims: &[usize], head: Head) -> Result<Self> {
        check_dims(layer_dims, head)?;
        let layers = layer_dims
            .windows(2)
            .map(|d| Layer::zeros(d[0], d[1]))
            .collect();
        Ok(MlpModel {
            layer_dims: layer_dims.to_vec(),
            head,
            layers,
        })
    }

    /// Weights uniform in `±scale / sqrt(fan_in)`, biases zero.
    pub fn random(layer_dims: &[usize], head: Head, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut m = Self::zeros(layer_dims, head)?;
        for (l, layer) in m.layers.iter_mut().enumerate() {
            let bound = scale / (layer_dims[l] as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        Ok(m)
    }

    pub fn from_layers(layer_dims: Vec<usize>, head: Head, layers: Vec<Layer>) -> Result<Self> {
        let m = MlpModel {
            layer_dims,
            head,
            layers,
        };
        m.validate()?;
        Ok(m)
    }

    /// Checks shapes, head/output agreement and finiteness.
    pub fn validate(&self) -> Result<()> {
        check_dims(&self.layer_dims, self.head)?;
        if self.layers.len() + 1 != self.layer_dims.len() {
            return Err(Error::input("layer count does not match layer_dims"));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let (i, o) = (self.layer_dims[l], self.layer_dims[l + 1]);
            if layer.weights.len() != i * o || layer.biases.len() != o {
                return Err(Error::input(format!("layer {l} parameters do not match {i}->{o}")));
            }
            if layer.weights.iter().chain(&layer.biases).any(|v| !v.is_finite()) {
                return Err(Error::input(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Output vector for `x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::input(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let mut acts = Activations::default();
        Ok(self.forward_with(x, &mut acts).to_vec())
    }

    /// Forward pass reusing `acts`; `x` must have the input dimension.
    pub fn forward_with<'a>(&self, x: &[f64], acts: &'a mut Activations) -> &'a [f64] {
        self.run_layers(x, acts);
        acts.layers.last().unwrap()
    }

    fn run_layers(&self, x: &[f64], acts: &mut Activations) {
        debug_assert_eq!(x.len(), self.input_dim());
        acts.layers.resize(self.layers.len() + 1, Vec::new());
        acts.layers[0].clear();
        acts.layers[0].extend_from_slice(x);
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = acts.layers.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            let n_in = input.len();
            out.clear();
            out.extend(layer.biases.iter().enumerate().map(|(o, &b)| {
                let row = &layer.weights[o * n_in..(o + 1) * n_in];
                sigmoid(b + dot(row, input))
            }));
        }
    }

    /// Class output `F_c`.
    pub fn class_score(&self, x: &[f64], acts: &mut Activations) -> f64 {
        self.forward_with(x, acts)[0]
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators; fixed order keeps results bit-reproducible.
    let n = a.len().min(b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

fn check_dims(dims: &[usize], head: Head) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::input("a network needs at least an input and an output layer"));
    }
    if dims.contains(&0) {
        return Err(Error::input("layer widths must be positive"));
    }
    if *dims.last().unwrap() != head.output_dim() {
        return Err(Error::input(format!(
            "{head:?} head needs {} outputs, layer_dims end in {}",
            head.output_dim(),
            dims.last().unwrap()
        )));
    }
    Ok(())
}

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// `Σ (F_c - y)^2`.
    Plain,
    /// `Σ (F_c - y)^2 + λ Σ ||F_s - s||^2`, shape residuals masked where no
    /// target shape exists.
    Joint { lambda: f64 },
}

/// One supervised example.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: f64,
    pub shape: Option<Shape4>,
}

impl Example {
    pub fn new(features: Vec<f64>, label: f64) -> Self {
        Example {
            features,
            label,
            shape: None,
        }
    }
}

/// Parameter gradients, laid out like [`MlpModel::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            layers: model
                .layer_dims
                .windows(2)
                .map(|d| Layer::zeros(d[0], d[1]))
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.biases.fill(0.0);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn check_example(model: &MlpModel, ex: &Example, objective: Objective) -> Result<()> {
    if ex.features.len() != model.input_dim() {
        return Err(Error::input(format!(
            "example has {} features, network expects {}",
            ex.features.len(),
            model.input_dim()
        )));
    }
    if !(0.0..=1.0).contains(&ex.label) {
        return Err(Error::input(format!("label {} outside [0, 1]", ex.label)));
    }
    if let Objective::Joint { lambda } = objective {
        if model.head != Head::Joint {
            return Err(Error::input("joint objective needs a joint-head network"));
        }
        if !(lambda >= 0.0) {
            return Err(Error::input(format!("joint weight must be >= 0, got {lambda}")));
        }
        if ex.label >= 0.5 && ex.shape.is_none() {
            return Err(Error::input("positive example without a target shape under the joint objective"));
        }
    }
    Ok(())
}

/// Loss of a single example given the network outputs.
fn example_loss(out: &[f64], ex: &Example, objective: Objective) -> f64 {
    let mut loss = (out[0] - ex.label).powi(2);
    if let (Objective::Joint { lambda }, Some(s)) = (objective, &ex.shape) {
        let shape_err: f64 = out[1..].iter().zip(s.0.iter()).map(|(o, t)| (o - t).powi(2)).sum();
        loss += lambda * shape_err;
    }
    loss
}

/// Total objective over `batch`.
pub fn loss(model: &MlpModel, batch: &[Example], objective: Objective) -> Result<f64> {
    let mut acts = Activations::default();
    let mut total = 0.0;
    for ex in batch {
        check_example(model, ex, objective)?;
        let out = model.forward_with(&ex.features, &mut acts);
        total += example_loss(out, ex, objective);
    }
    Ok(total)
}

/// Scratch space for backpropagation.
#[derive(Clone, Debug, Default)]
pub struct BackpropScratch {
    acts: Activations,
    deltas: Vec<Vec<f64>>,
}

/// Adds the gradient of one example's loss to `grads`; returns the loss.
fn accumulate(
    model: &MlpModel,
    ex: &Example,
    objective: Objective,
    grads: &mut Gradients,
    scratch: &mut BackpropScratch,
) -> f64 {
    model.run_layers(&ex.features, &mut scratch.acts);
    let acts = &scratch.acts.layers;
    let n_layers = model.layers.len();
    let out = &acts[n_layers];
    let loss = example_loss(out, ex, objective);

    scratch.deltas.resize(n_layers + 1, Vec::new());
    {
        let d = &mut scratch.deltas[n_layers];
        d.clear();
        d.resize(out.len(), 0.0);
        d[0] = 2.0 * (out[0] - ex.label);
        if let (Objective::Joint { lambda }, Some(s)) = (objective, &ex.shape) {
            for k in 1..out.len() {
                d[k] = 2.0 * lambda * (out[k] - s.0[k - 1]);
            }
        }
        for (dk, a) in d.iter_mut().zip(out) {
            *dk *= a * (1.0 - a);
        }
    }

    for l in (0..n_layers).rev() {
        let layer = &model.layers[l];
        let input = &acts[l];
        let n_in = input.len();
        let (lower, upper) = scratch.deltas.split_at_mut(l + 1);
        let delta = &upper[0];
        let g = &mut grads.layers[l];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g.biases[o] += d;
            let row = &mut g.weights[o * n_in..(o + 1) * n_in];
            for (w, x) in row.iter_mut().zip(input) {
                *w += d * x;
            }
        }
        if l > 0 {
            let prev = &mut lower[l];
            prev.clear();
            prev.resize(n_in, 0.0);
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * n_in..(o + 1) * n_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= a * (1.0 - a);
            }
        }
    }
    loss
}

/// Exact gradient of the summed objective over `batch`, with the loss.
pub fn gradient(model: &MlpModel, batch: &[Example], objective: Objective) -> Result<(Gradients, f64)> {
    if batch.is_empty() {
        return Err(Error::input("gradient of an empty batch"));
    }
    for ex in batch {
        check_example(model, ex, objective)?;
    }
    let mut grads = Gradients::zeros_like(model);
    let mut scratch = BackpropScratch::default();
    let total = batch
        .iter()
        .map(|ex| accumulate(model, ex, objective, &mut grads, &mut scratch))
        .sum();
    Ok((grads, total))
}

/// Gradient over the examples selected by `indices`, into `grads`
/// (cleared first). Inputs must already be validated.
pub(crate) fn gradient_indexed(
    model: &MlpModel,
    examples: &[Example],
    indices: &[usize],
    objective: Objective,
    grads: &mut Gradients,
    scratch: &mut BackpropScratch,
) -> f64 {
    grads.clear();
    indices
        .iter()
        .map(|&i| accumulate(model, &examples[i], objective, grads, scratch))
        .sum()
}

pub(crate) fn validate_examples(model: &MlpModel, examples: &[Example], objective: Objective) -> Result<()> {
    examples.iter().try_for_each(|ex| check_example(model, ex, objective))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_half() {
        let m = MlpModel::zeros(&[5, 3, 9], Head::Joint).unwrap();
        assert!(m.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn hand_composed_network() {
        let layers = vec![
            Layer {
                weights: vec![1.0],
                biases: vec![0.0],
            },
            Layer {
                weights: vec![2.0],
                biases: vec![-1.0],
            },
        ];
        let m = MlpModel::from_layers(vec![1, 1, 1], Head::Plain, layers).unwrap();
        // Hidden sigma(0) = 0.5, output sigma(2 * 0.5 - 1) = 0.5.
        assert_eq!(m.forward(&[0.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn invariants_are_checked() {
        assert!(MlpModel::zeros(&[4, 2, 3], Head::Joint).is_err());
        assert!(MlpModel::zeros(&[4], Head::Plain).is_err());
        let m = MlpModel::zeros(&[2, 2, 1], Head::Plain).unwrap();
        assert!(m.forward(&[1.0]).is_err());
        let mut bad = m.clone();
        bad.layers[0].weights[0] = f64::NAN;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn perfect_predictions_have_zero_gradient() {
        let m = MlpModel::zeros(&[3, 4, 9], Head::Joint).unwrap();
        let half = Shape4([0.5; 8]);
        let batch = vec![Example {
            features: vec![0.1, 0.2, 0.3],
            label: 0.5,
            shape: Some(half),
        }];
        let (g, l) = gradient(&m, &batch, Objective::Joint { lambda: 0.125 }).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn joint_with_zero_lambda_equals_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = MlpModel::random(&[6, 5, 9], Head::Joint, 1.0, &mut rng).unwrap();
        let batch: Vec<_> = (0..8)
            .map(|i| Example {
                features: (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                label: (i % 2) as f64,
                shape: Some(Shape4([rng.gen(); 8])),
            })
            .collect();
        let (a, la) = gradient(&m, &batch, Objective::Plain).unwrap();
        let (b, lb) = gradient(&m, &batch, Objective::Joint { lambda: 0.0 }).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a, b);
    }

    #[test]
    fn joint_objective_requires_shapes_for_positives() {
        let m = MlpModel::zeros(&[2, 2, 9], Head::Joint).unwrap();
        let pos = vec![Example::new(vec![0.0, 1.0], 1.0)];
        assert!(matches!(
            gradient(&m, &pos, Objective::Joint { lambda: 0.125 }),
            Err(Error::Input(_))
        ));
        let neg = vec![Example::new(vec![0.0, 1.0], 0.0)];
        assert!(gradient(&m, &neg, Objective::Joint { lambda: 0.125 }).is_ok());
        assert!(gradient(&m, &[], Objective::Plain).is_err());
    }
}
