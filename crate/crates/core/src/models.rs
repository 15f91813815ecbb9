//! Logit-producing models with manual backpropagation: a polynomial-basis
//! linear classifier for the 1D study and a small fully-connected network
//! for the image study, each usable as the frozen prior or the trainable
//! member of a [`ModelPair`].
//!
//! Checkpoint format (`OVEPG-MODEL-1`): magic string, kind byte, activation
//! byte, little-endian u32 layer-size header, then the parameters as a
//! little-endian f64 block (per layer: weights row-major, then biases).

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::LogitGradient;
use crate::ove::Logits;
use crate::rng::RngState;
use crate::scalar::Scalar;

const MODEL_MAGIC: &[u8; 13] = b"OVEPG-MODEL-1";

/// Hidden-layer nonlinearity; the output layer is always identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Relu => {
                if x > F::zero() {
                    x
                } else {
                    F::zero()
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn derivative_from_output<F: Scalar>(self, y: F) -> F {
        match self {
            Activation::Relu => {
                if y > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Tanh => F::one() - y * y,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            other => Err(Error::Parameter(format!("unknown activation '{other}' (relu|tanh)"))),
        }
    }
}

/// Architecture description, used for init and for pair-identity checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelSpec {
    /// Features (x, x², …, x^degree), no constant term, times a
    /// degree×classes weight matrix.
    Poly { degree: usize, classes: usize },
    /// Affine stack input→hidden…→classes with the given hidden activation.
    Mlp {
        layer_sizes: Vec<usize>,
        activation: Activation,
    },
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Poly { degree, classes } => {
                if *degree < 1 {
                    return Err(Error::Parameter("poly degree must be >= 1".into()));
                }
                if *classes < 2 {
                    return Err(Error::Parameter("need at least 2 classes".into()));
                }
            }
            ModelSpec::Mlp { layer_sizes, .. } => {
                if layer_sizes.len() < 2 {
                    return Err(Error::Parameter(
                        "mlp needs at least input and output sizes".into(),
                    ));
                }
                if layer_sizes.contains(&0) {
                    return Err(Error::Parameter("zero-width layer".into()));
                }
                if *layer_sizes.last().unwrap() < 2 {
                    return Err(Error::Parameter("need at least 2 classes".into()));
                }
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        match self {
            ModelSpec::Poly { classes, .. } => *classes,
            ModelSpec::Mlp { layer_sizes, .. } => *layer_sizes.last().unwrap(),
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            ModelSpec::Poly { .. } => 1,
            ModelSpec::Mlp { layer_sizes, .. } => layer_sizes[0],
        }
    }
}

/// Polynomial-basis linear classifier over scalar inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyBasisModel<F> {
    degree: usize,
    weights: Array2<F>,
}

impl<F: Scalar> PolyBasisModel<F> {
    /// Build from an explicit degree×classes weight matrix.
    pub fn from_weights(weights: Array2<F>) -> Result<Self> {
        if weights.nrows() < 1 || weights.ncols() < 2 {
            return Err(Error::Parameter(format!(
                "poly weights must be degree×classes with degree >= 1, classes >= 2, got {:?}",
                weights.shape()
            )));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("non-finite poly weight".into()));
        }
        Ok(Self {
            degree: weights.nrows(),
            weights,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn weights(&self) -> &Array2<F> {
        &self.weights
    }

    /// Φ(x) = (x, x², …, x^degree) row-wise.
    pub fn features(&self, x: &Array2<F>) -> Result<Array2<F>> {
        if x.ncols() != 1 {
            return Err(Error::Input(format!(
                "poly model takes scalar inputs, got width {}",
                x.ncols()
            )));
        }
        let mut phi = Array2::zeros((x.nrows(), self.degree));
        for (s, row) in x.rows().into_iter().enumerate() {
            let v = row[0];
            let mut p = F::one();
            for d in 0..self.degree {
                p *= v;
                phi[(s, d)] = p;
            }
        }
        Ok(phi)
    }
}

/// One affine layer of an MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<F> {
    weight: Array2<F>,
    bias: Array1<F>,
}

/// Small fully-connected network; hidden layers share one activation, the
/// output layer is identity.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<F> {
    layers: Vec<DenseLayer<F>>,
    activation: Activation,
}

impl<F: Scalar> MlpModel<F> {
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weight.nrows()];
        sizes.extend(self.layers.iter().map(|l| l.weight.ncols()));
        sizes
    }
}

/// A logit model of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Model<F> {
    Poly(PolyBasisModel<F>),
    Mlp(MlpModel<F>),
}

/// Post-activation values retained by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum ForwardCache<F> {
    Poly {
        version: u64,
        features: Array2<F>,
    },
    Mlp {
        version: u64,
        input: Array2<F>,
        hidden: Vec<Array2<F>>,
    },
}

impl<F> ForwardCache<F> {
    fn version(&self) -> u64 {
        match self {
            ForwardCache::Poly { version, .. } | ForwardCache::Mlp { version, .. } => *version,
        }
    }
}

/// Parameter gradients, shaped like the owning model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients<F> {
    pub weights: Vec<Array2<F>>,
    pub biases: Vec<Array1<F>>,
}

impl<F: Scalar> ParamGradients<F> {
    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Initialize a model: weights uniform on ±1/√fan_in, biases zero,
/// reproducible from the state.
pub fn init_model<F: Scalar>(spec: &ModelSpec, state: &RngState) -> Result<Model<F>> {
    spec.validate()?;
    let mut rng = state.substream(&[crate::rng::tags::INIT]).rng();
    let mut uniform_matrix = |rows: usize, cols: usize, fan_in: usize| -> Array2<F> {
        let scale = F::one() / F::real(fan_in as f64).sqrt();
        let mut w = Array2::zeros((rows, cols));
        for v in w.iter_mut() {
            *v = rand::Rng::random_range(&mut rng, -scale..scale);
        }
        w
    };
    match spec {
        ModelSpec::Poly { degree, classes } => {
            let weights = uniform_matrix(*degree, *classes, *degree);
            Ok(Model::Poly(PolyBasisModel {
                degree: *degree,
                weights,
            }))
        }
        ModelSpec::Mlp {
            layer_sizes,
            activation,
        } => {
            let mut layers = Vec::with_capacity(layer_sizes.len() - 1);
            for w in layer_sizes.windows(2) {
                let (fan_in, fan_out) = (w[0], w[1]);
                layers.push(DenseLayer {
                    weight: uniform_matrix(fan_in, fan_out, fan_in),
                    bias: Array1::zeros(fan_out),
                });
            }
            Ok(Model::Mlp(MlpModel {
                layers,
                activation: *activation,
            }))
        }
    }
}

impl<F: Scalar> Model<F> {
    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Poly(m) => ModelSpec::Poly {
                degree: m.degree,
                classes: m.weights.ncols(),
            },
            Model::Mlp(m) => ModelSpec::Mlp {
                layer_sizes: m.layer_sizes(),
                activation: m.activation,
            },
        }
    }

    pub fn classes(&self) -> usize {
        self.spec().classes()
    }

    pub fn input_width(&self) -> usize {
        self.spec().input_width()
    }

    pub fn param_count(&self) -> usize {
        match self {
            Model::Poly(m) => m.weights.len(),
            Model::Mlp(m) => m
                .layers
                .iter()
                .map(|l| l.weight.len() + l.bias.len())
                .sum(),
        }
    }

    fn forward_inner(&self, x: &Array2<F>) -> Result<(Array2<F>, ForwardCacheBody<F>)> {
        match self {
            Model::Poly(m) => {
                let phi = m.features(x)?;
                let logits = phi.dot(&m.weights);
                Ok((logits, ForwardCacheBody::Poly { features: phi }))
            }
            Model::Mlp(m) => {
                if x.ncols() != m.layers[0].weight.nrows() {
                    return Err(Error::Input(format!(
                        "input width {} does not match first layer {}",
                        x.ncols(),
                        m.layers[0].weight.nrows()
                    )));
                }
                let mut hidden = Vec::with_capacity(m.layers.len().saturating_sub(1));
                let mut a = x.clone();
                for (li, layer) in m.layers.iter().enumerate() {
                    let mut z = a.dot(&layer.weight);
                    z += &layer.bias;
                    if li + 1 < m.layers.len() {
                        z.mapv_inplace(|v| m.activation.apply(v));
                        hidden.push(z.clone());
                        a = z;
                    } else {
                        a = z;
                    }
                }
                Ok((
                    a,
                    ForwardCacheBody::Mlp {
                        input: x.clone(),
                        hidden,
                    },
                ))
            }
        }
    }
}

enum ForwardCacheBody<F> {
    Poly { features: Array2<F> },
    Mlp { input: Array2<F>, hidden: Vec<Array2<F>> },
}

/// A frozen prior model paired with a structurally identical trainable one.
/// The prior is reachable only behind a shared reference, so its parameters
/// cannot change after pairing.
#[derive(Debug, Clone)]
pub struct ModelPair<F> {
    prior: TrackedModel<F>,
    tuned: TrackedModel<F>,
}

/// A model plus its parameter-mutation counter.
#[derive(Debug, Clone)]
pub struct TrackedModel<F> {
    model: Model<F>,
    version: u64,
}

impl<F: Scalar> TrackedModel<F> {
    pub fn new(model: Model<F>) -> Self {
        Self { model, version: 0 }
    }

    pub fn model(&self) -> &Model<F> {
        &self.model
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn spec(&self) -> ModelSpec {
        self.model.spec()
    }

    pub fn classes(&self) -> usize {
        self.model.classes()
    }

    pub fn param_count(&self) -> usize {
        self.model.param_count()
    }

    /// Forward pass; the cache is stamped with the current version.
    pub fn forward(&self, x: &Array2<F>) -> Result<(Logits<F>, ForwardCache<F>)> {
        let (raw, body) = self.model.forward_inner(x)?;
        let logits = Logits::new(raw)
            .map_err(|e| Error::Numerical(format!("model produced invalid logits: {e}")))?;
        let cache = match body {
            ForwardCacheBody::Poly { features } => ForwardCache::Poly {
                version: self.version,
                features,
            },
            ForwardCacheBody::Mlp { input, hidden } => ForwardCache::Mlp {
                version: self.version,
                input,
                hidden,
            },
        };
        Ok((logits, cache))
    }

    /// Exact reverse-mode gradients for all parameters.
    pub fn backward(
        &self,
        cache: &ForwardCache<F>,
        logit_grad: &LogitGradient<F>,
    ) -> Result<ParamGradients<F>> {
        if cache.version() != self.version {
            return Err(Error::Usage(format!(
                "stale forward cache: model at version {}, cache at {}",
                self.version,
                cache.version()
            )));
        }
        let g = logit_grad.values();
        match (&self.model, cache) {
            (Model::Poly(_), ForwardCache::Poly { features, .. }) => {
                if features.nrows() != g.nrows() {
                    return Err(Error::Usage("cache batch does not match gradient".into()));
                }
                Ok(ParamGradients {
                    weights: vec![features.t().dot(g)],
                    biases: vec![],
                })
            }
            (Model::Mlp(m), ForwardCache::Mlp { input, hidden, .. }) => {
                if input.nrows() != g.nrows() {
                    return Err(Error::Usage("cache batch does not match gradient".into()));
                }
                let layer_count = m.layers.len();
                let mut weight_grads = vec![Array2::zeros((0, 0)); layer_count];
                let mut bias_grads = vec![Array1::zeros(0); layer_count];
                let mut delta = g.clone();
                for li in (0..layer_count).rev() {
                    let below: &Array2<F> = if li == 0 { input } else { &hidden[li - 1] };
                    weight_grads[li] = below.t().dot(&delta);
                    bias_grads[li] = delta.sum_axis(Axis(0));
                    if li > 0 {
                        let mut next = delta.dot(&m.layers[li].weight.t());
                        for (d, &h) in next.iter_mut().zip(hidden[li - 1].iter()) {
                            *d *= m.activation.derivative_from_output(h);
                        }
                        delta = next;
                    }
                }
                Ok(ParamGradients {
                    weights: weight_grads,
                    biases: bias_grads,
                })
            }
            _ => Err(Error::Usage("cache does not belong to this model family".into())),
        }
    }

    /// One SGD update, `p ← p − lr·g`, elementwise. Bumps the version.
    pub fn apply_step(&mut self, grads: &ParamGradients<F>, lr: F) -> Result<()> {
        match &mut self.model {
            Model::Poly(m) => {
                if grads.weights.len() != 1 || grads.weights[0].raw_dim() != m.weights.raw_dim() {
                    return Err(Error::Input("gradient shape does not match poly model".into()));
                }
                m.weights.zip_mut_with(&grads.weights[0], |p, &g| *p -= lr * g);
            }
            Model::Mlp(m) => {
                if grads.weights.len() != m.layers.len() || grads.biases.len() != m.layers.len() {
                    return Err(Error::Input("gradient layer count mismatch".into()));
                }
                for (layer, (wg, bg)) in m
                    .layers
                    .iter_mut()
                    .zip(grads.weights.iter().zip(grads.biases.iter()))
                {
                    if wg.raw_dim() != layer.weight.raw_dim() || bg.raw_dim() != layer.bias.raw_dim()
                    {
                        return Err(Error::Input("gradient shape mismatch in layer".into()));
                    }
                    layer.weight.zip_mut_with(wg, |p, &g| *p -= lr * g);
                    layer.bias.zip_mut_with(bg, |p, &g| *p -= lr * g);
                }
            }
        }
        self.version += 1;
        Ok(())
    }

    pub fn save_to(&self, w: &mut dyn Write) -> Result<()> {
        save_model(&self.model, w)
    }
}

impl<F: Scalar> ModelPair<F> {
    /// Freeze `model` as the prior and start the tuned member as an
    /// identical copy, so μ = μ_θ at pairing time.
    pub fn freeze_as_prior(model: Model<F>) -> Self {
        let prior = TrackedModel::new(model);
        let tuned = prior.clone();
        Self { prior, tuned }
    }

    /// Pair two existing models; architectures must match exactly.
    pub fn from_parts(prior: Model<F>, tuned: Model<F>) -> Result<Self> {
        if prior.spec() != tuned.spec() {
            return Err(Error::Parameter(format!(
                "pair architecture mismatch: prior {:?} vs tuned {:?}",
                prior.spec(),
                tuned.spec()
            )));
        }
        Ok(Self {
            prior: TrackedModel::new(prior),
            tuned: TrackedModel::new(tuned),
        })
    }

    pub fn prior(&self) -> &TrackedModel<F> {
        &self.prior
    }

    pub fn tuned(&self) -> &TrackedModel<F> {
        &self.tuned
    }

    pub fn tuned_mut(&mut self) -> &mut TrackedModel<F> {
        &mut self.tuned
    }

    pub fn classes(&self) -> usize {
        self.prior.classes()
    }

    /// Serialize both members (prior then tuned) as consecutive model
    /// records.
    pub fn save_to(&self, w: &mut dyn Write) -> Result<()> {
        save_model(&self.prior.model, w)?;
        save_model(&self.tuned.model, w)
    }

    pub fn load_from(r: &mut dyn Read) -> Result<Self> {
        let prior = load_model::<F>(r)?;
        let tuned = load_model::<F>(r)?;
        Self::from_parts(prior, tuned)
    }
}

fn write_u32(w: &mut dyn Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut dyn Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn write_f64_block<'a, F: Scalar, I: Iterator<Item = &'a F>>(w: &mut dyn Write, it: I) -> Result<()> {
    for &v in it {
        w.write_all(&v.to_f64().expect("scalar fits f64").to_le_bytes())?;
    }
    Ok(())
}

fn read_f64<F: Scalar>(r: &mut dyn Read) -> Result<F> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(F::real(f64::from_le_bytes(buf)))
}

/// Write one model record in the `OVEPG-MODEL-1` format.
pub fn save_model<F: Scalar>(model: &Model<F>, w: &mut dyn Write) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    match model {
        Model::Poly(m) => {
            w.write_all(&[0u8, 255u8])?;
            write_u32(w, 2)?;
            write_u32(w, m.degree as u32)?;
            write_u32(w, m.weights.ncols() as u32)?;
            write_f64_block(w, m.weights.iter())?;
        }
        Model::Mlp(m) => {
            let act = match m.activation {
                Activation::Relu => 0u8,
                Activation::Tanh => 1u8,
            };
            w.write_all(&[1u8, act])?;
            let sizes = m.layer_sizes();
            write_u32(w, sizes.len() as u32)?;
            for s in &sizes {
                write_u32(w, *s as u32)?;
            }
            for layer in &m.layers {
                write_f64_block(w, layer.weight.iter())?;
                write_f64_block(w, layer.bias.iter())?;
            }
        }
    }
    Ok(())
}

/// Read one model record in the `OVEPG-MODEL-1` format.
pub fn load_model<F: Scalar>(r: &mut dyn Read) -> Result<Model<F>> {
    let mut magic = [0u8; 13];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Input(format!(
            "bad model magic: {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    let (kind, act) = (head[0], head[1]);
    let size_count = read_u32(r)? as usize;
    if size_count > 64 {
        return Err(Error::Input(format!("implausible layer count {size_count}")));
    }
    let mut sizes = Vec::with_capacity(size_count);
    for _ in 0..size_count {
        let s = read_u32(r)? as usize;
        if s > 1 << 24 {
            return Err(Error::Input(format!("implausible layer size {s}")));
        }
        sizes.push(s);
    }
    let model = match kind {
        0 => {
            if sizes.len() != 2 {
                return Err(Error::Input("poly record needs [degree, classes]".into()));
            }
            let (degree, classes) = (sizes[0], sizes[1]);
            let mut weights = Array2::zeros((degree, classes));
            for v in weights.iter_mut() {
                *v = read_f64::<F>(r)?;
            }
            Model::Poly(PolyBasisModel { degree, weights })
        }
        1 => {
            let activation = match act {
                0 => Activation::Relu,
                1 => Activation::Tanh,
                other => return Err(Error::Input(format!("unknown activation byte {other}"))),
            };
            if sizes.len() < 2 {
                return Err(Error::Input("mlp record needs at least 2 sizes".into()));
            }
            let mut layers = Vec::with_capacity(sizes.len() - 1);
            for w in sizes.windows(2) {
                let mut weight = Array2::zeros((w[0], w[1]));
                for v in weight.iter_mut() {
                    *v = read_f64::<F>(r)?;
                }
                let mut bias = Array1::zeros(w[1]);
                for v in bias.iter_mut() {
                    *v = read_f64::<F>(r)?;
                }
                layers.push(DenseLayer { weight, bias });
            }
            Model::Mlp(MlpModel { layers, activation })
        }
        other => return Err(Error::Input(format!("unknown model kind byte {other}"))),
    };
    model
        .spec()
        .validate()
        .map_err(|e| Error::Input(format!("checkpoint holds an invalid architecture: {e}")))?;
    Ok(model)
}

/// Save a single model to a file.
pub fn save_model_file<F: Scalar>(model: &Model<F>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    save_model(model, &mut f)
}

/// Load a single model from a file.
pub fn load_model_file<F: Scalar>(path: &Path) -> Result<Model<F>> {
    let mut f = std::fs::File::open(path)?;
    let model = load_model(&mut f)?;
    let mut rest = Vec::new();
    f.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Input(format!(
            "{} trailing bytes after model record",
            rest.len()
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn poly_spec() -> ModelSpec {
        ModelSpec::Poly {
            degree: 3,
            classes: 3,
        }
    }

    #[test]
    fn poly_features_are_powers() {
        let m = match init_model::<f64>(&poly_spec(), &RngState::new(0)).unwrap() {
            Model::Poly(m) => m,
            _ => unreachable!(),
        };
        let phi = m.features(&array![[2.0]]).unwrap();
        assert_eq!(phi, array![[2.0, 4.0, 8.0]]);
    }

    #[test]
    fn poly_identity_weights_pass_features_through() {
        let mut weights = Array2::zeros((3, 3));
        for i in 0..3 {
            weights[(i, i)] = 1.0;
        }
        let model = TrackedModel::new(Model::Poly(PolyBasisModel { degree: 3, weights }));
        let (logits, _) = model.forward(&array![[1.5]]).unwrap();
        assert_eq!(logits.values(), &array![[1.5, 2.25, 3.375]]);
    }

    #[test]
    fn poly_rejects_wide_input() {
        let model = TrackedModel::new(init_model::<f64>(&poly_spec(), &RngState::new(0)).unwrap());
        assert!(model.forward(&Array2::zeros((2, 2))).is_err());
    }

    #[test]
    fn single_layer_identity_mlp_is_affine() {
        let spec = ModelSpec::Mlp {
            layer_sizes: vec![3, 2],
            activation: Activation::Relu,
        };
        let model = TrackedModel::new(init_model::<f64>(&spec, &RngState::new(4)).unwrap());
        let x = array![[0.5, -1.0, 2.0], [1.0, 0.0, -0.5]];
        let (logits, _) = model.forward(&x).unwrap();
        if let Model::Mlp(m) = model.model() {
            let want = x.dot(&m.layers[0].weight) + &m.layers[0].bias;
            assert_eq!(logits.values(), &want);
        } else {
            unreachable!()
        }
    }

    #[test]
    fn relu_cache_has_exact_zeros() {
        let spec = ModelSpec::Mlp {
            layer_sizes: vec![2, 4, 2],
            activation: Activation::Relu,
        };
        let model = TrackedModel::new(init_model::<f64>(&spec, &RngState::new(8)).unwrap());
        let x = array![[3.0, -2.0], [-1.0, 4.0], [0.5, 0.5]];
        let (_, cache) = model.forward(&x).unwrap();
        if let ForwardCache::Mlp { hidden, .. } = &cache {
            let zeros = hidden[0].iter().filter(|&&v| v == 0.0).count();
            assert!(zeros > 0, "expected clipped activations");
            assert!(hidden[0].iter().all(|&v| v >= 0.0));
        } else {
            unreachable!()
        }
    }

    #[test]
    fn forward_deterministic() {
        let spec = ModelSpec::Mlp {
            layer_sizes: vec![4, 8, 3],
            activation: Activation::Tanh,
        };
        let model = TrackedModel::new(init_model::<f64>(&spec, &RngState::new(2)).unwrap());
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64) * 0.3 - (j as f64) * 0.7);
        let (a, _) = model.forward(&x).unwrap();
        let (b, _) = model.forward(&x).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn init_reproducible_and_biases_zero() {
        let spec = ModelSpec::Mlp {
            layer_sizes: vec![6, 5, 4],
            activation: Activation::Relu,
        };
        let a = init_model::<f64>(&spec, &RngState::new(123)).unwrap();
        let b = init_model::<f64>(&spec, &RngState::new(123)).unwrap();
        assert_eq!(a, b);
        if let Model::Mlp(m) = &a {
            assert!(m.layers.iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn param_count_mnist_mlp() {
        let spec = ModelSpec::Mlp {
            layer_sizes: vec![784, 64, 10],
            activation: Activation::Relu,
        };
        let m = init_model::<f64>(&spec, &RngState::new(0)).unwrap();
        assert_eq!(m.param_count(), 50_890);
    }

    #[test]
    fn zero_logit_grad_zero_param_grads() {
        let spec = ModelSpec::Mlp {
            layer_sizes: vec![3, 4, 2],
            activation: Activation::Tanh,
        };
        let model = TrackedModel::new(init_model::<f64>(&spec, &RngState::new(1)).unwrap());
        let x = Array2::from_shape_fn((2, 3), |(i, j)| (i + j) as f64 * 0.1);
        let (_, cache) = model.forward(&x).unwrap();
        let zero = zero_grad(2, 2);
        let grads = model.backward(&cache, &zero).unwrap();
        assert!(grads.weights.iter().all(|w| w.iter().all(|&v| v == 0.0)));
        assert!(grads.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn linear_layer_weight_grad_is_xt_g() {
        let spec = ModelSpec::Mlp {
            layer_sizes: vec![3, 2],
            activation: Activation::Relu,
        };
        let model = TrackedModel::new(init_model::<f64>(&spec, &RngState::new(3)).unwrap());
        let x = array![[1.0, 2.0, 3.0], [0.5, -1.0, 0.0]];
        let (_, cache) = model.forward(&x).unwrap();
        let g = grad_of(array![[0.1, -0.2], [0.3, 0.4]]);
        let grads = model.backward(&cache, &g).unwrap();
        let want = x.t().dot(g.values());
        assert_eq!(grads.weights[0], want);
    }

    #[test]
    fn stale_cache_rejected() {
        let model = init_model::<f64>(&poly_spec(), &RngState::new(5)).unwrap();
        let mut tracked = TrackedModel::new(model);
        let x = array![[0.4], [1.1]];
        let (_, cache) = tracked.forward(&x).unwrap();
        let g = zero_grad(2, 3);
        let grads = tracked.backward(&cache, &g).unwrap();
        tracked.apply_step(&grads, 0.1).unwrap();
        assert!(matches!(tracked.backward(&cache, &g), Err(Error::Usage(_))));
    }

    #[test]
    fn pair_starts_identical_and_prior_immutable() {
        let model = init_model::<f64>(&poly_spec(), &RngState::new(6)).unwrap();
        let mut pair = ModelPair::freeze_as_prior(model);
        let x = array![[0.3], [-1.2], [2.0]];
        let (mu, _) = pair.prior().forward(&x).unwrap();
        let (mu_theta, _) = pair.tuned().forward(&x).unwrap();
        assert_eq!(mu.values(), mu_theta.values());

        // Mutate the tuned member; the prior's outputs must not move.
        let (_, cache) = pair.tuned().forward(&x).unwrap();
        let mut g = Array2::zeros((3, 3));
        g[(0, 0)] = 1.0;
        let grads = pair.tuned().backward(&cache, &grad_of(g)).unwrap();
        pair.tuned_mut().apply_step(&grads, 0.5).unwrap();
        let (mu_after, _) = pair.prior().forward(&x).unwrap();
        assert_eq!(mu.values(), mu_after.values());
        let (tuned_after, _) = pair.tuned().forward(&x).unwrap();
        assert_ne!(mu.values(), tuned_after.values());
    }

    #[test]
    fn pair_rejects_architecture_mismatch() {
        let a = init_model::<f64>(&poly_spec(), &RngState::new(0)).unwrap();
        let b = init_model::<f64>(
            &ModelSpec::Poly {
                degree: 2,
                classes: 3,
            },
            &RngState::new(0),
        )
        .unwrap();
        assert!(ModelPair::from_parts(a, b).is_err());
    }

    #[test]
    fn model_roundtrip_bytes() {
        for spec in [
            poly_spec(),
            ModelSpec::Mlp {
                layer_sizes: vec![5, 7, 3],
                activation: Activation::Tanh,
            },
        ] {
            let model = init_model::<f64>(&spec, &RngState::new(42)).unwrap();
            let mut bytes = Vec::new();
            save_model(&model, &mut bytes).unwrap();
            let loaded = load_model::<f64>(&mut bytes.as_slice()).unwrap();
            assert_eq!(model, loaded);
            let mut bytes2 = Vec::new();
            save_model(&loaded, &mut bytes2).unwrap();
            assert_eq!(bytes, bytes2);
        }
    }

    #[test]
    fn pair_roundtrip_bytes() {
        let model = init_model::<f64>(&poly_spec(), &RngState::new(9)).unwrap();
        let pair = ModelPair::freeze_as_prior(model);
        let mut bytes = Vec::new();
        pair.save_to(&mut bytes).unwrap();
        let loaded = ModelPair::<f64>::load_from(&mut bytes.as_slice()).unwrap();
        let mut bytes2 = Vec::new();
        loaded.save_to(&mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn load_rejects_bad_magic() {
        let bytes = b"NOT-A-MODEL-XYZ".to_vec();
        assert!(load_model::<f64>(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn load_rejects_invalid_architecture() {
        // A forged poly record with a single class must not load.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MODEL_MAGIC);
        bytes.extend_from_slice(&[0u8, 255u8]);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes()); // degree
        bytes.extend_from_slice(&1u32.to_le_bytes()); // classes = 1
        for _ in 0..3 {
            bytes.extend_from_slice(&1.0f64.to_le_bytes());
        }
        assert!(load_model::<f64>(&mut bytes.as_slice()).is_err());

        // Implausible layer-count headers are rejected before allocation.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MODEL_MAGIC);
        bytes.extend_from_slice(&[1u8, 0u8]);
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(load_model::<f64>(&mut bytes.as_slice()).is_err());
    }

    fn grad_of(values: Array2<f64>) -> LogitGradient<f64> {
        LogitGradient::new(values)
    }

    fn zero_grad(n: usize, c: usize) -> LogitGradient<f64> {
        grad_of(Array2::zeros((n, c)))
    }
}
