//! A small fully-connected embedding network: rectifier hidden layers,
//! linear output, exact hand-derived backprop.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// Layer widths `[input_dim, hidden..., embedding_dim]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidParameter {
                name: "widths",
                reason: format!("need at least input and output widths, got {widths:?}"),
            });
        }
        if widths.contains(&0) {
            return Err(Error::InvalidParameter {
                name: "widths",
                reason: format!("all widths must be >= 1, got {widths:?}"),
            });
        }
        Ok(Self { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn embedding_dim(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }
}

/// One dense layer; `weights` is `out_dim x in_dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<DenseLayer>,
}

impl Mlp {
    /// Seeded uniform fan-in initialization: weights from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero.
    pub fn init(spec: &MlpSpec, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let layers = spec
            .widths
            .windows(2)
            .map(|w| {
                let (in_dim, out_dim) = (w[0], w[1]);
                let bound = 1.0 / (in_dim as f64).sqrt();
                DenseLayer {
                    in_dim,
                    out_dim,
                    weights: (0..in_dim * out_dim)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect(),
                    biases: vec![0.0; out_dim],
                }
            })
            .collect();
        Self { spec: spec.clone(), layers }
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .map(|w| DenseLayer {
                in_dim: w[0],
                out_dim: w[1],
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        Self { spec: spec.clone(), layers }
    }

    pub(crate) fn from_layers(spec: MlpSpec, layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.len() != spec.num_layers() {
            return Err(Error::Shape(format!(
                "{} layers but spec describes {}",
                layers.len(),
                spec.num_layers()
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim != spec.widths[i]
                || layer.out_dim != spec.widths[i + 1]
                || layer.weights.len() != layer.in_dim * layer.out_dim
                || layer.biases.len() != layer.out_dim
            {
                return Err(Error::Shape(format!("layer {i} does not match its spec")));
            }
            if layer
                .weights
                .iter()
                .chain(&layer.biases)
                .any(|v| !v.is_finite())
            {
                return Err(Error::Validation(format!("non-finite parameter in layer {i}")));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.spec.embedding_dim()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Deterministic forward pass; the cache holds every activation the
    /// backward pass needs.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features but network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let n_layers = self.layers.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        let mut pre_activations = Vec::with_capacity(n_layers);
        activations.push(x.to_vec());
        for (idx, layer) in self.layers.iter().enumerate() {
            let input = &activations[idx];
            let mut pre = layer.biases.clone();
            for (o, pre_o) in pre.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                *pre_o += row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>();
            }
            let post = if idx + 1 < n_layers {
                pre.iter().map(|&v| v.max(0.0)).collect()
            } else {
                pre.clone() // linear output
            };
            pre_activations.push(pre);
            activations.push(post);
        }
        Ok(ForwardCache { activations, pre_activations })
    }

    /// Exact gradients of the upstream-weighted embedding with respect to
    /// every weight and bias.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<MlpGrads> {
        self.check_cache(cache)?;
        if upstream.len() != self.embedding_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient has {} entries but embedding has {}",
                upstream.len(),
                self.embedding_dim()
            )));
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = upstream.to_vec();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let input = &cache.activations[idx];
            let g = &mut grads.layers[idx];
            for o in 0..layer.out_dim {
                g.biases[o] = delta[o];
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (slot, &v) in row.iter_mut().zip(input) {
                    *slot = delta[o] * v;
                }
            }
            if idx > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                for o in 0..layer.out_dim {
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += w * delta[o];
                    }
                }
                // Rectifier derivative from the previous pre-activation.
                for (p, &pre) in prev.iter_mut().zip(&cache.pre_activations[idx - 1]) {
                    if pre <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(grads)
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        let ok = cache.activations.len() == self.layers.len() + 1
            && cache.pre_activations.len() == self.layers.len()
            && cache.activations[0].len() == self.input_dim()
            && self
                .layers
                .iter()
                .enumerate()
                .all(|(i, l)| {
                    cache.activations[i + 1].len() == l.out_dim
                        && cache.pre_activations[i].len() == l.out_dim
                });
        if ok {
            Ok(())
        } else {
            Err(Error::State("forward cache does not match this network"))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn embedding(&self) -> &[f64] {
        self.activations.last().expect("non-empty activations")
    }
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for layer in &mut self.layers {
            for x in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *x *= s;
            }
        }
    }
}
