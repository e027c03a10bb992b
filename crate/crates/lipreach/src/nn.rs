//! Feedforward neural network controllers.
//!
//! A controller is a chain of dense layers, each applying `act(W*a + b)`
//! elementwise. The product of layer operator norms gives a cheap global
//! Lipschitz upper bound used as a conditioning diagnostic for closed-loop
//! sensitivity estimates.

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Linear,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Upper bound on the activation's derivative magnitude.
    pub fn slope_bound(self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            _ => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            "tanh" => Some(Activation::Tanh),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// One dense layer: `weights` is row-major with one row per output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn output_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NnError {
    #[error("controller has no layers")]
    Empty,
    #[error("layer {layer} has no output units")]
    NoUnits { layer: usize },
    #[error("layer {layer}: weight rows have differing lengths")]
    RaggedWeights { layer: usize },
    #[error("layer {layer}: {rows} weight rows but {bias} bias entries")]
    BiasMismatch {
        layer: usize,
        rows: usize,
        bias: usize,
    },
    #[error("dimension mismatch at layer {layer}: expects input of size {expected}, previous layer produces {found}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer} contains a non-finite parameter")]
    NonFinite { layer: usize },
    #[error("input of length {found} fed to controller with input dimension {expected}")]
    InputLength { expected: usize, found: usize },
}

/// A validated feedforward controller.
///
/// `forward_calls` counts evaluations; simulation code relies on it to
/// check that zero-order hold queries the network exactly once per control
/// step.
#[derive(Debug)]
pub struct Controller {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
    forward_calls: AtomicU64,
}

impl Clone for Controller {
    fn clone(&self) -> Self {
        Controller {
            layers: self.layers.clone(),
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            forward_calls: AtomicU64::new(0),
        }
    }
}

impl Controller {
    /// Validates layer shapes and dimension chaining. Layers are reported
    /// 1-based in errors.
    pub fn new(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Empty);
        }
        for (i, layer) in layers.iter().enumerate() {
            let index = i + 1;
            if layer.weights.is_empty() {
                return Err(NnError::NoUnits { layer: index });
            }
            let width = layer.weights[0].len();
            if layer.weights.iter().any(|row| row.len() != width) {
                return Err(NnError::RaggedWeights { layer: index });
            }
            if layer.bias.len() != layer.weights.len() {
                return Err(NnError::BiasMismatch {
                    layer: index,
                    rows: layer.weights.len(),
                    bias: layer.bias.len(),
                });
            }
            let finite = layer
                .weights
                .iter()
                .flatten()
                .chain(layer.bias.iter())
                .all(|v| v.is_finite());
            if !finite {
                return Err(NnError::NonFinite { layer: index });
            }
            if i > 0 {
                let found = layers[i - 1].output_dim();
                if layer.input_dim() != found {
                    return Err(NnError::DimensionMismatch {
                        layer: index,
                        expected: layer.input_dim(),
                        found,
                    });
                }
            }
        }
        let input_dim = layers[0].input_dim();
        let output_dim = layers[layers.len() - 1].output_dim();
        Ok(Controller {
            layers,
            input_dim,
            output_dim,
            forward_calls: AtomicU64::new(0),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of `forward` calls since construction (or clone).
    pub fn forward_calls(&self) -> u64 {
        self.forward_calls.load(Ordering::Relaxed)
    }

    /// Evaluates the network on a measurement vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        if input.len() != self.input_dim {
            return Err(NnError::InputLength {
                expected: self.input_dim,
                found: input.len(),
            });
        }
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        let mut activation = input.to_vec();
        for layer in &self.layers {
            let mut next = Vec::with_capacity(layer.weights.len());
            for (row, b) in layer.weights.iter().zip(&layer.bias) {
                let mut z = *b;
                for (w, a) in row.iter().zip(&activation) {
                    z += w * a;
                }
                next.push(layer.activation.apply(z));
            }
            activation = next;
        }
        Ok(activation)
    }

    /// Global Lipschitz upper bound in the sup norm: the product over
    /// layers of `||W||_inf` times the activation slope bound.
    pub fn lipschitz_upper_bound(&self) -> f64 {
        self.layers
            .iter()
            .map(|layer| inf_norm(&layer.weights) * layer.activation.slope_bound())
            .product()
    }
}

fn inf_norm(weights: &[Vec<f64>]) -> f64 {
    weights
        .iter()
        .map(|row| row.iter().map(|w| w.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
