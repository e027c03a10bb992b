//! Loading a closed-loop system description from a JSON file.
//!
//! A model file declares the plant (state/input dimensions and one
//! dynamics expression per state, optionally a measurement map), the
//! controller network layer by layer, the box of initial states, the
//! control step, and optionally the safety regions to verify against:
//!
//! ```json
//! {
//!   "plant": {
//!     "state_dim": 2,
//!     "input_dim": 1,
//!     "dynamics": ["x2", "-x1 + u1"],
//!     "measurement": "identity"
//!   },
//!   "controller": {
//!     "layers": [
//!       {"weights": [[0.5, -0.3], [0.2, 0.1]], "bias": [0.0, 0.1], "activation": "tanh"},
//!       {"weights": [[1.0, -1.0]], "bias": [0.0], "activation": "linear"}
//!     ]
//!   },
//!   "init_set": {"lower": [0.8, -0.2], "upper": [1.0, 0.2]},
//!   "control_step": 0.1,
//!   "safety": {
//!     "avoid": [{"lower": [2.0, -1.0], "upper": [3.0, 1.0]}],
//!     "goal": {"lower": [-0.5, -0.5], "upper": [0.5, 0.5]}
//!   }
//! }
//! ```
//!
//! Validation errors name the offending location with a JSON-pointer
//! style path such as `/plant/dynamics/1` or `/controller/layers/0/activation`.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, Expr};
use crate::nn::{Activation, Controller, Layer, NnError};
use crate::reach::{HyperRect, SafetySpec};
use crate::sim::{NncsModel, SimError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Json {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("substeps must be at least 1, got {0}")]
    BadSubsteps(u32),
}

fn schema(pointer: impl Into<String>, message: impl Into<String>) -> ModelError {
    ModelError::Schema {
        pointer: pointer.into(),
        message: message.into(),
    }
}

/// On-disk model schema. The sections mirror the JSON layout one to one
/// and can be serialised back out to produce valid model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub plant: PlantSection,
    pub controller: ControllerSection,
    pub init_set: RectSection,
    pub control_step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety: Option<SafetySection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub state_dim: usize,
    pub input_dim: usize,
    /// One expression per state, `dynamics[i]` giving `x_{i+1}'`.
    pub dynamics: Vec<String>,
    #[serde(default)]
    pub measurement: MeasurementSpec,
}

/// Either the literal keyword `"identity"` or one expression per
/// controller input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasurementSpec {
    Keyword(String),
    Exprs(Vec<String>),
}

impl Default for MeasurementSpec {
    fn default() -> Self {
        MeasurementSpec::Keyword("identity".to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub layers: Vec<LayerSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSection {
    /// Row-major: one row of input weights per output unit.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// One of `relu`, `sigmoid`, `tanh`, `linear`.
    pub activation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetySection {
    #[serde(default)]
    pub avoid: Vec<RectSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<RectSection>,
}

/// Avoid and goal regions as loaded from a model file; the time horizon
/// comes from the caller when building a full [`SafetySpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyRegions {
    pub avoid: Vec<HyperRect>,
    pub goal: Option<HyperRect>,
}

impl SafetyRegions {
    pub fn with_horizon(&self, horizon: f64) -> SafetySpec {
        SafetySpec {
            avoid: self.avoid.clone(),
            goal: self.goal.clone(),
            horizon,
        }
    }
}

/// A validated, ready-to-simulate model.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: Arc<NncsModel>,
    pub init_set: HyperRect,
    pub safety: Option<SafetyRegions>,
}

/// Reads and validates a model file. `substeps` fixes how many
/// integration steps subdivide each control step.
pub fn load_model(path: impl AsRef<Path>, substeps: u32) -> Result<LoadedModel, ModelError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: display.clone(),
        source,
    })?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| ModelError::Json {
        path: display,
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    build_model(&file, substeps)
}

/// Validates an in-memory model description and assembles the system.
pub fn build_model(file: &ModelFile, substeps: u32) -> Result<LoadedModel, ModelError> {
    let state_dim = file.plant.state_dim;
    let input_dim = file.plant.input_dim;
    if state_dim == 0 {
        return Err(schema("/plant/state_dim", "state_dim must be at least 1"));
    }
    if input_dim == 0 {
        return Err(schema("/plant/input_dim", "input_dim must be at least 1"));
    }
    if file.plant.dynamics.len() != state_dim {
        return Err(schema(
            "/plant/dynamics",
            format!(
                "expected {state_dim} expressions (one per state), found {}",
                file.plant.dynamics.len()
            ),
        ));
    }
    let dynamics = parse_exprs(&file.plant.dynamics, "/plant/dynamics")?;
    let measurement = match &file.plant.measurement {
        MeasurementSpec::Keyword(k) if k == "identity" => None,
        MeasurementSpec::Keyword(k) => {
            return Err(schema(
                "/plant/measurement",
                format!("unknown keyword {k:?}; expected \"identity\" or an array of expressions"),
            ))
        }
        MeasurementSpec::Exprs(texts) => Some(parse_exprs(texts, "/plant/measurement")?),
    };

    let layers: Vec<Layer> = file
        .controller
        .layers
        .iter()
        .enumerate()
        .map(|(i, section)| {
            let activation = Activation::from_name(&section.activation).ok_or_else(|| {
                schema(
                    format!("/controller/layers/{i}/activation"),
                    format!(
                        "unknown activation {:?}; expected relu, sigmoid, tanh, or linear",
                        section.activation
                    ),
                )
            })?;
            Ok(Layer {
                weights: section.weights.clone(),
                bias: section.bias.clone(),
                activation,
            })
        })
        .collect::<Result<_, ModelError>>()?;
    let controller = Controller::new(layers).map_err(|e| {
        let pointer = match &e {
            NnError::Empty => "/controller/layers".to_string(),
            NnError::NoUnits { layer }
            | NnError::RaggedWeights { layer }
            | NnError::BiasMismatch { layer, .. }
            | NnError::DimensionMismatch { layer, .. }
            | NnError::NonFinite { layer } => format!("/controller/layers/{}", layer - 1),
            NnError::InputLength { .. } => "/controller".to_string(),
        };
        schema(pointer, e.to_string())
    })?;
    if controller.output_dim() != input_dim {
        return Err(schema(
            "/controller",
            format!(
                "controller produces {} outputs but the plant declares {} inputs",
                controller.output_dim(),
                input_dim
            ),
        ));
    }

    let model = NncsModel::new(
        dynamics,
        measurement,
        controller,
        file.control_step,
        substeps,
    )
    .map_err(|e| match e {
        SimError::BadControlStep(v) => schema(
            "/control_step",
            format!("control_step must be positive and finite, got {v}"),
        ),
        SimError::BadSubsteps => ModelError::BadSubsteps(substeps),
        SimError::VarOutOfRange { context, index, .. } => {
            schema(format!("/plant/{context}/{index}"), e.to_string())
        }
        SimError::MeasurementDim { .. } => schema("/controller", e.to_string()),
        other => schema("/plant", other.to_string()),
    })?;

    let init_set = build_rect(&file.init_set, "/init_set", state_dim)?;
    if !init_set.is_bounded() {
        return Err(schema("/init_set", "bounds must be finite"));
    }

    let safety = match &file.safety {
        None => None,
        Some(section) => {
            let avoid = section
                .avoid
                .iter()
                .enumerate()
                .map(|(i, r)| build_rect(r, &format!("/safety/avoid/{i}"), state_dim))
                .collect::<Result<Vec<_>, _>>()?;
            let goal = section
                .goal
                .as_ref()
                .map(|r| build_rect(r, "/safety/goal", state_dim))
                .transpose()?;
            Some(SafetyRegions { avoid, goal })
        }
    };

    Ok(LoadedModel {
        model: Arc::new(model),
        init_set,
        safety,
    })
}

fn parse_exprs(texts: &[String], pointer: &str) -> Result<Vec<Expr>, ModelError> {
    texts
        .iter()
        .enumerate()
        .map(|(i, text)| {
            expr::parse(text).map_err(|e| schema(format!("{pointer}/{i}"), e.to_string()))
        })
        .collect()
}

fn build_rect(
    section: &RectSection,
    pointer: &str,
    state_dim: usize,
) -> Result<HyperRect, ModelError> {
    if section.lower.len() != state_dim || section.upper.len() != state_dim {
        return Err(schema(
            pointer,
            format!(
                "expected {state_dim} lower and upper bounds, found {} and {}",
                section.lower.len(),
                section.upper.len()
            ),
        ));
    }
    HyperRect::new(section.lower.clone(), section.upper.clone())
        .map_err(|e| schema(pointer, e.to_string()))
}
