//! JSON checkpoints. Floats are written in shortest round-trip decimal
//! form, so a load reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{ProblemSpec, Scaling};

use super::{AdamState, NetworkArch, NetworkParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub step: u64,
    pub seed: u64,
    /// Training loss of the last update; absent before the first one.
    pub loss: Option<f64>,
    /// Loss reduction the parameters were last trained with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    rows: usize,
    cols: usize,
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    format_version: u32,
    arch: NetworkArch,
    problem: ProblemSpec,
    scaling: Scaling,
    params: Vec<LayerDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer_state: Option<AdamState>,
    meta: CheckpointMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: NetworkArch,
    pub problem: ProblemSpec,
    pub scaling: Scaling,
    pub params: NetworkParams,
    pub optimizer_state: Option<AdamState>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let params = (0..self.params.n_layers())
            .map(|l| {
                let (rows, cols) = self.params.shape(l);
                LayerDoc {
                    rows,
                    cols,
                    weight: self.params.weights(l).chunks(cols).map(<[f64]>::to_vec).collect(),
                    bias: self.params.bias(l).to_vec(),
                }
            })
            .collect();
        let doc = CheckpointDoc {
            format_version: FORMAT_VERSION,
            arch: self.arch.clone(),
            problem: self.problem.clone(),
            scaling: self.scaling.clone(),
            params,
            optimizer_state: self.optimizer_state.clone(),
            meta: self.meta.clone(),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("checkpoint serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: CheckpointDoc = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::schema(path, e.into_inner().to_string())
        })?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::schema(
                "format_version",
                format!("unsupported version {}", doc.format_version),
            ));
        }
        doc.arch.validate()?;
        doc.problem.validate()?;
        let shapes = doc.arch.layer_shapes();
        if shapes.len() != doc.params.len() {
            return Err(Error::schema(
                "params",
                format!("{} layers stored, architecture has {}", doc.params.len(), shapes.len()),
            ));
        }
        let mut flat = Vec::with_capacity(doc.arch.param_count());
        for (l, (layer, &(rows, cols))) in doc.params.iter().zip(&shapes).enumerate() {
            if layer.rows != rows || layer.cols != cols {
                return Err(Error::schema(
                    format!("params[{l}]"),
                    format!("shape {}x{} != architecture {rows}x{cols}", layer.rows, layer.cols),
                ));
            }
            if layer.weight.len() != rows || layer.weight.iter().any(|r| r.len() != cols) {
                return Err(Error::schema(format!("params[{l}].weight"), "ragged weight matrix"));
            }
            if layer.bias.len() != rows {
                return Err(Error::schema(format!("params[{l}].bias"), "bias length mismatch"));
            }
            for row in &layer.weight {
                flat.extend_from_slice(row);
            }
            flat.extend_from_slice(&layer.bias);
        }
        let params = NetworkParams::from_flat(&doc.arch, flat)?;
        if let Some(state) = &doc.optimizer_state {
            if state.m.len() != params.len() || state.v.len() != params.len() {
                return Err(Error::schema(
                    "optimizer_state",
                    "moment buffers do not match the parameter count",
                ));
            }
        }
        Ok(Checkpoint {
            arch: doc.arch,
            problem: doc.problem,
            scaling: doc.scaling,
            params,
            optimizer_state: doc.optimizer_state,
            meta: doc.meta,
        })
    }

    /// Writes through a temporary sibling and renames, so an interrupted
    /// save never clobbers an existing checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, self.to_json())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    checkpoint.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
