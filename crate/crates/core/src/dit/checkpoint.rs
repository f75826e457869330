//! Checkpoint directories: `manifest.json` plus one RLTK file per tensor.
//!
//! Tensors are stored as f32, so a reloaded model equals the saved one up to
//! f32 rounding of every parameter.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Dit, DitConfig, Stage};
use super::tensor::Mat;
use super::train::{TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::rltk;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: [usize; 2],
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub stage: Stage,
    pub config: DitConfig,
    pub train: TrainConfig,
    pub step: u64,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
    /// Tensors with stored Adam moments.
    pub moments: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";

fn write_mat(path: &Path, m: &Mat) -> Result<()> {
    rltk::write_f64(path, &[m.rows, m.cols], &m.data)
}

fn read_mat(path: &Path, shape: [usize; 2]) -> Result<Mat> {
    let t = rltk::read(path)?;
    if t.shape != shape {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("shape {:?}, manifest says {shape:?}", t.shape),
        });
    }
    Mat::from_vec(shape[0], shape[1], t.to_f64())
}

pub fn save(state: &TrainState, dir: &Path) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let model = &state.model;
    let mut tensors = Vec::new();
    for (name, m) in &model.params {
        let file = format!("{name}.rltk");
        write_mat(&dir.join(&file), m)?;
        tensors.push(TensorEntry {
            name: name.clone(),
            file,
            shape: [m.rows, m.cols],
            trainable: model.trainable.contains(name),
        });
    }
    let mut moments = Vec::new();
    for (name, (m, v)) in &state.moments {
        write_mat(&dir.join(format!("adam_m.{name}.rltk")), m)?;
        write_mat(&dir.join(format!("adam_v.{name}.rltk")), v)?;
        moments.push(name.clone());
    }
    let manifest = CheckpointManifest {
        stage: model.stage,
        config: model.config.clone(),
        train: state.config,
        step: state.step,
        seed: state.seed,
        tensors,
        moments,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load(dir: &Path) -> Result<TrainState> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    manifest.config.validate()?;
    let mut params = BTreeMap::new();
    let mut trainable = BTreeSet::new();
    for entry in &manifest.tensors {
        if entry.file.contains('/') || entry.file.contains('\\') {
            return Err(Error::Manifest(format!(
                "tensor file {} escapes the checkpoint",
                entry.file
            )));
        }
        let m = read_mat(&dir.join(&entry.file), entry.shape)?;
        params.insert(entry.name.clone(), m);
        if entry.trainable {
            trainable.insert(entry.name.clone());
        }
    }
    let mut moments = BTreeMap::new();
    for name in &manifest.moments {
        let shape = params
            .get(name)
            .map(|m| [m.rows, m.cols])
            .ok_or_else(|| Error::Manifest(format!("moments for unknown tensor {name}")))?;
        let m = read_mat(&dir.join(format!("adam_m.{name}.rltk")), shape)?;
        let v = read_mat(&dir.join(format!("adam_v.{name}.rltk")), shape)?;
        moments.insert(name.clone(), (m, v));
    }
    let model = Dit {
        config: manifest.config,
        stage: manifest.stage,
        params,
        trainable,
    };
    let mut state = TrainState::new(model, manifest.train, manifest.seed)?;
    state.step = manifest.step;
    state.moments = moments;
    Ok(state)
}
