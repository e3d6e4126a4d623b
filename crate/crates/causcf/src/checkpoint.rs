//! Model checkpoints.
//!
//! A checkpoint is a JSON document holding the training configuration, the
//! entity ids the indices refer to, every parameter matrix and accumulator,
//! and a SHA-256 of the body. Reals are written in shortest round-trip form,
//! so a loaded model predicts bit-identically to the saved one.

use std::path::Path;

use causcf_core::data::Dataset;
use causcf_core::model::{EncoderMode, FactorSet, LinearEncoder, Matrix};
use serde::{Deserialize, Serialize};

use crate::config::{Encoder, ModelSettings};
use crate::error::{Error, Result};
use crate::io::{read_json, sha256_bytes, write_json};

pub const FORMAT: &str = "causcf-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MatrixData {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixData {
    fn of(m: &Matrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().to_vec(),
        }
    }

    fn into_matrix(self) -> Result<Matrix> {
        Ok(Matrix::from_vec(self.rows, self.cols, self.data)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EncoderData {
    inputs: MatrixData,
    weights: MatrixData,
    accum: MatrixData,
}

impl EncoderData {
    fn of(e: &LinearEncoder) -> Self {
        Self {
            inputs: MatrixData::of(&e.inputs),
            weights: MatrixData::of(&e.weights),
            accum: MatrixData::of(&e.accum),
        }
    }

    fn into_encoder(self) -> Result<LinearEncoder> {
        Ok(LinearEncoder {
            inputs: self.inputs.into_matrix()?,
            weights: self.weights.into_matrix()?,
            accum: self.accum.into_matrix()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Body {
    model: ModelSettings,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    k: usize,
    users: MatrixData,
    items: MatrixData,
    treatments: MatrixData,
    user_accum: MatrixData,
    item_accum: MatrixData,
    treatment_accum: MatrixData,
    user_encoder: Option<EncoderData>,
    item_encoder: Option<EncoderData>,
}

#[derive(Debug, Serialize, Deserialize)]
struct File {
    format: String,
    version: u32,
    sha256: String,
    body: Body,
}

/// A trained model together with what it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSettings,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub factors: FactorSet,
}

fn digest(body: &Body) -> Result<String> {
    let bytes = serde_json::to_vec(body).map_err(|e| Error::Runtime(format!("serialising checkpoint: {e}")))?;
    Ok(sha256_bytes(&bytes))
}

impl Checkpoint {
    pub fn new(model: ModelSettings, ds: &Dataset, factors: FactorSet) -> Self {
        Self {
            model,
            user_ids: ds.users().ids().to_vec(),
            item_ids: ds.items().ids().to_vec(),
            factors,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = &self.factors;
        let body = Body {
            model: self.model.clone(),
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
            k: f.k,
            users: MatrixData::of(&f.users),
            items: MatrixData::of(&f.items),
            treatments: MatrixData::of(&f.treatments),
            user_accum: MatrixData::of(&f.user_accum),
            item_accum: MatrixData::of(&f.item_accum),
            treatment_accum: MatrixData::of(&f.treatment_accum),
            user_encoder: f.user_encoder.as_ref().map(EncoderData::of),
            item_encoder: f.item_encoder.as_ref().map(EncoderData::of),
        };
        let file = File {
            format: FORMAT.into(),
            version: VERSION,
            sha256: digest(&body)?,
            body,
        };
        write_json(&file, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: File = read_json(path)?;
        if file.format != FORMAT {
            return Err(Error::format(path, format!("not a checkpoint (format tag {:?})", file.format)));
        }
        if file.version != VERSION {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint version {} (expected {VERSION})", file.version),
            ));
        }
        if digest(&file.body)? != file.sha256 {
            return Err(Error::format(path, "checksum mismatch; the checkpoint is corrupt or was edited"));
        }
        let b = file.body;
        let mode = match b.model.encoder {
            Encoder::Id => EncoderMode::IdEmbedding,
            Encoder::Features => EncoderMode::FeatureLinear,
        };
        let factors = FactorSet {
            k: b.k,
            mode,
            users: b.users.into_matrix()?,
            items: b.items.into_matrix()?,
            treatments: b.treatments.into_matrix()?,
            user_accum: b.user_accum.into_matrix()?,
            item_accum: b.item_accum.into_matrix()?,
            treatment_accum: b.treatment_accum.into_matrix()?,
            user_encoder: b.user_encoder.map(EncoderData::into_encoder).transpose()?,
            item_encoder: b.item_encoder.map(EncoderData::into_encoder).transpose()?,
        };
        if factors.n_users() != b.user_ids.len() || factors.n_items() != b.item_ids.len() {
            return Err(Error::format(path, "parameter shapes disagree with the stored ids"));
        }
        Ok(Self {
            model: b.model,
            user_ids: b.user_ids,
            item_ids: b.item_ids,
            factors,
        })
    }

    /// Fails unless `ds` indexes users and items exactly as the training log
    /// did.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.users().ids() != self.user_ids.as_slice() || ds.items().ids() != self.item_ids.as_slice() {
            return Err(Error::Validation(format!(
                "schema mismatch: checkpoint was trained on {} users / {} items with different ids \
                 than the dataset ({} users / {} items)",
                self.user_ids.len(),
                self.item_ids.len(),
                ds.n_users(),
                ds.n_items()
            )));
        }
        Ok(())
    }
}
