//! Pairwise three-way factorization of the user × item × treatment outcome
//! tensor.
//!
//! The score of user `u`, item `i` under treatment `t` is the sum of the three
//! pairwise inner products
//!
//! ```text
//! ŷ(u, i, t) = p_u·q_i + p_u·d_t + q_i·d_t
//! ```
//!
//! and the purchase probability is `σ(ŷ)`. Training minimises binary
//! cross-entropy over the observed cells plus an ℓ2 penalty, with mini-batch
//! Adagrad. Both potential outcomes of a pair are inferred by substituting each
//! treatment factor, which gives the individual treatment effect.
//!
//! With the treatment factors frozen at zero the model is plain logistic
//! matrix factorization, `ŷ = p_u·q_i`.
//!
//! User and item factors come either from an id embedding (rows of `P` and
//! `Q`) or from a linear projection of the pre-treatment features,
//! `p_u = W_uᵀ x_u`, `q_i = W_iᵀ x_i`.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Dataset, InteractionRecord, ObservedCell};
use crate::error::{Error, Result};
use crate::math::{bce_with_logit, sigmoid, softplus};
use crate::optim::Adagrad;
use crate::rng::SeededRng;

pub const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderMode {
    IdEmbedding,
    FeatureLinear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Latent rank.
    pub k: usize,
    pub l2_coeff: f64,
    pub learning_rate: f64,
    /// Observed cells per mini-batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub encoder_mode: EncoderMode,
    /// Report ITEs as probability differences (`true`) or raw score
    /// differences.
    pub use_probability_scale_ite: bool,
    /// Keep `D` at zero, reducing the model to logistic matrix factorization.
    pub freeze_treatment_factors: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 8,
            l2_coeff: 1e-5,
            learning_rate: 0.001,
            batch_size: 512,
            epochs: 10,
            seed: 0,
            encoder_mode: EncoderMode::IdEmbedding,
            use_probability_scale_ite: true,
            freeze_treatment_factors: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.l2_coeff >= 0.0 && self.l2_coeff.is_finite()) {
            return bad("l2_coeff must be nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        Ok(())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::FeatureLength {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    fn uniform(rows: usize, cols: usize, rng: &mut SeededRng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.uniform_range(-INIT_RANGE, INIT_RANGE))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// `selfᵀ x` for a column vector `x` of length `rows`.
    fn transpose_mul(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (f, xf) in x.iter().enumerate() {
            if *xf != 0.0 {
                for (o, w) in out.iter_mut().zip(self.row(f)) {
                    *o += xf * w;
                }
            }
        }
    }
}

/// Feature inputs and projection weights for [`EncoderMode::FeatureLinear`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    /// One row of raw features per entity (`count × F`).
    pub inputs: Matrix,
    /// Projection `F × k`.
    pub weights: Matrix,
    pub accum: Matrix,
}

impl LinearEncoder {
    fn encode(&self, features: &[f64], out: &mut [f64]) {
        self.weights.transpose_mul(features, out);
    }
}

/// All learned parameters plus their Adagrad accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    pub k: usize,
    pub mode: EncoderMode,
    /// User factors `P` (`m × k`); empty in feature mode.
    pub users: Matrix,
    /// Item factors `Q` (`n × k`); empty in feature mode.
    pub items: Matrix,
    /// Treatment factors `D` (`l × k`).
    pub treatments: Matrix,
    pub user_accum: Matrix,
    pub item_accum: Matrix,
    pub treatment_accum: Matrix,
    pub user_encoder: Option<LinearEncoder>,
    pub item_encoder: Option<LinearEncoder>,
}

/// Draws every parameter i.i.d. uniform in `[-0.05, 0.05]` from the seeded
/// generator, in the order `P`, `Q`, `D`, `W_u`, `W_i`; accumulators start at
/// zero. Treatment factors start at zero when frozen.
pub fn init_factors(config: &ModelConfig, ds: &Dataset) -> Result<FactorSet> {
    config.validate()?;
    let k = config.k;
    let (m, n, l) = (ds.n_users(), ds.n_items(), ds.n_treatments());
    let mut rng = SeededRng::new(config.seed);
    let id_mode = config.encoder_mode == EncoderMode::IdEmbedding;
    let (pm, qn) = if id_mode { (m, n) } else { (0, 0) };
    let users = Matrix::uniform(pm, k, &mut rng);
    let items = Matrix::uniform(qn, k, &mut rng);
    let treatments = if config.freeze_treatment_factors {
        Matrix::zeros(l, k)
    } else {
        Matrix::uniform(l, k, &mut rng)
    };
    let (user_encoder, item_encoder) = if id_mode {
        (None, None)
    } else {
        let su = ds.schema();
        let encoder = |rows: usize, width: usize, table: &[f64], rng: &mut SeededRng| LinearEncoder {
            inputs: Matrix {
                rows,
                cols: width,
                data: table.to_vec(),
            },
            weights: Matrix::uniform(width, k, rng),
            accum: Matrix::zeros(width, k),
        };
        (
            Some(encoder(m, su.user_features, ds.user_feature_table(), &mut rng)),
            Some(encoder(n, su.item_features, ds.item_feature_table(), &mut rng)),
        )
    };
    Ok(FactorSet {
        k,
        mode: config.encoder_mode,
        user_accum: Matrix::zeros(pm, k),
        item_accum: Matrix::zeros(qn, k),
        treatment_accum: Matrix::zeros(l, k),
        users,
        items,
        treatments,
        user_encoder,
        item_encoder,
    })
}

/// What to encode: a known entity by index, or an arbitrary feature vector.
#[derive(Debug, Clone, Copy)]
pub enum EncodeInput<'a> {
    Index(u32),
    Features(&'a [f64]),
}

impl FactorSet {
    pub fn n_users(&self) -> usize {
        match &self.user_encoder {
            Some(e) => e.inputs.rows(),
            None => self.users.rows(),
        }
    }

    pub fn n_items(&self) -> usize {
        match &self.item_encoder {
            Some(e) => e.inputs.rows(),
            None => self.items.rows(),
        }
    }

    pub fn n_treatments(&self) -> usize {
        self.treatments.rows()
    }

    fn check(&self, u: u32, i: u32, t: u8) -> Result<()> {
        let oob = |kind, index: usize, len| Err(Error::IndexOutOfRange { kind, index, len });
        if u as usize >= self.n_users() {
            return oob("user", u as usize, self.n_users());
        }
        if i as usize >= self.n_items() {
            return oob("item", i as usize, self.n_items());
        }
        if usize::from(t) >= self.n_treatments() {
            return oob("treatment", usize::from(t), self.n_treatments());
        }
        Ok(())
    }

    /// `p_u`, with encoder mode handled.
    pub fn encode_user(&self, input: EncodeInput<'_>) -> Result<Vec<f64>> {
        encode(&self.users, self.user_encoder.as_ref(), self.k, input, "user")
    }

    /// `q_i`, with encoder mode handled.
    pub fn encode_item(&self, input: EncodeInput<'_>) -> Result<Vec<f64>> {
        encode(&self.items, self.item_encoder.as_ref(), self.k, input, "item")
    }

    #[inline]
    fn user_vec<'a>(&'a self, u: u32, buf: &'a mut [f64]) -> &'a [f64] {
        match &self.user_encoder {
            Some(e) => {
                e.encode(e.inputs.row(u as usize), buf);
                buf
            }
            None => self.users.row(u as usize),
        }
    }

    #[inline]
    fn item_vec<'a>(&'a self, i: u32, buf: &'a mut [f64]) -> &'a [f64] {
        match &self.item_encoder {
            Some(e) => {
                e.encode(e.inputs.row(i as usize), buf);
                buf
            }
            None => self.items.row(i as usize),
        }
    }

    /// Unchecked score; indices must be in range.
    #[inline]
    fn score_unchecked(&self, u: u32, i: u32, t: u8) -> f64 {
        let d = self.treatments.row(usize::from(t));
        if self.mode == EncoderMode::IdEmbedding {
            return pairwise_score(self.users.row(u as usize), self.items.row(i as usize), d);
        }
        let k = self.k;
        let (mut pb, mut qb) = ([0.0f64; 64], [0.0f64; 64]);
        let (mut pv, mut qv) = (Vec::new(), Vec::new());
        let (pbuf, qbuf): (&mut [f64], &mut [f64]) = if k <= 64 {
            (&mut pb[..k], &mut qb[..k])
        } else {
            pv.resize(k, 0.0);
            qv.resize(k, 0.0);
            (&mut pv, &mut qv)
        };
        let p = self.user_vec(u, pbuf);
        let q = self.item_vec(i, qbuf);
        pairwise_score(p, q, d)
    }

    /// `ŷ(u, i, t) = p_u·q_i + p_u·d_t + q_i·d_t`.
    pub fn predict_score(&self, u: u32, i: u32, t: u8) -> Result<f64> {
        self.check(u, i, t)?;
        Ok(self.score_unchecked(u, i, t))
    }

    /// `σ(ŷ(u, i, t))`.
    pub fn predict_probability(&self, u: u32, i: u32, t: u8) -> Result<f64> {
        Ok(sigmoid(self.predict_score(u, i, t)?))
    }

    /// Individual treatment effect `out(u,i,1) - out(u,i,0)` on the
    /// probability or raw-score scale. Defined for two treatments only.
    pub fn estimate_ite(&self, u: u32, i: u32, probability_scale: bool) -> Result<f64> {
        if self.n_treatments() != 2 {
            return Err(Error::TreatmentArms(self.n_treatments()));
        }
        let s1 = self.predict_score(u, i, 1)?;
        let s0 = self.score_unchecked(u, i, 0);
        Ok(if probability_scale {
            sigmoid(s1) - sigmoid(s0)
        } else {
            s1 - s0
        })
    }

    /// ITE for every `(user, item)` pair, row-major by user.
    pub fn ite_matrix(&self, probability_scale: bool) -> Result<Vec<f64>> {
        if self.n_treatments() != 2 {
            return Err(Error::TreatmentArms(self.n_treatments()));
        }
        let (m, n) = (self.n_users(), self.n_items());
        let mut out = Vec::with_capacity(m * n);
        let items: Vec<Vec<f64>> = (0..n as u32)
            .map(|i| self.encode_item(EncodeInput::Index(i)).expect("in range"))
            .collect();
        let (d0, d1) = (self.treatments.row(0), self.treatments.row(1));
        for u in 0..m as u32 {
            let p = self.encode_user(EncodeInput::Index(u)).expect("in range");
            for q in &items {
                let s0 = pairwise_score(&p, q, d0);
                let s1 = pairwise_score(&p, q, d1);
                out.push(if probability_scale { sigmoid(s1) - sigmoid(s0) } else { s1 - s0 });
            }
        }
        Ok(out)
    }

    pub fn squared_norm(&self) -> f64 {
        let enc = |e: &Option<LinearEncoder>| e.as_ref().map_or(0.0, |e| e.weights.squared_norm());
        self.users.squared_norm()
            + self.items.squared_norm()
            + self.treatments.squared_norm()
            + enc(&self.user_encoder)
            + enc(&self.item_encoder)
    }

    pub fn is_finite(&self) -> bool {
        let enc_ok = |e: &Option<LinearEncoder>| {
            e.as_ref()
                .is_none_or(|e| e.weights.as_slice().iter().all(|x| x.is_finite()))
        };
        [&self.users, &self.items, &self.treatments]
            .iter()
            .all(|m| m.as_slice().iter().all(|x| x.is_finite()))
            && enc_ok(&self.user_encoder)
            && enc_ok(&self.item_encoder)
    }

    /// Mean binary cross-entropy over the records of `ds` (no penalty).
    pub fn log_loss(&self, ds: &Dataset) -> Result<f64> {
        if ds.is_empty() {
            return Err(Error::EmptyGroup("evaluation"));
        }
        let mut total = 0.0;
        for r in ds.records() {
            self.check(r.user, r.item, r.treatment)?;
            total += bce_with_logit(self.score_unchecked(r.user, r.item, r.treatment), f64::from(r.outcome));
        }
        Ok(total / ds.len() as f64)
    }
}

#[inline]
fn pairwise_score(p: &[f64], q: &[f64], d: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..p.len() {
        s += p[j] * q[j] + p[j] * d[j] + q[j] * d[j];
    }
    s
}

fn encode(
    table: &Matrix,
    encoder: Option<&LinearEncoder>,
    k: usize,
    input: EncodeInput<'_>,
    kind: &'static str,
) -> Result<Vec<f64>> {
    match (encoder, input) {
        (None, EncodeInput::Index(ix)) => {
            if ix as usize >= table.rows() {
                return Err(Error::IndexOutOfRange {
                    kind,
                    index: ix as usize,
                    len: table.rows(),
                });
            }
            Ok(table.row(ix as usize).to_vec())
        }
        (None, EncodeInput::Features(_)) => Err(Error::InvalidConfig(format!(
            "{kind} features given but the model uses id embeddings"
        ))),
        (Some(e), input) => {
            let x = match input {
                EncodeInput::Index(ix) => {
                    if ix as usize >= e.inputs.rows() {
                        return Err(Error::IndexOutOfRange {
                            kind,
                            index: ix as usize,
                            len: e.inputs.rows(),
                        });
                    }
                    e.inputs.row(ix as usize)
                }
                EncodeInput::Features(x) => x,
            };
            if x.len() != e.weights.rows() {
                return Err(Error::FeatureLength {
                    expected: e.weights.rows(),
                    found: x.len(),
                });
            }
            let mut out = vec![0.0; k];
            e.encode(x, &mut out);
            Ok(out)
        }
    }
}

/// Loss trajectory of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Full objective (mean BCE + penalty) before training and after each
    /// epoch.
    pub objective: Vec<f64>,
    /// Mean BCE over all records, same schedule as `objective`.
    pub data_loss: Vec<f64>,
    pub cells: usize,
    pub records: usize,
}

/// Gradient buffers for one mini-batch, touched rows tracked so clearing and
/// updating cost is proportional to the batch.
struct BatchGrads {
    k: usize,
    user: Vec<f64>,
    item: Vec<f64>,
    treatment: Vec<f64>,
    user_touched: Vec<u32>,
    item_touched: Vec<u32>,
    treatment_touched: Vec<u32>,
    user_flag: Vec<bool>,
    item_flag: Vec<bool>,
    treatment_flag: Vec<bool>,
    user_enc: Vec<f64>,
    item_enc: Vec<f64>,
}

impl BatchGrads {
    fn new(fs: &FactorSet) -> Self {
        let k = fs.k;
        let (m, n, l) = (fs.n_users(), fs.n_items(), fs.n_treatments());
        let enc_len = |e: &Option<LinearEncoder>| e.as_ref().map_or(0, |e| e.weights.as_slice().len());
        Self {
            k,
            user: vec![0.0; m * k],
            item: vec![0.0; n * k],
            treatment: vec![0.0; l * k],
            user_touched: Vec::new(),
            item_touched: Vec::new(),
            treatment_touched: Vec::new(),
            user_flag: vec![false; m],
            item_flag: vec![false; n],
            treatment_flag: vec![false; l],
            user_enc: vec![0.0; enc_len(&fs.user_encoder)],
            item_enc: vec![0.0; enc_len(&fs.item_encoder)],
        }
    }

    fn row<'a>(buf: &'a mut [f64], flag: &mut [bool], touched: &mut Vec<u32>, r: u32, k: usize) -> &'a mut [f64] {
        if !flag[r as usize] {
            flag[r as usize] = true;
            touched.push(r);
        }
        &mut buf[r as usize * k..(r as usize + 1) * k]
    }
}

/// Scaled data-term gradient of one observation group, added into `grads`.
/// `weight` multiplies `σ(ŷ)·count - positives`.
fn accumulate_cell(fs: &FactorSet, cell: &ObservedCell, weight: f64, freeze_d: bool, grads: &mut BatchGrads) {
    let k = fs.k;
    let mut pb = [0.0f64; 64];
    let mut qb = [0.0f64; 64];
    let mut pv = Vec::new();
    let mut qv = Vec::new();
    let (p, q): (&[f64], &[f64]) = if k <= 64 {
        (fs.user_vec(cell.user, &mut pb[..k]), fs.item_vec(cell.item, &mut qb[..k]))
    } else {
        pv.resize(k, 0.0);
        qv.resize(k, 0.0);
        (fs.user_vec(cell.user, &mut pv), fs.item_vec(cell.item, &mut qv))
    };
    let d = fs.treatments.row(usize::from(cell.treatment));
    let z = pairwise_score(p, q, d);
    let g = weight * (sigmoid(z) * f64::from(cell.count) - f64::from(cell.positives));
    if g == 0.0 {
        return;
    }
    // ∂ŷ/∂p = q + d, ∂ŷ/∂q = p + d, ∂ŷ/∂d = p + q
    match &fs.user_encoder {
        None => {
            let row = BatchGrads::row(&mut grads.user, &mut grads.user_flag, &mut grads.user_touched, cell.user, k);
            for j in 0..k {
                row[j] += g * (q[j] + d[j]);
            }
        }
        Some(e) => {
            let x = e.inputs.row(cell.user as usize);
            for (f, xf) in x.iter().enumerate() {
                if *xf != 0.0 {
                    let row = &mut grads.user_enc[f * k..(f + 1) * k];
                    for j in 0..k {
                        row[j] += g * xf * (q[j] + d[j]);
                    }
                }
            }
        }
    }
    match &fs.item_encoder {
        None => {
            let row = BatchGrads::row(&mut grads.item, &mut grads.item_flag, &mut grads.item_touched, cell.item, k);
            for j in 0..k {
                row[j] += g * (p[j] + d[j]);
            }
        }
        Some(e) => {
            let x = e.inputs.row(cell.item as usize);
            for (f, xf) in x.iter().enumerate() {
                if *xf != 0.0 {
                    let row = &mut grads.item_enc[f * k..(f + 1) * k];
                    for j in 0..k {
                        row[j] += g * xf * (p[j] + d[j]);
                    }
                }
            }
        }
    }
    if !freeze_d {
        let row = BatchGrads::row(
            &mut grads.treatment,
            &mut grads.treatment_flag,
            &mut grads.treatment_touched,
            u32::from(cell.treatment),
            k,
        );
        for j in 0..k {
            row[j] += g * (p[j] + q[j]);
        }
    }
}

/// Applies penalty gradient and Adagrad to every touched row, then clears
/// the batch buffers.
fn apply_batch(fs: &mut FactorSet, grads: &mut BatchGrads, opt: &Adagrad, l2: f64) {
    let k = grads.k;
    let step_rows = |params: &mut Matrix, accum: &mut Matrix, buf: &mut [f64], touched: &mut Vec<u32>, flag: &mut [bool]| {
        for &r in touched.iter() {
            let r = r as usize;
            let g = &mut buf[r * k..(r + 1) * k];
            let row = params.row_mut(r);
            for j in 0..k {
                g[j] += 2.0 * l2 * row[j];
            }
            opt.step(row, accum.row_mut(r), g);
            g.iter_mut().for_each(|x| *x = 0.0);
            flag[r] = false;
        }
        touched.clear();
    };
    step_rows(&mut fs.users, &mut fs.user_accum, &mut grads.user, &mut grads.user_touched, &mut grads.user_flag);
    step_rows(&mut fs.items, &mut fs.item_accum, &mut grads.item, &mut grads.item_touched, &mut grads.item_flag);
    step_rows(
        &mut fs.treatments,
        &mut fs.treatment_accum,
        &mut grads.treatment,
        &mut grads.treatment_touched,
        &mut grads.treatment_flag,
    );
    let step_dense = |enc: &mut Option<LinearEncoder>, buf: &mut [f64]| {
        if let Some(e) = enc {
            for (g, w) in buf.iter_mut().zip(e.weights.as_slice()) {
                *g += 2.0 * l2 * w;
            }
            opt.step(e.weights.as_mut_slice(), e.accum.as_mut_slice(), buf);
            buf.iter_mut().for_each(|x| *x = 0.0);
        }
    };
    step_dense(&mut fs.user_encoder, &mut grads.user_enc);
    step_dense(&mut fs.item_encoder, &mut grads.item_enc);
}

fn full_losses(fs: &FactorSet, cells: &[ObservedCell], records: usize, l2: f64) -> (f64, f64) {
    let mut total = 0.0;
    for c in cells {
        let z = fs.score_unchecked(c.user, c.item, c.treatment);
        let pos = f64::from(c.positives);
        total += pos * softplus(-z) + (f64::from(c.count) - pos) * softplus(z);
    }
    let data = total / records as f64;
    (data + l2 * fs.squared_norm(), data)
}

/// Mini-batch Adagrad on mean BCE + `l2_coeff·‖θ‖²`.
///
/// Records are grouped into observed `(user, item, treatment)` cells; a cell
/// holding `c` records with `s` purchases contributes the same loss and
/// gradient as its `c` records. Each epoch visits the cells once in a seeded
/// shuffled order; each batch's data gradient is divided by the batch's record
/// count and the penalty is applied to the rows the batch touched. Execution
/// is sequential and deterministic for a given seed.
pub fn train(fs: &mut FactorSet, ds: &Dataset, config: &ModelConfig) -> Result<TrainReport> {
    config.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyGroup("training"));
    }
    if fs.k != config.k || fs.mode != config.encoder_mode {
        return Err(Error::InvalidConfig(
            "factor set rank or encoder mode differs from the config".to_string(),
        ));
    }
    if fs.n_users() != ds.n_users() || fs.n_items() != ds.n_items() || fs.n_treatments() != ds.n_treatments() {
        return Err(Error::InvalidConfig(format!(
            "factor set shape ({}, {}, {}) does not match dataset ({}, {}, {})",
            fs.n_users(),
            fs.n_items(),
            fs.n_treatments(),
            ds.n_users(),
            ds.n_items(),
            ds.n_treatments()
        )));
    }
    if let Some((ix, r)) = ds.records().iter().enumerate().find(|(_, r)| r.outcome > 1) {
        return Err(Error::NonBinaryLabel { record: ix + 1, value: r.outcome });
    }
    let mut cells = ds.observed_cells();
    let opt = Adagrad::new(config.learning_rate);
    let l2 = config.l2_coeff;
    let freeze_d = config.freeze_treatment_factors;
    if freeze_d {
        fs.treatments.as_mut_slice().iter_mut().for_each(|x| *x = 0.0);
    }
    // Shuffle stream is separate from the initialisation stream.
    let mut rng = SeededRng::new(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut grads = BatchGrads::new(fs);

    let (obj, data) = full_losses(fs, &cells, ds.len(), l2);
    let mut report = TrainReport {
        objective: vec![obj],
        data_loss: vec![data],
        cells: cells.len(),
        records: ds.len(),
    };
    for epoch in 0..config.epochs {
        rng.shuffle(&mut cells);
        for (batch, chunk) in cells.chunks(config.batch_size).enumerate() {
            let batch_records: u32 = chunk.iter().map(|c| c.count).sum();
            let weight = 1.0 / f64::from(batch_records);
            for cell in chunk {
                accumulate_cell(fs, cell, weight, freeze_d, &mut grads);
            }
            apply_batch(fs, &mut grads, &opt, l2);
            if !batch_is_finite(fs, chunk) {
                return Err(Error::NonFinite { epoch: epoch + 1, batch: batch + 1 });
            }
        }
        let (obj, data) = full_losses(fs, &cells, ds.len(), l2);
        if !obj.is_finite() {
            return Err(Error::NonFinite {
                epoch: epoch + 1,
                batch: cells.len().div_ceil(config.batch_size),
            });
        }
        report.objective.push(obj);
        report.data_loss.push(data);
    }
    Ok(report)
}

fn batch_is_finite(fs: &FactorSet, chunk: &[ObservedCell]) -> bool {
    let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
    finite(fs.treatments.as_slice())
        && fs.user_encoder.as_ref().is_none_or(|e| finite(e.weights.as_slice()))
        && fs.item_encoder.as_ref().is_none_or(|e| finite(e.weights.as_slice()))
        && chunk.iter().all(|c| {
            (fs.users.rows() == 0 || finite(fs.users.row(c.user as usize)))
                && (fs.items.rows() == 0 || finite(fs.items.row(c.item as usize)))
        })
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// `max |a - n| / max(|a|, |n|, 1e-6)` over every parameter the record
    /// touches.
    pub max_relative_error: f64,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
    pub parameters: usize,
}

/// Per-record objective: `BCE(y, σ(ŷ)) + l2·(‖p_u‖² + ‖q_i‖² + ‖d_t‖²)`,
/// where in feature mode the user/item terms are the squared norms of the
/// projection weights.
pub fn record_loss(fs: &FactorSet, record: &InteractionRecord, l2: f64) -> Result<f64> {
    let z = fs.predict_score(record.user, record.item, record.treatment)?;
    Ok(bce_with_logit(z, f64::from(record.outcome)) + l2 * record_penalty(fs, record))
}

fn record_penalty(fs: &FactorSet, r: &InteractionRecord) -> f64 {
    let sq = |xs: &[f64]| xs.iter().map(|x| x * x).sum::<f64>();
    let user = match &fs.user_encoder {
        Some(e) => e.weights.squared_norm(),
        None => sq(fs.users.row(r.user as usize)),
    };
    let item = match &fs.item_encoder {
        Some(e) => e.weights.squared_norm(),
        None => sq(fs.items.row(r.item as usize)),
    };
    user + item + sq(fs.treatments.row(usize::from(r.treatment)))
}

#[derive(Clone, Copy)]
enum Param {
    User(usize),
    Item(usize),
    Treatment(usize),
    UserEnc(usize),
    ItemEnc(usize),
}

fn param_mut(fs: &mut FactorSet, p: Param) -> &mut f64 {
    match p {
        Param::User(ix) => &mut fs.users.as_mut_slice()[ix],
        Param::Item(ix) => &mut fs.items.as_mut_slice()[ix],
        Param::Treatment(ix) => &mut fs.treatments.as_mut_slice()[ix],
        Param::UserEnc(ix) => &mut fs.user_encoder.as_mut().expect("feature mode").weights.as_mut_slice()[ix],
        Param::ItemEnc(ix) => &mut fs.item_encoder.as_mut().expect("feature mode").weights.as_mut_slice()[ix],
    }
}

/// Analytical gradient of [`record_loss`] as `(parameter, value)` pairs, using
/// the same accumulation routine as training.
fn record_gradient(fs: &FactorSet, r: &InteractionRecord, l2: f64) -> Vec<(Param, f64)> {
    let k = fs.k;
    let mut grads = BatchGrads::new(fs);
    let cell = ObservedCell {
        user: r.user,
        item: r.item,
        treatment: r.treatment,
        count: 1,
        positives: u32::from(r.outcome),
    };
    accumulate_cell(fs, &cell, 1.0, false, &mut grads);
    let (u, i, t) = (r.user as usize, r.item as usize, usize::from(r.treatment));
    let mut out = Vec::new();
    match &fs.user_encoder {
        None => out.extend((0..k).map(|j| {
            (Param::User(u * k + j), grads.user[u * k + j] + 2.0 * l2 * fs.users.row(u)[j])
        })),
        Some(e) => out.extend(
            e.weights
                .as_slice()
                .iter()
                .enumerate()
                .map(|(ix, w)| (Param::UserEnc(ix), grads.user_enc[ix] + 2.0 * l2 * w)),
        ),
    }
    match &fs.item_encoder {
        None => out.extend((0..k).map(|j| {
            (Param::Item(i * k + j), grads.item[i * k + j] + 2.0 * l2 * fs.items.row(i)[j])
        })),
        Some(e) => out.extend(
            e.weights
                .as_slice()
                .iter()
                .enumerate()
                .map(|(ix, w)| (Param::ItemEnc(ix), grads.item_enc[ix] + 2.0 * l2 * w)),
        ),
    }
    out.extend((0..k).map(|j| {
        (
            Param::Treatment(t * k + j),
            grads.treatment[t * k + j] + 2.0 * l2 * fs.treatments.row(t)[j],
        )
    }));
    out
}

/// Compares every analytical partial derivative of the per-record objective
/// against a central finite difference with step `eps`.
pub fn gradient_check(fs: &FactorSet, record: &InteractionRecord, l2: f64, eps: f64) -> Result<GradientCheck> {
    if !(eps > 1e-8 && eps < 1e-2) {
        return Err(Error::InvalidConfig(format!("eps {eps} outside (1e-8, 1e-2)")));
    }
    fs.check(record.user, record.item, record.treatment)?;
    let analytic = record_gradient(fs, record, l2);
    let mut probe = fs.clone();
    let mut result = GradientCheck {
        max_relative_error: 0.0,
        max_abs_analytic: 0.0,
        max_abs_numeric: 0.0,
        parameters: analytic.len(),
    };
    for (param, a) in analytic {
        let orig = *param_mut(&mut probe, param);
        *param_mut(&mut probe, param) = orig + eps;
        let plus = record_loss(&probe, record, l2)?;
        *param_mut(&mut probe, param) = orig - eps;
        let minus = record_loss(&probe, record, l2)?;
        *param_mut(&mut probe, param) = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        result.max_relative_error = result.max_relative_error.max(rel);
        result.max_abs_analytic = result.max_abs_analytic.max(a.abs());
        result.max_abs_numeric = result.max_abs_numeric.max(numeric.abs());
    }
    Ok(result)
}
