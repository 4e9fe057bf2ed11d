//! Two-stage recurrent grade classifier.
//!
//! Stage one runs an LSTM over the embedded moves and pushes every step
//! through a chain of six dense layers. Head A flattens that chain's output
//! over a fixed number of steps and classifies it directly. Stage two feeds
//! the same dense output into two stacked LSTMs and classifies their last
//! hidden state through two more dense layers (head B). Training minimizes
//! the class-weighted sum of both heads' cross-entropies; predictions come
//! from head B.

use std::path::Path;

use betaboard_nn::weights::{WeightsFile, WeightsHeader, FORMAT_VERSION};
use betaboard_nn::{
    accumulate, scale_all, softmax, weighted_softmax_xent, Activation, Adam, AdamConfig, Dense,
    Lstm, LstmCache, NnError, Parameterized, Tensor,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::Grade;
use crate::embed::{EmbeddedRecord, MoveEmbedding, EMBEDDING_DIM, EMBEDDING_LAYOUT_VERSION};

pub const CLASSES: usize = Grade::CLASSES;
const MODEL_KIND: &str = "gradenet";

#[derive(Debug, Error)]
pub enum GradeNetError {
    #[error("empty move sequence")]
    EmptySequence,
    #[error("move vector has width {0}, expected {EMBEDDING_DIM}")]
    BadWidth(usize),
    #[error("grade {0} is outside the modeled range V4-V13")]
    LabelOutOfRange(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("weights file: {0}")]
    Weights(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

type Result<T> = std::result::Result<T, GradeNetError>;

/// Layer widths. Stored in the weights header so a model rebuilds exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradeNetConfig {
    pub input_dim: usize,
    pub lstm_hidden: usize,
    pub dense: Vec<usize>,
    pub stage2_lstm: Vec<usize>,
    pub head_b_hidden: usize,
    /// Steps head A flattens; longer sequences are truncated everywhere.
    pub max_len: usize,
    pub activation: Activation,
}

impl Default for GradeNetConfig {
    fn default() -> Self {
        Self {
            input_dim: EMBEDDING_DIM,
            lstm_hidden: 64,
            dense: vec![64, 64, 64, 64, 64, 32],
            stage2_lstm: vec![64, 64],
            head_b_hidden: 32,
            max_len: 24,
            activation: Activation::Relu,
        }
    }
}

impl GradeNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GradeNetError::BadConfig(m.to_string()));
        if self.input_dim == 0 || self.lstm_hidden == 0 || self.head_b_hidden == 0 {
            return bad("layer widths must be positive");
        }
        if self.dense.is_empty() || self.dense.contains(&0) {
            return bad("dense chain needs at least one positive width");
        }
        if self.stage2_lstm.is_empty() || self.stage2_lstm.contains(&0) {
            return bad("stage-two LSTM stack needs at least one positive width");
        }
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        Ok(())
    }

    fn junction_width(&self) -> usize {
        *self.dense.last().expect("validated")
    }
}

/// Probabilities over V4–V13.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeDistribution {
    pub probs: [f64; CLASSES],
}

impl GradeDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        let p = softmax(logits);
        let mut probs = [0.0; CLASSES];
        probs.copy_from_slice(&p);
        Self { probs }
    }

    pub fn uniform() -> Self {
        Self {
            probs: [1.0 / CLASSES as f64; CLASSES],
        }
    }

    /// Most likely class; ties go to the lower grade.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = k;
            }
        }
        best
    }

    pub fn grade(&self) -> Grade {
        Grade::from_class_index(self.argmax()).expect("class in range")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradeNet {
    pub config: GradeNetConfig,
    lstm: Lstm,
    dense: Vec<Dense>,
    head_a: Dense,
    stage2: Vec<Lstm>,
    head_b: Vec<Dense>,
}

/// Everything backward needs from one forward pass.
struct ForwardCache {
    steps: usize,
    lstm: LstmCache,
    /// `chain[t][k]` is the input to dense layer `k` at step `t`; the last
    /// entry is the junction output.
    chain: Vec<Vec<Vec<f64>>>,
    flat: Vec<f64>,
    logits_a: Vec<f64>,
    stage2: Vec<LstmCache>,
    head_b_inputs: Vec<Vec<f64>>,
    logits_b: Vec<f64>,
}

fn take_slices<'a>(rest: &mut &'a mut [Tensor], n: usize) -> &'a mut [Tensor] {
    let all = std::mem::take(rest);
    let (head, tail) = all.split_at_mut(n);
    *rest = tail;
    head
}

impl GradeNet {
    pub fn new(config: GradeNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lstm = Lstm::new(config.input_dim, config.lstm_hidden, &mut rng);
        let mut dense = Vec::with_capacity(config.dense.len());
        let mut width = config.lstm_hidden;
        for &out in &config.dense {
            dense.push(Dense::new(width, out, config.activation, &mut rng));
            width = out;
        }
        let head_a = Dense::new(
            config.max_len * config.junction_width(),
            CLASSES,
            Activation::Identity,
            &mut rng,
        );
        let mut stage2 = Vec::with_capacity(config.stage2_lstm.len());
        let mut width = config.junction_width();
        for &hidden in &config.stage2_lstm {
            stage2.push(Lstm::new(width, hidden, &mut rng));
            width = hidden;
        }
        let head_b = vec![
            Dense::new(width, config.head_b_hidden, config.activation, &mut rng),
            Dense::new(config.head_b_hidden, CLASSES, Activation::Identity, &mut rng),
        ];
        Ok(Self {
            config,
            lstm,
            dense,
            head_a,
            stage2,
            head_b,
        })
    }

    fn check_input(&self, seq: &[MoveEmbedding]) -> Result<Vec<Vec<f64>>> {
        if seq.is_empty() {
            return Err(GradeNetError::EmptySequence);
        }
        if self.config.input_dim != EMBEDDING_DIM {
            return Err(GradeNetError::BadWidth(self.config.input_dim));
        }
        Ok(seq
            .iter()
            .take(self.config.max_len)
            .map(|e| e.to_vec())
            .collect())
    }

    fn forward_cached(&self, seq: &[MoveEmbedding]) -> Result<ForwardCache> {
        let xs = self.check_input(seq)?;
        let steps = xs.len();
        let (hs, lstm_cache) = self.lstm.forward(&xs)?;
        let mut chain = Vec::with_capacity(steps);
        for h in hs {
            let mut acts = vec![h];
            for layer in &self.dense {
                let next = layer.forward(acts.last().expect("nonempty"))?;
                acts.push(next);
            }
            chain.push(acts);
        }
        let width = self.config.junction_width();
        let mut flat = vec![0.0; self.config.max_len * width];
        for (t, acts) in chain.iter().enumerate() {
            flat[t * width..(t + 1) * width].copy_from_slice(acts.last().expect("nonempty"));
        }
        let logits_a = self.head_a.forward(&flat)?;

        let mut seq2: Vec<Vec<f64>> = chain
            .iter()
            .map(|acts| acts.last().expect("nonempty").clone())
            .collect();
        let mut stage2 = Vec::with_capacity(self.stage2.len());
        for layer in &self.stage2 {
            let (out, cache) = layer.forward(&seq2)?;
            stage2.push(cache);
            seq2 = out;
        }
        let last = seq2.pop().expect("nonempty");
        let hidden = self.head_b[0].forward(&last)?;
        let logits_b = self.head_b[1].forward(&hidden)?;
        Ok(ForwardCache {
            steps,
            lstm: lstm_cache,
            chain,
            flat,
            logits_a,
            stage2,
            head_b_inputs: vec![last, hidden],
            logits_b,
        })
    }

    /// Head A and head B grade distributions.
    pub fn forward(&self, seq: &[MoveEmbedding]) -> Result<(GradeDistribution, GradeDistribution)> {
        let cache = self.forward_cached(seq)?;
        Ok((
            GradeDistribution::from_logits(&cache.logits_a),
            GradeDistribution::from_logits(&cache.logits_b),
        ))
    }

    /// Raw logits of both heads.
    pub fn logits(&self, seq: &[MoveEmbedding]) -> Result<(Vec<f64>, Vec<f64>)> {
        let cache = self.forward_cached(seq)?;
        Ok((cache.logits_a, cache.logits_b))
    }

    pub fn loss(&self, seq: &[MoveEmbedding], label: Grade, weight: f64) -> Result<f64> {
        let class = class_of(label)?;
        let cache = self.forward_cached(seq)?;
        let (la, _) = weighted_softmax_xent(&cache.logits_a, class, weight)?;
        let (lb, _) = weighted_softmax_xent(&cache.logits_b, class, weight)?;
        Ok(la + lb)
    }

    /// Loss and its gradient with respect to every parameter (ordered like
    /// `params()`), plus the head-B distribution of the forward pass.
    pub fn loss_and_grads(
        &self,
        seq: &[MoveEmbedding],
        label: Grade,
        weight: f64,
    ) -> Result<(f64, Vec<Tensor>, GradeDistribution)> {
        let mut grads = self.zero_grads();
        let (loss, dist) = self.accumulate_grads(seq, label, weight, &mut grads)?;
        Ok((loss, grads, dist))
    }

    fn accumulate_grads(
        &self,
        seq: &[MoveEmbedding],
        label: Grade,
        weight: f64,
        grads: &mut [Tensor],
    ) -> Result<(f64, GradeDistribution)> {
        let class = class_of(label)?;
        let cache = self.forward_cached(seq)?;
        let (la, dla) = weighted_softmax_xent(&cache.logits_a, class, weight)?;
        let (lb, dlb) = weighted_softmax_xent(&cache.logits_b, class, weight)?;

        let mut rest: &mut [Tensor] = grads;
        let g_lstm = take_slices(&mut rest, 3);
        let mut g_dense: Vec<&mut [Tensor]> =
            (0..self.dense.len()).map(|_| take_slices(&mut rest, 2)).collect();
        let g_head_a = take_slices(&mut rest, 2);
        let g_stage2: Vec<&mut [Tensor]> =
            (0..self.stage2.len()).map(|_| take_slices(&mut rest, 3)).collect();
        let g_head_b0 = take_slices(&mut rest, 2);
        let g_head_b1 = take_slices(&mut rest, 2);

        // Head B back to the junction sequence.
        let d_hidden = self.head_b[1].backward(
            &cache.head_b_inputs[1],
            &cache.logits_b,
            &dlb,
            g_head_b1,
        )?;
        let d_last = self.head_b[0].backward(
            &cache.head_b_inputs[0],
            &cache.head_b_inputs[1],
            &d_hidden,
            g_head_b0,
        )?;
        let mut d_seq: Vec<Vec<f64>> = (0..cache.steps)
            .map(|_| vec![0.0; d_last.len()])
            .collect();
        d_seq[cache.steps - 1] = d_last;
        for ((layer, lcache), g) in self
            .stage2
            .iter()
            .zip(&cache.stage2)
            .zip(g_stage2)
            .rev()
        {
            d_seq = layer.backward(lcache, &d_seq, g)?;
        }

        // Head A back to the junction sequence.
        let d_flat = self
            .head_a
            .backward(&cache.flat, &cache.logits_a, &dla, g_head_a)?;
        let width = self.config.junction_width();
        for (t, d) in d_seq.iter_mut().enumerate() {
            for (a, b) in d.iter_mut().zip(&d_flat[t * width..(t + 1) * width]) {
                *a += b;
            }
        }

        // Dense chain, step by step, back to the first LSTM.
        let mut d_h1 = Vec::with_capacity(cache.steps);
        for (acts, d_out) in cache.chain.iter().zip(d_seq) {
            let mut d = d_out;
            for (k, layer) in self.dense.iter().enumerate().rev() {
                d = layer.backward(&acts[k], &acts[k + 1], &d, g_dense[k])?;
            }
            d_h1.push(d);
        }
        self.lstm.backward(&cache.lstm, &d_h1, g_lstm)?;

        Ok((la + lb, GradeDistribution::from_logits(&cache.logits_b)))
    }

    /// Grade from head B; ties go to the lower grade.
    pub fn predict(&self, seq: &[MoveEmbedding]) -> Result<(Grade, GradeDistribution)> {
        let (_, head_b) = self.forward(seq)?;
        Ok((head_b.grade(), head_b))
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let lstm = |prefix: &str, names: &mut Vec<String>| {
            for p in ["w_input", "w_hidden", "bias"] {
                names.push(format!("{prefix}.{p}"));
            }
        };
        let dense = |prefix: &str, names: &mut Vec<String>| {
            for p in ["weight", "bias"] {
                names.push(format!("{prefix}.{p}"));
            }
        };
        lstm("lstm", &mut names);
        for k in 0..self.dense.len() {
            dense(&format!("dense{k}"), &mut names);
        }
        dense("head_a", &mut names);
        for k in 0..self.stage2.len() {
            lstm(&format!("stage2_lstm{k}"), &mut names);
        }
        dense("head_b0", &mut names);
        dense("head_b1", &mut names);
        names
    }

    pub fn to_weights(&self) -> WeightsFile {
        WeightsFile {
            header: WeightsHeader {
                format_version: FORMAT_VERSION,
                embedding_layout_version: EMBEDDING_LAYOUT_VERSION,
                architecture: serde_json::json!({ "kind": MODEL_KIND, "config": self.config }),
                class_labels: Grade::class_labels(),
            },
            tensors: self
                .param_names()
                .into_iter()
                .zip(self.params().into_iter().cloned())
                .collect(),
        }
    }

    pub fn from_weights(file: &WeightsFile) -> Result<Self> {
        let header = &file.header;
        if header.architecture.get("kind").and_then(|k| k.as_str()) != Some(MODEL_KIND) {
            return Err(GradeNetError::Weights("not a grade classifier".into()));
        }
        if header.embedding_layout_version != EMBEDDING_LAYOUT_VERSION {
            return Err(GradeNetError::Weights(format!(
                "embedding layout {} does not match {}",
                header.embedding_layout_version, EMBEDDING_LAYOUT_VERSION
            )));
        }
        if header.class_labels != Grade::class_labels() {
            return Err(GradeNetError::Weights("unexpected class labels".into()));
        }
        let config: GradeNetConfig = serde_json::from_value(
            header.architecture.get("config").cloned().unwrap_or_default(),
        )
        .map_err(|e| GradeNetError::Weights(e.to_string()))?;
        let mut model = GradeNet::new(config, 0)?;
        let names = model.param_names();
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let tensor = file.tensor(name)?;
            if tensor.shape() != slot.shape() {
                return Err(GradeNetError::Weights(format!(
                    "{name} has shape {:?}, expected {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = tensor.clone();
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_weights().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weights(&WeightsFile::load(path)?)
    }
}

impl Parameterized for GradeNet {
    fn params(&self) -> Vec<&Tensor> {
        let mut out = self.lstm.params();
        for d in &self.dense {
            out.extend(d.params());
        }
        out.extend(self.head_a.params());
        for l in &self.stage2 {
            out.extend(l.params());
        }
        for d in &self.head_b {
            out.extend(d.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.lstm.params_mut();
        for d in &mut self.dense {
            out.extend(d.params_mut());
        }
        out.extend(self.head_a.params_mut());
        for l in &mut self.stage2 {
            out.extend(l.params_mut());
        }
        for d in &mut self.head_b {
            out.extend(d.params_mut());
        }
        out
    }
}

fn class_of(grade: Grade) -> Result<usize> {
    grade
        .class_index()
        .ok_or_else(|| GradeNetError::LabelOutOfRange(grade.to_string()))
}

/// Inverse-frequency class weights, normalized to mean 1.
///
/// `weight_g = total / (10 · max(count_g, 1))` before normalization.
pub fn class_weights(counts: &[usize; CLASSES]) -> Result<[f64; CLASSES]> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(GradeNetError::EmptyDataset);
    }
    let mut w = [0.0; CLASSES];
    for (wi, c) in w.iter_mut().zip(counts) {
        *wi = total as f64 / (CLASSES as f64 * (*c).max(1) as f64);
    }
    Ok(normalize_mean_one(w))
}

/// Inverse per-class recall, normalized to mean 1. Classes without support
/// keep weight 1 before normalization; recall is floored at `floor`.
pub fn recall_weights(
    recall: &[Option<f64>; CLASSES],
    floor: f64,
) -> [f64; CLASSES] {
    let mut w = [1.0; CLASSES];
    for (wi, r) in w.iter_mut().zip(recall) {
        if let Some(r) = r {
            *wi = 1.0 / r.max(floor);
        }
    }
    normalize_mean_one(w)
}

fn normalize_mean_one(mut w: [f64; CLASSES]) -> [f64; CLASSES] {
    let mean = w.iter().sum::<f64>() / CLASSES as f64;
    w.iter_mut().for_each(|v| *v /= mean);
    w
}

/// One graded, embedded training example.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub id: String,
    pub grade: Grade,
    pub moves: Vec<MoveEmbedding>,
}

impl LabeledSequence {
    /// `None` when the record has no modeled grade or a malformed vector.
    pub fn from_record(record: &EmbeddedRecord) -> Option<Self> {
        let grade = record.grade.filter(|g| g.class_index().is_some())?;
        let moves = record
            .vectors
            .iter()
            .map(|v| MoveEmbedding::from_slice(v))
            .collect::<Option<Vec<_>>>()?;
        (!moves.is_empty()).then(|| Self {
            id: record.problem_id.clone(),
            grade,
            moves,
        })
    }

    fn sort_key(&self) -> (String, Vec<u64>) {
        (
            self.id.clone(),
            self.moves
                .iter()
                .flat_map(|m| m.values().iter().map(|v| v.to_bits()))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epoch at which class weights switch from inverse frequency to inverse
    /// per-class training recall. `None` disables the switch.
    pub weight_adjust_epoch: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub recall_floor: f64,
    pub model: GradeNetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            weight_adjust_epoch: Some(100),
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            recall_floor: 0.05,
            model: GradeNetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(GradeNetError::BadConfig("epochs and batch_size must be positive".into()));
        }
        if let Some(e) = self.weight_adjust_epoch {
            if e >= self.epochs {
                return Err(GradeNetError::BadConfig(
                    "weight_adjust_epoch must be below epochs".into(),
                ));
            }
        }
        if !(self.learning_rate > 0.0) || !(self.recall_floor > 0.0 && self.recall_floor <= 1.0) {
            return Err(GradeNetError::BadConfig("learning_rate/recall_floor out of range".into()));
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean class-weighted dual loss over the epoch's minibatches.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub dev_loss: Option<f64>,
    pub dev_accuracy: Option<f64>,
    /// Set on the epoch whose weights were recomputed from recall.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reweighted: Option<[f64; CLASSES]>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_weights: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn reweight_epoch(&self) -> Option<usize> {
        self.epochs.iter().find(|e| e.reweighted.is_some()).map(|e| e.epoch)
    }
}

/// Unweighted dual loss and head-B accuracy.
pub fn evaluate_set(model: &GradeNet, data: &[LabeledSequence]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(GradeNetError::EmptyDataset);
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for item in data {
        loss += model.loss(&item.moves, item.grade, 1.0)?;
        if model.predict(&item.moves)?.0 == item.grade {
            correct += 1;
        }
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

fn training_recall(model: &GradeNet, data: &[LabeledSequence]) -> Result<[Option<f64>; CLASSES]> {
    let mut support = [0usize; CLASSES];
    let mut hits = [0usize; CLASSES];
    for item in data {
        let class = class_of(item.grade)?;
        support[class] += 1;
        if model.predict(&item.moves)?.1.argmax() == class {
            hits[class] += 1;
        }
    }
    let mut out = [None; CLASSES];
    for k in 0..CLASSES {
        if support[k] > 0 {
            out[k] = Some(hits[k] as f64 / support[k] as f64);
        }
    }
    Ok(out)
}

/// Minibatch Adam training. Deterministic for a given seed and independent
/// of the order of `train`: items are put in a canonical order before the
/// seeded shuffle.
pub fn train(
    train: &[LabeledSequence],
    dev: Option<&[LabeledSequence]>,
    config: &TrainConfig,
) -> Result<(GradeNet, TrainHistory)> {
    train_with_callback(train, dev, config, |_| {})
}

pub fn train_with_callback<F: FnMut(&EpochRecord)>(
    train: &[LabeledSequence],
    dev: Option<&[LabeledSequence]>,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(GradeNet, TrainHistory)> {
    config.validate()?;
    if train.is_empty() {
        return Err(GradeNetError::EmptyDataset);
    }
    let mut data: Vec<&LabeledSequence> = train.iter().collect();
    data.sort_by_cached_key(|s| s.sort_key());

    let mut model = GradeNet::new(config.model.clone(), config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f5b_u64);
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..Default::default()
        },
        &model.params(),
    );

    let mut counts = [0usize; CLASSES];
    for item in &data {
        counts[class_of(item.grade)?] += 1;
    }
    let mut weights = class_weights(&counts)?;
    let mut history = TrainHistory {
        initial_weights: weights.to_vec(),
        epochs: Vec::with_capacity(config.epochs),
    };

    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        let mut reweighted = None;
        if config.weight_adjust_epoch == Some(epoch) {
            let owned: Vec<LabeledSequence> = data.iter().map(|s| (*s).clone()).collect();
            weights = recall_weights(&training_recall(&model, &owned)?, config.recall_floor);
            reweighted = Some(weights);
        }
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut grads = model.zero_grads();
            for &i in batch {
                let item = data[i];
                let class = class_of(item.grade)?;
                let (loss, dist) =
                    model.accumulate_grads(&item.moves, item.grade, weights[class], &mut grads)?;
                loss_sum += loss;
                if dist.argmax() == class {
                    correct += 1;
                }
            }
            scale_all(&mut grads, 1.0 / batch.len() as f64);
            adam.step(model.params_mut(), &grads)?;
        }
        let (dev_loss, dev_accuracy) = match dev {
            Some(d) if !d.is_empty() => {
                let (l, a) = evaluate_set(&model, d)?;
                (Some(l), Some(a))
            }
            _ => (None, None),
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
            dev_loss,
            dev_accuracy,
            reweighted,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok((model, history))
}

/// Sums per-example gradients; exposed for gradient checking of batches.
pub fn batch_loss_and_grads(
    model: &GradeNet,
    batch: &[(&[MoveEmbedding], Grade, f64)],
) -> Result<(f64, Vec<Tensor>)> {
    let mut grads = model.zero_grads();
    let mut total = 0.0;
    for (seq, grade, weight) in batch {
        let (loss, g, _) = model.loss_and_grads(seq, *grade, *weight)?;
        accumulate(&mut grads, &g)?;
        total += loss;
    }
    Ok((total, grads))
}
