//! Autoregressive route generator.
//!
//! Beta sequences are written as tokens over absolute board positions:
//! `START_L(c)`, `START_R(c)`, `MOVE(hand, c)` and `END`. A token embedding
//! feeds an LSTM whose hidden state is projected to logits over the whole
//! vocabulary. Sampling masks every token that would break a problem rule,
//! so accepted routes are valid problems whose holds are all used.

use std::path::Path;

use betaboard_nn::weights::{WeightsFile, WeightsHeader, FORMAT_VERSION};
use betaboard_nn::{
    scale_all, softmax, weighted_softmax_xent, Activation, Adam, AdamConfig, Dense, Lstm,
    LstmState, NnError, Parameterized, Tensor,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::betamove::{beam_search, BetaError, BetaSequence, BetaSolver, Hand, SuccessParams};
use crate::board::{
    GridCoord, Hold, HoldFeatureTable, HoldRole, Problem, BOARD_CELLS, TOP_ROW,
};

/// `2·198` start tokens, `2·198` move tokens and `END`.
pub const VOCAB_SIZE: usize = 4 * BOARD_CELLS + 1;
pub const END_ID: usize = VOCAB_SIZE - 1;
/// Input-only beginning-of-sequence symbol; never predicted.
pub const BOS_ID: usize = VOCAB_SIZE;
const MODEL_KIND: &str = "deeprouteset";

#[derive(Debug, Error)]
pub enum GenError {
    #[error("token id {0} outside the vocabulary")]
    BadToken(usize),
    #[error("malformed token sequence: {0}")]
    BadTokens(String),
    #[error("sequence cannot be tokenized: {0}")]
    BadSequence(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("sample rejected: {0}")]
    Rejected(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("weights file: {0}")]
    Weights(String),
    #[error(transparent)]
    Beta(#[from] BetaError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

type Result<T> = std::result::Result<T, GenError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MoveToken {
    StartLeft(GridCoord),
    StartRight(GridCoord),
    Move(Hand, GridCoord),
    End,
}

impl MoveToken {
    pub fn id(self) -> usize {
        match self {
            MoveToken::StartLeft(c) => c.index(),
            MoveToken::StartRight(c) => BOARD_CELLS + c.index(),
            MoveToken::Move(Hand::Left, c) => 2 * BOARD_CELLS + c.index(),
            MoveToken::Move(Hand::Right, c) => 3 * BOARD_CELLS + c.index(),
            MoveToken::End => END_ID,
        }
    }

    pub fn from_id(id: usize) -> Result<Self> {
        if id == END_ID {
            return Ok(MoveToken::End);
        }
        if id > END_ID {
            return Err(GenError::BadToken(id));
        }
        let cell = GridCoord::from_index(id % BOARD_CELLS).expect("cell index in range");
        Ok(match id / BOARD_CELLS {
            0 => MoveToken::StartLeft(cell),
            1 => MoveToken::StartRight(cell),
            2 => MoveToken::Move(Hand::Left, cell),
            _ => MoveToken::Move(Hand::Right, cell),
        })
    }

    /// Hand and hold of a placing token.
    pub fn placement(self) -> Option<(Hand, GridCoord)> {
        match self {
            MoveToken::StartLeft(c) => Some((Hand::Left, c)),
            MoveToken::StartRight(c) => Some((Hand::Right, c)),
            MoveToken::Move(h, c) => Some((h, c)),
            MoveToken::End => None,
        }
    }
}

/// The first two moves become start tokens; `END` is appended.
pub fn tokenize(seq: &BetaSequence) -> Result<Vec<MoveToken>> {
    if seq.moves.len() < 3 {
        return Err(GenError::BadSequence("fewer than three moves".into()));
    }
    let (first, second) = (&seq.moves[0], &seq.moves[1]);
    if first.hand != Hand::Left || second.hand != Hand::Right {
        return Err(GenError::BadSequence("opening moves are not left then right".into()));
    }
    for m in [first, second] {
        if seq.problem.role_of(m.target) != Some(HoldRole::Start) {
            return Err(GenError::BadSequence(format!("{} is not a start hold", m.target)));
        }
    }
    let mut out = vec![
        MoveToken::StartLeft(first.target),
        MoveToken::StartRight(second.target),
    ];
    out.extend(seq.moves[2..].iter().map(|m| MoveToken::Move(m.hand, m.target)));
    out.push(MoveToken::End);
    Ok(out)
}

/// Hand placements of a complete token sequence.
pub fn detokenize(tokens: &[MoveToken]) -> Result<Vec<(Hand, GridCoord)>> {
    let bad = |m: &str| Err(GenError::BadTokens(m.to_string()));
    match tokens {
        [MoveToken::StartLeft(_), MoveToken::StartRight(_), .., MoveToken::End] => {}
        _ => return bad("expected START_L START_R ... END"),
    }
    let body = &tokens[..tokens.len() - 1];
    let mut out = Vec::with_capacity(body.len());
    for (i, t) in body.iter().enumerate() {
        match (i, t) {
            (0, MoveToken::StartLeft(_)) | (1, MoveToken::StartRight(_)) => {}
            (i, MoveToken::Move(..)) if i >= 2 => {}
            _ => return bad("start token after the opening or END inside the sequence"),
        }
        out.push(t.placement().expect("non-END token"));
    }
    Ok(out)
}

/// Problem implied by a route. The two opening holds are starts. The trailing
/// run of holds on `finish_row` (at most the last two) are finishes. Every
/// other hold is intermediate.
pub fn route_problem(moves: &[(Hand, GridCoord)], finish_row: u8) -> Problem {
    let mut holds: Vec<Hold> = Vec::new();
    let add = |pos: GridCoord, role: HoldRole, holds: &mut Vec<Hold>| {
        if holds.iter().all(|h| h.position != pos) {
            holds.push(Hold::new(pos, role));
        }
    };
    for &(_, pos) in moves.iter().take(2) {
        add(pos, HoldRole::Start, &mut holds);
    }
    let mut finishes = Vec::new();
    for &(_, pos) in moves.iter().skip(2).rev() {
        if pos.row() != finish_row || finishes.len() == 2 {
            break;
        }
        if !finishes.contains(&pos) {
            finishes.push(pos);
        }
    }
    for &(_, pos) in moves.iter().skip(2) {
        let role = if finishes.contains(&pos) {
            HoldRole::Finish
        } else {
            HoldRole::Intermediate
        };
        add(pos, role, &mut holds);
    }
    holds.sort_by_key(|h| (h.position.row(), h.position.col()));
    Problem::new(holds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub embedding_dim: usize,
    pub hidden: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 32,
            hidden: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    /// `[VOCAB_SIZE + 1, embedding_dim]`; the last row is `BOS`.
    embedding: Tensor,
    lstm: Lstm,
    output: Dense,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        if config.embedding_dim == 0 || config.hidden == 0 {
            return Err(GenError::BadConfig("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = VOCAB_SIZE + 1;
        let data = (0..rows * config.embedding_dim)
            .map(|_| rng.gen_range(-0.1..0.1))
            .collect();
        let embedding = Tensor::from_vec(&[rows, config.embedding_dim], data)?;
        let lstm = Lstm::new(config.embedding_dim, config.hidden, &mut rng);
        let output = Dense::new(config.hidden, VOCAB_SIZE, Activation::Identity, &mut rng);
        Ok(Self {
            config,
            embedding,
            lstm,
            output,
        })
    }

    fn embed(&self, id: usize) -> Vec<f64> {
        let d = self.config.embedding_dim;
        self.embedding.data()[id * d..(id + 1) * d].to_vec()
    }

    fn inputs(tokens: &[MoveToken]) -> Vec<usize> {
        std::iter::once(BOS_ID)
            .chain(tokens[..tokens.len() - 1].iter().map(|t| t.id()))
            .collect()
    }

    /// Summed next-token cross-entropy of one sequence (teacher forcing),
    /// with gradients added into `grads`.
    fn accumulate(&self, tokens: &[MoveToken], grads: &mut [Tensor]) -> Result<f64> {
        let inputs = Self::inputs(tokens);
        let xs: Vec<Vec<f64>> = inputs.iter().map(|&i| self.embed(i)).collect();
        let (hs, cache) = self.lstm.forward(&xs)?;
        let (g_embed, rest) = grads.split_at_mut(1);
        let (g_lstm, g_out) = rest.split_at_mut(3);
        let mut loss = 0.0;
        let mut d_hs = Vec::with_capacity(hs.len());
        for (h, target) in hs.iter().zip(tokens) {
            let logits = self.output.forward(h)?;
            let (l, d_logits) = weighted_softmax_xent(&logits, target.id(), 1.0)?;
            loss += l;
            d_hs.push(self.output.backward(h, &logits, &d_logits, g_out)?);
        }
        let d_xs = self.lstm.backward(&cache, &d_hs, g_lstm)?;
        let d = self.config.embedding_dim;
        let g = g_embed[0].data_mut();
        for (&id, dx) in inputs.iter().zip(d_xs) {
            for (a, b) in g[id * d..(id + 1) * d].iter_mut().zip(dx) {
                *a += b;
            }
        }
        Ok(loss)
    }

    /// Summed next-token loss of one sequence and its gradients.
    pub fn loss_and_grads(&self, tokens: &[MoveToken]) -> Result<(f64, Vec<Tensor>)> {
        check_tokens(tokens)?;
        let mut grads = self.zero_grads();
        let loss = self.accumulate(tokens, &mut grads)?;
        Ok((loss, grads))
    }

    /// Mean next-token cross-entropy over a corpus.
    pub fn mean_token_loss(&self, corpus: &[Vec<MoveToken>]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for tokens in corpus {
            check_tokens(tokens)?;
            let inputs = Self::inputs(tokens);
            let mut state = LstmState::zeros(self.config.hidden);
            for (&input, target) in inputs.iter().zip(tokens) {
                self.lstm.step(&self.embed(input), &mut state)?;
                let logits = self.output.forward(&state.h)?;
                total += weighted_softmax_xent(&logits, target.id(), 1.0)?.0;
                count += 1;
            }
        }
        if count == 0 {
            return Err(GenError::EmptyCorpus);
        }
        Ok(total / count as f64)
    }

    pub fn to_weights(&self) -> WeightsFile {
        let names = [
            "embedding",
            "lstm.w_input",
            "lstm.w_hidden",
            "lstm.bias",
            "output.weight",
            "output.bias",
        ];
        WeightsFile {
            header: WeightsHeader {
                format_version: FORMAT_VERSION,
                embedding_layout_version: 0,
                architecture: serde_json::json!({
                    "kind": MODEL_KIND,
                    "vocab_size": VOCAB_SIZE,
                    "config": self.config,
                }),
                class_labels: Vec::new(),
            },
            tensors: names
                .iter()
                .map(|n| n.to_string())
                .zip(self.params().into_iter().cloned())
                .collect(),
        }
    }

    pub fn from_weights(file: &WeightsFile) -> Result<Self> {
        let arch = &file.header.architecture;
        if arch.get("kind").and_then(|k| k.as_str()) != Some(MODEL_KIND) {
            return Err(GenError::Weights("not a route generator".into()));
        }
        if arch.get("vocab_size").and_then(|v| v.as_u64()) != Some(VOCAB_SIZE as u64) {
            return Err(GenError::Weights("vocabulary size mismatch".into()));
        }
        let config: GeneratorConfig =
            serde_json::from_value(arch.get("config").cloned().unwrap_or_default())
                .map_err(|e| GenError::Weights(e.to_string()))?;
        let mut model = Generator::new(config, 0)?;
        let names: Vec<String> = model.to_weights().tensors.into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let t = file.tensor(name)?;
            if t.shape() != slot.shape() {
                return Err(GenError::Weights(format!("{name} has the wrong shape")));
            }
            *slot = t.clone();
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

impl Parameterized for Generator {
    fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embedding];
        out.extend(self.lstm.params());
        out.extend(self.output.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        out.extend(self.lstm.params_mut());
        out.extend(self.output.params_mut());
        out
    }
}

fn check_tokens(tokens: &[MoveToken]) -> Result<()> {
    if tokens.is_empty() || tokens.last() != Some(&MoveToken::End) {
        return Err(GenError::BadTokens("sequence must end with END".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub model: GeneratorConfig,
}

impl Default for GenTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            model: GeneratorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GenHistory {
    /// Mean per-token loss seen during each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Teacher-forced next-token training with Adam. The corpus is put in a
/// canonical order before the seeded shuffle.
pub fn train_generator(
    corpus: &[Vec<MoveToken>],
    config: &GenTrainConfig,
) -> Result<(Generator, GenHistory)> {
    if corpus.is_empty() {
        return Err(GenError::EmptyCorpus);
    }
    if config.epochs == 0 || config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(GenError::BadConfig("epochs, batch_size and learning_rate must be positive".into()));
    }
    for tokens in corpus {
        check_tokens(tokens)?;
    }
    let mut data: Vec<Vec<usize>> = corpus
        .iter()
        .map(|t| t.iter().map(|x| x.id()).collect())
        .collect();
    data.sort();
    let data: Vec<Vec<MoveToken>> = data
        .into_iter()
        .map(|ids| ids.into_iter().map(|i| MoveToken::from_id(i).expect("valid id")).collect())
        .collect();

    let mut model = Generator::new(config.model.clone(), config.seed)?;
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..Default::default()
        },
        &model.params(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6e6e_0001);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = GenHistory::default();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut grads = model.zero_grads();
            let mut tokens = 0usize;
            for &i in batch {
                epoch_loss += model.accumulate(&data[i], &mut grads)?;
                tokens += data[i].len();
            }
            epoch_tokens += tokens;
            scale_all(&mut grads, 1.0 / tokens as f64);
            adam.step(model.params_mut(), &grads)?;
        }
        history.epoch_losses.push(epoch_loss / epoch_tokens as f64);
    }
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Softmax temperature; `0` picks the most likely legal token.
    pub temperature: f64,
    pub seed: u64,
    pub max_moves: usize,
    pub min_holds: usize,
    pub max_holds: usize,
    pub max_start_row: u8,
    pub finish_row: u8,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            seed: 0,
            max_moves: 24,
            min_holds: 4,
            max_holds: 14,
            max_start_row: 5,
            finish_row: TOP_ROW,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.temperature >= 0.0
            && self.temperature.is_finite()
            && self.min_holds >= 3
            && self.min_holds <= self.max_holds
            && self.max_holds <= 64
            && self.max_moves >= 3
            && self.max_start_row < self.finish_row
            && self.finish_row <= TOP_ROW;
        if ok {
            Ok(())
        } else {
            Err(GenError::BadConfig("generation limits out of range".into()))
        }
    }
}

/// Partial route during sampling.
#[derive(Debug, Clone, Default)]
pub struct RouteState {
    moves: Vec<(Hand, GridCoord)>,
    holds: Vec<GridCoord>,
    ended: bool,
}

impl RouteState {
    pub fn moves(&self) -> &[(Hand, GridCoord)] {
        &self.moves
    }

    pub fn hold_count(&self) -> usize {
        self.holds.len()
    }

    pub fn is_legal(&self, token: MoveToken, cfg: &GenConfig) -> bool {
        if self.ended {
            return false;
        }
        let step = self.moves.len();
        match token {
            MoveToken::StartLeft(c) => step == 0 && c.row() <= cfg.max_start_row,
            MoveToken::StartRight(c) => {
                // The solver puts the left hand on the start that comes
                // first by (col, row); keep the opening in that order.
                step == 1
                    && c.row() <= cfg.max_start_row
                    && (c.col(), c.row()) >= {
                        let l = self.moves[0].1;
                        (l.col(), l.row())
                    }
            }
            MoveToken::Move(_, c) => {
                step >= 2
                    && step < cfg.max_moves
                    && !self.holds.contains(&c)
                    && self.holds.len() < cfg.max_holds
            }
            MoveToken::End => {
                step >= 3
                    && self.holds.len() >= cfg.min_holds
                    && self.moves.last().is_some_and(|m| m.1.row() == cfg.finish_row)
            }
        }
    }

    pub fn legal_mask(&self, cfg: &GenConfig) -> Vec<bool> {
        (0..VOCAB_SIZE)
            .map(|id| self.is_legal(MoveToken::from_id(id).expect("in vocabulary"), cfg))
            .collect()
    }

    fn push(&mut self, token: MoveToken) {
        match token.placement() {
            Some((hand, c)) => {
                self.moves.push((hand, c));
                if !self.holds.contains(&c) {
                    self.holds.push(c);
                }
            }
            None => self.ended = true,
        }
    }
}

/// Masked, temperature-scaled next-token distribution. Illegal tokens get
/// exactly zero. Temperature 0 puts all mass on the first most likely legal
/// token. `None` when nothing is legal.
pub fn masked_distribution(logits: &[f64], mask: &[bool], temperature: f64) -> Option<Vec<f64>> {
    let best = logits
        .iter()
        .zip(mask)
        .enumerate()
        .filter(|(_, (_, ok))| **ok)
        .fold(None::<(usize, f64)>, |acc, (i, (l, _))| match acc {
            Some((_, b)) if *l <= b => acc,
            _ => Some((i, *l)),
        })?;
    let mut probs = vec![0.0; logits.len()];
    if temperature == 0.0 {
        probs[best.0] = 1.0;
        return Some(probs);
    }
    let scaled: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(l, ok)| if *ok { (l - best.1) / temperature } else { f64::NEG_INFINITY })
        .collect();
    let p = softmax(&scaled);
    for ((dst, src), ok) in probs.iter_mut().zip(p).zip(mask) {
        *dst = if *ok { src } else { 0.0 };
    }
    Some(probs)
}

/// One generated problem with the hand sequence it was sampled as.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedRoute {
    pub tokens: Vec<MoveToken>,
    pub problem: Problem,
    pub beta: BetaSequence,
}

/// Samples one route, continuing from `prefix` when given.
pub fn sample_route<R: Rng + ?Sized>(
    model: &Generator,
    cfg: &GenConfig,
    table: &HoldFeatureTable,
    params: &SuccessParams,
    prefix: &[MoveToken],
    rng: &mut R,
) -> Result<GeneratedRoute> {
    cfg.validate()?;
    let mut route = RouteState::default();
    let mut state = LstmState::zeros(model.config.hidden);
    let mut tokens: Vec<MoveToken> = Vec::new();
    let mut input = BOS_ID;
    loop {
        model.lstm.step(&model.embed(input), &mut state)?;
        let next = if let Some(&t) = prefix.get(tokens.len()) {
            if !route.is_legal(t, cfg) {
                return Err(GenError::BadTokens(format!("prefix token {t:?} is illegal")));
            }
            t
        } else {
            let logits = model.output.forward(&state.h)?;
            let mask = route.legal_mask(cfg);
            let probs = masked_distribution(&logits, &mask, cfg.temperature).ok_or_else(|| {
                GenError::Rejected(format!("no legal token after {} moves", route.moves.len()))
            })?;
            debug_assert!(probs.iter().zip(&mask).all(|(p, ok)| *ok || *p == 0.0));
            let id = draw(&probs, rng);
            MoveToken::from_id(id)?
        };
        route.push(next);
        tokens.push(next);
        if next == MoveToken::End {
            break;
        }
        input = next.id();
    }
    let moves = detokenize(&tokens)?;
    let problem = route_problem(&moves, cfg.finish_row);
    let beta = BetaSolver::new(&problem, table, params)?.replay(&moves)?;
    Ok(GeneratedRoute {
        tokens,
        problem,
        beta,
    })
}

/// Inverse-CDF draw. A one-hot distribution consumes no randomness.
fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    if let Some(i) = probs.iter().position(|p| *p == 1.0) {
        return i;
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Minimum per-move success of the searched beta.
    pub tau: f64,
    /// Maximum ratio between the easiest and hardest move.
    pub rho: f64,
    pub beam_width: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            rho: 50.0,
            beam_width: crate::betamove::DEFAULT_BEAM_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    UnusedHold { holds: Vec<GridCoord> },
    NoBeta { message: String },
    WeirdSequence { min_success: f64, ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub accepted: bool,
    pub reasons: Vec<RejectReason>,
}

/// Re-searches the problem and rejects routes with unused holds or a beta
/// that mixes near-impossible and trivial moves.
pub fn self_consistency_filter(
    problem: &Problem,
    seq: &BetaSequence,
    table: &HoldFeatureTable,
    params: &SuccessParams,
    cfg: &FilterConfig,
) -> FilterVerdict {
    let mut reasons = Vec::new();
    let unused = |targets: Vec<GridCoord>| -> Vec<GridCoord> {
        problem
            .positions()
            .filter(|p| !targets.contains(p))
            .collect()
    };
    let skipped = unused(seq.targets().collect());
    if !skipped.is_empty() {
        reasons.push(RejectReason::UnusedHold { holds: skipped });
    }
    match beam_search(problem, table, params, cfg.beam_width) {
        Err(e) => reasons.push(RejectReason::NoBeta {
            message: e.to_string(),
        }),
        Ok(best) => {
            let skipped = unused(best.targets().collect());
            if !skipped.is_empty() {
                reasons.push(RejectReason::UnusedHold { holds: skipped });
            }
            let min = best.min_success();
            let ratio = best.max_success() / min;
            if min < cfg.tau || ratio > cfg.rho {
                reasons.push(RejectReason::WeirdSequence {
                    min_success: min,
                    ratio,
                });
            }
        }
    }
    FilterVerdict {
        accepted: reasons.is_empty(),
        reasons,
    }
}
