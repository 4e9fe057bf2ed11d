//! Fixed 22-slot move embedding.
//!
//! | slots | content |
//! |-------|---------|
//! | 0–1   | target `(col/10, row/17)` |
//! | 2–3   | target − previous target, scaled by `(10, 17)`; zero on the first move |
//! | 4–5   | target − target two moves back, same scaling; zero on the first two moves |
//! | 6–8   | grip difficulty of the targets two back, one back and current, for the hand that took each (0.5 when absent) |
//! | 9–10  | best left-foot hold relative to the target, scaled; zero when none |
//! | 11–12 | best right-foot hold, same convention |
//! | 13    | move success score |
//! | 14    | mean log success over moves `0..=i` |
//! | 15    | hand (left 0, right 1) |
//! | 16    | same hand as the previous move |
//! | 17    | first move |
//! | 18    | final move |
//! | 19    | progress `(i+1)/n` |
//! | 20    | distance to the previous target in grid units, /17 |
//! | 21    | share of problem holds not yet used after this move |
//!
//! Trained weights record [`EMBEDDING_LAYOUT_VERSION`]; any change to the
//! table above must bump it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::betamove::{BetaSequence, Hand};
use crate::board::{Grade, GridCoord, HoldFeatureTable, COLS, ROWS};

pub const EMBEDDING_DIM: usize = 22;
pub const EMBEDDING_LAYOUT_VERSION: u32 = 1;

const COL_SCALE: f64 = (COLS - 1) as f64;
const ROW_SCALE: f64 = (ROWS - 1) as f64;
const ABSENT_DIFFICULTY: f64 = 0.5;
const FOOT_DROP: i32 = 3;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("move index {index} out of range for {len} moves")]
    IndexOutOfRange { index: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveEmbedding([f64; EMBEDDING_DIM]);

impl MoveEmbedding {
    pub fn values(&self) -> &[f64; EMBEDDING_DIM] {
        &self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.to_vec()
    }

    pub fn zeros() -> Self {
        Self([0.0; EMBEDDING_DIM])
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        values.try_into().ok().map(Self)
    }
}

fn scaled_offset(from: GridCoord, to: GridCoord) -> (f64, f64) {
    let (dx, dy) = from.offset_to(to);
    (dx / COL_SCALE, dy / ROW_SCALE)
}

fn difficulty(table: &HoldFeatureTable, pos: GridCoord, hand: Hand) -> f64 {
    let f = table.get(pos);
    match hand {
        Hand::Left => f.difficulty_left,
        Hand::Right => f.difficulty_right,
    }
}

/// Best left and right foothold candidates for hands at `left`/`right`.
///
/// Candidates are problem holds at least three rows below the lower hand with
/// positive foot quality; the side is decided against the hands' mean column
/// (a hold exactly below it serves both feet). Ties in quality go to the hold
/// horizontally closer to the hands, then lower, then further left.
pub fn foot_candidates(
    seq: &BetaSequence,
    table: &HoldFeatureTable,
    left: Option<GridCoord>,
    right: Option<GridCoord>,
) -> (Option<GridCoord>, Option<GridCoord>) {
    let hands: Vec<GridCoord> = [left, right].into_iter().flatten().collect();
    let Some(lower) = hands.iter().map(|h| h.row() as i32).min() else {
        return (None, None);
    };
    let mid = hands.iter().map(|h| h.col() as f64).sum::<f64>() / hands.len() as f64;
    let candidates: Vec<GridCoord> = seq
        .problem
        .positions()
        .filter(|p| p.row() as i32 <= lower - FOOT_DROP && table.get(*p).foot_quality > 0.0)
        .collect();
    let best = |side: &dyn Fn(f64) -> bool| -> Option<GridCoord> {
        candidates
            .iter()
            .copied()
            .filter(|p| side(p.col() as f64))
            .min_by(|a, b| {
                let qa = table.get(*a).foot_quality;
                let qb = table.get(*b).foot_quality;
                qb.total_cmp(&qa)
                    .then_with(|| (a.col() as f64 - mid).abs().total_cmp(&(b.col() as f64 - mid).abs()))
                    .then_with(|| a.row().cmp(&b.row()))
                    .then_with(|| a.col().cmp(&b.col()))
            })
    };
    (best(&|c| c <= mid), best(&|c| c >= mid))
}

pub fn embed_move(
    seq: &BetaSequence,
    index: usize,
    table: &HoldFeatureTable,
) -> Result<MoveEmbedding, EmbedError> {
    let moves = &seq.moves;
    if index >= moves.len() {
        return Err(EmbedError::IndexOutOfRange {
            index,
            len: moves.len(),
        });
    }
    let mv = moves[index];
    let target = mv.target;
    let mut v = [0.0; EMBEDDING_DIM];

    v[0] = target.col() as f64 / COL_SCALE;
    v[1] = target.row() as f64 / ROW_SCALE;
    if index >= 1 {
        let (x, y) = scaled_offset(moves[index - 1].target, target);
        v[2] = x;
        v[3] = y;
        let (dx, dy) = moves[index - 1].target.offset_to(target);
        v[20] = (dx * dx + dy * dy).sqrt() / ROW_SCALE;
    }
    if index >= 2 {
        let (x, y) = scaled_offset(moves[index - 2].target, target);
        v[4] = x;
        v[5] = y;
    }
    let grip = |k: Option<usize>| {
        k.map_or(ABSENT_DIFFICULTY, |k| {
            difficulty(table, moves[k].target, moves[k].hand)
        })
    };
    v[6] = grip(index.checked_sub(2));
    v[7] = grip(index.checked_sub(1));
    v[8] = grip(Some(index));

    let (mut left, mut right) = (None, None);
    for m in &moves[..=index] {
        match m.hand {
            Hand::Left => left = Some(m.target),
            Hand::Right => right = Some(m.target),
        }
    }
    let (left_foot, right_foot) = foot_candidates(seq, table, left, right);
    if let Some(f) = left_foot {
        let (x, y) = scaled_offset(target, f);
        v[9] = x;
        v[10] = y;
    }
    if let Some(f) = right_foot {
        let (x, y) = scaled_offset(target, f);
        v[11] = x;
        v[12] = y;
    }

    v[13] = mv.success;
    v[14] = moves[..=index].iter().map(|m| m.success.ln()).sum::<f64>() / (index + 1) as f64;
    v[15] = match mv.hand {
        Hand::Left => 0.0,
        Hand::Right => 1.0,
    };
    v[16] = (index > 0 && moves[index - 1].hand == mv.hand) as u8 as f64;
    v[17] = (index == 0) as u8 as f64;
    v[18] = (index + 1 == moves.len()) as u8 as f64;
    v[19] = (index + 1) as f64 / moves.len() as f64;

    let holds = seq.problem.holds.len();
    if holds > 0 {
        let unused = seq
            .problem
            .positions()
            .filter(|p| !moves[..=index].iter().any(|m| m.target == *p))
            .count();
        v[21] = unused as f64 / holds as f64;
    }
    Ok(MoveEmbedding(v))
}

pub fn embed_sequence(seq: &BetaSequence, table: &HoldFeatureTable) -> Vec<MoveEmbedding> {
    (0..seq.moves.len())
        .map(|i| embed_move(seq, i, table).expect("index in range"))
        .collect()
}

/// Truncates or zero-pads to exactly `len` vectors.
pub fn pad_sequence(vectors: &[MoveEmbedding], len: usize) -> Vec<MoveEmbedding> {
    let mut out: Vec<MoveEmbedding> = vectors.iter().take(len).copied().collect();
    out.resize(len, MoveEmbedding::zeros());
    out
}

/// Training-cache entry: `{problem_id, grade, vectors: [[22 reals] ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedRecord {
    pub problem_id: String,
    pub grade: Option<Grade>,
    pub vectors: Vec<Vec<f64>>,
}

impl EmbeddedRecord {
    pub fn from_sequence(seq: &BetaSequence, table: &HoldFeatureTable) -> Self {
        Self {
            problem_id: seq.problem.id_or_empty().to_string(),
            grade: seq.problem.grade,
            vectors: embed_sequence(seq, table).iter().map(|e| e.to_vec()).collect(),
        }
    }
}
