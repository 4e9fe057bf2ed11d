//! Hand-sequence search: turns a hold set into the most plausible order in
//! which a climber's hands would use the holds.
//!
//! Each candidate move is scored in `(0, 1]` from the gripped hold's
//! difficulty, the reach from the moving hand's previous hold, body position
//! penalties and available footholds. A sequence scores the sum of its
//! moves' log scores, and a fixed-width beam keeps the best partial sequences
//! at each depth.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::{
    validate_problem, GridCoord, HoldFeatureTable, HoldRole, Problem, ValidationRules, Violation,
    TOP_ROW,
};

pub const SCORE_FLOOR: f64 = 1e-9;
pub const DEFAULT_BEAM_WIDTH: usize = 8;
/// Used-hold sets are bitmasks over the problem's hold list.
pub const MAX_SEARCH_HOLDS: usize = 64;

#[derive(Debug, Error)]
pub enum BetaError {
    #[error("problem cannot be searched: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidProblem(Vec<Violation>),
    #[error("problem has {0} holds, more than the search supports")]
    TooManyHolds(usize),
    #[error("target {0} is not a hold of this problem")]
    TargetNotInProblem(GridCoord),
    #[error("inconsistent search state: {0}")]
    InconsistentState(&'static str),
    #[error("no completed sequence within {budget} moves")]
    NoCompletion { budget: usize },
    #[error("beam width must be positive")]
    ZeroWidth,
    #[error("invalid success parameters: {0}")]
    BadParams(String),
    #[error("problem ids differ between predictions and annotations: {0}")]
    IdMismatch(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub fn other(self) -> Hand {
        match self {
            Hand::Left => Hand::Right,
            Hand::Right => Hand::Left,
        }
    }
}

impl fmt::Display for Hand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hand::Left => "L",
            Hand::Right => "R",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub hand: Hand,
    #[serde(rename = "position")]
    pub target: GridCoord,
    pub success: f64,
}

impl Move {
    fn order_key(&self) -> (u8, u8, Hand) {
        (self.target.row(), self.target.col(), self.hand)
    }
}

/// Tunable constants of the move score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuccessParams {
    /// Most comfortable `(Δcol, Δrow)` for a hand move, in grid units.
    pub preferred_reach: [f64; 2],
    pub reach_sigma: f64,
    pub cross_penalty: f64,
    pub match_penalty: f64,
    pub foot_weight: f64,
    /// Append a second hand onto a single finish hold.
    pub match_finish: bool,
}

impl Default for SuccessParams {
    fn default() -> Self {
        Self {
            preferred_reach: [0.0, 2.0],
            reach_sigma: 1.5,
            cross_penalty: 0.7,
            match_penalty: 0.8,
            foot_weight: 0.3,
            match_finish: false,
        }
    }
}

impl SuccessParams {
    pub fn validate(&self) -> Result<(), BetaError> {
        let unit_open = |v: f64| v > 0.0 && v <= 1.0;
        if !(self.reach_sigma > 0.0 && self.reach_sigma.is_finite()) {
            return Err(BetaError::BadParams("reach_sigma must be positive".into()));
        }
        if !unit_open(self.cross_penalty) || !unit_open(self.match_penalty) {
            return Err(BetaError::BadParams("penalties must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.foot_weight) {
            return Err(BetaError::BadParams("foot_weight must lie in [0, 1]".into()));
        }
        if !self.preferred_reach.iter().all(|v| v.is_finite()) {
            return Err(BetaError::BadParams("preferred_reach must be finite".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BetaError> {
        let params: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        params.validate()?;
        Ok(params)
    }
}

/// A partial hand sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamState {
    left: Option<GridCoord>,
    right: Option<GridCoord>,
    used: u64,
    moves: Vec<Move>,
    log_score: f64,
}

impl BeamState {
    pub fn empty() -> Self {
        Self {
            left: None,
            right: None,
            used: 0,
            moves: Vec::new(),
            log_score: 0.0,
        }
    }

    pub fn hand(&self, hand: Hand) -> Option<GridCoord> {
        match hand {
            Hand::Left => self.left,
            Hand::Right => self.right,
        }
    }

    pub fn moves(&self) -> &[Move] {
        &self.moves
    }

    pub fn log_score(&self) -> f64 {
        self.log_score
    }

    pub fn used_mask(&self) -> u64 {
        self.used
    }

    fn set_hand(&mut self, hand: Hand, pos: GridCoord) {
        match hand {
            Hand::Left => self.left = Some(pos),
            Hand::Right => self.right = Some(pos),
        }
    }
}

/// Highest-scoring beta for a problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSequence {
    pub problem: Problem,
    pub moves: Vec<Move>,
    pub total_log_score: f64,
}

impl BetaSequence {
    pub fn targets(&self) -> impl Iterator<Item = GridCoord> + '_ {
        self.moves.iter().map(|m| m.target)
    }

    pub fn min_success(&self) -> f64 {
        self.moves.iter().map(|m| m.success).fold(f64::INFINITY, f64::min)
    }

    pub fn max_success(&self) -> f64 {
        self.moves.iter().map(|m| m.success).fold(0.0, f64::max)
    }

    pub fn to_record(&self) -> BetaRecord {
        BetaRecord {
            problem_id: self.problem.id.clone().unwrap_or_default(),
            moves: self.moves.clone(),
            total_log_score: self.total_log_score,
        }
    }
}

/// Serialized beta: `{problem_id, moves: [{hand, position, success}], total_log_score}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRecord {
    pub problem_id: String,
    pub moves: Vec<Move>,
    pub total_log_score: f64,
}

/// Expert hand-sequence annotation used by [`match_rate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandAnnotation {
    pub problem_id: String,
    pub moves: Vec<AnnotatedMove>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedMove {
    pub hand: Hand,
    pub position: GridCoord,
}

/// Search context for one problem.
#[derive(Debug, Clone)]
pub struct BetaSolver<'a> {
    problem: &'a Problem,
    table: &'a HoldFeatureTable,
    params: &'a SuccessParams,
    starts: Vec<GridCoord>,
    finish_count: usize,
    all_used: u64,
}

impl<'a> BetaSolver<'a> {
    pub fn new(
        problem: &'a Problem,
        table: &'a HoldFeatureTable,
        params: &'a SuccessParams,
    ) -> Result<Self, BetaError> {
        params.validate()?;
        if problem.holds.len() > MAX_SEARCH_HOLDS {
            return Err(BetaError::TooManyHolds(problem.holds.len()));
        }
        // Only structural rules matter to the search; row caps and hold-count
        // limits are dataset policy.
        let rules = ValidationRules {
            max_start_row: TOP_ROW,
            min_holds: 2,
            max_holds: MAX_SEARCH_HOLDS,
        };
        let violations: Vec<Violation> = validate_problem(problem, &rules)
            .into_iter()
            .filter(|v| !matches!(v, Violation::FinishNotOnTopRow { .. }))
            .collect();
        if !violations.is_empty() {
            return Err(BetaError::InvalidProblem(violations));
        }
        let mut starts: Vec<GridCoord> = problem.holds_with_role(HoldRole::Start).collect();
        starts.sort_by_key(|c| (c.col(), c.row()));
        let n = problem.holds.len();
        Ok(Self {
            problem,
            table,
            params,
            starts,
            finish_count: problem.holds_with_role(HoldRole::Finish).count(),
            all_used: if n == 64 { u64::MAX } else { (1u64 << n) - 1 },
        })
    }

    pub fn problem(&self) -> &Problem {
        self.problem
    }

    /// Number of moves every completed sequence of this problem has.
    pub fn completed_length(&self) -> usize {
        let mut len = self.problem.holds.len();
        if self.starts.len() == 1 {
            len += 1;
        }
        if self.requires_finish_match() {
            len += 1;
        }
        len
    }

    pub fn move_budget(&self) -> usize {
        2 * self.problem.holds.len() + 4
    }

    fn requires_finish_match(&self) -> bool {
        self.params.match_finish && self.finish_count == 1
    }

    fn hold_index(&self, pos: GridCoord) -> Option<usize> {
        self.problem.holds.iter().position(|h| h.position == pos)
    }

    fn difficulty(&self, pos: GridCoord, hand: Hand) -> f64 {
        let f = self.table.get(pos);
        match hand {
            Hand::Left => f.difficulty_left,
            Hand::Right => f.difficulty_right,
        }
    }

    /// Best foot quality among problem holds at least three rows below `lower_row`.
    pub fn best_foot_quality(&self, lower_row: u8) -> Option<f64> {
        self.problem
            .positions()
            .filter(|p| p.row() as i32 <= lower_row as i32 - 3)
            .map(|p| self.table.get(p).foot_quality)
            .reduce(f64::max)
    }

    /// Score in `(0, 1]` of moving `hand` onto `target` from `state`.
    pub fn move_success_score(
        &self,
        state: &BeamState,
        target: GridCoord,
        hand: Hand,
    ) -> Result<f64, BetaError> {
        if self.hold_index(target).is_none() {
            return Err(BetaError::TargetNotInProblem(target));
        }
        let previous = state.hand(hand);
        if previous.is_none() && state.moves.len() >= 2 {
            return Err(BetaError::InconsistentState("hand never placed after start"));
        }
        let p = self.params;
        let reach = match previous {
            None => 1.0,
            Some(from) => {
                let (dx, dy) = from.offset_to(target);
                let ex = dx - p.preferred_reach[0];
                let ey = dy - p.preferred_reach[1];
                (-(ex * ex + ey * ey) / (2.0 * p.reach_sigma * p.reach_sigma)).exp()
            }
        };

        let (left, right) = match hand {
            Hand::Left => (Some(target), state.right),
            Hand::Right => (state.left, Some(target)),
        };
        let mut body = 1.0;
        if let (Some(l), Some(r)) = (left, right) {
            if l.col() > r.col() {
                body *= p.cross_penalty;
            }
        }
        if state.moves.last().is_some_and(|m| m.hand == hand) {
            body *= p.match_penalty;
        }

        let lower_row = [left, right]
            .into_iter()
            .flatten()
            .map(|c| c.row())
            .min()
            .expect("target hand is placed");
        let foot = self.best_foot_quality(lower_row).unwrap_or(0.5);
        let foot_factor = (1.0 - p.foot_weight) + p.foot_weight * foot;

        let score = self.difficulty(target, hand) * reach * body * foot_factor;
        Ok(score.clamp(SCORE_FLOOR, 1.0))
    }

    fn extend(&self, state: &BeamState, hand: Hand, target: GridCoord) -> BeamState {
        let success = self
            .move_success_score(state, target, hand)
            .expect("successor targets come from the problem");
        let mut next = state.clone();
        next.set_hand(hand, target);
        next.used |= 1u64 << self.hold_index(target).expect("problem hold");
        next.moves.push(Move {
            hand,
            target,
            success,
        });
        next.log_score += success.ln();
        next
    }

    pub fn is_complete(&self, state: &BeamState) -> bool {
        if state.used != self.all_used || state.moves.len() < 2 {
            return false;
        }
        let last_is_finish = state
            .moves
            .last()
            .is_some_and(|m| self.problem.role_of(m.target) == Some(HoldRole::Finish));
        if !last_is_finish {
            return false;
        }
        !self.requires_finish_match() || (state.left.is_some() && state.left == state.right)
    }

    /// All one-move extensions of `state`.
    ///
    /// The first two moves are forced: left hand on the leftmost start, right
    /// hand on the other start (or matching a lone start). After that every
    /// hand may take every unused non-finish hold; finish holds open up once
    /// nothing else is left.
    pub fn successors(&self, state: &BeamState) -> Vec<BeamState> {
        match state.moves.len() {
            0 => return vec![self.extend(state, Hand::Left, self.starts[0])],
            1 => {
                let target = *self.starts.get(1).unwrap_or(&self.starts[0]);
                return vec![self.extend(state, Hand::Right, target)];
            }
            _ => {}
        }
        let unused = |role_is_finish: bool| -> Vec<GridCoord> {
            self.problem
                .holds
                .iter()
                .enumerate()
                .filter(|(i, h)| {
                    state.used & (1u64 << i) == 0 && (h.role == HoldRole::Finish) == role_is_finish
                })
                .map(|(_, h)| h.position)
                .collect()
        };
        let mut targets = unused(false);
        if targets.is_empty() {
            targets = unused(true);
        }
        if targets.is_empty() {
            if self.requires_finish_match() && !self.is_complete(state) {
                if let Some(last) = state.moves.last() {
                    if self.problem.role_of(last.target) == Some(HoldRole::Finish) {
                        return vec![self.extend(state, last.hand.other(), last.target)];
                    }
                }
            }
            return Vec::new();
        }
        let mut out = Vec::with_capacity(targets.len() * 2);
        for hand in [Hand::Left, Hand::Right] {
            for &target in &targets {
                out.push(self.extend(state, hand, target));
            }
        }
        out
    }

    /// Best sequence found by plain beams of every width from 1 to
    /// `beam_width`.
    ///
    /// A single fixed-width beam is not monotone in its width (a wider beam
    /// can prune the eventual winner of a narrower one), so widths are
    /// swept and the best completion kept. The sweep stops at the first
    /// width whose beam never had to drop a state: that beam was exhaustive
    /// and every wider one returns the same sequence. `usize::MAX` runs one
    /// exhaustive beam directly.
    pub fn beam_search(&self, beam_width: usize) -> Result<BetaSequence, BetaError> {
        if beam_width == usize::MAX {
            return self.single_beam(beam_width);
        }
        if beam_width == 0 {
            return Err(BetaError::ZeroWidth);
        }
        let mut best: Option<BeamState> = None;
        let mut width = 1;
        loop {
            let run = self.run_beam(width)?;
            let better = match &best {
                None => true,
                Some(b) => compare_states(&run.best, b) == Ordering::Less,
            };
            if better {
                best = Some(run.best);
            }
            if !run.truncated || width >= beam_width {
                break;
            }
            width += 1;
        }
        let best = best.expect("at least one beam ran");
        Ok(BetaSequence {
            problem: self.problem.clone(),
            moves: best.moves,
            total_log_score: best.log_score,
        })
    }

    /// One plain beam of fixed width.
    pub fn single_beam(&self, beam_width: usize) -> Result<BetaSequence, BetaError> {
        if beam_width == 0 {
            return Err(BetaError::ZeroWidth);
        }
        let run = self.run_beam(beam_width)?;
        Ok(BetaSequence {
            problem: self.problem.clone(),
            moves: run.best.moves,
            total_log_score: run.best.log_score,
        })
    }

    /// Scores a given hand sequence move by move with the same formula the
    /// search uses. The sequence need not be complete or optimal.
    pub fn replay(&self, moves: &[(Hand, GridCoord)]) -> Result<BetaSequence, BetaError> {
        let mut state = BeamState::empty();
        for &(hand, target) in moves {
            if self.hold_index(target).is_none() {
                return Err(BetaError::TargetNotInProblem(target));
            }
            if state.moves.len() >= 2 && state.hand(hand).is_none() {
                return Err(BetaError::InconsistentState("hand never placed after start"));
            }
            state = self.extend(&state, hand, target);
        }
        Ok(BetaSequence {
            problem: self.problem.clone(),
            moves: state.moves,
            total_log_score: state.log_score,
        })
    }

    fn run_beam(&self, beam_width: usize) -> Result<BeamRun, BetaError> {
        let budget = self.move_budget();
        let mut beam = vec![BeamState::empty()];
        let mut truncated = false;
        for _ in 0..budget {
            if beam.iter().all(|s| self.is_complete(s)) {
                break;
            }
            let mut next = Vec::new();
            for state in &beam {
                if self.is_complete(state) {
                    next.push(state.clone());
                } else {
                    next.extend(self.successors(state));
                }
            }
            next.sort_by(compare_states);
            truncated |= next.len() > beam_width;
            next.truncate(beam_width);
            beam = next;
        }
        let best = beam
            .into_iter()
            .filter(|s| self.is_complete(s))
            .min_by(compare_states)
            .ok_or(BetaError::NoCompletion { budget })?;
        Ok(BeamRun { best, truncated })
    }
}

struct BeamRun {
    best: BeamState,
    truncated: bool,
}

/// Best first: higher log score, then lexicographically smaller
/// `(row, col, hand)` move list.
pub fn compare_states(a: &BeamState, b: &BeamState) -> Ordering {
    b.log_score.total_cmp(&a.log_score).then_with(|| {
        a.moves
            .iter()
            .map(Move::order_key)
            .cmp(b.moves.iter().map(Move::order_key))
    })
}

pub fn beam_search(
    problem: &Problem,
    table: &HoldFeatureTable,
    params: &SuccessParams,
    beam_width: usize,
) -> Result<BetaSequence, BetaError> {
    BetaSolver::new(problem, table, params)?.beam_search(beam_width)
}

/// Fraction of problems whose `(hand, position)` lists match the annotation exactly.
pub fn match_rate(
    predicted: &[BetaSequence],
    reference: &[HandAnnotation],
) -> Result<f64, BetaError> {
    if predicted.len() != reference.len() {
        return Err(BetaError::IdMismatch(format!(
            "{} predictions vs {} annotations",
            predicted.len(),
            reference.len()
        )));
    }
    if predicted.is_empty() {
        return Err(BetaError::IdMismatch("no problems".into()));
    }
    let by_id: HashMap<&str, &HandAnnotation> =
        reference.iter().map(|a| (a.problem_id.as_str(), a)).collect();
    if by_id.len() != reference.len() {
        return Err(BetaError::IdMismatch("duplicate annotation id".into()));
    }
    let mut matched = 0usize;
    for seq in predicted {
        let id = seq.problem.id_or_empty();
        let annotation = by_id
            .get(id)
            .ok_or_else(|| BetaError::IdMismatch(format!("no annotation for {id:?}")))?;
        let same = seq.moves.len() == annotation.moves.len()
            && seq
                .moves
                .iter()
                .zip(&annotation.moves)
                .all(|(m, a)| m.hand == a.hand && m.target == a.position);
        if same {
            matched += 1;
        }
    }
    Ok(matched as f64 / predicted.len() as f64)
}
