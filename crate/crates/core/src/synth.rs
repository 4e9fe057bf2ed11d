//! Random but valid problems and feature tables, for tests, benchmarks and
//! demo corpora.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::betamove::{beam_search, BetaSequence, SuccessParams, DEFAULT_BEAM_WIDTH};
use crate::board::{
    Grade, GridCoord, Hold, HoldFeatureTable, HoldFeatures, HoldRole, Problem, ValidationRules,
    COLS, TOP_ROW,
};

/// A problem with `hold_count` holds satisfying `rules`.
///
/// Panics if `hold_count` is below 3 or above `rules.max_holds`.
pub fn random_problem<R: Rng + ?Sized>(
    rng: &mut R,
    hold_count: usize,
    rules: &ValidationRules,
) -> Problem {
    assert!(hold_count >= 3 && hold_count <= rules.max_holds.max(3));
    let start_count = rng.gen_range(1..=2usize.min(hold_count - 1));
    let finish_count = rng.gen_range(1..=2usize.min(hold_count - start_count));

    let mut start_cells: Vec<GridCoord> = GridCoord::all()
        .filter(|c| c.row() <= rules.max_start_row)
        .collect();
    start_cells.shuffle(rng);
    let mut finish_cols: Vec<u8> = (0..COLS).collect();
    finish_cols.shuffle(rng);

    let mut holds: Vec<Hold> = Vec::with_capacity(hold_count);
    holds.extend(
        start_cells[..start_count]
            .iter()
            .map(|&c| Hold::new(c, HoldRole::Start)),
    );
    holds.extend(finish_cols[..finish_count].iter().map(|&col| {
        Hold::new(GridCoord::new(col, TOP_ROW).expect("on board"), HoldRole::Finish)
    }));
    let mut middle: Vec<GridCoord> = GridCoord::all()
        .filter(|c| c.row() < TOP_ROW && holds.iter().all(|h| h.position != *c))
        .collect();
    middle.shuffle(rng);
    holds.extend(
        middle[..hold_count - holds.len()]
            .iter()
            .map(|&c| Hold::new(c, HoldRole::Intermediate)),
    );
    holds.sort_by_key(|h| (h.position.row(), h.position.col()));
    Problem::new(holds)
}

/// Difficulties drawn from `[0.05, 1]`, foot quality from `[0, 1]`.
pub fn random_feature_table<R: Rng + ?Sized>(rng: &mut R) -> HoldFeatureTable {
    let mut table = HoldFeatureTable::default();
    for c in GridCoord::all() {
        table
            .set(
                c,
                HoldFeatures {
                    difficulty_left: rng.gen_range(0.05..=1.0),
                    difficulty_right: rng.gen_range(0.05..=1.0),
                    foot_quality: rng.gen_range(0.0..=1.0),
                },
            )
            .expect("values in range");
    }
    table
}

/// A graded, repeated corpus whose grades follow the beta's mean log move
/// score, so that a classifier has real signal to learn.
pub fn graded_corpus<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    table: &HoldFeatureTable,
    params: &SuccessParams,
    rules: &ValidationRules,
) -> Vec<Problem> {
    let max = rules.max_holds.clamp(4, 12);
    (0..count)
        .map(|i| {
            let n = rng.gen_range(4..=max);
            let mut p = random_problem(rng, n, rules);
            let beta = beam_search(&p, table, params, DEFAULT_BEAM_WIDTH)
                .expect("random problems are searchable");
            let mean = beta.total_log_score / beta.moves.len() as f64;
            // mean log score lies roughly in [-4, -0.3] for typical tables
            let hardness = ((-mean - 0.3) / 3.7).clamp(0.0, 0.999);
            let class = (hardness * Grade::CLASSES as f64) as usize;
            p.grade = Grade::from_class_index(class);
            p.repeats = Some(rng.gen_range(1..40));
            p.id = Some(format!("synth-{i:05}"));
            p
        })
        .collect()
}

/// A route that climbs like a real one: holds follow an upward walk of
/// two to four rows per step with modest sideways drift.
pub fn climbable_problem<R: Rng + ?Sized>(rng: &mut R, rules: &ValidationRules) -> Problem {
    let shift = |c: GridCoord, dcol: i32, drow: i32| -> GridCoord {
        let col = (c.col() as i32 + dcol).clamp(0, COLS as i32 - 1) as u8;
        let row = (c.row() as i32 + drow).clamp(0, TOP_ROW as i32) as u8;
        GridCoord::new(col, row).expect("clamped onto the board")
    };
    let first = GridCoord::new(rng.gen_range(1..COLS - 1), rng.gen_range(0..=rules.max_start_row.min(4)))
        .expect("on board");
    let mut holds = vec![Hold::new(first, HoldRole::Start)];
    if rng.gen_bool(0.5) {
        let second = shift(first, rng.gen_range(1..=2), rng.gen_range(-1..=1));
        if second != first && second.row() <= rules.max_start_row {
            holds.push(Hold::new(second, HoldRole::Start));
        }
    }
    let mut at = holds.last().expect("a start").position;
    let budget = rules.max_holds.saturating_sub(2);
    while at.row() + 4 < TOP_ROW && holds.len() < budget {
        at = shift(at, rng.gen_range(-2..=2), rng.gen_range(2..=4));
        if holds.iter().all(|h| h.position != at) {
            holds.push(Hold::new(at, HoldRole::Intermediate));
        }
    }
    let finish = shift(GridCoord::new(at.col(), TOP_ROW).expect("on board"), rng.gen_range(-1..=1), 0);
    holds.push(Hold::new(finish, HoldRole::Finish));
    holds.sort_by_key(|h| (h.position.row(), h.position.col()));
    Problem::new(holds)
}

/// Searched betas of [`climbable_problem`]s.
pub fn beta_corpus<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    table: &HoldFeatureTable,
    params: &SuccessParams,
    rules: &ValidationRules,
) -> Vec<BetaSequence> {
    (0..count)
        .map(|_| {
            let p = climbable_problem(rng, rules);
            beam_search(&p, table, params, 4).expect("climbable problems are searchable")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::validate_problem;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn climbable_problems_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let rules = ValidationRules::default();
        for _ in 0..500 {
            let p = climbable_problem(&mut rng, &rules);
            assert!(validate_problem(&p, &rules).is_empty(), "{p:?}");
        }
    }

    #[test]
    fn random_problems_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rules = ValidationRules::default();
        for _ in 0..500 {
            let n = rng.gen_range(3..=14);
            let p = random_problem(&mut rng, n, &rules);
            assert_eq!(p.holds.len(), n);
            assert!(validate_problem(&p, &rules).is_empty(), "{p:?}");
        }
    }
}
