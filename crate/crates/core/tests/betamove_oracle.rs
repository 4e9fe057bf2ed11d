//! Beam search checked against brute-force enumeration and a hand-evaluated
//! score formula.

use betaboard_core::betamove::{beam_search, BeamState, BetaSolver, Hand, SuccessParams};
use betaboard_core::board::{
    GridCoord, Hold, HoldFeatureTable, HoldFeatures, HoldRole, Problem, ValidationRules,
};
use betaboard_core::synth::{random_feature_table, random_problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(s: &str) -> GridCoord {
    s.parse().unwrap()
}

/// Independent restatement of the move score.
struct Oracle<'a> {
    problem: &'a Problem,
    table: &'a HoldFeatureTable,
    params: &'a SuccessParams,
}

#[derive(Clone, Copy)]
struct Hands {
    left: Option<GridCoord>,
    right: Option<GridCoord>,
    last: Option<Hand>,
}

impl Oracle<'_> {
    fn score(&self, hands: Hands, hand: Hand, target: GridCoord) -> f64 {
        let p = self.params;
        let from = match hand {
            Hand::Left => hands.left,
            Hand::Right => hands.right,
        };
        let reach = from.map_or(1.0, |f| {
            let dx = target.col() as f64 - f.col() as f64 - p.preferred_reach[0];
            let dy = target.row() as f64 - f.row() as f64 - p.preferred_reach[1];
            (-(dx * dx + dy * dy) / (2.0 * p.reach_sigma * p.reach_sigma)).exp()
        });
        let (l, r) = match hand {
            Hand::Left => (Some(target), hands.right),
            Hand::Right => (hands.left, Some(target)),
        };
        let mut body = 1.0;
        if let (Some(l), Some(r)) = (l, r) {
            if l.col() > r.col() {
                body *= p.cross_penalty;
            }
        }
        if hands.last == Some(hand) {
            body *= p.match_penalty;
        }
        let lower = [l, r].iter().flatten().map(|c| c.row() as i32).min().unwrap();
        let foot = self
            .problem
            .holds
            .iter()
            .filter(|h| h.position.row() as i32 <= lower - 3)
            .map(|h| self.table.get(h.position).foot_quality)
            .fold(None, |acc: Option<f64>, q| Some(acc.map_or(q, |a| a.max(q))))
            .unwrap_or(0.5);
        let features = self.table.get(target);
        let difficulty = match hand {
            Hand::Left => features.difficulty_left,
            Hand::Right => features.difficulty_right,
        };
        (difficulty * reach * body * ((1.0 - p.foot_weight) + p.foot_weight * foot))
            .clamp(1e-9, 1.0)
    }

    fn place(&self, hands: Hands, hand: Hand, target: GridCoord) -> (Hands, f64) {
        let s = self.score(hands, hand, target);
        let mut next = hands;
        match hand {
            Hand::Left => next.left = Some(target),
            Hand::Right => next.right = Some(target),
        }
        next.last = Some(hand);
        (next, s.ln())
    }

    /// Maximum total log score over every admissible move order.
    fn exhaustive_best(&self) -> f64 {
        let mut starts: Vec<GridCoord> = self
            .problem
            .holds
            .iter()
            .filter(|h| h.role == HoldRole::Start)
            .map(|h| h.position)
            .collect();
        starts.sort_by_key(|s| (s.col(), s.row()));
        let none = Hands {
            left: None,
            right: None,
            last: None,
        };
        let (h1, s1) = self.place(none, Hand::Left, starts[0]);
        let (h2, s2) = self.place(h1, Hand::Right, *starts.get(1).unwrap_or(&starts[0]));
        let middle: Vec<GridCoord> = self
            .problem
            .holds
            .iter()
            .filter(|h| h.role == HoldRole::Intermediate)
            .map(|h| h.position)
            .collect();
        let finishes: Vec<GridCoord> = self
            .problem
            .holds
            .iter()
            .filter(|h| h.role == HoldRole::Finish)
            .map(|h| h.position)
            .collect();
        let mut best = f64::NEG_INFINITY;
        self.walk(h2, s1 + s2, &middle, &finishes, &mut best);
        best
    }

    fn walk(
        &self,
        hands: Hands,
        acc: f64,
        middle: &[GridCoord],
        finishes: &[GridCoord],
        best: &mut f64,
    ) {
        let (pool, rest_finishes) = if middle.is_empty() {
            (finishes, true)
        } else {
            (middle, false)
        };
        if pool.is_empty() {
            let mut total = acc;
            if self.params.match_finish && self.problem.holds.iter().filter(|h| h.role == HoldRole::Finish).count() == 1 {
                let last = hands.last.unwrap();
                let target = match last {
                    Hand::Left => hands.left,
                    Hand::Right => hands.right,
                }
                .unwrap();
                total += self.place(hands, last.other(), target).1;
            }
            *best = best.max(total);
            return;
        }
        for i in 0..pool.len() {
            let mut remaining = pool.to_vec();
            let target = remaining.remove(i);
            for hand in [Hand::Left, Hand::Right] {
                let (next, s) = self.place(hands, hand, target);
                if rest_finishes {
                    self.walk(next, acc + s, &[], &remaining, best);
                } else {
                    self.walk(next, acc + s, &remaining, finishes, best);
                }
            }
        }
    }
}

#[test]
fn hand_evaluated_scores() {
    let problem = Problem::new(vec![
        Hold::new(c("B2"), HoldRole::Start),
        Hold::new(c("E3"), HoldRole::Start),
        Hold::new(c("D8"), HoldRole::Intermediate),
        Hold::new(c("H8"), HoldRole::Intermediate),
        Hold::new(c("F18"), HoldRole::Finish),
    ]);
    let mut table = HoldFeatureTable::default();
    let set = |t: &mut HoldFeatureTable, pos: &str, l: f64, r: f64, f: f64| {
        t.set(
            c(pos),
            HoldFeatures {
                difficulty_left: l,
                difficulty_right: r,
                foot_quality: f,
            },
        )
        .unwrap()
    };
    set(&mut table, "B2", 0.5, 0.5, 0.2);
    set(&mut table, "E3", 0.5, 0.5, 0.9);
    set(&mut table, "D8", 0.4, 0.65, 0.5);
    set(&mut table, "H8", 0.9, 0.3, 0.5);
    let params = SuccessParams::default();
    let solver = BetaSolver::new(&problem, &table, &params).unwrap();

    let mut state = BeamState::empty();
    for _ in 0..2 {
        state = solver.successors(&state).remove(0);
    }
    assert_eq!(state.hand(Hand::Left), Some(c("B2")));
    assert_eq!(state.hand(Hand::Right), Some(c("E3")));

    // Right E3→D8: offset (-1, 5), excess (-1, 3); right moved last; no foothold below row 2.
    // 0.65 · exp(-10 / 4.5) · 0.8 · 0.85
    let right_to_d8 = solver.move_success_score(&state, c("D8"), Hand::Right).unwrap();
    assert!((right_to_d8 - 0.047898666264077974).abs() < 1e-12, "{right_to_d8}");

    let after = solver
        .successors(&state)
        .into_iter()
        .find(|s| {
            let m = s.moves().last().unwrap();
            m.hand == Hand::Right && m.target == c("D8")
        })
        .unwrap();
    assert_eq!(after.moves().last().unwrap().success, right_to_d8);

    // Left B2→H8: offset (6, 6), excess (6, 4); ends right of the right hand (cross);
    // both hands on row 8 so B2 (0.2) and E3 (0.9) are footholds.
    // 0.9 · exp(-52 / 4.5) · 0.7 · (0.7 + 0.3 · 0.9)
    let left_to_h8 = solver.move_success_score(&after, c("H8"), Hand::Left).unwrap();
    assert!((left_to_h8 - 5.855962279683876e-06).abs() < 1e-12, "{left_to_h8}");
}

fn small_instances(seed: u64, count: usize) -> Vec<(Problem, HoldFeatureTable)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rules = ValidationRules::default();
    (0..count)
        .map(|_| {
            let n = rng.gen_range(3..=6);
            (random_problem(&mut rng, n, &rules), random_feature_table(&mut rng))
        })
        .collect()
}

#[test]
fn unbounded_beam_equals_brute_force() {
    let params = SuccessParams::default();
    let mut width8_hits = 0;
    let instances = small_instances(2024, 200);
    for (problem, table) in &instances {
        let oracle = Oracle {
            problem,
            table,
            params: &params,
        };
        let best = oracle.exhaustive_best();
        let full = beam_search(problem, table, &params, usize::MAX).unwrap();
        assert_eq!(full.total_log_score, best, "{problem:?}");
        let narrow = beam_search(problem, table, &params, 8).unwrap();
        assert!(narrow.total_log_score <= best);
        if (narrow.total_log_score - best).abs() <= 1e-9 {
            width8_hits += 1;
        }
    }
    assert!(width8_hits >= 190, "width 8 optimal on {width8_hits}/200");
}

#[test]
fn brute_force_with_finish_match() {
    let params = SuccessParams {
        match_finish: true,
        ..Default::default()
    };
    for (problem, table) in small_instances(77, 60) {
        let oracle = Oracle {
            problem: &problem,
            table: &table,
            params: &params,
        };
        let full = beam_search(&problem, &table, &params, usize::MAX).unwrap();
        assert_eq!(full.total_log_score, oracle.exhaustive_best());
    }
}

#[test]
fn wider_beams_do_not_lose_on_a_trap() {
    // Greedy grabs the easy, close hold first and pays for it later.
    let problem = Problem::new(vec![
        Hold::new(c("E3"), HoldRole::Start),
        Hold::new(c("E5"), HoldRole::Intermediate),
        Hold::new(c("A9"), HoldRole::Intermediate),
        Hold::new(c("J10"), HoldRole::Intermediate),
        Hold::new(c("E18"), HoldRole::Finish),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let table = random_feature_table(&mut rng);
    let params = SuccessParams::default();
    let one = beam_search(&problem, &table, &params, 1).unwrap();
    let eight = beam_search(&problem, &table, &params, 8).unwrap();
    assert!(eight.total_log_score >= one.total_log_score);
}

#[test]
fn beam_quality_is_monotone_in_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let rules = ValidationRules::default();
    let params = SuccessParams::default();
    for _ in 0..300 {
        let n = rng.gen_range(3..=14);
        let problem = random_problem(&mut rng, n, &rules);
        let table = random_feature_table(&mut rng);
        let solver = BetaSolver::new(&problem, &table, &params).unwrap();
        let scores: Vec<f64> = [1, 2, 3, 5, 8, 12, 16]
            .iter()
            .map(|w| solver.beam_search(*w).unwrap().total_log_score)
            .collect();
        assert!(scores.windows(2).all(|w| w[0] <= w[1]), "{scores:?}");
    }
}

#[test]
fn search_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rules = ValidationRules::default();
    let params = SuccessParams::default();
    for _ in 0..50 {
        let problem = random_problem(&mut rng, 12, &rules);
        let table = random_feature_table(&mut rng);
        let a = beam_search(&problem, &table, &params, 8).unwrap();
        let b = beam_search(&problem, &table, &params, 8).unwrap();
        assert_eq!(a, b);
    }
}
