use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Candidate, RunError};

/// Whether `a` beats `b`: lower objective, then the later birth step, then the higher id.
pub fn beats(a: &Candidate, b: &Candidate) -> bool {
    let (oa, ob) = (a.selection_objective(), b.selection_objective());
    match oa.partial_cmp(&ob).unwrap_or(Ordering::Equal) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => (a.birth_step, a.id) > (b.birth_step, b.id),
    }
}

/// Pairwise tournament over `2N` candidates keeping exactly `N`.
///
/// The pool is split into its older and newer halves by `(birth_step, id)`; each half is
/// shuffled and the i-th newer candidate meets the i-th older one. Survivors come back ordered
/// by id.
pub fn select_n(mut pool: Vec<Candidate>, n: usize, rng: &mut impl Rng) -> Result<Vec<Candidate>, RunError> {
    if pool.len() != 2 * n {
        return Err(RunError::Contract(format!("selection needs {} candidates, got {}", 2 * n, pool.len())));
    }
    pool.sort_by_key(|c| (c.birth_step, c.id));
    let mut newer = pool.split_off(n);
    let mut older = pool;
    older.shuffle(rng);
    newer.shuffle(rng);
    let mut out: Vec<Candidate> = older
        .into_iter()
        .zip(newer)
        .map(|(o, n)| if beats(&n, &o) { n } else { o })
        .collect();
    out.sort_by_key(|c| c.id);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use proptest::prelude::*;

    use crate::objective::CandidateScore;
    use crate::refine::FailureClass;

    fn cand(id: u64, step: usize, objective: Option<f64>) -> Candidate {
        let mut c = Candidate::sentinel(id, step, "p".into(), FailureClass::Prompt, 0);
        if let Some(objective) = objective {
            c.failure = None;
            c.score = Some(CandidateScore {
                f_physical: 0.5,
                f_domain: 0.5,
                f_novelty: 0.0,
                objective,
                prompt_feasible: true,
                physical_constraint_ok: true,
            });
        }
        c
    }

    #[test]
    fn lower_objective_wins() {
        let pool = vec![cand(0, 0, Some(0.7)), cand(1, 1, Some(0.2))];
        let out = select_n(pool, 1, &mut rng_for(&[1])).unwrap();
        assert_eq!(out[0].id, 1);
        let pool = vec![cand(0, 0, Some(0.2)), cand(1, 1, Some(0.7))];
        assert_eq!(select_n(pool, 1, &mut rng_for(&[1])).unwrap()[0].id, 0);
    }

    #[test]
    fn ties_favor_newer_candidates() {
        let pool: Vec<_> = (0..8).map(|i| cand(i, if i < 4 { 0 } else { 1 }, Some(0.5))).collect();
        let out = select_n(pool, 4, &mut rng_for(&[3])).unwrap();
        assert!(out.iter().all(|c| c.birth_step == 1));
        let sentinels: Vec<_> = (0..4).map(|i| cand(i, i as usize / 2, None)).collect();
        assert!(select_n(sentinels, 2, &mut rng_for(&[3])).unwrap().iter().all(|c| c.birth_step == 1));
    }

    #[test]
    fn wrong_pool_size_is_rejected() {
        let pool = vec![cand(0, 0, Some(0.1)); 3];
        assert!(select_n(pool, 2, &mut rng_for(&[0])).is_err());
    }

    proptest! {
        #[test]
        fn keeps_n_distinct_and_the_best(objs in proptest::collection::vec(proptest::option::weighted(0.8, 0.0..1.0f64), 2..40), seed in any::<u64>()) {
            let n = objs.len() / 2;
            let pool: Vec<_> = objs.iter().take(2 * n).enumerate()
                .map(|(i, o)| cand(i as u64, i / n.max(1), *o)).collect();
            let best = pool.iter().map(|c| c.selection_objective()).fold(f64::INFINITY, f64::min);
            let out = select_n(pool, n, &mut rng_for(&[seed])).unwrap();
            prop_assert_eq!(out.len(), n);
            let mut ids: Vec<_> = out.iter().map(|c| c.id).collect();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
            let kept = out.iter().map(|c| c.selection_objective()).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(kept, best);
        }
    }
}
