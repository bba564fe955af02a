//! Candidate scoring, the novelty weight derived from reference statistics, and the DPAR
//! benchmark metric.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aero::PhysicsBounds;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("need at least two reference scores, got {0}")]
    TooFewScores(usize),
    #[error("reference scores have zero spread; the novelty weight is undefined")]
    DegenerateReferenceSet,
    #[error("reference scores must be finite")]
    NonFinite,
    #[error("no candidate has a positive physical score")]
    NoScorableCandidates,
    #[error("baseline DPAR must be positive, got {0}")]
    BadBaseline(f64),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
}

/// How the domain-alignment term enters the minimized objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTermMode {
    /// `f_physical + (1 - f_domain) - β F_novelty`: better alignment lowers the objective.
    #[default]
    Penalty,
    /// `f_physical + f_domain - β F_novelty`, the literal printed form.
    PaperExact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveWeights {
    /// Novelty weight. Replaced by the reference-set value when one is configured.
    pub beta: f64,
    /// Softmax temperature Γ of the domain term.
    pub gamma_temperature: f64,
    pub bounds: PhysicsBounds,
    /// Largest admissible prompt distance from the domain label.
    pub epsilon: f64,
    pub c_lower: f64,
    pub c_upper: f64,
    pub domain_term_mode: DomainTermMode,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            beta: 0.0,
            gamma_temperature: 0.01,
            bounds: PhysicsBounds::default(),
            epsilon: 0.5,
            c_lower: 0.05,
            c_upper: 0.95,
            domain_term_mode: DomainTermMode::Penalty,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let bad = |m: &str| Err(ObjectiveError::InvalidWeights(m.into()));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and non-negative");
        }
        if !(self.gamma_temperature > 0.0 && self.gamma_temperature.is_finite()) {
            return bad("gamma_temperature must be positive");
        }
        if !(0.0..=2.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 2]");
        }
        if !(0.0 < self.c_lower && self.c_lower < self.c_upper && self.c_upper < 1.0) {
            return bad("need 0 < c_lower < c_upper < 1");
        }
        self.bounds.validate().map_err(|e| ObjectiveError::InvalidWeights(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub f_physical: f64,
    pub f_domain: f64,
    pub f_novelty: f64,
    /// Weighted sum before feasibility is applied.
    pub objective: f64,
    pub prompt_feasible: bool,
    pub physical_constraint_ok: bool,
}

impl CandidateScore {
    pub fn feasible(&self) -> bool {
        self.prompt_feasible && self.physical_constraint_ok
    }

    /// Value used for ranking: infeasible candidates rank behind every feasible one.
    pub fn selection_objective(&self) -> f64 {
        if self.feasible() {
            self.objective
        } else {
            f64::INFINITY
        }
    }
}

pub fn evaluate_candidate(
    f_physical: f64,
    f_domain: f64,
    f_novelty: f64,
    prompt_feasible: bool,
    weights: &ObjectiveWeights,
) -> CandidateScore {
    let domain_term = match weights.domain_term_mode {
        DomainTermMode::Penalty => 1.0 - f_domain,
        DomainTermMode::PaperExact => f_domain,
    };
    CandidateScore {
        f_physical,
        f_domain,
        f_novelty,
        objective: f_physical + domain_term - weights.beta * f_novelty,
        prompt_feasible,
        physical_constraint_ok: weights.c_lower <= f_physical && f_physical <= weights.c_upper,
    }
}

/// Mean and population standard deviation.
pub fn mean_std(scores: &[f64]) -> (f64, f64) {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `β = exp(-μ/σ)` over the reference physical scores, σ with the ÷K convention.
pub fn compute_beta(scores: &[f64]) -> Result<f64, ObjectiveError> {
    if scores.len() < 2 {
        return Err(ObjectiveError::TooFewScores(scores.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ObjectiveError::NonFinite);
    }
    // equal inputs can still leave a rounding-sized σ, so test equality directly
    if scores.iter().all(|s| *s == scores[0]) {
        return Err(ObjectiveError::DegenerateReferenceSet);
    }
    let (mean, std) = mean_std(scores);
    if std == 0.0 {
        return Err(ObjectiveError::DegenerateReferenceSet);
    }
    Ok((-mean / std).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DparReport {
    pub dpar: f64,
    pub included: usize,
    /// Candidates skipped because their physical score was zero.
    pub excluded: usize,
}

/// Mean of `f_domain / f_physical` over `(f_domain, f_physical)` pairs. Pairs with a
/// non-positive or non-finite physical score are excluded and counted.
pub fn dpar(candidates: &[(f64, f64)]) -> Result<DparReport, ObjectiveError> {
    let mut sum = 0.0;
    let mut included = 0;
    for &(dom, phys) in candidates {
        if phys > 0.0 && phys.is_finite() && dom.is_finite() {
            sum += dom / phys;
            included += 1;
        }
    }
    if included == 0 {
        return Err(ObjectiveError::NoScorableCandidates);
    }
    Ok(DparReport { dpar: sum / included as f64, included, excluded: candidates.len() - included })
}

/// Relative change of `ours` over `baseline`, in percent.
pub fn improvement_percent(baseline: f64, ours: f64) -> Result<f64, ObjectiveError> {
    if !(baseline > 0.0 && baseline.is_finite()) {
        return Err(ObjectiveError::BadBaseline(baseline));
    }
    Ok((ours - baseline) / baseline * 100.0)
}

/// Signed percentage with two decimals, e.g. `+14.46%`.
pub fn format_percent(p: f64) -> String {
    let rounded = (p * 100.0).round() / 100.0;
    // avoid printing "-0.00%"
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded:+.2}%")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(beta: f64, mode: DomainTermMode) -> ObjectiveWeights {
        ObjectiveWeights { beta, domain_term_mode: mode, ..Default::default() }
    }

    #[test]
    fn objective_examples() {
        let s = evaluate_candidate(0.5, 0.9, 0.2, true, &w(0.5, DomainTermMode::Penalty));
        assert!((s.objective - 0.5).abs() < 1e-15);
        let p = evaluate_candidate(0.5, 0.9, 0.2, true, &w(0.5, DomainTermMode::PaperExact));
        assert!((p.objective - 1.3).abs() < 1e-15);
        let a = evaluate_candidate(0.5, 0.9, 0.0, true, &w(0.1, DomainTermMode::Penalty));
        let b = evaluate_candidate(0.5, 0.9, 0.0, true, &w(7.0, DomainTermMode::Penalty));
        assert_eq!(a.objective, b.objective);
        let hi = evaluate_candidate(0.99, 0.9, 0.0, true, &ObjectiveWeights::default());
        assert!(!hi.physical_constraint_ok);
        assert_eq!(hi.selection_objective(), f64::INFINITY);
        assert!(hi.objective.is_finite());
        let bad_prompt = evaluate_candidate(0.5, 0.9, 0.0, false, &ObjectiveWeights::default());
        assert_eq!(bad_prompt.selection_objective(), f64::INFINITY);
    }

    #[test]
    fn beta_examples() {
        // μ = σ = 1 for {0, 2}
        assert!((compute_beta(&[0.0, 2.0]).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        // μ = 0.6, σ = 0.2 for {0.4, 0.8}
        assert!((compute_beta(&[0.4, 0.8]).unwrap() - (-3.0f64).exp()).abs() < 1e-12);
        assert_eq!(compute_beta(&[0.1, 0.1, 0.1]), Err(ObjectiveError::DegenerateReferenceSet));
        assert_eq!(compute_beta(&[0.1]), Err(ObjectiveError::TooFewScores(1)));
    }

    #[test]
    fn dpar_examples() {
        assert!((dpar(&[(0.9, 0.5)]).unwrap().dpar - 1.8).abs() < 1e-15);
        let r = dpar(&[(0.9, 0.5), (0.3, 0.0)]).unwrap();
        assert_eq!((r.included, r.excluded), (1, 1));
        assert_eq!(dpar(&[(0.3, 0.0)]), Err(ObjectiveError::NoScorableCandidates));
    }

    #[test]
    fn table_arithmetic() {
        let rows = [
            (0.8350, 0.9557, 14.46),
            (0.8131, 0.8494, 4.46),
            (0.8972, 0.9637, 7.41),
            (0.8562, 0.9531, 11.32),
            (0.6891, 1.0000, 45.12),
            (0.6139, 1.0000, 62.89),
            (0.7697, 0.9173, 19.18),
            (0.4660, 0.9634, 106.74),
        ];
        for (base, ours, pct) in rows {
            let p = improvement_percent(base, ours).unwrap();
            assert!((p - pct).abs() < 0.01, "{base} -> {ours}: {p}");
        }
        assert_eq!(format_percent(improvement_percent(0.8350, 0.9557).unwrap()), "+14.46%");
        assert_eq!(format_percent(improvement_percent(0.6891, 1.0).unwrap()), "+45.12%");
        assert_eq!(format_percent(improvement_percent(0.7, 0.7).unwrap()), "+0.00%");
        assert_eq!(format_percent(-3.333), "-3.33%");
    }

    #[test]
    fn weights_validate() {
        assert!(ObjectiveWeights::default().validate().is_ok());
        let bad = ObjectiveWeights { c_lower: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let inverted = ObjectiveWeights { c_lower: 0.9, c_upper: 0.1, ..Default::default() };
        assert!(inverted.validate().is_err());
    }

    proptest! {
        #[test]
        fn monotone_per_mode(fp in 0.0..1.0f64, fd in 0.0..1.0f64, nov in 0.0..10.0f64,
                             beta in 0.01..5.0f64, d in 1e-3..0.5f64) {
            let pen = w(beta, DomainTermMode::Penalty);
            let lit = w(beta, DomainTermMode::PaperExact);
            let o = |fp: f64, fd: f64, nov: f64, w: &ObjectiveWeights| evaluate_candidate(fp, fd, nov, true, w).objective;
            prop_assert!(o(fp, fd + d, nov, &pen) < o(fp, fd, nov, &pen));
            prop_assert!(o(fp + d, fd, nov, &pen) > o(fp, fd, nov, &pen));
            prop_assert!(o(fp, fd + d, nov, &lit) > o(fp, fd, nov, &lit));
            prop_assert!(o(fp + d, fd, nov, &lit) > o(fp, fd, nov, &lit));
            prop_assert!(o(fp, fd, nov + d, &pen) < o(fp, fd, nov, &pen));
            prop_assert!(o(fp, fd, nov + d, &lit) < o(fp, fd, nov, &lit));
        }

        #[test]
        fn dpar_is_permutation_invariant_and_mixes(
            a in proptest::collection::vec((0.0..1.0f64, 0.01..1.0f64), 1..20),
            b in proptest::collection::vec((0.0..1.0f64, 0.01..1.0f64), 1..20),
        ) {
            let mut rev = a.clone();
            rev.reverse();
            prop_assert!((dpar(&a).unwrap().dpar - dpar(&rev).unwrap().dpar).abs() < 1e-12);
            let both: Vec<_> = a.iter().chain(&b).copied().collect();
            let (na, nb) = (a.len() as f64, b.len() as f64);
            let mixed = (na * dpar(&a).unwrap().dpar + nb * dpar(&b).unwrap().dpar) / (na + nb);
            prop_assert!((dpar(&both).unwrap().dpar - mixed).abs() < 1e-9);
        }

        #[test]
        fn beta_matches_definition(scores in proptest::collection::vec(0.0..1.0f64, 2..30)) {
            prop_assume!(scores.iter().any(|s| *s != scores[0]));
            let n = scores.len() as f64;
            let mu = scores.iter().sum::<f64>() / n;
            let sigma = (scores.iter().map(|s| s * s).sum::<f64>() / n - mu * mu).max(0.0).sqrt();
            prop_assume!(sigma > 1e-3);
            let beta = compute_beta(&scores).unwrap();
            prop_assert!((beta - (-mu / sigma).exp()).abs() < 1e-12);
        }
    }
}
