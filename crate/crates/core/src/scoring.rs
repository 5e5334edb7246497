//! Metric maps, normalized sub-scores and weighted-sum scores.
//!
//! All arithmetic is `f64` and every sum runs in sorted key order, so a score
//! is a pure function of its inputs regardless of map insertion order.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::attack::RawAttackMetrics;
use crate::defense::DefenseResult;
use crate::{Error, Result};

const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Ordered metric name → value map attached to every evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricMap(pub IndexMap<String, f64>);

impl MetricMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: f64) {
        self.0.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.0.get(key).copied()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn extend(&mut self, other: &MetricMap) {
        for (k, v) in other.iter() {
            self.insert(k, v);
        }
    }

    /// Keys from `required` that are absent.
    pub fn missing<'a>(&self, required: &[&'a str]) -> Vec<&'a str> {
        required.iter().copied().filter(|k| !self.contains(k)).collect()
    }
}

impl<K: Into<String>> FromIterator<(K, f64)> for MetricMap {
    fn from_iter<I: IntoIterator<Item = (K, f64)>>(iter: I) -> Self {
        Self(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

/// Sub-score weights; must be non-negative and sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreWeights(pub BTreeMap<String, f64>);

impl ScoreWeights {
    pub fn from_pairs(pairs: &[(&str, f64)]) -> Self {
        Self(pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect())
    }

    pub fn default_attack() -> Self {
        Self::from_pairs(&[("effectiveness", 0.5), ("stealth", 0.2), ("query_eff", 0.15), ("time_eff", 0.15)])
    }

    pub fn default_defense() -> Self {
        Self::from_pairs(&[("robustness", 0.6), ("clean_retention", 0.25), ("time_eff", 0.15)])
    }

    pub fn validate(&self) -> Result<()> {
        for (k, &w) in &self.0 {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("weight {k:?} must be a finite value >= 0, got {w}")));
            }
        }
        let total: f64 = self.0.values().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Config(format!("weights must sum to 1, got {total}")));
        }
        Ok(())
    }
}

/// Normalization budgets for sub-scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    /// L2 distance that maps to zero stealth; `None` means `0.3·√d`.
    pub l2_max: Option<f64>,
    pub query_budget: f64,
    pub time_budget: f64,
    pub overhead_budget: f64,
}

impl Default for Budgets {
    fn default() -> Self {
        Self { l2_max: None, query_budget: 5000.0, time_budget: 60.0, overhead_budget: 300.0 }
    }
}

impl Budgets {
    pub fn l2_max_for(&self, input_len: usize) -> f64 {
        self.l2_max.unwrap_or(0.3 * (input_len as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be > 0, got {v}")))
            }
        };
        if let Some(l) = self.l2_max {
            check("l2_max", l)?;
        }
        check("query_budget", self.query_budget)?;
        check("time_budget", self.time_budget)?;
        check("overhead_budget", self.overhead_budget)
    }
}

fn unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// `effectiveness`, `stealth`, `query_eff` and `time_eff`, each in `[0, 1]`.
pub fn attack_subscores(raw: &RawAttackMetrics, budgets: &Budgets, input_len: usize) -> Result<MetricMap> {
    if !(raw.clean_acc > 0.0) {
        return Err(Error::DegenerateModel(format!("clean accuracy is {}", raw.clean_acc)));
    }
    let mut m = MetricMap::new();
    m.insert("effectiveness", unit((raw.clean_acc - raw.adv_acc) / raw.clean_acc));
    m.insert("stealth", unit(1.0 - raw.mean_l2 / budgets.l2_max_for(input_len)));
    m.insert("query_eff", unit(1.0 - raw.queries / budgets.query_budget));
    m.insert("time_eff", unit(1.0 - raw.runtime_s / budgets.time_budget));
    Ok(m)
}

/// `robustness`, `clean_retention` and `time_eff`, each in `[0, 1]`.
pub fn defense_subscores(result: &DefenseResult, base_clean_acc: f64, budgets: &Budgets) -> Result<MetricMap> {
    if result.robust_acc.is_empty() && result.failed.is_empty() {
        return Err(Error::Input("defense result has an empty attack suite".into()));
    }
    if !(base_clean_acc > 0.0) {
        return Err(Error::DegenerateModel(format!("base clean accuracy is {base_clean_acc}")));
    }
    // A failed suite attack counts as no accuracy lost.
    let suite_size = (result.robust_acc.len() + result.failed.len()) as f64;
    let mut names: Vec<&String> = result.robust_acc.keys().collect();
    names.sort();
    let robust_sum: f64 = names.iter().map(|k| result.robust_acc[*k]).sum::<f64>() + result.failed.len() as f64 * result.clean_acc;
    let mut m = MetricMap::new();
    m.insert("robustness", unit(robust_sum / suite_size));
    m.insert("clean_retention", unit(result.clean_acc / base_clean_acc).min(1.0));
    m.insert("time_eff", unit(1.0 - result.overhead_seconds / budgets.overhead_budget));
    Ok(m)
}

/// `Σ wᵢ·sᵢ` over the weight keys in sorted order.
pub fn overall(subscores: &MetricMap, weights: &ScoreWeights) -> Result<f64> {
    weights.validate()?;
    let mut total = 0.0;
    for (key, &w) in &weights.0 {
        match subscores.get(key) {
            Some(s) => total += w * s,
            None if w > 0.0 => return Err(Error::Config(format!("weight {key:?} = {w} has no matching sub-score"))),
            None => {}
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarWeights {
    pub attack_weight: f64,
    pub defense_weight: f64,
    /// Relative weight of each opponent by submitter id; unlisted opponents
    /// weigh 1. Weights are normalized over the opponents actually faced.
    pub opponent_weights: BTreeMap<String, f64>,
}

impl Default for WarWeights {
    fn default() -> Self {
        Self { attack_weight: 0.5, defense_weight: 0.5, opponent_weights: BTreeMap::new() }
    }
}

impl WarWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.attack_weight >= 0.0 && self.defense_weight >= 0.0) {
            return Err(Error::Config("war side weights must be >= 0".into()));
        }
        if (self.attack_weight + self.defense_weight - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Config(format!(
                "attack_weight + defense_weight must be 1, got {}",
                self.attack_weight + self.defense_weight
            )));
        }
        if let Some((k, w)) = self.opponent_weights.iter().find(|(_, &w)| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("opponent weight for {k:?} must be > 0, got {w}")));
        }
        Ok(())
    }

    fn opponent(&self, id: &str) -> f64 {
        self.opponent_weights.get(id).copied().unwrap_or(1.0)
    }
}

/// One attack-versus-defense pairing and the overall score of each side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchupScore {
    pub attacker: String,
    pub defender: String,
    pub attack_score: f64,
    pub defense_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarScore {
    pub attack_side: Option<f64>,
    pub defense_side: Option<f64>,
    pub combined: f64,
}

fn weighted_mean<'a>(scores: impl Iterator<Item = (&'a str, f64)>, weights: &WarWeights) -> f64 {
    let mut pairs: Vec<(&str, f64)> = scores.collect();
    pairs.sort_by(|a, b| a.0.cmp(b.0));
    let total: f64 = pairs.iter().map(|(id, _)| weights.opponent(id)).sum();
    pairs.iter().map(|(id, s)| weights.opponent(id) * s).sum::<f64>() / total
}

/// War score per submitter from the full matrix of qualifying attackers ×
/// qualifying defenders.
///
/// A submitter's attacker side is the weighted mean of its attack scores over
/// every qualifying defender, and symmetrically for the defender side. The
/// combined score mixes both sides when the submitter fielded both, and is
/// the single side otherwise.
pub fn war_overall(
    matchups: &[MatchupScore],
    attackers: &[String],
    defenders: &[String],
    weights: &WarWeights,
) -> Result<BTreeMap<String, WarScore>> {
    weights.validate()?;
    let mut cell: BTreeMap<(&str, &str), &MatchupScore> = BTreeMap::new();
    for m in matchups {
        cell.insert((m.attacker.as_str(), m.defender.as_str()), m);
    }
    let mut missing = Vec::new();
    for a in attackers {
        for d in defenders {
            if !cell.contains_key(&(a.as_str(), d.as_str())) {
                missing.push((a.clone(), d.clone()));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteMatrix { missing });
    }

    let mut out: BTreeMap<String, WarScore> = BTreeMap::new();
    let mut attack_side = BTreeMap::new();
    for a in attackers {
        let side = weighted_mean(defenders.iter().map(|d| (d.as_str(), cell[&(a.as_str(), d.as_str())].attack_score)), weights);
        attack_side.insert(a.clone(), side);
    }
    let mut defense_side = BTreeMap::new();
    for d in defenders {
        let side = weighted_mean(attackers.iter().map(|a| (a.as_str(), cell[&(a.as_str(), d.as_str())].defense_score)), weights);
        defense_side.insert(d.clone(), side);
    }
    for id in attack_side.keys().chain(defense_side.keys()) {
        let a = attack_side.get(id).copied();
        let d = defense_side.get(id).copied();
        let combined = match (a, d) {
            (Some(a), Some(d)) => weights.attack_weight * a + weights.defense_weight * d,
            (Some(s), None) | (None, Some(s)) => s,
            (None, None) => unreachable!(),
        };
        out.insert(id.clone(), WarScore { attack_side: a, defense_side: d, combined });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(clean: f64, adv: f64, l2: f64) -> RawAttackMetrics {
        RawAttackMetrics { clean_acc: clean, adv_acc: adv, mean_l2: l2, queries: 0.0, gradient_queries: 0.0, runtime_s: 0.0 }
    }

    #[test]
    fn attack_subscore_examples() {
        let b = Budgets::default();
        let identity = attack_subscores(&raw(0.9, 0.9, 0.0), &b, 144).unwrap();
        assert_eq!(identity.get("effectiveness"), Some(0.0));
        assert_eq!(identity.get("stealth"), Some(1.0));
        assert_eq!(attack_subscores(&raw(0.9, 0.0, 0.0), &b, 144).unwrap().get("effectiveness"), Some(1.0));
        let e = attack_subscores(&raw(0.96, 0.40, 0.0), &b, 144).unwrap().get("effectiveness").unwrap();
        assert!((e - (0.96 - 0.40) / 0.96).abs() < 1e-15);
        assert!((e - 0.583_333_333_333_333).abs() < 1e-12);
        assert!(matches!(attack_subscores(&raw(0.0, 0.0, 0.0), &b, 144), Err(Error::DegenerateModel(_))));
    }

    #[test]
    fn attack_subscores_clamp() {
        let b = Budgets { l2_max: Some(1.0), query_budget: 10.0, time_budget: 1.0, ..Budgets::default() };
        let r = RawAttackMetrics { clean_acc: 0.5, adv_acc: 0.9, mean_l2: 4.0, queries: 30.0, gradient_queries: 0.0, runtime_s: 9.0 };
        let s = attack_subscores(&r, &b, 4).unwrap();
        for (_, v) in s.iter() {
            assert_eq!(v, 0.0);
        }
    }

    fn defense(clean: f64, robust: &[(&str, f64)], overhead: f64) -> DefenseResult {
        DefenseResult {
            clean_acc: clean,
            robust_acc: robust.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            failed: IndexMap::new(),
            overhead_seconds: overhead,
        }
    }

    #[test]
    fn defense_subscore_examples() {
        let b = Budgets::default();
        let all_one = defense_subscores(&defense(0.9, &[("fgsm", 0.9)], 0.0), 0.9, &b).unwrap();
        assert_eq!(all_one.get("clean_retention"), Some(1.0));
        assert_eq!(all_one.get("time_eff"), Some(1.0));
        assert_eq!(all_one.get("robustness"), Some(0.9));
        let r = defense_subscores(&defense(0.9, &[("fgsm", 0.4), ("pgd", 0.6)], 0.0), 0.95, &b).unwrap();
        assert!((r.get("robustness").unwrap() - 0.5).abs() < 1e-15);
        assert!((r.get("clean_retention").unwrap() - 0.90 / 0.95).abs() < 1e-15);
        assert!((r.get("clean_retention").unwrap() - 0.947_368_421_052_631_6).abs() < 1e-12);
        assert!(matches!(defense_subscores(&defense(0.9, &[], 0.0), 0.9, &b), Err(Error::Input(_))));
    }

    #[test]
    fn overall_examples() {
        let s: MetricMap = [("effectiveness", 0.7), ("stealth", 0.1), ("query_eff", 0.2), ("time_eff", 0.3)].into_iter().collect();
        let only_eff = ScoreWeights::from_pairs(&[("effectiveness", 1.0), ("stealth", 0.0), ("query_eff", 0.0), ("time_eff", 0.0)]);
        assert_eq!(overall(&s, &only_eff).unwrap(), 0.7);
        let ones: MetricMap = [("effectiveness", 1.0), ("stealth", 1.0), ("query_eff", 1.0), ("time_eff", 1.0)].into_iter().collect();
        assert!((overall(&ones, &ScoreWeights::default_attack()).unwrap() - 1.0).abs() < 1e-15);
        let s: MetricMap = [("effectiveness", 0.8), ("stealth", 0.5), ("query_eff", 0.4), ("time_eff", 0.2)].into_iter().collect();
        assert!((overall(&s, &ScoreWeights::default_attack()).unwrap() - 0.59).abs() < 1e-12);
    }

    #[test]
    fn overall_rejects_bad_weights() {
        let s: MetricMap = [("effectiveness", 0.5)].into_iter().collect();
        let missing = ScoreWeights::from_pairs(&[("effectiveness", 0.5), ("stealth", 0.5)]);
        assert!(matches!(overall(&s, &missing), Err(Error::Config(_))));
        let zero_missing = ScoreWeights::from_pairs(&[("effectiveness", 1.0), ("stealth", 0.0)]);
        assert_eq!(overall(&s, &zero_missing).unwrap(), 0.5);
        let off_simplex = ScoreWeights::from_pairs(&[("effectiveness", 0.9)]);
        assert!(matches!(overall(&s, &off_simplex), Err(Error::Config(_))));
        let negative = ScoreWeights::from_pairs(&[("effectiveness", 1.5), ("stealth", -0.5)]);
        assert!(negative.validate().is_err());
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn m(a: &str, d: &str, s_a: f64, s_d: f64) -> MatchupScore {
        MatchupScore { attacker: a.into(), defender: d.into(), attack_score: s_a, defense_score: s_d }
    }

    #[test]
    fn war_examples() {
        let w = WarWeights::default();
        let single = war_overall(&[m("a", "d", 0.3, 0.6)], &ids(&["a"]), &ids(&["d"]), &w).unwrap();
        assert_eq!(single["a"].combined, 0.3);
        assert_eq!(single["d"].combined, 0.6);

        let two = war_overall(&[m("a", "d1", 0.2, 0.0), m("a", "d2", 0.8, 0.0)], &ids(&["a"]), &ids(&["d1", "d2"]), &w).unwrap();
        assert!((two["a"].attack_side.unwrap() - 0.5).abs() < 1e-15);

        let both = war_overall(
            &[m("s", "s", 0.6, 0.4)],
            &ids(&["s"]),
            &ids(&["s"]),
            &w,
        )
        .unwrap();
        assert!((both["s"].combined - 0.5).abs() < 1e-15);
    }

    #[test]
    fn war_reports_missing_pairs() {
        let err = war_overall(&[m("a", "d1", 0.2, 0.1)], &ids(&["a", "b"]), &ids(&["d1"]), &WarWeights::default()).unwrap_err();
        match err {
            Error::IncompleteMatrix { missing } => assert_eq!(missing, vec![("b".to_string(), "d1".to_string())]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn opponent_weights_are_normalized() {
        let w = WarWeights { opponent_weights: [("d1".to_string(), 3.0)].into_iter().collect(), ..WarWeights::default() };
        let r = war_overall(&[m("a", "d1", 1.0, 0.0), m("a", "d2", 0.0, 0.0)], &ids(&["a"]), &ids(&["d1", "d2"]), &w).unwrap();
        assert!((r["a"].combined - 0.75).abs() < 1e-15);
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_filter_map("non-degenerate", |raw| {
            let total: f64 = raw.iter().sum();
            (total > 1e-6).then(|| raw.iter().map(|v| v / total).collect())
        })
    }

    const KEYS: [&str; 4] = ["effectiveness", "query_eff", "stealth", "time_eff"];

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn overall_matches_brute_force(w in simplex(4), s in proptest::collection::vec(0.0f64..=1.0, 4)) {
            let weights = ScoreWeights(KEYS.iter().zip(&w).map(|(k, v)| (k.to_string(), *v)).collect());
            prop_assume!(weights.validate().is_ok());
            let subs: MetricMap = KEYS.iter().zip(&s).map(|(k, v)| (*k, *v)).collect();
            let brute = w[0] * s[0] + w[1] * s[1] + w[2] * s[2] + w[3] * s[3];
            let got = overall(&subs, &weights).unwrap();
            prop_assert!((got - brute).abs() <= 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&got));
        }

        #[test]
        fn overall_is_monotone(w in simplex(4), s in proptest::collection::vec(0.0f64..=1.0, 4), i in 0usize..4, bump in 0.0f64..=1.0) {
            let weights = ScoreWeights(KEYS.iter().zip(&w).map(|(k, v)| (k.to_string(), *v)).collect());
            prop_assume!(weights.validate().is_ok());
            let before: MetricMap = KEYS.iter().zip(&s).map(|(k, v)| (*k, *v)).collect();
            let mut raised = s.clone();
            raised[i] = (raised[i] + bump).min(1.0);
            let after: MetricMap = KEYS.iter().zip(&raised).map(|(k, v)| (*k, *v)).collect();
            prop_assert!(overall(&after, &weights).unwrap() >= overall(&before, &weights).unwrap());
        }

        #[test]
        fn overall_ignores_insertion_order(w in simplex(4), s in proptest::collection::vec(0.0f64..=1.0, 4), rot in 0usize..4) {
            let weights = ScoreWeights(KEYS.iter().zip(&w).map(|(k, v)| (k.to_string(), *v)).collect());
            prop_assume!(weights.validate().is_ok());
            let forward: MetricMap = KEYS.iter().zip(&s).map(|(k, v)| (*k, *v)).collect();
            let mut pairs: Vec<(&str, f64)> = KEYS.iter().zip(&s).map(|(k, v)| (*k, *v)).collect();
            pairs.rotate_left(rot);
            pairs.reverse();
            let shuffled: MetricMap = pairs.into_iter().collect();
            prop_assert_eq!(overall(&forward, &weights).unwrap().to_bits(), overall(&shuffled, &weights).unwrap().to_bits());
        }

        #[test]
        fn war_side_is_linear(scores in proptest::collection::vec(0.0f64..=1.0, 3), c in 0.0f64..=1.0) {
            let defenders = ids(&["d0", "d1", "d2"]);
            let base: Vec<MatchupScore> = scores.iter().enumerate().map(|(i, &s)| m("a", &format!("d{i}"), s, 0.0)).collect();
            let scaled: Vec<MatchupScore> = scores.iter().enumerate().map(|(i, &s)| m("a", &format!("d{i}"), c * s, 0.0)).collect();
            let w = WarWeights::default();
            let x = war_overall(&base, &ids(&["a"]), &defenders, &w).unwrap()["a"].attack_side.unwrap();
            let y = war_overall(&scaled, &ids(&["a"]), &defenders, &w).unwrap()["a"].attack_side.unwrap();
            prop_assert!((y - c * x).abs() <= 1e-12);
        }
    }
}
