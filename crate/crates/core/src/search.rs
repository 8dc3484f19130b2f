//! Greedy layer-wise policy search.
//!
//! Each iteration grows a chain one layer at a time: all twenty
//! single-technique extensions (at the fixed level and probability) are
//! scored and the best is kept only if it strictly beats the current chain.
//! Iteration 1 starts from the empty chain; iteration `i > 1` restarts from
//! the `i`-th best single policy of iteration 1's first sweep. Afterwards
//! every layer of every chain is refined over the magnitude grid.
//!
//! Argmax ties go to the lowest technique index, then the lowest level.
//! Candidates of one sweep may be scored in parallel; results are reduced in
//! candidate order, so the outcome matches a sequential run exactly.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ops::{MagnitudeLevel, Technique};
use crate::policy::{document_value, Policy, PolicyChain, Probability, ScoredChain};

/// Failure reported by an evaluator.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{0}")]
pub struct EvalFailure(pub String);

/// Scores a policy chain, typically by briefly training a child model on
/// chain-augmented data and measuring held-out accuracy.
///
/// Implementations must be deterministic in `(chain, seed)`.
pub trait Evaluator: Sync {
    fn evaluate(&self, chain: &PolicyChain, seed: u64) -> Result<f64, EvalFailure>;

    /// Score on unaugmented data.
    fn baseline(&self, seed: u64) -> Result<f64, EvalFailure> {
        self.evaluate(&PolicyChain::empty(), seed)
    }

    fn epochs_per_evaluation(&self) -> u64;

    /// Whether `evaluate` may be called from several threads at once.
    fn supports_concurrency(&self) -> bool {
        true
    }
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(&self, chain: &PolicyChain, seed: u64) -> Result<f64, EvalFailure> {
        (**self).evaluate(chain, seed)
    }

    fn baseline(&self, seed: u64) -> Result<f64, EvalFailure> {
        (**self).baseline(seed)
    }

    fn epochs_per_evaluation(&self) -> u64 {
        (**self).epochs_per_evaluation()
    }

    fn supports_concurrency(&self) -> bool {
        (**self).supports_concurrency()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub iterations: usize,
    pub fixed_level: MagnitudeLevel,
    #[serde(with = "probability_serde")]
    pub fixed_probability: Probability,
    pub max_layers: usize,
    pub refinement_levels: Vec<MagnitudeLevel>,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            fixed_level: MagnitudeLevel::new(6).expect("valid level"),
            fixed_probability: Probability::ONE,
            max_layers: 8,
            refinement_levels: MagnitudeLevel::all().collect(),
            seed: 0,
        }
    }
}

mod probability_serde {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    use crate::policy::Probability;

    pub fn serialize<S: Serializer>(p: &Probability, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(p.value())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Probability, D::Error> {
        let v = f64::deserialize(d)?;
        Probability::from_f64(v).ok_or_else(|| D::Error::custom(format!("probability {v} not on the 0.1 grid")))
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let invalid = |msg: String| Err(SearchError::InvalidConfig(msg));
        if self.iterations == 0 {
            return invalid("iterations must be >= 1".into());
        }
        if self.iterations > Technique::COUNT {
            return invalid(format!(
                "iterations = {} exceeds the {} first-layer ranks available for restarts",
                self.iterations,
                Technique::COUNT
            ));
        }
        if self.max_layers == 0 {
            return invalid("max_layers must be >= 1".into());
        }
        if self.refinement_levels.is_empty() {
            return invalid("refinement_levels must not be empty".into());
        }
        Ok(())
    }
}

/// Child evaluations and epochs spent by a search. Never decreases.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub child_evaluations: u64,
    pub total_epochs: u64,
    /// Unaugmented-baseline scorings; tracked apart from chain evaluations.
    pub baseline_evaluations: u64,
}

#[derive(Debug)]
struct LedgerCounter {
    epochs_per_evaluation: u64,
    evaluations: AtomicU64,
    baselines: AtomicU64,
}

impl LedgerCounter {
    fn record(&self) {
        self.evaluations.fetch_add(1, Ordering::SeqCst);
    }

    fn snapshot(&self) -> BudgetLedger {
        let evals = self.evaluations.load(Ordering::SeqCst);
        BudgetLedger {
            child_evaluations: evals,
            total_epochs: evals * self.epochs_per_evaluation,
            baseline_evaluations: self.baselines.load(Ordering::SeqCst),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error("start chain has {len} layers, max_layers is {max}")]
    StartTooLong { len: usize, max: usize },
    #[error("no chains to refine")]
    NothingToRefine,
    #[error("evaluator failed after {} child evaluations: {source}", ledger.child_evaluations)]
    Evaluator { source: EvalFailure, ledger: BudgetLedger },
    #[error("evaluator returned accuracy {value} outside [0, 1]")]
    AccuracyOutOfRange { value: f64, ledger: BudgetLedger },
}

impl SearchError {
    /// Ledger at the moment the search aborted, if it got that far.
    pub fn partial_ledger(&self) -> Option<&BudgetLedger> {
        match self {
            SearchError::Evaluator { ledger, .. } | SearchError::AccuracyOutOfRange { ledger, .. } => Some(ledger),
            _ => None,
        }
    }
}

/// Final output: chains sorted by accuracy, descending, ties in insertion
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub chains: Vec<ScoredChain>,
    pub ledger: BudgetLedger,
}

impl SearchResult {
    pub fn to_json(&self) -> Value {
        let mut doc = document_value(&self.chains);
        doc.as_object_mut()
            .expect("document is an object")
            .insert("ledger".into(), serde_json::to_value(self.ledger).expect("ledger serializes"));
        doc
    }

    /// Policy document with a trailing ledger block.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(&self.to_json()).expect("result serializes");
        out.push(b'\n');
        out
    }
}

/// Stateful search engine; owns the ledger across all phases of a run.
pub struct GreedySearch<'e, E: Evaluator + ?Sized> {
    evaluator: &'e E,
    config: SearchConfig,
    ledger: LedgerCounter,
    baseline: Option<f64>,
    first_sweep: Option<Vec<(Technique, f64)>>,
}

impl<'e, E: Evaluator + ?Sized> GreedySearch<'e, E> {
    pub fn new(evaluator: &'e E, config: SearchConfig) -> Result<Self, SearchError> {
        config.validate()?;
        Ok(Self {
            ledger: LedgerCounter {
                epochs_per_evaluation: evaluator.epochs_per_evaluation(),
                evaluations: AtomicU64::new(0),
                baselines: AtomicU64::new(0),
            },
            evaluator,
            config,
            baseline: None,
            first_sweep: None,
        })
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn ledger(&self) -> BudgetLedger {
        self.ledger.snapshot()
    }

    /// Scores of the first sweep from the empty chain, in technique order.
    pub fn first_sweep(&self) -> Option<&[(Technique, f64)]> {
        self.first_sweep.as_deref()
    }

    fn check(&self, value: f64) -> Result<f64, SearchError> {
        if value.is_finite() && (0.0..=1.0).contains(&value) {
            Ok(value)
        } else {
            Err(SearchError::AccuracyOutOfRange { value, ledger: self.ledger() })
        }
    }

    fn fail(&self, source: EvalFailure) -> SearchError {
        SearchError::Evaluator { source, ledger: self.ledger() }
    }

    /// Cached score of the unaugmented data.
    pub fn baseline(&mut self) -> Result<f64, SearchError> {
        if let Some(b) = self.baseline {
            return Ok(b);
        }
        self.ledger.baselines.fetch_add(1, Ordering::SeqCst);
        let b = self.evaluator.baseline(self.config.seed).map_err(|e| self.fail(e))?;
        let b = self.check(b)?;
        self.baseline = Some(b);
        Ok(b)
    }

    /// Scores each candidate once, counting every call, and returns the
    /// scores in candidate order.
    fn score_all(&self, candidates: &[PolicyChain]) -> Result<Vec<f64>, SearchError> {
        let seed = self.config.seed;
        let run = |c: &PolicyChain| {
            self.ledger.record();
            self.evaluator.evaluate(c, seed)
        };
        let results: Vec<Result<f64, EvalFailure>> = if self.evaluator.supports_concurrency() {
            candidates.par_iter().map(run).collect()
        } else {
            candidates.iter().map(run).collect()
        };
        results
            .into_iter()
            .map(|r| r.map_err(|e| self.fail(e)).and_then(|v| self.check(v)))
            .collect()
    }

    fn layer_policy(&self, technique: Technique) -> Policy {
        Policy::new(technique, self.config.fixed_probability, self.config.fixed_level)
    }

    /// Grows `start` (with known accuracy) until no extension strictly
    /// improves it or `max_layers` is reached.
    fn grow(&mut self, start: PolicyChain, start_accuracy: f64) -> Result<ScoredChain, SearchError> {
        let mut chain = start;
        let mut accuracy = start_accuracy;
        let mut used = 0u64;
        while chain.len() < self.config.max_layers {
            let candidates: Vec<PolicyChain> =
                Technique::ALL.iter().map(|&t| chain.extended(self.layer_policy(t))).collect();
            let scores = self.score_all(&candidates)?;
            used += candidates.len() as u64;
            if chain.is_empty() && self.first_sweep.is_none() {
                self.first_sweep = Some(Technique::ALL.iter().copied().zip(scores.iter().copied()).collect());
            }
            let (best, best_score) = argmax(&scores);
            if best_score > accuracy {
                chain = candidates[best].clone();
                accuracy = best_score;
            } else {
                break;
            }
        }
        Ok(ScoredChain { chain, accuracy, evaluations_used: used })
    }

    /// Greedy layer expansion from `start` (empty for a fresh search). A
    /// nonempty start chain is scored once first.
    pub fn greedy_layer_search(&mut self, start: &PolicyChain) -> Result<ScoredChain, SearchError> {
        if start.len() >= self.config.max_layers {
            return Err(SearchError::StartTooLong { len: start.len(), max: self.config.max_layers });
        }
        if start.is_empty() {
            let base = self.baseline()?;
            return self.grow(PolicyChain::empty(), base);
        }
        let acc = self.score_all(std::slice::from_ref(start))?[0];
        let mut scored = self.grow(start.clone(), acc)?;
        scored.evaluations_used += 1;
        Ok(scored)
    }

    /// One greedy chain per iteration, in iteration order.
    pub fn run_iterations(&mut self) -> Result<Vec<ScoredChain>, SearchError> {
        let mut out = Vec::with_capacity(self.config.iterations);
        out.push(self.greedy_layer_search(&PolicyChain::empty())?);
        if self.config.iterations == 1 {
            return Ok(out);
        }
        let ranked = self.first_layer_ranking().expect("iteration 1 always sweeps the first layer");
        for &(technique, score) in ranked.iter().skip(1).take(self.config.iterations - 1) {
            let start = PolicyChain::new(vec![self.layer_policy(technique)]);
            out.push(self.grow(start, score)?);
        }
        Ok(out)
    }

    /// First-sweep candidates ordered best first (ties by technique index).
    pub fn first_layer_ranking(&self) -> Option<Vec<(Technique, f64)>> {
        let mut ranked = self.first_sweep.clone()?;
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.index().cmp(&b.0.index())));
        Some(ranked)
    }

    /// Layer by layer, fixes each policy at the best level of the refinement
    /// grid with the other layers held at their current levels.
    pub fn refine_magnitudes(&mut self, chains: Vec<ScoredChain>) -> Result<Vec<ScoredChain>, SearchError> {
        if chains.is_empty() {
            return Err(SearchError::NothingToRefine);
        }
        let mut levels = self.config.refinement_levels.clone();
        levels.sort();
        levels.dedup();
        chains
            .into_iter()
            .map(|mut scored| {
                for layer in 0..scored.chain.len() {
                    let candidates: Vec<PolicyChain> =
                        levels.iter().map(|&l| scored.chain.with_level(layer, l)).collect();
                    let scores = self.score_all(&candidates)?;
                    let (best, best_score) = argmax(&scores);
                    scored.chain = candidates[best].clone();
                    scored.accuracy = best_score;
                    scored.evaluations_used += candidates.len() as u64;
                }
                Ok(scored)
            })
            .collect()
    }

    /// Iterations, refinement, then a stable descending sort by accuracy.
    pub fn run(mut self) -> Result<SearchResult, SearchError> {
        let chains = self.run_iterations()?;
        let mut chains = self.refine_magnitudes(chains)?;
        chains.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
        Ok(SearchResult { chains, ledger: self.ledger() })
    }
}

/// First index of the maximum.
fn argmax(scores: &[f64]) -> (usize, f64) {
    let mut best = (0, scores[0]);
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > best.1 {
            best = (i, s);
        }
    }
    best
}

pub fn greedy_layer_search<E: Evaluator + ?Sized>(
    evaluator: &E,
    config: &SearchConfig,
    start: &PolicyChain,
) -> Result<(ScoredChain, BudgetLedger), SearchError> {
    let mut search = GreedySearch::new(evaluator, config.clone())?;
    let chain = search.greedy_layer_search(start)?;
    Ok((chain, search.ledger()))
}

pub fn run_iterations<E: Evaluator + ?Sized>(
    evaluator: &E,
    config: &SearchConfig,
) -> Result<(Vec<ScoredChain>, BudgetLedger), SearchError> {
    let mut search = GreedySearch::new(evaluator, config.clone())?;
    let chains = search.run_iterations()?;
    Ok((chains, search.ledger()))
}

pub fn refine_magnitudes<E: Evaluator + ?Sized>(
    evaluator: &E,
    chains: Vec<ScoredChain>,
    config: &SearchConfig,
) -> Result<(Vec<ScoredChain>, BudgetLedger), SearchError> {
    let mut search = GreedySearch::new(evaluator, config.clone())?;
    let chains = search.refine_magnitudes(chains)?;
    Ok((chains, search.ledger()))
}

pub fn full_search<E: Evaluator + ?Sized>(evaluator: &E, config: &SearchConfig) -> Result<SearchResult, SearchError> {
    GreedySearch::new(evaluator, config.clone())?.run()
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("compute ratio needs a ledger with nonzero epochs")]
pub struct ZeroEpochs;

/// How many times more training epochs the baseline search spends:
/// `baseline_evaluations * baseline_epochs_per_eval / ours.total_epochs`.
pub fn compute_ratio(ours: &BudgetLedger, baseline_evaluations: u64, baseline_epochs_per_eval: u64) -> Result<f64, ZeroEpochs> {
    if ours.total_epochs == 0 {
        return Err(ZeroEpochs);
    }
    Ok((baseline_evaluations as f64 * baseline_epochs_per_eval as f64) / ours.total_epochs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(f64);

    impl Evaluator for Constant {
        fn evaluate(&self, _: &PolicyChain, _: u64) -> Result<f64, EvalFailure> {
            Ok(self.0)
        }
        fn epochs_per_evaluation(&self) -> u64 {
            5
        }
    }

    /// Distinct techniques in the chain, capped at 3, scaled to [0, 1].
    struct Distinct;

    impl Evaluator for Distinct {
        fn evaluate(&self, chain: &PolicyChain, _: u64) -> Result<f64, EvalFailure> {
            let mut t: Vec<_> = chain.iter().map(|p| p.technique).collect();
            t.sort();
            t.dedup();
            Ok(t.len().min(3) as f64 / 3.0)
        }
        fn epochs_per_evaluation(&self) -> u64 {
            5
        }
    }

    struct LevelScore;

    impl Evaluator for LevelScore {
        fn evaluate(&self, chain: &PolicyChain, _: u64) -> Result<f64, EvalFailure> {
            Ok(chain.iter().map(|p| p.level.get() as f64).sum::<f64>() / (10.0 * chain.len().max(1) as f64))
        }
        fn epochs_per_evaluation(&self) -> u64 {
            1
        }
    }

    struct Failing;

    impl Evaluator for Failing {
        fn evaluate(&self, chain: &PolicyChain, _: u64) -> Result<f64, EvalFailure> {
            if chain.contains(Technique::Rotate) {
                Err(EvalFailure("diverged".into()))
            } else {
                Ok(0.1)
            }
        }
        fn baseline(&self, _: u64) -> Result<f64, EvalFailure> {
            Ok(0.0)
        }
        fn epochs_per_evaluation(&self) -> u64 {
            2
        }
    }

    fn lvl(l: u8) -> MagnitudeLevel {
        MagnitudeLevel::new(l).unwrap()
    }

    #[test]
    fn defaults_match_the_published_settings() {
        let c = SearchConfig::default();
        assert_eq!(c.iterations, 5);
        assert_eq!(c.fixed_level.get(), 6);
        assert_eq!(c.fixed_probability, Probability::ONE);
        assert_eq!(c.max_layers, 8);
        assert_eq!(c.refinement_levels.len(), 10);
    }

    #[test]
    fn constant_evaluator_stops_after_one_sweep() {
        let (chain, ledger) = greedy_layer_search(&Constant(0.5), &SearchConfig::default(), &PolicyChain::empty()).unwrap();
        assert!(chain.chain.is_empty());
        assert_eq!(chain.accuracy, 0.5);
        assert_eq!(ledger.child_evaluations, 20);
        assert_eq!(ledger.total_epochs, 100);
        assert_eq!(ledger.baseline_evaluations, 1);
    }

    #[test]
    fn distinct_evaluator_builds_three_layers() {
        let (chain, ledger) = greedy_layer_search(&Distinct, &SearchConfig::default(), &PolicyChain::empty()).unwrap();
        let techniques: Vec<_> = chain.chain.iter().map(|p| p.technique).collect();
        assert_eq!(techniques, vec![Technique::FlipLR, Technique::FlipUD, Technique::AutoContrast]);
        assert_eq!(chain.accuracy, 1.0);
        assert_eq!(ledger.child_evaluations, 80);
        assert!(chain.chain.iter().all(|p| p.level.get() == 6 && p.probability == Probability::ONE));
    }

    #[test]
    fn max_layers_bounds_growth() {
        let config = SearchConfig { max_layers: 2, ..Default::default() };
        let (chain, ledger) = greedy_layer_search(&Distinct, &config, &PolicyChain::empty()).unwrap();
        assert_eq!(chain.chain.len(), 2);
        assert_eq!(ledger.child_evaluations, 40);
        let two = chain.chain.clone();
        assert!(matches!(
            greedy_layer_search(&Distinct, &config, &two),
            Err(SearchError::StartTooLong { len: 2, max: 2 })
        ));
    }

    #[test]
    fn iteration_bounds() {
        let config = SearchConfig { iterations: 21, ..Default::default() };
        assert!(matches!(full_search(&Constant(0.5), &config), Err(SearchError::InvalidConfig(_))));
        let config = SearchConfig { iterations: 0, ..Default::default() };
        assert!(matches!(full_search(&Constant(0.5), &config), Err(SearchError::InvalidConfig(_))));
        let config = SearchConfig { iterations: 20, ..Default::default() };
        assert_eq!(full_search(&Constant(0.5), &config).unwrap().chains.len(), 20);
    }

    #[test]
    fn refinement_picks_the_best_level() {
        let chain = ScoredChain {
            chain: PolicyChain::new(vec![Policy::new(Technique::Rotate, Probability::ONE, lvl(6))]),
            accuracy: 0.6,
            evaluations_used: 0,
        };
        let (out, ledger) = refine_magnitudes(&LevelScore, vec![chain.clone()], &SearchConfig::default()).unwrap();
        assert_eq!(out[0].chain.policies()[0].level.get(), 10);
        assert_eq!(out[0].accuracy, 1.0);
        assert_eq!(ledger.child_evaluations, 10);

        let two = ScoredChain { chain: chain.chain.extended(chain.chain.policies()[0]), ..chain };
        let (out, ledger) = refine_magnitudes(&LevelScore, vec![two], &SearchConfig::default()).unwrap();
        assert_eq!(ledger.child_evaluations, 20);
        assert!(out[0].chain.iter().all(|p| p.level.get() == 10));
    }

    #[test]
    fn refinement_ties_keep_lowest_level() {
        let chain = ScoredChain {
            chain: PolicyChain::new(vec![
                Policy::new(Technique::FlipLR, Probability::ONE, lvl(6)),
                Policy::new(Technique::FlipUD, Probability::ONE, lvl(6)),
            ]),
            accuracy: 0.5,
            evaluations_used: 40,
        };
        let (out, _) = refine_magnitudes(&Constant(0.7), vec![chain.clone()], &SearchConfig::default()).unwrap();
        let refined = &out[0];
        assert_eq!(refined.accuracy, 0.7);
        assert_eq!(refined.evaluations_used, 60);
        for (a, b) in refined.chain.iter().zip(chain.chain.iter()) {
            assert_eq!(a.technique, b.technique);
            assert_eq!(a.probability, b.probability);
            assert_eq!(a.level.get(), 1);
        }
        assert!(matches!(refine_magnitudes(&Constant(0.7), vec![], &SearchConfig::default()), Err(SearchError::NothingToRefine)));
    }

    #[test]
    fn evaluator_failure_carries_partial_ledger() {
        let err = full_search(&Failing, &SearchConfig::default()).unwrap_err();
        let ledger = err.partial_ledger().copied().unwrap();
        assert_eq!(ledger.child_evaluations, 20);
        assert!(matches!(err, SearchError::Evaluator { .. }));
    }

    #[test]
    fn out_of_range_accuracy_is_rejected() {
        assert!(matches!(full_search(&Constant(1.5), &SearchConfig::default()), Err(SearchError::AccuracyOutOfRange { .. })));
        assert!(matches!(full_search(&Constant(f64::NAN), &SearchConfig::default()), Err(SearchError::AccuracyOutOfRange { .. })));
    }

    #[test]
    fn ratio_arithmetic() {
        let ours = BudgetLedger { child_evaluations: 500, total_epochs: 2500, baseline_evaluations: 0 };
        assert_eq!(compute_ratio(&ours, 15_000, 120), Ok(720.0));
        let same = BudgetLedger { child_evaluations: 15_000, total_epochs: 1_800_000, baseline_evaluations: 0 };
        assert_eq!(compute_ratio(&same, 15_000, 120), Ok(1.0));
        let more = BudgetLedger { child_evaluations: 650, total_epochs: 3250, baseline_evaluations: 0 };
        assert!((compute_ratio(&more, 15_000, 120).unwrap() - 553.846_153_846).abs() < 1e-6);
        assert_eq!(compute_ratio(&BudgetLedger::default(), 1, 1), Err(ZeroEpochs));
    }

    #[test]
    fn result_json_has_ledger_block() {
        let result = full_search(&Constant(0.5), &SearchConfig { iterations: 1, ..Default::default() }).unwrap();
        let json = result.to_json();
        assert_eq!(json["ledger"]["child_evaluations"], 20);
        assert_eq!(json["ledger"]["total_epochs"], 100);
        let parsed = crate::policy::parse_policies(&result.to_json_bytes()).unwrap();
        assert_eq!(parsed, result.chains);
    }
}
