use augsearch::ops::Technique;
use augsearch::policy::PolicyChain;
use augsearch::rng::derive_seed;
use augsearch::search::{full_search, greedy_layer_search, run_iterations, EvalFailure, Evaluator, GreedySearch, SearchConfig};
use proptest::prelude::*;

/// Pseudo-random lookup table over technique sequences of length <= 3.
/// Longer chains score 0. Scores are quantised to `buckets` levels so ties
/// occur.
struct Table {
    seed: u64,
    buckets: u64,
    baseline: f64,
    concurrent: bool,
}

impl Table {
    fn score(&self, techniques: &[usize]) -> f64 {
        if techniques.len() > 3 {
            return 0.0;
        }
        let key = techniques.iter().fold(derive_seed(self.seed, 99), |acc, &t| derive_seed(acc, t as u64 + 1));
        (key % self.buckets) as f64 / (self.buckets - 1) as f64
    }
}

impl Evaluator for Table {
    fn evaluate(&self, chain: &PolicyChain, _: u64) -> Result<f64, EvalFailure> {
        let t: Vec<usize> = chain.iter().map(|p| p.technique.index()).collect();
        Ok(self.score(&t))
    }
    fn baseline(&self, _: u64) -> Result<f64, EvalFailure> {
        Ok(self.baseline)
    }
    fn epochs_per_evaluation(&self) -> u64 {
        5
    }
    fn supports_concurrency(&self) -> bool {
        self.concurrent
    }
}

/// Independent step-wise argmax over the table.
fn greedy_oracle(table: &Table, max_layers: usize) -> (Vec<usize>, f64) {
    let mut current: Vec<usize> = Vec::new();
    let mut acc = table.baseline;
    while current.len() < max_layers {
        let mut best: Option<(usize, f64)> = None;
        for t in 0..20 {
            let mut cand = current.clone();
            cand.push(t);
            let s = table.score(&cand);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((t, s));
            }
        }
        let (t, s) = best.unwrap();
        if s > acc {
            current.push(t);
            acc = s;
        } else {
            break;
        }
    }
    (current, acc)
}

fn techniques(chain: &PolicyChain) -> Vec<usize> {
    chain.iter().map(|p| p.technique.index()).collect()
}

/// Wraps an evaluator and applies a strictly increasing map to every score.
struct Monotone<E>(E, fn(f64) -> f64);

impl<E: Evaluator> Evaluator for Monotone<E> {
    fn evaluate(&self, chain: &PolicyChain, seed: u64) -> Result<f64, EvalFailure> {
        self.0.evaluate(chain, seed).map(self.1)
    }
    fn baseline(&self, seed: u64) -> Result<f64, EvalFailure> {
        self.0.baseline(seed).map(self.1)
    }
    fn epochs_per_evaluation(&self) -> u64 {
        self.0.epochs_per_evaluation()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iteration_one_matches_greedy_oracle(seed in any::<u64>(), buckets in 3u64..50, base in 0u64..4) {
        let table = Table { seed, buckets, baseline: base as f64 / 8.0, concurrent: true };
        let config = SearchConfig::default();
        let (oracle, oracle_acc) = greedy_oracle(&table, config.max_layers);
        let (chains, _) = run_iterations(&table, &config).unwrap();
        prop_assert_eq!(techniques(&chains[0].chain), oracle.clone());
        prop_assert_eq!(chains[0].accuracy, oracle_acc);
        let result = full_search(&table, &config).unwrap();
        prop_assert!(result.chains.iter().any(|c| techniques(&c.chain) == oracle));
    }

    #[test]
    fn ledger_matches_closed_form(seed in any::<u64>(), buckets in 3u64..50, iterations in 1usize..=20) {
        let table = Table { seed, buckets, baseline: 0.0, concurrent: true };
        let config = SearchConfig { iterations, ..Default::default() };
        let mut search = GreedySearch::new(&table, config).unwrap();
        let chains = search.run_iterations().unwrap();
        // Table scores vanish beyond 3 layers, so max_layers never binds.
        let accepted: Vec<u64> = chains
            .iter()
            .enumerate()
            .map(|(i, c)| c.chain.len() as u64 - u64::from(i > 0))
            .collect();
        let refined = search.refine_magnitudes(chains.clone()).unwrap();
        let expected: u64 = accepted.iter().map(|l| 20 * (l + 1)).sum::<u64>()
            + chains.iter().map(|c| 10 * c.chain.len() as u64).sum::<u64>();
        let ledger = search.ledger();
        prop_assert_eq!(ledger.child_evaluations, expected);
        prop_assert_eq!(ledger.total_epochs, 5 * expected);
        prop_assert_eq!(refined.iter().map(|c| c.evaluations_used).sum::<u64>(), expected);
    }

    #[test]
    fn increasing_transform_keeps_structures(seed in any::<u64>(), buckets in 3u64..50) {
        let plain = Table { seed, buckets, baseline: 0.25, concurrent: true };
        let warped = Monotone(Table { seed, buckets, baseline: 0.25, concurrent: true }, |x| x * x * x);
        let shifted = Monotone(Table { seed, buckets, baseline: 0.25, concurrent: true }, |x| 0.5 + 0.5 * x);
        let config = SearchConfig::default();
        let a = full_search(&plain, &config).unwrap();
        let b = full_search(&warped, &config).unwrap();
        let c = full_search(&shifted, &config).unwrap();
        let structure = |r: &augsearch::search::SearchResult| {
            let mut v: Vec<PolicyChain> = r.chains.iter().map(|c| c.chain.clone()).collect();
            v.sort_by_key(|c| format!("{c}"));
            v
        };
        prop_assert_eq!(structure(&a), structure(&b));
        prop_assert_eq!(structure(&a), structure(&c));
    }

    #[test]
    fn accepted_accuracy_strictly_increases(seed in any::<u64>(), buckets in 3u64..50) {
        let table = Table { seed, buckets, baseline: 0.0, concurrent: true };
        let (chain, _) = greedy_layer_search(&table, &SearchConfig::default(), &PolicyChain::empty()).unwrap();
        let t = techniques(&chain.chain);
        let mut prev = table.baseline;
        for k in 1..=t.len() {
            let s = table.score(&t[..k]);
            prop_assert!(s > prev);
            prev = s;
        }
    }
}

#[test]
fn restarts_follow_first_layer_ranking() {
    // Distinct first-layer scores: technique k scores (k * 7 mod 20) / 20.
    struct Ranked;
    impl Evaluator for Ranked {
        fn evaluate(&self, chain: &PolicyChain, _: u64) -> Result<f64, EvalFailure> {
            let first = chain.policies()[0].technique.index();
            let base = ((first * 7) % 20) as f64 / 20.0;
            Ok(if chain.len() == 1 { base } else { base / 2.0 })
        }
        fn baseline(&self, _: u64) -> Result<f64, EvalFailure> {
            Ok(0.0)
        }
        fn epochs_per_evaluation(&self) -> u64 {
            5
        }
    }
    let config = SearchConfig { iterations: 20, ..Default::default() };
    let (chains, ledger) = run_iterations(&Ranked, &config).unwrap();
    let mut ranking: Vec<usize> = (0..20).collect();
    ranking.sort_by_key(|&k| std::cmp::Reverse((k * 7) % 20));
    for (i, chain) in chains.iter().enumerate() {
        assert_eq!(chain.chain.len(), 1);
        assert_eq!(chain.chain.policies()[0].technique, Technique::ALL[ranking[i]], "iteration {}", i + 1);
    }
    // One accepted layer in iteration 1 plus a terminating sweep, then one sweep per restart.
    assert_eq!(ledger.child_evaluations, 40 + 19 * 20);
}

#[test]
fn distinct_technique_mock_hand_count() {
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
    let result = full_search(&Distinct, &SearchConfig::default()).unwrap();
    // iteration 1: 3 sweeps accepted + 1 terminating = 80
    // iterations 2-5: start at one layer, 2 accepted + 1 terminating = 60 each
    // refinement: 5 chains x 3 layers x 10 levels = 150
    assert_eq!(result.ledger.child_evaluations, 80 + 4 * 60 + 150);
    assert_eq!(result.ledger.total_epochs, 470 * 5);
    assert!(result.chains.iter().all(|c| c.chain.len() == 3 && c.accuracy == 1.0));
    let firsts: Vec<Technique> = result.chains.iter().map(|c| c.chain.policies()[0].technique).collect();
    assert_eq!(firsts, Technique::ALL[..5].to_vec());
}

#[test]
fn results_are_sorted_and_deterministic() {
    let table = Table { seed: 42, buckets: 17, baseline: 0.1, concurrent: true };
    let config = SearchConfig { seed: 3, ..Default::default() };
    let a = full_search(&table, &config).unwrap();
    for w in a.chains.windows(2) {
        assert!(w[0].accuracy >= w[1].accuracy);
    }
    let b = full_search(&table, &config).unwrap();
    assert_eq!(a.to_json_bytes(), b.to_json_bytes());

    let serial = Table { seed: 42, buckets: 17, baseline: 0.1, concurrent: false };
    let c = full_search(&serial, &config).unwrap();
    assert_eq!(a, c);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let d = pool.install(|| full_search(&table, &config).unwrap());
    assert_eq!(a, d);
}
