//! Simulation-only falsification baselines: uniform random sampling and
//! UCT Monte Carlo tree search over the proactive alphabet.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HazError, Result};
use crate::sim::{classify_r, Evaluator, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Sequence fed to the simulator.
    pub sequence: Vec<String>,
    /// Events actually performed (infeasible ones skipped, truncated at contact).
    pub executed: Vec<String>,
    pub seed: u64,
    pub r_max: f64,
    #[serde(rename = "unsafe")]
    pub is_unsafe: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub method: String,
    pub seed: u64,
    pub threshold: f64,
    pub episodes: Vec<EpisodeRecord>,
    /// Number of unsafe episodes.
    pub n: usize,
    /// Mean r_max over unsafe episodes (0 when there are none).
    pub r_mean: f64,
    /// Conditions worth surfacing, e.g. an empty supervisor.
    #[serde(default)]
    pub flags: Vec<String>,
}

impl SearchResult {
    pub fn from_episodes(method: &str, seed: u64, threshold: f64, episodes: Vec<EpisodeRecord>) -> Self {
        let unsafe_r: Vec<f64> = episodes.iter().filter(|e| e.is_unsafe).map(|e| e.r_max).collect();
        let r_mean = if unsafe_r.is_empty() {
            0.0
        } else {
            unsafe_r.iter().sum::<f64>() / unsafe_r.len() as f64
        };
        SearchResult {
            method: method.to_string(),
            seed,
            threshold,
            n: unsafe_r.len(),
            r_mean,
            episodes,
            flags: Vec::new(),
        }
    }

    pub fn best_r_max(&self) -> f64 {
        self.episodes.iter().map(|e| e.r_max).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("search result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One row per episode.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "seed", "index", "episode_seed", "r_max", "unsafe", "sequence", "executed"])
            .expect("in-memory write");
        for (i, e) in self.episodes.iter().enumerate() {
            w.write_record([
                self.method.clone(),
                self.seed.to_string(),
                i.to_string(),
                e.seed.to_string(),
                format!("{:.6}", e.r_max),
                (e.is_unsafe as u8).to_string(),
                e.sequence.join(" "),
                e.executed.join(" "),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub budget: usize,
    pub max_len: usize,
    pub seed: u64,
    pub threshold: f64,
    pub uct_c: f64,
}

impl SearchConfig {
    pub fn new(budget: usize, max_len: usize, seed: u64) -> Self {
        SearchConfig {
            budget,
            max_len,
            seed,
            threshold: crate::sim::DEFAULT_THRESHOLD,
            uct_c: std::f64::consts::SQRT_2,
        }
    }

    fn check(&self, alphabet: &[String]) -> Result<()> {
        if self.budget == 0 {
            return Err(HazError::Config("budget must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(HazError::Config("max_len must be at least 1".into()));
        }
        if alphabet.is_empty() {
            return Err(HazError::Config("empty search alphabet".into()));
        }
        Ok(())
    }
}

fn record(eval: &dyn Evaluator, sequence: Vec<String>, seed: u64, threshold: f64) -> EpisodeRecord {
    let ev = eval.evaluate(&sequence, seed);
    EpisodeRecord {
        is_unsafe: classify_r(ev.r_max, threshold) == Verdict::Unsafe,
        sequence,
        executed: ev.executed,
        seed,
        r_max: ev.r_max,
    }
}

/// `budget` episodes of `max_len` uniformly drawn events each.
pub fn random_search(eval: &dyn Evaluator, alphabet: &[String], cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.check(alphabet)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut episodes = Vec::with_capacity(cfg.budget);
    for _ in 0..cfg.budget {
        let seq: Vec<String> = (0..cfg.max_len)
            .map(|_| alphabet[rng.gen_range(0..alphabet.len())].clone())
            .collect();
        let ep_seed = rng.next_u64();
        episodes.push(record(eval, seq, ep_seed, cfg.threshold));
    }
    Ok(SearchResult::from_episodes("random", cfg.seed, cfg.threshold, episodes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub event: Option<String>,
    pub depth: usize,
    pub visits: u64,
    pub total_reward: f64,
    /// Indices into the tree arena, in expansion (= alphabetical) order.
    pub children: Vec<usize>,
    /// Alphabet position of the next child to expand.
    pub next_untried: usize,
}

impl SearchNode {
    pub fn mean(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.total_reward / self.visits as f64
        }
    }
}

pub fn uct_value(total_reward: f64, visits: u64, parent_visits: u64, c: f64) -> f64 {
    total_reward / visits as f64 + c * ((parent_visits as f64).ln() / visits as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    pub alphabet: Vec<String>,
    pub nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }

    pub fn prefix(&self, mut path: &[usize]) -> Vec<String> {
        if path.first() == Some(&0) {
            path = &path[1..];
        }
        path.iter().filter_map(|&i| self.nodes[i].event.clone()).collect()
    }

    fn select_child(&self, node: usize, c: f64) -> usize {
        let parent = &self.nodes[node];
        let mut best = parent.children[0];
        let mut best_v = f64::NEG_INFINITY;
        // strict > keeps the earliest (lexicographically smallest) on ties
        for &ch in &parent.children {
            let n = &self.nodes[ch];
            let v = uct_value(n.total_reward, n.visits, parent.visits, c);
            if v > best_v {
                best_v = v;
                best = ch;
            }
        }
        best
    }
}

/// Standard UCT; each iteration consumes one episode.
pub fn mcts_search(eval: &dyn Evaluator, alphabet: &[String], cfg: &SearchConfig) -> Result<SearchResult> {
    mcts_search_tree(eval, alphabet, cfg).map(|(r, _)| r)
}

pub fn mcts_search_tree(
    eval: &dyn Evaluator,
    alphabet: &[String],
    cfg: &SearchConfig,
) -> Result<(SearchResult, SearchTree)> {
    cfg.check(alphabet)?;
    if cfg.uct_c.is_nan() || cfg.uct_c <= 0.0 {
        return Err(HazError::Config("uct_c must be positive".into()));
    }
    let mut sorted = alphabet.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut tree = SearchTree {
        alphabet: sorted,
        nodes: vec![SearchNode {
            event: None,
            depth: 0,
            visits: 0,
            total_reward: 0.0,
            children: Vec::new(),
            next_untried: 0,
        }],
    };
    let k = tree.alphabet.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut episodes = Vec::with_capacity(cfg.budget);

    for _ in 0..cfg.budget {
        let mut path = vec![0usize];
        let mut node = 0usize;
        // selection
        loop {
            let n = &tree.nodes[node];
            if n.depth >= cfg.max_len || n.next_untried < k || n.children.is_empty() {
                break;
            }
            node = tree.select_child(node, cfg.uct_c);
            path.push(node);
        }
        // expansion
        if tree.nodes[node].depth < cfg.max_len && tree.nodes[node].next_untried < k {
            let ev = tree.alphabet[tree.nodes[node].next_untried].clone();
            let child = SearchNode {
                event: Some(ev),
                depth: tree.nodes[node].depth + 1,
                visits: 0,
                total_reward: 0.0,
                children: Vec::new(),
                next_untried: 0,
            };
            tree.nodes.push(child);
            let idx = tree.nodes.len() - 1;
            tree.nodes[node].next_untried += 1;
            tree.nodes[node].children.push(idx);
            path.push(idx);
        }
        // rollout
        let mut seq = tree.prefix(&path);
        while seq.len() < cfg.max_len {
            seq.push(tree.alphabet[rng.gen_range(0..k)].clone());
        }
        let ep_seed = rng.next_u64();
        let rec = record(eval, seq, ep_seed, cfg.threshold);
        let reward = rec.r_max;
        episodes.push(rec);
        for &i in &path {
            tree.nodes[i].visits += 1;
            tree.nodes[i].total_reward += reward;
        }
    }
    Ok((SearchResult::from_episodes("mcts", cfg.seed, cfg.threshold, episodes), tree))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Evaluation;

    /// Reward depends only on whether `hot` appears.
    struct Stub {
        hot: Option<&'static str>,
    }

    impl Evaluator for Stub {
        fn alphabet(&self) -> Vec<String> {
            ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect()
        }
        fn evaluate(&self, events: &[String], _seed: u64) -> Evaluation {
            let r = match self.hot {
                Some(h) if events.first().map(String::as_str) == Some(h) => 2.0,
                _ => 0.0,
            };
            Evaluation {
                r_max: r,
                executed: events.to_vec(),
            }
        }
    }

    #[test]
    fn budgets_are_exact() {
        let stub = Stub { hot: None };
        let ab = stub.alphabet();
        for budget in [1, 7, 50] {
            let cfg = SearchConfig::new(budget, 5, 3);
            assert_eq!(random_search(&stub, &ab, &cfg).unwrap().episodes.len(), budget);
            let (r, tree) = mcts_search_tree(&stub, &ab, &cfg).unwrap();
            assert_eq!(r.episodes.len(), budget);
            assert_eq!(tree.root().visits, budget as u64);
        }
        assert!(random_search(&stub, &ab, &SearchConfig::new(0, 5, 3)).is_err());
        assert!(mcts_search(&stub, &ab, &SearchConfig::new(5, 0, 3)).is_err());
    }

    #[test]
    fn unvisited_children_first() {
        let stub = Stub { hot: None };
        let ab = stub.alphabet();
        let (r, tree) = mcts_search_tree(&stub, &ab, &SearchConfig::new(4, 3, 1)).unwrap();
        let firsts: Vec<&str> = r.episodes.iter().map(|e| e.sequence[0].as_str()).collect();
        assert_eq!(firsts, ["a", "b", "c", "d"]);
        assert_eq!(tree.root().children.len(), 4);
    }

    #[test]
    fn uct_matches_formula_on_tree() {
        let stub = Stub { hot: Some("c") };
        let ab = stub.alphabet();
        let (_, tree) = mcts_search_tree(&stub, &ab, &SearchConfig::new(60, 3, 9)).unwrap();
        let root = tree.root();
        for &ch in &root.children {
            let n = &tree.nodes[ch];
            let expect = n.total_reward / n.visits as f64
                + 2f64.sqrt() * ((root.visits as f64).ln() / n.visits as f64).sqrt();
            assert_eq!(uct_value(n.total_reward, n.visits, root.visits, 2f64.sqrt()), expect);
            assert!(n.mean() >= 0.0 && n.mean() <= 2.0);
        }
    }

    #[test]
    fn huge_exploration_is_uniform() {
        let stub = Stub { hot: Some("b") };
        let ab = stub.alphabet();
        let mut cfg = SearchConfig::new(10_000, 2, 5);
        cfg.uct_c = 1e9;
        let (_, tree) = mcts_search_tree(&stub, &ab, &cfg).unwrap();
        for &ch in &tree.root().children {
            let share = tree.nodes[ch].visits as f64 / 10_000.0;
            assert!((share - 0.25).abs() <= 0.025, "{share}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let stub = Stub { hot: Some("d") };
        let ab = stub.alphabet();
        let cfg = SearchConfig::new(40, 4, 77);
        assert_eq!(random_search(&stub, &ab, &cfg).unwrap(), random_search(&stub, &ab, &cfg).unwrap());
        assert_eq!(mcts_search(&stub, &ab, &cfg).unwrap(), mcts_search(&stub, &ab, &cfg).unwrap());
    }

    #[test]
    fn metrics_and_exports() {
        let eps = vec![
            EpisodeRecord { sequence: vec!["a".into()], executed: vec!["a".into()], seed: 1, r_max: 1.5, is_unsafe: true },
            EpisodeRecord { sequence: vec!["b".into()], executed: vec![], seed: 2, r_max: 0.2, is_unsafe: false },
            EpisodeRecord { sequence: vec!["c".into()], executed: vec!["c".into()], seed: 3, r_max: 1.1, is_unsafe: true },
        ];
        let r = SearchResult::from_episodes("random", 0, 1.0, eps);
        assert_eq!(r.n, 2);
        assert!((r.r_mean - 1.3).abs() < 1e-12);
        assert_eq!(SearchResult::from_json(&r.to_json()).unwrap(), r);
        assert_eq!(r.to_csv().lines().count(), 4);
    }

    #[test]
    fn mcts_beats_random_on_toy() {
        // one event makes every episode maximal; over 10 seeds MCTS finds at
        // least as much risk as random and exploits it more often
        let stub = Stub { hot: Some("c") };
        let ab = stub.alphabet();
        let (mut best_m, mut best_r, mut n_m, mut n_r) = (0.0, 0.0, 0, 0);
        for seed in 0..10 {
            let cfg = SearchConfig::new(40, 4, seed);
            let m = mcts_search(&stub, &ab, &cfg).unwrap();
            let r = random_search(&stub, &ab, &cfg).unwrap();
            best_m += m.best_r_max();
            best_r += r.best_r_max();
            n_m += m.n;
            n_r += r.n;
        }
        assert!(best_m >= best_r);
        assert!(n_m > n_r);
    }
}
