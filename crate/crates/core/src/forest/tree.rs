//! CART classification trees grown to purity with per-node feature sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ForestConfig;

/// A tree node. Samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        /// Majority class (lowest index on ties).
        class: u32,
        /// Weighted class counts of the bag samples that reached this leaf.
        counts: Vec<u32>,
    },
}

/// One binary decision tree plus the bootstrap bag it was grown from.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub(crate) nodes: Vec<Node>,
    /// Training indices drawn with replacement; empty for trees loaded from a
    /// bundle.
    pub(crate) bag: Vec<u32>,
    /// Bit `i` set when object `i` is in the bag.
    pub(crate) in_bag: Vec<u64>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn bag(&self) -> &[u32] {
        &self.bag
    }

    pub fn contains(&self, i: usize) -> bool {
        self.in_bag
            .get(i / 64)
            .is_some_and(|w| w & (1u64 << (i % 64)) != 0)
    }

    pub(crate) fn from_nodes(nodes: Vec<Node>) -> Self {
        Tree {
            nodes,
            bag: Vec::new(),
            in_bag: Vec::new(),
        }
    }

    /// Class voted by this tree for `x`.
    #[inline]
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf { class, .. } => return *class as usize,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + go(nodes, *left as usize).max(go(nodes, *right as usize))
                }
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

/// Draw `n` indices uniformly with replacement.
pub fn bootstrap_bag<R: Rng>(n: usize, rng: &mut R) -> Vec<u32> {
    (0..n).map(|_| rng.random_range(0..n) as u32).collect()
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn majority(counts: &[u32]) -> u32 {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best as u32
}

/// Grow one tree on the samples listed in `bag` (duplicates allowed).
///
/// At every node the features are visited in a random order until
/// `n_split_features` non-constant ones have been evaluated; the
/// (feature, threshold) pair with the largest Gini decrease wins, ties going
/// to the lowest feature index and then the lowest threshold. A node becomes a
/// leaf when it is pure, holds at most `min_node_size` samples, or every
/// feature is constant over it.
pub fn grow_tree<X, R>(
    x: &[X],
    y: &[usize],
    n_classes: usize,
    bag: &[u32],
    cfg: &ForestConfig,
    rng: &mut R,
) -> Tree
where
    X: AsRef<[f64]>,
    R: Rng,
{
    assert!(!bag.is_empty(), "bag must not be empty");
    let n_features = x[0].as_ref().len();
    let mtry = cfg.split_features(n_features);

    let mut nodes: Vec<Node> = vec![Node::Leaf {
        class: 0,
        counts: Vec::new(),
    }];
    let mut stack: Vec<(usize, Vec<u32>)> = vec![(0, bag.to_vec())];
    let mut order: Vec<usize> = (0..n_features).collect();
    let mut pairs: Vec<(f64, u32)> = Vec::with_capacity(bag.len());

    while let Some((slot, samples)) = stack.pop() {
        let mut counts = vec![0u32; n_classes];
        for &s in &samples {
            counts[y[s as usize]] += 1;
        }
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let split = if pure || samples.len() <= cfg.min_node_size {
            None
        } else {
            best_split(x, y, n_classes, &samples, mtry, &mut order, &mut pairs, rng)
        };

        match split {
            None => {
                nodes[slot] = Node::Leaf {
                    class: majority(&counts),
                    counts,
                };
            }
            Some(c) => {
                let (left, right): (Vec<u32>, Vec<u32>) = samples
                    .iter()
                    .partition(|&&s| x[s as usize].as_ref()[c.feature] <= c.threshold);
                debug_assert!(!left.is_empty() && !right.is_empty());
                let l = nodes.len();
                nodes.push(Node::Leaf { class: 0, counts: Vec::new() });
                nodes.push(Node::Leaf { class: 0, counts: Vec::new() });
                nodes[slot] = Node::Split {
                    feature: c.feature as u32,
                    threshold: c.threshold,
                    left: l as u32,
                    right: (l + 1) as u32,
                };
                // Right first so the left subtree is expanded first.
                stack.push((l + 1, right));
                stack.push((l, left));
            }
        }
    }

    let n = x.len();
    let mut in_bag = vec![0u64; n.div_ceil(64)];
    for &b in bag {
        in_bag[b as usize / 64] |= 1u64 << (b as usize % 64);
    }
    Tree {
        nodes,
        bag: bag.to_vec(),
        in_bag,
    }
}

#[allow(clippy::too_many_arguments)]
fn best_split<X: AsRef<[f64]>, R: Rng>(
    x: &[X],
    y: &[usize],
    n_classes: usize,
    samples: &[u32],
    mtry: usize,
    order: &mut [usize],
    pairs: &mut Vec<(f64, u32)>,
    rng: &mut R,
) -> Option<Candidate> {
    let n_features = order.len();
    for (i, o) in order.iter_mut().enumerate() {
        *o = i;
    }
    let mut best: Option<Candidate> = None;
    let mut evaluated = 0;
    let mut left = vec![0u32; n_classes];
    let mut right = vec![0u32; n_classes];

    for i in 0..n_features {
        if evaluated == mtry {
            break;
        }
        let j = rng.random_range(i..n_features);
        order.swap(i, j);
        let f = order[i];

        pairs.clear();
        pairs.extend(
            samples
                .iter()
                .map(|&s| (x[s as usize].as_ref()[f], y[s as usize] as u32)),
        );
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if pairs[0].0 == pairs[pairs.len() - 1].0 {
            continue;
        }
        evaluated += 1;

        left.iter_mut().for_each(|c| *c = 0);
        right.iter_mut().for_each(|c| *c = 0);
        for p in pairs.iter() {
            right[p.1 as usize] += 1;
        }
        // Maximizing sum_c L_c^2/n_L + sum_c R_c^2/n_R is equivalent to
        // maximizing the Gini decrease.
        let mut sq_l = 0.0f64;
        let mut sq_r: f64 = right.iter().map(|&c| (c as f64).powi(2)).sum();
        let total = pairs.len() as f64;
        for k in 0..pairs.len() - 1 {
            let c = pairs[k].1 as usize;
            let (lc, rc) = (left[c] as f64, right[c] as f64);
            sq_l += 2.0 * lc + 1.0;
            sq_r -= 2.0 * rc - 1.0;
            left[c] += 1;
            right[c] -= 1;
            let (v, next) = (pairs[k].0, pairs[k + 1].0);
            if v == next {
                continue;
            }
            let nl = (k + 1) as f64;
            let score = sq_l / nl + sq_r / (total - nl);
            let mut threshold = v + (next - v) / 2.0;
            if threshold >= next {
                threshold = v;
            }
            let better = match &best {
                None => true,
                Some(b) => {
                    score > b.score
                        || (score == b.score
                            && (f < b.feature || (f == b.feature && threshold < b.threshold)))
                }
            };
            if better {
                best = Some(Candidate {
                    feature: f,
                    threshold,
                    score,
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg_all(n_features: usize) -> ForestConfig {
        ForestConfig {
            n_split_features: Some(n_features),
            ..ForestConfig::default()
        }
    }

    fn bag_error(tree: &Tree, x: &[[f64; 2]], y: &[usize], bag: &[u32]) -> usize {
        bag.iter()
            .filter(|&&i| tree.predict(&x[i as usize]) != y[i as usize])
            .count()
    }

    #[test]
    fn bootstrap_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(bootstrap_bag(1, &mut rng), vec![0]);
        let a = bootstrap_bag(50, &mut ChaCha8Rng::seed_from_u64(4));
        let b = bootstrap_bag(50, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
    }

    #[test]
    fn bootstrap_distinct_fraction() {
        // E[distinct]/n = 1 - (1 - 1/n)^n ~ 0.632; sd ~ 0.005 at n = 10^4.
        for seed in 0..5 {
            let bag = bootstrap_bag(10_000, &mut ChaCha8Rng::seed_from_u64(seed));
            let mut seen = vec![false; 10_000];
            bag.iter().for_each(|&i| seen[i as usize] = true);
            let frac = seen.iter().filter(|&&s| s).count() as f64 / 10_000.0;
            assert!((0.62..=0.645).contains(&frac), "{frac}");
        }
    }

    #[test]
    fn separable_data_gives_stump() {
        let x: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, (i * 7 % 3) as f64]).collect();
        let y: Vec<usize> = (0..10).map(|i| usize::from(i > 5)).collect();
        let bag: Vec<u32> = (0..10).collect();
        let t = grow_tree(&x, &y, 2, &bag, &cfg_all(2), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(t.depth(), 1);
        match &t.nodes()[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 5.5);
            }
            _ => panic!("expected split"),
        }
        assert_eq!(bag_error(&t, &x, &y, &bag), 0);
    }

    #[test]
    fn threshold_five_separation() {
        let x: Vec<[f64; 2]> = vec![[1., 0.], [3., 1.], [4., 0.], [6., 1.], [8., 0.], [9., 1.]];
        let y = vec![0, 0, 0, 1, 1, 1];
        let bag: Vec<u32> = (0..6).collect();
        let t = grow_tree(&x, &y, 2, &bag, &cfg_all(2), &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(t.depth(), 1);
        assert!(matches!(t.nodes()[0], Node::Split { feature: 0, threshold, .. } if threshold == 5.0));
    }

    #[test]
    fn single_sample_bag_is_leaf() {
        let x: Vec<[f64; 2]> = vec![[0., 0.], [1., 1.], [2., 2.]];
        let y = vec![0, 2, 1];
        let t = grow_tree(&x, &y, 3, &[1], &cfg_all(2), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict(&[100., 100.]), 2);
    }

    #[test]
    fn identical_rows_give_single_leaf() {
        let x: Vec<[f64; 2]> = vec![[1., 1.]; 6];
        let y = vec![0, 1, 1, 0, 1, 2];
        let bag: Vec<u32> = (0..6).collect();
        let t = grow_tree(&x, &y, 3, &bag, &cfg_all(2), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(t.nodes().len(), 1);
        assert!(matches!(&t.nodes()[0], Node::Leaf { class: 1, counts } if counts == &vec![2, 3, 1]));
    }

    #[test]
    fn xor_needs_depth_two() {
        // Every single split of the XOR square has zero Gini decrease; the
        // tree must still split and reach zero error at depth 2.
        let x: Vec<[f64; 2]> = vec![[0., 0.], [1., 1.], [0., 1.], [1., 0.]];
        let y = vec![0, 0, 1, 1];
        let bag: Vec<u32> = (0..4).collect();
        let t = grow_tree(&x, &y, 2, &bag, &cfg_all(2), &mut ChaCha8Rng::seed_from_u64(3));
        assert!(t.depth() >= 2);
        assert_eq!(bag_error(&t, &x, &y, &bag), 0);
        // Tie-break: root split on the lowest feature index.
        assert!(matches!(t.nodes()[0], Node::Split { feature: 0, threshold, .. } if threshold == 0.5));
    }

    #[test]
    fn leaves_are_nonempty_and_binary() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<[f64; 2]> = (0..200).map(|_| [rng.random(), rng.random()]).collect();
        let y: Vec<usize> = x.iter().map(|p| usize::from(p[0] + p[1] > 1.0)).collect();
        let bag = bootstrap_bag(200, &mut rng);
        let t = grow_tree(&x, &y, 2, &bag, &ForestConfig::default(), &mut rng);
        for n in t.nodes() {
            if let Node::Leaf { counts, .. } = n {
                assert!(counts.iter().any(|&c| c > 0));
            }
        }
        assert_eq!(bag_error(&t, &x, &y, &bag), 0);
        assert_eq!(t.nodes().len(), 2 * t.n_leaves() - 1);
    }
}
