//! Small random-forest classifier (bagged CART trees, Gini impurity).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features tried per split; `0` means `ceil(sqrt(d))`.
    pub features_per_split: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { trees: 25, max_depth: 12, min_samples_leaf: 3, features_per_split: 8, seed: 0x5eed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: usize, threshold: f32, left: u32, right: u32 },
    Leaf { class: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f32]) -> u8 {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { class } => return *class,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left as usize } else { *right as usize };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub n_features: usize,
    pub n_classes: usize,
    pub trees: Vec<Tree>,
}

impl RandomForest {
    /// Fits a forest. `x` rows must all have `n_features` entries and `y < n_classes`.
    pub fn fit(x: &[Vec<f32>], y: &[u8], n_classes: usize, params: &ForestParams) -> RandomForest {
        assert_eq!(x.len(), y.len());
        assert!(!x.is_empty(), "empty training set");
        let n_features = x[0].len();
        let mtry = if params.features_per_split == 0 {
            (n_features as f64).sqrt().ceil() as usize
        } else {
            params.features_per_split.min(n_features)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let trees = (0..params.trees)
            .map(|_| {
                let sample: Vec<usize> = (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect();
                let mut builder = TreeBuilder { x, y, n_classes, mtry, params, nodes: Vec::new() };
                builder.build(sample, 0, &mut rng);
                Tree { nodes: builder.nodes }
            })
            .collect();
        RandomForest { n_features, n_classes, trees }
    }

    /// Majority vote (ties go to the lower class index) and its vote share.
    pub fn predict(&self, x: &[f32]) -> (u8, f32) {
        let mut votes = [0u32; 16];
        for t in &self.trees {
            votes[t.predict(x) as usize] += 1;
        }
        let (class, count) = votes[..self.n_classes]
            .iter()
            .enumerate()
            .fold((0usize, 0u32), |best, (c, v)| if *v > best.1 { (c, *v) } else { best });
        (class as u8, count as f32 / self.trees.len().max(1) as f32)
    }
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f32>],
    y: &'a [u8],
    n_classes: usize,
    mtry: usize,
    params: &'a ForestParams,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, sample: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf { class: 0 });
        let counts = self.class_counts(&sample);
        let majority = argmax(&counts);
        let pure = counts.iter().filter(|c| **c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || sample.len() < 2 * self.params.min_samples_leaf {
            self.nodes[id as usize] = Node::Leaf { class: majority };
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&sample, &counts, rng) else {
            self.nodes[id as usize] = Node::Leaf { class: majority };
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = sample.into_iter().partition(|&i| self.x[i][feature] <= threshold);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[id as usize] = Node::Split { feature, threshold, left, right };
        id
    }

    fn class_counts(&self, sample: &[usize]) -> Vec<usize> {
        let mut c = vec![0usize; self.n_classes];
        for &i in sample {
            c[self.y[i] as usize] += 1;
        }
        c
    }

    fn best_split(&self, sample: &[usize], counts: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f32)> {
        let n_features = self.x[0].len();
        let mut features: Vec<usize> = (0..n_features).collect();
        features.shuffle(rng);
        let n = sample.len() as f64;
        let parent = gini(counts, n);
        let min_leaf = self.params.min_samples_leaf;
        let mut best: Option<(f64, usize, f32)> = None;
        let mut order = sample.to_vec();
        for &f in features.iter().take(self.mtry) {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = vec![0usize; self.n_classes];
            for k in 0..order.len() - 1 {
                left[self.y[order[k]] as usize] += 1;
                let (v, next) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                let nl = k + 1;
                if v == next || nl < min_leaf || order.len() - nl < min_leaf {
                    continue;
                }
                let mut right = [0usize; 16];
                for (r, (c, l)) in right.iter_mut().zip(counts.iter().zip(&left)) {
                    *r = c - l;
                }
                let nr = n - nl as f64;
                let score = (nl as f64 * gini(&left, nl as f64) + nr * gini(&right[..self.n_classes], nr)) / n;
                if score < parent - 1e-12 && best.is_none_or(|b| score < b.0) {
                    best = Some((score, f, v + (next - v) / 2.0));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

fn gini(counts: &[usize], n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn argmax(counts: &[usize]) -> u8 {
    counts.iter().enumerate().fold((0usize, 0usize), |b, (i, c)| if *c > b.1 { (i, *c) } else { b }).0 as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_data_is_learned() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..200 {
            let v = i as f32 / 200.0;
            x.push(vec![v, 0.5]);
            y.push(if v < 0.3 { 0 } else if v < 0.7 { 1 } else { 2 });
        }
        let forest = RandomForest::fit(&x, &y, 3, &ForestParams { trees: 9, ..Default::default() });
        assert_eq!(forest.predict(&[0.1, 0.5]).0, 0);
        assert_eq!(forest.predict(&[0.5, 0.5]).0, 1);
        assert_eq!(forest.predict(&[0.9, 0.5]).0, 2);
    }

    #[test]
    fn fit_is_deterministic_per_seed() {
        let x: Vec<Vec<f32>> = (0..100).map(|i| vec![(i % 7) as f32, (i % 3) as f32]).collect();
        let y: Vec<u8> = (0..100).map(|i| ((i % 7) > 3) as u8).collect();
        let p = ForestParams { trees: 5, ..Default::default() };
        assert_eq!(RandomForest::fit(&x, &y, 2, &p), RandomForest::fit(&x, &y, 2, &p));
    }
}
