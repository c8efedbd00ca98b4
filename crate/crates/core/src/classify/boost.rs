use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "cytoarch-boosted-trees";
pub const MODEL_VERSION: u32 = 1;

/// Newton boosting with logistic loss and exact greedy splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub max_depth: usize,
    pub eta: f64,
    pub rounds: usize,
    pub lambda: f64,
    pub min_child_weight: f64,
    /// Recorded for reproducibility; exact greedy training draws no randomness.
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            max_depth: 3,
            eta: 0.2,
            rounds: 100,
            lambda: 1.0,
            min_child_weight: 1.0,
            seed: 0,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("rounds must be >= 1"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::invalid(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if self.max_depth == 0 {
            return Err(Error::invalid("max_depth must be >= 1"));
        }
        // NaN fails these too
        if self.lambda.is_nan() || self.lambda < 0.0 || self.min_child_weight.is_nan() || self.min_child_weight < 0.0 {
            return Err(Error::invalid("lambda and min_child_weight must be >= 0"));
        }
        Ok(())
    }
}

/// Regression tree in flat arrays; node 0 is the root.
///
/// A split sends `x[feature] <= threshold` to `left`. Leaves have
/// `left == -1` and carry their unscaled weight in `value`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tree {
    pub left: Vec<i32>,
    pub right: Vec<i32>,
    pub feature: Vec<u32>,
    pub threshold: Vec<f64>,
    pub value: Vec<f64>,
    /// Loss reduction of each split (0 at leaves).
    pub gain: Vec<f64>,
    /// Hessian sum reaching each node.
    pub cover: Vec<f64>,
}

impl Tree {
    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.left[node] < 0
    }

    fn push_leaf(&mut self, value: f64, cover: f64) -> usize {
        self.left.push(-1);
        self.right.push(-1);
        self.feature.push(0);
        self.threshold.push(0.0);
        self.value.push(value);
        self.gain.push(0.0);
        self.cover.push(cover);
        self.len() - 1
    }

    /// Leaf index reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut n = 0;
        while !self.is_leaf(n) {
            n = if x[self.feature[n] as usize] <= self.threshold[n] {
                self.left[n] as usize
            } else {
                self.right[n] as usize
            };
        }
        n
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.value[self.leaf_index(x)]
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, n: usize) -> usize {
            if t.is_leaf(n) {
                0
            } else {
                1 + go(t, t.left[n] as usize).max(go(t, t.right[n] as usize))
            }
        }
        if self.is_empty() {
            0
        } else {
            go(self, 0)
        }
    }
}

/// A trained binary detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub format: String,
    pub version: u32,
    pub params: BoostParams,
    /// Initial margin: log-odds of the training positive rate.
    pub base_score: f64,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
}

pub fn sigmoid(m: f64) -> f64 {
    1.0 / (1.0 + (-m).exp())
}

impl BoostedModel {
    /// Model with no trees.
    pub fn constant(base_score: f64, n_features: usize, params: BoostParams) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            params,
            base_score,
            n_features,
            feature_names: (0..n_features).map(|i| format!("f{i}")).collect(),
            trees: Vec::new(),
        }
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: names.len(),
            });
        }
        self.feature_names = names;
        Ok(self)
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Pre-sigmoid margin using the first `rounds` trees.
    pub fn margin_upto(&self, x: &[f64], rounds: usize) -> Result<f64> {
        self.check(x)?;
        let mut m = self.base_score;
        for t in self.trees.iter().take(rounds) {
            m += self.params.eta * t.predict(x);
        }
        Ok(m)
    }

    pub fn predict_margin(&self, x: &[f64]) -> Result<f64> {
        self.margin_upto(x, self.trees.len())
    }

    pub fn predict_score(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.predict_margin(x)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(Error::format(
                path,
                format!("expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}", model.format, model.version),
            ));
        }
        if model.feature_names.len() != model.n_features {
            return Err(Error::format(path, "feature manifest length differs from n_features"));
        }
        for t in &model.trees {
            let n = t.len();
            let lens = [t.right.len(), t.feature.len(), t.threshold.len(), t.value.len(), t.gain.len(), t.cover.len()];
            let bad_child = |c: i32| c >= n as i32 || c < -1;
            if lens.iter().any(|&l| l != n)
                || t.left.iter().chain(&t.right).any(|&c| bad_child(c))
                || (0..n).any(|i| !t.is_leaf(i) && t.feature[i] as usize >= model.n_features)
            {
                return Err(Error::format(path, "malformed tree"));
            }
        }
        Ok(model)
    }
}

/// Mean logistic loss at the given margins.
pub fn logistic_loss(margins: &[f64], y: &[bool]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(y)
        .map(|(&m, &yi)| {
            // log(1 + e^{-m}) for positives, log(1 + e^{m}) for negatives
            let z = if yi { -m } else { m };
            if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            }
        })
        .sum();
    total / margins.len() as f64
}

pub fn log_loss(model: &BoostedModel, x: &[Vec<f64>], y: &[bool]) -> Result<f64> {
    let margins = x.iter().map(|r| model.predict_margin(r)).collect::<Result<Vec<_>>>()?;
    Ok(logistic_loss(&margins, y))
}

/// Training loss after 0, 1, …, `trees.len()` rounds.
pub fn loss_curve(model: &BoostedModel, x: &[Vec<f64>], y: &[bool]) -> Result<Vec<f64>> {
    let mut margins = vec![model.base_score; x.len()];
    let mut out = vec![logistic_loss(&margins, y)];
    for t in &model.trees {
        for (m, r) in margins.iter_mut().zip(x) {
            model.check(r)?;
            *m += model.params.eta * t.predict(r);
        }
        out.push(logistic_loss(&margins, y));
    }
    Ok(out)
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Frontier {
    node: usize,
    g: f64,
    h: f64,
}

/// Second-order split score `G² / (H + λ)`.
#[inline]
fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Grows one tree on gradient/hessian statistics, level by level.
///
/// `order[j]` lists rows sorted by feature `j`, ties by row index.
pub fn grow_tree(x: &[Vec<f64>], grad: &[f64], hess: &[f64], order: &[Vec<u32>], params: &BoostParams) -> Tree {
    let n = grad.len();
    let d = order.len();
    let lambda = params.lambda;
    let mut tree = Tree::default();
    let (g0, h0) = (grad.iter().sum::<f64>(), hess.iter().sum::<f64>());
    tree.push_leaf(-g0 / (h0 + lambda), h0);
    // frontier slot of each row, or usize::MAX once its node is final
    let mut slot = vec![0usize; n];
    let mut frontier = vec![Frontier { node: 0, g: g0, h: h0 }];

    for _depth in 0..params.max_depth {
        if frontier.is_empty() {
            break;
        }
        let k = frontier.len();
        let mut best: Vec<Option<Candidate>> = vec![None; k];
        let mut gl = vec![0.0; k];
        let mut hl = vec![0.0; k];
        let mut last = vec![f64::NAN; k];
        for (j, ord) in order.iter().enumerate().take(d) {
            gl.iter_mut().for_each(|v| *v = 0.0);
            hl.iter_mut().for_each(|v| *v = 0.0);
            last.iter_mut().for_each(|v| *v = f64::NAN);
            for &r in ord {
                let r = r as usize;
                let s = slot[r];
                if s == usize::MAX {
                    continue;
                }
                let v = x[r][j];
                if !last[s].is_nan() && v > last[s] {
                    let f = &frontier[s];
                    let (l_g, l_h) = (gl[s], hl[s]);
                    let (r_g, r_h) = (f.g - l_g, f.h - l_h);
                    if l_h >= params.min_child_weight && r_h >= params.min_child_weight {
                        let gain = 0.5 * (score(l_g, l_h, lambda) + score(r_g, r_h, lambda) - score(f.g, f.h, lambda));
                        if best[s].is_none_or(|b| gain > b.gain) {
                            best[s] = Some(Candidate {
                                gain,
                                feature: j,
                                threshold: last[s],
                            });
                        }
                    }
                }
                gl[s] += grad[r];
                hl[s] += hess[r];
                last[s] = v;
            }
        }

        // Turn accepted leaves into splits; children become the next frontier.
        let mut next = Vec::new();
        let mut remap = vec![usize::MAX; k];
        let mut child_stats = Vec::new();
        for (s, f) in frontier.iter().enumerate() {
            let Some(c) = best[s].filter(|c| c.gain > 0.0) else {
                continue;
            };
            let l = tree.push_leaf(0.0, 0.0);
            let r = tree.push_leaf(0.0, 0.0);
            let node = f.node;
            tree.left[node] = l as i32;
            tree.right[node] = r as i32;
            tree.feature[node] = c.feature as u32;
            tree.threshold[node] = c.threshold;
            tree.value[node] = 0.0;
            tree.gain[node] = c.gain;
            remap[s] = next.len();
            next.push(Frontier { node: l, g: 0.0, h: 0.0 });
            next.push(Frontier { node: r, g: 0.0, h: 0.0 });
            child_stats.push(c);
        }
        for r in 0..n {
            let s = slot[r];
            if s == usize::MAX {
                continue;
            }
            if remap[s] == usize::MAX {
                slot[r] = usize::MAX;
                continue;
            }
            let node = frontier[s].node;
            let go_left = x[r][tree.feature[node] as usize] <= tree.threshold[node];
            let ns = remap[s] + usize::from(!go_left);
            slot[r] = ns;
            next[ns].g += grad[r];
            next[ns].h += hess[r];
        }
        for f in &next {
            tree.value[f.node] = -f.g / (f.h + lambda);
            tree.cover[f.node] = f.h;
        }
        frontier = next;
    }
    tree
}

/// Per-feature row orders, ascending by value then row index.
pub fn presort(x: &[Vec<f64>], n_features: usize) -> Vec<Vec<u32>> {
    (0..n_features)
        .map(|j| {
            let mut idx: Vec<u32> = (0..x.len() as u32).collect();
            idx.sort_by(|&a, &b| x[a as usize][j].total_cmp(&x[b as usize][j]).then(a.cmp(&b)));
            idx
        })
        .collect()
}

/// Trains a binary detector on feature rows `x` and labels `y`.
pub fn train_detector(x: &[Vec<f64>], y: &[bool], params: &BoostParams) -> Result<BoostedModel> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::EmptyInput("training needs at least 2 rows".into()));
    }
    let d = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: r.len(),
        });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("training features must be finite"));
    }
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    let rate = pos as f64 / y.len() as f64;
    let mut model = BoostedModel::constant((rate / (1.0 - rate)).ln(), d, *params);

    let order = presort(x, d);
    let mut margins = vec![model.base_score; x.len()];
    let mut grad = vec![0.0; x.len()];
    let mut hess = vec![0.0; x.len()];
    for _ in 0..params.rounds {
        for i in 0..x.len() {
            let p = sigmoid(margins[i]);
            grad[i] = p - if y[i] { 1.0 } else { 0.0 };
            hess[i] = p * (1.0 - p);
        }
        let tree = grow_tree(x, &grad, &hess, &order, params);
        for (m, r) in margins.iter_mut().zip(x) {
            *m += params.eta * tree.predict(r);
        }
        model.trees.push(tree);
    }
    Ok(model)
}
