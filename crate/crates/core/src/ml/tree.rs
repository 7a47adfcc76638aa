//! CART regression trees with squared-error splits.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; `0` or anything `>= p` means all.
    pub mtry: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

struct Pending {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
}

impl RegressionTree {
    /// Grows a tree on `rows` (duplicates allowed, as in bootstrap samples).
    pub fn grow<R: Rng>(x: &DMatrix<f64>, y: &[f64], mut rows: Vec<usize>, params: &TreeParams, rng: &mut R) -> Self {
        let p = x.ncols();
        let mtry = if params.mtry == 0 || params.mtry >= p { p } else { params.mtry };
        let min_leaf = params.min_leaf.max(1);
        let mut nodes = vec![Node::Leaf(0.0)];
        let mut stack = vec![Pending {
            node: 0,
            start: 0,
            end: rows.len(),
            depth: 0,
        }];
        let mut buf: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
        while let Some(job) = stack.pop() {
            let slice = &mut rows[job.start..job.end];
            let n = slice.len();
            let (sum, sum_sq) = slice.iter().fold((0.0, 0.0), |(s, q), &r| (s + y[r], q + y[r] * y[r]));
            let mean = sum / n as f64;
            nodes[job.node] = Node::Leaf(mean);
            let sse = sum_sq - sum * mean;
            let depth_ok = params.max_depth.is_none_or(|d| job.depth < d);
            if !depth_ok || n < 2 * min_leaf || sse <= 1e-12 * sum_sq.max(f64::MIN_POSITIVE) {
                continue;
            }

            let base = sum * sum / n as f64;
            let mut best: Option<(f64, usize, f64)> = None;
            let features: Vec<usize> = if mtry == p {
                (0..p).collect()
            } else {
                index::sample(rng, p, mtry).into_vec()
            };
            for f in features {
                buf.clear();
                buf.extend(slice.iter().map(|&r| (x[(r, f)], y[r])));
                buf.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut left = 0.0;
                for i in 1..n {
                    left += buf[i - 1].1;
                    if i < min_leaf || n - i < min_leaf || buf[i - 1].0 == buf[i].0 {
                        continue;
                    }
                    let right = sum - left;
                    let score = left * left / i as f64 + right * right / (n - i) as f64;
                    if best.is_none_or(|(s, _, _)| score > s) {
                        let (a, b) = (buf[i - 1].0, buf[i].0);
                        let mut t = a + (b - a) / 2.0;
                        if t >= b {
                            t = a;
                        }
                        best = Some((score, f, t));
                    }
                }
            }
            let Some((score, feature, threshold)) = best else { continue };
            if score <= base + 1e-12 * base.abs() {
                continue;
            }
            // Stable partition keeps the row order deterministic.
            let (lo, hi): (Vec<usize>, Vec<usize>) = slice.iter().partition(|&&r| x[(r, feature)] <= threshold);
            let mid = lo.len();
            slice[..mid].copy_from_slice(&lo);
            slice[mid..].copy_from_slice(&hi);
            let left = nodes.len();
            nodes.push(Node::Leaf(0.0));
            nodes.push(Node::Leaf(0.0));
            nodes[job.node] = Node::Split {
                feature,
                threshold,
                left,
                right: left + 1,
            };
            stack.push(Pending {
                node: left + 1,
                start: job.start + mid,
                end: job.end,
                depth: job.depth + 1,
            });
            stack.push(Pending {
                node: left,
                start: job.start,
                end: job.start + mid,
                depth: job.depth + 1,
            });
        }
        Self { nodes }
    }

    pub fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[(row, feature)] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}
