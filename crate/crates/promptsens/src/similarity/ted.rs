//! Ordered tree edit distance, Zhang-Shasha keyroot dynamic program.
//!
//! Reference: K. Zhang and D. Shasha, "Simple fast algorithms for the
//! editing distance between trees and related problems", 1989. Nodes are
//! numbered in postorder; the DP runs over keyroots and fills a shared
//! tree-distance table plus a per-keyroot forest-distance table.

use crate::codeparse::SyntaxTree;

/// Costs of the three edit operations. Rename cost applies only when the
/// two labels differ; matching labels map for free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EditCosts {
    pub insert: f64,
    pub delete: f64,
    pub rename: f64,
}

impl Default for EditCosts {
    fn default() -> Self {
        EditCosts {
            insert: 1.0,
            delete: 1.0,
            rename: 1.0,
        }
    }
}

impl EditCosts {
    pub fn unit() -> Self {
        EditCosts::default()
    }
}

// Postorder view of a tree: labels, leftmost-leaf indices, keyroots.
struct PostOrder<'a> {
    labels: Vec<&'a str>,
    // lml[i] = postorder index of the leftmost leaf of the subtree at i.
    lml: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<'a> PostOrder<'a> {
    fn build(tree: &'a SyntaxTree) -> Self {
        let mut labels = Vec::new();
        let mut lml = Vec::new();
        fn walk<'a>(
            node: &'a SyntaxTree,
            labels: &mut Vec<&'a str>,
            lml: &mut Vec<usize>,
        ) -> usize {
            let mut leftmost = None;
            for child in &node.children {
                let child_idx = walk(child, labels, lml);
                leftmost.get_or_insert(lml[child_idx]);
            }
            let own = labels.len();
            labels.push(node.label.as_str());
            lml.push(leftmost.unwrap_or(own));
            own
        }
        walk(tree, &mut labels, &mut lml);
        // Keyroots: nodes whose leftmost leaf is not shared with a higher
        // (later-postorder) node; equivalently the root and every node with
        // a left sibling.
        let n = labels.len();
        let mut keyroots = Vec::new();
        for i in 0..n {
            let is_keyroot = (i + 1..n).all(|j| lml[j] != lml[i]);
            if is_keyroot {
                keyroots.push(i);
            }
        }
        PostOrder {
            labels,
            lml,
            keyroots,
        }
    }
}

/// Minimum total cost of transforming `t1` into `t2` with node insert,
/// delete, and rename on ordered labeled trees.
pub fn tree_edit_distance(t1: &SyntaxTree, t2: &SyntaxTree, costs: &EditCosts) -> f64 {
    let a = PostOrder::build(t1);
    let b = PostOrder::build(t2);
    let (n, m) = (a.labels.len(), b.labels.len());
    // Flat n*m tree-distance table plus one forest-distance scratch buffer
    // shared across keyroot pairs.
    let mut treedist = vec![0.0f64; n * m];
    let mut fd = vec![0.0f64; (n + 1) * (m + 1)];

    for &i in &a.keyroots {
        for &j in &b.keyroots {
            forest_dist(&a, &b, i, j, costs, &mut treedist, &mut fd, m);
        }
    }
    treedist[(n - 1) * m + (m - 1)]
}

#[allow(clippy::too_many_arguments)]
fn forest_dist(
    a: &PostOrder,
    b: &PostOrder,
    i: usize,
    j: usize,
    costs: &EditCosts,
    treedist: &mut [f64],
    fd: &mut [f64],
    tree_cols: usize,
) {
    let li = a.lml[i];
    let lj = b.lml[j];
    let rows = i - li + 2;
    let cols = j - lj + 2;

    fd[0] = 0.0;
    for x in 1..rows {
        fd[x * cols] = fd[(x - 1) * cols] + costs.delete;
    }
    for y in 1..cols {
        fd[y] = fd[y - 1] + costs.insert;
    }
    for x in 1..rows {
        let node_a = li + x - 1;
        let a_is_tree = a.lml[node_a] == li;
        for y in 1..cols {
            let node_b = lj + y - 1;
            let del = fd[(x - 1) * cols + y] + costs.delete;
            let ins = fd[x * cols + y - 1] + costs.insert;
            if a_is_tree && b.lml[node_b] == lj {
                // Both prefixes are whole trees rooted at node_a/node_b.
                let rename = if a.labels[node_a] == b.labels[node_b] {
                    0.0
                } else {
                    costs.rename
                };
                let sub = fd[(x - 1) * cols + y - 1] + rename;
                let best = del.min(ins).min(sub);
                fd[x * cols + y] = best;
                treedist[node_a * tree_cols + node_b] = best;
            } else {
                let px = a.lml[node_a] - li;
                let py = b.lml[node_b] - lj;
                let sub = fd[px * cols + py] + treedist[node_a * tree_cols + node_b];
                fd[x * cols + y] = del.min(ins).min(sub);
            }
        }
    }
}
