//! Latent DAGs and their layer decomposition.
//!
//! A node's layer is the length of the longest directed path from it to a
//! leaf, so leaves are layer 0 and every edge `u -> v` has
//! `layer(u) >= layer(v) + 1`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    n: usize,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layers {
    pub layer: Vec<usize>,
    /// Largest layer index, `r` in the layer notation.
    pub max: usize,
}

impl Layers {
    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.layer.len()).filter(|&i| self.layer[i] == k).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relatives {
    pub children: BTreeSet<usize>,
    pub ancestors: BTreeSet<usize>,
    pub descendants: BTreeSet<usize>,
}

impl Dag {
    /// Builds a DAG from per-node parent lists. Parent lists are sorted and
    /// deduplicated.
    pub fn new(parents: Vec<Vec<usize>>) -> Result<Self> {
        let n = parents.len();
        let mut parents = parents;
        for (i, ps) in parents.iter_mut().enumerate() {
            ps.sort_unstable();
            ps.dedup();
            for &p in ps.iter() {
                if p >= n {
                    return Err(Error::IndexOutOfRange { index: p, n });
                }
                if p == i {
                    return Err(Error::Cycle);
                }
            }
        }
        let mut children = vec![Vec::new(); n];
        for (i, ps) in parents.iter().enumerate() {
            for &p in ps {
                children[p].push(i);
            }
        }
        let order = topological_order(&parents, &children)?;
        Ok(Self { n, parents, children, order })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut parents = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n {
                return Err(Error::IndexOutOfRange { index: u, n });
            }
            if v >= n {
                return Err(Error::IndexOutOfRange { index: v, n });
            }
            parents[v].push(u);
        }
        Self::new(parents)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e = Vec::new();
        for (v, ps) in self.parents.iter().enumerate() {
            for &u in ps {
                e.push((u, v));
            }
        }
        e.sort_unstable();
        e
    }

    /// A topological order (parents before children); smallest index first
    /// among ready nodes.
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.children[i].is_empty()).collect()
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.parents[i].is_empty()).collect()
    }

    /// Longest-path layers by dynamic programming in reverse topological order.
    pub fn layers(&self) -> Layers {
        let mut layer = vec![0usize; self.n];
        for &i in self.order.iter().rev() {
            layer[i] = self.children[i]
                .iter()
                .map(|&c| layer[c] + 1)
                .max()
                .unwrap_or(0);
        }
        let max = layer.iter().copied().max().unwrap_or(0);
        Layers { layer, max }
    }

    pub fn relatives(&self, i: usize) -> Result<Relatives> {
        if i >= self.n {
            return Err(Error::IndexOutOfRange { index: i, n: self.n });
        }
        Ok(Relatives {
            children: self.children[i].iter().copied().collect(),
            ancestors: self.reach(i, &self.parents),
            descendants: self.reach(i, &self.children),
        })
    }

    fn reach(&self, start: usize, adj: &[Vec<usize>]) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = adj[start].clone();
        while let Some(v) = stack.pop() {
            if seen.insert(v) {
                stack.extend(adj[v].iter().copied());
            }
        }
        seen
    }

    /// True when every parent of a member is also a member.
    pub fn is_ancestrally_closed(&self, nodes: &[usize]) -> bool {
        let set: BTreeSet<usize> = nodes.iter().copied().collect();
        nodes
            .iter()
            .all(|&i| i < self.n && self.parents[i].iter().all(|p| set.contains(p)))
    }

    /// Ancestrally closed subset of size `k` maximizing the sum of `weight`
    /// over members, ties broken toward the lexicographically smallest set.
    /// Exhaustive branch and bound over a topological order.
    pub fn best_closed_subset(&self, k: usize, weight: &[f64]) -> Option<Vec<usize>> {
        if k > self.n || weight.len() != self.n {
            return None;
        }
        let order = self.topological_order().to_vec();
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut inside = vec![false; self.n];
        let mut chosen = Vec::with_capacity(k);
        self.closed_search(&order, 0, k, weight, &mut inside, &mut chosen, 0.0, &mut best);
        best.map(|(_, mut s)| {
            s.sort_unstable();
            s
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn closed_search(
        &self,
        order: &[usize],
        pos: usize,
        k: usize,
        weight: &[f64],
        inside: &mut [bool],
        chosen: &mut Vec<usize>,
        acc: f64,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let need = k - chosen.len();
        if need == 0 {
            let better = match best {
                None => true,
                Some((b, s)) => {
                    acc > *b || (acc == *b && {
                        let mut c = chosen.clone();
                        let mut o = s.clone();
                        c.sort_unstable();
                        o.sort_unstable();
                        c < o
                    })
                }
            };
            if better {
                *best = Some((acc, chosen.clone()));
            }
            return;
        }
        if order.len() - pos < need {
            return;
        }
        if let Some((b, _)) = best {
            let mut rest: Vec<f64> = order[pos..].iter().map(|&v| weight[v]).collect();
            rest.sort_by(|a, b| b.total_cmp(a));
            if acc + rest[..need].iter().sum::<f64>() < *b {
                return;
            }
        }
        let v = order[pos];
        if self.parents[v].iter().all(|&p| inside[p]) {
            inside[v] = true;
            chosen.push(v);
            self.closed_search(order, pos + 1, k, weight, inside, chosen, acc + weight[v], best);
            chosen.pop();
            inside[v] = false;
        }
        self.closed_search(order, pos + 1, k, weight, inside, chosen, acc, best);
    }

    /// Induced subgraph on `nodes` (in the given order, which becomes the new
    /// labelling).
    pub fn induced(&self, nodes: &[usize]) -> Result<Dag> {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &v) in nodes.iter().enumerate() {
            if v >= self.n {
                return Err(Error::IndexOutOfRange { index: v, n: self.n });
            }
            pos[v] = k;
        }
        let parents = nodes
            .iter()
            .map(|&v| {
                self.parents[v]
                    .iter()
                    .filter(|&&p| pos[p] != usize::MAX)
                    .map(|&p| pos[p])
                    .collect()
            })
            .collect();
        Dag::new(parents)
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Dag> {
        if perm.len() != self.n {
            return Err(Error::Dimension("permutation length".into()));
        }
        let mut parents = vec![Vec::new(); self.n];
        for (i, ps) in self.parents.iter().enumerate() {
            parents[perm[i]] = ps.iter().map(|&p| perm[p]).collect();
        }
        Dag::new(parents)
    }

    /// Number of edges on the longest directed path.
    pub fn longest_path(&self) -> usize {
        self.layers().max
    }

    /// Z1 -> Z2 -> ... -> Zn.
    pub fn line(n: usize) -> Dag {
        let parents = (0..n).map(|i| if i == 0 { vec![] } else { vec![i - 1] }).collect();
        Dag::new(parents).expect("a path is acyclic")
    }

    /// Z1 -> Z2 -> Z3 and Z2 -> Z4.
    pub fn y_structure() -> Dag {
        Dag::new(vec![vec![], vec![0], vec![1], vec![1]]).expect("acyclic")
    }

    pub fn edgeless(n: usize) -> Dag {
        Dag::new(vec![Vec::new(); n]).expect("acyclic")
    }

    /// Random DAG: a random node order, each forward pair joined with
    /// probability `p`, then edges dropped until the longest path is at most
    /// `max_depth`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize, p: f64, max_depth: usize) -> Dag {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut parents = vec![Vec::new(); n];
        for a in 0..n {
            for b in (a + 1)..n {
                if rng.random::<f64>() < p {
                    parents[order[b]].push(order[a]);
                }
            }
        }
        loop {
            let dag = Dag::new(parents.clone()).expect("edges follow a total order");
            if dag.longest_path() <= max_depth {
                return dag;
            }
            // Drop one parent edge of a node with the deepest ancestry.
            let depth = dag.depths();
            let deepest = (0..n).max_by_key(|&i| (depth[i], i)).expect("n > 0");
            let drop = *parents[deepest]
                .iter()
                .max_by_key(|&&q| (depth[q], q))
                .expect("deep node has a parent");
            parents[deepest].retain(|&q| q != drop);
        }
    }

    /// Longest path from any root to each node.
    fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0usize; self.n];
        for &i in &self.order {
            depth[i] = self.parents[i].iter().map(|&p| depth[p] + 1).max().unwrap_or(0);
        }
        depth
    }
}

fn topological_order(parents: &[Vec<usize>], children: &[Vec<usize>]) -> Result<Vec<usize>> {
    let n = parents.len();
    let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&v) = ready.iter().next() {
        ready.remove(&v);
        order.push(v);
        for &c in &children[v] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != n {
        return Err(Error::Cycle);
    }
    Ok(order)
}
