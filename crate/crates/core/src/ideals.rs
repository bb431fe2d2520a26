//! Closed invariant ideals through the support digraph.
//!
//! For a positive operator on a space with an unconditional basis, the
//! closed invariant ideals are coordinate subspaces, and `T` has none besides
//! `{0}` and the whole space iff for every `i != j` some power satisfies
//! `<e_j*, T^n e_i> > 0`. With nonnegative entries that is exactly `n`-step
//! reachability `i -> j` in the graph with an arc `l -> k` per positive
//! entry `(k, l)`. Everything here is a statement about the truncation.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::operator::TruncatedPositiveOperator;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportDigraph {
    pub dim: usize,
    /// `(l, k)` pairs, meaning `T e_l` has a positive `k`-th coordinate.
    pub arcs: Vec<(usize, usize)>,
    #[serde(skip)]
    succ: Vec<Vec<usize>>,
}

impl SupportDigraph {
    pub fn from_arcs(dim: usize, arcs: Vec<(usize, usize)>) -> Self {
        let mut succ = vec![Vec::new(); dim];
        for &(l, k) in &arcs {
            succ[l].push(k);
        }
        SupportDigraph { dim, arcs, succ }
    }

    pub fn successors(&self, v: usize) -> &[usize] {
        &self.succ[v]
    }

    pub fn has_arc(&self, from: usize, to: usize) -> bool {
        self.succ[from].contains(&to)
    }

    /// Shortest path length (>= 1) from `source` to every vertex, `None` when
    /// unreachable. `source` itself gets the length of its shortest cycle.
    pub fn path_lengths_from(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.dim];
        let mut queue = VecDeque::new();
        for &k in &self.succ[source] {
            if dist[k].is_none() {
                dist[k] = Some(1);
                queue.push_back(k);
            }
        }
        while let Some(v) = queue.pop_front() {
            let d = dist[v].unwrap();
            for &k in &self.succ[v] {
                if dist[k].is_none() {
                    dist[k] = Some(d + 1);
                    queue.push_back(k);
                }
            }
        }
        dist
    }

    /// Strongly connected components (Tarjan, iterative). Components come
    /// out in reverse topological order.
    pub fn strongly_connected_components(&self) -> Vec<Vec<usize>> {
        let n = self.dim;
        let mut index = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut on_stack = vec![false; n];
        let mut stack = Vec::new();
        let mut comps = Vec::new();
        let mut counter = 0;
        for root in 0..n {
            if index[root] != usize::MAX {
                continue;
            }
            // (vertex, next successor position)
            let mut call: Vec<(usize, usize)> = vec![(root, 0)];
            index[root] = counter;
            low[root] = counter;
            counter += 1;
            stack.push(root);
            on_stack[root] = true;
            while let Some(&mut (v, ref mut pos)) = call.last_mut() {
                if *pos < self.succ[v].len() {
                    let w = self.succ[v][*pos];
                    *pos += 1;
                    if index[w] == usize::MAX {
                        index[w] = counter;
                        low[w] = counter;
                        counter += 1;
                        stack.push(w);
                        on_stack[w] = true;
                        call.push((w, 0));
                    } else if on_stack[w] {
                        low[v] = low[v].min(index[w]);
                    }
                } else {
                    call.pop();
                    if let Some(&(parent, _)) = call.last() {
                        low[parent] = low[parent].min(low[v]);
                    }
                    if low[v] == index[v] {
                        let mut comp = Vec::new();
                        loop {
                            let w = stack.pop().unwrap();
                            on_stack[w] = false;
                            comp.push(w);
                            if w == v {
                                break;
                            }
                        }
                        comp.sort_unstable();
                        comps.push(comp);
                    }
                }
            }
        }
        comps
    }

    /// Graphviz rendering; vertices in `highlight` are filled.
    pub fn to_dot(&self, highlight: Option<&BTreeSet<usize>>) -> String {
        let mut s = String::from("digraph support {\n");
        for v in 0..self.dim {
            let filled = highlight.is_some_and(|h| h.contains(&v));
            if filled {
                let _ = writeln!(s, "  e{v} [style=filled, fillcolor=lightblue];");
            } else {
                let _ = writeln!(s, "  e{v};");
            }
        }
        for &(l, k) in &self.arcs {
            let _ = writeln!(s, "  e{l} -> e{k};");
        }
        s.push_str("}\n");
        s
    }
}

/// Arc `l -> k` iff `<e_k*, T e_l> > tol_abs`.
pub fn support_digraph(t: &TruncatedPositiveOperator) -> SupportDigraph {
    let n = t.dim();
    let tol = t.space().tol_abs;
    let mut arcs = Vec::new();
    for l in 0..n {
        for k in 0..n {
            if t.entry(k, l) > tol {
                arcs.push((l, k));
            }
        }
    }
    SupportDigraph::from_arcs(n, arcs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdealReport {
    /// Dimension of the truncation the verdict refers to.
    pub truncation_dim: usize,
    pub irreducible: bool,
    pub failing_pair: Option<(usize, usize)>,
    /// `(i, j, n)`: smallest `n >= 1` with `<e_j*, T^n e_i> > 0`, for `i != j`.
    pub witness_powers: Vec<(usize, usize, usize)>,
    /// Coordinates spanning the invariant ideal generated by `e_i` of the failing pair.
    pub invariant_ideal_support: Option<BTreeSet<usize>>,
}

impl IdealReport {
    pub fn witness(&self, i: usize, j: usize) -> Option<usize> {
        self.witness_powers
            .iter()
            .find(|&&(a, b, _)| a == i && b == j)
            .map(|&(_, _, n)| n)
    }
}

pub fn rt_criterion(t: &TruncatedPositiveOperator) -> IdealReport {
    let g = support_digraph(t);
    let n = g.dim;
    let irreducible = g.strongly_connected_components().len() == 1;
    let mut witness_powers = Vec::new();
    let mut failing_pair = None;
    let mut support = None;
    for i in 0..n {
        let dist = g.path_lengths_from(i);
        for (j, d) in dist.iter().enumerate() {
            if i == j {
                continue;
            }
            match d {
                Some(len) => witness_powers.push((i, j, *len)),
                None if failing_pair.is_none() => {
                    failing_pair = Some((i, j));
                    let mut s: BTreeSet<usize> =
                        (0..n).filter(|&k| dist[k].is_some()).collect();
                    s.insert(i);
                    support = Some(s);
                }
                None => {}
            }
        }
    }
    debug_assert_eq!(irreducible, failing_pair.is_none());
    IdealReport {
        truncation_dim: n,
        irreducible,
        failing_pair,
        witness_powers,
        invariant_ideal_support: support,
    }
}

/// True iff the columns `T e_i` have pairwise disjoint supports, a necessary
/// condition for `T` to be a positive isometry.
pub fn has_disjoint_column_supports(t: &TruncatedPositiveOperator) -> bool {
    let n = t.dim();
    let tol = t.space().tol_abs;
    (0..n).all(|k| (0..n).filter(|&l| t.entry(k, l) > tol).count() <= 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::SpaceConfig;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> TruncatedPositiveOperator {
        TruncatedPositiveOperator::new(DMatrix::from_fn(n, n, f), SpaceConfig::default()).unwrap()
    }

    fn cyclic(n: usize) -> TruncatedPositiveOperator {
        // e_l -> e_{l+1 mod n}
        from_fn(n, |k, l| if k == (l + 1) % n { 1.0 } else { 0.0 })
    }

    #[test]
    fn digraph_examples() {
        let id = support_digraph(&TruncatedPositiveOperator::identity(3, SpaceConfig::default()));
        assert_eq!(id.arcs, vec![(0, 0), (1, 1), (2, 2)]);
        let c = support_digraph(&cyclic(3));
        assert!(c.has_arc(0, 1) && c.has_arc(1, 2) && c.has_arc(2, 0));
        assert_eq!(c.arcs.len(), 3);
        let lower = support_digraph(&from_fn(3, |k, l| if k > l { 1.0 } else { 0.0 }));
        assert!(lower.arcs.iter().all(|&(l, k)| k > l));
        assert_eq!(lower.strongly_connected_components().len(), 3);
    }

    #[test]
    fn cyclic_permutation_is_irreducible() {
        let r = rt_criterion(&cyclic(4));
        assert!(r.irreducible);
        assert!(r.failing_pair.is_none());
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(r.witness(i, j), Some((j + 4 - i) % 4));
                }
            }
        }
    }

    #[test]
    fn backward_shift_has_invariant_ideal() {
        // e_l -> e_{l-1}, e_0 -> 0
        let r = rt_criterion(&from_fn(4, |k, l| if k + 1 == l { 1.0 } else { 0.0 }));
        assert!(!r.irreducible);
        assert_eq!(r.failing_pair, Some((0, 1)));
        assert_eq!(r.invariant_ideal_support, Some(BTreeSet::from([0])));
    }

    #[test]
    fn strictly_positive_is_irreducible_in_one_step() {
        let r = rt_criterion(&from_fn(3, |_, _| 0.5));
        assert!(r.irreducible);
        assert!(r.witness_powers.iter().all(|&(_, _, n)| n == 1));
        assert_eq!(r.witness_powers.len(), 6);
    }

    #[test]
    fn dimension_one_is_irreducible() {
        assert!(rt_criterion(&TruncatedPositiveOperator::zeros(1, SpaceConfig::default())).irreducible);
    }

    #[test]
    fn disjoint_supports_examples() {
        assert!(has_disjoint_column_supports(&cyclic(4)));
        let mut m = DMatrix::identity(3, 3);
        m[(1, 0)] = 1.0;
        let t = TruncatedPositiveOperator::new(m, SpaceConfig::default()).unwrap();
        assert!(!has_disjoint_column_supports(&t));
    }

    #[test]
    fn dot_export_highlights_ideal() {
        let t = from_fn(2, |k, l| if k + 1 == l { 1.0 } else { 0.0 });
        let r = rt_criterion(&t);
        let dot = support_digraph(&t).to_dot(r.invariant_ideal_support.as_ref());
        assert!(dot.contains("e0 [style=filled"));
        assert!(dot.contains("e1 -> e0"));
    }

    proptest! {
        #[test]
        fn invariant_ideal_is_proper_and_invariant(pattern in prop::collection::vec(any::<bool>(), 36)) {
            let t = from_fn(6, |k, l| if pattern[k * 6 + l] { 1.0 } else { 0.0 });
            let r = rt_criterion(&t);
            prop_assert_eq!(r.irreducible, r.failing_pair.is_none());
            if let (Some((i, j)), Some(s)) = (r.failing_pair, r.invariant_ideal_support.as_ref()) {
                prop_assert!(s.contains(&i) && !s.contains(&j));
                // T maps span{e_k : k in s} into itself.
                for &l in s {
                    for k in 0..6 {
                        if t.entry(k, l) > 0.0 {
                            prop_assert!(s.contains(&k));
                        }
                    }
                }
            }
        }
    }
}
