use rayon::prelude::*;
use serde::Serialize;

use super::grid::{Grid3, Histogram};
use super::ulam::{SparseStochastic, UlamOperator};
use crate::error::MeasureError;
use crate::model::Box3;

pub const STATIONARY_TOLERANCE: f64 = 1e-10;
pub const ITERATION_BUDGET: usize = 100_000;

/// Strongly connected components of the positive-transition graph, each
/// sorted ascending, in Tarjan completion order.
pub fn tarjan_scc(p: &SparseStochastic) -> Vec<Vec<usize>> {
    const UNSEEN: usize = usize::MAX;
    let n = p.n();
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut call: Vec<(usize, usize)> = Vec::new();
    let mut next = 0;
    let mut out = Vec::new();
    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        call.push((root, p.row_ptr[root]));
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut edge)) = call.last_mut() {
            if *edge < p.row_ptr[v + 1] {
                let w = p.cols[*edge] as usize;
                *edge += 1;
                if p.probs[*edge - 1] <= 0.0 {
                    continue;
                }
                if index[w] == UNSEEN {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, p.row_ptr[w]));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(u, _)) = call.last() {
                    low[u] = low[u].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    out.push(comp);
                }
            }
        }
    }
    out
}

/// Recurrent communicating classes: components with no positive transition
/// leaving them. `exclude` drops one state (the absorbing `Outside`).
pub fn closed_classes(p: &SparseStochastic, exclude: Option<usize>) -> Vec<Vec<usize>> {
    let sccs = tarjan_scc(p);
    let mut comp_of = vec![0usize; p.n()];
    for (c, members) in sccs.iter().enumerate() {
        for &v in members {
            comp_of[v] = c;
        }
    }
    let mut closed: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, members)| {
            members.iter().all(|&v| p.row(v).all(|(w, pr)| pr <= 0.0 || comp_of[w] == *c))
        })
        .map(|(_, m)| m.clone())
        .filter(|m| exclude.is_none_or(|x| !m.contains(&x)))
        .collect();
    closed.sort_by_key(|m| m[0]);
    closed
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stationary {
    pub density: Vec<f64>,
    /// `‖πP − π‖₁` for the undamped chain.
    pub residual: f64,
    pub iterations: usize,
}

/// Stationary law of the chain restricted to a closed class, by lazy power
/// iteration `π ← ½(π + πP)` from the uniform vector.
pub fn stationary_on_class(p: &SparseStochastic, class: &[usize]) -> Result<Stationary, MeasureError> {
    let m = class.len();
    let local = |g: usize| class.binary_search(&g).expect("class is not closed");
    let mut rows = Vec::with_capacity(m);
    for &g in class {
        rows.push(p.row(g).filter(|e| e.1 > 0.0).map(|(j, pr)| (local(j) as u32, pr)).collect());
    }
    let sub = SparseStochastic::from_rows(rows);
    let mut pi = vec![1.0 / m as f64; m];
    let mut y = vec![0.0; m];
    let mut residual = f64::INFINITY;
    for it in 0..ITERATION_BUDGET {
        sub.left_mul(&pi, &mut y);
        residual = pi.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
        if residual <= STATIONARY_TOLERANCE {
            let s: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|v| *v /= s);
            sub.left_mul(&pi, &mut y);
            residual = pi.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
            return Ok(Stationary { density: pi, residual, iterations: it });
        }
        for (a, b) in pi.iter_mut().zip(&y) {
            *a = 0.5 * (*a + b);
        }
    }
    Err(MeasureError::NotConverged { iterations: ITERATION_BUDGET, residual })
}

/// One ergodic component of the discretized operator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Component {
    /// Sorted state indices of the class.
    pub cells: Vec<usize>,
    /// Stationary mass on each of `cells`.
    pub density: Vec<f64>,
    pub intersects_q: bool,
    pub residual: f64,
    pub iterations: usize,
}

impl Component {
    pub fn from_parts(cells: Vec<usize>, density: Vec<f64>) -> Self {
        Component { cells, density, intersects_q: false, residual: 0.0, iterations: 0 }
    }

    /// Mass this component puts on a sorted cell list.
    pub fn mass_on(&self, cells: &[usize]) -> f64 {
        self.cells
            .iter()
            .zip(&self.density)
            .filter(|(c, _)| cells.binary_search(c).is_ok())
            .map(|(_, m)| m)
            .sum()
    }

    pub fn to_histogram(&self, grid: &Grid3) -> Histogram {
        Histogram::from_sparse(grid.clone(), &self.cells, &self.density)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhysicalMeasureSet {
    /// All closed classes; only those with `intersects_q` are counted.
    pub components: Vec<Component>,
    pub count_l: usize,
}

impl PhysicalMeasureSet {
    pub fn physical(&self) -> impl Iterator<Item = &Component> {
        self.components.iter().filter(|c| c.intersects_q)
    }

    /// Pairwise overlap matrix over the counted components.
    pub fn overlap_matrix(&self) -> Vec<Vec<f64>> {
        let phys: Vec<&Component> = self.physical().collect();
        phys.iter().map(|a| phys.iter().map(|b| mutual_singularity(a, b)).collect()).collect()
    }
}

/// Decomposes a stochastic matrix into closed classes and their stationary
/// laws. `in_q(state)` decides whether a state lies in `Q`.
pub fn stationary_components_with<F>(
    p: &SparseStochastic,
    exclude: Option<usize>,
    in_q: F,
) -> Result<PhysicalMeasureSet, MeasureError>
where
    F: Fn(usize) -> bool + Sync,
{
    let classes = closed_classes(p, exclude);
    let components = classes
        .into_par_iter()
        .map(|cells| {
            let s = stationary_on_class(p, &cells)?;
            let intersects_q = cells.iter().zip(&s.density).any(|(c, m)| *m > 0.0 && in_q(*c));
            Ok(Component { cells, density: s.density, intersects_q, residual: s.residual, iterations: s.iterations })
        })
        .collect::<Result<Vec<_>, MeasureError>>()?;
    let count_l = components.iter().filter(|c| c.intersects_q).count();
    Ok(PhysicalMeasureSet { components, count_l })
}

/// A class intersects `Q` when one of its cells with positive mass has its
/// centre in `q_box`.
pub fn stationary_components(op: &UlamOperator, q_box: &Box3) -> Result<PhysicalMeasureSet, MeasureError> {
    let g = &op.grid;
    stationary_components_with(&op.transitions, Some(g.outside()), |c| q_box.contains(&g.center(c)))
}

/// `½ (μ₁(supp μ₂) + μ₂(supp μ₁))`.
pub fn mutual_singularity(a: &Component, b: &Component) -> f64 {
    0.5 * (a.mass_on(&b.cells) + b.mass_on(&a.cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use petgraph::graph::DiGraph;
    use proptest::prelude::*;

    fn dense(rows: &[&[f64]]) -> SparseStochastic {
        SparseStochastic::from_dense(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn swap_chain() {
        let p = dense(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let s = stationary_components_with(&p, None, |_| true).unwrap();
        assert_eq!(s.count_l, 1);
        assert_eq!(s.components[0].density, vec![0.5, 0.5]);
        assert_eq!(s.components[0].residual, 0.0);
    }

    #[test]
    fn identity_chain() {
        let p = dense(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let s = stationary_components_with(&p, None, |_| true).unwrap();
        assert_eq!(s.count_l, 3);
        for (i, c) in s.components.iter().enumerate() {
            assert_eq!(c.cells, vec![i]);
            assert_eq!(c.density, vec![1.0]);
        }
        assert_eq!(mutual_singularity(&s.components[0], &s.components[1]), 0.0);
        assert_eq!(mutual_singularity(&s.components[0], &s.components[0]), 1.0);
    }

    #[test]
    fn transient_and_absorbing_states_are_dropped() {
        // 0 -> {1,2} transient; {1,2} closed; 3 absorbing "outside".
        let p = dense(&[
            &[0.0, 0.5, 0.0, 0.5],
            &[0.0, 0.2, 0.8, 0.0],
            &[0.0, 0.6, 0.4, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
        ]);
        let s = stationary_components_with(&p, Some(3), |c| c == 2).unwrap();
        assert_eq!(s.components.len(), 1);
        assert_eq!(s.components[0].cells, vec![1, 2]);
        let d = &s.components[0].density;
        assert!((d[0] - 0.6 / 1.4).abs() < 1e-9 && (d[1] - 0.8 / 1.4).abs() < 1e-9);
        assert!(s.components[0].residual <= STATIONARY_TOLERANCE);
    }

    #[test]
    fn leaky_class_is_not_closed() {
        let p = dense(&[&[0.5, 0.5], &[0.0, 1.0]]);
        assert_eq!(closed_classes(&p, Some(1)), Vec::<Vec<usize>>::new());
    }

    fn random_chain(n: usize, edges: &[(usize, usize)]) -> SparseStochastic {
        let mut rows = vec![Vec::new(); n];
        for &(a, b) in edges {
            rows[a % n].push(b % n);
        }
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                r.push(i);
                r.sort_unstable();
                r.dedup();
                let p = 1.0 / r.len() as f64;
                r.into_iter().map(|j| (j as u32, p)).collect()
            })
            .collect();
        SparseStochastic::from_rows(rows)
    }

    proptest! {
        #[test]
        fn scc_agrees_with_petgraph(n in 1usize..40, edges in proptest::collection::vec((0usize..40, 0usize..40), 0..120)) {
            let p = random_chain(n, &edges);
            let mut ours = tarjan_scc(&p);
            ours.sort();
            let mut g = DiGraph::<(), ()>::new();
            let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
            for i in 0..n {
                for (j, _) in p.row(i) {
                    g.add_edge(nodes[i], nodes[j], ());
                }
            }
            let mut theirs: Vec<Vec<usize>> = petgraph::algo::tarjan_scc(&g)
                .into_iter()
                .map(|c| { let mut v: Vec<usize> = c.into_iter().map(|x| x.index()).collect(); v.sort_unstable(); v })
                .collect();
            theirs.sort();
            prop_assert_eq!(ours, theirs);
        }

        #[test]
        fn components_are_stationary_and_disjoint(n in 1usize..30, edges in proptest::collection::vec((0usize..30, 0usize..30), 0..80)) {
            let p = random_chain(n, &edges);
            let s = stationary_components_with(&p, None, |_| true).unwrap();
            prop_assert!(!s.components.is_empty());
            for (i, a) in s.components.iter().enumerate() {
                prop_assert!(a.residual <= STATIONARY_TOLERANCE);
                prop_assert!((a.density.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for b in &s.components[i + 1..] {
                    prop_assert_eq!(mutual_singularity(a, b), 0.0);
                }
            }
        }
    }
}
