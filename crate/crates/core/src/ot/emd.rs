//! Exact earth mover's distance via the primal network simplex.
//!
//! The transport problem is laid out as a bipartite min-cost flow: source
//! atoms `0..m` with supply `mu`, target atoms `m..m+n` with demand `nu`,
//! plus an artificial root that anchors the initial spanning tree. The tree is
//! kept strongly feasible (every zero-flow tree arc points towards the root),
//! which rules out cycling on degenerate pivots. Entering arcs come from a
//! block search over the real arcs in index order; within a block the most
//! negative reduced cost wins and ties go to the lowest index. Returned plans
//! are basic (vertex) solutions.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::ot::plan::{DiscreteMeasure, TransportPlan, MARGINAL_TOL};

const UP: i8 = 1;
const DOWN: i8 = -1;
const NONE: usize = usize::MAX;

/// Solve `min <cost, T>` over couplings of `mu` and `nu` exactly.
///
/// The pivot budget is `100 * (|mu| + |nu|)`.
pub fn solve_emd(
    cost: &DenseMatrix,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<TransportPlan> {
    let cap = 100 * (mu.len() + nu.len());
    solve_emd_with_cap(cost, mu, nu, cap).map(|(plan, _)| plan)
}

/// Like [`solve_emd`], also returning the number of pivots taken.
pub fn solve_emd_with_cap(
    cost: &DenseMatrix,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    max_pivots: usize,
) -> Result<(TransportPlan, usize)> {
    if cost.shape() != (mu.len(), nu.len()) {
        return Err(Error::invalid(format!(
            "cost is {}x{} but measures have {} and {} atoms",
            cost.rows(),
            cost.cols(),
            mu.len(),
            nu.len()
        )));
    }
    let total_mu: f64 = mu.weights().iter().sum();
    let total_nu: f64 = nu.weights().iter().sum();
    if (total_mu - total_nu).abs() > MARGINAL_TOL {
        return Err(Error::invalid(format!(
            "unbalanced measures: {total_mu} vs {total_nu}"
        )));
    }
    if let Some(plan) = TransportPlan::singleton_side(mu, nu) {
        return Ok((plan, 0));
    }

    let mut ns = NetworkSimplex::new(cost, mu, nu);
    let pivots = ns.run(max_pivots)?;
    let plan = ns.extract_plan(mu, nu)?;
    Ok((plan, pivots))
}

struct NetworkSimplex {
    m: usize,
    n: usize,
    root: usize,
    real_arcs: usize,
    // arc data; real arcs first (row-major over the cost matrix), then one
    // artificial arc per non-root node
    source: Vec<usize>,
    target: Vec<usize>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    // tree data
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_dir: Vec<i8>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
    pi: Vec<f64>,
    // pricing
    block: usize,
    next_arc: usize,
    tol: f64,
}

impl NetworkSimplex {
    fn new(cost: &DenseMatrix, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Self {
        let (m, n) = cost.shape();
        let nodes = m + n;
        let root = nodes;
        let real_arcs = m * n;
        let all_arcs = real_arcs + nodes;

        // Shifting every cost by a constant leaves the optimal plan unchanged
        // (total mass is fixed) and lets the artificial cost bound stay simple.
        let min_c = cost.as_slice().iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let shifted: Vec<f64> = cost.as_slice().iter().map(|c| c - min_c).collect();
        let max_c = shifted.iter().fold(0.0_f64, |a, &b| a.max(b));
        let art_cost = (max_c + 1.0) * (nodes + 1) as f64;

        let mut source = Vec::with_capacity(all_arcs);
        let mut target = Vec::with_capacity(all_arcs);
        for i in 0..m {
            for j in 0..n {
                source.push(i);
                target.push(m + j);
            }
        }
        let mut arc_cost = shifted;
        arc_cost.reserve(nodes);
        let mut flow = vec![0.0; all_arcs];
        let mut in_tree = vec![false; all_arcs];

        let mut parent = vec![NONE; nodes + 1];
        let mut pred = vec![NONE; nodes + 1];
        let mut pred_dir = vec![0i8; nodes + 1];
        let mut depth = vec![0usize; nodes + 1];
        let mut pi = vec![0.0; nodes + 1];
        let mut children = vec![Vec::new(); nodes + 1];

        for u in 0..nodes {
            let supply = if u < m {
                mu.weights()[u]
            } else {
                -nu.weights()[u - m]
            };
            let e = real_arcs + u;
            parent[u] = root;
            pred[u] = e;
            depth[u] = 1;
            in_tree[e] = true;
            children[root].push(u);
            if supply >= 0.0 {
                source.push(u);
                target.push(root);
                arc_cost.push(0.0);
                flow[e] = supply;
                pred_dir[u] = UP;
                pi[u] = 0.0;
            } else {
                source.push(root);
                target.push(u);
                arc_cost.push(art_cost);
                flow[e] = -supply;
                pred_dir[u] = DOWN;
                pi[u] = art_cost;
            }
        }

        let block = ((real_arcs as f64).sqrt().ceil() as usize).max(10).min(real_arcs);
        Self {
            m,
            n,
            root,
            real_arcs,
            source,
            target,
            cost: arc_cost,
            flow,
            in_tree,
            parent,
            pred,
            pred_dir,
            depth,
            children,
            pi,
            block,
            next_arc: 0,
            tol: 1e-12 * (max_c + 1.0),
        }
    }

    #[inline]
    fn reduced_cost(&self, e: usize) -> f64 {
        self.cost[e] + self.pi[self.source[e]] - self.pi[self.target[e]]
    }

    fn find_entering(&mut self) -> Option<usize> {
        let arcs = self.real_arcs;
        let mut best = NONE;
        let mut min = -self.tol;
        let mut count = self.block;
        for k in 0..arcs {
            let e = (self.next_arc + k) % arcs;
            if !self.in_tree[e] {
                let rc = self.reduced_cost(e);
                // strict comparison keeps the lowest index among equal costs
                // because wrap-around only happens once per call
                if rc < min || (rc == min && best != NONE && e < best) {
                    min = rc;
                    best = e;
                }
            }
            count -= 1;
            if count == 0 {
                if best != NONE {
                    self.next_arc = (e + 1) % arcs;
                    return Some(best);
                }
                count = self.block;
            }
        }
        (best != NONE).then(|| {
            self.next_arc = (best + 1) % arcs;
            best
        })
    }

    fn find_join(&self, mut u: usize, mut v: usize) -> usize {
        while u != v {
            match self.depth[u].cmp(&self.depth[v]) {
                std::cmp::Ordering::Greater => u = self.parent[u],
                std::cmp::Ordering::Less => v = self.parent[v],
                std::cmp::Ordering::Equal => {
                    u = self.parent[u];
                    v = self.parent[v];
                }
            }
        }
        u
    }

    fn run(&mut self, max_pivots: usize) -> Result<usize> {
        let mut pivots = 0;
        while let Some(in_arc) = self.find_entering() {
            if pivots == max_pivots {
                return Err(Error::SolverFailure(format!(
                    "network simplex exceeded {max_pivots} pivots on a {}x{} problem",
                    self.m, self.n
                )));
            }
            pivots += 1;
            self.pivot(in_arc)?;
        }
        Ok(pivots)
    }

    fn pivot(&mut self, in_arc: usize) -> Result<()> {
        let first = self.source[in_arc];
        let second = self.target[in_arc];
        let join = self.find_join(first, second);

        // Flow is pushed first -> second along the entering arc, then up from
        // `second` to the join and down from the join to `first`. The leaving
        // arc is the last blocking arc met along that orientation.
        let mut delta = f64::INFINITY;
        let mut u_out = NONE;
        let mut side = 0u8;
        let mut u = first;
        while u != join {
            if self.pred_dir[u] == UP {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    u_out = u;
                    side = 1;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != join {
            if self.pred_dir[u] == DOWN {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    u_out = u;
                    side = 2;
                }
            }
            u = self.parent[u];
        }
        if u_out == NONE {
            return Err(Error::SolverFailure("unbounded pivot cycle".into()));
        }

        if delta > 0.0 {
            self.flow[in_arc] += delta;
            let mut u = first;
            while u != join {
                let e = self.pred[u];
                self.flow[e] -= f64::from(self.pred_dir[u]) * delta;
                u = self.parent[u];
            }
            let mut u = second;
            while u != join {
                let e = self.pred[u];
                self.flow[e] += f64::from(self.pred_dir[u]) * delta;
                u = self.parent[u];
            }
        }
        let leaving = self.pred[u_out];
        self.flow[leaving] = 0.0;
        self.in_tree[leaving] = false;
        self.in_tree[in_arc] = true;

        let (u_in, v_in) = if side == 1 {
            (first, second)
        } else {
            (second, first)
        };
        self.rehang(u_in, v_in, u_out, in_arc);
        Ok(())
    }

    /// Detach the subtree rooted at `u_out` (which contains `u_in`), re-root
    /// it at `u_in`, and hang it below `v_in` through `in_arc`.
    fn rehang(&mut self, u_in: usize, v_in: usize, u_out: usize, in_arc: usize) {
        let mut path = vec![u_in];
        while *path.last().unwrap() != u_out {
            let p = self.parent[*path.last().unwrap()];
            path.push(p);
        }
        let old_parent_out = self.parent[u_out];
        remove_child(&mut self.children[old_parent_out], u_out);

        let old_pred: Vec<usize> = path.iter().map(|&p| self.pred[p]).collect();
        let old_dir: Vec<i8> = path.iter().map(|&p| self.pred_dir[p]).collect();
        for i in 1..path.len() {
            let (child, node) = (path[i - 1], path[i]);
            remove_child(&mut self.children[node], child);
            self.children[child].push(node);
            self.parent[node] = child;
            self.pred[node] = old_pred[i - 1];
            self.pred_dir[node] = -old_dir[i - 1];
        }
        self.parent[u_in] = v_in;
        self.pred[u_in] = in_arc;
        self.pred_dir[u_in] = if self.source[in_arc] == u_in { UP } else { DOWN };
        self.children[v_in].push(u_in);

        let wanted = if self.pred_dir[u_in] == UP {
            self.pi[v_in] - self.cost[in_arc]
        } else {
            self.pi[v_in] + self.cost[in_arc]
        };
        let sigma = wanted - self.pi[u_in];
        let mut stack = vec![u_in];
        while let Some(u) = stack.pop() {
            self.pi[u] += sigma;
            self.depth[u] = self.depth[self.parent[u]] + 1;
            stack.extend_from_slice(&self.children[u]);
        }
        debug_assert_eq!(self.parent[self.root], NONE);
    }

    fn extract_plan(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<TransportPlan> {
        let residual = self.flow[self.real_arcs..]
            .iter()
            .fold(0.0_f64, |a, &b| a.max(b));
        if residual > MARGINAL_TOL {
            return Err(Error::invalid(format!(
                "infeasible transport problem: {residual:e} mass left on artificial arcs"
            )));
        }
        let data: Vec<f64> = self.flow[..self.real_arcs]
            .iter()
            .map(|&f| f.max(0.0))
            .collect();
        let plan = DenseMatrix::new(self.m, self.n, data)?;
        TransportPlan::new(plan, mu.clone(), nu.clone())
            .map_err(|e| Error::SolverFailure(format!("network simplex produced an invalid plan: {e}")))
    }
}

fn remove_child(children: &mut Vec<usize>, c: usize) {
    if let Some(pos) = children.iter().position(|&x| x == c) {
        children.remove(pos);
    }
}
