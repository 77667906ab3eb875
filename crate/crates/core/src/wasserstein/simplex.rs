//! Transportation simplex for the balanced optimal transport LP.
//!
//! Minimizes `sum_ij c[i][j] x[i][j]` subject to row sums `s`, column sums
//! `t` and `x >= 0`, where `sum(s) == sum(t)`. Fully deterministic:
//! northwest-corner starting basis, Bland's rule for the entering cell
//! (first negative reduced cost in row-major order), smallest-index
//! tie-breaking for the leaving cell.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Reduced costs above `-PRICE_TOL` count as nonnegative. Stopping there
/// leaves at most `PRICE_TOL * total_mass` suboptimality, far below the
/// rounding noise budgeted by callers.
const PRICE_TOL: f64 = 1e-11;

/// Hard cap on pivots; the method terminates long before this for the
/// instance sizes the oracle accepts.
const MAX_PIVOTS: usize = 100_000;

pub(crate) fn solve(
    s: ArrayView1<'_, f64>,
    t: ArrayView1<'_, f64>,
    cost: &Array2<f64>,
) -> Result<Array2<f64>> {
    let m = s.len();
    let n = t.len();
    debug_assert_eq!(cost.nrows(), m);
    debug_assert_eq!(cost.ncols(), n);

    let mut tableau = Tableau::northwest_corner(s, t);
    for _ in 0..MAX_PIVOTS {
        let (u, v) = tableau.duals(cost.view())?;
        match tableau.entering_cell(cost.view(), &u, &v) {
            None => {
                let mut flows = tableau.flows;
                flows.mapv_inplace(|x| x.max(0.0));
                return Ok(flows);
            }
            Some(cell) => tableau.pivot(cell)?,
        }
    }
    Err(Error::Internal(format!(
        "transportation simplex did not terminate within {MAX_PIVOTS} pivots"
    )))
}

struct Tableau {
    m: usize,
    n: usize,
    flows: Array2<f64>,
    in_basis: Vec<bool>,
    basis: Vec<(usize, usize)>,
}

impl Tableau {
    /// Northwest-corner starting basis: exactly `m + n - 1` cells forming a
    /// spanning tree, degenerate zero flows included.
    fn northwest_corner(s: ArrayView1<'_, f64>, t: ArrayView1<'_, f64>) -> Self {
        let m = s.len();
        let n = t.len();
        let mut remaining_s = s.to_vec();
        let mut remaining_t = t.to_vec();
        let mut flows = Array2::zeros((m, n));
        let mut in_basis = vec![false; m * n];
        let mut basis = Vec::with_capacity(m + n - 1);

        let (mut i, mut j) = (0, 0);
        loop {
            let q = remaining_s[i].min(remaining_t[j]).max(0.0);
            flows[[i, j]] = q;
            in_basis[i * n + j] = true;
            basis.push((i, j));
            remaining_s[i] -= q;
            remaining_t[j] -= q;
            if basis.len() == m + n - 1 {
                break;
            }
            // Advance exactly one coordinate per step so the basis stays a
            // tree even under degeneracy.
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || remaining_s[i] <= remaining_t[j] {
                i += 1;
            } else {
                j += 1;
            }
        }

        Self {
            m,
            n,
            flows,
            in_basis,
            basis,
        }
    }

    /// Adjacency over the bipartite node set: rows are `0..m`, columns are
    /// `m..m+n`. Each basic cell `(i, j)` is an edge `i -- m+j`.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for &(i, j) in &self.basis {
            adj[i].push((self.m + j, i * self.n + j));
            adj[self.m + j].push((i, i * self.n + j));
        }
        adj
    }

    /// Solves `u[i] + v[j] = c[i][j]` over the basis tree with `u[0] = 0`.
    fn duals(&self, cost: ArrayView2<'_, f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let adj = self.adjacency();
        let mut potential = vec![f64::NAN; self.m + self.n];
        potential[0] = 0.0;
        let mut stack = vec![0usize];
        let mut visited = 1usize;
        while let Some(node) = stack.pop() {
            for &(next, cell) in &adj[node] {
                if potential[next].is_nan() {
                    let (i, j) = (cell / self.n, cell % self.n);
                    potential[next] = cost[[i, j]] - potential[node];
                    visited += 1;
                    stack.push(next);
                }
            }
        }
        if visited != self.m + self.n {
            return Err(Error::Internal(
                "transportation basis is not a spanning tree".into(),
            ));
        }
        let (u, v) = potential.split_at(self.m);
        Ok((u.to_vec(), v.to_vec()))
    }

    /// Bland's rule: the first nonbasic cell in row-major order whose
    /// reduced cost is negative beyond tolerance.
    fn entering_cell(
        &self,
        cost: ArrayView2<'_, f64>,
        u: &[f64],
        v: &[f64],
    ) -> Option<(usize, usize)> {
        for i in 0..self.m {
            for j in 0..self.n {
                if !self.in_basis[i * self.n + j] && cost[[i, j]] - u[i] - v[j] < -PRICE_TOL {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Brings `entering` into the basis: finds the unique cycle it closes,
    /// shifts the largest feasible mass around it, and drops the blocking
    /// cell.
    fn pivot(&mut self, entering: (usize, usize)) -> Result<()> {
        let path = self.tree_path(entering.0, self.m + entering.1)?;
        // Alternating signs around the cycle, starting with + on the
        // entering cell; the path cells continue -, +, -, ...
        let minus_cells: Vec<(usize, usize)> = path.iter().copied().step_by(2).collect();
        let plus_cells: Vec<(usize, usize)> = path.iter().copied().skip(1).step_by(2).collect();

        let mut theta = f64::INFINITY;
        let mut leaving = minus_cells[0];
        for &(i, j) in &minus_cells {
            let flow = self.flows[[i, j]];
            if flow < theta - 1e-15 || (flow < theta + 1e-15 && (i, j) < leaving) {
                theta = flow;
                leaving = (i, j);
            }
        }
        let theta = theta.max(0.0);

        self.flows[[entering.0, entering.1]] += theta;
        for &(i, j) in &plus_cells {
            self.flows[[i, j]] += theta;
        }
        for &(i, j) in &minus_cells {
            self.flows[[i, j]] -= theta;
        }
        self.flows[[leaving.0, leaving.1]] = 0.0;

        self.in_basis[entering.0 * self.n + entering.1] = true;
        self.in_basis[leaving.0 * self.n + leaving.1] = false;
        let slot = self
            .basis
            .iter()
            .position(|&c| c == leaving)
            .ok_or_else(|| Error::Internal("leaving cell missing from basis".into()))?;
        self.basis[slot] = entering;
        Ok(())
    }

    /// Cells along the unique tree path between two nodes.
    fn tree_path(&self, from: usize, to: usize) -> Result<Vec<(usize, usize)>> {
        let adj = self.adjacency();
        let mut parent_edge: Vec<Option<(usize, usize)>> = vec![None; self.m + self.n];
        let mut stack = vec![from];
        let mut seen = vec![false; self.m + self.n];
        seen[from] = true;
        while let Some(node) = stack.pop() {
            if node == to {
                break;
            }
            for &(next, cell) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent_edge[next] = Some((node, cell));
                    stack.push(next);
                }
            }
        }
        if !seen[to] {
            return Err(Error::Internal("basis tree is disconnected".into()));
        }
        let mut path = Vec::new();
        let mut node = to;
        while node != from {
            let (prev, cell) = parent_edge[node]
                .ok_or_else(|| Error::Internal("broken parent chain in basis tree".into()))?;
            path.push((cell / self.n, cell % self.n));
            node = prev;
        }
        path.reverse();
        Ok(path)
    }
}
