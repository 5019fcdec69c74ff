//! Dense two-phase tableau simplex for small problems
//! `max c.x  s.t.  A x <= b, x >= 0` (entries of `b` may be negative).
//!
//! Bland's rule is used throughout, so the method terminates on degenerate
//! problems. Intended for the tiny LPs of the utilitarian case.

use crate::error::SolverError;

const PIVOT_EPS: f64 = 1e-11;
const PHASE1_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub(crate) struct LpSolution {
    pub x: Vec<f64>,
    /// Optimal multipliers of the `A x <= b` rows.
    pub duals: Vec<f64>,
    pub value: f64,
}

struct Tableau {
    // rows x (cols + 1); last column is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize, obj: &mut [f64]) {
        let p = self.t[row][col];
        for v in self.t[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[row].clone();
        for (r, line) in self.t.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let factor = line[col];
            if factor != 0.0 {
                for (v, pv) in line.iter_mut().zip(&pivot_row) {
                    *v -= factor * pv;
                }
            }
        }
        let factor = obj[col];
        if factor != 0.0 {
            for (v, pv) in obj.iter_mut().zip(&pivot_row) {
                *v -= factor * pv;
            }
        }
        self.basis[row] = col;
    }

    /// Runs simplex iterations on `obj` (reduced costs, rhs slot holds -value).
    /// Columns in `allowed` may enter.
    fn optimize(&mut self, obj: &mut [f64], allowed: &dyn Fn(usize) -> bool) -> Result<(), SolverError> {
        let rhs = self.cols;
        loop {
            let entering = (0..self.cols).find(|&c| allowed(c) && obj[c] < -PIVOT_EPS);
            let Some(col) = entering else {
                return Ok(());
            };
            let mut best: Option<(usize, f64)> = None;
            for (r, line) in self.t.iter().enumerate() {
                let a = line[col];
                if a > PIVOT_EPS {
                    let ratio = line[rhs] / a;
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bv)) => {
                            if ratio < bv - 1e-14
                                || ((ratio - bv).abs() <= 1e-14 && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bv))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = best else {
                return Err(SolverError::Unbounded);
            };
            self.pivot(row, col, obj);
        }
    }
}

pub(crate) fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution, SolverError> {
    let nv = c.len();
    let nr = b.len();
    let flipped: Vec<bool> = b.iter().map(|&v| v < 0.0).collect();
    let n_art = flipped.iter().filter(|&&f| f).count();
    // columns: structural | slacks | artificials
    let cols = nv + nr + n_art;
    let mut t = Vec::with_capacity(nr);
    let mut basis = Vec::with_capacity(nr);
    let mut art = nv + nr;
    for r in 0..nr {
        let sign = if flipped[r] { -1.0 } else { 1.0 };
        let mut line = vec![0.0; cols + 1];
        for v in 0..nv {
            line[v] = sign * a[r][v];
        }
        line[nv + r] = sign;
        line[cols] = sign * b[r];
        if flipped[r] {
            line[art] = 1.0;
            basis.push(art);
            art += 1;
        } else {
            basis.push(nv + r);
        }
        t.push(line);
    }
    let mut tab = Tableau { t, basis, cols };
    let is_art = |col: usize| col >= nv + nr;

    if n_art > 0 {
        // Phase 1: minimize the sum of artificials, i.e. maximize its negation.
        let mut obj = vec![0.0; cols + 1];
        for col in nv + nr..cols {
            obj[col] = 1.0;
        }
        for r in 0..nr {
            if is_art(tab.basis[r]) {
                for (o, v) in obj.iter_mut().zip(&tab.t[r]) {
                    *o -= v;
                }
            }
        }
        tab.optimize(&mut obj, &|_| true)?;
        if -obj[cols] > PHASE1_EPS {
            return Err(SolverError::Infeasible);
        }
        // Drive remaining artificials out of the basis where possible.
        for r in 0..nr {
            if is_art(tab.basis[r]) {
                if let Some(col) = (0..nv + nr).find(|&c| tab.t[r][c].abs() > PIVOT_EPS) {
                    let mut dummy = vec![0.0; cols + 1];
                    tab.pivot(r, col, &mut dummy);
                }
            }
        }
    }

    // Phase 2 objective row: reduced costs d_j = c_B B^-1 A_j - c_j.
    let mut obj = vec![0.0; cols + 1];
    for v in 0..nv {
        obj[v] = -c[v];
    }
    for r in 0..nr {
        let bv = tab.basis[r];
        let cb = if bv < nv { c[bv] } else { 0.0 };
        if cb != 0.0 {
            for (o, v) in obj.iter_mut().zip(&tab.t[r]) {
                *o += cb * v;
            }
        }
    }
    tab.optimize(&mut obj, &|col| !is_art(col))?;

    let mut x = vec![0.0; nv];
    for r in 0..nr {
        if tab.basis[r] < nv {
            x[tab.basis[r]] = tab.t[r][cols];
        }
    }
    let duals = (0..nr).map(|r| obj[nv + r]).collect();
    let value = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpSolution { x, duals, value })
}
