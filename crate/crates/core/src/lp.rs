//! Thin wrapper over `minilp` for the small dense LPs used here.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Lp {
    maximize: bool,
    vars: Vec<(f64, f64, f64)>,
    cons: Vec<(Vec<(usize, f64)>, Cmp, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

impl Lp {
    pub fn minimize() -> Self {
        Self {
            maximize: false,
            vars: Vec::new(),
            cons: Vec::new(),
        }
    }

    pub fn maximize() -> Self {
        Self {
            maximize: true,
            ..Self::minimize()
        }
    }

    /// Adds a variable with objective coefficient and bounds; returns its index.
    pub fn var(&mut self, obj: f64, lo: f64, hi: f64) -> usize {
        self.vars.push((obj, lo, hi));
        self.vars.len() - 1
    }

    pub fn constraint(&mut self, terms: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) {
        self.cons.push((terms, cmp, rhs));
    }

    pub fn solve(&self) -> LpOutcome {
        let dir = if self.maximize {
            OptimizationDirection::Maximize
        } else {
            OptimizationDirection::Minimize
        };
        let mut p = Problem::new(dir);
        let vs: Vec<_> = self
            .vars
            .iter()
            .map(|&(o, lo, hi)| p.add_var(o, (lo, hi)))
            .collect();
        for (terms, cmp, rhs) in &self.cons {
            let expr: Vec<_> = terms
                .iter()
                .filter(|(_, c)| *c != 0.0)
                .map(|&(j, c)| (vs[j], c))
                .collect();
            let op = match cmp {
                Cmp::Le => ComparisonOp::Le,
                Cmp::Ge => ComparisonOp::Ge,
                Cmp::Eq => ComparisonOp::Eq,
            };
            p.add_constraint(expr.as_slice(), op, *rhs);
        }
        match p.solve() {
            Ok(sol) => LpOutcome::Optimal {
                x: vs.iter().map(|&v| sol[v]).collect(),
                objective: sol.objective(),
            },
            Err(minilp::Error::Infeasible) => LpOutcome::Infeasible,
            Err(minilp::Error::Unbounded) => LpOutcome::Unbounded,
        }
    }
}

/// Value and minimizing column mixture of the zero-sum matrix game in which
/// the row player maximizes `g[r][c]`. Extra linear constraints on the column
/// mixture (e.g. probability caps) are passed as `(terms, rhs)` meaning
/// `Σ y_c·w ≤ rhs`.
pub fn matrix_game_min(g: &[Vec<f64>], col_caps: &[(Vec<(usize, f64)>, f64)]) -> (f64, Vec<f64>) {
    let ncol = g[0].len();
    let mut lp = Lp::minimize();
    let ys: Vec<usize> = (0..ncol).map(|_| lp.var(0.0, 0.0, f64::INFINITY)).collect();
    let v = lp.var(1.0, f64::NEG_INFINITY, f64::INFINITY);
    for row in g {
        let mut t: Vec<(usize, f64)> = ys.iter().zip(row).map(|(&y, &a)| (y, a)).collect();
        t.push((v, -1.0));
        lp.constraint(t, Cmp::Le, 0.0);
    }
    lp.constraint(ys.iter().map(|&y| (y, 1.0)).collect(), Cmp::Eq, 1.0);
    for (terms, rhs) in col_caps {
        lp.constraint(terms.iter().map(|&(c, w)| (ys[c], w)).collect(), Cmp::Le, *rhs);
    }
    match lp.solve() {
        LpOutcome::Optimal { x, .. } => {
            let mut y: Vec<f64> = x[..ncol].iter().map(|v| v.max(0.0)).collect();
            let s: f64 = y.iter().sum();
            y.iter_mut().for_each(|v| *v /= s);
            // recompute the value exactly from the mixture
            let val = g
                .iter()
                .map(|row| row.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            (val, y)
        }
        other => panic!("matrix game LP is always feasible and bounded: {other:?}"),
    }
}
