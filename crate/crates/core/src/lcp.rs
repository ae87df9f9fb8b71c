//! The simplex-normalized linear complementarity problem:
//! find `w ≥ 0` and a distribution `z` over `{0,…,n}` with
//! `w = z_0·q + R·(z_1..z_n)` and, for each `i`, `z_i = 0` or `w_i = R_ii`.
//!
//! Solved by support enumeration, each support being an LP feasibility
//! problem. The `Dominant` variant additionally requires `w_i ≥ R_ii` for all
//! `i`, the form used by equilibrium arguments on best-response matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::lp::{Cmp, Lp, LpOutcome};

pub const MAX_DIM: usize = 12;
pub const DEFAULT_DENSITY: usize = 40;
pub const DEFAULT_TOL: f64 = 1e-9;
/// Cap on grid samples; large `n` falls back to a coarser per-axis density.
const MAX_GRID_SAMPLES: usize = 400_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LcpVariant {
    /// The definition verbatim.
    #[default]
    Plain,
    /// Adds `w_i ≥ R_ii` for every `i`.
    Dominant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcpProblem {
    pub r: Vec<Vec<f64>>,
    pub q: Vec<f64>,
}

impl LcpProblem {
    pub fn new(r: Vec<Vec<f64>>, q: Vec<f64>) -> Result<Self> {
        check_square(&r)?;
        if q.len() != r.len() {
            return Err(Error::Dimension(format!(
                "q has length {}, R is {}x{}",
                q.len(),
                r.len(),
                r.len()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("q has non-finite entries".into()));
        }
        Ok(Self { r, q })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

pub fn check_square(r: &[Vec<f64>]) -> Result<()> {
    let n = r.len();
    if n == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }
    if let Some(row) = r.iter().position(|row| row.len() != n) {
        return Err(Error::Dimension(format!(
            "row {row} has length {}, expected {n}",
            r[row].len()
        )));
    }
    if r.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcpSolution {
    pub w: Vec<f64>,
    /// `z_0..z_n`.
    pub z: Vec<f64>,
    /// Active support, 0-based indices into `1..=n`.
    pub support: Vec<usize>,
    /// Whether `w_i ≥ R_ii − tol` holds for every `i`.
    pub q3: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LcpOutcome {
    Feasible(LcpSolution),
    Infeasible,
}

impl LcpOutcome {
    pub fn solution(&self) -> Option<&LcpSolution> {
        match self {
            LcpOutcome::Feasible(s) => Some(s),
            LcpOutcome::Infeasible => None,
        }
    }
}

/// Supports of `{0..n-1}` by cardinality, then lexicographically.
pub fn support_order(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(1 << n);
    for k in 0..=n {
        let mut comb: Vec<usize> = (0..k).collect();
        loop {
            out.push(comb.clone());
            // next combination
            let mut i = k;
            while i > 0 && comb[i - 1] == n - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            comb[i - 1] += 1;
            for j in i..k {
                comb[j] = comb[j - 1] + 1;
            }
        }
    }
    out
}

/// LP feasibility of a single support.
pub fn solve_support(
    p: &LcpProblem,
    support: &[usize],
    tol: f64,
    variant: LcpVariant,
) -> Option<LcpSolution> {
    let n = p.dim();
    let mut lp = Lp::minimize();
    let z0 = lp.var(0.0, 0.0, 1.0);
    let zs: Vec<usize> = support.iter().map(|_| lp.var(0.0, 0.0, 1.0)).collect();
    let mut sum: Vec<(usize, f64)> = vec![(z0, 1.0)];
    sum.extend(zs.iter().map(|&z| (z, 1.0)));
    lp.constraint(sum, Cmp::Eq, 1.0);
    for i in 0..n {
        let mut row: Vec<(usize, f64)> = vec![(z0, p.q[i])];
        row.extend(support.iter().zip(&zs).map(|(&j, &z)| (z, p.r[i][j])));
        let mut lo = 0.0f64;
        if variant == LcpVariant::Dominant {
            lo = lo.max(p.r[i][i]);
        }
        if support.contains(&i) {
            if p.r[i][i] < lo - tol {
                return None;
            }
            lp.constraint(row.clone(), Cmp::Ge, p.r[i][i] - tol);
            lp.constraint(row, Cmp::Le, p.r[i][i] + tol);
        } else {
            lp.constraint(row, Cmp::Ge, lo - tol);
        }
    }
    let x = match lp.solve() {
        LpOutcome::Optimal { x, .. } => x,
        _ => return None,
    };
    let mut z = vec![0.0; n + 1];
    z[0] = x[z0].max(0.0);
    for (&j, &v) in support.iter().zip(&zs) {
        z[j + 1] = x[v].max(0.0);
    }
    let s: f64 = z.iter().sum();
    z.iter_mut().for_each(|v| *v /= s);
    let w = lcp_w(p, &z);
    let q3 = (0..n).all(|i| w[i] >= p.r[i][i] - tol);
    Some(LcpSolution {
        w,
        z,
        support: support.to_vec(),
        q3,
    })
}

/// `w = z_0·q + R·z`.
pub fn lcp_w(p: &LcpProblem, z: &[f64]) -> Vec<f64> {
    let n = p.dim();
    (0..n)
        .map(|i| z[0] * p.q[i] + (0..n).map(|j| p.r[i][j] * z[j + 1]).sum::<f64>())
        .collect()
}

fn check_tol(tol: f64) -> Result<()> {
    if !(1e-12..=1e-4).contains(&tol) {
        return Err(Error::InvalidArgument(format!("tol {tol} outside [1e-12, 1e-4]")));
    }
    Ok(())
}

/// First feasible support in the deterministic order.
pub fn solve_lcp(p: &LcpProblem, tol: f64) -> Result<LcpOutcome> {
    solve_lcp_with(p, tol, LcpVariant::Plain)
}

pub fn solve_lcp_with(p: &LcpProblem, tol: f64, variant: LcpVariant) -> Result<LcpOutcome> {
    check_tol(tol)?;
    if p.dim() > MAX_DIM {
        return Err(Error::DimensionTooLarge(p.dim()));
    }
    Ok(first_feasible(p, tol, variant, &support_order(p.dim())))
}

fn first_feasible(
    p: &LcpProblem,
    tol: f64,
    variant: LcpVariant,
    supports: &[Vec<usize>],
) -> LcpOutcome {
    // Supports are few (2^n); the q-sampling layer above is the parallel one.
    supports
        .iter()
        .find_map(|s| solve_support(p, s, tol, variant))
        .map_or(LcpOutcome::Infeasible, LcpOutcome::Feasible)
}

/// One solution per feasible nonempty support, in support order.
pub fn all_support_solutions(p: &LcpProblem, tol: f64, variant: LcpVariant) -> Vec<LcpSolution> {
    support_order(p.dim())
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| solve_support(p, s, tol, variant))
        .collect()
}

/// Independent re-check of every LCP constraint at `tol`.
pub fn verify_solution(p: &LcpProblem, sol: &LcpSolution, tol: f64, variant: LcpVariant) -> bool {
    let n = p.dim();
    if sol.z.len() != n + 1 || sol.w.len() != n {
        return false;
    }
    if sol.z.iter().any(|&v| v < -tol) || (sol.z.iter().sum::<f64>() - 1.0).abs() > tol {
        return false;
    }
    let w = lcp_w(p, &sol.z);
    (0..n).all(|i| {
        let wi = sol.w[i];
        (wi - w[i]).abs() <= tol
            && wi >= -tol
            && (sol.z[i + 1] <= tol || (wi - p.r[i][i]).abs() <= tol)
            && (variant == LcpVariant::Plain || wi >= p.r[i][i] - tol)
    })
}

// Q-matrix sampling --------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QStatus {
    /// No witness found among the sampled q; sampling-limited.
    QCertifiedNumerically,
    NotQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QMatrixVerdict {
    pub status: QStatus,
    pub witness: Option<Vec<f64>>,
    /// Per-axis grid density actually used.
    pub density: usize,
    pub samples: usize,
    pub variant: LcpVariant,
}

/// Deterministic sample sequence on the unit sphere: structured candidates
/// (±e_i, then sign corners), then a grid over the cube surface with
/// `density` points per axis, each normalized.
pub struct QSamples {
    n: usize,
    extra: Vec<Vec<f64>>,
    density: usize,
    per_face: usize,
    corners: usize,
}

impl QSamples {
    pub fn new(n: usize, density: usize, extra: &[Vec<f64>]) -> Self {
        let mut d = density.max(2);
        while 2 * n * d.saturating_pow(n as u32 - 1) > MAX_GRID_SAMPLES && d > 2 {
            d -= 1;
        }
        Self {
            n,
            extra: extra.to_vec(),
            density: d,
            per_face: d.pow(n as u32 - 1),
            corners: 1 << n,
        }
    }

    pub fn len(&self) -> usize {
        self.extra.len() + 2 * self.n + self.corners + 2 * self.n * self.per_face
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn density(&self) -> usize {
        self.density
    }

    pub fn get(&self, mut k: usize) -> Vec<f64> {
        let n = self.n;
        if k < self.extra.len() {
            return self.extra[k].clone();
        }
        k -= self.extra.len();
        if k < 2 * n {
            let mut q = vec![0.0; n];
            q[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
            return q;
        }
        k -= 2 * n;
        if k < self.corners {
            // bit i set means coordinate i negative; all-negative first
            let bits = self.corners - 1 - k;
            let s = 1.0 / (n as f64).sqrt();
            return (0..n)
                .map(|i| if bits >> i & 1 == 1 { -s } else { s })
                .collect();
        }
        k -= self.corners;
        let face = k / self.per_face;
        let mut rem = k % self.per_face;
        let axis = face / 2;
        let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
        let d = self.density;
        let mut q = vec![0.0; n];
        for (i, qi) in q.iter_mut().enumerate() {
            if i == axis {
                *qi = sign;
            } else {
                let t = rem % d;
                rem /= d;
                *qi = -1.0 + 2.0 * t as f64 / (d - 1) as f64;
            }
        }
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        q.iter().map(|v| v / norm).collect()
    }
}

pub fn is_q_matrix(r: &[Vec<f64>], density: usize, tol: f64) -> Result<QMatrixVerdict> {
    is_q_matrix_with(r, density, tol, LcpVariant::Plain, &[])
}

pub fn is_q_matrix_with(
    r: &[Vec<f64>],
    density: usize,
    tol: f64,
    variant: LcpVariant,
    extra: &[Vec<f64>],
) -> Result<QMatrixVerdict> {
    check_square(r)?;
    check_tol(tol)?;
    let n = r.len();
    if n > MAX_DIM {
        return Err(Error::DimensionTooLarge(n));
    }
    if density == 0 {
        return Err(Error::InvalidArgument("density must be positive".into()));
    }
    let samples = QSamples::new(n, density, extra);
    let supports = support_order(n);
    let infeasible = |k: usize| {
        let q = samples.get(k);
        let p = LcpProblem { r: r.to_vec(), q };
        match first_feasible(&p, tol, variant, &supports) {
            LcpOutcome::Infeasible => Some(p.q),
            LcpOutcome::Feasible(_) => None,
        }
    };
    let found = exec::find_first(samples.len(), infeasible);
    Ok(match found {
        Some((k, q)) => QMatrixVerdict {
            status: QStatus::NotQ,
            witness: Some(q),
            density: samples.density(),
            samples: k + 1,
            variant,
        },
        None => QMatrixVerdict {
            status: QStatus::QCertifiedNumerically,
            witness: None,
            density: samples.density(),
            samples: samples.len(),
            variant,
        },
    })
}

pub fn find_witness(r: &[Vec<f64>], density: usize, tol: f64) -> Result<Option<Vec<f64>>> {
    find_witness_with(r, density, tol, LcpVariant::Plain)
}

/// Witness from [`is_q_matrix_with`], re-verified infeasible.
pub fn find_witness_with(
    r: &[Vec<f64>],
    density: usize,
    tol: f64,
    variant: LcpVariant,
) -> Result<Option<Vec<f64>>> {
    let v = is_q_matrix_with(r, density, tol, variant, &[])?;
    match v.witness {
        Some(q) => {
            let p = LcpProblem::new(r.to_vec(), q.clone())?;
            match solve_lcp_with(&p, tol, variant)? {
                LcpOutcome::Infeasible => Ok(Some(q)),
                LcpOutcome::Feasible(_) => Err(Error::InvalidArgument(
                    "witness failed re-verification".into(),
                )),
            }
        }
        None => Ok(None),
    }
}
