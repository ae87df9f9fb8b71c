//! Stationary discounted equilibria, vanishing-discount limits and
//! correlated min-max (punishment) values.
//!
//! A player's stationary strategy set is a polytope: the simplex, cut by a
//! probability cap when the game carries one. Everything here works with the
//! polytope's vertices; a best response to stationary opponents in the
//! single-state decision problem is always attained at a vertex.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::game::AbsorbingGame;
use crate::lp;
use crate::payoff::{action_stats, MixedProfile, StageStats};

/// Vertices of player `i`'s (possibly capped) strategy polytope.
pub fn strategy_vertices(g: &AbsorbingGame, i: usize) -> Result<Vec<Vec<f64>>> {
    let k = g.n_actions(i);
    let caps: Vec<_> = g.caps().iter().filter(|c| c.player == i).collect();
    let e = |a: usize| {
        let mut v = vec![0.0; k];
        v[a] = 1.0;
        v
    };
    match caps.as_slice() {
        [] => Ok((0..k).map(e).collect()),
        [cap] if cap.max_prob >= 1.0 => Ok((0..k).map(e).collect()),
        [cap] => {
            let c = cap.action;
            let alpha = cap.max_prob;
            let mut out: Vec<Vec<f64>> = (0..k).filter(|&a| a != c).map(e).collect();
            if alpha > 0.0 {
                for a in (0..k).filter(|&a| a != c) {
                    let mut v = e(a);
                    v[a] = 1.0 - alpha;
                    v[c] = alpha;
                    out.push(v);
                }
            }
            if out.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "player {i}: cap leaves no feasible strategy"
                )));
            }
            Ok(out)
        }
        _ => Err(Error::InvalidArgument(format!(
            "player {i}: at most one probability cap per player is supported"
        ))),
    }
}

/// Whether `d` respects every cap on player `i` (up to `tol`).
pub fn respects_caps(g: &AbsorbingGame, i: usize, d: &[f64], tol: f64) -> bool {
    g.caps()
        .iter()
        .filter(|c| c.player == i)
        .all(|c| d[c.action] <= c.max_prob + tol)
}

/// Best stationary response value of player `i` against `x_{-i}` and the
/// maximizing vertex.
pub fn best_response(
    g: &AbsorbingGame,
    x: &MixedProfile,
    i: usize,
    lambda: f64,
    vertices: &[Vec<f64>],
) -> (f64, usize) {
    let stats = action_stats(g, x.dists(), i);
    best_vertex(&stats, vertices, i, lambda)
}

fn best_vertex(stats: &[StageStats], vertices: &[Vec<f64>], i: usize, lambda: f64) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (k, v) in vertices.iter().enumerate() {
        let val = StageStats::combine(stats, v).discounted(lambda, i);
        if val > best.0 {
            best = (val, k);
        }
    }
    best
}

/// Max over players of the best-response gain at `x`.
pub fn equilibrium_residual(
    g: &AbsorbingGame,
    x: &MixedProfile,
    lambda: f64,
    verts: &[Vec<Vec<f64>>],
) -> f64 {
    (0..g.n_players())
        .map(|i| {
            let stats = action_stats(g, x.dists(), i);
            let own = StageStats::combine(&stats, x.player(i)).discounted(lambda, i);
            let (br, _) = best_vertex(&stats, &verts[i], i, lambda);
            (br - own).max(0.0)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountedEquilibrium {
    pub profile: MixedProfile,
    pub lambda: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub damping: f64,
    pub seeds: usize,
    pub iteration_cap: usize,
    pub newton_starts: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            seeds: 64,
            iteration_cap: 100_000,
            newton_starts: 4,
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside (0,1)")));
    }
    Ok(())
}

fn all_vertices(g: &AbsorbingGame) -> Result<Vec<Vec<Vec<f64>>>> {
    (0..g.n_players()).map(|i| strategy_vertices(g, i)).collect()
}

fn mix(verts: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let k = verts[0].len();
    let mut d = vec![0.0; k];
    for (v, &wt) in verts.iter().zip(w) {
        for a in 0..k {
            d[a] += wt * v[a];
        }
    }
    d
}

fn vertex_profile(verts: &[Vec<Vec<f64>>], pick: &[usize]) -> MixedProfile {
    MixedProfile::new(pick.iter().zip(verts).map(|(&k, v)| v[k].clone()).collect())
        .expect("vertices are distributions")
}

/// Odometer over index tuples with per-position bounds.
fn tuples(bounds: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &b in bounds {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..b).map(move |k| {
                    let mut t = t.clone();
                    t.push(k);
                    t
                })
            })
            .collect();
    }
    out
}

/// Stationary λ-discounted equilibrium with residual ≤ `tol`.
pub fn stationary_discounted_equilibrium(
    g: &AbsorbingGame,
    lambda: f64,
    tol: f64,
    seed: u64,
) -> Result<DiscountedEquilibrium> {
    solve_with(g, lambda, tol, seed, &SolverOptions::default())
}

pub fn solve_with(
    g: &AbsorbingGame,
    lambda: f64,
    tol: f64,
    seed: u64,
    opts: &SolverOptions,
) -> Result<DiscountedEquilibrium> {
    check_lambda(lambda)?;
    let verts = all_vertices(g)?;
    let mut best_residual = f64::INFINITY;

    if let Some(eq) = pure_equilibria(g, lambda, tol, &verts, true).into_iter().next() {
        return Ok(eq);
    }
    if let Some(eq) = damped_best_response(g, lambda, tol, seed, opts, &verts, &mut best_residual)
    {
        return Ok(eq);
    }
    if let Some(eq) = support_enumeration(g, lambda, tol, seed, opts, &verts, true)
        .into_iter()
        .next()
    {
        return Ok(eq);
    }
    Err(Error::NoEquilibrium {
        tol,
        best_residual,
    })
}

/// Every equilibrium found by pure-profile and support enumeration, in a
/// deterministic order. Used to follow equilibria along parameter paths.
pub fn all_stationary_equilibria(
    g: &AbsorbingGame,
    lambda: f64,
    tol: f64,
    seed: u64,
) -> Result<Vec<DiscountedEquilibrium>> {
    check_lambda(lambda)?;
    let verts = all_vertices(g)?;
    let opts = SolverOptions::default();
    let mut out = pure_equilibria(g, lambda, tol, &verts, false);
    for eq in support_enumeration(g, lambda, tol, seed, &opts, &verts, false) {
        if out.iter().all(|e| e.profile.distance(&eq.profile) > 1e-7) {
            out.push(eq);
        }
    }
    Ok(out)
}

fn pure_equilibria(
    g: &AbsorbingGame,
    lambda: f64,
    tol: f64,
    verts: &[Vec<Vec<f64>>],
    first_only: bool,
) -> Vec<DiscountedEquilibrium> {
    let bounds: Vec<usize> = verts.iter().map(Vec::len).collect();
    let mut out = Vec::new();
    for pick in tuples(&bounds) {
        let x = vertex_profile(verts, &pick);
        let r = equilibrium_residual(g, &x, lambda, verts);
        if r <= tol {
            out.push(DiscountedEquilibrium {
                profile: x,
                lambda,
                residual: r,
            });
            if first_only {
                break;
            }
        }
    }
    out
}

fn random_dist(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

fn damped_best_response(
    g: &AbsorbingGame,
    lambda: f64,
    tol: f64,
    seed: u64,
    opts: &SolverOptions,
    verts: &[Vec<Vec<f64>>],
    best_residual: &mut f64,
) -> Option<DiscountedEquilibrium> {
    let n = g.n_players();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_seed = (opts.iteration_cap / opts.seeds.max(1)).max(1);
    const STALL: usize = 200;
    for _ in 0..opts.seeds {
        // a random point of each polytope: random mixture of vertices
        let mut w: Vec<Vec<f64>> = verts.iter().map(|v| random_dist(&mut rng, v.len())).collect();
        let mut seed_best = f64::INFINITY;
        let mut since = 0;
        for _ in 0..per_seed {
            let x = MixedProfile::from_weights(
                (0..n).map(|i| mix(&verts[i], &w[i])).collect(),
            )
            .ok()?;
            let r = equilibrium_residual(g, &x, lambda, verts);
            if r <= tol {
                return Some(DiscountedEquilibrium {
                    profile: x,
                    lambda,
                    residual: r,
                });
            }
            *best_residual = best_residual.min(r);
            if r < seed_best - 1e-12 {
                seed_best = r;
                since = 0;
            } else {
                since += 1;
                if since > STALL {
                    break;
                }
            }
            for i in 0..n {
                let (_, k) = best_response(g, &x, i, lambda, &verts[i]);
                for (j, wj) in w[i].iter_mut().enumerate() {
                    let target = if j == k { 1.0 } else { 0.0 };
                    *wj = (1.0 - opts.damping) * *wj + opts.damping * target;
                }
            }
        }
    }
    None
}

/// Nonempty subsets of `0..k`, by size then lexicographically.
fn subsets(k: usize) -> Vec<Vec<usize>> {
    crate::lcp::support_order(k)
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect()
}

/// Residual of the indifference system for fixed supports. Unknowns are the
/// support weights of every player followed by one value per player.
struct SupportSystem<'a> {
    g: &'a AbsorbingGame,
    lambda: f64,
    verts: Vec<Vec<Vec<f64>>>,
    /// (offset of weights, count) per player
    layout: Vec<(usize, usize)>,
    n_unknowns: usize,
}

impl<'a> SupportSystem<'a> {
    fn new(g: &'a AbsorbingGame, lambda: f64, verts: &[Vec<Vec<f64>>], supp: &[&Vec<usize>]) -> Self {
        let mut layout = Vec::new();
        let mut off = 0;
        let mut sv = Vec::new();
        for (i, s) in supp.iter().enumerate() {
            layout.push((off, s.len()));
            off += s.len();
            sv.push(s.iter().map(|&k| verts[i][k].clone()).collect());
        }
        let n = g.n_players();
        Self {
            g,
            lambda,
            verts: sv,
            layout,
            n_unknowns: off + n,
        }
    }

    fn dists(&self, u: &[f64]) -> Vec<Vec<f64>> {
        self.layout
            .iter()
            .enumerate()
            .map(|(i, &(o, c))| mix(&self.verts[i], &u[o..o + c]))
            .collect()
    }

    fn eval(&self, u: &[f64]) -> Vec<f64> {
        let n = self.g.n_players();
        let woff = self.n_unknowns - n;
        let d = self.dists(u);
        let mut f = Vec::with_capacity(self.n_unknowns);
        for i in 0..n {
            let stats = action_stats(self.g, &d, i);
            let v = u[woff + i];
            let (o, c) = self.layout[i];
            for s in &self.verts[i] {
                let st = StageStats::combine(&stats, s);
                let num = self.lambda * st.ubar[i] + (1.0 - self.lambda) * st.chi_u[i];
                let den = self.lambda + (1.0 - self.lambda) * st.p;
                f.push(num - v * den);
            }
            f.push(u[o..o + c].iter().sum::<f64>() - 1.0);
        }
        f
    }

    fn newton(&self, mut u: Vec<f64>) -> Option<Vec<f64>> {
        let m = self.n_unknowns;
        for _ in 0..60 {
            let f = self.eval(&u);
            let norm = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if !norm.is_finite() {
                return None;
            }
            if norm < 1e-14 {
                return Some(u);
            }
            let mut jac = DMatrix::<f64>::zeros(m, m);
            for k in 0..m {
                let h = 1e-7 * u[k].abs().max(1.0);
                let mut up = u.clone();
                up[k] += h;
                let mut um = u.clone();
                um[k] -= h;
                let fp = self.eval(&up);
                let fm = self.eval(&um);
                for r in 0..m {
                    jac[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
                }
            }
            let step = jac.lu().solve(&DVector::from_vec(f.clone()))?;
            let smax = step.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            // damp long steps to stay near the feasible region
            let scale = if smax > 0.5 { 0.5 / smax } else { 1.0 };
            for k in 0..m {
                u[k] -= scale * step[k];
            }
            if smax * scale < 1e-15 {
                let f = self.eval(&u);
                let norm = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                return (norm < 1e-10).then_some(u);
            }
        }
        let f = self.eval(&u);
        let norm = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        (norm < 1e-10).then_some(u)
    }
}

fn support_enumeration(
    g: &AbsorbingGame,
    lambda: f64,
    tol: f64,
    seed: u64,
    opts: &SolverOptions,
    verts: &[Vec<Vec<f64>>],
    first_only: bool,
) -> Vec<DiscountedEquilibrium> {
    let n = g.n_players();
    let per_player: Vec<Vec<Vec<usize>>> = verts.iter().map(|v| subsets(v.len())).collect();
    let bounds: Vec<usize> = per_player.iter().map(Vec::len).collect();
    let mut combos = tuples(&bounds);
    // smaller joint supports first, then lexicographic; skip all-pure combos
    combos.retain(|c| c.iter().enumerate().any(|(i, &k)| per_player[i][k].len() > 1));
    combos.sort_by_key(|c| {
        c.iter()
            .enumerate()
            .map(|(i, &k)| per_player[i][k].len())
            .sum::<usize>()
    });
    let try_combo = |ci: usize| -> Option<DiscountedEquilibrium> {
        let combo = &combos[ci];
        let supp: Vec<&Vec<usize>> = combo
            .iter()
            .enumerate()
            .map(|(i, &k)| &per_player[i][k])
            .collect();
        let sys = SupportSystem::new(g, lambda, verts, &supp);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (ci as u64).wrapping_mul(0x9E37_79B9));
        for start in 0..opts.newton_starts.max(1) {
            let mut u = Vec::with_capacity(sys.n_unknowns);
            for &(_, c) in &sys.layout {
                if start == 0 {
                    u.extend(std::iter::repeat(1.0 / c as f64).take(c));
                } else {
                    u.extend(random_dist(&mut rng, c));
                }
            }
            let d = sys.dists(&u);
            for i in 0..n {
                let stats = action_stats(g, &d, i);
                u.push(StageStats::combine(&stats, &d[i]).discounted(lambda, i));
            }
            let Some(sol) = sys.newton(u) else { continue };
            let mut dists = Vec::with_capacity(n);
            let mut ok = true;
            for (i, &(o, c)) in sys.layout.iter().enumerate() {
                let w = &sol[o..o + c];
                if w.iter().any(|&v| v < -1e-9) {
                    ok = false;
                    break;
                }
                let w: Vec<f64> = w.iter().map(|v| v.max(0.0)).collect();
                dists.push(mix(&sys.verts[i], &w));
            }
            if !ok {
                continue;
            }
            let Ok(x) = MixedProfile::from_weights(dists) else { continue };
            if !(0..n).all(|i| respects_caps(g, i, x.player(i), 1e-12)) {
                continue;
            }
            let r = equilibrium_residual(g, &x, lambda, verts);
            if r <= tol {
                return Some(DiscountedEquilibrium {
                    profile: x,
                    lambda,
                    residual: r,
                });
            }
        }
        None
    };
    if first_only {
        exec::find_first(combos.len(), try_combo)
            .map(|(_, e)| e)
            .into_iter()
            .collect()
    } else {
        exec::map_indexed(combos.len(), try_combo)
            .into_iter()
            .flatten()
            .collect()
    }
}

// Vanishing discount ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanishingLimit {
    pub profile: MixedProfile,
    pub path: Vec<DiscountedEquilibrium>,
    /// Sup-distances between successive profiles.
    pub distances: Vec<f64>,
    pub max_distance: f64,
    pub converged: bool,
}

/// Follows stationary equilibria along a decreasing λ sequence, each time
/// picking the equilibrium closest to the previous one.
pub fn vanishing_discount_limit(
    g: &AbsorbingGame,
    lambdas: &[f64],
    tol: f64,
    seed: u64,
) -> Result<VanishingLimit> {
    if lambdas.len() < 4 {
        return Err(Error::SequenceTooShort);
    }
    if lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("lambda sequence must be decreasing".into()));
    }
    if *lambdas.last().unwrap() > 1e-5 {
        return Err(Error::InvalidArgument("last lambda must be at most 1e-5".into()));
    }
    let mut path: Vec<DiscountedEquilibrium> = Vec::new();
    for &lambda in lambdas {
        let eqs = all_stationary_equilibria(g, lambda, tol, seed)?;
        let pick = match path.last() {
            None => eqs.into_iter().next(),
            Some(prev) => eqs.into_iter().min_by(|a, b| {
                a.profile
                    .distance(&prev.profile)
                    .total_cmp(&b.profile.distance(&prev.profile))
            }),
        };
        match pick {
            Some(e) => path.push(e),
            None => {
                // fall back to the general solver so failures carry a residual
                path.push(stationary_discounted_equilibrium(g, lambda, tol, seed)?);
            }
        }
    }
    let distances: Vec<f64> = path
        .windows(2)
        .map(|w| w[0].profile.distance(&w[1].profile))
        .collect();
    let max_distance = distances.iter().copied().fold(0.0, f64::max);
    let last = *distances.last().unwrap();
    let converged = last < 1e-9 || distances.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    Ok(VanishingLimit {
        profile: path.last().unwrap().profile.clone(),
        path,
        distances,
        max_distance,
        converged,
    })
}

// Min-max ----------------------------------------------------------------------

/// Correlated distribution of the opponents of `player` over ×_{j≠i} A_j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Punishment {
    pub player: usize,
    /// Opponent profiles (actions of players ≠ `player`, in player order)
    /// with positive probability.
    pub support: Vec<(Vec<usize>, f64)>,
}

impl Punishment {
    /// Full profile index for the punished player's action `a` and the
    /// opponent profile `opp`.
    pub fn profile_index(&self, g: &AbsorbingGame, a: usize, opp: &[usize]) -> usize {
        let mut prof = Vec::with_capacity(g.n_players());
        let mut it = opp.iter();
        for j in 0..g.n_players() {
            prof.push(if j == self.player { a } else { *it.next().unwrap() });
        }
        g.encode(&prof)
    }

    /// Stage statistics of every pure action of the punished player.
    pub fn action_stats(&self, g: &AbsorbingGame) -> Vec<StageStats> {
        let n = g.n_players();
        (0..g.n_actions(self.player))
            .map(|a| {
                let mut st = StageStats::zero(n);
                for (opp, w) in &self.support {
                    let idx = self.profile_index(g, a, opp);
                    let pa = g.absorb(idx);
                    let u = g.payoff(idx);
                    st.p += w * pa;
                    for j in 0..n {
                        st.chi_u[j] += w * pa * u[j];
                        st.ubar[j] += w * u[j];
                    }
                }
                st
            })
            .collect()
    }

    /// Best stationary λ-discounted value of the punished player.
    pub fn best_response_value(&self, g: &AbsorbingGame, lambda: f64) -> Result<f64> {
        let stats = self.action_stats(g);
        let verts = strategy_vertices(g, self.player)?;
        Ok(best_vertex(&stats, &verts, self.player, lambda).0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxResult {
    pub player: usize,
    pub lambda: f64,
    pub value: f64,
    pub punishment: Punishment,
}

fn opponent_profiles(g: &AbsorbingGame, i: usize) -> Vec<Vec<usize>> {
    let bounds: Vec<usize> = (0..g.n_players())
        .filter(|&j| j != i)
        .map(|j| g.n_actions(j))
        .collect();
    tuples(&bounds)
}

/// Correlated min-max of player `i` at discount λ: the opponents jointly
/// minimize, player `i` best-responds. The fixed point of the one-state
/// Shapley operator is bracketed by bisection; each operator value is a
/// matrix-game LP.
pub fn minmax(g: &AbsorbingGame, i: usize, lambda: f64, tol: f64) -> Result<MinMaxResult> {
    if i >= g.n_players() {
        return Err(Error::InvalidArgument(format!("no player {i}")));
    }
    check_lambda(lambda)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    let rows = strategy_vertices(g, i)?;
    let opps = opponent_profiles(g, i);
    let others: Vec<usize> = (0..g.n_players()).filter(|&j| j != i).collect();
    let probe = Punishment {
        player: i,
        support: Vec::new(),
    };
    // per pure action a_i and opponent profile c: (P, u_i)
    let cell: Vec<Vec<(f64, f64)>> = (0..g.n_actions(i))
        .map(|a| {
            opps.iter()
                .map(|c| {
                    let idx = probe.profile_index(g, a, c);
                    (g.absorb(idx), g.payoff(idx)[i])
                })
                .collect()
        })
        .collect();
    // caps of opponents become marginal constraints on the joint
    let col_caps: Vec<(Vec<(usize, f64)>, f64)> = g
        .caps()
        .iter()
        .filter(|c| c.player != i)
        .map(|c| {
            let pos = others.iter().position(|&j| j == c.player).unwrap();
            let terms = opps
                .iter()
                .enumerate()
                .filter(|(_, o)| o[pos] == c.action)
                .map(|(k, _)| (k, 1.0))
                .collect();
            (terms, c.max_prob)
        })
        .collect();
    let matrix = |v: f64| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                (0..opps.len())
                    .map(|c| {
                        r.iter()
                            .enumerate()
                            .filter(|(_, w)| **w > 0.0)
                            .map(|(a, w)| {
                                let (p, u) = cell[a][c];
                                w * (lambda * u + (1.0 - lambda) * (p * u + (1.0 - p) * v))
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect()
    };
    let all_u = (0..g.num_profiles()).map(|idx| g.payoff(idx)[i]);
    let (mut lo, mut hi) = all_u.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), u| {
        (l.min(u), h.max(u))
    });
    let mut best_y = None;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let (val, y) = lp::matrix_game_min(&matrix(mid), &col_caps);
        if val > mid {
            lo = mid;
        } else {
            hi = mid;
            best_y = Some(y);
        }
    }
    let y = match best_y {
        Some(y) => y,
        None => lp::matrix_game_min(&matrix(hi), &col_caps).1,
    };
    let support: Vec<(Vec<usize>, f64)> = opps
        .into_iter()
        .zip(y)
        .filter(|(_, w)| *w > 1e-15)
        .collect();
    let s: f64 = support.iter().map(|(_, w)| w).sum();
    let punishment = Punishment {
        player: i,
        support: support.into_iter().map(|(o, w)| (o, w / s)).collect(),
    };
    let value = punishment.best_response_value(g, lambda)?;
    Ok(MinMaxResult {
        player: i,
        lambda,
        value,
        punishment,
    })
}

/// The opponents' side of [`minmax`].
pub fn punishment_profile(g: &AbsorbingGame, i: usize, lambda: f64) -> Result<Punishment> {
    Ok(minmax(g, i, lambda, 1e-9)?.punishment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::ActionCap;

    fn quitting2(u10: [f64; 2], u01: [f64; 2], u11: [f64; 2]) -> AbsorbingGame {
        AbsorbingGame::from_fn(&[2, 2], |a| match (a[0], a[1]) {
            (0, 0) => (0.0, vec![0.0, 0.0]),
            (1, 0) => (1.0, u10.to_vec()),
            (0, 1) => (1.0, u01.to_vec()),
            _ => (1.0, u11.to_vec()),
        })
        .unwrap()
    }

    #[test]
    fn one_player_argmax() {
        let g = AbsorbingGame::from_fn(&[3], |a| (1.0, vec![[0.2, 0.9, 0.5][a[0]]])).unwrap();
        let eq = stationary_discounted_equilibrium(&g, 0.1, 1e-9, 1).unwrap();
        assert_eq!(eq.profile.player(0), &[0.0, 1.0, 0.0]);
        assert_eq!(eq.residual, 0.0);
    }

    #[test]
    fn dominant_profile() {
        let g = AbsorbingGame::from_fn(&[2, 2], |a| {
            let u = if a == [1, 1] { 0.9 } else { 0.1 * (a[0] + a[1]) as f64 };
            (1.0, vec![u, u])
        })
        .unwrap();
        let eq = stationary_discounted_equilibrium(&g, 0.1, 1e-9, 1).unwrap();
        assert_eq!(eq.profile.dists(), &[vec![0.0, 1.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn mixed_quitting_equilibrium() {
        let g = quitting2([1.0, 0.0], [0.0, 1.0], [0.5, 0.5]);
        let eq = stationary_discounted_equilibrium(&g, 0.1, 1e-9, 3).unwrap();
        assert!(eq.residual <= 1e-9);
        let verts = all_vertices(&g).unwrap();
        assert!(equilibrium_residual(&g, &eq.profile, 0.1, &verts) <= 1e-9);
    }

    #[test]
    fn capped_solution_respects_cap() {
        // player 1 would like to put all mass on action 1
        let g = AbsorbingGame::from_fn(&[2, 2], |a| (1.0, vec![0.3, if a[1] == 1 { 0.9 } else { 0.1 }]))
            .unwrap()
            .with_caps(vec![ActionCap { player: 1, action: 1, max_prob: 0.3 }])
            .unwrap();
        let eq = stationary_discounted_equilibrium(&g, 0.1, 1e-9, 1).unwrap();
        assert!(eq.profile.player(1)[1] <= 0.3 + 1e-12);
        assert!((eq.profile.player(1)[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn vanishing_limit_short_sequence() {
        let g = quitting2([1.0, 0.0], [0.0, 1.0], [0.5, 0.5]);
        assert_eq!(
            vanishing_discount_limit(&g, &[0.1], 1e-9, 0).unwrap_err(),
            Error::SequenceTooShort
        );
    }

    #[test]
    fn vanishing_limit_constant_pure() {
        let g = AbsorbingGame::from_fn(&[2, 2], |a| {
            let u = if a == [1, 1] { 0.9 } else { 0.1 * (a[0] + a[1]) as f64 };
            (1.0, vec![u, u])
        })
        .unwrap();
        let v = vanishing_discount_limit(&g, &[1e-2, 1e-3, 1e-4, 1e-5], 1e-9, 0).unwrap();
        assert_eq!(v.max_distance, 0.0);
        assert!(v.converged);
    }

    #[test]
    fn minmax_guaranteed_quit() {
        let g = AbsorbingGame::from_fn(&[2, 2], |a| {
            if a[0] == 1 {
                (1.0, vec![1.0, 0.0])
            } else {
                (0.5, vec![0.2 * a[1] as f64, 0.3])
            }
        })
        .unwrap();
        let m = minmax(&g, 0, 0.01, 1e-10).unwrap();
        assert!((m.value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn minmax_no_quit_is_zero() {
        // player 0 has only a continue action; player 1 can keep play going
        let g = AbsorbingGame::from_fn(&[1, 2], |a| {
            if a[1] == 1 {
                (1.0, vec![0.7, 0.2])
            } else {
                (0.0, vec![0.0, 0.0])
            }
        })
        .unwrap();
        let m = minmax(&g, 0, 0.01, 1e-10).unwrap();
        assert!(m.value.abs() < 1e-8);
        assert_eq!(m.punishment.support, vec![(vec![0], 1.0)]);
    }
}
