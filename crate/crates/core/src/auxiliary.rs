//! Auxiliary games derived from L-shaped and spotted games, and the
//! best-response matrices used to classify them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{l_shape, AbsorbingGame, ActionCap, ActionPartition, LShapeLabeling};
use crate::lcp::{self, LcpVariant, QStatus};
use crate::payoff::{raw_profile_weights, MixedProfile};

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidArgument(format!("{name} = {v} outside [0,1]")));
    }
    Ok(())
}

/// `Γ^{δ1,δ2}`: `a^3` absorbs with probability δ1 and `a^2` with δ2, both
/// with payoff `u(a^4)` when their probability is positive.
pub fn build_delta_game(g: &AbsorbingGame, d1: f64, d2: f64) -> Result<AbsorbingGame> {
    let (_, lab) = l_shape(g)?;
    delta_game(g, &lab, d1, d2)
}

pub(crate) fn delta_game(
    g: &AbsorbingGame,
    lab: &LShapeLabeling,
    d1: f64,
    d2: f64,
) -> Result<AbsorbingGame> {
    check_unit("delta1", d1)?;
    check_unit("delta2", d2)?;
    let mut out = g.clone();
    let u4 = g.payoff(lab.a[3]).to_vec();
    out.set_absorb(lab.a[2], d1);
    if d1 > 0.0 {
        out.set_payoff(lab.a[2], &u4);
    }
    out.set_absorb(lab.a[1], d2);
    if d2 > 0.0 {
        out.set_payoff(lab.a[1], &u4);
    }
    Ok(out)
}

/// Which one-sided auxiliary game: `One` is `Γ^{δ,0}` with Player 2's
/// `c_2^2` capped, `Two` is `Γ^{0,δ}` with Player 1's `c_1^2` capped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    One,
    Two,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedGame {
    /// The auxiliary game; the cap is installed when it binds (α < 1).
    pub game: AbsorbingGame,
    pub delta: f64,
    pub side: Side,
    pub cap: ActionCap,
    pub labeling: LShapeLabeling,
}

pub fn build_restricted_game(
    g: &AbsorbingGame,
    delta: f64,
    side: Side,
    alpha: f64,
) -> Result<RestrictedGame> {
    let (_, lab) = l_shape(g)?;
    restricted_game(g, &lab, delta, side, alpha)
}

pub(crate) fn restricted_game(
    g: &AbsorbingGame,
    lab: &LShapeLabeling,
    delta: f64,
    side: Side,
    alpha: f64,
) -> Result<RestrictedGame> {
    check_unit("alpha", alpha)?;
    let (base, cap) = match side {
        Side::One => (
            delta_game(g, lab, delta, 0.0)?,
            ActionCap {
                player: lab.p2,
                action: lab.c2[1],
                max_prob: alpha,
            },
        ),
        Side::Two => (
            delta_game(g, lab, 0.0, delta)?,
            ActionCap {
                player: lab.p1,
                action: lab.c1[1],
                max_prob: alpha,
            },
        ),
    };
    let game = if alpha < 1.0 {
        base.with_caps(vec![cap])?
    } else {
        base
    };
    Ok(RestrictedGame {
        game,
        delta,
        side,
        cap,
        labeling: lab.clone(),
    })
}

/// `Γ(a′)`: every profile other than `a′` that does not absorb in Γ is
/// made to absorb surely, so `a′` is the only continue profile.
pub fn build_spotted_aux(g: &AbsorbingGame, a_prime: &[usize]) -> Result<AbsorbingGame> {
    let target = g.try_encode(a_prime)?;
    if g.is_absorbing(target) {
        return Err(Error::ProfileIsAbsorbing(a_prime.to_vec()));
    }
    let mut out = g.clone();
    for idx in 0..g.num_profiles() {
        if idx != target && !g.is_absorbing(idx) {
            out.set_absorb(idx, 1.0);
        }
    }
    Ok(out)
}

/// Γ with the payoff of each non-absorbing profile replaced by its witness.
/// The result carries a relaxed payoff range.
pub fn build_witness_game(
    g: &AbsorbingGame,
    witnesses: &[(Vec<usize>, Vec<f64>)],
) -> Result<AbsorbingGame> {
    let n = g.n_players();
    let mut table: Vec<Option<&Vec<f64>>> = vec![None; g.num_profiles()];
    for (prof, q) in witnesses {
        let idx = g.try_encode(prof)?;
        if q.len() != n {
            return Err(Error::Dimension(format!(
                "witness for {prof:?} has length {}, expected {n}",
                q.len()
            )));
        }
        table[idx] = Some(q);
    }
    let mut out = g.clone().relax();
    for idx in 0..g.num_profiles() {
        if g.is_absorbing(idx) {
            continue;
        }
        match table[idx] {
            Some(q) => out.set_payoff(idx, q),
            None => return Err(Error::MissingWitness(g.decode(idx))),
        }
    }
    out.validate()?;
    Ok(out)
}

// Homotopy ---------------------------------------------------------------------

/// Witness vectors of the three non-Q matrix sets: `q` for `Γ^{1,1}`, `q1`
/// for `Γ^{1,0}` and `q2` for `Γ^{0,1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomotopyWitnesses {
    pub q: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomotopyPoint {
    pub omega: f64,
    pub theta: f64,
    pub witnesses: HomotopyWitnesses,
    /// Absorption probabilities installed at `a^3` and `a^2`.
    pub delta: (f64, f64),
    pub restriction: Option<ActionCap>,
    /// Payoff of every non-absorbing profile.
    pub continue_payoff: Vec<f64>,
    pub game: AbsorbingGame,
}

/// Point `(ω, θ)` of the game-valued path from `Γ^{ω,0}_0` (θ = −1) through
/// `Γ^{ω,0}`, `Γ^{0,ω}` (θ = 0, 1) to `Γ^{0,ω}_0` (θ = 2).
pub fn build_homotopy_game(
    g: &AbsorbingGame,
    w: &HomotopyWitnesses,
    omega: f64,
    theta: f64,
) -> Result<HomotopyPoint> {
    let (_, lab) = l_shape(g)?;
    homotopy_game(g, &lab, w, omega, theta)
}

pub(crate) fn homotopy_game(
    g: &AbsorbingGame,
    lab: &LShapeLabeling,
    w: &HomotopyWitnesses,
    omega: f64,
    theta: f64,
) -> Result<HomotopyPoint> {
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(Error::InvalidArgument(format!("omega = {omega} outside (0,1]")));
    }
    if !(-1.0..=2.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!("theta = {theta} outside [-1,2]")));
    }
    let n = g.n_players();
    for v in [&w.q, &w.q1, &w.q2] {
        if v.len() != n {
            return Err(Error::Dimension(format!(
                "witness has length {}, expected {n}",
                v.len()
            )));
        }
    }
    let blend = |a: f64, x: &[f64], b: f64, y: &[f64]| -> Vec<f64> {
        x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()
    };
    let (base, restriction, payoff) = if theta < 0.0 {
        let r = restricted_game(g, lab, omega, Side::One, 1.0 + theta)?;
        let cap = (1.0 + theta < 1.0).then_some(r.cap);
        (r.game, cap, blend(-theta, &w.q1, 1.0 + theta, &w.q))
    } else if theta <= 1.0 {
        let d = delta_game(g, lab, (1.0 - theta) * omega, theta * omega)?;
        (d, None, w.q.clone())
    } else {
        let r = restricted_game(g, lab, omega, Side::Two, 2.0 - theta)?;
        let cap = (2.0 - theta < 1.0).then_some(r.cap);
        (r.game, cap, blend(theta - 1.0, &w.q2, 2.0 - theta, &w.q))
    };
    let mut game = base.relax();
    for idx in 0..game.num_profiles() {
        if !game.is_absorbing(idx) {
            game.set_payoff(idx, &payoff);
        }
    }
    game.validate()?;
    let delta = (game.absorb(lab.a[2]), game.absorb(lab.a[1]));
    Ok(HomotopyPoint {
        omega,
        theta,
        witnesses: w.clone(),
        delta,
        restriction,
        continue_payoff: payoff,
        game,
    })
}

// Best-response matrices ---------------------------------------------------------

/// Absorption-weighted payoff of `(a_i, c_{-i})`: the payoff conditional on
/// absorption. `None` when the pair never absorbs.
pub fn conditional_payoff(
    g: &AbsorbingGame,
    c: &MixedProfile,
    i: usize,
    a_i: usize,
) -> Option<Vec<f64>> {
    let n = g.n_players();
    let mut d = c.dists().to_vec();
    let mut e = vec![0.0; g.n_actions(i)];
    e[a_i] = 1.0;
    d[i] = e;
    let mut mass = 0.0;
    let mut acc = vec![0.0; n];
    for (idx, w) in raw_profile_weights(g, &d) {
        let chi = w * g.absorb(idx);
        mass += chi;
        for (j, u) in g.payoff(idx).iter().enumerate() {
            acc[j] += chi * u;
        }
    }
    (mass > 0.0).then(|| acc.iter().map(|v| v / mass).collect())
}

/// All best-response matrices of a quitting absorbing game at a continue
/// profile. Players without quitting actions are left out; `players` lists
/// the players indexing rows and columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponseMatrices {
    pub players: Vec<usize>,
    /// One matrix per selection of optimal pure quitting actions.
    pub matrices: Vec<Vec<Vec<f64>>>,
    /// `selections[m][k]`: quitting action of `players[k]` in matrix `m`.
    pub selections: Vec<Vec<usize>>,
    /// True when some player was dropped for lack of a quitting action.
    pub reduced: bool,
}

const TIE_TOL: f64 = 1e-12;

pub fn best_response_matrix_set(
    g: &AbsorbingGame,
    part: &ActionPartition,
    c: &MixedProfile,
) -> Result<BestResponseMatrices> {
    c.check_shape(g)?;
    let n = g.n_players();
    for i in 0..n {
        for a in c.support(i) {
            if part.is_quit(i, a) {
                return Err(Error::InvalidArgument(format!(
                    "continue profile puts weight on quitting action {a} of player {i}"
                )));
            }
        }
    }
    let players: Vec<usize> = (0..n)
        .filter(|&i| !part.quitting_actions[i].is_empty())
        .collect();
    if players.is_empty() {
        return Err(Error::NoQuittingActions);
    }
    // per player: the optimal quitting actions and their payoff vectors
    let mut options: Vec<Vec<(usize, Vec<f64>)>> = Vec::new();
    for &i in &players {
        let mut cands: Vec<(usize, Vec<f64>)> = Vec::new();
        for &q in &part.quitting_actions[i] {
            let u = conditional_payoff(g, c, i, q)
                .ok_or_else(|| Error::Undefined(format!("quit {q} of player {i} never absorbs")))?;
            cands.push((q, u));
        }
        let best = cands.iter().map(|(_, u)| u[i]).fold(f64::NEG_INFINITY, f64::max);
        options.push(cands.into_iter().filter(|(_, u)| u[i] >= best - TIE_TOL).collect());
    }
    let counts: Vec<usize> = options.iter().map(Vec::len).collect();
    let mut matrices = Vec::new();
    let mut selections = Vec::new();
    for pick in tuples(&counts) {
        let k = players.len();
        let mut m = vec![vec![0.0; k]; k];
        for (col, &choice) in pick.iter().enumerate() {
            let u = &options[col][choice].1;
            for (row, &j) in players.iter().enumerate() {
                m[row][col] = u[j];
            }
        }
        selections.push(pick.iter().enumerate().map(|(col, &ch)| options[col][ch].0).collect());
        matrices.push(m);
    }
    Ok(BestResponseMatrices {
        reduced: players.len() < n,
        players,
        matrices,
        selections,
    })
}

fn tuples(bounds: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &b in bounds {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..b).map(move |x| {
                    let mut t = t.clone();
                    t.push(x);
                    t
                })
            })
            .collect();
    }
    out
}

/// Best absorbing deviation of each player from the non-absorbing profile
/// `a`; column `i` is `u(b_i(a), a_{-i})`.
pub fn best_deviation_matrix(g: &AbsorbingGame, a: &[usize]) -> Result<Vec<Vec<f64>>> {
    let idx = g.try_encode(a)?;
    if g.is_absorbing(idx) {
        return Err(Error::ProfileIsAbsorbing(a.to_vec()));
    }
    let n = g.n_players();
    let mut r = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut best: Option<(f64, usize)> = None;
        let mut tie = false;
        for b in (0..g.n_actions(i)).filter(|&b| b != a[i]) {
            let v = g.payoff(g.with_action(idx, i, b))[i];
            match best {
                Some((bv, _)) if v == bv => tie = true,
                Some((bv, _)) if v < bv => {}
                _ => {
                    best = Some((v, b));
                    tie = false;
                }
            }
        }
        let Some((_, b)) = best else {
            return Err(Error::InvalidArgument(format!("player {i} has a single action")));
        };
        if tie {
            return Err(Error::NotGeneric(format!(
                "player {i} has tied best deviations from {a:?}"
            )));
        }
        let u = g.payoff(g.with_action(idx, i, b));
        for j in 0..n {
            r[j][i] = u[j];
        }
    }
    Ok(r)
}

// QL / NQL ---------------------------------------------------------------------------

/// A Q-certified best-response matrix of `Γ^{δ1,δ2}` at `continue_profile`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QlEvidence {
    pub delta: (f64, f64),
    pub continue_profile: MixedProfile,
    pub players: Vec<usize>,
    pub matrix: Vec<Vec<f64>>,
    pub selection: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum LClass {
    Ql(QlEvidence),
    Nql(HomotopyWitnesses),
    Unresolved { reason: String },
}

/// The three zero/positive patterns of (δ1, δ2); by scale invariance of the
/// matrix sets, one representative each suffices.
pub const QL_PATTERNS: [(f64, f64); 3] = [(0.5, 0.0), (0.0, 0.5), (0.5, 0.5)];
const QL_GRID: usize = 20;

/// Continue profiles tried for a pattern: the one player with two continue
/// actions mixes over a grid, everyone else plays their continue action.
/// The grid starts with full weight on the mixer's second continue action.
fn continue_grid(
    g: &AbsorbingGame,
    part: &ActionPartition,
    lab: &LShapeLabeling,
) -> Vec<MixedProfile> {
    let n = g.n_players();
    let base: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut d = vec![0.0; g.n_actions(i)];
            d[part.continue_actions[i][0]] = 1.0;
            d
        })
        .collect();
    let mixer = (0..n).find(|&i| part.continue_actions[i].len() >= 2);
    match mixer {
        None => vec![MixedProfile::new(base).unwrap()],
        Some(i) => {
            let (lo, hi) = if i == lab.p2 {
                (lab.c2[0], lab.c2[1])
            } else {
                (lab.c1[0], lab.c1[1])
            };
            (0..=QL_GRID)
                .rev()
                .map(|k| {
                    let t = k as f64 / QL_GRID as f64;
                    let mut d = base.clone();
                    d[i] = vec![0.0; g.n_actions(i)];
                    d[i][lo] = 1.0 - t;
                    d[i][hi] += t;
                    MixedProfile::new(d).unwrap()
                })
                .collect()
        }
    }
}

/// `c = a^1` as a mixed profile.
pub(crate) fn a1_profile(g: &AbsorbingGame, lab: &LShapeLabeling) -> MixedProfile {
    MixedProfile::pure(g, &g.decode(lab.a[0]))
}

/// Witness of a non-Q matrix set (padded with zeros for players without
/// quitting actions), or `None` if some matrix in the set is Q.
pub(crate) fn set_witness(
    m: &BestResponseMatrices,
    n: usize,
    density: usize,
) -> Result<Option<Vec<f64>>> {
    let mut first = None;
    for r in &m.matrices {
        match lcp::find_witness_with(r, density, lcp::DEFAULT_TOL, LcpVariant::Dominant)? {
            Some(q) => {
                if first.is_none() {
                    first = Some(q);
                }
            }
            None => return Ok(None),
        }
    }
    Ok(first.map(|q| {
        let mut full = vec![0.0; n];
        for (k, &i) in m.players.iter().enumerate() {
            full[i] = q[k];
        }
        full
    }))
}

fn same_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-12))
}

/// Q-certified best-response matrices over the QL patterns and continue
/// grids, in search order, at most `limit` of them. A matrix already found
/// for the same pattern is not repeated.
pub fn ql_evidences(g: &AbsorbingGame, density: usize, limit: usize) -> Result<Vec<QlEvidence>> {
    let (_, lab) = l_shape(g)?;
    let mut out = Vec::new();
    for &(d1, d2) in &QL_PATTERNS {
        let aux = delta_game(g, &lab, d1, d2)?;
        let part = crate::game::derive_action_partition(&aux)?;
        for c in continue_grid(&aux, &part, &lab) {
            let set = best_response_matrix_set(&aux, &part, &c)?;
            for (r, sel) in set.matrices.iter().zip(&set.selections) {
                let seen = out.iter().any(|e: &QlEvidence| {
                    e.delta == (d1, d2) && e.selection == *sel && same_matrix(&e.matrix, r)
                });
                if seen {
                    continue;
                }
                let v = lcp::is_q_matrix_with(r, density, lcp::DEFAULT_TOL, LcpVariant::Dominant, &[])?;
                if v.status == QStatus::QCertifiedNumerically {
                    out.push(QlEvidence {
                        delta: (d1, d2),
                        continue_profile: c.clone(),
                        players: set.players.clone(),
                        matrix: r.clone(),
                        selection: sel.clone(),
                    });
                    if out.len() >= limit {
                        return Ok(out);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Splits an L-shaped game into QL (some best-response matrix of an
/// auxiliary game is Q) and NQL (the matrix sets of `Γ^{1,0}`, `Γ^{0,1}`,
/// `Γ^{1,1}` at `a^1` all own witnesses). QL takes priority.
pub fn classify_ql_nql(g: &AbsorbingGame, density: usize) -> Result<LClass> {
    let (_, lab) = l_shape(g)?;
    let n = g.n_players();
    if let Some(ev) = ql_evidences(g, density, 1)?.pop() {
        return Ok(LClass::Ql(ev));
    }
    let c = a1_profile(g, &lab);
    let mut found = Vec::new();
    for (d1, d2) in [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
        let aux = delta_game(g, &lab, d1, d2)?;
        let part = crate::game::derive_action_partition(&aux)?;
        let set = best_response_matrix_set(&aux, &part, &c)?;
        match set_witness(&set, n, density)? {
            Some(q) => found.push(q),
            None => {
                return Ok(LClass::Unresolved {
                    reason: format!(
                        "no Q-certified matrix on the QL grid, yet Γ^{{{d1},{d2}}} at a^1 has a Q matrix"
                    ),
                })
            }
        }
    }
    let q = found.pop().unwrap();
    let q2 = found.pop().unwrap();
    let q1 = found.pop().unwrap();
    Ok(LClass::Nql(HomotopyWitnesses { q, q1, q2 }))
}
