//! Synthesis of sunspot phase plans and almost stationary profiles. Every
//! object is certified by the verifier before it is returned.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::auxiliary::{
    best_deviation_matrix, best_response_matrix_set, build_spotted_aux, build_witness_game,
    classify_ql_nql, delta_game, homotopy_game, ql_evidences, set_witness, HomotopyWitnesses,
    LClass, QlEvidence, Side,
};
use crate::equilibrium::{all_stationary_equilibria, punishment_profile, vanishing_discount_limit, Punishment};
use crate::error::{Error, Result};
use crate::game::{
    classify, derive_action_partition, is_relaxed_general_quitting_with,
    l_shape, perturb_absorbing_generic, AbsorbingGame, ActionPartition, LShapeLabeling,
};
use crate::lcp::{self, LcpVariant, QStatus};
use crate::lp::{Cmp, Lp, LpOutcome};
use crate::payoff::{absorb_prob, rho, MixedProfile};
use crate::strategy::{Monitor, Phase, Quitter, Strategy, StrategyKind};
use crate::verify::{certify_uniform, CertificationReport, DEFAULT_LAMBDA_GRID, DEFAULT_T_GRID};

/// Discount factor at which punishments are computed.
pub const PUNISH_LAMBDA: f64 = 1e-4;
const VANISHING_LAMBDAS: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];
const EQ_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub epsilon: f64,
    pub lambda_grid: Vec<f64>,
    pub t_grid: Vec<u64>,
    pub density: usize,
    pub seed: u64,
    /// Wall-clock budget in seconds; `None` is unbounded.
    pub budget_secs: Option<f64>,
    pub omega: f64,
    pub path_lambda: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            t_grid: DEFAULT_T_GRID.to_vec(),
            density: lcp::DEFAULT_DENSITY,
            seed: 0,
            budget_secs: None,
            omega: 1e-3,
            path_lambda: 1e-4,
        }
    }
}

/// ρ before and after transforming one phase of an auxiliary plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoMatch {
    pub phase: usize,
    pub aux_rho: f64,
    pub rho: f64,
    pub alpha_aux: f64,
    pub m_aux: u64,
    pub alpha: f64,
    pub m: u64,
    /// Weight of the companion's second continue action.
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synthesis {
    pub strategy: Strategy,
    pub report: CertificationReport,
    #[serde(default)]
    pub rho_matches: Vec<RhoMatch>,
    pub diagnostics: Vec<String>,
}

struct Budget {
    start: Instant,
    limit: Option<f64>,
}

impl Budget {
    fn new(opts: &SynthOptions) -> Self {
        Self {
            start: Instant::now(),
            limit: opts.budget_secs,
        }
    }

    fn check(&self, diags: &[String], what: &str) -> Result<()> {
        match self.limit {
            Some(l) if self.start.elapsed().as_secs_f64() > l => Err(failed(
                diags,
                &format!("budget of {l}s exhausted during {what}"),
            )),
            _ => Ok(()),
        }
    }
}

fn failed(diags: &[String], last: &str) -> Error {
    let mut all = diags.to_vec();
    all.push(last.to_string());
    Error::SynthesisFailed(all.join("; "))
}

fn check_options(opts: &SynthOptions) -> Result<()> {
    if !(opts.epsilon > 0.0 && opts.epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon {} outside (0,1)", opts.epsilon)));
    }
    Ok(())
}

// Monitoring -------------------------------------------------------------------------

fn hoeffding_union(t: u64, eps: f64) -> f64 {
    let mut s = 0.0;
    let mut k = 0;
    loop {
        let term = 2.0 * (-2.0 * t as f64 * 2f64.powi(k) * eps * eps).exp();
        s += term;
        if term < 1e-18 || k > 62 {
            return s;
        }
        k += 1;
    }
}

/// Smallest `T` with `Σ_k 2·exp(−2·T·2^k·ε′²) ≤ ε′`: a frequency test with
/// checkpoints at `T, 2T, 4T, …` errs with probability at most ε′.
pub fn monitoring_window(eps: f64) -> u64 {
    assert!(eps > 0.0, "tolerance must be positive");
    let ok = |t: u64| hoeffding_union(t, eps) <= eps;
    let mut hi = 1u64;
    while !ok(hi) {
        hi *= 2;
    }
    let mut lo = hi / 2;
    if lo == 0 {
        return 1;
    }
    // ok(hi), !ok(lo)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

pub fn attach_monitoring(
    player: usize,
    action: usize,
    phases: Vec<usize>,
    target: f64,
    tolerance: f64,
) -> Result<Monitor> {
    if !(tolerance > 0.0) {
        return Err(Error::InvalidArgument("monitoring tolerance must be positive".into()));
    }
    Ok(Monitor {
        player,
        action,
        phases,
        target,
        tolerance,
        window: monitoring_window(tolerance),
    })
}

// Shared pieces ---------------------------------------------------------------------------

fn punishments(g: &AbsorbingGame) -> Result<Vec<Punishment>> {
    (0..g.n_players())
        .map(|i| punishment_profile(g, i, PUNISH_LAMBDA))
        .collect()
}

fn try_certify(
    g: &AbsorbingGame,
    s: Strategy,
    opts: &SynthOptions,
    rho_matches: Vec<RhoMatch>,
    diags: &mut Vec<String>,
) -> Result<Option<Synthesis>> {
    let report = certify_uniform(g, &s, opts.epsilon, &opts.lambda_grid, &opts.t_grid)?;
    if report.pass {
        Ok(Some(Synthesis {
            strategy: s,
            report,
            rho_matches,
            diagnostics: diags.clone(),
        }))
    } else {
        diags.push(format!(
            "{}: certification max gain {:.4e} > {}",
            s.route, report.max_gain, opts.epsilon
        ));
        Ok(None)
    }
}

fn pure_dist(k: usize, a: usize) -> Vec<f64> {
    let mut d = vec![0.0; k];
    d[a] = 1.0;
    d
}

fn stationary_with_punishment(
    x: MixedProfile,
    eps: f64,
    pun: Vec<Punishment>,
    route: &str,
) -> Strategy {
    Strategy {
        kind: StrategyKind::AlmostStationary,
        epsilon: eps,
        phases: vec![Phase::stationary(x)],
        cycle_start: None,
        monitoring: Vec::new(),
        punishment: pun,
        route: route.into(),
    }
}

/// Vanishing-discount limit of the witness game, kept only if it absorbs in Γ.
fn absorbing_limit(
    g: &AbsorbingGame,
    witness_game: &AbsorbingGame,
    seed: u64,
    diags: &mut Vec<String>,
) -> Result<Option<MixedProfile>> {
    let lim = match vanishing_discount_limit(witness_game, &VANISHING_LAMBDAS, EQ_TOL, seed) {
        Ok(l) => l,
        Err(e) => {
            diags.push(format!("vanishing-discount limit failed: {e}"));
            return Ok(None);
        }
    };
    let p = absorb_prob(g, &lim.profile);
    if p > 1e-12 {
        Ok(Some(lim.profile))
    } else {
        diags.push("vanishing-discount limit does not absorb".into());
        Ok(None)
    }
}

// Quitting plans ---------------------------------------------------------------------------

/// One column of a best-response matrix: who quits, how, and what it pays.
#[derive(Debug, Clone)]
struct Column {
    player: usize,
    action: usize,
    /// Absorption probability of the quit against `c_{-i}`.
    p_abs: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    /// A single column that every player weakly prefers to their own quit.
    Dominant(usize),
    /// Cyclic phases: column `seq[t]` absorbs with total probability `rho[t]`.
    Cycle { seq: Vec<usize>, rho: Vec<f64> },
}

/// Continuation payoffs `W^t` at the start of each phase of a cycle.
fn cycle_values(r: &[Vec<f64>], seq: &[usize], rho: &[f64]) -> Vec<Vec<f64>> {
    let m = r.len();
    let l = seq.len();
    (0..l)
        .map(|t0| {
            let mut acc = vec![0.0; m];
            let mut alive = 1.0;
            for s in 0..l {
                let t = (t0 + s) % l;
                for (j, a) in acc.iter_mut().enumerate() {
                    *a += alive * rho[t] * r[j][seq[t]];
                }
                alive *= 1.0 - rho[t];
            }
            acc.iter().map(|v| v / (1.0 - alive)).collect()
        })
        .collect()
}

/// Indifference of each phase's quitter: `W^{t+1}_{k_t} − R_{k_t k_t}`.
fn cycle_residual(r: &[Vec<f64>], seq: &[usize], rho: &[f64]) -> Vec<f64> {
    let w = cycle_values(r, seq, rho);
    let l = seq.len();
    (0..l)
        .map(|t| w[(t + 1) % l][seq[t]] - r[seq[t]][seq[t]])
        .collect()
}

fn newton_cycle(r: &[Vec<f64>], seq: &[usize], start: &[f64]) -> Option<Vec<f64>> {
    const LO: f64 = 1e-9;
    let l = seq.len();
    let mut x = start.to_vec();
    let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    for _ in 0..60 {
        let f = cycle_residual(r, seq, &x);
        if norm(&f) < 1e-12 {
            return Some(x);
        }
        let mut jac = DMatrix::zeros(l, l);
        for c in 0..l {
            let h = 1e-7 * x[c].max(1e-3);
            let mut xp = x.clone();
            xp[c] += h;
            let fp = cycle_residual(r, seq, &xp);
            for row in 0..l {
                jac[(row, c)] = (fp[row] - f[row]) / h;
            }
        }
        let step = jac.lu().solve(&(-DVector::from_vec(f.clone())))?;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = (0..l).map(|k| x[k] + t * step[k]).collect();
            if cand.iter().all(|&v| v > LO && v < 1.0 - LO)
                && norm(&cycle_residual(r, seq, &cand)) < norm(&f)
            {
                x = cand;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return None;
        }
    }
    (norm(&cycle_residual(r, seq, &x)) < 1e-12).then_some(x)
}

fn cycle_feasible(r: &[Vec<f64>], seq: &[usize], rho: &[f64]) -> bool {
    let w = cycle_values(r, seq, rho);
    w.iter().all(|wt| (0..r.len()).all(|j| wt[j] >= r[j][j] - 1e-9))
}

/// Sequences of length `l` over `m` columns: consecutive entries differ
/// (cyclically) and the first entry is the smallest.
fn cycle_sequences(m: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; l];
    fn rec(m: usize, l: usize, pos: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos == l {
            if cur[l - 1] != cur[0] {
                out.push(cur.clone());
            }
            return;
        }
        for k in 0..m {
            if (pos > 0 && k == cur[pos - 1]) || (pos > 0 && k < cur[0]) {
                continue;
            }
            cur[pos] = k;
            rec(m, l, pos + 1, cur, out);
        }
    }
    rec(m, l, 0, &mut cur, &mut out);
    out
}

/// Stationary support weights: `z ≥ 0`, `Σz = 1`, `(Rz)_k = R_kk` on the
/// support and `(Rz)_j ≥ R_jj` elsewhere.
fn support_weights(r: &[Vec<f64>], support: &[usize]) -> Option<Vec<f64>> {
    let m = r.len();
    let mut lp = Lp::minimize();
    let vars: Vec<usize> = support.iter().map(|_| lp.var(0.0, 0.0, 1.0)).collect();
    lp.constraint(vars.iter().map(|&v| (v, 1.0)).collect(), Cmp::Eq, 1.0);
    for j in 0..m {
        let terms = support.iter().zip(&vars).map(|(&k, &v)| (v, r[j][k])).collect();
        let cmp = if support.contains(&j) { Cmp::Eq } else { Cmp::Ge };
        lp.constraint(terms, cmp, r[j][j]);
    }
    match lp.solve() {
        LpOutcome::Optimal { x, .. } => Some(x),
        _ => None,
    }
}

/// Terminal structures of a best-response matrix, in search order:
/// dominant columns, stationary supports realized as cycles, then short
/// cycles solved from a grid of starts.
fn plan_shapes(r: &[Vec<f64>], max_cycles: usize) -> Vec<Shape> {
    let m = r.len();
    let mut out = Vec::new();
    for k in 0..m {
        if (0..m).all(|j| r[j][k] >= r[j][j] - 1e-12) {
            out.push(Shape::Dominant(k));
        }
    }
    let mut cycles: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
    let push = |seq: Vec<usize>, rho: Vec<f64>, cycles: &mut Vec<(Vec<usize>, Vec<f64>)>| {
        let dup = cycles.iter().any(|(s, p)| {
            *s == seq && p.iter().zip(&rho).all(|(a, b)| (a - b).abs() < 1e-7)
        });
        if !dup && cycle_feasible(r, &seq, &rho) {
            cycles.push((seq, rho));
        }
    };
    if m <= 8 {
        for mask in 1u32..(1 << m) {
            let support: Vec<usize> = (0..m).filter(|&k| mask >> k & 1 == 1).collect();
            if support.len() < 2 {
                continue;
            }
            if let Some(z) = support_weights(r, &support) {
                for mu in [0.2, 0.5] {
                    let start: Vec<f64> = z.iter().map(|w| (mu * w).clamp(1e-3, 0.9)).collect();
                    if let Some(rho) = newton_cycle(r, &support, &start) {
                        push(support.clone(), rho, &mut cycles);
                    }
                }
            }
        }
    }
    let grid = [0.1, 0.3, 0.5, 0.7, 0.9];
    for l in 2..=4usize {
        for seq in cycle_sequences(m, l) {
            for code in 0..grid.len().pow(l as u32) {
                if cycles.len() >= max_cycles {
                    break;
                }
                let mut c = code;
                let start: Vec<f64> = (0..l)
                    .map(|_| {
                        let v = grid[c % grid.len()];
                        c /= grid.len();
                        v
                    })
                    .collect();
                if let Some(rho) = newton_cycle(r, &seq, &start) {
                    push(seq.clone(), rho, &mut cycles);
                }
            }
        }
    }
    out.extend(cycles.into_iter().map(|(seq, rho)| Shape::Cycle { seq, rho }));
    out
}

/// Per-stage probability and length realizing total absorption `target`
/// with per-stage quit probability at most `alpha_max`.
pub fn discretize(target: f64, p_abs: f64, alpha_max: f64) -> (f64, u64) {
    let ln_keep = (-target).ln_1p();
    let m = (ln_keep / (-alpha_max * p_abs).ln_1p()).ceil().max(1.0) as u64;
    let alpha = -(ln_keep / m as f64).exp_m1() / p_abs;
    (alpha.min(alpha_max), m)
}

fn realize(c: &MixedProfile, cols: &[Column], shape: &Shape, alpha_max: f64) -> (Vec<Phase>, Option<usize>) {
    match shape {
        Shape::Dominant(k) => (
            vec![Phase {
                profile: c.clone(),
                duration: None,
                quitter: Some(Quitter {
                    player: cols[*k].player,
                    action: cols[*k].action,
                    alpha: alpha_max,
                }),
            }],
            None,
        ),
        Shape::Cycle { seq, rho } => {
            let phases = seq
                .iter()
                .zip(rho)
                .map(|(&k, &r)| {
                    let (alpha, m) = discretize(r, cols[k].p_abs, alpha_max);
                    Phase {
                        profile: c.clone(),
                        duration: Some(m),
                        quitter: Some(Quitter {
                            player: cols[k].player,
                            action: cols[k].action,
                            alpha,
                        }),
                    }
                })
                .collect();
            (phases, Some(0))
        }
    }
}

/// A phase plan of the quitting game `aux` at continue profile `c`, for one
/// best-response matrix.
struct QuitPlan {
    phases: Vec<Phase>,
    cycle_start: Option<usize>,
    label: String,
}

fn quit_plans(
    aux: &AbsorbingGame,
    c: &MixedProfile,
    players: &[usize],
    matrix: &[Vec<f64>],
    selection: &[usize],
    eps: f64,
) -> Vec<QuitPlan> {
    let cols: Vec<Column> = players
        .iter()
        .zip(selection)
        .map(|(&i, &q)| Column {
            player: i,
            action: q,
            p_abs: absorb_prob(aux, &c.with_player(i, pure_dist(aux.n_actions(i), q))),
        })
        .collect();
    let alpha_max = 0.99 * eps;
    plan_shapes(matrix, 12)
        .into_iter()
        .map(|shape| {
            let label = match &shape {
                Shape::Dominant(k) => format!("dominant column {k}"),
                Shape::Cycle { seq, .. } => format!("cycle {seq:?}"),
            };
            let (phases, cycle_start) = realize(c, &cols, &shape, alpha_max);
            QuitPlan {
                phases,
                cycle_start,
                label,
            }
        })
        .collect()
}

fn plan_strategy(plan: QuitPlan, eps: f64, pun: Vec<Punishment>, route: String) -> Strategy {
    Strategy {
        kind: StrategyKind::Sunspot,
        epsilon: eps,
        phases: plan.phases,
        cycle_start: plan.cycle_start,
        monitoring: Vec::new(),
        punishment: pun,
        route,
    }
}

// General quitting ---------------------------------------------------------------------

pub fn synth_general_quitting(g: &AbsorbingGame, opts: &SynthOptions) -> Result<Synthesis> {
    check_options(opts)?;
    let part = derive_action_partition(g)?;
    if part.quitting_actions.iter().all(Vec::is_empty) {
        return Err(Error::NoQuittingActions);
    }
    if !is_relaxed_general_quitting_with(g, &part) {
        return Err(Error::Unsupported("not a general quitting game".into()));
    }
    let budget = Budget::new(opts);
    let mut diags = Vec::new();
    let pun = punishments(g)?;
    let conts: Vec<usize> = part
        .continue_profiles(g)
        .into_iter()
        .filter(|&idx| !g.is_absorbing(idx))
        .collect();
    // Q branch: any continue profile with a Q-certified matrix
    let mut witnesses = Vec::new();
    for &idx in &conts {
        let c = MixedProfile::pure(g, &g.decode(idx));
        let set = best_response_matrix_set(g, &part, &c)?;
        for (r, sel) in set.matrices.iter().zip(&set.selections) {
            budget.check(&diags, "general quitting Q branch")?;
            let v = lcp::is_q_matrix_with(r, opts.density, lcp::DEFAULT_TOL, LcpVariant::Dominant, &[])?;
            if v.status != QStatus::QCertifiedNumerically {
                continue;
            }
            let plans = quit_plans(g, &c, &set.players, r, sel, opts.epsilon);
            if plans.is_empty() {
                diags.push(format!("profile {:?}: Q matrix without a terminal structure", g.decode(idx)));
            }
            for plan in plans {
                budget.check(&diags, "general quitting certification")?;
                let route = format!("general-quitting/{}", plan.label);
                let s = plan_strategy(plan, opts.epsilon, pun.clone(), route);
                if let Some(out) = try_certify(g, s, opts, Vec::new(), &mut diags)? {
                    return Ok(out);
                }
            }
        }
        match set_witness(&set, g.n_players(), opts.density)? {
            Some(q) => witnesses.push((g.decode(idx), q)),
            None => diags.push(format!("profile {:?}: some matrix is Q", g.decode(idx))),
        }
    }
    // non-Q branch
    if witnesses.len() == conts.len() {
        let wg = build_witness_game(g, &witnesses)?;
        budget.check(&diags, "vanishing-discount limit")?;
        if let Some(x) = absorbing_limit(g, &wg, opts.seed, &mut diags)? {
            let s = stationary_with_punishment(x, opts.epsilon, pun, "general-quitting/witness");
            if let Some(out) = try_certify(g, s, opts, Vec::new(), &mut diags)? {
                return Ok(out);
            }
        }
    } else {
        diags.push("non-Q branch skipped: not every continue profile owns a witness".into());
    }
    Err(failed(&diags, "general quitting: no certified plan"))
}

// Spotted games ------------------------------------------------------------------------

pub fn synth_spotted(g: &AbsorbingGame, opts: &SynthOptions) -> Result<Synthesis> {
    check_options(opts)?;
    let cls = classify(g);
    if !cls.spotted {
        return Err(Error::NotSpotted);
    }
    if !cls.positive {
        return Err(Error::InvalidArgument("spotted synthesis needs a positive recursive game".into()));
    }
    let budget = Budget::new(opts);
    let mut diags = Vec::new();
    let non_abs: Vec<Vec<usize>> = (0..g.num_profiles())
        .filter(|&idx| !g.is_absorbing(idx))
        .map(|idx| g.decode(idx))
        .collect();
    if non_abs.is_empty() {
        return Err(Error::InvalidArgument("every profile absorbs".into()));
    }
    let deviation_matrices = |h: &AbsorbingGame| -> Result<Vec<Vec<Vec<f64>>>> {
        non_abs.iter().map(|a| best_deviation_matrix(h, a)).collect()
    };
    let (work, matrices) = match deviation_matrices(g) {
        Ok(m) => (g.clone(), m),
        Err(Error::NotGeneric(why)) => {
            let h = perturb_absorbing_generic(g, opts.epsilon / 10.0)?;
            diags.push(format!("{why}: synthesized on a perturbed game, certified on the original"));
            let m = deviation_matrices(&h)?;
            (h, m)
        }
        Err(e) => return Err(e),
    };
    let pun = punishments(g)?;
    // some R(a) is a Q-matrix: sunspot on the auxiliary game
    let mut witnesses = Vec::new();
    for (a, r) in non_abs.iter().zip(&matrices) {
        budget.check(&diags, "spotted q-row")?;
        let v = lcp::is_q_matrix_with(r, opts.density, lcp::DEFAULT_TOL, LcpVariant::Dominant, &[])?;
        if v.status == QStatus::QCertifiedNumerically {
            let aux = build_spotted_aux(&work, a)?;
            let part = derive_action_partition(&aux)?;
            let c = MixedProfile::pure(&aux, a);
            let set = best_response_matrix_set(&aux, &part, &c)?;
            for (m, sel) in set.matrices.iter().zip(&set.selections) {
                for plan in quit_plans(&aux, &c, &set.players, m, sel, opts.epsilon) {
                    budget.check(&diags, "spotted q-row certification")?;
                    let route = format!("spotted/q-row at {a:?}/{}", plan.label);
                    let s = plan_strategy(plan, opts.epsilon, pun.clone(), route);
                    if let Some(out) = try_certify(g, s, opts, Vec::new(), &mut diags)? {
                        return Ok(out);
                    }
                }
            }
            diags.push(format!("q-row at {a:?}: no certified plan"));
        } else if let Some(q) = lcp::find_witness_with(r, opts.density, lcp::DEFAULT_TOL, LcpVariant::Dominant)? {
            witnesses.push((a.clone(), q));
        }
    }
    // every R(a) has a witness: stationary limit of the witness game
    if witnesses.len() == non_abs.len() {
        let wg = build_witness_game(&work, &witnesses)?;
        budget.check(&diags, "spotted witness")?;
        if let Some(x) = absorbing_limit(g, &wg, opts.seed, &mut diags)? {
            let s = stationary_with_punishment(x, opts.epsilon, pun, "spotted/witness");
            if let Some(out) = try_certify(g, s, opts, Vec::new(), &mut diags)? {
                return Ok(out);
            }
        }
    } else {
        diags.push("witness route skipped: some best-deviation matrix has no witness".into());
    }
    Err(failed(&diags, "spotted: no certified strategy"))
}

// QL ---------------------------------------------------------------------------------------

/// Smallest `M ≥ lower` with `ρ(p, α, M) ≥ target`.
fn min_length(p: f64, alpha: f64, target: f64, lower: u64) -> Option<u64> {
    if rho(p, alpha, lower) >= target {
        return Some(lower);
    }
    let mut hi = lower.max(1);
    while rho(p, alpha, hi) < target {
        hi = hi.checked_mul(2)?;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if rho(p, alpha, mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi.max(lower))
}

/// `α ∈ (0, α_max]` with `ρ(p, α, m) = target`, by bisection.
fn match_alpha(p: f64, alpha_max: f64, m: u64, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, alpha_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rho(p, mid, m) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// ρ-preserving transform of one auxiliary phase whose quit is `c_1^2`
/// (`side == One`) or `c_2^2` (`Two`): the companion mixes
/// `p·c^2 + (1−p)·c^1` with `p = max{c^ξ(c^2), ε/2}` in Γ.
pub fn transform_phase(
    g: &AbsorbingGame,
    aux: &AbsorbingGame,
    lab: &LShapeLabeling,
    phase: &Phase,
    side: Side,
    eps: f64,
    window: impl Fn(f64) -> u64,
) -> Result<(Phase, RhoMatch)> {
    let q = phase
        .quitter
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("phase has no quitter".into()))?;
    let m_aux = phase
        .duration
        .ok_or_else(|| Error::InvalidArgument("infinite phase cannot be matched".into()))?;
    let (companion, lo, hi) = match side {
        Side::One => (lab.p2, lab.c2[0], lab.c2[1]),
        Side::Two => (lab.p1, lab.c1[0], lab.c1[1]),
    };
    let quit_dist = pure_dist(g.n_actions(q.player), q.action);
    let p_aux = absorb_prob(aux, &phase.profile.with_player(q.player, quit_dist.clone()));
    let aux_rho = rho(p_aux, q.alpha, m_aux);
    let p = phase.profile.player(companion)[hi].max(eps / 2.0).min(1.0);
    let mut d = vec![0.0; g.n_actions(companion)];
    d[hi] = p;
    d[lo] = 1.0 - p;
    let profile = phase.profile.with_player(companion, d);
    let p_hat = absorb_prob(g, &profile.with_player(q.player, quit_dist));
    if !(p_hat > 0.0) {
        return Err(Error::Undefined("transformed quit never absorbs".into()));
    }
    let lower = if p < 1.0 { m_aux.max(window(p)) } else { m_aux };
    let m = min_length(p_hat, q.alpha, aux_rho, lower)
        .ok_or_else(|| Error::Undefined("phase length overflow".into()))?;
    let alpha = match_alpha(p_hat, q.alpha, m, aux_rho);
    let new = Phase {
        profile,
        duration: Some(m),
        quitter: Some(Quitter {
            player: q.player,
            action: q.action,
            alpha,
        }),
    };
    let rm = RhoMatch {
        phase: 0,
        aux_rho,
        rho: rho(p_hat, alpha, m),
        alpha_aux: q.alpha,
        m_aux,
        alpha,
        m,
        p,
    };
    Ok((new, rm))
}

/// Carries an auxiliary plan back to Γ: phases quitting with `c_1^2` or
/// `c_2^2` are ρ-matched and monitored, the rest are copied.
fn transform_plan(
    g: &AbsorbingGame,
    aux: &AbsorbingGame,
    lab: &LShapeLabeling,
    plan: &QuitPlan,
    eps: f64,
) -> Result<(Vec<Phase>, Vec<Monitor>, Vec<RhoMatch>)> {
    let mut phases = Vec::new();
    let mut matches = Vec::new();
    let mut monitored: Vec<(Side, usize, f64)> = Vec::new();
    for (k, ph) in plan.phases.iter().enumerate() {
        let side = ph.quitter.as_ref().and_then(|q| {
            if q.player == lab.p1 && q.action == lab.c1[1] {
                Some(Side::One)
            } else if q.player == lab.p2 && q.action == lab.c2[1] {
                Some(Side::Two)
            } else {
                None
            }
        });
        match side {
            None => phases.push(ph.clone()),
            Some(side) => {
                if ph.duration.is_none() {
                    // a forever phase has ρ = 1 either way; only the mixture changes
                    let mut p2 = ph.clone();
                    let (companion, lo, hi) = match side {
                        Side::One => (lab.p2, lab.c2[0], lab.c2[1]),
                        Side::Two => (lab.p1, lab.c1[0], lab.c1[1]),
                    };
                    let p = ph.profile.player(companion)[hi].max(eps / 2.0).min(1.0);
                    let mut d = vec![0.0; g.n_actions(companion)];
                    d[hi] = p;
                    d[lo] = 1.0 - p;
                    p2.profile = ph.profile.with_player(companion, d);
                    if p < 1.0 {
                        monitored.push((side, k, p));
                    }
                    phases.push(p2);
                    continue;
                }
                let (new, mut rm) =
                    transform_phase(g, aux, lab, ph, side, eps, |p| monitoring_window(eps * p))?;
                rm.phase = k;
                if rm.p < 1.0 {
                    monitored.push((side, k, rm.p));
                }
                phases.push(new);
                matches.push(rm);
            }
        }
    }
    let mut monitors: Vec<Monitor> = Vec::new();
    for (side, k, p) in monitored {
        let (player, action) = match side {
            Side::One => (lab.p2, lab.c2[1]),
            Side::Two => (lab.p1, lab.c1[1]),
        };
        match monitors
            .iter_mut()
            .find(|m| m.player == player && m.action == action && m.target == p)
        {
            Some(m) => m.phases.push(k),
            None => monitors.push(attach_monitoring(player, action, vec![k], p, eps * p)?),
        }
    }
    Ok((phases, monitors, matches))
}

pub fn synth_ql(g: &AbsorbingGame, opts: &SynthOptions) -> Result<Synthesis> {
    check_options(opts)?;
    let (_, lab) = l_shape(g)?;
    let evidences = ql_evidences(g, opts.density, 8)?;
    if evidences.is_empty() {
        return Err(Error::NotQl);
    }
    let budget = Budget::new(opts);
    let mut diags = Vec::new();
    let pun = punishments(g)?;
    for ev in &evidences {
        budget.check(&diags, "QL synthesis")?;
        match ql_from_evidence(g, &lab, ev, opts, &pun, &budget, &mut diags)? {
            Some(out) => return Ok(out),
            None => continue,
        }
    }
    Err(failed(&diags, "QL: no certified plan"))
}

fn ql_from_evidence(
    g: &AbsorbingGame,
    lab: &LShapeLabeling,
    ev: &QlEvidence,
    opts: &SynthOptions,
    pun: &[Punishment],
    budget: &Budget,
    diags: &mut Vec<String>,
) -> Result<Option<Synthesis>> {
    let aux = delta_game(g, lab, ev.delta.0, ev.delta.1)?;
    let plans = quit_plans(&aux, &ev.continue_profile, &ev.players, &ev.matrix, &ev.selection, opts.epsilon);
    if plans.is_empty() {
        diags.push(format!("QL evidence δ = {:?}: no terminal structure", ev.delta));
    }
    for plan in plans {
        budget.check(diags, "QL certification")?;
        let (phases, monitoring, matches) = transform_plan(g, &aux, lab, &plan, opts.epsilon)?;
        let s = Strategy {
            kind: StrategyKind::Sunspot,
            epsilon: opts.epsilon,
            phases,
            cycle_start: plan.cycle_start,
            monitoring,
            punishment: pun.to_vec(),
            route: format!("ql/δ = {:?}/{}", ev.delta, plan.label),
        };
        if let Some(out) = try_certify(g, s, opts, matches, diags)? {
            return Ok(Some(out));
        }
    }
    Ok(None)
}

// NQL ----------------------------------------------------------------------------------------

/// Quitting actions of the one-sided reading: Γ's quits plus `c_1^2`
/// (`One`) or `c_2^2` (`Two`).
fn quit_prime(part: &ActionPartition, lab: &LShapeLabeling, side: Side) -> Vec<Vec<usize>> {
    let mut q = part.quitting_actions.clone();
    match side {
        Side::One => q[lab.p1].push(lab.c1[1]),
        Side::Two => q[lab.p2].push(lab.c2[1]),
    }
    q
}

/// `(A¹, Ã¹, A^{>1})` with `c_1^2` counted as quitting: profiles with one
/// quitting action, those minus `a³, a⁴`, and those with several.
pub fn partition_absorbing_profiles(
    g: &AbsorbingGame,
    lab: &LShapeLabeling,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let part = derive_action_partition(g)?;
    let q = quit_prime(&part, lab, Side::One);
    let (mut a1, mut a1t, mut more) = (Vec::new(), Vec::new(), Vec::new());
    for idx in 0..g.num_profiles() {
        let count = (0..g.n_players())
            .filter(|&i| q[i].contains(&g.action_of(idx, i)))
            .count();
        match count {
            0 => {}
            1 => {
                a1.push(idx);
                if idx != lab.a[2] && idx != lab.a[3] {
                    a1t.push(idx);
                }
            }
            _ => more.push(idx),
        }
    }
    Ok((a1, a1t, more))
}

/// Constants of the one-sided absorbing-equilibrium construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuitCapConstants {
    /// Total number of quitting actions, `c_1^2` included.
    pub q_prime: usize,
    /// Smallest absorption probability outside `a¹, a², a³`.
    pub p_min: f64,
    pub num_profiles: usize,
    /// `c′_ε = min{1 − 2^{−1/|Q′|}, p_min²·ε/(2|A|)}`.
    pub c_prime: f64,
    /// Strict upper bound on δ.
    pub delta_bound: f64,
}

pub fn quit_cap_constants(g: &AbsorbingGame, lab: &LShapeLabeling, eps: f64, side: Side) -> Result<QuitCapConstants> {
    let part = derive_action_partition(g)?;
    let q_prime: usize = quit_prime(&part, lab, side).iter().map(Vec::len).sum();
    let skip = [lab.a[0], lab.a[1], lab.a[2]];
    let p_min = (0..g.num_profiles())
        .filter(|idx| !skip.contains(idx))
        .map(|idx| g.absorb(idx))
        .fold(f64::INFINITY, f64::min);
    let na = g.num_profiles() as f64;
    let root = 1.0 - 2f64.powf(-1.0 / q_prime as f64);
    Ok(QuitCapConstants {
        q_prime,
        p_min,
        num_profiles: g.num_profiles(),
        c_prime: root.min(p_min * p_min * eps / (2.0 * na)),
        delta_bound: (eps / 3.0)
            .min(p_min * root / 2.0)
            .min(p_min.powi(3) * eps / (4.0 * na)),
    })
}

/// χ(S, y): absorption mass of the profiles in `set` under `y`.
pub fn chi_set(g: &AbsorbingGame, y: &MixedProfile, set: &[usize]) -> f64 {
    set.iter()
        .map(|&idx| y.prob(&g.decode(idx)) * g.absorb(idx))
        .sum()
}

/// `x̂^{δ,η}`: the companion moves δ of its first continue action to the
/// second, then, if `η < x_max`, every quit probability is scaled by
/// `η/x_max` and each player's continue actions are rescaled to fill the rest.
pub fn build_hat_profile(
    g: &AbsorbingGame,
    x: &MixedProfile,
    delta: f64,
    eta: f64,
    side: Side,
) -> Result<MixedProfile> {
    x.check_shape(g)?;
    if !(0.0..=1.0).contains(&delta) || !(eta >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta {delta} or eta {eta} out of range")));
    }
    let (part, lab) = l_shape(g)?;
    let q = quit_prime(&part, &lab, side);
    let (companion, lo, hi) = match side {
        Side::One => (lab.p2, lab.c2[0], lab.c2[1]),
        Side::Two => (lab.p1, lab.c1[0], lab.c1[1]),
    };
    let mut d: Vec<Vec<f64>> = x.dists().to_vec();
    let moved = delta * d[companion][lo];
    d[companion][lo] -= moved;
    d[companion][hi] += moved;
    let x_max = (0..g.n_players())
        .flat_map(|i| q[i].iter().map(move |&a| (i, a)))
        .map(|(i, a)| d[i][a])
        .fold(0.0, f64::max);
    if eta < x_max {
        let s = eta / x_max;
        for (i, di) in d.iter_mut().enumerate() {
            let quit: f64 = q[i].iter().map(|&a| di[a]).sum();
            let keep = 1.0 - quit;
            let fill = 1.0 - s * quit;
            for a in 0..di.len() {
                if q[i].contains(&a) {
                    di[a] *= s;
                } else if keep > 0.0 {
                    di[a] *= fill / keep;
                }
            }
            if keep <= 0.0 {
                let c = (0..di.len()).find(|a| !q[i].contains(a)).expect("continue action");
                di[c] = fill;
            }
        }
    }
    MixedProfile::new(d)
}

fn hat_candidate(
    g: &AbsorbingGame,
    lab: &LShapeLabeling,
    x: &MixedProfile,
    side: Side,
    k: &QuitCapConstants,
    opts: &SynthOptions,
    pun: &[Punishment],
) -> Result<Strategy> {
    let delta = 0.5 * k.delta_bound;
    let part = derive_action_partition(g)?;
    let q = quit_prime(&part, lab, side);
    let x_max = (0..g.n_players())
        .flat_map(|i| q[i].iter().map(move |&a| (i, a)))
        .map(|(i, a)| x.player(i)[a])
        .fold(0.0, f64::max);
    let eta = x_max.min(0.5 * k.c_prime);
    let xh = build_hat_profile(g, x, delta, eta, side)?;
    let (companion, hi) = match side {
        Side::One => (lab.p2, lab.c2[1]),
        Side::Two => (lab.p1, lab.c1[1]),
    };
    let target = xh.player(companion)[hi];
    let mon = attach_monitoring(companion, hi, vec![0], target, delta * opts.epsilon)?;
    let mut s = stationary_with_punishment(xh, opts.epsilon, pun.to_vec(), "nql/hat");
    s.monitoring.push(mon);
    Ok(s)
}

pub fn synth_nql(g: &AbsorbingGame, opts: &SynthOptions) -> Result<Synthesis> {
    check_options(opts)?;
    let (_, lab) = l_shape(g)?;
    let w = match classify_ql_nql(g, opts.density)? {
        LClass::Nql(w) => w,
        LClass::Ql(_) => return Err(Error::NotNql),
        LClass::Unresolved { reason } => return Err(Error::SynthesisFailed(reason)),
    };
    trace_nql(g, &lab, &w, opts)
}

const THETA_STEP: f64 = 1e-2;
const THETA_MIN_STEP: f64 = 1e-5;
const JUMP: f64 = 0.1;
const MAX_ATTEMPTS: usize = 40;

fn trace_nql(
    g: &AbsorbingGame,
    lab: &LShapeLabeling,
    w: &HomotopyWitnesses,
    opts: &SynthOptions,
) -> Result<Synthesis> {
    let budget = Budget::new(opts);
    let mut diags = Vec::new();
    let pun = punishments(g)?;
    let one = quit_cap_constants(g, lab, opts.epsilon, Side::One)?;
    let two = quit_cap_constants(g, lab, opts.epsilon, Side::Two)?;
    let g10 = delta_game(g, lab, 1.0, 0.0)?;
    let g01 = delta_game(g, lab, 0.0, 1.0)?;
    let mut tried: Vec<(&'static str, MixedProfile)> = Vec::new();
    let mut attempts = 0usize;
    let mut prev: Option<MixedProfile> = None;
    let mut last = -1.0f64;
    let mut theta = -1.0f64;
    let mut step = THETA_STEP;
    loop {
        budget.check(&diags, &format!("path tracing at θ = {theta:.5}"))?;
        let hp = homotopy_game(g, lab, w, opts.omega, theta)?;
        let eqs = all_stationary_equilibria(&hp.game, opts.path_lambda, EQ_TOL, opts.seed)?;
        let pick = eqs.into_iter().map(|e| e.profile).min_by(|a, b| match &prev {
            Some(p) => a.distance(p).total_cmp(&b.distance(p)),
            None => std::cmp::Ordering::Equal,
        });
        let x = match pick {
            Some(x) => x,
            None if step > THETA_MIN_STEP && prev.is_some() => {
                step /= 2.0;
                theta = last + step;
                continue;
            }
            None => return Err(Error::PathTraceLost(theta)),
        };
        if let Some(p) = &prev {
            let jump = x.distance(p);
            if jump > JUMP {
                if step > THETA_MIN_STEP {
                    step /= 2.0;
                    theta = last + step;
                    continue;
                }
                diags.push(format!("path jumps by {jump:.3} at θ = {theta:.5}"));
            }
        }
        // candidates at this point
        let mut cands: Vec<(&'static str, Strategy)> = Vec::new();
        if absorb_prob(g, &x) > 1e-12 {
            cands.push((
                "absorbing",
                stationary_with_punishment(x.clone(), opts.epsilon, pun.clone(), "nql/absorbing"),
            ));
        }
        if theta < 0.0 {
            let p = absorb_prob(&g10, &x);
            if p > 0.0 && p < one.c_prime {
                cands.push(("left", hat_candidate(g, lab, &x, Side::One, &one, opts, &pun)?));
            }
        } else if theta > 1.0 {
            let p = absorb_prob(&g01, &x);
            if p > 0.0 && p < two.c_prime {
                cands.push(("right", hat_candidate(g, lab, &x, Side::Two, &two, opts, &pun)?));
            }
        }
        for (tag, s) in cands {
            if attempts >= MAX_ATTEMPTS {
                break;
            }
            if tried.iter().any(|(t, y)| *t == tag && y.distance(&x) < 1e-3) {
                continue;
            }
            tried.push((tag, x.clone()));
            attempts += 1;
            budget.check(&diags, "NQL certification")?;
            if let Some(mut out) = try_certify(g, s, opts, Vec::new(), &mut diags)? {
                out.diagnostics.push(format!("found at θ = {theta:.5}"));
                return Ok(out);
            }
        }
        prev = Some(x);
        last = theta;
        if theta >= 2.0 {
            break;
        }
        step = (2.0 * step).min(THETA_STEP);
        theta = (theta + step).min(2.0);
    }
    Err(failed(&diags, "no certifiable window found within budgets"))
}

// Dispatch -------------------------------------------------------------------------------------

/// Picks the construction by class: spotted, then L-shaped (QL or NQL),
/// then general quitting.
pub fn synthesize(g: &AbsorbingGame, opts: &SynthOptions) -> Result<Synthesis> {
    let cls = classify(g);
    if cls.spotted && cls.positive {
        return synth_spotted(g, opts);
    }
    if cls.l_shaped {
        return match classify_ql_nql(g, opts.density)? {
            LClass::Ql(_) => synth_ql(g, opts),
            LClass::Nql(w) => {
                check_options(opts)?;
                let (_, lab) = l_shape(g)?;
                trace_nql(g, &lab, &w, opts)
            }
            LClass::Unresolved { reason } => Err(Error::SynthesisFailed(reason)),
        };
    }
    if let Some(part) = &cls.partition {
        if is_relaxed_general_quitting_with(g, part) {
            return synth_general_quitting(g, opts);
        }
    }
    Err(Error::Unsupported(
        "synthesis covers spotted positive recursive, L-shaped and general quitting games".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auxiliary::tests::l_game;

    fn union_bound(t: u64, e: f64) -> f64 {
        (0..200).map(|k| 2.0 * (-2.0 * t as f64 * 2f64.powi(k) * e * e).exp()).sum()
    }

    #[test]
    fn window_is_minimal_and_monotone() {
        assert!(monitoring_window(0.5) <= 64);
        let mut prev = 0;
        for e in [0.5, 0.3, 0.2, 0.1, 0.05, 0.02] {
            let t = monitoring_window(e);
            assert!(union_bound(t, e) <= e);
            assert!(t == 1 || union_bound(t - 1, e) > e);
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn ftv_cycle() {
        let r = vec![vec![1.0, 0.0, 3.0], vec![3.0, 1.0, 0.0], vec![0.0, 3.0, 1.0]];
        let rho = newton_cycle(&r, &[0, 1, 2], &[0.3, 0.3, 0.3]).unwrap();
        for v in &rho {
            assert!((v - 0.5).abs() < 1e-9);
        }
        let w = cycle_values(&r, &[0, 1, 2], &rho);
        let want = [[1.0, 2.0, 1.0], [1.0, 1.0, 2.0], [2.0, 1.0, 1.0]];
        for (wt, e) in w.iter().zip(want) {
            for j in 0..3 {
                assert!((wt[j] - e[j]).abs() < 1e-9);
            }
        }
        assert!(cycle_feasible(&r, &[0, 1, 2], &rho));
        let shapes = plan_shapes(&r, 4);
        assert!(shapes.iter().all(|s| !matches!(s, Shape::Dominant(_))));
        assert!(!shapes.is_empty());
    }

    #[test]
    fn dominant_column_found() {
        let r = vec![vec![0.2, 0.5], vec![0.2, 0.3]];
        assert_eq!(plan_shapes(&r, 4)[0], Shape::Dominant(1));
    }

    #[test]
    fn discretize_hits_target() {
        for (target, p, amax) in [(0.5, 1.0, 0.05), (0.01, 0.3, 0.04), (0.9, 0.7, 0.02)] {
            let (a, m) = discretize(target, p, amax);
            assert!(a <= amax && a > 0.0);
            let direct = 1.0 - (1.0 - a * p).powi(m as i32);
            assert!((direct - target).abs() < 1e-12);
        }
    }

    #[test]
    fn rho_matching_example() {
        // P(a4) = 0.5, δ1 = 0.1, α = 0.01, M = 100
        let g = l_game([0.3, 0.4], |_, _| [0.1, 0.2]);
        let (_, lab) = l_shape(&g).unwrap();
        let aux = delta_game(&g, &lab, 0.1, 0.0).unwrap();
        let c = MixedProfile::new(vec![vec![1.0, 0.0, 0.0], vec![0.7, 0.3, 0.0]]).unwrap();
        let ph = Phase {
            profile: c,
            duration: Some(100),
            quitter: Some(Quitter {
                player: 0,
                action: 1,
                alpha: 0.01,
            }),
        };
        let eps = 0.05;
        let (new, rm) = transform_phase(&g, &aux, &lab, &ph, Side::One, eps, |p| {
            monitoring_window(eps * p)
        })
        .unwrap();
        // aux absorption of c_1^2 against 0.7 c_2^1 + 0.3 c_2^2
        let p_aux: f64 = 0.7 * 0.1 + 0.3 * 0.5;
        let aux_rho = 1.0 - (1.0 - 0.01 * p_aux).powi(100);
        assert!((rm.aux_rho - aux_rho).abs() < 1e-12);
        assert_eq!(rm.p, 0.3);
        let q = new.quitter.unwrap();
        assert!(q.alpha <= 0.01);
        let m = new.duration.unwrap();
        assert!(m >= 100 && m >= monitoring_window(eps * 0.3));
        let mut keep = 1.0;
        for _ in 0..m {
            keep *= 1.0 - q.alpha * 0.3 * 0.5;
        }
        assert!((1.0 - keep - aux_rho).abs() < 1e-10);
        assert_eq!(new.profile.player(1), &[0.7, 0.3, 0.0]);
    }

    #[test]
    fn p_floor_applies() {
        let g = l_game([0.3, 0.4], |_, _| [0.1, 0.2]);
        let (_, lab) = l_shape(&g).unwrap();
        let aux = delta_game(&g, &lab, 0.1, 0.0).unwrap();
        let c = MixedProfile::new(vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let ph = Phase {
            profile: c,
            duration: Some(10),
            quitter: Some(Quitter {
                player: 0,
                action: 1,
                alpha: 0.02,
            }),
        };
        let (new, rm) = transform_phase(&g, &aux, &lab, &ph, Side::One, 0.2, |_| 5).unwrap();
        assert_eq!(rm.p, 0.1);
        assert!((new.profile.player(1)[1] - 0.1).abs() < 1e-15);
        assert!((rm.rho - rm.aux_rho).abs() < 1e-10);
    }

    #[test]
    fn hat_profile_examples() {
        let g = l_game([0.3, 0.4], |_, _| [0.1, 0.2]);
        let x = MixedProfile::new(vec![vec![0.9, 0.05, 0.05], vec![0.8, 0.1, 0.1]]).unwrap();
        assert_eq!(build_hat_profile(&g, &x, 0.0, 1.0, Side::One).unwrap(), x);
        let h = build_hat_profile(&g, &x, 0.5, 1.0, Side::One).unwrap();
        assert!((h.player(1)[0] - 0.4).abs() < 1e-15);
        assert!((h.player(1)[1] - 0.5).abs() < 1e-15);
        assert!((h.player(1)[2] - 0.1).abs() < 1e-15);
        // x_max over Q' = {c_1^2, q_1, q_2} is 0.1
        let half = build_hat_profile(&g, &x, 0.5, 0.05, Side::One).unwrap();
        assert!((half.player(1)[2] - 0.05).abs() < 1e-15);
        assert!((half.player(0)[1] - 0.025).abs() < 1e-15);
        assert!((half.player(0)[2] - 0.025).abs() < 1e-15);
        let ratio = |d: &[f64]| d[0] / (d[0] + d[1]);
        assert!((ratio(half.player(1)) - ratio(h.player(1))).abs() < 1e-12);
        for i in 0..2 {
            assert!((half.player(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    /// Three players: 0 and 1 have (c^1, c^2, q), player 2 has (c, q).
    fn l_game3() -> AbsorbingGame {
        AbsorbingGame::from_fn(&[3, 3, 2], |a| {
            let quits = (a[0] == 2) as usize + (a[1] == 2) as usize + (a[2] == 1) as usize;
            if quits > 0 {
                (0.5 + 0.1 * quits as f64, vec![0.2, 0.3 + 0.01 * a[0] as f64, 0.4])
            } else if a[0] == 1 && a[1] == 1 {
                (0.8, vec![0.5, 0.5, 0.5])
            } else {
                (0.0, vec![0.0, 0.0, 0.0])
            }
        })
        .unwrap()
    }

    #[test]
    fn partition_examples() {
        let g = l_game3();
        let (_, lab) = l_shape(&g).unwrap();
        let (a1, a1t, more) = partition_absorbing_profiles(&g, &lab).unwrap();
        assert!(a1.contains(&g.encode(&[2, 0, 0])));
        assert!(more.contains(&g.encode(&[2, 2, 0])));
        assert!(a1.contains(&lab.a[2]) && !a1t.contains(&lab.a[2]));
        assert!(a1.contains(&lab.a[3]) && !a1t.contains(&lab.a[3]));
        // disjoint, union = A \ {a1, a2}
        let mut all: Vec<usize> = a1.iter().chain(&more).copied().collect();
        all.sort();
        let want: Vec<usize> = (0..g.num_profiles())
            .filter(|&i| i != lab.a[0] && i != lab.a[1])
            .collect();
        assert_eq!(all, want);
        assert!(a1t.iter().all(|i| a1.contains(i)));
    }

    #[test]
    fn quit_cap_bound_on_samples() {
        use rand::{Rng, SeedableRng};
        let g = l_game3();
        let (part, lab) = l_shape(&g).unwrap();
        let eps = 0.1;
        let k = quit_cap_constants(&g, &lab, eps, Side::One).unwrap();
        assert_eq!(k.q_prime, 4);
        assert!((k.p_min - 0.6).abs() < 1e-15);
        let (_, _, more) = partition_absorbing_profiles(&g, &lab).unwrap();
        let q = quit_prime(&part, &lab, Side::One);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let d: Vec<Vec<f64>> = (0..3)
                .map(|i| {
                    let mut v = vec![0.0; g.n_actions(i)];
                    for &a in &q[i] {
                        v[a] = rng.gen::<f64>() * k.c_prime;
                    }
                    let rest = 1.0 - v.iter().sum::<f64>();
                    let conts: Vec<usize> = (0..v.len()).filter(|a| !q[i].contains(a)).collect();
                    let w: Vec<f64> = conts.iter().map(|_| rng.gen::<f64>() + 1e-3).collect();
                    let s: f64 = w.iter().sum();
                    for (c, wc) in conts.iter().zip(&w) {
                        v[*c] = rest * wc / s;
                    }
                    v
                })
                .collect();
            let y = MixedProfile::new(d).unwrap();
            let p = absorb_prob(&g, &y);
            if p > 0.0 {
                assert!(chi_set(&g, &y, &more) < eps * p);
            }
        }
    }

    #[test]
    fn hat_route_window() {
        let g = l_game([0.3, 0.4], |_, _| [0.1, 0.2]);
        let (_, lab) = l_shape(&g).unwrap();
        let opts = SynthOptions::default();
        let k = quit_cap_constants(&g, &lab, opts.epsilon, Side::One).unwrap();
        // P^{1,0}(x) = x_1(c_1^2)·(0.6 + 0.4·P(a^4)) = c'/2
        let target = 0.5 * k.c_prime;
        let r = target / 0.8;
        let x = MixedProfile::new(vec![vec![1.0 - r, r, 0.0], vec![0.6, 0.4, 0.0]]).unwrap();
        let g10 = delta_game(&g, &lab, 1.0, 0.0).unwrap();
        assert!((absorb_prob(&g10, &x) - target).abs() < 1e-15);
        let pun = punishments(&g).unwrap();
        let s = hat_candidate(&g, &lab, &x, Side::One, &k, &opts, &pun).unwrap();
        let m = &s.monitoring[0];
        assert_eq!((m.player, m.action), (1, 1));
        let tol = 0.5 * k.delta_bound * opts.epsilon;
        assert!((m.tolerance - tol).abs() < 1e-15);
        assert!(union_bound(m.window, tol) <= tol);
        assert!(union_bound(m.window - 1, tol) > tol);
        s.validate(&g).unwrap();
        assert!(certify_uniform(&g, &s, opts.epsilon, &[1e-2], &[1000]).is_ok());
    }
}
