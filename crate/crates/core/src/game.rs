//! Absorbing games: a single non-absorbing state, a finite action set per
//! player, an absorption probability and a payoff vector per action profile.
//!
//! Profiles are stored densely. The flat index is mixed-radix with player 0
//! the most significant digit, so index order is lexicographic order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound `max_prob` on the probability `player` may put on `action`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionCap {
    pub player: usize,
    pub action: usize,
    pub max_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbingGame {
    actions: Vec<Vec<String>>,
    strides: Vec<usize>,
    absorb: Vec<f64>,
    // row-major: profile index * n + player
    payoff: Vec<f64>,
    caps: Vec<ActionCap>,
    relaxed: bool,
}

impl AbsorbingGame {
    /// Builds a game from a profile callback returning `(P(a), u(a))`.
    pub fn from_fn<F>(action_counts: &[usize], mut f: F) -> Result<Self>
    where
        F: FnMut(&[usize]) -> (f64, Vec<f64>),
    {
        let actions = action_counts
            .iter()
            .enumerate()
            .map(|(i, &k)| (0..k).map(|a| format!("p{i}a{a}")).collect())
            .collect();
        let mut g = Self::empty(actions)?;
        let n = g.n_players();
        for idx in 0..g.num_profiles() {
            let prof = g.decode(idx);
            let (p, u) = f(&prof);
            if u.len() != n {
                return Err(Error::Dimension(format!(
                    "payoff vector of profile {prof:?} has length {}, expected {n}",
                    u.len()
                )));
            }
            g.absorb[idx] = p;
            g.payoff[idx * n..(idx + 1) * n].copy_from_slice(&u);
        }
        g.validate()?;
        Ok(g)
    }

    /// Builds a game from per-profile entries; every profile must appear once.
    pub fn from_entries(
        actions: Vec<Vec<String>>,
        entries: &[(Vec<usize>, f64, Vec<f64>)],
    ) -> Result<Self> {
        let mut g = Self::empty(actions)?;
        let n = g.n_players();
        let mut seen = vec![false; g.num_profiles()];
        for (prof, p, u) in entries {
            let idx = g.try_encode(prof)?;
            if seen[idx] {
                return Err(Error::IncompleteProfileTable(format!(
                    "duplicate entry for profile {prof:?}"
                )));
            }
            if u.len() != n {
                return Err(Error::Dimension(format!(
                    "payoff vector of profile {prof:?} has length {}, expected {n}",
                    u.len()
                )));
            }
            seen[idx] = true;
            g.absorb[idx] = *p;
            g.payoff[idx * n..(idx + 1) * n].copy_from_slice(u);
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::IncompleteProfileTable(format!(
                "missing profile {:?}",
                g.decode(missing)
            )));
        }
        g.validate()?;
        Ok(g)
    }

    fn empty(actions: Vec<Vec<String>>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::Dimension("a game needs at least one player".into()));
        }
        if let Some(i) = actions.iter().position(|a| a.is_empty()) {
            return Err(Error::Dimension(format!("player {i} has no actions")));
        }
        let n = actions.len();
        let mut strides = vec![1usize; n];
        for i in (0..n - 1).rev() {
            strides[i] = strides[i + 1] * actions[i + 1].len();
        }
        let total = strides[0] * actions[0].len();
        Ok(Self {
            actions,
            strides,
            absorb: vec![0.0; total],
            payoff: vec![0.0; total * n],
            caps: Vec::new(),
            relaxed: false,
        })
    }

    /// Checks the table invariants: probabilities in [0,1], payoffs in [0,1]
    /// (finite only, for relaxed-range internal games), caps well formed.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_players();
        for idx in 0..self.num_profiles() {
            let p = self.absorb[idx];
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::ProbabilityOutOfRange {
                    profile: self.decode(idx),
                    value: p,
                });
            }
            for (player, &v) in self.payoff(idx).iter().enumerate() {
                let ok = if self.relaxed {
                    v.is_finite()
                } else {
                    (0.0..=1.0).contains(&v)
                };
                if !ok {
                    return Err(Error::PayoffOutOfRange {
                        profile: self.decode(idx),
                        player,
                        value: v,
                    });
                }
            }
        }
        for cap in &self.caps {
            if cap.player >= n || cap.action >= self.n_actions(cap.player) {
                return Err(Error::InvalidArgument(format!("cap {cap:?} names no action")));
            }
            if !(0.0..=1.0).contains(&cap.max_prob) {
                return Err(Error::InvalidArgument(format!("cap {cap:?} outside [0,1]")));
            }
        }
        Ok(())
    }

    pub fn n_players(&self) -> usize {
        self.actions.len()
    }

    pub fn n_actions(&self, player: usize) -> usize {
        self.actions[player].len()
    }

    pub fn action_counts(&self) -> Vec<usize> {
        self.actions.iter().map(Vec::len).collect()
    }

    pub fn action_names(&self) -> &[Vec<String>] {
        &self.actions
    }

    pub fn num_profiles(&self) -> usize {
        self.absorb.len()
    }

    pub fn stride(&self, player: usize) -> usize {
        self.strides[player]
    }

    pub fn decode(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.n_players()];
        for (i, &s) in self.strides.iter().enumerate() {
            out[i] = idx / s;
            idx %= s;
        }
        out
    }

    /// Flat index of a profile. Panics on out-of-range actions.
    pub fn encode(&self, profile: &[usize]) -> usize {
        profile.iter().zip(&self.strides).map(|(a, s)| a * s).sum()
    }

    pub fn try_encode(&self, profile: &[usize]) -> Result<usize> {
        if profile.len() != self.n_players() {
            return Err(Error::Dimension(format!(
                "profile {profile:?} has {} entries, game has {} players",
                profile.len(),
                self.n_players()
            )));
        }
        for (i, &a) in profile.iter().enumerate() {
            if a >= self.n_actions(i) {
                return Err(Error::Dimension(format!(
                    "profile {profile:?}: player {i} has no action {a}"
                )));
            }
        }
        Ok(self.encode(profile))
    }

    /// Index of the profile obtained by replacing player `i`'s action.
    pub fn with_action(&self, idx: usize, player: usize, action: usize) -> usize {
        let s = self.strides[player];
        let cur = (idx / s) % self.n_actions(player);
        idx - cur * s + action * s
    }

    pub fn action_of(&self, idx: usize, player: usize) -> usize {
        (idx / self.strides[player]) % self.n_actions(player)
    }

    pub fn absorb(&self, idx: usize) -> f64 {
        self.absorb[idx]
    }

    pub fn payoff(&self, idx: usize) -> &[f64] {
        let n = self.n_players();
        &self.payoff[idx * n..(idx + 1) * n]
    }

    pub fn is_absorbing(&self, idx: usize) -> bool {
        self.absorb[idx] > 0.0
    }

    pub fn caps(&self) -> &[ActionCap] {
        &self.caps
    }

    /// Cap on `(player, action)`, if any (tightest if several).
    pub fn cap_for(&self, player: usize, action: usize) -> Option<f64> {
        self.caps
            .iter()
            .filter(|c| c.player == player && c.action == action)
            .map(|c| c.max_prob)
            .reduce(f64::min)
    }

    pub fn is_relaxed(&self) -> bool {
        self.relaxed
    }

    pub fn with_caps(mut self, caps: Vec<ActionCap>) -> Result<Self> {
        self.caps = caps;
        self.validate()?;
        Ok(self)
    }

    /// Internal builder: marks the payoff range as relaxed (witness payoffs).
    pub(crate) fn relax(mut self) -> Self {
        self.relaxed = true;
        self
    }

    pub(crate) fn set_absorb(&mut self, idx: usize, p: f64) {
        self.absorb[idx] = p;
    }

    pub(crate) fn set_payoff(&mut self, idx: usize, u: &[f64]) {
        let n = self.n_players();
        self.payoff[idx * n..(idx + 1) * n].copy_from_slice(u);
    }

    /// Same table with every payoff vector passed through `f(index, u)`.
    pub(crate) fn map_payoffs(&self, mut f: impl FnMut(usize, &[f64]) -> Vec<f64>) -> Self {
        let mut g = self.clone();
        for idx in 0..self.num_profiles() {
            let u = f(idx, self.payoff(idx));
            g.set_payoff(idx, &u);
        }
        g
    }

    /// Same game without probability caps.
    pub fn strip_caps(&self) -> Self {
        let mut g = self.clone();
        g.caps.clear();
        g
    }

    pub fn is_recursive(&self) -> bool {
        (0..self.num_profiles())
            .filter(|&i| !self.is_absorbing(i))
            .all(|i| self.payoff(i).iter().all(|&v| v == 0.0))
    }

    // JSON -------------------------------------------------------------

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GameFile = serde_json::from_str(text).map_err(|e| {
            Error::Parse(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        file.into_game()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GameFile::from_game(self)).expect("game serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameEntry {
    pub profile: Vec<usize>,
    pub p: f64,
    pub u: Vec<f64>,
}

/// On-disk game schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameFile {
    pub players: usize,
    pub actions: Vec<Vec<String>>,
    pub entries: Vec<GameEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caps: Option<Vec<ActionCap>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub relaxed: bool,
}

impl GameFile {
    pub fn from_game(g: &AbsorbingGame) -> Self {
        let entries = (0..g.num_profiles())
            .map(|idx| GameEntry {
                profile: g.decode(idx),
                p: g.absorb(idx),
                u: g.payoff(idx).to_vec(),
            })
            .collect();
        Self {
            players: g.n_players(),
            actions: g.actions.clone(),
            entries,
            caps: (!g.caps.is_empty()).then(|| g.caps.clone()),
            relaxed: g.relaxed,
        }
    }

    pub fn into_game(self) -> Result<AbsorbingGame> {
        if self.players != self.actions.len() {
            return Err(Error::Dimension(format!(
                "\"players\" is {} but {} action lists given",
                self.players,
                self.actions.len()
            )));
        }
        let mut g = AbsorbingGame::empty(self.actions.clone())?;
        g.relaxed = self.relaxed;
        let n = g.n_players();
        let mut seen = vec![false; g.num_profiles()];
        for e in &self.entries {
            let idx = g.try_encode(&e.profile)?;
            if seen[idx] {
                return Err(Error::IncompleteProfileTable(format!(
                    "duplicate entry for profile {:?}",
                    e.profile
                )));
            }
            if e.u.len() != n {
                return Err(Error::Dimension(format!(
                    "payoff vector of profile {:?} has length {}, expected {n}",
                    e.profile,
                    e.u.len()
                )));
            }
            seen[idx] = true;
            g.absorb[idx] = e.p;
            g.set_payoff(idx, &e.u);
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::IncompleteProfileTable(format!(
                "missing profile {:?}",
                g.decode(missing)
            )));
        }
        g.caps = self.caps.unwrap_or_default();
        g.validate()?;
        Ok(g)
    }
}

// Partition and classification -------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionPartition {
    pub continue_actions: Vec<Vec<usize>>,
    pub quitting_actions: Vec<Vec<usize>>,
}

impl ActionPartition {
    pub fn is_quit(&self, player: usize, action: usize) -> bool {
        self.quitting_actions[player].contains(&action)
    }

    /// Flat indices of all profiles in ×C_i.
    pub fn continue_profiles(&self, g: &AbsorbingGame) -> Vec<usize> {
        let mut out = vec![0usize];
        for (i, cs) in self.continue_actions.iter().enumerate() {
            let s = g.stride(i);
            out = out
                .iter()
                .flat_map(|&base| cs.iter().map(move |&c| base + c * s))
                .collect();
        }
        out
    }
}

/// True iff `action` absorbs with positive probability against every
/// opponent profile.
fn always_absorbs(g: &AbsorbingGame, player: usize, action: usize) -> bool {
    (0..g.num_profiles())
        .filter(|&idx| g.action_of(idx, player) == action)
        .all(|idx| g.is_absorbing(idx))
}

/// The unique continue/quit split of a quitting absorbing game.
pub fn derive_action_partition(g: &AbsorbingGame) -> Result<ActionPartition> {
    let n = g.n_players();
    let mut quitting = vec![Vec::new(); n];
    let mut cont = vec![Vec::new(); n];
    for i in 0..n {
        for a in 0..g.n_actions(i) {
            if always_absorbs(g, i, a) {
                quitting[i].push(a);
            } else {
                cont[i].push(a);
            }
        }
    }
    if quitting.iter().all(Vec::is_empty) {
        return Err(Error::NotQuittingAbsorbing("no quitting action".into()));
    }
    if let Some(i) = cont.iter().position(Vec::is_empty) {
        return Err(Error::NotQuittingAbsorbing(format!(
            "player {i} has no continue action with a non-absorbing companion"
        )));
    }
    let part = ActionPartition {
        continue_actions: cont,
        quitting_actions: quitting,
    };
    // every continue action needs a non-absorbing continue companion
    let cprofs = part.continue_profiles(g);
    for i in 0..n {
        for &c in &part.continue_actions[i] {
            let ok = cprofs
                .iter()
                .any(|&idx| g.action_of(idx, i) == c && !g.is_absorbing(idx));
            if !ok {
                return Err(Error::NotQuittingAbsorbing(format!(
                    "action {} of player {i} is neither always-absorbing nor has a \
                     non-absorbing continue companion",
                    g.actions[i][c]
                )));
            }
        }
    }
    Ok(part)
}

/// Canonical labeling of an L-shaped game. Player `p1 < p2` are the two
/// players with two continue actions; `c1 = [c_1^1, c_1^2]`, `c2` likewise,
/// and `a[3]` (a^4) is the unique absorbing continue profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LShapeLabeling {
    pub p1: usize,
    pub p2: usize,
    pub c1: [usize; 2],
    pub c2: [usize; 2],
    /// Continue action of every player (only meaningful for players other
    /// than p1 and p2).
    pub others: Vec<usize>,
    /// Profiles a^1..a^4 as flat indices.
    pub a: [usize; 4],
}

impl LShapeLabeling {
    pub fn profile(&self, g: &AbsorbingGame, k: usize) -> Vec<usize> {
        g.decode(self.a[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameClassification {
    pub recursive: bool,
    pub positive: bool,
    pub generic: bool,
    pub general_quitting: bool,
    pub quitting: bool,
    pub quitting_absorbing: bool,
    pub two_dimension: bool,
    pub spotted: bool,
    pub l_shaped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_labeling: Option<LShapeLabeling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<ActionPartition>,
}

pub fn is_generic(g: &AbsorbingGame) -> bool {
    distinct_per_player(g, |_| true)
}

/// Genericity restricted to absorbing profiles.
pub fn is_generic_on_absorbing(g: &AbsorbingGame) -> bool {
    distinct_per_player(g, |idx| g.is_absorbing(idx))
}

fn distinct_per_player(g: &AbsorbingGame, keep: impl Fn(usize) -> bool) -> bool {
    let idxs: Vec<usize> = (0..g.num_profiles()).filter(|&i| keep(i)).collect();
    (0..g.n_players()).all(|i| {
        let mut v: Vec<f64> = idxs.iter().map(|&idx| g.payoff(idx)[i]).collect();
        v.sort_by(f64::total_cmp);
        v.windows(2).all(|w| w[0] != w[1])
    })
}

pub fn is_spotted(g: &AbsorbingGame) -> bool {
    let na: Vec<usize> = (0..g.num_profiles())
        .filter(|&i| !g.is_absorbing(i))
        .collect();
    let n = g.n_players();
    for (k, &x) in na.iter().enumerate() {
        for &y in &na[k + 1..] {
            let diff = (0..n)
                .filter(|&i| g.action_of(x, i) != g.action_of(y, i))
                .count();
            if diff < 2 {
                return false;
            }
        }
    }
    true
}

/// Strict general quitting structure under a given partition: quit profiles
/// absorb surely, continue profiles never. Players may have empty `Q_i`.
pub fn is_general_quitting_with(g: &AbsorbingGame, part: &ActionPartition) -> bool {
    general_quitting_pred(g, part, |p| p == 1.0)
}

/// As [`is_general_quitting_with`] but quit profiles only need `P > 0`.
pub fn is_relaxed_general_quitting_with(g: &AbsorbingGame, part: &ActionPartition) -> bool {
    general_quitting_pred(g, part, |p| p > 0.0)
}

fn general_quitting_pred(
    g: &AbsorbingGame,
    part: &ActionPartition,
    quit_ok: impl Fn(f64) -> bool,
) -> bool {
    (0..g.num_profiles()).all(|idx| {
        let any_quit = (0..g.n_players()).any(|i| part.is_quit(i, g.action_of(idx, i)));
        if any_quit {
            quit_ok(g.absorb(idx))
        } else {
            g.absorb(idx) == 0.0
        }
    })
}

fn l_labeling(g: &AbsorbingGame, part: &ActionPartition) -> Option<LShapeLabeling> {
    let two: Vec<usize> = (0..g.n_players())
        .filter(|&i| part.continue_actions[i].len() == 2)
        .collect();
    let (p1, p2) = (two[0], two[1]);
    let cprofs = part.continue_profiles(g);
    let absorbing: Vec<usize> = cprofs
        .iter()
        .copied()
        .filter(|&idx| g.is_absorbing(idx))
        .collect();
    if absorbing.len() != 1 {
        return None;
    }
    let a4 = absorbing[0];
    let (c12, c22) = (g.action_of(a4, p1), g.action_of(a4, p2));
    let other = |cs: &[usize], x: usize| *cs.iter().find(|&&c| c != x).unwrap();
    let c11 = other(&part.continue_actions[p1], c12);
    let c21 = other(&part.continue_actions[p2], c22);
    let others: Vec<usize> = part.continue_actions.iter().map(|cs| cs[0]).collect();
    let mk = |x: usize, y: usize| {
        let with1 = g.with_action(a4, p1, x);
        g.with_action(with1, p2, y)
    };
    Some(LShapeLabeling {
        p1,
        p2,
        c1: [c11, c12],
        c2: [c21, c22],
        others,
        a: [mk(c11, c21), mk(c11, c22), mk(c12, c21), a4],
    })
}

pub fn classify(g: &AbsorbingGame) -> GameClassification {
    let recursive = g.is_recursive();
    let positive = recursive
        && (0..g.num_profiles()).all(|idx| g.payoff(idx).iter().all(|&v| v >= 0.0));
    let generic = is_generic(g);
    let spotted = is_spotted(g);
    let part = derive_action_partition(g).ok();
    let mut c = GameClassification {
        recursive,
        positive,
        generic,
        general_quitting: false,
        quitting: false,
        quitting_absorbing: part.is_some(),
        two_dimension: false,
        spotted,
        l_shaped: false,
        l_labeling: None,
        partition: None,
    };
    if let Some(part) = part {
        c.general_quitting = is_general_quitting_with(g, &part);
        c.quitting = c.general_quitting
            && (0..g.n_players()).all(|i| {
                part.continue_actions[i].len() == 1 && part.quitting_actions[i].len() == 1
            });
        let sizes: Vec<usize> = part.continue_actions.iter().map(Vec::len).collect();
        c.two_dimension = sizes.iter().filter(|&&k| k == 2).count() == 2
            && sizes.iter().all(|&k| k == 1 || k == 2);
        if c.two_dimension {
            c.l_labeling = l_labeling(g, &part);
            c.l_shaped = c.l_labeling.is_some();
        }
        c.partition = Some(part);
    }
    c
}

/// Labeling of an L-shaped game, or `NotLShaped`.
pub fn l_shape(g: &AbsorbingGame) -> Result<(ActionPartition, LShapeLabeling)> {
    let c = classify(g);
    match (c.partition, c.l_labeling) {
        (Some(p), Some(l)) => Ok((p, l)),
        _ => Err(Error::NotLShaped),
    }
}

// Perturbation -------------------------------------------------------------

/// Deterministic lexicographic perturbation towards genericity: the payoff
/// of profile `k` is moved by `k·ε/(2|A|)`, downwards unless that would leave
/// [0,1].
pub fn perturb_generic(g: &AbsorbingGame, eps: f64) -> Result<AbsorbingGame> {
    perturb_where(g, eps, |_| true, is_generic)
}

/// Like [`perturb_generic`] but only absorbing entries move, so a recursive
/// game stays recursive. Genericity is checked on absorbing profiles.
pub fn perturb_absorbing_generic(g: &AbsorbingGame, eps: f64) -> Result<AbsorbingGame> {
    perturb_where(g, eps, |idx| g.is_absorbing(idx), is_generic_on_absorbing)
}

fn perturb_where(
    g: &AbsorbingGame,
    eps: f64,
    moves: impl Fn(usize) -> bool,
    check: impl Fn(&AbsorbingGame) -> bool,
) -> Result<AbsorbingGame> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")));
    }
    let total = g.num_profiles() as f64;
    let out = g.map_payoffs(|idx, u| {
        if !moves(idx) {
            return u.to_vec();
        }
        let shift = idx as f64 * eps / (2.0 * total);
        u.iter()
            .map(|&v| {
                let down = v - shift;
                let moved = if down >= 0.0 { down } else { v + shift };
                if g.is_relaxed() {
                    moved
                } else {
                    moved.clamp(0.0, 1.0)
                }
            })
            .collect()
    });
    if !check(&out) {
        return Err(Error::CannotPerturb(eps));
    }
    Ok(out)
}
