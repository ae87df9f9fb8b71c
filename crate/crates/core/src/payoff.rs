//! Exact payoffs of stationary profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::AbsorbingGame;

const SIMPLEX_TOL: f64 = 1e-12;

/// One distribution over actions per player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct MixedProfile(Vec<Vec<f64>>);

impl TryFrom<Vec<Vec<f64>>> for MixedProfile {
    type Error = Error;
    fn try_from(v: Vec<Vec<f64>>) -> Result<Self> {
        MixedProfile::new(v)
    }
}

impl From<MixedProfile> for Vec<Vec<f64>> {
    fn from(x: MixedProfile) -> Self {
        x.0
    }
}

/// Validates a distribution, renormalizing when within tolerance.
pub fn normalize_dist(d: &[f64]) -> Result<Vec<f64>> {
    if d.is_empty() {
        return Err(Error::InvalidProfile("empty distribution".into()));
    }
    if let Some(&v) = d.iter().find(|v| !v.is_finite() || **v < -SIMPLEX_TOL) {
        return Err(Error::InvalidProfile(format!("negative or non-finite entry {v}")));
    }
    let s: f64 = d.iter().map(|v| v.max(0.0)).sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidProfile(format!("entries sum to {s}, not 1")));
    }
    Ok(d.iter().map(|v| v.max(0.0) / s).collect())
}

impl MixedProfile {
    pub fn new(dists: Vec<Vec<f64>>) -> Result<Self> {
        let dists = dists
            .iter()
            .map(|d| normalize_dist(d))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self(dists))
    }

    /// Like [`MixedProfile::new`] but also checks the shape against `g`.
    pub fn for_game(g: &AbsorbingGame, dists: Vec<Vec<f64>>) -> Result<Self> {
        let x = Self::new(dists)?;
        x.check_shape(g)?;
        Ok(x)
    }

    /// Builds from arbitrary nonnegative weights, dividing by their sum.
    pub fn from_weights(weights: Vec<Vec<f64>>) -> Result<Self> {
        let dists = weights
            .into_iter()
            .map(|w| {
                let s: f64 = w.iter().sum();
                if !(s > 0.0) || w.iter().any(|v| *v < 0.0) {
                    return Err(Error::InvalidProfile(format!("bad weights {w:?}")));
                }
                Ok(w.iter().map(|v| v / s).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self(dists))
    }

    pub fn check_shape(&self, g: &AbsorbingGame) -> Result<()> {
        if self.0.len() != g.n_players() {
            return Err(Error::Dimension(format!(
                "profile has {} players, game has {}",
                self.0.len(),
                g.n_players()
            )));
        }
        for (i, d) in self.0.iter().enumerate() {
            if d.len() != g.n_actions(i) {
                return Err(Error::Dimension(format!(
                    "player {i}: profile has {} actions, game has {}",
                    d.len(),
                    g.n_actions(i)
                )));
            }
        }
        Ok(())
    }

    pub fn pure(g: &AbsorbingGame, profile: &[usize]) -> Self {
        Self(
            profile
                .iter()
                .enumerate()
                .map(|(i, &a)| {
                    let mut d = vec![0.0; g.n_actions(i)];
                    d[a] = 1.0;
                    d
                })
                .collect(),
        )
    }

    pub fn uniform(g: &AbsorbingGame) -> Self {
        Self(
            g.action_counts()
                .iter()
                .map(|&k| vec![1.0 / k as f64; k])
                .collect(),
        )
    }

    pub fn n_players(&self) -> usize {
        self.0.len()
    }

    pub fn player(&self, i: usize) -> &[f64] {
        &self.0[i]
    }

    pub fn dists(&self) -> &[Vec<f64>] {
        &self.0
    }

    /// Copy with player `i`'s distribution replaced (assumed valid).
    pub fn with_player(&self, i: usize, d: Vec<f64>) -> Self {
        let mut v = self.0.clone();
        v[i] = d;
        Self(v)
    }

    /// x(a) = Π_i x_i(a_i).
    pub fn prob(&self, profile: &[usize]) -> f64 {
        profile.iter().zip(&self.0).map(|(&a, d)| d[a]).product()
    }

    /// Sup-norm distance.
    pub fn distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn support(&self, i: usize) -> Vec<usize> {
        (0..self.0[i].len()).filter(|&a| self.0[i][a] > 0.0).collect()
    }
}

/// Nonzero `(profile index, x(a))` pairs, in index order.
pub fn profile_weights(g: &AbsorbingGame, x: &MixedProfile) -> Vec<(usize, f64)> {
    raw_profile_weights(g, x.dists())
}

/// As [`profile_weights`] for arbitrary (possibly signed) per-player weights.
pub fn raw_profile_weights(g: &AbsorbingGame, dists: &[Vec<f64>]) -> Vec<(usize, f64)> {
    let mut acc = vec![(0usize, 1.0f64)];
    for (i, d) in dists.iter().enumerate() {
        let s = g.stride(i);
        let mut next = Vec::with_capacity(acc.len() * d.len());
        for &(idx, w) in &acc {
            for (a, &p) in d.iter().enumerate() {
                if p != 0.0 {
                    next.push((idx + a * s, w * p));
                }
            }
        }
        acc = next;
    }
    acc
}

/// Per-stage statistics of a stationary profile: absorption probability
/// P(x), absorbed payoff mass Σχ(a,x)u(a), and expected stage payoff ū(x).
#[derive(Debug, Clone, PartialEq)]
pub struct StageStats {
    pub p: f64,
    pub chi_u: Vec<f64>,
    pub ubar: Vec<f64>,
}

pub fn stage_stats(g: &AbsorbingGame, x: &MixedProfile) -> StageStats {
    raw_stage_stats(g, x.dists())
}

pub fn raw_stage_stats(g: &AbsorbingGame, dists: &[Vec<f64>]) -> StageStats {
    let n = g.n_players();
    let mut st = StageStats {
        p: 0.0,
        chi_u: vec![0.0; n],
        ubar: vec![0.0; n],
    };
    for (idx, w) in raw_profile_weights(g, dists) {
        let pa = g.absorb(idx);
        let u = g.payoff(idx);
        st.p += w * pa;
        for j in 0..n {
            st.chi_u[j] += w * pa * u[j];
            st.ubar[j] += w * u[j];
        }
    }
    st
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionSummary {
    /// χ(a,x) per flat profile index.
    pub chi: Vec<f64>,
    pub total: f64,
    /// χ(a,x)/P(x) when P(x) > 0.
    pub conditional: Option<Vec<f64>>,
}

impl StageStats {
    pub fn zero(n: usize) -> Self {
        Self {
            p: 0.0,
            chi_u: vec![0.0; n],
            ubar: vec![0.0; n],
        }
    }

    /// `Σ_k w_k · stats_k`: stage statistics are linear in each player's mix.
    pub fn combine(parts: &[StageStats], weights: &[f64]) -> Self {
        let n = parts[0].chi_u.len();
        let mut out = Self::zero(n);
        for (s, &w) in parts.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            out.p += w * s.p;
            for j in 0..n {
                out.chi_u[j] += w * s.chi_u[j];
                out.ubar[j] += w * s.ubar[j];
            }
        }
        out
    }

    /// λ-discounted value of a stationary stream with these statistics.
    pub fn discounted(&self, lambda: f64, player: usize) -> f64 {
        (lambda * self.ubar[player] + (1.0 - lambda) * self.chi_u[player])
            / (lambda + (1.0 - lambda) * self.p)
    }
}

/// Stage statistics of each pure action of `player` against `dists_{-i}`.
pub fn action_stats(g: &AbsorbingGame, dists: &[Vec<f64>], player: usize) -> Vec<StageStats> {
    let n = g.n_players();
    let mut d = dists.to_vec();
    let mut e0 = vec![0.0; g.n_actions(player)];
    e0[0] = 1.0;
    d[player] = e0;
    let base = raw_profile_weights(g, &d);
    (0..g.n_actions(player))
        .map(|a| {
            let mut st = StageStats::zero(n);
            for &(idx, w) in &base {
                let idx = g.with_action(idx, player, a);
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

pub fn absorption_summary(g: &AbsorbingGame, x: &MixedProfile) -> AbsorptionSummary {
    let mut chi = vec![0.0; g.num_profiles()];
    for (idx, w) in profile_weights(g, x) {
        chi[idx] = w * g.absorb(idx);
    }
    let total: f64 = chi.iter().sum();
    let conditional = (total > 0.0).then(|| chi.iter().map(|c| c / total).collect());
    AbsorptionSummary {
        chi,
        total,
        conditional,
    }
}

pub fn absorb_prob(g: &AbsorbingGame, x: &MixedProfile) -> f64 {
    profile_weights(g, x)
        .into_iter()
        .map(|(idx, w)| w * g.absorb(idx))
        .sum()
}

/// γ(x): the absorbing payoff, or 0 for non-absorbing x in a recursive game.
pub fn undiscounted_payoff(g: &AbsorbingGame, x: &MixedProfile) -> Result<Vec<f64>> {
    let st = stage_stats(g, x);
    if st.p > 0.0 {
        return Ok(st.chi_u.iter().map(|v| v / st.p).collect());
    }
    if g.is_recursive() {
        Ok(vec![0.0; g.n_players()])
    } else {
        Err(Error::Undefined(
            "undiscounted payoff of a non-absorbing profile in a non-recursive game".into(),
        ))
    }
}

/// Closed form of the λ-discounted payoff of a stationary profile.
pub fn discounted_from_stats(st: &StageStats, lambda: f64) -> Vec<f64> {
    let den = lambda + (1.0 - lambda) * st.p;
    st.ubar
        .iter()
        .zip(&st.chi_u)
        .map(|(ub, cu)| (lambda * ub + (1.0 - lambda) * cu) / den)
        .collect()
}

pub fn discounted_payoff(g: &AbsorbingGame, x: &MixedProfile, lambda: f64) -> Vec<f64> {
    discounted_from_stats(&stage_stats(g, x), lambda)
}

/// γ^T by forward recursion on (alive mass, absorbed payoff mass).
pub fn t_stage_payoff(g: &AbsorbingGame, x: &MixedProfile, t: u64) -> Vec<f64> {
    let st = stage_stats(g, x);
    let n = g.n_players();
    let mut alive = 1.0;
    let mut absorbed = vec![0.0; n];
    let mut total = vec![0.0; n];
    for _ in 0..t {
        for j in 0..n {
            total[j] += alive * st.ubar[j] + absorbed[j];
            absorbed[j] += alive * st.chi_u[j];
        }
        alive *= 1.0 - st.p;
    }
    total.iter().map(|v| v / t as f64).collect()
}

/// ρ = 1 − (1 − α·p)^M: absorption probability of a quitting phase.
pub fn rho(p_abs: f64, alpha: f64, m: u64) -> f64 {
    let s = alpha * p_abs;
    if s >= 1.0 {
        return if m == 0 { 0.0 } else { 1.0 };
    }
    -(m as f64 * (-s).ln_1p()).exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_player(entries: &[(f64, f64)]) -> AbsorbingGame {
        AbsorbingGame::from_fn(&[entries.len()], |a| (entries[a[0]].0, vec![entries[a[0]].1]))
            .unwrap()
    }

    #[test]
    fn point_masses() {
        let g = one_player(&[(0.0, 0.0), (1.0, 0.7)]);
        let na = MixedProfile::pure(&g, &[0]);
        let ab = MixedProfile::pure(&g, &[1]);
        let s = absorption_summary(&g, &na);
        assert_eq!(s.total, 0.0);
        assert!(s.chi.iter().all(|&c| c == 0.0));
        let s = absorption_summary(&g, &ab);
        assert_eq!(s.total, 1.0);
        assert_eq!(s.chi[1], 1.0);
        assert_eq!(undiscounted_payoff(&g, &ab).unwrap(), vec![0.7]);
        assert_eq!(undiscounted_payoff(&g, &na).unwrap(), vec![0.0]);
        for lambda in [1.0, 0.3, 1e-4] {
            assert!((discounted_payoff(&g, &ab, lambda)[0] - 0.7).abs() < 1e-15);
            assert_eq!(discounted_payoff(&g, &na, lambda), vec![0.0]);
        }
        for t in [1, 2, 17] {
            assert!((t_stage_payoff(&g, &ab, t)[0] - 0.7).abs() < 1e-15);
            assert_eq!(t_stage_payoff(&g, &na, t), vec![0.0]);
        }
    }

    #[test]
    fn chi_arithmetic() {
        let g = one_player(&[(0.2, 0.5), (0.0, 0.0)]);
        let x = MixedProfile::new(vec![vec![0.5, 0.5]]).unwrap();
        let s = absorption_summary(&g, &x);
        assert!((s.chi[0] - 0.1).abs() < 1e-15);
        assert!((s.total - 0.1).abs() < 1e-15);
        let c = s.conditional.unwrap();
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_atoms() {
        let g = AbsorbingGame::from_fn(&[3], |a| match a[0] {
            0 => (0.2, vec![0.8]),
            1 => (0.6, vec![0.4]),
            _ => (0.0, vec![0.0]),
        })
        .unwrap();
        let x = MixedProfile::new(vec![vec![0.5, 0.5, 0.0]]).unwrap();
        let u = undiscounted_payoff(&g, &x).unwrap();
        assert!((u[0] - (0.25 * 0.8 + 0.75 * 0.4)).abs() < 1e-15);
    }

    #[test]
    fn undiscounted_undefined_when_not_recursive() {
        let g = one_player(&[(0.0, 0.3), (1.0, 0.7)]);
        let x = MixedProfile::pure(&g, &[0]);
        assert!(matches!(undiscounted_payoff(&g, &x), Err(Error::Undefined(_))));
    }

    #[test]
    fn rho_examples() {
        assert_eq!(rho(0.3, 0.0, 50), 0.0);
        assert_eq!(rho(1.0, 1.0, 1), 1.0);
        assert!((rho(0.2, 0.5, 10) - (1.0 - 0.9f64.powi(10))).abs() < 1e-15);
    }

    #[test]
    fn profile_validation() {
        assert!(MixedProfile::new(vec![vec![0.5, 0.6]]).is_err());
        assert!(MixedProfile::new(vec![vec![-0.1, 1.1]]).is_err());
        let x = MixedProfile::new(vec![vec![0.5, 0.5 + 1e-13]]).unwrap();
        assert!((x.player(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let x: MixedProfile = serde_json::from_str("[[0.25,0.75],[1.0]]").unwrap();
        assert_eq!(x.player(0), &[0.25, 0.75]);
        assert!(serde_json::from_str::<MixedProfile>("[[0.25,0.5]]").is_err());
    }
}
