//! Strategy objects: stationary profiles, almost stationary profiles and
//! sunspot phase plans, with monitoring and punishment, and their JSON form.
//!
//! A plan is a deterministic sequence of phases chosen by the public device.
//! In a phase with a quitter, that player plays its designated action with
//! probability α each stage and the phase profile otherwise. After the last
//! phase play jumps to `cycle_start`, or the last phase lasts forever.

use serde::{Deserialize, Serialize};

use crate::equilibrium::Punishment;
use crate::error::{Error, Result};
use crate::game::AbsorbingGame;
use crate::payoff::MixedProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Stationary,
    AlmostStationary,
    Sunspot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quitter {
    pub player: usize,
    pub action: usize,
    /// Per-stage probability of the designated action.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    /// Profile played apart from the quitter's designated action.
    pub profile: MixedProfile,
    /// Number of stages; `None` means the phase never ends.
    pub duration: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quitter: Option<Quitter>,
}

/// Frequency test on one action of one player, run on consecutive blocks of
/// `window` stages inside each instance of the listed phases (a remainder
/// shorter than a window joins the last block). A block whose empirical
/// frequency is farther than `tolerance` from `target` triggers punishment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monitor {
    pub player: usize,
    pub action: usize,
    pub phases: Vec<usize>,
    pub target: f64,
    pub tolerance: f64,
    pub window: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub epsilon: f64,
    pub phases: Vec<Phase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle_start: Option<usize>,
    #[serde(default)]
    pub monitoring: Vec<Monitor>,
    /// Grim punishment per player: after a detected deviation of that
    /// player the others play this correlated profile forever.
    #[serde(default)]
    pub punishment: Vec<Punishment>,
    /// Which construction produced the object.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub route: String,
}

/// One outcome of the public device within a stage: its probability and
/// the profile played under it.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub profile: MixedProfile,
}

impl Phase {
    pub fn stationary(profile: MixedProfile) -> Self {
        Self {
            profile,
            duration: None,
            quitter: None,
        }
    }

    /// The public lottery of one stage of this phase. Quitting is the
    /// quitter's own randomization, so a phase is a single atom.
    pub fn atoms(&self) -> Vec<Atom> {
        vec![Atom {
            weight: 1.0,
            profile: self.effective_profile(),
        }]
    }

    /// Stage profile: the phase profile with the quitter's designated action
    /// mixed in with probability α.
    pub fn effective_profile(&self) -> MixedProfile {
        match &self.quitter {
            Some(q) if q.alpha > 0.0 => {
                let mut d: Vec<f64> = self
                    .profile
                    .player(q.player)
                    .iter()
                    .map(|v| v * (1.0 - q.alpha))
                    .collect();
                d[q.action] += q.alpha;
                self.profile.with_player(q.player, d)
            }
            _ => self.profile.clone(),
        }
    }
}

impl Strategy {
    pub fn stationary(x: MixedProfile) -> Self {
        Self {
            kind: StrategyKind::Stationary,
            epsilon: 0.0,
            phases: vec![Phase::stationary(x)],
            cycle_start: None,
            monitoring: Vec::new(),
            punishment: Vec::new(),
            route: String::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("strategy serializes")
    }

    pub fn punishment_for(&self, player: usize) -> Option<&Punishment> {
        self.punishment.iter().find(|p| p.player == player)
    }

    /// Structural checks, and shape checks against `g`.
    pub fn validate(&self, g: &AbsorbingGame) -> Result<()> {
        let bad = |m: String| Err(Error::MalformedStrategy(m));
        let n = g.n_players();
        if self.phases.is_empty() {
            return bad("no phases".into());
        }
        let last = self.phases.len() - 1;
        for (k, ph) in self.phases.iter().enumerate() {
            ph.profile
                .check_shape(g)
                .map_err(|e| Error::MalformedStrategy(format!("phase {k}: {e}")))?;
            match ph.duration {
                Some(0) => return bad(format!("phase {k} has zero duration")),
                None if k != last => return bad(format!("phase {k} is infinite but not last")),
                _ => {}
            }
            if let Some(q) = &ph.quitter {
                if q.player >= n || q.action >= g.n_actions(q.player) {
                    return bad(format!("phase {k}: quitter out of range"));
                }
                if !(0.0..=1.0).contains(&q.alpha) {
                    return bad(format!("phase {k}: alpha {} outside [0,1]", q.alpha));
                }
            }
        }
        match (self.cycle_start, self.phases[last].duration) {
            (Some(c), _) if c > last => return bad(format!("cycle start {c} out of range")),
            (Some(_), None) => return bad("cycle with an infinite last phase".into()),
            (None, Some(_)) => return bad("finite last phase without a cycle".into()),
            _ => {}
        }
        for m in &self.monitoring {
            if m.player >= n || m.action >= g.n_actions(m.player) {
                return bad("monitor out of range".into());
            }
            if m.window == 0 || !(m.tolerance > 0.0) || !(0.0..=1.0).contains(&m.target) {
                return bad("monitor needs window > 0, tolerance > 0, target in [0,1]".into());
            }
            if m.phases.iter().any(|&p| p > last) {
                return bad("monitor lists a missing phase".into());
            }
        }
        for k in 0..=last {
            for i in 0..n {
                if self.monitors_on(i, k).len() > 1 {
                    return bad(format!("player {i} has two monitors in phase {k}"));
                }
            }
        }
        for p in &self.punishment {
            if p.player >= n {
                return bad(format!("punishment for missing player {}", p.player));
            }
            let mut s = 0.0;
            for (opp, w) in &p.support {
                if opp.len() + 1 != n || !(*w >= 0.0) {
                    return bad(format!("punishment of player {}: bad entry", p.player));
                }
                for (k, &a) in opp.iter().enumerate() {
                    let j = if k < p.player { k } else { k + 1 };
                    if a >= g.n_actions(j) {
                        return bad(format!("punishment of player {}: bad action", p.player));
                    }
                }
                s += w;
            }
            if (s - 1.0).abs() > 1e-9 {
                return bad(format!("punishment of player {} sums to {s}", p.player));
            }
        }
        Ok(())
    }

    /// Phase schedule as runs `(phase, start stage, length)` covering
    /// stages `0..horizon`.
    pub fn schedule(&self, horizon: u64) -> Vec<(usize, u64, u64)> {
        let mut out = Vec::new();
        let mut t = 0u64;
        let mut k = 0usize;
        while t < horizon {
            let len = match self.phases[k].duration {
                Some(m) => m.min(horizon - t),
                None => horizon - t,
            };
            out.push((k, t, len));
            t += len;
            k += 1;
            if k == self.phases.len() {
                match self.cycle_start {
                    Some(c) => k = c,
                    None => break,
                }
            }
        }
        out
    }

    /// Monitors that test `player` during `phase`.
    pub fn monitors_on(&self, player: usize, phase: usize) -> Vec<&Monitor> {
        self.monitoring
            .iter()
            .filter(|m| m.player == player && m.phases.contains(&phase))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn game() -> AbsorbingGame {
        AbsorbingGame::from_fn(&[2, 2], |a| {
            if a == [0, 0] {
                (0.0, vec![0.0, 0.0])
            } else {
                (1.0, vec![0.5, 0.5])
            }
        })
        .unwrap()
    }

    fn plan() -> Strategy {
        let g = game();
        let c = MixedProfile::pure(&g, &[0, 0]);
        Strategy {
            kind: StrategyKind::Sunspot,
            epsilon: 0.1,
            phases: vec![
                Phase {
                    profile: c.clone(),
                    duration: Some(3),
                    quitter: Some(Quitter {
                        player: 0,
                        action: 1,
                        alpha: 0.05,
                    }),
                },
                Phase {
                    profile: c,
                    duration: Some(2),
                    quitter: None,
                },
            ],
            cycle_start: Some(0),
            monitoring: vec![],
            punishment: vec![],
            route: String::new(),
        }
    }

    #[test]
    fn json_round_trip() {
        let s = plan();
        let back = Strategy::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        back.validate(&game()).unwrap();
    }

    #[test]
    fn atoms_and_marginals() {
        let s = plan();
        assert_eq!(s.phases[0].atoms().len(), 1);
        let eff = s.phases[0].effective_profile();
        assert!((eff.player(0)[1] - 0.05).abs() < 1e-15);
        assert_eq!(s.phases[1].atoms().len(), 1);
    }

    #[test]
    fn schedule_cycles() {
        let s = plan();
        assert_eq!(
            s.schedule(12),
            vec![(0, 0, 3), (1, 3, 2), (0, 5, 3), (1, 8, 2), (0, 10, 2)]
        );
        let st = Strategy::stationary(MixedProfile::pure(&game(), &[0, 0]));
        assert_eq!(st.schedule(7), vec![(0, 0, 7)]);
    }

    #[test]
    fn malformed() {
        let g = game();
        let mut s = plan();
        s.cycle_start = None;
        assert!(matches!(s.validate(&g), Err(Error::MalformedStrategy(_))));
        let mut s = plan();
        s.phases[0].quitter.as_mut().unwrap().alpha = 1.5;
        assert!(s.validate(&g).is_err());
        let mut s = plan();
        s.phases[0].duration = None;
        assert!(s.validate(&g).is_err());
        assert!(Strategy::from_json("{").is_err());
    }
}
