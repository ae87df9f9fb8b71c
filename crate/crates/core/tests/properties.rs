use absorbeq_core::auxiliary::{best_response_matrix_set, build_delta_game, build_spotted_aux};
use absorbeq_core::equilibrium::minmax;
use absorbeq_core::game::{classify, derive_action_partition, l_shape, perturb_generic};
use absorbeq_core::lcp::{self, LcpProblem, LcpVariant};
use absorbeq_core::payoff::{absorption_summary, discounted_payoff, rho, t_stage_payoff, undiscounted_payoff};
use absorbeq_core::strategy::{Phase, Quitter, Strategy as Plan, StrategyKind};
use absorbeq_core::verify::{best_deviation, certify_uniform, replay_deviation, Criterion};
use absorbeq_core::{AbsorbingGame, MixedProfile};
use proptest::prelude::*;

fn build(acts: &[usize], entries: Vec<(f64, Vec<f64>)>) -> AbsorbingGame {
    let mut it = entries.into_iter();
    AbsorbingGame::from_fn(acts, |_| it.next().unwrap()).unwrap()
}

fn absorb_prob() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(1.0), 0.01f64..=1.0]
}

fn game_with(players: std::ops::RangeInclusive<usize>, max_actions: usize) -> impl Strategy<Value = AbsorbingGame> {
    game_in(players, 1..=max_actions)
}

fn game_in(players: std::ops::RangeInclusive<usize>, actions: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = AbsorbingGame> {
    prop::collection::vec(actions, players).prop_flat_map(|acts| {
        let n = acts.len();
        let m: usize = acts.iter().product();
        let entries = prop::collection::vec((absorb_prob(), prop::collection::vec(0.0f64..=1.0, n)), m);
        (Just(acts), entries).prop_map(|(a, e)| build(&a, e))
    })
}

fn game() -> impl Strategy<Value = AbsorbingGame> {
    game_with(1..=3, 3)
}

fn dist(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, k).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    })
}

fn game_and_profile(players: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (AbsorbingGame, MixedProfile)> {
    game_with(players, 3).prop_flat_map(|g| {
        let ds: Vec<_> = (0..g.n_players()).map(|i| dist(g.n_actions(i))).collect();
        (Just(g), ds).prop_map(|(g, d)| (g, MixedProfile::new(d).unwrap()))
    })
}

/// Two-player L-shaped game: actions (c^1, c^2, q), only a^4 = (c^2, c^2)
/// of the continue profiles absorbs.
fn l_game() -> impl Strategy<Value = AbsorbingGame> {
    (0.1f64..=1.0, prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 2), 6)).prop_map(|(p4, us)| {
        AbsorbingGame::from_fn(&[3, 3], |a| match (a[0], a[1]) {
            (0, 0) | (0, 1) | (1, 0) => (0.0, vec![0.0, 0.0]),
            (1, 1) => (p4, us[0].clone()),
            (2, 2) => (1.0, us[1].clone()),
            (2, c) => (1.0, us[2 + c.min(1)].clone()),
            (c, _) => (1.0, us[4 + c].clone()),
        })
        .unwrap()
    })
}

fn pure(k: usize, a: usize) -> Vec<f64> {
    (0..k).map(|b| (a == b) as u8 as f64).collect()
}

/// Discounted payoff of player `i` by enumerating pure profiles.
fn enum_value(g: &AbsorbingGame, d: &[Vec<f64>], lambda: f64, i: usize) -> f64 {
    let (mut p, mut chi, mut ub) = (0.0, 0.0, 0.0);
    for idx in 0..g.num_profiles() {
        let a = g.decode(idx);
        let w: f64 = a.iter().enumerate().map(|(j, &k)| d[j][k]).product();
        p += w * g.absorb(idx);
        chi += w * g.absorb(idx) * g.payoff(idx)[i];
        ub += w * g.payoff(idx)[i];
    }
    (lambda * ub + (1.0 - lambda) * chi) / (lambda + (1.0 - lambda) * p)
}

fn umax(g: &AbsorbingGame) -> f64 {
    (0..g.num_profiles())
        .flat_map(|i| g.payoff(i).iter().map(|v| v.abs()))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quitting_absorbing_iff_partition(g in game()) {
        prop_assert_eq!(classify(&g).quitting_absorbing, derive_action_partition(&g).is_ok());
    }

    #[test]
    fn classify_invariant_under_renaming(
        g in game(),
        seed in any::<u64>(),
    ) {
        // player permutation and per-player action permutations from the seed
        let n = g.n_players();
        let mut s = seed;
        let mut next = |k: usize| { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (s >> 33) as usize % k };
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() { perm.swap(i, next(i + 1)); }
        let sig: Vec<Vec<usize>> = (0..n).map(|i| {
            let mut p: Vec<usize> = (0..g.n_actions(i)).collect();
            for k in (1..p.len()).rev() { p.swap(k, next(k + 1)); }
            p
        }).collect();
        let acts: Vec<usize> = perm.iter().map(|&old| g.n_actions(old)).collect();
        let h = AbsorbingGame::from_fn(&acts, |b| {
            let mut a = vec![0; n];
            for (k, &old) in perm.iter().enumerate() { a[old] = sig[old][b[k]]; }
            let idx = g.encode(&a);
            (g.absorb(idx), perm.iter().map(|&old| g.payoff(idx)[old]).collect())
        }).unwrap();
        let (c, d) = (classify(&g), classify(&h));
        prop_assert_eq!(
            (c.recursive, c.positive, c.generic, c.general_quitting, c.quitting, c.quitting_absorbing, c.two_dimension, c.spotted, c.l_shaped),
            (d.recursive, d.positive, d.generic, d.general_quitting, d.quitting, d.quitting_absorbing, d.two_dimension, d.spotted, d.l_shaped)
        );
    }

    #[test]
    fn perturbation_is_small_and_generic(g in game(), eps in 1e-3f64..0.1) {
        if let Ok(h) = perturb_generic(&g, eps) {
            for idx in 0..g.num_profiles() {
                for (a, b) in g.payoff(idx).iter().zip(h.payoff(idx)) {
                    prop_assert!((a - b).abs() <= eps);
                }
                prop_assert_eq!(g.absorb(idx), h.absorb(idx));
            }
            for i in 0..g.n_players() {
                let mut v: Vec<f64> = (0..h.num_profiles()).map(|idx| h.payoff(idx)[i]).collect();
                v.sort_by(f64::total_cmp);
                prop_assert!(v.windows(2).all(|w| w[0] != w[1]));
            }
        }
    }

    #[test]
    fn rho_monotone(p in 0.0f64..=1.0, a in 0.0f64..=1.0, m in 0u64..10_000, dp in 0.0f64..=1.0, da in 0.0f64..=1.0, dm in 0u64..1000) {
        let base = rho(p, a, m);
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert!(rho((p + dp).min(1.0), a, m) >= base);
        prop_assert!(rho(p, (a + da).min(1.0), m) >= base);
        prop_assert!(rho(p, a, m + dm) >= base);
    }

    #[test]
    fn discounted_converges_linearly((g, x) in game_and_profile(1..=3)) {
        let st = absorption_summary(&g, &x);
        prop_assume!(st.total > 1e-6);
        let gamma = undiscounted_payoff(&g, &x).unwrap();
        let k = 2.0 * umax(&g) / st.total;
        for l in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5] {
            for (a, b) in discounted_payoff(&g, &x, l).iter().zip(&gamma) {
                prop_assert!((a - b).abs() <= k * l + 1e-12);
            }
        }
    }

    #[test]
    fn conditional_absorption_is_a_distribution((g, x) in game_and_profile(1..=3)) {
        let st = absorption_summary(&g, &x);
        match st.conditional {
            Some(c) => {
                prop_assert!(c.iter().all(|&v| v >= 0.0));
                prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            None => prop_assert_eq!(st.total, 0.0),
        }
    }

    #[test]
    fn lcp_solutions_reverify(
        n in 1usize..=3,
        vals in prop::collection::vec(-1.0f64..1.0, 12),
        dominant in any::<bool>(),
    ) {
        let r: Vec<Vec<f64>> = (0..n).map(|i| vals[i * n..(i + 1) * n].to_vec()).collect();
        let q = vals[9..9 + n].to_vec();
        let variant = if dominant { LcpVariant::Dominant } else { LcpVariant::Plain };
        let p = LcpProblem::new(r.clone(), q.clone()).unwrap();
        if let Some(s) = lcp::solve_lcp_with(&p, lcp::DEFAULT_TOL, variant).unwrap().solution() {
            let tol = 10.0 * lcp::DEFAULT_TOL;
            prop_assert!((s.z.iter().sum::<f64>() - 1.0).abs() <= tol);
            prop_assert!(s.z.iter().all(|&v| v >= -tol));
            for i in 0..n {
                let w = s.z[0] * q[i] + (0..n).map(|j| r[i][j] * s.z[j + 1]).sum::<f64>();
                prop_assert!((w - s.w[i]).abs() <= tol);
                prop_assert!(w >= -tol);
                prop_assert!(s.z[i + 1] <= tol || (w - r[i][i]).abs() <= tol);
                if dominant {
                    prop_assert!(w >= r[i][i] - tol);
                }
            }
        }
    }

    #[test]
    fn stationary_best_deviation_matches_enumeration((g, x) in game_and_profile(1..=3), lambda in 1e-3f64..0.5) {
        let s = Plan::stationary(x.clone());
        for i in 0..g.n_players() {
            let plan = best_deviation(&g, &s, i, Criterion::Discounted(lambda)).unwrap();
            let best = (0..g.n_actions(i))
                .map(|a| enum_value(&g, x.with_player(i, pure(g.n_actions(i), a)).dists(), lambda, i))
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((plan.value - best).abs() < 1e-9, "{} vs {}", plan.value, best);
        }
    }

    #[test]
    fn spotted_aux_is_general_quitting(g in game_in(2..=3, 2..=3), pick in any::<prop::sample::Index>()) {
        let free: Vec<usize> = (0..g.num_profiles()).filter(|&i| !g.is_absorbing(i)).collect();
        prop_assume!(!free.is_empty());
        let a = g.decode(free[pick.index(free.len())]);
        let aux = build_spotted_aux(&g, &a).unwrap();
        let part = derive_action_partition(&aux).unwrap();
        for (i, c) in part.continue_actions.iter().enumerate() {
            prop_assert_eq!(c, &vec![a[i]]);
        }
    }

    #[test]
    fn delta_game_identity_at_zero(g in l_game()) {
        let h = build_delta_game(&g, 0.0, 0.0).unwrap();
        for idx in 0..g.num_profiles() {
            prop_assert_eq!(g.absorb(idx), h.absorb(idx));
            prop_assert_eq!(g.payoff(idx), h.payoff(idx));
        }
    }

    #[test]
    fn matrix_sets_are_scale_invariant(g in l_game(), d1 in 0.01f64..0.9, d2 in 0.01f64..0.9, s1 in 0.01f64..1.0, s2 in 0.01f64..1.0) {
        let (_, lab) = l_shape(&g).unwrap();
        let sets = |a: f64, b: f64| {
            let h = build_delta_game(&g, a, b).unwrap();
            let part = derive_action_partition(&h).unwrap();
            let mut c = vec![vec![0.0; 3], vec![0.0; 3]];
            c[lab.p1][lab.c1[0]] = 1.0;
            c[lab.p2][lab.c2[0]] = 1.0;
            best_response_matrix_set(&h, &part, &MixedProfile::new(c).unwrap()).unwrap()
        };
        let (x, y) = (sets(d1, d2), sets(s1 * d1, s2 * d2));
        prop_assert_eq!(&x.selections, &y.selections);
        for (m, n) in x.matrices.iter().zip(&y.matrices) {
            for (r, s) in m.iter().zip(n) {
                for (a, b) in r.iter().zip(s) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn minmax_monotone_in_own_payoff(g in game_with(2..=2, 3), bump in prop::collection::vec(0.0f64..0.3, 9), i in 0usize..2) {
        let mut k = 0;
        let h = AbsorbingGame::from_fn(&g.action_counts(), |a| {
            let idx = g.encode(a);
            let mut u = g.payoff(idx).to_vec();
            u[i] = (u[i] + bump[k % bump.len()]).min(1.0);
            k += 1;
            (g.absorb(idx), u)
        }).unwrap();
        let lambda = 1e-2;
        let base = minmax(&g, i, lambda, 1e-9).unwrap().value;
        let up = minmax(&h, i, lambda, 1e-9).unwrap().value;
        prop_assert!(up >= base - 1e-7, "{} < {}", up, base);
    }

    #[test]
    fn phase_plans_replay_and_certify_monotonically(
        g in game_with(2..=2, 3),
        seeds in prop::collection::vec((dist(3), dist(3), 1u64..30, 0.0f64..0.2), 2),
    ) {
        let phases: Vec<Phase> = seeds.iter().enumerate().map(|(k, (a, b, len, alpha))| {
            let a: Vec<f64> = a[..g.n_actions(0)].to_vec();
            let b: Vec<f64> = b[..g.n_actions(1)].to_vec();
            let norm = |v: Vec<f64>| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
            Phase {
                profile: MixedProfile::new(vec![norm(a), norm(b)]).unwrap(),
                duration: Some(*len),
                quitter: Some(Quitter { player: k % 2, action: 0, alpha: *alpha }),
            }
        }).collect();
        let s = Plan {
            kind: StrategyKind::Sunspot,
            epsilon: 0.05,
            phases,
            cycle_start: Some(0),
            monitoring: vec![],
            punishment: vec![],
            route: String::new(),
        };
        s.validate(&g).unwrap();
        for crit in [Criterion::Discounted(0.05), Criterion::Stages(60)] {
            for i in 0..2 {
                let plan = best_deviation(&g, &s, i, crit).unwrap();
                let v = replay_deviation(&g, &s, &plan).unwrap();
                prop_assert!((v - plan.value).abs() <= 1e-9, "{} vs {}", v, plan.value);
            }
        }
        let lo = certify_uniform(&g, &s, 0.02, &[0.05], &[60]).unwrap();
        let hi = certify_uniform(&g, &s, 0.2, &[0.05], &[60]).unwrap();
        prop_assert_eq!(lo.max_gain, hi.max_gain);
        prop_assert!(!lo.pass || hi.pass);
    }
}

proptest! {
    #[test]
    fn game_json_round_trip(g in game()) {
        let h = AbsorbingGame::from_json(&g.to_json()).unwrap();
        prop_assert_eq!(g, h);
    }
}

#[test]
fn t_stage_meets_discounted_in_the_double_limit() {
    let g = AbsorbingGame::from_fn(&[2, 2], |a| match (a[0], a[1]) {
        (0, 0) => (0.0, vec![0.3, 0.1]),
        (1, 1) => (0.2, vec![0.9, 0.4]),
        _ => (0.05, vec![0.2, 0.7]),
    })
    .unwrap();
    let x = MixedProfile::new(vec![vec![0.4, 0.6], vec![0.7, 0.3]]).unwrap();
    let t = t_stage_payoff(&g, &x, 200_000);
    let d = discounted_payoff(&g, &x, 1e-6);
    for (a, b) in t.iter().zip(&d) {
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }
}
