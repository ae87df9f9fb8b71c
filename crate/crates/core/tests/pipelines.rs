use absorbeq_core::game::classify;
use absorbeq_core::payoff::absorb_prob;
use absorbeq_core::synth::{synth_general_quitting, synth_nql, synth_ql, synth_spotted, SynthOptions};
use absorbeq_core::verify::certify_uniform;
use absorbeq_core::{AbsorbingGame, Error};

fn opts() -> SynthOptions {
    SynthOptions::default()
}

/// Quitting game: action 1 quits. Solo quit payoffs per player, everything
/// else (several quits) pays `multi`.
fn quitting(n: usize, solo: &[Vec<f64>], multi: f64) -> AbsorbingGame {
    AbsorbingGame::from_fn(&vec![2; n], |a| {
        let quits: Vec<usize> = (0..n).filter(|&i| a[i] == 1).collect();
        match quits.len() {
            0 => (0.0, vec![0.0; n]),
            1 => (1.0, solo[quits[0]].clone()),
            _ => (1.0, vec![multi; n]),
        }
    })
    .unwrap()
}

/// Two-player L-shaped game, actions (c^1, c^2, q) each, P(a^4) = 0.5.
fn l_game(u4: [f64; 2], q1: [f64; 2], q2: [f64; 2], qq: [f64; 2]) -> AbsorbingGame {
    AbsorbingGame::from_fn(&[3, 3], |a| match (a[0], a[1]) {
        (0, 0) | (0, 1) | (1, 0) => (0.0, vec![0.0, 0.0]),
        (1, 1) => (0.5, u4.to_vec()),
        (2, 2) => (1.0, qq.to_vec()),
        (2, _) => (1.0, q1.to_vec()),
        (_, 2) => (1.0, q2.to_vec()),
        _ => unreachable!(),
    })
    .unwrap()
}

fn check(g: &AbsorbingGame, out: &absorbeq_core::synth::Synthesis) {
    let o = opts();
    let rep = certify_uniform(g, &out.strategy, o.epsilon, &o.lambda_grid, &o.t_grid).unwrap();
    assert!(rep.pass, "max gain {}", rep.max_gain);
    for ph in &out.strategy.phases {
        if let Some(q) = &ph.quitter {
            assert!(q.alpha < o.epsilon);
        }
    }
}

#[test]
fn general_quitting_dominant_solo_quit() {
    let g = quitting(
        3,
        &[vec![0.2, 0.6, 0.6], vec![0.3, 0.15, 0.3], vec![0.3, 0.3, 0.15]],
        0.1,
    );
    let out = synth_general_quitting(&g, &opts()).unwrap();
    eprintln!("{}", out.strategy.route);
    assert_eq!(out.strategy.phases.len(), 1);
    assert_eq!(out.strategy.phases[0].quitter.as_ref().unwrap().player, 0);
    check(&g, &out);
}

#[test]
fn general_quitting_without_quits_errors() {
    let g = AbsorbingGame::from_fn(&[2, 2], |_| (0.0, vec![0.0, 0.0])).unwrap();
    assert!(synth_general_quitting(&g, &opts()).is_err());
}

fn diagonal_spotted(off01: [f64; 2], off10: [f64; 2]) -> AbsorbingGame {
    AbsorbingGame::from_fn(&[2, 2], |a| match (a[0], a[1]) {
        (0, 1) => (1.0, off01.to_vec()),
        (1, 0) => (1.0, off10.to_vec()),
        _ => (0.0, vec![0.0, 0.0]),
    })
    .unwrap()
}

#[test]
fn spotted_q_case() {
    let g = quitting(2, &[vec![0.2, 0.6], vec![0.3, 0.15]], 0.1);
    assert!(classify(&g).spotted);
    let out = synth_spotted(&g, &opts()).unwrap();
    eprintln!("{} {:?}", out.strategy.route, out.diagnostics);
    assert!(out.strategy.route.starts_with("spotted/q-row"));
    check(&g, &out);
}

#[test]
fn spotted_all_witness_case() {
    let g = quitting(2, &[vec![0.6, 0.1], vec![0.1, 0.6]], 0.05);
    let out = synth_spotted(&g, &opts()).unwrap();
    eprintln!("{} {:?}", out.strategy.route, out.diagnostics);
    assert_eq!(out.strategy.route, "spotted/witness");
    assert!(absorb_prob(&g, &out.strategy.phases[0].profile) > 0.0);
    check(&g, &out);
}

#[test]
fn spotted_mixed_case() {
    // R at (0,0) has a witness, R at (1,1) has a dominant column
    let g = diagonal_spotted([0.2, 0.5], [0.5, 0.2]);
    assert!(classify(&g).spotted);
    let out = synth_spotted(&g, &opts()).unwrap();
    eprintln!("{} {:?}", out.strategy.route, out.diagnostics);
    check(&g, &out);
}

#[test]
fn non_spotted_rejected() {
    let g = l_game([0.1, 0.6], [0.05, 0.05], [0.05, 0.3], [0.0, 0.0]);
    assert_eq!(synth_spotted(&g, &opts()).unwrap_err(), Error::NotSpotted);
}

#[test]
fn ql_game() {
    let g = l_game([0.1, 0.6], [0.05, 0.05], [0.05, 0.3], [0.0, 0.0]);
    let out = synth_ql(&g, &opts()).unwrap();
    eprintln!("{} {:?} {:?}", out.strategy.route, out.rho_matches, out.diagnostics);
    for m in &out.rho_matches {
        assert!((m.rho - m.aux_rho).abs() < 1e-9);
    }
    check(&g, &out);
    assert_eq!(synth_nql(&g, &opts()).unwrap_err(), Error::NotNql);
}

#[test]
fn nql_game() {
    let g = l_game([0.3, 0.3], [0.6, 0.1], [0.1, 0.6], [0.05, 0.05]);
    let t = std::time::Instant::now();
    let out = synth_nql(&g, &opts()).unwrap();
    eprintln!("{} {:?} {:?}", out.strategy.route, out.diagnostics, t.elapsed());
    check(&g, &out);
    assert_eq!(synth_ql(&g, &opts()).unwrap_err(), Error::NotQl);
}

#[test]
fn general_quitting_cycle() {
    // cyclic preferences: no column dominates
    let s = 0.15;
    let g = quitting(
        3,
        &[vec![s, 3.0 * s, 0.0], vec![0.0, s, 3.0 * s], vec![3.0 * s, 0.0, s]],
        0.0,
    );
    let out = synth_general_quitting(&g, &opts()).unwrap();
    eprintln!("{} {:?}", out.strategy.route, out.diagnostics);
    assert!(out.strategy.route.contains("cycle"));
    assert!(out.strategy.phases.len() >= 2);
    check(&g, &out);
}
