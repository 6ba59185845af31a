use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use coopstream::cooperation::{
    coop_energy, equivalent_channel, phase_split, run_recruitment, CoopConfig, RandomizationMatrix,
};
use coopstream::mdp::{
    expected_resource, value_iteration, RatePmf, SolveParams, TrafficModel, UserModel, UserState,
};
use coopstream::phy::{
    ber_upper_bound, bits_for_gain, direct_energy_per_packet, draw_channel_matrix, snr_coefficient,
    PhyConfig,
};
use coopstream::pricing::{normalize_allocations, subgradient_step};
use coopstream::sim::{build_topology, SimConfig};
use coopstream::traffic::{
    advance, feasible_actions_with_budget, is_feasible, GopSpec, TrafficState,
};

fn config_with_relays(n: usize) -> SimConfig {
    SimConfig {
        n_relays: n,
        ..SimConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chosen_bits_meet_the_bep(gain in 1e-4f64..1e4, gamma in 0.1f64..1e3, bep in 1e-7f64..0.1) {
        let big = snr_coefficient(gamma, bep).unwrap();
        let bits = bits_for_gain(gain, big, 12);
        if bits > 0 {
            let h = Complex64::new(gain.sqrt(), 0.0);
            prop_assert!(ber_upper_bound(h, bits, gamma) <= bep * (1.0 + 1e-6));
        }
        prop_assert!(bits_for_gain(gain * 2.0, big, 12) >= bits);
    }

    #[test]
    fn channel_magnitudes_are_symmetric(seed in any::<u64>(), relays in 0usize..12) {
        let cfg = config_with_relays(relays);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = build_topology(&cfg, &mut rng).unwrap();
        let h = draw_channel_matrix(&topo, &mut rng).unwrap();
        for i in 0..h.nodes() {
            for l in 0..h.nodes() {
                if i != l {
                    prop_assert!((h.get(i, l).norm() - h.get(l, i).norm()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn recruitment_invariants(seed in any::<u64>(), relays in 0usize..30, xi in 0.1f64..0.6) {
        let cfg = config_with_relays(relays);
        let phy = PhyConfig::default();
        let coop = CoopConfig::default().with_xi(xi);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = build_topology(&cfg, &mut rng).unwrap();
        let h = draw_channel_matrix(&topo, &mut rng).unwrap();
        let gamma1 = coop.gamma_phase1(&phy).unwrap();
        for source in 1..=cfg.users() {
            let out = match run_recruitment(source, &h, &phy, &coop, 0.0, &mut rng) {
                Ok(o) => o,
                Err(_) => continue,
            };
            prop_assert_eq!(out.control_message_count(), 5);
            prop_assert_eq!(out.handshake_len(), 4);
            if !out.decision {
                continue;
            }
            let rate = out.rate_coop.unwrap();
            prop_assert!(rate > out.rate_direct);
            // Every admitted relay decodes the assigned Phase-I rate.
            let assigned = phy.floor_to_grid(out.rate_phase1);
            for &r in &out.relay_ids {
                let bits = bits_for_gain(h.gain(source, r), gamma1, phy.max_bits_per_symbol);
                prop_assert!(bits >= assigned, "relay {} supports {} < {}", r, bits, assigned);
            }
            let rho = out.rho.unwrap();
            let rc = coop.stbc_rate;
            prop_assert!((rho * out.rate_phase1 - (1.0 - rho) * rc * out.rate_phase2).abs() <= 1e-9 * rate);
            let e = coop_energy(&phy, rate, out.rate_phase2, rc, out.relay_ids.len(), 1).unwrap();
            if out.rate_direct > 0.0 {
                prop_assert!(e.source < direct_energy_per_packet(&phy, out.rate_direct).unwrap());
            }
        }
    }

    #[test]
    fn source_column_adds_its_power(
        seed in any::<u64>(),
        len in 1usize..5,
        relays in 0usize..6,
        re in -2.0f64..2.0,
        im in -2.0f64..2.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = RandomizationMatrix::draw(len, relays, &mut rng);
        let h2: Vec<Complex64> = (0..relays).map(|k| Complex64::new(k as f64 + 0.5, -1.0)).collect();
        let hs = Complex64::new(re, im);
        let with = equivalent_channel(hs, &r, &h2).unwrap();
        let without = equivalent_channel(Complex64::new(0.0, 0.0), &r, &h2).unwrap();
        let p = |v: &[Complex64]| v.iter().map(|c| c.norm_sqr()).sum::<f64>();
        prop_assert!((p(&with) - p(&without) - hs.norm_sqr()).abs() < 1e-9);
    }

    #[test]
    fn phase_split_balances_bits(b1 in 0.1f64..10.0, b2 in 0.1f64..10.0, rc in 0.25f64..1.0) {
        let rho = phase_split(b1, b2, rc).unwrap();
        prop_assert!(rho > 0.0 && rho < 1.0);
        prop_assert!((rho * b1 - (1.0 - rho) * rc * b2).abs() < 1e-12);
    }

    #[test]
    fn projection_and_normalization(
        lambda in 0.0f64..10.0,
        mu in 0.0f64..2.0,
        sum_x in 0.0f64..50.0,
        alpha in 0.0f64..0.99,
        req in proptest::collection::vec(0.0f64..1.0, 1..6),
    ) {
        prop_assert!(subgradient_step(lambda, mu, sum_x, alpha) >= 0.0);
        let norm = normalize_allocations(&req);
        prop_assert!(norm.iter().sum::<f64>() <= 1.0 + 1e-12);
        prop_assert!(norm.iter().zip(&req).all(|(g, r)| g <= r));
    }

    #[test]
    fn traffic_walk_keeps_invariants(seed in any::<u64>(), packets in 1u32..5, steps in 1usize..40) {
        use rand::Rng;
        let gop = GopSpec::ibpb(packets);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = TrafficState::initial(&gop);
        let mut admitted = state.total_buffered();
        let mut gone = 0u64;
        for _ in 0..steps {
            let budget = rng.random_range(0..=10);
            let actions = feasible_actions_with_budget(&state, budget, &gop);
            prop_assert!(actions.iter().any(|a| a.packets() == 0));
            for a in &actions {
                prop_assert!(is_feasible(&state, a, budget, &gop));
            }
            let a = &actions[rng.random_range(0..actions.len())];
            // Lose some packets on the way.
            let delivered: Vec<u32> = a.counts.iter().map(|&c| rng.random_range(0..=c)).collect();
            let (next, report) = advance(&state, &delivered, &gop).unwrap();
            admitted += report.admitted_packets;
            gone += report.delivered_packets + report.expired_packets + report.dropped_packets;
            for (f, &b) in next.frames.iter().zip(&next.buffers) {
                prop_assert!(b <= gop.packets_per_frame[f.class]);
            }
            state = next;
        }
        prop_assert_eq!(admitted, gone + state.total_buffered());
    }
}

fn random_model(seed: u64) -> UserModel {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nt = rng.random_range(1..=4);
    let table = (0..nt)
        .map(|_| {
            let mut row = vec![(0, rng.random_range(0.0..0.5), rng.random_range(0..nt))];
            for _ in 0..rng.random_range(0..=3) {
                row.push((
                    rng.random_range(1..=4),
                    rng.random_range(0.0..5.0),
                    rng.random_range(0..nt),
                ));
            }
            row
        })
        .collect();
    let pmf = RatePmf::new(vec![1.0, 2.0, 4.0], vec![0.2, 0.5, 0.3]).unwrap();
    UserModel::from_parts(TrafficModel::from_table(table).unwrap(), pmf, 1.0, 1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn value_falls_as_price_rises(seed in any::<u64>(), alpha in 0.0f64..0.95, users in 1usize..4) {
        let model = random_model(seed);
        // The λ/M rebate is a constant λ/(M(1−α)) in V; compare values net of it.
        let net = |lambda: f64| {
            let sol = value_iteration(
                &model,
                &SolveParams { lambda, alpha, users, tol: 1e-10, ..SolveParams::default() },
            )
            .unwrap();
            let rebate = lambda / users as f64 / (1.0 - alpha);
            sol.values().iter().map(|v| v - rebate).collect::<Vec<_>>()
        };
        let (v0, v1, v10) = (net(0.0), net(1.0), net(10.0));
        for ((a, b), c) in v0.iter().zip(&v1).zip(&v10) {
            prop_assert!(*b <= a + 1e-8 && *c <= b + 1e-8);
        }
    }

    #[test]
    fn rebate_leaves_the_policy_alone(seed in any::<u64>(), lambda in 0.0f64..5.0) {
        let model = random_model(seed);
        let solve = |users| {
            value_iteration(&model, &SolveParams { lambda, users, tol: 1e-11, ..SolveParams::default() }).unwrap()
        };
        let (one, many) = (solve(1), solve(4));
        for t in 0..model.traffic.len() {
            for b in 0..model.pmf.len() {
                let s = UserState { traffic: t, rate_bin: b };
                prop_assert_eq!(one.action_index(s), many.action_index(s));
            }
        }
    }

    #[test]
    fn demand_is_bounded(seed in any::<u64>(), lambda in 0.0f64..5.0) {
        let model = random_model(seed);
        let alpha = 0.9;
        let sol = value_iteration(&model, &SolveParams { lambda, alpha, ..SolveParams::default() }).unwrap();
        let x_max = (0..model.pmf.len())
            .map(|b| model.allocation(model.budget(b).min(4), b))
            .fold(0.0, f64::max);
        for t in 0..model.traffic.len() {
            let x = expected_resource(&model, &sol, alpha, UserState { traffic: t, rate_bin: 0 });
            prop_assert!(x >= 0.0 && x <= x_max / (1.0 - alpha) + 1e-9);
        }
    }
}

#[test]
fn huge_price_idles_every_user() {
    let model = random_model(3);
    let sol = value_iteration(
        &model,
        &SolveParams {
            lambda: 1e6,
            ..SolveParams::default()
        },
    )
    .unwrap();
    for t in 0..model.traffic.len() {
        for b in 0..model.pmf.len() {
            let s = UserState {
                traffic: t,
                rate_bin: b,
            };
            assert_eq!(sol.action(&model, s).packets, 0);
            assert_eq!(expected_resource(&model, &sol, 0.9, s), 0.0);
        }
    }
}
