use eecw::controller::{
    beamform, energy_intake_cap, energy_matrix, schedule_data, time_share, weighted_gain,
};
use eecw::engine::settle_intake;
use eecw::oracle::{attraction_stats, brute_force_schedule, exact_eigen};
use eecw::rate::RateModel;
use eecw::state::{imbalance, FlowRealization, NetworkState};
use eecw::topology::{build_topology, LinkSpec, StreamSpec, Topology, TopologySpec};
use eecw::SchedulerBackend;
use num_complex::Complex64;
use proptest::prelude::*;

fn two_stream_line() -> Topology {
    build_topology(&TopologySpec {
        nodes: 4,
        eap_antennas: 2,
        eap_distances_m: vec![5.0; 4],
        links: (1..=3)
            .map(|i| LinkSpec { id: i, head: i, tail: i + 1, length_m: 4.0 })
            .chain((1..=3).map(|i| LinkSpec { id: i + 3, head: i + 1, tail: i, length_m: 4.0 }))
            .collect(),
        streams: vec![
            StreamSpec { id: 1, source: 1, sink: 4, rate_kbps: 1.0 },
            StreamSpec { id: 2, source: 4, sink: 1, rate_kbps: 1.0 },
        ],
    })
    .unwrap()
}

#[derive(Debug, Clone)]
struct SlotDraw {
    arrivals: Vec<f64>,
    link_bits: Vec<f64>,
    link_stream: Vec<usize>,
    phi_in: Vec<f64>,
    drain_frac: Vec<f64>,
}

fn slot_draw() -> impl Strategy<Value = SlotDraw> {
    (
        prop::collection::vec(prop_oneof![Just(0.0), 0.0..500.0], 8),
        prop::collection::vec(prop_oneof![Just(0.0), 0.0..2000.0], 6),
        prop::collection::vec(0usize..2, 6),
        prop::collection::vec(0.0..1e-6, 4),
        prop::collection::vec(0.0..1.0, 4),
    )
        .prop_map(|(arrivals, link_bits, link_stream, phi_in, drain_frac)| SlotDraw {
            arrivals,
            link_bits,
            link_stream,
            phi_in,
            drain_frac,
        })
}

/// A flow the controller could emit: arrivals only at sources, no stream
/// leaves its own sink, link bits fit in the head's virtual queue, and no node
/// drains more than its battery holds.
fn flow_for(topo: &Topology, st: &NetworkState, d: &SlotDraw) -> FlowRealization {
    let s_count = topo.stream_count();
    let mut arrivals = vec![0.0; d.arrivals.len()];
    for s in 0..s_count {
        let q = topo.stream(s).source * s_count + s;
        arrivals[q] = d.arrivals[q];
    }
    let mut left = st.u_virtual.clone();
    let mut link_bits = vec![0.0; d.link_bits.len()];
    for (l, link) in topo.links().iter().enumerate() {
        let s = d.link_stream[l];
        if topo.is_sink(link.head, s) {
            continue;
        }
        let q = link.head * s_count + s;
        link_bits[l] = d.link_bits[l].min(left[q]).max(0.0);
        left[q] -= link_bits[l];
    }
    FlowRealization {
        arrivals,
        link_bits,
        link_stream: d.link_stream.clone(),
        phi_in: d.phi_in.clone(),
        phi_out: st.b.iter().zip(&d.drain_frac).map(|(b, f)| b * f).collect(),
    }
}

fn random_topology(links: usize, nodes: usize, ends: &[(usize, usize)]) -> Topology {
    let specs: Vec<LinkSpec> = (0..links)
        .map(|i| {
            let (h, t) = ends[i];
            let h = h % nodes;
            let mut t = t % nodes;
            if t == h {
                t = (h + 1) % nodes;
            }
            LinkSpec { id: i + 1, head: h + 1, tail: t + 1, length_m: 1.0 }
        })
        .collect();
    build_topology(&TopologySpec {
        nodes,
        eap_antennas: 1,
        eap_distances_m: vec![1.0; nodes],
        links: specs,
        streams: vec![],
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn imbalance_is_backlog_minus_scaled_energy(
        u in prop::collection::vec(0.0..1e7, 1..6),
        e in 0.0..1e-3,
        extra in 1e-9..1e-3,
        c in 1e6..1e12,
    ) {
        let z = imbalance(&u, e, c);
        let direct = u.iter().sum::<f64>() - c * e;
        prop_assert!((z - direct).abs() <= 1e-9 * direct.abs().max(1.0));
        prop_assert!(imbalance(&u, e + extra, c) < z);
    }

    #[test]
    fn settled_intake_keeps_imbalance_above_mu_max(
        u in prop::collection::vec(1e3..1e7, 1..4),
        e_frac in 0.0..1.0,
        phi in 0.0..1e-3,
        c in 1e8..1e12,
        mu_max in 1.0..2e3,
    ) {
        let total: f64 = u.iter().sum();
        prop_assume!(total > mu_max);
        let e = e_frac * (total - mu_max) / c;
        prop_assume!(imbalance(&u, e, c) >= mu_max);
        let z = imbalance(&u, e, c);
        let cap = energy_intake_cap(phi, z, mu_max, c).unwrap();
        prop_assert!(cap <= phi);
        let got = settle_intake(&u, e, cap, c, mu_max);
        prop_assert!(got >= 0.0 && got <= cap);
        prop_assert!(imbalance(&u, e + got, c) >= mu_max);
    }

    #[test]
    fn intake_cap_rejects_imbalance_below_mu_max(z in 0.0..999.0, received in 0.0..1.0) {
        prop_assert!(energy_intake_cap(received, z, 1000.0, 1e9).is_err());
    }

    #[test]
    fn infinite_caps_match_the_unlimited_step(
        u0 in 1e3..1e5,
        draws in prop::collection::vec(slot_draw(), 1..40),
    ) {
        let topo = two_stream_line();
        let mut a = NetworkState::initial(&topo, u0, f64::INFINITY);
        let mut b = a.clone();
        for d in &draws {
            let flow = flow_for(&topo, &a, d);
            a.step_unlimited(&topo, &flow).unwrap();
            let drops = b.step_limited(&topo, &flow, f64::INFINITY, f64::INFINITY);
            prop_assert_eq!(drops.buffer, 0.0);
            prop_assert_eq!(drops.energy, 0.0);
        }
        prop_assert_eq!(&a.u_virtual, &b.u_virtual);
        prop_assert_eq!(&a.e_virtual, &b.e_virtual);
        prop_assert_eq!(&a.b, &b.b);
        prop_assert_eq!(&a.delivered, &b.delivered);
        prop_assert_eq!(&a.dummy, &b.dummy);
        prop_assert_eq!(&b.u, &b.u_virtual);
    }

    #[test]
    fn limited_step_conserves_bits_and_respects_caps(
        u0 in 1e3..1e5,
        buffer_cap in 100.0..1e5,
        battery_cap in 1e-8..1e-5,
        draws in prop::collection::vec(slot_draw(), 1..40),
    ) {
        let topo = two_stream_line();
        let mut st = NetworkState::initial(&topo, u0, buffer_cap);
        let stored0: f64 = st.u.iter().sum();
        let mut virt = st.u_virtual.clone();
        let mut arrived = 0.0;
        for d in &draws {
            let mut flow = flow_for(&topo, &st, d);
            // Drain against the virtual counter so outages can happen.
            flow.phi_out = st.e_virtual.iter().zip(&d.drain_frac).map(|(e, f)| e * f).collect();
            let mu_in = flow.mu_in(&topo);
            let mu_out = flow.mu_out(&topo);
            for i in 0..virt.len() {
                virt[i] = (virt[i] - mu_out[i]) + mu_in[i];
            }
            arrived += flow.arrivals.iter().sum::<f64>();
            st.step_limited(&topo, &flow, buffer_cap, battery_cap);
            prop_assert!(st.u.iter().all(|&x| (0.0..=buffer_cap).contains(&x)));
            prop_assert!(st.b.iter().all(|&x| (0.0..=battery_cap).contains(&x)));
            prop_assert!(st.dummy.iter().zip(&st.u).all(|(&m, &u)| m >= 0.0 && m <= u));
        }
        prop_assert_eq!(&virt, &st.u_virtual);
        let stored: f64 = st.u.iter().sum();
        let drops: f64 = st.drops_buffer.iter().chain(&st.drops_energy).sum();
        let delivered: f64 = st.delivered.iter().sum();
        let dummy_gone: f64 = st.dummy_gone.iter().sum();
        let lhs = stored0 + arrived;
        let rhs = stored + delivered + drops + dummy_gone;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn exact_scheduler_matches_brute_force(
        nodes in 2usize..7,
        ends in prop::collection::vec((0usize..7, 0usize..7), 1..9),
        z in prop::collection::vec(1e3..1e7, 7),
        w in prop::collection::vec(-1e6..1e7, 9),
        g in prop::collection::vec((-1e-3..1e-3, -1e-3..1e-3), 9),
        k_p in 2usize..5,
        c in 1e9..1e12,
    ) {
        let links = ends.len();
        let topo = random_topology(links, nodes, &ends);
        let rate = RateModel::shannon(1e5, 3.162e-17);
        let g: Vec<Complex64> = g[..links].iter().map(|&(a, b)| Complex64::new(a, b)).collect();
        let levels: Vec<f64> = (0..k_p).map(|j| 1e-3 * j as f64 / (k_p - 1) as f64).collect();
        let oracle = brute_force_schedule(&topo, &z[..nodes], &w[..links], &g, &rate, &levels, c).unwrap();
        let exact = schedule_data(&topo, &z[..nodes], &w[..links], &g, &rate, &levels, c, SchedulerBackend::Exact).unwrap();
        prop_assert_eq!(exact.f_d, oracle);
        let greedy = schedule_data(&topo, &z[..nodes], &w[..links], &g, &rate, &levels, c, SchedulerBackend::Greedy).unwrap();
        prop_assert!(greedy.f_d >= oracle);
        // the chosen links form a matching
        let mut used = vec![false; nodes];
        for (l, &p) in exact.power.iter().enumerate() {
            if p > 0.0 {
                let link = topo.link(l);
                prop_assert!(!used[link.head] && !used[link.tail]);
                used[link.head] = true;
                used[link.tail] = true;
            }
        }
    }

    #[test]
    fn beam_attains_the_largest_eigenvalue(
        m in 1usize..9,
        nodes in 1usize..8,
        h in prop::collection::vec((-1e-3..1e-3, -1e-3..1e-3), 64),
        z in prop::collection::vec(0.0..1e7, 8),
        c in 1e9..1e12,
    ) {
        let h: Vec<Complex64> = h[..nodes * m].iter().map(|&(a, b)| Complex64::new(a, b)).collect();
        let z = &z[..nodes];
        let beam = beamform(z, &h, m, c);
        let norm: f64 = beam.w.iter().map(|x| x.norm_sqr()).sum();
        prop_assert!((norm - 1.0).abs() < 1e-12);
        let (lambda, _) = exact_eigen(&energy_matrix(z, &h, m, c), m).unwrap();
        prop_assert!(weighted_gain(&beam.gains, z, c) >= (1.0 - 1e-9) * lambda);
    }

    #[test]
    fn exactly_one_phase_per_slot(f_d in -1e12..1e12, f_e in -1e12..1e12, tau in 1e-4..1e-1) {
        let (te, td) = time_share(f_d, f_e, tau);
        prop_assert!((te == 0.0) != (td == 0.0));
        prop_assert_eq!(te + td, tau);
    }

    #[test]
    fn rates_are_monotone_and_short_codes_cost_rate(
        p1 in 0.0..1e-3,
        p2 in 0.0..1e-3,
        g2 in 1e-9..1e-4,
        len in 50.0..1e5,
    ) {
        let shannon = RateModel::shannon(1e5, 3.162e-17);
        let finite = RateModel::finite_blocklength(1e5, 3.162e-17, len, 1e-10).unwrap();
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        for r in [&shannon, &finite] {
            prop_assert_eq!(r.rate(0.0, g2), 0.0);
            prop_assert!(r.rate(lo, g2) <= r.rate(hi, g2));
        }
        prop_assert!(finite.rate(hi, g2) <= shannon.rate(hi, g2));
    }

    #[test]
    fn attraction_frequencies_never_increase(series in prop::collection::vec(-1e6..1e6, 1..500)) {
        let s = attraction_stats(&series);
        prop_assert!(s.freq.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(s.freq.iter().all(|&f| (0.0..=1.0).contains(&f)));
    }
}
