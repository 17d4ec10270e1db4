//! Data queues, batteries, virtual counters and drop accounting.
//!
//! A stream's own queue at its sink is held constant at its initial dummy
//! level: bits reaching the sink leave the network and are counted in
//! `delivered`, and the sink never forwards that stream.
//!
//! The `U0` initialization bits are tagged as dummy. Queues send data before
//! dummy, a full buffer evicts dummy before dropping data, and only data
//! counts toward drops and deliveries.

use crate::error::{Error, Result};
use crate::topology::Topology;

/// Realized per-slot flows.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRealization {
    /// External arrivals `A_{n,s}`, `N × S`.
    pub arrivals: Vec<f64>,
    /// Bits moved over each link this slot.
    pub link_bits: Vec<f64>,
    /// Stream carried by each link; meaningful where `link_bits > 0`.
    pub link_stream: Vec<usize>,
    /// `φ^i_n`, joules stored.
    pub phi_in: Vec<f64>,
    /// `φ^o_n`, joules drained.
    pub phi_out: Vec<f64>,
}

impl FlowRealization {
    pub fn idle(topo: &Topology) -> Self {
        let (n, s, l) = (topo.node_count(), topo.stream_count(), topo.link_count());
        Self {
            arrivals: vec![0.0; n * s],
            link_bits: vec![0.0; l],
            link_stream: vec![0; l],
            phi_in: vec![0.0; n],
            phi_out: vec![0.0; n],
        }
    }

    /// `μ^i_{(n,s)}`: incoming link bits plus arrivals. Zero for a stream at its sink.
    pub fn mu_in(&self, topo: &Topology) -> Vec<f64> {
        let s_count = topo.stream_count();
        let mut mu = vec![0.0; topo.node_count() * s_count];
        for n in 0..topo.node_count() {
            for s in 0..s_count {
                if topo.is_sink(n, s) {
                    continue;
                }
                let mut acc = 0.0;
                for &l in topo.incoming(n) {
                    if self.link_bits[l] > 0.0 && self.link_stream[l] == s {
                        acc += self.link_bits[l];
                    }
                }
                mu[n * s_count + s] = acc + self.arrivals[n * s_count + s];
            }
        }
        mu
    }

    /// `μ^o_{(n,s)}`: bits scheduled out of each queue.
    pub fn mu_out(&self, topo: &Topology) -> Vec<f64> {
        let s_count = topo.stream_count();
        let mut mu = vec![0.0; topo.node_count() * s_count];
        for n in 0..topo.node_count() {
            for &l in topo.outgoing(n) {
                if self.link_bits[l] > 0.0 {
                    mu[n * s_count + self.link_stream[l]] += self.link_bits[l];
                }
            }
        }
        mu
    }
}

/// Drops incurred in one limited-mode step, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlotDrops {
    pub buffer: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub slot: u64,
    nodes: usize,
    streams: usize,
    /// Real queues `U_{n,s}`, bits, `N × S`.
    pub u: Vec<f64>,
    /// Dummy initialization bits still held in each real queue.
    pub dummy: Vec<f64>,
    /// Real batteries `B_n`, joules.
    pub b: Vec<f64>,
    /// Virtual queues `Ũ_{n,s}`.
    pub u_virtual: Vec<f64>,
    /// Virtual energy counters `Ẽ_n`.
    pub e_virtual: Vec<f64>,
    /// `L^b_{n,s}`, cumulative data bits lost to buffer overflow.
    pub drops_buffer: Vec<f64>,
    /// `L^e_{n,s}`, cumulative data bits lost to energy outage.
    pub drops_energy: Vec<f64>,
    /// Cumulative data bits delivered to each stream's sink.
    pub delivered: Vec<f64>,
    /// Cumulative external arrivals per stream.
    pub arrived: Vec<f64>,
    /// Dummy bits per stream that reached the sink or were discarded.
    pub dummy_gone: Vec<f64>,
}

/// Bits leaving one queue, split into data and dummy parts.
#[derive(Debug, Clone, Copy, Default)]
struct Moved {
    data: f64,
    dummy: f64,
}

impl NetworkState {
    /// Every queue starts with `u0` dummy bits (`min(u0, buffer_cap)` in the real
    /// buffers), batteries empty.
    pub fn initial(topo: &Topology, u0: f64, buffer_cap: f64) -> Self {
        let (n, s) = (topo.node_count(), topo.stream_count());
        let real = u0.min(buffer_cap);
        Self {
            slot: 0,
            nodes: n,
            streams: s,
            u: vec![real; n * s],
            dummy: vec![real; n * s],
            b: vec![0.0; n],
            u_virtual: vec![u0; n * s],
            e_virtual: vec![0.0; n],
            drops_buffer: vec![0.0; n * s],
            drops_energy: vec![0.0; n * s],
            delivered: vec![0.0; s],
            arrived: vec![0.0; s],
            dummy_gone: vec![0.0; s],
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn stream_count(&self) -> usize {
        self.streams
    }

    pub fn total_drops(&self) -> f64 {
        self.drops_buffer.iter().sum::<f64>() + self.drops_energy.iter().sum::<f64>()
    }

    fn record_arrivals(&mut self, flow: &FlowRealization) {
        for n in 0..self.nodes {
            for s in 0..self.streams {
                self.arrived[s] += flow.arrivals[n * self.streams + s];
            }
        }
    }

    /// Takes up to `bits` from the head queue of every scheduled link, data
    /// before dummy, and reduces `self.u`/`self.dummy` accordingly.
    fn take(&mut self, topo: &Topology, flow: &FlowRealization) -> Vec<Moved> {
        let s_count = self.streams;
        let mut moved = vec![Moved::default(); topo.link_count()];
        let mut out = vec![0.0; self.u.len()];
        let mut out_dummy = vec![0.0; self.u.len()];
        for (l, link) in topo.links().iter().enumerate() {
            let bits = flow.link_bits[l];
            if bits <= 0.0 {
                continue;
            }
            let q = link.head * s_count + flow.link_stream[l];
            let left = self.u[q] - out[q];
            let total = bits.min(left).max(0.0);
            let data = total.min(left - (self.dummy[q] - out_dummy[q])).max(0.0);
            let dummy = total - data;
            out[q] += total;
            out_dummy[q] += dummy;
            moved[l] = Moved { data, dummy };
        }
        for q in 0..self.u.len() {
            if out[q] > 0.0 {
                self.u[q] = (self.u[q] - out[q]).max(0.0);
                self.dummy[q] = (self.dummy[q] - out_dummy[q]).max(0.0).min(self.u[q]);
            }
        }
        moved
    }

    /// Hands bits over to each link's tail, or to the sink's tallies, then
    /// adds arrivals. Sums in the same order as `mu_in`.
    fn put(&mut self, topo: &Topology, flow: &FlowRealization, moved: &[Moved]) {
        let s_count = self.streams;
        let mut inflow = vec![0.0; self.u.len()];
        for (l, link) in topo.links().iter().enumerate() {
            let m = moved[l];
            if m.data + m.dummy <= 0.0 {
                continue;
            }
            let s = flow.link_stream[l];
            if topo.is_sink(link.tail, s) {
                self.delivered[s] += m.data;
                self.dummy_gone[s] += m.dummy;
            } else {
                let q = link.tail * s_count + s;
                inflow[q] += m.data + m.dummy;
                self.dummy[q] += m.dummy;
            }
        }
        for (q, a) in flow.arrivals.iter().enumerate() {
            if !topo.is_sink(q / s_count, q % s_count) {
                self.u[q] += inflow[q] + a;
            }
            self.dummy[q] = self.dummy[q].min(self.u[q]);
        }
    }

    /// Infinite buffers and batteries: `U' = [U − μ^o]⁺ + μ^i`, `B' = B − φ^o + φ^i`.
    pub fn step_unlimited(&mut self, topo: &Topology, flow: &FlowRealization) -> Result<()> {
        for n in 0..self.nodes {
            if flow.phi_out[n] > self.b[n] {
                return Err(Error::Invariant {
                    slot: self.slot,
                    reason: format!(
                        "battery constraint violated at node {}: drain {} J > stored {} J",
                        n + 1,
                        flow.phi_out[n],
                        self.b[n]
                    ),
                });
            }
        }
        let mu_in = flow.mu_in(topo);
        let mu_out = flow.mu_out(topo);
        let next: Vec<f64> = self.u.iter().enumerate().map(|(i, u)| (u - mu_out[i]).max(0.0) + mu_in[i]).collect();
        // Tagging only; scheduled bits beyond a queue's content still count
        // as received, so `u` comes from the update above.
        let moved = self.take(topo, flow);
        self.put(topo, flow, &moved);
        self.u = next;
        for (m, u) in self.dummy.iter_mut().zip(&self.u) {
            *m = m.min(*u);
        }
        for n in 0..self.nodes {
            self.b[n] = (self.b[n] - flow.phi_out[n]) + flow.phi_in[n];
        }
        self.u_virtual.copy_from_slice(&self.u);
        self.e_virtual.copy_from_slice(&self.b);
        self.record_arrivals(flow);
        self.slot += 1;
        Ok(())
    }

    /// Finite buffers and batteries. Virtual counters follow the scheduled
    /// flows untruncated; the real buffers carry only what physically moves.
    /// Overflow evicts dummy bits before data.
    pub fn step_limited(
        &mut self,
        topo: &Topology,
        flow: &FlowRealization,
        buffer_cap: f64,
        battery_cap: f64,
    ) -> SlotDrops {
        let s_count = self.streams;
        let mu_in = flow.mu_in(topo);
        let mu_out = flow.mu_out(topo);
        for (i, u) in self.u_virtual.iter_mut().enumerate() {
            *u = (*u - mu_out[i]) + mu_in[i];
        }
        for n in 0..self.nodes {
            self.e_virtual[n] = (self.e_virtual[n] - flow.phi_out[n]) + flow.phi_in[n];
        }

        let mut drops = SlotDrops::default();
        let outage: Vec<bool> = (0..self.nodes).map(|n| flow.phi_out[n] > self.b[n]).collect();
        let mut moved = self.take(topo, flow);
        for (l, link) in topo.links().iter().enumerate() {
            if outage[link.head] {
                let s = flow.link_stream[l];
                self.drops_energy[link.head * s_count + s] += moved[l].data;
                drops.energy += moved[l].data;
                self.dummy_gone[s] += moved[l].dummy;
                moved[l] = Moved::default();
            }
        }
        self.put(topo, flow, &moved);
        for q in 0..self.u.len() {
            let over = self.u[q] - buffer_cap;
            if over > 0.0 {
                let evicted = over.min(self.dummy[q]);
                self.dummy[q] -= evicted;
                self.dummy_gone[q % s_count] += evicted;
                self.drops_buffer[q] += over - evicted;
                drops.buffer += over - evicted;
                self.u[q] = buffer_cap;
            }
        }
        for (n, &out) in outage.iter().enumerate() {
            let drained = if out { self.b[n] } else { self.b[n] - flow.phi_out[n] };
            self.b[n] = (drained + flow.phi_in[n]).min(battery_cap);
        }
        self.record_arrivals(flow);
        self.slot += 1;
        drops
    }

    /// Data bits of stream `s` currently stored anywhere in the network.
    pub fn stored_data(&self, s: usize) -> f64 {
        (0..self.nodes).map(|n| self.u[n * self.streams + s] - self.dummy[n * self.streams + s]).sum()
    }

    /// Real bits of stream `s` currently stored anywhere in the network.
    pub fn stored(&self, s: usize) -> f64 {
        (0..self.nodes).map(|n| self.u[n * self.streams + s]).sum()
    }
}

/// `Z_n = Σ_s Ũ_{n,s} − 𝒞·Ẽ_n`, summed over streams in index order.
pub fn imbalance(u_virtual: &[f64], e_virtual: f64, c: f64) -> f64 {
    let mut acc = 0.0;
    for &u in u_virtual {
        acc += u;
    }
    acc - c * e_virtual
}

pub fn imbalance_vector(st: &NetworkState, c: f64) -> Vec<f64> {
    let s = st.stream_count();
    (0..st.node_count())
        .map(|n| imbalance(&st.u_virtual[n * s..(n + 1) * s], st.e_virtual[n], c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_topology, LinkSpec, StreamSpec, TopologySpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line() -> Topology {
        build_topology(&TopologySpec {
            nodes: 3,
            eap_antennas: 2,
            eap_distances_m: vec![3.0; 3],
            links: vec![
                LinkSpec { id: 1, head: 1, tail: 2, length_m: 4.0 },
                LinkSpec { id: 2, head: 2, tail: 3, length_m: 4.0 },
            ],
            streams: vec![StreamSpec { id: 1, source: 1, sink: 3, rate_kbps: 1.0 }],
        })
        .unwrap()
    }

    #[test]
    fn zero_flow_only_advances_slot() {
        let t = line();
        let mut st = NetworkState::initial(&t, 10.0, f64::INFINITY);
        let before = st.clone();
        st.step_unlimited(&t, &FlowRealization::idle(&t)).unwrap();
        assert_eq!(st.slot, 1);
        assert_eq!(st.u, before.u);
        assert_eq!(st.b, before.b);
    }

    #[test]
    fn drain_truncates_before_fill() {
        let t = line();
        let mut st = NetworkState::initial(&t, 0.0, f64::INFINITY);
        st.u[0] = 5.0;
        let mut f = FlowRealization::idle(&t);
        f.link_bits[0] = 8.0;
        f.arrivals[0] = 2.0;
        st.step_unlimited(&t, &f).unwrap();
        assert_eq!(st.u[0], 2.0);
        assert_eq!(st.u[1], 8.0);
    }

    #[test]
    fn overdrawn_battery_is_a_fault() {
        let t = line();
        let mut st = NetworkState::initial(&t, 0.0, f64::INFINITY);
        let mut f = FlowRealization::idle(&t);
        f.phi_out[1] = 1e-6;
        let err = st.step_unlimited(&t, &f).unwrap_err();
        assert!(err.to_string().contains("battery constraint violated"));
    }

    #[test]
    fn sink_queue_is_pinned_and_deliveries_counted() {
        let t = line();
        let mut st = NetworkState::initial(&t, 7.0, f64::INFINITY);
        st.dummy[1] = 0.0;
        let mut f = FlowRealization::idle(&t);
        f.link_bits[1] = 3.0;
        st.step_unlimited(&t, &f).unwrap();
        assert_eq!(st.u[2], 7.0);
        assert_eq!(st.u[1], 4.0);
        assert_eq!(st.delivered[0], 3.0);
    }

    #[test]
    fn data_leaves_before_dummy_and_dummy_is_not_delivered() {
        let t = line();
        let mut st = NetworkState::initial(&t, 5.0, f64::INFINITY);
        let mut f = FlowRealization::idle(&t);
        f.arrivals[0] = 2.0;
        st.step_unlimited(&t, &f).unwrap();
        let mut f = FlowRealization::idle(&t);
        f.link_bits[0] = 3.0;
        st.step_unlimited(&t, &f).unwrap();
        assert_eq!((st.u[0], st.dummy[0]), (4.0, 4.0));
        assert_eq!((st.u[1], st.dummy[1]), (8.0, 6.0));
        let mut f = FlowRealization::idle(&t);
        f.link_bits[1] = 7.0;
        st.step_unlimited(&t, &f).unwrap();
        assert_eq!(st.delivered[0], 2.0);
        assert_eq!(st.dummy_gone[0], 5.0);
        assert_eq!((st.u[1], st.dummy[1]), (1.0, 1.0));
    }

    #[test]
    fn overflow_evicts_dummy_before_data() {
        let t = line();
        let cap = 10.0;
        let mut st = NetworkState::initial(&t, 20.0, cap);
        assert_eq!((st.u[0], st.dummy[0]), (cap, cap));
        let mut f = FlowRealization::idle(&t);
        f.arrivals[0] = 6.0;
        let d = st.step_limited(&t, &f, cap, f64::INFINITY);
        assert_eq!(d.buffer, 0.0);
        assert_eq!((st.u[0], st.dummy[0]), (cap, 4.0));
        f.arrivals[0] = 7.0;
        let d = st.step_limited(&t, &f, cap, f64::INFINITY);
        assert_eq!(d.buffer, 3.0);
        assert_eq!((st.u[0], st.dummy[0]), (cap, 0.0));
        assert_eq!(st.dummy_gone[0], cap);
        assert_eq!(st.u_virtual[0], 33.0);
    }

    #[test]
    fn battery_telescopes_over_random_trajectory() {
        let t = line();
        let mut st = NetworkState::initial(&t, 0.0, f64::INFINITY);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut sum_in, mut sum_out) = (vec![0.0; 3], vec![0.0; 3]);
        for _ in 0..10_000 {
            let mut f = FlowRealization::idle(&t);
            for n in 0..3 {
                if rng.random_bool(0.5) {
                    f.phi_in[n] = rng.random::<f64>() * 1e-3;
                } else {
                    f.phi_out[n] = rng.random::<f64>() * st.b[n];
                }
                sum_in[n] += f.phi_in[n];
                sum_out[n] += f.phi_out[n];
            }
            st.step_unlimited(&t, &f).unwrap();
        }
        for n in 0..3 {
            let expect = sum_in[n] - sum_out[n];
            assert!((st.b[n] - expect).abs() <= 1e-12 * sum_in[n], "{} vs {expect}", st.b[n]);
        }
    }

    #[test]
    fn infinite_caps_match_unlimited_step() {
        let t = line();
        let mut a = NetworkState::initial(&t, 50.0, f64::INFINITY);
        let mut b = a.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let mut f = FlowRealization::idle(&t);
            f.arrivals[0] = if rng.random_bool(0.3) { 10.0 } else { 0.0 };
            if rng.random_bool(0.5) {
                for l in 0..2 {
                    let head = t.link(l).head;
                    if a.u[head] > 20.0 {
                        f.link_bits[l] = rng.random::<f64>() * 20.0;
                    }
                }
            } else {
                f.phi_in[1] = 1e-4;
            }
            a.step_unlimited(&t, &f).unwrap();
            let drops = b.step_limited(&t, &f, f64::INFINITY, f64::INFINITY);
            assert_eq!(drops, SlotDrops::default());
            assert_eq!(a.u, b.u);
            assert_eq!(a.b, b.b);
            assert_eq!(a.u_virtual, b.u_virtual);
            assert_eq!(a.e_virtual, b.e_virtual);
        }
    }

    #[test]
    fn overflow_goes_to_buffer_drops() {
        let t = line();
        let cap = 100.0;
        let mut st = NetworkState::initial(&t, 0.0, cap);
        st.u[0] = cap - 1.0;
        let mut f = FlowRealization::idle(&t);
        f.arrivals[0] = 4.0;
        let d = st.step_limited(&t, &f, cap, f64::INFINITY);
        assert_eq!(d.buffer, 3.0);
        assert_eq!(st.u[0], cap);
        assert_eq!(st.u_virtual[0], 4.0);
    }

    #[test]
    fn energy_outage_drops_scheduled_bits_without_draining() {
        let t = line();
        let mut st = NetworkState::initial(&t, 50.0, f64::INFINITY);
        st.dummy[0] = 0.0;
        st.b[0] = 1e-6;
        let mut f = FlowRealization::idle(&t);
        f.link_bits[0] = 20.0;
        f.phi_out[0] = 2e-6;
        let d = st.step_limited(&t, &f, f64::INFINITY, 1e-3);
        assert_eq!(d.energy, 20.0);
        assert_eq!(st.b[0], 1e-6);
        assert_eq!(st.u[0], 30.0);
        assert_eq!(st.u[1], 50.0);
        assert_eq!(st.u_virtual[1], 70.0);
        assert_eq!(st.e_virtual[0], -2e-6);
    }

    #[test]
    fn battery_spill_is_discarded() {
        let t = line();
        let mut st = NetworkState::initial(&t, 0.0, f64::INFINITY);
        let mut f = FlowRealization::idle(&t);
        f.phi_in[2] = 5e-3;
        st.step_limited(&t, &f, f64::INFINITY, 1e-3);
        assert_eq!(st.b[2], 1e-3);
        assert_eq!(st.e_virtual[2], 5e-3);
    }

    #[test]
    fn imbalance_examples() {
        let t = line();
        let st = NetworkState::initial(&t, 12.0, f64::INFINITY);
        assert_eq!(imbalance_vector(&st, 3.0), vec![12.0; 3]);
        assert_eq!(imbalance(&[4.0, 2.0], 2.0, 3.0), 0.0);
    }

    #[test]
    fn imbalance_matches_resum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let u: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 1e6).collect();
            let e: f64 = rng.random::<f64>() * 1e-3;
            let c = 1e9;
            let expect = u.iter().rev().sum::<f64>() - c * e;
            let got = imbalance(&u, e, c);
            assert!((got - expect).abs() <= 1e-9 * u.iter().sum::<f64>());
        }
    }
}
