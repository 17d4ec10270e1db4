//! The EECW per-slot policy.
//!
//! Every decision is made from the virtual counters and the estimated
//! channels; the engine realizes it against the true channels.

use num_complex::Complex64;

use crate::channel::EstimatedChannelState;
use crate::config::{SchedulerBackend, SimConfig};
use crate::constants::DerivedConstants;
use crate::error::{Error, Result};
use crate::rate::RateModel;
use crate::state::imbalance;
use crate::topology::Topology;

/// Above this many profitable links the `Auto` backend switches to greedy.
pub const EXACT_LINK_LIMIT: usize = 20;

const SQUARINGS: usize = 10;
const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 1000;

/// `Z_n` for every node from flat `N × S` virtual queues.
pub fn imbalances(topo: &Topology, u_virtual: &[f64], e_virtual: &[f64], c: f64) -> Vec<f64> {
    let s = topo.stream_count();
    (0..topo.node_count())
        .map(|n| imbalance(&u_virtual[n * s..(n + 1) * s], e_virtual[n], c))
        .collect()
}

/// `W_{l,s} = Z_h − Z_t + U_{h,s} − U_{t,s}`, flat `L × S`. A stream cannot
/// leave its own sink; those entries are `−∞`.
pub fn routing_weights(topo: &Topology, u: &[f64], z: &[f64]) -> Vec<f64> {
    let s_count = topo.stream_count();
    let mut w = Vec::with_capacity(topo.link_count() * s_count);
    for link in topo.links() {
        let (h, t) = (link.head, link.tail);
        for s in 0..s_count {
            if topo.is_sink(h, s) {
                w.push(f64::NEG_INFINITY);
            } else {
                w.push(z[h] - z[t] + u[h * s_count + s] - u[t * s_count + s]);
            }
        }
    }
    w
}

/// Per link: `s_l = argmax_s W_{l,s}` (lowest id on ties) and
/// `W_l = max{max_s W_{l,s}, 0}`.
pub fn select_streams(weights: &[f64], streams: usize) -> (Vec<usize>, Vec<f64>) {
    if streams == 0 {
        return (Vec::new(), Vec::new());
    }
    let links = weights.len() / streams;
    let mut sel = Vec::with_capacity(links);
    let mut best = Vec::with_capacity(links);
    for row in weights.chunks_exact(streams) {
        let mut arg = 0;
        for s in 1..streams {
            if row[s] > row[arg] {
                arg = s;
            }
        }
        sel.push(arg);
        best.push(row[arg].max(0.0));
    }
    (sel, best)
}

/// One link's contribution `𝒞·Z_h·p − W_l·R` to the (MW) objective.
#[inline]
pub fn link_term(c: f64, z_head: f64, p: f64, w: f64, r: f64) -> f64 {
    c * z_head * p - w * r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkChoice {
    pub power: f64,
    pub rate: f64,
    /// Negated objective term; positive means worth activating.
    pub score: f64,
}

/// Best power level for each link in isolation. Ties go to the lower power;
/// links with no positive score get `None`.
pub fn best_link_choices(
    topo: &Topology,
    z: &[f64],
    w_l: &[f64],
    g: &[Complex64],
    rate: &RateModel,
    levels: &[f64],
    c: f64,
) -> Vec<Option<LinkChoice>> {
    topo.links()
        .iter()
        .enumerate()
        .map(|(l, link)| {
            if w_l[l] <= 0.0 {
                return None;
            }
            let g2 = g[l].norm_sqr();
            let mut best: Option<LinkChoice> = None;
            for &p in levels {
                if p <= 0.0 {
                    continue;
                }
                let r = rate.rate(p, g2);
                let score = -link_term(c, z[link.head], p, w_l[l], r);
                if score > 0.0 && best.is_none_or(|b| score > b.score) {
                    best = Some(LinkChoice { power: p, rate: r, score });
                }
            }
            best
        })
        .collect()
}

/// Maximum-weight set of node-disjoint links. `scores[l] ≤ 0` marks a link
/// as unusable. Returns active link indices in increasing order.
pub fn max_weight_matching(topo: &Topology, scores: &[f64], backend: SchedulerBackend) -> Vec<usize> {
    let cand: Vec<usize> = (0..scores.len()).filter(|&l| scores[l] > 0.0).collect();
    let exact = match backend {
        SchedulerBackend::Exact => true,
        SchedulerBackend::Greedy => false,
        SchedulerBackend::Auto => cand.len() <= EXACT_LINK_LIMIT,
    };
    if exact {
        exact_matching(topo, scores, &cand)
    } else {
        greedy_matching(topo, scores, &cand)
    }
}

fn greedy_matching(topo: &Topology, scores: &[f64], cand: &[usize]) -> Vec<usize> {
    let mut order = cand.to_vec();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut used = vec![false; topo.node_count()];
    let mut chosen = Vec::new();
    for l in order {
        let link = topo.link(l);
        if !used[link.head] && !used[link.tail] {
            used[link.head] = true;
            used[link.tail] = true;
            chosen.push(l);
        }
    }
    chosen.sort_unstable();
    chosen
}

struct Search<'a> {
    topo: &'a Topology,
    scores: &'a [f64],
    cand: &'a [usize],
    used: Vec<bool>,
    stack: Vec<usize>,
    best: f64,
    best_set: Vec<usize>,
}

impl Search<'_> {
    fn bound(&self, from: usize) -> f64 {
        let mut acc = 0.0;
        for &l in &self.cand[from..] {
            let link = self.topo.link(l);
            if !self.used[link.head] && !self.used[link.tail] {
                acc += self.scores[l];
            }
        }
        acc
    }

    // Include-first depth-first search over candidates in index order; only a
    // strict improvement replaces the incumbent, so among equal totals the
    // lexicographically smallest set wins.
    fn dfs(&mut self, i: usize, total: f64) {
        if i == self.cand.len() {
            if total > self.best {
                self.best = total;
                self.best_set.clone_from(&self.stack);
            }
            return;
        }
        if total + self.bound(i) * (1.0 + 1e-9) <= self.best {
            return;
        }
        let l = self.cand[i];
        let link = self.topo.link(l);
        if !self.used[link.head] && !self.used[link.tail] {
            self.used[link.head] = true;
            self.used[link.tail] = true;
            self.stack.push(l);
            self.dfs(i + 1, total + self.scores[l]);
            self.stack.pop();
            self.used[link.head] = false;
            self.used[link.tail] = false;
        }
        self.dfs(i + 1, total);
    }
}

fn exact_matching(topo: &Topology, scores: &[f64], cand: &[usize]) -> Vec<usize> {
    let mut search = Search {
        topo,
        scores,
        cand,
        used: vec![false; topo.node_count()],
        stack: Vec::new(),
        best: 0.0,
        best_set: Vec::new(),
    };
    search.dfs(0, 0.0);
    search.best_set
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSchedule {
    pub power: Vec<f64>,
    /// `R_l` at the chosen power under the channels the decision was made on.
    pub rate: Vec<f64>,
    pub scores: Vec<f64>,
    /// `F_d* = Σ_l [𝒞·Z_h·p_l − W_l·R_l]`, summed in link order.
    pub f_d: f64,
}

/// Solves (MW) under the node-exclusive model.
#[allow(clippy::too_many_arguments)]
pub fn schedule_data(
    topo: &Topology,
    z: &[f64],
    w_l: &[f64],
    g: &[Complex64],
    rate: &RateModel,
    levels: &[f64],
    c: f64,
    backend: SchedulerBackend,
) -> Result<DataSchedule> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument("empty power level set".into()));
    }
    let choices = best_link_choices(topo, z, w_l, g, rate, levels, c);
    let scores: Vec<f64> = choices.iter().map(|c| c.map_or(0.0, |c| c.score)).collect();
    let active = max_weight_matching(topo, &scores, backend);
    let l_count = topo.link_count();
    let mut power = vec![0.0; l_count];
    let mut rates = vec![0.0; l_count];
    let mut f_d = 0.0;
    for &l in &active {
        let ch = choices[l].expect("active links have a choice");
        power[l] = ch.power;
        rates[l] = ch.rate;
        f_d += link_term(c, z[topo.link(l).head], ch.power, w_l[l], ch.rate);
    }
    Ok(DataSchedule {
        power,
        rate: rates,
        scores,
        f_d,
    })
}

/// Hermitian `n × n` row-major product `a·b`.
fn matmul(a: &[Complex64], b: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

fn trace(a: &[Complex64], n: usize) -> f64 {
    (0..n).map(|i| a[i * n + i].re).sum()
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Rotates `v` so that its first entry of non-negligible magnitude is real and positive.
fn fix_phase(v: &mut [Complex64]) {
    let peak = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if let Some(pivot) = v.iter().find(|z| z.norm() > 1e-8 * peak).copied() {
        let rot = pivot.conj() / pivot.norm();
        for z in v.iter_mut() {
            *z *= rot;
        }
    }
}

/// Rayleigh quotient `vᴴ·A·v` for unit `v`.
pub fn rayleigh(a: &[Complex64], v: &[Complex64], n: usize) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        let mut row = Complex64::new(0.0, 0.0);
        for j in 0..n {
            row += a[i * n + j] * v[j];
        }
        acc += v[i].conj() * row;
    }
    acc.re
}

/// Principal eigenpair of a Hermitian PSD matrix by power iteration on
/// `A^(2^10)`, started from the column of that power with the largest diagonal.
/// Returns `None` when `A` is numerically zero.
pub fn principal_eigen(a: &[Complex64], n: usize) -> Option<(f64, Vec<Complex64>)> {
    let tr = trace(a, n);
    if !(tr > f64::MIN_POSITIVE) || !tr.is_finite() {
        return None;
    }
    let mut p: Vec<Complex64> = a.iter().map(|z| z / tr).collect();
    for _ in 0..SQUARINGS {
        let sq = matmul(&p, &p, n);
        let t = trace(&sq, n);
        if !(t > f64::MIN_POSITIVE) {
            break;
        }
        p = sq.into_iter().map(|z| z / t).collect();
    }
    let j = (0..n)
        .max_by(|&x, &y| p[x * n + x].re.total_cmp(&p[y * n + y].re).then(y.cmp(&x)))
        .expect("n > 0");
    let mut v: Vec<Complex64> = (0..n).map(|i| p[i * n + j]).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|z| *z /= nv);
    fix_phase(&mut v);
    for _ in 0..POWER_MAX_ITERS {
        let mut next = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            for k in 0..n {
                next[i] += p[i * n + k] * v[k];
            }
        }
        let nn = norm(&next);
        if !(nn > 0.0) {
            break;
        }
        next.iter_mut().for_each(|z| *z /= nn);
        fix_phase(&mut next);
        let diff = next.iter().zip(&v).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        v = next;
        if diff < POWER_TOL {
            break;
        }
    }
    Some((rayleigh(a, &v, n), v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    /// Unit beamforming row vector `w`.
    pub w: Vec<Complex64>,
    /// `|w·h_nᵀ|²` per node.
    pub gains: Vec<f64>,
}

/// `|w·h_nᵀ|²` for every row of `h`.
pub fn beam_gains(w: &[Complex64], h: &[Complex64], m: usize) -> Vec<f64> {
    h.chunks_exact(m)
        .map(|row| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (wi, hi) in w.iter().zip(row) {
                acc += wi * hi;
            }
            acc.norm_sqr()
        })
        .collect()
}

/// Energy beam `w = v*_max` of `H = 𝒞 Σ_n Z_n h_nᵀ h_n*`.
///
/// When `N < M` the eigenproblem is solved on the `N × N` Gram matrix of the
/// weighted rows and mapped back.
pub fn beamform(z: &[f64], h: &[Complex64], m: usize, c: f64) -> Beam {
    let n_nodes = z.len();
    let e1 = || {
        let mut w = vec![Complex64::new(0.0, 0.0); m];
        w[0] = Complex64::new(1.0, 0.0);
        w
    };
    let d: Vec<f64> = z.iter().map(|&zn| (c * zn).max(0.0)).collect();
    let v = if n_nodes < m {
        let sd: Vec<f64> = d.iter().map(|x| x.sqrt()).collect();
        let mut k = vec![Complex64::new(0.0, 0.0); n_nodes * n_nodes];
        for a in 0..n_nodes {
            for b in 0..n_nodes {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..m {
                    acc += h[a * m + i].conj() * h[b * m + i];
                }
                k[a * n_nodes + b] = acc * (sd[a] * sd[b]);
            }
        }
        principal_eigen(&k, n_nodes).map(|(_, u)| {
            let mut v = vec![Complex64::new(0.0, 0.0); m];
            for (nn, un) in u.iter().enumerate() {
                for i in 0..m {
                    v[i] += h[nn * m + i] * sd[nn] * un;
                }
            }
            v
        })
    } else {
        principal_eigen(&energy_matrix(z, h, m, c), m).map(|(_, v)| v)
    };
    let w = match v {
        Some(v) if norm(&v) > 0.0 => {
            let nv = norm(&v);
            let mut w: Vec<Complex64> = v.iter().map(|x| x.conj() / nv).collect();
            fix_phase(&mut w);
            w
        }
        _ => e1(),
    };
    let gains = beam_gains(&w, h, m);
    Beam { w, gains }
}

/// `H = 𝒞 Σ_n Z_n h_nᵀ h_n*` as an `M × M` row-major matrix.
pub fn energy_matrix(z: &[f64], h: &[Complex64], m: usize, c: f64) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); m * m];
    for (n, &zn) in z.iter().enumerate() {
        let d = (c * zn).max(0.0);
        let row = &h[n * m..(n + 1) * m];
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] += row[i] * row[j].conj() * d;
            }
        }
    }
    out
}

/// `𝒞·Σ_n gains_n·Z_n`, summed in node order.
pub fn weighted_gain(gains: &[f64], z: &[f64], c: f64) -> f64 {
    let mut acc = 0.0;
    for (g, zn) in gains.iter().zip(z) {
        acc += g * zn;
    }
    c * acc
}

/// `P_AP = P_APm` if `V < 𝒞·Σ gains·Z`, else 0.
pub fn schedule_eap(v: f64, gains: &[f64], z: &[f64], c: f64, p_ap_max: f64) -> f64 {
    if v < weighted_gain(gains, z, c) {
        p_ap_max
    } else {
        0.0
    }
}

/// `F_e* = P_AP·(V − 𝒞·Σ gains·Z)`.
pub fn energy_objective(p_ap: f64, v: f64, gains: &[f64], z: &[f64], c: f64) -> f64 {
    if p_ap == 0.0 {
        0.0
    } else {
        p_ap * (v - weighted_gain(gains, z, c))
    }
}

/// `(τ_e, τ_d)`: the whole slot goes to energy iff `F_e* ≤ F_d*`.
pub fn time_share(f_d: f64, f_e: f64, slot_seconds: f64) -> (f64, f64) {
    if f_e <= f_d {
        (slot_seconds, 0.0)
    } else {
        (0.0, slot_seconds)
    }
}

/// `φ^i_n = min{E_n, (Z_n − μ_max)/𝒞}`.
pub fn energy_intake_cap(received: f64, z: f64, mu_max: f64, c: f64) -> Result<f64> {
    if z < mu_max {
        return Err(Error::InvalidArgument(format!(
            "imbalance {z} below mu_max {mu_max}: intake cap would be negative"
        )));
    }
    Ok(received.min((z - mu_max) / c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotMode {
    Energy,
    Data,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlAction {
    pub mode: SlotMode,
    pub tau_e: f64,
    pub tau_d: f64,
    pub w: Vec<Complex64>,
    /// Estimated `|w·h_nᵀ|²` per node.
    pub gains: Vec<f64>,
    pub p_ap: f64,
    /// Per-link transmit power, watts.
    pub power: Vec<f64>,
    /// `s_l` per link.
    pub stream: Vec<usize>,
    /// Rate assigned to `s_l` on each link, bits/s; all other streams get 0.
    pub rate: Vec<f64>,
    /// `(Z_n − μ_max)/𝒞`, joules.
    pub intake_cap: Vec<f64>,
    pub scores: Vec<f64>,
    pub z: Vec<f64>,
    pub f_d: f64,
    pub f_e: f64,
}

impl ControlAction {
    /// `R_{l,s}`.
    pub fn rate_for(&self, l: usize, s: usize) -> f64 {
        if self.stream[l] == s {
            self.rate[l]
        } else {
            0.0
        }
    }
}

/// One EECW decision.
#[allow(clippy::too_many_arguments)]
pub fn eecw_step(
    topo: &Topology,
    u_virtual: &[f64],
    e_virtual: &[f64],
    est: &EstimatedChannelState,
    k: &DerivedConstants,
    cfg: &SimConfig,
    rate: &RateModel,
    levels: &[f64],
) -> Result<ControlAction> {
    let z = imbalances(topo, u_virtual, e_virtual, k.c);
    if let Some(n) = z.iter().position(|&zn| zn < k.mu_max) {
        return Err(Error::Invariant {
            slot: est.slot,
            reason: format!("Z of node {} is {} < mu_max {}", n + 1, z[n], k.mu_max),
        });
    }
    let weights = routing_weights(topo, u_virtual, &z);
    let (stream, w_l) = select_streams(&weights, topo.stream_count());
    let stream = if stream.is_empty() { vec![0; topo.link_count()] } else { stream };
    let w_l = if w_l.is_empty() { vec![0.0; topo.link_count()] } else { w_l };
    let data = schedule_data(topo, &z, &w_l, &est.g, rate, levels, k.c, cfg.scheduler)?;
    let beam = beamform(&z, &est.h, est.antennas, k.c);
    let p_ap = schedule_eap(cfg.v, &beam.gains, &z, k.c, cfg.eap_power_max);
    let f_e = energy_objective(p_ap, cfg.v, &beam.gains, &z, k.c);
    let (tau_e, tau_d) = time_share(data.f_d, f_e, cfg.slot_seconds);
    let intake_cap = z.iter().map(|&zn| (zn - k.mu_max) / k.c).collect();
    let energy = tau_e > 0.0;
    Ok(ControlAction {
        mode: if energy { SlotMode::Energy } else { SlotMode::Data },
        tau_e,
        tau_d,
        w: beam.w,
        gains: beam.gains,
        p_ap: if energy { p_ap } else { 0.0 },
        power: if energy { vec![0.0; topo.link_count()] } else { data.power },
        stream,
        rate: if energy { vec![0.0; topo.link_count()] } else { data.rate },
        intake_cap,
        scores: data.scores,
        z,
        f_d: data.f_d,
        f_e,
    })
}
