//! Brute-force solvers and trace-level invariant checks, kept independent of
//! the controller's search code.

use std::io::Read;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::DerivedConstants;
use crate::controller::link_term;
use crate::engine::{trace_header, Observer, SlotRecord};
use crate::controller::SlotMode;
use crate::error::{Error, Result};
use crate::rate::RateModel;
use crate::state::SlotDrops;
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// `Z_n(t) < μ_max`.
    Lemma2_1,
    /// A link transmitted stream `s` while `U_{head,s} < U0 + μ_max`.
    Lemma2_2,
    /// A node drained energy while `B_n < φ_max`.
    Lemma2_3,
    /// `φ^o_n > B_n`.
    Battery,
    MatchingGap,
    EigenGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub slot: u64,
    /// 1-based node or link id; 0 when not applicable.
    pub id: usize,
    pub observed: f64,
    pub required: f64,
}

/// Streaming Lemma 2 and battery checker over virtual counters.
#[derive(Debug, Clone)]
pub struct Lemma2Checker {
    heads: Vec<usize>,
    streams: usize,
    mu_max: f64,
    gate_u: f64,
    phi_max: f64,
    pub slots: u64,
    pub violations: Vec<Violation>,
}

impl Lemma2Checker {
    pub fn new(topo: &Topology, consts: &DerivedConstants) -> Self {
        Self {
            heads: topo.links().iter().map(|l| l.head).collect(),
            streams: topo.stream_count(),
            mu_max: consts.mu_max,
            gate_u: consts.u0 + consts.mu_max,
            phi_max: consts.phi_max,
            slots: 0,
            violations: Vec::new(),
        }
    }

    pub fn check(&mut self, r: &SlotRecord) {
        self.slots += 1;
        let mut push = |kind, id, observed, required| {
            self.violations.push(Violation { kind, slot: r.slot, id, observed, required });
        };
        for (n, &z) in r.z.iter().enumerate() {
            if !(z >= self.mu_max) {
                push(ViolationKind::Lemma2_1, n + 1, z, self.mu_max);
            }
        }
        for (l, &rate) in r.rate.iter().enumerate() {
            if rate > 0.0 {
                let u = r.u_virtual[self.heads[l] * self.streams + r.stream[l]];
                if !(u >= self.gate_u) {
                    push(ViolationKind::Lemma2_2, l + 1, u, self.gate_u);
                }
            }
        }
        for (n, &out) in r.phi_out.iter().enumerate() {
            if out > 0.0 {
                let e = r.e_virtual[n];
                if !(e >= self.phi_max) {
                    push(ViolationKind::Lemma2_3, n + 1, e, self.phi_max);
                }
                if !(out <= e) {
                    push(ViolationKind::Battery, n + 1, out, e);
                }
            }
        }
    }
}

impl Observer for Lemma2Checker {
    fn observe(&mut self, rec: &SlotRecord) -> Result<()> {
        self.check(rec);
        Ok(())
    }
}

pub fn check_lemma2(topo: &Topology, consts: &DerivedConstants, records: &[SlotRecord]) -> Vec<Violation> {
    let mut ck = Lemma2Checker::new(topo, consts);
    for r in records {
        ck.check(r);
    }
    ck.violations
}

/// Parses a trace CSV written by [`crate::engine::CsvTraceWriter`].
pub fn read_trace<R: Read>(input: R, topo: &Topology) -> Result<Vec<SlotRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let bad = |msg: String| Error::Trace(msg);
    let header: Vec<String> = rd
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != trace_header(topo) {
        return Err(bad("trace header does not match the topology".into()));
    }
    let (n, s, l) = (topo.node_count(), topo.stream_count(), topo.link_count());
    let mut out = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let mut it = rec.iter();
        let mut field = || it.next().ok_or_else(|| bad(format!("row {} is short", row + 1)));
        let num = |f: &str| -> Result<f64> {
            f.parse::<f64>()
                .map_err(|_| Error::Trace(format!("row {}: bad number {f:?}", row + 1)))
        };
        let slot: u64 = field()?
            .parse()
            .map_err(|_| bad(format!("row {}: bad slot", row + 1)))?;
        let mode = match field()? {
            "energy" => SlotMode::Energy,
            "data" => SlotMode::Data,
            m => return Err(bad(format!("row {}: unknown mode {m:?}", row + 1))),
        };
        let e_ap = num(field()?)?;
        let mut r = SlotRecord {
            slot,
            mode,
            e_ap,
            z: Vec::with_capacity(n),
            u_virtual: Vec::with_capacity(n * s),
            e_virtual: Vec::with_capacity(n),
            u: Vec::with_capacity(n * s),
            b: Vec::with_capacity(n),
            power: Vec::with_capacity(l),
            rate: Vec::with_capacity(l),
            stream: Vec::with_capacity(l),
            realized: Vec::with_capacity(l),
            received: Vec::new(),
            phi_in: Vec::with_capacity(n),
            phi_out: Vec::with_capacity(n),
            arrivals: Vec::new(),
            drops: SlotDrops::default(),
        };
        for _ in 0..n {
            r.z.push(num(field()?)?);
            r.e_virtual.push(num(field()?)?);
            r.b.push(num(field()?)?);
        }
        for _ in 0..n * s {
            r.u_virtual.push(num(field()?)?);
            r.u.push(num(field()?)?);
        }
        for _ in 0..l {
            r.power.push(num(field()?)?);
            r.rate.push(num(field()?)?);
            let sid: usize = field()?
                .parse()
                .map_err(|_| bad(format!("row {}: bad stream id", row + 1)))?;
            if sid == 0 || sid > s {
                return Err(bad(format!("row {}: stream id {sid} out of range", row + 1)));
            }
            r.stream.push(sid - 1);
            r.realized.push(num(field()?)?);
        }
        for _ in 0..n {
            r.phi_in.push(num(field()?)?);
            r.phi_out.push(num(field()?)?);
        }
        r.drops.buffer = num(field()?)?;
        r.drops.energy = num(field()?)?;
        out.push(r);
    }
    Ok(out)
}

pub const BRUTE_FORCE_MAX_LINKS: usize = 10;
pub const BRUTE_FORCE_MAX_LEVELS: usize = 4;

/// Minimum of the data-slot objective over every node-disjoint link set and
/// every assignment of nonzero levels to its links. Terms are summed in link
/// order, as in the controller.
pub fn brute_force_schedule(
    topo: &Topology,
    z: &[f64],
    w_l: &[f64],
    g: &[Complex64],
    rate: &RateModel,
    levels: &[f64],
    c: f64,
) -> Result<f64> {
    let levels: Vec<f64> = levels.iter().copied().filter(|&p| p > 0.0).collect();
    if topo.link_count() > BRUTE_FORCE_MAX_LINKS || levels.len() > BRUTE_FORCE_MAX_LEVELS {
        return Err(Error::SizeGuard(format!(
            "brute force is limited to {BRUTE_FORCE_MAX_LINKS} links and {BRUTE_FORCE_MAX_LEVELS} levels, got {} and {}",
            topo.link_count(),
            levels.len()
        )));
    }
    let l_count = topo.link_count();
    let terms: Vec<Vec<f64>> = (0..l_count)
        .map(|l| {
            let g2 = g[l].norm_sqr();
            levels
                .iter()
                .map(|&p| link_term(c, z[topo.link(l).head], p, w_l[l], rate.rate(p, g2)))
                .collect()
        })
        .collect();
    let mut best = 0.0_f64;
    for mask in 1u32..(1 << l_count) {
        let set: Vec<usize> = (0..l_count).filter(|&l| mask >> l & 1 == 1).collect();
        let mut nodes = vec![false; topo.node_count()];
        let disjoint = set.iter().all(|&l| {
            let link = topo.link(l);
            let ok = !nodes[link.head] && !nodes[link.tail];
            nodes[link.head] = true;
            nodes[link.tail] = true;
            ok
        });
        if !disjoint {
            continue;
        }
        let k = levels.len();
        let mut pick = vec![0usize; set.len()];
        loop {
            let mut total = 0.0;
            for (i, &l) in set.iter().enumerate() {
                total += terms[l][pick[i]];
            }
            best = best.min(total);
            let mut i = 0;
            while i < pick.len() {
                pick[i] += 1;
                if pick[i] < k {
                    break;
                }
                pick[i] = 0;
                i += 1;
            }
            if i == pick.len() {
                break;
            }
        }
    }
    Ok(best)
}

/// `(λ_max, v_max)` of an `m × m` Hermitian matrix (row-major) by cyclic
/// Jacobi rotations on its real `2m × 2m` embedding.
pub fn exact_eigen(h: &[Complex64], m: usize) -> Result<(f64, Vec<Complex64>)> {
    if h.len() != m * m || m == 0 {
        return Err(Error::InvalidArgument(format!("expected a {m}×{m} matrix")));
    }
    let scale = h.iter().map(|x| x.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for i in 0..m {
        for j in 0..m {
            if (h[i * m + j] - h[j * m + i].conj()).norm() > 1e-12 * scale {
                return Err(Error::InvalidArgument(format!("matrix is not Hermitian at ({i}, {j})")));
            }
        }
    }
    // [[A, -B], [B, A]] for H = A + iB
    let n = 2 * m;
    let mut a = vec![0.0; n * n];
    for i in 0..m {
        for j in 0..m {
            let x = h[i * m + j];
            a[i * n + j] = x.re;
            a[(i + m) * n + (j + m)] = x.re;
            a[i * n + (j + m)] = -x.im;
            a[(i + m) * n + j] = x.im;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = cs * akp - sn * akq;
                    a[k * n + q] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = cs * apk - sn * aqk;
                    a[q * n + k] = sn * apk + cs * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = cs * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + cs * vkq;
                }
            }
        }
    }
    let top = (0..n)
        .max_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]))
        .expect("nonempty");
    let mut w: Vec<Complex64> = (0..m)
        .map(|i| Complex64::new(v[i * n + top], v[(i + m) * n + top]))
        .collect();
    let norm = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    for x in &mut w {
        *x /= norm;
    }
    Ok((a[top * n + top], w))
}

/// Deviation-frequency curve of one post-warmup series around its median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractionStats {
    pub median: f64,
    pub iqr: f64,
    /// Thresholds `m_k = k·IQR/2`, `k = 1..=10`.
    pub thresholds: Vec<f64>,
    /// `f(m_k)`: fraction of samples with `|x − median| > m_k`.
    pub freq: Vec<f64>,
    /// `f` falls at every step until it reaches zero.
    pub strictly_decreasing: bool,
}

impl AttractionStats {
    /// `f` at five interquartile ranges.
    pub fn tail_at_5_iqr(&self) -> f64 {
        *self.freq.last().unwrap_or(&0.0)
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn attraction_stats(series: &[f64]) -> AttractionStats {
    if series.is_empty() {
        return AttractionStats {
            median: 0.0,
            iqr: 0.0,
            thresholds: vec![],
            freq: vec![],
            strictly_decreasing: true,
        };
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = quantile(&sorted, 0.5);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let unit = if iqr > 0.0 { iqr / 2.0 } else { f64::MIN_POSITIVE };
    let thresholds: Vec<f64> = (1..=10).map(|k| k as f64 * unit).collect();
    let mut dev: Vec<f64> = series.iter().map(|x| (x - median).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let n = dev.len() as f64;
    let freq: Vec<f64> = thresholds
        .iter()
        .map(|&m| (dev.len() - dev.partition_point(|&d| d <= m)) as f64 / n)
        .collect();
    let strictly_decreasing = freq.windows(2).all(|w| w[1] < w[0] || w[0] == 0.0 && w[1] == 0.0);
    AttractionStats { median, iqr, thresholds, freq, strictly_decreasing }
}

/// Attraction statistics of a run, refused when the run was flagged unstable.
pub fn attraction_for(summary: &crate::engine::RunSummary) -> Result<&crate::engine::AttractionSummary> {
    if !summary.stable {
        return Err(Error::InvalidArgument(format!(
            "run is not stable: backlog slope {} ± {} bits/slot",
            summary.backlog_slope, summary.backlog_slope_stderr
        )));
    }
    summary
        .attraction
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("run has too few measured slots".into()))
}
