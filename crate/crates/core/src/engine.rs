//! The slot loop and run summaries.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelModel, ChannelState, LineOfSight};
use crate::config::{ConfigFile, SimConfig, SCHEMA_VERSION};
use crate::constants::{derive_constants, DerivedConstants};
use crate::controller::{eecw_step, ControlAction, SlotMode};
use crate::error::{Error, Result};
use crate::oracle::{attraction_stats, AttractionStats};
use crate::rate::RateModel;
use crate::rng::{run_seed, stream, Purpose};
use crate::state::{imbalance, FlowRealization, NetworkState, SlotDrops};
use crate::topology::Topology;

pub const BUILD_ID: &str = env!("EECW_BUILD_ID");

/// Bernoulli packets: `A_m` bits at each source with probability `λ·τ/A_m`.
/// Returns a flat `N × S` vector.
pub fn sample_arrivals<R: Rng + ?Sized>(
    rng: &mut R,
    topo: &Topology,
    rates: &[f64],
    max_bits: f64,
    slot_seconds: f64,
) -> Result<Vec<f64>> {
    let s_count = topo.stream_count();
    let mut a = vec![0.0; topo.node_count() * s_count];
    for (s, &lambda) in rates.iter().enumerate() {
        let prob = lambda * slot_seconds / max_bits;
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::InvalidArgument(format!(
                "stream {} mean arrivals per slot {} exceed A_m = {max_bits}",
                s + 1,
                lambda * slot_seconds
            )));
        }
        if rng.random_bool(prob) {
            a[topo.stream(s).source * s_count + s] = max_bits;
        }
    }
    Ok(a)
}

/// Applies `action` to the true channels. Arrivals are left at zero and
/// stored energy is `min{E_n, planned cap}`.
pub fn realize_transfer(
    topo: &Topology,
    action: &ControlAction,
    truth: &ChannelState,
    rate: &RateModel,
) -> (FlowRealization, Vec<f64>) {
    let mut flow = FlowRealization::idle(topo);
    let mut received = vec![0.0; topo.node_count()];
    match action.mode {
        SlotMode::Energy => {
            if action.p_ap > 0.0 {
                let gains = crate::controller::beam_gains(&action.w, &truth.h, truth.antennas);
                for (n, g) in gains.iter().enumerate() {
                    received[n] = g * action.tau_e * action.p_ap;
                    flow.phi_in[n] = received[n].min(action.intake_cap[n]).max(0.0);
                }
            }
        }
        SlotMode::Data => {
            for (l, link) in topo.links().iter().enumerate() {
                let p = action.power[l];
                if p <= 0.0 {
                    continue;
                }
                let achievable = rate.rate(p, truth.g[l].norm_sqr());
                flow.link_bits[l] = action.tau_d * action.rate[l].min(achievable);
                flow.link_stream[l] = action.stream[l];
                flow.phi_out[link.head] += action.tau_d * p;
            }
        }
    }
    for (l, s) in action.stream.iter().enumerate() {
        if flow.link_bits[l] == 0.0 {
            flow.link_stream[l] = *s;
        }
    }
    (flow, received)
}

/// Lowers `phi` until the post-slot imbalance `Σ_s Ũ' − 𝒞·(Ẽ + φ)` stays at
/// or above `μ_max` in floating point. `u_next` must be the exact next
/// virtual queue values of the node.
pub fn settle_intake(u_next: &[f64], e: f64, mut phi: f64, c: f64, mu_max: f64) -> f64 {
    for _ in 0..64 {
        if phi <= 0.0 || imbalance(u_next, e + phi, c) >= mu_max {
            return phi.max(0.0);
        }
        phi = (phi * (1.0 - 4.0 * f64::EPSILON)).next_down();
    }
    0.0
}

/// One slot as seen after it has been played out. State fields are the
/// values at the start of the slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: u64,
    pub mode: SlotMode,
    /// `E_AP = τ_e·P_AP`, joules.
    pub e_ap: f64,
    pub z: Vec<f64>,
    pub u_virtual: Vec<f64>,
    pub e_virtual: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
    pub power: Vec<f64>,
    /// Scheduled rate per link (bits/s), carried by `stream`.
    pub rate: Vec<f64>,
    pub stream: Vec<usize>,
    /// Realized rate per link under the true channels.
    pub realized: Vec<f64>,
    pub received: Vec<f64>,
    pub phi_in: Vec<f64>,
    pub phi_out: Vec<f64>,
    pub arrivals: Vec<f64>,
    pub drops: SlotDrops,
}

pub trait Observer {
    fn observe(&mut self, rec: &SlotRecord) -> Result<()>;
}

/// Collects every record in memory.
#[derive(Debug, Default)]
pub struct Trace {
    pub records: Vec<SlotRecord>,
}

impl Observer for Trace {
    fn observe(&mut self, rec: &SlotRecord) -> Result<()> {
        self.records.push(rec.clone());
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum ChannelSource {
    Sampled,
    /// Replayed true channels; requires perfect CSI.
    Replay(Vec<ChannelState>),
}

/// A run in progress.
pub struct Simulation {
    pub topo: Topology,
    pub cfg: SimConfig,
    pub constants: DerivedConstants,
    pub rate: RateModel,
    pub channels: ChannelModel,
    pub state: NetworkState,
    levels: Vec<f64>,
    source: ChannelSource,
    rng_channel: ChaCha8Rng,
    rng_estimate: ChaCha8Rng,
    rng_arrivals: ChaCha8Rng,
}

impl Simulation {
    pub fn new(topo: Topology, cfg: SimConfig) -> Result<Self> {
        Self::with_source(topo, cfg, ChannelSource::Sampled)
    }

    pub fn with_source(topo: Topology, cfg: SimConfig, source: ChannelSource) -> Result<Self> {
        cfg.validate()?;
        if matches!(source, ChannelSource::Replay(_))
            && (cfg.pilot_energy_g.is_finite() || cfg.pilot_energy_h.is_finite())
        {
            return Err(Error::InvalidArgument(
                "channel replay carries no scatter components; it requires perfect CSI".into(),
            ));
        }
        let rate = RateModel::from_config(&cfg)?;
        let constants = derive_constants(&cfg, &topo, &rate)?;
        let mut rng_los = stream(cfg.seed, Purpose::LineOfSight);
        let los = LineOfSight::draw(&mut rng_los, topo.link_count(), topo.node_count(), topo.eap_antennas());
        let channels = ChannelModel {
            beta_g: constants.beta_g.clone(),
            beta_h: constants.beta_h.clone(),
            rician_k: cfg.rician_k,
            fading_cap: cfg.fading_cap,
            antennas: topo.eap_antennas(),
            los,
        };
        let state = NetworkState::initial(&topo, constants.u0, cfg.buffer_cap_bits);
        Ok(Self {
            levels: cfg.power_set(),
            rng_channel: stream(cfg.seed, Purpose::Channel),
            rng_estimate: stream(cfg.seed, Purpose::Estimate),
            rng_arrivals: stream(cfg.seed, Purpose::Arrivals),
            topo,
            cfg,
            constants,
            rate,
            channels,
            state,
            source,
        })
    }

    fn truth(&mut self, slot: u64) -> Result<ChannelState> {
        match &self.source {
            ChannelSource::Sampled => Ok(self.channels.sample(&mut self.rng_channel, slot)),
            ChannelSource::Replay(states) => states
                .get(slot as usize)
                .cloned()
                .ok_or_else(|| Error::Trace(format!("channel replay ends before slot {slot}"))),
        }
    }

    /// Plays one slot and returns its record.
    pub fn step(&mut self) -> Result<SlotRecord> {
        let slot = self.state.slot;
        let truth = self.truth(slot)?;
        let est = self.channels.estimate(
            &truth,
            self.cfg.pilot_energy_h,
            self.cfg.pilot_energy_g,
            self.cfg.pilot_noise,
            &mut self.rng_estimate,
        )?;
        let st = &self.state;
        let action = eecw_step(
            &self.topo,
            &st.u_virtual,
            &st.e_virtual,
            &est,
            &self.constants,
            &self.cfg,
            &self.rate,
            &self.levels,
        )?;
        let (mut flow, received) = realize_transfer(&self.topo, &action, &truth, &self.rate);
        flow.arrivals = sample_arrivals(
            &mut self.rng_arrivals,
            &self.topo,
            &self.cfg.arrival_rates,
            self.cfg.max_arrival_bits,
            self.cfg.slot_seconds,
        )?;
        if action.mode == SlotMode::Energy {
            let mu_in = flow.mu_in(&self.topo);
            let s = self.topo.stream_count();
            for n in 0..self.topo.node_count() {
                if flow.phi_in[n] > 0.0 {
                    let u_next: Vec<f64> = (0..s)
                        .map(|k| (st.u_virtual[n * s + k] - 0.0) + mu_in[n * s + k])
                        .collect();
                    flow.phi_in[n] = settle_intake(
                        &u_next,
                        st.e_virtual[n],
                        flow.phi_in[n],
                        self.constants.c,
                        self.constants.mu_max,
                    );
                }
            }
        }
        let mut rec = SlotRecord {
            slot,
            mode: action.mode,
            e_ap: action.tau_e * action.p_ap,
            z: action.z.clone(),
            u_virtual: st.u_virtual.clone(),
            e_virtual: st.e_virtual.clone(),
            u: st.u.clone(),
            b: st.b.clone(),
            power: action.power.clone(),
            rate: action.rate.clone(),
            stream: action.stream.clone(),
            realized: flow
                .link_bits
                .iter()
                .map(|&bits| if action.tau_d > 0.0 { bits / action.tau_d } else { 0.0 })
                .collect(),
            received,
            phi_in: flow.phi_in.clone(),
            phi_out: flow.phi_out.clone(),
            arrivals: flow.arrivals.clone(),
            drops: SlotDrops::default(),
        };
        if self.cfg.is_limited() {
            rec.drops = self.state.step_limited(
                &self.topo,
                &flow,
                self.cfg.buffer_cap_bits,
                self.cfg.battery_cap_j,
            );
        } else {
            self.state.step_unlimited(&self.topo, &flow)?;
        }
        Ok(rec)
    }
}

/// Per-queue and per-battery attraction statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractionSummary {
    /// Sampling stride used on the post-warmup series.
    pub stride: u64,
    pub queues: Vec<AttractionStats>,
    pub batteries: Vec<AttractionStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub build_id: String,
    pub seed: u64,
    pub horizon: u64,
    pub warmup_slots: u64,
    pub measured_slots: u64,
    /// Mean E-AP energy per slot, joules.
    pub avg_energy_per_slot: f64,
    /// Mean total real backlog, bits, dummy bits included.
    pub avg_sum_backlog: f64,
    /// Mean total real backlog above the initial per-queue level, bits.
    pub avg_excess_backlog: f64,
    pub avg_battery_j: f64,
    /// Dropped bits over arrived bits in the measured window.
    pub drop_fraction: f64,
    pub energy_slot_fraction: f64,
    /// Mean realized throughput per link, bits/s.
    pub link_throughput: Vec<f64>,
    /// Mean realized throughput per link and stream, bits/s, `L × S`.
    pub link_stream_throughput: Vec<f64>,
    /// Mean delivery rate per stream, bits/s.
    pub delivered_rate: Vec<f64>,
    /// Mean arrival rate per stream over the measured window, bits/s.
    pub arrival_rate: Vec<f64>,
    /// Regression slope of block-mean total backlog, bits/slot. A run is
    /// stable when the slope is within two standard errors of zero or adds
    /// under 5% of the mean excess backlog over the measured window.
    pub backlog_slope: f64,
    pub backlog_slope_stderr: f64,
    pub stable: bool,
    pub attraction: Option<AttractionSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config: Option<ConfigFile>,
}

const BLOCKS: usize = 20;
const MAX_ATTRACTION_SAMPLES: u64 = 50_000;

struct Accumulator {
    warmup: u64,
    horizon: u64,
    stride: u64,
    initial_level: f64,
    slots: u64,
    energy: f64,
    backlog: f64,
    excess: f64,
    battery: f64,
    energy_slots: u64,
    dropped: f64,
    arrived: f64,
    link_bits: Vec<f64>,
    link_stream_bits: Vec<f64>,
    streams: usize,
    block_sums: Vec<f64>,
    block_counts: Vec<u64>,
    queue_series: Vec<Vec<f64>>,
    battery_series: Vec<Vec<f64>>,
}

impl Accumulator {
    fn new(sim: &Simulation) -> Self {
        let warmup = sim.cfg.warmup_slots();
        let horizon = sim.cfg.horizon;
        let measured = horizon.saturating_sub(warmup);
        let q = sim.state.u.len();
        Self {
            warmup,
            horizon,
            stride: measured.div_ceil(MAX_ATTRACTION_SAMPLES).max(1),
            initial_level: sim.state.u.iter().sum(),
            slots: 0,
            energy: 0.0,
            backlog: 0.0,
            excess: 0.0,
            battery: 0.0,
            energy_slots: 0,
            dropped: 0.0,
            arrived: 0.0,
            link_bits: vec![0.0; sim.topo.link_count()],
            link_stream_bits: vec![0.0; sim.topo.link_count() * sim.topo.stream_count()],
            streams: sim.topo.stream_count(),
            block_sums: vec![0.0; BLOCKS],
            block_counts: vec![0; BLOCKS],
            queue_series: vec![Vec::new(); q],
            battery_series: vec![Vec::new(); sim.topo.node_count()],
        }
    }

    fn add(&mut self, rec: &SlotRecord, slot_seconds: f64) {
        if rec.slot < self.warmup {
            return;
        }
        let backlog: f64 = rec.u.iter().sum();
        self.slots += 1;
        self.energy += rec.e_ap;
        self.backlog += backlog;
        self.excess += backlog - self.initial_level;
        self.battery += rec.b.iter().sum::<f64>();
        if rec.mode == SlotMode::Energy {
            self.energy_slots += 1;
        }
        self.dropped += rec.drops.buffer + rec.drops.energy;
        self.arrived += rec.arrivals.iter().sum::<f64>();
        for (l, r) in rec.realized.iter().enumerate() {
            self.link_bits[l] += r * slot_seconds;
            if *r > 0.0 {
                self.link_stream_bits[l * self.streams + rec.stream[l]] += r * slot_seconds;
            }
        }
        let span = (self.horizon - self.warmup).max(1);
        let block = (((rec.slot - self.warmup) as u128 * BLOCKS as u128) / span as u128) as usize;
        let block = block.min(BLOCKS - 1);
        self.block_sums[block] += backlog;
        self.block_counts[block] += 1;
        if (rec.slot - self.warmup).is_multiple_of(self.stride) {
            for (series, &u) in self.queue_series.iter_mut().zip(&rec.u_virtual) {
                series.push(u);
            }
            for (series, &b) in self.battery_series.iter_mut().zip(&rec.e_virtual) {
                series.push(b);
            }
        }
    }

    fn finish(self, sim: &Simulation, delivered_start: &[f64], arrived_start: &[f64]) -> RunSummary {
        let cfg = &sim.cfg;
        let n = self.slots as f64;
        let secs = n * cfg.slot_seconds;
        let (slope, se) = block_slope(&self.block_sums, &self.block_counts);
        let mean = if self.slots > 0 { self.backlog / n } else { sim.state.u.iter().sum() };
        let excess_mean = if self.slots > 0 { self.excess / n } else { 0.0 };
        let stable = self.slots == 0 || slope <= 2.0 * se || slope * self.slots as f64 <= 0.05 * excess_mean;
        let attraction = if self.slots >= 100 {
            Some(AttractionSummary {
                stride: self.stride,
                queues: self.queue_series.iter().map(|s| attraction_stats(s)).collect(),
                batteries: self.battery_series.iter().map(|s| attraction_stats(s)).collect(),
            })
        } else {
            None
        };
        let per_second = |v: f64| if secs > 0.0 { v / secs } else { 0.0 };
        RunSummary {
            schema_version: SCHEMA_VERSION,
            build_id: BUILD_ID.to_string(),
            seed: cfg.seed,
            horizon: cfg.horizon,
            warmup_slots: self.warmup,
            measured_slots: self.slots,
            avg_energy_per_slot: if self.slots > 0 { self.energy / n } else { 0.0 },
            avg_sum_backlog: mean,
            avg_excess_backlog: excess_mean,
            avg_battery_j: if self.slots > 0 { self.battery / n } else { sim.state.b.iter().sum() },
            drop_fraction: if self.arrived > 0.0 { self.dropped / self.arrived } else { 0.0 },
            energy_slot_fraction: if self.slots > 0 { self.energy_slots as f64 / n } else { 0.0 },
            link_throughput: self.link_bits.iter().map(|&b| per_second(b)).collect(),
            link_stream_throughput: self.link_stream_bits.iter().map(|&b| per_second(b)).collect(),
            delivered_rate: sim
                .state
                .delivered
                .iter()
                .zip(delivered_start)
                .map(|(d, d0)| per_second(d - d0))
                .collect(),
            arrival_rate: sim
                .state
                .arrived
                .iter()
                .zip(arrived_start)
                .map(|(a, a0)| per_second(a - a0))
                .collect(),
            backlog_slope: slope,
            backlog_slope_stderr: se,
            stable,
            attraction,
            config: None,
        }
    }
}

/// Least-squares slope of block means against slot position, with its
/// standard error. Blocks hold equal numbers of slots up to one.
fn block_slope(sums: &[f64], counts: &[u64]) -> (f64, f64) {
    let pts: Vec<(f64, f64, f64)> = sums
        .iter()
        .zip(counts)
        .enumerate()
        .filter(|(_, (_, &c))| c > 0)
        .map(|(i, (&s, &c))| (i as f64, s / c as f64, c as f64))
        .collect();
    if pts.len() < 3 {
        return (0.0, 0.0);
    }
    let width = pts.iter().map(|p| p.2).sum::<f64>() / pts.len() as f64;
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let beta = sxy / sxx;
    let resid: f64 = pts.iter().map(|p| (p.1 - my - beta * (p.0 - mx)).powi(2)).sum();
    let se = (resid / (k - 2.0) / sxx).sqrt();
    (beta / width, se / width)
}

/// Runs the whole horizon, feeding every slot to `observers`.
pub fn run_with(sim: &mut Simulation, observers: &mut [&mut dyn Observer]) -> Result<RunSummary> {
    let mut acc = Accumulator::new(sim);
    let mut delivered_start = sim.state.delivered.clone();
    let mut arrived_start = sim.state.arrived.clone();
    for _ in 0..sim.cfg.horizon {
        if sim.state.slot == acc.warmup {
            delivered_start.clone_from(&sim.state.delivered);
            arrived_start.clone_from(&sim.state.arrived);
        }
        let rec = sim.step()?;
        acc.add(&rec, sim.cfg.slot_seconds);
        for obs in observers.iter_mut() {
            obs.observe(&rec)?;
        }
    }
    Ok(acc.finish(sim, &delivered_start, &arrived_start))
}

/// Runs `cfg` and keeps the full trace in memory.
pub fn run(topo: &Topology, cfg: &SimConfig) -> Result<(Trace, RunSummary)> {
    let mut sim = Simulation::new(topo.clone(), cfg.clone())?;
    let mut trace = Trace::default();
    let summary = run_with(&mut sim, &mut [&mut trace])?;
    Ok((trace, summary))
}

/// Streams slot records to CSV. Column layout is fixed by the topology; see
/// [`trace_header`].
pub struct CsvTraceWriter<W: Write> {
    out: csv::Writer<W>,
    row: Vec<String>,
}

/// Trace CSV header: `slot, mode, e_ap`, then per node `z_n, e_n, b_n`, per
/// queue `u_n_s, ureal_n_s`, per link `p_l, r_l, s_l, x_l`, per node
/// `phi_in_n, phi_out_n`, then `drop_buffer, drop_energy`. Ids are 1-based.
pub fn trace_header(topo: &Topology) -> Vec<String> {
    let mut h = vec!["slot".to_string(), "mode".into(), "e_ap".into()];
    let (n, s, l) = (topo.node_count(), topo.stream_count(), topo.link_count());
    for i in 1..=n {
        h.extend([format!("z_{i}"), format!("e_{i}"), format!("b_{i}")]);
    }
    for i in 1..=n {
        for k in 1..=s {
            h.extend([format!("u_{i}_{k}"), format!("ureal_{i}_{k}")]);
        }
    }
    for j in 1..=l {
        h.extend([format!("p_{j}"), format!("r_{j}"), format!("s_{j}"), format!("x_{j}")]);
    }
    for i in 1..=n {
        h.extend([format!("phi_in_{i}"), format!("phi_out_{i}")]);
    }
    h.extend(["drop_buffer".into(), "drop_energy".into()]);
    h
}

impl<W: Write> CsvTraceWriter<W> {
    pub fn new(out: W, topo: &Topology) -> Result<Self> {
        let mut out = csv::Writer::from_writer(out);
        out.write_record(trace_header(topo)).map_err(|e| Error::Trace(e.to_string()))?;
        Ok(Self { out, row: Vec::new() })
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

impl<W: Write> Observer for CsvTraceWriter<W> {
    fn observe(&mut self, r: &SlotRecord) -> Result<()> {
        let row = &mut self.row;
        row.clear();
        row.push(r.slot.to_string());
        row.push(match r.mode {
            SlotMode::Energy => "energy".into(),
            SlotMode::Data => "data".into(),
        });
        row.push(r.e_ap.to_string());
        for i in 0..r.z.len() {
            row.extend([r.z[i].to_string(), r.e_virtual[i].to_string(), r.b[i].to_string()]);
        }
        for q in 0..r.u.len() {
            row.extend([r.u_virtual[q].to_string(), r.u[q].to_string()]);
        }
        for j in 0..r.power.len() {
            row.extend([
                r.power[j].to_string(),
                r.rate[j].to_string(),
                (r.stream[j] + 1).to_string(),
                r.realized[j].to_string(),
            ]);
        }
        for i in 0..r.z.len() {
            row.extend([r.phi_in[i].to_string(), r.phi_out[i].to_string()]);
        }
        row.extend([r.drops.buffer.to_string(), r.drops.energy.to_string()]);
        self.out.write_record(&*row).map_err(|e| Error::Trace(e.to_string()))
    }
}

/// Runs a config file end to end, writing `trace.csv` and `summary.json`
/// under `out_dir` when given.
pub fn run_config(file: &ConfigFile, out_dir: Option<&Path>) -> Result<RunSummary> {
    let (topo, cfg) = file.resolve()?;
    let mut sim = Simulation::new(topo.clone(), cfg)?;
    let mut summary = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let f = std::io::BufWriter::new(std::fs::File::create(dir.join("trace.csv"))?);
            let mut writer = CsvTraceWriter::new(f, &topo)?;
            let s = run_with(&mut sim, &mut [&mut writer])?;
            writer.flush()?;
            s
        }
        None => run_with(&mut sim, &mut [])?,
    };
    summary.config = Some(file.clone());
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(summary)
}

/// Parameter swept by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    V,
    ArrivalKbps,
    BufferKbytes,
    BatteryMj,
    EapPowerW,
    CodewordLen,
    /// Both pilot energies.
    PilotEnergyUj,
    PilotEnergyGUj,
    PilotEnergyHUj,
}

impl SweepAxis {
    pub fn apply(self, file: &mut ConfigFile, value: f64) {
        match self {
            SweepAxis::V => file.policy.v = value,
            SweepAxis::ArrivalKbps => file.set_arrival_kbps(value),
            SweepAxis::BufferKbytes => file.limits.buffer_kbytes = value.is_finite().then_some(value),
            SweepAxis::BatteryMj => file.limits.battery_mj = value.is_finite().then_some(value),
            SweepAxis::EapPowerW => file.policy.eap_power_w = value,
            SweepAxis::CodewordLen => file.physics.codeword_len = value.is_finite().then_some(value),
            SweepAxis::PilotEnergyUj => {
                file.physics.pilot_energy_g_uj = value.is_finite().then_some(value);
                file.physics.pilot_energy_h_uj = value.is_finite().then_some(value);
            }
            SweepAxis::PilotEnergyGUj => file.physics.pilot_energy_g_uj = value.is_finite().then_some(value),
            SweepAxis::PilotEnergyHUj => file.physics.pilot_energy_h_uj = value.is_finite().then_some(value),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::V => "v",
            SweepAxis::ArrivalKbps => "arrival_kbps",
            SweepAxis::BufferKbytes => "buffer_kbytes",
            SweepAxis::BatteryMj => "battery_mj",
            SweepAxis::EapPowerW => "eap_power_w",
            SweepAxis::CodewordLen => "codeword_len",
            SweepAxis::PilotEnergyUj => "pilot_energy_uj",
            SweepAxis::PilotEnergyGUj => "pilot_energy_g_uj",
            SweepAxis::PilotEnergyHUj => "pilot_energy_h_uj",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [
            SweepAxis::V,
            SweepAxis::ArrivalKbps,
            SweepAxis::BufferKbytes,
            SweepAxis::BatteryMj,
            SweepAxis::EapPowerW,
            SweepAxis::CodewordLen,
            SweepAxis::PilotEnergyUj,
            SweepAxis::PilotEnergyGUj,
            SweepAxis::PilotEnergyHUj,
        ]
        .into_iter()
        .find(|a| a.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanSe {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let stderr = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub energy: MeanSe,
    pub backlog: MeanSe,
    pub excess_backlog: MeanSe,
    pub drop_fraction: MeanSe,
    pub stable_runs: usize,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub runs: usize,
    pub threads: usize,
    /// Write each run's trace as `trace_p{point}_r{run}.csv` here.
    pub trace_dir: Option<std::path::PathBuf>,
}

/// Independent seeded runs at every axis value. Results do not depend on
/// the number of worker threads.
pub fn sweep(base: &ConfigFile, axis: SweepAxis, values: &[f64], opts: &SweepOptions) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one axis value".into()));
    }
    if opts.runs == 0 {
        return Err(Error::InvalidArgument("sweep needs at least one run per point".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|p| (0..opts.runs).map(move |r| (p, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let results: Vec<Result<RunSummary>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, r)| {
                let mut file = base.clone();
                axis.apply(&mut file, values[p]);
                file.run.seed = run_seed(base.run.seed, r as u64);
                let (topo, cfg) = file.resolve()?;
                let mut sim = Simulation::new(topo.clone(), cfg)?;
                match &opts.trace_dir {
                    Some(dir) => {
                        let path = dir.join(format!("trace_p{p}_r{r}.csv"));
                        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
                        let mut w = CsvTraceWriter::new(f, &topo)?;
                        let s = run_with(&mut sim, &mut [&mut w])?;
                        w.flush()?;
                        Ok(s)
                    }
                    None => run_with(&mut sim, &mut []),
                }
            })
            .collect()
    });
    let mut summaries = results.into_iter();
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let runs: Vec<RunSummary> = summaries.by_ref().take(opts.runs).collect::<Result<_>>()?;
        let pick = |f: fn(&RunSummary) -> f64| MeanSe::of(&runs.iter().map(f).collect::<Vec<_>>());
        points.push(SweepPoint {
            value,
            energy: pick(|r| r.avg_energy_per_slot),
            backlog: pick(|r| r.avg_sum_backlog),
            excess_backlog: pick(|r| r.avg_excess_backlog),
            drop_fraction: pick(|r| r.drop_fraction),
            stable_runs: runs.iter().filter(|r| r.stable).count(),
            runs,
        });
    }
    Ok(points)
}

/// Writes one CSV row per sweep point.
pub fn write_sweep_csv<W: Write>(out: W, axis: SweepAxis, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Trace(e.to_string());
    w.write_record([
        axis.name(),
        "runs",
        "energy_mean_j",
        "energy_stderr_j",
        "backlog_mean_bits",
        "backlog_stderr_bits",
        "excess_backlog_mean_bits",
        "excess_backlog_stderr_bits",
        "drop_fraction_mean",
        "drop_fraction_stderr",
        "stable_runs",
    ])
    .map_err(err)?;
    for p in points {
        w.write_record([
            p.value.to_string(),
            p.runs.len().to_string(),
            p.energy.mean.to_string(),
            p.energy.stderr.to_string(),
            p.backlog.mean.to_string(),
            p.backlog.stderr.to_string(),
            p.excess_backlog.mean.to_string(),
            p.excess_backlog.stderr.to_string(),
            p.drop_fraction.mean.to_string(),
            p.drop_fraction.stderr.to_string(),
            p.stable_runs.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}
