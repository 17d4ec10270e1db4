//! Built-in scenarios: the nine-node evaluation network, two small test
//! networks, and one preset per experiment family.

use crate::config::{ConfigFile, LimitsSection, PhysicsSection, PolicySection, RunSection};
use crate::engine::SweepAxis;
use crate::topology::{LinkSpec, StreamSpec, TopologySpec};

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub config: ConfigFile,
    pub sweep: Option<PresetSweep>,
}

/// A list of axis values, swept once for every variant.
#[derive(Debug, Clone)]
pub struct PresetSweep {
    pub values: Vec<f64>,
    pub variants: Vec<Variant>,
}

#[derive(Debug, Clone)]
pub struct Variant {
    pub label: String,
    pub axis: SweepAxis,
    pub config: ConfigFile,
}

fn variant(label: String, axis: SweepAxis, config: ConfigFile) -> Variant {
    Variant { label, axis, config }
}

pub const NAMES: [&str; 9] = [
    "fig4-tradeoff",
    "fig5-samplepath",
    "fig6-flow",
    "fig7-csi",
    "fig8-droprate",
    "fig9-capacity",
    "fig10-blocklength",
    "line3",
    "ring5",
];

fn link(id: usize, head: usize, tail: usize, length_m: f64) -> LinkSpec {
    LinkSpec { id, head, tail, length_m }
}

/// The nine-node, twelve-link network with streams 1→6 and 2→9.
pub fn nine_node(rate_kbps: f64) -> TopologySpec {
    let links = [
        (1, 3, 11.0),
        (1, 4, 16.0),
        (3, 4, 11.0),
        (2, 3, 11.0),
        (2, 7, 11.0),
        (4, 5, 11.0),
        (7, 8, 11.0),
        (5, 6, 11.0),
        (5, 9, 11.0),
        (4, 6, 11.0),
        (8, 9, 11.0),
        (8, 5, 11.0),
    ];
    TopologySpec {
        nodes: 9,
        eap_antennas: 20,
        eap_distances_m: vec![18.0, 18.0, 16.0, 14.0, 14.0, 16.0, 16.0, 16.0, 18.0],
        links: links
            .iter()
            .enumerate()
            .map(|(i, &(h, t, d))| link(i + 1, h, t, d))
            .collect(),
        streams: vec![
            StreamSpec { id: 1, source: 1, sink: 6, rate_kbps },
            StreamSpec { id: 2, source: 2, sink: 9, rate_kbps },
        ],
    }
}

pub fn line3(rate_kbps: f64) -> TopologySpec {
    TopologySpec {
        nodes: 3,
        eap_antennas: 20,
        eap_distances_m: vec![9.0; 3],
        links: vec![link(1, 1, 2, 6.0), link(2, 2, 3, 6.0)],
        streams: vec![StreamSpec { id: 1, source: 1, sink: 3, rate_kbps }],
    }
}

/// Bidirectional five-node ring with two crossing streams.
pub fn ring5(rate_kbps: f64) -> TopologySpec {
    let mut links = Vec::new();
    for i in 1..=5 {
        let j = i % 5 + 1;
        links.push(link(links.len() + 1, i, j, 6.0));
        links.push(link(links.len() + 1, j, i, 6.0));
    }
    TopologySpec {
        nodes: 5,
        eap_antennas: 20,
        eap_distances_m: vec![9.0; 5],
        links,
        streams: vec![
            StreamSpec { id: 1, source: 1, sink: 3, rate_kbps },
            StreamSpec { id: 2, source: 4, sink: 2, rate_kbps },
        ],
    }
}

/// Physics shared by every preset. The queue-weight threshold for sending
/// one more bit grows with α and with the fading cap, so both sit well
/// below the library defaults, and a fine power grid keeps the lowest
/// usable power close to the energy-optimal one.
fn base(topology: TopologySpec) -> ConfigFile {
    let mut f = ConfigFile {
        topology,
        physics: PhysicsSection::default(),
        policy: PolicySection { alpha: 10.0, power_levels: 128, ..PolicySection::default() },
        limits: LimitsSection::default(),
        run: RunSection { max_arrival_bits: 100.0, horizon_slots: 300_000, warmup_fraction: 0.5, ..RunSection::default() },
    };
    set_k_db(&mut f, 20.0);
    f
}

/// Sets the Rician K-factor and a fading cap matched to its spread.
pub fn set_k_db(file: &mut ConfigFile, k_db: f64) {
    file.physics.rician_k_db = Some(k_db);
    file.physics.fading_cap = if k_db < 3.0 { 4.0 } else { 1.5 };
}

/// Scales every link length and E-AP distance.
pub fn scale_distances(file: &mut ConfigFile, factor: f64) {
    for l in &mut file.topology.links {
        l.length_m *= factor;
    }
    for d in &mut file.topology.eap_distances_m {
        *d *= factor;
    }
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo * (hi / lo).powf(i as f64 / (n - 1) as f64)
            }
        })
        .collect()
}

pub fn preset(name: &str) -> Option<Preset> {
    let p = match name {
        "fig4-tradeoff" => {
            let mut cfg = base(nine_node(1.0));
            cfg.run.horizon_slots = 3_000_000;
            let mut variants = Vec::new();
            for lambda in [1.0, 3.0, 5.0] {
                for m in [20, 40] {
                    let mut v = cfg.clone();
                    v.set_arrival_kbps(lambda);
                    v.topology.eap_antennas = m;
                    variants.push(variant(format!("lambda={lambda}kbps,M={m}"), SweepAxis::V, v));
                }
            }
            Preset {
                name: "fig4-tradeoff",
                description: "Energy per slot against backlog as V grows",
                config: cfg,
                sweep: Some(PresetSweep { values: log_space(1e9, 3e11, 7), variants }),
            }
        }
        "fig5-samplepath" => Preset {
            name: "fig5-samplepath",
            description: "Sample path of a queue and a battery at lambda = 5 kbps, K = 0 dB",
            config: fig5_config(),
            sweep: None,
        },
        "fig6-flow" => {
            let mut cfg = base(nine_node(2.0));
            cfg.policy.v = 1e11;
            cfg.run.horizon_slots = 3_000_000;
            Preset {
                name: "fig6-flow",
                description: "Per-link throughput of each stream at lambda = 2 kbps",
                config: cfg,
                sweep: None,
            }
        }
        "fig7-csi" => {
            let mut cfg = base(nine_node(1.0));
            cfg.policy.v = 1e11;
            cfg.run.horizon_slots = 3_000_000;
            let mut variants = Vec::new();
            for k in [5.0, 10.0, 20.0] {
                for (label, axis) in [
                    ("data", SweepAxis::PilotEnergyGUj),
                    ("energy", SweepAxis::PilotEnergyHUj),
                    ("both", SweepAxis::PilotEnergyUj),
                ] {
                    let mut v = cfg.clone();
                    set_k_db(&mut v, k);
                    variants.push(variant(format!("K={k}dB,imperfect={label}"), axis, v));
                }
            }
            Preset {
                name: "fig7-csi",
                description: "Energy per slot against pilot energy under imperfect CSI",
                config: cfg,
                sweep: Some(PresetSweep { values: (0..=14).map(|i| 10f64.powf(i as f64 * 0.5)).collect(), variants }),
            }
        }
        "fig8-droprate" => {
            let cfg = fig5_config();
            let mut variants = Vec::new();
            for e in [0.4, 0.8, 1.2] {
                let mut v = cfg.clone();
                v.limits.battery_mj = Some(e);
                variants.push(variant(format!("battery={e}mJ"), SweepAxis::BufferKbytes, v));
            }
            Preset {
                name: "fig8-droprate",
                description: "Drop fraction over buffer and battery capacity",
                config: cfg,
                sweep: Some(PresetSweep { values: (1..=20).map(|i| 25.0 * i as f64).collect(), variants }),
            }
        }
        "fig9-capacity" => {
            let mut cfg = base(nine_node(1.0));
            cfg.policy.v = 1e11;
            cfg.run.horizon_slots = 3_000_000;
            let mut variants = Vec::new();
            for p in [3.0, 4.0, 5.0] {
                let mut v = cfg.clone();
                v.policy.eap_power_w = p;
                variants.push(variant(format!("P_AP={p}W"), SweepAxis::ArrivalKbps, v));
            }
            Preset {
                name: "fig9-capacity",
                description: "Backlog over arrival rate against the arrival rate",
                config: cfg,
                sweep: Some(PresetSweep { values: FIG9_RATES_KBPS.to_vec(), variants }),
            }
        }
        "fig10-blocklength" => {
            let mut cfg = base(nine_node(0.5));
            cfg.policy.v = 3e11;
            cfg.run.horizon_slots = 4_000_000;
            let mut variants = Vec::new();
            for f in [1.0, 1.1, 1.2] {
                let mut v = cfg.clone();
                scale_distances(&mut v, f);
                variants.push(variant(format!("distance x{f}"), SweepAxis::CodewordLen, v));
            }
            Preset {
                name: "fig10-blocklength",
                description: "Energy per slot against codeword length",
                config: cfg,
                sweep: Some(PresetSweep {
                    values: vec![100.0, 200.0, 500.0, 1000.0, 2000.0, 5000.0, f64::INFINITY],
                    variants,
                }),
            }
        }
        "line3" => Preset {
            name: "line3",
            description: "Three nodes in a line, one stream",
            config: base(line3(1.0)),
            sweep: None,
        },
        "ring5" => Preset {
            name: "ring5",
            description: "Bidirectional five-node ring, two streams",
            config: base(ring5(1.0)),
            sweep: None,
        },
        _ => return None,
    };
    Some(p)
}

pub const FIG9_RATES_KBPS: [f64; 12] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0];

fn fig5_config() -> ConfigFile {
    let mut cfg = base(nine_node(5.0));
    set_k_db(&mut cfg, 0.0);
    cfg.policy.v = 3e11;
    cfg.run.horizon_slots = 2_400_000;
    cfg
}
