//! Simulation configuration.
//!
//! The JSON file format uses engineering units (kHz, dBm, mW, GHz, kbit/s,
//! kBytes, mJ, µJ, ms). Everything is converted to SI base units when the
//! file is turned into a [`SimConfig`]; nothing downstream sees the file units.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{build_topology, Topology, TopologySpec};

pub const SCHEMA_VERSION: u32 = 1;

/// Matching backend used by the data-link scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerBackend {
    /// Exact branch-and-bound up to [`crate::controller::EXACT_LINK_LIMIT`]
    /// candidate links, greedy above.
    #[default]
    Auto,
    Exact,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsSection {
    pub bandwidth_khz: f64,
    pub noise_dbm_per_hz: f64,
    pub carrier_ghz: f64,
    pub path_loss_exponent: f64,
    /// `null` means a pure line-of-sight channel (K = ∞).
    pub rician_k_db: Option<f64>,
    pub fading_cap: f64,
    /// Codeword length in channel uses; `null` selects the Shannon rate.
    pub codeword_len: Option<f64>,
    pub block_error: f64,
    /// Pilot energy for energy-link estimation; `null` means perfect CSI.
    pub pilot_energy_h_uj: Option<f64>,
    /// Pilot energy for data-link estimation; `null` means perfect CSI.
    pub pilot_energy_g_uj: Option<f64>,
    pub pilot_noise_dbm: f64,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        Self {
            bandwidth_khz: 100.0,
            noise_dbm_per_hz: -135.0,
            carrier_ghz: 2.4,
            path_loss_exponent: 2.0,
            rician_k_db: Some(20.0),
            fading_cap: 10.0,
            codeword_len: None,
            block_error: 1e-10,
            pilot_energy_h_uj: None,
            pilot_energy_g_uj: None,
            pilot_noise_dbm: -90.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub v: f64,
    pub alpha: f64,
    pub power_levels: usize,
    pub node_power_mw: f64,
    pub eap_power_w: f64,
    pub scheduler: SchedulerBackend,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            v: 1e11,
            alpha: 2.0,
            power_levels: 8,
            node_power_mw: 1.0,
            eap_power_w: 4.0,
            scheduler: SchedulerBackend::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct LimitsSection {
    /// Per-queue data buffer size; `null` means unlimited.
    pub buffer_kbytes: Option<f64>,
    /// Battery capacity; `null` means unlimited.
    pub battery_mj: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub horizon_slots: u64,
    pub slot_ms: f64,
    pub max_arrival_bits: f64,
    pub warmup_fraction: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            horizon_slots: 10_000,
            slot_ms: 1.0,
            max_arrival_bits: 1000.0,
            warmup_fraction: 0.2,
        }
    }
}

/// On-disk configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub topology: TopologySpec,
    #[serde(default)]
    pub physics: PhysicsSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub limits: LimitsSection,
    #[serde(default)]
    pub run: RunSection,
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Sets every stream's mean arrival rate.
    pub fn set_arrival_kbps(&mut self, kbps: f64) {
        for s in &mut self.topology.streams {
            s.rate_kbps = kbps;
        }
    }

    /// Validates and converts to SI units.
    pub fn resolve(&self) -> Result<(Topology, SimConfig)> {
        let topo = build_topology(&self.topology).map_err(|e| Error::config("topology", e.to_string()))?;
        let p = &self.physics;
        let q = &self.policy;
        let r = &self.run;
        let cfg = SimConfig {
            slot_seconds: r.slot_ms * 1e-3,
            v: q.v,
            node_power_max: q.node_power_mw * 1e-3,
            eap_power_max: q.eap_power_w,
            max_arrival_bits: r.max_arrival_bits,
            arrival_rates: self.topology.streams.iter().map(|s| s.rate_kbps * 1e3).collect(),
            bandwidth_hz: p.bandwidth_khz * 1e3,
            noise_psd: dbm_to_watts(p.noise_dbm_per_hz),
            rician_k: p.rician_k_db.map_or(f64::INFINITY, db_to_linear),
            carrier_hz: p.carrier_ghz * 1e9,
            path_loss_exponent: p.path_loss_exponent,
            power_levels: q.power_levels,
            alpha: q.alpha,
            fading_cap: p.fading_cap,
            codeword_len: p.codeword_len,
            block_error: p.block_error,
            pilot_energy_h: p.pilot_energy_h_uj.map_or(f64::INFINITY, |e| e * 1e-6),
            pilot_energy_g: p.pilot_energy_g_uj.map_or(f64::INFINITY, |e| e * 1e-6),
            pilot_noise: dbm_to_watts(p.pilot_noise_dbm),
            buffer_cap_bits: self.limits.buffer_kbytes.map_or(f64::INFINITY, |kb| kb * 8e3),
            battery_cap_j: self.limits.battery_mj.map_or(f64::INFINITY, |mj| mj * 1e-3),
            seed: r.seed,
            horizon: r.horizon_slots,
            warmup_fraction: r.warmup_fraction,
            scheduler: q.scheduler,
        };
        cfg.validate()?;
        Ok((topo, cfg))
    }
}

/// Validated configuration in SI base units.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// τ_f in seconds.
    pub slot_seconds: f64,
    pub v: f64,
    /// P_m in watts.
    pub node_power_max: f64,
    /// P_APm in watts.
    pub eap_power_max: f64,
    /// A_m in bits.
    pub max_arrival_bits: f64,
    /// λ_s in bits/s, one per stream.
    pub arrival_rates: Vec<f64>,
    pub bandwidth_hz: f64,
    /// N0 in W/Hz.
    pub noise_psd: f64,
    /// Linear Rician K-factor, possibly infinite.
    pub rician_k: f64,
    pub carrier_hz: f64,
    pub path_loss_exponent: f64,
    pub power_levels: usize,
    pub alpha: f64,
    pub fading_cap: f64,
    pub codeword_len: Option<f64>,
    pub block_error: f64,
    /// ψ_p^h in joules, infinite for perfect energy-link CSI.
    pub pilot_energy_h: f64,
    /// ψ_p^g in joules, infinite for perfect data-link CSI.
    pub pilot_energy_g: f64,
    /// σ_N in watts.
    pub pilot_noise: f64,
    pub buffer_cap_bits: f64,
    pub battery_cap_j: f64,
    pub seed: u64,
    pub horizon: u64,
    pub warmup_fraction: f64,
    pub scheduler: SchedulerBackend,
}

impl SimConfig {
    pub fn is_limited(&self) -> bool {
        self.buffer_cap_bits.is_finite() || self.battery_cap_j.is_finite()
    }

    /// Uniformly spaced node power levels `{0, P_m/(K_p-1), …, P_m}`.
    pub fn power_set(&self) -> Vec<f64> {
        let k = self.power_levels;
        (0..k)
            .map(|i| self.node_power_max * i as f64 / (k - 1) as f64)
            .collect()
    }

    pub fn warmup_slots(&self) -> u64 {
        (self.horizon as f64 * self.warmup_fraction).floor() as u64
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(path: &str, x: f64) -> Result<()> {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::config(path, format!("must be positive and finite, got {x}")))
            }
        }
        positive("run.slot_ms", self.slot_seconds)?;
        positive("policy.node_power_mw", self.node_power_max)?;
        positive("policy.eap_power_w", self.eap_power_max)?;
        positive("run.max_arrival_bits", self.max_arrival_bits)?;
        positive("physics.bandwidth_khz", self.bandwidth_hz)?;
        positive("physics.noise_dbm_per_hz", self.noise_psd)?;
        positive("physics.carrier_ghz", self.carrier_hz)?;
        positive("physics.path_loss_exponent", self.path_loss_exponent)?;
        positive("physics.pilot_noise_dbm", self.pilot_noise)?;
        if !(self.alpha.is_finite() && self.alpha > 1.0) {
            return Err(Error::config("policy.alpha", format!("must exceed 1, got {}", self.alpha)));
        }
        if self.power_levels < 2 {
            return Err(Error::config(
                "policy.power_levels",
                format!("need at least 2 levels, got {}", self.power_levels),
            ));
        }
        if !(self.v.is_finite() && self.v >= 0.0) {
            return Err(Error::config("policy.v", format!("must be non-negative, got {}", self.v)));
        }
        if !(self.fading_cap.is_finite() && self.fading_cap >= 1.0) {
            return Err(Error::config(
                "physics.fading_cap",
                format!("must be at least 1, got {}", self.fading_cap),
            ));
        }
        if !(self.block_error > 0.0 && self.block_error < 1.0) {
            return Err(Error::config(
                "physics.block_error",
                format!("must lie in (0, 1), got {}", self.block_error),
            ));
        }
        if let Some(len) = self.codeword_len {
            if !(len.is_finite() && len >= 1.0) {
                return Err(Error::config("physics.codeword_len", format!("must be at least 1, got {len}")));
            }
        }
        if self.rician_k.is_nan() || self.rician_k < 0.0 {
            return Err(Error::config("physics.rician_k_db", "must be a real number"));
        }
        for (path, e) in [
            ("physics.pilot_energy_h_uj", self.pilot_energy_h),
            ("physics.pilot_energy_g_uj", self.pilot_energy_g),
            ("limits.buffer_kbytes", self.buffer_cap_bits),
            ("limits.battery_mj", self.battery_cap_j),
        ] {
            if e.is_nan() || e <= 0.0 {
                return Err(Error::config(path, format!("must be positive, got {e}")));
            }
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::config(
                "run.warmup_fraction",
                format!("must lie in [0, 1), got {}", self.warmup_fraction),
            ));
        }
        for (s, &lambda) in self.arrival_rates.iter().enumerate() {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(Error::config(
                    format!("topology.streams[{s}].rate_kbps"),
                    format!("must be non-negative, got {lambda}"),
                ));
            }
            if lambda * self.slot_seconds > self.max_arrival_bits {
                return Err(Error::config(
                    format!("topology.streams[{s}].rate_kbps"),
                    "mean arrivals per slot exceed run.max_arrival_bits",
                ));
            }
        }
        Ok(())
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
