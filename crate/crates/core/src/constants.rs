//! Policy constants derived from the configuration and topology.

use crate::channel::path_loss;
use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::rate::RateModel;
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedConstants {
    /// δ: bound on the rate-power slope, bits/J.
    pub delta: f64,
    /// 𝒞 = 2δ/(1 − 1/α): energy-to-data conversion factor, bits/J.
    pub c: f64,
    /// Dummy bits placed in every queue at start-up.
    pub u0: f64,
    /// Per-slot bound on bits entering or leaving a queue.
    pub mu_max: f64,
    /// Per-slot bound on energy entering or leaving a battery, joules.
    pub phi_max: f64,
    pub alpha: f64,
    /// Mean data-link power gains β_g.
    pub beta_g: Vec<f64>,
    /// Mean per-antenna energy-link power gains β_h.
    pub beta_h: Vec<f64>,
    /// Clip level for |g_l|².
    pub g_cap: Vec<f64>,
    /// Clip level for ‖h_n‖²/M.
    pub h_cap: Vec<f64>,
}

/// `(𝒞, U0)` from δ, α, φ_max and μ_max.
pub fn policy_constants(delta: f64, alpha: f64, phi_max: f64, mu_max: f64) -> Result<(f64, f64)> {
    if !(alpha > 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must exceed 1, got {alpha}")));
    }
    let c = 2.0 * delta / (1.0 - 1.0 / alpha);
    let u0 = (phi_max * (c + alpha * delta)).max(mu_max);
    Ok((c, u0))
}

pub fn derive_constants(cfg: &SimConfig, topo: &Topology, rate: &RateModel) -> Result<DerivedConstants> {
    let beta_g: Vec<f64> = topo
        .links()
        .iter()
        .map(|l| path_loss(l.length_m, cfg.carrier_hz, cfg.path_loss_exponent))
        .collect::<Result<_>>()?;
    let beta_h: Vec<f64> = topo
        .eap_distances()
        .iter()
        .map(|&d| path_loss(d, cfg.carrier_hz, cfg.path_loss_exponent))
        .collect::<Result<_>>()?;
    let g_cap: Vec<f64> = beta_g.iter().map(|b| b * cfg.fading_cap).collect();
    let h_cap: Vec<f64> = beta_h.iter().map(|b| b * cfg.fading_cap).collect();

    let delta = g_cap.iter().map(|&g| rate.lipschitz_bound(g)).fold(0.0, f64::max);
    if !delta.is_finite() {
        return Err(Error::Numerical(format!("rate slope bound is not finite: {delta}")));
    }
    let best_rate = g_cap
        .iter()
        .map(|&g| rate.rate(cfg.node_power_max, g))
        .fold(0.0, f64::max);
    let mu_max = cfg.max_arrival_bits + cfg.slot_seconds * best_rate;
    let best_h = h_cap.iter().copied().fold(0.0, f64::max);
    let phi_max = (cfg.slot_seconds * cfg.node_power_max).max(
        cfg.slot_seconds * cfg.eap_power_max * topo.eap_antennas() as f64 * best_h,
    );
    let (c, u0) = policy_constants(delta, cfg.alpha, phi_max, mu_max)?;
    Ok(DerivedConstants {
        delta,
        c,
        u0,
        mu_max,
        phi_max,
        alpha: cfg.alpha,
        beta_g,
        beta_h,
        g_cap,
        h_cap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alpha_two_gives_c_four_delta() {
        let (c, _) = policy_constants(3.5, 2.0, 1.0, 0.0).unwrap();
        assert_eq!(c, 14.0);
    }

    #[test]
    fn u0_takes_mu_max_branch_when_larger() {
        let (c, u0) = policy_constants(1.0, 2.0, 1e-3, 100.0).unwrap();
        assert!(1e-3 * (c + 2.0) < 100.0);
        assert_eq!(u0, 100.0);
        let (c, u0) = policy_constants(1.0, 2.0, 10.0, 1.0).unwrap();
        assert_eq!(u0, 10.0 * (c + 2.0));
    }

    #[test]
    fn rejects_alpha_at_most_one() {
        assert!(policy_constants(1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn preset_constants_satisfy_ordering_and_are_deterministic() {
        let file = presets::preset("fig5-samplepath").unwrap().config;
        let (topo, cfg) = file.resolve().unwrap();
        let rate = RateModel::from_config(&cfg).unwrap();
        let a = derive_constants(&cfg, &topo, &rate).unwrap();
        let b = derive_constants(&cfg, &topo, &rate).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.c, 2.0 * a.delta / (1.0 - 1.0 / a.alpha));
        assert!(a.u0 >= a.mu_max);
        assert!(a.u0 >= a.phi_max * a.c);
        assert_eq!(a.u0, (a.phi_max * (a.c + a.alpha * a.delta)).max(a.mu_max));
    }

    #[test]
    fn delta_bounds_random_difference_quotients() {
        let file = presets::preset("fig4-tradeoff").unwrap().config;
        let (topo, cfg) = file.resolve().unwrap();
        for rate in [
            RateModel::from_config(&cfg).unwrap(),
            RateModel::finite_blocklength(cfg.bandwidth_hz, cfg.noise_psd, 200.0, 1e-10).unwrap(),
        ] {
            let k = derive_constants(&cfg, &topo, &rate).unwrap();
            let g_max = k.g_cap.iter().copied().fold(0.0, f64::max);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for _ in 0..1000 {
                let p = rng.random::<f64>() * cfg.node_power_max;
                let g = rng.random::<f64>() * g_max;
                let eps = cfg.node_power_max * 1e-6;
                let slope = (rate.rate(p + eps, g) - rate.rate(p, g)) / eps;
                assert!(slope <= k.delta * (1.0 + 1e-6), "slope {slope} > δ {}", k.delta);
            }
        }
    }
}
