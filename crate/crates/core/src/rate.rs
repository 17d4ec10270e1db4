//! Rate-power functions for orthogonal (node-exclusive) data links.
//!
//! Two models are provided: the asymptotic Shannon rate
//! `W·log2(1 + γ)` and the finite-blocklength normal approximation
//! `W·[log2(1 + γ) − sqrt((1 − (1+γ)^-2)/𝓛)·Q⁻¹(ρ)/ln 2]⁺`, where
//! `γ = p·|g|²/(W·N0)`. Rates are in bits/s, powers in watts.

use std::f64::consts::{LN_2, SQRT_2};

use statrs::function::erf::{erfc, erfc_inv};

use crate::config::SimConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateKind {
    Shannon,
    FiniteBlocklength {
        codeword_len: f64,
        block_error: f64,
        /// Cached `Q⁻¹(block_error)`.
        qinv: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateModel {
    pub kind: RateKind,
    pub bandwidth_hz: f64,
    pub noise_psd: f64,
}

impl RateModel {
    pub fn shannon(bandwidth_hz: f64, noise_psd: f64) -> Self {
        Self {
            kind: RateKind::Shannon,
            bandwidth_hz,
            noise_psd,
        }
    }

    pub fn finite_blocklength(
        bandwidth_hz: f64,
        noise_psd: f64,
        codeword_len: f64,
        block_error: f64,
    ) -> Result<Self> {
        if !(codeword_len >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "codeword length must be at least 1, got {codeword_len}"
            )));
        }
        Ok(Self {
            kind: RateKind::FiniteBlocklength {
                codeword_len,
                block_error,
                qinv: q_inverse(block_error)?,
            },
            bandwidth_hz,
            noise_psd,
        })
    }

    pub fn from_config(cfg: &SimConfig) -> Result<Self> {
        match cfg.codeword_len {
            None => Ok(Self::shannon(cfg.bandwidth_hz, cfg.noise_psd)),
            Some(len) => Self::finite_blocklength(cfg.bandwidth_hz, cfg.noise_psd, len, cfg.block_error),
        }
    }

    /// Achievable rate in bits/s at power `p` over a link with power gain `g2`.
    #[inline]
    pub fn rate(&self, p: f64, g2: f64) -> f64 {
        let snr = p * g2 / (self.bandwidth_hz * self.noise_psd);
        match self.kind {
            RateKind::Shannon => self.bandwidth_hz * snr.ln_1p() / LN_2,
            RateKind::FiniteBlocklength {
                codeword_len, qinv, ..
            } => finite_bits(self.bandwidth_hz, snr, codeword_len, qinv),
        }
    }

    /// Upper bound on `∂R/∂p` over `[0, ∞)` for gains up to `g2_cap`, in bits/J.
    ///
    /// The Shannon rate is concave, so its slope peaks at `p = 0` where it
    /// equals `g2/(N0·ln 2)`. The finite-blocklength rate never climbs faster
    /// than its Shannon envelope, so the same value bounds both models.
    pub fn lipschitz_bound(&self, g2_cap: f64) -> f64 {
        g2_cap / (self.noise_psd * LN_2)
    }

    /// Rate of link `l` in a vector of powers and gains. Links are orthogonal,
    /// so only the link's own entries matter.
    pub fn link_rate(&self, powers: &[f64], gains: &[f64], l: usize) -> f64 {
        self.rate(powers[l], gains[l])
    }
}

#[inline]
fn finite_bits(bandwidth: f64, snr: f64, codeword_len: f64, qinv: f64) -> f64 {
    let x = 1.0 + snr;
    let dispersion = ((1.0 - 1.0 / (x * x)) / codeword_len).sqrt();
    let bits = snr.ln_1p() / LN_2 - dispersion * qinv / LN_2;
    bandwidth * bits.max(0.0)
}

pub fn rate_shannon(p: f64, g2: f64, bandwidth_hz: f64, noise_psd: f64) -> f64 {
    RateModel::shannon(bandwidth_hz, noise_psd).rate(p, g2)
}

pub fn rate_finite(
    p: f64,
    g2: f64,
    bandwidth_hz: f64,
    noise_psd: f64,
    codeword_len: f64,
    block_error: f64,
) -> Result<f64> {
    Ok(RateModel::finite_blocklength(bandwidth_hz, noise_psd, codeword_len, block_error)?.rate(p, g2))
}

/// Gaussian tail probability `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Inverse of the Gaussian tail: the `x` with `Q(x) = rho`.
pub fn q_inverse(rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tail probability must lie in (0, 1), got {rho}"
        )));
    }
    let mut x = SQRT_2 * erfc_inv(2.0 * rho);
    // Newton polish on Q(x) − ρ; Q'(x) = −φ(x).
    for _ in 0..4 {
        let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if density == 0.0 {
            break;
        }
        let step = (q_function(x) - rho) / density;
        x += step;
        if step.abs() <= 1e-16 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateProperty {
    /// Zero power yields zero rate.
    ZeroPowerZeroRate,
    /// `R(p) − R(p̃) ≤ δ·(p − p̃)`.
    LipschitzBound,
    /// Raising one link's power never raises another link's rate.
    NoInterferenceGain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyViolation {
    pub property: RateProperty,
    pub p: f64,
    pub g2: f64,
    pub observed: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PropertyReport {
    pub violations: Vec<PropertyViolation>,
    pub max_slope: f64,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn fails(&self, property: RateProperty) -> bool {
        self.violations.iter().any(|v| v.property == property)
    }
}

/// Checks the three structural rate-power properties on a `grid_size²` grid
/// of powers in `[0, p_max]` and gains in `[0, g2_cap]`.
pub fn check_properties(
    model: &RateModel,
    g2_cap: f64,
    p_max: f64,
    delta: f64,
    grid_size: usize,
) -> Result<PropertyReport> {
    if grid_size < 10 {
        return Err(Error::InvalidArgument(format!("grid size must be at least 10, got {grid_size}")));
    }
    let mut report = PropertyReport::default();
    let step = p_max / grid_size as f64;
    let eps = step * 1e-3;
    for gi in 0..=grid_size {
        let g2 = g2_cap * gi as f64 / grid_size as f64;
        let zero = model.rate(0.0, g2);
        if zero != 0.0 {
            report.violations.push(PropertyViolation {
                property: RateProperty::ZeroPowerZeroRate,
                p: 0.0,
                g2,
                observed: zero,
                bound: 0.0,
            });
        }
        for pi in 0..grid_size {
            let p = step * pi as f64;
            // Both a coarse (grid step) and a fine difference quotient.
            for h in [step, eps] {
                let slope = (model.rate(p + h, g2) - model.rate(p, g2)) / h;
                report.max_slope = report.max_slope.max(slope);
                if slope > delta * (1.0 + 1e-6) {
                    report.violations.push(PropertyViolation {
                        property: RateProperty::LipschitzBound,
                        p,
                        g2,
                        observed: slope,
                        bound: delta,
                    });
                }
            }
            // Two-link vector: raise link 0's power, link 1 must not gain.
            let gains = [g2, g2_cap - g2];
            let low = [p, p_max - p];
            let high = [p + step, p_max - p];
            let before = model.link_rate(&low, &gains, 1);
            let after = model.link_rate(&high, &gains, 1);
            if after > before {
                report.violations.push(PropertyViolation {
                    property: RateProperty::NoInterferenceGain,
                    p,
                    g2,
                    observed: after,
                    bound: before,
                });
            }
        }
    }
    Ok(report)
}
