//! Rician block-fading channels and pilot-based CSI estimates.
//!
//! Energy links are stored as an `N × M` row-major matrix, row `n` being the
//! E-AP-to-node vector `h_n`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Free-space (Friis) power gain `(c/(4πfd))^exponent`.
pub fn path_loss(distance_m: f64, carrier_hz: f64, exponent: f64) -> Result<f64> {
    if !(distance_m > 0.0 && distance_m.is_finite()) {
        return Err(Error::InvalidArgument(format!("distance must be positive, got {distance_m}")));
    }
    Ok((SPEED_OF_LIGHT / (4.0 * PI * carrier_hz * distance_m)).powf(exponent))
}

/// `(K/(K+1), 1/(K+1))`, valid for `K = ∞`.
fn rician_weights(k: f64) -> (f64, f64) {
    if k.is_infinite() {
        (1.0, 0.0)
    } else {
        (k / (k + 1.0), 1.0 / (k + 1.0))
    }
}

/// Unit-variance circularly-symmetric complex normal.
fn cn01<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

/// Deterministic (line-of-sight) components, fixed for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct LineOfSight {
    pub g: Vec<Complex64>,
    pub h: Vec<Complex64>,
}

impl LineOfSight {
    /// Unit-modulus phase per data link and a uniform-linear-array steering
    /// vector per node at a random azimuth.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, links: usize, nodes: usize, antennas: usize) -> Self {
        let g = (0..links)
            .map(|_| Complex64::from_polar(1.0, rng.random_range(-PI..PI)))
            .collect();
        let mut h = Vec::with_capacity(nodes * antennas);
        for _ in 0..nodes {
            let theta: f64 = rng.random_range(-PI / 2.0..PI / 2.0);
            for m in 0..antennas {
                h.push(Complex64::from_polar(1.0, -PI * m as f64 * theta.sin()));
            }
        }
        Self { g, h }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub slot: u64,
    pub antennas: usize,
    pub g: Vec<Complex64>,
    pub h: Vec<Complex64>,
    /// Unit-variance scattered components before scaling, kept for estimation.
    pub g_scatter: Vec<Complex64>,
    pub h_scatter: Vec<Complex64>,
}

impl ChannelState {
    pub fn h_row(&self, n: usize) -> &[Complex64] {
        &self.h[n * self.antennas..(n + 1) * self.antennas]
    }

    pub fn is_finite(&self) -> bool {
        self.g.iter().chain(&self.h).all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedChannelState {
    pub slot: u64,
    pub antennas: usize,
    pub g: Vec<Complex64>,
    pub h: Vec<Complex64>,
    pub sigma2_g: Vec<f64>,
    pub sigma2_h: Vec<f64>,
}

impl EstimatedChannelState {
    pub fn h_row(&self, n: usize) -> &[Complex64] {
        &self.h[n * self.antennas..(n + 1) * self.antennas]
    }
}

/// Static per-run channel parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub beta_g: Vec<f64>,
    pub beta_h: Vec<f64>,
    pub rician_k: f64,
    pub fading_cap: f64,
    pub antennas: usize,
    pub los: LineOfSight,
}

/// Rescales `v` so that `Σ|v|² ≤ cap`.
fn clip(v: &mut [Complex64], cap: f64) {
    let power: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    if power > cap {
        let s = (cap / power).sqrt();
        for z in v.iter_mut() {
            *z *= s;
        }
        // rounding can leave the power a hair above the cap
        while v.iter().map(|z| z.norm_sqr()).sum::<f64>() > cap {
            for z in v.iter_mut() {
                *z *= 1.0 - f64::EPSILON;
            }
        }
    }
}

impl ChannelModel {
    fn compose(&self, los: &[Complex64], scatter: &[Complex64], beta: f64, cap: f64) -> Vec<Complex64> {
        let (wl, ws) = rician_weights(self.rician_k);
        let a = (beta * wl).sqrt();
        let b = (beta * ws).sqrt();
        let mut out: Vec<Complex64> = los.iter().zip(scatter).map(|(l, s)| l * a + s * b).collect();
        clip(&mut out, cap);
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, slot: u64) -> ChannelState {
        let m = self.antennas;
        let nodes = self.beta_h.len();
        let scatter = self.rician_k.is_finite();
        let draw = |rng: &mut R, len: usize| -> Vec<Complex64> {
            if scatter {
                (0..len).map(|_| cn01(rng)).collect()
            } else {
                vec![Complex64::new(0.0, 0.0); len]
            }
        };
        let g_scatter = draw(rng, self.beta_g.len());
        let h_scatter = draw(rng, nodes * m);
        let mut g = Vec::with_capacity(self.beta_g.len());
        for (l, &beta) in self.beta_g.iter().enumerate() {
            let v = self.compose(&self.los.g[l..=l], &g_scatter[l..=l], beta, beta * self.fading_cap);
            g.push(v[0]);
        }
        let mut h = Vec::with_capacity(nodes * m);
        for (n, &beta) in self.beta_h.iter().enumerate() {
            let r = n * m..(n + 1) * m;
            h.extend(self.compose(
                &self.los.h[r.clone()],
                &h_scatter[r],
                beta,
                beta * self.fading_cap * m as f64,
            ));
        }
        ChannelState {
            slot,
            antennas: m,
            g,
            h,
            g_scatter,
            h_scatter,
        }
    }

    /// Pilot-based estimate of `truth`. Infinite pilot energy returns the truth
    /// without touching `rng`.
    pub fn estimate<R: Rng + ?Sized>(
        &self,
        truth: &ChannelState,
        pilot_h: f64,
        pilot_g: f64,
        pilot_noise: f64,
        rng: &mut R,
    ) -> Result<EstimatedChannelState> {
        if !(pilot_noise > 0.0) {
            return Err(Error::InvalidArgument(format!("pilot noise must be positive, got {pilot_noise}")));
        }
        let m = self.antennas;
        let sigma2_g: Vec<f64> = self
            .beta_g
            .iter()
            .map(|&b| error_variance(b, pilot_g, pilot_noise, self.rician_k))
            .collect();
        let sigma2_h: Vec<f64> = self
            .beta_h
            .iter()
            .map(|&b| error_variance(b, pilot_h, pilot_noise, self.rician_k))
            .collect();

        let g = if pilot_g.is_infinite() || self.rician_k.is_infinite() {
            truth.g.clone()
        } else {
            let mut g = Vec::with_capacity(truth.g.len());
            for (l, &beta) in self.beta_g.iter().enumerate() {
                let est = [estimate_scatter(truth.g_scatter[l], sigma2_g[l], rng)];
                g.push(self.compose(&self.los.g[l..=l], &est, beta, beta * self.fading_cap)[0]);
            }
            g
        };
        let h = if pilot_h.is_infinite() || self.rician_k.is_infinite() {
            truth.h.clone()
        } else {
            let mut h = Vec::with_capacity(truth.h.len());
            for (n, &beta) in self.beta_h.iter().enumerate() {
                let r = n * m..(n + 1) * m;
                let est: Vec<Complex64> = truth.h_scatter[r.clone()]
                    .iter()
                    .map(|&z| estimate_scatter(z, sigma2_h[n], rng))
                    .collect();
                h.extend(self.compose(&self.los.h[r], &est, beta, beta * self.fading_cap * m as f64));
            }
            h
        };
        Ok(EstimatedChannelState {
            slot: truth.slot,
            antennas: m,
            g,
            h,
            sigma2_g,
            sigma2_h,
        })
    }
}

/// `σ² = (β·ψ/(σ_N(K+1)) + 1)⁻¹`.
pub fn error_variance(beta: f64, pilot_energy: f64, pilot_noise: f64, k: f64) -> f64 {
    let (_, ws) = rician_weights(k);
    let x = beta * pilot_energy * ws / pilot_noise;
    if x.is_nan() {
        // ψ = ∞ with K = ∞
        0.0
    } else {
        1.0 / (x + 1.0)
    }
}

/// `ĥ = (1−σ²)·h + √((1−σ²)σ²)·n`, so that `ĥ ~ CN(0, 1−σ²)` and the error
/// `h − ĥ ~ CN(0, σ²)` is independent of `ĥ`.
fn estimate_scatter<R: Rng + ?Sized>(truth: Complex64, sigma2: f64, rng: &mut R) -> Complex64 {
    let n = cn01(rng);
    truth * (1.0 - sigma2) + n * ((1.0 - sigma2) * sigma2).sqrt()
}

/// Writes channel states as CSV rows `slot,kind,index,antenna,re,im`
/// (1-based index; antenna is 0 for data links).
pub fn write_channel_trace<W: Write>(out: W, states: &[ChannelState]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slot", "kind", "index", "antenna", "re", "im"])
        .map_err(csv_err)?;
    for st in states {
        for (l, z) in st.g.iter().enumerate() {
            w.serialize((st.slot, "g", l + 1, 0, z.re, z.im)).map_err(csv_err)?;
        }
        for (i, z) in st.h.iter().enumerate() {
            let (n, m) = (i / st.antennas, i % st.antennas);
            w.serialize((st.slot, "h", n + 1, m + 1, z.re, z.im)).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Trace(e.to_string())
}

/// Reads a channel trace written by [`write_channel_trace`]. Slots must be
/// contiguous from 0 and each must list every entry exactly once.
pub fn read_channel_trace<R: Read>(input: R, links: usize, nodes: usize, antennas: usize) -> Result<Vec<ChannelState>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["slot", "kind", "index", "antenna", "re", "im"] {
        return Err(Error::Trace(format!("unexpected channel trace header {headers:?}")));
    }
    let zero = Complex64::new(0.0, 0.0);
    let blank = |slot| ChannelState {
        slot,
        antennas,
        g: vec![zero; links],
        h: vec![zero; nodes * antennas],
        g_scatter: vec![zero; links],
        h_scatter: vec![zero; nodes * antennas],
    };
    let mut states: Vec<ChannelState> = Vec::new();
    let mut seen: Vec<bool> = Vec::new();
    let per_slot = links + nodes * antennas;
    for (row, rec) in rdr.deserialize::<(u64, String, usize, usize, f64, f64)>().enumerate() {
        let (slot, kind, index, antenna, re, im) =
            rec.map_err(|e| Error::Trace(format!("row {}: {e}", row + 2)))?;
        if slot as usize > states.len() || (slot as usize) + 1 < states.len() {
            return Err(Error::Trace(format!("row {}: slot {slot} out of order", row + 2)));
        }
        if slot as usize == states.len() {
            if seen.iter().any(|s| !s) {
                return Err(Error::Trace(format!("slot {} is incomplete", slot - 1)));
            }
            states.push(blank(slot));
            seen = vec![false; per_slot];
        }
        let pos = match (kind.as_str(), index, antenna) {
            ("g", l, 0) if (1..=links).contains(&l) => l - 1,
            ("h", n, m) if (1..=nodes).contains(&n) && (1..=antennas).contains(&m) => {
                links + (n - 1) * antennas + (m - 1)
            }
            _ => {
                return Err(Error::Trace(format!(
                    "row {}: bad entry ({kind}, {index}, {antenna})",
                    row + 2
                )))
            }
        };
        if seen[pos] {
            return Err(Error::Trace(format!("row {}: duplicate entry", row + 2)));
        }
        seen[pos] = true;
        let z = Complex64::new(re, im);
        if !(re.is_finite() && im.is_finite()) {
            return Err(Error::Trace(format!("row {}: non-finite value", row + 2)));
        }
        let st = states.last_mut().expect("slot pushed above");
        if pos < links {
            st.g[pos] = z;
        } else {
            st.h[pos - links] = z;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Trace("last slot is incomplete".into()));
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn model(k: f64, m: usize) -> ChannelModel {
        let mut rng = stream(3, Purpose::LineOfSight);
        ChannelModel {
            beta_g: vec![2e-6, 5e-6],
            beta_h: vec![1e-5, 3e-6, 7e-6],
            rician_k: k,
            fading_cap: 10.0,
            antennas: m,
            los: LineOfSight::draw(&mut rng, 2, 3, m),
        }
    }

    #[test]
    fn friis_identities() {
        let f = 2.4e9;
        let b1 = path_loss(4.0, f, 2.0).unwrap();
        let b2 = path_loss(8.0, f, 2.0).unwrap();
        assert!((b1 / b2 - 4.0).abs() < 1e-12);
        let d0 = SPEED_OF_LIGHT / (4.0 * PI * f);
        assert!((path_loss(d0, f, 2.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(path_loss(0.0, f, 2.0).is_err());
        assert!(path_loss(-1.0, f, 2.0).is_err());
    }

    #[test]
    fn friis_at_four_meters() {
        // (c/(4π·2.4e9·4))², evaluated independently
        let expected = 6.175_600_756_449e-6;
        let b = path_loss(4.0, 2.4e9, 2.0).unwrap();
        assert!((b - expected).abs() / expected < 1e-6, "{b}");
    }

    #[test]
    fn infinite_k_is_pure_los() {
        let md = model(f64::INFINITY, 4);
        let st = md.sample(&mut stream(1, Purpose::Channel), 0);
        for (l, z) in st.g.iter().enumerate() {
            let expect = md.los.g[l] * md.beta_g[l].sqrt();
            assert!((z - expect).norm() < 1e-18);
        }
        for n in 0..3 {
            let p: f64 = st.h_row(n).iter().map(|z| z.norm_sqr()).sum();
            assert!((p - 4.0 * md.beta_h[n]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_k_is_pure_scatter() {
        let md = model(0.0, 2);
        let st = md.sample(&mut stream(1, Purpose::Channel), 0);
        let expect = st.g_scatter[0] * md.beta_g[0].sqrt();
        if st.g_scatter[0].norm_sqr() <= md.fading_cap {
            assert!((st.g[0] - expect).norm() < 1e-18);
        }
    }

    #[test]
    fn mean_power_matches_path_loss() {
        let md = model(1.0, 1);
        let mut rng = stream(7, Purpose::Channel);
        let n = 100_000;
        let mut acc = 0.0;
        for t in 0..n {
            acc += md.sample(&mut rng, t).g[0].norm_sqr();
        }
        let mean = acc / n as f64;
        assert!((mean / md.beta_g[0] - 1.0).abs() < 0.02, "{}", mean / md.beta_g[0]);
    }

    #[test]
    fn clipping_bounds_powers() {
        let md = model(0.0, 3);
        let mut rng = stream(2, Purpose::Channel);
        for t in 0..20_000 {
            let st = md.sample(&mut rng, t);
            assert!(st.is_finite());
            for (l, z) in st.g.iter().enumerate() {
                assert!(z.norm_sqr() <= md.beta_g[l] * md.fading_cap);
            }
            for n in 0..3 {
                let p: f64 = st.h_row(n).iter().map(|z| z.norm_sqr()).sum();
                assert!(p / 3.0 <= md.beta_h[n] * md.fading_cap * (1.0 + 1e-15));
                assert!(p <= md.beta_h[n] * md.fading_cap * 3.0);
            }
        }
    }

    #[test]
    fn same_seed_same_channels() {
        let md = model(1.0, 4);
        let a: Vec<_> = {
            let mut r = stream(11, Purpose::Channel);
            (0..50).map(|t| md.sample(&mut r, t)).collect()
        };
        let b: Vec<_> = {
            let mut r = stream(11, Purpose::Channel);
            (0..50).map(|t| md.sample(&mut r, t)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn perfect_pilots_return_truth() {
        let md = model(1.0, 4);
        let truth = md.sample(&mut stream(1, Purpose::Channel), 0);
        let mut rng = stream(1, Purpose::Estimate);
        let est = md
            .estimate(&truth, f64::INFINITY, f64::INFINITY, 1e-12, &mut rng)
            .unwrap();
        assert_eq!(est.g, truth.g);
        assert_eq!(est.h, truth.h);
        assert!(est.sigma2_g.iter().chain(&est.sigma2_h).all(|&s| s == 0.0));
    }

    #[test]
    fn error_variance_formula() {
        assert_eq!(error_variance(1.0, 1.0, 1.0, 0.0), 0.5);
        assert!((error_variance(1.0, 1e-300, 1.0, 0.0) - 1.0).abs() < 1e-12);
        assert_eq!(error_variance(2.0, 3.0, 4.0, 2.0), 1.0 / (2.0 * 3.0 / (4.0 * 3.0) + 1.0));
        assert!(md_sigma_in_unit_interval());
    }

    fn md_sigma_in_unit_interval() -> bool {
        [1e-9, 1e-3, 1.0, 1e6]
            .iter()
            .all(|&psi| (0.0..=1.0).contains(&error_variance(1e-5, psi, 1e-12, 1.0)))
    }

    #[test]
    fn estimation_decomposition_variances() {
        let sigma2 = 0.3;
        let mut rng = stream(4, Purpose::Estimate);
        let mut trng = stream(4, Purpose::Channel);
        let n = 100_000;
        let (mut v_est, mut v_err, mut cross) = (0.0, 0.0, Complex64::new(0.0, 0.0));
        for _ in 0..n {
            let h = cn01(&mut trng);
            let e = estimate_scatter(h, sigma2, &mut rng);
            let err = h - e;
            v_est += e.norm_sqr();
            v_err += err.norm_sqr();
            cross += e * err.conj();
        }
        let (v_est, v_err) = (v_est / n as f64, v_err / n as f64);
        assert!((v_est / (1.0 - sigma2) - 1.0).abs() < 0.02, "{v_est}");
        assert!((v_err / sigma2 - 1.0).abs() < 0.02, "{v_err}");
        assert!(((v_est + v_err) - 1.0).abs() < 0.02);
        assert!(cross.norm() / (n as f64) < 0.01);
    }

    #[test]
    fn estimates_keep_los_when_scatter_vanishes() {
        let md = model(f64::INFINITY, 2);
        let truth = md.sample(&mut stream(1, Purpose::Channel), 0);
        let est = md.estimate(&truth, 1e-9, 1e-9, 1e-12, &mut stream(1, Purpose::Estimate)).unwrap();
        assert_eq!(est.g, truth.g);
        assert_eq!(est.h, truth.h);
    }

    #[test]
    fn channel_trace_round_trip() {
        let md = model(1.0, 2);
        let mut rng = stream(5, Purpose::Channel);
        let mut states: Vec<_> = (0..3).map(|t| md.sample(&mut rng, t)).collect();
        let mut buf = Vec::new();
        write_channel_trace(&mut buf, &states).unwrap();
        let back = read_channel_trace(&buf[..], 2, 3, 2).unwrap();
        for st in &mut states {
            st.g_scatter.iter_mut().chain(st.h_scatter.iter_mut()).for_each(|z| *z = Complex64::new(0.0, 0.0));
        }
        assert_eq!(back, states);
    }

    #[test]
    fn truncated_channel_trace_is_rejected() {
        let md = model(1.0, 2);
        let mut rng = stream(5, Purpose::Channel);
        let states: Vec<_> = (0..2).map(|t| md.sample(&mut rng, t)).collect();
        let mut buf = Vec::new();
        write_channel_trace(&mut buf, &states).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: Vec<&str> = text.lines().collect();
        let truncated = cut[..cut.len() - 1].join("\n");
        assert!(read_channel_trace(truncated.as_bytes(), 2, 3, 2).is_err());
    }
}
