//! Geometry, ground-truth channel synthesis, and noisy pilot snapshots.
//!
//! The anchor is a ULA on the x-axis with element m at
//! `[(m - (M-1)/2) d_A, 0]`; users and scatterers live in the upper
//! half-plane, parameterized by polar `(r, theta)`. The channel is a
//! frequency-flat tapped-delay line over `L` taps of width `c*T_s`.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::mat::CMat;
use crate::pilots::PilotSet;
use crate::{Error, Result, SPEED_OF_LIGHT};

/// Uniform linear array along the x-axis, centered on the origin.
#[derive(Debug, Clone)]
pub struct ArrayGeometry {
    pub num_antennas: usize,
    pub carrier_freq: f64,
    pub wavelength: f64,
    pub spacing: f64,
    pub element_positions: Vec<[f64; 2]>,
}

impl ArrayGeometry {
    pub fn new(num_antennas: usize, carrier_freq: f64, spacing: f64) -> Self {
        let wavelength = SPEED_OF_LIGHT / carrier_freq;
        let half = (num_antennas as f64 - 1.0) / 2.0;
        let element_positions = (0..num_antennas)
            .map(|m| [(m as f64 - half) * spacing, 0.0])
            .collect();
        Self { num_antennas, carrier_freq, wavelength, spacing, element_positions }
    }

    /// Standard half-wavelength ULA.
    pub fn half_wavelength(num_antennas: usize, carrier_freq: f64) -> Self {
        let wavelength = SPEED_OF_LIGHT / carrier_freq;
        Self::new(num_antennas, carrier_freq, wavelength / 2.0)
    }

    /// Wavenumber `2*pi/lambda`.
    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength
    }

    /// Array aperture `(M-1) d_A`.
    pub fn aperture(&self) -> f64 {
        (self.num_antennas as f64 - 1.0) * self.spacing
    }

    /// Rayleigh (Fraunhofer) distance `2 D^2 / lambda` for the aperture.
    pub fn rayleigh_distance(&self) -> f64 {
        2.0 * self.aperture().powi(2) / self.wavelength
    }
}

/// Discrete delay-tap grid of width `c*T_s` per tap.
#[derive(Debug, Clone)]
pub struct DelayGrid {
    pub sample_period: f64,
    pub bandwidth: f64,
    /// Path-length resolution `c*T_s` in meters.
    pub tap_length_m: f64,
    pub num_taps: usize,
    pub rayleigh_distance: f64,
}

impl DelayGrid {
    /// Grid covering 1.5x the Rayleigh distance: `L = ceil(1.5 R / (c T_s))`.
    pub fn new(sample_period: f64, rayleigh_distance: f64) -> Self {
        let tap_length_m = SPEED_OF_LIGHT * sample_period;
        let num_taps = (1.5 * rayleigh_distance / tap_length_m).ceil() as usize;
        Self {
            sample_period,
            bandwidth: 1.0 / sample_period,
            tap_length_m,
            num_taps,
            rayleigh_distance,
        }
    }

    /// Largest path range the grid can represent.
    pub fn max_range(&self) -> f64 {
        1.5 * self.rayleigh_distance
    }

    /// Delay tap for a path of length `r`: `ceil(r / (c T_s))`.
    pub fn tap_for_range(&self, r: f64) -> usize {
        (r / self.tap_length_m).ceil() as usize
    }
}

/// Polar position in the array plane: range in meters, angle in radians
/// measured from the positive x-axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarPoint {
    pub range: f64,
    pub angle: f64,
}

impl PolarPoint {
    pub fn cartesian(&self) -> [f64; 2] {
        [self.range * self.angle.cos(), self.range * self.angle.sin()]
    }
}

/// How path energy maps onto the delay grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeakageMode {
    /// Each path occupies the single tap `ceil(r/(c T_s))`.
    IntegerTap,
    /// Each path spreads over +/-3 taps with a unit-energy half-bandwidth
    /// sinc kernel
    /// centered on the fractional delay; preserves sub-tap information.
    PulseShaped,
}

/// A full simulation scene: array, delay grid, users, and a scatterer set
/// shared by every user.
#[derive(Debug, Clone)]
pub struct Scene {
    pub geometry: ArrayGeometry,
    pub grid: DelayGrid,
    pub ues: Vec<PolarPoint>,
    pub scatterers: Vec<PolarPoint>,
    pub absorption: f64,
    pub leakage_mode: LeakageMode,
}

/// Ground-truth M x L channel matrix for one user.
#[derive(Debug, Clone)]
pub struct MultiTapChannel {
    pub taps: CMat,
    /// Tap index carrying the LoS path.
    pub los_tap: usize,
    /// Tap index of each NLoS (scatterer) path.
    pub nlos_taps: Vec<usize>,
}

/// T noisy received pilot frames over the same channel.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    pub frames: Vec<CMat>,
    pub noise_variance: f64,
    pub snr_db: f64,
    pub seed: u64,
}

/// Near-field steering vector: entry m is `exp(-j kappa ||p_m - u||)`
/// for the source at polar `(r, theta)`. Serves both LoS (user) and
/// NLoS (scatterer) responses.
pub fn steering_vector(geometry: &ArrayGeometry, r: f64, theta: f64) -> Result<Vec<Complex64>> {
    if !r.is_finite() || !theta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "steering vector needs finite (r, theta), got ({r}, {theta})"
        )));
    }
    if r <= 0.0 {
        return Err(Error::InvalidArgument(format!("range must be positive, got {r}")));
    }
    let kappa = geometry.wavenumber();
    let u = [r * theta.cos(), r * theta.sin()];
    Ok(geometry
        .element_positions
        .iter()
        .map(|p| {
            let d = ((p[0] - u[0]).powi(2) + (p[1] - u[1]).powi(2)).sqrt();
            Complex64::from_polar(1.0, -kappa * d)
        })
        .collect())
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Half-width of the pulse-shaped leakage kernel, in taps.
const KERNEL_HALF_WIDTH: i64 = 3;

impl Scene {
    pub fn num_ues(&self) -> usize {
        self.ues.len()
    }

    /// Adds one propagation path into `taps`. `gain` multiplies a
    /// unit-modulus steering vector at `(path_r, path_theta)`.
    fn add_path(
        &self,
        taps: &mut CMat,
        gain: Complex64,
        path_r: f64,
        path_theta: f64,
    ) -> Result<usize> {
        if path_r > self.grid.max_range() {
            return Err(Error::OutOfGrid { range_m: path_r, max_m: self.grid.max_range() });
        }
        let a = steering_vector(&self.geometry, path_r, path_theta)?;
        match self.leakage_mode {
            LeakageMode::IntegerTap => {
                let tap = self.grid.tap_for_range(path_r);
                for (m, am) in a.iter().enumerate() {
                    *taps.at_mut(m, tap) += gain * am;
                }
                Ok(tap)
            }
            LeakageMode::PulseShaped => {
                let frac = path_r / self.grid.tap_length_m;
                let center = frac.round() as i64;
                let lo = center - KERNEL_HALF_WIDTH;
                let hi = center + KERNEL_HALF_WIDTH;
                let mut weights = Vec::with_capacity((hi - lo + 1) as usize);
                for ell in lo..=hi {
                    // Half-bandwidth pulse: the energy peak spans several
                    // taps, which is what lets three-point parabolic
                    // interpolation recover the fractional delay.
                    weights.push((ell, sinc((ell as f64 - frac) / 2.0)));
                }
                let energy: f64 = weights.iter().map(|(_, w)| w * w).sum();
                let norm = energy.sqrt();
                for (ell, w) in weights {
                    if ell < 0 || ell as usize >= self.grid.num_taps {
                        continue;
                    }
                    let g = gain * (w / norm);
                    for (m, am) in a.iter().enumerate() {
                        *taps.at_mut(m, ell as usize) += g * am;
                    }
                }
                Ok(center.max(0) as usize)
            }
        }
    }

    /// Assembles the ground-truth channel for one user: a LoS path of
    /// gain `1/r_k` plus one path per scatterer of gain
    /// `(beta / r_p) exp(-j kappa ||s - u||)`.
    pub fn synthesize_channel(&self, ue_index: usize) -> Result<MultiTapChannel> {
        let ue = *self.ues.get(ue_index).ok_or_else(|| {
            Error::InvalidArgument(format!("ue index {ue_index} out of range"))
        })?;
        let m = self.geometry.num_antennas;
        let mut taps = CMat::zeros(m, self.grid.num_taps);

        let los_gain = Complex64::new(1.0 / ue.range, 0.0);
        let los_tap = self.add_path(&mut taps, los_gain, ue.range, ue.angle)?;

        let kappa = self.geometry.wavenumber();
        let u = ue.cartesian();
        let mut nlos_taps = Vec::with_capacity(self.scatterers.len());
        for s in &self.scatterers {
            let sc = s.cartesian();
            let bounce = ((sc[0] - u[0]).powi(2) + (sc[1] - u[1]).powi(2)).sqrt();
            let phase = Complex64::from_polar(1.0, -kappa * bounce);
            let gain = phase * (self.absorption / s.range);
            nlos_taps.push(self.add_path(&mut taps, gain, s.range, s.angle)?);
        }

        Ok(MultiTapChannel { taps, los_tap, nlos_taps })
    }

    /// Noise variance for a target SNR: average per-antenna LoS receive
    /// power over users divided by the linear SNR. Infinite SNR gives
    /// zero noise.
    pub fn noise_variance(&self, snr_db: f64) -> f64 {
        if snr_db.is_infinite() && snr_db > 0.0 {
            return 0.0;
        }
        let mean_los_power: f64 =
            self.ues.iter().map(|ue| 1.0 / (ue.range * ue.range)).sum::<f64>()
                / self.ues.len() as f64;
        mean_los_power / 10f64.powf(snr_db / 10.0)
    }

    /// Synthesizes `num_snapshots` received frames `Y^t = sum_k H_k X_k + W^t`.
    ///
    /// The channel part is computed once (snapshots share the channel);
    /// frames differ only in the noise realization. Deterministic in `seed`.
    pub fn synthesize_snapshots(
        &self,
        pilots: &PilotSet,
        num_snapshots: usize,
        snr_db: f64,
        seed: u64,
    ) -> Result<SnapshotSet> {
        let l = self.grid.num_taps;
        let n = pilots.length;
        if n < l {
            return Err(Error::InvalidConfiguration(format!(
                "pilot length {n} shorter than delay spread {l}; circulant construction needs N >= L"
            )));
        }
        if pilots.num_ues() != self.num_ues() {
            return Err(Error::InvalidConfiguration(format!(
                "{} pilots for {} users",
                pilots.num_ues(),
                self.num_ues()
            )));
        }
        let m = self.geometry.num_antennas;

        // Noiseless frame: circular convolution of each channel row with
        // the user's pilot.
        let mut clean = CMat::zeros(m, n);
        for k in 0..self.num_ues() {
            let chan = self.synthesize_channel(k)?;
            let x = pilots.sequence(k);
            for mi in 0..m {
                for ell in 0..l {
                    let h = chan.taps.at(mi, ell);
                    if h == Complex64::ZERO {
                        continue;
                    }
                    for ni in 0..n {
                        *clean.at_mut(mi, ni) += h * x[(ni + n - ell) % n];
                    }
                }
            }
        }

        let noise_variance = self.noise_variance(snr_db);
        let sigma = (noise_variance / 2.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..num_snapshots)
            .map(|_| {
                let mut frame = clean.clone();
                if sigma > 0.0 {
                    for mi in 0..m {
                        for ni in 0..n {
                            let re: f64 = rng.sample(StandardNormal);
                            let im: f64 = rng.sample(StandardNormal);
                            *frame.at_mut(mi, ni) += Complex64::new(re * sigma, im * sigma);
                        }
                    }
                }
                frame
            })
            .collect();

        Ok(SnapshotSet { frames, noise_variance, snr_db, seed })
    }
}
