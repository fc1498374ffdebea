//! Hand-crafted inputs for the two residual-correction sub-networks.
//!
//! Range features live in the delay domain (a window of the tap energy
//! profile plus shape statistics); angle features live in the spatial
//! domain (a fine correlation scan of steering vectors against the
//! dominant eigenvector). Estimates are min-max scaled by the scene
//! support, energies by the LoS tap energy, and the scan by M, so every
//! entry is bounded and scale-free before the network's own z-scoring.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::estimator::TapEnergyProfile;
use crate::mat::inner;
use crate::scene::{steering_vector, ArrayGeometry};
use crate::{Error, Result};

/// Taps to the right of `los_tap - 1` in the energy window (L' = 7, so
/// the window holds 8 taps).
pub const TAP_WINDOW_LEN: usize = 8;
/// Number of scan offsets in the angle correlation feature.
pub const SCAN_LEN: usize = 64;
/// Range feature dimension: 8 window taps + 6 scalars.
pub const RANGE_DIM: usize = TAP_WINDOW_LEN + 6;
/// Angle feature dimension: 64 scan values + 5 scalars.
pub const ANGLE_DIM: usize = SCAN_LEN + 5;

/// Scene support used for min-max scaling of range estimates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub range_min: f64,
    pub range_max: f64,
}

impl FeatureScaling {
    fn scale_range(&self, r: f64) -> f64 {
        (r - self.range_min) / (self.range_max - self.range_min)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RangeFeatures {
    /// `e[los_tap - 1 ..= los_tap + 6]`, zero-padded at the profile
    /// edges, divided by `e[los_tap]`.
    pub tap_window: Vec<f64>,
    pub parabolic_range: f64,
    pub music_range: f64,
    pub tap_asymmetry: f64,
    pub peak_dominance: f64,
    pub mean_energy: f64,
    pub phase_curvature: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AngleFeatures {
    /// `|a(r, theta_m + offset)^H u1|^2 / M` at 64 uniform offsets.
    pub correlation_scan: Vec<f64>,
    pub music_angle: f64,
    pub phase_slope: f64,
    pub peak_correlation: f64,
    pub negative_curvature: f64,
    pub music_range: f64,
}

impl RangeFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.tap_window.clone();
        v.extend([
            self.parabolic_range,
            self.music_range,
            self.tap_asymmetry,
            self.peak_dominance,
            self.mean_energy,
            self.phase_curvature,
        ]);
        debug_assert_eq!(v.len(), RANGE_DIM);
        v
    }
}

impl AngleFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.correlation_scan.clone();
        v.extend([
            self.music_angle,
            self.phase_slope,
            self.peak_correlation,
            self.negative_curvature,
            self.music_range,
        ]);
        debug_assert_eq!(v.len(), ANGLE_DIM);
        v
    }
}

/// Sequentially unwrapped phases of a complex vector.
fn unwrapped_phases(v: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    let mut offset = 0.0;
    let mut prev = 0.0;
    for (i, z) in v.iter().enumerate() {
        let raw = z.arg();
        if i > 0 {
            let mut diff = raw - prev;
            while diff > std::f64::consts::PI {
                diff -= 2.0 * std::f64::consts::PI;
                offset -= 2.0 * std::f64::consts::PI;
            }
            while diff < -std::f64::consts::PI {
                diff += 2.0 * std::f64::consts::PI;
                offset += 2.0 * std::f64::consts::PI;
            }
        }
        prev = raw;
        out.push(raw + offset);
    }
    out
}

/// Least-squares quadratic fit of the unwrapped phase of `v` against the
/// centered antenna index. Returns `(slope, curvature)` = the linear and
/// quadratic coefficients.
pub fn phase_fit(v: &[Complex64]) -> (f64, f64) {
    let m = v.len();
    let phases = unwrapped_phases(v);
    let center = (m as f64 - 1.0) / 2.0;
    // Normal equations for y ~ c0 + c1 x + c2 x^2; odd power sums vanish
    // for the symmetric centered index.
    let (mut s0, mut s2, mut s4) = (0.0, 0.0, 0.0);
    let (mut t0, mut t1, mut t2) = (0.0, 0.0, 0.0);
    for (i, &y) in phases.iter().enumerate() {
        let x = i as f64 - center;
        let x2 = x * x;
        s0 += 1.0;
        s2 += x2;
        s4 += x2 * x2;
        t0 += y;
        t1 += x * y;
        t2 += x2 * y;
    }
    let slope = t1 / s2;
    let det = s0 * s4 - s2 * s2;
    let curvature = (s0 * t2 - s2 * t0) / det;
    (slope, curvature)
}

/// Builds the 14-dimensional range feature vector.
pub fn range_features(
    profile: &TapEnergyProfile,
    los_tap: usize,
    parabolic_range: f64,
    music_range: f64,
    signal_vector: &[Complex64],
    scaling: FeatureScaling,
) -> Result<RangeFeatures> {
    let e = &profile.energies;
    let peak = e[los_tap];
    if peak == 0.0 {
        return Err(Error::NoSignal("zero energy at the detected LoS tap".into()));
    }
    let tap_window: Vec<f64> = (-1i64..TAP_WINDOW_LEN as i64 - 1)
        .map(|off| {
            let idx = los_tap as i64 + off;
            if idx < 0 || idx as usize >= e.len() {
                0.0
            } else {
                e[idx as usize] / peak
            }
        })
        .collect();
    let left = if los_tap == 0 { 0.0 } else { e[los_tap - 1] };
    let right = if los_tap + 1 >= e.len() { 0.0 } else { e[los_tap + 1] };
    let max = e.iter().cloned().fold(0.0, f64::max);
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    let (_, curvature) = phase_fit(signal_vector);
    Ok(RangeFeatures {
        tap_window,
        parabolic_range: scaling.scale_range(parabolic_range),
        music_range: scaling.scale_range(music_range),
        tap_asymmetry: (right - left) / peak,
        peak_dominance: peak / max,
        mean_energy: mean / peak,
        phase_curvature: curvature,
    })
}

/// Raw correlation scan `|a(r, theta_center + offset)^H u1|^2` at
/// `SCAN_LEN` uniform offsets `-window/2 + i * window / SCAN_LEN`, so
/// the zero offset itself is sampled (at i = 32). Scan angles are
/// clamped into `[0, pi]`.
pub fn correlation_scan(
    signal_vector: &[Complex64],
    geometry: &ArrayGeometry,
    range: f64,
    theta_center: f64,
    angle_window: f64,
) -> Result<Vec<f64>> {
    let half = angle_window / 2.0;
    let step = angle_window / SCAN_LEN as f64;
    (0..SCAN_LEN)
        .map(|i| {
            let theta = (theta_center - half + i as f64 * step).clamp(0.0, std::f64::consts::PI);
            let a = steering_vector(geometry, range, theta)?;
            Ok(inner(&a, signal_vector).norm_sqr())
        })
        .collect()
}

/// Builds the 69-dimensional angle feature vector.
///
/// `range` is the best available range estimate at feature time: the
/// range sub-network output when one exists, else the parabolic estimate.
#[allow(clippy::too_many_arguments)]
pub fn angle_features(
    signal_vector: &[Complex64],
    geometry: &ArrayGeometry,
    range: f64,
    music_angle: f64,
    music_range: f64,
    angle_window: f64,
    scaling: FeatureScaling,
) -> Result<AngleFeatures> {
    let raw = correlation_scan(signal_vector, geometry, range, music_angle, angle_window)?;
    let m = geometry.num_antennas as f64;
    let scan: Vec<f64> = raw.iter().map(|c| c / m).collect();
    let peak_idx = scan
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let peak = scan[peak_idx];
    let negative_curvature = if peak_idx == 0 || peak_idx + 1 == SCAN_LEN || peak == 0.0 {
        0.0
    } else {
        -(scan[peak_idx - 1] - 2.0 * peak + scan[peak_idx + 1]) / peak
    };
    let (slope, _) = phase_fit(signal_vector);
    Ok(AngleFeatures {
        correlation_scan: scan,
        music_angle: music_angle / std::f64::consts::PI,
        phase_slope: slope,
        peak_correlation: peak,
        negative_curvature,
        music_range: scaling.scale_range(music_range),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::TapEnergyProfile;
    use crate::scene::ArrayGeometry;

    const SCALING: FeatureScaling = FeatureScaling { range_min: 5.0, range_max: 30.0 };

    fn geometry() -> ArrayGeometry {
        ArrayGeometry::half_wavelength(41, 2.4e9)
    }

    fn profile(e: Vec<f64>) -> TapEnergyProfile {
        TapEnergyProfile { energies: e, threshold: 0.3 }
    }

    fn unit_steering(r: f64, theta: f64) -> Vec<Complex64> {
        let a = steering_vector(&geometry(), r, theta).unwrap();
        let norm = (a.len() as f64).sqrt();
        a.into_iter().map(|z| z / norm).collect()
    }

    #[test]
    fn symmetric_neighborhood_has_zero_asymmetry() {
        let mut e = vec![0.01; 100];
        e[9] = 0.4;
        e[10] = 1.0;
        e[11] = 0.4;
        let u1 = unit_steering(15.0, 1.0);
        let f = range_features(&profile(e), 10, 15.0, 15.2, &u1, SCALING).unwrap();
        assert_eq!(f.tap_asymmetry, 0.0);
        assert_eq!(f.peak_dominance, 1.0);
        assert_eq!(f.to_vec().len(), RANGE_DIM);
    }

    #[test]
    fn edge_window_zero_pads_without_nans() {
        let mut e = vec![0.0; 100];
        e[0] = 1.0;
        e[99] = 0.8;
        let u1 = unit_steering(10.0, 0.5);
        let f = range_features(&profile(e.clone()), 0, 1.5, 1.5, &u1, SCALING).unwrap();
        assert_eq!(f.tap_window[0], 0.0); // pad left of tap 0
        assert!(f.to_vec().iter().all(|v| v.is_finite()));
        let f = range_features(&profile(e), 99, 148.5, 148.5, &u1, SCALING).unwrap();
        assert!(f.tap_window[2..].iter().all(|&v| v == 0.0));
        assert!(f.to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_peak_energy_is_no_signal() {
        let e = vec![0.0; 50];
        let u1 = unit_steering(10.0, 0.5);
        assert!(range_features(&profile(e), 10, 15.0, 15.0, &u1, SCALING).is_err());
    }

    #[test]
    fn steering_phase_curvature_is_negative_and_matches_oracle() {
        // u1 = steering vector at r=10, theta=90 deg: the spherical
        // wavefront bows the phase profile downward.
        let u1 = unit_steering(10.0, std::f64::consts::FRAC_PI_2);
        let (_, curvature) = phase_fit(&u1);
        assert!(curvature < 0.0);

        // Independent oracle: fit exact per-element distances scaled by
        // -kappa (the true phase before wrapping ever happens).
        let g = geometry();
        let kappa = 2.0 * std::f64::consts::PI / g.wavelength;
        let phases: Vec<f64> = g
            .element_positions
            .iter()
            .map(|p| {
                let d = (p[0].powi(2) + (10.0 - p[1]).powi(2)).sqrt();
                -kappa * d
            })
            .collect();
        // Same quadratic fit on the exact phases (offset by the center
        // element, matching the eigenvector phase convention).
        let center_phase = phases[20];
        let shifted: Vec<Complex64> =
            phases.iter().map(|&p| Complex64::from_polar(1.0, p - center_phase)).collect();
        let (_, oracle) = phase_fit(&shifted);
        assert!((curvature - oracle).abs() < 1e-6, "{curvature} vs {oracle}");
    }

    #[test]
    fn scan_peaks_at_m_for_exact_estimates() {
        let (r, theta) = (10.0, 1.2);
        let u1 = unit_steering(r, theta);
        let raw = correlation_scan(&u1, &geometry(), r, theta, 10f64.to_radians()).unwrap();
        let max = raw.iter().cloned().fold(0.0, f64::max);
        // |a^H (a / sqrt(M))|^2 = M at the centered offset.
        assert!((max - 41.0).abs() < 1e-9);
        let f = angle_features(&u1, &geometry(), r, theta, r, 10f64.to_radians(), SCALING).unwrap();
        assert!((f.peak_correlation - 1.0).abs() < 1e-10);
        assert_eq!(f.to_vec().len(), ANGLE_DIM);
    }

    #[test]
    fn scan_invariant_to_global_phase_on_u1() {
        let u1 = unit_steering(12.0, 0.9);
        let rotated: Vec<Complex64> =
            u1.iter().map(|z| z * Complex64::from_polar(1.0, 0.77)).collect();
        let a = correlation_scan(&u1, &geometry(), 12.0, 0.9, 0.2).unwrap();
        let b = correlation_scan(&rotated, &geometry(), 12.0, 0.9, 0.2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9 * x.max(1.0));
        }
    }

    #[test]
    fn scan_peak_tracks_true_offset() {
        // theta_m off the truth by up to 0.25 deg: the scan peak index
        // recovers the offset to within one scan step.
        let window = 10f64.to_radians();
        let step = window / SCAN_LEN as f64;
        for (i, &off_deg) in [-0.25f64, -0.1, 0.08, 0.22].iter().enumerate() {
            let theta = 1.0 + i as f64 * 0.2;
            let theta_m = theta - off_deg.to_radians();
            let u1 = unit_steering(14.0, theta);
            let raw = correlation_scan(&u1, &geometry(), 14.0, theta_m, window).unwrap();
            let peak = raw
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let measured = -window / 2.0 + peak as f64 * step;
            assert!(
                (measured - off_deg.to_radians()).abs() <= step + 1e-12,
                "offset {off_deg} deg: measured {measured}"
            );
        }
    }

    #[test]
    fn feature_vectors_serialize_round_trip() {
        let u1 = unit_steering(10.0, 1.0);
        let mut e = vec![0.001; 100];
        e[7] = 0.01;
        let f = range_features(&profile(e), 7, 10.4, 10.1, &u1, SCALING).unwrap();
        let json = serde_json::to_string(&f).unwrap();
        let back: RangeFeatures = serde_json::from_str(&json).unwrap();
        assert_eq!(f.to_vec(), back.to_vec());
    }
}
