//! Per-user channel recovery, LoS tap detection, and parabolic range
//! refinement.
//!
//! Correlating each received frame with the user's pilot yields a noisy
//! M x L channel estimate per snapshot. Averaging tap energies over
//! snapshots and antennas gives the delay profile; the LoS tap is the
//! strongest local peak above a relative threshold, and a three-point
//! parabola around it supplies the sub-tap range correction.

use crate::mat::CMat;
use crate::pilots::{cross_correlate, PilotSet};
use crate::scene::{DelayGrid, SnapshotSet};
use crate::{Error, Result};

/// Per-snapshot channel estimates for one user.
#[derive(Debug, Clone)]
pub struct EstimatedChannel {
    pub per_snapshot: Vec<CMat>,
    pub ue_index: usize,
}

/// Snapshot- and antenna-averaged tap energies plus the peak threshold.
#[derive(Debug, Clone)]
pub struct TapEnergyProfile {
    pub energies: Vec<f64>,
    /// Relative threshold: candidates need `e >= threshold * max e`.
    pub threshold: f64,
}

/// Coarse and parabolic range estimates for one user.
#[derive(Debug, Clone, Copy)]
pub struct RangeEstimate {
    pub los_tap: usize,
    /// Fractional tap correction, clipped to [-0.5, 0.5].
    pub delta: f64,
    pub coarse: f64,
    pub parabolic: f64,
}

/// `H_hat^t = (1/N) Y^t X_k^H` for every snapshot.
pub fn estimate_channel(
    snapshots: &SnapshotSet,
    pilots: &PilotSet,
    ue_index: usize,
    num_taps: usize,
) -> Result<EstimatedChannel> {
    if ue_index >= pilots.num_ues() {
        return Err(Error::InvalidArgument(format!("ue index {ue_index} out of range")));
    }
    let x = pilots.sequence(ue_index);
    let per_snapshot = snapshots
        .frames
        .iter()
        .map(|frame| cross_correlate(frame, x, num_taps))
        .collect();
    Ok(EstimatedChannel { per_snapshot, ue_index })
}

/// Tap energy profile `e[ell] = (1/(T M)) sum_t ||H_hat^t[:, ell]||^2`.
pub fn tap_energy_profile(est: &EstimatedChannel, threshold: f64) -> TapEnergyProfile {
    let t = est.per_snapshot.len();
    let m = est.per_snapshot[0].rows;
    let l = est.per_snapshot[0].cols;
    let mut energies = vec![0.0; l];
    for h in &est.per_snapshot {
        for mi in 0..m {
            let row = h.row(mi);
            for (ell, v) in row.iter().enumerate() {
                energies[ell] += v.norm_sqr();
            }
        }
    }
    let scale = 1.0 / (t * m) as f64;
    for e in &mut energies {
        *e *= scale;
    }
    TapEnergyProfile { energies, threshold }
}

impl TapEnergyProfile {
    /// Indices that are local maxima (boundary taps compare only the
    /// existing neighbor) and reach the relative threshold.
    pub fn candidates(&self) -> Vec<usize> {
        let e = &self.energies;
        let max = e.iter().cloned().fold(0.0, f64::max);
        let floor = self.threshold * max;
        (0..e.len())
            .filter(|&ell| {
                let left_ok = ell == 0 || e[ell] >= e[ell - 1];
                let right_ok = ell == e.len() - 1 || e[ell] >= e[ell + 1];
                left_ok && right_ok && e[ell] >= floor
            })
            .collect()
    }
}

/// LoS tap: argmax over the candidate set; falls back to the global
/// argmax if no tap satisfies both peak conditions. Ties break to the
/// smaller index.
pub fn detect_los_tap(profile: &TapEnergyProfile) -> Result<usize> {
    let e = &profile.energies;
    if e.iter().all(|&v| v == 0.0) {
        return Err(Error::NoSignal("tap energy profile is all zero".into()));
    }
    let argmax = |indices: &mut dyn Iterator<Item = usize>| -> Option<usize> {
        indices.reduce(|best, ell| if e[ell] > e[best] { ell } else { best })
    };
    let candidates = profile.candidates();
    if let Some(best) = argmax(&mut candidates.into_iter()) {
        Ok(best)
    } else {
        Ok(argmax(&mut (0..e.len())).unwrap())
    }
}

/// Relative floor under which the parabola denominator counts as flat.
const DEGENERATE_DENOM: f64 = 1e-12;

/// Three-point parabolic refinement around the detected tap.
///
/// The vertex offset `delta = (a - c) / (2 (a - 2b + c))` is clipped to
/// [-0.5, 0.5]; edge taps and flat neighborhoods get `delta = 0`.
pub fn parabolic_refine(
    profile: &TapEnergyProfile,
    los_tap: usize,
    grid: &DelayGrid,
) -> RangeEstimate {
    let e = &profile.energies;
    let coarse = los_tap as f64 * grid.tap_length_m;
    let delta = if los_tap == 0 || los_tap + 1 >= e.len() {
        0.0
    } else {
        let (a, b, c) = (e[los_tap - 1], e[los_tap], e[los_tap + 1]);
        let den = a - 2.0 * b + c;
        let max = e.iter().cloned().fold(0.0, f64::max);
        if den.abs() < DEGENERATE_DENOM * max {
            0.0
        } else {
            (0.5 * (a - c) / den).clamp(-0.5, 0.5)
        }
    };
    RangeEstimate {
        los_tap,
        delta,
        coarse,
        parabolic: (los_tap as f64 + delta) * grid.tap_length_m,
    }
}
