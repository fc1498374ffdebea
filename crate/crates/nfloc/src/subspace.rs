//! LoS covariance, snapshot-Gram eigendecomposition, and confined 2D
//! near-field MUSIC.
//!
//! With T snapshots the LoS sample covariance has rank at most T, so the
//! nonzero eigenpairs come from the T x T snapshot Gram matrix instead of
//! a full M x M solve. The dominant eigenvector spans the signal
//! subspace; the remaining ones form the noise subspace that MUSIC
//! projects steering vectors onto.

use num_complex::Complex64;

use crate::mat::{inner, norm_sqr, CMat};
use crate::scene::ArrayGeometry;
use crate::{scene, Error, Result};

/// Per-snapshot LoS array responses (column `los_tap` of each estimate).
#[derive(Debug, Clone)]
pub struct LosSnapshots {
    pub vectors: Vec<Vec<Complex64>>,
}

/// Eigenstructure of the LoS sample covariance.
#[derive(Debug, Clone)]
pub struct SubspaceDecomposition {
    pub covariance: CMat,
    /// Retained (nonzero) eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Dominant eigenvector, phase-normalized at the center element.
    pub signal_vector: Vec<Complex64>,
    /// Remaining eigenvectors; the MUSIC noise subspace.
    pub noise_basis: Vec<Vec<Complex64>>,
}

/// Rectangular (range, angle) search grid with the evaluated spectrum.
#[derive(Debug, Clone)]
pub struct MusicGrid {
    pub range_lo: f64,
    pub range_step: f64,
    pub num_range: usize,
    pub angle_lo: f64,
    pub angle_step: f64,
    pub num_angle: usize,
    /// Row-major, range index major; empty until evaluated.
    pub values: Vec<f64>,
}

impl MusicGrid {
    pub fn new(
        range_window: (f64, f64),
        range_step: f64,
        angle_window: (f64, f64),
        angle_step: f64,
    ) -> Self {
        let num_range = ((range_window.1 - range_window.0) / range_step + 1e-9) as usize + 1;
        let num_angle = ((angle_window.1 - angle_window.0) / angle_step + 1e-9) as usize + 1;
        Self {
            range_lo: range_window.0,
            range_step,
            num_range,
            angle_lo: angle_window.0,
            angle_step,
            num_angle,
            values: Vec::new(),
        }
    }

    pub fn range_at(&self, i: usize) -> f64 {
        self.range_lo + i as f64 * self.range_step
    }

    pub fn angle_at(&self, j: usize) -> f64 {
        self.angle_lo + j as f64 * self.angle_step
    }
}

/// Confined range window centered on the parabolic estimate, clamped
/// into `[r_min, r_max]` and shifted to fit if the center lies outside.
pub fn confined_range_window(
    parabolic: f64,
    window_width: f64,
    r_min: f64,
    r_max: f64,
) -> (f64, f64) {
    let half = window_width / 2.0;
    let center = parabolic.clamp(r_min + half, r_max - half);
    if r_max - r_min <= window_width {
        (r_min, r_max)
    } else {
        (center - half, center + half)
    }
}

/// Columns `los_tap` of every per-snapshot channel estimate.
pub fn extract_los_snapshots(
    est: &crate::estimator::EstimatedChannel,
    los_tap: usize,
) -> LosSnapshots {
    LosSnapshots {
        vectors: est.per_snapshot.iter().map(|h| h.column(los_tap)).collect(),
    }
}

/// Sample covariance `(1/T) sum_t h^t (h^t)^H`.
pub fn sample_covariance(snaps: &LosSnapshots) -> Result<CMat> {
    let t = snaps.vectors.len();
    if t < 2 {
        return Err(Error::InsufficientSnapshots(format!(
            "covariance needs T >= 2 snapshots, got {t}"
        )));
    }
    let m = snaps.vectors[0].len();
    let mut cov = CMat::zeros(m, m);
    for h in &snaps.vectors {
        for i in 0..m {
            for j in 0..m {
                *cov.at_mut(i, j) += h[i] * h[j].conj();
            }
        }
    }
    cov.scale(1.0 / t as f64);
    Ok(cov)
}

/// Jacobi eigensolver for a small Hermitian matrix. Returns eigenvalues
/// descending with eigenvectors as columns.
pub fn hermitian_eigen(a: &CMat) -> (Vec<f64>, CMat) {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut a = a.clone();
    let mut v = CMat::zeros(n, n);
    for i in 0..n {
        *v.at_mut(i, i) = Complex64::new(1.0, 0.0);
    }
    let frob = a.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..60 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a.at(p, q).norm_sqr();
            }
        }
        if off.sqrt() < 1e-14 * frob {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.at(p, q);
                let beta = apq.norm();
                if beta < 1e-300 {
                    continue;
                }
                let phi = apq.arg();
                let alpha = a.at(p, p).re;
                let gamma = a.at(q, q).re;
                let theta = 0.5 * (2.0 * beta).atan2(alpha - gamma);
                let (s, c) = theta.sin_cos();
                let e = Complex64::from_polar(1.0, -phi);
                // Right-multiply by the plane rotation J.
                for i in 0..n {
                    let aip = a.at(i, p);
                    let aiq = a.at(i, q);
                    *a.at_mut(i, p) = aip * c + aiq * (e * s);
                    *a.at_mut(i, q) = aip * (-s) + aiq * (e * c);
                    let vip = v.at(i, p);
                    let viq = v.at(i, q);
                    *v.at_mut(i, p) = vip * c + viq * (e * s);
                    *v.at_mut(i, q) = vip * (-s) + viq * (e * c);
                }
                // Left-multiply by J^H.
                let ec = e.conj();
                for j in 0..n {
                    let apj = a.at(p, j);
                    let aqj = a.at(q, j);
                    *a.at_mut(p, j) = apj * c + aqj * (ec * s);
                    *a.at_mut(q, j) = apj * (-s) + aqj * (ec * c);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.at(j, j).re.partial_cmp(&a.at(i, i).re).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a.at(i, i).re).collect();
    let mut vectors = CMat::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            *vectors.at_mut(row, col) = v.at(row, src);
        }
    }
    (eigenvalues, vectors)
}

/// Rotates `v` so its center element has zero phase. Eigenvectors are
/// only defined up to a unit-modulus scale; pinning the center element
/// makes the downstream phase-slope/curvature features reproducible.
pub fn normalize_center_phase(v: &mut [Complex64]) {
    let center = (v.len() - 1) / 2;
    let z = v[center];
    if z.norm() > 0.0 {
        let rot = Complex64::from_polar(1.0, -z.arg());
        for x in v.iter_mut() {
            *x *= rot;
        }
    }
}

/// Eigenpairs of the LoS covariance via the T x T snapshot Gram matrix.
///
/// With `A = [h^1 .. h^T] / sqrt(T)`, the Gram `G = A^H A` shares its
/// nonzero eigenvalues with `R = A A^H`, and `u_i = A v_i / sqrt(l_i)`.
/// Returns all T eigenvalues (descending) and the mapped, normalized
/// array-domain eigenvectors for the nonzero ones.
pub fn gram_eigenpairs(snaps: &LosSnapshots) -> (Vec<f64>, Vec<Vec<Complex64>>) {
    let t = snaps.vectors.len();
    let m = snaps.vectors[0].len();
    let mut gram = CMat::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            *gram.at_mut(i, j) = inner(&snaps.vectors[i], &snaps.vectors[j]) / t as f64;
        }
    }
    let (eigenvalues, v) = hermitian_eigen(&gram);
    let floor = eigenvalues.first().copied().unwrap_or(0.0).max(0.0) * 1e-12;
    let mut vectors = Vec::new();
    for (i, &lam) in eigenvalues.iter().enumerate() {
        if lam <= floor || lam <= 0.0 {
            break;
        }
        let scale = 1.0 / (lam * t as f64).sqrt();
        let mut u = vec![Complex64::ZERO; m];
        for (snap, row) in snaps.vectors.iter().enumerate() {
            let w = v.at(snap, i) * scale;
            for (ui, hi) in u.iter_mut().zip(row) {
                *ui += w * hi;
            }
        }
        normalize_center_phase(&mut u);
        vectors.push(u);
    }
    (eigenvalues, vectors)
}

/// Full decomposition with the signal/noise split MUSIC needs.
pub fn eigen_decompose(snaps: &LosSnapshots) -> Result<SubspaceDecomposition> {
    let t = snaps.vectors.len();
    if t < 2 {
        return Err(Error::InsufficientSnapshots(format!(
            "subspace split needs T >= 2 snapshots, got {t}"
        )));
    }
    if snaps.vectors.iter().all(|v| norm_sqr(v) == 0.0) {
        return Err(Error::NoSignal("all LoS snapshots are zero".into()));
    }
    let covariance = sample_covariance(snaps)?;
    let (eigenvalues, vectors) = gram_eigenpairs(snaps);
    let rank = vectors.len();
    if rank < 2 {
        return Err(Error::DegenerateSubspace(format!(
            "snapshot Gram matrix has numerical rank {rank}; no noise subspace"
        )));
    }
    let mut vectors = vectors;
    let signal_vector = vectors.remove(0);
    Ok(SubspaceDecomposition {
        covariance,
        eigenvalues: eigenvalues[..rank].to_vec(),
        signal_vector,
        noise_basis: vectors,
    })
}

/// Evaluates the MUSIC pseudospectrum `1 / ||U_n^H a(r, theta)||^2` over
/// the grid. The steering vector is not normalized; its squared norm M
/// is common to every grid point.
pub fn music_spectrum(
    dec: &SubspaceDecomposition,
    geometry: &ArrayGeometry,
    grid: &mut MusicGrid,
) -> Result<()> {
    if dec.noise_basis.is_empty() {
        return Err(Error::InsufficientSnapshots(
            "empty noise subspace; MUSIC needs at least 2 retained eigenvectors".into(),
        ));
    }
    let mut values = Vec::with_capacity(grid.num_range * grid.num_angle);
    for i in 0..grid.num_range {
        let r = grid.range_at(i);
        for j in 0..grid.num_angle {
            let theta = grid.angle_at(j);
            let a = scene::steering_vector(geometry, r, theta)?;
            let denom: f64 = dec.noise_basis.iter().map(|u| inner(u, &a).norm_sqr()).sum();
            values.push(1.0 / denom);
        }
    }
    grid.values = values;
    Ok(())
}

/// Argmax over the evaluated grid; ties break toward the smaller linear
/// index.
pub fn music_peak(grid: &MusicGrid) -> (f64, f64) {
    debug_assert_eq!(grid.values.len(), grid.num_range * grid.num_angle);
    let mut best = 0usize;
    for (idx, &v) in grid.values.iter().enumerate() {
        if v > grid.values[best] {
            best = idx;
        }
    }
    let i = best / grid.num_angle;
    let j = best % grid.num_angle;
    (grid.range_at(i), grid.angle_at(j))
}

/// Fallback angle estimate when the noise subspace is unavailable:
/// peak of `|a(r, theta)^H u|^2` over a uniform angle grid.
pub fn correlation_peak_angle(
    signal_vector: &[Complex64],
    geometry: &ArrayGeometry,
    range: f64,
    angle_step: f64,
) -> Result<f64> {
    let steps = (std::f64::consts::PI / angle_step) as usize + 1;
    let mut best = (0.0, f64::NEG_INFINITY);
    for j in 0..steps {
        let theta = (j as f64 * angle_step).min(std::f64::consts::PI);
        let a = scene::steering_vector(geometry, range, theta)?;
        let c = inner(&a, signal_vector).norm_sqr();
        if c > best.1 {
            best = (theta, c);
        }
    }
    Ok(best.0)
}
