//! Zadoff-Chu pilot sequences, circulant pilot matrices, and the cyclic
//! correlation primitive behind channel estimation.
//!
//! Each user gets a length-N ZC sequence `x[n] = exp(-j pi z n^2 / N)`
//! with a distinct root `z`. For a root coprime with N the circulant
//! pilot matrix satisfies `(1/N) X X^H = I_L`, which turns correlation
//! at the receiver into a clean per-tap channel estimate.

use num_complex::Complex64;

use crate::mat::CMat;
use crate::{Error, Result};

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// ZC sequence of length `n` with root `z`.
///
/// The exponent `z n^2 / N` is reduced modulo `2N` in integer arithmetic
/// before touching floating point, so entries stay exact for large `n`.
pub fn zc_sequence(n: usize, z: u64) -> Result<Vec<Complex64>> {
    if n < 2 {
        return Err(Error::InvalidConfiguration(format!("ZC length must be >= 2, got {n}")));
    }
    if z == 0 || z as usize >= n {
        return Err(Error::InvalidConfiguration(format!(
            "ZC root must satisfy 1 <= z < N, got z={z}, N={n}"
        )));
    }
    let g = gcd(z, n as u64);
    if g != 1 {
        return Err(Error::InvalidRoot { root: z, len: n as u64, gcd: g });
    }
    let two_n = 2 * n as u128;
    Ok((0..n)
        .map(|i| {
            let i = i as u128;
            // phase = -pi * z * i^2 / N = -(2 pi) * (z i^2 mod 2N) / 2N
            let num = (z as u128 * i * i) % two_n;
            let phase = -std::f64::consts::PI * (num as f64) / (n as f64);
            Complex64::from_polar(1.0, phase)
        })
        .collect())
}

/// Pilot sequences for all users, one distinct root each.
#[derive(Debug, Clone)]
pub struct PilotSet {
    pub length: usize,
    pub roots: Vec<u64>,
    sequences: Vec<Vec<Complex64>>,
}

impl PilotSet {
    /// Builds the set, checking each root against N and the roots against
    /// each other (mutually coprime).
    pub fn new(length: usize, roots: &[u64]) -> Result<Self> {
        let sequences = roots
            .iter()
            .map(|&z| zc_sequence(length, z))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..roots.len() {
            for j in i + 1..roots.len() {
                let g = gcd(roots[i], roots[j]);
                if g != 1 {
                    return Err(Error::InvalidConfiguration(format!(
                        "pilot roots {} and {} share factor {g}; roots must be mutually coprime",
                        roots[i], roots[j]
                    )));
                }
            }
        }
        Ok(Self { length, roots: roots.to_vec(), sequences })
    }

    pub fn num_ues(&self) -> usize {
        self.sequences.len()
    }

    pub fn sequence(&self, k: usize) -> &[Complex64] {
        &self.sequences[k]
    }
}

/// L x N circulant pilot matrix: row `ell` is the sequence circularly
/// right-shifted by `ell` samples, i.e. entry `(ell, n)` is `x[(n-ell) mod N]`.
pub fn circulant_pilot_matrix(x: &[Complex64], l: usize) -> Result<CMat> {
    let n = x.len();
    if l > n {
        return Err(Error::InvalidConfiguration(format!(
            "circulant matrix with {l} rows needs a sequence of at least that length, got {n}"
        )));
    }
    let mut out = CMat::zeros(l, n);
    for ell in 0..l {
        for ni in 0..n {
            *out.at_mut(ell, ni) = x[(ni + n - ell) % n];
        }
    }
    Ok(out)
}

/// `(1/N) Y X^H` computed as L cyclic correlations of each receive row
/// against the pilot, without materializing the L x N circulant matrix.
pub fn cross_correlate(y: &CMat, x: &[Complex64], l: usize) -> CMat {
    let n = x.len();
    debug_assert_eq!(y.cols, n, "frame width must equal pilot length");
    let mut out = CMat::zeros(y.rows, l);
    let inv_n = 1.0 / n as f64;
    for m in 0..y.rows {
        let row = y.row(m);
        for ell in 0..l {
            let mut acc = Complex64::ZERO;
            // conj(x) shifted by ell, wrapped once instead of taking mod
            // per sample.
            let (tail, head) = x.split_at(n - ell);
            for (yv, xv) in row.iter().zip(head.iter().chain(tail.iter())) {
                acc += yv * xv.conj();
            }
            *out.at_mut(m, ell) = acc * inv_n;
        }
    }
    out
}
