//! Browser bindings for the localization chain: build a small multi-user
//! scene, run pilot correlation + LoS detection + parabolic refinement +
//! confined MUSIC, and hand the intermediate products to the page as JSON.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use nfloc::config::GlobalConfig;
use nfloc::estimator::{detect_los_tap, estimate_channel, parabolic_refine, tap_energy_profile};
use nfloc::pilots::PilotSet;
use nfloc::scene::{LeakageMode, PolarPoint, Scene};
use nfloc::subspace::{
    confined_range_window, eigen_decompose, extract_los_snapshots, music_peak, music_spectrum,
    MusicGrid,
};

/// Two background users plus `P = 5` scatterers shared by everyone; the
/// page controls the third user.
fn build_scene(range_m: f64, angle_deg: f64, seed: u64) -> Scene {
    let cfg = GlobalConfig::default();
    let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1);
    let mut next = move || {
        // splitmix64, enough to scatter the background geometry.
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        (z ^ (z >> 31)) as f64 / u64::MAX as f64
    };
    let mut draw = |lo: f64, hi: f64| lo + (hi - lo) * next();
    let mut ues = vec![PolarPoint { range: range_m, angle: angle_deg.to_radians() }];
    for _ in 0..2 {
        ues.push(PolarPoint {
            range: draw(5.0, 30.0),
            angle: draw(0.2, std::f64::consts::PI - 0.2),
        });
    }
    let scatterers = (0..5)
        .map(|_| PolarPoint { range: draw(5.0, 30.0), angle: draw(0.0, std::f64::consts::PI) })
        .collect();
    Scene {
        geometry: cfg.geometry(),
        grid: cfg.delay_grid(),
        ues,
        scatterers,
        absorption: cfg.scene.absorption,
        leakage_mode: LeakageMode::IntegerTap,
    }
}

struct Chain {
    scene: Scene,
    profile: nfloc::estimator::TapEnergyProfile,
    tap: usize,
    range_est: nfloc::estimator::RangeEstimate,
    decomposition: Option<nfloc::subspace::SubspaceDecomposition>,
}

fn run_chain(range_m: f64, angle_deg: f64, snr_db: f64, seed: u64) -> Result<Chain, String> {
    if !(5.0..=30.0).contains(&range_m) {
        return Err("range must be in [5, 30] m".into());
    }
    if !(0.0..=180.0).contains(&angle_deg) {
        return Err("angle must be in [0, 180] deg".into());
    }
    let scene = build_scene(range_m, angle_deg, seed);
    let pilots = PilotSet::new(256, &[1, 3, 5]).map_err(|e| e.to_string())?;
    let snaps =
        scene.synthesize_snapshots(&pilots, 4, snr_db, seed).map_err(|e| e.to_string())?;
    let est =
        estimate_channel(&snaps, &pilots, 0, scene.grid.num_taps).map_err(|e| e.to_string())?;
    let profile = tap_energy_profile(&est, 0.3);
    let tap = detect_los_tap(&profile).map_err(|e| e.to_string())?;
    let range_est = parabolic_refine(&profile, tap, &scene.grid);
    let los = extract_los_snapshots(&est, tap);
    let decomposition = eigen_decompose(&los).ok();
    Ok(Chain { scene, profile, tap, range_est, decomposition })
}

#[derive(Serialize)]
struct ProfileOut {
    energies: Vec<f64>,
    candidates: Vec<usize>,
    detected_tap: usize,
    true_tap: usize,
    tap_length_m: f64,
    coarse_range_m: f64,
    parabolic_range_m: f64,
    true_range_m: f64,
}

/// Operation 1: delay-tap energy profile with LoS detection and
/// parabolic range refinement.
#[wasm_bindgen]
pub fn tap_profile(range_m: f64, angle_deg: f64, snr_db: f64, seed: u64) -> String {
    match run_chain(range_m, angle_deg, snr_db, seed) {
        Err(e) => format!("{{\"error\":{:?}}}", e),
        Ok(chain) => serde_json::to_string(&ProfileOut {
            energies: chain.profile.energies.clone(),
            candidates: chain.profile.candidates(),
            detected_tap: chain.tap,
            true_tap: chain.scene.grid.tap_for_range(range_m),
            tap_length_m: chain.scene.grid.tap_length_m,
            coarse_range_m: chain.range_est.coarse,
            parabolic_range_m: chain.range_est.parabolic,
            true_range_m: range_m,
        })
        .unwrap(),
    }
}

#[derive(Serialize)]
struct HeatmapOut {
    range_axis: Vec<f64>,
    angle_axis_deg: Vec<f64>,
    /// Row-major, range index major, normalized to max 1.
    values: Vec<f64>,
    peak_range_m: f64,
    peak_angle_deg: f64,
    true_range_m: f64,
    true_angle_deg: f64,
}

/// Operation 2: confined 2D MUSIC spectrum around the parabolic range
/// estimate.
#[wasm_bindgen]
pub fn music_heatmap(range_m: f64, angle_deg: f64, snr_db: f64, seed: u64) -> String {
    let cfg = GlobalConfig::default();
    match run_chain(range_m, angle_deg, snr_db, seed) {
        Err(e) => format!("{{\"error\":{:?}}}", e),
        Ok(chain) => {
            let Some(dec) = chain.decomposition.as_ref() else {
                return "{\"error\":\"degenerate subspace (try a finite SNR)\"}".into();
            };
            let window = confined_range_window(
                chain.range_est.parabolic,
                cfg.search.range_window_m,
                cfg.scene.range_min_m,
                cfg.scene.range_max_m,
            );
            let angle_lo = (angle_deg.to_radians() - cfg.angle_window_rad() / 2.0).max(0.0);
            let angle_hi = (angle_lo + cfg.angle_window_rad()).min(std::f64::consts::PI);
            let mut grid = MusicGrid::new(
                window,
                cfg.search.confined_range_step_m,
                (angle_lo, angle_hi),
                cfg.angle_step_rad(),
            );
            if let Err(e) = music_spectrum(dec, &chain.scene.geometry, &mut grid) {
                return format!("{{\"error\":{:?}}}", e.to_string());
            }
            let (pr, pa) = music_peak(&grid);
            let max = grid.values.iter().cloned().fold(0.0_f64, f64::max).max(1e-300);
            serde_json::to_string(&HeatmapOut {
                range_axis: (0..grid.num_range).map(|i| grid.range_at(i)).collect(),
                angle_axis_deg: (0..grid.num_angle)
                    .map(|j| grid.angle_at(j).to_degrees())
                    .collect(),
                values: grid.values.iter().map(|v| v / max).collect(),
                peak_range_m: pr,
                peak_angle_deg: pa.to_degrees(),
                true_range_m: range_m,
                true_angle_deg: angle_deg,
            })
            .unwrap()
        }
    }
}

#[derive(Serialize)]
struct LocalizeOut {
    true_range_m: f64,
    true_angle_deg: f64,
    detected_tap: usize,
    tap_correct: bool,
    coarse_range_m: f64,
    parabolic_range_m: f64,
    music_range_m: Option<f64>,
    music_angle_deg: Option<f64>,
    range_error_m: f64,
    angle_error_deg: Option<f64>,
}

/// Operation 3: one-shot localization summary for the controlled user.
#[wasm_bindgen]
pub fn localize(range_m: f64, angle_deg: f64, snr_db: f64, seed: u64) -> String {
    let cfg = GlobalConfig::default();
    match run_chain(range_m, angle_deg, snr_db, seed) {
        Err(e) => format!("{{\"error\":{:?}}}", e),
        Ok(chain) => {
            let music = chain.decomposition.as_ref().and_then(|dec| {
                let window = confined_range_window(
                    chain.range_est.parabolic,
                    cfg.search.range_window_m,
                    cfg.scene.range_min_m,
                    cfg.scene.range_max_m,
                );
                let mut grid = MusicGrid::new(
                    window,
                    cfg.search.confined_range_step_m,
                    (0.0, std::f64::consts::PI),
                    cfg.angle_step_rad(),
                );
                music_spectrum(dec, &chain.scene.geometry, &mut grid).ok()?;
                Some(music_peak(&grid))
            });
            serde_json::to_string(&LocalizeOut {
                true_range_m: range_m,
                true_angle_deg: angle_deg,
                detected_tap: chain.tap,
                tap_correct: chain.tap == chain.scene.grid.tap_for_range(range_m),
                coarse_range_m: chain.range_est.coarse,
                parabolic_range_m: chain.range_est.parabolic,
                music_range_m: music.map(|(r, _)| r),
                music_angle_deg: music.map(|(_, a)| a.to_degrees()),
                range_error_m: (chain.range_est.parabolic - range_m).abs(),
                angle_error_deg: music.map(|(_, a)| (a.to_degrees() - angle_deg).abs()),
            })
            .unwrap()
        }
    }
}
