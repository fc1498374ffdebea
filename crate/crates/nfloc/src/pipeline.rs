//! End-to-end localization per user, dataset generation, and RMSE
//! evaluation.
//!
//! A trial draws K user positions and one SNR, synthesizes T noisy
//! pilot frames, and runs the classical chain for every user:
//! correlation channel estimate, LoS tap detection, parabolic range
//! refinement, subspace split, and both confined and full-grid MUSIC.
//! Records carry the features and residual targets the two
//! refinement networks train on, plus the dominant eigenvector so the
//! angle features can be rebuilt around the refined range at inference
//! time.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::GlobalConfig;
use crate::estimator::{detect_los_tap, estimate_channel, parabolic_refine, tap_energy_profile};
use crate::features::{angle_features, range_features};
use crate::neural::MlpModel;
use crate::pilots::PilotSet;
use crate::scene::{PolarPoint, Scene, SnapshotSet};
use crate::subspace::{
    confined_range_window, eigen_decompose, extract_los_snapshots, music_peak, music_spectrum,
    MusicGrid,
};
use crate::{Error, Result};

/// One localized user instance: truth, every estimate in the comparison
/// set, network inputs/targets, and bookkeeping flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub trial_id: u64,
    pub ue_id: usize,
    pub snr_db: f64,
    pub pilot_len: usize,
    pub true_range_m: f64,
    pub true_angle_rad: f64,
    pub los_tap: usize,
    pub true_los_tap: usize,
    pub los_tap_correct: bool,
    pub coarse_range_m: f64,
    pub parabolic_range_m: f64,
    /// Confined-search MUSIC estimates; absent when the subspace is
    /// degenerate.
    pub music_cs_range_m: Option<f64>,
    pub music_cs_angle_rad: Option<f64>,
    /// Full-grid MUSIC estimates.
    pub music_range_m: Option<f64>,
    pub music_angle_rad: Option<f64>,
    pub nfmr_range_m: Option<f64>,
    pub nfmr_angle_rad: Option<f64>,
    pub range_features: Option<Vec<f64>>,
    pub angle_features: Option<Vec<f64>>,
    /// Raw residuals (pre-clamp): `r - r_p` and `theta - theta_m`.
    pub range_residual_m: f64,
    pub angle_residual_rad: Option<f64>,
    /// Unit-scaled residual targets, clamped to (-0.999, 0.999).
    pub range_target: f64,
    pub angle_target: Option<f64>,
    pub degenerate_subspace: bool,
    pub nfmr_skipped: bool,
    /// Dominant eigenvector (center-phase normalized), split into real
    /// and imaginary parts so the angle scan can be re-evaluated from a
    /// stored record.
    pub signal_vector_re: Vec<f64>,
    pub signal_vector_im: Vec<f64>,
}

impl LocalizationRecord {
    pub fn signal_vector(&self) -> Vec<Complex64> {
        self.signal_vector_re
            .iter()
            .zip(&self.signal_vector_im)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect()
    }
}

fn clamp_target(residual: f64, scale: f64) -> f64 {
    (residual / scale).clamp(-0.999, 0.999)
}

/// Runs the classical chain for one user of a synthesized snapshot set.
///
/// A degenerate subspace is not an error: the record comes back flagged
/// with the MUSIC fields and features absent. No-signal errors
/// propagate.
pub fn localize_classical(
    scene: &Scene,
    snapshots: &SnapshotSet,
    pilots: &PilotSet,
    ue_index: usize,
    trial_id: u64,
    cfg: &GlobalConfig,
) -> Result<LocalizationRecord> {
    let ue = scene.ues[ue_index];
    let est = estimate_channel(snapshots, pilots, ue_index, scene.grid.num_taps)?;
    let profile = tap_energy_profile(&est, cfg.search.peak_threshold);
    let los_tap = detect_los_tap(&profile)?;
    let range_est = parabolic_refine(&profile, los_tap, &scene.grid);
    let true_los_tap = scene.grid.tap_for_range(ue.range);

    let los_snaps = extract_los_snapshots(&est, los_tap);
    let (r_min, r_max) = (cfg.scene.range_min_m, cfg.scene.range_max_m);
    let angle_support = (
        cfg.scene.angle_min_deg.to_radians(),
        cfg.scene.angle_max_deg.to_radians(),
    );

    let mut record = LocalizationRecord {
        trial_id,
        ue_id: ue_index,
        snr_db: snapshots.snr_db,
        pilot_len: pilots.length,
        true_range_m: ue.range,
        true_angle_rad: ue.angle,
        los_tap,
        true_los_tap,
        los_tap_correct: los_tap == true_los_tap,
        coarse_range_m: range_est.coarse,
        parabolic_range_m: range_est.parabolic,
        music_cs_range_m: None,
        music_cs_angle_rad: None,
        music_range_m: None,
        music_angle_rad: None,
        nfmr_range_m: None,
        nfmr_angle_rad: None,
        range_features: None,
        angle_features: None,
        range_residual_m: ue.range - range_est.parabolic,
        angle_residual_rad: None,
        range_target: clamp_target(ue.range - range_est.parabolic, cfg.training.range_scale_m),
        angle_target: None,
        degenerate_subspace: false,
        nfmr_skipped: false,
        signal_vector_re: Vec::new(),
        signal_vector_im: Vec::new(),
    };

    let dec = match eigen_decompose(&los_snaps) {
        Ok(dec) => dec,
        Err(Error::DegenerateSubspace(_)) => {
            record.degenerate_subspace = true;
            return Ok(record);
        }
        Err(e) => return Err(e),
    };

    // Confined search around the parabolic range.
    let window =
        confined_range_window(range_est.parabolic, cfg.search.range_window_m, r_min, r_max);
    let mut confined = MusicGrid::new(
        window,
        cfg.search.confined_range_step_m,
        angle_support,
        cfg.angle_step_rad(),
    );
    music_spectrum(&dec, &scene.geometry, &mut confined)?;
    let (cs_range, cs_angle) = music_peak(&confined);

    let mut full = MusicGrid::new(
        (r_min, r_max),
        cfg.search.full_range_step_m,
        angle_support,
        cfg.angle_step_rad(),
    );
    music_spectrum(&dec, &scene.geometry, &mut full)?;
    let (full_range, full_angle) = music_peak(&full);

    let scaling = cfg.feature_scaling();
    let f_r = range_features(
        &profile,
        los_tap,
        range_est.parabolic,
        cs_range,
        &dec.signal_vector,
        scaling,
    )?;
    // At feature-build time no refined range exists yet; the scan is
    // centered on the parabolic estimate.
    let f_a = angle_features(
        &dec.signal_vector,
        &scene.geometry,
        range_est.parabolic,
        cs_angle,
        cs_range,
        cfg.angle_window_rad(),
        scaling,
    )?;

    record.music_cs_range_m = Some(cs_range);
    record.music_cs_angle_rad = Some(cs_angle);
    record.music_range_m = Some(full_range);
    record.music_angle_rad = Some(full_angle);
    record.range_features = Some(f_r.to_vec());
    record.angle_features = Some(f_a.to_vec());
    record.angle_residual_rad = Some(ue.angle - cs_angle);
    record.angle_target = Some(clamp_target(ue.angle - cs_angle, cfg.angle_scale_rad()));
    record.signal_vector_re = dec.signal_vector.iter().map(|z| z.re).collect();
    record.signal_vector_im = dec.signal_vector.iter().map(|z| z.im).collect();
    Ok(record)
}

/// Applies the two refinement networks to a classical record.
///
/// The range correction comes first; the angle scan is then rebuilt
/// around the refined range before the angle correction is predicted.
/// Records without features (degenerate subspace) are skipped with a
/// flag.
pub fn localize_nfmr(
    record: &mut LocalizationRecord,
    range_model: &MlpModel,
    angle_model: &MlpModel,
    cfg: &GlobalConfig,
) -> Result<()> {
    let (Some(f_r), Some(cs_angle), Some(cs_range)) = (
        record.range_features.as_ref(),
        record.music_cs_angle_rad,
        record.music_cs_range_m,
    ) else {
        record.nfmr_skipped = true;
        return Ok(());
    };
    let refined_range = record.parabolic_range_m + range_model.predict(f_r)?;
    record.nfmr_range_m = Some(refined_range);

    let u1 = record.signal_vector();
    let f_a = angle_features(
        &u1,
        &cfg.geometry(),
        refined_range,
        cs_angle,
        cs_range,
        cfg.angle_window_rad(),
        cfg.feature_scaling(),
    )?;
    record.nfmr_angle_rad = Some(cs_angle + angle_model.predict(&f_a.to_vec())?);
    Ok(())
}

/// Scatterer set shared by every trial of a dataset, drawn uniformly
/// over the same support as the users.
pub fn draw_scatterers(cfg: &GlobalConfig, base_seed: u64) -> Vec<PolarPoint> {
    // Offset stream so trial 0 (seed base_seed) does not reuse it.
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed ^ 0x9e37_79b9_7f4a_7c15);
    let (lo, hi) = (cfg.scene.angle_min_deg.to_radians(), cfg.scene.angle_max_deg.to_radians());
    (0..cfg.scene.num_scatterers)
        .map(|_| PolarPoint {
            range: rng.gen_range(cfg.scene.range_min_m..cfg.scene.range_max_m),
            angle: rng.gen_range(lo..hi),
        })
        .collect()
}

/// Builds the scene and snapshots for one trial and localizes each user.
///
/// `NoSignal` on a user skips that record; other errors propagate.
pub fn run_trial(
    cfg: &GlobalConfig,
    pilots: &PilotSet,
    scatterers: &[PolarPoint],
    trial_id: u64,
    base_seed: u64,
) -> Result<Vec<LocalizationRecord>> {
    let seed = base_seed.wrapping_add(trial_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (cfg.scene.angle_min_deg.to_radians(), cfg.scene.angle_max_deg.to_radians());
    let ues: Vec<PolarPoint> = (0..cfg.scene.num_ues)
        .map(|_| PolarPoint {
            range: rng.gen_range(cfg.scene.range_min_m..cfg.scene.range_max_m),
            angle: rng.gen_range(lo..hi),
        })
        .collect();
    let snr_db = if cfg.scene.snr_max_db > cfg.scene.snr_min_db {
        rng.gen_range(cfg.scene.snr_min_db..cfg.scene.snr_max_db)
    } else {
        cfg.scene.snr_min_db
    };
    let noise_seed: u64 = rng.gen();

    let scene = Scene {
        geometry: cfg.geometry(),
        grid: cfg.delay_grid(),
        ues,
        scatterers: scatterers.to_vec(),
        absorption: cfg.scene.absorption,
        leakage_mode: cfg.scene.leakage_mode,
    };
    let snapshots =
        scene.synthesize_snapshots(pilots, cfg.signal.num_snapshots, snr_db, noise_seed)?;

    let mut records = Vec::with_capacity(scene.num_ues());
    for k in 0..scene.num_ues() {
        match localize_classical(&scene, &snapshots, pilots, k, trial_id, cfg) {
            Ok(rec) => records.push(rec),
            Err(Error::NoSignal(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(records)
}

/// Record counts per split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: GlobalConfig,
    pub base_seed: u64,
    pub scatterers: Vec<PolarPoint>,
    pub num_taps: usize,
    pub range_feature_dim: usize,
    pub angle_feature_dim: usize,
    /// Trial index ranges per split, `[start, end)`; splits are by
    /// trial so no channel realization leaks across them.
    pub train_trials: [u64; 2],
    pub val_trials: [u64; 2],
    pub test_trials: [u64; 2],
    pub requested: SplitCounts,
    pub emitted: SplitCounts,
    /// Records dropped for carrying no signal at all.
    pub skipped_no_signal: usize,
    pub degenerate_records: usize,
    /// How the published sample counts are interpreted.
    pub samples_note: String,
}

#[derive(Debug)]
pub struct Dataset {
    pub train: Vec<LocalizationRecord>,
    pub val: Vec<LocalizationRecord>,
    pub test: Vec<LocalizationRecord>,
    pub manifest: DatasetManifest,
}

fn div_ceil(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Generates the full train/val/test dataset. Deterministic in
/// `(config, base_seed)`; records are ordered by (trial, user).
pub fn generate_dataset(cfg: &GlobalConfig) -> Result<Dataset> {
    cfg.validate()?;
    let grid = cfg.delay_grid();
    if grid.tap_for_range(cfg.scene.range_max_m) >= grid.num_taps {
        return Err(Error::InvalidConfiguration(format!(
            "range support up to {} m needs more than the {} delay taps the pilot length allows",
            cfg.scene.range_max_m, grid.num_taps
        )));
    }
    let base_seed = cfg.dataset.base_seed;
    let k = cfg.scene.num_ues;
    let pilots = PilotSet::new(cfg.signal.pilot_len, &cfg.signal.pilot_roots[..k])?;
    let scatterers = draw_scatterers(cfg, base_seed);

    let train_trials = div_ceil(cfg.dataset.train_records, k) as u64;
    let val_trials = div_ceil(cfg.dataset.val_records, k) as u64;
    let test_trials = div_ceil(cfg.dataset.test_records, k) as u64;
    let total_trials = train_trials + val_trials + test_trials;

    let run = |trial_id: u64| run_trial(cfg, &pilots, &scatterers, trial_id, base_seed);

    #[cfg(feature = "parallel")]
    let per_trial: Vec<Result<Vec<LocalizationRecord>>> = {
        use rayon::prelude::*;
        (0..total_trials).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_trial: Vec<Result<Vec<LocalizationRecord>>> = (0..total_trials).map(run).collect();

    let mut skipped = 0usize;
    let mut degenerate = 0usize;
    let mut splits: [Vec<LocalizationRecord>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let quotas = [cfg.dataset.train_records, cfg.dataset.val_records, cfg.dataset.test_records];
    for (trial_id, result) in per_trial.into_iter().enumerate() {
        let records = result?;
        skipped += k - records.len();
        let split = if (trial_id as u64) < train_trials {
            0
        } else if (trial_id as u64) < train_trials + val_trials {
            1
        } else {
            2
        };
        for rec in records {
            if rec.degenerate_subspace {
                degenerate += 1;
            }
            if splits[split].len() < quotas[split] {
                splits[split].push(rec);
            }
        }
    }
    let [train, val, test] = splits;

    let manifest = DatasetManifest {
        config: cfg.clone(),
        base_seed,
        scatterers,
        num_taps: grid.num_taps,
        range_feature_dim: crate::features::RANGE_DIM,
        angle_feature_dim: crate::features::ANGLE_DIM,
        train_trials: [0, train_trials],
        val_trials: [train_trials, train_trials + val_trials],
        test_trials: [train_trials + val_trials, total_trials],
        requested: SplitCounts {
            train: cfg.dataset.train_records,
            val: cfg.dataset.val_records,
            test: cfg.dataset.test_records,
        },
        emitted: SplitCounts { train: train.len(), val: val.len(), test: test.len() },
        skipped_no_signal: skipped,
        degenerate_records: degenerate,
        samples_note: "sample counts denote records (one per user instance); splits are \
                       assigned at trial granularity and truncated to the requested sizes"
            .into(),
    };
    Ok(Dataset { train, val, test, manifest })
}

/// Serializes records as JSONL, one record per line, in stored order.
pub fn records_to_jsonl(records: &[LocalizationRecord]) -> Result<String> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<LocalizationRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Training pairs `(features, raw physical residual)` for one network
/// kind. Degenerate and skipped records are excluded.
pub fn training_pairs(
    records: &[LocalizationRecord],
    kind: crate::neural::ModelKind,
) -> Vec<(Vec<f64>, f64)> {
    records
        .iter()
        .filter_map(|rec| match kind {
            crate::neural::ModelKind::Range => {
                rec.range_features.as_ref().map(|f| (f.clone(), rec.range_residual_m))
            }
            crate::neural::ModelKind::Angle => match (&rec.angle_features, rec.angle_residual_rad)
            {
                (Some(f), Some(res)) => Some((f.clone(), res)),
                _ => None,
            },
        })
        .collect()
}

/// Grouping axis for RMSE reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    /// 5 dB SNR bins keyed by the lower bin edge.
    SnrBin,
    /// Pilot length N.
    PilotLen,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmseRow {
    pub method: String,
    pub param: String,
    pub group_key: String,
    pub group_value: f64,
    pub rmse: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmseReport {
    pub rows: Vec<RmseRow>,
    pub total_records: usize,
    pub degenerate_records: usize,
}

const SNR_BIN_WIDTH: f64 = 5.0;

fn group_of(rec: &LocalizationRecord, group: GroupBy) -> f64 {
    match group {
        GroupBy::SnrBin => (rec.snr_db / SNR_BIN_WIDTH).floor() * SNR_BIN_WIDTH,
        GroupBy::PilotLen => rec.pilot_len as f64,
    }
}

/// The (method, parameter, estimate) tuples a record contributes.
fn estimates(rec: &LocalizationRecord) -> Vec<(&'static str, &'static str, f64, f64)> {
    let mut out = vec![("Para-Int", "range", rec.parabolic_range_m, rec.true_range_m)];
    if let (Some(r), Some(a)) = (rec.music_range_m, rec.music_angle_rad) {
        out.push(("MUSIC", "range", r, rec.true_range_m));
        out.push(("MUSIC", "angle", a, rec.true_angle_rad));
    }
    if let (Some(r), Some(a)) = (rec.music_cs_range_m, rec.music_cs_angle_rad) {
        out.push(("MUSIC+CS", "range", r, rec.true_range_m));
        out.push(("MUSIC+CS", "angle", a, rec.true_angle_rad));
    }
    if let Some(r) = rec.nfmr_range_m {
        out.push(("NFMR-Net", "range", r, rec.true_range_m));
    }
    if let Some(a) = rec.nfmr_angle_rad {
        out.push(("NFMR-Net", "angle", a, rec.true_angle_rad));
    }
    out
}

/// Per-method, per-parameter RMSE grouped along the requested axis.
pub fn evaluate(records: &[LocalizationRecord], group: GroupBy) -> Result<RmseReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to evaluate".into()));
    }
    use std::collections::BTreeMap;
    // Keyed by (method, param, scaled group value) for deterministic order.
    let mut acc: BTreeMap<(String, String, i64), (f64, usize, f64)> = BTreeMap::new();
    for rec in records {
        let g = group_of(rec, group);
        for (method, param, est, truth) in estimates(rec) {
            let key = (method.to_string(), param.to_string(), (g * 1000.0).round() as i64);
            let entry = acc.entry(key).or_insert((0.0, 0, g));
            entry.0 += (est - truth).powi(2);
            entry.1 += 1;
        }
    }
    let group_key = match group {
        GroupBy::SnrBin => "snr_bin",
        GroupBy::PilotLen => "pilot_len",
    };
    let rows = acc
        .into_iter()
        .map(|((method, param, _), (sq, count, g))| RmseRow {
            method,
            param,
            group_key: group_key.to_string(),
            group_value: g,
            rmse: (sq / count as f64).sqrt(),
            count,
        })
        .collect();
    Ok(RmseReport {
        rows,
        total_records: records.len(),
        degenerate_records: records.iter().filter(|r| r.degenerate_subspace).count(),
    })
}

impl RmseReport {
    /// CSV with the fixed header `method,param,group_key,group_value,rmse,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,param,group_key,group_value,rmse,count\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.method, row.param, row.group_key, row.group_value, row.rmse, row.count
            ));
        }
        out
    }
}

/// Scatter data (estimate vs truth per method and parameter) as CSV.
pub fn scatter_csv(records: &[LocalizationRecord]) -> String {
    let mut out = String::from("method,param,trial_id,ue_id,truth,estimate\n");
    for rec in records {
        for (method, param, est, truth) in estimates(rec) {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                method, param, rec.trial_id, rec.ue_id, truth, est
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::ModelKind;
    use crate::scene::LeakageMode;

    fn desk_config() -> GlobalConfig {
        let mut cfg = GlobalConfig::default();
        cfg.dataset.train_records = 9;
        cfg.dataset.val_records = 3;
        cfg.dataset.test_records = 6;
        cfg.dataset.base_seed = 77;
        cfg
    }

    fn noiseless_single_ue_config() -> GlobalConfig {
        let mut cfg = GlobalConfig::default();
        cfg.scene.num_ues = 1;
        cfg.scene.num_scatterers = 0;
        cfg
    }

    fn classical_record(
        cfg: &GlobalConfig,
        r: f64,
        theta: f64,
        snr_db: f64,
        seed: u64,
    ) -> LocalizationRecord {
        let pilots = PilotSet::new(cfg.signal.pilot_len, &cfg.signal.pilot_roots[..1]).unwrap();
        let scene = Scene {
            geometry: cfg.geometry(),
            grid: cfg.delay_grid(),
            ues: vec![PolarPoint { range: r, angle: theta }],
            scatterers: vec![],
            absorption: cfg.scene.absorption,
            leakage_mode: cfg.scene.leakage_mode,
        };
        let snapshots = scene
            .synthesize_snapshots(&pilots, cfg.signal.num_snapshots, snr_db, seed)
            .unwrap();
        localize_classical(&scene, &snapshots, &pilots, 0, 0, cfg).unwrap()
    }

    #[test]
    fn noiseless_single_ue_hits_truth() {
        let cfg = noiseless_single_ue_config();
        // High SNR instead of exactly noiseless: a noise-free channel is
        // rank one and has no noise subspace.
        let rec = classical_record(&cfg, 12.4, 1.1, 80.0, 5);
        assert_eq!(rec.los_tap, cfg.delay_grid().tap_for_range(12.4));
        assert!(rec.los_tap_correct);
        let angle = rec.music_cs_angle_rad.unwrap();
        assert!(
            (angle - 1.1).abs() <= cfg.angle_step_rad(),
            "angle {angle} vs truth 1.1"
        );
        // Coarse range errs by at most one tap above the truth.
        assert!(rec.coarse_range_m >= 12.4 - 1e-9);
        assert!(rec.coarse_range_m - 12.4 < cfg.delay_grid().tap_length_m);
        assert_eq!(rec.range_features.as_ref().unwrap().len(), 14);
        assert_eq!(rec.angle_features.as_ref().unwrap().len(), 69);
    }

    #[test]
    fn record_determinism() {
        let cfg = noiseless_single_ue_config();
        let a = classical_record(&cfg, 17.0, 2.0, 10.0, 33);
        let b = classical_record(&cfg, 17.0, 2.0, 10.0, 33);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn three_user_los_taps_at_high_snr() {
        // K=3 users at distinct taps, SNR=20 dB: the LoS tap must be
        // found for the overwhelming majority of seeded trials.
        let cfg = GlobalConfig::default();
        let pilots = PilotSet::new(256, &cfg.signal.pilot_roots[..3]).unwrap();
        let mut correct = 0usize;
        let mut total = 0usize;
        let trials = 60;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ues: Vec<PolarPoint> = (0..3)
                .map(|_| PolarPoint {
                    range: rng.gen_range(5.0..30.0),
                    angle: rng.gen_range(0.2..2.9),
                })
                .collect();
            // Distinct taps only; same-tap collisions are genuinely
            // ambiguous for any detector.
            let grid = cfg.delay_grid();
            let mut taps: Vec<usize> = ues.iter().map(|u| grid.tap_for_range(u.range)).collect();
            taps.sort_unstable();
            taps.dedup();
            if taps.len() < 3 {
                continue;
            }
            let scene = Scene {
                geometry: cfg.geometry(),
                grid,
                ues,
                scatterers: vec![],
                absorption: 0.5,
                leakage_mode: LeakageMode::IntegerTap,
            };
            let snaps = scene.synthesize_snapshots(&pilots, 4, 20.0, seed ^ 0xabc).unwrap();
            for k in 0..3 {
                let est = estimate_channel(&snaps, &pilots, k, scene.grid.num_taps).unwrap();
                let profile = tap_energy_profile(&est, cfg.search.peak_threshold);
                let tap = detect_los_tap(&profile).unwrap();
                total += 1;
                if tap == scene.grid.tap_for_range(scene.ues[k].range) {
                    correct += 1;
                }
            }
        }
        let rate = correct as f64 / total as f64;
        assert!(rate >= 0.95, "LoS detection rate {rate} over {total} users");
    }

    #[test]
    fn nfmr_zero_weight_models_change_nothing() {
        let cfg = noiseless_single_ue_config();
        let mut rec = classical_record(&cfg, 14.2, 1.4, 15.0, 2);
        let wing = cfg.wing();
        let mut range_model = MlpModel::new(
            ModelKind::Range,
            &[14, 4, 1],
            0.0,
            cfg.training.range_scale_m,
            wing,
            0,
        );
        let mut angle_model =
            MlpModel::new(ModelKind::Angle, &[69, 4, 1], 0.0, cfg.angle_scale_rad(), wing, 0);
        for s in range_model.param_slices_mut() {
            s.fill(0.0);
        }
        for s in angle_model.param_slices_mut() {
            s.fill(0.0);
        }
        localize_nfmr(&mut rec, &range_model, &angle_model, &cfg).unwrap();
        assert_eq!(rec.nfmr_range_m.unwrap(), rec.parabolic_range_m);
        assert_eq!(rec.nfmr_angle_rad.unwrap(), rec.music_cs_angle_rad.unwrap());
    }

    #[test]
    fn nfmr_corrections_bounded_by_scales() {
        let cfg = noiseless_single_ue_config();
        let mut rec = classical_record(&cfg, 9.7, 0.8, 0.0, 11);
        let wing = cfg.wing();
        let range_model = MlpModel::new(
            ModelKind::Range,
            &[14, 8, 1],
            0.0,
            cfg.training.range_scale_m,
            wing,
            3,
        );
        let angle_model =
            MlpModel::new(ModelKind::Angle, &[69, 8, 1], 0.0, cfg.angle_scale_rad(), wing, 4);
        localize_nfmr(&mut rec, &range_model, &angle_model, &cfg).unwrap();
        assert!(
            (rec.nfmr_range_m.unwrap() - rec.parabolic_range_m).abs()
                < cfg.training.range_scale_m
        );
        assert!(
            (rec.nfmr_angle_rad.unwrap() - rec.music_cs_angle_rad.unwrap()).abs()
                < cfg.angle_scale_rad()
        );
    }

    #[test]
    fn nfmr_skips_records_without_features() {
        let cfg = noiseless_single_ue_config();
        let mut rec = classical_record(&cfg, 9.7, 0.8, 0.0, 11);
        rec.range_features = None;
        let wing = cfg.wing();
        let m1 = MlpModel::new(ModelKind::Range, &[14, 4, 1], 0.0, 1.5, wing, 0);
        let m2 = MlpModel::new(ModelKind::Angle, &[69, 4, 1], 0.0, 0.087, wing, 0);
        localize_nfmr(&mut rec, &m1, &m2, &cfg).unwrap();
        assert!(rec.nfmr_skipped);
        assert!(rec.nfmr_range_m.is_none());
    }

    #[test]
    fn dataset_counts_splits_and_determinism() {
        let cfg = desk_config();
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.manifest.emitted.train, ds.train.len());
        assert!(ds.train.len() <= 9 && ds.val.len() <= 3 && ds.test.len() <= 6);
        // Disjoint trial splits.
        let max_train = ds.train.iter().map(|r| r.trial_id).max().unwrap();
        let min_val = ds.val.iter().map(|r| r.trial_id).min().unwrap();
        let max_val = ds.val.iter().map(|r| r.trial_id).max().unwrap();
        let min_test = ds.test.iter().map(|r| r.trial_id).min().unwrap();
        assert!(max_train < min_val);
        assert!(max_val < min_test);
        // Canonical ordering.
        for split in [&ds.train, &ds.val, &ds.test] {
            let keys: Vec<(u64, usize)> = split.iter().map(|r| (r.trial_id, r.ue_id)).collect();
            let mut sorted = keys.clone();
            sorted.sort_unstable();
            assert_eq!(keys, sorted);
        }
        // Byte-identical regeneration.
        let ds2 = generate_dataset(&cfg).unwrap();
        assert_eq!(
            records_to_jsonl(&ds.train).unwrap(),
            records_to_jsonl(&ds2.train).unwrap()
        );
        assert_eq!(
            serde_json::to_string(&ds.manifest).unwrap(),
            serde_json::to_string(&ds2.manifest).unwrap()
        );
    }

    #[test]
    fn jsonl_round_trip_is_bit_exact() {
        let cfg = desk_config();
        let ds = generate_dataset(&cfg).unwrap();
        let text = records_to_jsonl(&ds.test).unwrap();
        let back = records_from_jsonl(&text).unwrap();
        assert_eq!(text, records_to_jsonl(&back).unwrap());
    }

    #[test]
    fn evaluate_matches_brute_force() {
        let cfg = desk_config();
        let ds = generate_dataset(&cfg).unwrap();
        let report = evaluate(&ds.test, GroupBy::SnrBin).unwrap();
        for row in &report.rows {
            // Brute-force recomputation from raw records.
            let mut sq = 0.0;
            let mut n = 0usize;
            for rec in &ds.test {
                if (rec.snr_db / 5.0).floor() * 5.0 != row.group_value {
                    continue;
                }
                for (method, param, est, truth) in estimates(rec) {
                    if method == row.method && param == row.param {
                        sq += (est - truth) * (est - truth);
                        n += 1;
                    }
                }
            }
            assert_eq!(n, row.count);
            assert!((row.rmse - (sq / n as f64).sqrt()).abs() < 1e-12);
        }
        let total: usize = report
            .rows
            .iter()
            .filter(|r| r.param == "range" && r.method == "Para-Int")
            .map(|r| r.count)
            .sum();
        assert_eq!(total, ds.test.len());
    }

    #[test]
    fn evaluate_constant_offset_rmse() {
        let cfg = noiseless_single_ue_config();
        let mut rec = classical_record(&cfg, 10.0, 1.0, 30.0, 1);
        rec.parabolic_range_m = rec.true_range_m + 0.75;
        rec.music_range_m = None;
        rec.music_angle_rad = None;
        rec.music_cs_range_m = None;
        rec.music_cs_angle_rad = None;
        let report = evaluate(&[rec], GroupBy::SnrBin).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.method, "Para-Int");
        assert!((row.rmse - 0.75).abs() < 1e-12);
    }

    #[test]
    fn training_pairs_exclude_degenerate_records() {
        let cfg = noiseless_single_ue_config();
        let mut rec = classical_record(&cfg, 10.0, 1.0, 30.0, 1);
        let good = training_pairs(std::slice::from_ref(&rec), ModelKind::Range).len();
        assert_eq!(good, 1);
        rec.range_features = None;
        rec.angle_features = None;
        assert!(training_pairs(std::slice::from_ref(&rec), ModelKind::Range).is_empty());
        assert!(training_pairs(std::slice::from_ref(&rec), ModelKind::Angle).is_empty());
    }

    #[test]
    fn pilot_shorter_than_range_support_is_refused() {
        let mut cfg = GlobalConfig::default();
        cfg.signal.pilot_len = 16; // caps the grid at 16 taps < tap(30 m)
        assert!(matches!(
            generate_dataset(&cfg),
            Err(Error::InvalidConfiguration(_))
        ));
    }

    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
}
