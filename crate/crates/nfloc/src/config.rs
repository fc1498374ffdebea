//! Global configuration: one TOML document covering the radio setup,
//! scene statistics, search grids, training hyperparameters, and
//! dataset sizes. Defaults reproduce the reference simulation setup.

use serde::{Deserialize, Serialize};

use crate::features::FeatureScaling;
use crate::neural::{TrainConfig, WingLossParams};
use crate::scene::{ArrayGeometry, DelayGrid, LeakageMode};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayConfig {
    pub num_antennas: usize,
    pub carrier_freq_hz: f64,
    /// Element spacing as a fraction of the wavelength.
    pub spacing_wavelengths: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self { num_antennas: 41, carrier_freq_hz: 2.4e9, spacing_wavelengths: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalConfig {
    pub sample_period_s: f64,
    pub pilot_len: usize,
    /// One ZC root per user; must be pairwise coprime and coprime to
    /// the pilot length.
    pub pilot_roots: Vec<u64>,
    pub num_snapshots: usize,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self { sample_period_s: 5e-9, pilot_len: 256, pilot_roots: vec![1, 3, 5], num_snapshots: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub num_ues: usize,
    pub num_scatterers: usize,
    /// Scatterer absorption coefficient beta.
    pub absorption: f64,
    pub range_min_m: f64,
    pub range_max_m: f64,
    pub angle_min_deg: f64,
    pub angle_max_deg: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub leakage_mode: LeakageMode,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_ues: 3,
            num_scatterers: 5,
            absorption: 0.5,
            range_min_m: 5.0,
            range_max_m: 30.0,
            angle_min_deg: 0.0,
            angle_max_deg: 180.0,
            snr_min_db: -5.0,
            snr_max_db: 20.0,
            leakage_mode: LeakageMode::IntegerTap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Relative tap-energy threshold epsilon for LoS candidates.
    pub peak_threshold: f64,
    /// Confined-search range window Delta_r in meters.
    pub range_window_m: f64,
    /// Local angle window Delta_w in degrees (also the feature scan span).
    pub angle_window_deg: f64,
    pub confined_range_step_m: f64,
    pub full_range_step_m: f64,
    pub angle_step_deg: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            peak_threshold: 0.3,
            range_window_m: 8.0,
            angle_window_deg: 10.0,
            confined_range_step_m: 0.1,
            full_range_step_m: 0.5,
            angle_step_deg: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub dropout_rate: f64,
    pub wing_width: f64,
    pub wing_epsilon: f64,
    /// Tanh output scale of the range sub-network, meters.
    pub range_scale_m: f64,
    /// Tanh output scale of the angle sub-network, degrees.
    pub angle_scale_deg: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            lr_decay: 1.0,
            batch_size: 128,
            max_epochs: 200,
            early_stop_patience: 20,
            dropout_rate: 0.1,
            wing_width: 1.0,
            wing_epsilon: 0.05,
            range_scale_m: 1.5,
            angle_scale_deg: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub train_records: usize,
    pub val_records: usize,
    pub test_records: usize,
    pub base_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { train_records: 8000, val_records: 1200, test_records: 4000, base_seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    pub array: ArrayConfig,
    pub signal: SignalConfig,
    pub scene: SceneConfig,
    pub search: SearchConfig,
    pub training: TrainingConfig,
    pub dataset: DatasetConfig,
}

impl GlobalConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: GlobalConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfiguration(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_path(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfiguration(msg));
        if self.array.num_antennas < 2 {
            return fail(format!("need at least 2 antennas, got {}", self.array.num_antennas));
        }
        if self.array.carrier_freq_hz <= 0.0 || self.array.spacing_wavelengths <= 0.0 {
            return fail("carrier frequency and spacing must be positive".into());
        }
        if self.signal.sample_period_s <= 0.0 {
            return fail("sample period must be positive".into());
        }
        if self.signal.num_snapshots < 2 {
            return fail(format!(
                "need at least 2 snapshots for the subspace split, got {}",
                self.signal.num_snapshots
            ));
        }
        if self.scene.num_ues == 0 {
            return fail("need at least one user".into());
        }
        if self.signal.pilot_roots.len() < self.scene.num_ues {
            return fail(format!(
                "{} pilot roots for {} users",
                self.signal.pilot_roots.len(),
                self.scene.num_ues
            ));
        }
        if !(self.scene.range_min_m > 0.0 && self.scene.range_max_m > self.scene.range_min_m) {
            return fail(format!(
                "invalid range support [{}, {}]",
                self.scene.range_min_m, self.scene.range_max_m
            ));
        }
        if !(0.0..=1.0).contains(&self.scene.absorption) {
            return fail(format!("absorption must lie in [0, 1], got {}", self.scene.absorption));
        }
        if self.scene.angle_max_deg <= self.scene.angle_min_deg
            || self.scene.angle_min_deg < 0.0
            || self.scene.angle_max_deg > 180.0
        {
            return fail(format!(
                "invalid angle support [{}, {}] degrees",
                self.scene.angle_min_deg, self.scene.angle_max_deg
            ));
        }
        if self.scene.snr_max_db < self.scene.snr_min_db {
            return fail("snr_max_db below snr_min_db".into());
        }
        if !(0.0..1.0).contains(&self.search.peak_threshold) {
            return fail(format!(
                "peak threshold must lie in [0, 1), got {}",
                self.search.peak_threshold
            ));
        }
        if self.search.range_window_m <= 0.0
            || self.search.angle_window_deg <= 0.0
            || self.search.confined_range_step_m <= 0.0
            || self.search.full_range_step_m <= 0.0
            || self.search.angle_step_deg <= 0.0
        {
            return fail("search windows and grid steps must be positive".into());
        }
        if self.training.range_scale_m <= 0.0 || self.training.angle_scale_deg <= 0.0 {
            return fail("output scales must be positive".into());
        }
        WingLossParams::new(self.training.wing_width, self.training.wing_epsilon)?;
        if self.dataset.train_records == 0 || self.dataset.test_records == 0 {
            return fail("train and test splits must be nonempty".into());
        }
        Ok(())
    }

    pub fn geometry(&self) -> ArrayGeometry {
        let wavelength = crate::SPEED_OF_LIGHT / self.array.carrier_freq_hz;
        ArrayGeometry::new(
            self.array.num_antennas,
            self.array.carrier_freq_hz,
            self.array.spacing_wavelengths * wavelength,
        )
    }

    /// Delay grid capped at the pilot length: the circulant construction
    /// needs N >= L, and taps beyond N carry no scene energy as long as
    /// the range support fits (validated at scene build time).
    pub fn delay_grid(&self) -> DelayGrid {
        let mut grid =
            DelayGrid::new(self.signal.sample_period_s, self.geometry().rayleigh_distance());
        if grid.num_taps > self.signal.pilot_len {
            grid.num_taps = self.signal.pilot_len;
        }
        grid
    }

    pub fn feature_scaling(&self) -> FeatureScaling {
        FeatureScaling { range_min: self.scene.range_min_m, range_max: self.scene.range_max_m }
    }

    pub fn wing(&self) -> WingLossParams {
        WingLossParams::new(self.training.wing_width, self.training.wing_epsilon)
            .expect("validated")
    }

    pub fn angle_scale_rad(&self) -> f64 {
        self.training.angle_scale_deg.to_radians()
    }

    pub fn angle_window_rad(&self) -> f64 {
        self.search.angle_window_deg.to_radians()
    }

    pub fn angle_step_rad(&self) -> f64 {
        self.search.angle_step_deg.to_radians()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.training.learning_rate,
            lr_decay: self.training.lr_decay,
            batch_size: self.training.batch_size,
            max_epochs: self.training.max_epochs,
            early_stop_patience: self.training.early_stop_patience,
            dropout_rate: self.training.dropout_rate,
            hidden_dims: crate::neural::HIDDEN_DIMS.to_vec(),
            seed: self.training.seed,
        }
    }
}
