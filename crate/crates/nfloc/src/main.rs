//! Command-line front end: dataset generation, training, evaluation,
//! parameter sweeps, and debug dumps. Every command is deterministic
//! given its config and seed.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use nfloc::config::GlobalConfig;
use nfloc::estimator::{detect_los_tap, estimate_channel, parabolic_refine, tap_energy_profile};
use nfloc::features::correlation_scan;
use nfloc::neural::{load_model, save_model, train, ModelKind};
use nfloc::pilots::PilotSet;
use nfloc::pipeline::{
    draw_scatterers, evaluate, generate_dataset, localize_nfmr, records_from_jsonl,
    records_to_jsonl, run_trial, scatter_csv, training_pairs, GroupBy, LocalizationRecord,
    RmseReport,
};
use nfloc::scene::{PolarPoint, Scene};
use nfloc::subspace::{
    confined_range_window, eigen_decompose, extract_los_snapshots, music_peak, music_spectrum,
    MusicGrid,
};
use nfloc::{Error, Result};

#[derive(Parser)]
#[command(name = "nfloc", about = "Wideband near-field multi-user localization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Range,
    Angle,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AxisArg {
    Snr,
    PilotLen,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test record files and a manifest.
    GenDataset {
        /// TOML config; defaults reproduce the reference setup.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for train/val/test.jsonl and manifest.json.
        #[arg(long)]
        out: PathBuf,
        /// Override the trial count; splits keep the default 8000:1200:4000 proportions.
        #[arg(long)]
        trials: Option<u64>,
        /// Override the dataset base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one residual sub-network on a generated dataset.
    Train {
        /// Dataset directory produced by gen-dataset.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Model output path; the training log lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// RMSE report (and scatter data) over the test split.
    Eval {
        /// Dataset directory produced by gen-dataset.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        range_model: Option<PathBuf>,
        #[arg(long)]
        angle_model: Option<PathBuf>,
        /// RMSE CSV output path; scatter CSV lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate and evaluate the classical chain across one axis.
    Sweep {
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Axis values (SNR in dB, or pilot lengths).
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Trials per axis value.
        #[arg(long, default_value_t = 300)]
        trials: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one trial and dump intermediate products for inspection.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        dump_dir: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<GlobalConfig> {
    match path {
        Some(p) => GlobalConfig::from_toml_path(p),
        None => Ok(GlobalConfig::default()),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn cmd_gen_dataset(
    config: Option<PathBuf>,
    out: PathBuf,
    trials: Option<u64>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = load_config(&config)?;
    if let Some(seed) = seed {
        cfg.dataset.base_seed = seed;
    }
    if let Some(trials) = trials {
        // Keep the default split proportions at trial granularity.
        let k = cfg.scene.num_ues as u64;
        let train = (trials * 8000).div_ceil(13200).max(1);
        let val = (trials * 1200 / 13200).max(1);
        let test = trials.saturating_sub(train + val).max(1);
        cfg.dataset.train_records = (train * k) as usize;
        cfg.dataset.val_records = (val * k) as usize;
        cfg.dataset.test_records = (test * k) as usize;
    }
    let ds = generate_dataset(&cfg)?;
    write(&out.join("train.jsonl"), &records_to_jsonl(&ds.train)?)?;
    write(&out.join("val.jsonl"), &records_to_jsonl(&ds.val)?)?;
    write(&out.join("test.jsonl"), &records_to_jsonl(&ds.test)?)?;
    write(
        &out.join("manifest.json"),
        &serde_json::to_string_pretty(&ds.manifest).map_err(Error::from)?,
    )?;
    println!(
        "wrote {} train / {} val / {} test records ({} skipped, {} degenerate) to {}",
        ds.manifest.emitted.train,
        ds.manifest.emitted.val,
        ds.manifest.emitted.test,
        ds.manifest.skipped_no_signal,
        ds.manifest.degenerate_records,
        out.display()
    );
    Ok(())
}

fn read_manifest_config(dataset: &Path) -> Result<GlobalConfig> {
    let text = std::fs::read_to_string(dataset.join("manifest.json"))?;
    let manifest: serde_json::Value = serde_json::from_str(&text)?;
    let cfg = manifest
        .get("config")
        .ok_or_else(|| Error::InvalidConfiguration("manifest has no config echo".into()))?;
    serde_json::from_value(cfg.clone()).map_err(Error::from)
}

fn read_split(dataset: &Path, name: &str) -> Result<Vec<LocalizationRecord>> {
    records_from_jsonl(&std::fs::read_to_string(dataset.join(name))?)
}

fn cmd_train(dataset: PathBuf, kind: KindArg, out: PathBuf) -> Result<()> {
    let cfg = read_manifest_config(&dataset)?;
    let train_set = read_split(&dataset, "train.jsonl")?;
    let val_set = read_split(&dataset, "val.jsonl")?;
    let (model_kind, scale) = match kind {
        KindArg::Range => (ModelKind::Range, cfg.training.range_scale_m),
        KindArg::Angle => (ModelKind::Angle, cfg.angle_scale_rad()),
    };
    let train_pairs = training_pairs(&train_set, model_kind);
    let val_pairs = training_pairs(&val_set, model_kind);
    let (model, log) =
        train(&train_pairs, &val_pairs, model_kind, scale, cfg.wing(), &cfg.train_config())?;
    save_model(&model, &out)?;
    let log_path = out.with_extension("log.json");
    write(&log_path, &serde_json::to_string_pretty(&log).map_err(Error::from)?)?;
    let last = log.epochs.last().expect("at least one epoch");
    println!(
        "{} model: final train loss {:.6}, best val loss {:.6} at epoch {} ({} targets clamped)",
        model_kind, last.train_loss, log.best_val_loss, log.best_epoch, log.clamped_targets
    );
    Ok(())
}

fn cmd_eval(
    dataset: PathBuf,
    range_model: Option<PathBuf>,
    angle_model: Option<PathBuf>,
    out: PathBuf,
) -> Result<()> {
    let cfg = read_manifest_config(&dataset)?;
    let mut records = read_split(&dataset, "test.jsonl")?;
    match (&range_model, &angle_model) {
        (Some(rp), Some(ap)) => {
            let rm = load_model(rp, ModelKind::Range)?;
            let am = load_model(ap, ModelKind::Angle)?;
            for rec in &mut records {
                localize_nfmr(rec, &rm, &am, &cfg)?;
            }
        }
        (None, None) => {}
        _ => {
            return Err(Error::InvalidArgument(
                "provide both --range-model and --angle-model, or neither".into(),
            ))
        }
    }
    let report = evaluate(&records, GroupBy::SnrBin)?;
    write(&out, &report.to_csv())?;
    write(&out.with_extension("scatter.csv"), &scatter_csv(&records))?;
    println!(
        "evaluated {} records ({} degenerate); {} RMSE rows -> {}",
        report.total_records,
        report.degenerate_records,
        report.rows.len(),
        out.display()
    );
    Ok(())
}

fn cmd_sweep(
    axis: AxisArg,
    values: Vec<f64>,
    config: Option<PathBuf>,
    out: PathBuf,
    trials: u64,
    seed: Option<u64>,
) -> Result<()> {
    let base = load_config(&config)?;
    let base_seed = seed.unwrap_or(base.dataset.base_seed);
    let mut all_rows: Vec<nfloc::pipeline::RmseRow> = Vec::new();
    for &value in &values {
        let mut cfg = base.clone();
        match axis {
            AxisArg::Snr => {
                cfg.scene.snr_min_db = value;
                cfg.scene.snr_max_db = value;
            }
            AxisArg::PilotLen => {
                if value <= 0.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "pilot length must be a positive integer, got {value}"
                    )));
                }
                cfg.signal.pilot_len = value as usize;
            }
        }
        cfg.validate()?;
        let k = cfg.scene.num_ues;
        let pilots = PilotSet::new(cfg.signal.pilot_len, &cfg.signal.pilot_roots[..k])?;
        let scatterers = draw_scatterers(&cfg, base_seed);
        let mut records = Vec::new();
        for trial_id in 0..trials {
            records.extend(run_trial(&cfg, &pilots, &scatterers, trial_id, base_seed)?);
        }
        let group = match axis {
            AxisArg::Snr => GroupBy::SnrBin,
            AxisArg::PilotLen => GroupBy::PilotLen,
        };
        let report = evaluate(&records, group)?;
        all_rows.extend(report.rows);
    }
    let report = RmseReport {
        rows: all_rows,
        total_records: 0,
        degenerate_records: 0,
    };
    write(&out, &report.to_csv())?;
    println!("swept {} values x {} trials -> {}", values.len(), trials, out.display());
    Ok(())
}

fn cmd_simulate(config: Option<PathBuf>, seed: u64, dump_dir: PathBuf) -> Result<()> {
    let cfg = load_config(&config)?;
    cfg.validate()?;
    let k = cfg.scene.num_ues;
    let pilots = PilotSet::new(cfg.signal.pilot_len, &cfg.signal.pilot_roots[..k])?;
    let scatterers = draw_scatterers(&cfg, seed);

    // Rebuild the trial-0 scene the same way run_trial does, then dump
    // each stage.
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (cfg.scene.angle_min_deg.to_radians(), cfg.scene.angle_max_deg.to_radians());
    let ues: Vec<PolarPoint> = (0..k)
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
        scatterers,
        absorption: cfg.scene.absorption,
        leakage_mode: cfg.scene.leakage_mode,
    };
    let snapshots =
        scene.synthesize_snapshots(&pilots, cfg.signal.num_snapshots, snr_db, noise_seed)?;

    for ue in 0..k {
        let est = estimate_channel(&snapshots, &pilots, ue, scene.grid.num_taps)?;
        let profile = tap_energy_profile(&est, cfg.search.peak_threshold);
        let mut csv = String::from("tap,energy\n");
        for (ell, e) in profile.energies.iter().enumerate() {
            csv.push_str(&format!("{ell},{e}\n"));
        }
        write(&dump_dir.join(format!("profile_ue{ue}.csv")), &csv)?;

        let los_tap = detect_los_tap(&profile)?;
        let range_est = parabolic_refine(&profile, los_tap, &scene.grid);
        let snaps = extract_los_snapshots(&est, los_tap);
        let dec = match eigen_decompose(&snaps) {
            Ok(dec) => dec,
            Err(e) => {
                eprintln!("ue {ue}: {e}; skipping subspace dumps");
                continue;
            }
        };
        let mut csv = String::from("index,eigenvalue\n");
        for (i, lam) in dec.eigenvalues.iter().enumerate() {
            csv.push_str(&format!("{i},{lam}\n"));
        }
        write(&dump_dir.join(format!("eigenvalues_ue{ue}.csv")), &csv)?;

        let window = confined_range_window(
            range_est.parabolic,
            cfg.search.range_window_m,
            cfg.scene.range_min_m,
            cfg.scene.range_max_m,
        );
        let mut grid = MusicGrid::new(
            window,
            cfg.search.confined_range_step_m,
            (lo, hi),
            cfg.angle_step_rad(),
        );
        music_spectrum(&dec, &scene.geometry, &mut grid)?;
        let mut csv = String::from("range_m,angle_rad,spectrum\n");
        for i in 0..grid.num_range {
            for j in 0..grid.num_angle {
                csv.push_str(&format!(
                    "{},{},{}\n",
                    grid.range_at(i),
                    grid.angle_at(j),
                    grid.values[i * grid.num_angle + j]
                ));
            }
        }
        write(&dump_dir.join(format!("spectrum_ue{ue}.csv")), &csv)?;

        let (_, cs_angle) = music_peak(&grid);
        let scan = correlation_scan(
            &dec.signal_vector,
            &scene.geometry,
            range_est.parabolic,
            cs_angle,
            cfg.angle_window_rad(),
        )?;
        let mut csv = String::from("offset_index,correlation\n");
        for (i, c) in scan.iter().enumerate() {
            csv.push_str(&format!("{i},{c}\n"));
        }
        write(&dump_dir.join(format!("scan_ue{ue}.csv")), &csv)?;
    }
    println!("dumped {} users to {}", k, dump_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDataset { config, out, trials, seed } => {
            cmd_gen_dataset(config, out, trials, seed)
        }
        Command::Train { dataset, kind, out } => cmd_train(dataset, kind, out),
        Command::Eval { dataset, range_model, angle_model, out } => {
            cmd_eval(dataset, range_model, angle_model, out)
        }
        Command::Sweep { axis, values, config, out, trials, seed } => {
            cmd_sweep(axis, values, config, out, trials, seed)
        }
        Command::Simulate { config, seed, dump_dir } => cmd_simulate(config, seed, dump_dir),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are not usage errors.
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
