//! Reproducible studies: FLOPs scaling, point-density uniformity, and the
//! per-component sync ablation. Each produces a [`BenchReport`] that can be
//! written as JSON and Markdown.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::depth::{DepthConvention, DepthCubemap};
use crate::diffusion::{ablation_arm, AblationConfig, ToyUNet, UNetConfig};
use crate::error::{invalid, Result};
use crate::geometry::{CubemapGrid, ErpGrid};
use crate::scene::{density_uniformity, lift_cubemap, lift_erp};
use crate::sync::{estimate_flops, SyncFlags, PLANES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    /// Exact and reproducible.
    Analytic,
    /// Depends on the run (timings, or trained-model statistics).
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub name: String,
    pub value: f64,
    pub kind: MeasurementKind,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub threads: usize,
    pub crate_version: String,
}

impl MachineInfo {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads: rayon::current_num_threads(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub study: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub machine: MachineInfo,
    pub measurements: Vec<Measurement>,
    /// Failed checks or inconclusive comparisons.
    pub flags: Vec<String>,
}

/// First 16 hex digits of the SHA-256 of the config's compact JSON.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&bytes).iter().take(8).map(|b| format!("{b:02x}")).collect())
}

impl BenchReport {
    fn new<T: Serialize>(study: &str, config: &T) -> Result<Self> {
        Ok(Self {
            study: study.into(),
            config: serde_json::to_value(config)?,
            config_hash: config_hash(config)?,
            machine: MachineInfo::current(),
            measurements: Vec::new(),
            flags: Vec::new(),
        })
    }

    /// Non-finite values have no JSON form; they become flags instead.
    fn push(&mut self, name: impl Into<String>, value: f64, kind: MeasurementKind) {
        let name = name.into();
        if !value.is_finite() {
            self.flags.push(format!("{name} is {value}"));
            return;
        }
        self.measurements.push(Measurement {
            name,
            value,
            kind,
            config_hash: self.config_hash.clone(),
        });
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.measurements.iter().find(|m| m.name == name).map(|m| m.value)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {}\n", self.study);
        let _ = writeln!(s, "config `{}` on {}/{} with {} thread(s), version {}\n", self.config_hash, self.machine.os, self.machine.arch, self.machine.threads, self.machine.crate_version);
        let _ = writeln!(s, "| measurement | value | kind |\n|---|---|---|");
        for m in &self.measurements {
            let kind = match m.kind {
                MeasurementKind::Analytic => "analytic",
                MeasurementKind::Measured => "measured",
            };
            let _ = writeln!(s, "| {} | {} | {kind} |", m.name, fmt_value(m.value));
        }
        if !self.flags.is_empty() {
            let _ = writeln!(s, "\n## Flags\n");
            for f in &self.flags {
                let _ = writeln!(s, "- {f}");
            }
        }
        let _ = writeln!(s, "\n```json\n{}\n```", serde_json::to_string_pretty(&self.config).unwrap_or_default());
        s
    }

    /// Writes `<study>.json` and `<study>.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join(format!("{}.json", self.study));
        let md = dir.join(format!("{}.md", self.study));
        std::fs::write(&json, serde_json::to_string_pretty(self)?)?;
        std::fs::write(&md, self.to_markdown())?;
        Ok((json, md))
    }
}

fn fmt_value(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.6}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsStudyConfig {
    pub sizes: Vec<usize>,
    pub batch: usize,
    pub unet: UNetConfig,
    /// Timed forward passes per configuration; 0 skips timing.
    pub latency_reps: usize,
    pub seed: u64,
}

impl Default for FlopsStudyConfig {
    fn default() -> Self {
        Self {
            sizes: vec![16, 32, 64],
            batch: 1,
            unet: UNetConfig::default(),
            latency_reps: 1,
            seed: 0,
        }
    }
}

/// Analytic FLOPs of the toy network with sync on and off at each face size,
/// plus informational forward-pass latency.
pub fn run_flops_study(config: &FlopsStudyConfig) -> Result<BenchReport> {
    let mut report = BenchReport::new("flops", config)?;
    let arch = config.unet.arch_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ToyUNet::new(config.unet, &mut rng)?;
    let b = config.batch as u64;
    for &h in &config.sizes {
        let hh = h as u64;
        let on = estimate_flops(&arch, b, PLANES as u64, hh, hh, SyncFlags::ALL)?;
        let off = estimate_flops(&arch, b, PLANES as u64, hh, hh, SyncFlags::NONE)?;
        let ratio = on.attention_quadratic as f64 / off.attention_quadratic as f64;
        report.push(format!("H{h}.sync.total"), on.total as f64, MeasurementKind::Analytic);
        report.push(format!("H{h}.nosync.total"), off.total as f64, MeasurementKind::Analytic);
        report.push(format!("H{h}.sync.attention_quadratic"), on.attention_quadratic as f64, MeasurementKind::Analytic);
        report.push(format!("H{h}.nosync.attention_quadratic"), off.attention_quadratic as f64, MeasurementKind::Analytic);
        report.push(format!("H{h}.attention_quadratic_ratio"), ratio, MeasurementKind::Analytic);
        report.push(format!("H{h}.conv"), on.conv as f64, MeasurementKind::Analytic);
        report.push(format!("H{h}.norm"), on.norm as f64, MeasurementKind::Analytic);
        report.push(format!("H{h}.sync.padding"), on.padding as f64, MeasurementKind::Analytic);
        report.push(format!("H{h}.total_increase"), on.total as f64 / off.total as f64 - 1.0, MeasurementKind::Analytic);
        if on.attention_quadratic != PLANES as u128 * off.attention_quadratic {
            report.flags.push(format!("H{h}: attention quadratic ratio {ratio} is not {PLANES}"));
        }
        if on.conv != off.conv || on.norm != off.norm || on.attention_projection != off.attention_projection {
            report.flags.push(format!("H{h}: conv/norm/projection FLOPs change with sync"));
        }
        if config.latency_reps > 0 {
            let x = vec![0.1; PLANES * crate::diffusion::INPUT_CHANNELS * h * h];
            let mut times = [0.0; 2];
            for (k, sync) in [SyncFlags::ALL, SyncFlags::NONE].into_iter().enumerate() {
                model.set_sync(sync);
                let t0 = Instant::now();
                for _ in 0..config.latency_reps {
                    std::hint::black_box(model.forward_sample(&x, 500, h)?);
                }
                times[k] = t0.elapsed().as_secs_f64() * 1e3 / config.latency_reps as f64;
            }
            report.push(format!("H{h}.sync.latency_ms"), times[0], MeasurementKind::Measured);
            report.push(format!("H{h}.nosync.latency_ms"), times[1], MeasurementKind::Measured);
            report.push(format!("H{h}.latency_ratio"), times[0] / times[1], MeasurementKind::Measured);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityStudyConfig {
    pub erp_height: usize,
    pub face_size: usize,
    pub k: usize,
}

impl Default for DensityStudyConfig {
    fn default() -> Self {
        Self {
            erp_height: 512,
            face_size: 256,
            k: 8,
        }
    }
}

/// Point-density uniformity of unit-depth lifts of an ERP image and a
/// cubemap.
pub fn run_density_study(config: &DensityStudyConfig) -> Result<BenchReport> {
    let mut report = BenchReport::new("density", config)?;
    let erp = lift_erp(&ErpGrid::zeros(config.erp_height, 3), &ErpGrid::from_direction_fn(config.erp_height, 1, |_, o| o[0] = 1.0))?;
    let n = config.face_size;
    // Unit Euclidean depth, expressed as Z-depth.
    let z = CubemapGrid::from_direction_fn(n, 1, |d, o| o[0] = d.x.abs().max(d.y.abs()).max(d.z.abs()));
    let cube = lift_cubemap(&CubemapGrid::zeros(n, 3), &DepthCubemap::new(z, DepthConvention::ZDepth)?)?;
    let e = density_uniformity(&erp, config.k)?;
    let c = density_uniformity(&cube, config.k)?;
    report.push("erp.points", erp.len() as f64, MeasurementKind::Analytic);
    report.push("cube.points", cube.len() as f64, MeasurementKind::Analytic);
    report.push("erp.cv_nn", e.cv_nn, MeasurementKind::Analytic);
    report.push("cube.cv_nn", c.cv_nn, MeasurementKind::Analytic);
    report.push("erp.pole_density", e.pole_density(), MeasurementKind::Analytic);
    report.push("cube.pole_density", c.pole_density(), MeasurementKind::Analytic);
    report.push("pole_density_ratio", e.pole_density() / c.pole_density(), MeasurementKind::Analytic);
    for (b, (x, y)) in e.band_profile.iter().zip(&c.band_profile).enumerate() {
        report.push(format!("band{b:02}.erp"), *x, MeasurementKind::Analytic);
        report.push(format!("band{b:02}.cube"), *y, MeasurementKind::Analytic);
    }
    if e.cv_nn <= c.cv_nn {
        report.flags.push("ERP lift is not less uniform than the cubemap lift".into());
    }
    Ok(report)
}

pub const ABLATION_VARIANTS: [(&str, SyncFlags); 5] = [
    ("all_sync", SyncFlags::ALL),
    ("no_sync_attention", SyncFlags { attention: false, conv: true, group_norm: true }),
    ("no_sync_conv", SyncFlags { attention: true, conv: false, group_norm: true }),
    ("no_sync_group_norm", SyncFlags { attention: true, conv: true, group_norm: false }),
    ("no_sync", SyncFlags::NONE),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationStudyConfig {
    pub ablation: AblationConfig,
    /// Seam differences below this fraction of the all-sync value are
    /// reported as inconclusive.
    pub min_relative_gap: f64,
}

impl Default for AblationStudyConfig {
    fn default() -> Self {
        Self {
            ablation: AblationConfig::default(),
            min_relative_gap: 0.01,
        }
    }
}

/// Train every sync variant with the same seed and budget; report sample
/// seam jumps and held-out loss.
pub fn run_ablation_study(config: &AblationStudyConfig, mut log: impl FnMut(&str)) -> Result<BenchReport> {
    if !(config.min_relative_gap >= 0.0) {
        return Err(invalid("min_relative_gap must be non-negative"));
    }
    let mut report = BenchReport::new("ablation", config)?;
    let mut base = None;
    for (name, sync) in ABLATION_VARIANTS {
        log(&format!("variant {name}"));
        let arm = ablation_arm(&config.ablation, sync, &mut log)?;
        report.push(format!("{name}.seam_mean"), arm.seam_mean, MeasurementKind::Measured);
        report.push(format!("{name}.seam_max"), arm.seam_max, MeasurementKind::Measured);
        report.push(format!("{name}.initial_loss"), arm.initial_loss, MeasurementKind::Measured);
        report.push(format!("{name}.final_loss"), arm.final_loss, MeasurementKind::Measured);
        report.push(format!("{name}.loss_decrease"), arm.loss_decrease, MeasurementKind::Measured);
        report.push(format!("{name}.train_seconds"), arm.train_seconds, MeasurementKind::Measured);
        match base {
            None => base = Some(arm.seam_mean),
            Some(b) => {
                let gap = (arm.seam_mean - b) / b;
                report.push(format!("{name}.seam_vs_all_sync"), gap, MeasurementKind::Measured);
                if gap <= 0.0 {
                    report.flags.push(format!("{name}: seams not worse than all-sync ({gap:+.4})"));
                } else if gap < config.min_relative_gap {
                    report.flags.push(format!("{name}: inconclusive, seam gap {gap:+.4} below {}", config.min_relative_gap));
                }
            }
        }
    }
    Ok(report)
}
