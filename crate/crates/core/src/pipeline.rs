//! Configuration, orchestration, and provenance: the end-to-end pipeline
//! (synthetic inputs -> HI -> per-year downscaling -> SHAP -> ALE/H² ->
//! statistics), station validation, and the manifest graph that makes every
//! output reachable and every stage's inputs auditable.
//!
//! Stages hand data to each other through the filesystem only; every stage
//! writes a manifest recording the config hash, its seeds, and its input and
//! output paths (relative to the output directory, so reruns are comparable
//! byte for byte).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ale::{ale_1d, ale_2d, h2_interaction, select_strongest_pair, zero_crossing_isolines, InteractionScore};
use crate::downscale::{
    evaluate, make_training_table, predict_ensemble, train_year, DownscaleParams, EvalReport,
    SplitSpec,
};
use crate::grid::{
    align_stack, load_grid, save_grid, sidecar_path, FeatureStack, Grid,
    EXPLANATION_LAYERS, LCZ_PREFIX,
};
use crate::heat_index::{heat_index_grid, seasonal_mam_aggregate, MamMonth, MonthlyHiField, SeasonalMode};
use crate::shap::{
    compress_background, explain_region, fit_explainer, pairwise_joint_summary, rank_features, ShapMatrix,
};
use crate::stats::{block_bootstrap, ks_two_sample, linear_trend, significance_stars};
use crate::synth::{generate_synthetic_world, subseed, StationRecord, SyntheticWorldSpec};
use crate::tree::{DataMatrix, GbmParams, RfParams, TrainParams};

/// Environment variable overriding the parent of the configured output
/// directory.
pub const OUTPUT_ROOT_ENV: &str = "HEATLENS_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

/// A stage-labelled pipeline failure carrying its CLI exit code class.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: String,
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: &str, kind: ErrorKind, message: impl fmt::Display) -> Self {
        PipelineError {
            stage: stage.to_string(),
            kind,
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ErrorKind::Config => "config error",
            ErrorKind::Data => "data error",
            ErrorKind::Numeric => "numeric failure",
        };
        write!(f, "stage `{}` failed ({kind}): {}", self.stage, self.message)
    }
}

impl std::error::Error for PipelineError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    /// Generate all inputs from a synthetic world under `<out>/inputs/`.
    Synthetic { spec: SyntheticWorldSpec },
    /// Pre-existing grid files on disk.
    Files { years: Vec<YearInputs> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearInputs {
    pub year: i32,
    /// (month tag, path) pairs; tags parse as Mar/Apr/May.
    pub t_grids: Vec<(String, PathBuf)>,
    pub rh_grids: Vec<(String, PathBuf)>,
    pub stack: Vec<(String, PathBuf)>,
    #[serde(default)]
    pub stations: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectSpec {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

fn default_rf_trees() -> usize {
    150
}
fn default_explainer_trees() -> usize {
    150
}
fn default_explainer_msl() -> usize {
    8
}
fn default_oversample_quantile() -> f64 {
    0.90
}
fn default_oversample_fraction() -> f64 {
    0.30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    #[serde(default = "default_rf_trees")]
    pub rf_trees: usize,
    #[serde(default)]
    pub rf_min_samples_leaf: Option<usize>,
    #[serde(default = "default_oversample_quantile")]
    pub oversample_quantile: f64,
    #[serde(default = "default_oversample_fraction")]
    pub oversample_fraction: f64,
    #[serde(default = "default_explainer_trees")]
    pub explainer_trees: usize,
    #[serde(default = "default_explainer_msl")]
    pub explainer_min_samples_leaf: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            rf_trees: default_rf_trees(),
            rf_min_samples_leaf: None,
            oversample_quantile: default_oversample_quantile(),
            oversample_fraction: default_oversample_fraction(),
            explainer_trees: default_explainer_trees(),
            explainer_min_samples_leaf: default_explainer_msl(),
        }
    }
}

fn default_background_k() -> usize {
    64
}
fn default_chunk_size() -> usize {
    1024
}
fn default_joint_high() -> f64 {
    0.75
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    #[serde(default = "default_background_k")]
    pub background_k: usize,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    #[serde(default = "default_joint_high")]
    pub joint_high_quantile: f64,
    /// Urban-core rectangle used to split core vs ring cohorts; defaults to
    /// the centered half-size box.
    #[serde(default)]
    pub core_rect: Option<RectSpec>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            background_k: default_background_k(),
            chunk_size: default_chunk_size(),
            joint_high_quantile: default_joint_high(),
            core_rect: None,
        }
    }
}

fn default_bins_1d() -> usize {
    20
}
fn default_bins_2d() -> usize {
    10
}
fn default_h2_eval() -> usize {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AleConfig {
    #[serde(default = "default_bins_1d")]
    pub bins_1d: usize,
    #[serde(default = "default_bins_2d")]
    pub bins_2d: usize,
    #[serde(default = "default_h2_eval")]
    pub h2_eval_sample: usize,
}

impl Default for AleConfig {
    fn default() -> Self {
        AleConfig {
            bins_1d: default_bins_1d(),
            bins_2d: default_bins_2d(),
            h2_eval_sample: default_h2_eval(),
        }
    }
}

fn default_bootstrap_replicates() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsConfig {
    #[serde(default = "default_bootstrap_replicates")]
    pub bootstrap_replicates: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            bootstrap_replicates: default_bootstrap_replicates(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub input: InputSpec,
    #[serde(default = "default_hi_mode")]
    pub hi_mode: SeasonalMode,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub learners: LearnerConfig,
    #[serde(default)]
    pub explain: ExplainConfig,
    #[serde(default)]
    pub ale: AleConfig,
    #[serde(default)]
    pub stats: StatsConfig,
}

fn default_hi_mode() -> SeasonalMode {
    SeasonalMode::Mean
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let bytes = fs::read(path).map_err(|e| {
            PipelineError::new("config", ErrorKind::Config, format!("{}: {e}", path.display()))
        })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::new("config", ErrorKind::Config, e))
    }

    /// Output directory after applying the environment root override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var(OUTPUT_ROOT_ENV) {
            Ok(root) if !root.is_empty() => {
                let rel: PathBuf = self
                    .output_dir
                    .components()
                    .filter(|c| matches!(c, std::path::Component::Normal(_)))
                    .collect();
                PathBuf::from(root).join(rel)
            }
            _ => self.output_dir.clone(),
        }
    }

    /// The configuration with its output location normalized away, so the
    /// hash and the echoed manifests are invariant to where results land.
    fn canonical(&self) -> PipelineConfig {
        PipelineConfig {
            output_dir: PathBuf::new(),
            ..self.clone()
        }
    }

    /// Hash of the canonical JSON serialization, recorded in every manifest.
    /// The output directory is excluded: rerunning the same configuration
    /// into a different location must reproduce identical manifests.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.canonical()).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        format!("{:x}", hasher.finalize())
    }

    /// Structural invariants only (no filesystem access).
    pub fn validate_structure(&self) -> Result<(), PipelineError> {
        let cfg = |msg: String| PipelineError::new("config", ErrorKind::Config, msg);
        if !(0.0..1.0).contains(&self.split.train_fraction) || self.split.train_fraction == 0.0 {
            return Err(cfg(format!(
                "split.train_fraction {} outside (0,1)",
                self.split.train_fraction
            )));
        }
        if self.explain.background_k == 0 {
            return Err(cfg("explain.background_k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.explain.joint_high_quantile) {
            return Err(cfg("explain.joint_high_quantile outside [0,1]".into()));
        }
        match &self.input {
            InputSpec::Synthetic { spec } => {
                if spec.years.is_empty() {
                    return Err(cfg("synthetic input needs at least one year".into()));
                }
            }
            InputSpec::Files { years } => {
                if years.is_empty() {
                    return Err(cfg("file input needs at least one year".into()));
                }
            }
        }
        Ok(())
    }

    /// Structural validation plus existence of every referenced input path.
    /// Files that disappear after this point surface as stage-labelled data
    /// errors instead.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.validate_structure()?;
        let cfg = |msg: String| PipelineError::new("config", ErrorKind::Config, msg);
        if let InputSpec::Files { years } = &self.input {
            for y in years {
                for (_, p) in y.t_grids.iter().chain(&y.rh_grids).chain(&y.stack) {
                    if !p.exists() {
                        return Err(cfg(format!("input path does not exist: {}", p.display())));
                    }
                }
                if let Some(s) = &y.stations {
                    if !s.exists() {
                        return Err(cfg(format!("stations path does not exist: {}", s.display())));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn years(&self) -> Vec<i32> {
        match &self.input {
            InputSpec::Synthetic { spec } => spec.years.clone(),
            InputSpec::Files { years } => years.iter().map(|y| y.year).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_hash: String,
    pub tool_version: String,
    pub seeds: BTreeMap<String, u64>,
    pub params: serde_json::Value,
    /// Inputs: paths relative to the output directory, or `external:<path>`.
    pub inputs: Vec<String>,
    /// Outputs: paths relative to the output directory.
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RootManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Stage manifest paths, in execution order.
    pub stages: Vec<String>,
}

/// Collects the provenance of a running stage and writes its manifest.
struct StageRecorder<'a> {
    out_dir: &'a Path,
    manifest: StageManifest,
    manifest_rel: String,
}

impl<'a> StageRecorder<'a> {
    fn new(out_dir: &'a Path, stage: &str, config_hash: &str, manifest_rel: &str) -> Self {
        StageRecorder {
            out_dir,
            manifest: StageManifest {
                stage: stage.to_string(),
                config_hash: config_hash.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                seeds: BTreeMap::new(),
                params: serde_json::Value::Null,
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
            manifest_rel: manifest_rel.to_string(),
        }
    }

    fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.to_string(), value);
    }

    fn params(&mut self, value: serde_json::Value) {
        self.manifest.params = value;
    }

    fn input_rel(&mut self, rel: &str) {
        self.manifest.inputs.push(rel.to_string());
    }

    fn input_external(&mut self, path: &Path) {
        self.manifest.inputs.push(format!("external:{}", path.display()));
    }

    fn output_rel(&mut self, rel: &str) {
        self.manifest.outputs.push(rel.to_string());
    }

    /// Record a grid payload + sidecar pair as outputs.
    fn output_grid(&mut self, rel: &str) {
        self.output_rel(rel);
        let sidecar = sidecar_path(Path::new(rel));
        self.output_rel(&sidecar.to_string_lossy());
    }

    fn finish(mut self) -> Result<String, PipelineError> {
        self.manifest.inputs.sort();
        self.manifest.outputs.sort();
        let path = self.out_dir.join(&self.manifest_rel);
        write_json(&path, &self.manifest, &self.manifest.stage.clone())?;
        Ok(self.manifest_rel)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T, stage: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| PipelineError::new(stage, ErrorKind::Data, format!("{}: {e}", parent.display())))?;
    }
    let json = serde_json::to_vec_pretty(value)
        .map_err(|e| PipelineError::new(stage, ErrorKind::Numeric, e))?;
    fs::write(path, json)
        .map_err(|e| PipelineError::new(stage, ErrorKind::Data, format!("{}: {e}", path.display())))
}

fn save_grid_at(
    out_dir: &Path,
    rel: &str,
    grid: &Grid,
    stage: &str,
) -> Result<(), PipelineError> {
    let path = out_dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| PipelineError::new(stage, ErrorKind::Data, format!("{}: {e}", parent.display())))?;
    }
    save_grid(&path, grid, None)
        .map_err(|e| PipelineError::new(stage, ErrorKind::Data, format!("{rel}: {e}")))
}

fn load_grid_at(out_dir: &Path, rel: &str, stage: &str) -> Result<Grid, PipelineError> {
    load_grid(&out_dir.join(rel))
        .map(|(g, _)| g)
        .map_err(|e| PipelineError::new(stage, ErrorKind::Data, format!("{rel}: {e}")))
}

pub fn write_stations_csv(path: &Path, records: &[StationRecord]) -> std::io::Result<()> {
    let mut text = String::from("station_id,lat,lon,year,observed_hi\n");
    for r in records {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.station_id, r.lat, r.lon, r.year, r.observed_hi
        ));
    }
    fs::write(path, text)
}

pub fn read_stations_csv(path: &Path) -> Result<Vec<StationRecord>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(format!("line {} has {} fields, expected 5", lineno + 1, parts.len()));
        }
        out.push(StationRecord {
            station_id: parts[0].to_string(),
            lat: parts[1].trim().parse().map_err(|e| format!("line {}: {e}", lineno + 1))?,
            lon: parts[2].trim().parse().map_err(|e| format!("line {}: {e}", lineno + 1))?,
            year: parts[3].trim().parse().map_err(|e| format!("line {}: {e}", lineno + 1))?,
            observed_hi: parts[4].trim().parse().map_err(|e| format!("line {}: {e}", lineno + 1))?,
        });
    }
    Ok(out)
}

/// A station matched to the predicted grid cell containing it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedStation {
    pub station_id: String,
    pub lat: f64,
    pub lon: f64,
    pub year: i32,
    pub observed_hi: f64,
    pub predicted_hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub eval: EvalReport,
    pub n_paired: usize,
    pub n_skipped: usize,
}

/// Pair stations with the containing cell of their year's predicted grid.
/// Stations outside the footprint, with no grid for their year, or over
/// nodata cells are skipped and counted.
pub fn validate_stations(
    records: &[StationRecord],
    grids: &[(i32, Grid)],
) -> Result<(ValidationReport, Vec<PairedStation>), PipelineError> {
    let mut paired = Vec::new();
    let mut skipped = 0usize;
    for r in records {
        let Some((_, grid)) = grids.iter().find(|(y, _)| *y == r.year) else {
            skipped += 1;
            continue;
        };
        let Some(cell) = grid.header.cell_containing(r.lat, r.lon) else {
            skipped += 1;
            continue;
        };
        let value = grid.values()[cell];
        if value.is_nan() {
            skipped += 1;
            continue;
        }
        paired.push(PairedStation {
            station_id: r.station_id.clone(),
            lat: r.lat,
            lon: r.lon,
            year: r.year,
            observed_hi: r.observed_hi,
            predicted_hi: value,
        });
    }
    if paired.len() < 2 {
        return Err(PipelineError::new(
            "validate",
            ErrorKind::Data,
            format!("only {} pairable station records", paired.len()),
        ));
    }
    let pred: Vec<f64> = paired.iter().map(|p| p.predicted_hi).collect();
    let obs: Vec<f64> = paired.iter().map(|p| p.observed_hi).collect();
    let eval = evaluate(&pred, &obs)
        .map_err(|e| PipelineError::new("validate", ErrorKind::Numeric, e))?;
    Ok((
        ValidationReport {
            eval,
            n_paired: paired.len(),
            n_skipped: skipped,
        },
        paired,
    ))
}

pub fn write_paired_csv(path: &Path, paired: &[PairedStation]) -> std::io::Result<()> {
    let mut text = String::from("station_id,lat,lon,year,observed_hi,predicted_hi\n");
    for p in paired {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.station_id, p.lat, p.lon, p.year, p.observed_hi, p.predicted_hi
        ));
    }
    fs::write(path, text)
}

/// Greening/urban-form layer names present in a stack, in stack order.
pub fn explanation_layer_names(stack: &FeatureStack) -> Vec<String> {
    stack
        .names()
        .iter()
        .filter(|n| EXPLANATION_LAYERS.contains(&n.as_str()) || n.starts_with(LCZ_PREFIX))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub stages: Vec<String>,
}

/// Per-year file naming shared by the synth writer and the later stages.
fn month_tag(m: MamMonth) -> &'static str {
    match m {
        MamMonth::Mar => "mar",
        MamMonth::Apr => "apr",
        MamMonth::May => "may",
    }
}

struct YearPaths {
    year: i32,
    t_grids: Vec<(String, String)>,
    rh_grids: Vec<(String, String)>,
    stack: Vec<(String, String)>,
    stations: Option<String>,
}

/// How far to run the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StagePoint {
    Inputs,
    Hi,
    Downscale,
    Explain,
    Stats,
}

/// Write a generated synthetic world into `<out>/inputs/`, recording the
/// files in the given stage recorder. Returns the per-year path map the
/// later stages consume.
fn write_world_inputs(
    out_dir: &Path,
    world: &crate::synth::SyntheticWorld,
    rec: &mut StageRecorder,
) -> Result<Vec<YearPaths>, PipelineError> {
    write_json(&out_dir.join("inputs/truth.json"), &world.truth, "synth")?;
    rec.output_rel("inputs/truth.json");

    let mut paths = Vec::new();
    for year in &world.years {
        let ydir = format!("inputs/{}", year.year);
        let mut t_grids = Vec::new();
        let mut rh_grids = Vec::new();
        let mut stack_paths = Vec::new();
        for (month, t, rh) in &year.monthly_meteo {
            let tag = month_tag(*month);
            let t_rel = format!("{ydir}/t_{tag}.f32");
            let rh_rel = format!("{ydir}/rh_{tag}.f32");
            save_grid_at(out_dir, &t_rel, t, "synth")?;
            save_grid_at(out_dir, &rh_rel, rh, "synth")?;
            rec.output_grid(&t_rel);
            rec.output_grid(&rh_rel);
            t_grids.push((tag.to_string(), t_rel));
            rh_grids.push((tag.to_string(), rh_rel));
        }
        for (name, grid) in year.stack.layers() {
            let rel = format!("{ydir}/{name}.f32");
            save_grid_at(out_dir, &rel, grid, "synth")?;
            rec.output_grid(&rel);
            stack_paths.push((name.to_string(), rel));
        }
        let truth_rel = format!("{ydir}/hi_true.f32");
        save_grid_at(out_dir, &truth_rel, &year.hi_true, "synth")?;
        rec.output_grid(&truth_rel);
        let stations_rel = format!("{ydir}/stations.csv");
        write_stations_csv(&out_dir.join(&stations_rel), &year.stations)
            .map_err(|e| PipelineError::new("synth", ErrorKind::Data, e))?;
        rec.output_rel(&stations_rel);
        paths.push(YearPaths {
            year: year.year,
            t_grids,
            rh_grids,
            stack: stack_paths,
            stations: Some(stations_rel),
        });
    }
    Ok(paths)
}

/// Generate a synthetic world and write it in the pipeline input layout,
/// with its own manifest (the standalone `synth` CLI entry point).
pub fn write_synthetic_world(
    spec: &SyntheticWorldSpec,
    out_dir: &Path,
) -> Result<RunSummary, PipelineError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| PipelineError::new("synth", ErrorKind::Data, format!("{}: {e}", out_dir.display())))?;
    let spec_json = serde_json::to_string(spec)
        .map_err(|e| PipelineError::new("synth", ErrorKind::Config, e))?;
    let mut hasher = Sha256::new();
    hasher.update(spec_json.as_bytes());
    let hash = format!("{:x}", hasher.finalize());

    let mut rec = StageRecorder::new(out_dir, "synth", &hash, "inputs/manifest.json");
    rec.seed("world", spec.seed);
    rec.params(serde_json::to_value(spec).unwrap());
    let world = generate_synthetic_world(spec)
        .map_err(|e| PipelineError::new("synth", ErrorKind::Numeric, e))?;
    write_world_inputs(out_dir, &world, &mut rec)?;
    let manifest = rec.finish()?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        config_hash: hash,
        stages: vec![manifest],
    })
}

/// Execute the full pipeline. Every stage error is labelled with the stage
/// name and classified for the CLI exit code.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    run_pipeline_through(config, StagePoint::Stats)
}

/// Execute the pipeline up to and including `through`.
pub fn run_pipeline_through(
    config: &PipelineConfig,
    through: StagePoint,
) -> Result<RunSummary, PipelineError> {
    config.validate_structure()?;
    let out_dir = config.resolved_output_dir();
    fs::create_dir_all(&out_dir)
        .map_err(|e| PipelineError::new("setup", ErrorKind::Data, format!("{}: {e}", out_dir.display())))?;
    let config_hash = config.hash();
    let mut stage_manifests: Vec<String> = Vec::new();

    let finish_run = |stage_manifests: Vec<String>| -> Result<RunSummary, PipelineError> {
        let root = RootManifest {
            config_hash: config_hash.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: serde_json::to_value(config.canonical()).unwrap(),
            stages: stage_manifests.clone(),
        };
        write_json(&out_dir.join("manifest.json"), &root, "manifest")?;
        Ok(RunSummary {
            out_dir: out_dir.clone(),
            config_hash: config_hash.clone(),
            stages: stage_manifests,
        })
    };

    // ---- Stage: synth (or external file inputs) --------------------------
    let year_paths: Vec<YearPaths> = match &config.input {
        InputSpec::Synthetic { spec } => {
            let mut rec = StageRecorder::new(&out_dir, "synth", &config_hash, "inputs/manifest.json");
            rec.seed("world", spec.seed);
            rec.params(serde_json::to_value(spec).unwrap());
            let world = generate_synthetic_world(spec)
                .map_err(|e| PipelineError::new("synth", ErrorKind::Numeric, e))?;
            let paths = write_world_inputs(&out_dir, &world, &mut rec)?;
            stage_manifests.push(rec.finish()?);
            paths
        }
        InputSpec::Files { years } => years
            .iter()
            .map(|y| YearPaths {
                year: y.year,
                t_grids: y
                    .t_grids
                    .iter()
                    .map(|(tag, p)| (tag.clone(), format!("external:{}", p.display())))
                    .collect(),
                rh_grids: y
                    .rh_grids
                    .iter()
                    .map(|(tag, p)| (tag.clone(), format!("external:{}", p.display())))
                    .collect(),
                stack: y
                    .stack
                    .iter()
                    .map(|(name, p)| (name.clone(), format!("external:{}", p.display())))
                    .collect(),
                stations: y
                    .stations
                    .as_ref()
                    .map(|p| format!("external:{}", p.display())),
            })
            .collect(),
    };

    if through == StagePoint::Inputs {
        return finish_run(stage_manifests);
    }

    let resolve = |rel_or_ext: &str| -> PathBuf {
        match rel_or_ext.strip_prefix("external:") {
            Some(abs) => PathBuf::from(abs),
            None => out_dir.join(rel_or_ext),
        }
    };
    let record_input = |rec: &mut StageRecorder, rel_or_ext: &str| {
        match rel_or_ext.strip_prefix("external:") {
            Some(abs) => rec.input_external(Path::new(abs)),
            None => rec.input_rel(rel_or_ext),
        }
    };
    let record_input_grid = |rec: &mut StageRecorder, rel_or_ext: &str| {
        record_input(rec, rel_or_ext);
        if !rel_or_ext.starts_with("external:") {
            let sidecar = sidecar_path(Path::new(rel_or_ext));
            rec.input_rel(&sidecar.to_string_lossy());
        }
    };

    // ---- Stage: hi (per year) --------------------------------------------
    for yp in &year_paths {
        let stage = format!("hi:{}", yp.year);
        let mut rec = StageRecorder::new(
            &out_dir,
            &stage,
            &config_hash,
            &format!("hi/{}/manifest.json", yp.year),
        );
        rec.params(serde_json::json!({ "mode": config.hi_mode }));
        let mut fields = Vec::new();
        for ((t_tag, t_rel), (rh_tag, rh_rel)) in yp.t_grids.iter().zip(&yp.rh_grids) {
            record_input_grid(&mut rec, t_rel);
            record_input_grid(&mut rec, rh_rel);
            let month = MamMonth::parse(t_tag).ok_or_else(|| {
                PipelineError::new(&stage, ErrorKind::Config, format!("bad month tag `{t_tag}`"))
            })?;
            if MamMonth::parse(rh_tag) != Some(month) {
                return Err(PipelineError::new(
                    &stage,
                    ErrorKind::Config,
                    format!("month tags `{t_tag}` vs `{rh_tag}` do not line up"),
                ));
            }
            let (t, _) = load_grid(&resolve(t_rel))
                .map_err(|e| PipelineError::new(&stage, ErrorKind::Data, format!("{t_rel}: {e}")))?;
            let (rh, _) = load_grid(&resolve(rh_rel))
                .map_err(|e| PipelineError::new(&stage, ErrorKind::Data, format!("{rh_rel}: {e}")))?;
            let hi = heat_index_grid(&t, &rh)
                .map_err(|e| PipelineError::new(&stage, ErrorKind::Numeric, e))?;
            fields.push(MonthlyHiField {
                month,
                timestamp: format!("{}-{}", yp.year, t_tag),
                grid: hi,
            });
        }
        let seasonal = seasonal_mam_aggregate(&fields, config.hi_mode)
            .map_err(|e| PipelineError::new(&stage, ErrorKind::Numeric, e))?;
        let rel = format!("hi/{}/mam_hi.f32", yp.year);
        save_grid_at(&out_dir, &rel, &seasonal, &stage)?;
        rec.output_grid(&rel);
        stage_manifests.push(rec.finish()?);
    }

    if through == StagePoint::Hi {
        return finish_run(stage_manifests);
    }

    // ---- Stage: downscale (per year) --------------------------------------
    for yp in &year_paths {
        let stage = format!("downscale:{}", yp.year);
        let mut rec = StageRecorder::new(
            &out_dir,
            &stage,
            &config_hash,
            &format!("downscale/{}/manifest.json", yp.year),
        );
        let target_rel = format!("hi/{}/mam_hi.f32", yp.year);
        record_input_grid(&mut rec, &target_rel);
        let mut layers = Vec::new();
        for (name, rel) in &yp.stack {
            record_input_grid(&mut rec, rel);
            let (grid, _) = load_grid(&resolve(rel))
                .map_err(|e| PipelineError::new(&stage, ErrorKind::Data, format!("{rel}: {e}")))?;
            layers.push((name.clone(), grid));
        }
        let downscale_layers: Vec<(String, Grid)> = layers
            .iter()
            .filter(|(n, _)| crate::grid::DOWNSCALING_LAYERS.contains(&n.as_str()))
            .cloned()
            .collect();
        let stack = align_stack(downscale_layers)
            .map_err(|e| PipelineError::new(&stage, ErrorKind::Data, e))?;
        let target = load_grid_at(&out_dir, &target_rel, &stage)?;
        let table = make_training_table(&stack, &target)
            .map_err(|e| PipelineError::new(&stage, ErrorKind::Data, e))?;

        let params = year_downscale_params(config, yp.year);
        rec.seed("split", params.split.seed);
        rec.seed("rf", params.rf.train.seed);
        rec.seed("gbm", params.gbm.train.seed);
        rec.seed("oversample", params.oversample_seed);
        rec.params(serde_json::to_value(&params).unwrap());

        let (model, report) = train_year(&table, &params)
            .map_err(|e| PipelineError::new(&stage, ErrorKind::Numeric, e))?;
        let pred = predict_ensemble(&model, &stack)
            .map_err(|e| PipelineError::new(&stage, ErrorKind::Numeric, e))?;

        let pred_rel = format!("downscale/{}/pred.f32", yp.year);
        save_grid_at(&out_dir, &pred_rel, &pred, &stage)?;
        rec.output_grid(&pred_rel);
        let eval_rel = format!("downscale/{}/eval.json", yp.year);
        write_json(&out_dir.join(&eval_rel), &report.eval_ensemble, &stage)?;
        rec.output_rel(&eval_rel);
        let report_rel = format!("downscale/{}/train_report.json", yp.year);
        write_json(&out_dir.join(&report_rel), &report, &stage)?;
        rec.output_rel(&report_rel);
        stage_manifests.push(rec.finish()?);
    }

    if through == StagePoint::Downscale {
        return finish_run(stage_manifests);
    }

    // ---- Stage: explain ----------------------------------------------------
    let stage = "explain";
    let mut rec = StageRecorder::new(&out_dir, stage, &config_hash, "explain/manifest.json");
    let explainer_seed = subseed(config.seed, "explainer", 0);
    let background_seed = subseed(config.seed, "background", 0);
    rec.seed("explainer", explainer_seed);
    rec.seed("background", background_seed);
    rec.params(serde_json::json!({
        "background_k": config.explain.background_k,
        "chunk_size": config.explain.chunk_size,
        "joint_high_quantile": config.explain.joint_high_quantile,
        "explainer_trees": config.learners.explainer_trees,
        "explainer_min_samples_leaf": config.learners.explainer_min_samples_leaf,
        "ale": config.ale,
    }));

    // Pool the per-year greening tables with predicted HI as target.
    let mut greening_stacks: Vec<(i32, FeatureStack)> = Vec::new();
    let mut pred_grids: Vec<(i32, Grid)> = Vec::new();
    for yp in &year_paths {
        let mut layers = Vec::new();
        for (name, rel) in &yp.stack {
            if EXPLANATION_LAYERS.contains(&name.as_str()) || name.starts_with(LCZ_PREFIX) {
                record_input_grid(&mut rec, rel);
                let (grid, _) = load_grid(&resolve(rel)).map_err(|e| {
                    PipelineError::new(stage, ErrorKind::Data, format!("{rel}: {e}"))
                })?;
                layers.push((name.clone(), grid));
            }
        }
        let gstack = align_stack(layers)
            .map_err(|e| PipelineError::new(stage, ErrorKind::Data, e))?;
        let pred_rel = format!("downscale/{}/pred.f32", yp.year);
        record_input_grid(&mut rec, &pred_rel);
        let pred = load_grid_at(&out_dir, &pred_rel, stage)?;
        greening_stacks.push((yp.year, gstack));
        pred_grids.push((yp.year, pred));
    }

    let feature_names = explanation_layer_names(&greening_stacks[0].1);
    let mut pooled_rows: Vec<Vec<f64>> = Vec::new();
    let mut pooled_y: Vec<f64> = Vec::new();
    let mut per_year_tables: Vec<(i32, DataMatrix)> = Vec::new();
    for ((year, gstack), (_, pred)) in greening_stacks.iter().zip(&pred_grids) {
        let table = make_training_table(gstack, pred)
            .map_err(|e| PipelineError::new(stage, ErrorKind::Data, e))?;
        let mut rows = Vec::with_capacity(table.data.n_rows());
        for i in 0..table.data.n_rows() {
            rows.push(table.data.row_vec(i));
        }
        pooled_rows.extend(rows);
        pooled_y.extend_from_slice(&table.y);
        per_year_tables.push((*year, table.data));
    }
    let pooled = DataMatrix::from_rows(feature_names.clone(), &pooled_rows)
        .map_err(|e| PipelineError::new(stage, ErrorKind::Data, e))?;

    let explainer_params = RfParams {
        n_estimators: config.learners.explainer_trees,
        train: TrainParams {
            seed: explainer_seed,
            min_samples_leaf: config.learners.explainer_min_samples_leaf,
            ..TrainParams::default()
        },
        compute_oob: true,
    };
    let explainer = fit_explainer(&pooled, &pooled_y, &explainer_params)
        .map_err(|e| PipelineError::new(stage, ErrorKind::Numeric, e))?;
    let background = compress_background(&pooled, config.explain.background_k.min(pooled.n_rows()), background_seed)
        .map_err(|e| PipelineError::new(stage, ErrorKind::Numeric, e))?;
    write_json(&out_dir.join("explain/background.json"), &background, stage)?;
    rec.output_rel("explain/background.json");
    write_json(
        &out_dir.join("explain/explainer_provenance.json"),
        &serde_json::json!({
            "oob_r2": explainer.oob_r2,
            "n_estimators": explainer.n_estimators,
            "feature_names": explainer.feature_names,
            "seed": explainer_seed,
        }),
        stage,
    )?;
    rec.output_rel("explain/explainer_provenance.json");

    let greening_trio: Vec<(String, String)> = {
        let mut pairs = Vec::new();
        let trio: Vec<&String> = feature_names
            .iter()
            .filter(|n| ["EVI", "LAI", "FPAR"].contains(&n.as_str()))
            .collect();
        for i in 0..trio.len() {
            for j in i + 1..trio.len() {
                pairs.push((trio[i].clone(), trio[j].clone()));
            }
        }
        pairs
    };

    let mut shap_matrices: Vec<(i32, ShapMatrix)> = Vec::new();
    let mut h2_scores: Vec<InteractionScore> = Vec::new();
    for ((year, gstack), (_, table)) in greening_stacks.iter().zip(&per_year_tables) {
        let shap = explain_region(&explainer, gstack, &background, config.explain.chunk_size)
            .map_err(|e| PipelineError::new(stage, ErrorKind::Numeric, e))?;
        save_shap_planes(&out_dir, &format!("explain/{year}/shap"), &shap, stage, &mut rec)?;

        let ranks = rank_features(&shap);
        let rank_rel = format!("explain/{year}/rank.json");
        write_json(&out_dir.join(&rank_rel), &ranks, stage)?;
        rec.output_rel(&rank_rel);

        let mut pair_summaries = Vec::new();
        for (a, b) in &greening_trio {
            pair_summaries.push(
                pairwise_joint_summary(&shap, gstack, (a, b), config.explain.joint_high_quantile)
                    .map_err(|e| PipelineError::new(stage, ErrorKind::Numeric, e))?,
            );
        }
        let pairs_rel = format!("explain/{year}/pairs.json");
        write_json(&out_dir.join(&pairs_rel), &pair_summaries, stage)?;
        rec.output_rel(&pairs_rel);

        for (a, b) in &greening_trio {
            h2_scores.push(
                h2_interaction(&explainer, table, (a, b), config.ale.h2_eval_sample, *year)
                    .map_err(|e| PipelineError::new(stage, ErrorKind::Numeric, e))?,
            );
        }
        shap_matrices.push((*year, shap));
    }

    write_json(&out_dir.join("explain/ale/h2_scores.json"), &h2_scores, stage)?;
    rec.output_rel("explain/ale/h2_scores.json");
    let selection = select_strongest_pair(&h2_scores)
        .map_err(|e| PipelineError::new(stage, ErrorKind::Numeric, e))?;
    write_json(&out_dir.join("explain/ale/selection.json"), &selection, stage)?;
    rec.output_rel("explain/ale/selection.json");

    // Pooled ALE curves for each greening feature and the selected pair's
    // surface with its zero-crossing isolines.
    for feature in &feature_names {
        let curve = ale_1d(&explainer, &pooled, feature, config.ale.bins_1d)
            .map_err(|e| PipelineError::new(stage, ErrorKind::Numeric, e))?;
        let rel = format!("explain/ale/curve_{feature}.json");
        write_json(&out_dir.join(&rel), &curve, stage)?;
        rec.output_rel(&rel);
    }
    let surface = ale_2d(
        &explainer,
        &pooled,
        (&selection.selected.0, &selection.selected.1),
        config.ale.bins_2d,
    )
    .map_err(|e| PipelineError::new(stage, ErrorKind::Numeric, e))?;
    let isolines = zero_crossing_isolines(&surface);
    write_json(
        &out_dir.join("explain/ale/surface_selected.json"),
        &serde_json::json!({
            "surface": surface,
            "zero_isolines": isolines,
        }),
        stage,
    )?;
    rec.output_rel("explain/ale/surface_selected.json");
    stage_manifests.push(rec.finish()?);

    if through == StagePoint::Explain {
        return finish_run(stage_manifests);
    }

    // ---- Stage: stats ------------------------------------------------------
    let stage = "stats";
    let mut rec = StageRecorder::new(&out_dir, stage, &config_hash, "stats/manifest.json");
    let bootstrap_seed = subseed(config.seed, "bootstrap", 0);
    rec.seed("bootstrap", bootstrap_seed);
    rec.params(serde_json::json!({ "bootstrap_replicates": config.stats.bootstrap_replicates }));

    for (year, _) in &shap_matrices {
        for plane in shap_plane_rels(&out_dir, &format!("explain/{year}/shap"))? {
            rec.input_rel(&plane);
        }
        record_input_grid(&mut rec, &format!("downscale/{year}/pred.f32"));
        rec.input_rel(&format!("downscale/{year}/eval.json"));
    }

    // Core vs ring cohorts from the configured rectangle.
    let header = *greening_stacks[0].1.header();
    let core = config.explain.core_rect.unwrap_or(RectSpec {
        row0: header.rows / 4,
        col0: header.cols / 4,
        rows: header.rows / 2,
        cols: header.cols / 2,
    });
    let in_core = |idx: usize| {
        let r = idx / header.cols;
        let c = idx % header.cols;
        r >= core.row0 && r < core.row0 + core.rows && c >= core.col0 && c < core.col0 + core.cols
    };

    // KS between core and ring SHAP distributions, per greening feature.
    let mut ks_entries = Vec::new();
    for feature in &feature_names {
        let mut core_vals = Vec::new();
        let mut ring_vals = Vec::new();
        for (_, shap) in &shap_matrices {
            let j = shap
                .feature_index(feature)
                .map_err(|e| PipelineError::new(stage, ErrorKind::Numeric, e))?;
            for (row, &pix) in shap.pixel_indices.iter().enumerate() {
                let v = shap.phi_row(row)[j];
                if in_core(pix) {
                    core_vals.push(v);
                } else {
                    ring_vals.push(v);
                }
            }
        }
        let ks = ks_two_sample(&core_vals, &ring_vals)
            .map_err(|e| PipelineError::new(stage, ErrorKind::Numeric, e))?;
        ks_entries.push(serde_json::json!({
            "feature": feature,
            "group_a": "core",
            "group_b": "ring",
            "result": ks,
        }));
    }
    write_json(
        &out_dir.join("stats/ks.json"),
        &serde_json::json!({
            "comparisons": ks_entries,
            "n_comparisons": ks_entries.len(),
            "note": "no multiplicity adjustment applied",
        }),
        stage,
    )?;
    rec.output_rel("stats/ks.json");

    // Linear trend of the domain-mean predicted HI (needs >= 3 years).
    let mut years = Vec::new();
    let mut means = Vec::new();
    for (year, pred) in &pred_grids {
        years.push(*year);
        let vals: Vec<f64> = pred.valid_values().map(|(_, v)| v).collect();
        means.push(crate::numeric::mean(&vals));
    }
    if years.len() >= 3 {
        let trend = linear_trend(&years, &means)
            .map_err(|e| PipelineError::new(stage, ErrorKind::Numeric, e))?;
        write_json(
            &out_dir.join("stats/trends.json"),
            &serde_json::json!({
                "years": years,
                "mean_hi": means,
                "trend": trend,
                "stars": significance_stars(trend.p_value),
            }),
            stage,
        )?;
        rec.output_rel("stats/trends.json");
    }

    // Per-year effect sizes from the SHAP matrix and the ensemble skill.
    for (year, shap) in &shap_matrices {
        let eval_rel = format!("downscale/{year}/eval.json");
        let eval: EvalReport = serde_json::from_slice(
            &fs::read(out_dir.join(&eval_rel))
                .map_err(|e| PipelineError::new(stage, ErrorKind::Data, format!("{eval_rel}: {e}")))?,
        )
        .map_err(|e| PipelineError::new(stage, ErrorKind::Data, e))?;
        let effects = crate::stats::effect_sizes(shap, &shap.predictions, &eval)
            .map_err(|e| PipelineError::new(stage, ErrorKind::Numeric, e))?;
        let rel = format!("stats/effects_{year}.json");
        write_json(
            &out_dir.join(&rel),
            &serde_json::json!({
                "year": year,
                "numerator": "mean_abs_shap",
                "sd_hi": crate::numeric::pop_std(&shap.predictions),
                "rmse": eval.rmse,
                "effects": effects,
            }),
            stage,
        )?;
        rec.output_rel(&rel);
    }

    // Block bootstrap of the domain-mean predicted HI over (region, year).
    let mut records: Vec<((u8, i32), f64)> = Vec::new();
    for (year, pred) in &pred_grids {
        for (idx, v) in pred.valid_values() {
            records.push(((u8::from(in_core(idx)), *year), v));
        }
    }
    let bootstrap = block_bootstrap(
        &records,
        |r| r.0,
        |rows| crate::numeric::mean(&rows.iter().map(|r| r.1).collect::<Vec<_>>()),
        config.stats.bootstrap_replicates,
        bootstrap_seed,
    )
    .map_err(|e| PipelineError::new(stage, ErrorKind::Numeric, e))?;
    write_json(
        &out_dir.join("stats/bootstrap.json"),
        &serde_json::json!({
            "summary": "mean_predicted_hi",
            "blocks": "region x year",
            "n_blocks": bootstrap.n_blocks,
            "n_replicates": bootstrap.n_replicates,
            "point_estimate": bootstrap.point_estimate,
            "lo_2_5": bootstrap.lo_2_5,
            "hi_97_5": bootstrap.hi_97_5,
        }),
        stage,
    )?;
    rec.output_rel("stats/bootstrap.json");

    // Station validation when stations are available.
    let mut stations = Vec::new();
    for yp in &year_paths {
        if let Some(rel) = &yp.stations {
            record_input(&mut rec, rel);
            stations.extend(
                read_stations_csv(&resolve(rel))
                    .map_err(|e| PipelineError::new(stage, ErrorKind::Data, e))?,
            );
        }
    }
    if !stations.is_empty() {
        let (report, paired) = validate_stations(&stations, &pred_grids)?;
        write_json(&out_dir.join("stats/validation.json"), &report, stage)?;
        rec.output_rel("stats/validation.json");
        write_paired_csv(&out_dir.join("stats/validation_paired.csv"), &paired)
            .map_err(|e| PipelineError::new(stage, ErrorKind::Data, e))?;
        rec.output_rel("stats/validation_paired.csv");
    }
    stage_manifests.push(rec.finish()?);

    finish_run(stage_manifests)
}

fn year_downscale_params(config: &PipelineConfig, year: i32) -> DownscaleParams {
    DownscaleParams {
        split: config.split,
        rf: RfParams {
            n_estimators: config.learners.rf_trees,
            train: TrainParams {
                seed: subseed(config.seed, "rf", year),
                min_samples_leaf: config.learners.rf_min_samples_leaf.unwrap_or(1),
                ..TrainParams::default()
            },
            compute_oob: false,
        },
        gbm: GbmParams {
            train: TrainParams {
                seed: subseed(config.seed, "gbm", year),
                min_samples_leaf: 5,
                max_depth: Some(5),
                ..TrainParams::default()
            },
            ..GbmParams::default()
        },
        oversample_quantile: config.learners.oversample_quantile,
        oversample_fraction: config.learners.oversample_fraction,
        oversample_seed: subseed(config.seed, "oversample", year),
        year,
        season: "MAM".to_string(),
    }
}

/// Write a SHAP matrix as one float32 plane per feature plus a prediction
/// plane and a JSON metadata file, under the given path prefix.
pub fn save_shap_matrix(prefix: &Path, shap: &ShapMatrix) -> Result<(), String> {
    if let Some(parent) = prefix.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
        }
    }
    let header = shap.header;
    let mut plane = vec![f64::NAN; header.n_cells()];
    for (j, feature) in shap.feature_names.iter().enumerate() {
        plane.iter_mut().for_each(|v| *v = f64::NAN);
        for (row, &pix) in shap.pixel_indices.iter().enumerate() {
            plane[pix] = shap.phi_row(row)[j];
        }
        let grid = Grid::new(header, plane.clone(), "degC").map_err(|e| e.to_string())?;
        let path = PathBuf::from(format!("{}.{feature}.f32", prefix.display()));
        save_grid(&path, &grid, None).map_err(|e| e.to_string())?;
    }
    plane.iter_mut().for_each(|v| *v = f64::NAN);
    for (row, &pix) in shap.pixel_indices.iter().enumerate() {
        plane[pix] = shap.predictions[row];
    }
    let grid = Grid::new(header, plane, "degC").map_err(|e| e.to_string())?;
    let path = PathBuf::from(format!("{}.PRED.f32", prefix.display()));
    save_grid(&path, &grid, None).map_err(|e| e.to_string())?;

    let meta = serde_json::json!({
        "base_value": shap.base_value,
        "feature_names": shap.feature_names,
        "n_pixels": shap.n_pixels(),
        "efficiency_max_abs_error": shap.efficiency_max_abs_error,
    });
    let meta_path = PathBuf::from(format!("{}.json", prefix.display()));
    fs::write(&meta_path, serde_json::to_vec_pretty(&meta).map_err(|e| e.to_string())?)
        .map_err(|e| format!("{}: {e}", meta_path.display()))?;
    Ok(())
}

/// Pipeline-internal variant that also records the written files in the
/// stage manifest.
fn save_shap_planes(
    out_dir: &Path,
    prefix_rel: &str,
    shap: &ShapMatrix,
    stage: &str,
    rec: &mut StageRecorder,
) -> Result<(), PipelineError> {
    save_shap_matrix(&out_dir.join(prefix_rel), shap)
        .map_err(|e| PipelineError::new(stage, ErrorKind::Data, e))?;
    for feature in shap.feature_names.iter().map(String::as_str).chain(["PRED"]) {
        rec.output_grid(&format!("{prefix_rel}.{feature}.f32"));
    }
    rec.output_rel(&format!("{prefix_rel}.json"));
    Ok(())
}

fn shap_plane_rels(out_dir: &Path, prefix_rel: &str) -> Result<Vec<String>, PipelineError> {
    let meta_rel = format!("{prefix_rel}.json");
    let meta: serde_json::Value = serde_json::from_slice(
        &fs::read(out_dir.join(&meta_rel))
            .map_err(|e| PipelineError::new("stats", ErrorKind::Data, format!("{meta_rel}: {e}")))?,
    )
    .map_err(|e| PipelineError::new("stats", ErrorKind::Data, e))?;
    let mut rels = vec![meta_rel];
    if let Some(names) = meta["feature_names"].as_array() {
        for n in names {
            if let Some(name) = n.as_str() {
                rels.push(format!("{prefix_rel}.{name}.f32"));
                rels.push(format!("{prefix_rel}.{name}.json"));
            }
        }
    }
    rels.push(format!("{prefix_rel}.PRED.f32"));
    rels.push(format!("{prefix_rel}.PRED.json"));
    Ok(rels)
}

/// Load a SHAP matrix back from its planes (the CLI-facing reader).
pub fn load_shap_matrix(prefix: &Path) -> Result<ShapMatrix, String> {
    let meta_path = PathBuf::from(format!("{}.json", prefix.display()));
    let meta: serde_json::Value = serde_json::from_slice(
        &fs::read(&meta_path).map_err(|e| format!("{}: {e}", meta_path.display()))?,
    )
    .map_err(|e| e.to_string())?;
    let feature_names: Vec<String> = meta["feature_names"]
        .as_array()
        .ok_or("metadata missing feature_names")?
        .iter()
        .filter_map(|v| v.as_str().map(str::to_string))
        .collect();
    let base_value = meta["base_value"].as_f64().ok_or("metadata missing base_value")?;
    let efficiency = meta["efficiency_max_abs_error"].as_f64().unwrap_or(0.0);

    let pred_path = PathBuf::from(format!("{}.PRED.f32", prefix.display()));
    let (pred_grid, _) = load_grid(&pred_path).map_err(|e| e.to_string())?;
    let pixel_indices: Vec<usize> = pred_grid.valid_values().map(|(i, _)| i).collect();
    let predictions: Vec<f64> = pred_grid.valid_values().map(|(_, v)| v).collect();

    let mut columns = Vec::new();
    for name in &feature_names {
        let path = PathBuf::from(format!("{}.{}.f32", prefix.display(), name));
        let (grid, _) = load_grid(&path).map_err(|e| e.to_string())?;
        let col: Vec<f64> = pixel_indices.iter().map(|&i| grid.values()[i]).collect();
        columns.push(col);
    }
    let mut phi = Vec::with_capacity(pixel_indices.len() * feature_names.len());
    for row in 0..pixel_indices.len() {
        for col in &columns {
            phi.push(col[row]);
        }
    }
    Ok(ShapMatrix {
        base_value,
        phi,
        predictions,
        feature_names,
        pixel_indices,
        header: pred_grid.header,
        efficiency_max_abs_error: efficiency,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub n_stage_manifests: usize,
    pub n_files: usize,
}

/// Verify the manifest graph of a pipeline output directory: every file is an
/// output of exactly one stage manifest, and every stage's inputs are either
/// external or outputs of an earlier stage.
pub fn audit_manifests(out_dir: &Path) -> Result<AuditReport, String> {
    let root: RootManifest = serde_json::from_slice(
        &fs::read(out_dir.join("manifest.json")).map_err(|e| format!("manifest.json: {e}"))?,
    )
    .map_err(|e| e.to_string())?;

    let mut manifest_paths: Vec<String> = vec!["manifest.json".to_string()];
    let mut produced: BTreeMap<String, String> = BTreeMap::new();
    let mut earlier_outputs: std::collections::BTreeSet<String> = Default::default();

    for stage_rel in &root.stages {
        manifest_paths.push(stage_rel.clone());
        let manifest: StageManifest = serde_json::from_slice(
            &fs::read(out_dir.join(stage_rel)).map_err(|e| format!("{stage_rel}: {e}"))?,
        )
        .map_err(|e| format!("{stage_rel}: {e}"))?;
        if manifest.config_hash != root.config_hash {
            return Err(format!("{stage_rel}: config hash differs from root"));
        }
        for input in &manifest.inputs {
            if input.starts_with("external:") {
                continue;
            }
            if !earlier_outputs.contains(input) {
                return Err(format!(
                    "stage `{}` consumes `{input}` which no earlier stage produced",
                    manifest.stage
                ));
            }
        }
        for output in &manifest.outputs {
            if let Some(owner) = produced.insert(output.clone(), manifest.stage.clone()) {
                return Err(format!(
                    "`{output}` produced by both `{owner}` and `{}`",
                    manifest.stage
                ));
            }
            earlier_outputs.insert(output.clone());
        }
    }

    // Every file on disk must be a manifest or a recorded output.
    let mut files = Vec::new();
    collect_files(out_dir, out_dir, &mut files).map_err(|e| e.to_string())?;
    for rel in &files {
        if manifest_paths.iter().any(|m| m == rel) {
            continue;
        }
        if !produced.contains_key(rel) {
            return Err(format!("`{rel}` on disk is not reachable from any manifest"));
        }
    }
    for rel in produced.keys() {
        if !files.contains(rel) {
            return Err(format!("manifest lists `{rel}` but it does not exist"));
        }
    }

    Ok(AuditReport {
        n_stage_manifests: root.stages.len(),
        n_files: files.len(),
    })
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("walked under root")
                .to_string_lossy()
                .replace('\\', "/");
            out.push(rel);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridHeader;

    fn tiny_config(dir: &Path) -> PipelineConfig {
        PipelineConfig {
            seed: 11,
            output_dir: dir.to_path_buf(),
            input: InputSpec::Synthetic {
                spec: SyntheticWorldSpec {
                    rows: 32,
                    cols: 32,
                    years: vec![2003, 2004, 2005],
                    n_stations: 25,
                    ..SyntheticWorldSpec::default()
                },
            },
            hi_mode: SeasonalMode::Mean,
            split: SplitSpec::default(),
            learners: LearnerConfig {
                rf_trees: 25,
                explainer_trees: 25,
                ..LearnerConfig::default()
            },
            explain: ExplainConfig {
                background_k: 8,
                chunk_size: 256,
                ..ExplainConfig::default()
            },
            ale: AleConfig {
                bins_1d: 8,
                bins_2d: 5,
                h2_eval_sample: 60,
            },
            stats: StatsConfig {
                bootstrap_replicates: 50,
            },
        }
    }

    #[test]
    fn pipeline_smoke_produces_all_artifact_classes() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(&dir.path().join("out"));
        let summary = run_pipeline(&config).unwrap();
        for rel in [
            "manifest.json",
            "inputs/truth.json",
            "inputs/2003/LST.f32",
            "hi/2003/mam_hi.f32",
            "downscale/2004/pred.f32",
            "downscale/2004/eval.json",
            "explain/2005/shap.EVI.f32",
            "explain/ale/selection.json",
            "explain/ale/surface_selected.json",
            "stats/ks.json",
            "stats/trends.json",
            "stats/bootstrap.json",
            "stats/validation.json",
        ] {
            assert!(summary.out_dir.join(rel).exists(), "missing {rel}");
        }
        let audit = audit_manifests(&summary.out_dir).unwrap();
        assert!(audit.n_files > 50);
        assert_eq!(audit.n_stage_manifests, 9);
    }

    #[test]
    fn missing_input_aborts_with_stage_and_path() {
        let dir = tempfile::tempdir().unwrap();
        let config = PipelineConfig {
            input: InputSpec::Files {
                years: vec![YearInputs {
                    year: 2003,
                    t_grids: vec![("mar".into(), dir.path().join("absent.f32"))],
                    rh_grids: vec![("mar".into(), dir.path().join("absent_rh.f32"))],
                    stack: vec![],
                    stations: None,
                }],
            },
            ..tiny_config(&dir.path().join("out"))
        };
        let err = config.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.message.contains("absent.f32"), "{}", err.message);
    }

    #[test]
    fn deleted_intermediate_aborts_with_stage_name() {
        // Build a files-input config pointing at a synth output, then delete
        // one grid.
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let config = tiny_config(&out);
        run_pipeline(&config).unwrap();

        let stack_names: Vec<String> = crate::grid::DOWNSCALING_LAYERS
            .iter()
            .map(|s| s.to_string())
            .chain(["EVI", "LAI", "FPAR", "NTL"].iter().map(|s| s.to_string()))
            .collect();
        let year_inputs = YearInputs {
            year: 2003,
            t_grids: vec![("mar".into(), out.join("inputs/2003/t_mar.f32"))],
            rh_grids: vec![("mar".into(), out.join("inputs/2003/rh_mar.f32"))],
            stack: stack_names
                .iter()
                .map(|n| (n.clone(), out.join(format!("inputs/2003/{n}.f32"))))
                .collect(),
            stations: None,
        };
        let config2 = PipelineConfig {
            input: InputSpec::Files {
                years: vec![year_inputs],
            },
            output_dir: dir.path().join("out2"),
            ..tiny_config(&dir.path().join("out2"))
        };
        // Delete one input after validation time.
        config2.validate().unwrap();
        fs::remove_file(out.join("inputs/2003/t_mar.f32")).unwrap();
        let err = run_pipeline(&config2).unwrap_err();
        assert_eq!(err.stage, "hi:2003");
        assert_eq!(err.exit_code(), 3);
        assert!(err.message.contains("t_mar.f32"));
    }

    #[test]
    fn stations_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stations.csv");
        let header = GridHeader::new(4, 4, 20.0, 70.0, 0.25).unwrap();
        let grid = Grid::new(
            header,
            (0..16).map(|i| 25.0 + i as f64).collect(),
            "degC",
        )
        .unwrap();
        // Stations exactly at cell centers sampling the grid values.
        let mut records = Vec::new();
        for (r, c) in [(0usize, 0usize), (1, 2), (3, 3), (2, 1)] {
            records.push(StationRecord {
                station_id: format!("S{r}{c}"),
                lat: header.row_lat(r),
                lon: header.col_lon(c),
                year: 2003,
                observed_hi: grid.get(r, c),
            });
        }
        // One offshore station.
        records.push(StationRecord {
            station_id: "OFF".into(),
            lat: 55.0,
            lon: 10.0,
            year: 2003,
            observed_hi: 30.0,
        });
        write_stations_csv(&path, &records).unwrap();
        let loaded = read_stations_csv(&path).unwrap();
        assert_eq!(loaded, records);

        let (report, paired) = validate_stations(&records, &[(2003, grid)]).unwrap();
        assert_eq!(report.n_paired, 4);
        assert_eq!(report.n_skipped, 1);
        assert_eq!(report.eval.mae, 0.0);
        assert!((report.eval.r - 1.0).abs() < 1e-12);
        assert_eq!(paired.len(), 4);
    }

    #[test]
    fn config_hash_changes_with_content() {
        let dir = tempfile::tempdir().unwrap();
        let a = tiny_config(&dir.path().join("a"));
        let mut b = a.clone();
        b.seed = 12;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), tiny_config(&dir.path().join("a")).hash());
    }
}
