//! Command-line surface of the heatlens pipeline: heat-index computation,
//! per-year downscaling, SHAP/ALE attribution, statistics, synthetic-world
//! generation, station validation, and the end-to-end `run` command.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

mod table;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use heatlens::ale::{ale_1d, ale_2d, h2_interaction, select_strongest_pair, zero_crossing_isolines, InteractionScore};
use heatlens::downscale::ModelFile;
use heatlens::grid::{align_stack, load_grid, save_grid, FeatureStack, Grid};
use heatlens::heat_index::{
    heat_index_f, heat_index_grid, seasonal_mam_aggregate, MamMonth, MonthlyHiField, SeasonalMode,
};
use heatlens::pipeline::{
    audit_manifests, load_shap_matrix, read_stations_csv, run_pipeline, run_pipeline_through,
    save_shap_matrix, validate_stations, write_paired_csv, write_synthetic_world, ErrorKind,
    InputSpec, PipelineConfig, PipelineError, StagePoint,
};
use heatlens::shap::{
    compress_background, explain_region, fit_explainer, pairwise_joint_summary, rank_features,
    BackgroundSet,
};
use heatlens::stats::{block_bootstrap, ks_two_sample, linear_trend};
use heatlens::synth::SyntheticWorldSpec;
use heatlens::tree::{RfParams, TrainParams};

#[derive(Parser)]
#[command(
    name = "heatlens",
    version,
    about = "Heat Index reconstruction, extreme-aware downscaling, and SHAP/ALE attribution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the Heat Index: scalar breakdown or grid/seasonal products.
    Hi(HiArgs),
    /// Train and evaluate one year's downscaling ensemble from a pipeline config.
    Downscale {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        year: i32,
    },
    /// Attribution commands: explainer training, background compression,
    /// SHAP, pairwise summaries, ALE, and H².
    Explain {
        #[command(subcommand)]
        cmd: ExplainCmd,
    },
    /// Distributional and trend statistics.
    Stats {
        #[command(subcommand)]
        cmd: StatsCmd,
    },
    /// Generate a synthetic world in the pipeline input layout.
    Synth {
        /// JSON spec; omitted = built-in default world.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pair stations with predicted grids and report validation metrics.
    Validate {
        #[arg(long)]
        stations: PathBuf,
        /// Repeated year=path pairs of predicted HI grids.
        #[arg(long = "pred", value_parser = parse_year_path)]
        preds: Vec<(i32, PathBuf)>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        paired_csv: Option<PathBuf>,
    },
    /// Run the full pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Audit the manifest graph of a pipeline output directory.
    Audit {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct HiArgs {
    /// Scalar mode: temperature in °F.
    #[arg(long)]
    t_f: Option<f64>,
    /// Scalar mode: relative humidity in percent.
    #[arg(long)]
    rh: Option<f64>,
    /// Grid mode: temperature grids (°C), repeatable.
    #[arg(long = "t-grid")]
    t_grids: Vec<PathBuf>,
    /// Grid mode: humidity grids (%), repeatable, paired with --t-grid.
    #[arg(long = "rh-grid")]
    rh_grids: Vec<PathBuf>,
    /// Month tag per grid pair (mar|apr|may); required for aggregation.
    #[arg(long = "month-tag")]
    month_tags: Vec<String>,
    /// Seasonal aggregation mode when multiple pairs are given.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<SeasonalMode>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExplainCmd {
    /// Train the pooled greening/urban explainer forest from a CSV table.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target_col: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 150)]
        trees: usize,
        #[arg(long, default_value_t = 1)]
        min_samples_leaf: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compress a background sample to weighted centroids.
    Background {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 64)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interventional TreeSHAP over a stack region: one float32 plane per
    /// feature plus JSON metadata.
    Shap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        background: PathBuf,
        /// Output prefix; writes <prefix>.<FEATURE>.f32 + <prefix>.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1024)]
        chunk: usize,
    },
    /// Net joint-effect summary of a feature pair over saved SHAP planes.
    ShapPairs {
        /// Prefix of saved SHAP planes.
        #[arg(long)]
        shap: PathBuf,
        #[arg(long)]
        stack: PathBuf,
        #[arg(long, value_parser = parse_pair)]
        pair: (String, String),
        #[arg(long, default_value_t = 0.75)]
        joint_high_quantile: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 1-D ALE curve, or 2-D surface with zero isolines when --pair is given.
    Ale {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        feature: Option<String>,
        #[arg(long, value_parser = parse_pair)]
        pair: Option<(String, String)>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// H² interaction score for a pair, or the strongest-pair selection rule
    /// over a yearly score table (--years).
    H2 {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_parser = parse_pair)]
        pair: Option<(String, String)>,
        #[arg(long, default_value_t = 300)]
        eval_sample: usize,
        #[arg(long, default_value_t = 0)]
        year: i32,
        /// CSV of yearly scores (feature_a,feature_b,year,h2) for selection.
        #[arg(long)]
        years: Option<PathBuf>,
        /// Pair filter for selection mode; only `all` is supported.
        #[arg(long)]
        pairs: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum StatsCmd {
    /// Two-sample Kolmogorov–Smirnov test between two single-column CSVs.
    Ks {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// OLS linear trend of a year,value CSV series.
    Trend {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Standardized effect sizes from saved SHAP planes and an eval report.
    Effects {
        /// Prefix of saved SHAP planes.
        #[arg(long)]
        shap: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Block bootstrap of the mean over a city,year,value CSV.
    Bootstrap {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<SeasonalMode, String> {
    match s {
        "mean" => Ok(SeasonalMode::Mean),
        "max" => Ok(SeasonalMode::Max),
        other => Err(format!("mode must be mean or max, got `{other}`")),
    }
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 || parts.iter().any(|p| p.trim().is_empty()) {
        return Err(format!("expected FEATURE_A,FEATURE_B, got `{s}`"));
    }
    Ok((parts[0].trim().to_string(), parts[1].trim().to_string()))
}

fn parse_year_path(s: &str) -> Result<(i32, PathBuf), String> {
    let (year, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected YEAR=PATH, got `{s}`"))?;
    Ok((
        year.trim().parse().map_err(|e| format!("bad year `{year}`: {e}"))?,
        PathBuf::from(path),
    ))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("heatlens: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn cfg_err(msg: impl std::fmt::Display) -> PipelineError {
    PipelineError::new("cli", ErrorKind::Config, msg)
}

fn data_err(msg: impl std::fmt::Display) -> PipelineError {
    PipelineError::new("cli", ErrorKind::Data, msg)
}

fn numeric_err(msg: impl std::fmt::Display) -> PipelineError {
    PipelineError::new("cli", ErrorKind::Numeric, msg)
}

fn emit(value: &serde_json::Value, out: Option<&Path>) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).map_err(numeric_err)?;
    match out {
        Some(path) => std::fs::write(path, text).map_err(data_err)?,
        None => println!("{text}"),
    }
    Ok(())
}

/// Stack description file: {"layers": [{"name": ..., "path": ...}]} with
/// paths resolved relative to the description file.
#[derive(Deserialize)]
struct StackFile {
    layers: Vec<StackLayer>,
}

#[derive(Deserialize)]
struct StackLayer {
    name: String,
    path: PathBuf,
}

fn load_stack(path: &Path) -> Result<FeatureStack, PipelineError> {
    let spec: StackFile = serde_json::from_slice(
        &std::fs::read(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?,
    )
    .map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut layers = Vec::new();
    for layer in spec.layers {
        let p = if layer.path.is_absolute() {
            layer.path
        } else {
            base.join(layer.path)
        };
        let (grid, _) = load_grid(&p).map_err(|e| data_err(format!("{}: {e}", p.display())))?;
        layers.push((layer.name, grid));
    }
    align_stack(layers).map_err(data_err)
}

fn load_forest(path: &Path) -> Result<heatlens::tree::ForestModel, PipelineError> {
    match ModelFile::load(path).map_err(|e| data_err(format!("{}: {e}", path.display())))? {
        ModelFile::RandomForest(m) => Ok(m),
        _ => Err(cfg_err(format!(
            "{}: expected a random_forest model",
            path.display()
        ))),
    }
}

fn dispatch(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Hi(args) => cmd_hi(args),
        Command::Downscale { config, year } => cmd_downscale(&config, year),
        Command::Explain { cmd } => cmd_explain(cmd),
        Command::Stats { cmd } => cmd_stats(cmd),
        Command::Synth { spec, out } => cmd_synth(spec.as_deref(), &out),
        Command::Validate {
            stations,
            preds,
            out,
            paired_csv,
        } => cmd_validate(&stations, &preds, out.as_deref(), paired_csv.as_deref()),
        Command::Run { config } => {
            let config = PipelineConfig::load(&config)?;
            config.validate()?;
            let summary = run_pipeline(&config)?;
            emit(&serde_json::to_value(&summary).map_err(numeric_err)?, None)
        }
        Command::Audit { dir } => {
            let report = audit_manifests(&dir).map_err(data_err)?;
            emit(&serde_json::to_value(&report).map_err(numeric_err)?, None)
        }
    }
}

fn cmd_hi(args: HiArgs) -> Result<(), PipelineError> {
    // Scalar debugging mode.
    if let (Some(t_f), Some(rh)) = (args.t_f, args.rh) {
        let breakdown = heat_index_f(t_f, rh).map_err(numeric_err)?;
        let mut value = serde_json::to_value(breakdown).map_err(numeric_err)?;
        value["valid"] = serde_json::Value::Bool(breakdown.is_valid());
        return emit(&value, args.out.as_deref());
    }
    if args.t_grids.is_empty() || args.t_grids.len() != args.rh_grids.len() {
        return Err(cfg_err(
            "grid mode needs matching --t-grid/--rh-grid pairs (or --t-f with --rh for scalar mode)",
        ));
    }
    let out = args
        .out
        .as_deref()
        .ok_or_else(|| cfg_err("--out is required in grid mode"))?;

    let mut his: Vec<(Option<MamMonth>, Grid)> = Vec::new();
    for (i, (t_path, rh_path)) in args.t_grids.iter().zip(&args.rh_grids).enumerate() {
        let (t, _) = load_grid(t_path).map_err(|e| data_err(format!("{}: {e}", t_path.display())))?;
        let (rh, _) =
            load_grid(rh_path).map_err(|e| data_err(format!("{}: {e}", rh_path.display())))?;
        let hi = heat_index_grid(&t, &rh).map_err(numeric_err)?;
        let month = match args.month_tags.get(i) {
            Some(tag) => Some(
                MamMonth::parse(tag)
                    .ok_or_else(|| cfg_err(format!("bad --month-tag `{tag}` (mar|apr|may)")))?,
            ),
            None => None,
        };
        his.push((month, hi));
    }

    let result = if his.len() == 1 && args.mode.is_none() {
        his.remove(0).1
    } else {
        let fields: Vec<MonthlyHiField> = his
            .into_iter()
            .enumerate()
            .map(|(i, (month, grid))| {
                month
                    .ok_or_else(|| cfg_err(format!("grid pair {i} is missing --month-tag")))
                    .map(|m| MonthlyHiField {
                        month: m,
                        timestamp: format!("cli-{i}"),
                        grid,
                    })
            })
            .collect::<Result<_, _>>()?;
        seasonal_mam_aggregate(&fields, args.mode.unwrap_or(SeasonalMode::Mean))
            .map_err(numeric_err)?
    };
    save_grid(out, &result, None).map_err(|e| data_err(format!("{}: {e}", out.display())))?;
    Ok(())
}

fn cmd_downscale(config_path: &Path, year: i32) -> Result<(), PipelineError> {
    let mut config = PipelineConfig::load(config_path)?;
    config.validate()?;
    // Restrict the run to the requested year.
    match &mut config.input {
        InputSpec::Synthetic { spec } => {
            if !spec.years.contains(&year) {
                return Err(cfg_err(format!("year {year} not in synthetic spec years")));
            }
            spec.years = vec![year];
        }
        InputSpec::Files { years } => {
            years.retain(|y| y.year == year);
            if years.is_empty() {
                return Err(cfg_err(format!("year {year} not present in config inputs")));
            }
        }
    }
    let summary = run_pipeline_through(&config, StagePoint::Downscale)?;
    emit(&serde_json::to_value(&summary).map_err(numeric_err)?, None)
}

fn cmd_explain(cmd: ExplainCmd) -> Result<(), PipelineError> {
    match cmd {
        ExplainCmd::Train {
            data,
            target_col,
            out,
            trees,
            min_samples_leaf,
            seed,
        } => {
            let (matrix, target) = table::read_table_with_target(&data, &target_col)
                .map_err(data_err)?;
            let params = RfParams {
                n_estimators: trees,
                train: TrainParams {
                    seed,
                    min_samples_leaf,
                    ..TrainParams::default()
                },
                compute_oob: true,
            };
            let model = fit_explainer(&matrix, &target, &params).map_err(numeric_err)?;
            let oob = model.oob_r2;
            ModelFile::RandomForest(model)
                .save(&out)
                .map_err(|e| data_err(format!("{}: {e}", out.display())))?;
            emit(
                &serde_json::json!({ "model": out, "oob_r2": oob }),
                None,
            )
        }
        ExplainCmd::Background { data, k, seed, out } => {
            let matrix = table::read_table(&data).map_err(data_err)?;
            let bg = compress_background(&matrix, k, seed).map_err(numeric_err)?;
            emit(&serde_json::to_value(&bg).map_err(numeric_err)?, Some(&out))
        }
        ExplainCmd::Shap {
            model,
            stack,
            background,
            out,
            chunk,
        } => {
            let forest = load_forest(&model)?;
            let stack = load_stack(&stack)?;
            let bg: BackgroundSet = serde_json::from_slice(
                &std::fs::read(&background)
                    .map_err(|e| data_err(format!("{}: {e}", background.display())))?,
            )
            .map_err(data_err)?;
            let shap = explain_region(&forest, &stack, &bg, chunk).map_err(numeric_err)?;
            save_shap_matrix(&out, &shap)
                .map_err(|e| data_err(format!("{}: {e}", out.display())))?;
            let ranks = rank_features(&shap);
            emit(
                &serde_json::json!({
                    "out_prefix": out,
                    "n_pixels": shap.n_pixels(),
                    "base_value": shap.base_value,
                    "efficiency_max_abs_error": shap.efficiency_max_abs_error,
                    "ranking": ranks,
                }),
                None,
            )
        }
        ExplainCmd::ShapPairs {
            shap,
            stack,
            pair,
            joint_high_quantile,
            out,
        } => {
            let matrix = load_shap_matrix(&shap).map_err(data_err)?;
            let stack = load_stack(&stack)?;
            let summary =
                pairwise_joint_summary(&matrix, &stack, (&pair.0, &pair.1), joint_high_quantile)
                    .map_err(numeric_err)?;
            emit(
                &serde_json::to_value(&summary).map_err(numeric_err)?,
                out.as_deref(),
            )
        }
        ExplainCmd::Ale {
            model,
            data,
            feature,
            pair,
            bins,
            out,
        } => {
            let model = ModelFile::load(&model)
                .map_err(|e| data_err(format!("{}: {e}", model.display())))?;
            let matrix = table::read_table(&data).map_err(data_err)?;
            match (feature, pair) {
                (Some(feature), None) => {
                    let curve = ale_1d(model.as_regressor(), &matrix, &feature, bins)
                        .map_err(numeric_err)?;
                    emit(&serde_json::to_value(&curve).map_err(numeric_err)?, out.as_deref())
                }
                (None, Some(pair)) => {
                    let surface = ale_2d(model.as_regressor(), &matrix, (&pair.0, &pair.1), bins)
                        .map_err(numeric_err)?;
                    let isolines = zero_crossing_isolines(&surface);
                    emit(
                        &serde_json::json!({ "surface": surface, "zero_isolines": isolines }),
                        out.as_deref(),
                    )
                }
                _ => Err(cfg_err("give exactly one of --feature or --pair")),
            }
        }
        ExplainCmd::H2 {
            model,
            data,
            pair,
            eval_sample,
            year,
            years,
            pairs,
            out,
        } => {
            if let Some(scores_csv) = years {
                if pairs.as_deref().is_some_and(|p| p != "all") {
                    return Err(cfg_err("--pairs supports only `all`"));
                }
                let scores = read_scores_csv(&scores_csv)?;
                let selection = select_strongest_pair(&scores).map_err(numeric_err)?;
                return emit(
                    &serde_json::to_value(&selection).map_err(numeric_err)?,
                    out.as_deref(),
                );
            }
            let (model, data, pair) = match (model, data, pair) {
                (Some(m), Some(d), Some(p)) => (m, d, p),
                _ => {
                    return Err(cfg_err(
                        "score mode needs --model, --data and --pair (or --years for selection)",
                    ))
                }
            };
            let model = ModelFile::load(&model)
                .map_err(|e| data_err(format!("{}: {e}", model.display())))?;
            let matrix = table::read_table(&data).map_err(data_err)?;
            let score = h2_interaction(
                model.as_regressor(),
                &matrix,
                (&pair.0, &pair.1),
                eval_sample,
                year,
            )
            .map_err(numeric_err)?;
            emit(&serde_json::to_value(&score).map_err(numeric_err)?, out.as_deref())
        }
    }
}

fn read_scores_csv(path: &Path) -> Result<Vec<InteractionScore>, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    let mut scores = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(data_err(format!(
                "{}: line {} has {} fields, expected feature_a,feature_b,year,h2",
                path.display(),
                lineno + 1,
                parts.len()
            )));
        }
        let h2: f64 = parts[3]
            .trim()
            .parse()
            .map_err(|e| data_err(format!("line {}: {e}", lineno + 1)))?;
        scores.push(InteractionScore {
            pair: (parts[0].trim().to_string(), parts[1].trim().to_string()),
            h2,
            h2_raw: h2,
            year: parts[2]
                .trim()
                .parse()
                .map_err(|e| data_err(format!("line {}: {e}", lineno + 1)))?,
            degenerate: false,
        });
    }
    Ok(scores)
}

fn cmd_stats(cmd: StatsCmd) -> Result<(), PipelineError> {
    match cmd {
        StatsCmd::Ks { a, b, out } => {
            let xs = table::read_column_csv(&a).map_err(data_err)?;
            let ys = table::read_column_csv(&b).map_err(data_err)?;
            let result = ks_two_sample(&xs, &ys).map_err(numeric_err)?;
            emit(
                &serde_json::json!({
                    "inputs": { "a": a, "b": b, "n1": xs.len(), "n2": ys.len() },
                    "result": result,
                }),
                out.as_deref(),
            )
        }
        StatsCmd::Trend { csv, out } => {
            let (years, values) = table::read_year_value_csv(&csv).map_err(data_err)?;
            let result = linear_trend(&years, &values).map_err(numeric_err)?;
            emit(
                &serde_json::json!({
                    "inputs": { "csv": csv, "n": years.len() },
                    "result": result,
                }),
                out.as_deref(),
            )
        }
        StatsCmd::Effects { shap, eval, out } => {
            let matrix = load_shap_matrix(&shap).map_err(data_err)?;
            let report: heatlens::downscale::EvalReport = serde_json::from_slice(
                &std::fs::read(&eval).map_err(|e| data_err(format!("{}: {e}", eval.display())))?,
            )
            .map_err(data_err)?;
            let effects = heatlens::stats::effect_sizes(&matrix, &matrix.predictions, &report)
                .map_err(numeric_err)?;
            emit(
                &serde_json::json!({
                    "inputs": { "shap": shap, "eval": eval },
                    "numerator": "mean_abs_shap",
                    "effects": effects,
                }),
                out.as_deref(),
            )
        }
        StatsCmd::Bootstrap {
            csv,
            replicates,
            seed,
            out,
        } => {
            let records = table::read_block_csv(&csv).map_err(data_err)?;
            let result = block_bootstrap(
                &records,
                |r| (r.0.clone(), r.1),
                |rows| rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64,
                replicates,
                seed,
            )
            .map_err(numeric_err)?;
            emit(
                &serde_json::json!({
                    "inputs": { "csv": csv, "n_records": records.len() },
                    "summary": "mean",
                    "n_blocks": result.n_blocks,
                    "n_replicates": result.n_replicates,
                    "point_estimate": result.point_estimate,
                    "lo_2_5": result.lo_2_5,
                    "hi_97_5": result.hi_97_5,
                }),
                out.as_deref(),
            )
        }
    }
}

fn cmd_synth(spec_path: Option<&Path>, out: &Path) -> Result<(), PipelineError> {
    let spec: SyntheticWorldSpec = match spec_path {
        Some(p) => serde_json::from_slice(
            &std::fs::read(p).map_err(|e| data_err(format!("{}: {e}", p.display())))?,
        )
        .map_err(|e| cfg_err(format!("{}: {e}", p.display())))?,
        None => SyntheticWorldSpec::default(),
    };
    let summary = write_synthetic_world(&spec, out)?;
    emit(&serde_json::to_value(&summary).map_err(numeric_err)?, None)
}

fn cmd_validate(
    stations: &Path,
    preds: &[(i32, PathBuf)],
    out: Option<&Path>,
    paired_csv: Option<&Path>,
) -> Result<(), PipelineError> {
    if preds.is_empty() {
        return Err(cfg_err("at least one --pred YEAR=PATH is required"));
    }
    let records = read_stations_csv(stations).map_err(data_err)?;
    let mut grids = Vec::new();
    for (year, path) in preds {
        let (grid, _) = load_grid(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        grids.push((*year, grid));
    }
    let (report, paired) = validate_stations(&records, &grids)?;
    if let Some(path) = paired_csv {
        write_paired_csv(path, &paired).map_err(data_err)?;
    }
    emit(&serde_json::to_value(&report).map_err(numeric_err)?, out)
}
