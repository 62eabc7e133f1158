use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rawmap::color::{apply_transform, diagonal_transform, Illuminant, Transform3};
use rawmap::dataset::{
    load_illum_dataset, load_illum_eval, load_manifest, load_sensor_dataset, load_sensor_eval,
    make_benchmark, GenConfig,
};
use rawmap::error::{Error, Result};
use rawmap::eval::{
    aggregate, aggregate_csv, evaluate_illum_method, evaluate_sensor_method, render_table,
    report_csv, IllumMapper, ReportRow, SensorBank, SensorMapper,
};
use rawmap::knn::{knn_transform, KnnVariant, TransformBank};
use rawmap::mlp::{forward, MlpMode};
use rawmap::preprocess::{demosaic_bilinear, downsample_bilinear, level_correct};
use rawmap::rawf;
use rawmap::train::{
    illum_input, pair_input, train_illum_mlp, train_sensor_mlp, SavedModel, TrainConfig,
};

#[derive(Parser)]
#[command(name = "rawmap", about = "Illumination and sensor mapping for RAW images", version)]
struct Cli {
    /// Cap the worker-thread count (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark (images, illuminant tables, manifest).
    GenData(GenDataArgs),
    /// Train a mapping MLP.
    Train(TrainArgs),
    /// Print the 3x3 transform a trained model predicts.
    Predict(PredictArgs),
    /// Apply a transform (from a model or an explicit matrix) to an image.
    Apply(ApplyArgs),
    /// Print a baseline transform (diagonal or KNN interpolation).
    Baseline(BaselineArgs),
    /// Fit the dense KNN transform bank from the training scene.
    FitBank(FitBankArgs),
    /// Fine-tune a trained model on one image pair and print the transform.
    Oracle(OracleArgs),
    /// Evaluate mapping methods on the benchmark's test split.
    Eval(EvalArgs),
    /// Black/white level correction, demosaic, optional downsample.
    Preprocess(PreprocessArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Camera preset ids.
    #[arg(long, value_delimiter = ',', default_values_t = ["broadband_a".to_string(), "broadband_b".to_string()])]
    cameras: Vec<String>,
    #[arg(long, default_value_t = 60)]
    n_train: usize,
    #[arg(long, default_value_t = 10)]
    n_val: usize,
    #[arg(long, default_value_t = 20)]
    n_test: usize,
    #[arg(long, default_value_t = 64)]
    train_scene_size: usize,
    #[arg(long, default_value_t = 32)]
    test_scene_size: usize,
    #[arg(long, default_value_t = 4)]
    n_test_scenes: usize,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainTask {
    Illum,
    Sensor,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(value_enum)]
    task: TrainTask,
    /// Benchmark directory from gen-data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    camera: String,
    /// Target camera (sensor task only).
    #[arg(long)]
    camera_b: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    pixels_per_pair: Option<usize>,
    #[arg(long)]
    hard_pair_fraction: Option<f64>,
    /// Print one line of train/val metrics per epoch.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Source illuminant RGB "r,g,b" (illum models).
    #[arg(long)]
    src_illum: Option<String>,
    /// Target illuminant RGB "r,g,b" (illum models).
    #[arg(long)]
    dst_illum: Option<String>,
    /// Illuminant RGB "r,g,b" (sensor models).
    #[arg(long)]
    illum: Option<String>,
}

#[derive(Args)]
struct ApplyArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Explicit row-major matrix "m00,m01,...,m22" (alternative to --model).
    #[arg(long)]
    matrix: Option<String>,
    #[arg(long)]
    src_illum: Option<String>,
    #[arg(long)]
    dst_illum: Option<String>,
    #[arg(long)]
    illum: Option<String>,
    #[arg(long, name = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Diag,
    Knn,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(value_enum)]
    kind: BaselineKind,
    #[arg(long)]
    src_illum: String,
    #[arg(long)]
    dst_illum: String,
    /// Transform bank JSON (knn only).
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long, default_value = "knn-d65-knn")]
    variant: String,
    #[arg(long, default_value_t = 2)]
    k: usize,
}

#[derive(Args)]
struct FitBankArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    camera: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Source image (RAWF).
    #[arg(long)]
    src: PathBuf,
    /// Target image (RAWF).
    #[arg(long)]
    dst: PathBuf,
    #[arg(long)]
    src_illum: String,
    #[arg(long)]
    dst_illum: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalTask {
    Illum,
    Sensor,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(value_enum)]
    task: EvalTask,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    camera: String,
    #[arg(long)]
    camera_b: Option<String>,
    /// Comma list: diagonal, knn, mlp, oracle (illum); mlp, knn, oracle (sensor).
    #[arg(long, value_delimiter = ',', default_values_t = ["diagonal".to_string(), "mlp".to_string()])]
    methods: Vec<String>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long, default_value = "knn-d65-knn")]
    variant: String,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 0.282)]
    hard_pair_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving report.csv, aggregate.csv, and run.json.
    #[arg(long)]
    out_report: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Mosaiced RAWF input.
    #[arg(long, name = "in")]
    input: PathBuf,
    /// Override the black level stored in the file.
    #[arg(long)]
    black: Option<f64>,
    /// Override the white level stored in the file.
    #[arg(long)]
    white: Option<f64>,
    /// Box-downsample factor after demosaicing.
    #[arg(long, default_value_t = 1)]
    downscale: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_rgb(s: &str, what: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Parameter(format!("{what} must be 'r,g,b', got '{s}'")));
    }
    let mut rgb = [0.0; 3];
    for (i, p) in parts.iter().enumerate() {
        rgb[i] = p
            .trim()
            .parse()
            .map_err(|e| Error::Parameter(format!("bad {what} component '{p}': {e}")))?;
    }
    Ok(rgb)
}

fn parse_matrix(s: &str) -> Result<Transform3> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|e| Error::Parameter(format!("bad matrix entry '{p}': {e}"))))
        .collect::<Result<_>>()?;
    let m: [f64; 9] = vals
        .try_into()
        .map_err(|_| Error::Parameter("matrix needs exactly 9 comma-separated entries".into()))?;
    Transform3::new(m)
}

fn print_matrix(t: &Transform3) {
    for r in 0..3 {
        println!("{} {} {}", t.m[r * 3], t.m[r * 3 + 1], t.m[r * 3 + 2]);
    }
}

fn load_model(path: &PathBuf) -> Result<SavedModel> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn required<'a, T>(opt: &'a Option<T>, flag: &str) -> Result<&'a T> {
    opt.as_ref().ok_or_else(|| Error::Parameter(format!("--{flag} is required here")))
}

fn write_run_json(dir: &std::path::Path, config: &impl serde::Serialize) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(config)? + "\n")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let config = GenConfig {
                seed: a.seed,
                n_train: a.n_train,
                n_val: a.n_val,
                n_test: a.n_test,
                cameras: a.cameras,
                train_scene_size: a.train_scene_size,
                test_scene_size: a.test_scene_size,
                n_test_scenes: a.n_test_scenes,
                ..GenConfig::default()
            };
            let manifest = make_benchmark(&config, &a.out, a.force)?;
            println!(
                "wrote {} images for {} cameras to {}",
                manifest.images.len(),
                manifest.cameras.len(),
                a.out.display()
            );
        }
        Command::Train(a) => {
            let manifest = load_manifest(&a.data)?;
            let mode = match a.task {
                TrainTask::Illum => MlpMode::Illum,
                TrainTask::Sensor => MlpMode::Sensor,
            };
            let mut config = TrainConfig::default_for(mode);
            if let Some(v) = a.epochs {
                config.epochs = v;
            }
            if let Some(v) = a.lr0 {
                config.lr0 = v;
            }
            if let Some(v) = a.batch_size {
                config.batch_size = v;
            }
            if let Some(v) = a.pixels_per_pair {
                config.pixels_per_pair = v;
            }
            if let Some(v) = a.hard_pair_fraction {
                config.hard_pair_fraction = v;
            }
            let outcome = match a.task {
                TrainTask::Illum => {
                    let ds = load_illum_dataset(&a.data, &manifest, &a.camera)?;
                    train_illum_mlp(&ds, &config, a.seed)?
                }
                TrainTask::Sensor => {
                    let cam_b = required(&a.camera_b, "camera-b")?;
                    let ds = load_sensor_dataset(&a.data, &manifest, &a.camera, cam_b)?;
                    train_sensor_mlp(&ds, &config, a.seed)?
                }
            };
            if a.verbose {
                for e in &outcome.log.epochs {
                    println!(
                        "epoch {:>4}  lr {:<10}  train {:.4}  val {:.4}",
                        e.epoch, e.lr, e.train_loss, e.val_mae
                    );
                }
            }
            println!(
                "best epoch {} with val MAE {:.4}",
                outcome.log.best_epoch, outcome.log.best_val_mae
            );
            let saved = SavedModel::from_outcome(&outcome, &config);
            fs::write(&a.out_model, serde_json::to_string_pretty(&saved)? + "\n")?;
        }
        Command::Predict(a) => {
            let model = load_model(&a.model)?.into_model()?;
            let input = match model.mode {
                MlpMode::Illum => {
                    let src = parse_rgb(required(&a.src_illum, "src-illum")?, "src-illum")?;
                    let dst = parse_rgb(required(&a.dst_illum, "dst-illum")?, "dst-illum")?;
                    pair_input(&Illuminant::new(src, "src")?, &Illuminant::new(dst, "dst")?)
                }
                MlpMode::Sensor => {
                    let rgb = parse_rgb(required(&a.illum, "illum")?, "illum")?;
                    illum_input(&Illuminant::new(rgb, "l")?).to_vec()
                }
            };
            print_matrix(&forward(&model, &input)?);
        }
        Command::Apply(a) => {
            let t = match (&a.model, &a.matrix) {
                (Some(path), None) => {
                    let model = load_model(path)?.into_model()?;
                    let input = match model.mode {
                        MlpMode::Illum => {
                            let src = parse_rgb(required(&a.src_illum, "src-illum")?, "src-illum")?;
                            let dst = parse_rgb(required(&a.dst_illum, "dst-illum")?, "dst-illum")?;
                            pair_input(&Illuminant::new(src, "src")?, &Illuminant::new(dst, "dst")?)
                        }
                        MlpMode::Sensor => {
                            let rgb = parse_rgb(required(&a.illum, "illum")?, "illum")?;
                            illum_input(&Illuminant::new(rgb, "l")?).to_vec()
                        }
                    };
                    forward(&model, &input)?
                }
                (None, Some(m)) => parse_matrix(m)?,
                _ => {
                    return Err(Error::Parameter(
                        "pass exactly one of --model or --matrix".into(),
                    ))
                }
            };
            let img = rawf::read_image(&a.input)?;
            rawf::write_image(&a.out, &apply_transform(&t, &img)?)?;
        }
        Command::Baseline(a) => {
            let src = Illuminant::new(parse_rgb(&a.src_illum, "src-illum")?, "src")?;
            let dst = Illuminant::new(parse_rgb(&a.dst_illum, "dst-illum")?, "dst")?;
            let t = match a.kind {
                BaselineKind::Diag => diagonal_transform(&src, &dst)?,
                BaselineKind::Knn => {
                    let bank_path = required(&a.bank, "bank")?;
                    let bank: TransformBank =
                        serde_json::from_str(&fs::read_to_string(bank_path)?)?;
                    knn_transform(&bank, &src, &dst, KnnVariant::parse(&a.variant)?, a.k)?
                }
            };
            print_matrix(&t);
        }
        Command::FitBank(a) => {
            let manifest = load_manifest(&a.data)?;
            let ds = load_illum_dataset(&a.data, &manifest, &a.camera)?;
            let bank = TransformBank::fit(&ds.train.illums, &ds.train.images)?;
            fs::write(&a.out, serde_json::to_string_pretty(&bank)? + "\n")?;
            println!("fitted {}x{} transform bank", bank.len(), bank.len());
        }
        Command::Oracle(a) => {
            let saved = load_model(&a.model)?;
            let config = saved.train_config.clone();
            let model = saved.into_model()?;
            let src_img = rawf::read_image(&a.src)?;
            let dst_img = rawf::read_image(&a.dst)?;
            let src = Illuminant::new(parse_rgb(&a.src_illum, "src-illum")?, "src")?;
            let t = match model.mode {
                MlpMode::Illum => {
                    let dst_rgb = parse_rgb(required(&a.dst_illum, "dst-illum")?, "dst-illum")?;
                    let dst = Illuminant::new(dst_rgb, "dst")?;
                    rawmap::train::finetune_oracle_pair(
                        &model, &src, &dst, &src_img, &dst_img, &config, a.seed,
                    )?
                }
                MlpMode::Sensor => {
                    let samples = rawmap::train::all_pair_pixels(&src_img, &dst_img)?;
                    rawmap::train::finetune_oracle(
                        &model,
                        &illum_input(&src),
                        &samples,
                        &config,
                        a.seed,
                    )?
                }
            };
            print_matrix(&t);
        }
        Command::Eval(a) => {
            let manifest = load_manifest(&a.data)?;
            let model_saved = match &a.model {
                Some(p) => Some(load_model(p)?),
                None => None,
            };
            let model = match model_saved {
                Some(s) => Some((s.train_config.clone(), s.into_model()?)),
                None => None,
            };
            let mut rows: Vec<ReportRow> = Vec::new();
            match a.task {
                EvalTask::Illum => {
                    let set =
                        load_illum_eval(&a.data, &manifest, &a.camera, a.hard_pair_fraction)?;
                    let bank: Option<TransformBank> = match &a.bank {
                        Some(p) => Some(serde_json::from_str(&fs::read_to_string(p)?)?),
                        None => None,
                    };
                    for method in &a.methods {
                        let mapper = match method.as_str() {
                            "diagonal" => IllumMapper::Diagonal,
                            "knn" => IllumMapper::Knn {
                                bank: required(&bank, "bank")?,
                                variant: KnnVariant::parse(&a.variant)?,
                                k: a.k,
                            },
                            "mlp" => IllumMapper::Mlp {
                                model: &required(&model, "model")?.1,
                            },
                            "oracle" => {
                                let (config, m) = required(&model, "model")?;
                                IllumMapper::Oracle { model: m, config, seed: a.seed }
                            }
                            other => {
                                return Err(Error::Parameter(format!(
                                    "unknown illum method '{other}'"
                                )))
                            }
                        };
                        rows.extend(evaluate_illum_method(&set, &mapper)?);
                    }
                }
                EvalTask::Sensor => {
                    let cam_b = required(&a.camera_b, "camera-b")?;
                    let set = load_sensor_eval(&a.data, &manifest, &a.camera, cam_b)?;
                    let bank: Option<SensorBank> = match &a.bank {
                        Some(p) => Some(serde_json::from_str(&fs::read_to_string(p)?)?),
                        None => {
                            if a.methods.iter().any(|m| m == "knn") {
                                let ds =
                                    load_sensor_dataset(&a.data, &manifest, &a.camera, cam_b)?;
                                Some(SensorBank::fit(&ds.train)?)
                            } else {
                                None
                            }
                        }
                    };
                    for method in &a.methods {
                        let mapper = match method.as_str() {
                            "mlp" => SensorMapper::Mlp {
                                model: &required(&model, "model")?.1,
                            },
                            "knn" => SensorMapper::Knn { bank: required(&bank, "bank")?, k: a.k },
                            "oracle" => {
                                let (config, m) = required(&model, "model")?;
                                SensorMapper::Oracle { model: m, config, seed: a.seed }
                            }
                            other => {
                                return Err(Error::Parameter(format!(
                                    "unknown sensor method '{other}'"
                                )))
                            }
                        };
                        rows.extend(evaluate_sensor_method(&set, &mapper)?);
                    }
                }
            }
            let aggs = aggregate(&rows);
            fs::create_dir_all(&a.out_report)?;
            fs::write(a.out_report.join("report.csv"), report_csv(&rows))?;
            fs::write(a.out_report.join("aggregate.csv"), aggregate_csv(&aggs))?;
            #[derive(serde::Serialize)]
            struct EvalRun<'a> {
                task: &'a str,
                camera: &'a str,
                camera_b: &'a Option<String>,
                methods: &'a [String],
                variant: &'a str,
                k: usize,
                hard_pair_fraction: f64,
                seed: u64,
            }
            write_run_json(
                &a.out_report,
                &EvalRun {
                    task: match a.task {
                        EvalTask::Illum => "illum",
                        EvalTask::Sensor => "sensor",
                    },
                    camera: &a.camera,
                    camera_b: &a.camera_b,
                    methods: &a.methods,
                    variant: &a.variant,
                    k: a.k,
                    hard_pair_fraction: a.hard_pair_fraction,
                    seed: a.seed,
                },
            )?;
            print!("{}", render_table(&aggs));
        }
        Command::Preprocess(a) => {
            let (mut mosaic, _meta) = rawf::read_mosaic(&a.input)?;
            if let Some(b) = a.black {
                mosaic.black_level = b;
            }
            if let Some(w) = a.white {
                mosaic.white_level = w;
            }
            let img = demosaic_bilinear(&level_correct(&mosaic))?;
            let img = downsample_bilinear(&img, a.downscale)?;
            rawf::write_image(&a.out, &img)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    #[cfg(feature = "parallel")]
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3u8);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
