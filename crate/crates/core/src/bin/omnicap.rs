use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use omnicap::caption::{caption_output, RecommendationTable};
use omnicap::config::{AblateLayer, ConfigLayer, ModelLayer, PlanLayer, Preset, RunConfig, TrainLayer};
use omnicap::frmetrics::{colorfulness, spatial_information, MetricKind};
use omnicap::model::{load_checkpoint, model_gradcheck, Model, ModelConfig};
use omnicap::numerics::gradcheck::{op_suite, GradCheckConfig};
use omnicap::stats::{compute_mos, screen_subjects, MosRecord, RatingTable};
use omnicap::synth::{generate, write_dataset, SynthConfig};
use omnicap::training::{evaluate, train, Dataset, Manifest};
use omnicap::{ErpImage, Error, Result};

#[derive(Parser)]
#[command(name = "omnicap", version, about = "Omnidirectional image quality assessment and captioning")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat TOML configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// full, toy or micro.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of equatorial viewports.
    #[arg(long = "plan.m", global = true)]
    plan_m: Option<usize>,
    /// Longitude step between viewports.
    #[arg(long = "plan.offset-deg", global = true)]
    plan_offset_deg: Option<f64>,
    #[arg(long = "plan.fov", global = true)]
    plan_fov: Option<f64>,
    /// Viewport side in pixels.
    #[arg(long = "plan.size", global = true)]
    plan_size: Option<usize>,
    /// Viewports kept by the selector.
    #[arg(long = "model.k", global = true)]
    model_k: Option<usize>,
    #[arg(long = "ablate.no-dspn", global = true)]
    no_dspn: bool,
    #[arg(long = "ablate.no-msfs", global = true)]
    no_msfs: bool,
    #[arg(long = "ablate.no-vpfs", global = true)]
    no_vpfs: bool,
    #[arg(long = "train.epochs", global = true)]
    epochs: Option<usize>,
    #[arg(long = "train.batch-size", global = true)]
    batch_size: Option<usize>,
    #[arg(long = "train.lr", global = true)]
    lr: Option<f64>,
}

impl ConfigArgs {
    fn layer(&self) -> Result<ConfigLayer> {
        let preset = match self.preset.as_deref() {
            None => None,
            Some("full") => Some(Preset::Full),
            Some("toy") => Some(Preset::Toy),
            Some("micro") => Some(Preset::Micro),
            Some(other) => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        let flag = |b: bool| b.then_some(true);
        Ok(ConfigLayer {
            preset,
            seed: self.seed,
            plan: PlanLayer {
                m: self.plan_m,
                offset_deg: self.plan_offset_deg,
                fov: self.plan_fov,
                size: self.plan_size,
            },
            model: ModelLayer { k: self.model_k, ..Default::default() },
            ablate: AblateLayer {
                no_dspn: flag(self.no_dspn),
                no_msfs: flag(self.no_msfs),
                no_vpfs: flag(self.no_vpfs),
            },
            train: TrainLayer {
                epochs: self.epochs,
                batch_size: self.batch_size,
                lr_init: self.lr,
                ..Default::default()
            },
        })
    }

    fn resolve(&self) -> Result<RunConfig> {
        let mut layers = Vec::new();
        if let Some(path) = &self.config {
            layers.push(ConfigLayer::load(path)?);
        }
        layers.push(self.layer()?);
        let cfg = RunConfig::resolve(&layers)?;
        cfg.log_resolved();
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Extracts the configured viewports of a panorama.
    Viewports {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// png or erpf.
        #[arg(long, default_value = "png")]
        format: String,
    },
    /// Full-reference quality metrics between two panoramas.
    Metrics {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        distorted: PathBuf,
        /// Metric names; all when omitted.
        #[arg(long = "metric")]
        metrics: Vec<String>,
    },
    /// Spatial information and colorfulness of a panorama.
    Content {
        #[arg(long)]
        input: PathBuf,
    },
    /// Mean opinion scores from a ratings CSV, after subject screening.
    Mos {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keeps every subject.
        #[arg(long)]
        no_screen: bool,
    },
    /// Trains on a manifest; writes checkpoints and the epoch log.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlation and accuracy of a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Quality caption for one panorama.
    Caption {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Recommendation table JSON.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every op and the whole model.
    Gradcheck {
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Entries checked per parameter tensor in the whole-model check.
        #[arg(long, default_value_t = 4)]
        entries: usize,
    },
    /// Writes a synthetic panorama dataset with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
    },
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = cli.config.resolve()?;
    match cli.command {
        Command::Viewports { input, out, format } => {
            if format != "png" && format != "erpf" {
                return Err(Error::Argument(format!("unknown viewport format {format:?}")));
            }
            let img = ErpImage::load(&input)?;
            let plan = cfg.model.plan()?;
            std::fs::create_dir_all(&out)?;
            let mut files = Vec::new();
            for (i, (vp, spec)) in plan.extract(&img).iter().zip(&plan.specs).enumerate() {
                let path = out.join(format!("viewport_{i:02}.{format}"));
                vp.save(&path)?;
                files.push(json!({
                    "path": path,
                    "lat_deg": spec.center.lat.to_degrees(),
                    "lon_deg": spec.center.lon.to_degrees(),
                }));
            }
            print_json(&json!({ "viewports": files }))?;
        }
        Command::Metrics { reference, distorted, metrics } => {
            let r = ErpImage::load(&reference)?;
            let d = ErpImage::load(&distorted)?;
            let kinds = if metrics.is_empty() {
                MetricKind::ALL.to_vec()
            } else {
                metrics.iter().map(|m| MetricKind::parse(m)).collect::<Result<Vec<_>>>()?
            };
            let results = kinds.iter().map(|k| k.compute(&r, &d)).collect::<Result<Vec<_>>>()?;
            print_json(&results)?;
        }
        Command::Content { input } => {
            let img = ErpImage::load(&input)?;
            print_json(&json!({ "si": spatial_information(&img), "cf": colorfulness(&img)? }))?;
        }
        Command::Mos { ratings, out, no_screen } => {
            let table = RatingTable::read_csv(BufReader::new(File::open(&ratings)?))?;
            let report = screen_subjects(&table);
            let used = if no_screen { table } else { table.without_subjects(&report.rejected) };
            let records = compute_mos(&used)?;
            write_atomic(&out, |w| MosRecord::write_csv(&records, w))?;
            print_json(&json!({ "images": records.len(), "screening": report, "screened": !no_screen }))?;
        }
        Command::Train { manifest, out } => {
            let m = Manifest::read(&manifest)?;
            let data = Dataset::load(&m, &cfg.model)?;
            info!("loaded {} images, skipped {}", data.len(), data.skipped);
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("config.json"), cfg.to_json())?;
            let model = Model::<f32>::new(cfg.model.clone(), cfg.seed)?;
            let outcome = train(model, &data, &cfg.train, Some(&out))?;
            let last = outcome.log.last().cloned();
            print_json(&json!({
                "best_epoch": outcome.best_epoch,
                "final": last,
                "checkpoints": [out.join("best.ckpt"), out.join("final.ckpt")],
            }))?;
        }
        Command::Eval { checkpoint, manifest } => {
            let model = load_checkpoint::<f32>(&checkpoint)?;
            let m = Manifest::read(&manifest)?;
            let data = Dataset::load(&m, &model.config)?;
            let idx: Vec<usize> = (0..data.len()).collect();
            let eval = evaluate(&model, &data, &idx, 8)?;
            print_json(&eval.report)?;
        }
        Command::Caption { checkpoint, input, table } => {
            let model = load_checkpoint::<f32>(&checkpoint)?;
            let table = match table {
                Some(p) => RecommendationTable::load(p)?,
                None => RecommendationTable::default(),
            };
            let out = model.predict(&ErpImage::load(&input)?)?;
            let record = caption_output(&out, &table)?;
            println!("{}", record.text);
            print_json(&record)?;
        }
        Command::Gradcheck { tolerance, seeds, entries } => {
            let gc = GradCheckConfig { tolerance, seed: cfg.seed, ..Default::default() };
            let mut reports = op_suite(seeds, &gc)?;
            let mgc = GradCheckConfig { max_entries: Some(entries), ..gc };
            reports.push(model_gradcheck(&ModelConfig::micro(), cfg.seed, &mgc)?);
            let passed = reports.iter().all(|r| r.passed);
            for r in &reports {
                print_json(&json!({ "name": r.name, "max_error": r.max_error, "passed": r.passed }))?;
            }
            print_json(&json!({ "tolerance": tolerance, "passed": passed }))?;
            return Ok(passed);
        }
        Command::Synth { out, n, width, height } => {
            let items = generate(&SynthConfig { n, width, height, seed: cfg.seed })?;
            let manifest = write_dataset(&items, &out)?;
            let per: Vec<usize> = (0..4).map(|s| items.iter().filter(|it| it.situation == s).count()).collect();
            print_json(&json!({
                "manifest": out.join("manifest.csv"),
                "images": manifest.entries.len(),
                "per_situation": per,
            }))?;
        }
    }
    Ok(true)
}

fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        f(&mut w)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", json!({ "error": "usage", "message": first }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(1)
        }
    }
}
