use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amcr::config::RunConfig;
use amcr::data::{generate_dataset, load_image, Manifest};
use amcr::metrics::{MetricsReport, SegmentRow};
use amcr::nn::Prep;
use amcr::pipeline::*;
use amcr::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "amcr", version, about = "Meta-reweighted piecewise aesthetic score regression at desk scale")]
struct Cli {
    /// Run config (sectioned key = value); built-in desk defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; gen-data also uses it as the data seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Manifest to read; defaults to <out>/data/manifest.csv.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    variant: Option<Variant>,
    #[arg(long, global = true)]
    prep: Option<Prep>,
    #[arg(long, global = true)]
    mrn: Option<Switch>,
    #[arg(long, global = true)]
    eca: Option<Switch>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes a synthetic dataset to <out>/data.
    GenData {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Trains the binary pseudo-labeller into <out>/c2.ckpt.
    TrainBinary,
    /// Labels train and valid with c2.ckpt into <out>/split.csv.
    PseudoSplit,
    /// Trains the configured variant; PCR needs c2.ckpt and split.csv.
    Train,
    /// Scores the test split, or a prediction file, into metrics.csv.
    Evaluate {
        /// id,prediction,ground_truth rows to score instead of a model.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Prints the score of one image.
    Predict {
        #[arg(long)]
        image: PathBuf,
    },
    /// Runs the ablation matrix into <out>/ablation.csv.
    Ablate,
    /// Binary-classifier correctness per score segment into segments.csv.
    ReportSegments,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 3,
        Error::Data(_) => 4,
        Error::Format(_) | Error::Csv(_) => 5,
        Error::Version { .. } => 6,
        Error::Dependency(_) => 7,
        Error::Io(_) => 8,
        Error::Shape(_) | Error::Param(_) | Error::NonFinite(_) | Error::Tape(_) | Error::State(_) => 9,
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    manifest: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn load_manifest(&self) -> Result<Manifest> {
        Manifest::load(&self.manifest).map_err(|e| match e {
            Error::Io(_) => Error::Dependency(format!("cannot read manifest {}: {e}", self.manifest.display())),
            e => e,
        })
    }

    fn load_data(&self) -> Result<(Manifest, LoadedData)> {
        let m = self.load_manifest()?;
        let data = LoadedData::load(&m, &self.manifest, self.cfg.model.prep, self.cfg.model.input_side)?;
        Ok((m, data))
    }

    fn single_name(&self) -> String {
        format!("{}.ckpt", self.cfg.train.variant)
    }

    fn load_models(&self) -> Result<Models> {
        let cfg = &self.cfg;
        match cfg.train.variant {
            Variant::R | Variant::Cr => Ok(Models::Single(load_model(&self.path(&self.single_name()), cfg, 10)?)),
            Variant::Pcr => {
                let c2 = load_model(&self.path("c2.ckpt"), cfg, 2)?;
                let r_all = load_model(&self.path("pcr_all.ckpt"), cfg, 10)?;
                let branch = |b: u8| -> Result<Option<TrainedModel>> {
                    let p = self.path(&format!("pcr_r{b}.ckpt"));
                    if p.exists() {
                        load_model(&p, cfg, 10).map(Some)
                    } else {
                        log::warn!("{} absent, branch {b} uses the all-data model", p.display());
                        Ok(None)
                    }
                };
                let (r0, r1) = (branch(0)?, branch(1)?);
                let split = read_split_csv(&self.path("split.csv"))?;
                Ok(Models::Pcr { c2, r0, r1, r_all, split })
            }
        }
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    if let Some(v) = cli.variant {
        cfg.train.variant = v;
    }
    if let Some(p) = cli.prep {
        cfg.model.prep = p;
    }
    if let Some(m) = cli.mrn {
        cfg.train.mrn = m == Switch::On;
    }
    if let Some(e) = cli.eca {
        cfg.model.eca = e == Switch::On;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn threads() -> Result<usize> {
    match std::env::var("AMCR_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("AMCR_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(1),
    }
}

fn print_segments(rows: &[SegmentRow]) {
    println!("segment    n      error");
    for r in rows {
        match r.error_rate() {
            Some(e) => println!("{:<10} {:<6} {:.2}%", r.label, r.total, 100.0 * e),
            None => println!("{:<10} {:<6} -", r.label, r.total),
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli)?;
    let manifest = cli.manifest.clone().unwrap_or_else(|| cli.out.join("data").join("manifest.csv"));
    std::fs::create_dir_all(&cli.out)?;
    let ctx = Ctx { cfg, out: cli.out.clone(), manifest };
    let cfg = &ctx.cfg;
    match cli.command {
        Command::GenData { n } => {
            let dir = ctx.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
            let seed = cli.seed.unwrap_or(cfg.data.seed);
            let m = generate_dataset(&cfg.data.synth, n.unwrap_or(cfg.data.n), seed, &dir)?;
            m.save(&ctx.manifest)?;
            println!("{} samples -> {}", m.len(), ctx.manifest.display());
        }
        Command::TrainBinary => {
            let (m, data) = ctx.load_data()?;
            let meta = run_meta_set(cfg, &data)?;
            let c2 = train_pseudo_labeller(cfg, &data, &m, &meta)?;
            save_model(&ctx.path("c2.ckpt"), &c2, cfg)?;
            println!("c2 -> {}", ctx.path("c2.ckpt").display());
        }
        Command::PseudoSplit => {
            let c2 = load_model(&ctx.path("c2.ckpt"), cfg, 2)?;
            let (_, data) = ctx.load_data()?;
            let split = pseudo_split(&c2.net, &data.train, &data.valid)?;
            write_split_csv(&ctx.path("split.csv"), &split)?;
            let c = split.counts();
            println!("train 0/1: {}/{}  valid 0/1: {}/{}", c[0][0], c[0][1], c[1][0], c[1][1]);
        }
        Command::Train => {
            let (_, data) = ctx.load_data()?;
            let meta = run_meta_set(cfg, &data)?;
            match cfg.train.variant {
                Variant::R | Variant::Cr => {
                    let model = train_single(cfg, &data, &meta)?;
                    save_model(&ctx.path(&ctx.single_name()), &model, cfg)?;
                    println!("{} -> {}", cfg.train.variant, ctx.path(&ctx.single_name()).display());
                }
                Variant::Pcr => {
                    load_model(&ctx.path("c2.ckpt"), cfg, 2)?;
                    let split = read_split_csv(&ctx.path("split.csv"))?;
                    let r_all = train_single(cfg, &data, &meta)?;
                    save_model(&ctx.path("pcr_all.ckpt"), &r_all, cfg)?;
                    let branches = train_pcr_branches(cfg, &data, &split, &meta)?;
                    for (b, model) in branches.iter().enumerate() {
                        let p = ctx.path(&format!("pcr_r{b}.ckpt"));
                        match model {
                            Some(model) => save_model(&p, model, cfg)?,
                            None if p.exists() => std::fs::remove_file(&p)?,
                            None => {}
                        }
                    }
                    println!("pcr -> {}", ctx.out.display());
                }
            }
        }
        Command::Evaluate { predictions } => {
            let rows = match predictions {
                Some(p) => read_scatter_csv(&p)?,
                None => {
                    let models = ctx.load_models()?;
                    let (_, data) = ctx.load_data()?;
                    evaluate_models(&models, &data.test)?.1
                }
            };
            if rows.is_empty() {
                return Err(Error::Data("nothing to evaluate".into()));
            }
            let pred: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let truth: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let report = MetricsReport::compute(&pred, &truth)?;
            write_metrics_csv(&ctx.path("metrics.csv"), &report)?;
            write_scatter_csv(&ctx.path("scatter.csv"), &rows)?;
            print!("{report}");
        }
        Command::Predict { image } => {
            let models = ctx.load_models()?;
            let img = load_image::<f64>(&image)?;
            let x = prepare_image(&img, cfg.model.prep, cfg.model.input_side)?;
            println!("{:.4}", models.predict(&[&x])?[0]);
        }
        Command::Ablate => {
            let m = ctx.load_manifest()?;
            let rows = run_ablation(cfg, &m, &ctx.manifest, threads()?)?;
            write_ablation_csv(&ctx.path("ablation.csv"), &rows)?;
            println!("{}", ABLATION_HEADER.join(","));
            for r in &rows {
                println!("{}", r.record().join(","));
            }
        }
        Command::ReportSegments => {
            let c2 = load_model(&ctx.path("c2.ckpt"), cfg, 2)?;
            let (_, data) = ctx.load_data()?;
            let rows = classifier_segments(&c2, &data.test)?;
            write_segment_csv(&ctx.path("segments.csv"), &rows)?;
            print_segments(&rows);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
