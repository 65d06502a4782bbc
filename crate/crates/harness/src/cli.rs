//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data or
//! format error, 3 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use grassnet_core::knowledge::{
    build_cooccurrence_graph, build_wup_graph, parse_categories, CooccurrenceCorpus, ProximityGraph, Taxonomy,
    COOCCURRENCE_THRESHOLD, WUP_THRESHOLD,
};
use grassnet_core::model::{GraSSNet, Knowledge};
use grassnet_core::proposals::parse_boxes;
use grassnet_core::tensor::{read_gtsr, read_pgm, write_gtsr, write_pgm};
use grassnet_core::{Error, Result, Tensor};

use crate::ablate::{ablate, ablation_csv};
use crate::config::RunConfig;
use crate::dataset::{self, Dataset};
use crate::evaluate::{evaluate, report_csv};
use crate::synth::{generate_dataset, SaliencySample};
use crate::train::{loss_csv, train};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "grassnet", version, about = "Knowledge-graph guided saliency prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GraphKind {
    Cooccurrence,
    Wup,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a GRAPH1 proximity graph from a corpus or a taxonomy.
    BuildGraph {
        #[arg(long, value_enum)]
        kind: GraphKind,
        /// Corpus (one scene per line) or taxonomy (`child<TAB>parent`).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        categories: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Edge threshold stored in the file; defaults per kind.
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset and write a checkpoint directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated graph files, co-occurrence first when both are used.
        #[arg(long, default_value = "")]
        graphs: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Seed of the shuffled-AUC resampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Predict one saliency map.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        /// `[3,H,W]` GTSR1 tensor or grayscale PGM.
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        boxes: PathBuf,
        /// Output path; `.gtsr` and `.pgm` files are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare knowledge selections across seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn build_graph(kind: GraphKind, input: &Path, categories: &Path, theta: Option<f64>) -> Result<ProximityGraph> {
    let cats = parse_categories(&fs::read_to_string(categories)?);
    let text = fs::read_to_string(input)?;
    let (g, default_theta) = match kind {
        GraphKind::Cooccurrence => (
            build_cooccurrence_graph(&CooccurrenceCorpus::parse(&text), &cats)?,
            COOCCURRENCE_THRESHOLD,
        ),
        GraphKind::Wup => (build_wup_graph(&Taxonomy::parse(&text)?, &cats)?, WUP_THRESHOLD),
    };
    g.with_theta(theta.unwrap_or(default_theta))
}

fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut bytes = Vec::new();
    write_gtsr(&mut bytes, t)?;
    fs::write(path, bytes)?;
    Ok(())
}

fn load_image(path: &Path) -> Result<Tensor> {
    let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let t = if is_pgm {
        read_pgm(fs::File::open(path)?)?
    } else {
        read_gtsr(fs::File::open(path)?)?
    };
    match *t.shape() {
        [3, _, _] => Ok(t),
        [1, h, w] => {
            let gray = t.into_data();
            Tensor::new(&[3, h, w], gray.repeat(3))
        }
        ref s => Err(Error::shape(format!("image must be [3,H,W] or [1,H,W], got {s:?}"))),
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::BuildGraph {
            kind,
            input,
            categories,
            out,
            theta,
        } => {
            let g = build_graph(kind, &input, &categories, theta)?;
            fs::write(out, g.to_text())?;
        }
        Command::GenData { spec, count, out } => {
            let config = RunConfig::load(&spec)?;
            let scene = config.scene_spec()?;
            let samples = generate_dataset(&scene, count as usize)?;
            let data = Dataset {
                width: scene.width,
                height: scene.height,
                categories: scene.categories,
                samples,
            };
            dataset::save(&out, &data)?;
        }
        Command::Train {
            config,
            data,
            graphs,
            out,
        } => {
            let config = RunConfig::load(&config)?;
            let data = dataset::load(&data)?;
            let sources = config.model.knowledge.sources();
            let files: Vec<&str> = graphs.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            if files.len() != sources.len() {
                return Err(Error::invalid(format!(
                    "knowledge `{}` needs {} graph file(s), got {}",
                    config.model.knowledge,
                    sources.len(),
                    files.len()
                )));
            }
            let graphs = files
                .iter()
                .zip(sources)
                .map(|(f, &s)| {
                    let g = ProximityGraph::parse(&fs::read_to_string(f)?)?;
                    g.expect_labels(&data.categories)?;
                    g.with_theta(config.model.theta(s))
                })
                .collect::<Result<Vec<_>>>()?;
            let (model, log) = train(&config, &data.samples, &graphs)?;
            let meta = vec![
                ("image".to_string(), format!("{}x{}", data.width, data.height)),
                ("categories".to_string(), data.categories.join(",")),
            ];
            model.save(&out, &meta)?;
            fs::write(out.join("loss.csv"), loss_csv(&log))?;
        }
        Command::Eval {
            ckpt,
            data,
            report,
            seed,
        } => {
            let (model, meta) = GraSSNet::load(&ckpt)?;
            let data = dataset::load(&data)?;
            let want = format!("{}x{}", data.width, data.height);
            if let Some((_, size)) = meta.iter().find(|(k, _)| k == "image") {
                if *size != want {
                    return Err(Error::shape(format!(
                        "checkpoint trained on {size} images, data is {want}"
                    )));
                }
            }
            let refs: Vec<&SaliencySample> = data.samples.iter().collect();
            let reports = evaluate(&model, &refs, seed)?;
            fs::write(report, report_csv(&reports))?;
        }
        Command::Predict {
            ckpt,
            image,
            boxes,
            out,
        } => {
            let (model, _) = GraSSNet::load(&ckpt)?;
            let image = load_image(&image)?;
            let boxes: Vec<_> = parse_boxes(&fs::read_to_string(&boxes)?)?
                .into_iter()
                .map(|(b, _)| b)
                .collect();
            let map = model.predict(&image, &boxes)?;
            write_tensor(&out.with_extension("gtsr"), &map)?;
            let mut pgm = Vec::new();
            write_pgm(&mut pgm, &map)?;
            fs::write(out.with_extension("pgm"), pgm)?;
        }
        Command::Ablate { config, out } => {
            let config = RunConfig::load(&config)?;
            let rows = ablate(&config, &Knowledge::ALL)?;
            fs::write(out, ablation_csv(&rows))?;
        }
    }
    Ok(())
}
