//! `pagroup`: encode, group, score, select and evaluate from the command line.

mod args;
mod commands;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use pagroup::io::dataset::Role;
use pagroup::synth::ShapeKind;

use args::ConfigArgs;

#[derive(Parser, Debug)]
#[command(name = "pagroup", version, about = "Pairwise-affinity grouping pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write per-image affinity targets (`<id>.afm`) and supervision sidecars.
    Encode {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Annotation role to encode.
        #[arg(long, default_value = "gt")]
        role: Role,
        /// Fixed positive weight instead of the dataset negatives/positives ratio.
        #[arg(long)]
        pos_weight: Option<f64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Masked weighted BCE of predicted affinities against encoded targets.
    Supervise {
        /// Directory written by `encode`.
        #[arg(long)]
        targets: PathBuf,
        /// Prediction files or directories of `<id>.afm`.
        #[arg(long, required = true, num_args = 1..)]
        predictions: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = pagroup::affinity::DEFAULT_BCE_EPS)]
        eps: f64,
    },
    /// Group affinity maps into candidate regions.
    Group {
        /// Affinity files or directories of `<id>.afm`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Attach objectness scores to every region.
    Score {
        #[arg(long)]
        regions: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        affinity: Vec<PathBuf>,
        #[arg(long)]
        oln_scores: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Keep the top-k regions per image that stay clear of annotated masks.
    Select {
        #[arg(long)]
        regions: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        affinity: Vec<PathBuf>,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        oln_scores: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// AR / AP of proposals against ground truth.
    Eval {
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-threshold recall table.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate synthetic scenes: `dataset.json` plus `<id>.png` label maps.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 2)]
        min_instances: usize,
        #[arg(long, default_value_t = 8)]
        max_instances: usize,
        #[arg(long, value_delimiter = ',', default_value = "rectangle,ellipse,blob")]
        shapes: Vec<ShapeKind>,
        #[arg(long, default_value_t = 1)]
        min_separation: usize,
        #[arg(long)]
        allow_contact: bool,
        #[arg(long)]
        min_extent: Option<usize>,
        #[arg(long)]
        max_extent: Option<usize>,
        #[arg(long, default_value_t = 2000)]
        max_attempts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Draw the masks of one image over a canvas.
    Render {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        image_id: u64,
        #[arg(long)]
        role: Option<Role>,
        /// Background image; a dark canvas when absent.
        #[arg(long)]
        canvas: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Encode { dataset, out, role, pos_weight, jobs } => commands::encode(&dataset, &out, role, pos_weight, jobs),
        Command::Supervise { targets, predictions, out, eps } => commands::supervise(&targets, &predictions, &out, eps),
        Command::Group { inputs, out, cfg, jobs } => commands::group(&inputs, &out, &cfg.resolve()?, jobs),
        Command::Score { regions, affinity, oln_scores, out, jobs } => {
            commands::score(&regions, &affinity, oln_scores.as_deref(), &out, jobs)
        }
        Command::Select { regions, affinity, gt, oln_scores, out, cfg, jobs } => {
            commands::select(&regions, &affinity, &gt, oln_scores.as_deref(), &out, &cfg.resolve()?, jobs)
        }
        Command::Eval { proposals, gt, out, csv, cfg } => commands::eval(&proposals, &gt, &out, csv.as_deref(), &cfg.resolve()?),
        Command::Synth {
            out,
            count,
            height,
            width,
            min_instances,
            max_instances,
            shapes,
            min_separation,
            allow_contact,
            min_extent,
            max_extent,
            max_attempts,
            seed,
            jobs,
        } => {
            let dims = pagroup::GridDims::new(height, width)?;
            let mut spec = pagroup::synth::SceneSpec::new(dims, seed);
            spec.n_instances = (min_instances, max_instances);
            spec.shape_kinds = shapes;
            spec.min_separation = min_separation;
            spec.allow_contact = allow_contact;
            spec.max_attempts = max_attempts;
            spec.extent = (min_extent.unwrap_or(spec.extent.0), max_extent.unwrap_or(spec.extent.1));
            commands::synth(&out, count, &spec, jobs)
        }
        Command::Render { dataset, image_id, role, canvas, out } => {
            commands::render(&dataset, image_id, role, canvas.as_deref(), &out)
        }
    }
}
