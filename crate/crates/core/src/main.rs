use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use maskspot::cli::{self, CliError, CliResult, CostKind, EvalMode};
use maskspot::decode::{PipelineConfig, DEFAULT_BG_THRESHOLD, DEFAULT_GLOBAL_THRESHOLD, DEFAULT_NMS_THRESHOLD};
use maskspot::evaluation::DEFAULT_EVAL_IOU;
use maskspot::synth::NoiseSpec;
use maskspot::targets::{DEFAULT_MAP_HEIGHT, DEFAULT_MAP_WIDTH};

#[derive(Parser)]
#[command(name = "maskspot", version, about = "Text spotting mask-branch tools")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Detection,
    EndToEnd,
    WordSpotting,
}

#[derive(Subcommand)]
enum Command {
    /// Write global and character targets for positive proposals.
    GenLabels {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAP_HEIGHT)]
        map_h: usize,
        #[arg(long, default_value_t = DEFAULT_MAP_WIDTH)]
        map_w: usize,
        #[arg(long, default_value_t = 0.5)]
        fg_iou: f64,
    },
    /// Decode mask stacks into spotted words.
    Decode {
        /// Directory holding <image>/<proposal>.mtsr stacks.
        #[arg(long)]
        stacks: PathBuf,
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Match the lexicon with unit edit costs.
        #[arg(long)]
        unit_costs: bool,
        #[arg(long)]
        max_distance: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_NMS_THRESHOLD)]
        nms: f64,
        #[arg(long, default_value_t = 0.0)]
        min_score: f64,
        #[arg(long, default_value_t = DEFAULT_BG_THRESHOLD)]
        bg_threshold: f64,
        #[arg(long, default_value_t = DEFAULT_GLOBAL_THRESHOLD)]
        global_threshold: f64,
        #[arg(long, default_value_t = 1)]
        min_region_pixels: usize,
        /// Worker threads; defaults to MASKSPOT_THREADS or the core count.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Score results against annotations.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::EndToEnd)]
        mode: Mode,
        /// Re-match stored predictions against this lexicon.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        unit_costs: bool,
        #[arg(long, default_value_t = DEFAULT_EVAL_IOU)]
        iou: f64,
        #[arg(long)]
        json: bool,
    },
    /// Generate synthetic scenes with annotations, proposals and stacks.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        scenes: usize,
        #[arg(long, default_value_t = 10)]
        words: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.0)]
        swap: f64,
        #[arg(long, default_value_t = 0)]
        duplicates: usize,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        lexicon_size: usize,
        #[arg(long, default_value_t = DEFAULT_MAP_HEIGHT)]
        map_h: usize,
        #[arg(long, default_value_t = DEFAULT_MAP_WIDTH)]
        map_w: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic loss gradients with central differences.
    GradCheck {
        #[arg(long, default_value_t = 8)]
        height: usize,
        #[arg(long, default_value_t = 8)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        cells: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 0.0, hide = true)]
        perturb: f64,
    },
}

fn costs(unit: bool) -> CostKind {
    if unit {
        CostKind::Unit
    } else {
        CostKind::Weighted
    }
}

fn run(args: Args) -> CliResult<()> {
    match args.command {
        Command::GenLabels { annotations, proposals, out, map_h, map_w, fg_iou } => {
            let manifest = cli::gen_labels(&cli::GenLabelsOptions {
                annotations,
                proposals,
                out_dir: out,
                map_h,
                map_w,
                fg_iou,
            })?;
            println!("wrote {} label pairs", manifest.entries.len());
        }
        Command::Decode {
            stacks,
            proposals,
            out,
            lexicon,
            unit_costs,
            max_distance,
            nms,
            min_score,
            bg_threshold,
            global_threshold,
            min_region_pixels,
            threads,
        } => {
            let mut pipeline = PipelineConfig {
                nms_threshold: nms,
                score_threshold: min_score,
                ..PipelineConfig::default()
            };
            pipeline.spot.voting.bg_threshold = bg_threshold;
            pipeline.spot.voting.min_region_pixels = min_region_pixels;
            pipeline.spot.polygon.threshold = global_threshold;
            let doc = cli::decode(&cli::DecodeOptions {
                stacks_dir: stacks,
                proposals,
                lexicon,
                costs: costs(unit_costs),
                max_distance,
                pipeline,
                threads: threads.unwrap_or_else(cli::default_threads),
            })?;
            doc.save(&out)?;
            let n: usize = doc.images.iter().map(|i| i.instances.len()).sum();
            println!("decoded {n} instances in {} images", doc.images.len());
        }
        Command::Eval { results, annotations, mode, lexicon, unit_costs, iou, json } => {
            let mode = match mode {
                Mode::Detection => EvalMode::Detection,
                Mode::EndToEnd => EvalMode::EndToEnd,
                Mode::WordSpotting => EvalMode::WordSpotting,
            };
            let report = cli::eval(&cli::EvalOptions {
                results,
                annotations,
                mode,
                lexicon,
                costs: costs(unit_costs),
                iou_threshold: iou,
            })?;
            if json {
                print!("{}", cli::report_json(mode, &report));
            } else {
                print!("{}", cli::format_report(mode, &report));
            }
        }
        Command::Synth {
            seed,
            scenes,
            words,
            sigma,
            swap,
            duplicates,
            lexicon,
            lexicon_size,
            map_h,
            map_w,
            out,
        } => {
            let manifest = cli::synth(&cli::SynthOptions {
                seed,
                n_scenes: scenes,
                n_words: words,
                noise: NoiseSpec { sigma, swap_prob: swap, seed },
                duplicates_per_word: duplicates,
                lexicon,
                lexicon_size,
                map_h,
                map_w,
                out_dir: out,
            })?;
            println!("wrote {} scenes, {} words, {} files", manifest.scenes, manifest.words, manifest.files.len());
        }
        Command::GradCheck { height, width, cells, trials, seed, step, tolerance, perturb } => {
            if trials == 0 {
                eprintln!("warning: zero trials, nothing checked");
            }
            let report = cli::grad_check(&cli::GradCheckOptions {
                global_h: height,
                global_w: width,
                char_cells: cells,
                trials,
                seed,
                step,
                tolerance,
                perturb,
            })?;
            println!("global max relative error: {:.3e}", report.global_max_error);
            println!("char max relative error: {:.3e}", report.char_max_error);
            if report.max_error() > tolerance {
                return Err(CliError::runtime(format!(
                    "gradient check failed: {:.3e} > {tolerance:.0e}",
                    report.max_error()
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
