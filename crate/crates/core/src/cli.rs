//! Command implementations behind the `maskspot` binary.
//!
//! Exit codes: 0 success, 1 validation or parse error, 2 pipeline or
//! runtime error.

use std::collections::HashMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::decode::{run_pipeline, MapProvider, PipelineConfig};
use crate::documents::{
    AnnotatedImage, AnnotationDocument, CharBoxRecord, InstanceRecord, ProposalImage,
    ProposalRecord, ProposalsDocument, ResultImage, ResultsDocument, SpotRecord,
};
use crate::error::Error;
use crate::evaluation::{eval_detection, eval_end_to_end, EndToEndMode, EvalReport};
use crate::geometry::{bounding_rect, rect_iou, AxisRect};
use crate::lexicon::{best_match, CostModel, Lexicon, UnitCost, VotedCost};
use crate::losses::{char_loss, finite_diff_check, global_loss, LossReport, CHAR_CLASSES};
use crate::maps::{load_map_stack, save_map_stack, write_tensor, MaskStack, Tensor};
use crate::synth::{build_scene, random_lexicon, NoiseSpec, SceneConfig, SceneProvider, SplitMix64};
use crate::targets::build_mask_targets;

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "MASKSPOT_THREADS";

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Format { .. }
            | Error::Geometry(_)
            | Error::Contract(_)
            | Error::Config(_)
            | Error::Document(_) => 1,
            Error::Io(_) | Error::Placement(_) | Error::Pipeline { .. } => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_context(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::runtime(format!("{}: {e}", path.display()))
}

/// File-name-safe form of an id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn load_lexicon(path: &Path) -> CliResult<Lexicon> {
    let file = fs::File::open(path).map_err(io_context(path))?;
    let lex = Lexicon::read(BufReader::new(file))?;
    if lex.is_empty() {
        return Err(CliError::validation(format!(
            "{}: lexicon has no usable words",
            path.display()
        )));
    }
    Ok(lex)
}

/// Worker count from [`THREADS_ENV`], else the available parallelism.
pub fn default_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Maps `f` over `items` on up to `threads` workers, keeping input order.
fn ordered_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                s.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

// ---------------------------------------------------------------- gen-labels

#[derive(Debug, Clone)]
pub struct GenLabelsOptions {
    pub annotations: PathBuf,
    pub proposals: PathBuf,
    pub out_dir: PathBuf,
    pub map_h: usize,
    pub map_w: usize,
    /// Minimum IoU between a proposal and an instance's bounding rect.
    pub fg_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub image: String,
    pub proposal: String,
    pub instance: String,
    pub global: String,
    pub chars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelManifest {
    pub map_h: usize,
    pub map_w: usize,
    pub entries: Vec<LabelEntry>,
}

/// Writes global and character targets for every positive proposal.
///
/// The global map is a `[H, W]` MTSR tensor of {0, 1}; the character map is
/// a `[H, W]` tensor of labels in {-1, 0, 1..=36} stored as floats.
pub fn gen_labels(opts: &GenLabelsOptions) -> CliResult<LabelManifest> {
    let annotations = AnnotationDocument::load(&opts.annotations)?;
    let proposals = ProposalsDocument::load(&opts.proposals)?;
    let by_image: HashMap<&str, &ProposalImage> =
        proposals.images.iter().map(|p| (p.id.as_str(), p)).collect();

    let mut entries = Vec::new();
    for image in &annotations.images {
        let instances = image
            .instances
            .iter()
            .map(|r| r.to_instance(&image.id))
            .collect::<Result<Vec<_>, _>>()?;
        let Some(props) = by_image.get(image.id.as_str()) else {
            continue;
        };
        let rects = instances
            .iter()
            .map(|i| bounding_rect(&i.polygon))
            .collect::<Result<Vec<_>, _>>()?;
        let dir = opts.out_dir.join(file_stem(&image.id));
        for prop in &props.proposals {
            let rect = prop.to_scored_box(&image.id)?.rect;
            let best = rects
                .iter()
                .enumerate()
                .map(|(i, r)| (i, rect_iou(&rect, r)))
                .fold(None::<(usize, f64)>, |best, (i, v)| match best {
                    Some((_, b)) if b >= v => best,
                    _ => Some((i, v)),
                });
            let Some((inst_idx, iou)) = best else { continue };
            if iou < opts.fg_iou {
                continue;
            }
            let targets = build_mask_targets(&instances[inst_idx], &rect, opts.map_h, opts.map_w)?;
            fs::create_dir_all(&dir).map_err(io_context(&dir))?;
            let stem = file_stem(&prop.id);
            let global_name = format!("{stem}.global.mtsr");
            let chars_name = format!("{stem}.chars.mtsr");
            let dims = vec![opts.map_h as u32, opts.map_w as u32];
            write_file(
                &dir.join(&global_name),
                &Tensor::new(dims.clone(), targets.global.values().to_vec())?,
            )?;
            write_file(
                &dir.join(&chars_name),
                &Tensor::new(dims, targets.char_labels.labels.iter().map(|&l| l as f32).collect())?,
            )?;
            let rel = |name: &str| format!("{}/{name}", file_stem(&image.id));
            entries.push(LabelEntry {
                image: image.id.clone(),
                proposal: prop.id.clone(),
                instance: image.instances[inst_idx].id.clone(),
                global: rel(&global_name),
                chars: rel(&chars_name),
            });
        }
    }
    let manifest = LabelManifest {
        map_h: opts.map_h,
        map_w: opts.map_w,
        entries,
    };
    fs::create_dir_all(&opts.out_dir).map_err(io_context(&opts.out_dir))?;
    let path = opts.out_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("serializable") + "\n")
        .map_err(io_context(&path))?;
    Ok(manifest)
}

fn write_file(path: &Path, tensor: &Tensor) -> CliResult<()> {
    let file = fs::File::create(path).map_err(io_context(path))?;
    write_tensor(tensor, std::io::BufWriter::new(file))?;
    Ok(())
}

fn write_stack(path: &Path, stack: &MaskStack) -> CliResult<()> {
    let file = fs::File::create(path).map_err(io_context(path))?;
    save_map_stack(stack, std::io::BufWriter::new(file))?;
    Ok(())
}

// -------------------------------------------------------------------- decode

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostKind {
    #[default]
    Weighted,
    Unit,
}

impl CostKind {
    pub fn model(self) -> &'static dyn CostModel {
        match self {
            CostKind::Weighted => &VotedCost,
            CostKind::Unit => &UnitCost,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecodeOptions {
    pub stacks_dir: PathBuf,
    pub proposals: PathBuf,
    pub lexicon: Option<PathBuf>,
    pub costs: CostKind,
    pub max_distance: Option<f64>,
    pub pipeline: PipelineConfig,
    pub threads: usize,
}

/// Reads `<stacks_dir>/<image>/<proposal>.mtsr` on demand.
struct FileProvider<'a> {
    dir: PathBuf,
    image: &'a ProposalImage,
}

impl MapProvider for FileProvider<'_> {
    fn stack_for(&self, index: usize, _: &AxisRect) -> crate::Result<MaskStack> {
        let id = &self.image.proposals[index].id;
        let path = self.dir.join(format!("{}.mtsr", file_stem(id)));
        let named = |message: String| Error::Pipeline {
            proposal: format!("{}/{id}", self.image.id),
            message,
        };
        let file = fs::File::open(&path)
            .map_err(|e| named(format!("cannot open {}: {e}", path.display())))?;
        load_map_stack(BufReader::new(file)).map_err(|e| named(format!("{}: {e}", path.display())))
    }
}

fn decode_image(
    image: &ProposalImage,
    opts: &DecodeOptions,
    lexicon: Option<&Lexicon>,
) -> CliResult<ResultImage> {
    let candidates = image
        .proposals
        .iter()
        .map(|p| p.to_scored_box(&image.id))
        .collect::<Result<Vec<_>, _>>()?;
    let provider = FileProvider {
        dir: opts.stacks_dir.join(file_stem(&image.id)),
        image,
    };
    let spotted = run_pipeline(&candidates, &provider, &opts.pipeline)?;
    let mut instances = Vec::with_capacity(spotted.len());
    for inst in &spotted {
        let mut rec = SpotRecord::from_instance(&image.proposals[inst.proposal_index].id, inst);
        if let (Some(lex), false) = (lexicon, inst.text.is_empty()) {
            if let Some(m) = best_match(&inst.text, &inst.probs, lex, opts.costs.model(), opts.max_distance)? {
                rec.matched = Some(m.word);
                rec.distance = Some(m.distance);
            }
        }
        instances.push(rec);
    }
    Ok(ResultImage {
        id: image.id.clone(),
        instances,
    })
}

/// Runs the spotting pipeline over file-backed stacks.
pub fn decode(opts: &DecodeOptions) -> CliResult<ResultsDocument> {
    let proposals = ProposalsDocument::load(&opts.proposals)?;
    let lexicon = opts.lexicon.as_deref().map(load_lexicon).transpose()?;
    let images = ordered_map(&proposals.images, opts.threads, |img| {
        decode_image(img, opts, lexicon.as_ref())
    })
    .into_iter()
    .collect::<CliResult<Vec<_>>>()?;
    Ok(ResultsDocument::new(images))
}

// ---------------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Detection,
    EndToEnd,
    WordSpotting,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Detection => "detection",
            EvalMode::EndToEnd => "end_to_end",
            EvalMode::WordSpotting => "word_spotting",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub results: PathBuf,
    pub annotations: PathBuf,
    pub mode: EvalMode,
    pub lexicon: Option<PathBuf>,
    pub costs: CostKind,
    pub iou_threshold: f64,
}

/// Pooled report over every image in either document.
pub fn eval(opts: &EvalOptions) -> CliResult<EvalReport> {
    let results = ResultsDocument::load(&opts.results)?;
    let annotations = AnnotationDocument::load(&opts.annotations)?;
    let lexicon = opts.lexicon.as_deref().map(load_lexicon).transpose()?;
    let by_image: HashMap<&str, &ResultImage> =
        results.images.iter().map(|r| (r.id.as_str(), r)).collect();
    let empty = ResultImage {
        id: String::new(),
        instances: Vec::new(),
    };
    let mut ids: Vec<&str> = annotations.images.iter().map(|a| a.id.as_str()).collect();
    let annotated: HashMap<&str, &AnnotatedImage> =
        annotations.images.iter().map(|a| (a.id.as_str(), a)).collect();
    ids.extend(
        results
            .images
            .iter()
            .map(|r| r.id.as_str())
            .filter(|id| !annotated.contains_key(id)),
    );

    let mut reports = Vec::with_capacity(ids.len());
    for id in ids {
        let gts = annotated
            .get(id)
            .map(|a| {
                a.instances
                    .iter()
                    .map(|r| r.to_label(id))
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()?
            .unwrap_or_default();
        let res = by_image.get(id).copied().unwrap_or(&empty);
        let mut dets = Vec::with_capacity(res.instances.len());
        for rec in &res.instances {
            let mut det = rec.to_detection(id)?;
            if let Some(lex) = &lexicon {
                let probs = rec.prob_table()?;
                if probs.len() == rec.text.chars().count() && !rec.text.is_empty() {
                    if let Some(m) = best_match(&rec.text, &probs, lex, opts.costs.model(), None)? {
                        det.text = m.word;
                    }
                }
            }
            dets.push(det);
        }
        let report = match opts.mode {
            EvalMode::Detection => eval_detection(&dets, &gts, opts.iou_threshold)?,
            EvalMode::EndToEnd => {
                eval_end_to_end(&dets, &gts, EndToEndMode::EndToEnd, opts.iou_threshold)?
            }
            EvalMode::WordSpotting => {
                eval_end_to_end(&dets, &gts, EndToEndMode::WordSpotting, opts.iou_threshold)?
            }
        };
        reports.push(report);
    }
    Ok(EvalReport::pooled(&reports))
}

pub fn format_report(mode: EvalMode, report: &EvalReport) -> String {
    format!(
        "mode: {}\nprecision: {:.4}\nrecall: {:.4}\nfmeasure: {:.4}\n",
        mode.name(),
        report.precision,
        report.recall,
        report.fmeasure
    )
}

pub fn report_json(mode: EvalMode, report: &EvalReport) -> String {
    serde_json::json!({
        "mode": mode.name(),
        "precision": report.precision,
        "recall": report.recall,
        "fmeasure": report.fmeasure,
        "true_positives": report.true_positives,
        "detections": report.detections,
        "care_gts": report.care_gts,
    })
    .to_string()
        + "\n"
}

// --------------------------------------------------------------------- synth

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub seed: u64,
    pub n_scenes: usize,
    pub n_words: usize,
    pub noise: NoiseSpec,
    pub duplicates_per_word: usize,
    pub lexicon: Option<PathBuf>,
    pub lexicon_size: usize,
    pub map_h: usize,
    pub map_w: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub scenes: usize,
    pub words: usize,
    pub files: Vec<ManifestFile>,
}

/// Writes annotations, proposals, the lexicon and one MTSR stack per
/// candidate, plus a manifest listing every file.
pub fn synth(opts: &SynthOptions) -> CliResult<SynthManifest> {
    opts.noise.validate()?;
    let lexicon = match &opts.lexicon {
        Some(p) => load_lexicon(p)?,
        None => random_lexicon(opts.seed, opts.lexicon_size.max(1), 3, 10),
    };
    let out = &opts.out_dir;
    fs::create_dir_all(out.join("stacks")).map_err(io_context(out))?;
    let scene_cfg = SceneConfig {
        duplicates_per_word: opts.duplicates_per_word,
        ..SceneConfig::default()
    };

    let mut files = Vec::new();
    let mut ann_images = Vec::with_capacity(opts.n_scenes);
    let mut prop_images = Vec::with_capacity(opts.n_scenes);
    let mut words = 0;
    for s in 0..opts.n_scenes {
        let scene_seed = SplitMix64::derive(opts.seed, s as u64).next_u64();
        let scene = build_scene(scene_seed, opts.n_words, &lexicon, &scene_cfg)?;
        let id = format!("scene_{s:05}");
        words += scene.words.len();
        ann_images.push(AnnotatedImage {
            id: id.clone(),
            width: scene.image_w,
            height: scene.image_h,
            instances: scene
                .words
                .iter()
                .enumerate()
                .map(|(i, w)| InstanceRecord {
                    id: format!("w{i:03}"),
                    polygon: w.polygon().to_flat(),
                    transcription: w.text.clone(),
                    care: true,
                    char_boxes: Some(
                        w.char_boxes
                            .iter()
                            .map(|b| CharBoxRecord {
                                rect: b.rect.as_array(),
                                label: b.label().to_string(),
                            })
                            .collect(),
                    ),
                })
                .collect(),
        });
        let provider = SceneProvider {
            scene: &scene,
            noise: opts.noise.for_stream(s as u64),
            map_h: opts.map_h,
            map_w: opts.map_w,
        };
        let dir = out.join("stacks").join(&id);
        fs::create_dir_all(&dir).map_err(io_context(&dir))?;
        let mut proposals = Vec::with_capacity(scene.candidates.len());
        for (j, cand) in scene.candidates.iter().enumerate() {
            let pid = format!("p{j:03}");
            let stack = provider.stack_for(j, &cand.rect)?;
            let path = dir.join(format!("{pid}.mtsr"));
            write_stack(&path, &stack)?;
            files.push(relative_file(out, &path)?);
            proposals.push(ProposalRecord {
                id: pid,
                rect: cand.rect.as_array(),
                score: cand.score,
            });
        }
        prop_images.push(ProposalImage { id, proposals });
    }

    let ann = out.join("annotations.json");
    AnnotationDocument::new(ann_images).save(&ann)?;
    let props = out.join("proposals.json");
    ProposalsDocument::new(prop_images).save(&props)?;
    let lex_path = out.join("lexicon.txt");
    fs::write(&lex_path, lexicon.words().join("\n") + "\n").map_err(io_context(&lex_path))?;
    for p in [&ann, &props, &lex_path] {
        files.push(relative_file(out, p)?);
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = SynthManifest {
        seed: opts.seed,
        scenes: opts.n_scenes,
        words,
        files,
    };
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("serializable") + "\n")
        .map_err(io_context(&path))?;
    Ok(manifest)
}

fn relative_file(root: &Path, path: &Path) -> CliResult<ManifestFile> {
    let bytes = fs::metadata(path).map_err(io_context(path))?.len();
    let rel = path
        .strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/");
    Ok(ManifestFile { path: rel, bytes })
}

// ---------------------------------------------------------------- grad-check

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub global_h: usize,
    pub global_w: usize,
    pub char_cells: usize,
    pub trials: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Added to every analytic gradient entry; a negative control.
    pub perturb: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            global_h: 8,
            global_w: 8,
            char_cells: 64,
            trials: 20,
            seed: 0,
            step: 1e-3,
            tolerance: 1e-4,
            perturb: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub trials: usize,
    pub global_max_error: f64,
    pub char_max_error: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.global_max_error.max(self.char_max_error)
    }
}

/// Random logits in [-5, 5] with {0, 1} targets.
pub fn random_global_case(rng: &mut SplitMix64, h: usize, w: usize) -> (Array2<f64>, Array2<f64>) {
    let logits = Array2::from_shape_simple_fn((h, w), || rng.range(-5.0, 5.0));
    let target = Array2::from_shape_simple_fn((h, w), || (rng.uniform() < 0.5) as u8 as f64);
    (logits, target)
}

/// Random `n x 37` logits in [-5, 5] with labels drawn from {-1, 0..=36}.
pub fn random_char_case(rng: &mut SplitMix64, n: usize) -> (Array2<f64>, Array1<i32>) {
    let logits = Array2::from_shape_simple_fn((n, CHAR_CLASSES), || rng.range(-5.0, 5.0));
    let labels = Array1::from_shape_simple_fn(n, || rng.below(CHAR_CLASSES + 1) as i32 - 1);
    (logits, labels)
}

/// Central-difference check of both losses on random inputs.
pub fn grad_check(opts: &GradCheckOptions) -> CliResult<GradCheckReport> {
    let mut rng = SplitMix64::new(opts.seed);
    let perturb = |r: LossReport| LossReport {
        value: r.value,
        gradient: r.gradient + opts.perturb,
    };
    let mut report = GradCheckReport {
        trials: opts.trials,
        global_max_error: 0.0,
        char_max_error: 0.0,
    };
    for _ in 0..opts.trials {
        let (logits, target) = random_global_case(&mut rng, opts.global_h, opts.global_w);
        let err = finite_diff_check(
            |x: ArrayView2<f64>| global_loss(x, target.view()).map(perturb),
            &logits,
            opts.step,
        )?;
        report.global_max_error = report.global_max_error.max(err);

        let (logits, labels) = random_char_case(&mut rng, opts.char_cells);
        let err = finite_diff_check(
            |x: ArrayView2<f64>| char_loss(x, labels.view()).map(perturb),
            &logits,
            opts.step,
        )?;
        report.char_max_error = report.char_max_error.max(err);
    }
    Ok(report)
}
