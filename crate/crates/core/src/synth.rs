//! A deterministic stand-in for a trained mask branch.
//!
//! Scenes place lexicon words as axis-aligned word boxes with evenly spaced
//! character boxes. Stacks are rendered from the same target rasterization
//! used for training labels, so decoding a clean stack must give back the
//! word exactly. [`corrupt`] adds Gaussian noise and channel swaps.

use crate::decode::{character_regions, MapProvider, VotingConfig};
use crate::error::{Error, Result};
use crate::evaluation::GtLabel;
use crate::geometry::{AxisRect, Polygon, ScoredBox};
use crate::lexicon::{best_match, CostModel, Lexicon, UnitCost, VotedCost};
use crate::maps::{
    char_channel, Charset, MaskStack, BACKGROUND_CHANNEL, GLOBAL_CHANNEL, NUM_CHANNELS, NUM_CHARS,
};
use crate::targets::{rasterize_char_target, rasterize_global_target, roi_char_boxes, roi_polygon, CharBox};

/// Gap between neighbouring characters as a fraction of the character width.
pub const CHAR_GAP: f64 = 0.10;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64: a counter-based generator. The `k`-th output (from 1) is the
/// finalizer applied to `seed + k * 0x9E3779B97F4A7C15`.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Generator for sub-stream `stream` of `seed`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut base = Self::new(seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
        Self::new(base.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller (one draw per pair of uniforms).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    /// Chance that a character region's dominant channel is swapped.
    pub swap_prob: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            sigma: 0.0,
            swap_prob: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma {} must be >= 0", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.swap_prob) {
            return Err(Error::Config(format!(
                "swap probability {} outside [0, 1]",
                self.swap_prob
            )));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.sigma == 0.0 && self.swap_prob == 0.0
    }

    /// Same parameters with a seed specific to `stream`.
    pub fn for_stream(&self, stream: u64) -> Self {
        Self {
            seed: SplitMix64::derive(self.seed, stream).next_u64(),
            ..*self
        }
    }
}

/// One placed word with its character layout and detector proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthWord {
    pub text: String,
    pub rect: AxisRect,
    pub char_boxes: Vec<CharBox>,
    pub proposal: AxisRect,
}

impl SynthWord {
    /// Lays `text` out left to right inside `rect`: equal character widths
    /// separated by [`CHAR_GAP`] of a width.
    pub fn layout(text: &str, rect: AxisRect, proposal: AxisRect) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::contract("cannot render an empty word"));
        }
        let chars: Vec<char> = text.chars().collect();
        if let Some(bad) = chars.iter().find(|c| !Charset::contains(**c)) {
            return Err(Error::contract(format!("symbol {bad:?} is not in the charset")));
        }
        let n = chars.len() as f64;
        let cw = rect.width() / (n + CHAR_GAP * (n - 1.0));
        let char_boxes = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let x0 = rect.xmin() + i as f64 * cw * (1.0 + CHAR_GAP);
                CharBox::new(AxisRect::new(x0, rect.ymin(), x0 + cw, rect.ymax())?, c)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            text: Charset::filter(text),
            rect,
            char_boxes,
            proposal,
        })
    }

    pub fn polygon(&self) -> Polygon {
        self.rect.to_polygon()
    }
}

/// Renders `word` as seen through its own proposal.
pub fn render_stack(word: &SynthWord, map_h: usize, map_w: usize) -> Result<MaskStack> {
    render_through(word, &word.proposal, map_h, map_w)
}

/// Renders `word` as seen through an arbitrary proposal.
pub fn render_through(
    word: &SynthWord,
    proposal: &AxisRect,
    map_h: usize,
    map_w: usize,
) -> Result<MaskStack> {
    let global = rasterize_global_target(&roi_polygon(&word.polygon(), proposal, map_h, map_w)?, map_h, map_w)?;
    let boxes = roi_char_boxes(&word.char_boxes, proposal, map_h, map_w)?;
    let labels = rasterize_char_target(Some(&boxes), map_h, map_w);

    let n = map_h * map_w;
    let mut data = vec![0.0f32; NUM_CHANNELS * n];
    data[GLOBAL_CHANNEL * n..(GLOBAL_CHANNEL + 1) * n].copy_from_slice(global.values());
    for (cell, &label) in labels.labels.iter().enumerate() {
        if label > 0 {
            data[label as usize * n + cell] = 1.0;
        } else {
            data[BACKGROUND_CHANNEL * n + cell] = 1.0;
        }
    }
    MaskStack::from_data(map_h, map_w, data)
}

/// Applies channel swaps (on the clean regions) and then clamped Gaussian
/// noise. Identical inputs and seed give bit-identical output.
pub fn corrupt(stack: &MaskStack, noise: &NoiseSpec) -> Result<MaskStack> {
    noise.validate()?;
    let mut out = stack.clone();
    if noise.is_identity() {
        return Ok(out);
    }
    let mut rng = SplitMix64::new(noise.seed);
    if noise.swap_prob > 0.0 {
        let w = stack.width();
        for region in character_regions(stack, &VotingConfig::default()) {
            if rng.uniform() >= noise.swap_prob {
                continue;
            }
            let dominant = crate::decode::ProbEntry::from_probs(region.probs).symbol;
            let dominant = Charset::index_of(dominant).expect("charset symbol");
            let mut other = rng.below(NUM_CHARS - 1);
            if other >= dominant {
                other += 1;
            }
            for &(r, c) in &region.pixels {
                let cell = r * w + c;
                let a = out.channel(char_channel(dominant))[cell];
                let b = out.channel(char_channel(other))[cell];
                out.channel_mut(char_channel(dominant))[cell] = b;
                out.channel_mut(char_channel(other))[cell] = a;
            }
        }
    }
    if noise.sigma > 0.0 {
        for v in out.data_mut() {
            *v = (*v as f64 + noise.sigma * rng.normal()).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(out)
}

/// Knobs of [`build_scene`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub image_w: u32,
    pub image_h: u32,
    /// Word box height range in pixels.
    pub min_word_h: f64,
    pub max_word_h: f64,
    /// Extra proposals per word that NMS must suppress.
    pub duplicates_per_word: usize,
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_w: 1280,
            image_h: 960,
            min_word_h: 20.0,
            max_word_h: 48.0,
            duplicates_per_word: 0,
            max_attempts: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub seed: u64,
    pub image_w: u32,
    pub image_h: u32,
    pub words: Vec<SynthWord>,
    /// Detector candidates: one per word, then the duplicates.
    pub candidates: Vec<ScoredBox>,
    /// Word index behind each candidate.
    pub candidate_word: Vec<usize>,
}

impl SynthScene {
    pub fn gt_labels(&self) -> Vec<GtLabel> {
        self.words
            .iter()
            .map(|w| GtLabel {
                polygon: w.polygon(),
                transcription: w.text.clone(),
                care: true,
            })
            .collect()
    }
}

/// Proposal around a word box: each side pushed out by 5-15 % of the
/// box extent.
fn jittered_proposal(rng: &mut SplitMix64, rect: &AxisRect) -> Result<AxisRect> {
    let (w, h) = (rect.width(), rect.height());
    AxisRect::new(
        rect.xmin() - w * rng.range(0.05, 0.15),
        rect.ymin() - h * rng.range(0.05, 0.15),
        rect.xmax() + w * rng.range(0.05, 0.15),
        rect.ymax() + h * rng.range(0.05, 0.15),
    )
}

/// Word box of a plausible size for `text` at a random position in the image.
fn sample_word_rect(rng: &mut SplitMix64, text: &str, cfg: &SceneConfig) -> Result<AxisRect> {
    let h = rng.range(cfg.min_word_h, cfg.max_word_h);
    let w = h * text.chars().count() as f64 * rng.range(0.55, 0.8);
    // leave room for the proposal margin
    let (mx, my) = (0.2 * w, 0.2 * h);
    let span_x = cfg.image_w as f64 - w - 2.0 * mx;
    let span_y = cfg.image_h as f64 - h - 2.0 * my;
    if span_x <= 0.0 || span_y <= 0.0 {
        return Err(Error::Placement(format!(
            "word {text:?} does not fit in a {}x{} image",
            cfg.image_w, cfg.image_h
        )));
    }
    let x = mx + rng.uniform() * span_x;
    let y = my + rng.uniform() * span_y;
    AxisRect::new(x, y, x + w, y + h)
}

/// Samples `n_words` words from `lexicon` and places them without their
/// proposals overlapping.
pub fn build_scene(seed: u64, n_words: usize, lexicon: &Lexicon, cfg: &SceneConfig) -> Result<SynthScene> {
    if lexicon.is_empty() {
        return Err(Error::contract("scene lexicon is empty"));
    }
    let mut rng = SplitMix64::new(seed);
    let mut words: Vec<SynthWord> = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        let text = &lexicon.words()[rng.below(lexicon.len())];
        let mut placed = None;
        for _ in 0..cfg.max_attempts.max(1) {
            let rect = sample_word_rect(&mut rng, text, cfg)?;
            let proposal = jittered_proposal(&mut rng, &rect)?;
            let clear = words.iter().all(|w| {
                w.proposal.dilate(0.05).intersection_area(&proposal) == 0.0
            });
            if clear {
                placed = Some(SynthWord::layout(text, rect, proposal)?);
                break;
            }
        }
        let word = placed.ok_or_else(|| {
            Error::Placement(format!(
                "could not place word {} of {n_words} without overlap after {} attempts",
                words.len() + 1,
                cfg.max_attempts
            ))
        })?;
        words.push(word);
    }

    let mut candidates = Vec::new();
    let mut candidate_word = Vec::new();
    let mut scores = Vec::with_capacity(words.len());
    for (i, w) in words.iter().enumerate() {
        let score = rng.range(0.7, 1.0);
        scores.push(score);
        candidates.push(ScoredBox::new(w.proposal, score)?);
        candidate_word.push(i);
    }
    for _ in 0..cfg.duplicates_per_word {
        for (i, w) in words.iter().enumerate() {
            let p = &w.proposal;
            let (dx, dy) = (p.width() * rng.range(-0.04, 0.04), p.height() * rng.range(-0.04, 0.04));
            let dup = AxisRect::new(p.xmin() + dx, p.ymin() + dy, p.xmax() + dx, p.ymax() + dy)?;
            candidates.push(ScoredBox::new(dup, scores[i] * rng.range(0.8, 0.99))?);
            candidate_word.push(i);
        }
    }
    Ok(SynthScene {
        seed,
        image_w: cfg.image_w,
        image_h: cfg.image_h,
        words,
        candidates,
        candidate_word,
    })
}

/// Serves rendered (and optionally corrupted) stacks for a scene's
/// candidates.
#[derive(Debug, Clone)]
pub struct SceneProvider<'a> {
    pub scene: &'a SynthScene,
    pub noise: NoiseSpec,
    pub map_h: usize,
    pub map_w: usize,
}

impl MapProvider for SceneProvider<'_> {
    fn stack_for(&self, index: usize, proposal: &AxisRect) -> Result<MaskStack> {
        let word = self
            .scene
            .candidate_word
            .get(index)
            .and_then(|&w| self.scene.words.get(w))
            .ok_or_else(|| Error::Pipeline {
                proposal: format!("#{index}"),
                message: "no synthetic word behind this candidate".into(),
            })?;
        let clean = render_through(word, proposal, self.map_h, self.map_w)?;
        corrupt(&clean, &self.noise.for_stream(index as u64))
    }
}

/// Random lowercase words of `min_len..=max_len` letters, without repeats.
pub fn random_lexicon(seed: u64, size: usize, min_len: usize, max_len: usize) -> Lexicon {
    let mut rng = SplitMix64::new(seed);
    let mut seen = std::collections::HashSet::new();
    let mut words = Vec::with_capacity(size);
    while words.len() < size {
        let len = min_len + rng.below(max_len - min_len + 1);
        let w: String = (0..len).map(|_| Charset::SYMBOLS[10 + rng.below(26)]).collect();
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    Lexicon::new(words)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationReport {
    pub trials: usize,
    pub weighted_correct: usize,
    pub unit_correct: usize,
}

impl AblationReport {
    pub fn weighted_accuracy(&self) -> f64 {
        self.weighted_correct as f64 / self.trials.max(1) as f64
    }

    pub fn unit_accuracy(&self) -> f64 {
        self.unit_correct as f64 / self.trials.max(1) as f64
    }
}

/// Renders lexicon words, corrupts them, decodes by pixel voting and
/// counts how often each cost model recovers the source word.
pub fn lexicon_ablation(
    lexicon: &Lexicon,
    trials: usize,
    noise: &NoiseSpec,
    voting: &VotingConfig,
    map_h: usize,
    map_w: usize,
) -> Result<AblationReport> {
    if lexicon.is_empty() {
        return Err(Error::contract("ablation lexicon is empty"));
    }
    let mut rng = SplitMix64::derive(noise.seed, 0xAB1A);
    let models: [&dyn CostModel; 2] = [&VotedCost, &UnitCost];
    let mut correct = [0usize; 2];
    for t in 0..trials {
        let truth = &lexicon.words()[rng.below(lexicon.len())];
        let h = rng.range(20.0, 48.0);
        let w = h * truth.len() as f64 * rng.range(0.55, 0.8);
        let rect = AxisRect::new(100.0, 100.0, 100.0 + w, 100.0 + h)?;
        let proposal = jittered_proposal(&mut rng, &rect)?;
        let word = SynthWord::layout(truth, rect, proposal)?;
        let stack = corrupt(&render_stack(&word, map_h, map_w)?, &noise.for_stream(t as u64))?;
        let (text, probs) = crate::decode::pixel_voting(&stack, voting);
        for (k, model) in models.iter().enumerate() {
            if let Some(m) = best_match(&text, &probs, lexicon, *model, None)? {
                correct[k] += usize::from(&m.word == truth);
            }
        }
    }
    Ok(AblationReport {
        trials,
        weighted_correct: correct[0],
        unit_correct: correct[1],
    })
}
