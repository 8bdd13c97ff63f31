//! Inference post-processing: binarization, connected components, pixel
//! voting, polygon extraction and the end-to-end spotting pipeline.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geometry::{nms_indices, AxisRect, Point, Polygon, ScoredBox};
use crate::maps::{char_channel, Charset, MaskStack, ScoreMap, BACKGROUND_CHANNEL, NUM_CHARS};
use crate::targets::denormalize_from_roi;

/// 192 on the 0-255 scale.
pub const DEFAULT_BG_THRESHOLD: f64 = 192.0 / 255.0;
pub const DEFAULT_GLOBAL_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SIMPLIFY_EPSILON: f64 = 1.0;
pub const DEFAULT_NMS_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMap {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<bool>,
}

impl BinaryMap {
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col]
    }

    fn get_signed(&self, row: i64, col: i64) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.height
            && (col as usize) < self.width
            && self.cells[row as usize * self.width + col as usize]
    }
}

/// Cell is set iff its value is at least `threshold`.
pub fn binarize(map: &ScoreMap, threshold: f64) -> BinaryMap {
    BinaryMap {
        height: map.height(),
        width: map.width(),
        cells: map.values().iter().map(|&v| v as f64 >= threshold).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(i64, i64)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
            Connectivity::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }
}

/// Pixels as `(row, col)`.
pub type PixelSet = Vec<(usize, usize)>;

/// Maximal connected sets of set cells, ordered by their first cell in
/// row-major order (minimum row, then minimum column within that row).
pub fn connected_components(map: &BinaryMap, connectivity: Connectivity) -> Vec<PixelSet> {
    let (h, w) = (map.height, map.width);
    let mut seen = vec![false; h * w];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !map.cells[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut region = Vec::new();
        while let Some(idx) = queue.pop_front() {
            let (r, c) = (idx / w, idx % w);
            region.push((r, c));
            for &(dr, dc) in connectivity.offsets() {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if map.get_signed(nr, nc) {
                    let n = nr as usize * w + nc as usize;
                    if !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        region.sort_unstable();
        regions.push(region);
    }
    regions
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VotingConfig {
    /// A pixel is part of a character when its background score is below this.
    pub bg_threshold: f64,
    pub connectivity: Connectivity,
    /// Regions smaller than this many pixels are dropped before voting.
    pub min_region_pixels: usize,
}

impl Default for VotingConfig {
    fn default() -> Self {
        Self {
            bg_threshold: DEFAULT_BG_THRESHOLD,
            connectivity: Connectivity::Four,
            min_region_pixels: 1,
        }
    }
}

/// A connected character region with its per-symbol mean scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CharRegion {
    pub pixels: PixelSet,
    /// Mean pixel-center position in map coordinates.
    pub centroid: Point,
    pub probs: [f64; NUM_CHARS],
}

/// Voted probabilities for one decoded character.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbEntry {
    pub symbol: char,
    pub probs: [f64; NUM_CHARS],
}

impl ProbEntry {
    /// Builds an entry whose symbol is the argmax of `probs`, ties going to
    /// the lower charset index.
    pub fn from_probs(probs: [f64; NUM_CHARS]) -> Self {
        Self {
            symbol: Charset::SYMBOLS[argmax(&probs)],
            probs,
        }
    }

    /// Voted probability of `ch`; 0 for symbols outside the charset.
    pub fn prob_of(&self, ch: char) -> f64 {
        Charset::index_of(ch).map_or(0.0, |i| self.probs[i])
    }

    /// Entry with probability 1 on `ch` and 0 elsewhere.
    pub fn one_hot(ch: char) -> Option<Self> {
        let i = Charset::index_of(ch)?;
        let mut probs = [0.0; NUM_CHARS];
        probs[i] = 1.0;
        Some(Self::from_probs(probs))
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-position voting results in decoded order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbTable {
    pub entries: Vec<ProbEntry>,
}

impl ProbTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn text(&self) -> String {
        self.entries.iter().map(|e| e.symbol).collect()
    }

    /// One-hot table for a charset word; `None` if a symbol is outside it.
    pub fn one_hot(word: &str) -> Option<Self> {
        word.chars()
            .map(ProbEntry::one_hot)
            .collect::<Option<Vec<_>>>()
            .map(|entries| Self { entries })
    }
}

/// Character regions of `stack`, ordered left to right by centroid x
/// (ties by centroid y).
pub fn character_regions(stack: &MaskStack, cfg: &VotingConfig) -> Vec<CharRegion> {
    let background = stack.channel(BACKGROUND_CHANNEL);
    let mask = BinaryMap {
        height: stack.height(),
        width: stack.width(),
        cells: background
            .iter()
            .map(|&v| (v as f64) < cfg.bg_threshold)
            .collect(),
    };
    let w = stack.width();
    let mut regions: Vec<CharRegion> = connected_components(&mask, cfg.connectivity)
        .into_iter()
        .filter(|p| p.len() >= cfg.min_region_pixels.max(1))
        .map(|pixels| {
            let n = pixels.len() as f64;
            let mut probs = [0.0; NUM_CHARS];
            for (c, p) in probs.iter_mut().enumerate() {
                let channel = stack.channel(char_channel(c));
                let sum: f64 = pixels.iter().map(|&(r, col)| channel[r * w + col] as f64).sum();
                *p = sum / n;
            }
            let cx = pixels.iter().map(|&(_, c)| c as f64 + 0.5).sum::<f64>() / n;
            let cy = pixels.iter().map(|&(r, _)| r as f64 + 0.5).sum::<f64>() / n;
            CharRegion {
                pixels,
                centroid: Point::new(cx, cy),
                probs,
            }
        })
        .collect();
    regions.sort_by(|a, b| {
        a.centroid
            .x
            .total_cmp(&b.centroid.x)
            .then(a.centroid.y.total_cmp(&b.centroid.y))
    });
    regions
}

/// Decodes the character channels of `stack` into a string by pixel voting.
pub fn pixel_voting(stack: &MaskStack, cfg: &VotingConfig) -> (String, ProbTable) {
    let table = ProbTable {
        entries: character_regions(stack, cfg)
            .into_iter()
            .map(|r| ProbEntry::from_probs(r.probs))
            .collect(),
    };
    (table.text(), table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolygonConfig {
    pub threshold: f64,
    pub connectivity: Connectivity,
    /// Douglas-Peucker tolerance in map pixels; 0 keeps every corner.
    pub epsilon: f64,
}

impl Default for PolygonConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_GLOBAL_THRESHOLD,
            connectivity: Connectivity::Four,
            epsilon: DEFAULT_SIMPLIFY_EPSILON,
        }
    }
}

const EAST: (i64, i64) = (1, 0);

fn turn_right((dx, dy): (i64, i64)) -> (i64, i64) {
    (-dy, dx)
}

fn turn_left((dx, dy): (i64, i64)) -> (i64, i64) {
    (dy, -dx)
}

/// Pixels `(row, col)` on the right and left of the unit edge leaving corner
/// `(x, y)` in direction `d` (image coordinates, y down).
fn edge_sides(x: i64, y: i64, d: (i64, i64)) -> ((i64, i64), (i64, i64)) {
    match d {
        (1, 0) => ((y, x), (y - 1, x)),
        (0, 1) => ((y, x - 1), (y, x)),
        (-1, 0) => ((y - 1, x - 1), (y, x - 1)),
        (0, -1) => ((y - 1, x), (y - 1, x - 1)),
        _ => unreachable!("axis direction"),
    }
}

/// Traces the outer boundary of `region` along pixel edges, clockwise on
/// screen, returning the corner points where the direction changes.
pub fn trace_outer_boundary(
    region: &[(usize, usize)],
    height: usize,
    width: usize,
    connectivity: Connectivity,
) -> Vec<Point> {
    let Some(&(r0, c0)) = region.iter().min() else {
        return Vec::new();
    };
    let mut cells = vec![false; height * width];
    for &(r, c) in region {
        cells[r * width + c] = true;
    }
    let mask = BinaryMap {
        height,
        width,
        cells,
    };
    let is_boundary = |x: i64, y: i64, d: (i64, i64)| {
        let (right, left) = edge_sides(x, y, d);
        mask.get_signed(right.0, right.1) && !mask.get_signed(left.0, left.1)
    };

    let start = (c0 as i64, r0 as i64, EAST);
    let (mut x, mut y, mut d) = start;
    let mut corners = Vec::new();
    loop {
        x += d.0;
        y += d.1;
        let candidates = match connectivity {
            Connectivity::Four => [turn_right(d), d, turn_left(d)],
            Connectivity::Eight => [turn_left(d), d, turn_right(d)],
        };
        let next = candidates
            .into_iter()
            .find(|&nd| is_boundary(x, y, nd))
            .expect("a boundary edge always continues");
        if next != d {
            corners.push(Point::new(x as f64, y as f64));
        }
        d = next;
        if (x, y, d) == start {
            break;
        }
    }
    // The start corner is always a turn (north edge into east edge); rotate
    // so the loop begins there.
    if let Some(pos) = corners
        .iter()
        .position(|p| *p == Point::new(start.0 as f64, start.1 as f64))
    {
        corners.rotate_left(pos);
    }
    corners
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return ((p.x - a.x).powi(2) + (p.y - a.y).powi(2)).sqrt();
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    ((p.x - a.x - t * dx).powi(2) + (p.y - a.y - t * dy).powi(2)).sqrt()
}

fn douglas_peucker(points: &[Point], epsilon: f64, out: &mut Vec<Point>) {
    let (first, last) = (points[0], points[points.len() - 1]);
    let mut worst = (0, 0.0);
    for (i, &p) in points.iter().enumerate().take(points.len() - 1).skip(1) {
        let d = point_segment_distance(p, first, last);
        if d > worst.1 {
            worst = (i, d);
        }
    }
    if worst.1 > epsilon {
        douglas_peucker(&points[..=worst.0], epsilon, out);
        out.pop();
        douglas_peucker(&points[worst.0..], epsilon, out);
    } else {
        out.push(first);
        out.push(last);
    }
}

/// Douglas-Peucker simplification of a closed ring.
pub fn simplify_ring(ring: &[Point], epsilon: f64) -> Vec<Point> {
    if ring.len() <= 3 || epsilon <= 0.0 {
        return ring.to_vec();
    }
    // Split at the vertex farthest from the first one.
    let far = (1..ring.len())
        .max_by(|&i, &j| {
            let di = (ring[i].x - ring[0].x).powi(2) + (ring[i].y - ring[0].y).powi(2);
            let dj = (ring[j].x - ring[0].x).powi(2) + (ring[j].y - ring[0].y).powi(2);
            di.total_cmp(&dj).then(j.cmp(&i))
        })
        .unwrap_or(1);
    let mut first_half = Vec::new();
    douglas_peucker(&ring[..=far], epsilon, &mut first_half);
    let mut closing: Vec<Point> = ring[far..].to_vec();
    closing.push(ring[0]);
    let mut second_half = Vec::new();
    douglas_peucker(&closing, epsilon, &mut second_half);
    first_half.pop();
    second_half.pop();
    first_half.extend(second_half);
    first_half
}

/// Outline of the largest foreground component of `global`, in map
/// coordinates. `None` when nothing reaches the threshold.
pub fn extract_text_polygon(global: &ScoreMap, cfg: &PolygonConfig) -> Option<Polygon> {
    let bin = binarize(global, cfg.threshold);
    let regions = connected_components(&bin, cfg.connectivity);
    // first of the largest, in component order
    let largest = regions
        .iter()
        .fold(None::<&PixelSet>, |best, r| match best {
            Some(b) if b.len() >= r.len() => Some(b),
            _ => Some(r),
        })?;
    let ring = trace_outer_boundary(largest, bin.height, bin.width, cfg.connectivity);
    let simplified = simplify_ring(&ring, cfg.epsilon);
    Polygon::new(simplified)
        .or_else(|_| Polygon::new(ring))
        .ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpotConfig {
    pub voting: VotingConfig,
    pub polygon: PolygonConfig,
}

/// One spotted text instance in image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SpottedInstance {
    pub polygon: Polygon,
    pub text: String,
    pub probs: ProbTable,
    pub det_score: f64,
    /// Index of the candidate box this instance came from.
    pub proposal_index: usize,
}

/// Decodes one proposal's stack. `Ok(None)` is an empty detection.
pub fn spot(
    stack: &MaskStack,
    proposal: &AxisRect,
    det_score: f64,
    cfg: &SpotConfig,
) -> Result<Option<SpottedInstance>> {
    let Some(local) = extract_text_polygon(&stack.global(), &cfg.polygon) else {
        return Ok(None);
    };
    let polygon = Polygon::new(denormalize_from_roi(
        local.vertices(),
        proposal,
        stack.height(),
        stack.width(),
    ))?;
    let (text, probs) = pixel_voting(stack, &cfg.voting);
    Ok(Some(SpottedInstance {
        polygon,
        text,
        probs,
        det_score,
        proposal_index: 0,
    }))
}

/// Supplies the mask-branch output for a proposal.
pub trait MapProvider {
    fn stack_for(&self, index: usize, proposal: &AxisRect) -> Result<MaskStack>;
}

impl<F> MapProvider for F
where
    F: Fn(usize, &AxisRect) -> Result<MaskStack>,
{
    fn stack_for(&self, index: usize, proposal: &AxisRect) -> Result<MaskStack> {
        self(index, proposal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub nms_threshold: f64,
    pub score_threshold: f64,
    pub spot: SpotConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            nms_threshold: DEFAULT_NMS_THRESHOLD,
            score_threshold: 0.0,
            spot: SpotConfig::default(),
        }
    }
}

/// Score filter, NMS, then [`spot`] on each survivor. Empty detections are
/// dropped; output is sorted by descending score.
pub fn run_pipeline<P: MapProvider + ?Sized>(
    candidates: &[ScoredBox],
    provider: &P,
    cfg: &PipelineConfig,
) -> Result<Vec<SpottedInstance>> {
    let kept: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].score >= cfg.score_threshold)
        .collect();
    let filtered: Vec<ScoredBox> = kept.iter().map(|&i| candidates[i]).collect();
    let mut out = Vec::new();
    for j in nms_indices(&filtered, cfg.nms_threshold) {
        let index = kept[j];
        let cand = &candidates[index];
        let named = |e: Error| match e {
            e @ Error::Pipeline { .. } => e,
            other => Error::Pipeline {
                proposal: format!("#{index} {:?}", cand.rect.as_array()),
                message: other.to_string(),
            },
        };
        let stack = provider.stack_for(index, &cand.rect).map_err(named)?;
        if let Some(mut inst) = spot(&stack, &cand.rect, cand.score, &cfg.spot).map_err(named)? {
            inst.proposal_index = index;
            out.push(inst);
        }
    }
    out.sort_by(|a, b| b.det_score.total_cmp(&a.det_score));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::NUM_CHANNELS;

    fn map(h: usize, w: usize, v: Vec<f32>) -> ScoreMap {
        ScoreMap::new(h, w, v).unwrap()
    }

    #[test]
    fn binarize_boundary_is_inclusive() {
        let m = map(1, 3, vec![0.0, 0.5, 0.7]);
        assert_eq!(binarize(&m, 0.5).cells, vec![false, true, true]);
        assert!(binarize(&map(2, 2, vec![0.0; 4]), 0.5).cells.iter().all(|c| !c));
    }

    #[test]
    fn components_basic_cases() {
        let empty = BinaryMap { height: 2, width: 2, cells: vec![false; 4] };
        assert!(connected_components(&empty, Connectivity::Four).is_empty());
        let single = BinaryMap { height: 2, width: 2, cells: vec![false, true, false, false] };
        assert_eq!(connected_components(&single, Connectivity::Four), vec![vec![(0, 1)]]);
        let diag = BinaryMap { height: 2, width: 2, cells: vec![true, false, false, true] };
        assert_eq!(connected_components(&diag, Connectivity::Four).len(), 2);
        assert_eq!(connected_components(&diag, Connectivity::Eight).len(), 1);
    }

    #[test]
    fn components_ordered_by_first_cell() {
        let cells = vec![
            false, false, true, //
            true, false, true, //
            true, false, false,
        ];
        let m = BinaryMap { height: 3, width: 3, cells };
        let regions = connected_components(&m, Connectivity::Four);
        assert_eq!(regions, vec![vec![(0, 2), (1, 2)], vec![(1, 0), (2, 0)]]);
    }

    fn stack_with(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f32) -> MaskStack {
        let mut data = Vec::with_capacity(NUM_CHANNELS * h * w);
        for c in 0..NUM_CHANNELS {
            for r in 0..h {
                for col in 0..w {
                    data.push(f(c, r, col));
                }
            }
        }
        MaskStack::from_data(h, w, data).unwrap()
    }

    #[test]
    fn voting_reads_two_one_hot_regions() {
        let a = char_channel(Charset::index_of('a').unwrap());
        let b = char_channel(Charset::index_of('b').unwrap());
        let stack = stack_with(4, 10, |c, r, col| {
            let in_a = (1..3).contains(&r) && (1..3).contains(&col);
            let in_b = (1..3).contains(&r) && (6..9).contains(&col);
            match c {
                BACKGROUND_CHANNEL => (!(in_a || in_b)) as u8 as f32,
                c if c == a => in_a as u8 as f32,
                c if c == b => in_b as u8 as f32,
                _ => 0.0,
            }
        });
        let (text, table) = pixel_voting(&stack, &VotingConfig::default());
        assert_eq!(text, "ab");
        assert_eq!(table.len(), 2);
        assert_eq!(table.entries[1].prob_of('b'), 1.0);
    }

    #[test]
    fn voting_on_pure_background_is_empty() {
        let stack = stack_with(4, 4, |c, _, _| (c == BACKGROUND_CHANNEL) as u8 as f32);
        let (text, table) = pixel_voting(&stack, &VotingConfig::default());
        assert!(text.is_empty() && table.is_empty());
    }

    #[test]
    fn voting_ties_pick_lower_index() {
        let stack = stack_with(1, 1, |c, _, _| match c {
            BACKGROUND_CHANNEL => 0.0,
            c if c == char_channel(3) || c == char_channel(5) => 0.5,
            _ => 0.0,
        });
        assert_eq!(pixel_voting(&stack, &VotingConfig::default()).0, "3");
    }

    #[test]
    fn min_region_size_drops_specks() {
        let stack = stack_with(3, 3, |c, r, col| match c {
            BACKGROUND_CHANNEL => !(r == 1 && col == 1) as u8 as f32,
            _ => 0.0,
        });
        let cfg = VotingConfig { min_region_pixels: 2, ..Default::default() };
        assert_eq!(pixel_voting(&stack, &cfg).1.len(), 0);
        assert_eq!(pixel_voting(&stack, &VotingConfig::default()).1.len(), 1);
    }

    #[test]
    fn full_map_traces_frame() {
        let g = map(4, 6, vec![1.0; 24]);
        let p = extract_text_polygon(&g, &PolygonConfig::default()).unwrap();
        assert_eq!(
            p.vertices(),
            &[
                Point::new(0., 0.),
                Point::new(6., 0.),
                Point::new(6., 4.),
                Point::new(0., 4.)
            ]
        );
    }

    #[test]
    fn empty_map_is_empty_detection() {
        assert!(extract_text_polygon(&map(4, 4, vec![0.0; 16]), &PolygonConfig::default()).is_none());
    }

    #[test]
    fn trace_l_shape() {
        // ##
        // #.
        let region = vec![(0, 0), (0, 1), (1, 0)];
        let ring = trace_outer_boundary(&region, 2, 2, Connectivity::Four);
        assert_eq!(ring.len(), 6);
        assert_eq!(crate::geometry::polygon_area(&ring), 3.0);
    }

    #[test]
    fn trace_diagonal_pinch_four_vs_eight() {
        // #.
        // .#  (one component only under 8-connectivity)
        let region = vec![(0, 0), (1, 1)];
        let ring = trace_outer_boundary(&region, 2, 2, Connectivity::Four);
        assert_eq!(crate::geometry::polygon_area(&ring), 1.0);
        let ring8 = trace_outer_boundary(&region, 2, 2, Connectivity::Eight);
        assert_eq!(ring8.len(), 8);
    }

    #[test]
    fn trace_shape_with_hole_keeps_outer_ring() {
        let mut region = Vec::new();
        for r in 0..3 {
            for c in 0..3 {
                if (r, c) != (1, 1) {
                    region.push((r, c));
                }
            }
        }
        let ring = trace_outer_boundary(&region, 3, 3, Connectivity::Four);
        assert_eq!(crate::geometry::polygon_area(&ring), 9.0);
    }

    #[test]
    fn simplify_collapses_staircase() {
        let stair: Vec<Point> = vec![
            Point::new(0., 0.),
            Point::new(10., 0.),
            Point::new(10., 1.),
            Point::new(11., 1.),
            Point::new(11., 2.),
            Point::new(12., 2.),
            Point::new(12., 10.),
            Point::new(0., 10.),
        ];
        let s = simplify_ring(&stair, 1.0);
        assert!(s.len() < stair.len());
        assert!(s.len() >= 4);
        assert_eq!(simplify_ring(&stair, 0.0), stair);
    }
}
