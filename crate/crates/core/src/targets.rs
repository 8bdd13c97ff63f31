//! Training targets: anchor grids and matching, box regression deltas, and
//! the global / character maps of the mask branch.

use crate::error::{Error, Result};
use crate::geometry::{
    bounding_rect, rasterize_polygon, rect_iou, AxisRect, Point, Polygon, SampleGrid,
};
use crate::maps::{Charset, ScoreMap};

pub const DEFAULT_MAP_HEIGHT: usize = 32;
pub const DEFAULT_MAP_WIDTH: usize = 128;

/// Character label for cells of an instance without character annotations.
pub const LABEL_UNANNOTATED: i32 = -1;
pub const LABEL_BACKGROUND: i32 = 0;

/// Character boxes may overhang the word's bounding rect by this fraction.
const CHAR_BOX_SLACK: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct CharBox {
    pub rect: AxisRect,
    /// Charset index of the (case-folded) label.
    pub index: usize,
}

impl CharBox {
    pub fn new(rect: AxisRect, label: char) -> Result<Self> {
        let index = Charset::index_of(label).ok_or_else(|| {
            Error::contract(format!("character label {label:?} is not in the charset"))
        })?;
        Ok(Self { rect, index })
    }

    pub fn label(&self) -> char {
        Charset::SYMBOLS[self.index]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub polygon: Polygon,
    pub transcription: Option<String>,
    pub char_boxes: Option<Vec<CharBox>>,
}

impl GtInstance {
    pub fn new(
        polygon: Polygon,
        transcription: Option<String>,
        char_boxes: Option<Vec<CharBox>>,
    ) -> Result<Self> {
        if let Some(boxes) = &char_boxes {
            let limit = bounding_rect(&polygon)?.dilate(CHAR_BOX_SLACK);
            if let Some((i, _)) = boxes
                .iter()
                .enumerate()
                .find(|(_, b)| !limit.contains_rect(&b.rect))
            {
                return Err(Error::geometry(format!(
                    "character box {i} lies outside the instance's bounding rect"
                )));
            }
        }
        Ok(Self {
            polygon,
            transcription,
            char_boxes,
        })
    }
}

/// Anchor layout over five pyramid stages.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig {
    pub strides: Vec<u32>,
    /// Anchor area in square pixels, one per stage.
    pub areas: Vec<f64>,
    /// Height / width ratios used at every stage.
    pub ratios: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            strides: vec![4, 8, 16, 32, 64],
            areas: [32.0f64, 64.0, 128.0, 256.0, 512.0]
                .iter()
                .map(|s| s * s)
                .collect(),
            ratios: vec![0.5, 1.0, 2.0],
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strides.len() != self.areas.len() {
            return Err(Error::Config(
                "anchor config needs exactly one area per stage".into(),
            ));
        }
        if self.strides.contains(&0) {
            return Err(Error::Config("anchor strides must be positive".into()));
        }
        if self.areas.iter().any(|a| a.is_nan() || *a <= 0.0) || self.ratios.iter().any(|r| r.is_nan() || *r <= 0.0) {
            return Err(Error::Config(
                "anchor areas and ratios must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub rect: AxisRect,
    /// The anchor extends past the image border.
    pub crosses_border: bool,
}

/// Anchors for one stage (1-based), row-major over the feature grid with the
/// ratios innermost. The feature grid is `ceil(dim / stride)` cells per axis.
pub fn generate_anchors(
    cfg: &AnchorConfig,
    image_h: u32,
    image_w: u32,
    stage: usize,
) -> Result<Vec<Anchor>> {
    cfg.validate()?;
    if stage == 0 || stage > cfg.strides.len() {
        return Err(Error::Config(format!(
            "stage {stage} outside 1..={}",
            cfg.strides.len()
        )));
    }
    let stride = cfg.strides[stage - 1];
    let area = cfg.areas[stage - 1];
    let rows = image_h.div_ceil(stride);
    let cols = image_w.div_ceil(stride);
    let sizes: Vec<(f64, f64)> = cfg
        .ratios
        .iter()
        .map(|&ratio| {
            let w = (area / ratio).sqrt();
            (w, ratio * w)
        })
        .collect();
    let mut anchors = Vec::with_capacity((rows * cols) as usize * sizes.len());
    for r in 0..rows {
        for c in 0..cols {
            let cx = (c as f64 + 0.5) * stride as f64;
            let cy = (r as f64 + 0.5) * stride as f64;
            for &(w, h) in &sizes {
                let rect = AxisRect::from_center(cx, cy, w, h)?;
                let crosses_border = rect.xmin() < 0.0
                    || rect.ymin() < 0.0
                    || rect.xmax() > image_w as f64
                    || rect.ymax() > image_h as f64;
                anchors.push(Anchor {
                    rect,
                    crosses_border,
                });
            }
        }
    }
    Ok(anchors)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorAssignment {
    Positive(usize),
    Negative,
    Ignore,
}

/// Assigns anchors to ground-truth rectangles.
///
/// An anchor is positive when its best IoU reaches `pos_iou`, or when it
/// attains the (nonzero) maximum IoU for some ground truth; negative when its
/// best IoU is below `neg_iou`; ignored otherwise.
pub fn match_anchors(
    anchors: &[AxisRect],
    gts: &[AxisRect],
    pos_iou: f64,
    neg_iou: f64,
) -> Result<Vec<AnchorAssignment>> {
    if !(0.0 <= neg_iou && neg_iou <= pos_iou && pos_iou <= 1.0) {
        return Err(Error::Config(format!(
            "need 0 <= neg_iou ({neg_iou}) <= pos_iou ({pos_iou}) <= 1"
        )));
    }
    if gts.is_empty() {
        return Ok(vec![AnchorAssignment::Negative; anchors.len()]);
    }
    let iou: Vec<Vec<f64>> = anchors
        .iter()
        .map(|a| gts.iter().map(|g| rect_iou(a, g)).collect())
        .collect();

    let mut out: Vec<AnchorAssignment> = iou
        .iter()
        .map(|row| {
            let (best_gt, best) = argmax(row);
            if best >= pos_iou {
                AnchorAssignment::Positive(best_gt)
            } else if best < neg_iou {
                AnchorAssignment::Negative
            } else {
                AnchorAssignment::Ignore
            }
        })
        .collect();

    for g in 0..gts.len() {
        let best = iou.iter().map(|row| row[g]).fold(0.0, f64::max);
        if best <= 0.0 {
            continue;
        }
        for (a, row) in iou.iter().enumerate() {
            if row[g] == best && !matches!(out[a], AnchorAssignment::Positive(_)) {
                out[a] = AnchorAssignment::Positive(g);
            }
        }
    }
    Ok(out)
}

fn argmax(row: &[f64]) -> (usize, f64) {
    row.iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
}

/// Center/size regression target of `gt` relative to an anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDelta {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

pub fn encode_box_delta(anchor: &AxisRect, gt: &AxisRect) -> BoxDelta {
    let (ac, gc) = (anchor.center(), gt.center());
    BoxDelta {
        tx: (gc.x - ac.x) / anchor.width(),
        ty: (gc.y - ac.y) / anchor.height(),
        tw: (gt.width() / anchor.width()).ln(),
        th: (gt.height() / anchor.height()).ln(),
    }
}

pub fn decode_box_delta(anchor: &AxisRect, d: &BoxDelta) -> Result<AxisRect> {
    let ac = anchor.center();
    AxisRect::from_center(
        ac.x + d.tx * anchor.width(),
        ac.y + d.ty * anchor.height(),
        anchor.width() * d.tw.exp(),
        anchor.height() * d.th.exp(),
    )
}

/// Maps image points into the `map_w x map_h` frame of `proposal`; the
/// proposal's corners land on `(0, 0)` and `(map_w, map_h)`. Points outside
/// the proposal are not clamped.
pub fn normalize_to_roi(
    points: &[Point],
    proposal: &AxisRect,
    map_h: usize,
    map_w: usize,
) -> Vec<Point> {
    let sx = map_w as f64 / proposal.width();
    let sy = map_h as f64 / proposal.height();
    points
        .iter()
        .map(|p| {
            Point::new(
                (p.x - proposal.xmin()) * sx,
                (p.y - proposal.ymin()) * sy,
            )
        })
        .collect()
}

/// Inverse of [`normalize_to_roi`].
pub fn denormalize_from_roi(
    points: &[Point],
    proposal: &AxisRect,
    map_h: usize,
    map_w: usize,
) -> Vec<Point> {
    let sx = proposal.width() / map_w as f64;
    let sy = proposal.height() / map_h as f64;
    points
        .iter()
        .map(|p| Point::new(p.x * sx + proposal.xmin(), p.y * sy + proposal.ymin()))
        .collect()
}

fn normalize_rect(r: &AxisRect, proposal: &AxisRect, map_h: usize, map_w: usize) -> Result<AxisRect> {
    let pts = normalize_to_roi(
        &[Point::new(r.xmin(), r.ymin()), Point::new(r.xmax(), r.ymax())],
        proposal,
        map_h,
        map_w,
    );
    AxisRect::new(pts[0].x, pts[0].y, pts[1].x, pts[1].y)
}

/// Fills `polygon` (in map coordinates) with 1 on a zeroed `map_h x map_w` map.
pub fn rasterize_global_target(polygon: &Polygon, map_h: usize, map_w: usize) -> Result<ScoreMap> {
    let values = rasterize_polygon(polygon, SampleGrid::pixels(map_h, map_w))
        .into_iter()
        .map(|inside| if inside { 1.0 } else { 0.0 })
        .collect();
    ScoreMap::new(map_h, map_w, values)
}

/// Same center, each side divided by four.
pub fn shrink_char_box(b: &AxisRect) -> AxisRect {
    let c = b.center();
    AxisRect::from_center(c.x, c.y, b.width() / 4.0, b.height() / 4.0)
        .expect("quartered sides of a valid rect stay positive")
}

/// Per-cell character labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<i32>,
}

impl LabelGrid {
    pub fn get(&self, row: usize, col: usize) -> i32 {
        self.labels[row * self.width + col]
    }
}

/// Paints character boxes (already shrunk and in map coordinates) as
/// `charset index + 1`, leaving 0 elsewhere. Without annotations every cell
/// is -1. Later boxes overwrite earlier ones.
pub fn rasterize_char_target(
    char_boxes: Option<&[CharBox]>,
    map_h: usize,
    map_w: usize,
) -> LabelGrid {
    let Some(boxes) = char_boxes else {
        return LabelGrid {
            height: map_h,
            width: map_w,
            labels: vec![LABEL_UNANNOTATED; map_h * map_w],
        };
    };
    let mut labels = vec![LABEL_BACKGROUND; map_h * map_w];
    let grid = SampleGrid::pixels(map_h, map_w);
    for b in boxes {
        let mask = rasterize_polygon(&b.rect.to_polygon(), grid);
        let value = b.index as i32 + 1;
        for (cell, inside) in labels.iter_mut().zip(mask) {
            if inside {
                *cell = value;
            }
        }
    }
    LabelGrid {
        height: map_h,
        width: map_w,
        labels,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMaps {
    pub global: ScoreMap,
    pub char_labels: LabelGrid,
}

/// Word polygon mapped into the proposal frame.
pub fn roi_polygon(
    polygon: &Polygon,
    proposal: &AxisRect,
    map_h: usize,
    map_w: usize,
) -> Result<Polygon> {
    Polygon::new(normalize_to_roi(polygon.vertices(), proposal, map_h, map_w))
}

/// Character boxes shrunk and mapped into the proposal frame.
pub fn roi_char_boxes(
    boxes: &[CharBox],
    proposal: &AxisRect,
    map_h: usize,
    map_w: usize,
) -> Result<Vec<CharBox>> {
    boxes
        .iter()
        .map(|b| {
            Ok(CharBox {
                rect: normalize_rect(&shrink_char_box(&b.rect), proposal, map_h, map_w)?,
                index: b.index,
            })
        })
        .collect()
}

/// Global and character targets of `instance` seen through `proposal`.
pub fn build_mask_targets(
    instance: &GtInstance,
    proposal: &AxisRect,
    map_h: usize,
    map_w: usize,
) -> Result<TargetMaps> {
    let global = rasterize_global_target(
        &roi_polygon(&instance.polygon, proposal, map_h, map_w)?,
        map_h,
        map_w,
    )?;
    let boxes = instance
        .char_boxes
        .as_deref()
        .map(|b| roi_char_boxes(b, proposal, map_h, map_w))
        .transpose()?;
    Ok(TargetMaps {
        global,
        char_labels: rasterize_char_target(boxes.as_deref(), map_h, map_w),
    })
}
