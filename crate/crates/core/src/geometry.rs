//! Points, axis-aligned rectangles, polygons, IoU and non-maximum suppression.
//!
//! Rasterization samples pixel centers with the even-odd rule. A sample on a
//! left or top edge is inside, a sample on a right or bottom edge is outside,
//! so adjacent shapes never share a sample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples per unit length used by [`polygon_iou`] unless told otherwise.
pub const DEFAULT_IOU_RESOLUTION: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRect {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

impl AxisRect {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        if ![xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite()) {
            return Err(Error::geometry("rectangle has non-finite coordinates"));
        }
        if !(xmin < xmax && ymin < ymax) {
            return Err(Error::geometry(format!(
                "rectangle ({xmin}, {ymin}, {xmax}, {ymax}) has no positive extent"
            )));
        }
        Ok(Self {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        Self::new(
            cx - width / 2.0,
            cy - height / 2.0,
            cx + width / 2.0,
            cy + height / 2.0,
        )
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }
    pub fn ymin(&self) -> f64 {
        self.ymin
    }
    pub fn xmax(&self) -> f64 {
        self.xmax
    }
    pub fn ymax(&self) -> f64 {
        self.ymax
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point::new(
            (self.xmin + self.xmax) / 2.0,
            (self.ymin + self.ymax) / 2.0,
        )
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    /// Closed containment test.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    pub fn contains_rect(&self, other: &AxisRect) -> bool {
        other.xmin >= self.xmin
            && other.xmax <= self.xmax
            && other.ymin >= self.ymin
            && other.ymax <= self.ymax
    }

    /// Grows every side by `fraction` of the corresponding extent.
    pub fn dilate(&self, fraction: f64) -> AxisRect {
        let dx = self.width() * fraction;
        let dy = self.height() * fraction;
        AxisRect {
            xmin: self.xmin - dx,
            ymin: self.ymin - dy,
            xmax: self.xmax + dx,
            ymax: self.ymax + dy,
        }
    }

    pub fn intersection_area(&self, other: &AxisRect) -> f64 {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn to_polygon(&self) -> Polygon {
        Polygon {
            vertices: vec![
                Point::new(self.xmin, self.ymin),
                Point::new(self.xmax, self.ymin),
                Point::new(self.xmax, self.ymax),
                Point::new(self.xmin, self.ymax),
            ],
        }
    }
}

/// Absolute shoelace area of a vertex loop. Fewer than three vertices give 0.
pub fn polygon_area(points: &[Point]) -> f64 {
    if points.len() < 3 {
        return 0.0;
    }
    let twice: f64 = points
        .iter()
        .zip(points.iter().cycle().skip(1))
        .map(|(a, b)| a.x * b.y - b.x * a.y)
        .sum();
    twice.abs() / 2.0
}

/// A closed polygon with at least three vertices and nonzero area.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::geometry(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if !vertices.iter().all(Point::is_finite) {
            return Err(Error::geometry("polygon has non-finite vertices"));
        }
        if polygon_area(&vertices) <= 0.0 {
            return Err(Error::geometry("polygon has zero area"));
        }
        Ok(Self { vertices })
    }

    /// Builds a polygon from a flat `[x0, y0, x1, y1, ...]` list.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(2) {
            return Err(Error::geometry("odd number of polygon coordinates"));
        }
        Self::new(
            coords
                .chunks_exact(2)
                .map(|c| Point::new(c[0], c[1]))
                .collect(),
        )
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices)
    }

    /// Applies `f` to every vertex and revalidates.
    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Result<Polygon> {
        Polygon::new(self.vertices.iter().copied().map(f).collect())
    }

    /// Even-odd containment with the half-open edge convention.
    pub fn contains(&self, p: Point) -> bool {
        let mut inside = false;
        for (a, b) in edges(&self.vertices) {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if x > p.x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn edges(vertices: &[Point]) -> impl Iterator<Item = (Point, Point)> + '_ {
    vertices
        .iter()
        .copied()
        .zip(vertices.iter().copied().cycle().skip(1))
}

/// Min/max extent of the polygon's vertices.
pub fn bounding_rect(p: &Polygon) -> Result<AxisRect> {
    let (mut xmin, mut ymin) = (f64::INFINITY, f64::INFINITY);
    let (mut xmax, mut ymax) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in &p.vertices {
        xmin = xmin.min(v.x);
        ymin = ymin.min(v.y);
        xmax = xmax.max(v.x);
        ymax = ymax.max(v.y);
    }
    AxisRect::new(xmin, ymin, xmax, ymax)
}

pub fn rect_iou(a: &AxisRect, b: &AxisRect) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A sampling lattice: cell `(r, c)` is sampled at
/// `(x0 + (c + 0.5) * step, y0 + (r + 0.5) * step)`.
#[derive(Debug, Clone, Copy)]
pub struct SampleGrid {
    pub rows: usize,
    pub cols: usize,
    pub x0: f64,
    pub y0: f64,
    pub step: f64,
}

impl SampleGrid {
    /// Unit-pixel grid of a `rows x cols` map.
    pub fn pixels(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            x0: 0.0,
            y0: 0.0,
            step: 1.0,
        }
    }
}

/// Scanline even-odd fill of `poly` over `grid`, row-major.
pub fn rasterize_polygon(poly: &Polygon, grid: SampleGrid) -> Vec<bool> {
    let mut out = vec![false; grid.rows * grid.cols];
    let mut crossings: Vec<f64> = Vec::new();
    for r in 0..grid.rows {
        let y = grid.y0 + (r as f64 + 0.5) * grid.step;
        crossings.clear();
        for (a, b) in edges(&poly.vertices) {
            if (a.y > y) != (b.y > y) {
                crossings.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        if crossings.is_empty() {
            continue;
        }
        crossings.sort_by(f64::total_cmp);
        let row = &mut out[r * grid.cols..(r + 1) * grid.cols];
        // A sample is inside iff an odd number of crossings lie strictly to
        // its right. Spans are [x_{2k}, x_{2k+1}).
        for span in crossings.chunks_exact(2) {
            let c_start = ((span[0] - grid.x0) / grid.step - 0.5).ceil().max(0.0);
            let c_end = ((span[1] - grid.x0) / grid.step - 0.5).ceil();
            if c_end <= 0.0 || c_start >= grid.cols as f64 {
                continue;
            }
            let (lo, hi) = (c_start as usize, (c_end as usize).min(grid.cols));
            for cell in &mut row[lo..hi] {
                *cell = true;
            }
        }
    }
    out
}

/// Raster IoU of two polygons sampled over their joint bounding box at
/// `resolution` samples per unit length.
pub fn polygon_iou(a: &Polygon, b: &Polygon, resolution: f64) -> Result<f64> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::geometry(format!("invalid resolution {resolution}")));
    }
    let ra = bounding_rect(a)?;
    let rb = bounding_rect(b)?;
    let x0 = ra.xmin.min(rb.xmin);
    let y0 = ra.ymin.min(rb.ymin);
    let x1 = ra.xmax.max(rb.xmax);
    let y1 = ra.ymax.max(rb.ymax);
    let step = 1.0 / resolution;
    let grid = SampleGrid {
        rows: ((y1 - y0) * resolution).ceil().max(1.0) as usize,
        cols: ((x1 - x0) * resolution).ceil().max(1.0) as usize,
        x0,
        y0,
        step,
    };
    let ma = rasterize_polygon(a, grid);
    let mb = rasterize_polygon(b, grid);
    let (mut inter, mut union) = (0usize, 0usize);
    for (&pa, &pb) in ma.iter().zip(&mb) {
        inter += (pa && pb) as usize;
        union += (pa || pb) as usize;
    }
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub rect: AxisRect,
    pub score: f64,
}

impl ScoredBox {
    pub fn new(rect: AxisRect, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::contract(format!("score {score} outside [0, 1]")));
        }
        Ok(Self { rect, score })
    }
}

/// Indices of the boxes kept by greedy NMS, in descending score order.
/// Equal scores keep input order.
pub fn nms_indices(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| boxes[j].score.total_cmp(&boxes[i].score).then(i.cmp(&j)));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep
            .iter()
            .all(|&k| rect_iou(&boxes[k].rect, &boxes[i].rect) <= iou_threshold)
        {
            keep.push(i);
        }
    }
    keep
}

/// Greedy non-maximum suppression: survivors have pairwise IoU at most
/// `iou_threshold` and come back sorted by descending score.
pub fn nms(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<ScoredBox> {
    nms_indices(boxes, iou_threshold)
        .into_iter()
        .map(|i| boxes[i])
        .collect()
}
