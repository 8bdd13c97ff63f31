//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use maskspot::geometry::{AxisRect, Point, Polygon};

/// Rectangle IoU from raw coordinates.
pub fn rect_iou_ref(a: &AxisRect, b: &AxisRect) -> f64 {
    let iw = (a.xmax().min(b.xmax()) - a.xmin().max(b.xmin())).max(0.0);
    let ih = (a.ymax().min(b.ymax()) - a.ymin().max(b.ymin())).max(0.0);
    let inter = iw * ih;
    let union = a.width() * a.height() + b.width() * b.height() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Suppression-matrix NMS: each kept box marks every lower-ranked box above
/// the threshold as suppressed.
pub fn nms_ref(rects: &[AxisRect], scores: &[f64], thr: f64) -> Vec<usize> {
    let n = rects.len();
    let mut rank: Vec<usize> = (0..n).collect();
    rank.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap().then(i.cmp(&j)));
    let mut suppressed = vec![false; n];
    let mut keep = Vec::new();
    for (pos, &i) in rank.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &rank[pos + 1..] {
            if rect_iou_ref(&rects[i], &rects[j]) > thr {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Crossing-number point-in-polygon test.
pub fn point_in_polygon(poly: &Polygon, p: Point) -> bool {
    let v = poly.vertices();
    let mut inside = false;
    let mut j = v.len() - 1;
    for i in 0..v.len() {
        let (a, b) = (v[i], v[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Per-pixel-center mask of `poly` on an `h x w` grid.
pub fn raster_ref(poly: &Polygon, h: usize, w: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            out.push(point_in_polygon(poly, Point::new(c as f64 + 0.5, r as f64 + 0.5)));
        }
    }
    out
}

/// IoU of two polygons sampled at `res` points per unit over their joint
/// bounding box.
pub fn raster_iou_ref(a: &Polygon, b: &Polygon, res: f64) -> f64 {
    let pts = a.vertices().iter().chain(b.vertices());
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in pts {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let step = 1.0 / res;
    let cols = ((x1 - x0) * res).ceil() as usize;
    let rows = ((y1 - y0) * res).ceil() as usize;
    let (mut inter, mut union) = (0usize, 0usize);
    for r in 0..rows {
        for c in 0..cols {
            let p = Point::new(x0 + (c as f64 + 0.5) * step, y0 + (r as f64 + 0.5) * step);
            let (ia, ib) = (point_in_polygon(a, p), point_in_polygon(b, p));
            inter += usize::from(ia && ib);
            union += usize::from(ia || ib);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Minimum cost over explicit edit scripts, computed by memoised search
/// over (i, j) states. Steps into the first row or column cost 1.
pub fn weighted_ed_ref(
    a: &[char],
    b: &[char],
    del: &dyn Fn(usize) -> f64,
    ins: &dyn Fn(usize) -> f64,
    rep: &dyn Fn(usize, usize) -> f64,
) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn go(
        i: usize,
        j: usize,
        a: &[char],
        b: &[char],
        del: &dyn Fn(usize) -> f64,
        ins: &dyn Fn(usize) -> f64,
        rep: &dyn Fn(usize, usize) -> f64,
        memo: &mut Vec<Vec<Option<f64>>>,
    ) -> f64 {
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if i == 0 {
            j as f64
        } else if j == 0 {
            i as f64
        } else {
            let d = go(i - 1, j, a, b, del, ins, rep, memo) + del(i - 1);
            let n = go(i, j - 1, a, b, del, ins, rep, memo) + ins(j - 1);
            let s = go(i - 1, j - 1, a, b, del, ins, rep, memo)
                + if a[i - 1] == b[j - 1] { 0.0 } else { rep(i - 1, j - 1) };
            d.min(n).min(s)
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    go(a.len(), b.len(), a, b, del, ins, rep, &mut memo)
}

/// Largest number of (det, gt) pairs with IoU at least `thr`, by exhaustive
/// search over assignments.
pub fn max_matching_ref(iou: &[Vec<f64>], thr: f64) -> usize {
    fn go(d: usize, iou: &[Vec<f64>], thr: f64, used: &mut Vec<bool>) -> usize {
        if d == iou.len() {
            return 0;
        }
        let mut best = go(d + 1, iou, thr, used);
        for g in 0..used.len() {
            if !used[g] && iou[d][g] >= thr {
                used[g] = true;
                best = best.max(1 + go(d + 1, iou, thr, used));
                used[g] = false;
            }
        }
        best
    }
    let g = iou.first().map_or(0, |r| r.len());
    go(0, iou, thr, &mut vec![false; g])
}

/// Convex hull by gift wrapping; collinear points are dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let n = points.len();
    if n < 3 {
        return points.to_vec();
    }
    let start = (0..n)
        .min_by(|&i, &j| {
            (points[i].x, points[i].y)
                .partial_cmp(&(points[j].x, points[j].y))
                .unwrap()
        })
        .unwrap();
    let cross = |o: Point, a: Point, b: Point| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut hull = Vec::new();
    let mut cur = start;
    loop {
        hull.push(points[cur]);
        let mut next = (cur + 1) % n;
        for k in 0..n {
            let c = cross(points[cur], points[next], points[k]);
            let farther = c == 0.0 && {
                let d = |p: Point| (p.x - points[cur].x).powi(2) + (p.y - points[cur].y).powi(2);
                d(points[k]) > d(points[next])
            };
            if c < 0.0 || farther {
                next = k;
            }
        }
        cur = next;
        if cur == start || hull.len() > n {
            break;
        }
    }
    hull
}
