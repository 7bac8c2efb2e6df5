//! Outline to coverage raster: flatten quadratics to polylines, fill with
//! non-zero winding at supersample resolution, box-filter down.

use super::ttf::{CurvePoint, Outline};
use ndarray::Array2;

/// Closed polygon contour in raster pixel coordinates (y down).
pub type Poly = Vec<(f64, f64)>;

/// Flatten the outline into polygons, mapping font units to pixels with the
/// given scale and flipping y. Quadratic segments are subdivided until the
/// chord error is below `tol` pixels.
pub fn flatten(outline: &Outline, scale: f64, tol: f64) -> Vec<Poly> {
    let map = |p: &CurvePoint| (p.x * scale, -p.y * scale);
    let mut polys = Vec::with_capacity(outline.contours.len());
    for contour in &outline.contours {
        if contour.len() < 2 {
            continue;
        }
        let mut poly: Poly = Vec::with_capacity(contour.len() * 2);
        for seg in segments(contour) {
            match seg {
                Segment::Line(a, b) => {
                    let (a, b) = (map(&a), map(&b));
                    if poly.is_empty() {
                        poly.push(a);
                    }
                    poly.push(b);
                }
                Segment::Quad(a, c, b) => {
                    let (a, c, b) = (map(&a), map(&c), map(&b));
                    if poly.is_empty() {
                        poly.push(a);
                    }
                    flatten_quad(a, c, b, tol, &mut poly);
                }
            }
        }
        if poly.len() >= 3 {
            polys.push(poly);
        }
    }
    polys
}

enum Segment {
    Line(CurvePoint, CurvePoint),
    Quad(CurvePoint, CurvePoint, CurvePoint),
}

/// Expand a TrueType contour (mixed on/off points, implied midpoints between
/// consecutive off points) into explicit line/quad segments.
fn segments(contour: &[CurvePoint]) -> Vec<Segment> {
    let mid = |a: &CurvePoint, b: &CurvePoint| CurvePoint {
        x: (a.x + b.x) / 2.0,
        y: (a.y + b.y) / 2.0,
        on_curve: true,
    };
    // Rotate so the walk starts on-curve; a fully off-curve contour starts at
    // an implied midpoint and walks every stored point.
    let n = contour.len();
    let (start_pt, first, count) = match contour.iter().position(|p| p.on_curve) {
        Some(i) => (contour[i], i + 1, n - 1),
        None => (mid(&contour[n - 1], &contour[0]), 0, n),
    };

    let mut segs = Vec::with_capacity(n);
    let mut cur = start_pt;
    let mut pending_ctrl: Option<CurvePoint> = None;
    for k in 0..count {
        let p = contour[(first + k) % n];
        if p.on_curve {
            match pending_ctrl.take() {
                Some(c) => segs.push(Segment::Quad(cur, c, p)),
                None => segs.push(Segment::Line(cur, p)),
            }
            cur = p;
        } else {
            if let Some(c) = pending_ctrl.take() {
                let m = mid(&c, &p);
                segs.push(Segment::Quad(cur, c, m));
                cur = m;
            }
            pending_ctrl = Some(p);
        }
    }
    // Close back to the start.
    match pending_ctrl.take() {
        Some(c) => segs.push(Segment::Quad(cur, c, start_pt)),
        None => segs.push(Segment::Line(cur, start_pt)),
    }
    segs
}

fn flatten_quad(a: (f64, f64), c: (f64, f64), b: (f64, f64), tol: f64, out: &mut Poly) {
    // Max deviation of the curve from chord ab is |a - 2c + b| / 4.
    let ex = a.0 - 2.0 * c.0 + b.0;
    let ey = a.1 - 2.0 * c.1 + b.1;
    let err = (ex * ex + ey * ey).sqrt() / 4.0;
    let n = ((err / tol.max(1e-6)).sqrt().ceil() as usize).clamp(1, 64);
    for i in 1..=n {
        let t = i as f64 / n as f64;
        let u = 1.0 - t;
        out.push((
            u * u * a.0 + 2.0 * u * t * c.0 + t * t * b.0,
            u * u * a.1 + 2.0 * u * t * c.1 + t * t * b.1,
        ));
    }
}

/// Axis-aligned bounds over all polygon vertices.
pub fn bounds(polys: &[Poly]) -> Option<(f64, f64, f64, f64)> {
    let mut it = polys.iter().flatten();
    let &(x0, y0) = it.next()?;
    let mut r = (x0, y0, x0, y0);
    for &(x, y) in it {
        r.0 = r.0.min(x);
        r.1 = r.1.min(y);
        r.2 = r.2.max(x);
        r.3 = r.3.max(y);
    }
    Some(r)
}

pub fn translate(polys: &mut [Poly], dx: f64, dy: f64) {
    for poly in polys {
        for p in poly {
            p.0 += dx;
            p.1 += dy;
        }
    }
}

/// Non-zero winding scanline fill. Returns a w×h binary coverage bitmap
/// sampled at pixel centers.
pub fn fill(polys: &[Poly], w: usize, h: usize) -> Vec<u8> {
    struct Edge {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        dir: i32,
    }
    let mut edges = Vec::new();
    for poly in polys {
        for i in 0..poly.len() {
            let (x0, y0) = poly[i];
            let (x1, y1) = poly[(i + 1) % poly.len()];
            if y0 == y1 {
                continue;
            }
            edges.push(Edge {
                x0,
                y0,
                x1,
                y1,
                dir: if y1 > y0 { 1 } else { -1 },
            });
        }
    }
    // Bucket edges by the scanline rows they cross.
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); h];
    for (i, e) in edges.iter().enumerate() {
        let (ymin, ymax) = if e.y0 < e.y1 { (e.y0, e.y1) } else { (e.y1, e.y0) };
        let r0 = (ymin - 0.5).ceil().max(0.0) as usize;
        let r1 = ((ymax - 0.5).ceil() as isize).clamp(0, h as isize) as usize;
        for row in rows.iter_mut().take(r1.min(h)).skip(r0.min(h)) {
            row.push(i as u32);
        }
    }

    let mut bitmap = vec![0u8; w * h];
    let mut crossings: Vec<(f64, i32)> = Vec::new();
    for (row, row_edges) in rows.iter().enumerate() {
        if row_edges.is_empty() {
            continue;
        }
        let yc = row as f64 + 0.5;
        crossings.clear();
        for &ei in row_edges {
            let e = &edges[ei as usize];
            let (ymin, ymax) = if e.y0 < e.y1 { (e.y0, e.y1) } else { (e.y1, e.y0) };
            if yc < ymin || yc >= ymax {
                continue;
            }
            let x = e.x0 + (yc - e.y0) * (e.x1 - e.x0) / (e.y1 - e.y0);
            crossings.push((x, e.dir));
        }
        crossings.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut winding = 0;
        let mut span_start = 0.0f64;
        for &(x, dir) in crossings.iter() {
            if winding == 0 {
                span_start = x;
            }
            winding += dir;
            if winding == 0 {
                let c0 = (span_start - 0.5).ceil().max(0.0) as usize;
                let c1 = ((x - 0.5).ceil() as isize).clamp(0, w as isize) as usize;
                for px in &mut bitmap[row * w + c0.min(w)..row * w + c1] {
                    *px = 1;
                }
            }
        }
    }
    bitmap
}

/// Average ss×ss blocks of the binary bitmap into a coverage image in [0,1].
pub fn downsample(bitmap: &[u8], w: usize, h: usize, ss: usize) -> Array2<f32> {
    assert_eq!(bitmap.len(), w * h);
    assert!(w % ss == 0 && h % ss == 0);
    let (ow, oh) = (w / ss, h / ss);
    let norm = 1.0 / (ss * ss) as f32;
    Array2::from_shape_fn((oh, ow), |(r, c)| {
        let mut acc = 0u32;
        for dr in 0..ss {
            let base = (r * ss + dr) * w + c * ss;
            for px in &bitmap[base..base + ss] {
                acc += *px as u32;
            }
        }
        acc as f32 * norm
    })
}
