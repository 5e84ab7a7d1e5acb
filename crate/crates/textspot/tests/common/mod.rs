//! Shared helpers for integration tests: random convex quads, a
//! Monte-Carlo IoU estimator, and a straight-line soft-NMS reference.
//! The oracles here are deliberately independent of the library's
//! suppression and clipping code paths.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use textspot::fusion::{DecayMode, FusionConfig, OverlapMeasure};
use textspot::geometry::{self, Point, Polygon};
use textspot::ingest::Detection;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Monotone-chain hull, kept separate from the library implementation.
pub fn hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap().then(a.y.partial_cmp(&b.y).unwrap()));
    pts.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Random convex quadrilateral with vertices in the square
/// `[x0, x0+span] x [y0, y0+span]` (rejection sampling on the hull).
pub fn random_convex_quad<R: Rng>(rng: &mut R, x0: f64, y0: f64, span: f64) -> Polygon {
    loop {
        let pts: Vec<Point> = (0..4)
            .map(|_| Point::new(x0 + rng.gen::<f64>() * span, y0 + rng.gen::<f64>() * span))
            .collect();
        let h = hull(&pts);
        if h.len() == 4 {
            if let Ok(p) = Polygon::new(h) {
                if p.area() > 1e-3 {
                    return p;
                }
            }
        }
    }
}

/// Point-in-convex-polygon test for a counter-clockwise vertex ring.
pub fn inside_convex(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    for i in 0..n {
        if cross(poly[i], poly[(i + 1) % n], p) < 0.0 {
            return false;
        }
    }
    true
}

/// Rasterized IoU estimate: uniform samples over the joint bounding box.
pub fn monte_carlo_iou<R: Rng>(a: &Polygon, b: &Polygon, samples: usize, rng: &mut R) -> f64 {
    let (amin, amax) = a.bounding_box();
    let (bmin, bmax) = b.bounding_box();
    let x0 = amin.x.min(bmin.x);
    let y0 = amin.y.min(bmin.y);
    let x1 = amax.x.max(bmax.x);
    let y1 = amax.y.max(bmax.y);
    let mut in_both = 0usize;
    let mut in_either = 0usize;
    for _ in 0..samples {
        let p = Point::new(x0 + rng.gen::<f64>() * (x1 - x0), y0 + rng.gen::<f64>() * (y1 - y0));
        let ia = inside_convex(a.vertices(), p);
        let ib = inside_convex(b.vertices(), p);
        if ia && ib {
            in_both += 1;
        }
        if ia || ib {
            in_either += 1;
        }
    }
    if in_either == 0 {
        0.0
    } else {
        in_both as f64 / in_either as f64
    }
}

pub fn detection(image: &str, region: Polygon, score: f64, scale: f64) -> Detection {
    Detection {
        image_id: image.to_string(),
        region,
        score,
        transcription: None,
        model: "m".to_string(),
        scale,
    }
}

/// Random single-image detection set with distinct scores, for
/// suppression tests.
pub fn random_detections<R: Rng>(rng: &mut R, n: usize) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            let x0 = rng.gen::<f64>() * 80.0;
            let y0 = rng.gen::<f64>() * 80.0;
            let span = 5.0 + rng.gen::<f64>() * 15.0;
            let quad = random_convex_quad(rng, x0, y0, span);
            detection("img", quad, 0.01 + rng.gen::<f64>() * 0.99, 100.0)
        })
        .collect()
}

/// Straight-line transcription of the sequential soft-NMS pseudocode:
/// pop the argmax, decay every remaining score, prune, repeat.
pub fn soft_nms_reference(dets: &[Detection], cfg: &FusionConfig) -> Vec<Detection> {
    let mut pool: Vec<Detection> = dets.to_vec();
    let mut kept: Vec<Detection> = Vec::new();
    while !pool.is_empty() {
        let mut m = 0;
        for i in 1..pool.len() {
            if pool[i].score > pool[m].score {
                m = i;
            }
        }
        let selected = pool.remove(m);
        for d in &mut pool {
            let ov = match cfg.overlap_measure {
                OverlapMeasure::PolygonIou => {
                    geometry::iou_hull_fallback(&selected.region, &d.region)
                }
                OverlapMeasure::AxisAlignedIou => {
                    geometry::axis_aligned_iou(&selected.region, &d.region)
                }
            };
            match cfg.decay_mode {
                DecayMode::Linear => {
                    if ov >= cfg.overlap_threshold {
                        d.score *= 1.0 - ov;
                    }
                }
                DecayMode::Gaussian => {
                    d.score *= (-ov * ov / cfg.sigma).exp();
                }
            }
        }
        pool.retain(|d| d.score >= cfg.prune_score);
        kept.push(selected);
    }
    kept
}
