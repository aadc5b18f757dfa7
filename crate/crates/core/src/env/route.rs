//! Route centerline geometry: projection, arc-length lookup and road edges.

use crate::error::{contract, Result};

pub type Point = [f64; 2];

/// Signed-lateral projection of a point onto the centerline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc length measured from the route start (negative before it).
    pub arc: f64,
    /// Positive to the left of the direction of travel.
    pub lateral: f64,
    pub tangent_heading: f64,
}

/// A centerline polyline. Points before `start_arc = 0` and past `length`
/// are run-in/run-out extensions used only for sensing and projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    points: Vec<Point>,
    /// Cumulative arc length at each point, shifted so the route start is 0.
    arcs: Vec<f64>,
    length: f64,
    segments: Vec<Segment>,
    /// Mitred vertex normals (unit lateral offset at each point).
    normals: Vec<Point>,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
struct Segment {
    origin: Point,
    dir: Point,
    len: f64,
    heading: f64,
}

pub fn normalize_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

impl Route {
    /// Builds a route from a polyline whose arc length at `points[start_index]`
    /// is the route start and whose main part is `length` metres long.
    pub fn new(points: Vec<Point>, start_index: usize, length: f64) -> Result<Self> {
        if points.len() < 2 || start_index >= points.len() {
            return Err(contract("route needs at least two points"));
        }
        let mut arcs = Vec::with_capacity(points.len());
        arcs.push(0.0);
        for w in points.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            if !(d > 0.0) {
                return Err(contract("route arc lengths must be strictly increasing"));
            }
            arcs.push(arcs.last().unwrap() + d);
        }
        let shift = arcs[start_index];
        arcs.iter_mut().for_each(|a| *a -= shift);
        if !(length > 0.0) || length > *arcs.last().unwrap() + 1e-9 {
            return Err(contract("route length must be positive and within the polyline"));
        }
        let mut route = Self {
            points,
            arcs,
            length,
            segments: Vec::new(),
            normals: Vec::new(),
        };
        route.rebuild();
        Ok(route)
    }

    /// A main polyline extended by straight run-in/run-out sections.
    pub fn from_polyline(main: &[Point], run_in: f64, run_out: f64, spacing: f64) -> Result<Self> {
        if main.len() < 2 {
            return Err(contract("route needs at least two points"));
        }
        let dir = |a: Point, b: Point| {
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let n = (dx * dx + dy * dy).sqrt();
            [dx / n, dy / n]
        };
        let d0 = dir(main[1], main[0]);
        let n = main.len();
        let d1 = dir(main[n - 2], main[n - 1]);
        let mut points = Vec::new();
        let steps_in = (run_in / spacing).ceil() as usize;
        for k in (1..=steps_in).rev() {
            let t = run_in * k as f64 / steps_in as f64;
            points.push([main[0][0] + d0[0] * t, main[0][1] + d0[1] * t]);
        }
        let start_index = points.len();
        points.extend_from_slice(main);
        let mut length = 0.0;
        for w in main.windows(2) {
            length += ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        }
        let steps_out = (run_out / spacing).ceil() as usize;
        for k in 1..=steps_out {
            let t = run_out * k as f64 / steps_out as f64;
            points.push([main[n - 1][0] + d1[0] * t, main[n - 1][1] + d1[1] * t]);
        }
        Self::new(points, start_index, length)
    }

    fn rebuild(&mut self) {
        self.segments = self
            .points
            .windows(2)
            .map(|w| {
                let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
                let len = (dx * dx + dy * dy).sqrt();
                Segment {
                    origin: w[0],
                    dir: [dx / len, dy / len],
                    len,
                    heading: dy.atan2(dx),
                }
            })
            .collect();
        let segs = &self.segments;
        self.normals = (0..self.points.len())
            .map(|k| {
                let a = if k == 0 { segs[0].dir } else { segs[k - 1].dir };
                let b = if k >= segs.len() { segs[segs.len() - 1].dir } else { segs[k].dir };
                let (mx, my) = (a[0] + b[0], a[1] + b[1]);
                let mn = (mx * mx + my * my).sqrt();
                let m = [mx / mn, my / mn];
                // mitre length keeps the edge at constant distance from both segments
                let cos_half = m[0] * b[0] + m[1] * b[1];
                [-m[1] / cos_half, m[0] / cos_half]
            })
            .collect();
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn arcs(&self) -> &[f64] {
        &self.arcs
    }

    pub fn start_arc(&self) -> f64 {
        *self.arcs.first().unwrap()
    }

    pub fn end_arc(&self) -> f64 {
        *self.arcs.last().unwrap()
    }

    /// Nearest-segment projection. The first and last segments extend
    /// beyond their endpoints.
    pub fn project(&self, p: Point) -> Projection {
        let last = self.segments.len() - 1;
        let mut best = (f64::INFINITY, 0usize, 0.0f64, 0.0f64);
        for (i, seg) in self.segments.iter().enumerate() {
            let rel = [p[0] - seg.origin[0], p[1] - seg.origin[1]];
            let mut t = rel[0] * seg.dir[0] + rel[1] * seg.dir[1];
            if i != 0 {
                t = t.max(0.0);
            }
            if i != last {
                t = t.min(seg.len);
            }
            let q = [seg.origin[0] + seg.dir[0] * t, seg.origin[1] + seg.dir[1] * t];
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            if d2 < best.0 {
                let cross = seg.dir[0] * rel[1] - seg.dir[1] * rel[0];
                best = (d2, i, t, cross);
            }
        }
        let (_, i, t, cross) = best;
        Projection {
            arc: self.arcs[i] + t,
            lateral: cross,
            tangent_heading: self.segments[i].heading,
        }
    }

    fn segment_at(&self, arc: f64) -> usize {
        match self.arcs.binary_search_by(|a| a.total_cmp(&arc)) {
            Ok(i) => i.min(self.segments.len() - 1),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.segments.len() - 1),
        }
    }

    /// Pose `(x, y, heading)` at an arc length and lateral offset; outside the
    /// polyline the end segments are extrapolated.
    pub fn pose_at(&self, arc: f64, lateral: f64) -> (f64, f64, f64) {
        let i = self.segment_at(arc);
        let seg = &self.segments[i];
        let t = arc - self.arcs[i];
        let normal = [-seg.dir[1], seg.dir[0]];
        (
            seg.origin[0] + seg.dir[0] * t + normal[0] * lateral,
            seg.origin[1] + seg.dir[1] * t + normal[1] * lateral,
            seg.heading,
        )
    }

    /// Index range of segments whose start arc lies in `[lo, hi]`, widened by one.
    pub fn segment_window(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let a = self.segment_at(lo);
        let b = (self.segment_at(hi) + 1).min(self.segments.len());
        a..b
    }

    /// Road edge segment `i` offset by `lateral` (positive = left); neighbouring
    /// edge segments share their mitred endpoints.
    pub fn edge_segment(&self, i: usize, lateral: f64) -> (Point, Point) {
        let (p0, p1) = (self.points[i], self.points[i + 1]);
        let (n0, n1) = (self.normals[i], self.normals[i + 1]);
        (
            [p0[0] + n0[0] * lateral, p0[1] + n0[1] * lateral],
            [p1[0] + n1[0] * lateral, p1[1] + n1[1] * lateral],
        )
    }
}
