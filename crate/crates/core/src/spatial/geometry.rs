use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// One polygon: an exterior ring and optional holes. Rings may or may not
/// repeat their first vertex at the end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub exterior: Vec<Point>,
    #[serde(default)]
    pub holes: Vec<Vec<Point>>,
}

impl Polygon {
    pub fn new(exterior: Vec<Point>) -> Self {
        Self { exterior, holes: Vec::new() }
    }

    fn rings(&self) -> impl Iterator<Item = &[Point]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }

    fn contains(&self, p: Point) -> bool {
        ring_contains(&self.exterior, p) && !self.holes.iter().any(|h| ring_contains(h, p))
    }

    fn area(&self) -> f64 {
        ring_area(&self.exterior).abs() - self.holes.iter().map(|h| ring_area(h).abs()).sum::<f64>()
    }
}

/// An areal unit (e.g. a treatment-plant service area) in projected
/// planar coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub polygons: Vec<Polygon>,
}

impl Region {
    pub fn new(id: impl Into<String>, polygons: Vec<Polygon>) -> Self {
        Self { id: id.into(), polygons }
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn rectangle(id: impl Into<String>, x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(id, vec![Polygon::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])])
    }

    pub fn area(&self) -> f64 {
        self.polygons.iter().map(Polygon::area).sum()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p))
    }

    pub fn bbox(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in self.polygons.iter().flat_map(|poly| poly.exterior.iter()) {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.polygons.is_empty() {
            return Err(Error::Geometry(format!("region {} has no polygons", self.id)));
        }
        for poly in &self.polygons {
            for ring in poly.rings() {
                if distinct_vertices(ring) < 3 {
                    return Err(Error::Geometry(format!(
                        "region {} has a ring with fewer than 3 vertices",
                        self.id
                    )));
                }
                if ring.iter().flatten().any(|c| !c.is_finite()) {
                    return Err(Error::Geometry(format!("region {} has non-finite coordinates", self.id)));
                }
            }
        }
        let area = self.area();
        if !(area > 0.0) {
            return Err(Error::Geometry(format!("region {} has zero area", self.id)));
        }
        Ok(())
    }

    fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.polygons.iter().flat_map(|poly| poly.rings()).flat_map(ring_edges)
    }

    /// Distance from `p` to the nearest point of the (filled) region.
    pub fn distance_to(&self, p: Point) -> f64 {
        if self.contains(p) {
            return 0.0;
        }
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Deterministic point sample: boundary points every `spacing` along
    /// each ring (vertices included) and interior points of a square lattice
    /// anchored at the bounding-box corner.
    pub fn sample_points(&self, spacing: f64) -> Vec<Point> {
        let mut pts = Vec::new();
        for (a, b) in self.edges() {
            let len = dist(a, b);
            let steps = (len / spacing).ceil().max(1.0) as usize;
            for s in 0..steps {
                let t = s as f64 / steps as f64;
                pts.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        let (lo, hi) = self.bbox();
        let nx = ((hi[0] - lo[0]) / spacing).floor() as usize;
        let ny = ((hi[1] - lo[1]) / spacing).floor() as usize;
        for i in 0..=nx {
            for j in 0..=ny {
                let p = [lo[0] + i as f64 * spacing, lo[1] + j as f64 * spacing];
                if self.contains(p) {
                    pts.push(p);
                }
            }
        }
        pts
    }
}

fn distinct_vertices(ring: &[Point]) -> usize {
    let n = ring.len();
    if n >= 2 && ring[0] == ring[n - 1] {
        n - 1
    } else {
        n
    }
}

fn ring_edges(ring: &[Point]) -> impl Iterator<Item = (Point, Point)> + '_ {
    let n = distinct_vertices(ring);
    (0..n).map(move |i| (ring[i], ring[(i + 1) % n]))
}

fn ring_area(ring: &[Point]) -> f64 {
    0.5 * ring_edges(ring).map(|(a, b)| a[0] * b[1] - b[0] * a[1]).sum::<f64>()
}

/// Even-odd rule; points on the boundary count as inside.
fn ring_contains(ring: &[Point], p: Point) -> bool {
    let mut inside = false;
    for (a, b) in ring_edges(ring) {
        if point_segment_distance(p, a, b) <= 1e-12 * (1.0 + p[0].abs() + p[1].abs()) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * dx, a[1] + t * dy])
}

/// Default sampling density: 200 points along the bounding-box diagonal of
/// the region.
pub fn default_resolution(region: &Region) -> f64 {
    let (lo, hi) = region.bbox();
    200.0 / dist(lo, hi)
}

/// Empirical quantile taking the `ceil(q n)`-th smallest value, so that
/// `q = 1` is the maximum.
fn upper_quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    values[rank - 1]
}

fn directed(from: &Region, to: &Region, quantile: f64, spacing: f64) -> f64 {
    let mut d: Vec<f64> = from.sample_points(spacing).into_iter().map(|p| to.distance_to(p)).collect();
    upper_quantile(&mut d, quantile)
}

/// Quantile-extended Hausdorff distance. Source points are sampled at
/// `resolution` points per unit length; distances to the target are exact
/// distances to the filled target geometry. `quantile = 1` gives the
/// classical Hausdorff distance, `0.5` the median variant.
pub fn extended_hausdorff(a: &Region, b: &Region, quantile: f64, resolution: f64) -> Result<f64> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::Argument(format!("quantile {quantile} not in (0, 1]")));
    }
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::Argument(format!("resolution {resolution} must be positive")));
    }
    a.validate()?;
    b.validate()?;
    let spacing = 1.0 / resolution;
    Ok(directed(a, b, quantile, spacing).max(directed(b, a, quantile, spacing)))
}
