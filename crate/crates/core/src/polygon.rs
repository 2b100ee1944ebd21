//! Random simple polygons on the unit square: generation by perturbed
//! sampling along a circle, inner-angle classification, and point-in-polygon
//! tests used for rasterization.

use rand::rngs::StdRng;
use rand::Rng;

use crate::error::{Error, Result};

/// Inner-angle threshold (degrees) above which a polygon counts as extreme.
pub const EXTREME_ANGLE_DEG: f64 = 160.0;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PolygonSpec {
    /// Counter-clockwise vertices in unit-square coordinates.
    pub vertices: Vec<(f64, f64)>,
    /// True when any inner angle is at least 160 degrees.
    pub extreme: bool,
}

/// Constraint on the extreme-angle property during generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremeMode {
    Allow,
    Require,
    Forbid,
}

impl PolygonSpec {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Generation(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        let mut vertices = vertices;
        if signed_area(&vertices) < 0.0 {
            vertices.reverse();
        }
        let extreme = inner_angles_deg(&vertices)
            .iter()
            .any(|&a| a >= EXTREME_ANGLE_DEG);
        Ok(Self { vertices, extreme })
    }

    pub fn edge_count(&self) -> usize {
        self.vertices.len()
    }

    /// Endpoints of edge k: vertex k to vertex k+1.
    pub fn edge(&self, k: usize) -> ((f64, f64), (f64, f64)) {
        let m = self.vertices.len();
        (self.vertices[k], self.vertices[(k + 1) % m])
    }

    /// Even-odd ray-casting point containment.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        let m = self.vertices.len();
        let mut j = m - 1;
        for i in 0..m {
            let (xi, yi) = self.vertices[i];
            let (xj, yj) = self.vertices[j];
            if (yi > y) != (yj > y) {
                let x_cross = xj + (y - yj) / (yi - yj) * (xi - xj);
                if x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    pub fn inner_angles_deg(&self) -> Vec<f64> {
        inner_angles_deg(&self.vertices)
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }
}

fn signed_area(vertices: &[(f64, f64)]) -> f64 {
    let m = vertices.len();
    let mut acc = 0.0;
    for i in 0..m {
        let (x0, y0) = vertices[i];
        let (x1, y1) = vertices[(i + 1) % m];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

/// Interior angle at each vertex of a counter-clockwise simple polygon.
fn inner_angles_deg(vertices: &[(f64, f64)]) -> Vec<f64> {
    let m = vertices.len();
    (0..m)
        .map(|i| {
            let (px, py) = vertices[(i + m - 1) % m];
            let (vx, vy) = vertices[i];
            let (nx, ny) = vertices[(i + 1) % m];
            let (in_x, in_y) = (vx - px, vy - py);
            let (out_x, out_y) = (nx - vx, ny - vy);
            // Exterior turn angle; interior = pi - turn for CCW order.
            let turn = (in_x * out_y - in_y * out_x).atan2(in_x * out_x + in_y * out_y);
            (std::f64::consts::PI - turn).to_degrees()
        })
        .collect()
}

/// Sample a simple polygon with the requested edge count: vertices sit
/// approximately along a circle around the square center with perturbed
/// angles and radii, resampled until the extreme-angle constraint holds.
pub fn generate_polygon(edges: usize, rng: &mut StdRng, extreme: ExtremeMode) -> Result<PolygonSpec> {
    if !(4..=11).contains(&edges) {
        return Err(Error::Generation(format!(
            "edge count must be within 4..=11, got {edges}"
        )));
    }
    const MAX_TRIES: usize = 1000;
    let m = edges as f64;
    let spacing = std::f64::consts::TAU / m;
    for _ in 0..MAX_TRIES {
        let mut vertices = Vec::with_capacity(edges);
        for k in 0..edges {
            let angle = (k as f64) * spacing + rng.gen_range(-0.42..0.42) * spacing;
            let radius = 0.42 * rng.gen_range(0.55..1.1);
            let x = (0.5 + radius * angle.cos()).clamp(0.02, 0.98);
            let y = (0.5 + radius * angle.sin()).clamp(0.02, 0.98);
            vertices.push((x, y));
        }
        let poly = PolygonSpec::new(vertices)?;
        if poly.area().abs() < 0.05 {
            continue;
        }
        let ok = match extreme {
            ExtremeMode::Allow => true,
            ExtremeMode::Require => poly.extreme,
            ExtremeMode::Forbid => !poly.extreme,
        };
        if ok {
            return Ok(poly);
        }
    }
    Err(Error::Generation(format!(
        "no {extreme:?} polygon with {edges} edges after {MAX_TRIES} tries"
    )))
}

/// All unordered pairs of non-adjacent edges.
pub fn non_adjacent_edge_pairs(edges: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..edges {
        for j in i + 1..edges {
            let adjacent = j == i + 1 || (i == 0 && j == edges - 1);
            if !adjacent {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Distance from a point to a segment, plus the clamped projection parameter.
pub fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    (((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt(), t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn unit_square_angles_and_containment() {
        let sq = PolygonSpec::new(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).unwrap();
        for a in sq.inner_angles_deg() {
            assert!((a - 90.0).abs() < 1e-12);
        }
        assert!(!sq.extreme);
        assert!(sq.contains(0.5, 0.5));
        assert!(!sq.contains(1.5, 0.5));
        assert!((sq.area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clockwise_input_is_reoriented() {
        let sq = PolygonSpec::new(vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)]).unwrap();
        assert!(sq.area() > 0.0);
    }

    #[test]
    fn reflex_vertex_counts_as_extreme() {
        // An arrowhead with a reflex (> 180 degree) vertex.
        let poly = PolygonSpec::new(vec![
            (0.0, 0.0),
            (1.0, 0.0),
            (0.5, 0.4),
            (0.5, 1.0),
        ])
        .unwrap();
        assert!(poly.extreme);
        let total: f64 = poly.inner_angles_deg().iter().sum();
        assert!((total - 360.0).abs() < 1e-9, "angle sum {total}");
    }

    #[test]
    fn pentagon_angle_sum() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..20 {
            let poly = generate_polygon(5, &mut rng, ExtremeMode::Allow).unwrap();
            let total: f64 = poly.inner_angles_deg().iter().sum();
            assert!((total - 540.0).abs() < 1e-9, "angle sum {total}");
        }
    }

    #[test]
    fn extreme_modes_are_enforced() {
        for seed in 0..50u64 {
            let mut rng = StdRng::seed_from_u64(seed);
            let forbid = generate_polygon(5, &mut rng, ExtremeMode::Forbid).unwrap();
            assert!(forbid.inner_angles_deg().iter().all(|&a| a < EXTREME_ANGLE_DEG));
            let require = generate_polygon(5, &mut rng, ExtremeMode::Require).unwrap();
            assert!(require.inner_angles_deg().iter().any(|&a| a >= EXTREME_ANGLE_DEG));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_polygon(7, &mut StdRng::seed_from_u64(99), ExtremeMode::Allow).unwrap();
        let b = generate_polygon(7, &mut StdRng::seed_from_u64(99), ExtremeMode::Allow).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn edge_count_bounds() {
        let mut rng = StdRng::seed_from_u64(0);
        assert!(generate_polygon(3, &mut rng, ExtremeMode::Allow).is_err());
        assert!(generate_polygon(12, &mut rng, ExtremeMode::Allow).is_err());
    }

    #[test]
    fn pentagon_has_five_non_adjacent_pairs() {
        // Brute-force check of the combinatorial count.
        let pairs = non_adjacent_edge_pairs(5);
        assert_eq!(pairs.len(), 5);
        for &(i, j) in &pairs {
            assert!(j != i + 1 && !(i == 0 && j == 4));
        }
        assert_eq!(non_adjacent_edge_pairs(4).len(), 2);
        assert_eq!(non_adjacent_edge_pairs(6).len(), 9);
    }

    #[test]
    fn segment_distance_basics() {
        let (d, t) = segment_distance((0.5, 1.0), (0.0, 0.0), (1.0, 0.0));
        assert!((d - 1.0).abs() < 1e-12 && (t - 0.5).abs() < 1e-12);
        let (d, t) = segment_distance((2.0, 0.0), (0.0, 0.0), (1.0, 0.0));
        assert!((d - 1.0).abs() < 1e-12 && (t - 1.0).abs() < 1e-12);
    }
}
