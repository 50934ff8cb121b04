use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed annotation outline in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationPolygon {
    vertices: Vec<(f64, f64)>,
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn segments_cross(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    ((d1 > 0.0) != (d2 > 0.0) && d1 != 0.0 && d2 != 0.0)
        && ((d3 > 0.0) != (d4 > 0.0) && d3 != 0.0 && d4 != 0.0)
}

impl AnnotationPolygon {
    /// Validates: at least 3 vertices, all finite, positive area, and no two
    /// non-adjacent edges crossing.
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Validation(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Validation("polygon has non-finite vertices".into()));
        }
        let poly = AnnotationPolygon { vertices };
        if poly.area() <= 0.0 {
            return Err(Error::Validation("polygon has zero area".into()));
        }
        let n = poly.vertices.len();
        let edge = |i: usize| (poly.vertices[i], poly.vertices[(i + 1) % n]);
        for i in 0..n {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (a, b) = edge(i);
                let (c, d) = edge(j);
                if segments_cross(a, b, c, d) {
                    return Err(Error::Validation(format!(
                        "polygon edges {i} and {j} intersect"
                    )));
                }
            }
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        AnnotationPolygon::new(vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    /// Shoelace area (absolute).
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let (x0, y0) = self.vertices[i];
                let (x1, y1) = self.vertices[(i + 1) % n];
                x0 * y1 - x1 * y0
            })
            .sum();
        twice.abs() / 2.0
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        AnnotationPolygon {
            vertices: self.vertices.iter().map(|&(x, y)| (x + dx, y + dy)).collect(),
        }
    }

    /// Sorted x coordinates where the horizontal line at `y` crosses the
    /// outline. Edges are half-open in y so shared vertices count once.
    pub(crate) fn crossings(&self, y: f64) -> Vec<f64> {
        let n = self.vertices.len();
        let mut xs = Vec::new();
        for i in 0..n {
            let (ax, ay) = self.vertices[i];
            let (bx, by) = self.vertices[(i + 1) % n];
            if (ay > y) != (by > y) {
                xs.push(ax + (y - ay) * (bx - ax) / (by - ay));
            }
        }
        xs.sort_by(f64::total_cmp);
        xs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_outlines() {
        assert!(AnnotationPolygon::new(vec![(0.0, 0.0), (1.0, 1.0)]).is_err());
        assert!(AnnotationPolygon::new(vec![(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]).is_err());
        // bow tie
        assert!(AnnotationPolygon::new(vec![(0.0, 0.0), (2.0, 2.0), (2.0, 0.0), (0.0, 2.0)]).is_err());
    }

    #[test]
    fn rectangle_area() {
        let p = AnnotationPolygon::rect(1.0, 2.0, 5.0, 4.0).unwrap();
        assert_eq!(p.area(), 8.0);
        assert_eq!(p.crossings(3.0), vec![1.0, 5.0]);
    }
}
