//! Signed distance from a point to an oriented rectangle, and the
//! linearized collision constraint built from it.
//!
//! The signed distance of a convex set is a convex function, so its
//! first-order expansion at any point (with any valid subgradient) is a
//! global under-estimator. A half-space built from that expansion is
//! therefore contained in the true collision-free region.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Position2, VehicleState};

/// Segments shorter than this do not define an orientation.
pub const MIN_SEGMENT_FOR_HEADING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: Position2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedRect {
    pub fn new(center: Position2, heading: f64, half_length: f64, half_width: f64) -> Result<Self> {
        if !(half_length > 0.0 && half_width > 0.0) {
            return Err(Error::invalid(
                "rectangle",
                format!("half extents must be positive, got l={half_length}, w={half_width}"),
            ));
        }
        Ok(OrientedRect {
            center,
            heading,
            half_length,
            half_width,
        })
    }

    fn to_local(self, p: Position2) -> Position2 {
        (p - self.center).rotate(-self.heading)
    }

    fn to_world_dir(self, v: Position2) -> Position2 {
        v.rotate(self.heading)
    }

    pub fn corners(&self) -> [Position2; 4] {
        let (l, w) = (self.half_length, self.half_width);
        [(l, w), (-l, w), (-l, -w), (l, -w)]
            .map(|(x, y)| self.center + Position2::new(x, y).rotate(self.heading))
    }
}

/// `{x : normal . x >= offset}` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Position2,
    pub offset: f64,
}

impl HalfSpace {
    pub fn new(normal: Position2, offset: f64) -> Result<Self> {
        let n = normal.norm();
        if !(n.is_finite() && (n - 1.0).abs() <= 1e-9) {
            return Err(Error::invalid(
                "half-space",
                format!("normal must be unit length, has norm {n}"),
            ));
        }
        Ok(HalfSpace { normal, offset })
    }

    /// Signed slack of `x`; non-negative inside.
    pub fn margin(&self, x: Position2) -> f64 {
        self.normal.dot(x) - self.offset
    }

    pub fn contains(&self, x: Position2, tol: f64) -> bool {
        self.margin(x) >= -tol
    }
}

/// Signed distance from `point` to `rect` and its (sub)gradient.
///
/// Positive outside (Euclidean distance to the boundary), negative inside
/// (minus the penetration depth to the nearest edge). Outside, the gradient
/// is the unit vector from the closest boundary point. Inside, it is the
/// outward normal of the nearest edge; equal depths are broken by the larger
/// dot product of the edge normal with `point - center`, then by the fixed
/// edge order +x, -x, +y, -y in the rectangle frame.
pub fn signed_distance(point: Position2, rect: &OrientedRect) -> (f64, Position2) {
    let local = rect.to_local(point);
    let (l, w) = (rect.half_length, rect.half_width);
    let qx = local.x.abs() - l;
    let qy = local.y.abs() - w;

    if qx > 0.0 || qy > 0.0 {
        let closest = Position2::new(local.x.clamp(-l, l), local.y.clamp(-w, w));
        let diff = local - closest;
        let dist = diff.norm();
        return (dist, rect.to_world_dir(diff * (1.0 / dist)));
    }

    // (outward normal, signed edge distance, dot with the local offset)
    let edges = [
        (Position2::new(1.0, 0.0), local.x - l, local.x),
        (Position2::new(-1.0, 0.0), -local.x - l, -local.x),
        (Position2::new(0.0, 1.0), local.y - w, local.y),
        (Position2::new(0.0, -1.0), -local.y - w, -local.y),
    ];
    let mut best = edges[0];
    for e in &edges[1..] {
        if e.1 > best.1 || (e.1 == best.1 && e.2 > best.2) {
            best = *e;
        }
    }
    (best.1, rect.to_world_dir(best.0))
}

/// Linearizes `signed_distance(x, rect) - margin >= 0` at `x_k`.
///
/// The result is an inner approximation of the constraint for every `x_k`,
/// including points that currently violate it.
pub fn cfs_halfspace(x_k: Position2, rect: &OrientedRect, margin: f64) -> HalfSpace {
    let (dist, grad) = signed_distance(x_k, rect);
    let phi = dist - margin;
    // phi + g.(x - x_k) >= 0  <=>  g.x >= g.x_k - phi
    HalfSpace {
        normal: grad,
        offset: grad.dot(x_k) - phi,
    }
}

/// Parameters `(enter, leave)` of the open interval of the line
/// `{origin + s * dir}` (unit `dir`) closer than `margin` to `rect`, or
/// `None` when the line stays clear.
///
/// The signed distance restricted to a line is convex in `s`, so the
/// blocked set is a single interval; its ends are found numerically.
pub fn blocked_interval(
    origin: Position2,
    dir: Position2,
    rect: &OrientedRect,
    margin: f64,
) -> Option<(f64, f64)> {
    let phi = |s: f64| signed_distance(origin + dir * s, rect).0 - margin;
    let center = dir.dot(rect.center - origin);
    let reach = rect.half_length + rect.half_width + margin.max(0.0) + 1.0;
    let (mut lo, mut hi) = (center - reach, center + reach);

    // golden-section search for the minimum
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..LINE_SEARCH_STEPS {
        let a = hi - ratio * (hi - lo);
        let b = lo + ratio * (hi - lo);
        if phi(a) <= phi(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let s_min = 0.5 * (lo + hi);
    if phi(s_min) >= 0.0 {
        return None;
    }
    let root = |mut inside: f64, mut outside: f64| {
        for _ in 0..LINE_SEARCH_STEPS {
            let mid = 0.5 * (inside + outside);
            if phi(mid) < 0.0 {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        outside
    };
    Some((root(s_min, center - reach), root(s_min, center + reach)))
}

/// Collision constraints for a point confined to the line
/// `{origin + s * dir}` that must avoid all of `rects`.
///
/// The blocked intervals are merged and the point is kept in the free gap
/// containing `x_k`. When `x_k` is blocked it goes to the nearer end of its
/// merged interval, the lower end on a tie. Returns zero, one or two
/// half-spaces, each exact on the line.
pub fn line_halfspaces(
    x_k: Position2,
    origin: Position2,
    dir: Position2,
    rects: &[OrientedRect],
    margin: f64,
) -> Vec<HalfSpace> {
    let dir = dir * (1.0 / dir.norm());
    let mut blocked: Vec<(f64, f64)> = rects
        .iter()
        .filter_map(|r| blocked_interval(origin, dir, r, margin))
        .collect();
    blocked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(blocked.len());
    for (a, b) in blocked {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }

    let base = dir.dot(origin);
    let mut s = dir.dot(x_k - origin);
    if let Some(&(a, b)) = merged.iter().find(|(a, b)| *a < s && s < *b) {
        s = if s - a <= b - s { a } else { b };
    }
    let mut out = Vec::with_capacity(2);
    if let Some(&(_, b)) = merged.iter().rev().find(|(_, b)| *b <= s) {
        out.push(HalfSpace {
            normal: dir,
            offset: base + b,
        });
    }
    if let Some(&(a, _)) = merged.iter().find(|(a, _)| *a >= s) {
        out.push(HalfSpace {
            normal: dir * -1.0,
            offset: -(base + a),
        });
    }
    out
}

const LINE_SEARCH_STEPS: usize = 100;

/// Smallest center-to-center distance over all pairs of states.
pub fn min_pairwise_distance(states: &[VehicleState]) -> Result<f64> {
    let positions: Vec<Position2> = states.iter().map(|s| s.position).collect();
    min_pairwise_point_distance(&positions)
}

pub fn min_pairwise_point_distance(points: &[Position2]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::TooFewStates {
            required: 2,
            actual: points.len(),
        });
    }
    let mut best = f64::INFINITY;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.min(a.distance(*b));
        }
    }
    Ok(best)
}

/// Rectangle occupied by a neighbor at sample `h` of its broadcast plan.
///
/// Oriented along the plan segment starting at `h` (the last segment for the
/// final sample); falls back to `fallback_heading` when the segment is too
/// short to define a direction.
pub fn neighbor_rect(
    plan: &crate::types::Trajectory,
    h: usize,
    fallback_heading: f64,
    half_length: f64,
    half_width: f64,
) -> OrientedRect {
    let heading = plan
        .segment_heading(h, MIN_SEGMENT_FOR_HEADING)
        .unwrap_or(fallback_heading);
    OrientedRect {
        center: plan.points()[h],
        heading,
        half_length,
        half_width,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Trajectory;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_rect() -> OrientedRect {
        OrientedRect::new(Position2::ZERO, 0.0, 1.9, 1.0).unwrap()
    }

    #[test]
    fn distance_along_long_axis() {
        let (d, g) = signed_distance(Position2::new(5.0, 0.0), &unit_rect());
        assert_abs_diff_eq!(d, 3.1, epsilon = 1e-12);
        assert_abs_diff_eq!(g.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn distance_from_corner() {
        let (d, g) = signed_distance(Position2::new(4.9, 5.0), &unit_rect());
        assert_abs_diff_eq!(d, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.x, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(g.y, 0.8, epsilon = 1e-12);
    }

    #[test]
    fn distance_inside_picks_nearest_edge() {
        let (d, g) = signed_distance(Position2::ZERO, &unit_rect());
        assert_abs_diff_eq!(d, -1.0, epsilon = 1e-12);
        assert_eq!(g, Position2::new(0.0, 1.0));
        let (d, g) = signed_distance(Position2::new(0.0, -0.5), &unit_rect());
        assert_abs_diff_eq!(d, -0.5, epsilon = 1e-12);
        assert_eq!(g, Position2::new(0.0, -1.0));
    }

    #[test]
    fn interior_tie_prefers_larger_dot() {
        let rect = OrientedRect::new(Position2::ZERO, 0.0, 1.5, 1.0).unwrap();
        // depth 0.25 to both the +x and the +y edge
        let (d, g) = signed_distance(Position2::new(1.25, 0.75), &rect);
        assert_eq!(d, -0.25);
        assert_eq!(g, Position2::new(1.0, 0.0));
    }

    #[test]
    fn halfspace_examples() {
        let h = cfs_halfspace(Position2::new(5.0, 0.0), &unit_rect(), 3.0);
        assert_abs_diff_eq!(h.normal.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.offset, 4.9, epsilon = 1e-12);

        let xk = Position2::new(4.9, 5.0);
        let h = cfs_halfspace(xk, &unit_rect(), 3.0);
        assert_abs_diff_eq!(h.normal.x, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(h.normal.y, 0.8, epsilon = 1e-12);
        // margin at x_k equals phi = 2
        assert_abs_diff_eq!(h.margin(xk), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn halfspace_touching_supporting_line() {
        // phi(x_k) = 0 on the inflated side: the boundary passes through x_k
        let xk = Position2::new(0.3, 4.0);
        let h = cfs_halfspace(xk, &unit_rect(), 3.0);
        assert_abs_diff_eq!(h.margin(xk), 0.0, epsilon = 1e-12);
        assert_eq!(h.normal, Position2::new(0.0, 1.0));
    }

    #[test]
    fn min_distance_examples() {
        let s = |x, y| VehicleState::new(Position2::new(x, y), 0.0, 0.0).unwrap();
        assert_eq!(
            min_pairwise_distance(&[s(0.0, 0.0), s(3.0, 4.0)]).unwrap(),
            5.0
        );
        let tri = [s(0.0, 0.0), s(1.0, 0.0), s(0.5, 3f64.sqrt() / 2.0)];
        assert_abs_diff_eq!(min_pairwise_distance(&tri).unwrap(), 1.0, epsilon = 1e-12);
        assert!(matches!(
            min_pairwise_distance(&[s(0.0, 0.0)]),
            Err(Error::TooFewStates { .. })
        ));
    }

    #[test]
    fn neighbor_rect_orientation() {
        let plan = Trajectory::new(
            vec![
                Position2::new(0.0, 0.0),
                Position2::new(0.0, 1.0),
                Position2::new(0.0, 1.0),
            ],
            0.1,
        )
        .unwrap();
        let r0 = neighbor_rect(&plan, 0, 0.0, 1.9, 1.0);
        assert_abs_diff_eq!(r0.heading, std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        // degenerate last segment falls back to the broadcast heading
        let r2 = neighbor_rect(&plan, 2, 0.25, 1.9, 1.0);
        assert_eq!(r2.heading, 0.25);
    }

    #[test]
    fn blocked_interval_beside_long_edge() {
        // level with the rectangle the plain gradient is perpendicular to the line
        let rect = OrientedRect::new(Position2::new(-2.0, 23.0), 0.0, 1.9, 1.0).unwrap();
        let (enter, leave) = blocked_interval(
            Position2::new(2.0, 0.0),
            Position2::new(0.0, 1.0),
            &rect,
            2.5,
        )
        .unwrap();
        // the inflated corner starts where the distance to (-0.1, 22) is 2.5
        let expected = 22.0 - (2.5f64 * 2.5 - 2.1 * 2.1).sqrt();
        assert_abs_diff_eq!(enter, expected, epsilon = 1e-9);
        assert_abs_diff_eq!(leave, 46.0 - expected, epsilon = 1e-9);
        assert!(blocked_interval(
            Position2::new(9.0, 0.0),
            Position2::new(0.0, 1.0),
            &rect,
            2.5
        )
        .is_none());
    }

    #[test]
    fn line_halfspaces_pick_the_gap() {
        let up = Position2::new(0.0, 1.0);
        let origin = Position2::new(0.0, 0.0);
        let at = |y: f64| OrientedRect::new(Position2::new(0.0, y), 0.0, 1.0, 1.0).unwrap();
        let rects = [at(0.0), at(20.0)];
        // blocked (-2, 2) and (18, 22) with margin 1
        let between = line_halfspaces(Position2::new(0.0, 8.0), origin, up, &rects, 1.0);
        assert_eq!(between.len(), 2);
        assert!(between
            .iter()
            .all(|h| h.contains(Position2::new(0.0, 10.0), 0.0)));
        assert!(!between
            .iter()
            .all(|h| h.contains(Position2::new(0.0, 1.0), 0.0)));
        assert!(!between
            .iter()
            .all(|h| h.contains(Position2::new(0.0, 19.0), 0.0)));
        // blocked points leave by the nearer end
        let hs = line_halfspaces(Position2::new(0.0, 21.0), origin, up, &rects, 1.0);
        assert_eq!(hs.len(), 1);
        assert_abs_diff_eq!(hs[0].offset, 22.0, epsilon = 1e-9);
        // overlapping intervals merge
        let hs = line_halfspaces(
            Position2::new(0.0, 2.5),
            origin,
            up,
            &[at(0.0), at(3.0)],
            1.0,
        );
        assert_eq!(hs.len(), 1);
        assert_abs_diff_eq!(hs[0].offset, 5.0, epsilon = 1e-9);
        assert!(line_halfspaces(
            Position2::new(9.0, 0.0),
            Position2::new(9.0, 0.0),
            up,
            &rects,
            1.0
        )
        .is_empty());
    }

    fn rect_strategy() -> impl Strategy<Value = OrientedRect> {
        (
            -20.0..20.0f64,
            -20.0..20.0f64,
            -4.0..4.0f64,
            0.2..4.0f64,
            0.2..3.0f64,
        )
            .prop_map(|(x, y, th, l, w)| OrientedRect::new(Position2::new(x, y), th, l, w).unwrap())
    }

    fn brute_distance(p: Position2, rect: &OrientedRect) -> f64 {
        // distance to the four edges, sign from a point-in-polygon check
        let c = rect.corners();
        let mut d = f64::INFINITY;
        for i in 0..4 {
            let (a, b) = (c[i], c[(i + 1) % 4]);
            let ab = b - a;
            let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
            d = d.min(p.distance(a + ab * t));
        }
        let inside = (0..4).all(|i| (c[(i + 1) % 4] - c[i]).cross(p - c[i]) >= 0.0);
        if inside {
            -d
        } else {
            d
        }
    }

    proptest! {
        #[test]
        fn line_halfspaces_are_inner_on_the_line(
            a in rect_strategy(),
            b in rect_strategy(),
            ox in -20.0..20.0f64, oy in -20.0..20.0f64,
            angle in -3.2..3.2f64,
            sk in -40.0..40.0f64,
            margin in 0.0..3.0f64,
        ) {
            let origin = Position2::new(ox, oy);
            let dir = Position2::new(angle.cos(), angle.sin());
            let hs = line_halfspaces(origin + dir * sk, origin, dir, &[a, b], margin);
            for i in 0..=400 {
                let p = origin + dir * (-60.0 + 0.3 * i as f64);
                if hs.iter().all(|h| h.contains(p, 0.0)) {
                    prop_assert!(signed_distance(p, &a).0 >= margin - 1e-9);
                    prop_assert!(signed_distance(p, &b).0 >= margin - 1e-9);
                }
            }
        }

        #[test]
        fn matches_polygon_distance(rect in rect_strategy(), px in -30.0..30.0f64, py in -30.0..30.0f64) {
            let p = Position2::new(px, py);
            let (d, g) = signed_distance(p, &rect);
            prop_assert!((d - brute_distance(p, &rect)).abs() < 1e-9);
            prop_assert!((g.norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn rigid_motion_equivariance(
            rect in rect_strategy(),
            px in -30.0..30.0f64, py in -30.0..30.0f64,
            angle in -3.0..3.0f64, tx in -50.0..50.0f64, ty in -50.0..50.0f64,
        ) {
            let p = Position2::new(px, py);
            let t = Position2::new(tx, ty);
            let moved = OrientedRect {
                center: rect.center.rotate(angle) + t,
                heading: rect.heading + angle,
                ..rect
            };
            let (d0, _) = signed_distance(p, &rect);
            let (d1, _) = signed_distance(p.rotate(angle) + t, &moved);
            prop_assert!((d0 - d1).abs() < 1e-9);
        }

        #[test]
        fn gradient_matches_finite_differences(
            rect in rect_strategy(), angle in -3.2..3.2f64, extra in 0.05..10.0f64,
        ) {
            // push a boundary point outward along a random direction; skip
            // points too close to a corner Voronoi boundary
            let p = rect.center + Position2::from_polar(rect.half_length + rect.half_width + extra, angle);
            let local = (p - rect.center).rotate(-rect.heading);
            let near_boundary = |a: f64, b: f64| (a.abs() - b).abs() < 1e-3;
            prop_assume!(!near_boundary(local.x, rect.half_length) && !near_boundary(local.y, rect.half_width));
            let (_, g) = signed_distance(p, &rect);
            let h = 1e-6;
            let fd = |dir: Position2| {
                (signed_distance(p + dir * h, &rect).0 - signed_distance(p - dir * h, &rect).0) / (2.0 * h)
            };
            prop_assert!((fd(Position2::new(1.0, 0.0)) - g.x).abs() < 1e-5);
            prop_assert!((fd(Position2::new(0.0, 1.0)) - g.y).abs() < 1e-5);
        }

        #[test]
        fn halfspace_is_inner_approximation(
            rect in rect_strategy(),
            kx in -25.0..25.0f64, ky in -25.0..25.0f64,
            px in -40.0..40.0f64, py in -40.0..40.0f64,
            margin in 0.0..4.0f64,
        ) {
            let hs = cfs_halfspace(Position2::new(kx, ky), &rect, margin);
            let p = Position2::new(px, py);
            if hs.margin(p) >= 0.0 {
                prop_assert!(signed_distance(p, &rect).0 - margin >= -1e-9);
            }
        }
    }
}
