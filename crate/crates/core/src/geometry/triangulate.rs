use nalgebra::{DMatrix, Vector3};

use super::GeometryError;
use crate::camera::Camera;
use crate::scene::Scene;

/// Below this ratio of the two smallest singular values to the largest,
/// the DLT system is treated as rank deficient.
pub const DLT_RANK_TOL: f64 = 1e-12;
/// Smallest homogeneous coordinate accepted for a finite point.
pub const DLT_MIN_W: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    pub points: Vec<Vector3<f64>>,
    /// Points whose rays do not determine a finite position.
    pub degenerate: Vec<bool>,
}

impl Triangulation {
    pub fn num_degenerate(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

/// Solves one point from `(camera, x, y)` measurements by the direct linear
/// transform. Returns the point (zero if it is at infinity) and whether it
/// is degenerate.
pub fn triangulate_point(views: &[(&Camera, f64, f64)]) -> (Vector3<f64>, bool) {
    if views.len() < 2 {
        return (Vector3::zeros(), true);
    }
    let mut a = DMatrix::zeros(2 * views.len().max(2), 4);
    for (k, (cam, x, y)) in views.iter().enumerate() {
        let p = cam.matrix();
        for c in 0..4 {
            a[(2 * k, c)] = x * p[(2, c)] - p[(0, c)];
            a[(2 * k + 1, c)] = y * p[(2, c)] - p[(1, c)];
        }
    }
    // Each pair of rows is scale-free; equalize them so no view dominates.
    for r in 0..a.nrows() {
        let n = a.row(r).norm();
        if n > 0.0 {
            a.row_mut(r).scale_mut(1.0 / n);
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let smallest = order[order.len() - 1];
    let second = order[order.len() - 2];
    let rank_deficient = sv.len() < 4 || sv[second] <= DLT_RANK_TOL * sv[order[0]];
    let h = v_t.row(smallest);
    let w = h[3];
    if rank_deficient || w.abs() < DLT_MIN_W {
        let point = if w.abs() >= DLT_MIN_W {
            Vector3::new(h[0] / w, h[1] / w, h[2] / w)
        } else {
            Vector3::zeros()
        };
        return (point, true);
    }
    (Vector3::new(h[0] / w, h[1] / w, h[2] / w), false)
}

/// DLT triangulation of every point of `scene` from `cameras`.
pub fn triangulate(scene: &Scene, cameras: &[Camera]) -> Result<Triangulation, GeometryError> {
    if cameras.len() != scene.num_views() {
        return Err(GeometryError::DimMismatch {
            what: "cameras",
            found: cameras.len(),
            expected: scene.num_views(),
        });
    }
    for cam in cameras {
        if cam.mode() != scene.mode() {
            return Err(GeometryError::ModeMismatch);
        }
        if cam.matrix().iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("camera"));
        }
    }
    let obs = scene.observations();
    let mut points = Vec::with_capacity(scene.num_points());
    let mut degenerate = Vec::with_capacity(scene.num_points());
    for j in 0..scene.num_points() {
        let views: Vec<(&Camera, f64, f64)> = scene
            .pattern()
            .observations_of_point(j)
            .iter()
            .map(|&k| (&cameras[obs[k].view], obs[k].x, obs[k].y))
            .collect();
        let (x, d) = triangulate_point(&views);
        points.push(x);
        degenerate.push(d);
    }
    Ok(Triangulation { points, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{dehomogenize, Pose};
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    fn cam(axis: Vector3<f64>, angle: f64, c: Vector3<f64>) -> Camera {
        Camera::Euclidean(Pose::new(
            UnitQuaternion::from_scaled_axis(axis.normalize() * angle),
            c,
        ))
    }

    fn observe(c: &Camera, x: &Vector3<f64>) -> (f64, f64) {
        let m = dehomogenize(&c.transform(x));
        (m.x, m.y)
    }

    #[test]
    fn two_views_recover_the_point() {
        let x = Vector3::new(0.3, -0.2, 0.5);
        let c1 = cam(Vector3::y(), 0.1, Vector3::new(0.0, 0.0, -5.0));
        let c2 = cam(Vector3::y(), -0.3, Vector3::new(2.0, 0.0, -5.0));
        let (a, b) = (observe(&c1, &x), observe(&c2, &x));
        let (y, deg) = triangulate_point(&[(&c1, a.0, a.1), (&c2, b.0, b.1)]);
        assert!(!deg);
        assert!((y - x).norm() < 1e-9);

        let c3 = cam(Vector3::x(), 0.2, Vector3::new(-1.0, 2.0, -4.0));
        let c = observe(&c3, &x);
        let (z, deg) = triangulate_point(&[(&c1, a.0, a.1), (&c2, b.0, b.1), (&c3, c.0, c.1)]);
        assert!(!deg);
        assert!((z - y).norm() < 1e-9);
    }

    #[test]
    fn identical_views_are_degenerate() {
        let x = Vector3::new(0.3, -0.2, 0.5);
        let c1 = cam(Vector3::y(), 0.1, Vector3::new(0.0, 0.0, -5.0));
        let a = observe(&c1, &x);
        let (_, deg) = triangulate_point(&[(&c1, a.0, a.1), (&c1, a.0, a.1)]);
        assert!(deg);
        let (_, single) = triangulate_point(&[(&c1, a.0, a.1)]);
        assert!(single);
    }

    #[test]
    fn projective_cameras() {
        let x = Vector3::new(0.1, 0.4, -0.3);
        let p1 = Camera::Projective(cam(Vector3::z(), 0.3, Vector3::new(0.0, 0.0, -4.0)).matrix() * 2.5);
        let p2 = Camera::Projective(cam(Vector3::y(), 0.4, Vector3::new(1.5, 0.0, -4.0)).matrix() * -0.7);
        let (a, b) = (observe(&p1, &x), observe(&p2, &x));
        let (y, deg) = triangulate_point(&[(&p1, a.0, a.1), (&p2, b.0, b.1)]);
        assert!(!deg);
        assert!((y - x).norm() < 1e-9);
    }

    proptest! {
        #[test]
        fn triangulation_inverts_projection(
            px in -1.0f64..1.0, py in -1.0f64..1.0, pz in -1.0f64..1.0,
            views in prop::collection::vec((-0.5f64..0.5, -0.5f64..0.5, 3.0f64..6.0, -0.3f64..0.3), 2..5),
        ) {
            let x = Vector3::new(px, py, pz);
            let cams: Vec<Camera> = views
                .iter()
                .map(|&(a, b, r, roll)| {
                    let c = Vector3::new(r * a.sin(), r * b.sin(), -r);
                    let q = UnitQuaternion::from_euler_angles(b, -a, roll);
                    Camera::Euclidean(Pose::new(q, c))
                })
                .collect();
            let obs: Vec<(f64, f64)> = cams.iter().map(|c| observe(c, &x)).collect();
            let input: Vec<(&Camera, f64, f64)> = cams.iter().zip(&obs).map(|(c, o)| (c, o.0, o.1)).collect();
            let baseline = cams.iter().map(|c| (c.pose().unwrap().center - cams[0].pose().unwrap().center).norm()).fold(0.0, f64::max);
            prop_assume!(baseline > 0.1);
            let (y, deg) = triangulate_point(&input);
            prop_assert!(!deg);
            prop_assert!((y - x).norm() < 1e-9, "{}", (y - x).norm());
        }
    }
}
