//! Pinhole projection of camera-frame point clouds onto sparse depth rasters.

use crate::raster::{BoolRaster, Raster};

/// Pinhole camera intrinsics, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Intrinsics {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
}

impl Intrinsics {
    /// Centered principal point with focal length equal to the frame side,
    /// i.e. a ~53° field of view.
    pub fn centered(h: usize, w: usize) -> Self {
        Intrinsics { fx: w as f32, fy: w as f32, cx: w as f32 / 2.0, cy: h as f32 / 2.0 }
    }
}

/// Continuous image coordinates of a camera-frame point; `None` behind the
/// camera (Z ≤ 0).
pub fn project_uv(point: [f32; 3], intr: &Intrinsics) -> Option<(f32, f32)> {
    let [x, y, z] = point;
    if z <= 0.0 {
        return None;
    }
    Some((intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy))
}

/// Invert `project_uv` at depth `z`: the camera-frame point whose projection
/// is `(u, v)`.
pub fn back_project(u: f32, v: f32, z: f32, intr: &Intrinsics) -> [f32; 3] {
    [(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z]
}

/// Project a point cloud to a sparse depth raster. Points behind the camera
/// or outside the frame are discarded; when several points land in one pixel
/// the nearest return wins.
pub fn project_pointcloud(
    points: &[[f32; 3]],
    intr: &Intrinsics,
    h: usize,
    w: usize,
) -> (Raster, BoolRaster) {
    let mut depth = Raster::new(h, w);
    let mut mask = BoolRaster::full(h, w, false);
    for &p in points {
        let Some((u, v)) = project_uv(p, intr) else { continue };
        if u < 0.0 || v < 0.0 {
            continue;
        }
        let (c, r) = (u as usize, v as usize);
        if r >= h || c >= w {
            continue;
        }
        let z = p[2];
        if !mask.at(r, c) || z < depth.at(r, c) {
            depth.set(r, c, z);
            mask.set(r, c, true);
        }
    }
    (depth, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    const INTR: Intrinsics = Intrinsics { fx: 96.0, fy: 96.0, cx: 48.0, cy: 48.0 };

    #[test]
    fn optical_axis_point_hits_the_principal_pixel() {
        let (depth, mask) = project_pointcloud(&[[0.0, 0.0, 7.5]], &INTR, 96, 96);
        assert!(mask.at(48, 48));
        assert_eq!(depth.at(48, 48), 7.5);
        assert_eq!(mask.count(), 1);
    }

    #[test]
    fn points_behind_the_camera_are_discarded() {
        assert_eq!(project_uv([0.0, 0.0, -1.0], &INTR), None);
        assert_eq!(project_uv([1.0, 1.0, 0.0], &INTR), None);
        let (_, mask) = project_pointcloud(&[[0.0, 0.0, -1.0]], &INTR, 96, 96);
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn nearest_return_wins_pixel_collisions() {
        let far = [1.0, 0.5, 5.0];
        let near = [0.8, 0.4, 4.0]; // same ray direction → same pixel
        let (depth, mask) = project_pointcloud(&[far, near], &INTR, 96, 96);
        let (u, v) = project_uv(far, &INTR).unwrap();
        assert!(mask.at(v as usize, u as usize));
        assert_eq!(depth.at(v as usize, u as usize), 4.0);
        // order independence
        let (depth2, _) = project_pointcloud(&[near, far], &INTR, 96, 96);
        assert_eq!(depth.data(), depth2.data());
    }

    #[test]
    fn out_of_frame_points_are_discarded() {
        let (_, mask) = project_pointcloud(&[[100.0, 0.0, 1.0], [-100.0, 0.0, 1.0]], &INTR, 96, 96);
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn doubling_fx_and_cx_doubles_u() {
        let doubled = Intrinsics { fx: 2.0 * INTR.fx, cx: 2.0 * INTR.cx, ..INTR };
        for p in [[0.5, -0.2, 3.0], [-1.0, 0.7, 10.0], [2.0, 0.0, 25.0]] {
            let (u, _) = project_uv(p, &INTR).unwrap();
            let (u2, _) = project_uv(p, &doubled).unwrap();
            assert!((u2 - 2.0 * u).abs() < 1e-4, "{u2} vs 2·{u}");
        }
    }

    #[test]
    fn back_projection_inverts_projection() {
        let p = back_project(30.25, 60.75, 12.0, &INTR);
        let (u, v) = project_uv(p, &INTR).unwrap();
        assert!((u - 30.25).abs() < 1e-4);
        assert!((v - 60.75).abs() < 1e-4);
    }
}
