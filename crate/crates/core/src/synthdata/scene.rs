//! Clear-day scene synthesis: textured shapes standing on a ground plane,
//! rendered to RGB, plus a lidar-like point cloud projected to sparse depth.
//!
//! Geometry is plausible rather than photoreal. Objects are drawn in meters
//! (class-typed size and depth ranges), placed standing on the ground plane,
//! and projected to axis-aligned pixel-space shapes; because every object is
//! fronto-parallel, membership tests stay exact and labels are exact tight
//! boxes of the rendered pixels.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::project::{back_project, project_pointcloud, Intrinsics};
use super::{Annotation, Domain, Sample};
use crate::error::Result;
use crate::raster::RgbRaster;

/// Knobs for scene synthesis.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneSpec {
    pub h: usize,
    pub w: usize,
    /// Lidar range; returns farther than this are dropped.
    pub d_max: f32,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Camera height above the ground plane, meters.
    pub cam_height: f32,
    pub intrinsics: Intrinsics,
}

impl SceneSpec {
    /// The desk-scale defaults used throughout: 96×96 frames, 50 m range.
    pub fn desk_scale() -> Self {
        SceneSpec {
            h: 96,
            w: 96,
            d_max: 50.0,
            min_objects: 1,
            max_objects: 6,
            cam_height: 1.5,
            intrinsics: Intrinsics::centered(96, 96),
        }
    }
}

/// Per-class object geometry: metric width/height ranges and the depth range
/// the class may stand at. Depth ranges keep every object at least a few
/// pixels wide after projection.
struct ClassGeom {
    w_m: (f32, f32),
    h_m: (f32, f32),
    z: (f32, f32),
}

const CLASS_GEOM: [ClassGeom; 3] = [
    // 0: rectangle — car-sized
    ClassGeom { w_m: (1.8, 4.2), h_m: (1.3, 1.9), z: (6.0, 26.0) },
    // 1: ellipse — pedestrian-sized, kept close so it stays several px wide
    ClassGeom { w_m: (0.45, 0.75), h_m: (1.55, 1.95), z: (4.0, 16.0) },
    // 2: triangle — ridable-vehicle-sized
    ClassGeom { w_m: (1.1, 1.9), h_m: (1.1, 1.6), z: (5.0, 22.0) },
];

const RECT_BASES: [[f32; 3]; 5] = [
    [0.75, 0.16, 0.14],
    [0.16, 0.24, 0.66],
    [0.72, 0.72, 0.74],
    [0.22, 0.23, 0.25],
    [0.14, 0.50, 0.30],
];
const ELLIPSE_BASES: [[f32; 3]; 4] = [
    [0.85, 0.55, 0.20],
    [0.60, 0.20, 0.50],
    [0.20, 0.60, 0.60],
    [0.85, 0.80, 0.30],
];
const TRIANGLE_BASES: [[f32; 3]; 4] = [
    [0.80, 0.45, 0.10],
    [0.30, 0.65, 0.20],
    [0.65, 0.15, 0.40],
    [0.20, 0.40, 0.75],
];

/// One placed object: axis-aligned pixel-space footprint on a constant depth
/// plane, with the seeds that make its texture and returns independent of
/// every other object.
#[derive(Debug, Clone)]
struct ShapeSpec {
    class_id: usize,
    x1: f32,
    y1: f32,
    x2: f32,
    y2: f32,
    /// Depth plane, meters.
    z: f32,
    base: [f32; 3],
    tex_seed: u64,
    cloud_seed: u64,
}

impl ShapeSpec {
    /// Exact membership of a continuous image point.
    fn contains(&self, px: f32, py: f32) -> bool {
        if px < self.x1 || px >= self.x2 || py < self.y1 || py >= self.y2 {
            return false;
        }
        match self.class_id {
            0 => true,
            1 => {
                let a = (self.x2 - self.x1) / 2.0;
                let b = (self.y2 - self.y1) / 2.0;
                let dx = (px - (self.x1 + a)) / a;
                let dy = (py - (self.y1 + b)) / b;
                dx * dx + dy * dy <= 1.0
            }
            _ => {
                // apex top-center, base corners bottom
                let ax = (self.x1 + self.x2) / 2.0;
                let cross = |ox: f32, oy: f32, ex: f32, ey: f32| {
                    (ex - ox) * (py - oy) - (ey - oy) * (px - ox)
                };
                let s1 = cross(ax, self.y1, self.x1, self.y2);
                let s2 = cross(self.x1, self.y2, self.x2, self.y2);
                let s3 = cross(self.x2, self.y2, ax, self.y1);
                (s1 >= 0.0 && s2 >= 0.0 && s3 >= 0.0) || (s1 <= 0.0 && s2 <= 0.0 && s3 <= 0.0)
            }
        }
    }

    /// The color of a member point, before per-pixel noise.
    fn texture(&self, px: f32, py: f32) -> [f32; 3] {
        let tx = (px - self.x1) / (self.x2 - self.x1);
        let ty = (py - self.y1) / (self.y2 - self.y1);
        match self.class_id {
            0 => {
                if (0.15..0.42).contains(&ty) {
                    scale3(self.base, 0.35) // window band
                } else if ty > 0.82 && (!(0.12..0.30).contains(&tx) && !(0.70..0.88).contains(&tx))
                {
                    self.base
                } else if ty > 0.82 {
                    [0.05, 0.05, 0.06] // wheels
                } else {
                    self.base
                }
            }
            1 => {
                if ty < 0.18 {
                    [0.85, 0.70, 0.55] // head
                } else if ty < 0.52 {
                    self.base // torso
                } else {
                    [0.16, 0.16, 0.20] // legs
                }
            }
            _ => {
                if (px + py).rem_euclid(5.0) < 2.2 {
                    [
                        (self.base[0] * 1.45).min(1.0),
                        (self.base[1] * 1.45).min(1.0),
                        (self.base[2] * 1.45).min(1.0),
                    ]
                } else {
                    self.base
                }
            }
        }
    }
}

fn scale3(c: [f32; 3], s: f32) -> [f32; 3] {
    [c[0] * s, c[1] * s, c[2] * s]
}

fn lerp3(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Draw object placements: standing on the ground plane, fully inside the
/// frame, pairwise separated by ≥ 2 px. Placement failures after 40 attempts
/// drop the object rather than looping forever.
fn place_shapes(rng: &mut ChaCha8Rng, spec: &SceneSpec) -> Vec<ShapeSpec> {
    let n = rng.gen_range(spec.min_objects..=spec.max_objects);
    let (fx, fy) = (spec.intrinsics.fx, spec.intrinsics.fy);
    let mut shapes: Vec<ShapeSpec> = Vec::new();
    for _ in 0..n {
        for _attempt in 0..40 {
            let class_id = rng.gen_range(0..CLASS_GEOM.len());
            let g = &CLASS_GEOM[class_id];
            let z = rng.gen_range(g.z.0..g.z.1);
            let w_m = rng.gen_range(g.w_m.0..g.w_m.1);
            let h_m = rng.gen_range(g.h_m.0..g.h_m.1);
            let w_px = fx * w_m / z;
            let h_px = fy * h_m / z;
            let y2 = spec.intrinsics.cy + fy * spec.cam_height / z;
            let y1 = y2 - h_px;
            if y1 < 0.0 || y2 > spec.h as f32 {
                continue;
            }
            let margin = 1.0;
            if w_px + 2.0 * margin >= spec.w as f32 {
                continue;
            }
            let u_c = rng.gen_range(w_px / 2.0 + margin..spec.w as f32 - w_px / 2.0 - margin);
            let (x1, x2) = (u_c - w_px / 2.0, u_c + w_px / 2.0);
            let sep = 2.0;
            let clash = shapes.iter().any(|o| {
                x1 - sep < o.x2 && o.x1 - sep < x2 && y1 - sep < o.y2 && o.y1 - sep < y2
            });
            if clash {
                continue;
            }
            let base = match class_id {
                0 => RECT_BASES[rng.gen_range(0..RECT_BASES.len())],
                1 => ELLIPSE_BASES[rng.gen_range(0..ELLIPSE_BASES.len())],
                _ => TRIANGLE_BASES[rng.gen_range(0..TRIANGLE_BASES.len())],
            };
            shapes.push(ShapeSpec {
                class_id,
                x1,
                y1,
                x2,
                y2,
                z,
                base,
                tex_seed: rng.gen(),
                cloud_seed: rng.gen(),
            });
            break;
        }
    }
    shapes
}

/// Sky gradient above the horizon, textured ground below, plus sensor noise.
fn render_background(spec: &SceneSpec, bg_seed: u64) -> RgbRaster {
    let mut rng = ChaCha8Rng::seed_from_u64(bg_seed);
    let mut rgb = RgbRaster::new(spec.h, spec.w);
    let horizon = spec.intrinsics.cy;
    for r in 0..spec.h {
        let rf = r as f32 + 0.5;
        for c in 0..spec.w {
            let n: f32 = rng.gen_range(-0.015..0.015);
            let color = if rf < horizon {
                lerp3([0.35, 0.45, 0.72], [0.78, 0.82, 0.88], rf / horizon)
            } else {
                let t = (rf - horizon) / (spec.h as f32 - horizon);
                let band = if (r / 3) % 2 == 0 { 0.015 } else { -0.015 };
                let g = lerp3([0.46, 0.43, 0.31], [0.30, 0.33, 0.22], t);
                [g[0] + band, g[1] + band, g[2] + band]
            };
            rgb.set_pixel(r, c, [color[0] + n, color[1] + n, color[2] + n]);
        }
    }
    rgb
}

/// [`render_scene`] output: the painted frame plus, per shape, its member
/// pixels and (if any) the exact tight pixel box `[x1, y1, x2, y2]`.
struct Rendered {
    rgb: RgbRaster,
    members: Vec<Vec<(usize, usize)>>,
    boxes: Vec<Option<[f32; 4]>>,
}

/// Paint every shape over the background.
fn render_scene(spec: &SceneSpec, shapes: &[ShapeSpec], bg_seed: u64) -> Rendered {
    let mut rgb = render_background(spec, bg_seed);
    let mut members = Vec::with_capacity(shapes.len());
    let mut boxes = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let mut rng = ChaCha8Rng::seed_from_u64(shape.tex_seed);
        let mut pixels = Vec::new();
        let (mut min_r, mut min_c, mut max_r, mut max_c) = (usize::MAX, usize::MAX, 0usize, 0usize);
        let r0 = shape.y1.floor().max(0.0) as usize;
        let r1 = (shape.y2.ceil() as usize).min(spec.h);
        let c0 = shape.x1.floor().max(0.0) as usize;
        let c1 = (shape.x2.ceil() as usize).min(spec.w);
        for r in r0..r1 {
            for c in c0..c1 {
                let (px, py) = (c as f32 + 0.5, r as f32 + 0.5);
                if !shape.contains(px, py) {
                    continue;
                }
                let n: f32 = rng.gen_range(-0.02..0.02);
                let t = shape.texture(px, py);
                rgb.set_pixel(r, c, [t[0] + n, t[1] + n, t[2] + n]);
                pixels.push((r, c));
                min_r = min_r.min(r);
                min_c = min_c.min(c);
                max_r = max_r.max(r);
                max_c = max_c.max(c);
            }
        }
        boxes.push(if pixels.is_empty() {
            None
        } else {
            Some([min_c as f32, min_r as f32, (max_c + 1) as f32, (max_r + 1) as f32])
        });
        members.push(pixels);
    }
    Rendered { rgb, members, boxes }
}

/// Lidar-like ground returns: one ring every other pixel row below the
/// horizon, swept across the frame with jitter, values noisy in depth.
/// Returns beyond `d_max` are dropped, which empties the rows nearest the
/// horizon exactly like a range-limited sensor.
fn ground_cloud(spec: &SceneSpec, seed: u64) -> Vec<[f32; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intr = &spec.intrinsics;
    let mut points = Vec::new();
    let mut v = intr.cy + 2.0;
    while v < spec.h as f32 {
        let z_ring = intr.fy * spec.cam_height / (v + 0.5 - intr.cy);
        let mut u = 0.5 + rng.gen_range(0.0..1.7f32);
        while u < spec.w as f32 - 0.5 {
            let vj = (v + rng.gen_range(-0.3..0.3)).min(spec.h as f32 - 0.01);
            let zj = z_ring * (1.0 + rng.gen_range(-0.015..0.015));
            if zj <= spec.d_max {
                points.push(back_project(u, vj, zj, intr));
            }
            u += 1.7;
        }
        v += 2.0;
    }
    points
}

/// Dense-ish returns on one object: most member pixels yield a return on the
/// object's depth plane, jittered within the pixel and in depth.
fn object_cloud(spec: &SceneSpec, shape: &ShapeSpec, members: &[(usize, usize)]) -> Vec<[f32; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(shape.cloud_seed);
    let mut points = Vec::with_capacity(members.len());
    for &(r, c) in members {
        if !rng.gen_bool(0.8) {
            continue;
        }
        let u = c as f32 + rng.gen_range(0.05..0.95);
        let v = r as f32 + rng.gen_range(0.05..0.95);
        let zj = shape.z * (1.0 + rng.gen_range(-0.01..0.01));
        if zj <= spec.d_max {
            points.push(back_project(u, v, zj, &spec.intrinsics));
        }
    }
    points
}

/// Generate one labeled clear-day frame. All randomness flows from `rng`, so
/// a fixed seed reproduces the sample bit for bit.
pub fn generate_scene(rng: &mut ChaCha8Rng, spec: &SceneSpec) -> Result<Sample> {
    let bg_seed: u64 = rng.gen();
    let ground_seed: u64 = rng.gen();
    let shapes = place_shapes(rng, spec);
    let Rendered { mut rgb, members, boxes } = render_scene(spec, &shapes, bg_seed);

    let mut points = ground_cloud(spec, ground_seed);
    for (shape, mem) in shapes.iter().zip(&members) {
        points.extend(object_cloud(spec, shape, mem));
    }
    let (depth, valid_mask) = project_pointcloud(&points, &spec.intrinsics, spec.h, spec.w);

    rgb.quantize_8bit();
    let labels = shapes
        .iter()
        .zip(&boxes)
        .filter_map(|(s, b)| b.map(|bbox| Annotation { class_id: s.class_id, bbox }))
        .collect();

    let mut sample = Sample {
        rgb,
        depth,
        valid_mask,
        e_rgb: crate::raster::Raster::new(spec.h, spec.w),
        e_depth: crate::raster::Raster::new(spec.h, spec.w),
        e_max: crate::raster::Raster::new(spec.h, spec.w),
        labels,
        labels_eval_only: false,
        domain: Domain::ClearDay,
    };
    sample.refresh_entropy(spec.d_max)?;
    Ok(sample)
}
