use std::f64::consts::TAU;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::raycast::{OrientedBox, Scene, Wall};
use crate::error::{Error, Result};
use crate::state::{wrap, Pose2};

/// Centerline sample spacing.
pub const CENTERLINE_STEP: f64 = 0.1;
const CLOSURE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum SegmentSpec {
    Straight { length: f64 },
    /// Positive angles turn left.
    Arc { radius: f64, angle_deg: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub segments: Vec<SegmentSpec>,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_wall_height")]
    pub wall_height: f64,
    /// Wall boxes per meter of centerline.
    #[serde(default)]
    pub feature_density: f64,
    #[serde(default = "default_feature_size")]
    pub feature_size: f64,
    #[serde(default)]
    pub closed_loop: bool,
}

fn default_half_width() -> f64 {
    4.0
}
fn default_wall_height() -> f64 {
    5.0
}
fn default_feature_size() -> f64 {
    0.3
}

impl MapConfig {
    pub fn straight(length: f64) -> Self {
        MapConfig {
            segments: vec![SegmentSpec::Straight { length }],
            half_width: default_half_width(),
            wall_height: default_wall_height(),
            feature_density: 0.0,
            feature_size: default_feature_size(),
            closed_loop: false,
        }
    }
}

/// One centerline piece with its start pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: Pose2,
    /// Arclength of the segment start along the whole centerline.
    pub s0: f64,
    pub length: f64,
    /// Signed curvature, zero on straights.
    pub curvature: f64,
}

impl Segment {
    pub fn pose_at(&self, s: f64) -> Pose2 {
        let Pose2 { x, y, psi } = self.start;
        let k = self.curvature;
        if k == 0.0 {
            let (sn, c) = psi.sin_cos();
            Pose2::new(x + s * c, y + s * sn, psi)
        } else {
            let a = psi + k * s;
            Pose2::new(x + (a.sin() - psi.sin()) / k, y - (a.cos() - psi.cos()) / k, a)
        }
    }

    fn center(&self) -> Vector2<f64> {
        let (s, c) = self.start.psi.sin_cos();
        Vector2::new(self.start.x - s / self.curvature, self.start.y + c / self.curvature)
    }

    /// Local `(arclength, lateral offset)` of a point, if it projects onto
    /// this segment. Lateral offsets are positive to the left.
    fn project(&self, p: Vector2<f64>) -> Option<(f64, f64)> {
        let eps = 1e-9;
        if self.curvature == 0.0 {
            let (s, c) = self.start.psi.sin_cos();
            let d = p - Vector2::new(self.start.x, self.start.y);
            let along = d.x * c + d.y * s;
            let lateral = -d.x * s + d.y * c;
            (along >= -eps && along <= self.length + eps).then_some((along, lateral))
        } else {
            let r = 1.0 / self.curvature.abs();
            let c = self.center();
            let d = p - c;
            let a = Vector2::new(self.start.x, self.start.y) - c;
            let start_angle = a.y.atan2(a.x);
            let rel = ((d.y.atan2(d.x) - start_angle) * self.curvature.signum()).rem_euclid(TAU);
            let sweep = self.length / r;
            let rel = if rel > sweep + eps && TAU - rel < eps { 0.0 } else { rel };
            (rel <= sweep + eps).then(|| (rel * r, (r - d.norm()) * self.curvature.signum()))
        }
    }
}

/// Parametric tunnel with a rectangular cross-section.
#[derive(Clone, Debug)]
pub struct TunnelMap {
    pub segments: Vec<Segment>,
    pub half_width: f64,
    pub wall_height: f64,
    pub feature_density: f64,
    pub closed_loop: bool,
    pub total_length: f64,
    /// Centerline poses every [`CENTERLINE_STEP`] meters, plus the end pose.
    pub centerline: Vec<Pose2>,
    pub features: Vec<OrientedBox>,
    pub scene: Scene,
}

pub fn build_map(config: &MapConfig, seed: u64) -> Result<TunnelMap> {
    let bad = |m: String| Err(Error::InvalidMap(m));
    if config.segments.is_empty() {
        return bad("map has no segments".into());
    }
    if !(config.half_width > 0.0 && config.wall_height > 0.0) {
        return bad(format!(
            "cross-section must be positive, got half_width {} and wall_height {}",
            config.half_width, config.wall_height
        ));
    }
    if !(config.feature_density >= 0.0 && config.feature_density.is_finite()) {
        return bad(format!("feature_density must be >= 0, got {}", config.feature_density));
    }
    if !(config.feature_size > 0.0 && config.feature_size < config.half_width) {
        return bad(format!("feature_size must lie in (0, half_width), got {}", config.feature_size));
    }

    let mut segments = Vec::with_capacity(config.segments.len());
    let mut pose = Pose2::IDENTITY;
    let mut s0 = 0.0;
    for (i, spec) in config.segments.iter().enumerate() {
        let (length, curvature) = match *spec {
            SegmentSpec::Straight { length } => (length, 0.0),
            SegmentSpec::Arc { radius, angle_deg } => {
                if !(radius > config.half_width && radius.is_finite()) {
                    return bad(format!("segment {i}: radius {radius} must exceed the half width"));
                }
                if !(angle_deg != 0.0 && angle_deg.abs() <= 360.0) {
                    return bad(format!("segment {i}: arc angle {angle_deg} deg out of range"));
                }
                (radius * angle_deg.to_radians().abs(), angle_deg.signum() / radius)
            }
        };
        if !(length > 0.0 && length.is_finite()) {
            return bad(format!("segment {i}: length must be positive, got {length}"));
        }
        let seg = Segment {
            start: pose,
            s0,
            length,
            curvature,
        };
        pose = seg.pose_at(length);
        s0 += length;
        segments.push(seg);
    }
    let total_length = s0;

    if config.closed_loop {
        let gap = pose.x.hypot(pose.y);
        let turn = wrap(pose.psi).abs();
        if gap > CLOSURE_TOLERANCE || turn > CLOSURE_TOLERANCE {
            return bad(format!(
                "closed loop does not close: end pose ({:.6}, {:.6}, {:.6} rad)",
                pose.x, pose.y, pose.psi
            ));
        }
    }

    let mut centerline = Vec::new();
    let n = (total_length / CENTERLINE_STEP + 1e-9).floor() as usize;
    for i in 0..=n {
        centerline.push(pose_on(&segments, total_length, i as f64 * CENTERLINE_STEP));
    }
    if total_length - n as f64 * CENTERLINE_STEP > 1e-9 {
        centerline.push(pose_on(&segments, total_length, total_length));
    }

    let features = place_features(config, &segments, total_length, seed);
    let scene = build_scene(config, &segments, &features);
    Ok(TunnelMap {
        segments,
        half_width: config.half_width,
        wall_height: config.wall_height,
        feature_density: config.feature_density,
        closed_loop: config.closed_loop,
        total_length,
        centerline,
        features,
        scene,
    })
}

fn segment_index(segments: &[Segment], s: f64) -> usize {
    segments
        .partition_point(|seg| seg.s0 <= s)
        .saturating_sub(1)
}

fn pose_on(segments: &[Segment], total: f64, s: f64) -> Pose2 {
    let s = s.clamp(0.0, total);
    let seg = &segments[segment_index(segments, s)];
    seg.pose_at(s - seg.s0)
}

fn place_features(config: &MapConfig, segments: &[Segment], total: f64, seed: u64) -> Vec<OrientedBox> {
    let count = (config.feature_density * total).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = config.feature_size;
    let half = size / 2.0;
    let z_lo = half + 0.2;
    let z_hi = (config.wall_height - half - 0.2).max(z_lo);
    let mut boxes = Vec::with_capacity(count);
    for _ in 0..count {
        let s: f64 = rng.random_range(0.0..total);
        let left: bool = rng.random();
        let z: f64 = rng.random_range(z_lo..=z_hi);
        // Irregular footprints keep the boxes from forming a lattice.
        let along = size * rng.random_range(0.5..2.0);
        let depth = size * rng.random_range(0.5..1.5);
        let seg = &segments[segment_index(segments, s)];
        let pose = seg.pose_at(s - seg.s0);
        let side = if left { 1.0 } else { -1.0 };
        let offset = side * (config.half_width - depth / 2.0);
        let (sn, c) = pose.psi.sin_cos();
        boxes.push(OrientedBox {
            center: Vector3::new(pose.x - sn * offset, pose.y + c * offset, z),
            yaw: pose.psi,
            half_extents: Vector3::new(along / 2.0, depth / 2.0, half),
        });
    }
    boxes
}

fn build_scene(config: &MapConfig, segments: &[Segment], features: &[OrientedBox]) -> Scene {
    let w = config.half_width;
    let h = config.wall_height;
    let mut walls = Vec::new();
    for seg in segments {
        for side in [1.0, -1.0] {
            if seg.curvature == 0.0 {
                let (s, c) = seg.start.psi.sin_cos();
                let normal = Vector2::new(-s, c) * side;
                walls.push(Wall::Strip {
                    origin: Vector2::new(seg.start.x, seg.start.y) + normal * w,
                    dir: Vector2::new(c, s),
                    length: seg.length,
                    z_min: 0.0,
                    z_max: h,
                });
            } else {
                let r = 1.0 / seg.curvature.abs();
                let c = seg.center();
                let start = Vector2::new(seg.start.x, seg.start.y) - c;
                // Left wall is the inner wall on a left turn.
                let inner = (side > 0.0) == (seg.curvature > 0.0);
                walls.push(Wall::Arc {
                    center: c,
                    radius: if inner { r - w } else { r + w },
                    start_angle: start.y.atan2(start.x),
                    sweep: seg.curvature * seg.length,
                    z_min: 0.0,
                    z_max: h,
                });
            }
        }
    }
    Scene::new(walls, Some(0.0), Some(h), features.to_vec())
}

impl TunnelMap {
    pub fn pose_at(&self, s: f64) -> Pose2 {
        pose_on(&self.segments, self.total_length, self.wrap_s(s))
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        let s = self.wrap_s(s).clamp(0.0, self.total_length);
        self.segments[segment_index(&self.segments, s)].curvature
    }

    fn wrap_s(&self, s: f64) -> f64 {
        if self.closed_loop {
            s.rem_euclid(self.total_length)
        } else {
            s
        }
    }

    /// `(arclength, lateral offset)` of the closest centerline projection.
    pub fn locate(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let p = Vector2::new(x, y);
        self.segments
            .iter()
            .filter_map(|seg| seg.project(p).map(|(a, l)| (seg.s0 + a, l)))
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
    }

    /// True when a sensor at `(x, y, z)` sits strictly inside the tunnel.
    pub fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        z > 0.0
            && z < self.wall_height
            && self.locate(x, y).is_some_and(|(_, lat)| lat.abs() < self.half_width)
    }
}

/// Four equal straights joined by four left 90° arcs.
pub fn rounded_rectangle(straight: f64, radius: f64) -> Vec<SegmentSpec> {
    (0..4)
        .flat_map(|_| {
            [
                SegmentSpec::Straight { length: straight },
                SegmentSpec::Arc {
                    radius,
                    angle_deg: 90.0,
                },
            ]
        })
        .collect()
}
