//! Ray casting against analytic tunnel primitives.

use std::f64::consts::TAU;

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lidar::{Point3, PointCloud};
use crate::par::{self, Execution};
use crate::state::{Pose2, Timestamp};

/// Rays closer than this to their origin are ignored, so a ray never hits
/// the surface it starts on.
const T_MIN: f64 = 1e-9;
const EDGE_EPS: f64 = 1e-9;
const GRID_CELL: f64 = 2.0;

/// A vertical wall piece between `z_min` and `z_max`.
#[derive(Clone, Debug, PartialEq)]
pub enum Wall {
    /// Planar strip starting at `origin` and running `length` along `dir`.
    Strip {
        origin: Vector2<f64>,
        dir: Vector2<f64>,
        length: f64,
        z_min: f64,
        z_max: f64,
    },
    /// Cylinder section; `sweep` is signed (positive counter-clockwise)
    /// and `|sweep| >= 2π` means a full cylinder.
    Arc {
        center: Vector2<f64>,
        radius: f64,
        start_angle: f64,
        sweep: f64,
        z_min: f64,
        z_max: f64,
    },
}

/// Box rotated by `yaw` about the vertical axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox {
    pub center: Vector3<f64>,
    pub yaw: f64,
    pub half_extents: Vector3<f64>,
}

impl OrientedBox {
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let (s, c) = self.yaw.sin_cos();
        let rel = o - self.center;
        let lo = Vector3::new(c * rel.x + s * rel.y, -s * rel.x + c * rel.y, rel.z);
        let ld = Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z);
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for a in 0..3 {
            let h = self.half_extents[a];
            if ld[a].abs() < 1e-300 {
                if lo[a].abs() > h {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / ld[a];
            let (mut ta, mut tb) = ((-h - lo[a]) * inv, (h - lo[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        // An origin inside the box sees no front face.
        (t0 > T_MIN).then_some(t0)
    }

    fn footprint(&self) -> (Vector2<f64>, Vector2<f64>) {
        let (s, c) = self.yaw.sin_cos();
        let ex = (c * self.half_extents.x).abs() + (s * self.half_extents.y).abs();
        let ey = (s * self.half_extents.x).abs() + (c * self.half_extents.y).abs();
        let ctr = Vector2::new(self.center.x, self.center.y);
        (ctr - Vector2::new(ex, ey), ctr + Vector2::new(ex, ey))
    }
}

impl Wall {
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match *self {
            Wall::Strip {
                origin,
                dir,
                length,
                z_min,
                z_max,
            } => {
                let n = Vector2::new(-dir.y, dir.x);
                let denom = n.x * d.x + n.y * d.y;
                if denom.abs() < 1e-300 {
                    return None;
                }
                let t = (n.x * (origin.x - o.x) + n.y * (origin.y - o.y)) / denom;
                if t <= T_MIN {
                    return None;
                }
                let p = o + d * t;
                let along = dir.x * (p.x - origin.x) + dir.y * (p.y - origin.y);
                (along >= -EDGE_EPS && along <= length + EDGE_EPS && p.z >= z_min && p.z <= z_max)
                    .then_some(t)
            }
            Wall::Arc {
                center,
                radius,
                start_angle,
                sweep,
                z_min,
                z_max,
            } => {
                let (ox, oy) = (o.x - center.x, o.y - center.y);
                let a = d.x * d.x + d.y * d.y;
                if a < 1e-300 {
                    return None;
                }
                let b = ox * d.x + oy * d.y;
                let c = ox * ox + oy * oy - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // Numerically stable roots.
                let q = -(b + b.signum() * sq);
                let (mut r0, mut r1) = (q / a, if q != 0.0 { c / q } else { 0.0 });
                if r0 > r1 {
                    std::mem::swap(&mut r0, &mut r1);
                }
                for t in [r0, r1] {
                    if t <= T_MIN {
                        continue;
                    }
                    let p = o + d * t;
                    if p.z < z_min || p.z > z_max {
                        continue;
                    }
                    if sweep.abs() >= TAU {
                        return Some(t);
                    }
                    let ang = (p.y - center.y).atan2(p.x - center.x);
                    let rel = ((ang - start_angle) * sweep.signum()).rem_euclid(TAU);
                    let tol = EDGE_EPS / radius;
                    if rel <= sweep.abs() + tol || TAU - rel <= tol {
                        return Some(t);
                    }
                }
                None
            }
        }
    }
}

/// Uniform 2-D grid over box footprints.
#[derive(Clone, Debug, Default)]
struct BoxGrid {
    origin: Vector2<f64>,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl BoxGrid {
    fn new(boxes: &[OrientedBox]) -> Self {
        if boxes.is_empty() {
            return BoxGrid::default();
        }
        let mut lo = Vector2::repeat(f64::INFINITY);
        let mut hi = Vector2::repeat(f64::NEG_INFINITY);
        for b in boxes {
            let (a, c) = b.footprint();
            lo = lo.inf(&a);
            hi = hi.sup(&c);
        }
        let nx = ((hi.x - lo.x) / GRID_CELL).floor() as usize + 1;
        let ny = ((hi.y - lo.y) / GRID_CELL).floor() as usize + 1;
        let mut cells = vec![Vec::new(); nx * ny];
        for (i, b) in boxes.iter().enumerate() {
            let (a, c) = b.footprint();
            let (i0, j0) = (((a.x - lo.x) / GRID_CELL) as usize, ((a.y - lo.y) / GRID_CELL) as usize);
            let (i1, j1) = (((c.x - lo.x) / GRID_CELL) as usize, ((c.y - lo.y) / GRID_CELL) as usize);
            for ci in i0..=i1.min(nx - 1) {
                for cj in j0..=j1.min(ny - 1) {
                    cells[ci * ny + cj].push(i as u32);
                }
            }
        }
        BoxGrid {
            origin: lo,
            nx,
            ny,
            cells,
        }
    }

    /// Visits the cells crossed by the ray's ground projection on
    /// `[0, t_max]` in order, stopping once `visit` reports a hit closer
    /// than the next cell boundary.
    fn traverse(&self, o: &Vector3<f64>, d: &Vector3<f64>, t_max: f64, mut visit: impl FnMut(&[u32]) -> Option<f64>) -> Option<f64> {
        if self.cells.is_empty() {
            return None;
        }
        let gx = (o.x - self.origin.x) / GRID_CELL;
        let gy = (o.y - self.origin.y) / GRID_CELL;
        let (dx, dy) = (d.x / GRID_CELL, d.y / GRID_CELL);
        let (mut ix, mut iy) = (gx.floor() as i64, gy.floor() as i64);
        let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
        let next = |g: f64, i: i64, dg: f64, step: i64| {
            if dg == 0.0 {
                f64::INFINITY
            } else {
                let edge = if step > 0 { (i + 1) as f64 } else { i as f64 };
                (edge - g) / dg
            }
        };
        let mut tx = next(gx, ix, dx, step_x);
        let mut ty = next(gy, iy, dy, step_y);
        let dtx = if dx == 0.0 { f64::INFINITY } else { 1.0 / dx.abs() };
        let dty = if dy == 0.0 { f64::INFINITY } else { 1.0 / dy.abs() };
        let mut best: Option<f64> = None;
        loop {
            if ix >= 0 && iy >= 0 && (ix as usize) < self.nx && (iy as usize) < self.ny {
                if let Some(t) = visit(&self.cells[ix as usize * self.ny + iy as usize]) {
                    best = Some(best.map_or(t, |b: f64| b.min(t)));
                }
            }
            let t_exit = tx.min(ty);
            if best.is_some_and(|b| b <= t_exit) || t_exit > t_max {
                break;
            }
            if tx < ty {
                ix += step_x;
                tx += dtx;
            } else {
                iy += step_y;
                ty += dty;
            }
            // Leaving the grid for good.
            let outside_x = (ix < 0 && step_x < 0) || (ix >= self.nx as i64 && step_x > 0);
            let outside_y = (iy < 0 && step_y < 0) || (iy >= self.ny as i64 && step_y > 0);
            if outside_x || outside_y {
                break;
            }
        }
        best
    }
}

/// Static geometry the LiDAR can see.
#[derive(Clone, Debug)]
pub struct Scene {
    pub walls: Vec<Wall>,
    pub floor: Option<f64>,
    pub ceiling: Option<f64>,
    pub boxes: Vec<OrientedBox>,
    grid: BoxGrid,
}

impl Scene {
    pub fn new(walls: Vec<Wall>, floor: Option<f64>, ceiling: Option<f64>, boxes: Vec<OrientedBox>) -> Self {
        let grid = BoxGrid::new(&boxes);
        Scene {
            walls,
            floor,
            ceiling,
            boxes,
            grid,
        }
    }

    /// Distance to the first surface along the unit direction `d`.
    pub fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let mut best = f64::INFINITY;
        for w in &self.walls {
            if let Some(t) = w.intersect(o, d) {
                best = best.min(t);
            }
        }
        for (z, up) in [(self.floor, false), (self.ceiling, true)] {
            if let Some(z) = z {
                if (up && d.z > 0.0) || (!up && d.z < 0.0) {
                    let t = (z - o.z) / d.z;
                    if t > T_MIN {
                        best = best.min(t);
                    }
                }
            }
        }
        let horizon = if best.is_finite() { best } else { 1e6 };
        let boxes = &self.boxes;
        if let Some(t) = self.grid.traverse(o, d, horizon, |ids| {
            ids.iter()
                .filter_map(|&i| boxes[i as usize].intersect(o, d))
                .min_by(f64::total_cmp)
        }) {
            best = best.min(t);
        }
        best.is_finite().then_some(best)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarModel {
    pub horizontal: usize,
    pub vertical: usize,
    pub vertical_fov_deg: f64,
    pub max_range: f64,
}

impl Default for LidarModel {
    fn default() -> Self {
        LidarModel {
            horizontal: 1024,
            vertical: 128,
            vertical_fov_deg: 45.0,
            max_range: 120.0,
        }
    }
}

impl LidarModel {
    pub fn validate(&self) -> Result<()> {
        if self.horizontal == 0 || self.vertical == 0 {
            return Err(Error::invalid("ray grid must have at least one ray per axis"));
        }
        if !(self.vertical_fov_deg >= 0.0 && self.vertical_fov_deg < 180.0) {
            return Err(Error::invalid(format!("vertical fov {} deg out of range", self.vertical_fov_deg)));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::invalid(format!("max_range must be positive, got {}", self.max_range)));
        }
        Ok(())
    }

    /// Unit ray directions in the sensor frame, row-major with the azimuth
    /// index fastest.
    pub fn directions(&self) -> Vec<Vector3<f64>> {
        let fov = self.vertical_fov_deg.to_radians();
        let mut dirs = Vec::with_capacity(self.horizontal * self.vertical);
        for j in 0..self.vertical {
            let el = if self.vertical == 1 {
                0.0
            } else {
                -fov / 2.0 + fov * j as f64 / (self.vertical - 1) as f64
            };
            let (se, ce) = el.sin_cos();
            for i in 0..self.horizontal {
                let az = TAU * i as f64 / self.horizontal as f64;
                let (sa, ca) = az.sin_cos();
                dirs.push(Vector3::new(ce * ca, ce * sa, se));
            }
        }
        dirs
    }
}

/// Ranges along every ray from a sensor at `origin` with yaw `yaw`;
/// `None` for misses and hits beyond `max_range`.
pub fn cast_rays(
    scene: &Scene,
    origin: &Vector3<f64>,
    yaw: f64,
    model: &LidarModel,
    exec: Execution,
) -> Vec<Option<f64>> {
    let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
    let dirs = model.directions();
    par::map_slice(exec, &dirs, |d| {
        scene
            .cast(origin, &(rot * d))
            .filter(|&t| t <= model.max_range)
    })
}

/// Renders a scan in the sensor frame from a scene and sensor pose.
#[allow(clippy::too_many_arguments)]
pub fn render_scene(
    scene: &Scene,
    origin: &Vector3<f64>,
    yaw: f64,
    model: &LidarModel,
    noise_sigma: f64,
    rng: &mut impl Rng,
    timestamp: Timestamp,
    exec: Execution,
) -> Result<PointCloud> {
    model.validate()?;
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid(format!("noise_sigma must be >= 0, got {noise_sigma}")));
    }
    let ranges = cast_rays(scene, origin, yaw, model, exec);
    let noise = Normal::new(0.0, noise_sigma).expect("sigma checked");
    let points: Vec<Point3> = model
        .directions()
        .iter()
        .zip(&ranges)
        .filter_map(|(d, r)| r.map(|t| (d, t)))
        .map(|(d, t)| {
            let n = if noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            d * (t + n)
        })
        .collect();
    PointCloud::new(points, timestamp)
}

/// Renders a scan of the tunnel from a vehicle at `pose` with the sensor
/// `mount_height` above the floor.
#[allow(clippy::too_many_arguments)]
pub fn render_scan(
    map: &super::TunnelMap,
    pose: &Pose2,
    mount_height: f64,
    model: &LidarModel,
    noise_sigma: f64,
    rng: &mut impl Rng,
    timestamp: Timestamp,
    exec: Execution,
) -> Result<PointCloud> {
    if !map.contains(pose.x, pose.y, mount_height) {
        return Err(Error::InvalidPose(format!(
            "sensor at ({:.3}, {:.3}, {:.3}) is outside the tunnel",
            pose.x, pose.y, mount_height
        )));
    }
    let origin = Vector3::new(pose.x, pose.y, mount_height);
    render_scene(&map.scene, &origin, pose.psi, model, noise_sigma, rng, timestamp, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corridor(half_width: f64, height: f64) -> Scene {
        let walls = [1.0, -1.0]
            .iter()
            .map(|side| Wall::Strip {
                origin: Vector2::new(-1000.0, side * half_width),
                dir: Vector2::new(1.0, 0.0),
                length: 2000.0,
                z_min: 0.0,
                z_max: height,
            })
            .collect();
        Scene::new(walls, Some(0.0), Some(height), Vec::new())
    }

    #[test]
    fn horizontal_ring_in_cylinder() {
        let r = 3.7;
        let scene = Scene::new(
            vec![Wall::Arc {
                center: Vector2::new(1.0, -2.0),
                radius: r,
                start_angle: 0.0,
                sweep: TAU,
                z_min: -100.0,
                z_max: 100.0,
            }],
            None,
            None,
            Vec::new(),
        );
        let model = LidarModel {
            horizontal: 360,
            vertical: 1,
            ..LidarModel::default()
        };
        let ranges = cast_rays(&scene, &Vector3::new(1.0, -2.0, 0.0), 0.3, &model, Execution::Sequential);
        for t in ranges {
            assert!((t.unwrap() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn corridor_matches_closed_form() {
        let (w, h, z0) = (4.0, 5.0, 1.5);
        let scene = corridor(w, h);
        let model = LidarModel {
            horizontal: 8,
            vertical: 2,
            ..LidarModel::default()
        };
        let yaw = 0.2;
        let ranges = cast_rays(&scene, &Vector3::new(0.0, 0.5, z0), yaw, &model, Execution::Sequential);
        let fov = 45f64.to_radians();
        for j in 0..2 {
            let el = -fov / 2.0 + fov * j as f64;
            for i in 0..8 {
                let az = TAU * i as f64 / 8.0 + yaw;
                let (dy, dz) = (el.cos() * az.sin(), el.sin());
                // closed-form plane intersections
                let mut expect = f64::INFINITY;
                if dy > 0.0 {
                    expect = expect.min((w - 0.5) / dy);
                } else if dy < 0.0 {
                    expect = expect.min((-w - 0.5) / dy);
                }
                if dz > 0.0 {
                    expect = expect.min((h - z0) / dz);
                } else if dz < 0.0 {
                    expect = expect.min(-z0 / dz);
                }
                let got = ranges[j * 8 + i].unwrap();
                assert!((got - expect).abs() < 1e-9, "ray ({i},{j}): {got} vs {expect}");
            }
        }
    }

    #[test]
    fn box_hit_and_occlusion() {
        let b = OrientedBox {
            center: Vector3::new(5.0, 0.0, 0.0),
            yaw: 0.3,
            half_extents: Vector3::new(0.5, 0.5, 0.5),
        };
        let scene = Scene::new(Vec::new(), None, None, vec![b]);
        let t = scene.cast(&Vector3::zeros(), &Vector3::x()).unwrap();
        // face at distance 0.5 / cos(0.3) from center along the rotated frame
        let expect = 5.0 - 0.5 / 0.3f64.cos();
        assert!((t - expect).abs() < 1e-12, "{t} vs {expect}");
        assert!(scene.cast(&Vector3::zeros(), &-Vector3::x()).is_none());
    }

    #[test]
    fn grid_traversal_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let boxes: Vec<OrientedBox> = (0..300)
            .map(|_| OrientedBox {
                center: Vector3::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(-1.0..1.0)),
                yaw: rng.random_range(-3.0..3.0),
                half_extents: Vector3::new(0.3, 0.2, 0.4),
            })
            .collect();
        let scene = Scene::new(Vec::new(), None, None, boxes.clone());
        for _ in 0..2000 {
            let az: f64 = rng.random_range(0.0..TAU);
            let el: f64 = rng.random_range(-0.1..0.1);
            let d = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let o = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0);
            let brute = boxes.iter().filter_map(|b| b.intersect(&o, &d)).min_by(f64::total_cmp);
            assert_eq!(scene.cast(&o, &d), brute);
        }
    }

    #[test]
    fn noise_is_seeded_and_execution_independent() {
        let scene = corridor(4.0, 5.0);
        let model = LidarModel {
            horizontal: 64,
            vertical: 8,
            ..LidarModel::default()
        };
        let o = Vector3::new(0.0, 0.0, 1.5);
        let scan = |seed, exec| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            render_scene(&scene, &o, 0.0, &model, 0.02, &mut rng, Timestamp::ZERO, exec).unwrap()
        };
        assert_eq!(scan(1, Execution::Sequential), scan(1, Execution::Parallel));
        assert_ne!(scan(1, Execution::Sequential), scan(2, Execution::Sequential));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = render_scene(&scene, &o, 0.0, &model, 0.0, &mut rng, Timestamp::ZERO, Execution::Parallel).unwrap();
        let b = render_scene(&scene, &o, 0.0, &model, 0.0, &mut rng, Timestamp::ZERO, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn max_range_drops_rays() {
        let scene = corridor(4.0, 5.0);
        let model = LidarModel {
            horizontal: 16,
            vertical: 1,
            max_range: 10.0,
            ..LidarModel::default()
        };
        let ranges = cast_rays(&scene, &Vector3::new(0.0, 0.0, 1.0), 0.0, &model, Execution::Sequential);
        // rays along the corridor axis never hit within range
        assert!(ranges[0].is_none());
        assert!(ranges[8].is_none());
        assert!(ranges[4].is_some());
    }
}
