use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::state::{Timestamp, Transform3};

pub type Point3 = Vector3<f64>;

/// A LiDAR scan in the sensor frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub timestamp: Timestamp,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, timestamp: Timestamp) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("point {i} has non-finite coordinates")));
        }
        Ok(PointCloud { points, timestamp })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, t: &Transform3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            timestamp: self.timestamp,
        }
    }
}

/// Replaces the points of every occupied voxel by their centroid.
///
/// Output order follows the lexicographic voxel index.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::invalid(format!("voxel size must be positive, got {voxel_size}")));
    }
    let mut cells: BTreeMap<(i64, i64, i64), (Point3, usize)> = BTreeMap::new();
    for p in &cloud.points {
        let key = (
            (p.x / voxel_size).floor() as i64,
            (p.y / voxel_size).floor() as i64,
            (p.z / voxel_size).floor() as i64,
        );
        let cell = cells.entry(key).or_insert((Point3::zeros(), 0));
        cell.0 += p;
        cell.1 += 1;
    }
    Ok(PointCloud {
        points: cells.into_values().map(|(sum, n)| sum / n as f64).collect(),
        timestamp: cloud.timestamp,
    })
}

/// Writes an ASCII PLY with `float x y z` vertices.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(
        w,
        "ply\nformat ascii 1.0\ncomment timestamp {}\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.timestamp.secs(),
        cloud.len()
    )
    .map_err(io)?;
    for p in &cloud.points {
        writeln!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads an ASCII PLY point cloud. Only the `x`, `y`, `z` vertex properties
/// are kept; any other vertex properties are skipped.
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text).map_err(|m| Error::data(path, m))
}

fn parse_ply(text: &str) -> std::result::Result<PointCloud, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing 'ply' magic".into());
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut timestamp = Timestamp::ZERO;
    loop {
        let line = lines.next().ok_or("unterminated header")?.trim();
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(format!("unsupported format '{other}'")),
            ["comment", "timestamp", t] => {
                timestamp = t
                    .parse::<f64>()
                    .ok()
                    .and_then(|s| Timestamp::new(s).ok())
                    .ok_or_else(|| format!("bad timestamp comment '{t}'"))?;
            }
            ["comment", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| format!("bad vertex count '{n}'"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "float" | "double" | "float32" | "float64", name] if in_vertex => {
                props.push(name.to_string());
            }
            ["property", ..] if in_vertex => {
                return Err(format!("unsupported vertex property '{line}'"));
            }
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(format!("unexpected header line '{line}'")),
        }
    }
    let n = count.ok_or("no vertex element")?;
    let col = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| format!("missing vertex property '{name}'"))
    };
    let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);

    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let line = lines.next().ok_or_else(|| format!("expected {n} vertices, got {i}"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| format!("vertex {i}: bad number '{t}'")))
            .collect::<std::result::Result<_, _>>()?;
        if vals.len() != props.len() {
            return Err(format!("vertex {i}: expected {} values, got {}", props.len(), vals.len()));
        }
        let p = Point3::new(vals[ix], vals[iy], vals[iz]);
        if !p.iter().all(|c| c.is_finite()) {
            return Err(format!("vertex {i}: non-finite coordinate"));
        }
        points.push(p);
    }
    Ok(PointCloud { points, timestamp })
}
