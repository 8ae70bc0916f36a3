use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::cloud::Point3;
use super::kdtree::KdTree;
use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Local surface estimate at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalEstimate {
    /// Unit normal, oriented toward the sensor origin.
    pub normal: Vector3<f64>,
    /// `(λ₂ − λ₃) / λ₁` of the neighborhood covariance, in `[0, 1]`.
    pub planarity: f64,
    /// `(λ₁ − λ₂) / λ₁`: how strongly the neighborhood is one-dimensional.
    pub linearity: f64,
}

pub const MIN_NEIGHBORS: usize = 4;

/// Normal and planarity from the covariance of each point's `k` nearest
/// neighbors (the point itself included).
pub fn estimate_normals(points: &[Point3], k: usize) -> Result<Vec<NormalEstimate>> {
    let tree = KdTree::new(points.to_vec());
    estimate_normals_with(&tree, k, Execution::default())
}

pub fn estimate_normals_with(tree: &KdTree, k: usize, exec: Execution) -> Result<Vec<NormalEstimate>> {
    if k < MIN_NEIGHBORS {
        return Err(Error::invalid(format!("need k >= {MIN_NEIGHBORS}, got {k}")));
    }
    if tree.len() < k + 1 {
        return Err(Error::InsufficientPoints {
            needed: k + 1,
            got: tree.len(),
        });
    }
    let pts = tree.points();
    Ok(par::map_slice(exec, pts, |p| {
        let nbrs = tree.k_nearest(p, k);
        local_surface(nbrs.iter().map(|n| &pts[n.index]), p)
    }))
}

fn local_surface<'a>(nbrs: impl Iterator<Item = &'a Point3> + Clone, at: &Point3) -> NormalEstimate {
    let (mut mean, mut n) = (Vector3::zeros(), 0.0);
    for q in nbrs.clone() {
        mean += q;
        n += 1.0;
    }
    mean /= n;
    let mut cov = Matrix3::zeros();
    for q in nbrs {
        let d = q - mean;
        cov += d * d.transpose();
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let l1 = eig.eigenvalues[order[0]].max(0.0);
    let l2 = eig.eigenvalues[order[1]].max(0.0);
    let l3 = eig.eigenvalues[order[2]].max(0.0);

    let (planarity, linearity) = if l1 > 0.0 {
        (((l2 - l3) / l1).clamp(0.0, 1.0), ((l1 - l2) / l1).clamp(0.0, 1.0))
    } else {
        (0.0, 0.0)
    };
    let mut normal: Vector3<f64> = eig.eigenvectors.column(order[2]).into_owned();
    let norm = normal.norm();
    if norm > 0.0 && norm.is_finite() {
        normal /= norm;
    } else {
        normal = Vector3::z();
    }
    // Face the sensor: the origin sits on the side of -at.
    if normal.dot(at) > 0.0 {
        normal = -normal;
    }
    NormalEstimate {
        normal,
        planarity,
        linearity,
    }
}
