//! Hybrid point-to-point / point-to-plane ICP.
//!
//! Every correspondence is classified by the planarity of its target point.
//! Planar matches contribute a point-to-plane residual, the rest a
//! point-to-point residual, and the two sums are blended with the planar
//! fraction `alpha`:
//!
//! ```text
//! E = (1 - alpha) / N * Σ_nonplanar |R p + t - q|²  +  alpha / N * Σ_planar (n · (R p + t - q))²
//! ```
//!
//! Degeneracy is judged on the geometry alone: the point-to-plane
//! information of all matched normals (rotation scaled by the cloud radius)
//! must not have an eigen-direction weaker than `degeneracy_ratio` times the
//! strongest. Weak directions are left at the initial guess.

use nalgebra::{Matrix6, Rotation3, SymmetricEigen, Vector3, Vector6};

use super::cloud::{voxel_downsample, Point3, PointCloud};
use super::kdtree::KdTree;
use super::normals::{estimate_normals_with, NormalEstimate};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::state::{Timestamp, Transform3};

/// Numerical singularity limit of the Gauss-Newton normal equations.
pub const MAX_NORMAL_CONDITION: f64 = 1e12;
pub const MIN_CORRESPONDENCES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationParams {
    /// Zero disables downsampling.
    pub voxel_size: f64,
    pub normal_neighbors: usize,
    pub planarity_threshold: f64,
    /// Non-planar matches whose target neighborhood has at least this
    /// linearity are left out of the objective. Values above 1 keep them.
    pub linearity_threshold: f64,
    pub max_dist: f64,
    pub max_dist_decay: f64,
    pub max_dist_floor: f64,
    pub max_iterations: usize,
    pub translation_tolerance: f64,
    pub rotation_tolerance: f64,
    pub degeneracy_ratio: f64,
    pub execution: Execution,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            voxel_size: 0.25,
            normal_neighbors: 10,
            planarity_threshold: 0.5,
            linearity_threshold: 0.3,
            max_dist: 1.0,
            max_dist_decay: 0.9,
            max_dist_floor: 0.25,
            max_iterations: 50,
            translation_tolerance: 1e-5,
            rotation_tolerance: 1e-6,
            degeneracy_ratio: 2e-3,
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationResult {
    /// Maps source-frame points into the target frame.
    pub transform: Transform3,
    pub iterations: usize,
    pub final_cost: f64,
    pub alpha: f64,
    pub correspondence_count: usize,
    pub degenerate: bool,
    /// Smallest over largest eigenvalue of the geometric constraint matrix
    /// at the last iteration.
    pub constraint_ratio: f64,
    /// Objective at the start of every iteration, then the final cost.
    pub cost_history: Vec<f64>,
}

/// A cloud ready to take part in registration: downsampled, indexed and
/// with per-point surface estimates.
#[derive(Clone, Debug)]
pub struct PreparedCloud {
    pub tree: KdTree,
    pub normals: Vec<NormalEstimate>,
    pub timestamp: Timestamp,
}

impl PreparedCloud {
    pub fn new(cloud: &PointCloud, params: &RegistrationParams) -> Result<Self> {
        let points = if params.voxel_size > 0.0 {
            voxel_downsample(cloud, params.voxel_size)?.points
        } else {
            cloud.points.clone()
        };
        let tree = KdTree::new(points);
        let normals = estimate_normals_with(&tree, params.normal_neighbors, params.execution)?;
        Ok(PreparedCloud {
            tree,
            normals,
            timestamp: cloud.timestamp,
        })
    }

    pub fn points(&self) -> &[Point3] {
        self.tree.points()
    }
}

/// Exact nearest-neighbor association gated by `max_dist`.
pub fn associate(source: &PointCloud, target: &PointCloud, max_dist: f64) -> Result<Vec<Correspondence>> {
    check_positive("max_dist", max_dist)?;
    let tree = KdTree::new(target.points.clone());
    Ok(associate_with(&source.points, &tree, max_dist, Execution::default()))
}

pub fn associate_with(
    source: &[Point3],
    tree: &KdTree,
    max_dist: f64,
    exec: Execution,
) -> Vec<Correspondence> {
    let gate2 = max_dist * max_dist;
    par::map_slice(exec, source, |p| tree.nearest(p))
        .into_iter()
        .enumerate()
        .filter_map(|(i, n)| {
            n.filter(|n| n.dist2 <= gate2).map(|n| Correspondence {
                source: i,
                target: n.index,
                distance: n.dist2.sqrt(),
            })
        })
        .collect()
}

/// Fraction of surface estimates at or above the planarity threshold.
pub fn compute_alpha(normals: &[NormalEstimate], planarity_threshold: f64) -> Result<f64> {
    if normals.is_empty() {
        return Err(Error::invalid("compute_alpha needs at least one normal"));
    }
    let planar = normals
        .iter()
        .filter(|n| n.planarity >= planarity_threshold)
        .count();
    Ok(planar as f64 / normals.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOptions {
    pub planarity_threshold: f64,
    pub linearity_threshold: f64,
    pub degeneracy_ratio: f64,
    pub execution: Execution,
}

impl From<&RegistrationParams> for StepOptions {
    fn from(p: &RegistrationParams) -> Self {
        StepOptions {
            planarity_threshold: p.planarity_threshold,
            linearity_threshold: p.linearity_threshold,
            degeneracy_ratio: p.degeneracy_ratio,
            execution: p.execution,
        }
    }
}

/// How a correspondence enters the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Residual {
    PointToPlane,
    PointToPoint,
    /// Line-like target neighborhood: on sparse scan rings these are
    /// sampling artifacts that pin the estimate to the sensor.
    Ignored,
}

impl StepOptions {
    pub fn classify(&self, target: &NormalEstimate) -> Residual {
        if target.planarity >= self.planarity_threshold {
            Residual::PointToPlane
        } else if target.linearity >= self.linearity_threshold {
            Residual::Ignored
        } else {
            Residual::PointToPoint
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub increment: Transform3,
    /// Objective evaluated before the increment.
    pub cost: f64,
    pub degenerate: bool,
    /// Condition number of the Gauss-Newton normal matrix.
    pub condition: f64,
    /// Weakest over strongest eigenvalue of the scaled geometric information.
    pub constraint_ratio: f64,
}

#[derive(Clone, Copy)]
struct Accum {
    h: Matrix6<f64>,
    b: Vector6<f64>,
    geo: Matrix6<f64>,
    cost: f64,
    /// Squared radius summed over planar matches, and their count.
    radius2: f64,
    planar: f64,
}

impl Accum {
    fn zero() -> Self {
        Accum {
            h: Matrix6::zeros(),
            b: Vector6::zeros(),
            geo: Matrix6::zeros(),
            cost: 0.0,
            radius2: 0.0,
            planar: 0.0,
        }
    }

    fn merge(mut self, o: Accum) -> Accum {
        self.h += o.h;
        self.b += o.b;
        self.geo += o.geo;
        self.cost += o.cost;
        self.radius2 += o.radius2;
        self.planar += o.planar;
        self
    }
}

#[inline]
fn skew_row(p: &Vector3<f64>, n: &Vector3<f64>) -> Vector6<f64> {
    let c = p.cross(n);
    Vector6::new(n.x, n.y, n.z, c.x, c.y, c.z)
}

/// One Gauss-Newton step of the blended objective.
///
/// `source` holds the source points already moved by the current estimate.
/// The increment is a left perturbation: `new = increment ∘ current`.
pub fn solve_step(
    correspondences: &[Correspondence],
    source: &[Point3],
    target: &[Point3],
    target_normals: &[NormalEstimate],
    alpha: f64,
    opts: &StepOptions,
) -> Result<StepOutcome> {
    if correspondences.len() < MIN_CORRESPONDENCES {
        return Err(Error::invalid(format!(
            "solve_step needs {MIN_CORRESPONDENCES} correspondences, got {}",
            correspondences.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let n = correspondences.len() as f64;
    let (w_plane, w_point) = (alpha / n, (1.0 - alpha) / n);

    let acc = par::chunked_reduce(
        opts.execution,
        correspondences,
        Accum::zero,
        |mut acc, c| {
            let p = &source[c.source];
            let q = &target[c.target];
            let ne = &target_normals[c.target];
            let d = p - q;
            match opts.classify(ne) {
                Residual::PointToPlane => {
                    let j = skew_row(p, &ne.normal);
                    let jj = j * j.transpose();
                    acc.geo += jj;
                    acc.radius2 += p.norm_squared();
                    acc.planar += 1.0;
                    let r = ne.normal.dot(&d);
                    acc.h += w_plane * jj;
                    acc.b += (w_plane * r) * j;
                    acc.cost += w_plane * r * r;
                }
                Residual::PointToPoint if w_point > 0.0 => {
                    // rows of [I, -[p]x]
                    for (axis, r) in d.iter().enumerate() {
                        let j = skew_row(p, &Vector3::ith(axis, 1.0));
                        acc.h += w_point * (j * j.transpose());
                        acc.b += (w_point * r) * j;
                    }
                    acc.cost += w_point * d.norm_squared();
                }
                _ => {}
            }
            acc
        },
        Accum::merge,
    );

    // Geometric constraint analysis over planar matches, with rotation
    // expressed in meters.
    let radius = (acc.radius2 / acc.planar.max(1.0)).sqrt().max(1e-9);
    let scale = Matrix6::from_diagonal(&Vector6::new(1.0, 1.0, 1.0, 1.0 / radius, 1.0 / radius, 1.0 / radius));
    let geo = scale * acc.geo * scale;
    let geo_eig = SymmetricEigen::new(geo);
    let geo_max = geo_eig.eigenvalues.max().max(0.0);
    let geo_min = geo_eig.eigenvalues.min().max(0.0);
    let constraint_ratio = if geo_max > 0.0 { geo_min / geo_max } else { 0.0 };
    let geo_degenerate = constraint_ratio < opts.degeneracy_ratio;

    let h_eig = SymmetricEigen::new(acc.h);
    let h_max = h_eig.eigenvalues.max().max(0.0);
    let h_min = h_eig.eigenvalues.min().max(0.0);
    let condition = if h_min > 0.0 { h_max / h_min } else { f64::INFINITY };
    let singular = !(condition <= MAX_NORMAL_CONDITION);

    let delta = if geo_degenerate || singular {
        // Restrict the step to well-constrained directions of both the
        // geometry and the normal matrix.
        let mut basis: Vec<Vector6<f64>> = Vec::new();
        for (i, l) in geo_eig.eigenvalues.iter().enumerate() {
            if geo_max > 0.0 && *l >= opts.degeneracy_ratio * geo_max {
                basis.push(scale * geo_eig.eigenvectors.column(i));
            }
        }
        restricted_solve(&acc.h, &acc.b, &basis)
    } else {
        let rhs = -acc.b;
        acc.h
            .cholesky()
            .map(|c| c.solve(&rhs))
            .or_else(|| acc.h.lu().solve(&rhs))
            .unwrap_or_else(Vector6::zeros)
    };

    Ok(StepOutcome {
        increment: increment_from(&delta),
        cost: acc.cost,
        degenerate: geo_degenerate || singular,
        condition,
        constraint_ratio,
    })
}

/// Minimizes the quadratic model over `span(basis)`, dropping directions in
/// which the reduced normal matrix is itself singular.
fn restricted_solve(h: &Matrix6<f64>, b: &Vector6<f64>, basis: &[Vector6<f64>]) -> Vector6<f64> {
    let k = basis.len();
    if k == 0 {
        return Vector6::zeros();
    }
    let v = nalgebra::DMatrix::from_fn(6, k, |r, c| basis[c][r]);
    let hr = v.transpose() * nalgebra::DMatrix::from_column_slice(6, 6, h.as_slice()) * &v;
    let br = v.transpose() * nalgebra::DVector::from_column_slice(b.as_slice());
    let eig = SymmetricEigen::new(hr);
    let lmax = eig.eigenvalues.max().max(0.0);
    let mut z = nalgebra::DVector::zeros(k);
    for (i, l) in eig.eigenvalues.iter().enumerate() {
        if lmax > 0.0 && *l > lmax / MAX_NORMAL_CONDITION {
            let e = eig.eigenvectors.column(i);
            z -= e * (e.dot(&br) / l);
        }
    }
    let d = v * z;
    Vector6::from_column_slice(d.as_slice())
}

fn increment_from(delta: &Vector6<f64>) -> Transform3 {
    let omega = Vector3::new(delta[3], delta[4], delta[5]);
    Transform3::new(
        Rotation3::new(omega),
        Vector3::new(delta[0], delta[1], delta[2]),
    )
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

fn matched_normals(corr: &[Correspondence], normals: &[NormalEstimate]) -> Vec<NormalEstimate> {
    corr.iter().map(|c| normals[c.target]).collect()
}

/// Registers `source` onto `target` starting from `initial_guess`.
pub fn register(
    source: &PointCloud,
    target: &PointCloud,
    initial_guess: &Transform3,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    let src = PreparedCloud::new(source, params)?;
    let tgt = PreparedCloud::new(target, params)?;
    register_prepared(&src, &tgt, initial_guess, params)
}

pub fn register_prepared(
    source: &PreparedCloud,
    target: &PreparedCloud,
    initial_guess: &Transform3,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    check_positive("max_dist", params.max_dist)?;
    let opts = StepOptions::from(params);
    let src = source.points();
    let tgt = target.points();
    let exec = params.execution;

    let mut transform = *initial_guess;
    let mut gate = params.max_dist;
    let mut history = Vec::new();
    let mut degenerate = false;
    let mut constraint_ratio = 0.0;
    let mut iterations = 0;

    let fail = |iteration: usize, correspondences: usize, max_dist: f64| Error::RegistrationFailed {
        iteration,
        correspondences,
        max_dist,
        source_points: src.len(),
        target_points: tgt.len(),
    };

    while iterations < params.max_iterations {
        let moved: Vec<Point3> = par::map_slice(exec, src, |p| transform.apply(p));
        let corr = associate_with(&moved, &target.tree, gate, exec);
        if corr.len() < MIN_CORRESPONDENCES {
            return Err(fail(iterations, corr.len(), gate));
        }
        let alpha = compute_alpha(&matched_normals(&corr, &target.normals), opts.planarity_threshold)?;
        let step = solve_step(&corr, &moved, tgt, &target.normals, alpha, &opts)?;
        history.push(step.cost);
        degenerate = step.degenerate;
        constraint_ratio = step.constraint_ratio;
        iterations += 1;

        transform = step.increment.compose(&transform);
        transform.rotation.renormalize();

        if step.increment.translation.norm() < params.translation_tolerance
            && step.increment.rotation_angle() < params.rotation_tolerance
        {
            break;
        }
        gate = (gate * params.max_dist_decay).max(params.max_dist_floor);
    }

    // Objective at the converged estimate.
    let moved: Vec<Point3> = par::map_slice(exec, src, |p| transform.apply(p));
    let corr = associate_with(&moved, &target.tree, gate, exec);
    if corr.len() < MIN_CORRESPONDENCES {
        return Err(fail(iterations, corr.len(), gate));
    }
    let alpha = compute_alpha(&matched_normals(&corr, &target.normals), opts.planarity_threshold)?;
    let final_cost = evaluate_cost(&corr, &moved, tgt, &target.normals, alpha, &opts);
    history.push(final_cost);

    Ok(RegistrationResult {
        transform,
        iterations,
        final_cost,
        alpha,
        correspondence_count: corr.len(),
        degenerate,
        constraint_ratio,
        cost_history: history,
    })
}

fn evaluate_cost(
    corr: &[Correspondence],
    source: &[Point3],
    target: &[Point3],
    normals: &[NormalEstimate],
    alpha: f64,
    opts: &StepOptions,
) -> f64 {
    let n = corr.len() as f64;
    corr.iter()
        .map(|c| {
            let d = source[c.source] - target[c.target];
            let ne = &normals[c.target];
            match opts.classify(ne) {
                Residual::PointToPlane => alpha / n * ne.normal.dot(&d).powi(2),
                Residual::PointToPoint => (1.0 - alpha) / n * d.norm_squared(),
                Residual::Ignored => 0.0,
            }
        })
        .sum()
}
