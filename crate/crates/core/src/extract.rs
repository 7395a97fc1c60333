//! Application outputs derived from an optimal plan.

use crate::costs::{barycenter_map, spline_moments, validate_times, validate_weights};
use crate::error::{Error, Result};
use crate::measures::{kahan_sum, marginal_residuals, Marginal, SparsePlan};

/// Default absolute tolerance for merging coincident points.
pub const MERGE_TOLERANCE: f64 = 1e-12;

/// Residual allowed when a plan's coordinate marginal is replaced by the
/// stored marginal.
const KNOT_RESIDUAL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPointCloud {
    pub points: Vec<Vec<f64>>,
    pub masses: Vec<f64>,
}

impl WeightedPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        kahan_sum(self.masses.iter().copied())
    }

    fn from_marginal(m: &Marginal) -> Self {
        WeightedPointCloud {
            points: m.points().to_vec(),
            masses: m.masses().to_vec(),
        }
    }

    /// Sorts points lexicographically and merges runs whose coordinates agree
    /// within `tol`, summing their masses.
    pub fn merged(mut self, tol: f64) -> Self {
        let mut idx: Vec<usize> = (0..self.points.len()).collect();
        idx.sort_by(|&a, &b| lex_cmp(&self.points[a], &self.points[b]));
        let mut points: Vec<Vec<f64>> = Vec::with_capacity(idx.len());
        let mut masses: Vec<f64> = Vec::with_capacity(idx.len());
        for i in idx {
            let p = std::mem::take(&mut self.points[i]);
            let m = self.masses[i];
            match points.last() {
                Some(q) if close(q, &p, tol) => *masses.last_mut().unwrap() += m,
                _ => {
                    points.push(p);
                    masses.push(m);
                }
            }
        }
        WeightedPointCloud { points, masses }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Index of the single unit entry of a weight vector, if it is one-hot.
fn one_hot(weights: &[f64]) -> Option<usize> {
    let mut hit = None;
    for (k, &w) in weights.iter().enumerate() {
        if w == 1.0 && hit.is_none() {
            hit = Some(k);
        } else if w != 0.0 {
            return None;
        }
    }
    hit
}

fn check_plan(plan: &SparsePlan, marginals: &[Marginal]) -> Result<Vec<Vec<f64>>> {
    if plan.is_empty() {
        return Err(Error::EmptySupport);
    }
    marginal_residuals(plan, marginals)
}

fn coordinate_marginal(
    residuals: &[Vec<f64>],
    marginals: &[Marginal],
    k: usize,
) -> Result<WeightedPointCloud> {
    let worst = residuals[k].iter().fold(0.0f64, |a, r| a.max(r.abs()));
    if worst > KNOT_RESIDUAL {
        return Err(Error::Numerical(format!(
            "plan misses marginal {k} by {worst:e}"
        )));
    }
    Ok(WeightedPointCloud::from_marginal(&marginals[k]))
}

/// Pushes the plan forward under the weighted-mean map.
///
/// One-hot weights return the selected marginal itself, which is what the
/// projection of any feasible plan is.
pub fn barycenter_pushforward(
    plan: &SparsePlan,
    marginals: &[Marginal],
    weights: &[f64],
    merge_tol: f64,
) -> Result<WeightedPointCloud> {
    validate_weights(weights)?;
    if weights.len() != marginals.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} marginals",
            weights.len(),
            marginals.len()
        )));
    }
    let residuals = check_plan(plan, marginals)?;
    if let Some(k) = one_hot(weights) {
        return coordinate_marginal(&residuals, marginals, k);
    }
    let mut points = Vec::with_capacity(plan.len());
    let mut masses = Vec::with_capacity(plan.len());
    for (c, m) in plan.iter() {
        points.push(barycenter_map(&c.coordinates(marginals), weights)?);
        masses.push(m);
    }
    Ok(WeightedPointCloud { points, masses }.merged(merge_tol))
}

/// Displacement interpolation clouds at several times.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurePath {
    pub times: Vec<f64>,
    pub clouds: Vec<WeightedPointCloud>,
}

/// Evaluates the natural cubic spline of every support configuration at the
/// query times. At a knot time the corresponding marginal is returned.
pub fn spline_path(
    plan: &SparsePlan,
    marginals: &[Marginal],
    times: &[f64],
    query: &[f64],
    merge_tol: f64,
) -> Result<MeasurePath> {
    validate_times(times)?;
    if times.len() != marginals.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} times for {} marginals",
            times.len(),
            marginals.len()
        )));
    }
    if let Some(&t) = query.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::QueryTimeOutOfRange(t));
    }
    let residuals = check_plan(plan, marginals)?;
    let (t0, t1) = (times[0], times[times.len() - 1]);
    if let Some(&t) = query.iter().find(|&&t| t < t0 || t > t1) {
        return Err(Error::QueryTimeOutOfRange(t));
    }
    let splines: Vec<_> = plan
        .iter()
        .map(|(c, m)| {
            let knots = c.coordinates(marginals);
            spline_moments(&knots, times).map(|mom| (knots, mom, m))
        })
        .collect::<Result<_>>()?;
    let mut clouds = Vec::with_capacity(query.len());
    for &t in query {
        if let Some(k) = times.iter().position(|&tk| tk == t) {
            clouds.push(coordinate_marginal(&residuals, marginals, k)?);
            continue;
        }
        let mut points = Vec::with_capacity(splines.len());
        let mut masses = Vec::with_capacity(splines.len());
        for (knots, mom, m) in &splines {
            points.push(crate::costs::eval_spline_at(knots, times, mom, t));
            masses.push(*m);
        }
        clouds.push(WeightedPointCloud { points, masses }.merged(merge_tol));
    }
    Ok(MeasurePath {
        times: query.to_vec(),
        clouds,
    })
}

/// Regular grid of cell centers `origin + i·spacing`, dimension 0 slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub shape: Vec<usize>,
}

impl GridSpec {
    /// Grid containing every weighted mean of `factor` pixel centers of a
    /// `width × height` image on the unit square.
    pub fn refined_unit_square(width: usize, height: usize, factor: usize) -> Self {
        let f = factor.max(1);
        GridSpec {
            origin: vec![0.5 / width as f64, 0.5 / height as f64],
            spacing: vec![1.0 / (width * f) as f64, 1.0 / (height * f) as f64],
            shape: vec![(width - 1) * f + 1, (height - 1) * f + 1],
        }
    }

    pub fn cells(&self) -> usize {
        self.shape.iter().product()
    }

    /// Nearest cell, ties to the lower index.
    pub fn locate(&self, p: &[f64]) -> Option<usize> {
        if p.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for d in 0..p.len() {
            let v = (p[d] - self.origin[d]) / self.spacing[d];
            let i = (v - 0.5).ceil();
            if !(i >= 0.0 && i < self.shape[d] as f64) {
                return None;
            }
            flat = flat * self.shape[d] + i as usize;
        }
        Some(flat)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn total(&self) -> f64 {
        kahan_sum(self.values.iter().copied())
    }

    pub fn nonzero(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

/// Assigns each point's mass to its nearest grid cell.
pub fn rasterize(cloud: &WeightedPointCloud, spec: &GridSpec) -> Result<Grid> {
    let mut values = vec![0.0; spec.cells()];
    for (index, (p, &m)) in cloud.points.iter().zip(&cloud.masses).enumerate() {
        let cell = spec.locate(p).ok_or_else(|| Error::OutOfGrid {
            index,
            point: p.clone(),
        })?;
        values[cell] += m;
    }
    Ok(Grid {
        spec: spec.clone(),
        values,
    })
}

/// Indicator of a thresholded Gaussian blur.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryGrid {
    pub shape: Vec<usize>,
    pub cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }
}

/// Separable Gaussian blur with standard deviation `sigma` in cells,
/// truncated at `4σ`, with zero padding.
pub fn gaussian_blur(grid: &Grid, sigma: f64) -> Vec<f64> {
    let mut values = grid.values.clone();
    if sigma <= 0.0 {
        return values;
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let shape = &grid.spec.shape;
    for axis in 0..shape.len() {
        let len = shape[axis];
        let stride: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; values.len()];
        for (flat, o) in out.iter_mut().enumerate() {
            let pos = (flat / stride) % len;
            let base = flat - pos * stride;
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let j = pos as isize + ki as isize - radius;
                if j >= 0 && (j as usize) < len {
                    acc += kv * values[base + j as usize * stride];
                }
            }
            *o = acc;
        }
        values = out;
    }
    values
}

/// Blur then threshold: cells whose blurred value is at least `level`.
pub fn smooth_threshold(grid: &Grid, sigma: f64, level: f64) -> BinaryGrid {
    let blurred = gaussian_blur(grid, sigma);
    BinaryGrid {
        shape: grid.spec.shape.clone(),
        cells: blurred.iter().map(|&v| v >= level).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Configuration;

    #[test]
    fn dirac_barycenter_is_weighted_mean() {
        let ms = vec![
            Marginal::dirac(vec![0.0, 0.0]),
            Marginal::dirac(vec![4.0, 2.0]),
        ];
        let plan = SparsePlan::from_entries(vec![1, 1], [(Configuration::new([0, 0]), 1.0)]).unwrap();
        let cloud = barycenter_pushforward(&plan, &ms, &[0.25, 0.75], MERGE_TOLERANCE).unwrap();
        assert_eq!(cloud.points, vec![vec![3.0, 1.5]]);
        assert_eq!(cloud.masses, vec![1.0]);
    }

    #[test]
    fn one_hot_weights_return_marginal() {
        let a = Marginal::on_line(&[0.0, 1.0, 2.0], vec![0.2, 0.3, 0.5]).unwrap();
        let b = Marginal::on_line(&[5.0, 6.0], vec![0.5, 0.5]).unwrap();
        let plan = SparsePlan::from_entries(
            vec![3, 2],
            [
                (Configuration::new([0, 0]), 0.2),
                (Configuration::new([1, 0]), 0.3),
                (Configuration::new([2, 1]), 0.5),
            ],
        )
        .unwrap();
        let ms = vec![a.clone(), b.clone()];
        let c0 = barycenter_pushforward(&plan, &ms, &[1.0, 0.0], MERGE_TOLERANCE).unwrap();
        assert_eq!(c0.points, a.points());
        assert_eq!(c0.masses, a.masses());
        let c1 = barycenter_pushforward(&plan, &ms, &[0.0, 1.0], MERGE_TOLERANCE).unwrap();
        assert_eq!(c1.masses, b.masses());
    }

    #[test]
    fn merging_sums_coincident_points() {
        let cloud = WeightedPointCloud {
            points: vec![vec![1.0], vec![0.0], vec![1.0 + 1e-13]],
            masses: vec![0.25, 0.5, 0.25],
        }
        .merged(MERGE_TOLERANCE);
        assert_eq!(cloud.points, vec![vec![0.0], vec![1.0]]);
        assert_eq!(cloud.masses, vec![0.5, 0.5]);
    }

    #[test]
    fn spline_path_rejects_times_outside_unit_interval() {
        let ms: Vec<_> = (0..3).map(|i| Marginal::dirac(vec![i as f64])).collect();
        let plan = SparsePlan::from_entries(vec![1, 1, 1], [(Configuration::new([0, 0, 0]), 1.0)]).unwrap();
        let times = [0.0, 0.5, 1.0];
        assert!(matches!(
            spline_path(&plan, &ms, &times, &[1.5], MERGE_TOLERANCE),
            Err(Error::QueryTimeOutOfRange(_))
        ));
        let path = spline_path(&plan, &ms, &times, &[0.25, 0.5], MERGE_TOLERANCE).unwrap();
        assert!((path.clouds[0].points[0][0] - 0.5).abs() < 1e-15);
        assert_eq!(path.clouds[1].points[0], vec![1.0]);
    }

    #[test]
    fn raster_single_point_and_ties() {
        let spec = GridSpec {
            origin: vec![0.0, 0.0],
            spacing: vec![1.0, 1.0],
            shape: vec![3, 3],
        };
        let cloud = WeightedPointCloud {
            points: vec![vec![1.0, 2.0]],
            masses: vec![1.0],
        };
        let g = rasterize(&cloud, &spec).unwrap();
        assert_eq!(g.values[5], 1.0);
        assert_eq!(spec.locate(&[0.5, 0.5]), Some(0));
        assert_eq!(spec.locate(&[1.5, 0.0]), Some(3));
        let far = WeightedPointCloud {
            points: vec![vec![0.0, 0.0], vec![3.0, 0.0]],
            masses: vec![0.5, 0.5],
        };
        assert!(matches!(
            rasterize(&far, &spec),
            Err(Error::OutOfGrid { index: 1, .. })
        ));
    }

    #[test]
    fn refined_grid_holds_equal_weight_means() {
        let spec = GridSpec::refined_unit_square(28, 28, 10);
        assert_eq!(spec.shape, vec![271, 271]);
        let p = [(3.5 + 20.5) / 2.0 / 28.0, (0.5 + 27.5) / 2.0 / 28.0];
        assert!(spec.locate(&p).is_some());
    }

    #[test]
    fn zero_sigma_threshold_is_support() {
        let spec = GridSpec {
            origin: vec![0.0],
            spacing: vec![1.0],
            shape: vec![5],
        };
        let g = Grid {
            spec,
            values: vec![0.0, 0.3, 0.0, 0.7, 0.0],
        };
        let b = smooth_threshold(&g, 0.0, 1e-300);
        assert_eq!(b.cells, vec![false, true, false, true, false]);
    }

    #[test]
    fn blur_keeps_constant_interior() {
        let spec = GridSpec {
            origin: vec![0.0, 0.0],
            spacing: vec![1.0, 1.0],
            shape: vec![21, 21],
        };
        let g = Grid {
            spec,
            values: vec![1.0; 441],
        };
        let out = gaussian_blur(&g, 1.0);
        assert!((out[10 * 21 + 10] - 1.0).abs() < 1e-12);
        assert!(out[0] < 1.0);
    }

    #[test]
    fn half_maximum_blob_radius() {
        let n = 61;
        let spec = GridSpec {
            origin: vec![0.0, 0.0],
            spacing: vec![1.0, 1.0],
            shape: vec![n, n],
        };
        let mut values = vec![0.0; n * n];
        values[30 * n + 30] = 1.0;
        let g = Grid { spec, values };
        let sigma = 5.0;
        let blurred = gaussian_blur(&g, sigma);
        let peak = blurred.iter().cloned().fold(0.0, f64::max);
        let b = smooth_threshold(&g, sigma, peak / 2.0);
        let r = sigma * (2.0 * std::f64::consts::LN_2).sqrt();
        let area = b.count() as f64;
        let expected = std::f64::consts::PI * r * r;
        assert!((area - expected).abs() / expected < 0.1, "{area} vs {expected}");
        for i in 0..n {
            for j in 0..n {
                let d = (((i as f64) - 30.0).powi(2) + ((j as f64) - 30.0).powi(2)).sqrt();
                if d < r - 1.0 {
                    assert!(b.cells[i * n + j]);
                }
                if d > r + 1.0 {
                    assert!(!b.cells[i * n + j]);
                }
            }
        }
    }
}
