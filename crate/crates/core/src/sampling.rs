//! Collocation points on box domains and Monte-Carlo integral estimates.
//!
//! Interior batches carry importance weights `1/rho(x)`, so an integral is the
//! sample mean of `psi * weight`. Boundary and initial-slab batches carry
//! quadrature weights (surface measure split over the points of each face), so an
//! integral is the plain weighted sum.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};

pub const REJECTION_CAP: usize = 1_000_000;

/// Deterministic RNG stream for `(root seed, iteration, stream id)`.
pub fn stream_rng(seed: u64, iteration: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((iteration << 8) | (stream & 0xff));
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidDomain(format!(
                "bounds of length {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidDomain("lower_i < upper_i is required".into()));
        }
        Ok(Self { lower, upper })
    }

    /// `(lo, hi)^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn side(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i)).product()
    }

    /// Measure of face pair `i` (one face); counting measure in 1D.
    pub fn face_area(&self, i: usize) -> f64 {
        (0..self.dim()).filter(|&j| j != i).map(|j| self.side(j)).product()
    }

    pub fn boundary_area(&self) -> f64 {
        (0..self.dim()).map(|i| 2.0 * self.face_area(i)).sum()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn contains_closed(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    /// Outward normal if `x` lies on a face (within `tol`), otherwise `None`.
    pub fn face_normal(&self, x: &[f64], tol: f64) -> Option<Vec<f64>> {
        if !self.contains_closed(x, tol) {
            return None;
        }
        for i in 0..self.dim() {
            let mut n = vec![0.0; self.dim()];
            if (x[i] - self.lower[i]).abs() <= tol {
                n[i] = -1.0;
                return Some(n);
            }
            if (x[i] - self.upper[i]).abs() <= tol {
                n[i] = 1.0;
                return Some(n);
            }
        }
        None
    }
}

/// Interior sampling density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Density {
    Uniform,
    /// Normal in the first two coordinates restricted to the box, uniform in the rest.
    GaussianRestricted { mean: [f64; 2], inverse_covariance_diag: [f64; 2] },
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

impl Density {
    pub fn validate(&self, domain: &BoxDomain) -> Result<()> {
        if let Density::GaussianRestricted {
            inverse_covariance_diag,
            ..
        } = self
        {
            if domain.dim() < 2 {
                return Err(Error::InvalidDomain("gaussian density needs dim >= 2".into()));
            }
            if inverse_covariance_diag.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidDomain("inverse covariances must be positive".into()));
            }
        }
        Ok(())
    }

    /// Probability density of the restricted law at `x` (inside the box).
    pub fn pdf(&self, domain: &BoxDomain, x: &[f64]) -> f64 {
        match self {
            Density::Uniform => 1.0 / domain.volume(),
            Density::GaussianRestricted {
                mean,
                inverse_covariance_diag,
            } => {
                let mut p = 1.0;
                for k in 0..2 {
                    let s = 1.0 / inverse_covariance_diag[k].sqrt();
                    let z = (x[k] - mean[k]) / s;
                    let mass = std_normal_cdf((domain.upper[k] - mean[k]) / s)
                        - std_normal_cdf((domain.lower[k] - mean[k]) / s);
                    p *= (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * s * mass);
                }
                for j in 2..domain.dim() {
                    p /= domain.side(j);
                }
                p
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Interior,
    Boundary,
    /// The `t = 0` slab of a space-time cylinder.
    Initial,
}

/// Collocation points stored flat, `dim` coordinates each.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub dim: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    /// Outward unit normals (boundary only), `dim` entries each.
    pub normals: Vec<f64>,
    pub region: Region,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn normal(&self, i: usize) -> &[f64] {
        &self.normals[i * self.dim..(i + 1) * self.dim]
    }
}

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Open01)
}

/// `n` i.i.d. interior points from `density` restricted to `domain`.
pub fn sample_interior<R: Rng + ?Sized>(
    domain: &BoxDomain,
    n: usize,
    density: &Density,
    rng: &mut R,
) -> Result<SampleBatch> {
    density.validate(domain)?;
    let d = domain.dim();
    let mut points = Vec::with_capacity(n * d);
    let mut weights = Vec::with_capacity(n);
    let mut x = vec![0.0; d];
    for _ in 0..n {
        match density {
            Density::Uniform => {
                for i in 0..d {
                    x[i] = domain.lower[i] + domain.side(i) * open_unit(rng);
                }
            }
            Density::GaussianRestricted {
                mean,
                inverse_covariance_diag,
            } => {
                let s = [
                    1.0 / inverse_covariance_diag[0].sqrt(),
                    1.0 / inverse_covariance_diag[1].sqrt(),
                ];
                let mut attempts = 0;
                loop {
                    if attempts == REJECTION_CAP {
                        return Err(Error::RejectionExhausted { attempts });
                    }
                    attempts += 1;
                    let a: f64 = rng.sample(StandardNormal);
                    let b: f64 = rng.sample(StandardNormal);
                    x[0] = mean[0] + s[0] * a;
                    x[1] = mean[1] + s[1] * b;
                    let inside = (0..2).all(|k| x[k] > domain.lower[k] && x[k] < domain.upper[k]);
                    if inside {
                        break;
                    }
                }
                for i in 2..d {
                    x[i] = domain.lower[i] + domain.side(i) * open_unit(rng);
                }
            }
        }
        weights.push(1.0 / density.pdf(domain, &x));
        points.extend_from_slice(&x);
    }
    Ok(SampleBatch {
        dim: d,
        points,
        weights,
        normals: Vec::new(),
        region: Region::Interior,
    })
}

/// Points per face for `n` points over `faces` faces, remainder round-robin.
pub fn face_allocation(n: usize, faces: usize) -> Vec<usize> {
    (0..faces).map(|f| n / faces + usize::from(f < n % faces)).collect()
}

/// `n` boundary points split evenly across the `2 dim` faces.
///
/// Face order is `(axis 0, lower), (axis 0, upper), (axis 1, lower), ...`.
pub fn sample_boundary<R: Rng + ?Sized>(domain: &BoxDomain, n: usize, rng: &mut R) -> SampleBatch {
    let d = domain.dim();
    let mut points = Vec::with_capacity(n * d);
    let mut normals = Vec::with_capacity(n * d);
    let mut weights = Vec::with_capacity(n);
    for (face, count) in face_allocation(n, 2 * d).into_iter().enumerate() {
        if count == 0 {
            continue;
        }
        let axis = face / 2;
        let upper = face % 2 == 1;
        let w = domain.face_area(axis) / count as f64;
        for _ in 0..count {
            for i in 0..d {
                let v = if i == axis {
                    if upper {
                        domain.upper[i]
                    } else {
                        domain.lower[i]
                    }
                } else {
                    domain.lower[i] + domain.side(i) * open_unit(rng)
                };
                points.push(v);
                normals.push(if i == axis {
                    if upper {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    0.0
                });
            }
            weights.push(w);
        }
    }
    SampleBatch {
        dim: d,
        points,
        weights,
        normals,
        region: Region::Boundary,
    }
}

/// Lateral boundary `dOmega x (0, horizon)`: spatial boundary points with a uniform
/// time coordinate appended. Normals get a zero time component.
pub fn sample_lateral_boundary<R: Rng + ?Sized>(
    space: &BoxDomain,
    n: usize,
    horizon: f64,
    rng: &mut R,
) -> SampleBatch {
    let base = sample_boundary(space, n, rng);
    let d = space.dim();
    let mut points = Vec::with_capacity(n * (d + 1));
    let mut normals = Vec::with_capacity(n * (d + 1));
    for i in 0..base.len() {
        points.extend_from_slice(base.point(i));
        points.push(horizon * open_unit(rng));
        normals.extend_from_slice(base.normal(i));
        normals.push(0.0);
    }
    SampleBatch {
        dim: d + 1,
        points,
        weights: base.weights.iter().map(|w| w * horizon).collect(),
        normals,
        region: Region::Boundary,
    }
}

/// Uniform points on the slab `Omega x {t}` with quadrature weights `|Omega|/n`.
pub fn sample_slab<R: Rng + ?Sized>(space: &BoxDomain, n: usize, t: f64, rng: &mut R) -> SampleBatch {
    let d = space.dim();
    let mut points = Vec::with_capacity(n * (d + 1));
    for _ in 0..n {
        for i in 0..d {
            points.push(space.lower[i] + space.side(i) * open_unit(rng));
        }
        points.push(t);
    }
    SampleBatch {
        dim: d + 1,
        points,
        weights: vec![space.volume() / n as f64; n],
        normals: Vec::new(),
        region: Region::Initial,
    }
}

/// Monte-Carlo estimate of the integral of the sampled integrand.
pub fn mc_integral(batch: &SampleBatch, values: &[f64]) -> Result<f64> {
    if values.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            what: "integrand values",
            expected: batch.len(),
            found: values.len(),
        });
    }
    let s: f64 = values.iter().zip(&batch.weights).map(|(v, w)| v * w).sum();
    Ok(match batch.region {
        Region::Interior => s / batch.len().max(1) as f64,
        Region::Boundary | Region::Initial => s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_weights_equal_volume() {
        let dom = BoxDomain::cube(2, -1.0, 1.0).unwrap();
        let b = sample_interior(&dom, 50, &Density::Uniform, &mut stream_rng(1, 0, 0)).unwrap();
        assert!(b.weights.iter().all(|&w| w == 4.0));
        for i in 0..b.len() {
            assert!(b.point(i).iter().all(|v| *v > -1.0 && *v < 1.0));
        }
    }

    #[test]
    fn seeded_sampling_is_repeatable() {
        let dom = BoxDomain::cube(3, -1.0, 1.0).unwrap();
        let a = sample_interior(&dom, 1, &Density::Uniform, &mut stream_rng(9, 4, 1)).unwrap();
        let b = sample_interior(&dom, 1, &Density::Uniform, &mut stream_rng(9, 4, 1)).unwrap();
        assert_eq!(a, b);
        let c = sample_interior(&dom, 1, &Density::Uniform, &mut stream_rng(9, 5, 1)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn one_point_per_face() {
        let dom = BoxDomain::cube(2, -1.0, 1.0).unwrap();
        let b = sample_boundary(&dom, 4, &mut stream_rng(2, 0, 0));
        let normals: Vec<&[f64]> = (0..4).map(|i| b.normal(i)).collect();
        assert_eq!(normals, vec![&[-1.0, 0.0][..], &[1.0, 0.0], &[0.0, -1.0], &[0.0, 1.0]]);
        assert!((b.weights.iter().sum::<f64>() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_points_lie_on_exactly_one_face() {
        let dom = BoxDomain::cube(4, -1.0, 1.0).unwrap();
        let b = sample_boundary(&dom, 37, &mut stream_rng(3, 0, 0));
        assert_eq!(b.len(), 37);
        for i in 0..b.len() {
            let pinned = b.point(i).iter().filter(|v| v.abs() == 1.0).count();
            assert_eq!(pinned, 1);
            let n = b.normal(i);
            assert_eq!(n.iter().map(|v| v * v).sum::<f64>(), 1.0);
            assert_eq!(dom.face_normal(b.point(i), 1e-12).unwrap(), n);
        }
        assert!((b.weights.iter().sum::<f64>() - dom.boundary_area()).abs() < 1e-9);
        assert_eq!(face_allocation(37, 8), vec![5, 5, 5, 5, 5, 4, 4, 4]);
    }

    #[test]
    fn constant_integrand_is_exact() {
        for d in 1..5 {
            let dom = BoxDomain::cube(d, -1.0, 1.0).unwrap();
            let b = sample_interior(&dom, 17, &Density::Uniform, &mut stream_rng(4, 0, 0)).unwrap();
            let v = mc_integral(&b, &vec![1.0; 17]).unwrap();
            assert!((v - 2f64.powi(d as i32)).abs() < 1e-12);
            let bb = sample_boundary(&dom, 2 * d + 3, &mut stream_rng(4, 0, 1));
            let s = mc_integral(&bb, &vec![1.0; bb.len()]).unwrap();
            assert!((s - dom.boundary_area()).abs() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let dom = BoxDomain::cube(2, -1.0, 1.0).unwrap();
        let b = sample_interior(&dom, 3, &Density::Uniform, &mut stream_rng(4, 0, 0)).unwrap();
        assert!(mc_integral(&b, &[1.0]).is_err());
    }

    #[test]
    fn disjoint_gaussian_gives_up() {
        let dom = BoxDomain::cube(2, -1.0, 1.0).unwrap();
        let far = Density::GaussianRestricted {
            mean: [60.0, 60.0],
            inverse_covariance_diag: [1.0, 1.0],
        };
        let err = sample_interior(&dom, 1, &far, &mut stream_rng(1, 0, 0)).unwrap_err();
        assert!(matches!(err, Error::RejectionExhausted { .. }));
    }

    #[test]
    fn gaussian_pdf_integrates_to_one() {
        let dom = BoxDomain::cube(3, -1.0, 1.0).unwrap();
        let g = Density::GaussianRestricted {
            mean: [-0.2, 0.2],
            inverse_covariance_diag: [1.0, 25.0],
        };
        // Midpoint rule over the first two coordinates; third is uniform.
        let m = 400;
        let h = 2.0 / m as f64;
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                let x = [-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h, 0.0];
                s += g.pdf(&dom, &x) * h * h * 2.0;
            }
        }
        assert!((s - 1.0).abs() < 1e-4, "{s}");
    }

    #[test]
    fn lateral_and_slab_weights() {
        let dom = BoxDomain::cube(2, 0.0, 1.0).unwrap();
        let lat = sample_lateral_boundary(&dom, 12, 1.0, &mut stream_rng(1, 0, 0));
        assert_eq!(lat.dim, 3);
        assert!((lat.weights.iter().sum::<f64>() - 4.0).abs() < 1e-12);
        assert!((0..lat.len()).all(|i| lat.normal(i)[2] == 0.0));
        let slab = sample_slab(&dom, 10, 0.0, &mut stream_rng(1, 0, 1));
        assert!((mc_integral(&slab, &[1.0; 10]).unwrap() - 1.0).abs() < 1e-12);
        assert!((0..slab.len()).all(|i| slab.point(i)[2] == 0.0));
    }
}
