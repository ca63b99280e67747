//! Benchmark inverse-problem instances with closed-form ground truth.
//!
//! Every instance is checked at construction: the source term must match
//! `-div(gamma* grad u*)` (or `d_t u* - div(gamma* grad u*)`) computed by central
//! differences of the analytic flux.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{stream_rng, BoxDomain, Density};

/// Width of the logistic smoothing used by the piecewise-constant conductivities.
pub const SMOOTHING: f64 = 0.02;
pub const NOISE_TRUNCATION: f64 = 100.0;
const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProblemId {
    #[serde(rename = "analytic1d")]
    Analytic1d,
    #[serde(rename = "test1")]
    Test1,
    #[serde(rename = "test2")]
    Test2,
    #[serde(rename = "test3")]
    Test3,
    #[serde(rename = "test4-1")]
    Test4Modes,
    #[serde(rename = "test4-2")]
    Test4Corner,
    #[serde(rename = "test4-3")]
    Test4Nonconvex,
    #[serde(rename = "test5")]
    Test5,
    #[serde(rename = "test6")]
    Test6,
    #[serde(rename = "test8")]
    Test8,
}

impl ProblemId {
    pub const ALL: [ProblemId; 10] = [
        ProblemId::Analytic1d,
        ProblemId::Test1,
        ProblemId::Test2,
        ProblemId::Test3,
        ProblemId::Test4Modes,
        ProblemId::Test4Corner,
        ProblemId::Test4Nonconvex,
        ProblemId::Test5,
        ProblemId::Test6,
        ProblemId::Test8,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemId::Analytic1d => "analytic1d",
            ProblemId::Test1 => "test1",
            ProblemId::Test2 => "test2",
            ProblemId::Test3 => "test3",
            ProblemId::Test4Modes => "test4-1",
            ProblemId::Test4Corner => "test4-2",
            ProblemId::Test4Nonconvex => "test4-3",
            ProblemId::Test5 => "test5",
            ProblemId::Test6 => "test6",
            ProblemId::Test8 => "test8",
        }
    }

    pub fn supported_dims(self) -> &'static [usize] {
        match self {
            ProblemId::Analytic1d => &[1],
            ProblemId::Test1 => &[2, 5],
            ProblemId::Test2 | ProblemId::Test3 => &[2, 5, 10, 20],
            _ => &[5],
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ProblemId::Analytic1d => "1D smoke problem: u = x^2, gamma = 1, f = -2 on (-1, 1)",
            ProblemId::Test1 => "smooth two-bump conductivity, u = cos|x|^2 on (-1, 1)^d",
            ProblemId::Test2 => "nearly piecewise-constant ellipsoidal inclusion, u = |x|^2",
            ProblemId::Test3 => "test2 with multiplicative boundary measurement noise",
            ProblemId::Test4Modes => "two disjoint smoothed inclusions (4 and 2)",
            ProblemId::Test4Corner => "ellipsoid plus a sharp-cornered box inclusion",
            ProblemId::Test4Nonconvex => "non-convex union of three boxes",
            ProblemId::Test5 => "EIT on (0, 1)^d with boundary flux data, f = 0",
            ProblemId::Test6 => "time-dependent thermal conductivity gamma = 1.5 + 0.6 u",
            ProblemId::Test8 => "narrow Gaussian conductivity, intended for importance sampling",
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemId::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::UnsupportedProblem { id: s.to_string(), dim: 0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeKind {
    EllipticConductivity,
    ParabolicThermal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// `(u - u_b, gamma - gamma_b, d_n u - u_n)` on the whole boundary.
    DirichletFull,
    /// Only the flux `gamma grad u . n` is prescribed.
    NeumannFlux,
    /// Dirichlet triple on the lateral boundary plus an initial condition.
    ThermalMixed,
}

/// Multiplicative measurement noise `value * (1 + sigma e)`, `e` clamped to +-100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
}

impl NoiseModel {
    pub fn truncation(&self) -> (f64, f64) {
        (-NOISE_TRUNCATION, NOISE_TRUNCATION)
    }
}

pub fn apply_noise<R: Rng + ?Sized>(value: f64, sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        return value;
    }
    let e: f64 = rng.sample(StandardNormal);
    value * (1.0 + sigma * e.clamp(-NOISE_TRUNCATION, NOISE_TRUNCATION))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Bump {
    /// `exp((sum_i w_i (x_i - c_i)^2 - r^2) / SMOOTHING)`
    Ellipsoid { center: Vec<f64>, weights: Vec<f64>, radius: f64 },
    /// `exp((|x_axis - c| - half_width) / SMOOTHING)`
    Slab { axis: usize, center: f64, half_width: f64 },
}

impl Bump {
    fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            Bump::Ellipsoid { center, weights, radius } => {
                let q: f64 = (0..x.len()).map(|i| weights[i] * (x[i] - center[i]).powi(2)).sum();
                let e = ((q - radius * radius) / SMOOTHING).min(700.0).exp();
                for i in 0..x.len() {
                    grad[i] = e * 2.0 * weights[i] * (x[i] - center[i]) / SMOOTHING;
                }
                e
            }
            Bump::Slab { axis, center, half_width } => {
                let s = x[*axis] - center;
                let e = ((s.abs() - half_width) / SMOOTHING).min(700.0).exp();
                grad.iter_mut().for_each(|g| *g = 0.0);
                grad[*axis] = e * s.signum() / SMOOTHING;
                e
            }
        }
    }
}

/// `height / (1 + sum of bumps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Plateau {
    height: f64,
    bumps: Vec<Bump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SmoothedConductivity {
    base: f64,
    plateaus: Vec<Plateau>,
}

impl SmoothedConductivity {
    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let d = x.len();
        let mut g = self.base;
        let mut grad = vec![0.0; d];
        let mut bg = vec![0.0; d];
        for p in &self.plateaus {
            let mut s = 1.0;
            let mut sg = vec![0.0; d];
            for b in &p.bumps {
                s += b.value_and_grad(x, &mut bg);
                for i in 0..d {
                    sg[i] += bg[i];
                }
            }
            let inv = 1.0 / s;
            g += p.height * inv;
            for i in 0..d {
                grad[i] -= p.height * sg[i] * inv * inv;
            }
        }
        (g, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GaussianSum {
    scale: f64,
    /// `(center, weights, exponent factor)` with term `exp(-factor |x-c|^2_W)`.
    terms: Vec<(Vec<f64>, Vec<f64>, f64)>,
}

impl GaussianSum {
    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let d = x.len();
        let mut g = 0.0;
        let mut grad = vec![0.0; d];
        for (c, w, k) in &self.terms {
            let q: f64 = (0..d).map(|i| w[i] * (x[i] - c[i]).powi(2)).sum();
            let e = self.scale * (-k * q).exp();
            g += e;
            for i in 0..d {
                grad[i] -= e * k * 2.0 * w[i] * (x[i] - c[i]);
            }
        }
        (g, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Field {
    Quadratic1d,
    /// `u = cos|x|^2` with a Gaussian-sum conductivity.
    CosineRadial(GaussianSum),
    /// `u = |x|^2` with a logistic-smoothed conductivity.
    QuadraticRadial(SmoothedConductivity),
    Eit { a: f64 },
    Thermal { k1: f64, k2: f64, lambda1: f64, lambda2: f64 },
}

/// Ground-truth values at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub u: f64,
    pub gamma: f64,
    /// Spatial gradient of `u*`.
    pub grad_u: Vec<f64>,
    /// `d_t u*`; zero for steady problems.
    pub du_dt: f64,
}

/// Boundary measurements at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryData {
    pub u_b: f64,
    pub gamma_b: f64,
    /// Normal derivative `u_n`, or the flux `g = gamma grad u . n` for flux problems.
    pub normal_data: f64,
}

/// Reference solver settings for each instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSettings {
    pub n_interior: usize,
    pub n_boundary: usize,
    pub beta: f64,
    pub beta_prime: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub id: ProblemId,
    pub dim: usize,
    /// Spatial domain.
    pub domain: BoxDomain,
    /// Final time for time-dependent problems.
    pub horizon: Option<f64>,
    pub pde: PdeKind,
    pub boundary_kind: BoundaryKind,
    pub noise: NoiseModel,
    field: Field,
}

fn diag_prefix(prefix: &[f64], fill: f64, d: usize) -> Vec<f64> {
    (0..d).map(|i| prefix.get(i).copied().unwrap_or(fill)).collect()
}

/// Build a catalog instance and verify its source term.
pub fn make_problem(id: ProblemId, dim: usize, noise_sigma: f64) -> Result<ProblemSpec> {
    if !id.supported_dims().contains(&dim) {
        return Err(Error::UnsupportedProblem {
            id: id.to_string(),
            dim,
        });
    }
    if !(0.0..=1.0).contains(&noise_sigma) {
        return Err(Error::InvalidConfig(format!("noise sigma {noise_sigma} outside [0, 1]")));
    }
    let d = dim;
    let sym = BoxDomain::cube(d, -1.0, 1.0)?;
    let unit = BoxDomain::cube(d, 0.0, 1.0)?;
    let ellipsoid = |c: &[f64], w: &[f64], fill: f64, r: f64| Bump::Ellipsoid {
        center: diag_prefix(c, 0.0, d),
        weights: diag_prefix(w, fill, d),
        radius: r,
    };
    let (domain, horizon, pde, boundary_kind, field) = match id {
        ProblemId::Analytic1d => (
            sym,
            None,
            PdeKind::EllipticConductivity,
            BoundaryKind::DirichletFull,
            Field::Quadratic1d,
        ),
        ProblemId::Test1 => (
            sym,
            None,
            PdeKind::EllipticConductivity,
            BoundaryKind::DirichletFull,
            Field::CosineRadial(GaussianSum {
                scale: 2.0,
                terms: vec![
                    (diag_prefix(&[-0.5, 0.5], 0.0, d), diag_prefix(&[1.25, 5.0], 0.0, d), 1.0),
                    (diag_prefix(&[0.5, -0.5], 0.0, d), diag_prefix(&[5.0, 1.8], 0.0, d), 1.0),
                ],
            }),
        ),
        ProblemId::Test2 | ProblemId::Test3 => (
            sym,
            None,
            PdeKind::EllipticConductivity,
            BoundaryKind::DirichletFull,
            Field::QuadraticRadial(SmoothedConductivity {
                base: 0.5,
                plateaus: vec![Plateau {
                    height: 1.5,
                    bumps: vec![ellipsoid(&[0.1, 0.3], &[0.81, 2.0], 0.09, 0.6)],
                }],
            }),
        ),
        ProblemId::Test4Modes => (
            sym,
            None,
            PdeKind::EllipticConductivity,
            BoundaryKind::DirichletFull,
            Field::QuadraticRadial(SmoothedConductivity {
                base: 0.5,
                plateaus: vec![
                    Plateau {
                        height: 3.5,
                        bumps: vec![ellipsoid(&[-0.5, -0.5], &[0.81, 2.0], 0.09, 0.4)],
                    },
                    Plateau {
                        height: 1.5,
                        bumps: vec![ellipsoid(&[0.5, 0.5], &[2.0, 0.81], 0.09, 0.4)],
                    },
                ],
            }),
        ),
        ProblemId::Test4Corner => (
            sym,
            None,
            PdeKind::EllipticConductivity,
            BoundaryKind::DirichletFull,
            Field::QuadraticRadial(SmoothedConductivity {
                base: 0.5,
                plateaus: vec![
                    Plateau {
                        height: 1.5,
                        bumps: vec![ellipsoid(&[0.55], &[1.0, 4.0], 0.0, 0.4)],
                    },
                    Plateau {
                        height: 1.5,
                        bumps: vec![
                            Bump::Slab {
                                axis: 0,
                                center: -0.5,
                                half_width: 0.15,
                            },
                            Bump::Slab {
                                axis: 1,
                                center: 0.0,
                                half_width: 0.6,
                            },
                        ],
                    },
                ],
            }),
        ),
        ProblemId::Test4Nonconvex => {
            let boxes = [((-0.5, 0.0), (0.15, 0.8)), ((-0.1, 0.6), (0.55, 0.2)), ((-0.1, -0.6), (0.55, 0.2))];
            (
                sym,
                None,
                PdeKind::EllipticConductivity,
                BoundaryKind::DirichletFull,
                Field::QuadraticRadial(SmoothedConductivity {
                    base: 0.5,
                    plateaus: boxes
                        .iter()
                        .map(|&((c1, c2), (r1, r2))| Plateau {
                            height: 1.5,
                            bumps: vec![
                                Bump::Slab {
                                    axis: 0,
                                    center: c1,
                                    half_width: r1,
                                },
                                Bump::Slab {
                                    axis: 1,
                                    center: c2,
                                    half_width: r2,
                                },
                            ],
                        })
                        .collect(),
                }),
            )
        }
        ProblemId::Test5 => (
            unit,
            None,
            PdeKind::EllipticConductivity,
            BoundaryKind::NeumannFlux,
            Field::Eit {
                a: (d as f64 - 1.0) * PI * PI / 2.0,
            },
        ),
        ProblemId::Test6 => (
            unit,
            Some(1.0),
            PdeKind::ParabolicThermal,
            BoundaryKind::ThermalMixed,
            Field::Thermal {
                k1: 1.5,
                k2: 0.6,
                lambda1: 0.2,
                lambda2: 1.5 / (PI * PI),
            },
        ),
        ProblemId::Test8 => (
            sym,
            None,
            PdeKind::EllipticConductivity,
            BoundaryKind::DirichletFull,
            Field::CosineRadial(GaussianSum {
                scale: 2.0,
                terms: vec![(diag_prefix(&[-0.2, 0.2], 0.0, d), diag_prefix(&[4.0, 100.0], 0.0, d), 0.5)],
            }),
        ),
    };
    let problem = ProblemSpec {
        id,
        dim,
        domain,
        horizon,
        pde,
        boundary_kind,
        noise: NoiseModel { sigma: noise_sigma },
        field,
    };
    problem.self_check()?;
    Ok(problem)
}

fn thermal_s(t: f64) -> f64 {
    (-1.5 * t).exp() / 5.0
}

impl ProblemSpec {
    /// Network input size: `dim`, plus one for time.
    pub fn input_dim(&self) -> usize {
        self.dim + usize::from(self.horizon.is_some())
    }

    /// Space(-time) box the interior collocation points live in.
    pub fn sampling_domain(&self) -> BoxDomain {
        match self.horizon {
            None => self.domain.clone(),
            Some(t) => {
                let mut lo = self.domain.lower().to_vec();
                let mut hi = self.domain.upper().to_vec();
                lo.push(0.0);
                hi.push(t);
                BoxDomain::new(lo, hi).expect("valid space-time box")
            }
        }
    }

    /// Reference interior sampling density for this instance.
    pub fn reference_density(&self) -> Density {
        match self.id {
            ProblemId::Test8 => Density::GaussianRestricted {
                mean: [-0.2, 0.2],
                inverse_covariance_diag: [1.0, 25.0],
            },
            _ => Density::Uniform,
        }
    }

    pub fn reference_settings(&self) -> ReferenceSettings {
        let d = self.dim;
        let (n_interior, beta_prime, beta) = match self.id {
            ProblemId::Analytic1d => (1_000, 1.0, 100.0),
            ProblemId::Test1 | ProblemId::Test5 => (100_000, 10.0, 10_000.0),
            ProblemId::Test2 | ProblemId::Test3 => (
                20_000 * d,
                match d {
                    10 => 1.0,
                    20 => 0.005,
                    _ => 10.0,
                },
                10_000.0,
            ),
            ProblemId::Test4Modes => (200_000, 10.0, 10_000.0),
            ProblemId::Test4Corner | ProblemId::Test4Nonconvex => (200_000, 1.0, 10_000.0),
            ProblemId::Test6 => (100_000, 1.0, 1_000.0),
            ProblemId::Test8 => (10_000, 10.0, 10_000.0),
        };
        ReferenceSettings {
            n_interior,
            n_boundary: 100 * d,
            beta,
            beta_prime,
            iterations: 20_000,
        }
    }

    fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], f64) {
        match self.horizon {
            None => (x, 0.0),
            Some(_) => (&x[..self.dim], x[self.dim]),
        }
    }

    fn check_inside(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "problem point",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        if !self.sampling_domain().contains_closed(x, BOUNDARY_TOL) {
            return Err(Error::OutsideDomain);
        }
        Ok(())
    }

    /// Unchecked ground truth (used on hot paths and by finite differences).
    pub fn truth_unchecked(&self, x: &[f64]) -> Truth {
        let (xs, t) = self.split(x);
        let d = self.dim;
        match &self.field {
            Field::Quadratic1d => Truth {
                u: xs[0] * xs[0],
                gamma: 1.0,
                grad_u: vec![2.0 * xs[0]],
                du_dt: 0.0,
            },
            Field::CosineRadial(g) => {
                let r2: f64 = xs.iter().map(|v| v * v).sum();
                let s = r2.sin();
                Truth {
                    u: r2.cos(),
                    gamma: g.eval(xs).0,
                    grad_u: xs.iter().map(|v| -2.0 * v * s).collect(),
                    du_dt: 0.0,
                }
            }
            Field::QuadraticRadial(g) => Truth {
                u: xs.iter().map(|v| v * v).sum(),
                gamma: g.eval(xs).0,
                grad_u: xs.iter().map(|v| 2.0 * v).collect(),
                du_dt: 0.0,
            },
            Field::Eit { a } => {
                let g1 = xs[0] - xs[0] * xs[0];
                let e = (-a * g1).exp();
                let sines: Vec<f64> = xs.iter().map(|v| (PI * v).sin()).collect();
                let prod: f64 = sines[1..].iter().product();
                let u = e * prod;
                let mut grad_u = vec![0.0; d];
                grad_u[0] = a * (2.0 * xs[0] - 1.0) * u;
                for i in 1..d {
                    let others: f64 = (1..d).filter(|&j| j != i).map(|j| sines[j]).product();
                    grad_u[i] = e * PI * (PI * xs[i]).cos() * others;
                }
                Truth {
                    u,
                    gamma: (a * g1).exp() / PI,
                    grad_u,
                    du_dt: 0.0,
                }
            }
            Field::Thermal { k1, k2, .. } => {
                let s = thermal_s(t);
                let sum_sin: f64 = xs.iter().map(|v| (PI * v).sin()).sum();
                let u = s * sum_sin;
                Truth {
                    u,
                    gamma: k1 + k2 * u,
                    grad_u: xs.iter().map(|v| PI * s * (PI * v).cos()).collect(),
                    du_dt: -1.5 * u,
                }
            }
        }
    }

    /// Ground truth at a point of the closed domain.
    pub fn eval_truth(&self, x: &[f64]) -> Result<Truth> {
        self.check_inside(x)?;
        Ok(self.truth_unchecked(x))
    }

    pub fn gamma_star(&self, x: &[f64]) -> f64 {
        self.truth_unchecked(x).gamma
    }

    /// Source term `f`.
    pub fn source(&self, x: &[f64]) -> f64 {
        let (xs, t) = self.split(x);
        let d = self.dim as f64;
        match &self.field {
            Field::Quadratic1d => -2.0,
            Field::CosineRadial(g) => {
                let (gamma, grad) = g.eval(xs);
                let r2: f64 = xs.iter().map(|v| v * v).sum();
                let x_dot: f64 = xs.iter().zip(&grad).map(|(a, b)| a * b).sum();
                2.0 * r2.sin() * x_dot + gamma * (2.0 * d * r2.sin() + 4.0 * r2 * r2.cos())
            }
            Field::QuadraticRadial(g) => {
                let (gamma, grad) = g.eval(xs);
                let x_dot: f64 = xs.iter().zip(&grad).map(|(a, b)| a * b).sum();
                -2.0 * d * gamma - 2.0 * x_dot
            }
            Field::Eit { .. } => 0.0,
            Field::Thermal { k1, k2, lambda2, .. } => {
                let s = thermal_s(t);
                let sum_sin: f64 = xs.iter().map(|v| (PI * v).sin()).sum();
                let sum_cos2: f64 = xs.iter().map(|v| (PI * v).cos().powi(2)).sum();
                PI * PI * (k1 + k2 * s * sum_sin - lambda2) * s * sum_sin - k2 * PI * PI * s * s * sum_cos2
            }
        }
    }

    /// Initial value `u_i` on `Omega x {0}` (time-dependent problems).
    pub fn initial_value(&self, x: &[f64]) -> f64 {
        match &self.field {
            Field::Thermal { lambda1, .. } => {
                let (xs, _) = self.split(x);
                lambda1 * xs.iter().map(|v| (PI * v).sin()).sum::<f64>()
            }
            _ => self.truth_unchecked(x).u,
        }
    }

    /// Noise-free boundary data; `normal` is the spatial outward normal.
    pub fn boundary_truth(&self, x: &[f64], normal: &[f64]) -> BoundaryData {
        let tr = self.truth_unchecked(x);
        let dn: f64 = tr.grad_u.iter().zip(normal).map(|(a, b)| a * b).sum();
        let normal_data = match self.boundary_kind {
            BoundaryKind::NeumannFlux => tr.gamma * dn,
            _ => dn,
        };
        BoundaryData {
            u_b: tr.u,
            gamma_b: tr.gamma,
            normal_data,
        }
    }

    /// Boundary measurements passed through the noise model (fresh draws per call).
    pub fn boundary_data<R: Rng + ?Sized>(&self, x: &[f64], normal: &[f64], rng: &mut R) -> Result<BoundaryData> {
        self.check_inside(x)?;
        let (xs, _) = self.split(x);
        let n = &normal[..self.dim.min(normal.len())];
        match self.domain.face_normal(xs, BOUNDARY_TOL) {
            Some(_) => {}
            None => return Err(Error::NotOnBoundary),
        }
        Ok(self.noisy(self.boundary_truth(x, n), rng))
    }

    pub fn noisy<R: Rng + ?Sized>(&self, clean: BoundaryData, rng: &mut R) -> BoundaryData {
        let s = self.noise.sigma;
        BoundaryData {
            u_b: apply_noise(clean.u_b, s, rng),
            gamma_b: apply_noise(clean.gamma_b, s, rng),
            normal_data: match self.pde {
                PdeKind::ParabolicThermal => clean.normal_data,
                PdeKind::EllipticConductivity => apply_noise(clean.normal_data, s, rng),
            },
        }
    }

    fn flux(&self, x: &[f64]) -> Vec<f64> {
        let tr = self.truth_unchecked(x);
        tr.grad_u.iter().map(|g| tr.gamma * g).collect()
    }

    /// `|d_t u* - div(gamma* grad u*) - f|` with central differences of step `h`.
    pub fn consistency_residual(&self, x: &[f64], h: f64) -> f64 {
        let mut div = 0.0;
        let mut xp = x.to_vec();
        for i in 0..self.dim {
            xp[i] = x[i] + h;
            let fp = self.flux(&xp)[i];
            xp[i] = x[i] - h;
            let fm = self.flux(&xp)[i];
            xp[i] = x[i];
            div += (fp - fm) / (2.0 * h);
        }
        let mut dt = 0.0;
        if self.horizon.is_some() {
            let k = self.dim;
            xp[k] = x[k] + h;
            let up = self.truth_unchecked(&xp).u;
            xp[k] = x[k] - h;
            let um = self.truth_unchecked(&xp).u;
            dt = (up - um) / (2.0 * h);
        }
        (dt - div - self.source(x)).abs()
    }

    fn self_check(&self) -> Result<()> {
        let h = 1e-4;
        let dom = self.sampling_domain();
        let mut rng = stream_rng(0x5eed, 0, 0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..dom.dim())
                .map(|i| {
                    let lo = dom.lower()[i] + 3.0 * h;
                    let hi = dom.upper()[i] - 3.0 * h;
                    lo + (hi - lo) * rng.random::<f64>()
                })
                .collect();
            let r = self.consistency_residual(&x, h);
            let f = self.source(&x);
            if !(r < 1e-3 * (1.0 + f.abs())) {
                return Err(Error::InvalidConfig(format!(
                    "{} source term inconsistent at {:?}: residual {r}",
                    self.id, x
                )));
            }
        }
        if let Field::Thermal { .. } = self.field {
            let x0: Vec<f64> = dom.center().iter().take(self.dim).copied().chain([0.0]).collect();
            if (self.initial_value(&x0) - self.truth_unchecked(&x0).u).abs() > 1e-12 {
                return Err(Error::InvalidConfig("initial value disagrees with u*(., 0)".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unsupported_dimension_is_rejected() {
        assert!(make_problem(ProblemId::Test1, 3, 0.0).is_err());
        assert!(make_problem(ProblemId::Test5, 2, 0.0).is_err());
        assert!(make_problem(ProblemId::Test2, 5, 1.5).is_err());
        assert!("test9".parse::<ProblemId>().is_err());
        assert_eq!("test4-2".parse::<ProblemId>().unwrap(), ProblemId::Test4Corner);
    }

    #[test]
    fn test2_plateau_values() {
        let p = make_problem(ProblemId::Test2, 5, 0.0).unwrap();
        let center = [0.1, 0.3, 0.0, 0.0, 0.0];
        assert!((p.gamma_star(&center) - 2.0).abs() < 1e-6);
        assert!((p.gamma_star(&[-0.95, -0.95, 0.9, 0.9, 0.9]) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn test2_source_equals_printed_formula() {
        let p = make_problem(ProblemId::Test2, 5, 0.0).unwrap();
        let w = [0.81, 2.0, 0.09, 0.09, 0.09];
        let c = [0.1, 0.3, 0.0, 0.0, 0.0];
        let mut rng = stream_rng(3, 0, 0);
        for _ in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q: f64 = (0..5).map(|i| w[i] * (x[i] - c[i]).powi(2)).sum();
            let delta = ((q - 0.36) / SMOOTHING).exp();
            let gamma = 0.5 + 1.5 / (1.0 + delta);
            let xsx: f64 = (0..5).map(|i| (x[i] - c[i]) * w[i] * x[i]).sum();
            let printed = 6.0 * xsx / (SMOOTHING * (1.0 / delta + 2.0 + delta)) - 10.0 * gamma;
            assert!((p.source(&x) - printed).abs() < 1e-9 * (1.0 + printed.abs()));
        }
    }

    #[test]
    fn test5_and_truth_spot_values() {
        let p = make_problem(ProblemId::Test5, 5, 0.0).unwrap();
        assert_eq!(p.source(&[0.3; 5]), 0.0);
        let x = [0.0, 0.2, 0.4, 0.6, 0.8];
        assert!((p.eval_truth(&x).unwrap().gamma - 1.0 / PI).abs() < 1e-15);
        let t2 = make_problem(ProblemId::Test2, 5, 0.0).unwrap().eval_truth(&[0.0; 5]).unwrap();
        assert_eq!(t2.u, 0.0);
        assert_eq!(t2.grad_u, vec![0.0; 5]);
        let t1 = make_problem(ProblemId::Test1, 5, 0.0).unwrap().eval_truth(&[0.0; 5]).unwrap();
        assert_eq!(t1.u, 1.0);
        assert!(make_problem(ProblemId::Test1, 5, 0.0).unwrap().eval_truth(&[1.5, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn test6_gamma_is_affine_in_u() {
        let p = make_problem(ProblemId::Test6, 5, 0.0).unwrap();
        let mut rng = stream_rng(8, 0, 0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            let t = p.eval_truth(&x).unwrap();
            assert!((t.gamma - (1.5 + 0.6 * t.u)).abs() < 1e-14);
        }
    }

    #[test]
    fn test6_neumann_data() {
        let p = make_problem(ProblemId::Test6, 5, 0.2).unwrap();
        let x = [1.0, 0.3, 0.5, 0.7, 0.2, 0.4];
        let n = [1.0, 0.0, 0.0, 0.0, 0.0];
        let b = p.boundary_data(&x, &n, &mut stream_rng(1, 0, 0)).unwrap();
        let expected = PI * thermal_s(0.4) * (PI * 1.0).cos();
        assert!((b.normal_data - expected).abs() < 1e-14);
    }

    #[test]
    fn noiseless_boundary_data_matches_truth() {
        let p = make_problem(ProblemId::Test2, 5, 0.0).unwrap();
        let x = [-1.0, 0.2, 0.3, -0.4, 0.5];
        let n = [-1.0, 0.0, 0.0, 0.0, 0.0];
        let b = p.boundary_data(&x, &n, &mut stream_rng(1, 0, 0)).unwrap();
        let t = p.eval_truth(&x).unwrap();
        assert_eq!(b.u_b, t.u);
        assert_eq!(b.gamma_b, t.gamma);
        assert_eq!(b.normal_data, -t.grad_u[0]);
        assert!(matches!(
            p.boundary_data(&[0.0; 5], &n, &mut stream_rng(1, 0, 0)),
            Err(Error::NotOnBoundary)
        ));
    }

    #[test]
    fn noisy_boundary_ratio_is_bounded() {
        let p = make_problem(ProblemId::Test3, 5, 0.05).unwrap();
        let x = [1.0, 0.2, 0.3, -0.4, 0.5];
        let n = [1.0, 0.0, 0.0, 0.0, 0.0];
        let mut rng = stream_rng(2, 0, 0);
        let t = p.eval_truth(&x).unwrap();
        for _ in 0..1000 {
            let b = p.boundary_data(&x, &n, &mut rng).unwrap();
            let r = b.u_b / t.u;
            assert!((1.0 - 5.0..=1.0 + 5.0).contains(&r));
        }
    }

    #[test]
    fn zero_sigma_noise_is_identity() {
        let mut rng = stream_rng(1, 0, 0);
        assert_eq!(apply_noise(3.25, 0.0, &mut rng), 3.25);
    }
}
