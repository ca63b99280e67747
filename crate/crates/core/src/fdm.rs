//! Grid baseline: recover `(u, gamma)` on a uniform 2D mesh by minimizing the mean
//! squared finite-difference PDE residual plus a total-variation penalty on `gamma`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::{relative_l2, TestGrid};
use crate::problems::{PdeKind, ProblemSpec};
use crate::sampling::stream_rng;

pub const TV_EPS: f64 = 1e-8;
const DIVERGENCE_RUN: usize = 100;
const MAX_HALVINGS: usize = 60;

/// Node values on an `n x n` grid over `[lo, hi]^2`, stored `values[i * n + j]`
/// with `i` along `x1` and `j` along `x2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(n: usize, lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidConfig(format!("grid resolution {n} below 3")));
        }
        if values.len() != n * n {
            return Err(Error::DimensionMismatch {
                what: "grid values",
                expected: n * n,
                found: values.len(),
            });
        }
        if !(hi > lo) {
            return Err(Error::InvalidDomain(format!("grid interval [{lo}, {hi}]")));
        }
        Ok(Self { n, lo, hi, values })
    }

    pub fn from_fn(n: usize, lo: f64, hi: f64, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let h = (hi - lo) / (n.max(2) - 1) as f64;
        let values = (0..n * n)
            .map(|k| f(lo + (k / n) as f64 * h, lo + (k % n) as f64 * h))
            .collect();
        Self::new(n, lo, hi, values)
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.spacing()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.n - 1 || j == self.n - 1
    }

    fn same_shape(&self, other: &GridField) -> Result<()> {
        if self.n != other.n || self.lo != other.lo || self.hi != other.hi {
            return Err(Error::DimensionMismatch {
                what: "grid shape",
                expected: self.n,
                found: other.n,
            });
        }
        Ok(())
    }

    /// Bilinear interpolation at `(x, y)` (clamped to the grid box).
    pub fn interpolate(&self, x: f64, y: f64) -> f64 {
        let h = self.spacing();
        let last = (self.n - 2) as f64;
        let s = ((x - self.lo) / h).clamp(0.0, (self.n - 1) as f64);
        let t = ((y - self.lo) / h).clamp(0.0, (self.n - 1) as f64);
        let i = s.floor().min(last) as usize;
        let j = t.floor().min(last) as usize;
        let (a, b) = (s - i as f64, t - j as f64);
        (1.0 - a) * (1.0 - b) * self.at(i, j)
            + a * (1.0 - b) * self.at(i + 1, j)
            + (1.0 - a) * b * self.at(i, j + 1)
            + a * b * self.at(i + 1, j + 1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x1,x2,value\n");
        for i in 0..self.n {
            for j in 0..self.n {
                let _ = writeln!(s, "{},{},{}", self.coord(i), self.coord(j), self.at(i, j));
            }
        }
        s
    }
}

/// Interior residual of `-div(gamma grad u) - f` with face-averaged `gamma`; zero on the boundary.
pub fn fd_residual(u: &GridField, gamma: &GridField, f: &GridField) -> Result<GridField> {
    u.same_shape(gamma)?;
    u.same_shape(f)?;
    let n = u.n;
    let h2 = u.spacing().powi(2);
    let mut r = vec![0.0; n * n];
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let c = i * n + j;
            let (e, w, no, s) = (c + n, c - n, c + 1, c - 1);
            let g = &gamma.values;
            let v = &u.values;
            let div = (0.5 * (g[c] + g[e]) * (v[e] - v[c]) - 0.5 * (g[c] + g[w]) * (v[c] - v[w])
                + 0.5 * (g[c] + g[no]) * (v[no] - v[c])
                - 0.5 * (g[c] + g[s]) * (v[c] - v[s]))
                / h2;
            r[c] = -div - f.values[c];
        }
    }
    GridField::new(n, u.lo, u.hi, r)
}

/// Smoothed isotropic total variation over interior nodes with forward differences.
pub fn tv(gamma: &GridField) -> f64 {
    let n = gamma.n;
    let mut s = 0.0;
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let c = gamma.at(i, j);
            let a = gamma.at(i + 1, j) - c;
            let b = gamma.at(i, j + 1) - c;
            s += (a * a + b * b + TV_EPS * TV_EPS).sqrt();
        }
    }
    s
}

/// `mean(residual^2) + lambda tv(gamma)` and its gradients with respect to every node
/// of `u` and `gamma` (boundary entries included; callers mask pinned nodes).
pub fn objective_and_grad(
    u: &GridField,
    gamma: &GridField,
    f: &GridField,
    lambda: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let r = fd_residual(u, gamma, f)?;
    let n = u.n;
    let m = ((n - 2) * (n - 2)) as f64;
    let h2 = u.spacing().powi(2);
    let mut gu = vec![0.0; n * n];
    let mut gg = vec![0.0; n * n];
    let mut mse = 0.0;
    let g = &gamma.values;
    let v = &u.values;
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let c = i * n + j;
            let rc = r.values[c];
            mse += rc * rc;
            let k = 2.0 * rc / m / h2;
            let (e, w, no, s) = (c + n, c - n, c + 1, c - 1);
            let (fe, fw, fn_, fs) = (
                0.5 * (g[c] + g[e]),
                0.5 * (g[c] + g[w]),
                0.5 * (g[c] + g[no]),
                0.5 * (g[c] + g[s]),
            );
            gu[c] += k * (fe + fw + fn_ + fs);
            gu[e] -= k * fe;
            gu[w] -= k * fw;
            gu[no] -= k * fn_;
            gu[s] -= k * fs;
            // Face derivatives: d r / d face = -(v_nb - v_c) / h^2, split half to each node.
            for nb in [e, w, no, s] {
                let dface = -(v[nb] - v[c]);
                gg[c] += k * 0.5 * dface;
                gg[nb] += k * 0.5 * dface;
            }
        }
    }
    let mut t = 0.0;
    if lambda != 0.0 {
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let c = i * n + j;
                let a = g[c + n] - g[c];
                let b = g[c + 1] - g[c];
                let s = (a * a + b * b + TV_EPS * TV_EPS).sqrt();
                t += s;
                gg[c + n] += lambda * a / s;
                gg[c + 1] += lambda * b / s;
                gg[c] -= lambda * (a + b) / s;
            }
        }
    }
    Ok((mse / m + lambda * t, gu, gg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdmConfig {
    pub n: usize,
    pub lambda: f64,
    pub iterations: usize,
    pub step_size: f64,
    pub backtracking: bool,
    pub seed: u64,
    /// Iterations between relative-error evaluations.
    pub eval_every: usize,
}

impl Default for FdmConfig {
    fn default() -> Self {
        Self {
            n: 31,
            lambda: 0.1,
            iterations: 20_000,
            step_size: 1e-3,
            backtracking: true,
            seed: 0,
            eval_every: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FdmResult {
    pub u: GridField,
    pub gamma: GridField,
    /// Objective value before the first and after every iteration.
    pub objective: Vec<f64>,
    /// `(iteration, relative error of gamma)`.
    pub rel_errors: Vec<(usize, f64)>,
}

impl FdmResult {
    pub fn final_rel_error(&self) -> f64 {
        self.rel_errors.last().map(|r| r.1).unwrap_or(f64::NAN)
    }

    pub fn final_objective(&self) -> f64 {
        self.objective.last().copied().unwrap_or(f64::NAN)
    }
}

/// Transfinite (Coons) interpolation of the boundary ring into the interior.
fn coons_fill(field: &mut GridField) {
    let n = field.n;
    let l = (n - 1) as f64;
    let b = field.clone();
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let s = i as f64 / l;
            let t = j as f64 / l;
            let v = (1.0 - s) * b.at(0, j) + s * b.at(n - 1, j) + (1.0 - t) * b.at(i, 0) + t * b.at(i, n - 1)
                - ((1.0 - s) * (1.0 - t) * b.at(0, 0)
                    + s * (1.0 - t) * b.at(n - 1, 0)
                    + (1.0 - s) * t * b.at(0, n - 1)
                    + s * t * b.at(n - 1, n - 1));
            field.values[i * n + j] = v;
        }
    }
}

fn grid_rel_error(gamma: &GridField, problem: &ProblemSpec, grid: &TestGrid) -> Result<f64> {
    relative_l2(|x| gamma.interpolate(x[0], x[1]), |x| problem.gamma_star(x), grid)
}

/// Gradient descent over interior nodes, boundary nodes pinned to (noisy) data.
pub fn fdm_solve(problem: &ProblemSpec, config: &FdmConfig, grid: &TestGrid) -> Result<FdmResult> {
    if problem.dim != 2 || problem.pde != PdeKind::EllipticConductivity {
        return Err(Error::UnsupportedProblem {
            id: format!("{} (grid baseline needs a 2D elliptic problem)", problem.id),
            dim: problem.dim,
        });
    }
    let (lo, hi) = (problem.domain.lower()[0], problem.domain.upper()[0]);
    if problem.domain.lower()[1] != lo || problem.domain.upper()[1] != hi {
        return Err(Error::InvalidDomain("grid baseline needs a square domain".into()));
    }
    if config.eval_every == 0 || !(config.step_size > 0.0) {
        return Err(Error::InvalidConfig("eval_every and step_size must be positive".into()));
    }
    let n = config.n;
    let f = GridField::from_fn(n, lo, hi, |x, y| problem.source(&[x, y]))?;
    let mut u = GridField::new(n, lo, hi, vec![0.0; n * n])?;
    let mut gamma = u.clone();
    let mut rng = stream_rng(config.seed, 0, 0xfd);
    let mut boundary_gamma = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if u.is_boundary(i, j) {
                let x = [u.coord(i), u.coord(j)];
                let t = problem.truth_unchecked(&x);
                let data = problem.noisy(
                    crate::problems::BoundaryData {
                        u_b: t.u,
                        gamma_b: t.gamma,
                        normal_data: 0.0,
                    },
                    &mut rng,
                );
                u.values[i * n + j] = data.u_b;
                gamma.values[i * n + j] = data.gamma_b;
                boundary_gamma.push(data.gamma_b);
            }
        }
    }
    coons_fill(&mut u);
    let mean_gamma = boundary_gamma.iter().sum::<f64>() / boundary_gamma.len() as f64;
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            gamma.values[i * n + j] = mean_gamma;
        }
    }
    let interior: Vec<usize> = (0..n * n).filter(|&k| !u.is_boundary(k / n, k % n)).collect();

    let (mut obj, mut gu, mut gg) = objective_and_grad(&u, &gamma, &f, config.lambda)?;
    let mut objective = vec![obj];
    let mut rel_errors = vec![(0, grid_rel_error(&gamma, problem, grid)?)];
    let mut tau = config.step_size;
    let mut increases = 0;
    for it in 1..=config.iterations {
        let mut trial_tau = if config.backtracking { (2.0 * tau).min(config.step_size) } else { tau };
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut u2 = u.clone();
            let mut g2 = gamma.clone();
            for &k in &interior {
                u2.values[k] -= trial_tau * gu[k];
                g2.values[k] -= trial_tau * gg[k];
            }
            let next = objective_and_grad(&u2, &g2, &f, config.lambda)?;
            if !config.backtracking || next.0 <= obj {
                accepted = Some((u2, g2, next));
                break;
            }
            trial_tau *= 0.5;
        }
        let Some((u2, g2, (o2, gu2, gg2))) = accepted else {
            // No decrease at any tried step: stationary to working precision.
            objective.push(obj);
            if it % config.eval_every == 0 || it == config.iterations {
                rel_errors.push((it, grid_rel_error(&gamma, problem, grid)?));
            }
            continue;
        };
        if !o2.is_finite() {
            return Err(Error::Divergence(format!("objective became {o2} at iteration {it}")));
        }
        increases = if o2 > obj { increases + 1 } else { 0 };
        if increases >= DIVERGENCE_RUN {
            return Err(Error::Divergence(format!(
                "objective increased for {DIVERGENCE_RUN} consecutive iterations (iteration {it})"
            )));
        }
        tau = trial_tau;
        u = u2;
        gamma = g2;
        obj = o2;
        gu = gu2;
        gg = gg2;
        objective.push(obj);
        if it % config.eval_every == 0 || it == config.iterations {
            rel_errors.push((it, grid_rel_error(&gamma, problem, grid)?));
        }
    }
    Ok(FdmResult {
        u,
        gamma,
        objective,
        rel_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_problem, ProblemId};

    #[test]
    fn affine_u_constant_gamma_has_zero_residual() {
        let u = GridField::from_fn(9, -1.0, 1.0, |x, y| 2.0 * x - y + 0.5).unwrap();
        let g = GridField::from_fn(9, -1.0, 1.0, |_, _| 1.7).unwrap();
        let f = GridField::from_fn(9, -1.0, 1.0, |_, _| 0.0).unwrap();
        let r = fd_residual(&u, &g, &f).unwrap();
        assert!(r.values.iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn quadratic_is_exact() {
        let u = GridField::from_fn(31, -1.0, 1.0, |x, y| x * x + y * y).unwrap();
        let g = GridField::from_fn(31, -1.0, 1.0, |_, _| 1.0).unwrap();
        let f = GridField::from_fn(31, -1.0, 1.0, |_, _| -4.0).unwrap();
        let r = fd_residual(&u, &g, &f).unwrap();
        assert!(r.values.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn tv_cases() {
        let c = GridField::from_fn(5, 0.0, 1.0, |_, _| 3.0).unwrap();
        assert!((tv(&c) - 9.0 * TV_EPS).abs() < 1e-20);
        // Unit step between columns i = 2 and i = 3: only the three interior nodes
        // with i = 2 see a jump, each contributing sqrt(1 + eps^2).
        let step = GridField::from_fn(5, 0.0, 1.0, |x, _| if x > 0.6 { 1.0 } else { 0.0 }).unwrap();
        assert!((tv(&step) - (3.0 * (1.0 + TV_EPS * TV_EPS).sqrt() + 6.0 * TV_EPS)).abs() < 1e-12);
        let shifted = GridField::new(5, 0.0, 1.0, step.values.iter().map(|v| v + 4.0).collect()).unwrap();
        assert!((tv(&shifted) - tv(&step)).abs() < 1e-12);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let n = 7;
        let u = GridField::from_fn(n, -1.0, 1.0, |x, y| (x * 1.3).sin() + y * y * x).unwrap();
        let g = GridField::from_fn(n, -1.0, 1.0, |x, y| 1.0 + 0.3 * (x + 2.0 * y).cos()).unwrap();
        let f = GridField::from_fn(n, -1.0, 1.0, |x, y| x - y).unwrap();
        let lambda = 0.3;
        let (_, gu, gg) = objective_and_grad(&u, &g, &f, lambda).unwrap();
        let h = 1e-6;
        for k in 0..n * n {
            for (which, an) in [(0, gu[k]), (1, gg[k])] {
                let mut up = (u.clone(), g.clone());
                let mut dn = (u.clone(), g.clone());
                if which == 0 {
                    up.0.values[k] += h;
                    dn.0.values[k] -= h;
                } else {
                    up.1.values[k] += h;
                    dn.1.values[k] -= h;
                }
                let fp = objective_and_grad(&up.0, &up.1, &f, lambda).unwrap().0;
                let fm = objective_and_grad(&dn.0, &dn.1, &f, lambda).unwrap().0;
                let fd = (fp - fm) / (2.0 * h);
                let scale = fd.abs().max(an.abs()).max(1e-3);
                assert!((fd - an).abs() / scale < 1e-6, "node {k} field {which}: fd {fd} an {an}");
            }
        }
    }

    #[test]
    fn smooth_truth_converges_at_second_order() {
        let p = make_problem(ProblemId::Test1, 2, 0.0).unwrap();
        let mut errs = Vec::new();
        for n in [31, 61, 121] {
            let u = GridField::from_fn(n, -1.0, 1.0, |x, y| p.truth_unchecked(&[x, y]).u).unwrap();
            let g = GridField::from_fn(n, -1.0, 1.0, |x, y| p.gamma_star(&[x, y])).unwrap();
            let f = GridField::from_fn(n, -1.0, 1.0, |x, y| p.source(&[x, y])).unwrap();
            let r = fd_residual(&u, &g, &f).unwrap();
            errs.push(r.values.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..4.6).contains(&ratio), "ratio {ratio} from {errs:?}");
        }
    }

    #[test]
    fn sharp_interface_reaches_second_order_once_resolved() {
        let p = make_problem(ProblemId::Test2, 2, 0.0).unwrap();
        let mut errs = Vec::new();
        for n in [121, 241, 481] {
            let u = GridField::from_fn(n, -1.0, 1.0, |x, y| p.truth_unchecked(&[x, y]).u).unwrap();
            let g = GridField::from_fn(n, -1.0, 1.0, |x, y| p.gamma_star(&[x, y])).unwrap();
            let f = GridField::from_fn(n, -1.0, 1.0, |x, y| p.source(&[x, y])).unwrap();
            let r = fd_residual(&u, &g, &f).unwrap();
            errs.push(r.values.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
        }
        assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
        assert!((3.5..4.6).contains(&(errs[1] / errs[2])), "{errs:?}");
    }

    #[test]
    fn smooth_truth_is_nearly_stationary_without_regularization() {
        let p = make_problem(ProblemId::Test1, 2, 0.0).unwrap();
        let n = 31;
        let u = GridField::from_fn(n, -1.0, 1.0, |x, y| p.truth_unchecked(&[x, y]).u).unwrap();
        let g = GridField::from_fn(n, -1.0, 1.0, |x, y| p.gamma_star(&[x, y])).unwrap();
        let f = GridField::from_fn(n, -1.0, 1.0, |x, y| p.source(&[x, y])).unwrap();
        let (obj, _, _) = objective_and_grad(&u, &g, &f, 0.0).unwrap();
        let scale = f.values.iter().map(|v| v * v).sum::<f64>() / (n * n) as f64;
        assert!(obj < 1e-3 * scale, "objective {obj} vs source scale {scale}");
    }

    #[test]
    fn backtracking_trace_is_non_increasing() {
        let p = make_problem(ProblemId::Test2, 2, 0.0).unwrap();
        let grid = TestGrid::new(&p, 0);
        let cfg = FdmConfig {
            n: 15,
            iterations: 200,
            step_size: 1.0,
            eval_every: 50,
            ..FdmConfig::default()
        };
        let res = fdm_solve(&p, &cfg, &grid).unwrap();
        assert_eq!(res.objective.len(), 201);
        assert!(res.objective.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.final_objective() < res.objective[0]);
    }

    #[test]
    fn rejects_non_planar_problems() {
        let p = make_problem(ProblemId::Test2, 5, 0.0).unwrap();
        assert!(fdm_solve(&p, &FdmConfig::default(), &TestGrid::new(&p, 0)).is_err());
    }
}
