//! Weak-form interior loss, boundary loss, and their exact parameter gradients.

use rand::Rng;

use crate::error::{Error, Result};
use crate::net::{Mlp, MlpSpec, ParamVector, Tape};
use crate::problems::{BoundaryData, BoundaryKind, ProblemSpec};
use crate::sampling::{
    sample_boundary, sample_interior, sample_lateral_boundary, sample_slab, stream_rng, BoxDomain, Density,
    Region, SampleBatch,
};

/// Below this `||phi||^2` the test function is treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    U,
    Gamma,
    Phi,
    PhiBar,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::U, Role::Gamma, Role::Phi, Role::PhiBar];

    fn index(self) -> usize {
        match self {
            Role::U => 0,
            Role::Gamma => 1,
            Role::Phi => 2,
            Role::PhiBar => 3,
        }
    }

    /// Which test function (0 = phi, 1 = phibar) this role is paired with.
    pub fn test_slot(self) -> usize {
        match self {
            Role::U | Role::Phi => 0,
            Role::Gamma | Role::PhiBar => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::U => "u",
            Role::Gamma => "gamma",
            Role::Phi => "phi",
            Role::PhiBar => "phibar",
        }
    }
}

/// The four networks `u`, `gamma`, `phi`, `phibar` and their parameters.
#[derive(Debug, Clone)]
pub struct NetworkQuad {
    nets: [Mlp; 4],
    params: [ParamVector; 4],
}

impl NetworkQuad {
    pub fn new(u: MlpSpec, gamma: MlpSpec, phi: MlpSpec, phibar: MlpSpec) -> Result<Self> {
        let d = u.input_dim;
        for (what, s) in [("gamma input", &gamma), ("phi input", &phi), ("phibar input", &phibar)] {
            if s.input_dim != d {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: d,
                    found: s.input_dim,
                });
            }
        }
        let nets = [Mlp::new(u)?, Mlp::new(gamma)?, Mlp::new(phi)?, Mlp::new(phibar)?];
        let params = [0, 1, 2, 3].map(|i| ParamVector::zeros(nets[i].param_count()));
        Ok(Self { nets, params })
    }

    /// Glorot initialization, one RNG stream per role.
    pub fn init(&mut self, seed: u64) {
        for r in Role::ALL {
            let mut rng = stream_rng(seed, 0, 0xf0 + r.index() as u64);
            self.params[r.index()] = self.nets[r.index()].init(&mut rng);
        }
    }

    pub fn input_dim(&self) -> usize {
        self.nets[0].input_dim()
    }

    pub fn mlp(&self, role: Role) -> &Mlp {
        &self.nets[role.index()]
    }

    pub fn params(&self, role: Role) -> &ParamVector {
        &self.params[role.index()]
    }

    pub fn set_params(&mut self, role: Role, params: ParamVector) -> Result<()> {
        let n = self.nets[role.index()].param_count();
        if params.len() != n {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: n,
                found: params.len(),
            });
        }
        self.params[role.index()] = params;
        Ok(())
    }
}

/// Cutoff `phi0 = prod_i (x_i - l_i)(u_i - x_i) / prod_i ((u_i - l_i)/2)^2` over the
/// spatial coordinates of `domain`. Extra trailing coordinates (time) get zero gradient.
pub fn cutoff_phi0(domain: &BoxDomain, x: &[f64]) -> (f64, Vec<f64>) {
    let d = domain.dim();
    let mut factors = Vec::with_capacity(d);
    let mut dfactors = Vec::with_capacity(d);
    for i in 0..d {
        let (lo, hi) = (domain.lower()[i], domain.upper()[i]);
        let half = (hi - lo) / 2.0;
        let s = 1.0 / (half * half);
        factors.push((x[i] - lo) * (hi - x[i]) * s);
        dfactors.push((hi + lo - 2.0 * x[i]) * s);
    }
    let value: f64 = factors.iter().product();
    let mut grad = vec![0.0; x.len()];
    for i in 0..d {
        let others: f64 = (0..d).filter(|&j| j != i).map(|j| factors[j]).product();
        grad[i] = dfactors[i] * others;
    }
    (value, grad)
}

/// Pointwise weak-form integrand `d_t u phi + gamma grad_x u . grad_x phi - f phi`.
///
/// `grad_u` and `grad_phi` hold the spatial gradients; `du_dt` is zero for steady problems.
pub fn weak_integrand(gamma: f64, grad_u: &[f64], du_dt: f64, phi: f64, grad_phi: &[f64], f: f64) -> f64 {
    let dot: f64 = grad_u.iter().zip(grad_phi).map(|(a, b)| a * b).sum();
    gamma * dot - f * phi + du_dt * phi
}

/// Freshly sampled collocation points plus everything about them that does not
/// depend on the networks.
#[derive(Debug, Clone)]
pub struct Batches {
    pub interior: SampleBatch,
    pub source: Vec<f64>,
    pub cutoff: Vec<f64>,
    /// Flat `n x input_dim` cutoff gradients.
    pub cutoff_grad: Vec<f64>,
    pub boundary: SampleBatch,
    pub boundary_data: Vec<BoundaryData>,
    /// Initial slab `Omega x {0}` and its `u_i` values (time-dependent problems).
    pub initial: Option<(SampleBatch, Vec<f64>)>,
}

impl Batches {
    /// Attach source values, cutoffs and (noisy) boundary data to sampled points.
    pub fn prepare<R: Rng + ?Sized>(
        problem: &ProblemSpec,
        interior: SampleBatch,
        boundary: SampleBatch,
        initial: Option<SampleBatch>,
        noise_rng: &mut R,
    ) -> Result<Self> {
        let din = problem.input_dim();
        for (what, b) in [("interior batch", &interior), ("boundary batch", &boundary)] {
            if b.dim != din {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: din,
                    found: b.dim,
                });
            }
        }
        if interior.region != Region::Interior || boundary.region != Region::Boundary {
            return Err(Error::InvalidConfig("batches passed in the wrong region".into()));
        }
        let n = interior.len();
        let mut source = Vec::with_capacity(n);
        let mut cutoff = Vec::with_capacity(n);
        let mut cutoff_grad = Vec::with_capacity(n * din);
        for i in 0..n {
            let x = interior.point(i);
            source.push(problem.source(x));
            let (v, g) = cutoff_phi0(&problem.domain, x);
            cutoff.push(v);
            cutoff_grad.extend_from_slice(&g);
        }
        let ds = problem.dim;
        let boundary_data = (0..boundary.len())
            .map(|i| {
                let clean = problem.boundary_truth(boundary.point(i), &boundary.normal(i)[..ds]);
                problem.noisy(clean, noise_rng)
            })
            .collect();
        let initial = initial.map(|b| {
            let vals = (0..b.len()).map(|i| problem.initial_value(b.point(i))).collect();
            (b, vals)
        });
        Ok(Self {
            interior,
            source,
            cutoff,
            cutoff_grad,
            boundary,
            boundary_data,
            initial,
        })
    }

    /// Sample one iteration's batches from the seeded streams of `iteration`.
    pub fn sample(
        problem: &ProblemSpec,
        n_interior: usize,
        n_boundary: usize,
        density: &Density,
        seed: u64,
        iteration: u64,
    ) -> Result<Self> {
        let dom = problem.sampling_domain();
        let interior = sample_interior(&dom, n_interior, density, &mut stream_rng(seed, iteration, 0))?;
        let mut brng = stream_rng(seed, iteration, 1);
        let (boundary, initial) = match problem.horizon {
            None => (sample_boundary(&problem.domain, n_boundary, &mut brng), None),
            Some(t) => (
                sample_lateral_boundary(&problem.domain, n_boundary, t, &mut brng),
                Some(sample_slab(&problem.domain, n_boundary, 0.0, &mut stream_rng(seed, iteration, 2))),
            ),
        };
        Self::prepare(problem, interior, boundary, initial, &mut stream_rng(seed, iteration, 3))
    }
}

/// Network outputs on a batch, kept in sync with the parameters by the caller.
#[derive(Debug, Clone)]
pub struct FieldCache {
    din: usize,
    int_u: Vec<f64>,
    int_u_grad: Vec<f64>,
    int_gamma: Vec<f64>,
    int_phi: [Vec<f64>; 2],
    int_phi_grad: [Vec<f64>; 2],
    bd_u: Vec<f64>,
    bd_u_grad: Vec<f64>,
    bd_gamma: Vec<f64>,
    init_u: Vec<f64>,
}

fn eval_batch(
    net: &Mlp,
    params: &[f64],
    batch: &SampleBatch,
    tangents: bool,
    tape: &mut Tape,
    values: &mut Vec<f64>,
    grads: &mut Vec<f64>,
) {
    values.clear();
    grads.clear();
    for i in 0..batch.len() {
        let v = net.forward_into(params, batch.point(i), tangents, tape, grads);
        values.push(v);
    }
}

impl FieldCache {
    pub fn build(nets: &NetworkQuad, batches: &Batches) -> Self {
        let mut c = FieldCache {
            din: nets.input_dim(),
            int_u: Vec::new(),
            int_u_grad: Vec::new(),
            int_gamma: Vec::new(),
            int_phi: [Vec::new(), Vec::new()],
            int_phi_grad: [Vec::new(), Vec::new()],
            bd_u: Vec::new(),
            bd_u_grad: Vec::new(),
            bd_gamma: Vec::new(),
            init_u: Vec::new(),
        };
        for r in Role::ALL {
            c.refresh(nets, batches, r);
        }
        c
    }

    /// Re-evaluate one network after its parameters changed.
    pub fn refresh(&mut self, nets: &NetworkQuad, batches: &Batches, role: Role) {
        let mut tape = Tape::default();
        let net = nets.mlp(role);
        let p = nets.params(role).as_slice();
        let mut scratch = Vec::new();
        match role {
            Role::U => {
                eval_batch(net, p, &batches.interior, true, &mut tape, &mut self.int_u, &mut self.int_u_grad);
                eval_batch(net, p, &batches.boundary, true, &mut tape, &mut self.bd_u, &mut self.bd_u_grad);
                self.init_u.clear();
                if let Some((b, _)) = &batches.initial {
                    eval_batch(net, p, b, false, &mut tape, &mut self.init_u, &mut scratch);
                }
            }
            Role::Gamma => {
                eval_batch(net, p, &batches.interior, false, &mut tape, &mut self.int_gamma, &mut scratch);
                eval_batch(net, p, &batches.boundary, false, &mut tape, &mut self.bd_gamma, &mut scratch);
            }
            Role::Phi | Role::PhiBar => {
                let s = role.test_slot();
                eval_batch(
                    net,
                    p,
                    &batches.interior,
                    true,
                    &mut tape,
                    &mut self.int_phi[s],
                    &mut self.int_phi_grad[s],
                );
            }
        }
    }
}

/// Normalized weak residual `I^2 / ||phi||^2` and its ingredients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakResidual {
    /// Monte-Carlo estimate `I` of `<A[u, gamma], phi>`.
    pub integral: f64,
    /// Monte-Carlo estimate of `||phi||^2`.
    pub phi_norm_sq: f64,
    /// `I^2 / ||phi||^2`, or 0 when degenerate.
    pub value: f64,
    pub degenerate: bool,
}

/// Everything a single role update needs.
#[derive(Debug, Clone)]
pub struct LossBundle {
    /// `I^2`, the unnormalized squared weak residual.
    pub e_value: f64,
    /// `I^2 / ||phi||^2`.
    pub l_int: f64,
    pub l_bdry: f64,
    /// `beta' l_int + beta l_bdry`.
    pub total: f64,
    pub degenerate: bool,
    pub role: Role,
    /// Descent direction for `role`: gradient of `total` for `u`/`gamma`, of `-l_int` for test networks.
    pub grad: ParamVector,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Assembled `phi = phi0 phi'` at interior point `i`; its spatial gradient goes to `grad_phi`.
fn assembled_phi(cache: &FieldCache, batches: &Batches, slot: usize, i: usize, grad_phi: &mut [f64]) -> f64 {
    let din = cache.din;
    let p = cache.int_phi[slot][i];
    let gp = &cache.int_phi_grad[slot][i * din..(i + 1) * din];
    let c = batches.cutoff[i];
    let gc = &batches.cutoff_grad[i * din..(i + 1) * din];
    for (k, g) in grad_phi.iter_mut().enumerate() {
        *g = c * gp[k] + p * gc[k];
    }
    c * p
}

/// Weak residual of the cached fields against test function `slot`.
pub fn weak_residual_cached(problem: &ProblemSpec, batches: &Batches, cache: &FieldCache, slot: usize) -> WeakResidual {
    let ds = problem.dim;
    let din = cache.din;
    let parabolic = problem.horizon.is_some();
    let n = batches.interior.len().max(1) as f64;
    let mut integral = 0.0;
    let mut norm = 0.0;
    let mut grad_phi = vec![0.0; ds];
    for i in 0..batches.interior.len() {
        let w = batches.interior.weights[i];
        let phi = assembled_phi(cache, batches, slot, i, &mut grad_phi);
        let gu = &cache.int_u_grad[i * din..(i + 1) * din];
        let du_dt = if parabolic { gu[ds] } else { 0.0 };
        integral += w * weak_integrand(cache.int_gamma[i], &gu[..ds], du_dt, phi, &grad_phi, batches.source[i]);
        norm += w * phi * phi;
    }
    integral /= n;
    norm /= n;
    let degenerate = !(norm >= DEGENERATE_NORM);
    WeakResidual {
        integral,
        phi_norm_sq: norm,
        value: if degenerate { 0.0 } else { integral * integral / norm },
        degenerate,
    }
}

/// Weak residual of the current networks against `phi` (`slot` 0) or `phibar` (`slot` 1).
pub fn weak_residual(nets: &NetworkQuad, batches: &Batches, problem: &ProblemSpec, slot: usize) -> WeakResidual {
    weak_residual_cached(problem, batches, &FieldCache::build(nets, batches), slot)
}

/// Boundary loss of the cached fields.
pub fn boundary_loss_cached(problem: &ProblemSpec, batches: &Batches, cache: &FieldCache) -> f64 {
    let din = cache.din;
    let b = &batches.boundary;
    let mut s = 0.0;
    for i in 0..b.len() {
        let w = b.weights[i];
        let data = &batches.boundary_data[i];
        let dn = dot(&cache.bd_u_grad[i * din..(i + 1) * din], b.normal(i));
        s += w * match problem.boundary_kind {
            BoundaryKind::NeumannFlux => (cache.bd_gamma[i] * dn - data.normal_data).powi(2),
            _ => {
                (cache.bd_u[i] - data.u_b).powi(2)
                    + (cache.bd_gamma[i] - data.gamma_b).powi(2)
                    + (dn - data.normal_data).powi(2)
            }
        };
    }
    if let Some((ib, vals)) = &batches.initial {
        for i in 0..ib.len() {
            s += ib.weights[i] * (cache.init_u[i] - vals[i]).powi(2);
        }
    }
    s
}

pub fn boundary_loss(nets: &NetworkQuad, batches: &Batches, problem: &ProblemSpec) -> f64 {
    boundary_loss_cached(problem, batches, &FieldCache::build(nets, batches))
}

/// Loss values and the descent gradient for `role`, using cached network outputs.
pub fn evaluate_role(
    nets: &NetworkQuad,
    role: Role,
    batches: &Batches,
    cache: &FieldCache,
    problem: &ProblemSpec,
    beta: f64,
    beta_prime: f64,
) -> LossBundle {
    let ds = problem.dim;
    let din = cache.din;
    let parabolic = problem.horizon.is_some();
    let slot = role.test_slot();
    let wr = weak_residual_cached(problem, batches, cache, slot);
    let l_bdry = boundary_loss_cached(problem, batches, cache);
    let net = nets.mlp(role);
    let p = nets.params(role).as_slice();
    let mut grad = vec![0.0; net.param_count()];
    let mut tape = Tape::default();
    let mut seed = vec![0.0; din];
    let mut scratch = Vec::with_capacity(din);
    let n = batches.interior.len().max(1) as f64;

    let interior_active = !wr.degenerate;
    match role {
        Role::U | Role::Gamma => {
            if interior_active {
                let c = beta_prime * 2.0 * wr.integral / wr.phi_norm_sq;
                let mut grad_phi = vec![0.0; ds];
                for i in 0..batches.interior.len() {
                    let s = c * batches.interior.weights[i] / n;
                    let phi = assembled_phi(cache, batches, slot, i, &mut grad_phi);
                    let x = batches.interior.point(i);
                    net.forward_into(p, x, role == Role::U, &mut tape, &mut scratch);
                    scratch.clear();
                    if role == Role::U {
                        let g = cache.int_gamma[i];
                        for k in 0..ds {
                            seed[k] = s * g * grad_phi[k];
                        }
                        if parabolic {
                            seed[ds] = s * phi;
                        }
                        net.backward(p, &mut tape, 0.0, &seed, &mut grad);
                    } else {
                        let gu = &cache.int_u_grad[i * din..(i + 1) * din];
                        let sv = s * dot(&gu[..ds], &grad_phi);
                        net.backward(p, &mut tape, sv, &[], &mut grad);
                    }
                }
            }
            let b = &batches.boundary;
            for i in 0..b.len() {
                let w2 = 2.0 * beta * b.weights[i];
                let data = &batches.boundary_data[i];
                let nrm = b.normal(i);
                let gu = &cache.bd_u_grad[i * din..(i + 1) * din];
                let dn = dot(gu, nrm);
                let x = b.point(i);
                let flux = problem.boundary_kind == BoundaryKind::NeumannFlux;
                if role == Role::U {
                    net.forward_into(p, x, true, &mut tape, &mut scratch);
                    scratch.clear();
                    let (sv, sg) = if flux {
                        let r = cache.bd_gamma[i] * dn - data.normal_data;
                        (0.0, w2 * r * cache.bd_gamma[i])
                    } else {
                        (w2 * (cache.bd_u[i] - data.u_b), w2 * (dn - data.normal_data))
                    };
                    for k in 0..din {
                        seed[k] = sg * nrm[k];
                    }
                    net.backward(p, &mut tape, sv, &seed, &mut grad);
                } else {
                    net.forward_into(p, x, false, &mut tape, &mut scratch);
                    let sv = if flux {
                        w2 * (cache.bd_gamma[i] * dn - data.normal_data) * dn
                    } else {
                        w2 * (cache.bd_gamma[i] - data.gamma_b)
                    };
                    net.backward(p, &mut tape, sv, &[], &mut grad);
                }
            }
            if role == Role::U {
                if let Some((ib, vals)) = &batches.initial {
                    for i in 0..ib.len() {
                        let sv = 2.0 * beta * ib.weights[i] * (cache.init_u[i] - vals[i]);
                        net.forward_into(p, ib.point(i), false, &mut tape, &mut scratch);
                        net.backward(p, &mut tape, sv, &[], &mut grad);
                    }
                }
            }
        }
        Role::Phi | Role::PhiBar => {
            if interior_active {
                let a = 2.0 * wr.integral / wr.phi_norm_sq;
                let bq = wr.integral * wr.integral / (wr.phi_norm_sq * wr.phi_norm_sq);
                for i in 0..batches.interior.len() {
                    let w = batches.interior.weights[i] / n;
                    let x = batches.interior.point(i);
                    let c = batches.cutoff[i];
                    let gc = &batches.cutoff_grad[i * din..(i + 1) * din];
                    let gu = &cache.int_u_grad[i * din..(i + 1) * din];
                    let g = cache.int_gamma[i];
                    let du_dt = if parabolic { gu[ds] } else { 0.0 };
                    let phi = c * cache.int_phi[slot][i];
                    let di_dval = g * dot(&gu[..ds], &gc[..ds]) - batches.source[i] * c + du_dt * c;
                    let sv = -w * (a * di_dval - bq * 2.0 * c * phi);
                    for k in 0..din {
                        seed[k] = if k < ds { -w * a * g * c * gu[k] } else { 0.0 };
                    }
                    net.forward_into(p, x, true, &mut tape, &mut scratch);
                    scratch.clear();
                    net.backward(p, &mut tape, sv, &seed, &mut grad);
                }
            }
        }
    }

    LossBundle {
        e_value: wr.integral * wr.integral,
        l_int: wr.value,
        l_bdry,
        total: beta_prime * wr.value + beta * l_bdry,
        degenerate: wr.degenerate,
        role,
        grad: ParamVector::from_vec(grad),
    }
}

/// Loss values and descent gradient for `role` at the current networks.
pub fn loss_and_grads(
    nets: &NetworkQuad,
    role: Role,
    batches: &Batches,
    problem: &ProblemSpec,
    beta: f64,
    beta_prime: f64,
) -> LossBundle {
    let cache = FieldCache::build(nets, batches);
    evaluate_role(nets, role, batches, &cache, problem, beta, beta_prime)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;
    use crate::problems::{make_problem, ProblemId};

    fn small_quad(din: usize, seed: u64) -> NetworkQuad {
        let spec = |out| MlpSpec::new(din, vec![6, 5], vec![Activation::Tanh, Activation::Sinc], out).unwrap();
        let mut q = NetworkQuad::new(
            spec(Activation::Identity),
            spec(Activation::Elu),
            spec(Activation::Identity),
            spec(Activation::Identity),
        )
        .unwrap();
        q.init(seed);
        q
    }

    fn objective(nets: &NetworkQuad, role: Role, b: &Batches, p: &ProblemSpec, beta: f64, bp: f64) -> f64 {
        let bundle = loss_and_grads(nets, role, b, p, beta, bp);
        match role {
            Role::U | Role::Gamma => bundle.total,
            _ => -bundle.l_int,
        }
    }

    fn check_fd(problem: &ProblemSpec, seed: u64) {
        let nets = small_quad(problem.input_dim(), seed);
        let b = Batches::sample(problem, 40, 24, &Density::Uniform, seed, 1).unwrap();
        let (beta, bp) = (3.0, 2.0);
        for role in Role::ALL {
            let g = loss_and_grads(&nets, role, &b, problem, beta, bp).grad;
            let n = g.len();
            for k in (0..n).step_by((n / 12).max(1)) {
                let h = 1e-5;
                let mut plus = nets.clone();
                let mut v = nets.params(role).clone().into_inner();
                v[k] += h;
                plus.set_params(role, ParamVector::from_vec(v.clone())).unwrap();
                let mut minus = nets.clone();
                v[k] -= 2.0 * h;
                minus.set_params(role, ParamVector::from_vec(v)).unwrap();
                let fd = (objective(&plus, role, &b, problem, beta, bp) - objective(&minus, role, &b, problem, beta, bp))
                    / (2.0 * h);
                let an = g.as_slice()[k];
                let scale = fd.abs().max(an.abs()).max(1e-6);
                assert!(
                    (fd - an).abs() / scale < 1e-4,
                    "{} {:?} coord {k}: fd {fd} analytic {an}",
                    problem.id,
                    role
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_elliptic() {
        check_fd(&make_problem(ProblemId::Test1, 2, 0.0).unwrap(), 11);
    }

    #[test]
    fn gradients_match_finite_differences_flux() {
        check_fd(&make_problem(ProblemId::Test5, 5, 0.0).unwrap(), 12);
    }

    #[test]
    fn gradients_match_finite_differences_parabolic() {
        check_fd(&make_problem(ProblemId::Test6, 5, 0.0).unwrap(), 13);
    }

    #[test]
    fn cutoff_values_and_gradient() {
        let dom = BoxDomain::cube(3, -1.0, 1.0).unwrap();
        assert_eq!(cutoff_phi0(&dom, &[0.0, 0.0, 0.0]).0, 1.0);
        assert_eq!(cutoff_phi0(&dom, &[1.0, 0.3, 0.2]).0, 0.0);
        let mut rng = stream_rng(4, 0, 0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g) = cutoff_phi0(&dom, &x);
            for i in 0..3 {
                let h = 1e-6;
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = (cutoff_phi0(&dom, &xp).0 - cutoff_phi0(&dom, &xm).0) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-8 * (1.0 + g[i].abs()));
            }
        }
    }

    #[test]
    fn time_coordinate_is_outside_the_cutoff() {
        let dom = BoxDomain::cube(2, 0.0, 1.0).unwrap();
        let (v, g) = cutoff_phi0(&dom, &[0.5, 0.5, 0.0]);
        assert_eq!(v, 1.0);
        assert_eq!(g.len(), 3);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn zero_test_network_is_degenerate() {
        let p = make_problem(ProblemId::Test2, 2, 0.0).unwrap();
        let mut nets = small_quad(2, 1);
        nets.set_params(Role::Phi, ParamVector::zeros(nets.mlp(Role::Phi).param_count())).unwrap();
        let b = Batches::sample(&p, 30, 16, &Density::Uniform, 1, 0).unwrap();
        let wr = weak_residual(&nets, &b, &p, 0);
        assert!(wr.degenerate);
        assert_eq!(wr.value, 0.0);
        let bundle = loss_and_grads(&nets, Role::Phi, &b, &p, 1.0, 1.0);
        assert!(bundle.grad.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn boundary_loss_is_zero_for_exact_data() {
        let p = make_problem(ProblemId::Analytic1d, 1, 0.0).unwrap();
        let nets = small_quad(1, 2);
        let b = Batches::sample(&p, 10, 2, &Density::Uniform, 1, 0).unwrap();
        let mut cache = FieldCache::build(&nets, &b);
        for i in 0..2 {
            let x = b.boundary.point(i)[0];
            cache.bd_u[i] = x * x;
            cache.bd_gamma[i] = 1.0;
            cache.bd_u_grad[i] = 2.0 * x;
        }
        assert!(boundary_loss_cached(&p, &b, &cache).abs() < 1e-30);
        for i in 0..2 {
            cache.bd_u[i] += 0.1;
        }
        let expected = p.domain.boundary_area() * 0.01;
        assert!((boundary_loss_cached(&p, &b, &cache) - expected).abs() < 1e-14);
    }
}
