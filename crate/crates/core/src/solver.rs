//! The adversarial outer loop: fresh batches each iteration, then one descent step
//! for `u`, ascent steps for `phi`, one descent step for `gamma`, ascent steps for `phibar`.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{relative_l2, TestGrid};
use crate::loss::{
    boundary_loss_cached, evaluate_role, weak_residual_cached, Batches, FieldCache, NetworkQuad, Role,
};
use crate::net::{Activation, MlpSpec, ParamVector, Tape};
use crate::optim::{g_norm_from_traces, gradient_mapping, OptimizerKind, OptimizerState};
use crate::problems::ProblemSpec;
use crate::sampling::Density;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    /// `u`, `phi`, `gamma`, `phibar`.
    Interleaved,
    /// Both test networks first, then `u` and `gamma`.
    AscentFirst,
}

/// Hidden widths, per-layer activations and output activation of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetArch {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub output: Activation,
}

impl NetArch {
    /// Default activation schedule for `role` with `depth` hidden layers of `width`.
    pub fn default_for(role: Role, depth: usize, width: usize) -> Self {
        let activations = (1..=depth)
            .map(|k| match role {
                Role::U => match k {
                    1 | 2 => Activation::Tanh,
                    k if k % 2 == 1 => Activation::Sinc,
                    _ => Activation::Softplus,
                },
                Role::Gamma => match k {
                    1 | 2 => Activation::Tanh,
                    3..=6 if k % 2 == 1 => Activation::Elu,
                    3..=6 => Activation::Tanh,
                    _ => Activation::Sigmoid,
                },
                Role::Phi | Role::PhiBar => match k {
                    1 | 2 => Activation::Tanh,
                    _ => Activation::Sinc,
                },
            })
            .collect();
        let output = if role == Role::Gamma { Activation::Elu } else { Activation::Identity };
        Self {
            widths: vec![width; depth],
            activations,
            output,
        }
    }

    pub fn to_spec(&self, input_dim: usize) -> Result<MlpSpec> {
        MlpSpec::new(input_dim, self.widths.clone(), self.activations.clone(), self.output)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub iterations: usize,
    pub inner_steps: usize,
    pub tau_theta: f64,
    pub tau_eta: f64,
    pub beta: f64,
    pub beta_prime: f64,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub optimizer_theta: OptimizerKind,
    pub optimizer_eta: OptimizerKind,
    /// `f64::INFINITY` disables the parameter-ball projection.
    pub ball_bound: f64,
    pub penalty_theta: f64,
    pub penalty_eta: f64,
    pub seed: u64,
    /// Seed of the evaluation grid, shared by every run of an experiment.
    pub grid_seed: u64,
    pub eval_every: usize,
    pub update_order: UpdateOrder,
    pub density: Density,
    pub u_net: NetArch,
    pub gamma_net: NetArch,
    pub phi_net: NetArch,
}

impl SolveConfig {
    /// Defaults for a problem of spatial dimension `dim`.
    pub fn defaults(dim: usize) -> Self {
        Self {
            iterations: 20_000,
            inner_steps: 2,
            tau_theta: 0.01,
            tau_eta: 0.008,
            beta: 10_000.0,
            beta_prime: 10.0,
            n_interior: 100_000,
            n_boundary: 100 * dim,
            optimizer_theta: OptimizerKind::Adagrad,
            optimizer_eta: OptimizerKind::Adagrad,
            ball_bound: f64::INFINITY,
            penalty_theta: 0.0,
            penalty_eta: 0.0,
            seed: 0,
            grid_seed: 0,
            eval_every: 50,
            update_order: UpdateOrder::Interleaved,
            density: Density::Uniform,
            u_net: NetArch::default_for(Role::U, 8, 20),
            gamma_net: NetArch::default_for(Role::Gamma, 8, 20),
            phi_net: NetArch::default_for(Role::Phi, 8, 20),
        }
    }

    pub fn validate(&self, problem: &ProblemSpec) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.inner_steps == 0 {
            return bad("inner_steps must be at least 1".into());
        }
        if self.n_interior == 0 {
            return bad("n_interior must be at least 1".into());
        }
        if self.n_boundary < 2 * problem.dim {
            return bad(format!("n_boundary must be at least {} (two per face)", 2 * problem.dim));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        for (k, v) in [("tau_theta", self.tau_theta), ("tau_eta", self.tau_eta)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{k} must be positive and finite"));
            }
        }
        for (k, v) in [
            ("beta", self.beta),
            ("beta_prime", self.beta_prime),
            ("penalty_theta", self.penalty_theta),
            ("penalty_eta", self.penalty_eta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{k} must be nonnegative and finite"));
            }
        }
        if !(self.ball_bound > 0.0) {
            return bad("ball_bound must be positive (use inf to disable)".into());
        }
        self.density.validate(&problem.sampling_domain())?;
        for arch in [&self.u_net, &self.gamma_net, &self.phi_net] {
            arch.to_spec(problem.input_dim())?.validate()?;
        }
        Ok(())
    }
}

/// One recorded iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub e_value: f64,
    pub l_int: f64,
    pub l_bdry: f64,
    pub total: f64,
    pub rel_error: f64,
    /// `sqrt(|G_u|^2 + |G_gamma|^2)`; zero for the initial record.
    pub grad_mapping: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveHistory {
    pub rows: Vec<HistoryRow>,
    /// Wall-clock seconds since the start of the run, one per row.
    pub elapsed: Vec<f64>,
    /// `|G_u|^2 + |G_gamma|^2` at every iteration `1..=J`.
    pub grad_mapping_sq: Vec<f64>,
}

pub const HISTORY_HEADER: &str = "iteration,e_value,l_int,l_bdry,total,rel_error,grad_mapping";
pub const TIMING_HEADER: &str = "iteration,elapsed_seconds";

impl SolveHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.iteration, r.e_value, r.l_int, r.l_bdry, r.total, r.rel_error, r.grad_mapping
            );
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from(TIMING_HEADER);
        s.push('\n');
        for (r, t) in self.rows.iter().zip(&self.elapsed) {
            let _ = writeln!(s, "{},{t:.3}", r.iteration);
        }
        s
    }

    pub fn final_rel_error(&self) -> Option<f64> {
        self.rows.last().map(|r| r.rel_error)
    }

    pub fn rel_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.rel_error).collect()
    }
}

const MAGIC: &[u8; 8] = b"IWANCKPT";
const FORMAT_VERSION: u32 = 1;

/// A resumable solve.
#[derive(Debug, Clone)]
pub struct Solver {
    problem: ProblemSpec,
    config: SolveConfig,
    nets: NetworkQuad,
    opts: [OptimizerState; 4],
    iteration: usize,
    grid: TestGrid,
    history: SolveHistory,
    started: Instant,
    elapsed_offset: f64,
}

fn role_slot(role: Role) -> usize {
    match role {
        Role::U => 0,
        Role::Gamma => 1,
        Role::Phi => 2,
        Role::PhiBar => 3,
    }
}

fn build_nets(problem: &ProblemSpec, config: &SolveConfig) -> Result<NetworkQuad> {
    let din = problem.input_dim();
    let phi = config.phi_net.to_spec(din)?;
    NetworkQuad::new(config.u_net.to_spec(din)?, config.gamma_net.to_spec(din)?, phi.clone(), phi)
}

fn config_hash(problem: &ProblemSpec, config: &SolveConfig) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(problem).expect("problem serializes"));
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.finalize().into()
}

/// `gamma` network values on the grid, compared to the ground truth.
pub fn gamma_rel_error(nets: &NetworkQuad, problem: &ProblemSpec, grid: &TestGrid) -> Result<f64> {
    let net = nets.mlp(Role::Gamma);
    let p = nets.params(Role::Gamma).as_slice();
    let tape = std::cell::RefCell::new(Tape::default());
    relative_l2(
        |x| net.forward_tape(p, x, false, &mut tape.borrow_mut()).value,
        |x| problem.gamma_star(x),
        grid,
    )
}

impl Solver {
    pub fn new(problem: ProblemSpec, config: SolveConfig) -> Result<Self> {
        config.validate(&problem)?;
        let mut nets = build_nets(&problem, &config)?;
        nets.init(config.seed);
        let opts = Role::ALL.map(|r| {
            let (kind, tau) = match r {
                Role::U | Role::Gamma => (config.optimizer_theta, config.tau_theta),
                _ => (config.optimizer_eta, config.tau_eta),
            };
            OptimizerState::new(kind, tau, config.ball_bound, nets.mlp(r).param_count())
        });
        let grid = TestGrid::new(&problem, config.grid_seed);
        let mut s = Self {
            problem,
            config,
            nets,
            opts,
            iteration: 0,
            grid,
            history: SolveHistory::default(),
            started: Instant::now(),
            elapsed_offset: 0.0,
        };
        let batches = s.batches(0)?;
        let cache = FieldCache::build(&s.nets, &batches);
        s.record(&batches, &cache, 0.0)?;
        Ok(s)
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn config(&self) -> &SolveConfig {
        &self.config
    }

    pub fn nets(&self) -> &NetworkQuad {
        &self.nets
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn history(&self) -> &SolveHistory {
        &self.history
    }

    pub fn grid(&self) -> &TestGrid {
        &self.grid
    }

    pub fn into_parts(self) -> (NetworkQuad, SolveHistory) {
        (self.nets, self.history)
    }

    fn batches(&self, iteration: usize) -> Result<Batches> {
        Batches::sample(
            &self.problem,
            self.config.n_interior,
            self.config.n_boundary,
            &self.config.density,
            self.config.seed,
            iteration as u64,
        )
    }

    fn record(&mut self, batches: &Batches, cache: &FieldCache, grad_mapping: f64) -> Result<()> {
        let wr = weak_residual_cached(&self.problem, batches, cache, 0);
        let l_bdry = boundary_loss_cached(&self.problem, batches, cache);
        let rel_error = gamma_rel_error(&self.nets, &self.problem, &self.grid)?;
        self.history.rows.push(HistoryRow {
            iteration: self.iteration,
            e_value: wr.integral * wr.integral,
            l_int: wr.value,
            l_bdry,
            total: self.config.beta_prime * wr.value + self.config.beta * l_bdry,
            rel_error,
            grad_mapping,
        });
        self.history
            .elapsed
            .push(self.elapsed_offset + self.started.elapsed().as_secs_f64());
        Ok(())
    }

    /// One update of `role`; returns `|G|^2` at the pre-update parameters.
    fn update(&mut self, role: Role, batches: &Batches, cache: &mut FieldCache) -> Result<f64> {
        let c = &self.config;
        let bundle = evaluate_role(&self.nets, role, batches, cache, &self.problem, c.beta, c.beta_prime);
        let penalty = match role {
            Role::U | Role::Gamma => c.penalty_theta,
            _ => c.penalty_eta,
        };
        let params = self.nets.params(role).clone();
        let mut grad = bundle.grad.into_inner();
        if penalty > 0.0 {
            for (g, p) in grad.iter_mut().zip(params.as_slice()) {
                *g += 2.0 * penalty * p;
            }
        }
        let grad = ParamVector::from_vec(grad);
        if !grad.is_finite() {
            return Err(Error::NonFiniteGradient {
                role: role.name().into(),
                iteration: self.iteration + 1,
            });
        }
        let opt = &mut self.opts[role_slot(role)];
        let g_sq = gradient_mapping(&params, &grad, opt.step_size, opt.ball_bound)
            .iter()
            .map(|v| v * v)
            .sum();
        let next = opt.step(&params, &grad)?;
        self.nets.set_params(role, next)?;
        cache.refresh(&self.nets, batches, role);
        Ok(g_sq)
    }

    /// Run one outer iteration.
    pub fn step(&mut self) -> Result<()> {
        let j = self.iteration + 1;
        let batches = self.batches(j)?;
        let mut cache = FieldCache::build(&self.nets, &batches);
        let mut g_sq = 0.0;
        let inner = self.config.inner_steps;
        match self.config.update_order {
            UpdateOrder::Interleaved => {
                g_sq += self.update(Role::U, &batches, &mut cache)?;
                for _ in 0..inner {
                    self.update(Role::Phi, &batches, &mut cache)?;
                }
                g_sq += self.update(Role::Gamma, &batches, &mut cache)?;
                for _ in 0..inner {
                    self.update(Role::PhiBar, &batches, &mut cache)?;
                }
            }
            UpdateOrder::AscentFirst => {
                for _ in 0..inner {
                    self.update(Role::Phi, &batches, &mut cache)?;
                }
                for _ in 0..inner {
                    self.update(Role::PhiBar, &batches, &mut cache)?;
                }
                g_sq += self.update(Role::U, &batches, &mut cache)?;
                g_sq += self.update(Role::Gamma, &batches, &mut cache)?;
            }
        }
        self.iteration = j;
        self.history.grad_mapping_sq.push(g_sq);
        if j % self.config.eval_every == 0 || j == self.config.iterations {
            self.record(&batches, &cache, g_sq.sqrt())?;
        }
        Ok(())
    }

    /// Continue until the configured iteration count.
    pub fn run(mut self) -> Result<(NetworkQuad, SolveHistory)> {
        while self.iteration < self.config.iterations {
            self.step()?;
        }
        Ok(self.into_parts())
    }

    /// Serialize parameters, optimizer state and history. RNG streams are derived
    /// from the seed and iteration index, so the iteration is all that is needed to resume them.
    pub fn checkpoint(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.extend_from_slice(&config_hash(&self.problem, &self.config));
        put_u64(&mut b, self.iteration as u64);
        for r in Role::ALL {
            put_vec(&mut b, self.nets.params(r).as_slice());
        }
        for o in &self.opts {
            put_u64(&mut b, o.steps);
            put_vec(&mut b, &o.first);
            put_vec(&mut b, &o.second);
        }
        put_u64(&mut b, self.history.rows.len() as u64);
        for (r, t) in self.history.rows.iter().zip(&self.history.elapsed) {
            put_u64(&mut b, r.iteration as u64);
            for v in [r.e_value, r.l_int, r.l_bdry, r.total, r.rel_error, r.grad_mapping, *t] {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        put_vec(&mut b, &self.history.grad_mapping_sq);
        b
    }

    pub fn restore(problem: ProblemSpec, config: SolveConfig, blob: &[u8]) -> Result<Self> {
        let mut s = Solver::new(problem, config)?;
        let mut r = Reader { buf: blob, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::MalformedCheckpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        let hash = r.take(32)?;
        if version != FORMAT_VERSION || hash != config_hash(&s.problem, &s.config) {
            return Err(Error::CheckpointMismatch);
        }
        s.iteration = r.u64()? as usize;
        for role in Role::ALL {
            let v = r.vec()?;
            s.nets
                .set_params(role, ParamVector::from_vec(v))
                .map_err(|_| Error::MalformedCheckpoint("parameter length".into()))?;
        }
        for o in s.opts.iter_mut() {
            o.steps = r.u64()?;
            let first = r.vec()?;
            let second = r.vec()?;
            if first.len() != o.first.len() || second.len() != o.second.len() {
                return Err(Error::MalformedCheckpoint("optimizer state length".into()));
            }
            o.first = first;
            o.second = second;
        }
        let rows = r.u64()? as usize;
        s.history = SolveHistory::default();
        for _ in 0..rows {
            let iteration = r.u64()? as usize;
            let mut v = [0.0; 7];
            for x in v.iter_mut() {
                *x = r.f64()?;
            }
            s.history.rows.push(HistoryRow {
                iteration,
                e_value: v[0],
                l_int: v[1],
                l_bdry: v[2],
                total: v[3],
                rel_error: v[4],
                grad_mapping: v[5],
            });
            s.history.elapsed.push(v[6]);
        }
        s.history.grad_mapping_sq = r.vec()?;
        if r.pos != blob.len() {
            return Err(Error::MalformedCheckpoint("trailing bytes".into()));
        }
        s.elapsed_offset = s.history.elapsed.last().copied().unwrap_or(0.0);
        s.started = Instant::now();
        Ok(s)
    }
}

fn put_u64(b: &mut Vec<u8>, v: u64) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_vec(b: &mut Vec<u8>, v: &[f64]) {
    put_u64(b, v.len() as u64);
    for x in v {
        b.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::MalformedCheckpoint("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(Error::MalformedCheckpoint("truncated".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Run the configured solve to completion.
pub fn iwan_solve(problem: &ProblemSpec, config: &SolveConfig) -> Result<(NetworkQuad, SolveHistory)> {
    Solver::new(problem.clone(), config.clone())?.run()
}

/// `sqrt(min_j mean_runs |G(theta_j)|^2)` over `runs` solves seeded `seed, seed+1, ...`,
/// spread over up to `workers` threads.
pub fn g_norm(problem: &ProblemSpec, config: &SolveConfig, runs: usize, seed: u64, workers: usize) -> Result<f64> {
    if runs == 0 {
        return Err(Error::InvalidConfig("g_norm needs at least one run".into()));
    }
    let workers = workers.clamp(1, runs);
    let seeds: Vec<u64> = (0..runs as u64).map(|r| seed + r).collect();
    let results: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(runs.div_ceil(workers))
            .map(|chunk| {
                scope.spawn(move || {
                    chunk
                        .iter()
                        .map(|&s| {
                            let mut c = config.clone();
                            c.seed = s;
                            iwan_solve(problem, &c).map(|(_, h)| h.grad_mapping_sq)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("g_norm worker panicked")).collect()
    });
    let traces = results.into_iter().collect::<Result<Vec<_>>>()?;
    g_norm_from_traces(&traces)
}
