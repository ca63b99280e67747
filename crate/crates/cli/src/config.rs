//! Flat TOML run configuration and its resolution into solver inputs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use iwan_core::fdm::FdmConfig;
use iwan_core::loss::Role;
use iwan_core::net::Activation;
use iwan_core::optim::OptimizerKind;
use iwan_core::problems::{make_problem, ProblemId, ProblemSpec};
use iwan_core::sampling::Density;
use iwan_core::solver::{NetArch, SolveConfig, UpdateOrder};

/// Every key a config file may contain. Absent keys take problem-dependent defaults;
/// [`resolve`] fills them in so the written-back file reproduces the run exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    pub dim: Option<usize>,
    pub noise: Option<f64>,
    pub label: Option<String>,
    pub out_dir: Option<String>,

    pub iterations: Option<usize>,
    pub inner_steps: Option<usize>,
    pub tau_theta: Option<f64>,
    pub tau_eta: Option<f64>,
    pub beta: Option<f64>,
    pub beta_prime: Option<f64>,
    pub n_interior: Option<usize>,
    pub n_boundary: Option<usize>,
    pub optimizer_theta: Option<OptimizerKind>,
    pub optimizer_eta: Option<OptimizerKind>,
    pub ball_bound: Option<f64>,
    pub penalty_theta: Option<f64>,
    pub penalty_eta: Option<f64>,
    pub seed: Option<u64>,
    pub grid_seed: Option<u64>,
    pub eval_every: Option<usize>,
    pub update_order: Option<UpdateOrder>,

    /// `uniform` or `gaussian`.
    pub sampling: Option<String>,
    pub gaussian_mean: Option<[f64; 2]>,
    pub gaussian_inverse_covariance: Option<[f64; 2]>,

    /// Layer count `K` of every network (hidden layers plus the output layer).
    pub layers: Option<usize>,
    pub width: Option<usize>,
    pub u_widths: Option<Vec<usize>>,
    pub u_activations: Option<Vec<Activation>>,
    pub u_output: Option<Activation>,
    pub gamma_widths: Option<Vec<usize>>,
    pub gamma_activations: Option<Vec<Activation>>,
    pub gamma_output: Option<Activation>,
    pub phi_widths: Option<Vec<usize>>,
    pub phi_activations: Option<Vec<Activation>>,
    pub phi_output: Option<Activation>,

    pub sweep_layers: Option<Vec<usize>>,
    pub sweep_width: Option<Vec<usize>>,
    pub sweep_n_interior: Option<Vec<usize>>,
    pub sweep_n_boundary: Option<Vec<usize>>,
    pub sweep_scale: Option<Vec<f64>>,
    pub scale_base_interior: Option<usize>,
    pub scale_base_boundary: Option<usize>,
    /// Runs per cell used to estimate the gradient-mapping norm; off when absent.
    pub gnorm_runs: Option<usize>,

    pub fdm_lambdas: Option<Vec<f64>>,
    pub fdm_n: Option<usize>,
    pub fdm_iterations: Option<usize>,
    pub fdm_step_size: Option<f64>,
    pub fdm_backtracking: Option<bool>,
}

/// Which verb is resolving; the FDM comparison uses a smaller matched network budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Solve,
    FdmCompare,
}

pub const DEFAULT_LAYERS: usize = 9;
pub const DEFAULT_WIDTH: usize = 20;
const MATCHED_LAYERS: usize = 5;
const MATCHED_WIDTH: usize = 15;
const MATCHED_INTERIOR: usize = 1_000;
const MATCHED_BOUNDARY: usize = 120;

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse(&text).with_context(|| format!("invalid config {}", path.display()))
}

pub fn parse(text: &str) -> Result<RunConfig> {
    Ok(toml::from_str(text)?)
}

pub fn to_toml(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("run config always serializes")
}

/// A config with every solve key materialized, plus the derived solver inputs.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub problem: ProblemSpec,
    pub solve: SolveConfig,
}

fn arch(
    role: Role,
    widths: &Option<Vec<usize>>,
    acts: &Option<Vec<Activation>>,
    output: Option<Activation>,
    layers: usize,
    width: usize,
) -> Result<NetArch> {
    if layers < 2 {
        bail!("layers must be at least 2 (one hidden layer plus the output)");
    }
    let widths = widths.clone().unwrap_or_else(|| vec![width; layers - 1]);
    let default = NetArch::default_for(role, widths.len(), width);
    Ok(NetArch {
        activations: acts.clone().unwrap_or(default.activations),
        output: output.unwrap_or(default.output),
        widths,
    })
}

pub fn resolve(raw: &RunConfig, mode: Mode) -> Result<Resolved> {
    let id: ProblemId = raw.problem.parse().map_err(|e| anyhow::anyhow!("key `problem`: {e}"))?;
    let dims = id.supported_dims();
    let dim = raw.dim.unwrap_or(if dims.contains(&5) { 5 } else { dims[0] });
    let noise = raw.noise.unwrap_or(0.0);
    let problem = make_problem(id, dim, noise)?;
    let refs = problem.reference_settings();
    let mut c = raw.clone();

    let adam = id == ProblemId::Test8;
    let matched = mode == Mode::FdmCompare;
    c.dim = Some(dim);
    c.noise = Some(noise);
    c.label.get_or_insert_with(|| id.as_str().to_string());
    c.out_dir.get_or_insert_with(|| "out".to_string());
    c.iterations.get_or_insert(refs.iterations);
    c.inner_steps.get_or_insert(2);
    c.tau_theta.get_or_insert(if adam { 0.001 } else { 0.01 });
    c.tau_eta.get_or_insert(if adam { 0.001 } else { 0.008 });
    c.beta.get_or_insert(refs.beta);
    c.beta_prime.get_or_insert(refs.beta_prime);
    c.n_interior.get_or_insert(if matched { MATCHED_INTERIOR } else { refs.n_interior });
    c.n_boundary.get_or_insert(if matched { MATCHED_BOUNDARY } else { refs.n_boundary });
    let opt = if adam { OptimizerKind::Adam } else { OptimizerKind::Adagrad };
    c.optimizer_theta.get_or_insert(opt);
    c.optimizer_eta.get_or_insert(opt);
    c.ball_bound.get_or_insert(f64::INFINITY);
    c.penalty_theta.get_or_insert(0.0);
    c.penalty_eta.get_or_insert(0.0);
    c.seed.get_or_insert(0);
    c.grid_seed.get_or_insert(0);
    c.eval_every.get_or_insert(50);
    c.update_order.get_or_insert(UpdateOrder::Interleaved);

    let density = match c.sampling.as_deref() {
        None => problem.reference_density(),
        Some("uniform") => Density::Uniform,
        Some("gaussian") => {
            let (mean, inv) = match problem.reference_density() {
                Density::GaussianRestricted {
                    mean,
                    inverse_covariance_diag,
                } => (mean, inverse_covariance_diag),
                Density::Uniform => ([0.0, 0.0], [1.0, 1.0]),
            };
            Density::GaussianRestricted {
                mean: c.gaussian_mean.unwrap_or(mean),
                inverse_covariance_diag: c.gaussian_inverse_covariance.unwrap_or(inv),
            }
        }
        Some(other) => bail!("key `sampling`: expected `uniform` or `gaussian`, found `{other}`"),
    };
    match &density {
        Density::Uniform => {
            c.sampling = Some("uniform".into());
            c.gaussian_mean = None;
            c.gaussian_inverse_covariance = None;
        }
        Density::GaussianRestricted {
            mean,
            inverse_covariance_diag,
        } => {
            c.sampling = Some("gaussian".into());
            c.gaussian_mean = Some(*mean);
            c.gaussian_inverse_covariance = Some(*inverse_covariance_diag);
        }
    }

    let layers = *c.layers.get_or_insert(if matched { MATCHED_LAYERS } else { DEFAULT_LAYERS });
    let width = *c.width.get_or_insert(if matched { MATCHED_WIDTH } else { DEFAULT_WIDTH });
    let u_net = arch(Role::U, &c.u_widths, &c.u_activations, c.u_output, layers, width)?;
    let gamma_net = arch(Role::Gamma, &c.gamma_widths, &c.gamma_activations, c.gamma_output, layers, width)?;
    let phi_net = arch(Role::Phi, &c.phi_widths, &c.phi_activations, c.phi_output, layers, width)?;
    for (w, a, o, net) in [
        (&mut c.u_widths, &mut c.u_activations, &mut c.u_output, &u_net),
        (&mut c.gamma_widths, &mut c.gamma_activations, &mut c.gamma_output, &gamma_net),
        (&mut c.phi_widths, &mut c.phi_activations, &mut c.phi_output, &phi_net),
    ] {
        *w = Some(net.widths.clone());
        *a = Some(net.activations.clone());
        *o = Some(net.output);
    }

    let solve = SolveConfig {
        iterations: c.iterations.unwrap(),
        inner_steps: c.inner_steps.unwrap(),
        tau_theta: c.tau_theta.unwrap(),
        tau_eta: c.tau_eta.unwrap(),
        beta: c.beta.unwrap(),
        beta_prime: c.beta_prime.unwrap(),
        n_interior: c.n_interior.unwrap(),
        n_boundary: c.n_boundary.unwrap(),
        optimizer_theta: c.optimizer_theta.unwrap(),
        optimizer_eta: c.optimizer_eta.unwrap(),
        ball_bound: c.ball_bound.unwrap(),
        penalty_theta: c.penalty_theta.unwrap(),
        penalty_eta: c.penalty_eta.unwrap(),
        seed: c.seed.unwrap(),
        grid_seed: c.grid_seed.unwrap(),
        eval_every: c.eval_every.unwrap(),
        update_order: c.update_order.unwrap(),
        density,
        u_net,
        gamma_net,
        phi_net,
    };
    solve.validate(&problem)?;
    Ok(Resolved { config: c, problem, solve })
}

impl RunConfig {
    /// FDM settings for one regularization weight.
    pub fn fdm(&self, lambda: f64) -> FdmConfig {
        let d = FdmConfig::default();
        FdmConfig {
            n: self.fdm_n.unwrap_or(d.n),
            lambda,
            iterations: self.fdm_iterations.unwrap_or(d.iterations),
            step_size: self.fdm_step_size.unwrap_or(d.step_size),
            backtracking: self.fdm_backtracking.unwrap_or(d.backtracking),
            seed: self.seed.unwrap_or(0),
            eval_every: self.eval_every.unwrap_or(d.eval_every),
        }
    }

    pub fn has_sweep_axes(&self) -> bool {
        self.sweep_layers.is_some()
            || self.sweep_width.is_some()
            || self.sweep_n_interior.is_some()
            || self.sweep_n_boundary.is_some()
            || self.sweep_scale.is_some()
    }

    /// The same config with all sweep keys removed.
    pub fn without_sweep(&self) -> RunConfig {
        RunConfig {
            sweep_layers: None,
            sweep_width: None,
            sweep_n_interior: None,
            sweep_n_boundary: None,
            sweep_scale: None,
            scale_base_interior: None,
            scale_base_boundary: None,
            gnorm_runs: None,
            ..self.clone()
        }
    }
}

/// One point of a sweep's Cartesian product.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cell {
    pub layers: Option<usize>,
    pub width: Option<usize>,
    pub n_interior: Option<usize>,
    pub n_boundary: Option<usize>,
    pub scale: Option<f64>,
}

fn axis<T: Copy>(name: &str, values: &Option<Vec<T>>) -> Result<Vec<Option<T>>> {
    match values {
        None => Ok(vec![None]),
        Some(v) if v.is_empty() => bail!("sweep axis `{name}` is empty"),
        Some(v) => Ok(v.iter().map(|x| Some(*x)).collect()),
    }
}

/// Cartesian product of the declared axes, in key order with the last axis fastest.
pub fn sweep_cells(cfg: &RunConfig) -> Result<Vec<Cell>> {
    if !cfg.has_sweep_axes() {
        bail!("sweep needs at least one of sweep_layers, sweep_width, sweep_n_interior, sweep_n_boundary, sweep_scale");
    }
    let explicit_arch = cfg.u_widths.is_some() || cfg.gamma_widths.is_some() || cfg.phi_widths.is_some();
    if explicit_arch && (cfg.sweep_layers.is_some() || cfg.sweep_width.is_some()) {
        bail!("sweep_layers/sweep_width cannot be combined with explicit *_widths");
    }
    if cfg.sweep_scale.is_some() && (cfg.sweep_n_interior.is_some() || cfg.sweep_n_boundary.is_some()) {
        bail!("sweep_scale cannot be combined with sweep_n_interior/sweep_n_boundary");
    }
    if let Some(s) = &cfg.sweep_scale {
        if s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            bail!("sweep_scale values must be positive and finite");
        }
    }
    let mut cells = Vec::new();
    for layers in axis("sweep_layers", &cfg.sweep_layers)? {
        for width in axis("sweep_width", &cfg.sweep_width)? {
            for n_interior in axis("sweep_n_interior", &cfg.sweep_n_interior)? {
                for n_boundary in axis("sweep_n_boundary", &cfg.sweep_n_boundary)? {
                    for scale in axis("sweep_scale", &cfg.sweep_scale)? {
                        cells.push(Cell {
                            layers,
                            width,
                            n_interior,
                            n_boundary,
                            scale,
                        });
                    }
                }
            }
        }
    }
    Ok(cells)
}

pub const SCALE_BASE_INTERIOR: usize = 25_000;
pub const SCALE_BASE_BOUNDARY: usize = 200;

/// The un-resolved solve config of one cell.
pub fn cell_config(base: &RunConfig, cell: &Cell) -> RunConfig {
    let mut c = base.without_sweep();
    if let Some(k) = cell.layers {
        c.layers = Some(k);
    }
    if let Some(w) = cell.width {
        c.width = Some(w);
    }
    if let Some(n) = cell.n_interior {
        c.n_interior = Some(n);
    }
    if let Some(n) = cell.n_boundary {
        c.n_boundary = Some(n);
    }
    if let Some(s) = cell.scale {
        let bi = base.scale_base_interior.unwrap_or(SCALE_BASE_INTERIOR) as f64;
        let bb = base.scale_base_boundary.unwrap_or(SCALE_BASE_BOUNDARY) as f64;
        c.n_interior = Some((s * bi).round().max(1.0) as usize);
        c.n_boundary = Some((s * bb).round().max(1.0) as usize);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_problem_names_the_key() {
        let err = parse("dim = 2\n").unwrap_err().to_string();
        assert!(err.contains("problem"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = parse("problem = \"test1\"\n\nbogus = 3\n").unwrap_err().to_string();
        assert!(err.contains("bogus") && err.contains('3'), "{err}");
    }

    #[test]
    fn resolved_round_trip_is_fixed_point() {
        let raw = parse("problem = \"test2\"\ndim = 2\niterations = 5\n").unwrap();
        let r = resolve(&raw, Mode::Solve).unwrap();
        let again = parse(&to_toml(&r.config)).unwrap();
        assert_eq!(again, r.config);
        let r2 = resolve(&again, Mode::Solve).unwrap();
        assert_eq!(r2.solve, r.solve);
        assert_eq!(r2.config, r.config);
    }

    #[test]
    fn infinite_ball_survives_toml() {
        let raw = parse("problem = \"test1\"\n").unwrap();
        let r = resolve(&raw, Mode::Solve).unwrap();
        let text = to_toml(&r.config);
        assert!(text.contains("ball_bound = inf"), "{text}");
        assert_eq!(resolve(&parse(&text).unwrap(), Mode::Solve).unwrap().solve.ball_bound, f64::INFINITY);
    }

    #[test]
    fn layer_count_includes_output() {
        let raw = parse("problem = \"test1\"\nlayers = 5\nwidth = 15\n").unwrap();
        let r = resolve(&raw, Mode::Solve).unwrap();
        assert_eq!(r.solve.u_net.widths, vec![15; 4]);
        let fdm = resolve(&parse("problem = \"test2\"\ndim = 2\n").unwrap(), Mode::FdmCompare).unwrap();
        assert_eq!(fdm.solve.gamma_net.widths, vec![15; 4]);
        assert_eq!((fdm.solve.n_interior, fdm.solve.n_boundary), (1_000, 120));
    }

    #[test]
    fn sweep_product_and_errors() {
        let cfg = parse("problem = \"test2\"\nsweep_layers = [5, 7, 9, 11]\nsweep_width = [5, 10, 20, 40]\n").unwrap();
        assert_eq!(sweep_cells(&cfg).unwrap().len(), 16);
        let empty = parse("problem = \"test2\"\nsweep_width = []\n").unwrap();
        assert!(sweep_cells(&empty).unwrap_err().to_string().contains("sweep_width"));
        assert!(sweep_cells(&parse("problem = \"test2\"\n").unwrap()).is_err());
    }

    #[test]
    fn scale_axis_sets_point_counts() {
        let cfg = parse("problem = \"test2\"\nsweep_scale = [0.25, 0.5, 1.0, 2.0, 4.0]\n").unwrap();
        let cells = sweep_cells(&cfg).unwrap();
        let counts: Vec<_> = cells
            .iter()
            .map(|c| {
                let r = cell_config(&cfg, c);
                (r.n_interior.unwrap(), r.n_boundary.unwrap())
            })
            .collect();
        assert_eq!(
            counts,
            vec![(6_250, 50), (12_500, 100), (25_000, 200), (50_000, 400), (100_000, 800)]
        );
    }
}
