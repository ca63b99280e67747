use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{bail, Context, Result};

use iwan_core::eval::{export_field, TestGrid, GRID_SIDE};
use iwan_core::fdm::fdm_solve;
use iwan_core::loss::{NetworkQuad, Role};
use iwan_core::optim::g_norm_from_traces;
use iwan_core::problems::{ProblemId, ProblemSpec};
use iwan_core::solver::{iwan_solve, SolveHistory};

use crate::config::{cell_config, resolve, sweep_cells, to_toml, Mode, Resolved, RunConfig};

pub const SWEEP_HEADER: &str =
    "cell,layers,width,n_interior,n_boundary,scale,final_rel_error,wall_seconds,g_norm,status";
pub const COMPARE_HEADER: &str = "method,lambda,final_objective,final_rel_error,wall_seconds,status";

/// Run `task(i)` for `i in 0..n` on up to `workers` threads, results in index order.
fn parallel_map<T: Send>(n: usize, workers: usize, task: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = task(i);
                out.lock().unwrap()[i] = Some(r);
            });
        }
    });
    out.into_inner().unwrap().into_iter().map(|r| r.expect("task finished")).collect()
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn gamma_value(nets: &NetworkQuad) -> impl Fn(&[f64]) -> f64 + '_ {
    let net = nets.mlp(Role::Gamma);
    let p = nets.params(Role::Gamma);
    move |x| net.value(p, x).expect("grid points match the network input")
}

/// History, timing, cross-section fields and the resolved config of one solve.
fn write_run(dir: &Path, r: &Resolved, nets: &NetworkQuad, history: &SolveHistory) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    write(&dir.join("history.csv"), &history.to_csv())?;
    write(&dir.join("timing.csv"), &history.timing_csv())?;
    let slice = export_field(gamma_value(nets), |x| r.problem.gamma_star(x), &r.problem, GRID_SIDE);
    write(&dir.join("field_gamma.csv"), &slice.values_csv())?;
    write(&dir.join("field_abs_error.csv"), &slice.abs_error_csv())?;
    write(&dir.join("resolved_config.toml"), &to_toml(&r.config))
}

fn out_dir(cfg: &RunConfig, out: &Option<PathBuf>) -> PathBuf {
    out.clone()
        .unwrap_or_else(|| PathBuf::from(cfg.out_dir.clone().unwrap_or_else(|| "out".into())))
}

fn apply_overrides(cfg: &mut RunConfig, seed: Option<u64>, out: &Option<PathBuf>) {
    if let Some(s) = seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = out {
        cfg.out_dir = Some(o.display().to_string());
    }
}

pub fn solve(mut cfg: RunConfig, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    apply_overrides(&mut cfg, seed, &out);
    let r = resolve(&cfg, Mode::Solve)?;
    let dir = out_dir(&r.config, &None);
    let (nets, history) = iwan_solve(&r.problem, &r.solve)?;
    write_run(&dir, &r, &nets, &history)?;
    let err = history.final_rel_error().unwrap_or(f64::NAN);
    println!("{}: final relative error {err:.6e}", r.config.label.as_deref().unwrap_or(""));
    Ok(())
}

struct CellOutcome {
    rel_error: f64,
    seconds: f64,
    g_norm: Option<f64>,
}

fn run_cell(r: &Resolved, dir: &Path, gnorm_runs: Option<usize>) -> Result<CellOutcome> {
    let start = Instant::now();
    let (nets, history) = iwan_solve(&r.problem, &r.solve)?;
    let seconds = start.elapsed().as_secs_f64();
    write_run(dir, r, &nets, &history)?;
    let g_norm = match gnorm_runs {
        None => None,
        Some(0) => bail!("gnorm_runs must be at least 1"),
        Some(runs) => {
            let mut traces = vec![history.grad_mapping_sq.clone()];
            for k in 1..runs as u64 {
                let mut c = r.solve.clone();
                c.seed += k;
                traces.push(iwan_solve(&r.problem, &c)?.1.grad_mapping_sq);
            }
            Some(g_norm_from_traces(&traces)?)
        }
    };
    Ok(CellOutcome {
        rel_error: history.final_rel_error().unwrap_or(f64::NAN),
        seconds,
        g_norm,
    })
}

fn csv_safe(s: &str) -> String {
    s.replace([',', '\n'], " ")
}

/// Returns whether every cell completed.
pub fn sweep(mut cfg: RunConfig, seed: Option<u64>, out: Option<PathBuf>, workers: usize) -> Result<bool> {
    apply_overrides(&mut cfg, seed, &out);
    let cells = sweep_cells(&cfg)?;
    let dir = out_dir(&cfg, &None);
    let resolved: Vec<Result<Resolved>> = cells
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let mut cc = cell_config(&cfg, c);
            cc.out_dir = Some(dir.join(format!("cell_{k:03}")).display().to_string());
            resolve(&cc, Mode::Solve)
        })
        .collect();
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let outcomes = parallel_map(resolved.len(), workers, |k| {
        let res = resolved[k].as_ref().map_err(|e| anyhow::anyhow!("{e:#}")).and_then(|r| {
            run_cell(r, Path::new(r.config.out_dir.as_deref().unwrap()), cfg.gnorm_runs)
        });
        match &res {
            Ok(o) => println!("cell {k:03}: final relative error {:.6e} ({:.1}s)", o.rel_error, o.seconds),
            Err(e) => eprintln!("cell {k:03} failed: {e:#}"),
        }
        res
    });
    let mut summary = String::from(SWEEP_HEADER);
    summary.push('\n');
    let mut all_ok = true;
    for (k, o) in outcomes.iter().enumerate() {
        let c = match &resolved[k] {
            Ok(r) => r.config.clone(),
            Err(_) => cell_config(&cfg, &cells[k]),
        };
        let show = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        let scale = cells[k].scale.map(|s| s.to_string()).unwrap_or_default();
        let _ = write!(
            summary,
            "{k},{},{},{},{},{scale},",
            show(c.layers),
            show(c.width),
            show(c.n_interior),
            show(c.n_boundary)
        );
        match o {
            Ok(o) => {
                let g = o.g_norm.map(|g| g.to_string()).unwrap_or_default();
                let _ = writeln!(summary, "{},{:.3},{g},ok", o.rel_error, o.seconds);
            }
            Err(e) => {
                all_ok = false;
                let _ = writeln!(summary, ",,,failed: {}", csv_safe(&format!("{e:#}")));
            }
        }
    }
    write(&dir.join("summary.csv"), &summary)?;
    Ok(all_ok)
}

fn fmt_lambda(l: f64) -> String {
    l.to_string().replace('.', "p")
}

/// Returns whether every requested run completed.
pub fn fdm_compare(mut cfg: RunConfig, seed: Option<u64>, out: Option<PathBuf>, workers: usize) -> Result<bool> {
    apply_overrides(&mut cfg, seed, &out);
    let r = resolve(&cfg, Mode::FdmCompare)?;
    if r.problem.dim != 2 || r.problem.horizon.is_some() {
        bail!(
            "fdm-compare needs a two-dimensional elliptic problem, got `{}` with dim {}",
            r.problem.id,
            r.problem.dim
        );
    }
    let lambdas = r.config.fdm_lambdas.clone().unwrap_or_else(|| vec![0.01, 0.1, 1.0]);
    if lambdas.is_empty() {
        bail!("fdm_lambdas is empty");
    }
    let mut full = r.config.clone();
    let d = full.fdm(0.0);
    full.fdm_lambdas = Some(lambdas.clone());
    full.fdm_n = Some(d.n);
    full.fdm_iterations = Some(d.iterations);
    full.fdm_step_size = Some(d.step_size);
    full.fdm_backtracking = Some(d.backtracking);
    let dir = out_dir(&full, &None);
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    write(&dir.join("resolved_config.toml"), &to_toml(&full))?;

    let grid = TestGrid::new(&r.problem, r.solve.grid_seed);
    let problem: &ProblemSpec = &r.problem;
    // Task 0 is the network solve, tasks 1.. the FDM runs.
    let rows = parallel_map(lambdas.len() + 1, workers, |k| -> Result<(String, f64, f64, f64)> {
        let start = Instant::now();
        if k == 0 {
            let (nets, history) = iwan_solve(problem, &r.solve)?;
            let seconds = start.elapsed().as_secs_f64();
            write(&dir.join("iwan_history.csv"), &history.to_csv())?;
            let slice = export_field(gamma_value(&nets), |x| problem.gamma_star(x), problem, GRID_SIDE);
            write(&dir.join("iwan_gamma.csv"), &slice.values_csv())?;
            write(&dir.join("iwan_abs_error.csv"), &slice.abs_error_csv())?;
            let last = history.rows.last().expect("history records the start");
            return Ok(("iwan".into(), last.total, last.rel_error, seconds));
        }
        let lambda = lambdas[k - 1];
        let res = fdm_solve(problem, &full.fdm(lambda), &grid)?;
        let seconds = start.elapsed().as_secs_f64();
        let g = &res.gamma;
        let slice = export_field(|x| g.interpolate(x[0], x[1]), |x| problem.gamma_star(x), problem, GRID_SIDE);
        let tag = fmt_lambda(lambda);
        write(&dir.join(format!("fdm_{tag}_gamma.csv")), &slice.values_csv())?;
        write(&dir.join(format!("fdm_{tag}_abs_error.csv")), &slice.abs_error_csv())?;
        Ok(("fdm".into(), res.final_objective(), res.final_rel_error(), seconds))
    });
    let mut summary = String::from(COMPARE_HEADER);
    summary.push('\n');
    let mut all_ok = true;
    for (k, row) in rows.iter().enumerate() {
        let (method, lambda) = if k == 0 {
            ("iwan", String::new())
        } else {
            ("fdm", lambdas[k - 1].to_string())
        };
        match row {
            Ok((_, obj, rel, secs)) => {
                println!("{method} {lambda}: final relative error {rel:.6e}");
                let _ = writeln!(summary, "{method},{lambda},{obj},{rel},{secs:.3},ok");
            }
            Err(e) => {
                all_ok = false;
                eprintln!("{method} {lambda} failed: {e:#}");
                let _ = writeln!(summary, "{method},{lambda},,,,failed: {}", csv_safe(&format!("{e:#}")));
            }
        }
    }
    write(&dir.join("summary.csv"), &summary)?;
    Ok(all_ok)
}

pub fn problems() {
    println!("id\tdims\tdescription");
    for id in ProblemId::ALL {
        let dims: Vec<String> = id.supported_dims().iter().map(|d| d.to_string()).collect();
        println!("{}\t{}\t{}", id.as_str(), dims.join(","), id.description());
    }
}
