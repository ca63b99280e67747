//! Projected SGD, AdaGrad and Adam, plus the gradient-mapping diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{project_ball, ParamVector};

pub const EPS0: f64 = 1e-8;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step_size: f64,
    /// `B` in the ball `|theta| <= sqrt(2B)`; `f64::INFINITY` disables projection.
    pub ball_bound: f64,
    /// AdaGrad sum of squares, or Adam first moment.
    pub first: Vec<f64>,
    /// Adam second moment.
    pub second: Vec<f64>,
    pub steps: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, step_size: f64, ball_bound: f64, n: usize) -> Self {
        let second = if kind == OptimizerKind::Adam { vec![0.0; n] } else { Vec::new() };
        let first = if kind == OptimizerKind::Sgd { Vec::new() } else { vec![0.0; n] };
        Self {
            kind,
            step_size,
            ball_bound,
            first,
            second,
            steps: 0,
        }
    }

    /// One projected update; the state is untouched if an error is returned.
    pub fn step(&mut self, params: &ParamVector, grad: &ParamVector) -> Result<ParamVector> {
        if params.len() != grad.len() {
            return Err(Error::DimensionMismatch {
                what: "gradient",
                expected: params.len(),
                found: grad.len(),
            });
        }
        if !grad.is_finite() {
            return Err(Error::NonFiniteGradient {
                role: "parameters".into(),
                iteration: self.steps as usize,
            });
        }
        let p = params.as_slice();
        let g = grad.as_slice();
        let tau = self.step_size;
        let moved: Vec<f64> = match self.kind {
            OptimizerKind::Sgd => p.iter().zip(g).map(|(x, d)| x - tau * d).collect(),
            OptimizerKind::Adagrad => {
                if self.first.len() != p.len() {
                    return Err(Error::DimensionMismatch {
                        what: "optimizer state",
                        expected: p.len(),
                        found: self.first.len(),
                    });
                }
                self.first.iter_mut().zip(g).for_each(|(a, d)| *a += d * d);
                p.iter()
                    .zip(g)
                    .zip(&self.first)
                    .map(|((x, d), a)| x - tau * d / (a + EPS0).sqrt())
                    .collect()
            }
            OptimizerKind::Adam => {
                if self.first.len() != p.len() || self.second.len() != p.len() {
                    return Err(Error::DimensionMismatch {
                        what: "optimizer state",
                        expected: p.len(),
                        found: self.first.len(),
                    });
                }
                let t = (self.steps + 1) as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                let mut out = Vec::with_capacity(p.len());
                for i in 0..p.len() {
                    self.first[i] = ADAM_BETA1 * self.first[i] + (1.0 - ADAM_BETA1) * g[i];
                    self.second[i] = ADAM_BETA2 * self.second[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                    let m = self.first[i] / c1;
                    let v = self.second[i] / c2;
                    out.push(p[i] - tau * m / (v.sqrt() + EPS0));
                }
                out
            }
        };
        self.steps += 1;
        Ok(project_ball(&ParamVector::from_vec(moved), self.ball_bound))
    }
}

/// `G = (theta - Pi(theta - tau g)) / tau`.
pub fn gradient_mapping(params: &ParamVector, grad: &ParamVector, tau: f64, bound: f64) -> Vec<f64> {
    let moved: Vec<f64> = params.as_slice().iter().zip(grad.as_slice()).map(|(x, d)| x - tau * d).collect();
    let proj = project_ball(&ParamVector::from_vec(moved), bound);
    params.as_slice().iter().zip(proj.as_slice()).map(|(x, y)| (x - y) / tau).collect()
}

/// `sqrt(min_j mean_runs |G_j|^2)` from per-run traces of squared mapping norms.
///
/// Traces may differ in length; the minimum runs over indices present in every trace.
pub fn g_norm_from_traces(traces: &[Vec<f64>]) -> Result<f64> {
    let len = traces.iter().map(Vec::len).min().unwrap_or(0);
    if len == 0 {
        return Err(Error::EmptyTrace);
    }
    let runs = traces.len() as f64;
    let best = (0..len)
        .map(|j| traces.iter().map(|t| t[j]).sum::<f64>() / runs)
        .fold(f64::INFINITY, f64::min);
    Ok(best.sqrt())
}
