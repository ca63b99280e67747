//! Error metrics on a fixed test grid, trace smoothing and cross-section export.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::problems::ProblemSpec;
use crate::sampling::stream_rng;

pub const GRID_SIDE: usize = 100;
pub const DEFAULT_WINDOW: usize = 7;

/// `10^4` fixed evaluation points: a `100 x 100` grid in `(x1, x2)` with the remaining
/// coordinates (and time) drawn uniformly once. One-dimensional problems use `10^4`
/// equispaced points.
#[derive(Debug, Clone, PartialEq)]
pub struct TestGrid {
    dim: usize,
    points: Vec<f64>,
    seed: u64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl TestGrid {
    pub fn new(problem: &ProblemSpec, seed: u64) -> Self {
        let dom = problem.sampling_domain();
        let dim = dom.dim();
        let mut points = Vec::with_capacity(GRID_SIDE * GRID_SIDE * dim);
        if dim == 1 {
            points = linspace(dom.lower()[0], dom.upper()[0], GRID_SIDE * GRID_SIDE);
        } else {
            let mut rng = stream_rng(seed, 0, 0x9e1d);
            let xs = linspace(dom.lower()[0], dom.upper()[0], GRID_SIDE);
            let ys = linspace(dom.lower()[1], dom.upper()[1], GRID_SIDE);
            for &x in &xs {
                for &y in &ys {
                    points.push(x);
                    points.push(y);
                    for k in 2..dim {
                        points.push(dom.lower()[k] + dom.side(k) * rng.random::<f64>());
                    }
                }
            }
        }
        Self { dim, points, seed }
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }
}

/// `||candidate - truth|| / ||truth||` over the grid points.
pub fn relative_l2<C, T>(candidate: C, truth: T, grid: &TestGrid) -> Result<f64>
where
    C: Fn(&[f64]) -> f64,
    T: Fn(&[f64]) -> f64,
{
    let mut num = 0.0;
    let mut den = 0.0;
    for x in grid.iter() {
        let t = truth(x);
        num += (candidate(x) - t).powi(2);
        den += t * t;
    }
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((num / den).sqrt())
}

/// Trailing moving average; the first entries average over what is available.
pub fn moving_average(trace: &[f64], window: usize) -> Result<Vec<f64>> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if window == 0 {
        return Err(Error::InvalidConfig("moving-average window must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(trace.len());
    let mut sum = 0.0;
    for i in 0..trace.len() {
        sum += trace[i];
        if i >= window {
            sum -= trace[i - window];
        }
        let count = (i + 1).min(window);
        out.push(sum / count as f64);
    }
    Ok(out)
}

/// Whether a smoothed trace is still going down over its second half: negative
/// least-squares slope there, and the last value below the midpoint value.
pub fn decreasing_over_final_half(smoothed: &[f64]) -> bool {
    let n = smoothed.len();
    if n < 4 {
        return false;
    }
    let tail = &smoothed[n / 2..];
    let m = tail.len() as f64;
    let xbar = (m - 1.0) / 2.0;
    let ybar = tail.iter().sum::<f64>() / m;
    let slope: f64 = tail
        .iter()
        .enumerate()
        .map(|(i, y)| (i as f64 - xbar) * (y - ybar))
        .sum::<f64>();
    slope < 0.0 && tail[tail.len() - 1] < tail[0]
}

/// Values of a field and of `|field - truth|` on the `(x1, x2)` cross-section.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceTable {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// Row-major, `x1` outer.
    pub values: Vec<f64>,
    pub abs_error: Vec<f64>,
}

/// Cross-section through the domain midpoint in all non-plotted coordinates
/// (time included). One-dimensional problems give a single row in `x2`.
pub fn export_field<C, T>(candidate: C, truth: T, problem: &ProblemSpec, side: usize) -> SliceTable
where
    C: Fn(&[f64]) -> f64,
    T: Fn(&[f64]) -> f64,
{
    let dom = problem.sampling_domain();
    let mut x = dom.center();
    let x1 = linspace(dom.lower()[0], dom.upper()[0], side);
    let x2 = if dom.dim() > 1 {
        linspace(dom.lower()[1], dom.upper()[1], side)
    } else {
        vec![0.0]
    };
    let mut values = Vec::with_capacity(x1.len() * x2.len());
    let mut abs_error = Vec::with_capacity(x1.len() * x2.len());
    for &a in &x1 {
        for &b in &x2 {
            x[0] = a;
            if dom.dim() > 1 {
                x[1] = b;
            }
            let v = candidate(&x);
            values.push(v);
            abs_error.push((v - truth(&x)).abs());
        }
    }
    SliceTable { x1, x2, values, abs_error }
}

impl SliceTable {
    fn csv(&self, data: &[f64], column: &str) -> String {
        let mut s = format!("x1,x2,{column}\n");
        let n2 = self.x2.len();
        for (i, a) in self.x1.iter().enumerate() {
            for (j, b) in self.x2.iter().enumerate() {
                let _ = writeln!(s, "{a},{b},{}", data[i * n2 + j]);
            }
        }
        s
    }

    pub fn values_csv(&self) -> String {
        self.csv(&self.values, "value")
    }

    pub fn abs_error_csv(&self) -> String {
        self.csv(&self.abs_error, "abs_error")
    }

    pub fn write(&self, values_path: &Path, error_path: &Path) -> Result<()> {
        std::fs::write(values_path, self.values_csv())?;
        std::fs::write(error_path, self.abs_error_csv())?;
        Ok(())
    }
}

/// Parse the third column of a slice CSV written by [`SliceTable::values_csv`].
pub fn read_slice_column(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.rsplit(',')
                .next()
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidConfig(format!("bad slice row `{l}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_problem, ProblemId};

    #[test]
    fn grid_has_ten_thousand_points() {
        for (id, d) in [(ProblemId::Test2, 5), (ProblemId::Analytic1d, 1), (ProblemId::Test6, 5)] {
            let p = make_problem(id, d, 0.0).unwrap();
            let g = TestGrid::new(&p, 3);
            assert_eq!(g.len(), 10_000);
            assert_eq!(g.dim(), p.input_dim());
            assert_eq!(g, TestGrid::new(&p, 3));
        }
    }

    #[test]
    fn relative_error_cases() {
        let p = make_problem(ProblemId::Test2, 2, 0.0).unwrap();
        let g = TestGrid::new(&p, 0);
        let t = |x: &[f64]| p.gamma_star(x);
        assert_eq!(relative_l2(t, t, &g).unwrap(), 0.0);
        assert!((relative_l2(|x: &[f64]| 2.0 * t(x), t, &g).unwrap() - 1.0).abs() < 1e-14);
        assert!((relative_l2(|_: &[f64]| 0.0, t, &g).unwrap() - 1.0).abs() < 1e-14);
        assert!(matches!(relative_l2(t, |_: &[f64]| 0.0, &g), Err(Error::ZeroReference)));
    }

    #[test]
    fn moving_average_cases() {
        assert_eq!(moving_average(&[2.0; 5], 7).unwrap(), vec![2.0; 5]);
        let t = [1.0, 5.0, -2.0];
        assert_eq!(moving_average(&t, 1).unwrap(), t.to_vec());
        let ramp: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(moving_average(&ramp, 7).unwrap()[8], 6.0);
        assert!(moving_average(&[], 3).is_err());
    }

    #[test]
    fn decreasing_detection() {
        let down: Vec<f64> = (0..20).map(|i| 1.0 / (1.0 + i as f64)).collect();
        assert!(decreasing_over_final_half(&down));
        let up: Vec<f64> = down.iter().rev().copied().collect();
        assert!(!decreasing_over_final_half(&up));
    }

    #[test]
    fn test2_slice_range_and_round_trip() {
        let p = make_problem(ProblemId::Test2, 5, 0.0).unwrap();
        let t = |x: &[f64]| p.gamma_star(x);
        let s = export_field(t, t, &p, GRID_SIDE);
        assert_eq!(s.values.len(), 10_000);
        assert!(s.abs_error.iter().all(|&v| v == 0.0));
        let max = s.values.iter().cloned().fold(f64::MIN, f64::max);
        let min = s.values.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - 2.0).abs() < 1e-3 && (min - 0.5).abs() < 1e-3);
        assert_eq!(read_slice_column(&s.values_csv()).unwrap(), s.values);
    }
}
