//! Discretized bounded continuous functions on a truncated half-line.
//!
//! A [`Grid`] is a uniform partition of `[0, t_max]`; a [`GridFunction`] stores
//! one finite value per node and is extended between nodes by linear
//! interpolation. The module also provides moduli of continuity over node
//! pairs and the cumulative kernel quadrature
//! `I(t_k) = ∫_0^{t_k} μ(t_k, s) ζ(s, x(s)) ds`, which is the hot loop of the
//! whole crate (O(n²) kernel evaluations per call).

use std::sync::Arc;

use thiserror::Error;

use crate::exec;
use crate::expr::{EvalError, Expr};

/// Node-index tolerance used when snapping times and window widths to the grid.
const SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FuncSpaceError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("t = {t} is outside [0, {t_max}]")]
    OutOfRange { t: f64, t_max: f64 },
    #[error("functions live on different grids")]
    GridMismatch,
    #[error("evaluating {what} at t = {t}: {source}")]
    Eval {
        what: &'static str,
        t: f64,
        #[source]
        source: EvalError,
    },
    #[error("kernel mu(t, s) at (t = {t}, s = {s}): {source}")]
    Kernel {
        t: f64,
        s: f64,
        #[source]
        source: EvalError,
    },
    #[error("integrand zeta(s, x) at (s = {s}, x = {x}) for t = {t}: {source}")]
    Integrand {
        t: f64,
        s: f64,
        x: f64,
        #[source]
        source: EvalError,
    },
}

pub type Result<T> = std::result::Result<T, FuncSpaceError>;

#[derive(Debug)]
struct GridData {
    t_max: f64,
    h: f64,
    nodes: Vec<f64>,
}

/// Uniform grid `0 = t_0 < … < t_{n-1} = t_max`. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Grid(Arc<GridData>);

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.t_max == other.0.t_max && self.0.nodes.len() == other.0.nodes.len())
    }
}

impl Grid {
    pub fn new(t_max: f64, n: usize) -> Result<Grid> {
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(FuncSpaceError::InvalidArgument(format!(
                "t_max must be positive and finite, got {t_max}"
            )));
        }
        if n < 3 {
            return Err(FuncSpaceError::InvalidArgument(format!(
                "grid needs at least 3 nodes, got {n}"
            )));
        }
        let h = t_max / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        nodes[n - 1] = t_max;
        Ok(Grid(Arc::new(GridData { t_max, h, nodes })))
    }

    pub fn t_max(&self) -> f64 {
        self.0.t_max
    }

    pub fn len(&self) -> usize {
        self.0.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.0.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.0.nodes
    }

    pub fn node(&self, i: usize) -> f64 {
        self.0.nodes[i]
    }

    /// Index of the node equal to `t` (up to snapping tolerance), if any.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        if !(0.0..=self.t_max() * (1.0 + SNAP_TOL)).contains(&t) {
            return None;
        }
        let r = t / self.spacing();
        let k = r.round();
        ((r - k).abs() <= SNAP_TOL * r.max(1.0)).then(|| (k as usize).min(self.len() - 1))
    }

    /// Index of the last node `<= t`. `t` must be non-negative.
    pub fn floor_index(&self, t: f64) -> usize {
        let k = (t / self.spacing() + SNAP_TOL).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.len() - 1)
        }
    }

    /// Number of grid steps spanned by a window of width `eps`.
    pub fn window_steps(&self, eps: f64) -> usize {
        (eps / self.spacing() + SNAP_TOL).floor().max(0.0) as usize
    }
}

/// Values of a function at the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(FuncSpaceError::InvalidArgument(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FuncSpaceError::InvalidArgument(format!(
                "non-finite value {} at node {i}",
                values[i]
            )));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        GridFunction {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f` at every node. Panics if `f` returns a non-finite value.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        let values: Vec<f64> = grid.nodes().iter().map(|&t| f(t)).collect();
        GridFunction::new(grid.clone(), values).expect("sampled function must be finite")
    }

    /// Samples an expression over the single variable `t`.
    pub fn from_expr(grid: &Grid, e: &Expr) -> Result<Self> {
        let values = grid
            .nodes()
            .iter()
            .map(|&t| {
                e.eval(&[t]).map_err(|source| FuncSpaceError::Eval {
                    what: "function",
                    t,
                    source,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GridFunction {
            grid: grid.clone(),
            values,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Piecewise-linear interpolation, exact at nodes.
    pub fn eval_interp(&self, t: f64) -> Result<f64> {
        let t_max = self.grid.t_max();
        if !(0.0..=t_max).contains(&t) {
            return Err(FuncSpaceError::OutOfRange { t, t_max });
        }
        if let Some(k) = self.grid.node_index(t) {
            return Ok(self.values[k]);
        }
        let k = self.grid.floor_index(t).min(self.grid.len() - 2);
        let (t0, t1) = (self.grid.node(k), self.grid.node(k + 1));
        let w = (t - t0) / (t1 - t0);
        Ok(self.values[k] + w * (self.values[k + 1] - self.values[k]))
    }

    /// `max_k |f(t_k) - g(t_k)|`.
    pub fn sup_dist(&self, other: &GridFunction) -> Result<f64> {
        if self.grid != other.grid {
            return Err(FuncSpaceError::GridMismatch);
        }
        Ok(exec::max_of(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (a - b).abs()),
        )
        .max(0.0))
    }

    pub fn sup_norm(&self) -> f64 {
        exec::max_of(self.values.iter().map(|v| v.abs()))
    }

    /// `w^L(f, eps)`: largest `|f(t_i) - f(t_j)|` over nodes `t_i, t_j <= L`
    /// with `|t_i - t_j| <= eps`.
    pub fn modulus(&self, l: f64, eps: f64) -> Result<f64> {
        check_modulus_args(&self.grid, l, eps)?;
        Ok(modulus_unchecked(
            &self.values,
            self.grid.floor_index(l),
            self.grid.window_steps(eps),
        ))
    }
}

fn check_modulus_args(grid: &Grid, l: f64, eps: f64) -> Result<()> {
    if !(l > 0.0 && l <= grid.t_max() * (1.0 + SNAP_TOL)) {
        return Err(FuncSpaceError::InvalidArgument(format!(
            "L = {l} must lie in (0, {}]",
            grid.t_max()
        )));
    }
    if !(eps.is_finite() && eps >= 2.0 * grid.spacing() * (1.0 - SNAP_TOL)) {
        return Err(FuncSpaceError::InvalidArgument(format!(
            "eps = {eps} must be at least twice the grid spacing {}",
            grid.spacing()
        )));
    }
    Ok(())
}

fn modulus_unchecked(values: &[f64], last: usize, window: usize) -> f64 {
    let mut best = 0.0f64;
    for i in 0..=last {
        let vi = values[i];
        for &vj in &values[i + 1..=(i + window).min(last)] {
            best = best.max((vj - vi).abs());
        }
    }
    best
}

/// Truncation lengths `L` and resolutions `eps` at which moduli are tabulated.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulusParams {
    l_list: Vec<f64>,
    eps_list: Vec<f64>,
}

impl ModulusParams {
    /// Validates the lists against `grid`, snapping each `L` down to a node.
    pub fn new(grid: &Grid, l_list: &[f64], eps_list: &[f64]) -> Result<Self> {
        if l_list.is_empty() || eps_list.is_empty() {
            return Err(FuncSpaceError::InvalidArgument(
                "L and eps lists must be non-empty".into(),
            ));
        }
        for &l in l_list {
            check_modulus_args(grid, l, eps_list[0])?;
        }
        for &e in eps_list {
            check_modulus_args(grid, grid.t_max(), e)?;
        }
        if l_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FuncSpaceError::InvalidArgument(
                "L list must be strictly increasing".into(),
            ));
        }
        if eps_list.windows(2).any(|w| w[0] <= w[1]) {
            return Err(FuncSpaceError::InvalidArgument(
                "eps list must be strictly decreasing".into(),
            ));
        }
        let l_list = l_list
            .iter()
            .map(|&l| grid.node(grid.floor_index(l)))
            .collect();
        Ok(ModulusParams {
            l_list,
            eps_list: eps_list.to_vec(),
        })
    }

    /// `L ∈ {t_max/4, t_max/2, t_max}`, `eps ∈ {16h, 8h, 4h, 2h}`.
    pub fn default_for(grid: &Grid) -> Self {
        let t = grid.t_max();
        let h = grid.spacing();
        ModulusParams::new(grid, &[t / 4.0, t / 2.0, t], &[16.0 * h, 8.0 * h, 4.0 * h, 2.0 * h])
            .expect("default modulus parameters are valid on any grid")
    }

    pub fn l_list(&self) -> &[f64] {
        &self.l_list
    }

    pub fn eps_list(&self) -> &[f64] {
        &self.eps_list
    }

    pub fn l_max(&self) -> f64 {
        *self.l_list.last().unwrap()
    }

    pub fn eps_min(&self) -> f64 {
        *self.eps_list.last().unwrap()
    }
}

/// A finite, non-empty set of grid functions on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    grid: Grid,
    members: Vec<GridFunction>,
}

impl Ensemble {
    pub fn new(members: Vec<GridFunction>) -> Result<Self> {
        let grid = members
            .first()
            .ok_or_else(|| FuncSpaceError::InvalidArgument("ensemble must be non-empty".into()))?
            .grid()
            .clone();
        if members.iter().any(|m| m.grid() != &grid) {
            return Err(FuncSpaceError::GridMismatch);
        }
        Ok(Ensemble { grid, members })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn members(&self) -> &[GridFunction] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// `w^L(A; eps) = max_{x ∈ A} w^L(x, eps)`.
    pub fn modulus(&self, l: f64, eps: f64) -> Result<f64> {
        check_modulus_args(&self.grid, l, eps)?;
        let last = self.grid.floor_index(l);
        let window = self.grid.window_steps(eps);
        Ok(exec::max_of(exec::map_range(self.members.len(), |i| {
            modulus_unchecked(self.members[i].values(), last, window)
        })))
    }

    /// Smallest and largest member value at every node.
    pub fn envelope(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.len();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for m in &self.members {
            for ((l, h), &v) in lo.iter_mut().zip(hi.iter_mut()).zip(m.values()) {
                *l = l.min(v);
                *h = h.max(v);
            }
        }
        (lo, hi)
    }
}

/// Compensated (Neumaier) running sum.
#[derive(Default, Clone, Copy)]
struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

/// Cumulative trapezoid rule for `I(t_k) = ∫_0^{t_k} μ(t_k, s) ζ(s, x(s)) ds`.
///
/// `mu` is over `(t, s)` and `zeta` over `(s, x)`. The triangle of kernel values
/// `μ(t_k, s_j)`, `j <= k`, does not depend on `x`; it is tabulated once when it
/// fits under the cache limit, otherwise recomputed per call. Either way each
/// prefix is summed in the same fixed order, so results are bit-identical.
#[derive(Debug, Clone)]
pub struct KernelQuadrature {
    mu: Expr,
    zeta: Expr,
    grid: Grid,
    table: Option<Arc<Vec<f64>>>,
}

/// Default cap on tabulated kernel values (128 MiB of `f64`).
pub const DEFAULT_KERNEL_CACHE: usize = 16 * 1024 * 1024;

#[inline]
fn tri_offset(k: usize) -> usize {
    k * (k + 1) / 2
}

impl KernelQuadrature {
    pub fn new(mu: &Expr, zeta: &Expr, grid: &Grid, cache_limit: usize) -> Result<Self> {
        if mu.vars().len() != 2 || zeta.vars().len() != 2 {
            return Err(FuncSpaceError::InvalidArgument(
                "mu must bind (t, s) and zeta must bind (s, x)".into(),
            ));
        }
        let mut q = KernelQuadrature {
            mu: mu.clone(),
            zeta: zeta.clone(),
            grid: grid.clone(),
            table: None,
        };
        let n = grid.len();
        if tri_offset(n) <= cache_limit {
            // Fill in blocks of rows so peak memory stays close to the table size.
            let mut table = Vec::with_capacity(tri_offset(n));
            let block = 256;
            for start in (0..n).step_by(block) {
                let rows = exec::try_map_range(block.min(n - start), |i| q.kernel_row(start + i))?;
                for row in rows {
                    table.extend_from_slice(&row);
                }
            }
            q.table = Some(Arc::new(table));
        }
        Ok(q)
    }

    /// Same kernel `μ` (and its table, if any) with a different `ζ`.
    pub fn with_zeta(&self, zeta: &Expr) -> Self {
        KernelQuadrature {
            mu: self.mu.clone(),
            zeta: zeta.clone(),
            grid: self.grid.clone(),
            table: self.table.clone(),
        }
    }

    pub fn uncached(mu: &Expr, zeta: &Expr, grid: &Grid) -> Self {
        KernelQuadrature {
            mu: mu.clone(),
            zeta: zeta.clone(),
            grid: grid.clone(),
            table: None,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn is_tabulated(&self) -> bool {
        self.table.is_some()
    }

    fn kernel_row(&self, k: usize) -> Result<Vec<f64>> {
        let nodes = self.grid.nodes();
        let t = nodes[k];
        nodes[..=k]
            .iter()
            .map(|&s| {
                self.mu
                    .eval(&[t, s])
                    .map_err(|source| FuncSpaceError::Kernel { t, s, source })
            })
            .collect()
    }

    /// `ζ(s_j, x(s_j))` at every node.
    pub fn integrand_values(&self, x: &GridFunction) -> Result<Vec<f64>> {
        if x.grid() != &self.grid {
            return Err(FuncSpaceError::GridMismatch);
        }
        self.grid
            .nodes()
            .iter()
            .zip(x.values())
            .map(|(&s, &xv)| {
                self.zeta.eval(&[s, xv]).map_err(|source| FuncSpaceError::Integrand {
                    t: s,
                    s,
                    x: xv,
                    source,
                })
            })
            .collect()
    }

    /// Integral up to node `k` given precomputed `ζ` values.
    fn prefix(&self, k: usize, z: &[f64]) -> Result<f64> {
        if k == 0 {
            return Ok(0.0);
        }
        let h = self.grid.spacing();
        let mut acc = Accumulator::default();
        match &self.table {
            Some(table) => {
                let row = &table[tri_offset(k)..tri_offset(k) + k + 1];
                acc.add(0.5 * (row[0] * z[0]));
                for j in 1..k {
                    acc.add(row[j] * z[j]);
                }
                acc.add(0.5 * (row[k] * z[k]));
            }
            None => {
                let nodes = self.grid.nodes();
                let t = nodes[k];
                let mu = |s: f64| {
                    self.mu
                        .eval(&[t, s])
                        .map_err(|source| FuncSpaceError::Kernel { t, s, source })
                };
                acc.add(0.5 * (mu(nodes[0])? * z[0]));
                for j in 1..k {
                    acc.add(mu(nodes[j])? * z[j]);
                }
                acc.add(0.5 * (mu(nodes[k])? * z[k]));
            }
        }
        Ok(h * acc.value())
    }

    pub fn integrate(&self, x: &GridFunction) -> Result<GridFunction> {
        let z = self.integrand_values(x)?;
        let values = exec::try_map_range(self.grid.len(), |k| self.prefix(k, &z))?;
        GridFunction::new(self.grid.clone(), values)
    }

    /// Sequential reference path, identical arithmetic to [`Self::integrate`].
    pub fn integrate_seq(&self, x: &GridFunction) -> Result<GridFunction> {
        let z = self.integrand_values(x)?;
        let values = exec::map_range_seq(self.grid.len(), |k| self.prefix(k, &z))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        GridFunction::new(self.grid.clone(), values)
    }

    #[cfg(feature = "parallel")]
    pub fn integrate_par(&self, x: &GridFunction) -> Result<GridFunction> {
        let z = self.integrand_values(x)?;
        let values = exec::map_range_par(self.grid.len(), |k| self.prefix(k, &z))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        GridFunction::new(self.grid.clone(), values)
    }
}

/// One-shot cumulative kernel integral on `x`'s grid, without tabulation.
pub fn cumulative_kernel_integral(mu: &Expr, zeta: &Expr, x: &GridFunction) -> Result<GridFunction> {
    KernelQuadrature::uncached(mu, zeta, x.grid()).integrate(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use proptest::prelude::*;

    fn kernel(mu: &str, zeta: &str) -> (Expr, Expr) {
        (parse(mu, &["t", "s"]).unwrap(), parse(zeta, &["s", "x"]).unwrap())
    }

    #[test]
    fn grid_construction() {
        let g = Grid::new(1.0, 3).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.5, 1.0]);
        assert_eq!(Grid::new(10.0, 11).unwrap().spacing(), 1.0);
        assert!(Grid::new(-1.0, 5).is_err());
        assert!(Grid::new(1.0, 2).is_err());
        assert!(Grid::new(f64::NAN, 5).is_err());
    }

    #[test]
    fn node_lookup() {
        let g = Grid::new(30.0, 4001).unwrap();
        assert_eq!(g.node_index(22.5), Some(3000));
        assert_eq!(g.node_index(0.0), Some(0));
        assert_eq!(g.node_index(30.0), Some(4000));
        assert_eq!(g.node_index(0.004), None);
        assert_eq!(g.floor_index(0.004), 0);
        assert_eq!(g.window_steps(2.0 * g.spacing()), 2);
    }

    #[test]
    fn interpolation() {
        let g = Grid::new(1.0, 11).unwrap();
        let f = GridFunction::from_fn(&g, |t| t);
        assert!((f.eval_interp(0.25).unwrap() - 0.25).abs() < 1e-15);
        let c = GridFunction::constant(&g, 3.5);
        assert_eq!(c.eval_interp(0.37).unwrap(), 3.5);
        assert_eq!(f.eval_interp(0.3).unwrap(), f.values()[3]);
        assert!(matches!(f.eval_interp(2.0), Err(FuncSpaceError::OutOfRange { .. })));
        assert!(f.eval_interp(-0.1).is_err());
    }

    #[test]
    fn sup_distance() {
        let g = Grid::new(1.0, 11).unwrap();
        let one = GridFunction::constant(&g, 1.0);
        let zero = GridFunction::constant(&g, 0.0);
        assert_eq!(one.sup_dist(&zero).unwrap(), 1.0);
        assert_eq!(one.sup_dist(&one).unwrap(), 0.0);
        let a = GridFunction::from_fn(&g, |t| t);
        let b = GridFunction::from_fn(&g, |t| t * t);
        assert!((a.sup_dist(&b).unwrap() - 0.25).abs() < 1e-15);
        let other = GridFunction::constant(&Grid::new(2.0, 11).unwrap(), 0.0);
        assert_eq!(one.sup_dist(&other), Err(FuncSpaceError::GridMismatch));
    }

    #[test]
    fn non_finite_values_rejected() {
        let g = Grid::new(1.0, 3).unwrap();
        assert!(GridFunction::new(g.clone(), vec![0.0, f64::NAN, 1.0]).is_err());
        assert!(GridFunction::new(g, vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn modulus_examples() {
        let g = Grid::new(1.0, 101).unwrap();
        let f = GridFunction::from_fn(&g, |t| t);
        assert!((f.modulus(1.0, 0.1).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(GridFunction::constant(&g, 2.0).modulus(1.0, 0.1).unwrap(), 0.0);
        assert!(f.modulus(1.0, 0.01).is_err());
        assert!(f.modulus(0.0, 0.1).is_err());
        assert!(f.modulus(1.5, 0.1).is_err());
    }

    fn brute_modulus(f: &GridFunction, l: f64, eps: f64) -> f64 {
        let t = f.grid().nodes();
        let v = f.values();
        let mut best = 0.0f64;
        for i in 0..t.len() {
            for j in 0..t.len() {
                if t[i] <= l + 1e-12 && t[j] <= l + 1e-12 && (t[i] - t[j]).abs() <= eps + 1e-12 {
                    best = best.max((v[i] - v[j]).abs());
                }
            }
        }
        best
    }

    #[test]
    fn modulus_of_sine_matches_pair_scan() {
        let g = Grid::new(4.0, 801).unwrap();
        let h = g.spacing();
        let f = GridFunction::from_fn(&g, f64::sin);
        let pi = std::f64::consts::PI;
        let w = f.modulus(pi, 0.05).unwrap();
        assert_eq!(w, brute_modulus(&f, pi, 0.05));
        let bound = 2.0 * (0.025f64).sin();
        assert!(w <= bound + 1e-15);
        assert!(bound - w <= 2.0 * h);
    }

    #[test]
    fn ensemble_modulus_examples() {
        let g = Grid::new(1.0, 101).unwrap();
        let a = Ensemble::new(vec![
            GridFunction::from_fn(&g, |t| t),
            GridFunction::from_fn(&g, |t| 2.0 * t),
        ])
        .unwrap();
        assert!((a.modulus(1.0, 0.1).unwrap() - 0.2).abs() < 1e-12);
        let single = Ensemble::new(vec![GridFunction::constant(&g, 4.0)]).unwrap();
        assert_eq!(single.modulus(1.0, 0.1).unwrap(), 0.0);
        assert!(Ensemble::new(vec![]).is_err());
    }

    #[test]
    fn ensemble_modulus_is_member_max() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let g = Grid::new(3.0, 301).unwrap();
        let members: Vec<_> = (0..5)
            .map(|_| {
                let vals = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                GridFunction::new(g.clone(), vals).unwrap()
            })
            .collect();
        let oracle = members
            .iter()
            .map(|m| brute_modulus(m, 2.0, 0.05))
            .fold(0.0, f64::max);
        let a = Ensemble::new(members).unwrap();
        assert_eq!(a.modulus(2.0, 0.05).unwrap(), oracle);
    }

    #[test]
    fn modulus_params_validation() {
        let g = Grid::new(10.0, 101).unwrap();
        let mp = ModulusParams::new(&g, &[2.55, 10.0], &[0.5, 0.2]).unwrap();
        assert_eq!(mp.l_list()[0], g.node(25));
        assert_eq!(mp.l_max(), 10.0);
        assert_eq!(mp.eps_min(), 0.2);
        assert!(ModulusParams::new(&g, &[10.0, 5.0], &[0.5]).is_err());
        assert!(ModulusParams::new(&g, &[10.0], &[0.1]).is_err());
        assert!(ModulusParams::new(&g, &[10.0], &[0.2, 0.5]).is_err());
        assert!(ModulusParams::new(&g, &[], &[0.5]).is_err());
        let d = ModulusParams::default_for(&g);
        assert!((d.eps_min() - 2.0 * g.spacing()).abs() < 1e-15);
    }

    #[test]
    fn constant_kernel_is_exact() {
        let g = Grid::new(5.0, 51).unwrap();
        let (mu, zeta) = kernel("1", "1");
        let x = GridFunction::constant(&g, 0.0);
        let i = cumulative_kernel_integral(&mu, &zeta, &x).unwrap();
        assert_eq!(i.values()[0], 0.0);
        for (t, v) in g.nodes().iter().zip(i.values()) {
            assert!((t - v).abs() <= 4.0 * f64::EPSILON * t.max(1.0), "{t} vs {v}");
        }
        let (mu, zeta) = kernel("1", "x");
        let two = GridFunction::constant(&g, 2.0);
        let i = cumulative_kernel_integral(&mu, &zeta, &two).unwrap();
        for (t, v) in g.nodes().iter().zip(i.values()) {
            assert!((2.0 * t - v).abs() <= 4.0 * f64::EPSILON * t.max(1.0));
        }
    }

    #[test]
    fn convolution_kernel_matches_closed_form() {
        let g = Grid::new(30.0, 4001).unwrap();
        let (mu, zeta) = kernel("exp(-(t-s))", "exp(-s)");
        let x = GridFunction::constant(&g, 0.0);
        let i = cumulative_kernel_integral(&mu, &zeta, &x).unwrap();
        let err = g
            .nodes()
            .iter()
            .zip(i.values())
            .map(|(t, v)| (t * (-t).exp() - v).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "max error {err}");
    }

    fn curved_error(n: usize) -> f64 {
        // ∫_0^t e^{-(t-s)} sin(s) ds = (sin t - cos t + e^{-t}) / 2
        let g = Grid::new(10.0, n).unwrap();
        let (mu, zeta) = kernel("exp(-(t-s))", "sin(s)");
        let x = GridFunction::constant(&g, 0.0);
        let i = cumulative_kernel_integral(&mu, &zeta, &x).unwrap();
        g.nodes()
            .iter()
            .zip(i.values())
            .map(|(&t, v)| ((t.sin() - t.cos() + (-t).exp()) / 2.0 - v).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn trapezoid_converges_at_second_order() {
        let e1 = curved_error(401);
        let e2 = curved_error(801);
        let ratio = e1 / e2;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn kernel_with_wrong_bindings_is_rejected() {
        let g = Grid::new(1.0, 11).unwrap();
        let mu = parse("t", &["t"]).unwrap();
        let zeta = parse("x", &["s", "x"]).unwrap();
        assert!(matches!(
            KernelQuadrature::new(&mu, &zeta, &g, 0),
            Err(FuncSpaceError::InvalidArgument(_))
        ));
        let x = GridFunction::constant(&g, 1.0);
        assert!(KernelQuadrature::uncached(&mu, &zeta, &g).integrate(&x).is_err());
    }

    #[test]
    fn tabulated_matches_on_the_fly() {
        let g = Grid::new(6.0, 301).unwrap();
        let (mu, zeta) = kernel("exp(-(t-s))*(1+s)", "exp(-s)*x/(1+x^2)");
        let x = GridFunction::from_fn(&g, |t| (3.0 * t).sin());
        let cached = KernelQuadrature::new(&mu, &zeta, &g, usize::MAX).unwrap();
        assert!(cached.is_tabulated());
        let a = cached.integrate(&x).unwrap();
        let b = cumulative_kernel_integral(&mu, &zeta, &x).unwrap();
        let c = cached.integrate_seq(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn domain_errors_carry_location() {
        let g = Grid::new(2.0, 5).unwrap();
        let (mu, zeta) = kernel("1/(t-s-1)", "1");
        let x = GridFunction::constant(&g, 0.0);
        match cumulative_kernel_integral(&mu, &zeta, &x) {
            Err(FuncSpaceError::Kernel { t, s, .. }) => assert_eq!((t, s), (1.0, 0.0)),
            other => panic!("unexpected {other:?}"),
        }
        let (mu, zeta) = kernel("1", "ln(x)");
        match cumulative_kernel_integral(&mu, &zeta, &x) {
            Err(FuncSpaceError::Integrand { s, x, .. }) => assert_eq!((s, x), (0.0, 0.0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn grid_fn_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn modulus_monotone_in_l_and_eps(
            vals in grid_fn_strategy(61),
            l1 in 1.0f64..6.0, dl in 0.0f64..3.0,
            e1 in 0.2f64..1.0, de in 0.0f64..1.0,
        ) {
            let g = Grid::new(6.0, 61).unwrap();
            let f = GridFunction::new(g, vals).unwrap();
            let l2 = (l1 + dl).min(6.0);
            prop_assert!(f.modulus(l1, e1).unwrap() <= f.modulus(l2, e1).unwrap());
            prop_assert!(f.modulus(l1, e1).unwrap() <= f.modulus(l1, e1 + de).unwrap());
        }

        #[test]
        fn union_modulus_is_max(a in grid_fn_strategy(41), b in grid_fn_strategy(41), c in grid_fn_strategy(41)) {
            let g = Grid::new(4.0, 41).unwrap();
            let fa = GridFunction::new(g.clone(), a).unwrap();
            let fb = GridFunction::new(g.clone(), b).unwrap();
            let fc = GridFunction::new(g, c).unwrap();
            let ea = Ensemble::new(vec![fa.clone()]).unwrap();
            let eb = Ensemble::new(vec![fb.clone(), fc.clone()]).unwrap();
            let eab = Ensemble::new(vec![fa, fb, fc]).unwrap();
            let m = |e: &Ensemble| e.modulus(3.0, 0.3).unwrap();
            prop_assert_eq!(m(&eab), m(&ea).max(m(&eb)));
        }

        #[test]
        fn quadrature_linear_in_integrand(p in 0.1f64..3.0, q in 0.1f64..3.0) {
            let g = Grid::new(8.0, 401).unwrap();
            let mu = parse("exp(-(t-s)/2)", &["t", "s"]).unwrap();
            let z1 = format!("{p}*exp(-s)*(1+x^2)");
            let z2 = format!("{q}/(1+s+x^2)");
            let z12 = format!("{z1} + {z2}");
            let x = GridFunction::from_fn(&g, |t| t.cos());
            let run = |z: &str| {
                let zeta = parse(z, &["s", "x"]).unwrap();
                cumulative_kernel_integral(&mu, &zeta, &x).unwrap()
            };
            let (i1, i2, i12) = (run(&z1), run(&z2), run(&z12));
            for k in 0..g.len() {
                let sum = i1.values()[k] + i2.values()[k];
                let tol = 4.0 * f64::EPSILON * sum.abs();
                prop_assert!((i12.values()[k] - sum).abs() <= tol,
                    "node {}: {} vs {}", k, i12.values()[k], sum);
            }
        }
    }
}
