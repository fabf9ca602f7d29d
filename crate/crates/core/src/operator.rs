//! The quadratic integral operator
//! `(Tx)(t) = g(t, x(t)) + λ · I₁[x](t) · I₂[x](t)` and its Picard iteration.

use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::expr::{self, EvalError, Expr, ParseError};
use crate::funcspace::{FuncSpaceError, Grid, GridFunction, KernelQuadrature, DEFAULT_KERNEL_CACHE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("cannot parse `{slot}`: {source}")]
    Parse {
        slot: &'static str,
        #[source]
        source: ParseError,
    },
    #[error("lambda must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("g(t, x) at (t = {t}, x = {x}): {source}")]
    Coefficient {
        t: f64,
        x: f64,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    FuncSpace(#[from] FuncSpaceError),
}

pub type Result<T> = std::result::Result<T, OperatorError>;

pub const G_VARS: [&str; 2] = ["t", "x"];
pub const MU_VARS: [&str; 2] = ["t", "s"];
pub const ZETA_VARS: [&str; 2] = ["s", "x"];

/// Coefficients of one equation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub g: Expr,
    pub mu1: Expr,
    pub mu2: Expr,
    pub zeta1: Expr,
    pub zeta2: Expr,
    pub lambda: f64,
}

impl ProblemSpec {
    pub fn new(g: Expr, mu1: Expr, mu2: Expr, zeta1: Expr, zeta2: Expr, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(OperatorError::InvalidLambda(lambda));
        }
        let slots: [(&str, &Expr, &[&str; 2]); 5] = [
            ("g", &g, &G_VARS),
            ("mu1", &mu1, &MU_VARS),
            ("mu2", &mu2, &MU_VARS),
            ("zeta1", &zeta1, &ZETA_VARS),
            ("zeta2", &zeta2, &ZETA_VARS),
        ];
        for (name, e, vars) in slots {
            if e.vars() != vars.as_slice() {
                return Err(OperatorError::InvalidArgument(format!(
                    "{name} must be declared over ({}), got ({})",
                    vars.join(", "),
                    e.vars().join(", ")
                )));
            }
        }
        Ok(ProblemSpec {
            g,
            mu1,
            mu2,
            zeta1,
            zeta2,
            lambda,
        })
    }

    /// Parses the five coefficient strings.
    pub fn parse(g: &str, mu1: &str, mu2: &str, zeta1: &str, zeta2: &str, lambda: f64) -> Result<Self> {
        let p = |slot: &'static str, src: &str, vars: &[&str]| {
            expr::parse(src, vars).map_err(|source| OperatorError::Parse { slot, source })
        };
        ProblemSpec::new(
            p("g", g, &G_VARS)?,
            p("mu1", mu1, &MU_VARS)?,
            p("mu2", mu2, &MU_VARS)?,
            p("zeta1", zeta1, &ZETA_VARS)?,
            p("zeta2", zeta2, &ZETA_VARS)?,
            lambda,
        )
    }

    /// `x/3 + 1`, `μᵢ = exp(-(t-s))`, `ζ₁ = exp(-s)·x/(1+x²)`, `ζ₂ = exp(-s)/(1+x²)`, `λ = 1`.
    pub fn benchmark_b1() -> Self {
        ProblemSpec::parse(
            "x/3 + 1",
            "exp(-(t-s))",
            "exp(-(t-s))",
            "exp(-s)*x/(1+x^2)",
            "exp(-s)/(1+x^2)",
            1.0,
        )
        .expect("benchmark coefficients parse")
    }
}

/// A [`ProblemSpec`] bound to a grid, with kernel tables prepared for repeated application.
#[derive(Debug, Clone)]
pub struct Operator {
    spec: ProblemSpec,
    grid: Grid,
    q1: KernelQuadrature,
    q2: KernelQuadrature,
}

impl Operator {
    pub fn new(spec: &ProblemSpec, grid: &Grid) -> Result<Self> {
        Operator::with_cache_limit(spec, grid, DEFAULT_KERNEL_CACHE)
    }

    /// Tabulates kernels whose triangle has at most `cache_limit` entries.
    /// Identical `μ₁` and `μ₂` share one table.
    pub fn with_cache_limit(spec: &ProblemSpec, grid: &Grid, cache_limit: usize) -> Result<Self> {
        let q1 = KernelQuadrature::new(&spec.mu1, &spec.zeta1, grid, cache_limit)?;
        let q2 = if spec.mu2 == spec.mu1 {
            q1.with_zeta(&spec.zeta2)
        } else {
            KernelQuadrature::new(&spec.mu2, &spec.zeta2, grid, cache_limit)?
        };
        Ok(Operator {
            spec: spec.clone(),
            grid: grid.clone(),
            q1,
            q2,
        })
    }

    pub fn uncached(spec: &ProblemSpec, grid: &Grid) -> Self {
        Operator {
            spec: spec.clone(),
            grid: grid.clone(),
            q1: KernelQuadrature::uncached(&spec.mu1, &spec.zeta1, grid),
            q2: KernelQuadrature::uncached(&spec.mu2, &spec.zeta2, grid),
        }
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn quadratures(&self) -> (&KernelQuadrature, &KernelQuadrature) {
        (&self.q1, &self.q2)
    }

    /// Both cumulative integrals `(I₁[x], I₂[x])`.
    pub fn integrals(&self, x: &GridFunction) -> Result<(GridFunction, GridFunction)> {
        Ok((self.q1.integrate(x)?, self.q2.integrate(x)?))
    }

    pub fn apply(&self, x: &GridFunction) -> Result<GridFunction> {
        let (i1, i2) = self.integrals(x)?;
        self.combine(x, &i1, &i2)
    }

    fn combine(&self, x: &GridFunction, i1: &GridFunction, i2: &GridFunction) -> Result<GridFunction> {
        let lambda = self.spec.lambda;
        let values = self
            .grid
            .nodes()
            .iter()
            .zip(x.values())
            .zip(i1.values().iter().zip(i2.values()))
            .map(|((&t, &xv), (&a, &b))| {
                let g = self
                    .spec
                    .g
                    .eval(&[t, xv])
                    .map_err(|source| OperatorError::Coefficient { t, x: xv, source })?;
                Ok(g + lambda * (a * b))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GridFunction::new(self.grid.clone(), values)?)
    }

    /// `‖Tx - x‖∞`.
    pub fn residual(&self, x: &GridFunction) -> Result<f64> {
        Ok(self.apply(x)?.sup_dist(x)?)
    }

    /// Iterates `x_{k+1} = T x_k` from `x0` until `‖T x_k - x_k‖∞ <= tol` or
    /// `max_iter` applications of `T`. Running out of iterations is reported,
    /// not treated as an error.
    pub fn picard_solve(&self, x0: &GridFunction, tol: f64, max_iter: usize) -> Result<SolveReport> {
        if tol.is_nan() || tol <= 0.0 || max_iter == 0 {
            return Err(OperatorError::InvalidArgument(format!(
                "need tol > 0 and max_iter >= 1, got tol = {tol}, max_iter = {max_iter}"
            )));
        }
        if x0.grid() != &self.grid {
            return Err(FuncSpaceError::GridMismatch.into());
        }
        let start = Instant::now();
        let mut x = x0.clone();
        let mut residuals = Vec::new();
        let mut converged = false;
        for _ in 0..max_iter {
            let tx = self.apply(&x)?;
            let r = tx.sup_dist(&x)?;
            residuals.push(r);
            if r <= tol {
                converged = true;
                // x is within tol of its image; keep the image as the better iterate.
                x = tx;
                break;
            }
            x = tx;
        }
        Ok(SolveReport {
            iterations: residuals.len(),
            residuals,
            converged,
            solution: x,
            elapsed: start.elapsed(),
        })
    }
}

/// Outcome of a Picard run.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    /// `‖T x_k - x_k‖∞` for each iterate, in order.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub solution: GridFunction,
    pub elapsed: Duration,
}

/// Serializable view of a [`SolveReport`] without wall-clock data.
#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub residuals: Vec<f64>,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
}

impl SolveReport {
    pub fn summary(&self) -> SolveSummary {
        SolveSummary {
            iterations: self.iterations,
            converged: self.converged,
            final_residual: *self.residuals.last().unwrap_or(&f64::NAN),
            residuals: self.residuals.clone(),
            t: self.solution.grid().nodes().to_vec(),
            x: self.solution.values().to_vec(),
        }
    }
}

/// One-shot application of `T` without kernel tabulation.
pub fn apply_t(p: &ProblemSpec, x: &GridFunction) -> Result<GridFunction> {
    Operator::uncached(p, x.grid()).apply(x)
}

pub fn residual(p: &ProblemSpec, x: &GridFunction) -> Result<f64> {
    Operator::uncached(p, x.grid()).residual(x)
}

pub fn picard_solve(p: &ProblemSpec, x0: &GridFunction, tol: f64, max_iter: usize) -> Result<SolveReport> {
    Operator::new(p, x0.grid())?.picard_solve(x0, tol, max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t_max: f64, n: usize) -> Grid {
        Grid::new(t_max, n).unwrap()
    }

    #[test]
    fn annihilated_quadratic_term() {
        let p = ProblemSpec::parse("0", "exp(-(t-s))", "1", "0", "x^2+1", 2.5).unwrap();
        let g = grid(5.0, 51);
        let x = GridFunction::from_fn(&g, |t| t.sin());
        let tx = apply_t(&p, &x).unwrap();
        assert!(tx.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_kernels_give_t_squared() {
        let p = ProblemSpec::parse("0", "1", "1", "1", "1", 1.0).unwrap();
        let g = grid(4.0, 41);
        for x in [GridFunction::constant(&g, 0.0), GridFunction::from_fn(&g, |t| t.cos())] {
            let tx = apply_t(&p, &x).unwrap();
            for (t, v) in g.nodes().iter().zip(tx.values()) {
                assert!((t * t - v).abs() <= 1e-13 * t.max(1.0) * t.max(1.0));
            }
        }
    }

    #[test]
    fn benchmark_at_zero_maps_to_one() {
        let p = ProblemSpec::benchmark_b1();
        let g = grid(30.0, 301);
        let tx = apply_t(&p, &GridFunction::constant(&g, 0.0)).unwrap();
        assert!(tx.values().iter().all(|&v| v == 1.0));
        assert_eq!(residual(&p, &GridFunction::constant(&g, 0.0)).unwrap(), 1.0);
    }

    #[test]
    fn residual_examples() {
        let p = ProblemSpec::parse("0", "1", "1", "1", "1", 1.0).unwrap();
        let g = grid(2.0, 5);
        let fixed = GridFunction::from_fn(&g, |t| t * t);
        assert_eq!(residual(&p, &fixed).unwrap(), 0.0);
        let zero = GridFunction::constant(&g, 0.0);
        assert_eq!(residual(&p, &zero).unwrap(), 4.0);
    }

    #[test]
    fn halving_map_converges_geometrically() {
        let p = ProblemSpec::parse("x/2", "1", "1", "0", "1", 3.0).unwrap();
        let g = grid(1.0, 11);
        let rep = picard_solve(&p, &GridFunction::constant(&g, 8.0), 1e-9, 100).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 34, "{}", rep.iterations);
        for w in rep.residuals.windows(2) {
            assert_eq!(w[1], w[0] / 2.0);
        }
        assert_eq!(rep.residuals.len(), rep.iterations);
        assert!(*rep.residuals.last().unwrap() <= 1e-9);
    }

    #[test]
    fn constant_map_converges_in_two() {
        let p = ProblemSpec::parse("3", "exp(-t)", "1", "exp(-s)", "2", 1.0).unwrap();
        let g = grid(3.0, 31);
        let rep = picard_solve(&p, &GridFunction::constant(&g, 0.0), 1e-12, 10).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 2);
        assert_eq!(rep.residuals[1], 0.0);
    }

    #[test]
    fn non_convergence_is_reported() {
        let p = ProblemSpec::parse("x/2", "1", "1", "0", "1", 1.0).unwrap();
        let g = grid(1.0, 11);
        let rep = picard_solve(&p, &GridFunction::constant(&g, 8.0), 1e-9, 3).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 3);
    }

    #[test]
    fn bad_arguments() {
        assert!(matches!(
            ProblemSpec::parse("x", "1", "1", "1", "1", 0.0),
            Err(OperatorError::InvalidLambda(_))
        ));
        assert!(matches!(
            ProblemSpec::parse("x + s", "1", "1", "1", "1", 1.0),
            Err(OperatorError::Parse { slot: "g", .. })
        ));
        let p = ProblemSpec::benchmark_b1();
        let g = grid(1.0, 11);
        assert!(picard_solve(&p, &GridFunction::constant(&g, 0.0), 0.0, 5).is_err());
        assert!(picard_solve(&p, &GridFunction::constant(&g, 0.0), 1e-3, 0).is_err());
    }

    #[test]
    fn coefficient_errors_are_located() {
        let p = ProblemSpec::parse("ln(x)", "1", "1", "1", "1", 1.0).unwrap();
        let g = grid(1.0, 3);
        match apply_t(&p, &GridFunction::constant(&g, 0.0)) {
            Err(OperatorError::Coefficient { t, x, .. }) => assert_eq!((t, x), (0.0, 0.0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_first_integrand_leaves_g() {
        let p = ProblemSpec::parse("sin(t)*x + t", "exp(-(t-s))", "1+t", "0", "x", 0.7).unwrap();
        let g = grid(3.0, 61);
        let x = GridFunction::from_fn(&g, |t| (2.0 * t).cos());
        let tx = apply_t(&p, &x).unwrap();
        for ((t, xv), v) in g.nodes().iter().zip(x.values()).zip(tx.values()) {
            assert_eq!(*v, t.sin() * xv + t);
        }
    }

    #[test]
    fn refinement_changes_image_at_second_order() {
        let p = ProblemSpec::parse("x/3+1", "exp(-(t-s))*(1+s/4)", "exp(-(t-s))", "exp(-s)*x/(1+x^2)", "exp(-s)/(1+x^2)", 1.0).unwrap();
        let coarse = grid(6.0, 121);
        let fine = grid(6.0, 241);
        let f = |t: f64| 1.0 + 0.5 * t.sin();
        let tc = apply_t(&p, &GridFunction::from_fn(&coarse, f)).unwrap();
        let tf = apply_t(&p, &GridFunction::from_fn(&fine, f)).unwrap();
        let h = coarse.spacing();
        let diff = (0..coarse.len())
            .map(|k| (tc.values()[k] - tf.values()[2 * k]).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 0.1 * h * h, "diff {diff}, h² {}", h * h);
    }
}
