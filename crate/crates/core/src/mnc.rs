//! Finite-resolution estimates of the measure of non-compactness
//! `σ(A) = w₀(A) + α(A)` on function ensembles.
//!
//! For a finite set of continuous functions the exact `w₀` vanishes, so the
//! numbers produced here are surrogates: `w₀` is read off at the smallest
//! tabulated resolution `ε_min` and the largest truncation `L`, and
//! `α = limsup_{t→∞} diam A(t)` is replaced by the largest diameter on the tail
//! window `[tail_start, t_max]`. The full `(L, ε)` table is kept so the trend
//! as `ε` shrinks can be inspected.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::exec;
use crate::funcspace::{FuncSpaceError, Grid, GridFunction, ModulusParams};
use crate::operator::{Operator, OperatorError};

pub use crate::funcspace::Ensemble;

/// Denominators at or below this are treated as zero when forming contraction ratios.
pub const RATIO_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MncError {
    #[error("t = {0} is not a grid node")]
    NotANode(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("member {0} of the smaller ensemble is not a member of the larger one")]
    NotASubset(usize),
    #[error(transparent)]
    FuncSpace(#[from] FuncSpaceError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

pub type Result<T> = std::result::Result<T, MncError>;

/// `diam A(t) = max_{x,y ∈ A} |x(t) - y(t)|` at a grid node `t`.
pub fn diam_at(a: &Ensemble, t: f64) -> Result<f64> {
    let k = a.grid().node_index(t).ok_or(MncError::NotANode(t))?;
    Ok(diam_at_index(a, k))
}

fn diam_at_index(a: &Ensemble, k: usize) -> f64 {
    let (lo, hi) = a
        .members()
        .iter()
        .map(|m| m.values()[k])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// Diameter at every node.
pub fn diam_series(a: &Ensemble) -> Vec<f64> {
    let (lo, hi) = a.envelope();
    hi.iter().zip(&lo).map(|(h, l)| h - l).collect()
}

/// First node index at or after `tail_start`.
pub fn tail_index(grid: &Grid, tail_start: f64) -> Result<usize> {
    if !(tail_start >= 0.0 && tail_start < grid.t_max()) {
        return Err(MncError::InvalidArgument(format!(
            "tail_start = {tail_start} must lie in [0, {})",
            grid.t_max()
        )));
    }
    let k = grid.floor_index(tail_start);
    Ok(if grid.node(k) < tail_start && grid.node_index(tail_start).is_none() {
        k + 1
    } else {
        k
    })
}

/// Surrogate of `σ(A)` and its ingredients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MncEstimate {
    pub l_list: Vec<f64>,
    pub eps_list: Vec<f64>,
    /// `w_table[i][j] = w^{L_i}(A; ε_j)`.
    pub w_table: Vec<Vec<f64>>,
    pub w0_hat: f64,
    #[serde(skip)]
    pub diam_series: Vec<f64>,
    pub alpha_hat: f64,
    pub sigma_hat: f64,
    pub tail_start: f64,
}

pub fn sigma_estimate(a: &Ensemble, mp: &ModulusParams, tail_start: f64) -> Result<MncEstimate> {
    let grid = a.grid();
    let tail = tail_index(grid, tail_start)?;
    let mut w_table = Vec::with_capacity(mp.l_list().len());
    for &l in mp.l_list() {
        let row = mp
            .eps_list()
            .iter()
            .map(|&e| a.modulus(l, e))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        w_table.push(row);
    }
    let (i_l, i_e) = argmax_l_argmin_eps(mp);
    let w0_hat = w_table[i_l][i_e];
    let diam_series = diam_series(a);
    let alpha_hat = exec::max_of(diam_series[tail..].iter().copied());
    Ok(MncEstimate {
        l_list: mp.l_list().to_vec(),
        eps_list: mp.eps_list().to_vec(),
        w_table,
        w0_hat,
        diam_series,
        alpha_hat,
        sigma_hat: w0_hat + alpha_hat,
        tail_start,
    })
}

fn argmax_l_argmin_eps(mp: &ModulusParams) -> (usize, usize) {
    let i_l = mp
        .l_list()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    let i_e = mp
        .eps_list()
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    (i_l, i_e)
}

/// Only `σ̂`, skipping the rest of the table.
pub fn sigma_hat(a: &Ensemble, mp: &ModulusParams, tail_start: f64) -> Result<f64> {
    let tail = tail_index(a.grid(), tail_start)?;
    let w0 = a.modulus(mp.l_max(), mp.eps_min())?;
    let alpha = exec::max_of(diam_series(a)[tail..].iter().copied());
    Ok(w0 + alpha)
}

/// The `(w₀, α, σ)` triple of a surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaParts {
    pub w0_hat: f64,
    pub alpha_hat: f64,
    pub sigma_hat: f64,
}

pub fn sigma_parts(a: &Ensemble, mp: &ModulusParams, tail_start: f64) -> Result<SigmaParts> {
    let tail = tail_index(a.grid(), tail_start)?;
    let w0_hat = a.modulus(mp.l_max(), mp.eps_min())?;
    let alpha_hat = exec::max_of(diam_series(a)[tail..].iter().copied());
    Ok(SigmaParts {
        w0_hat,
        alpha_hat,
        sigma_hat: w0_hat + alpha_hat,
    })
}

fn convex_combination(a: &Ensemble, rng: &mut impl Rng, lo: &[f64], hi: &[f64]) -> GridFunction {
    let raw: Vec<f64> = (0..a.len()).map(|_| 1.0 - rng.gen::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let n = a.grid().len();
    let mut values = vec![0.0; n];
    for (m, w) in a.members().iter().zip(&weights) {
        for (v, x) in values.iter_mut().zip(m.values()) {
            *v += w * x;
        }
    }
    // A true convex combination never leaves the pointwise envelope; clamp away rounding.
    for ((v, l), h) in values.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
    GridFunction::new(a.grid().clone(), values).expect("convex combination of finite values")
}

fn hull_sample_with(a: &Ensemble, m: usize, rng: &mut impl Rng) -> Ensemble {
    let (lo, hi) = a.envelope();
    let mut members = a.members().to_vec();
    members.extend((0..m).map(|_| convex_combination(a, rng, &lo, &hi)));
    Ensemble::new(members).expect("same grid")
}

/// `A` together with `m` random convex combinations of its members.
///
/// Weights are normalized positive uniforms over all members. Deterministic in `seed`.
pub fn hull_sample(a: &Ensemble, m: usize, seed: u64) -> Ensemble {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    hull_sample_with(a, m, &mut rng)
}

/// `size` members with independent uniform node values in `[center - amplitude, center + amplitude]`.
pub fn random_ensemble(grid: &Grid, size: usize, center: f64, amplitude: f64, seed: u64) -> Ensemble {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let members = (0..size.max(1))
        .map(|_| {
            let values = (0..grid.len())
                .map(|_| center + amplitude * (2.0 * rng.gen::<f64>() - 1.0))
                .collect();
            GridFunction::new(grid.clone(), values).expect("finite")
        })
        .collect();
    Ensemble::new(members).expect("same grid")
}

/// Applies `T` to every member.
pub fn map_ensemble(op: &Operator, a: &Ensemble) -> Result<Ensemble> {
    let images = a
        .members()
        .iter()
        .map(|x| op.apply(x))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Ensemble::new(images)?)
}

/// One step of the set iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetIterationStep {
    pub step: usize,
    pub size: usize,
    pub w0_hat: f64,
    pub alpha_hat: f64,
    pub sigma_hat: f64,
    /// `σ̂(A_k) / σ̂(A_{k-1})`, absent for `k = 0` or when the denominator is below [`RATIO_FLOOR`].
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetIterationRecord {
    pub steps: Vec<SetIterationStep>,
}

impl SetIterationRecord {
    pub fn sigma_series(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.sigma_hat).collect()
    }

    pub fn ratio_series(&self) -> Vec<Option<f64>> {
        self.steps.iter().skip(1).map(|s| s.ratio).collect()
    }
}

/// Runs `A_{k+1} = conv(T A_k)` for `steps` steps on finite surrogates.
///
/// The images of the original members are kept as anchors and `m` fresh convex
/// combinations of the full image set are added at each step, so every ensemble
/// after the first has `|A_0| + m` members. Step `k` draws from its own PRNG
/// stream derived from `seed`.
pub fn set_iterate(
    op: &Operator,
    a0: &Ensemble,
    steps: usize,
    m: usize,
    mp: &ModulusParams,
    tail_start: f64,
    seed: u64,
) -> Result<SetIterationRecord> {
    if steps == 0 {
        return Err(MncError::InvalidArgument("steps must be at least 1".into()));
    }
    let anchors = a0.len();
    let mut current = a0.clone();
    let parts = sigma_parts(&current, mp, tail_start)?;
    let mut record = vec![SetIterationStep {
        step: 0,
        size: current.len(),
        w0_hat: parts.w0_hat,
        alpha_hat: parts.alpha_hat,
        sigma_hat: parts.sigma_hat,
        ratio: None,
    }];
    for k in 1..=steps {
        let image = map_ensemble(op, &current)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let (lo, hi) = image.envelope();
        let mut members = image.members()[..anchors].to_vec();
        members.extend((0..m).map(|_| convex_combination(&image, &mut rng, &lo, &hi)));
        current = Ensemble::new(members)?;
        let parts = sigma_parts(&current, mp, tail_start)?;
        let prev = record.last().unwrap().sigma_hat;
        record.push(SetIterationStep {
            step: k,
            size: current.len(),
            w0_hat: parts.w0_hat,
            alpha_hat: parts.alpha_hat,
            sigma_hat: parts.sigma_hat,
            ratio: (prev > RATIO_FLOOR).then(|| parts.sigma_hat / prev),
        });
    }
    Ok(SetIterationRecord { steps: record })
}

/// One side-by-side inequality evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`
    pub slack: f64,
    pub holds: bool,
}

impl InequalityCheck {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        InequalityCheck {
            lhs,
            rhs,
            slack: rhs - lhs,
            holds: lhs <= rhs,
        }
    }

    /// Holds up to `ulps` units of relative rounding on the larger side.
    pub fn holds_within_ulps(&self, ulps: f64) -> bool {
        self.slack >= -ulps * f64::EPSILON * self.lhs.abs().max(self.rhs.abs())
    }
}

/// Surrogate checks of monotonicity (`A ⊆ B ⇒ σ(A) ≤ σ(B)`) and convexity
/// (`σ(λA + (1-λ)B) ≤ λσ(A) + (1-λ)σ(B)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxiomReport {
    pub monotone: InequalityCheck,
    pub convex: InequalityCheck,
    pub lambda: f64,
}

/// Every member of `a` must also be a member of `b` (value-wise equal).
pub fn axiom_check(a: &Ensemble, b: &Ensemble, lam: f64, mp: &ModulusParams, tail_start: f64) -> Result<AxiomReport> {
    if !(0.0..=1.0).contains(&lam) {
        return Err(MncError::InvalidArgument(format!("lambda = {lam} must lie in [0, 1]")));
    }
    if a.grid() != b.grid() {
        return Err(FuncSpaceError::GridMismatch.into());
    }
    if let Some(i) = a
        .members()
        .iter()
        .position(|x| !b.members().iter().any(|y| y.values() == x.values()))
    {
        return Err(MncError::NotASubset(i));
    }
    let sa = sigma_hat(a, mp, tail_start)?;
    let sb = sigma_hat(b, mp, tail_start)?;
    let combo = minkowski_combination(a, b, lam);
    let sc = sigma_hat(&combo, mp, tail_start)?;
    Ok(AxiomReport {
        monotone: InequalityCheck::new(sa, sb),
        convex: InequalityCheck::new(sc, lam * sa + (1.0 - lam) * sb),
        lambda: lam,
    })
}

/// `{λx + (1-λ)y : x ∈ A, y ∈ B}`.
pub fn minkowski_combination(a: &Ensemble, b: &Ensemble, lam: f64) -> Ensemble {
    let mut members = Vec::with_capacity(a.len() * b.len());
    for x in a.members() {
        for y in b.members() {
            let values = x
                .values()
                .iter()
                .zip(y.values())
                .map(|(u, v)| lam * u + (1.0 - lam) * v)
                .collect();
            members.push(GridFunction::new(a.grid().clone(), values).expect("finite"));
        }
    }
    Ensemble::new(members).expect("same grid")
}
