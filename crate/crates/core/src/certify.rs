//! Finite-sample checks of the sufficient conditions for the equation to have
//! a solution: `g` is a contraction in `x` (i), the kernel integrals of
//! differences decay uniformly (ii), the kernel integrals are bounded (iii),
//! together with the modulus estimates used to show `T` contracts the measure
//! of non-compactness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctrl::{self, OForm, Verdict};
use crate::exec;
use crate::expr::{EvalError, Expr};
use crate::funcspace::{Ensemble, FuncSpaceError, Grid, GridFunction, ModulusParams};
use crate::mnc::{self, MncError, RATIO_FLOOR};
use crate::operator::{Operator, OperatorError, ProblemSpec};

pub const BANNER: &str = "Numerical check of the existence conditions on finite samples and a \
finite horizon. CERTIFIED_NUMERICALLY is evidence, not a proof.";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertifyError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{what} at {at}: {source}")]
    Eval {
        what: &'static str,
        at: String,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    FuncSpace(#[from] FuncSpaceError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Mnc(#[from] MncError),
}

pub type Result<T> = std::result::Result<T, CertifyError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyConfig {
    /// Difference-quotient samples for the Lipschitz estimate.
    pub gamma_pairs: usize,
    /// `x` is sampled from `[-x_range, x_range]`.
    pub x_range: f64,
    /// Random members added to the constant probe functions.
    pub probe_size: usize,
    pub probe_amplitude: f64,
    /// Members of the ensemble used for the contraction checks.
    pub ensemble_size: usize,
    /// `x` values per kernel-modulus scan.
    pub kernel_x_samples: usize,
    pub gamma_margin: f64,
    pub contraction_slack: f64,
    pub decay_tol: f64,
    /// Relative growth of the integral bounds under horizon doubling that marks them horizon dependent.
    pub horizon_growth: f64,
    /// Nodes of the coarse grid on `[0, 2·t_max]` for the horizon probe.
    pub horizon_n: usize,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            gamma_pairs: 20_000,
            x_range: 10.0,
            probe_size: 8,
            probe_amplitude: 1.0,
            ensemble_size: 8,
            kernel_x_samples: 9,
            gamma_margin: 0.02,
            contraction_slack: 0.05,
            decay_tol: 1e-8,
            horizon_growth: 0.1,
            horizon_n: 1201,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CertVerdict {
    CertifiedNumerically,
    Inconclusive,
    Violated,
}

// ---------------------------------------------------------------- condition (i)

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaWitness {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// Raw difference quotient `|g(t,x) - g(t,y)| / |x - y|`.
    pub quotient: f64,
    /// Rounding allowance subtracted from the quotient.
    pub allowance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaEstimate {
    pub gamma_hat: f64,
    pub witness: GammaWitness,
}

fn eval_at(what: &'static str, e: &Expr, args: &[f64]) -> Result<f64> {
    e.eval(args).map_err(|source| CertifyError::Eval {
        what,
        at: format!("{args:?}"),
        source,
    })
}

/// Largest sampled difference quotient of `g` in `x`.
///
/// Half of the pairs are uniform on `[-R, R]²`, half are local pairs whose
/// separation is log-uniform in `[1e-6·R, R]`. Each quotient is lowered by a
/// first-order allowance for cancellation in `g(t,x) - g(t,y)`, so `γ̂` does not
/// overshoot the true slope from rounding alone.
pub fn estimate_gamma(g: &Expr, t_samples: &[f64], r: f64, pairs: usize, seed: u64) -> Result<GammaEstimate> {
    if !(r > 0.0 && r.is_finite()) || pairs == 0 || t_samples.is_empty() {
        return Err(CertifyError::InvalidArgument(format!(
            "need R > 0, pairs >= 1 and t samples; got R = {r}, pairs = {pairs}, {} t samples",
            t_samples.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triples: Vec<(f64, f64, f64)> = (0..pairs)
        .map(|i| {
            let t = t_samples[rng.gen_range(0..t_samples.len())];
            let x = rng.gen_range(-r..=r);
            let y = if i % 2 == 0 {
                rng.gen_range(-r..=r)
            } else {
                let d = r * 10f64.powf(-6.0 * rng.gen::<f64>());
                let y = if rng.gen::<bool>() { x + d } else { x - d };
                if y.abs() > r { 2.0 * x - y } else { y }
            };
            (t, x, y)
        })
        .collect();
    let quotients = exec::try_map_range(triples.len(), |i| -> Result<Option<GammaWitness>> {
        let (t, x, y) = triples[i];
        if (x - y).abs() <= 1e-9 {
            return Ok(None);
        }
        let gx = eval_at("g", g, &[t, x])?;
        let gy = eval_at("g", g, &[t, y])?;
        let dx = (x - y).abs();
        let quotient = (gx - gy).abs() / dx;
        let scale = gx.abs().max(gy.abs()) + quotient * x.abs().max(y.abs());
        let allowance = 8.0 * f64::EPSILON * scale / dx;
        Ok(Some(GammaWitness { t, x, y, quotient, allowance }))
    })?;
    let best = quotients
        .into_iter()
        .flatten()
        .fold(None::<GammaWitness>, |best, w| match best {
            Some(b) if b.quotient - b.allowance >= w.quotient - w.allowance => Some(b),
            _ => Some(w),
        })
        .ok_or_else(|| CertifyError::InvalidArgument("no sampled pair has |x - y| > 1e-9".into()))?;
    Ok(GammaEstimate {
        gamma_hat: (best.quotient - best.allowance).max(0.0),
        witness: best,
    })
}

// -------------------------------------------------------------- condition (iii)

/// `(max |I₁|, max |I₂|)` over the probe members and grid nodes.
pub fn estimate_bounds(op: &Operator, probe: &Ensemble) -> Result<(f64, f64)> {
    let ints = probe_integrals(op, probe)?;
    Ok(bounds_of(&ints))
}

type Integrals = Vec<(GridFunction, GridFunction)>;

fn probe_integrals(op: &Operator, probe: &Ensemble) -> Result<Integrals> {
    probe
        .members()
        .iter()
        .map(|x| op.integrals(x).map_err(CertifyError::from))
        .collect()
}

fn bounds_of(ints: &Integrals) -> (f64, f64) {
    let sup = |f: &GridFunction| f.sup_norm();
    (
        exec::max_of(ints.iter().map(|(a, _)| sup(a))),
        exec::max_of(ints.iter().map(|(_, b)| sup(b))),
    )
}

/// Constant functions at fixed levels up to `x_range`, plus seeded random members.
pub fn probe_ensemble(grid: &Grid, cfg: &CertifyConfig, seed: u64) -> Ensemble {
    let mut levels = vec![0.0];
    for c in [0.25, 0.5, 1.0, 2.0, 4.0, cfg.x_range] {
        if c <= cfg.x_range {
            levels.extend([c, -c]);
        }
    }
    levels.dedup();
    let mut members: Vec<GridFunction> = levels.iter().map(|&c| GridFunction::constant(grid, c)).collect();
    if cfg.probe_size > 0 {
        let random = mnc::random_ensemble(grid, cfg.probe_size, 0.0, cfg.probe_amplitude, seed);
        members.extend(random.members().iter().cloned());
    }
    Ensemble::new(members).expect("same grid")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsReport {
    pub a1_hat: f64,
    pub a2_hat: f64,
    /// Bounds re-estimated on a coarse grid over twice the horizon.
    pub a1_doubled: f64,
    pub a2_doubled: f64,
    /// Relative growth under horizon doubling; absent when a bound grows from zero.
    pub growth1: Option<f64>,
    pub growth2: Option<f64>,
    pub horizon_dependent: bool,
}

fn growth(base: f64, doubled: f64) -> Option<f64> {
    if base > 0.0 {
        Some(doubled / base - 1.0)
    } else if doubled == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

// --------------------------------------------------------------- condition (ii)

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayWitness {
    pub integral: usize,
    pub pair: (usize, usize),
    pub t_tail: f64,
    pub d_tail: f64,
    pub t_final: f64,
    pub d_final: f64,
}

/// `D_i(t)` maxed over the probe pairs, with its tail verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayTable {
    #[serde(skip)]
    pub t: Vec<f64>,
    #[serde(skip)]
    pub d1: Vec<f64>,
    #[serde(skip)]
    pub d2: Vec<f64>,
    pub pairs: usize,
    pub tail_start: f64,
    pub d1_final: f64,
    pub d2_final: f64,
    pub d1_tail_max: f64,
    pub d2_tail_max: f64,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<DecayWitness>,
}

/// `|I[x](t) - I[y](t)|` at every node; symmetric in the pair.
fn pair_difference(a: &GridFunction, b: &GridFunction) -> Vec<f64> {
    a.values().iter().zip(b.values()).map(|(u, v)| (u - v).abs()).collect()
}

/// Tabulates `D_i(t) = |∫₀ᵗ μᵢ(t,s)[ζᵢ(s,x(s)) - ζᵢ(s,y(s))] ds|` for each pair.
pub fn check_decay(
    op: &Operator,
    pairs: &[(GridFunction, GridFunction)],
    tail_start: f64,
    decay_tol: f64,
) -> Result<DecayTable> {
    if pairs.is_empty() {
        return Err(CertifyError::InvalidArgument("check_decay needs at least one pair".into()));
    }
    let mut ints = Vec::with_capacity(2 * pairs.len());
    let mut index = Vec::with_capacity(pairs.len());
    for (x, y) in pairs {
        index.push((ints.len(), ints.len() + 1));
        ints.push(op.integrals(x)?);
        ints.push(op.integrals(y)?);
    }
    decay_table(op.grid(), &ints, &index, tail_start, decay_tol)
}

fn decay_table(
    grid: &Grid,
    ints: &Integrals,
    pairs: &[(usize, usize)],
    tail_start: f64,
    decay_tol: f64,
) -> Result<DecayTable> {
    let tail = mnc::tail_index(grid, tail_start)?;
    let n = grid.len();
    let mut d = [vec![0.0; n], vec![0.0; n]];
    // Which pair attains the final value, per integral.
    let mut arg_final = [(0usize, 0usize); 2];
    for &(i, j) in pairs {
        let diffs = [
            pair_difference(&ints[i].0, &ints[j].0),
            pair_difference(&ints[i].1, &ints[j].1),
        ];
        for k in 0..2 {
            if diffs[k][n - 1] > d[k][n - 1] {
                arg_final[k] = (i, j);
            }
            for (m, v) in d[k].iter_mut().zip(&diffs[k]) {
                *m = m.max(*v);
            }
        }
    }

    let mut verdict = Verdict::Pass;
    let mut witness = None;
    for k in 0..2 {
        let series = &d[k][tail..];
        let last = series[series.len() - 1];
        let first = series[0];
        // increments below the tolerance are treated as noise
        let monotone = series.windows(2).all(|w| w[1] <= w[0] + decay_tol);
        if last > decay_tol && last >= first + decay_tol {
            verdict = Verdict::Fail;
            witness = Some(DecayWitness {
                integral: k + 1,
                pair: arg_final[k],
                t_tail: grid.node(tail),
                d_tail: first,
                t_final: grid.t_max(),
                d_final: last,
            });
            break;
        }
        if !(monotone && last <= decay_tol) {
            verdict = Verdict::Inconclusive;
        }
    }
    let tail_max = |v: &[f64]| exec::max_of(v[tail..].iter().copied());
    Ok(DecayTable {
        t: grid.nodes().to_vec(),
        pairs: pairs.len(),
        tail_start: grid.node(tail),
        d1_final: d[0][n - 1],
        d2_final: d[1][n - 1],
        d1_tail_max: tail_max(&d[0]),
        d2_tail_max: tail_max(&d[1]),
        verdict,
        witness,
        d1: std::mem::take(&mut d[0]),
        d2: std::mem::take(&mut d[1]),
    })
}

// --------------------------------------------------------- kernel moduli, bounds

/// Kernel modulus `w^L(μ,ζ,ε)` for each `ε`, and `B^L = max |μ(u,s)ζ(s,x)|`,
/// over nodes `t, u, s <= L` and the sampled `x` values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelStats {
    pub l: f64,
    pub eps: Vec<f64>,
    pub moduli: Vec<f64>,
    pub bound: f64,
}

pub fn kernel_stats(mu: &Expr, zeta: &Expr, grid: &Grid, l: f64, eps: &[f64], x_samples: &[f64]) -> Result<KernelStats> {
    if x_samples.is_empty() || !(l > 0.0 && l <= grid.t_max() * (1.0 + 1e-12)) {
        return Err(CertifyError::InvalidArgument(format!(
            "kernel scan needs 0 < L <= t_max and x samples; got L = {l}, {} samples",
            x_samples.len()
        )));
    }
    let h = grid.spacing();
    if let Some(e) = eps.iter().find(|e| **e < 2.0 * h * (1.0 - 1e-9)) {
        return Err(CertifyError::InvalidArgument(format!("eps = {e} is below 2h = {}", 2.0 * h)));
    }
    let last = grid.floor_index(l);
    let windows: Vec<usize> = eps.iter().map(|&e| grid.window_steps(e)).collect();
    let wmax = windows.iter().copied().max().unwrap_or(0);
    let nodes = grid.nodes();

    // One column per quadrature node s_j: the largest |μ(t,s)ζ - μ(u,s)ζ| for
    // each offset |t - u| = d·h, and the largest |μζ|.
    let columns = exec::try_map_range(last + 1, |j| -> Result<(Vec<f64>, f64)> {
        let s = nodes[j];
        let mut zs = Vec::with_capacity(x_samples.len());
        for &x in x_samples {
            zs.push(eval_at("zeta", zeta, &[s, x])?);
        }
        // |az - bz| is largest at the extreme z values
        let zlo = zs.iter().copied().fold(f64::INFINITY, f64::min);
        let zhi = zs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let col = (0..=last)
            .map(|i| eval_at("mu", mu, &[nodes[i], s]))
            .collect::<Result<Vec<f64>>>()?;
        let mut per_offset = vec![0.0f64; wmax + 1];
        let mut bound = 0.0f64;
        for (i, &a) in col.iter().enumerate() {
            bound = bound.max((a * zlo).abs()).max((a * zhi).abs());
            for d in 1..=wmax.min(last - i) {
                let b = col[i + d];
                let v = (a * zlo - b * zlo).abs().max((a * zhi - b * zhi).abs());
                per_offset[d] = per_offset[d].max(v);
            }
        }
        Ok((per_offset, bound))
    })?;
    let mut per_offset = vec![0.0f64; wmax + 1];
    let mut bound = 0.0f64;
    for (col, b) in &columns {
        for (m, v) in per_offset.iter_mut().zip(col) {
            *m = m.max(*v);
        }
        bound = bound.max(*b);
    }
    let moduli = windows
        .iter()
        .map(|&w| exec::max_of(per_offset[..=w].iter().copied()))
        .collect();
    Ok(KernelStats {
        l: nodes[last],
        eps: eps.to_vec(),
        moduli,
        bound,
    })
}

pub fn kernel_modulus(mu: &Expr, zeta: &Expr, grid: &Grid, l: f64, eps: f64, x_samples: &[f64]) -> Result<f64> {
    Ok(kernel_stats(mu, zeta, grid, l, &[eps], x_samples)?.moduli[0])
}

/// `count` evenly spaced values spanning the range of the ensemble.
pub fn ensemble_x_samples(a: &Ensemble, count: usize) -> Vec<f64> {
    let (lo, hi) = a.envelope();
    let lo = lo.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = hi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if count < 2 || lo == hi {
        return vec![lo];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

// ------------------------------------------------------------ modulus inequality

/// `w^L(TA, ε) <= γ̂·w^L(A, ε) + Λ̂ + Ĝ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrelimitCheck {
    pub l: f64,
    pub eps: f64,
    pub lhs: f64,
    pub w_a: f64,
    pub gamma_term: f64,
    pub lambda_hat: f64,
    pub g_sup_hat: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
    pub w_kernel1: f64,
    pub w_kernel2: f64,
    pub b1: f64,
    pub b2: f64,
}

/// `Λ̂ = λL(A₁w₂ + A₂w₁)`.
pub fn lambda_hat(lambda: f64, l: f64, a1: f64, a2: f64, w1: f64, w2: f64) -> f64 {
    lambda * l * a1 * w2 + lambda * l * a2 * w1
}

/// `Ĝ = λε(L·B₂·w₁ + A₁B₂ + A₂·max(B₁, B₂))`.
#[allow(clippy::too_many_arguments)]
pub fn g_sup_hat(lambda: f64, l: f64, eps: f64, a1: f64, a2: f64, b1: f64, b2: f64, w1: f64) -> f64 {
    lambda * l * b2 * w1 * eps + lambda * a1 * b2 * eps + lambda * a2 * b1.max(b2) * eps
}

#[allow(clippy::too_many_arguments)]
fn prelimit_from(
    lambda: f64,
    l: f64,
    eps: f64,
    lhs: f64,
    w_a: f64,
    gamma_hat: f64,
    a1: f64,
    a2: f64,
    (w1, b1): (f64, f64),
    (w2, b2): (f64, f64),
) -> PrelimitCheck {
    let lam = lambda_hat(lambda, l, a1, a2, w1, w2);
    let g = g_sup_hat(lambda, l, eps, a1, a2, b1, b2, w1);
    let gamma_term = gamma_hat * w_a;
    let rhs = gamma_term + lam + g;
    PrelimitCheck {
        l,
        eps,
        lhs,
        w_a,
        gamma_term,
        lambda_hat: lam,
        g_sup_hat: g,
        rhs,
        slack: rhs - lhs,
        holds: lhs <= rhs,
        w_kernel1: w1,
        w_kernel2: w2,
        b1,
        b2,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn prelimit_inequality(
    op: &Operator,
    a: &Ensemble,
    l: f64,
    eps: f64,
    gamma_hat: f64,
    a1: f64,
    a2: f64,
    x_samples: &[f64],
) -> Result<PrelimitCheck> {
    let p = op.spec();
    let k1 = kernel_stats(&p.mu1, &p.zeta1, op.grid(), l, &[eps], x_samples)?;
    let k2 = kernel_stats(&p.mu2, &p.zeta2, op.grid(), l, &[eps], x_samples)?;
    let ta = mnc::map_ensemble(op, a)?;
    Ok(prelimit_from(
        p.lambda,
        k1.l,
        eps,
        ta.modulus(l, eps)?,
        a.modulus(l, eps)?,
        gamma_hat,
        a1,
        a2,
        (k1.moduli[0], k1.bound),
        (k2.moduli[0], k2.bound),
    ))
}

// ------------------------------------------------------------ contraction ratios

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioCheck {
    pub name: String,
    pub image: f64,
    pub base: f64,
    pub ratio: Option<f64>,
    pub verdict: Verdict,
    /// Whether this ratio counts toward the contraction verdict.
    pub gating: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub base: mnc::SigmaParts,
    pub image: mnc::SigmaParts,
    pub threshold: f64,
    pub ratios: Vec<RatioCheck>,
    pub verdict: Verdict,
}

impl ContractionReport {
    pub fn ratio(&self, name: &str) -> Option<f64> {
        self.ratios.iter().find(|r| r.name == name).and_then(|r| r.ratio)
    }

    /// Largest gating ratio above one, if any.
    pub fn expanding(&self) -> Option<&RatioCheck> {
        self.ratios
            .iter()
            .filter(|r| r.gating && r.ratio.is_some_and(|v| v > 1.0))
            .max_by(|a, b| a.ratio.unwrap().total_cmp(&b.ratio.unwrap()))
    }
}

/// O-forms for which `O(a·ξ; t) <= a·O(ξ; t)` passes on the default samples with `ξ = id`.
/// Only those forms transfer a contraction of `σ` to a contraction of `O(ξ; σ)`.
pub fn scaling_forms() -> Vec<OForm> {
    let id = crate::expr::parse("t", &["t"]).expect("literal");
    OForm::ALL
        .into_iter()
        .filter(|f| {
            ctrl::check_theta(*f, &id, &ctrl::SampleGrid::default())
                .ok()
                .and_then(|r| r.check("scaling").map(|c| c.verdict == Verdict::Pass))
                .unwrap_or(false)
        })
        .collect()
}

/// Ratios of the `w`-part, `α`-part, `σ̂` and `O(ξ; σ̂)` (`ξ = id`) of `TA` against `A`.
pub fn contraction_check(
    op: &Operator,
    a: &Ensemble,
    mp: &ModulusParams,
    tail_start: f64,
    gamma_hat: f64,
    slack: f64,
) -> Result<ContractionReport> {
    let ta = mnc::map_ensemble(op, a)?;
    let base = mnc::sigma_parts(a, mp, tail_start)?;
    let image = mnc::sigma_parts(&ta, mp, tail_start)?;
    let threshold = gamma_hat + slack;
    let gating_forms = scaling_forms();
    let mut ratios = vec![
        ("w0", image.w0_hat, base.w0_hat, true),
        ("alpha", image.alpha_hat, base.alpha_hat, true),
        ("sigma", image.sigma_hat, base.sigma_hat, true),
    ];
    for f in OForm::ALL {
        ratios.push((
            match f {
                OForm::Identity => "o_identity",
                OForm::LogDamped => "o_log_damped",
            },
            f.of_value(image.sigma_hat),
            f.of_value(base.sigma_hat),
            gating_forms.contains(&f),
        ));
    }
    let ratios: Vec<RatioCheck> = ratios
        .into_iter()
        .map(|(name, num, den, gating)| {
            let ratio = (den > RATIO_FLOOR).then(|| num / den);
            let verdict = match ratio {
                None => Verdict::Inconclusive,
                Some(r) if r <= threshold => Verdict::Pass,
                Some(_) => Verdict::Fail,
            };
            RatioCheck {
                name: name.into(),
                image: num,
                base: den,
                ratio,
                verdict,
                gating,
            }
        })
        .collect();
    let gating = ratios.iter().filter(|r| r.gating);
    let verdict = if gating.clone().any(|r| r.verdict == Verdict::Fail) {
        Verdict::Fail
    } else if gating.clone().any(|r| r.verdict == Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    Ok(ContractionReport {
        base,
        image,
        threshold,
        ratios,
        verdict,
    })
}

// ------------------------------------------------------------------- aggregate

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    pub banner: &'static str,
    pub gamma: GammaEstimate,
    pub bounds: BoundsReport,
    pub decay: DecayTable,
    pub kernel1: KernelStats,
    pub kernel2: KernelStats,
    pub prelimit: Vec<PrelimitCheck>,
    pub prelimit_holds: bool,
    pub contraction: ContractionReport,
    pub verdict: CertVerdict,
    pub reasons: Vec<String>,
}

impl CertificationReport {
    /// `(t, D1, D2)` rows of the decay table.
    pub fn decay_rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.decay
            .t
            .iter()
            .zip(&self.decay.d1)
            .zip(&self.decay.d2)
            .map(|((t, a), b)| (*t, *a, *b))
    }
}

/// Runs every check on `p` over `grid` and combines them into a verdict.
///
/// Sub-checks draw from seeds `seed`, `seed + 1`, `seed + 2` (Lipschitz pairs,
/// probe functions, contraction ensemble).
pub fn certify_existence(
    p: &ProblemSpec,
    grid: &Grid,
    mp: &ModulusParams,
    tail_start: f64,
    cfg: &CertifyConfig,
    seed: u64,
) -> Result<CertificationReport> {
    let op = Operator::new(p, grid)?;
    let mut reasons = Vec::new();
    let mut violated = false;
    let mut inconclusive = false;

    // (i)
    let t_samples: Vec<f64> = (0..=64).map(|i| grid.node(i * (grid.len() - 1) / 64)).collect();
    let gamma = estimate_gamma(&p.g, &t_samples, cfg.x_range, cfg.gamma_pairs, seed)?;
    let gw = gamma.witness;
    if gamma.gamma_hat >= 1.0 {
        violated = true;
        reasons.push(format!(
            "g is not a contraction in x: slope {:.6} at t = {}, x = {}, y = {}",
            gamma.gamma_hat, gw.t, gw.x, gw.y
        ));
    } else if gamma.gamma_hat >= 1.0 - cfg.gamma_margin {
        inconclusive = true;
        reasons.push(format!(
            "Lipschitz estimate {:.6} is within the margin {} of 1",
            gamma.gamma_hat, cfg.gamma_margin
        ));
    }

    // (iii), with the horizon-doubling probe
    let probe = probe_ensemble(grid, cfg, seed.wrapping_add(1));
    let ints = probe_integrals(&op, &probe)?;
    let (a1, a2) = bounds_of(&ints);
    let coarse = Grid::new(2.0 * grid.t_max(), cfg.horizon_n)?;
    let coarse_op = Operator::new(p, &coarse)?;
    let (a1d, a2d) = estimate_bounds(&coarse_op, &probe_ensemble(&coarse, cfg, seed.wrapping_add(1)))?;
    let (growth1, growth2) = (growth(a1, a1d), growth(a2, a2d));
    let too_much = |g: Option<f64>| g.is_none_or(|g| g > cfg.horizon_growth);
    let horizon_dependent = too_much(growth1) || too_much(growth2);
    if horizon_dependent {
        inconclusive = true;
        reasons.push(format!(
            "integral bounds depend on the horizon: ({a1:.6e}, {a2:.6e}) on [0, {}] vs ({a1d:.6e}, {a2d:.6e}) on [0, {}]",
            grid.t_max(),
            coarse.t_max()
        ));
    }
    let bounds = BoundsReport {
        a1_hat: a1,
        a2_hat: a2,
        a1_doubled: a1d,
        a2_doubled: a2d,
        growth1,
        growth2,
        horizon_dependent,
    };

    // (ii) over all probe pairs
    let m = probe.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    let decay = decay_table(grid, &ints, &pairs, tail_start, cfg.decay_tol)?;
    match decay.verdict {
        Verdict::Pass => {}
        Verdict::Fail => {
            violated = true;
            let w = decay.witness.unwrap();
            reasons.push(format!(
                "difference integral D{} grows: {:.6e} at t = {} to {:.6e} at t = {}",
                w.integral, w.d_tail, w.t_tail, w.d_final, w.t_final
            ));
        }
        Verdict::Inconclusive => {
            inconclusive = true;
            reasons.push(format!(
                "difference integrals do not settle below {} on the tail (final D1 = {:.3e}, D2 = {:.3e})",
                cfg.decay_tol, decay.d1_final, decay.d2_final
            ));
        }
    }

    // modulus inequality and contraction ratios on a random ensemble
    let a = mnc::random_ensemble(grid, cfg.ensemble_size, 0.0, cfg.probe_amplitude, seed.wrapping_add(2));
    let xs = ensemble_x_samples(&a, cfg.kernel_x_samples);
    let l = mp.l_max();
    let kernel1 = kernel_stats(&p.mu1, &p.zeta1, grid, l, mp.eps_list(), &xs)?;
    let kernel2 = kernel_stats(&p.mu2, &p.zeta2, grid, l, mp.eps_list(), &xs)?;
    let ta = mnc::map_ensemble(&op, &a)?;
    let prelimit = mp
        .eps_list()
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            Ok(prelimit_from(
                p.lambda,
                kernel1.l,
                eps,
                ta.modulus(l, eps)?,
                a.modulus(l, eps)?,
                gamma.gamma_hat,
                a1,
                a2,
                (kernel1.moduli[k], kernel1.bound),
                (kernel2.moduli[k], kernel2.bound),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let prelimit_holds = prelimit.iter().all(|c| c.holds);
    if let Some(c) = prelimit.iter().find(|c| !c.holds) {
        inconclusive = true;
        reasons.push(format!(
            "modulus inequality fails at L = {}, eps = {}: {:.6e} > {:.6e}",
            c.l, c.eps, c.lhs, c.rhs
        ));
    }

    let contraction = contraction_check(&op, &a, mp, tail_start, gamma.gamma_hat, cfg.contraction_slack)?;
    if let Some(r) = contraction.expanding() {
        violated = true;
        reasons.push(format!(
            "{} ratio {:.6} exceeds 1 ({:.6e} -> {:.6e})",
            r.name,
            r.ratio.unwrap(),
            r.base,
            r.image
        ));
    } else if contraction.verdict != Verdict::Pass {
        inconclusive = true;
        for r in contraction.ratios.iter().filter(|r| r.gating && r.verdict != Verdict::Pass) {
            reasons.push(match r.ratio {
                Some(v) => format!("{} ratio {v:.6} exceeds {:.6}", r.name, contraction.threshold),
                None => format!("{} ratio undefined: base {:.3e} is below {RATIO_FLOOR:e}", r.name, r.base),
            });
        }
    }

    let verdict = if violated {
        CertVerdict::Violated
    } else if inconclusive {
        CertVerdict::Inconclusive
    } else {
        CertVerdict::CertifiedNumerically
    };
    Ok(CertificationReport {
        banner: BANNER,
        gamma,
        bounds,
        decay,
        kernel1,
        kernel2,
        prelimit,
        prelimit_holds,
        contraction,
        verdict,
        reasons,
    })
}
