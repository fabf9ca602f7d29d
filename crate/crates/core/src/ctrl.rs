//! Control-function classes used by the Darbo-type contraction conditions,
//! sampled membership checks for each class, and evaluators for the two
//! contraction inequalities.
//!
//! Membership checks are semi-decisions on a finite sample: `Pass` means no
//! violation was found, `Fail` always carries a witness that can be
//! re-evaluated, and properties that cannot be settled from samples (limits,
//! continuity) come back `Inconclusive` rather than `Fail`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, EvalError, Expr, ParseError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CtrlError {
    #[error("control bundle has no `{0}` function")]
    MissingSlot(&'static str),
    #[error("cannot parse `{slot}`: {source}")]
    Parse {
        slot: &'static str,
        #[source]
        source: ParseError,
    },
    #[error("xi({t}) = {value} is negative")]
    NegativeXi { t: f64, value: f64 },
    #[error("evaluating `{slot}`: {source}")]
    Eval {
        slot: &'static str,
        #[source]
        source: EvalError,
    },
}

pub type Result<T> = std::result::Result<T, CtrlError>;

/// Named operator forms `O(ξ; t)` built from a user function `ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OForm {
    /// `O(ξ; t) = ξ(t)`
    #[default]
    Identity,
    /// `O(ξ; t) = ξ(t) / (1 + ln(1 + ξ(t)))`
    LogDamped,
}

impl OForm {
    pub const ALL: [OForm; 2] = [OForm::Identity, OForm::LogDamped];

    pub fn name(self) -> &'static str {
        match self {
            OForm::Identity => "identity",
            OForm::LogDamped => "log_damped",
        }
    }

    /// The form applied to an already evaluated `ξ(t) = v >= 0`.
    pub fn of_value(self, v: f64) -> f64 {
        match self {
            OForm::Identity => v,
            OForm::LogDamped => v / (1.0 + v.ln_1p()),
        }
    }
}

impl fmt::Display for OForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn eval_slot(slot: &'static str, e: &Expr, args: &[f64]) -> Result<f64> {
    e.eval(args).map_err(|source| CtrlError::Eval { slot, source })
}

/// `O(ξ; t)`.
pub fn o_apply(form: OForm, xi: &Expr, t: f64) -> Result<f64> {
    let value = eval_slot("xi", xi, &[t])?;
    if value < 0.0 {
        return Err(CtrlError::NegativeXi { t, value });
    }
    Ok(form.of_value(value))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Inputs and both sides of a violated (or inspected) relation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub inputs: BTreeMap<String, f64>,
    pub relation: String,
    pub lhs: f64,
    pub rhs: f64,
}

impl Witness {
    fn new(inputs: &[(&str, f64)], relation: &str, lhs: f64, rhs: f64) -> Self {
        Witness {
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            relation: relation.to_string(),
            lhs,
            rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyCheck {
    pub property: String,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl PropertyCheck {
    fn pass(property: &str) -> Self {
        PropertyCheck {
            property: property.into(),
            verdict: Verdict::Pass,
            witness: None,
            note: None,
        }
    }

    fn fail(property: &str, witness: Witness) -> Self {
        PropertyCheck {
            property: property.into(),
            verdict: Verdict::Fail,
            witness: Some(witness),
            note: None,
        }
    }

    fn inconclusive(property: &str, note: String) -> Self {
        PropertyCheck {
            property: property.into(),
            verdict: Verdict::Inconclusive,
            witness: None,
            note: Some(note),
        }
    }

    fn with_note(mut self, note: String) -> Self {
        self.note = Some(note);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MembershipReport {
    pub class: String,
    pub samples: String,
    pub checks: Vec<PropertyCheck>,
}

impl MembershipReport {
    pub fn check(&self, property: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.property == property)
    }

    /// Overall verdict: any fail wins, then any inconclusive.
    pub fn verdict(&self) -> Verdict {
        if self.checks.iter().any(|c| c.verdict == Verdict::Fail) {
            Verdict::Fail
        } else if self.checks.iter().any(|c| c.verdict == Verdict::Inconclusive) {
            Verdict::Inconclusive
        } else {
            Verdict::Pass
        }
    }
}

/// Positive sample points for membership checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    points: Vec<f64>,
    description: String,
}

impl SampleGrid {
    /// `count` log-spaced points on `[lo, hi]`, plus every power of ten in range.
    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Self {
        assert!(lo > 0.0 && hi > lo && count >= 2);
        let (a, b) = (lo.log10(), hi.log10());
        let mut points: Vec<f64> = (0..count)
            .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
            .collect();
        points[0] = lo;
        points[count - 1] = hi;
        for k in a.ceil() as i32..=b.floor() as i32 {
            points.push(format!("1e{k}").parse().unwrap());
        }
        points.sort_by(f64::total_cmp);
        points.dedup();
        SampleGrid {
            description: format!("{count} log-spaced points on [{lo:e}, {hi:e}] plus powers of ten"),
            points,
        }
    }

    pub fn from_points(mut points: Vec<f64>) -> Self {
        points.retain(|p| *p > 0.0 && p.is_finite());
        points.sort_by(f64::total_cmp);
        points.dedup();
        SampleGrid {
            description: format!("{} user points", points.len()),
            points,
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Roughly `count` evenly strided points from this grid.
    fn subsample(&self, count: usize) -> Vec<f64> {
        let n = self.points.len();
        if n <= count {
            return self.points.clone();
        }
        (0..count).map(|i| self.points[i * (n - 1) / (count - 1)]).collect()
    }
}

impl Default for SampleGrid {
    fn default() -> Self {
        SampleGrid::log_spaced(1e-6, 1e3, 200)
    }
}

pub const DEFAULT_DELTAS: [f64; 5] = [0.5, 0.2, 0.1, 0.05, 0.01];
pub const DEFAULT_SCALE_FACTORS: [f64; 5] = [0.5, 0.1, 0.25, 0.75, 0.9];
pub const DEFAULT_LATTICE: usize = 40;

const CONT_STEPS: [f64; 4] = [1e-3, 1e-5, 1e-7, 1e-9];

fn close(a: f64, b: f64, ulps: f64) -> bool {
    (a - b).abs() <= ulps * f64::EPSILON * a.abs().max(b.abs())
}

fn le_ulps(a: f64, b: f64, ulps: f64) -> bool {
    a <= b || close(a, b, ulps)
}

/// Continuity proxy: `|f(t ± h) - f(t)|` must shrink as `h ↓ 0`.
fn continuity_check(
    property: &str,
    points: &[f64],
    f: impl Fn(f64) -> Result<f64>,
) -> Result<PropertyCheck> {
    let mut worst = (0.0f64, 0.0f64);
    for &t in points {
        let ft = f(t)?;
        let scale = ft.abs().max(1.0);
        let mut last = f64::INFINITY;
        for &rel in &CONT_STEPS {
            let h = rel * t.max(1.0);
            let right = (f(t + h)? - ft).abs();
            let left = if t - h >= 0.0 { (f(t - h)? - ft).abs() } else { 0.0 };
            last = right.max(left) / scale;
        }
        if last > worst.1 {
            worst = (t, last);
        }
    }
    if worst.1 <= 1e-6 {
        Ok(PropertyCheck::pass(property))
    } else {
        Ok(PropertyCheck::inconclusive(
            property,
            format!(
                "relative jump {:.3e} persists at t = {} as the step shrinks to 1e-9",
                worst.1, worst.0
            ),
        ))
    }
}

/// First violation in sorted order of `f(t_i) <= f(t_{i+1})`.
fn monotone_check(property: &str, name: &str, points: &[f64], f: impl Fn(f64) -> Result<f64>) -> Result<PropertyCheck> {
    let vals = points.iter().map(|&t| f(t)).collect::<Result<Vec<_>>>()?;
    for i in 1..points.len() {
        if vals[i] < vals[i - 1] {
            return Ok(PropertyCheck::fail(
                property,
                Witness::new(
                    &[("t", points[i - 1]), ("s", points[i])],
                    &format!("{name}(t) <= {name}(s)"),
                    vals[i - 1],
                    vals[i],
                ),
            ));
        }
    }
    Ok(PropertyCheck::pass(property))
}

/// Chooses the witness nearest unit scale among violations.
fn nearest_unit(violations: Vec<(f64, Witness)>) -> Option<Witness> {
    violations
        .into_iter()
        .min_by(|a, b| a.0.ln().abs().total_cmp(&b.0.ln().abs()))
        .map(|(_, w)| w)
}

/// Both sides of `O(ξ; max{t, s}) = max{O(ξ; t), O(ξ; s)}`.
pub fn max_distribution_sides(form: OForm, xi: &Expr, t: f64, s: f64) -> Result<(f64, f64)> {
    let lhs = o_apply(form, xi, t.max(s))?;
    let rhs = o_apply(form, xi, t)?.max(o_apply(form, xi, s)?);
    Ok((lhs, rhs))
}

/// Both sides of the scaling requirement `O(a·ξ; t) <= a·O(ξ; t)`.
pub fn scaling_sides(form: OForm, xi: &Expr, a: f64, t: f64) -> Result<(f64, f64)> {
    let v = eval_slot("xi", xi, &[t])?;
    if v < 0.0 {
        return Err(CtrlError::NegativeXi { t, value: v });
    }
    Ok((form.of_value(a * v), a * form.of_value(v)))
}

/// Checks the operator class conditions (positivity, monotonicity, continuity,
/// max-distribution) and the additional scaling requirement
/// `O(a·ξ; t) <= a·O(ξ; t)` for `a ∈ (0, 1)`.
pub fn check_theta(form: OForm, xi: &Expr, grid: &SampleGrid) -> Result<MembershipReport> {
    let o = |t: f64| o_apply(form, xi, t);
    let pts = grid.points();
    let mut checks = Vec::new();

    // (i) positivity and vanishing at zero
    let at_zero = o(0.0)?;
    let positivity = if at_zero != 0.0 {
        PropertyCheck::fail("positivity", Witness::new(&[("t", 0.0)], "O(xi;0) = 0", at_zero, 0.0))
    } else {
        match pts.iter().map(|&t| Ok((t, o(t)?))).collect::<Result<Vec<_>>>()?
            .into_iter()
            .find(|(_, v)| *v <= 0.0)
        {
            Some((t, v)) => PropertyCheck::fail("positivity", Witness::new(&[("t", t)], "O(xi;t) > 0", v, 0.0)),
            None => PropertyCheck::pass("positivity"),
        }
    };
    checks.push(positivity);

    // (ii) monotone
    checks.push(monotone_check("monotone", "O(xi;.)", pts, o)?);

    // (iii) sequential continuity proxy
    checks.push(continuity_check("continuity", &grid.subsample(DEFAULT_LATTICE), o)?);

    // (iv) max-distribution on a pair lattice
    let lattice = grid.subsample(DEFAULT_LATTICE);
    let mut maxdist = PropertyCheck::pass("max_distribution");
    'outer: for &t in &lattice {
        for &s in &lattice {
            let (lhs, rhs) = max_distribution_sides(form, xi, t, s)?;
            if !close(lhs, rhs, 4.0) {
                maxdist = PropertyCheck::fail(
                    "max_distribution",
                    Witness::new(&[("t", t), ("s", s)], "O(xi;max{t,s}) = max{O(xi;t),O(xi;s)}", lhs, rhs),
                );
                break 'outer;
            }
        }
    }
    checks.push(maxdist);

    // scaling requirement: first factor with a violation, witness nearest unit scale
    let mut scaling = PropertyCheck::pass("scaling");
    let mut equality = true;
    for &a in &DEFAULT_SCALE_FACTORS {
        let mut violations = Vec::new();
        for &t in pts {
            let (lhs, rhs) = scaling_sides(form, xi, a, t)?;
            equality &= lhs == rhs;
            if !le_ulps(lhs, rhs, 4.0) {
                violations.push((t, Witness::new(&[("a", a), ("t", t)], "O(a*xi;t) <= a*O(xi;t)", lhs, rhs)));
            }
        }
        let count = violations.len();
        if let Some(w) = nearest_unit(violations) {
            scaling = PropertyCheck::fail("scaling", w)
                .with_note(format!("{count} of {} samples violate at a = {a}", pts.len()));
            break;
        }
    }
    if scaling.verdict == Verdict::Pass && equality {
        scaling = scaling.with_note("holds with equality on every sample".into());
    }
    checks.push(scaling);

    Ok(MembershipReport {
        class: format!("Theta ({form})"),
        samples: grid.description().to_string(),
        checks,
    })
}

/// `s(δ) = sup{t : α(t) >= 1 - δ}` over the sample grid, if any sample qualifies.
pub fn geraghty_sup(alpha: &Expr, grid: &SampleGrid, delta: f64) -> Result<Option<f64>> {
    let mut best: Option<f64> = None;
    for &t in grid.points() {
        if eval_slot("alpha", alpha, &[t])? >= 1.0 - delta {
            best = Some(best.map_or(t, |b: f64| b.max(t)));
        }
    }
    Ok(best)
}

/// Range `[0, 1)` and the trend of `s(δ)` as `δ` shrinks along `deltas`.
pub fn check_geraghty(alpha: &Expr, grid: &SampleGrid, deltas: &[f64]) -> Result<MembershipReport> {
    let mut checks = Vec::new();
    let mut range = PropertyCheck::pass("range");
    for &t in grid.points() {
        let v = eval_slot("alpha", alpha, &[t])?;
        if !(0.0..1.0).contains(&v) {
            range = PropertyCheck::fail("range", Witness::new(&[("t", t)], "0 <= alpha(t) < 1", v, 1.0));
            break;
        }
    }
    checks.push(range);

    let sups = deltas
        .iter()
        .map(|&d| geraghty_sup(alpha, grid, d))
        .collect::<Result<Vec<_>>>()?;
    let table = deltas
        .iter()
        .zip(&sups)
        .map(|(d, s)| match s {
            Some(s) => format!("s({d}) = {s:.6e}"),
            None => format!("s({d}) = none"),
        })
        .collect::<Vec<_>>()
        .join(", ");
    let first = sups.first().copied().flatten();
    let last = sups.last().copied().flatten();
    let non_increasing = sups.windows(2).all(|w| match (w[0], w[1]) {
        (_, None) => true,
        (None, Some(_)) => false,
        (Some(a), Some(b)) => b <= a,
    });
    let limit = if sups.iter().all(Option::is_none) {
        PropertyCheck::pass("limit").with_note(format!("vacuous: no sample reaches 1 - delta; {table}"))
    } else if non_increasing && (last.is_none() || last < first) {
        PropertyCheck::pass("limit").with_note(format!("s(delta) shrinks as delta -> 0: {table}"))
    } else {
        PropertyCheck::inconclusive("limit", format!("no shrinking trend in s(delta): {table}"))
    };
    checks.push(limit);
    Ok(MembershipReport {
        class: "Delta (Geraghty)".into(),
        samples: grid.description().to_string(),
        checks,
    })
}

/// Shared checks for non-decreasing functions vanishing exactly at zero.
fn zero_iff_zero(name: &'static str, f: &Expr, grid: &SampleGrid) -> Result<Vec<PropertyCheck>> {
    let ev = |t: f64| eval_slot(name, f, &[t]);
    let mut checks = Vec::new();
    let at_zero = ev(0.0)?;
    let mut zero = if at_zero != 0.0 {
        PropertyCheck::fail("zero_iff_zero", Witness::new(&[("t", 0.0)], &format!("{name}(0) = 0"), at_zero, 0.0))
    } else {
        PropertyCheck::pass("zero_iff_zero")
    };
    if zero.verdict == Verdict::Pass {
        for &t in grid.points() {
            let v = ev(t)?;
            if v <= 0.0 {
                zero = PropertyCheck::fail("zero_iff_zero", Witness::new(&[("t", t)], &format!("{name}(t) > 0"), v, 0.0));
                break;
            }
        }
    }
    checks.push(zero);
    let mut pts = vec![0.0];
    pts.extend_from_slice(grid.points());
    checks.push(monotone_check("monotone", name, &pts, ev)?);
    Ok(checks)
}

/// Ψ: non-decreasing, continuous, `η⁻¹({0}) = {0}`.
pub fn check_psi(eta: &Expr, grid: &SampleGrid) -> Result<MembershipReport> {
    let mut checks = zero_iff_zero("eta", eta, grid)?;
    checks.push(continuity_check("continuity", &grid.subsample(DEFAULT_LATTICE), |t| {
        eval_slot("eta", eta, &[t])
    })?);
    Ok(MembershipReport {
        class: "Psi".into(),
        samples: grid.description().to_string(),
        checks,
    })
}

/// Ω: non-decreasing, `ω(t) = 0 ⇔ t = 0`.
pub fn check_omega(omega: &Expr, grid: &SampleGrid) -> Result<MembershipReport> {
    Ok(MembershipReport {
        class: "Omega".into(),
        samples: grid.description().to_string(),
        checks: zero_iff_zero("omega", omega, grid)?,
    })
}

/// Continuous `ℝ⁺ → ℝ⁺`, as required of `β` and `φ`.
pub fn check_continuous_nonneg(name: &'static str, f: &Expr, grid: &SampleGrid) -> Result<MembershipReport> {
    let ev = |t: f64| eval_slot(name, f, &[t]);
    let mut range = PropertyCheck::pass("nonnegative");
    for &t in std::iter::once(&0.0).chain(grid.points()) {
        let v = ev(t)?;
        if v < 0.0 {
            range = PropertyCheck::fail("nonnegative", Witness::new(&[("t", t)], &format!("{name}(t) >= 0"), v, 0.0));
            break;
        }
    }
    let continuity = continuity_check("continuity", &grid.subsample(DEFAULT_LATTICE), ev)?;
    Ok(MembershipReport {
        class: format!("continuous nonnegative ({name})"),
        samples: grid.description().to_string(),
        checks: vec![range, continuity],
    })
}

/// 𝔽: `max{x, y} <= F(x, y)` on a pair lattice (including zero) plus a continuity proxy.
pub fn check_f(f: &Expr, grid: &SampleGrid) -> Result<MembershipReport> {
    let mut axis = vec![0.0];
    axis.extend(grid.subsample(DEFAULT_LATTICE - 1));
    let mut dominates = PropertyCheck::pass("dominates_max");
    'outer: for &x in &axis {
        for &y in &axis {
            let v = eval_slot("F", f, &[x, y])?;
            if v < x.max(y) {
                dominates = PropertyCheck::fail(
                    "dominates_max",
                    Witness::new(&[("x", x), ("y", y)], "max{x,y} <= F(x,y)", x.max(y), v),
                );
                break 'outer;
            }
        }
    }
    let diag = grid.subsample(DEFAULT_LATTICE);
    let continuity = continuity_check("continuity", &diag, |t| {
        let a = eval_slot("F", f, &[t, t])?;
        let b = eval_slot("F", f, &[t, 0.5 * t])?;
        Ok(a + b)
    })?;
    Ok(MembershipReport {
        class: "F".into(),
        samples: format!("{0}x{0} pair lattice from {1}", axis.len(), grid.description()),
        checks: vec![dominates, continuity],
    })
}

/// Υ: `χ: [0, ∞) → [0, 1)` with `limsup_{s→t⁺} χ(s) < 1`, probed by the largest
/// value of `χ` on shrinking right-neighbourhoods of each sample.
pub fn check_mt(chi: &Expr, grid: &SampleGrid) -> Result<MembershipReport> {
    let ev = |t: f64| eval_slot("chi", chi, &[t]);
    let mut pts = vec![0.0];
    pts.extend_from_slice(grid.points());
    let mut range = PropertyCheck::pass("range");
    for &t in &pts {
        let v = ev(t)?;
        if !(0.0..1.0).contains(&v) {
            range = PropertyCheck::fail("range", Witness::new(&[("t", t)], "0 <= chi(t) < 1", v, 1.0));
            break;
        }
    }
    let mut margin = f64::INFINITY;
    let mut at = 0.0;
    for &t in &grid.subsample(DEFAULT_LATTICE * 2) {
        for &rel in &[1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
            let h = rel * t.max(1.0);
            for k in 1..=8 {
                let v = ev(t + h * k as f64 / 8.0)?;
                if 1.0 - v < margin {
                    margin = 1.0 - v;
                    at = t;
                }
            }
        }
    }
    let limsup = if margin > 0.0 {
        PropertyCheck::pass("right_limsup").with_note(format!("smallest margin 1 - chi = {margin:.6e} near t = {at}"))
    } else {
        PropertyCheck::fail(
            "right_limsup",
            Witness::new(&[("t", at)], "max chi on (t, t+h] < 1", 1.0 - margin, 1.0),
        )
    };
    Ok(MembershipReport {
        class: "Upsilon (Mizoguchi-Takahashi)".into(),
        samples: grid.description().to_string(),
        checks: vec![range, limsup],
    })
}

/// Expression sources for the slots of a [`ControlBundle`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<String>,
    #[serde(default, rename = "F", skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
    #[serde(default = "default_xi")]
    pub xi: String,
    #[serde(default)]
    pub o_form: OForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<String>,
}

fn default_xi() -> String {
    "t".into()
}

/// One instantiation of the control functions. Unused slots may be absent.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBundle {
    pub alpha: Option<Expr>,
    pub beta: Option<Expr>,
    pub eta: Option<Expr>,
    pub phi: Option<Expr>,
    pub f: Option<Expr>,
    pub xi: Expr,
    pub o_form: OForm,
    pub chi: Option<Expr>,
    pub omega: Option<Expr>,
}

impl ControlBundle {
    pub fn parse(src: &BundleSource) -> Result<Self> {
        fn one(slot: &'static str, s: &Option<String>) -> Result<Option<Expr>> {
            s.as_deref()
                .map(|s| expr::parse(s, &["t"]).map_err(|source| CtrlError::Parse { slot, source }))
                .transpose()
        }
        Ok(ControlBundle {
            alpha: one("alpha", &src.alpha)?,
            beta: one("beta", &src.beta)?,
            eta: one("eta", &src.eta)?,
            phi: one("phi", &src.phi)?,
            f: src
                .f
                .as_deref()
                .map(|s| expr::parse(s, &["x", "y"]).map_err(|source| CtrlError::Parse { slot: "F", source }))
                .transpose()?,
            xi: expr::parse(&src.xi, &["t"]).map_err(|source| CtrlError::Parse { slot: "xi", source })?,
            o_form: src.o_form,
            chi: one("chi", &src.chi)?,
            omega: one("omega", &src.omega)?,
        })
    }

    /// `F = max`, `η = id`, `β = α₁·t`, `φ = t/2`, `α ≡ α₂`, identity `O` with `ξ = id`.
    pub fn existence_instance(alpha1: f64, alpha2: f64) -> Self {
        ControlBundle::parse(&BundleSource {
            alpha: Some(format!("{alpha2}")),
            beta: Some(format!("{alpha1}*t")),
            eta: Some("t".into()),
            phi: Some("t/2".into()),
            f: Some("max(x,y)".into()),
            ..BundleSource {
                xi: default_xi(),
                ..Default::default()
            }
        })
        .expect("built-in bundle parses")
    }

    fn slot(&self, name: &'static str) -> Result<&Expr> {
        let e = match name {
            "alpha" => &self.alpha,
            "beta" => &self.beta,
            "eta" => &self.eta,
            "phi" => &self.phi,
            "F" => &self.f,
            "chi" => &self.chi,
            "omega" => &self.omega,
            _ => unreachable!(),
        };
        e.as_ref().ok_or(CtrlError::MissingSlot(name))
    }

    fn unary(&self, name: &'static str, t: f64) -> Result<f64> {
        eval_slot(name, self.slot(name)?, &[t])
    }

    fn o(&self, t: f64) -> Result<f64> {
        o_apply(self.o_form, &self.xi, t)
    }

    /// `O(ξ; F(σ, φ(σ)))`
    fn o_of_f(&self, sigma: f64) -> Result<f64> {
        let phi = self.unary("phi", sigma)?;
        let f = eval_slot("F", self.slot("F")?, &[sigma, phi])?;
        self.o(f)
    }

    /// Whether `η(t) > β(t)` on every sample.
    pub fn eta_dominates_beta(&self, grid: &SampleGrid) -> Result<PropertyCheck> {
        for &t in grid.points() {
            let (e, b) = (self.unary("eta", t)?, self.unary("beta", t)?);
            if e <= b {
                return Ok(PropertyCheck::fail(
                    "eta_dominates_beta",
                    Witness::new(&[("t", t)], "eta(t) > beta(t)", e, b),
                ));
            }
        }
        Ok(PropertyCheck::pass("eta_dominates_beta"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sides {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl Sides {
    fn new(lhs: f64, rhs: f64) -> Self {
        Sides { lhs, rhs, holds: lhs <= rhs }
    }
}

/// `η(O(ξ; F(σ_TY, φ(σ_TY)))) <= α(O(ξ; η(σ_Y))) · β(O(ξ; F(σ_Y, φ(σ_Y))))`.
pub fn thm31_sides(b: &ControlBundle, sigma_y: f64, sigma_ty: f64) -> Result<Sides> {
    let lhs = b.unary("eta", b.o_of_f(sigma_ty)?)?;
    let eta_y = b.unary("eta", sigma_y)?;
    let rhs = b.unary("alpha", b.o(eta_y)?)? * b.unary("beta", b.o_of_f(sigma_y)?)?;
    Ok(Sides::new(lhs, rhs))
}

/// `ω(O(ξ; F(σ_TY, φ(σ_TY)))) <= χ(O(ξ; ω(σ_Y))) · ω(O(ξ; F(σ_Y, φ(σ_Y))))`.
pub fn thm37_sides(b: &ControlBundle, sigma_y: f64, sigma_ty: f64) -> Result<Sides> {
    let lhs = b.unary("omega", b.o_of_f(sigma_ty)?)?;
    let omega_y = b.unary("omega", sigma_y)?;
    let rhs = b.unary("chi", b.o(omega_y)?)? * b.unary("omega", b.o_of_f(sigma_y)?)?;
    Ok(Sides::new(lhs, rhs))
}
