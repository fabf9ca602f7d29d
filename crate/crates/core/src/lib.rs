//! Picard solver and finite-resolution existence diagnostics for quadratic
//! Volterra integral equations
//!
//! ```text
//! x(t) = g(t, x(t)) + λ ∫_0^t μ₁(t,s) ζ₁(s,x(s)) ds · ∫_0^t μ₂(t,s) ζ₂(s,x(s)) ds
//! ```

pub mod certify;
pub mod cli;
pub mod ctrl;
pub mod exec;
pub mod expr;
pub mod funcspace;
pub mod mnc;
pub mod operator;
