//! Alternating gradient descent-ascent for hidden convex-concave min-max games.
//!
//! The players are two-layer networks `x -> W2 psi(W1 x)`. The crate solves the game with
//! AltGDA and audits the quantities that drive the convergence theory along the way:
//! Jacobian spectra, Polyak-Lojasiewicz moduli, the Lyapunov potential, path length and the
//! initialization conditions.
//!
//! Module map:
//!
//! - [`players`]: activations, two-layer nets, analytic Jacobians, closed-form spectral bounds.
//! - [`objectives`]: latent losses, the input-optimization and separable game families,
//!   gradients, best responses and the Nash gap.
//! - [`solver`]: the AltGDA loop, step-size rules, potential and theory constants.
//! - [`certificates`]: PL moduli, certified radius, active Lipschitz constants.
//! - [`validator`]: initialization and width conditions with per-inequality margins.
//! - [`experiments`]: canonical experiment builders, brute-force oracles, CSV/JSON/SVG output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificates;
pub mod error;
pub mod experiments;
pub mod objectives;
pub mod players;
pub mod solver;
pub mod validator;

pub use error::{Error, Result};
