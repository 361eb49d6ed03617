//! Numerical laboratory for mean curvature flow of graphs in higher
//! codimension.
//!
//! The crate is organized around five subsystems:
//!
//! * [`grassmann`] — oriented planes, the w-pairing, Jordan angles, the slope
//!   function and convexity-region membership on the Grassmannian.
//! * [`graphgeom`] — discrete differential geometry of graph submanifolds
//!   `F(x) = (x, u(x))`: induced metric, Gauss map, second fundamental form,
//!   mean curvature.
//! * [`quadform`] — Hessian quadratic forms of `v` and `log v` on shape
//!   tensors, with an independent minimum-eigenvalue oracle and bound
//!   certification scans.
//! * [`flow`] — explicit time stepping of the graphical flow with maximum
//!   principle, evolution-identity residual and localized test-quantity
//!   monitors.
//! * [`soliton`] — residual evaluators and drift-operator inequality checks
//!   for self-shrinkers and translating solitons.

pub mod error;
pub mod fields;
pub mod flow;
pub mod graphgeom;
pub mod grassmann;
pub mod patches;
pub mod quadform;
pub mod soliton;

pub use error::{Error, Result};
pub use graphgeom::{Boundary, GraphPatch, ShapeTensor};
pub use grassmann::{JordanSpectrum, Plane, RegionKind, RegionSpec};
pub use quadform::{BoundReport, LambdaProfile};
