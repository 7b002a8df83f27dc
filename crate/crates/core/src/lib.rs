//! Extensions of positive and mapping-cone-positive linear maps from
//! finite-dimensional operator systems `A ⊆ B(H)` into `B(K)`.
//!
//! Maps are handled through their Choi matrices, normalized by the duality
//! `Tr(C_φ (a ⊗ b)) = Tr(φ(a) bᵗ)`. Extension questions then become convex
//! feasibility problems over the affine fiber of Choi candidates that agree
//! with `φ` on `A`:
//!
//! * [`extend::extend_cp`] looks for a positive semidefinite Choi matrix
//!   (completely positive extension);
//! * [`extend::extension_criterion`] decides non-existence of a positive
//!   extension through the norm of the unitalized map, and
//!   [`extend::extend_positive`] searches for a block-positive Choi matrix;
//! * [`extend::extend_c_positive`] handles a general mapping cone by sampled
//!   half-spaces of the cone `P(B(H), C)`.

pub mod cones;
pub mod experiments;
pub mod extend;
pub mod matrix;
pub mod opsys;
pub mod posmap;
pub mod random;
mod search;

pub use matrix::{ComplexMatrix, HermitianEig, MatrixError, C64};
pub use opsys::{Flavor, OperatorSystem, OpsysError};
pub use posmap::{ChoiMatrix, LinearMap, PosmapError};
