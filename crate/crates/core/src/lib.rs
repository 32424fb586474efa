//! Finite-dimensional quantum instruments, their extreme points, and explicit
//! barycentric decompositions into extreme devices.
//!
//! Devices (effects, POVMs, channels, instruments) are stored as one Choi
//! matrix per outcome in input ⊗ output order. Extremality is decided by a
//! linear-independence test on products of minimal Kraus operators, and the
//! same kernel drives a two-sided face walk that writes any device as a
//! finite convex combination of extreme ones.

pub mod decompose;
pub mod devices;
pub mod error;
pub mod extremality;
pub mod io;
pub mod matcore;
pub mod qubitx;
pub mod random;
pub mod sphere;

pub use decompose::{decompose_extremal, reconstruct, DiscreteDecomposition};
pub use devices::{Channel, CpBranch, Device, Effect, Instrument, KrausSet, Povm};
pub use error::{Error, Result};
pub use extremality::{is_extreme, perturbation_space, PerturbationBasis};
pub use matcore::{ComplexMatrix, Tolerance, C64};
