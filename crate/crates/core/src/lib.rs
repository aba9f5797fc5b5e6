//! Self-calibrating tomography for qubits and V-type qutrits.
//!
//! The state and the unknown scales of the basis-changing rotations are
//! estimated jointly from measured statistics. Modules, bottom up:
//!
//! * [`smallmat`], [`dense`]: small complex and real linear algebra;
//! * [`model`]: state and generator parametrizations, gauge freedom;
//! * [`forward`]: statistics, closed-form cross-checks, noisy sampling;
//! * [`protocol`]: the measurement catalog and the unknown set;
//! * [`identify`]: Jacobians, determinants, singularity scans;
//! * [`invert`]: linear inversion, least squares, Poisson likelihood.
//! * [`criteria`]: the acceptance checks behind `sct validate`.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the double-precision flavor.

pub mod criteria;
pub mod dense;
pub mod forward;
pub mod identify;
pub mod invert;
pub mod model;
pub mod protocol;
pub mod scalar;
pub mod smallmat;

pub use invert::{block_solve_v, grid_oracle, linear_invert, reconstruct, InvertError, Objective, SolverOptions};
pub use forward::{
    coefficients, evolve, probability, resolve_convention, simulate_counts, CoefficientSet, Convention, CountRecord,
    ForwardError, NoiseKind, NoiseModel, RootConvention,
};
pub use model::{assemble_generator, assemble_state, gauge_fix, gauge_transform, DerivedAngles, ModelError};
pub use protocol::{scenario, MeasurementSetting, Param, Protocol, ProtocolError};
pub use scalar::Scalar;
pub use smallmat::{expi_neg, min_eigenvalue, LinalgError};

pub type CMatrix64 = smallmat::CMatrix<f64>;
pub type CMatrix32 = smallmat::CMatrix<f32>;
pub type RMatrix64 = dense::RMatrix<f64>;
pub type DensityParams64 = model::DensityParams<f64>;
pub type DensityParams32 = model::DensityParams<f32>;
pub type GeneratorParams64 = model::GeneratorParams<f64>;
pub type GeneratorParams32 = model::GeneratorParams<f32>;
pub type UnknownParams64 = protocol::UnknownParams<f64>;
pub type Protocol64 = protocol::Protocol<f64>;
pub type CountRecord64 = forward::CountRecord<f64>;
pub type JacobianReport64 = identify::JacobianReport<f64>;
pub type ReconstructionResult64 = invert::ReconstructionResult<f64>;


