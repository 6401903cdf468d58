//! Factorizations `A = B·C` of lower-triangular Toeplitz workloads for
//! correlated-noise private training, with sensitivity and expected-error
//! analysis under `b`-min-separated participation.
//!
//! Everything is keyed off a [`WorkloadSpec`] (`n`, weight decay `α`,
//! momentum `β`). Toeplitz factors are stored by their first column.

pub mod analysis;
pub mod aof;
pub mod dense;
pub mod error;
pub mod exec;
pub mod factorization;
pub mod noise;
pub mod sensitivity;
pub mod table;
pub mod toeplitz;
pub mod workload;

pub use analysis::{expected_error, ErrorReport, ReferenceBounds};
pub use dense::DenseLowerTriangular;
pub use error::{Error, Result};
pub use exec::Exec;
pub use factorization::{make_factorization, Factorization, FactorizationKind, MatrixHandle};
pub use noise::{simulate_mechanism, MonteCarloReport, NoiseStreamState};
pub use sensitivity::{sensitivity, ParticipationSchema, Sensitivity, SensitivityMethod};
pub use toeplitz::ToeplitzColumn;
pub use workload::{workload_column, WorkloadSpec};
