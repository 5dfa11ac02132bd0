pub mod borwein_preiss;
pub mod bsde;
pub mod error;
pub mod experiment;
pub mod gauge;
pub mod io;
pub mod library;
pub mod problem;
pub mod regression;
pub mod rng;
pub mod simulate;
pub mod spectral;
pub mod value;
pub mod viscosity;

pub use error::{Error, Result};
pub use problem::{ConstantPolicy, ControlProblem, Dynamics, FnDynamics, Policy};
pub use simulate::{PathBundle, SimConfig};
pub use spectral::{SpectralOperator, StateVec};
