//! ReRAM physically unclonable function simulation and authentication.

pub mod error;
pub mod experiment;
pub mod mle;
pub mod multistate;
pub mod netsim;
pub mod protocol;
pub mod reram_model;
pub mod seeding;
pub mod ternary;

pub use error::{Error, Result};
pub use experiment::{Command, ExperimentConfig};
pub use mle::{AuthDecision, ModelConfig, ObservationRecord, PredictorModel};
pub use multistate::{error_vector, ErrorVector, StateQuantizer, StateWord};
pub use netsim::{run_scenario, ScenarioConfig, ScenarioReport};
pub use protocol::{CipherKind, Device, Phase, ProtocolMessage, Server, SessionId};
pub use reram_model::{CellModel, DriftLaw, Environment, PopulationParams, PufArray, SigmaLaw};
pub use ternary::{ternary_crp_error, ternary_encode, TernaryWord, Trit};
