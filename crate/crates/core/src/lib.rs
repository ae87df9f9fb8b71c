//! Multiplayer absorbing stochastic games: classification, the normalized
//! linear complementarity problem, stationary equilibria, auxiliary game
//! families, sunspot strategy synthesis and certification.

pub mod auxiliary;
pub mod equilibrium;
pub mod error;
pub mod exec;
pub mod game;
pub mod lcp;
pub mod lp;
pub mod payoff;
pub mod strategy;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
pub use game::{AbsorbingGame, ActionCap, ActionPartition, GameClassification, LShapeLabeling};
pub use payoff::MixedProfile;
