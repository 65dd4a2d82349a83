//! Gaussian-copula privatization of vertically partitioned mixed-type data
//! with client-wise missingness, and ADMM sparse GLM fitting on the result.
//!
//! The crate simulates a vertical federated learning system in one process:
//! clients hold disjoint covariate blocks, one client also holds the response
//! and acts as the server, and all traffic goes through [`federation`].

pub mod data;
pub mod error;
pub mod federation;
pub mod glm;
pub mod harness;
pub mod io;
pub mod latent;
pub mod marginal;
pub mod numeric;
pub mod pipeline;
pub mod privacy;
pub mod rank;

pub use data::{ClientPartition, Column, MissingMask, MixedDataset, VariableKind};
pub use error::{Error, Result};
pub use privacy::PrivacyLedger;
