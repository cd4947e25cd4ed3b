//! Consent registry and inference-time opt-in verification.

pub mod canonical;
pub mod consent;
pub mod engine;
pub mod ingest;
pub mod intent;
pub mod ledger;
pub mod registry;
pub mod time;
