//! Tournament-coupled ("let a thousand flowers bloom") training of
//! cycle-consistent GAN surrogates.
//!
//! Several trainers each own a disjoint slice of the data and train their own
//! model with internal data parallelism. Periodically trainers pair up, swap
//! generator weights, score both candidates on a local held-out slice and
//! keep the better one. Discriminators never leave their trainer.

pub mod clock;
pub mod config;
pub mod datastore;
pub mod error;
pub mod experiment;
pub mod history;
pub mod nn;
pub mod surrogate;
pub mod synthdata;
pub mod tournament;
pub mod trainer;

pub use error::{Error, Result};
