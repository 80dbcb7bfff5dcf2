//! Distributed in-memory data store.
//!
//! Each trainer owns a partition of the sample ids. Within the trainer the
//! partition is cached across shards (workers), each shard owning a disjoint
//! subset. Every step, owners hand the samples of the next minibatch to the
//! shards that consume them, following a seeded per-epoch plan.

mod bundle;
mod plan;
mod store;

pub use bundle::{
    bundle_file_name, encode_bundle, read_bundle, read_header, write_bundles, BundleCatalog,
    BundleEntry, BundleHeader, SampleId, EXTENSION, HEADER_LEN, MAGIC, VERSION,
};
pub use plan::{epoch_permutation, split_even, EpochPlan, Source, Transfer};
pub use store::{AccessCounters, DataStore, EpochCounters, MiniBatch, StoreMode};
