mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;

use common::{disk_catalog, memory_catalog, records};
use ltfb::datastore::{
    read_bundle, read_header, write_bundles, BundleCatalog, DataStore, Source, StoreMode,
    HEADER_LEN,
};
use ltfb::surrogate::ModalityDims;
use ltfb::Error;

fn all_ids(c: &BundleCatalog) -> Vec<u32> {
    c.ids().collect()
}

#[test]
fn bundle_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let dims = ModalityDims::tiny();
    let recs = records(dims, 250);
    let paths = write_bundles(&recs, &dims, 100, dir.path()).unwrap();
    assert_eq!(paths.len(), 3);
    let mut back = Vec::new();
    for p in &paths {
        let (h, r) = read_bundle(p).unwrap();
        assert_eq!(h.dims, dims);
        back.extend(r);
    }
    assert_eq!(back.len(), recs.len());
    for (a, b) in recs.iter().zip(&back) {
        let bits = |r: &ltfb::synthdata::SampleRecord| -> Vec<u32> {
            r.output()
                .chain(r.input.iter().copied())
                .map(f32::to_bits)
                .collect()
        };
        assert_eq!(bits(a), bits(b));
    }
    assert_eq!(read_header(&paths[2]).unwrap().sample_count, 50);
}

#[test]
fn truncated_and_foreign_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let dims = ModalityDims::tiny();
    let paths = write_bundles(&records(dims, 10), &dims, 10, dir.path()).unwrap();
    let bytes = std::fs::read(&paths[0]).unwrap();
    std::fs::write(&paths[0], &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(
        read_bundle(&paths[0]),
        Err(Error::CorruptBundle { .. })
    ));
    assert!(matches!(
        BundleCatalog::open(dir.path()),
        Err(Error::CorruptBundle { .. })
    ));
    let mut foreign = bytes.clone();
    foreign[..4].copy_from_slice(b"HDF5");
    std::fs::write(&paths[0], &foreign).unwrap();
    assert!(matches!(
        read_bundle(&paths[0]),
        Err(Error::CorruptBundle { .. })
    ));
    assert!(matches!(
        read_bundle(&dir.path().join("missing.lbds")),
        Err(Error::Io { .. })
    ));
    assert!(HEADER_LEN < bytes.len());
}

#[test]
fn memory_and_disk_catalogs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let disk = disk_catalog(dir.path(), ModalityDims::tiny(), 120, 50);
    let mem = memory_catalog(120, 50);
    assert_eq!(disk.files().len(), mem.files().len());
    for id in [0, 49, 50, 119] {
        assert_eq!(disk.read_one(id).unwrap(), mem.read_one(id).unwrap());
    }
}

#[test]
fn preload_single_shard_opens_each_file_once() {
    let cat = memory_catalog(300, 100);
    let mut s = DataStore::new(cat.clone(), all_ids(&cat), 1, StoreMode::Preload, None).unwrap();
    s.preload().unwrap();
    assert_eq!(s.counters().file_opens, vec![1, 1, 1]);
    assert_eq!(s.shard_ids(0).len(), 300);
}

#[test]
fn preload_four_shards_is_disjoint_and_covering() {
    let cat = memory_catalog(800, 100);
    let ids = all_ids(&cat);
    let mut s = DataStore::new(cat.clone(), ids.clone(), 4, StoreMode::Preload, None).unwrap();
    s.preload().unwrap();
    let mut union = BTreeSet::new();
    for shard in 0..4 {
        let owned = s.shard_ids(shard);
        assert_eq!(owned.len(), 200);
        assert!(union.is_disjoint(&owned));
        union.extend(owned);
    }
    assert_eq!(union, ids.into_iter().collect());
    // one opener per file
    assert!(s.counters().file_opens.iter().all(|&n| n == 1));
    assert!(s.counters().file_openers.iter().all(|o| o.len() == 1));
}

#[test]
fn over_budget_preload_leaves_store_untouched() {
    let cat = memory_catalog(100, 50);
    let mut s = DataStore::new(cat.clone(), all_ids(&cat), 2, StoreMode::Preload, Some(0)).unwrap();
    assert!(matches!(
        s.preload(),
        Err(Error::Capacity { available: 0, .. })
    ));
    assert!(s.cached_ids().is_empty());
    assert_eq!(s.counters().files_opened, 0);
}

#[test]
fn dynamic_store_hits_cache_after_first_touch() {
    let cat = memory_catalog(200, 50);
    let mut s = DataStore::new(cat.clone(), all_ids(&cat), 2, StoreMode::Dynamic, None).unwrap();
    let a = s.dynamic_fetch(17).unwrap();
    let opened = s.counters().files_opened;
    let b = s.dynamic_fetch(17).unwrap();
    assert_eq!(a, b);
    assert_eq!(s.counters().files_opened, opened);
}

#[test]
fn dynamic_steady_state_reads_nothing() {
    let cat = memory_catalog(500, 50);
    let ids = all_ids(&cat);
    let mut s = DataStore::new(cat.clone(), ids.clone(), 3, StoreMode::Dynamic, None).unwrap();
    for epoch in 0..3 {
        let plan = s.plan_epoch(epoch, 4, 64).unwrap();
        for step in 0..plan.num_steps() {
            s.shuffle_step(&plan, step).unwrap();
        }
        s.end_epoch(epoch + 1);
    }
    let per_epoch = &s.counters().per_epoch;
    assert_eq!(per_epoch[0].files_opened, 500);
    assert_eq!(per_epoch[1].files_opened, 0);
    assert_eq!(per_epoch[2].files_opened, 0);
    // fetching everything once caches exactly the partition
    assert_eq!(s.cached_ids(), ids.into_iter().collect());
}

#[test]
fn mode_none_reads_every_epoch() {
    let cat = memory_catalog(120, 40);
    let mut s = DataStore::new(cat.clone(), all_ids(&cat), 2, StoreMode::None, None).unwrap();
    for epoch in 0..2 {
        let plan = s.plan_epoch(epoch, 0, 32).unwrap();
        assert!(plan
            .transfers
            .iter()
            .flatten()
            .all(|t| matches!(t.from, Source::File(_))));
        for step in 0..plan.num_steps() {
            s.shuffle_step(&plan, step).unwrap();
        }
        s.end_epoch(epoch + 1);
    }
    assert!(s.counters().per_epoch.iter().all(|e| e.files_opened == 120));
    assert!(s.cached_ids().is_empty());
}

#[test]
fn plan_examples() {
    let cat = memory_catalog(1000, 100);
    let mut one = DataStore::new(cat.clone(), vec![0], 1, StoreMode::Preload, None).unwrap();
    one.preload().unwrap();
    assert_eq!(one.plan_epoch(0, 1, 128).unwrap().permutation, vec![0]);

    let mut s = DataStore::new(cat.clone(), all_ids(&cat), 1, StoreMode::Preload, None).unwrap();
    s.preload().unwrap();
    let plan = s.plan_epoch(2, 7, 128).unwrap();
    assert_eq!(plan, s.plan_epoch(2, 7, 128).unwrap());
    let sizes: Vec<usize> = plan.slices().map(<[u32]>::len).collect();
    assert_eq!(sizes.len(), 8);
    assert!(sizes[..7].iter().all(|&n| n == 128));
    assert_eq!(sizes[7], 104);
    // one shard: nothing ever moves
    for step in 0..plan.num_steps() {
        s.shuffle_step(&plan, step).unwrap();
    }
    assert_eq!(s.counters().samples_shuffled, 0);
}

#[test]
fn two_shard_transfer_count_matches_plan() {
    let cat = memory_catalog(400, 50);
    let mut s = DataStore::new(cat.clone(), all_ids(&cat), 2, StoreMode::Preload, None).unwrap();
    s.preload().unwrap();
    let plan = s.plan_epoch(0, 3, 64).unwrap();
    let expected = plan
        .transfers
        .iter()
        .flatten()
        .filter(|t| t.is_remote())
        .count() as u64;
    assert!(expected > 0);
    for step in 0..plan.num_steps() {
        s.shuffle_step(&plan, step).unwrap();
    }
    assert_eq!(s.counters().samples_shuffled, expected);
}

#[test]
fn evicted_sample_is_reported_as_corruption() {
    let cat = memory_catalog(100, 50);
    let mut s = DataStore::new(cat.clone(), all_ids(&cat), 2, StoreMode::Preload, None).unwrap();
    s.preload().unwrap();
    let plan = s.plan_epoch(0, 0, 100).unwrap();
    let victim = plan.slice(0)[0];
    s.corrupt_evict(victim);
    assert!(matches!(
        s.shuffle_step(&plan, 0),
        Err(Error::StoreCorruption { sample, .. }) if sample == victim
    ));
}

#[test]
fn dynamic_and_preload_streams_agree_from_second_epoch() {
    let cat = memory_catalog(300, 30);
    let ids = all_ids(&cat);
    let mut dy = DataStore::new(cat.clone(), ids.clone(), 3, StoreMode::Dynamic, None).unwrap();
    let mut pre = DataStore::new(cat.clone(), ids, 3, StoreMode::Preload, None).unwrap();
    pre.preload().unwrap();
    for epoch in 0..3 {
        let pd = dy.plan_epoch(epoch, 9, 40).unwrap();
        let pp = pre.plan_epoch(epoch, 9, 40).unwrap();
        assert_eq!(pd.permutation, pp.permutation);
        for step in 0..pd.num_steps() {
            let a = dy.shuffle_step(&pd, step).unwrap();
            let b = pre.shuffle_step(&pp, step).unwrap();
            assert_eq!(a.parts.len(), b.parts.len());
            for (x, y) in a.parts.iter().zip(&b.parts) {
                assert_eq!(x.len(), y.len());
                for ((ia, ra), (ib, rb)) in x.iter().zip(y) {
                    assert_eq!(ia, ib);
                    assert_eq!(ra, rb);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_epoch_delivers_the_partition_exactly_once(
        n in 1usize..300,
        shards in 1usize..6,
        batch in 1usize..70,
        seed in any::<u64>(),
        keep in 1usize..4,
    ) {
        let cat = memory_catalog(n, 37);
        let ids: Vec<u32> = cat.ids().filter(|i| (*i as usize).is_multiple_of(keep)).collect();
        let mut s = DataStore::new(Arc::clone(&cat), ids.clone(), shards, StoreMode::Preload, None).unwrap();
        s.preload().unwrap();
        for epoch in 0..2 {
            let plan = s.plan_epoch(epoch, seed, batch).unwrap();
            let mut seen = Vec::new();
            for step in 0..plan.num_steps() {
                let mb = s.shuffle_step(&plan, step).unwrap();
                let sizes: Vec<usize> = mb.parts.iter().map(Vec::len).collect();
                prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
                seen.extend(mb.ids());
            }
            seen.sort_unstable();
            prop_assert_eq!(&seen, &ids);
        }
    }
}
