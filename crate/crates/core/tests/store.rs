use std::collections::HashMap;

use proptest::prelude::*;

use blockivf::store::{BlockId, CentralMemoryPool, PoolConfig, StoreError};

fn pool(blocks: usize, cap: usize, dim: usize) -> CentralMemoryPool {
    CentralMemoryPool::new(PoolConfig::new(blocks, cap, dim)).unwrap()
}

#[test]
fn thousand_random_writes_read_back() {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let (blocks, cap, dim) = (16, 64, 5);
    let p = pool(blocks, cap, dim);
    for _ in 0..blocks {
        p.alloc_block().unwrap();
    }
    let mut slots: Vec<(u32, usize)> = (0..blocks as u32).flat_map(|b| (0..cap).map(move |s| (b, s))).collect();
    slots.shuffle(&mut rng);
    let mut oracle = HashMap::new();
    for (i, &(b, s)) in slots.iter().take(1000).enumerate() {
        let v: Vec<f32> = (0..dim).map(|_| rng.random()).collect();
        p.write_slot(BlockId(b), s, i as u64, &v).unwrap();
        oracle.insert((b, s), (i as u64, v));
    }
    for b in 0..blocks as u32 {
        let size = p.size(BlockId(b));
        assert!((0..size).all(|s| oracle.contains_key(&(b, s))));
        assert!(size == cap || !oracle.contains_key(&(b, size)));
        for s in 0..size {
            assert_eq!(&p.read_slot(BlockId(b), s).unwrap(), &oracle[&(b, s)]);
        }
    }
}

#[test]
fn blocks_stay_put_while_the_pool_fills() {
    let p = pool(64, 4, 3);
    let first = p.alloc_block().unwrap();
    p.write_slot(first, 0, 11, &[1.0, 2.0, 3.0]).unwrap();
    let header = p.header(first);
    for _ in 1..64 {
        let b = p.alloc_block().unwrap();
        p.write_slot(b, 0, b.0 as u64 + 100, &[0.0; 3]).unwrap();
    }
    assert_eq!(p.read_slot(first, 0).unwrap(), (11, vec![1.0, 2.0, 3.0]));
    assert_eq!(p.header(first).size, header.size);
    assert!(matches!(p.alloc_block(), Err(StoreError::PoolExhausted { num_blocks: 64 })));
    assert_eq!(p.cursor(), 64);
}

#[test]
fn three_block_chain_yields_ids_in_order() {
    let p = pool(3, 2, 1);
    let ids = [[0u64, 2], [6, 7], [9, 10]];
    let blocks: Vec<BlockId> = (0..3).map(|_| p.alloc_block().unwrap()).collect();
    for (b, pair) in blocks.iter().zip(ids) {
        for (s, id) in pair.into_iter().enumerate() {
            p.write_slot(*b, s, id, &[id as f32]).unwrap();
        }
    }
    p.link_blocks(blocks[0], blocks[1]).unwrap();
    p.link_blocks(blocks[1], blocks[2]).unwrap();
    let t = p.traverse_list(blocks[0]).unwrap();
    assert_eq!(t.entries.iter().map(|e| e.0).collect::<Vec<_>>(), vec![0, 2, 6, 7, 9, 10]);
    assert_eq!(t.stats.hops, 2);
    assert!(matches!(p.traverse_list(blocks[1]), Err(StoreError::NotAHead { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slot_round_trip(cap in 1usize..80, dim in 1usize..40, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p = pool(1, cap, dim);
        let b = p.alloc_block().unwrap();
        let rows: Vec<Vec<f32>> = (0..cap).map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        for (s, r) in rows.iter().enumerate() {
            p.write_slot(b, s, s as u64 * 3, r).unwrap();
        }
        prop_assert_eq!(p.size(b), cap);
        for (s, r) in rows.iter().enumerate() {
            prop_assert_eq!(p.read_slot(b, s).unwrap(), (s as u64 * 3, r.clone()));
        }
    }

    #[test]
    fn hops_match_block_count(n in 1usize..300, cap in 1usize..32) {
        let blocks = n.div_ceil(cap);
        let p = pool(blocks, cap, 2);
        let mut prev = None;
        for i in 0..n {
            if i % cap == 0 {
                let b = p.alloc_block().unwrap();
                if let Some(t) = prev {
                    p.link_blocks(t, b).unwrap();
                }
                prev = Some(b);
            }
            p.write_slot(prev.unwrap(), i % cap, i as u64, &[i as f32, 0.0]).unwrap();
        }
        let t = p.traverse_list(BlockId(0)).unwrap();
        prop_assert_eq!(t.stats.hops, blocks - 1);
        prop_assert_eq!(t.entries.len(), n);
        prop_assert!(t.entries.iter().enumerate().all(|(i, e)| e.0 == i as u64));
    }
}
