use std::collections::HashMap;

use llmreward::client::ResponseCache;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reopened_cache_holds_the_first_write_of_every_key(
        entries in prop::collection::vec((0u8..12, ".{0,40}"), 0..30),
        split in 0usize..30,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let mut expected: HashMap<[u8; 32], String> = HashMap::new();
        let split = split.min(entries.len());
        // Two sessions, so later writes land in a reopened file.
        for part in [&entries[..split], &entries[split..]] {
            let cache = ResponseCache::open(&path).unwrap();
            for (k, v) in part {
                let key = [*k; 32];
                let fresh = cache.insert(key, v).unwrap();
                prop_assert_eq!(fresh, !expected.contains_key(&key));
                expected.entry(key).or_insert_with(|| v.clone());
            }
        }
        let cache = ResponseCache::open(&path).unwrap();
        prop_assert_eq!(cache.len(), expected.len());
        for (k, v) in &expected {
            let got = cache.get(k);
            prop_assert_eq!(got.as_deref(), Some(v.as_str()));
        }
        let keys = cache.keys();
        prop_assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }
}
