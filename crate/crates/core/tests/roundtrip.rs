//! Fuzzed save/load round-trips for feature stores and checkpoints.

mod common;

use common::fuzz::{check_checkpoint, check_store, config_case, store_case, CASES};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn feature_store_roundtrip_is_bit_exact(case in store_case()) {
        check_store(&case)?;
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact(case in config_case()) {
        check_checkpoint(&case)?;
    }
}
