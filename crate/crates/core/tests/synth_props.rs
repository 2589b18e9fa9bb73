mod common;

use common::*;
use pagroup::grouping::cc_labels;
use pagroup::objectness::score_o_pa;
use pagroup::synth::{generate_scene, oracle_components, oracle_o_pa, verify_scene, SceneSpec, ShapeKind};
use pagroup::{BinaryMask, Error};
use proptest::prelude::*;

fn arb_spec() -> impl Strategy<Value = SceneSpec> {
    (
        12usize..48,
        12usize..48,
        0usize..4,
        0usize..6,
        0usize..3,
        any::<bool>(),
        prop::sample::subsequence(ShapeKind::ALL.to_vec(), 1..=3),
        any::<u64>(),
    )
        .prop_map(|(h, w, lo, extra, sep, contact, kinds, seed)| {
            let mut s = SceneSpec::new(dims(h, w), seed);
            s.n_instances = (lo, lo + extra);
            s.min_separation = sep;
            s.allow_contact = contact;
            s.shape_kinds = kinds;
            s
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn scenes_satisfy_their_spec(spec in arb_spec()) {
        match generate_scene(&spec) {
            Ok(set) => {
                prop_assert!(verify_scene(&spec, &set).is_ok(), "{:?}", verify_scene(&spec, &set));
                let again = generate_scene(&spec).unwrap();
                prop_assert_eq!(again.masks(), set.masks());
            }
            Err(Error::Placement { requested, achieved }) => prop_assert!(achieved < requested),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn component_oracle_agrees(aff in arb_affinity(14), t in 1u8..=4) {
        let t = t as f64 / 4.0;
        prop_assert_eq!(oracle_components(&aff, t).unwrap(), cc_labels(&aff, t));
    }

    #[test]
    fn o_pa_oracle_agrees(aff in arb_affinity(10), bits in prop::collection::vec(any::<bool>(), 100)) {
        let d = aff.dims();
        let m = BinaryMask::from_bools(d, &bits[..d.len()]).unwrap();
        prop_assume!(!m.is_empty());
        let (a, b) = (score_o_pa(&m, &aff).unwrap(), oracle_o_pa(&m, &aff).unwrap());
        prop_assert_eq!((a.inner_count, a.boundary_count), (b.inner_count, b.boundary_count));
        prop_assert!((a.inner_sum - b.inner_sum).abs() <= 1e-12);
        prop_assert!((a.outer_sum - b.outer_sum).abs() <= 1e-12);
        prop_assert!((a.o_pa - b.o_pa).abs() <= 1e-12);
    }
}

#[test]
fn oracles_refuse_large_grids() {
    let aff = pagroup::AffinityMap::<f64>::zeros(dims(10, 33));
    assert!(matches!(oracle_components(&aff, 0.5), Err(Error::OracleBudget(_))));
    assert!(matches!(oracle_o_pa(&BinaryMask::full(dims(10, 33)), &aff), Err(Error::OracleBudget(_))));
}
