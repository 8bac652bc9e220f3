mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use degen_control::algebra::kalman_matrix;
use degen_control::dynamics::{duality_terms, ControlInjection, ControlSignal, ObservationRule, TimeGrid};
use degen_control::hum::gramian_apply;
use degen_control::preset;
use degen_control::semilinear::{linearize, mean_value_defect, NonlinearitySpec};
use degen_control::spectral::build_basis;

use common::{dot, lcg_vector};

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn kalman_blocks_are_powers(lambda in 0.1f64..100.0, seed in 0u64..1000) {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, lcg_vector(1, seed)[0], 0.0, 2.0]);
        let a = DMatrix::from_column_slice(2, 2, &lcg_vector(4, seed + 1));
        let b = DMatrix::from_column_slice(2, 1, &lcg_vector(2, seed + 2));
        let k = kalman_matrix(lambda, &d, &a, &b);
        let m = &d * lambda - &a;
        let mut block = b.clone();
        for p in 0..2 {
            // Blocks are ordered from the highest power on the left down to B.
            let col = k.columns(1 - p, 1);
            prop_assert!((col - &block).amax() <= 1e-12 * (1.0 + block.amax()));
            block = &m * block;
        }
    }

    #[test]
    fn mean_value_identity(scale in -3.0f64..3.0, seed in 0u64..1000) {
        let f = NonlinearitySpec::reversed_sine(2, scale);
        let fields = vec![lcg_vector(16, seed).iter().map(|v| 4.0 * v).collect::<Vec<_>>(), lcg_vector(16, seed + 7)];
        let a_y = linearize(&f, &fields);
        prop_assert!(mean_value_defect(&f, &fields, &a_y) <= 1e-8);
    }

    #[test]
    fn duality_and_positivity(seed in 0u64..10_000) {
        let spec = preset("jordan-cascade").unwrap();
        let basis = build_basis(&spec.coefficient, 100, 4).unwrap();
        let grid = TimeGrid::new(spec.horizon, 8).unwrap();
        let inj = ControlInjection::new(&basis, spec.omega, &spec.control).unwrap();
        let v = ControlSignal::from_values(8, inj.nodes(), 1, lcg_vector(8 * inj.nodes(), seed)).unwrap();
        let y0 = lcg_vector(8, seed + 1);
        let z = lcg_vector(8, seed + 2);
        let terms = duality_terms(&spec, &basis, &v, &y0, &z, &grid, ObservationRule::IntervalAverage).unwrap();
        prop_assert!(terms.relative() <= 1e-10);
        let lz = gramian_apply(&spec, &basis, &z, &grid).unwrap();
        prop_assert!(dot(&lz, &z) >= -1e-14 * dot(&z, &z));
    }
}
