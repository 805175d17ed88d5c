//! Property tests for the algebraic and pipeline invariants.

use chrono::NaiveDateTime;
use proptest::prelude::*;
use trafficast::data::{
    aggregate, build_windows, split, ColumnMap, RawRecord, VolumeSeries,
};
use trafficast::linalg::{hadamard, l2_norm, matmul, sigmoid_scalar, Matrix};

fn series_from(values: Vec<f64>) -> VolumeSeries {
    VolumeSeries {
        intersection_id: "P".into(),
        start: NaiveDateTime::parse_from_str("2024-01-01 00:00", "%Y-%m-%d %H:%M").unwrap(),
        bin_minutes: 15,
        values,
    }
}

fn arb_matrix(max_dim: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
        prop::collection::vec(-1e6f64..1e6, r * c)
            .prop_map(move |data| Matrix::from_vec(r, c, data).unwrap())
    })
}

proptest! {
    #[test]
    fn matmul_identity_is_exact(m in arb_matrix(6)) {
        let left = matmul(&Matrix::identity(m.rows()), &m).unwrap();
        let right = matmul(&m, &Matrix::identity(m.cols())).unwrap();
        prop_assert_eq!(&left, &m);
        prop_assert_eq!(&right, &m);
    }

    #[test]
    fn hadamard_commutes_exactly(pair in (1..=6usize, 1..=6usize).prop_flat_map(|(r, c)| {
        (prop::collection::vec(-1e6f64..1e6, r * c), prop::collection::vec(-1e6f64..1e6, r * c))
            .prop_map(move |(a, b)| (
                Matrix::from_vec(r, c, a).unwrap(),
                Matrix::from_vec(r, c, b).unwrap(),
            ))
    })) {
        let (a, b) = pair;
        prop_assert_eq!(hadamard(&a, &b).unwrap(), hadamard(&b, &a).unwrap());
    }

    #[test]
    fn sigmoid_symmetry(x in -30.0f64..30.0) {
        prop_assert!((sigmoid_scalar(x) + sigmoid_scalar(-x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l2_norm_ignores_shape(values in prop::collection::vec(-1e3f64..1e3, 1..24), cut in 0usize..24) {
        let flat = Matrix::from_vec(1, values.len(), values.clone()).unwrap();
        let column = Matrix::from_vec(values.len(), 1, values.clone()).unwrap();
        let whole = l2_norm(&[&flat]).unwrap();
        prop_assert!((whole - l2_norm(&[&column]).unwrap()).abs() < 1e-12);

        let cut = cut.min(values.len() - 1).max(1).min(values.len());
        if cut < values.len() {
            let a = Matrix::from_vec(1, cut, values[..cut].to_vec()).unwrap();
            let b = Matrix::from_vec(1, values.len() - cut, values[cut..].to_vec()).unwrap();
            prop_assert!((whole - l2_norm(&[&a, &b]).unwrap()).abs() < 1e-9 * whole.max(1.0));
        }
    }

    #[test]
    fn window_count_and_alignment(values in prop::collection::vec(0.0f64..1e4, 13..80)) {
        let ds = build_windows(&series_from(values.clone()), 12).unwrap();
        prop_assert_eq!(ds.len(), values.len() - 12);
        for k in 0..ds.len() {
            prop_assert_eq!(ds.labels[k], values[k + 12]);
            prop_assert_eq!(ds.windows[k].as_slice(), &values[k..k + 12]);
        }
    }

    #[test]
    fn splits_partition_the_sample_range(
        n in 30usize..200,
        train in 0.3f64..0.8,
        val_share in 0.2f64..0.7,
    ) {
        let val = (1.0 - train) * val_share;
        let test = 1.0 - train - val;
        prop_assume!(test > 0.02 && val > 0.02);
        let values: Vec<f64> = (0..n + 12).map(|v| v as f64).collect();
        let mut ds = build_windows(&series_from(values), 12).unwrap();
        if split(&mut ds, train, val, test).is_ok() {
            let idx = ds.split.unwrap();
            prop_assert_eq!(idx.train().start, 0);
            prop_assert_eq!(idx.train().end, idx.validation().start);
            prop_assert_eq!(idx.validation().end, idx.test().start);
            prop_assert_eq!(idx.test().end, n);
            prop_assert!(!idx.train().is_empty());
            prop_assert!(!idx.validation().is_empty());
            prop_assert!(!idx.test().is_empty());
        }
    }

    #[test]
    fn aggregation_is_permutation_invariant(perm_seed in 0u64..1000, volumes in prop::collection::vec(0.0f64..50.0, 4..40)) {
        let records: Vec<RawRecord> = volumes
            .iter()
            .enumerate()
            .map(|(i, &v)| RawRecord {
                intersection_id: "A".into(),
                timestamp: NaiveDateTime::parse_from_str("2024-01-01 00:00", "%Y-%m-%d %H:%M")
                    .unwrap()
                    + chrono::Duration::minutes((i as i64 * 7) % 300),
                direction: if i % 2 == 0 { "NB" } else { "SB" }.into(),
                vehicle_class: "car".into(),
                volume: v,
                row: i + 1,
            })
            .collect();
        let mut shuffled = records.clone();
        // Deterministic Fisher-Yates driven by the seed.
        let mut state = perm_seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (state >> 33) as usize % (i + 1);
            shuffled.swap(i, j);
        }
        let (a, ga) = aggregate(&records, 15, None).unwrap();
        let (b, gb) = aggregate(&shuffled, 15, None).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(ga, gb);
    }
}

#[test]
fn default_column_map_matches_documented_header() {
    let m = ColumnMap::default();
    assert_eq!(
        format!(
            "{},{},{},{},{}",
            m.intersection_id, m.timestamp, m.direction, m.vehicle_class, m.volume
        ),
        "intersection_id,timestamp,direction,vehicle_class,volume"
    );
}
