//! Property tests for the grid invariants and loss functions.

use proptest::prelude::*;

use heatlens::grid::{
    align_stack, denormalize, resample_bilinear, resample_nearest, zscore_normalize,
    CategoricalGrid, Grid, GridHeader,
};
use heatlens::tree::{negative_gradient, pinball_loss};

fn header_strategy() -> impl Strategy<Value = GridHeader> {
    (2usize..12, 2usize..12, -60.0f64..60.0, -170.0f64..170.0, 0.01f64..1.0).prop_map(
        |(rows, cols, lat_min, lon_min, cell)| {
            GridHeader::new(rows, cols, lat_min, lon_min, cell).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Bilinear resampling reproduces any bilinear function of lat/lon
    /// exactly at target cell centers inside the source hull.
    #[test]
    fn bilinear_exact_for_bilinear_functions(
        header in header_strategy(),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
        c in -5.0f64..5.0,
        d in -0.5f64..0.5,
    ) {
        let f = |lat: f64, lon: f64| a + b * lat + c * lon + d * lat * lon;
        let mut values = Vec::with_capacity(header.n_cells());
        for r in 0..header.rows {
            for col in 0..header.cols {
                values.push(f(header.row_lat(r), header.col_lon(col)));
            }
        }
        let src = Grid::new(header, values, "x").unwrap();

        // Target strictly inside the source cell-center hull at 1.5x cell
        // size, so no clamping is involved.
        let t_cell = header.cell_size * 1.5;
        let t_rows = ((header.rows as f64 - 1.0) * header.cell_size / t_cell).floor() as usize;
        let t_cols = ((header.cols as f64 - 1.0) * header.cell_size / t_cell).floor() as usize;
        prop_assume!(t_rows >= 1 && t_cols >= 1);
        let target = GridHeader::new(
            t_rows,
            t_cols,
            header.lat_min + 0.5 * header.cell_size,
            header.lon_min + 0.5 * header.cell_size,
            t_cell,
        )
        .unwrap();
        prop_assume!(target.lat_max <= header.lat_max && target.lon_max <= header.lon_max);

        let out = resample_bilinear(&src, &target).unwrap();
        for r in 0..t_rows {
            for col in 0..t_cols {
                let want = f(target.row_lat(r), target.col_lon(col));
                let got = out.get(r, col);
                prop_assert!(
                    (got - want).abs() <= 1e-9 * want.abs().max(1.0),
                    "({r},{col}): {got} vs {want}"
                );
            }
        }
    }

    /// Resampling a categorical grid onto its own header is the identity.
    #[test]
    fn nearest_resample_identity(
        header in header_strategy(),
        seed in 0u64..1000,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let legend: std::collections::BTreeMap<i16, String> =
            (0..4).map(|i| (i, format!("class{i}"))).collect();
        let codes: Vec<i16> = (0..header.n_cells())
            .map(|_| if rng.random_bool(0.1) { -1 } else { rng.random_range(0..4) })
            .collect();
        let src = CategoricalGrid::new(header, codes, legend, -1).unwrap();
        let out = resample_nearest(&src, &header).unwrap();
        prop_assert_eq!(out.codes(), src.codes());
    }

    /// Denormalizing with the stored record recovers the original values.
    #[test]
    fn normalization_round_trip(
        header in header_strategy(),
        seed in 0u64..1000,
        scale in 0.1f64..50.0,
        offset in -100.0f64..100.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..header.n_cells())
            .map(|_| offset + scale * rng.random_range(-1.0..1.0))
            .collect();
        let distinct = values.iter().any(|v| *v != values[0]);
        prop_assume!(distinct);
        let grid = Grid::new(header, values, "x").unwrap();
        let (z, rec) = zscore_normalize(&grid, "f", 2003, "MAM").unwrap();
        let back = denormalize(&z, &rec);
        for (a, b) in back.values().iter().zip(grid.values()) {
            prop_assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
        }
    }

    /// No resampling operation creates a valid output cell out of exclusively
    /// invalid inputs: an all-nodata source yields an all-nodata output, and
    /// with a partially masked source, identity resampling preserves the mask.
    #[test]
    fn mask_monotonicity(
        header in header_strategy(),
        seed in 0u64..1000,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let all_nan = vec![f64::NAN; header.n_cells()];
        let src = Grid::new(header, all_nan, "x").unwrap();
        let out = resample_bilinear(&src, &header).unwrap();
        prop_assert_eq!(out.n_valid(), 0);

        let values: Vec<f64> = (0..header.n_cells())
            .map(|_| if rng.random_bool(0.3) { f64::NAN } else { rng.random_range(0.0..1.0) })
            .collect();
        let src = Grid::new(header, values, "x").unwrap();
        let out = resample_bilinear(&src, &header).unwrap();
        for i in 0..header.n_cells() {
            if out.valid_mask()[i] {
                prop_assert!(src.valid_mask()[i], "cell {i} appeared from nodata");
            }
        }
    }

    /// The joint stack mask never validates a pixel that any layer masks off.
    #[test]
    fn stack_mask_is_conjunction(
        header in header_strategy(),
        seed in 0u64..1000,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut make = || {
            let values: Vec<f64> = (0..header.n_cells())
                .map(|_| if rng.random_bool(0.2) { f64::NAN } else { 1.0 })
                .collect();
            Grid::new(header, values, "x").unwrap()
        };
        let a = make();
        let b = make();
        let stack = align_stack(vec![("A".into(), a.clone()), ("B".into(), b.clone())]).unwrap();
        for i in 0..header.n_cells() {
            prop_assert_eq!(
                stack.joint_valid_mask()[i],
                a.valid_mask()[i] && b.valid_mask()[i]
            );
        }
    }

    /// Pinball loss is nonnegative, zero exactly at equality, and its
    /// negative gradient matches the subgradient sign structure.
    #[test]
    fn pinball_loss_properties(
        y in -100.0f64..100.0,
        pred in -100.0f64..100.0,
        tau in 0.01f64..0.99,
    ) {
        let loss = pinball_loss(y, pred, tau);
        prop_assert!(loss >= 0.0);
        if y == pred {
            prop_assert_eq!(loss, 0.0);
        }
        let g = negative_gradient(y, pred, tau);
        if y > pred {
            prop_assert_eq!(g, tau);
        } else if y < pred {
            prop_assert_eq!(g, tau - 1.0);
        } else {
            prop_assert_eq!(g, 0.0);
        }
        // The loss decreases when stepping toward y.
        let step = 0.5 * (y - pred);
        prop_assert!(pinball_loss(y, pred + step, tau) <= loss + 1e-12);
    }
}
