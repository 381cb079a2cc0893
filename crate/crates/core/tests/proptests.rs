//! Property tests for the structural invariants: CSV round trips are
//! bit-exact, natural spline bases reproduce linear functions, and pooling
//! is order-invariant.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use proptest::prelude::*;

use srmi_core::data::{Column, Dataset, StrategyKind, VarKind, VariableSpec};
use srmi_core::design::NaturalSplineBasis;
use srmi_core::glm::{fit_linear, FitOptions};
use srmi_core::pool::pool_scalar;

fn value_for(kind: VarKind, raw: f64, level_pick: u8) -> f64 {
    match kind {
        VarKind::Continuous => raw,
        VarKind::Binary => (level_pick % 2) as f64,
        VarKind::Categorical { max_level } => (level_pick as usize % (max_level + 1)) as f64,
    }
}

fn kind_strategy() -> impl Strategy<Value = VarKind> {
    prop_oneof![
        Just(VarKind::Continuous),
        Just(VarKind::Binary),
        (2usize..4).prop_map(|max_level| VarKind::Categorical { max_level }),
    ]
}

prop_compose! {
    fn dataset_strategy()(
        n in 1usize..10,
        kinds in prop::collection::vec(kind_strategy(), 3),
    )(
        raw in prop::collection::vec(
            prop::collection::vec((-1e15f64..1e15, any::<u8>(), any::<bool>()), 3),
            n,
        ),
        kinds in Just(kinds),
        n in Just(n),
    ) -> Dataset {
        let columns = (0..3)
            .map(|j| {
                let kind = kinds[j];
                let mut values = Vec::with_capacity(n);
                let mut observed = Vec::with_capacity(n);
                for row in raw.iter() {
                    let (v, pick, obs) = row[j];
                    // first column always observed so no row is empty
                    let obs = obs || j == 0;
                    values.push(if obs { value_for(kind, v, pick) } else { f64::NAN });
                    observed.push(obs);
                }
                Column {
                    name: format!("v{j}"),
                    spec: VariableSpec::new(kind, StrategyKind::Srmi),
                    values,
                    observed,
                }
            })
            .collect();
        Dataset::new(columns).expect("generated dataset is valid")
    }
}

proptest! {
    #[test]
    fn csv_round_trip_is_bit_exact(ds in dataset_strategy()) {
        let specs: HashMap<String, VariableSpec> = ds
            .columns()
            .iter()
            .map(|c| (c.name.clone(), c.spec))
            .collect();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = Dataset::load_csv(buf.as_slice(), &specs).unwrap();
        prop_assert_eq!(back.n_rows(), ds.n_rows());
        for j in 0..ds.n_vars() {
            prop_assert_eq!(back.observed(j), ds.observed(j));
            for i in 0..ds.n_rows() {
                if ds.observed(j)[i] {
                    prop_assert_eq!(
                        back.column(j).values[i].to_bits(),
                        ds.column(j).values[i].to_bits()
                    );
                }
            }
        }
    }

    #[test]
    fn natural_spline_reproduces_linear_functions(
        seedbase in -5.0f64..5.0,
        spread in 0.5f64..20.0,
        df in 3usize..6,
        intercept in -10.0f64..10.0,
        slope in -10.0f64..10.0,
    ) {
        let xs: Vec<f64> = (0..40).map(|i| seedbase + spread * i as f64 / 39.0).collect();
        let basis = NaturalSplineBasis::from_values(&xs, df).unwrap();
        let width = basis.df();
        let mut x = Array2::<f64>::zeros((xs.len(), width + 1));
        let mut y = Array1::<f64>::zeros(xs.len());
        for (i, &v) in xs.iter().enumerate() {
            x[[i, 0]] = 1.0;
            for (c, b) in basis.eval(v).into_iter().enumerate() {
                x[[i, c + 1]] = b;
            }
            y[i] = intercept + slope * v;
        }
        let fit = fit_linear(&x, &y, None, &FitOptions::dropping()).unwrap();
        // the basis contains the identity, so a linear response is exact
        prop_assert!(fit.rss < 1e-12 * (1.0 + y.iter().map(|v| v * v).sum::<f64>()));
    }

    #[test]
    fn pooling_is_invariant_to_imputation_order(
        mut pairs in prop::collection::vec((-10.0f64..10.0, 0.01f64..5.0), 3..8),
        swap_a in 0usize..8,
        swap_b in 0usize..8,
    ) {
        let base = pool_scalar("q", &pairs).unwrap();
        let (a, b) = (swap_a % pairs.len(), swap_b % pairs.len());
        pairs.swap(a, b);
        let shuffled = pool_scalar("q", &pairs).unwrap();
        prop_assert!((base.estimate - shuffled.estimate).abs() < 1e-12);
        prop_assert!((base.total - shuffled.total).abs() < 1e-12);
        prop_assert!((base.ci_lower - shuffled.ci_lower).abs() < 1e-10);
    }
}
