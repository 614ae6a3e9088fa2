use invex_topo_core::certify::{check_alpha_pl, CheckOptions};
use invex_topo_core::expr::{builtin, ScalarField};
use invex_topo_core::games::{lambda_operator, GameSpec, JointGridSet, LambdaOptions, PlayerSpec};
use invex_topo_core::grid::{cell_level_mask, connected_components, distance_field, distance_to_set, BoxDomain, CellMask, Direction, RegularGrid};
use invex_topo_core::minimax::is_product_set;
use proptest::prelude::*;

fn smooth_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("x0".to_string()),
        Just("x1".to_string()),
        (-3.0f64..3.0).prop_map(|c| format!("({c:.3})")),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.prop_map(|a| format!("exp(sin({a}))")),
        ]
    })
}

fn line(lo: f64, hi: f64) -> BoxDomain {
    BoxDomain::cube(1, lo, hi).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn gradient_matches_central_differences(text in smooth_expr(), x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let f = ScalarField::parse(&text, 2).unwrap();
        let g = f.gradient(&[x, y]).unwrap();
        // independent central difference with its own step
        let h = 1e-5;
        for i in 0..2 {
            let mut p = [x, y];
            p[i] += h;
            let fp = f.value(&p).unwrap();
            p[i] -= 2.0 * h;
            let fm = f.value(&p).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let scale = g[i].abs().max(f.value(&[x, y]).unwrap().abs()).max(1.0);
            prop_assert!((fd - g[i]).abs() <= 1e-5 * scale, "{text}: {} vs {}", fd, g[i]);
        }
    }

    #[test]
    fn smooth_builtins_match_central_differences(x in -1.9f64..1.9, y in -1.9f64..1.9) {
        for name in ["fig1_invex", "appB_exp", "doublewell", "quadratic", "fig4_u1", "fig4_u2"] {
            let f = builtin(name).unwrap();
            let p: Vec<f64> = [x, y].iter().copied().take(f.dim()).collect();
            prop_assert!(f.finite_difference_check(&p, 1e-6).unwrap() < 1e-6, "{name}");
        }
    }

    #[test]
    fn edt_matches_brute_force(bits in proptest::collection::vec(proptest::bool::weighted(0.1), 13 * 9)) {
        prop_assume!(bits.iter().any(|b| *b));
        let grid = RegularGrid::new(BoxDomain::new(vec![-1.0, 0.0], vec![2.0, 1.0]).unwrap(), vec![13, 9]).unwrap();
        let mut mask = CellMask::empty(&grid);
        mask.bits.copy_from_slice(&bits);
        let d = distance_field(&mask).unwrap();
        for node in 0..grid.len() {
            let p = grid.coord(node);
            let want = distance_to_set(&p, &mask).unwrap();
            prop_assert!((d[node] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn product_masks_count_and_factor(a in proptest::collection::vec(any::<bool>(), 7), b in proptest::collection::vec(any::<bool>(), 5)) {
        let ga = RegularGrid::uniform(line(0.0, 1.0), 7).unwrap();
        let gb = RegularGrid::uniform(line(0.0, 1.0), 5).unwrap();
        let joint = ga.product(&gb);
        let mask = CellMask::from_fn(&joint, |n, _| {
            let (i, j) = joint.split_node(n, 7);
            a[i] && b[j]
        });
        let ca = a.iter().filter(|x| **x).count();
        let cb = b.iter().filter(|x| **x).count();
        prop_assert_eq!(mask.count(), ca * cb);
        prop_assert!(is_product_set(&mask, 1));
        // component counts multiply for products of 1-d runs
        let runs = |v: &[bool]| v.iter().enumerate().filter(|(k, x)| **x && (*k == 0 || !v[k - 1])).count();
        prop_assert_eq!(connected_components(&mask).count, runs(&a) * runs(&b));
    }

    #[test]
    fn sublevel_sets_are_monotone(c1 in -0.5f64..3.0, dc in 0.0f64..2.0) {
        let f = builtin("fig1_invex").unwrap();
        let grid = RegularGrid::uniform(BoxDomain::cube(2, -3.0, 3.0).unwrap(), 31).unwrap();
        let lo = cell_level_mask(&f, &grid, c1, Direction::Sub).unwrap();
        let hi = cell_level_mask(&f, &grid, c1 + dc, Direction::Sub).unwrap();
        prop_assert!(lo.is_subset_of(&hi));
        let up_lo = cell_level_mask(&f, &grid, c1 + dc, Direction::Super).unwrap();
        let up_hi = cell_level_mask(&f, &grid, c1, Direction::Super).unwrap();
        prop_assert!(up_lo.is_subset_of(&up_hi));
    }

    #[test]
    fn certificates_are_reproducible(mu in 0.1f64..3.0) {
        let f = builtin("quadratic").unwrap();
        let grid = RegularGrid::uniform(BoxDomain::cube(2, -1.0, 1.0).unwrap(), 21).unwrap();
        let a = check_alpha_pl(&f, &grid, 2.0, mu, None, &CheckOptions::default()).unwrap();
        let b = check_alpha_pl(&f, &grid, 2.0, mu, None, &CheckOptions::default()).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

fn fig4() -> GameSpec {
    let p = PlayerSpec { dim: 1, domain: line(-2.0, 2.0) };
    GameSpec::new(vec![p.clone(), p], vec![builtin("fig4_u1").unwrap(), builtin("fig4_u2").unwrap()], None).unwrap()
}

fn nested_boxes() -> impl Strategy<Value = ([f64; 4], [f64; 4])> {
    // inner box per player, then an outer box widened by non-negative margins
    let edge = (-2.0f64..2.0, 0.0f64..2.0);
    let margin = (0.0f64..1.5, 0.0f64..1.5);
    (edge.clone(), edge, margin.clone(), margin).prop_map(|((l1, w1), (l2, w2), (a1, b1), (a2, b2))| {
        let inner = [l1, (l1 + w1).min(2.0), l2, (l2 + w2).min(2.0)];
        let outer = [(inner[0] - a1).max(-2.0), (inner[1] + b1).min(2.0), (inner[2] - a2).max(-2.0), (inner[3] + b2).min(2.0)];
        (inner, outer)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 50, ..ProptestConfig::default() })]

    #[test]
    fn lambda_is_monotone(pair in nested_boxes()) {
        let (inner, outer) = pair;
        let game = fig4();
        let g = RegularGrid::uniform(line(-2.0, 2.0), 41).unwrap();
        let grids = [g.clone(), g];
        let s = JointGridSet::from_box(&grids, &[line(inner[0], inner[1]), line(inner[2], inner[3])]);
        let t = JointGridSet::from_box(&grids, &[line(outer[0], outer[1]), line(outer[2], outer[3])]);
        prop_assume!(!s.is_empty());
        prop_assert!(s.is_subset_of(&t));
        let opts = LambdaOptions::default();
        let ls = lambda_operator(&game, &s, 1e-9, &opts).unwrap();
        let lt = lambda_operator(&game, &t, 1e-9, &opts).unwrap();
        prop_assert!(ls.set.is_subset_of(&lt.set));
    }
}
