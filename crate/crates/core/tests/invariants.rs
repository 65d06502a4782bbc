use grassnet_core::head::{self, PriorParams};
use grassnet_core::metrics::{self, FixationSet};
use grassnet_core::proposals::{self, BBox};
use grassnet_core::rng;
use grassnet_core::sgat::{self, SgatParams};
use grassnet_core::tensor::{ParamStore, Tape, Tensor, Var};
use proptest::prelude::*;

fn map_and_fixations() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<(usize, usize)>)> {
    (2usize..12, 2usize..12).prop_flat_map(|(h, w)| {
        (
            Just(h),
            Just(w),
            prop::collection::vec(0.0f64..1.0, h * w),
            prop::collection::vec((0..w, 0..h), 1..10),
        )
    })
}

fn boxes_in(h: usize, w: usize) -> impl Strategy<Value = Vec<BBox>> {
    let one = (0..w - 1, 0..h - 1, 1..w, 1..h).prop_map(move |(x0, y0, dx, dy)| {
        BBox::new(
            x0,
            y0,
            (x0 + dx).min(w - 1).max(x0 + 1),
            (y0 + dy).min(h - 1).max(y0 + 1),
        )
    });
    prop::collection::vec(one, 1..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_ranges((h, w, map, pts) in map_and_fixations(), seed in 0u64..1000) {
        prop_assume!(map.iter().any(|&v| (v - map[0]).abs() > 1e-9));
        let fix = FixationSet::new(w, h, pts).unwrap();
        let gt: Vec<f64> = rng::uniform(&mut rng::seeded(seed), &[h * w], 0.01, 1.0).into_data();
        let auc = metrics::auc_judd(&map, &fix).unwrap();
        let cc = metrics::cc(&map, &gt).unwrap();
        let sim = metrics::sim(&map, &gt).unwrap();
        let kl = metrics::kl(&map, &gt).unwrap();
        prop_assert!((0.0..=1.0).contains(&auc));
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&cc));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&sim));
        prop_assert!(kl >= -1e-12);
        prop_assert!((metrics::cc(&map, &map).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((metrics::sim(&map, &map).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!(metrics::kl(&gt, &gt).unwrap().abs() < 1e-12);
    }

    #[test]
    fn feature_windows_never_empty(boxes in boxes_in(40, 56), stride in 1usize..9) {
        let (fh, fw) = (40usize.div_ceil(stride), 56usize.div_ceil(stride));
        for b in boxes {
            let (y0, y1, x0, x1) = b.feature_window(stride, fh, fw);
            prop_assert!(y0 < y1 && y1 <= fh && x0 < x1 && x1 <= fw);
            prop_assert!(y0 * stride <= b.y0 && x0 * stride <= b.x0);
        }
    }

    #[test]
    fn projection_ignores_box_order(boxes in boxes_in(32, 32), seed in 0u64..1000) {
        let mut r = rng::seeded(seed);
        let blocks: Vec<Tensor> = boxes.iter().map(|_| rng::uniform(&mut r, &[2, 3, 3], -1.0, 1.0)).collect();
        let run = |order: &[usize]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = order.iter().map(|&i| tape.constant(&blocks[i])).collect();
            let bx: Vec<BBox> = order.iter().map(|&i| boxes[i]).collect();
            let out = proposals::project_back(&mut tape, (2, 4, 4), 8, &bx, &vars).unwrap();
            tape.value(out).to_vec()
        };
        let forward: Vec<usize> = (0..boxes.len()).collect();
        let reversed: Vec<usize> = forward.iter().rev().copied().collect();
        prop_assert_eq!(run(&forward), run(&reversed));
    }

    #[test]
    fn prior_maps_positive_and_peaked(
        h in 2usize..20,
        w in 2usize..20,
        mean in (0.0f64..1.0, 0.0f64..1.0),
        sigma in (0.05f64..0.5, 0.05f64..0.5),
    ) {
        let mut store = ParamStore::new();
        let priors = PriorParams::init(&mut store, &mut rng::seeded(0), 1);
        priors.set(&mut store, 0, mean, sigma).unwrap();
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let maps = head::prior_maps(&mut tape, &params, &priors, h, w).unwrap();
        let peak = 1.0 / (2.0 * std::f64::consts::PI * sigma.0 * sigma.1);
        for &v in tape.value(maps) {
            prop_assert!(v > 0.0 && v <= peak * (1.0 + 1e-9));
        }
    }

    #[test]
    fn attention_rows_are_distributions(
        p in 1usize..6,
        heads in prop::sample::select(vec![1usize, 2, 4]),
        links in prop::collection::vec(any::<bool>(), 36),
        seed in 0u64..1000,
    ) {
        let mut r = rng::seeded(seed);
        let mut store = ParamStore::new();
        let s = SgatParams::init(&mut store, &mut r, "s", 4, heads).unwrap();
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let blocks: Vec<Var> = (0..p).map(|_| tape.constant(&rng::uniform(&mut r, &[4, 2, 2], -2.0, 2.0))).collect();
        let nb: Vec<Vec<usize>> = (0..p).map(|i| (0..p).filter(|&j| j == i || links[i * 6 + j]).collect()).collect();
        let out = sgat::sgat_forward(&mut tape, &params, &s, &blocks, &nb).unwrap();
        for a in &out.attention {
            for (i, row) in tape.value(*a).chunks(p).enumerate() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for (j, &v) in row.iter().enumerate() {
                    prop_assert!(v >= 0.0);
                    if !nb[i].contains(&j) {
                        prop_assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }
}
