use proptest::prelude::*;

use retseg::attention::{attention_step, grid_entropy, Fixation, ScanParams};
use retseg::dataio::{decode_mask, encode_mask, ClassPalette};
use retseg::grid::{cell_count, CellRect, GridPmf, RetinaGrid};
use retseg::image::LabelImage;
use retseg::metrics::score;
use retseg::predictor::{loss, parse_architecture, Model, PredictorConfig, PROB_FLOOR};
use retseg::probmap::{ProbabilityMap, Segmentation, UNKNOWN_CLASS};

fn pmf_rows(cells: usize, classes: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, classes), cells).prop_map(|rows| {
        rows.into_iter()
            .flat_map(|r| {
                let s: f64 = r.iter().sum();
                if s <= 1e-12 {
                    let mut one = vec![0.0; r.len()];
                    one[0] = 1.0;
                    one
                } else {
                    r.into_iter().map(|v| v / s).collect()
                }
            })
            .collect()
    })
}

fn grid_pmf(cells: usize, classes: usize) -> impl Strategy<Value = GridPmf> {
    (pmf_rows(cells, classes), prop::collection::vec(prop::bool::weighted(0.2), cells)).prop_map(
        move |(p, mut m)| {
            m[0] = false;
            GridPmf::from_parts(classes, p, m).unwrap()
        },
    )
}

fn valid_grid() -> impl Strategy<Value = (usize, u32)> {
    (1u32..=5, 1usize..=4).prop_map(|(r, m)| (m * (4 << (r - 1)), r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_cells_tile_the_subarea((d, r) in valid_grid()) {
        let g = RetinaGrid::new(d, r).unwrap();
        prop_assert_eq!(g.len(), 16 + 12 * (r as usize - 1));
        let area: usize = g.cells().iter().map(CellRect::area).sum();
        prop_assert_eq!(area, d * d);
        for y in (0..d).step_by(3) {
            for x in (0..d).step_by(3) {
                let owners: Vec<usize> = (0..g.len()).filter(|&i| g.cells()[i].contains(x, y)).collect();
                prop_assert_eq!(owners.len(), 1);
                prop_assert_eq!(g.cell_of_pixel(x, y).unwrap(), owners[0]);
            }
        }
    }

    #[test]
    fn indivisible_subarea_is_rejected(r in 1u32..=6, d in 4usize..300) {
        prop_assert_eq!(RetinaGrid::new(d, r).is_ok(), d % (4 << (r - 1)) == 0);
    }

    #[test]
    fn entropy_within_bounds((k, g) in (2usize..6).prop_flat_map(|k| (Just(k), grid_pmf(28, k)))) {
        let h = grid_entropy(&g).unwrap();
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (k as f64).ln() + 1e-12);
    }

    #[test]
    fn attention_step_is_non_increasing(a in 0.0f64..2.0, b in 0.0f64..2.0, sigma in 0.05f64..1.0, d in 1usize..300) {
        let params = ScanParams { sigma, ..ScanParams::new(d, 3) };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (s_lo, s_hi) = (attention_step(lo, &params), attention_step(hi, &params));
        prop_assert!(s_hi <= s_lo);
        prop_assert!((1..=d).contains(&s_hi) && (1..=d).contains(&s_lo));
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), scale in 0.01f64..20.0, pix in prop::collection::vec(0.0f64..1.0, 3 * 16 * 16)) {
        let mut cfg = PredictorConfig::new(16, 1, 3);
        cfg.architecture = parse_architecture("c4,p,f8").unwrap();
        cfg.seed = seed;
        let init = Model::initialize(cfg.clone()).unwrap();
        let w: Vec<f64> = init.state.weights.iter().map(|v| v * scale).collect();
        let m = Model::from_weights(cfg, w).unwrap();
        if let Ok(p) = m.predict(&pix) {
            for c in 0..p.cells() {
                let s: f64 = p.pmf(c).iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-6);
                prop_assert!(!p.is_masked(c));
            }
        }
    }

    #[test]
    fn loss_bounded_and_blind_to_masked_cells(
        (t, y1, y2) in (grid_pmf(16, 3), pmf_rows(16, 3), pmf_rows(16, 3))
    ) {
        let pred1 = GridPmf::from_parts(3, y1.clone(), vec![false; 16]).unwrap();
        let l = loss(&pred1, &t).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!(l <= -(t.unmasked_count() as f64) * PROB_FLOOR.ln() + 1e-9);
        // predictions on masked cells replaced by another draw
        let mut mixed = y1;
        for c in (0..16).filter(|&c| t.is_masked(c)) {
            mixed[c * 3..c * 3 + 3].copy_from_slice(&y2[c * 3..c * 3 + 3]);
        }
        let pred2 = GridPmf::from_parts(3, mixed, vec![false; 16]).unwrap();
        prop_assert_eq!(loss(&pred2, &t).unwrap(), l);
    }

    #[test]
    fn mask_encoding_round_trips(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let palette = ClassPalette::default();
        let mut s = seed;
        let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (s >> 33) as usize };
        let mut labels = LabelImage::from_fn(w, h, |_, _| (next() % 3) as u8);
        for y in 0..h {
            for x in 0..w {
                if next() % 5 == 0 {
                    labels.set(x, y, 0);
                    labels.set_ambiguous(x, y, true);
                }
            }
        }
        let back = decode_mask(&encode_mask(&labels, &palette), &palette).unwrap();
        prop_assert_eq!(back, labels);
    }

    #[test]
    fn dice_is_determined_by_jaccard(pred in prop::collection::vec(0u8..3, 64), truth in prop::collection::vec(0u8..3, 64)) {
        let seg = segmentation(8, 8, pred);
        let t = LabelImage::new(8, 8, truth, vec![false; 64]).unwrap();
        let r = score(&seg, &t, 3).unwrap();
        for m in r.per_class.iter().flatten() {
            prop_assert!((m.dice - 2.0 * m.jaccard / (1.0 + m.jaccard)).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_invariant_to_relabeling(
        pred in prop::collection::vec(0u8..3, 64),
        truth in prop::collection::vec(0u8..3, 64),
        perm in Just([0u8, 1, 2]).prop_shuffle(),
    ) {
        let t1 = LabelImage::new(8, 8, truth.clone(), vec![false; 64]).unwrap();
        let r1 = score(&segmentation(8, 8, pred.clone()), &t1, 3).unwrap();
        let relabel = |v: &[u8]| v.iter().map(|&c| perm[usize::from(c)]).collect::<Vec<u8>>();
        let t2 = LabelImage::new(8, 8, relabel(&truth), vec![false; 64]).unwrap();
        let r2 = score(&segmentation(8, 8, relabel(&pred)), &t2, 3).unwrap();
        for (a, b) in r1.macro_mean.values().iter().zip(r2.macro_mean.values()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for c in 0..3 {
            prop_assert_eq!(r1.per_class[c], r2.per_class[usize::from(perm[c])]);
        }
    }
}

fn segmentation(w: usize, h: usize, classes: Vec<u8>) -> Segmentation {
    Segmentation {
        width: w,
        height: h,
        heat: vec![1; classes.len()],
        classes,
        unknown: 0,
    }
}

/// Per-pixel sums from scratch: owning cell found by geometric search.
fn brute_force(w: usize, h: usize, k: usize, grid: &RetinaGrid, deposits: &[(usize, usize, GridPmf)]) -> (Vec<f64>, Vec<u32>) {
    let mut sums = vec![0.0; w * h * k];
    let mut counts = vec![0u32; w * h];
    for py in 0..h {
        for px in 0..w {
            for (x0, y0, p) in deposits {
                let d = grid.subarea_size();
                if px < *x0 || py < *y0 || px >= x0 + d || py >= y0 + d {
                    continue;
                }
                let cell = grid.cells().iter().position(|c| c.contains(px - x0, py - y0)).unwrap();
                if p.is_masked(cell) {
                    continue;
                }
                counts[py * w + px] += 1;
                for c in 0..k {
                    sums[(py * w + px) * k + c] += p.pmf(cell)[c];
                }
            }
        }
    }
    (sums, counts)
}

fn deposits(n: usize, k: usize) -> impl Strategy<Value = Vec<(usize, usize, GridPmf)>> {
    prop::collection::vec((0usize..=48, 0usize..=48, grid_pmf(cell_count(2), k)), 1..n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn probmap_matches_brute_force_in_any_order(deps in deposits(30, 3), rot in 0usize..30) {
        let (w, h, k) = (64, 64, 3);
        let grid = RetinaGrid::new(16, 2).unwrap();
        let run = |ds: &[(usize, usize, GridPmf)]| {
            let mut m = ProbabilityMap::new(w, h, k);
            for (x, y, p) in ds {
                let f = Fixation { x: *x, y: *y, entropy: 0.0, step_taken: 1 };
                m.deposit(&f, &grid, p).unwrap();
            }
            m
        };
        let m = run(&deps);
        let (sums, counts) = brute_force(w, h, k, &grid, &deps);
        prop_assert_eq!(m.counts(), &counts[..]);
        for (a, b) in m.sums().iter().zip(&sums) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let seg = m.finalize();
        for p in 0..w * h {
            if counts[p] == 0 {
                prop_assert_eq!(seg.classes[p], UNKNOWN_CLASS);
            }
        }

        let mut shuffled = deps.clone();
        let n = shuffled.len();
        shuffled.rotate_left(rot % n);
        shuffled.reverse();
        let m2 = run(&shuffled);
        prop_assert_eq!(m2.counts(), m.counts());
        for (a, b) in m2.sums().iter().zip(m.sums()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
