use proptest::prelude::*;
use shapeseg::grid::{Grid, LabelMap, Mask};
use shapeseg::shape_targets::{composite_distance_map, contour_map, edt, organ_distance_map};

/// All-pairs brute force: distance to the nearest background pixel, with
/// a virtual background ring one pixel outside the grid.
fn edt_oracle(mask: &Mask) -> Grid<f64> {
    let (h, w) = (mask.height() as i64, mask.width() as i64);
    let mut background = Vec::new();
    for y in -1..=h {
        for x in -1..=w {
            let outside = y < 0 || x < 0 || y >= h || x >= w;
            if outside || !*mask.get(y as usize, x as usize) {
                background.push((y, x));
            }
        }
    }
    Grid::from_fn(mask.height(), mask.width(), |y, x| {
        if !*mask.get(y, x) {
            return 0.0;
        }
        background
            .iter()
            .map(|&(by, bx)| {
                let (dy, dx) = ((y as i64 - by) as f64, (x as i64 - bx) as f64);
                (dy * dy + dx * dx).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    })
}

fn contour_oracle(labels: &LabelMap) -> Grid<bool> {
    let (h, w) = (labels.height() as i64, labels.width() as i64);
    let at = |y: i64, x: i64| -> u8 {
        if y < 0 || x < 0 || y >= h || x >= w {
            0
        } else {
            labels.get(y as usize, x as usize)
        }
    };
    Grid::from_fn(labels.height(), labels.width(), |y, x| {
        let (y, x) = (y as i64, x as i64);
        let own = at(y, x);
        own != 0 && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dy, dx)| at(y + dy, x + dx) != own)
    })
}

fn filled_block(h: usize, w: usize, y0: usize, x0: usize, size: usize) -> Mask {
    Grid::from_fn(h, w, |y, x| (y0..y0 + size).contains(&y) && (x0..x0 + size).contains(&x))
}

#[test]
fn edt_block_centre_and_corner() {
    let mask = filled_block(9, 9, 2, 2, 5);
    let oracle = edt_oracle(&mask);
    assert_eq!(*oracle.get(4, 4), 3.0);
    assert_eq!(*oracle.get(2, 2), 1.0);
    let d = edt(&mask).unwrap();
    assert_eq!(*d.get(4, 4), 3.0);
    assert_eq!(*d.get(2, 2), 1.0);
    assert_eq!(d, oracle);
}

#[test]
fn organ_map_of_block_is_normalized() {
    let labels = LabelMap::new(filled_block(9, 9, 2, 2, 5).map(|&b| b as u8), 2).unwrap();
    let d = organ_distance_map(&labels, 1).unwrap();
    assert_eq!(*d.0.get(4, 4), 1.0);
    for i in 2..7 {
        for &(y, x) in &[(2, i), (6, i), (i, 2), (i, 6)] {
            assert!((d.0.get(y, x) - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}

#[test]
fn composite_equals_union_of_per_organ_maps() {
    let mut grid = filled_block(10, 10, 1, 1, 5).map(|&b| b as u8);
    grid.set(8, 8, 2);
    let labels = LabelMap::new(grid, 3).unwrap();
    let comp = composite_distance_map(&labels).unwrap();
    let big = organ_distance_map(&labels, 1).unwrap();
    let small = organ_distance_map(&labels, 2).unwrap();
    for i in 0..100 {
        assert_eq!(comp.0.data()[i], big.0.data()[i] + small.0.data()[i]);
    }
    assert_eq!(*comp.0.get(8, 8), 1.0);
}

#[test]
fn contour_of_3x3_block_is_its_perimeter() {
    let labels = LabelMap::new(filled_block(7, 7, 2, 2, 3).map(|&b| b as u8), 2).unwrap();
    let c = contour_map(&labels);
    assert_eq!(c.0, contour_oracle(&labels));
    assert_eq!(c.0.data().iter().filter(|&&v| v).count(), 8);
    assert!(!*c.0.get(3, 3));
}

fn mask_strategy() -> impl Strategy<Value = Mask> {
    (1usize..=32, 1usize..=32, 0.0f64..1.0).prop_flat_map(|(h, w, density)| {
        proptest::collection::vec(proptest::bool::weighted(density), h * w)
            .prop_map(move |d| Grid::new(h, w, d).unwrap())
    })
}

fn labels_strategy() -> impl Strategy<Value = LabelMap> {
    (1usize..=24, 1usize..=24, 2usize..6).prop_flat_map(|(h, w, l)| {
        proptest::collection::vec(0..l as u8, h * w)
            .prop_map(move |d| LabelMap::new(Grid::new(h, w, d).unwrap(), l).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edt_matches_brute_force(mask in mask_strategy()) {
        let fast = edt(&mask).unwrap();
        let slow = edt_oracle(&mask);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn composite_in_unit_range_with_foreground_support(labels in labels_strategy()) {
        let comp = composite_distance_map(&labels).unwrap();
        for (v, &l) in comp.0.data().iter().zip(labels.labels()) {
            prop_assert!((0.0..=1.0).contains(v));
            prop_assert_eq!(*v > 0.0, l != 0);
        }
        for k in 1..labels.num_classes() as u8 {
            let organ = organ_distance_map(&labels, k).unwrap();
            for ((c, o), &l) in comp.0.data().iter().zip(organ.0.data()).zip(labels.labels()) {
                if l == k {
                    prop_assert_eq!(c, o);
                }
            }
        }
    }

    #[test]
    fn contour_properties(labels in labels_strategy()) {
        let c = contour_map(&labels);
        prop_assert_eq!(&c.0, &contour_oracle(&labels));
        let g = labels.grid();
        for y in 0..labels.height() {
            for x in 0..labels.width() {
                let own = labels.get(y, x);
                if *c.0.get(y, x) {
                    prop_assert!(own != 0);
                } else if own != 0 {
                    // Interior pixels have only same-label neighbours, all inside the grid.
                    let (mut nb, outside) = g.neighbours4(y, x);
                    prop_assert_eq!(outside, 0);
                    prop_assert!(nb.all(|(ny, nx)| labels.get(ny, nx) == own));
                }
            }
        }
    }

    #[test]
    fn targets_are_deterministic(labels in labels_strategy()) {
        let a = composite_distance_map(&labels).unwrap();
        let b = composite_distance_map(&labels).unwrap();
        let bits = |m: &shapeseg::shape_targets::DistanceMap| -> Vec<u64> {
            m.0.data().iter().map(|v| v.to_bits()).collect()
        };
        prop_assert_eq!(bits(&a), bits(&b));
        prop_assert_eq!(contour_map(&labels), contour_map(&labels));
    }
}
