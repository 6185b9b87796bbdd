use lenslabel::labels::{
    iou, iou_bb, iou_polygon, match_and_score, translate_labels, BoundingBox, Point, Polygon,
};
use lenslabel::{Displacement, LabelSet, Shape};
use proptest::prelude::*;
use std::f64::consts::TAU;

/// Star-shaped polygon around `(cx, cy)`; convex when all radii match.
fn star(cx: f64, cy: f64, angles: &[f64], radii: &[f64]) -> Polygon {
    let mut a = angles.to_vec();
    a.sort_by(f64::total_cmp);
    a.dedup_by(|x, y| (*x - *y).abs() < 1e-3);
    while a.len() < 3 {
        let last = *a.last().unwrap_or(&0.0);
        a.push(last + 1.0);
    }
    let pts = a
        .iter()
        .zip(radii.iter().cycle())
        .map(|(t, r)| Point::new(cx + r * t.cos(), cy + r * t.sin()))
        .collect();
    Polygon::new(pts).unwrap()
}

fn angles() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0..TAU, 3..10)
}

fn radii() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(4.0f64..14.0, 1..10)
}

fn bbox() -> impl Strategy<Value = BoundingBox> {
    // Eighth-pixel coordinates keep sums and differences exact.
    (0i32..800, 0i32..800, 1i32..200, 1i32..200).prop_map(|(x, y, w, h)| {
        let f = |v: i32| v as f64 / 8.0;
        BoundingBox::new(Point::new(f(x), f(y)), Point::new(f(x + w), f(y + h))).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iou_is_symmetric(
        a in bbox(), b in bbox(),
        (ax, ay, bx, by) in (0.0f64..30.0, 0.0f64..30.0, 0.0f64..30.0, 0.0f64..30.0),
        ta in angles(), ra in radii(), tb in angles(), rb in radii(),
    ) {
        prop_assert_eq!(iou_bb(&a, &b), iou_bb(&b, &a));
        let p = star(ax, ay, &ta, &ra);
        let q = star(bx, by, &tb, &rb);
        let pq = iou_polygon(&p, &q, 8).unwrap();
        let qp = iou_polygon(&q, &p, 8).unwrap();
        prop_assert!((pq - qp).abs() <= 1e-12);
    }

    #[test]
    fn iou_is_translation_invariant(
        a in bbox(), b in bbox(),
        (tx, ty) in (-4000i32..4000, -4000i32..4000),
        (fx, fy) in (-40.0f64..40.0, -40.0f64..40.0),
        ta in angles(), ra in radii(), tb in angles(), rb in radii(),
        (bx, by) in (-10.0f64..10.0, -10.0f64..10.0),
    ) {
        let d = Displacement::new(tx as f64 / 64.0, ty as f64 / 64.0);
        let ls = LabelSet::new(100, 100, vec![
            Shape { name: "a".into(), geometry: lenslabel::labels::Geometry::BoundingBox(a) },
            Shape { name: "b".into(), geometry: lenslabel::labels::Geometry::BoundingBox(b) },
        ]);
        let moved = translate_labels(&ls, d);
        prop_assert_eq!(iou(&moved.shapes[0], &moved.shapes[1], 8).unwrap(), iou_bb(&a, &b));

        let p = Shape { name: "p".into(), geometry: lenslabel::labels::Geometry::Polygon(star(50.0, 50.0, &ta, &ra)) };
        let q = Shape { name: "q".into(), geometry: lenslabel::labels::Geometry::Polygon(star(50.0 + bx, 50.0 + by, &tb, &rb)) };
        let before = iou(&p, &q, 8).unwrap();
        let polys = translate_labels(&LabelSet::new(100, 100, vec![p, q]), Displacement::new(fx, fy));
        let after = iou(&polys.shapes[0], &polys.shapes[1], 8).unwrap();
        prop_assert!((before - after).abs() <= 0.01, "{before} vs {after}");
    }

    #[test]
    fn polygon_iou_converges(
        ta in angles(), tb in angles(),
        (r1, r2) in (4.0f64..14.0, 4.0f64..14.0),
        (bx, by) in (-8.0f64..8.0, -8.0f64..8.0),
    ) {
        let p = star(20.0, 20.0, &ta, &[r1]);
        let q = star(20.0 + bx, 20.0 + by, &tb, &[r2]);
        prop_assume!(p.area() >= 25.0 && q.area() >= 25.0);
        let coarse = iou_polygon(&p, &q, 16).unwrap();
        let fine = iou_polygon(&p, &q, 64).unwrap();
        prop_assert!((coarse - fine).abs() < 0.005, "{coarse} vs {fine}");
    }

    #[test]
    fn box_iou_matches_rasterized_rectangle(a in bbox(), b in bbox()) {
        let exact = iou_bb(&a, &b);
        let raster = iou_polygon(&a.to_polygon(), &b.to_polygon(), 16).unwrap();
        prop_assert!((exact - raster).abs() <= 0.01, "{exact} vs {raster}");
    }

    #[test]
    fn mean_iou_is_bounded_and_rewards_perfect_matches(
        preds in proptest::collection::vec(bbox(), 0..6),
        gts in proptest::collection::vec(bbox(), 0..6),
        extra in bbox(),
    ) {
        let to_set = |v: &[BoundingBox]| LabelSet::new(
            200,
            200,
            v.iter()
                .enumerate()
                .map(|(i, b)| Shape { name: format!("s{i}"), geometry: lenslabel::labels::Geometry::BoundingBox(*b) })
                .collect(),
        );
        let (p, g) = (to_set(&preds), to_set(&gts));
        let base = match_and_score(&p, &g, 8).unwrap().mean_iou;
        prop_assert!((0.0..=1.0).contains(&base));

        // Move the extra pair far away so it overlaps nothing else.
        let far = translate_labels(&to_set(&[extra]), Displacement::new(10_000.0, 10_000.0));
        let mut p2 = p.clone();
        let mut g2 = g.clone();
        p2.shapes.extend(far.shapes.clone());
        g2.shapes.extend(far.shapes);
        let more = match_and_score(&p2, &g2, 8).unwrap().mean_iou;
        prop_assert!(more >= base - 1e-12, "{more} < {base}");
    }
}
