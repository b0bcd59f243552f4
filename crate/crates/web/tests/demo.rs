use pvn_web::demo::{ascend, cartpole_episode, gradient_field, sample_polytope};

#[test]
fn ascent_from_the_usual_start_reaches_the_best_corner() {
    let trace = ascend(0.5, 0.0, 100, 0.1).unwrap();
    let last = &trace[trace.len() - 5..];
    assert_eq!((last[0], last[1]), (1.0, 1.0));
    let j: Vec<f64> = trace.chunks(5).map(|r| r[4]).collect();
    assert!(j.last().unwrap() > j.first().unwrap());
}

#[test]
fn sampled_values_stay_inside_the_corner_box() {
    let corners: Vec<f64> = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]
        .iter()
        .flat_map(|c| ascend(c[0], c[1], 0, 0.1).unwrap()[2..4].to_vec())
        .collect();
    let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for v in sample_polytope(500, 4).unwrap().chunks(3) {
        assert!(v[0] >= lo - 1e-12 && v[0] <= hi + 1e-12 && v[1] >= lo - 1e-12 && v[1] <= hi + 1e-12);
    }
}

#[test]
fn field_points_lie_inside_the_cube_and_episodes_are_seeded() {
    for r in gradient_field(11).unwrap().chunks(4) {
        assert!(r[0] > 0.0 && r[0] < 1.0 && r[1] > 0.0 && r[1] < 1.0);
        assert!(r[2].is_finite() && r[3].is_finite());
    }
    assert_eq!(cartpole_episode(9, 3.0).unwrap(), cartpole_episode(9, 3.0).unwrap());
    assert!(cartpole_episode(9, 3.0).unwrap().len() <= 2 * 101);
}
