mod common;

use nalgebra::Vector2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thrustsim::config::PlannerSection;
use thrustsim::planner::{follow, gen_path, lap_steps, lookahead_point, velocity_command, PathShape, ScriptedTracker};

#[test]
fn lookahead_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let (pts, pos, radius) = common::random_path_query(&mut rng);
        let (point, i) = lookahead_point(&pts, pos, radius);
        assert_eq!(i, common::brute_lookahead(&pts, pos, radius));
        assert_eq!(point, pts[i]);
    }
}

proptest! {
    #[test]
    fn command_speed_is_cruise_or_zero(tx in -3.0f64..3.0, ty in -3.0f64..3.0, px in -3.0f64..3.0, py in -3.0f64..3.0) {
        let v = velocity_command(Vector2::new(tx, ty), Vector2::new(px, py), 0.25);
        let s = v.norm();
        prop_assert!(s == 0.0 || (s - 0.25).abs() < 1e-15, "{}", s);
    }
}

fn run(shape: PathShape) -> (thrustsim::planner::ReferencePath, thrustsim::planner::TrackingLog) {
    let params = PlannerSection::default();
    let path = gen_path(shape, &params).unwrap();
    let steps = lap_steps(&path, &params, 0.1);
    let log = follow(&mut ScriptedTracker::new(0.1), &path, &params, steps).unwrap();
    (path, log)
}

#[test]
fn scripted_follow_progresses_to_the_end() {
    for shape in PathShape::ALL {
        let (path, log) = run(shape);
        let idx: Vec<usize> = log.rows.iter().map(|r| r.target_index).collect();
        assert!(idx.windows(2).all(|w| w[0] <= w[1]), "{shape}: index went backwards");
        assert_eq!(*idx.last().unwrap(), path.len() - 1, "{shape}");
        let last = log.rows.last().unwrap();
        let end = path.points()[path.len() - 1];
        assert!((Vector2::new(last.x, last.y) - end).norm() < 0.1, "{shape}");
        assert!(log.mean_speed_error() < 1e-12);
    }
}

#[test]
fn scripted_square_uses_four_headings() {
    let (_, log) = run(PathShape::Square);
    let quarter = std::f64::consts::FRAC_PI_2;
    let mut bins = [0usize; 4];
    let mut off_axis = 0;
    for r in &log.rows {
        if r.cmd_vx == 0.0 && r.cmd_vy == 0.0 {
            continue;
        }
        let h = r.cmd_vy.atan2(r.cmd_vx);
        let k = (h / quarter).round();
        if (h - k * quarter).abs() < 0.15 {
            bins[(k as i64).rem_euclid(4) as usize] += 1;
        } else {
            off_axis += 1;
        }
    }
    // Each side is 40 steps long at cruise speed.
    assert!(bins.iter().all(|&b| b >= 30), "{bins:?}");
    // Corner cutting inside the look-ahead radius.
    assert!(off_axis * 5 < log.rows.len(), "{off_axis} of {}", log.rows.len());
}

#[test]
fn scripted_circle_lap_closes() {
    let (path, log) = run(PathShape::Circle);
    let last = log.rows.last().unwrap();
    assert!((Vector2::new(last.x, last.y) - path.points()[0]).norm() < 0.1);
}
