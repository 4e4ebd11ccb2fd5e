//! Simulator invariants, an analytic collision oracle, rendering coverage and
//! generator examples.

use pcode_core::worlds::billiards::{random_state, BilliardsState, ContactKind, Simulator};
use pcode_core::worlds::render::{render_disks, FRAME_SIDE};
use pcode_core::worlds::{
    circle_trajectory, generate, generate_with_horizon, read_dataset, simulate, trajectory_rng,
    write_dataset, TaskId, WorldParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn seeded_state(seed: u64, i: usize, dims: usize) -> BilliardsState {
    let p = WorldParams::default();
    random_state(&mut trajectory_rng(seed, i), dims, p.radius, (p.speed_min, p.speed_max))
}

/// Equal-mass elastic exchange at the exact contact time, from the state at
/// the start of the free-flight leg.
fn analytic_collision(start: &BilliardsState) -> (f64, [[f64; 2]; 2]) {
    let [a, b] = start.balls;
    let d = [b.pos[0] - a.pos[0], b.pos[1] - a.pos[1]];
    let w = [b.vel[0] - a.vel[0], b.vel[1] - a.vel[1]];
    // |d + w s|^2 = (2r)^2, smaller root
    let qa = w[0] * w[0] + w[1] * w[1];
    let qb = 2.0 * (d[0] * w[0] + d[1] * w[1]);
    let qc = d[0] * d[0] + d[1] * d[1] - 4.0 * start.radius * start.radius;
    let s = ((-qb - (qb * qb - 4.0 * qa * qc).max(0.0).sqrt()) / (2.0 * qa)).max(0.0);
    let p0 = [a.pos[0] + a.vel[0] * s, a.pos[1] + a.vel[1] * s];
    let p1 = [b.pos[0] + b.vel[0] * s, b.pos[1] + b.vel[1] * s];
    let dist = ((p1[0] - p0[0]).powi(2) + (p1[1] - p0[1]).powi(2)).sqrt();
    let n = [(p1[0] - p0[0]) / dist, (p1[1] - p0[1]) / dist];
    let rel_n = (a.vel[0] - b.vel[0]) * n[0] + (a.vel[1] - b.vel[1]) * n[1];
    let v0 = [a.vel[0] - rel_n * n[0], a.vel[1] - rel_n * n[1]];
    let v1 = [b.vel[0] + rel_n * n[0], b.vel[1] + rel_n * n[1]];
    (s, [v0, v1])
}

#[test]
fn thousand_trajectories_respect_physics() {
    let sim = Simulator::default();
    let mut ball_contacts = 0;
    for i in 0..1000 {
        let dims = 1 + i % 2;
        let mut s = seeded_state(77, i, dims);
        let e0 = s.kinetic_energy();
        for _ in 0..44 {
            let mut log = Vec::new();
            s = sim.step_logged(&s, 1.0, &mut log).unwrap();
            s.validate().unwrap();
            assert!(rel(s.kinetic_energy(), e0) < 1e-9);
            for ev in &log {
                match ev.kind {
                    ContactKind::Balls => {
                        ball_contacts += 1;
                        let (t, v) = analytic_collision(&ev.leg_start);
                        assert!((t - ev.elapsed).abs() < 1e-6, "contact time {t} vs {}", ev.elapsed);
                        for k in 0..2 {
                            for a in 0..2 {
                                assert!((ev.post.balls[k].vel[a] - v[k][a]).abs() < 1e-6);
                            }
                        }
                        assert!((ev.post.center_distance() - 2.0 * ev.post.radius).abs() < 1e-6);
                    }
                    ContactKind::Wall { ball, axis } => {
                        let before = ev.leg_start.balls[ball].vel;
                        let after = ev.post.balls[ball].vel;
                        assert_eq!(after[axis], -before[axis]);
                        assert_eq!(after[1 - axis], before[1 - axis]);
                    }
                }
            }
        }
    }
    assert!(ball_contacts > 100, "only {ball_contacts} ball contacts exercised");
}

#[test]
fn long_stress_rollouts_stay_valid() {
    let sim = Simulator::default();
    for (i, dims) in [(0, 1), (1, 2), (2, 2)] {
        let s0 = seeded_state(5, i, dims);
        let states = simulate(&s0, 10_000, &sim).unwrap();
        for s in &states {
            s.validate().unwrap();
            assert!(rel(s.kinetic_energy(), s0.kinetic_energy()) < 1e-9);
        }
    }
}

#[test]
fn negated_velocities_retrace_the_path() {
    let sim = Simulator::default();
    for i in 0..100 {
        let s0 = seeded_state(11, i, 1 + i % 2);
        let fwd = simulate(&s0, 44, &sim).unwrap();
        let back = simulate(&fwd[44].with_negated_velocities(), 44, &sim).unwrap();
        for t in 0..=44 {
            for k in 0..2 {
                for a in 0..2 {
                    let d = (back[44 - t].balls[k].pos[a] - fwd[t].balls[k].pos[a]).abs();
                    assert!(d < 1e-6, "trajectory {i} t {t}: {d}");
                }
            }
        }
    }
}

#[test]
fn generation_is_deterministic() {
    for task in [TaskId::Lines, TaskId::Circles, TaskId::Billiards1d, TaskId::Billiards2d, TaskId::PixBill1d] {
        let a = generate_with_horizon(task, 20, 10, 3, &WorldParams::default()).unwrap();
        let b = generate_with_horizon(task, 20, 10, 3, &WorldParams::default()).unwrap();
        assert_eq!(a, b);
        // each trajectory has its own stream, so a prefix of a bigger set matches
        let c = generate_with_horizon(task, 30, 10, 3, &WorldParams::default()).unwrap();
        assert_eq!(a.trajectories[..], c.trajectories[..20]);
    }
}

#[test]
fn billiards_datasets_have_the_expected_shape() {
    let p = WorldParams::default();
    for task in [TaskId::Billiards1d, TaskId::Billiards2d] {
        let ds = generate(task, 50, 9, &p).unwrap();
        assert_eq!(ds.steps(), 45);
        for t in &ds.trajectories {
            assert!(t.observations.iter().all(|&x| x >= p.radius - 1e-12 && x <= 1.0 - p.radius + 1e-12));
            let first = (0..2).map(|k| t.state(0).unwrap()[4 * k + 2..4 * k + 4].iter().map(|v| v * v).sum::<f64>()).sum::<f64>();
            let last = (0..2).map(|k| t.state(44).unwrap()[4 * k + 2..4 * k + 4].iter().map(|v| v * v).sum::<f64>()).sum::<f64>();
            assert!(rel(last, first) < 1e-9);
        }
    }
    let px = generate_with_horizon(TaskId::PixBill2d, 5, 6, 1, &p).unwrap();
    assert_eq!(px.obs_dim(), FRAME_SIDE * FRAME_SIDE);
    assert!(px.trajectories.iter().flat_map(|t| &t.observations).all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn positions_cover_the_box() {
    let ds = generate(TaskId::Billiards2d, 300, 4, &WorldParams::default()).unwrap();
    let mut cells = [[0usize; 4]; 4];
    for t in &ds.trajectories {
        for row in t.observations.chunks_exact(2) {
            let (i, j) = (((row[0] - 0.1) / 0.2) as usize, ((row[1] - 0.1) / 0.2) as usize);
            cells[i.min(3)][j.min(3)] += 1;
        }
    }
    assert!(cells.iter().flatten().all(|&c| c > 0), "{cells:?}");
}

/// Disk coverage of every pixel by 32×32 supersampling.
fn supersampled_coverage(center: [f64; 2], radius: f64) -> f64 {
    let side = FRAME_SIDE as f64;
    let (cx, cy, r) = (center[0] * side, (1.0 - center[1]) * side, radius * side);
    let n = 32;
    let mut total = 0.0;
    for row in 0..FRAME_SIDE {
        for col in 0..FRAME_SIDE {
            let mut hits = 0;
            for i in 0..n {
                for j in 0..n {
                    let x = col as f64 + (i as f64 + 0.5) / n as f64;
                    let y = row as f64 + (j as f64 + 0.5) / n as f64;
                    if (x - cx).powi(2) + (y - cy).powi(2) <= r * r {
                        hits += 1;
                    }
                }
            }
            total += hits as f64 / (n * n) as f64;
        }
    }
    total
}

#[test]
fn rendered_intensity_tracks_disk_area() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let radius = 0.1;
    let mut totals = Vec::new();
    for _ in 0..20 {
        let c = [rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)];
        let frame = render_disks(&[c], radius);
        let total: f64 = frame.iter().sum();
        let oracle = supersampled_coverage(c, radius);
        assert!(rel(total, oracle) < 0.05, "center {c:?}: {total} vs {oracle}");
        totals.push(total);
    }
    let (lo, hi) = totals.iter().fold((f64::MAX, f64::MIN), |(l, h), &x| (l.min(x), h.max(x)));
    assert!(hi / lo < 1.05);
}

#[test]
fn circle_examples() {
    let t = circle_trajectory(1.0, 0.0, 0.3, 24);
    assert_eq!(t.obs(0), &[1.0, 0.0]);
    let r = 1.5;
    let quarter = (std::f64::consts::FRAC_PI_2 * r / 0.3).round() as usize;
    let speed = std::f64::consts::FRAC_PI_2 * r / quarter as f64;
    let q = circle_trajectory(r, 0.0, speed, quarter);
    let end = q.obs(quarter);
    assert!(end[0].abs() < 1e-12 && (end[1] - r).abs() < 1e-12);
    for r in [1.0, 1.3, 1.9] {
        let c = circle_trajectory(r, 0.4, 0.3, 5);
        for k in 0..5 {
            let (a, b) = (c.obs(k), c.obs(k + 1));
            let angle = (a[0] * b[1] - a[1] * b[0]).atan2(a[0] * b[0] + a[1] * b[1]);
            assert!((angle * r - 0.3).abs() < 1e-12);
        }
    }
}

#[test]
fn datasets_round_trip_through_files() {
    let ds = generate_with_horizon(TaskId::Billiards2d, 7, 12, 4, &WorldParams::default()).unwrap();
    let mut bytes = Vec::new();
    write_dataset(&ds, &mut bytes).unwrap();
    let back = read_dataset(bytes.as_slice()).unwrap();
    assert_eq!(back.task, ds.task);
    assert_eq!(back.seed, ds.seed);
    assert_eq!(back.params, ds.params);
    for (a, b) in back.trajectories.iter().zip(&ds.trajectories) {
        for (x, y) in a.observations.iter().zip(&b.observations) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }
    let mut again = Vec::new();
    write_dataset(&back, &mut again).unwrap();
    assert_eq!(bytes, again);
    assert!(read_dataset(&bytes[..bytes.len() - 3]).is_err());
}
