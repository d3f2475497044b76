use lagrange_billiards::flow::{simulate, PhaseState, SimOptions, StopCondition};
use lagrange_billiards::forces::LagrangeParams;
use lagrange_billiards::quadrics::{QuadricWall, WallKind};
use lagrange_billiards::spaceform::{ChartTarget, Point, SpaceForm, Vector};

fn main() {
    let space = SpaceForm::euclidean_chart(ChartTarget::Sphere, 3, 0.5).unwrap();
    let params = LagrangeParams::new(1.0, 0.8, -0.3, 0.5);
    let wall = QuadricWall::new(space, WallKind::Spheroid, 1.5_f64.sqrt(), 1.0, "w").unwrap();
    let state = PhaseState::new(
        Point(vec![0.6, 0.85, 0.0, -1.0]),
        Vector(vec![0.8, 0.3, 1.0, 0.0]),
    );
    let stop = StopCondition { t_max: 10000.0, max_reflections: Some(100) };
    let traj = simulate(&space, &params, &[wall.clone()], &state, &stop, &SimOptions::default()).unwrap();
    println!("status {:?} note {:?}", traj.status, traj.note);
    println!("events {} samples {} t_end {}", traj.events.len(), traj.samples.len(), traj.t_end());
    for e in traj.events.iter().take(5) {
        println!("event t={:.6} q=({:.4},{:.4},{:.4}) wall={}", e.t_hit, e.q_hit.0[0], e.q_hit.0[1], e.q_hit.0[2], e.wall_id);
    }
    // where is the particle at sample times? print implicit value extremes
    let mut g_max = f64::NEG_INFINITY;
    for s in &traj.samples {
        g_max = g_max.max(wall.implicit_value(&s.q));
    }
    println!("max implicit over samples {:.3e}", g_max);
    let dts: Vec<f64> = traj.samples.windows(2).map(|w| w[1].t - w[0].t).collect();
    let mean = dts.iter().sum::<f64>() / dts.len() as f64;
    println!("mean dt {:.3e}, min dt {:.3e}", mean, dts.iter().cloned().fold(f64::INFINITY, f64::min));
}
