use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softschema::datagen::{generate_episode, EpisodeConfig};
use softschema::geom::Vec2;
use softschema::render::RenderConfig;
use softschema::sensor::{init_layout, play_operator, SensorParams, SensorState, SENSOR_COUNT};
use softschema::sim::{MovableObject, PhysicsParams, Pose, SceneSpec, SimState, Simulator};

use crate::learning::Shared;
use crate::Verdict;

const DT: f64 = 1.0 / 33.0;

fn pusher() -> Simulator {
    let mut scene = SceneSpec::default();
    let home = scene.workspace.center();
    scene.movable_objects.push(MovableObject {
        center: Vec2::new(home.x + 0.035, home.y + 0.12),
        radius: 0.02,
        mass: 0.05,
        color_id: 0,
    });
    Simulator::new(scene, PhysicsParams::default())
}

fn rollout(sim: &Simulator, cmds: &[Pose]) -> Vec<SimState> {
    let mut s = sim.build().unwrap();
    let mut out = vec![s.clone()];
    for c in cmds {
        s = sim.step(&s, c, DT).unwrap();
        out.push(s.clone());
    }
    out
}

pub fn invariants(_: &mut Shared) -> Verdict {
    let started = Instant::now();
    let sim = pusher();
    let home = sim.scene.workspace.center();
    let wiggle: Vec<Pose> = (0..150)
        .map(|i| {
            let t = i as f64 * DT;
            Pose::new(
                home.x + 0.04 * (2.1 * t).sin(),
                home.y + 0.02 * (3.3 * t).cos() - 0.02,
                home.theta + 0.3 * (1.3 * t).sin(),
            )
        })
        .collect();
    let a = rollout(&sim, &wiggle);
    let deterministic = a == rollout(&sim, &wiggle);
    let touched = a.iter().any(|s| s.in_contact());

    let away: Vec<Pose> = (0..120)
        .map(|i| Pose::new(home.x - 0.05 * i as f64 / 120.0, home.y, home.theta))
        .collect();
    let traj = rollout(&sim, &away);
    let still = traj
        .windows(2)
        .filter(|w| !w[1].in_contact())
        .all(|w| w[1].objects[0].position == w[0].objects[0].position);

    // perturbed finger under a held command
    let free = Simulator::new(SceneSpec::default(), PhysicsParams::default());
    let mut s = free.build().unwrap();
    for (i, p) in s.finger.positions.iter_mut().enumerate().skip(2) {
        *p += Vec2::new(0.004 * (i as f64 - 1.0), -0.001 * i as f64);
    }
    for (i, v) in s.finger.velocities.iter_mut().enumerate().skip(1) {
        *v = Vec2::new(0.3 * (i as f64).cos(), 0.2);
    }
    let hold = s.base;
    let mut energy = free.kinetic_energy(&s) + free.elastic_energy(&s);
    let mut passive = true;
    for _ in 0..200 {
        s = free.step(&s, &hold, DT).unwrap();
        let e = free.kinetic_energy(&s) + free.elastic_energy(&s);
        passive &= e <= energy + 1e-15;
        energy = e;
    }
    let at_rest = free.kinetic_energy(&s) < 1e-10;

    let d = 10;
    let mut delay_ok = true;
    for seed in 0..3 {
        let mut cfg = EpisodeConfig {
            frames: 300,
            delay: d,
            ..Default::default()
        };
        cfg.seeds.motion = seed;
        cfg.render = RenderConfig::with_size(16);
        let ep = generate_episode(&cfg).unwrap();
        delay_ok &= (d..cfg.frames).all(|t| ep.frames[t - d].action == ep.base[t].to_array().map(|v| v as f32));
    }
    let secs = started.elapsed().as_secs_f64();
    Verdict::new(
        deterministic && touched && still && passive && at_rest && delay_ok && secs < 60.0,
        format!(
            "bit-identical repeat {deterministic}, objects still without contact {still}, \
             mechanical energy non-increasing under held command {passive} (settles {at_rest}), \
             realized pose = command shifted by {d} {delay_ok}"
        ),
    )
}

fn quiet() -> SensorParams {
    SensorParams {
        drift_sigma: 0.0,
        noise_sigma: 0.0,
        ..Default::default()
    }
}

pub fn hysteresis(_: &mut Shared) -> Verdict {
    const SEGMENTS: usize = 7;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let mut deadband = true;
    for _ in 0..500 {
        let (y0, w) = (rng.random_range(-1.0..1.0), rng.random_range(0.0..0.3));
        let mut y = y0;
        for _ in 0..20 {
            y = play_operator(y0 + rng.random_range(-1.0..=1.0) * w, y, w);
            deadband &= y == y0;
        }
    }

    let mut rate_free = true;
    for seed in 0..50 {
        let path: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..SEGMENTS).map(|_| rng.random_range(0.0..0.4)).collect())
            .collect();
        let layout = init_layout(seed, SEGMENTS, &quiet());
        let play = |dt: f64| {
            let mut st = SensorState::new(seed);
            path.iter()
                .map(|s| {
                    let (r, next) = layout.read(&st, s, dt).unwrap();
                    st = next;
                    r
                })
                .collect::<Vec<_>>()
        };
        rate_free &= play(rng.random_range(0.001..0.5)) == play(rng.random_range(0.001..0.5));
    }

    let layout = init_layout(0, SEGMENTS, &quiet());
    let max_w = layout.sensors.iter().map(|s| s.play_width).fold(0.0, f64::max);
    let amp = 2.5 * max_w;
    let mut path: Vec<Vec<f64>> = (0..=20).map(|k| vec![amp * k as f64 / 20.0; SEGMENTS]).collect();
    path.extend((0..=20).rev().map(|k| vec![amp * k as f64 / 20.0; SEGMENTS]));
    let st0 = SensorState::new(0);
    let mut st = st0.clone();
    for s in &path {
        st = layout.read(&st, s, DT).unwrap().1;
    }
    let memory = (0..SENSOR_COUNT).all(|i| st.play_memory[i] > st0.play_memory[i]);
    let secs = started.elapsed().as_secs_f64();
    Verdict::new(
        deadband && rate_free && memory && secs < 10.0,
        format!("play deadband exact {deadband}, rate independent {rate_free}, press-release memory retained {memory}"),
    )
}
