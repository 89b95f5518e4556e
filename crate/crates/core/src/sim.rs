//! Planar mass-spring finger on a commanded base.
//!
//! The finger is a chain of point masses joined by stretch springs, with
//! angular springs at every joint. Joint 0 is clamped to the base heading.
//! Node 0 is kinematic and follows the base, which tracks the commanded pose
//! through a first-order lag (a linear ramp over each step when the time
//! constant is zero). Contact uses penalty forces with regularised
//! Coulomb friction; movable discs are pushed quasi-statically against
//! strong ground damping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec2;

/// Base pose: position in meters and in-plane heading in radians.
///
/// The action command is expressed in the same coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

pub type ActionCommand = Pose;

impl Pose {
    pub const fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::from_angle(self.theta)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// Axis-aligned bounds on each command component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub theta: [f64; 2],
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            x: [-0.06, 0.06],
            y: [-0.14, -0.08],
            theta: [std::f64::consts::FRAC_PI_2 - 0.5, std::f64::consts::FRAC_PI_2 + 0.5],
        }
    }
}

impl Workspace {
    /// Home pose of the base.
    pub fn center(&self) -> Pose {
        Pose::new(
            0.5 * (self.x[0] + self.x[1]),
            0.5 * (self.y[0] + self.y[1]),
            0.5 * (self.theta[0] + self.theta[1]),
        )
    }

    pub fn clamp(&self, p: Pose) -> Pose {
        Pose::new(
            p.x.clamp(self.x[0], self.x[1]),
            p.y.clamp(self.y[0], self.y[1]),
            p.theta.clamp(self.theta[0], self.theta[1]),
        )
    }

    pub fn contains(&self, p: &Pose) -> bool {
        self.clamp(*p) == *p
    }

    fn is_valid(&self) -> bool {
        [self.x, self.y, self.theta]
            .iter()
            .all(|r| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Disc { center: Vec2, radius: f64 },
    Box { min: Vec2, max: Vec2 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovableObject {
    pub center: Vec2,
    pub radius: f64,
    pub mass: f64,
    pub color_id: u8,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub static_obstacles: Vec<Shape>,
    pub movable_objects: Vec<MovableObject>,
    pub workspace: Workspace,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsParams {
    pub nodes: usize,
    pub rest_length: f64,
    pub k_stretch: f64,
    pub k_bend: f64,
    pub damping: f64,
    pub k_contact: f64,
    pub friction: f64,
    /// Velocity scale of the friction regulariser, N·s/m.
    pub friction_viscosity: f64,
    /// Base tracking time constant; 0 reaches the command at the end of each step.
    pub tau: f64,
    pub node_mass: f64,
    pub skin_radius: f64,
    /// Ground damping of movable objects, N·s/m.
    pub object_damping: f64,
    /// Sub-intervals per nominal frame; longer steps are split proportionally.
    pub substeps: usize,
    pub frame_dt: f64,
    /// Weight of joint bending in the strain profile.
    pub bend_strain_weight: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            nodes: 8,
            rest_length: 0.02,
            k_stretch: 400.0,
            k_bend: 2.0,
            damping: 0.8,
            k_contact: 1000.0,
            friction: 0.4,
            friction_viscosity: 5.0,
            tau: 0.3,
            node_mass: 0.01,
            skin_radius: 0.01,
            object_damping: 20.0,
            substeps: 80,
            frame_dt: 1.0 / 33.0,
            bend_strain_weight: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerState {
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub position: Vec2,
    pub velocity: Vec2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub finger: FingerState,
    pub objects: Vec<ObjectState>,
    pub base: Pose,
    pub time: f64,
    /// Largest normal contact force seen during the last step, N.
    pub peak_contact_force: f64,
}

impl SimState {
    pub fn in_contact(&self) -> bool {
        self.peak_contact_force > 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Obstacle,
    Object,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("finger rest pose overlaps {kind:?} #{index}")]
    Overlap { kind: ShapeKind, index: usize },
    #[error("invalid scene or parameters: {0}")]
    Invalid(String),
    #[error("simulation diverged at node {node} (t = {time:.4} s)")]
    Divergence { node: usize, time: f64 },
}

/// Physics context for one scene.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub scene: SceneSpec,
    pub params: PhysicsParams,
}

/// Normal and friction force on a finger node from one contact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactForce {
    pub normal: Vec2,
    pub tangential: Vec2,
    pub magnitude: f64,
}

impl ContactForce {
    pub fn total(&self) -> Vec2 {
        self.normal + self.tangential
    }
}

/// Penetration of a disc of `radius` at `p` into `shape`, with the outward normal.
fn penetration(shape: &Shape, p: Vec2, radius: f64) -> Option<(f64, Vec2)> {
    match *shape {
        Shape::Disc { center, radius: r } => disc_penetration(center, r, p, radius),
        Shape::Box { min, max } => {
            let q = Vec2::new(p.x.clamp(min.x, max.x), p.y.clamp(min.y, max.y));
            let d = p - q;
            let dist = d.norm();
            if dist > 0.0 {
                let depth = radius - dist;
                (depth > 0.0).then(|| (depth, d * (1.0 / dist)))
            } else {
                // centre inside: leave through the nearest face
                let faces = [
                    (p.x - min.x, Vec2::new(-1.0, 0.0)),
                    (max.x - p.x, Vec2::new(1.0, 0.0)),
                    (p.y - min.y, Vec2::new(0.0, -1.0)),
                    (max.y - p.y, Vec2::new(0.0, 1.0)),
                ];
                let (inside, n) = faces
                    .into_iter()
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .expect("four faces");
                Some((radius + inside, n))
            }
        }
    }
}

fn disc_penetration(center: Vec2, r: f64, p: Vec2, radius: f64) -> Option<(f64, Vec2)> {
    let d = p - center;
    let dist = d.norm();
    let depth = radius + r - dist;
    if depth <= 0.0 {
        return None;
    }
    let n = if dist > 0.0 { d * (1.0 / dist) } else { Vec2::new(0.0, 1.0) };
    Some((depth, n))
}

impl Simulator {
    pub fn new(scene: SceneSpec, params: PhysicsParams) -> Self {
        Self { scene, params }
    }

    fn validate(&self) -> Result<(), SimError> {
        let p = &self.params;
        if p.nodes < 3 {
            return Err(SimError::Invalid(format!("finger needs at least 3 nodes, got {}", p.nodes)));
        }
        let positive = [
            p.rest_length,
            p.node_mass,
            p.skin_radius,
            p.object_damping,
            p.frame_dt,
        ];
        let nonneg = [
            p.k_stretch,
            p.k_bend,
            p.damping,
            p.k_contact,
            p.friction,
            p.friction_viscosity,
            p.tau,
            p.bend_strain_weight,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || p.substeps == 0
        {
            return Err(SimError::Invalid("physics parameters must be finite and positive".into()));
        }
        if !self.scene.workspace.is_valid() {
            return Err(SimError::Invalid("workspace bounds are not ordered".into()));
        }
        let mut colors: Vec<u8> = self.scene.movable_objects.iter().map(|o| o.color_id).collect();
        colors.sort_unstable();
        if colors.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimError::Invalid("movable objects must have distinct colors".into()));
        }
        if self
            .scene
            .movable_objects
            .iter()
            .any(|o| !(o.radius > 0.0 && o.mass > 0.0 && o.center.is_finite()))
        {
            return Err(SimError::Invalid("movable objects need positive radius and mass".into()));
        }
        Ok(())
    }

    /// Straight chain along the heading of `base`.
    pub fn rest_finger(&self, base: Pose) -> FingerState {
        let dir = base.heading();
        let positions = (0..self.params.nodes)
            .map(|i| base.position() + dir * (i as f64 * self.params.rest_length))
            .collect();
        FingerState {
            positions,
            velocities: vec![Vec2::ZERO; self.params.nodes],
        }
    }

    /// Initial state: base at the workspace centre, finger straight and unstrained.
    pub fn build(&self) -> Result<SimState, SimError> {
        self.validate()?;
        let base = self.scene.workspace.center();
        let finger = self.rest_finger(base);
        let r = self.params.skin_radius;
        for (index, shape) in self.scene.static_obstacles.iter().enumerate() {
            if finger.positions.iter().any(|&p| penetration(shape, p, r).is_some()) {
                return Err(SimError::Overlap {
                    kind: ShapeKind::Obstacle,
                    index,
                });
            }
        }
        for (index, obj) in self.scene.movable_objects.iter().enumerate() {
            if finger
                .positions
                .iter()
                .any(|&p| disc_penetration(obj.center, obj.radius, p, r).is_some())
            {
                return Err(SimError::Overlap {
                    kind: ShapeKind::Object,
                    index,
                });
            }
        }
        Ok(SimState {
            finger,
            objects: self
                .scene
                .movable_objects
                .iter()
                .map(|o| ObjectState {
                    position: o.center,
                    velocity: Vec2::ZERO,
                })
                .collect(),
            base,
            time: 0.0,
            peak_contact_force: 0.0,
        })
    }

    /// Contact force on a node at `p` moving with `v` against one shape.
    pub fn contact_force(&self, depth: f64, normal: Vec2, relative_velocity: Vec2) -> ContactForce {
        let magnitude = self.params.k_contact * depth;
        let vn = relative_velocity.dot(normal);
        let vt = relative_velocity - normal * vn;
        let speed = vt.norm();
        let tangential = if speed > 0.0 {
            let f = (self.params.friction * magnitude).min(self.params.friction_viscosity * speed);
            vt * (-f / speed)
        } else {
            Vec2::ZERO
        };
        ContactForce {
            normal: normal * magnitude,
            tangential,
            magnitude,
        }
    }

    /// Internal spring forces on every node (index 0 included, unused).
    pub fn internal_forces(&self, base: &Pose, positions: &[Vec2]) -> Vec<Vec2> {
        let p = &self.params;
        let n = positions.len();
        let mut forces = vec![Vec2::ZERO; n];
        for i in 0..n - 1 {
            let d = positions[i + 1] - positions[i];
            let len = d.norm();
            if len > 0.0 {
                let f = d * (p.k_stretch * (len - p.rest_length) / len);
                forces[i] += f;
                forces[i + 1] -= f;
            }
        }
        // Joint i sits at node i between segment i-1 (or the base heading) and segment i.
        for i in 0..n - 1 {
            let v = positions[i + 1] - positions[i];
            let v_sq = v.norm_sq();
            if v_sq == 0.0 {
                continue;
            }
            let u = if i == 0 { base.heading() } else { positions[i] - positions[i - 1] };
            let phi = u.angle_to(v);
            let dv = v.perp() * (1.0 / v_sq);
            forces[i + 1] -= dv * (p.k_bend * phi);
            forces[i] += dv * (p.k_bend * phi);
            if i > 0 {
                let du = u.perp() * (1.0 / u.norm_sq());
                forces[i - 1] -= du * (p.k_bend * phi);
                forces[i] += du * (p.k_bend * phi);
            }
        }
        forces
    }

    /// Advances `state` by `dt` seconds under command `cmd`.
    pub fn step(&self, state: &SimState, cmd: &ActionCommand, dt: f64) -> Result<SimState, SimError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::Invalid(format!("dt must be positive, got {dt}")));
        }
        if !cmd.is_finite() {
            return Err(SimError::Invalid("command is not finite".into()));
        }
        let p = &self.params;
        let substeps = self.substeps_for(dt);
        let h = dt / substeps as f64;
        let alpha = if p.tau > 0.0 { 1.0 - (-h / p.tau).exp() } else { 0.0 };
        let start = state.base;
        let mut s = state.clone();
        s.peak_contact_force = 0.0;
        let n = s.finger.positions.len();
        let r = p.skin_radius;
        let damp = 1.0 / (1.0 + h * p.damping / p.node_mass);

        for k in 0..substeps {
            let base = if p.tau > 0.0 {
                Pose::new(
                    s.base.x + alpha * (cmd.x - s.base.x),
                    s.base.y + alpha * (cmd.y - s.base.y),
                    s.base.theta + alpha * (cmd.theta - s.base.theta),
                )
            } else if k + 1 == substeps {
                *cmd
            } else {
                // without lag the base ramps across the step and lands on the command
                let f = (k + 1) as f64 / substeps as f64;
                Pose::new(
                    start.x + f * (cmd.x - start.x),
                    start.y + f * (cmd.y - start.y),
                    start.theta + f * (cmd.theta - start.theta),
                )
            };
            let root = base.position();
            s.finger.velocities[0] = (root - s.finger.positions[0]) * (1.0 / h);
            s.finger.positions[0] = root;
            s.base = base;

            let mut forces = self.internal_forces(&base, &s.finger.positions);
            let mut object_forces = vec![Vec2::ZERO; s.objects.len()];
            for j in 1..n {
                let (pos, vel) = (s.finger.positions[j], s.finger.velocities[j]);
                for shape in &self.scene.static_obstacles {
                    if let Some((depth, normal)) = penetration(shape, pos, r) {
                        let c = self.contact_force(depth, normal, vel);
                        forces[j] += c.total();
                        s.peak_contact_force = s.peak_contact_force.max(c.magnitude);
                    }
                }
                for (k, (obj, spec)) in s.objects.iter().zip(&self.scene.movable_objects).enumerate() {
                    if let Some((depth, normal)) = disc_penetration(obj.position, spec.radius, pos, r) {
                        let c = self.contact_force(depth, normal, vel - obj.velocity);
                        forces[j] += c.total();
                        object_forces[k] -= c.total();
                        s.peak_contact_force = s.peak_contact_force.max(c.magnitude);
                    }
                }
            }

            for j in 1..n {
                let v = (s.finger.velocities[j] + forces[j] * (h / p.node_mass)) * damp;
                s.finger.velocities[j] = v;
                s.finger.positions[j] += v * h;
            }
            for (obj, f) in s.objects.iter_mut().zip(&object_forces) {
                obj.velocity = *f * (1.0 / p.object_damping);
                obj.position += obj.velocity * h;
            }
        }
        s.time = state.time + dt;
        self.check_finite(&s)?;
        Ok(s)
    }

    /// Equal sub-intervals used for a step of `dt`: `substeps` at the nominal frame length.
    pub fn substeps_for(&self, dt: f64) -> usize {
        let p = &self.params;
        let ratio = dt / p.frame_dt * p.substeps as f64;
        (ratio - 1e-9).ceil().max(1.0) as usize
    }

    fn check_finite(&self, s: &SimState) -> Result<(), SimError> {
        let limit = 3.0 * self.params.rest_length;
        let pos = &s.finger.positions;
        for (i, (x, v)) in pos.iter().zip(&s.finger.velocities).enumerate() {
            let stretched = i > 0 && (*x - pos[i - 1]).norm() > limit;
            if !x.is_finite() || !v.is_finite() || stretched {
                return Err(SimError::Divergence { node: i, time: s.time });
            }
        }
        if s.objects.iter().any(|o| !o.position.is_finite()) {
            return Err(SimError::Divergence { node: 0, time: s.time });
        }
        Ok(())
    }

    /// Signed bend angle at every joint; joint 0 is measured from the base heading.
    pub fn joint_angles(&self, state: &SimState) -> Vec<f64> {
        let pos = &state.finger.positions;
        (0..pos.len() - 1)
            .map(|i| {
                let u = if i == 0 { state.base.heading() } else { pos[i] - pos[i - 1] };
                u.angle_to(pos[i + 1] - pos[i])
            })
            .collect()
    }

    /// Per-segment strain: relative stretch plus weighted absolute bend at the joint.
    pub fn strain_profile(&self, state: &SimState) -> Vec<f64> {
        let l0 = self.params.rest_length;
        let pos = &state.finger.positions;
        self.joint_angles(state)
            .into_iter()
            .enumerate()
            .map(|(i, phi)| {
                let len = (pos[i + 1] - pos[i]).norm();
                (len - l0).abs() / l0 + self.params.bend_strain_weight * phi.abs()
            })
            .collect()
    }

    pub fn kinetic_energy(&self, state: &SimState) -> f64 {
        state.finger.velocities[1..]
            .iter()
            .map(|v| 0.5 * self.params.node_mass * v.norm_sq())
            .sum()
    }

    pub fn elastic_energy(&self, state: &SimState) -> f64 {
        let p = &self.params;
        let pos = &state.finger.positions;
        let stretch: f64 = pos
            .windows(2)
            .map(|w| {
                let e = (w[1] - w[0]).norm() - p.rest_length;
                0.5 * p.k_stretch * e * e
            })
            .sum();
        let bend: f64 = self
            .joint_angles(state)
            .iter()
            .map(|phi| 0.5 * p.k_bend * phi * phi)
            .sum();
        stretch + bend
    }

    /// Whether any finger node currently penetrates a shape or object.
    pub fn touching(&self, state: &SimState) -> bool {
        let r = self.params.skin_radius;
        state.finger.positions[1..].iter().any(|&p| {
            self.scene.static_obstacles.iter().any(|s| penetration(s, p, r).is_some())
                || state
                    .objects
                    .iter()
                    .zip(&self.scene.movable_objects)
                    .any(|(o, spec)| disc_penetration(o.position, spec.radius, p, r).is_some())
        })
    }
}
