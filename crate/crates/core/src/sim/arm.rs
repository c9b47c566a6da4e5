//! Planar two-link arm in the vertical x–z plane.
//!
//! Joint 0 is the shoulder angle measured from the +x axis, joint 1 the elbow
//! angle relative to link 0. Links are uniform rods.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    /// Shoulder position (x, z) in m.
    pub base: Vec2,
    pub link_lengths: Vec2,
    pub link_masses: Vec2,
    /// Link inertias about their centres of mass (kg·m²).
    pub link_inertias: Vec2,
    /// Viscous joint friction (N·m·s/rad).
    pub friction: Vec2,
    pub gravity: f64,
    /// Hard joint stops (rad).
    pub q_low: Vec2,
    pub q_high: Vec2,
    pub torque_limits: Vec2,
    pub kp: Vec2,
    pub kd: Vec2,
}

impl Default for ArmModel {
    fn default() -> Self {
        let lengths = [0.45, 0.45];
        let masses = [2.0, 1.5];
        Self {
            base: [0.0, 0.684],
            link_lengths: lengths,
            link_masses: masses,
            link_inertias: [rod_inertia(masses[0], lengths[0]), rod_inertia(masses[1], lengths[1])],
            friction: [0.05, 0.05],
            gravity: 9.81,
            q_low: [-2.5, -2.9],
            q_high: [2.5, 2.9],
            torque_limits: [60.0, 40.0],
            kp: [60.0, 40.0],
            kd: [5.0, 3.0],
        }
    }
}

/// Inertia of a uniform rod about its centre.
pub fn rod_inertia(mass: f64, length: f64) -> f64 {
    mass * length * length / 12.0
}

impl ArmModel {
    pub fn validate(&self) -> Result<()> {
        let positive = self
            .link_lengths
            .iter()
            .chain(&self.link_masses)
            .chain(&self.link_inertias)
            .chain(&self.torque_limits)
            .all(|v| *v > 0.0);
        if !positive {
            return Err(Error::Config("arm lengths, masses, inertias and torque limits must be positive".into()));
        }
        let nonneg = self
            .friction
            .iter()
            .chain(&self.kp)
            .chain(&self.kd)
            .chain(std::iter::once(&self.gravity))
            .all(|v| *v >= 0.0);
        if !nonneg {
            return Err(Error::Config("friction, gains and gravity must be nonnegative".into()));
        }
        if (0..2).any(|j| !(self.q_low[j] < self.q_high[j])) {
            return Err(Error::Config("joint limits must satisfy q_low < q_high".into()));
        }
        Ok(())
    }

    fn com(&self) -> Vec2 {
        [0.5 * self.link_lengths[0], 0.5 * self.link_lengths[1]]
    }

    /// Joint-space inertia matrix M(q) as [[m00, m01], [m01, m11]].
    pub fn mass_matrix(&self, q: &Vec2) -> [Vec2; 2] {
        let [l1, _] = self.link_lengths;
        let [m1, m2] = self.link_masses;
        let [i1, i2] = self.link_inertias;
        let [c1, c2] = self.com();
        let cos = q[1].cos();
        let m11 = i2 + m2 * c2 * c2;
        let m01 = m11 + m2 * l1 * c2 * cos;
        let m00 = i1 + m1 * c1 * c1 + i2 + m2 * (l1 * l1 + c2 * c2 + 2.0 * l1 * c2 * cos);
        [[m00, m01], [m01, m11]]
    }

    /// Coriolis and centrifugal torques C(q, q̇) q̇.
    pub fn coriolis(&self, q: &Vec2, qd: &Vec2) -> Vec2 {
        let h = self.link_masses[1] * self.link_lengths[0] * self.com()[1] * q[1].sin();
        [-h * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]), h * qd[0] * qd[0]]
    }

    /// Gravity torques g(q).
    pub fn gravity_torque(&self, q: &Vec2) -> Vec2 {
        let [l1, _] = self.link_lengths;
        let [m1, m2] = self.link_masses;
        let [c1, c2] = self.com();
        let g = self.gravity;
        let outer = m2 * c2 * g * (q[0] + q[1]).cos();
        [(m1 * c1 + m2 * l1) * g * q[0].cos() + outer, outer]
    }

    /// Potential energy relative to the shoulder height.
    pub fn potential_energy(&self, q: &Vec2) -> f64 {
        let [l1, _] = self.link_lengths;
        let [m1, m2] = self.link_masses;
        let [c1, c2] = self.com();
        self.gravity * (m1 * c1 * q[0].sin() + m2 * (l1 * q[0].sin() + c2 * (q[0] + q[1]).sin()))
    }

    pub fn kinetic_energy(&self, q: &Vec2, qd: &Vec2) -> f64 {
        let m = self.mass_matrix(q);
        0.5 * (m[0][0] * qd[0] * qd[0] + 2.0 * m[0][1] * qd[0] * qd[1] + m[1][1] * qd[1] * qd[1])
    }

    /// q̈ from M q̈ = τ − C q̇ − g(q) − B q̇.
    pub fn forward_dynamics(&self, q: &Vec2, qd: &Vec2, tau: &Vec2) -> Vec2 {
        let m = self.mass_matrix(q);
        let c = self.coriolis(q, qd);
        let g = self.gravity_torque(q);
        let rhs = [
            tau[0] - c[0] - g[0] - self.friction[0] * qd[0],
            tau[1] - c[1] - g[1] - self.friction[1] * qd[1],
        ];
        let det = m[0][0] * m[1][1] - m[0][1] * m[0][1];
        [
            (m[1][1] * rhs[0] - m[0][1] * rhs[1]) / det,
            (m[0][0] * rhs[1] - m[0][1] * rhs[0]) / det,
        ]
    }

    /// One semi-implicit Euler step; joint stops absorb the velocity that
    /// would carry a joint past its limit. Returns the applied q̈.
    pub fn integrate(&self, q: &mut Vec2, qd: &mut Vec2, tau: &Vec2, dt: f64) -> Vec2 {
        let qdd = self.forward_dynamics(q, qd, tau);
        for j in 0..2 {
            qd[j] += dt * qdd[j];
            q[j] += dt * qd[j];
            if q[j] < self.q_low[j] {
                q[j] = self.q_low[j];
                qd[j] = qd[j].max(0.0);
            } else if q[j] > self.q_high[j] {
                q[j] = self.q_high[j];
                qd[j] = qd[j].min(0.0);
            }
        }
        qdd
    }

    /// End-effector (funnel centre) position.
    pub fn forward_kinematics(&self, q: &Vec2) -> Vec2 {
        let [l1, l2] = self.link_lengths;
        let s = q[0] + q[1];
        [
            self.base[0] + l1 * q[0].cos() + l2 * s.cos(),
            self.base[1] + l1 * q[0].sin() + l2 * s.sin(),
        ]
    }

    /// Rows are d(x, z)/dq.
    pub fn jacobian(&self, q: &Vec2) -> [Vec2; 2] {
        let [l1, l2] = self.link_lengths;
        let s = q[0] + q[1];
        [
            [-l1 * q[0].sin() - l2 * s.sin(), -l2 * s.sin()],
            [l1 * q[0].cos() + l2 * s.cos(), l2 * s.cos()],
        ]
    }

    pub fn end_effector_velocity(&self, q: &Vec2, qd: &Vec2) -> Vec2 {
        let j = self.jacobian(q);
        [
            j[0][0] * qd[0] + j[0][1] * qd[1],
            j[1][0] * qd[0] + j[1][1] * qd[1],
        ]
    }
}

/// τ = K_P(q_ref − q) + K_D(q̇_ref − q̇) + g(q), clamped to the torque limits.
pub fn pd_gravity_torque(q: &Vec2, qd: &Vec2, q_ref: &Vec2, qd_ref: &Vec2, model: &ArmModel) -> Vec2 {
    let g = model.gravity_torque(q);
    let mut tau = [0.0; 2];
    for j in 0..2 {
        let raw = model.kp[j] * (q_ref[j] - q[j]) + model.kd[j] * (qd_ref[j] - qd[j]) + g[j];
        tau[j] = raw.clamp(-model.torque_limits[j], model.torque_limits[j]);
    }
    tau
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_error_gives_gravity_torque() {
        let m = ArmModel::default();
        let q = [0.4, -0.9];
        let tau = pd_gravity_torque(&q, &[0.3, 0.1], &q, &[0.3, 0.1], &m);
        assert_eq!(tau, m.gravity_torque(&q));
    }

    #[test]
    fn gravity_compensation_holds_arm() {
        let m = ArmModel::default();
        for q in [[0.0, 0.0], [0.7, -1.2], [-1.1, 2.0]] {
            let tau = pd_gravity_torque(&q, &[0.0; 2], &q, &[0.0; 2], &m);
            let qdd = m.forward_dynamics(&q, &[0.0; 2], &tau);
            assert!(qdd[0].abs() <= 1e-10 && qdd[1].abs() <= 1e-10, "{qdd:?}");
        }
    }

    #[test]
    fn position_error_is_linear() {
        let m = ArmModel::default();
        let q = [0.2, 0.5];
        let e = 0.1;
        let tau = pd_gravity_torque(&q, &[0.0; 2], &[q[0] + e, q[1]], &[0.0; 2], &m);
        let g = m.gravity_torque(&q);
        assert!((tau[0] - g[0] - m.kp[0] * e).abs() < 1e-12);
        assert!((tau[1] - g[1]).abs() < 1e-12);
    }

    #[test]
    fn torque_is_clamped() {
        let m = ArmModel::default();
        let tau = pd_gravity_torque(&[0.0; 2], &[0.0; 2], &[10.0, -10.0], &[0.0; 2], &m);
        assert_eq!(tau, [60.0, -40.0]);
    }

    #[test]
    fn gravity_is_potential_gradient() {
        let m = ArmModel::default();
        let q = [0.3, -0.8];
        let h = 1e-6;
        let g = m.gravity_torque(&q);
        for j in 0..2 {
            let mut a = q;
            let mut b = q;
            a[j] += h;
            b[j] -= h;
            let fd = (m.potential_energy(&a) - m.potential_energy(&b)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let m = ArmModel::default();
        let q = [0.6, 0.9];
        let jac = m.jacobian(&q);
        let h = 1e-7;
        for j in 0..2 {
            let mut a = q;
            let mut b = q;
            a[j] += h;
            b[j] -= h;
            let (pa, pb) = (m.forward_kinematics(&a), m.forward_kinematics(&b));
            for r in 0..2 {
                assert!(((pa[r] - pb[r]) / (2.0 * h) - jac[r][j]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn joint_stop_absorbs_velocity() {
        let m = ArmModel::default();
        let mut q = [2.499, 0.0];
        let mut qd = [5.0, 0.0];
        let tau = m.gravity_torque(&q);
        m.integrate(&mut q, &mut qd, &tau, 1e-3);
        assert_eq!(q[0], 2.5);
        assert_eq!(qd[0], 0.0);
    }
}
