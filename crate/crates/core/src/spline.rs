//! Via-point trajectories: parameter tying/fixing, joint-space box limits and
//! piecewise cubic Hermite interpolation with an optional repeating cycle.
//!
//! Full parameter slots are laid out per via point as
//! `q0..q{J-1}, qdot0..qdot{J-1}, t` and named `vp{i}.q{j}`, `vp{i}.qdot{j}`
//! and `vp{i}.t`. Segment `i` runs from via point `i` to via point `i + 1`
//! and lasts `vp{i}.t` seconds.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViaPoint {
    /// Joint positions (rad).
    pub q: Vec<f64>,
    /// Joint velocities (rad/s).
    pub qdot: Vec<f64>,
    /// Duration of the segment leaving this via point (s).
    #[serde(rename = "t")]
    pub duration: f64,
}

impl ViaPoint {
    pub fn new(q: Vec<f64>, qdot: Vec<f64>, duration: f64) -> Self {
        Self { q, qdot, duration }
    }
}

/// Joint-space safety box applied to every decoded via point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxLimits {
    pub q_low: Vec<f64>,
    pub q_high: Vec<f64>,
    /// Symmetric velocity bound |qdot_j| ≤ qdot_max[j].
    pub qdot_max: Vec<f64>,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
}

fn default_t_min() -> f64 {
    0.1
}

fn default_t_max() -> f64 {
    2.0
}

impl BoxLimits {
    pub fn joints(&self) -> usize {
        self.q_low.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.q_low.len();
        if self.q_high.len() != j || self.qdot_max.len() != j {
            return Err(Error::Config("box limit vectors differ in length".into()));
        }
        for k in 0..j {
            if !(self.q_low[k] < self.q_high[k]) {
                return Err(Error::Config(format!("joint {k}: q_low must be below q_high")));
            }
            if !(self.qdot_max[k] > 0.0) {
                return Err(Error::Config(format!("joint {k}: qdot_max must be positive")));
            }
        }
        if !(self.t_min > 0.0 && self.t_min < self.t_max) {
            return Err(Error::Config("duration limits must satisfy 0 < t_min < t_max".into()));
        }
        Ok(())
    }

    pub fn clamp(&self, vp: &ViaPoint) -> ViaPoint {
        let q = vp
            .q
            .iter()
            .enumerate()
            .map(|(j, &v)| v.clamp(self.q_low[j], self.q_high[j]))
            .collect();
        let qdot = vp
            .qdot
            .iter()
            .enumerate()
            .map(|(j, &v)| v.clamp(-self.qdot_max[j], self.qdot_max[j]))
            .collect();
        ViaPoint {
            q,
            qdot,
            duration: vp.duration.clamp(self.t_min, self.t_max),
        }
    }

    pub fn contains(&self, vp: &ViaPoint) -> bool {
        vp.q.iter().enumerate().all(|(j, &v)| v >= self.q_low[j] && v <= self.q_high[j])
            && vp.qdot.iter().enumerate().all(|(j, &v)| v.abs() <= self.qdot_max[j])
            && vp.duration >= self.t_min
            && vp.duration <= self.t_max
    }
}

/// How one full-parameter slot is populated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlotTag {
    /// Read from θ at the given index.
    Free(usize),
    Fixed(f64),
    /// `sign * value(source)`; the source is a `Free` or `Fixed` slot.
    Tied { source: usize, sign: f64 },
}

/// Mapping between the free parameter vector θ and the full via-point list.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMask {
    joints: usize,
    via_points: usize,
    tags: Vec<SlotTag>,
    free: usize,
}

/// Config-file form of a slot tag. Slots missing from the map are free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotSpec {
    Free,
    /// Held at the seed plan's value.
    Fixed,
    /// Held at an explicit value.
    Value(f64),
    Tied {
        source: String,
        #[serde(default = "unit_sign")]
        sign: f64,
    },
}

fn unit_sign() -> f64 {
    1.0
}

pub type MaskSpec = BTreeMap<String, SlotSpec>;

fn stride(joints: usize) -> usize {
    2 * joints + 1
}

/// Name of full slot `index` for a layout with `joints` joints.
pub fn slot_name(joints: usize, index: usize) -> String {
    let s = stride(joints);
    let (vp, k) = (index / s, index % s);
    if k < joints {
        format!("vp{vp}.q{k}")
    } else if k < 2 * joints {
        format!("vp{vp}.qdot{}", k - joints)
    } else {
        format!("vp{vp}.t")
    }
}

/// Inverse of [`slot_name`].
pub fn parse_slot(joints: usize, via_points: usize, name: &str) -> Result<usize> {
    let bad = || Error::Config(format!("unknown slot name {name:?}"));
    let rest = name.strip_prefix("vp").ok_or_else(bad)?;
    let (vp, field) = rest.split_once('.').ok_or_else(bad)?;
    let vp: usize = vp.parse().map_err(|_| bad())?;
    if vp >= via_points {
        return Err(bad());
    }
    let base = vp * stride(joints);
    let offset = if field == "t" {
        2 * joints
    } else if let Some(j) = field.strip_prefix("qdot") {
        let j: usize = j.parse().map_err(|_| bad())?;
        if j >= joints {
            return Err(bad());
        }
        joints + j
    } else if let Some(j) = field.strip_prefix('q') {
        let j: usize = j.parse().map_err(|_| bad())?;
        if j >= joints {
            return Err(bad());
        }
        j
    } else {
        return Err(bad());
    };
    Ok(base + offset)
}

impl ConstraintMask {
    pub fn new(joints: usize, via_points: usize, tags: Vec<SlotTag>) -> Result<Self> {
        if tags.len() != via_points * stride(joints) {
            return Err(Error::Argument(format!(
                "{} tags for {via_points} via points with {joints} joints",
                tags.len()
            )));
        }
        let mut seen = Vec::new();
        for tag in &tags {
            match *tag {
                SlotTag::Free(i) => seen.push(i),
                SlotTag::Fixed(v) if !v.is_finite() => {
                    return Err(Error::Argument("fixed slot value is not finite".into()))
                }
                SlotTag::Tied { source, sign } => {
                    if !sign.is_finite() {
                        return Err(Error::Argument("tie sign is not finite".into()));
                    }
                    match tags.get(source) {
                        Some(SlotTag::Free(_)) | Some(SlotTag::Fixed(_)) => {}
                        Some(SlotTag::Tied { .. }) => {
                            return Err(Error::Argument(format!(
                                "slot {} tied to another tied slot",
                                slot_name(joints, source)
                            )))
                        }
                        None => return Err(Error::Argument(format!("tie source {source} out of range"))),
                    }
                }
                _ => {}
            }
        }
        seen.sort_unstable();
        if seen.iter().enumerate().any(|(k, &i)| k != i) {
            return Err(Error::Argument("free indices must cover 0..m-1 exactly once".into()));
        }
        Ok(Self {
            joints,
            via_points,
            free: seen.len(),
            tags,
        })
    }

    /// Every slot free, θ indices in slot order.
    pub fn all_free(joints: usize, via_points: usize) -> Self {
        let tags = (0..via_points * stride(joints)).map(SlotTag::Free).collect();
        Self::new(joints, via_points, tags).expect("identity mask is valid")
    }

    /// Builds the mask from its config form. `Fixed` slots take their value
    /// from `seed`; free indices follow slot order.
    pub fn from_spec(seed: &[ViaPoint], spec: &MaskSpec) -> Result<Self> {
        let via_points = seed.len();
        let joints = seed.first().map_or(0, |vp| vp.q.len());
        check_shape(seed, joints)?;
        let full = flatten(seed);
        let mut specs: Vec<SlotSpec> = vec![SlotSpec::Free; full.len()];
        for (name, s) in spec {
            specs[parse_slot(joints, via_points, name)?] = s.clone();
        }
        let mut next_free = 0;
        let mut tags = Vec::with_capacity(full.len());
        for (slot, s) in specs.iter().enumerate() {
            tags.push(match s {
                SlotSpec::Free => {
                    next_free += 1;
                    SlotTag::Free(next_free - 1)
                }
                SlotSpec::Fixed => SlotTag::Fixed(full[slot]),
                SlotSpec::Value(v) => SlotTag::Fixed(*v),
                SlotSpec::Tied { source, sign } => SlotTag::Tied {
                    source: parse_slot(joints, via_points, source)?,
                    sign: *sign,
                },
            });
        }
        Self::new(joints, via_points, tags).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn via_points(&self) -> usize {
        self.via_points
    }

    pub fn full_len(&self) -> usize {
        self.tags.len()
    }

    pub fn free_len(&self) -> usize {
        self.free
    }

    pub fn tags(&self) -> &[SlotTag] {
        &self.tags
    }

    /// Names of the free slots in θ order.
    pub fn free_slot_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.free];
        for (slot, tag) in self.tags.iter().enumerate() {
            if let SlotTag::Free(i) = tag {
                names[*i] = slot_name(self.joints, slot);
            }
        }
        names
    }

    /// θ → full slot vector, before clamping.
    pub fn expand_raw(&self, theta: &DVector<f64>) -> Result<Vec<f64>> {
        if theta.len() != self.free {
            return Err(Error::Argument(format!(
                "theta has dimension {}, mask has {} free slots",
                theta.len(),
                self.free
            )));
        }
        let value = |tag: &SlotTag| match *tag {
            SlotTag::Free(i) => theta[i],
            SlotTag::Fixed(v) => v,
            SlotTag::Tied { .. } => unreachable!("ties resolve to free or fixed slots"),
        };
        Ok(self
            .tags
            .iter()
            .map(|tag| match *tag {
                SlotTag::Tied { source, sign } => sign * value(&self.tags[source]),
                _ => value(tag),
            })
            .collect())
    }

    /// θ → clamped via-point list.
    pub fn expand(&self, theta: &DVector<f64>, limits: &BoxLimits) -> Result<Vec<ViaPoint>> {
        if limits.joints() != self.joints {
            return Err(Error::Argument(format!(
                "limits cover {} joints, mask has {}",
                limits.joints(),
                self.joints
            )));
        }
        let full = self.expand_raw(theta)?;
        Ok(unflatten(&full, self.joints)
            .iter()
            .map(|vp| limits.clamp(vp))
            .collect())
    }

    /// Reads the free slots back out of a full via-point list.
    pub fn extract(&self, via_points: &[ViaPoint]) -> Result<DVector<f64>> {
        if via_points.len() != self.via_points {
            return Err(Error::Argument(format!(
                "{} via points, mask expects {}",
                via_points.len(),
                self.via_points
            )));
        }
        check_shape(via_points, self.joints)?;
        let full = flatten(via_points);
        let mut theta = DVector::zeros(self.free);
        for (slot, tag) in self.tags.iter().enumerate() {
            if let SlotTag::Free(i) = tag {
                theta[*i] = full[slot];
            }
        }
        Ok(theta)
    }
}

fn check_shape(vps: &[ViaPoint], joints: usize) -> Result<()> {
    if vps.iter().any(|vp| vp.q.len() != joints || vp.qdot.len() != joints) {
        return Err(Error::Argument("via points disagree on joint count".into()));
    }
    Ok(())
}

pub fn flatten(vps: &[ViaPoint]) -> Vec<f64> {
    let mut out = Vec::new();
    for vp in vps {
        out.extend_from_slice(&vp.q);
        out.extend_from_slice(&vp.qdot);
        out.push(vp.duration);
    }
    out
}

pub fn unflatten(full: &[f64], joints: usize) -> Vec<ViaPoint> {
    full.chunks(stride(joints))
        .map(|c| ViaPoint {
            q: c[..joints].to_vec(),
            qdot: c[joints..2 * joints].to_vec(),
            duration: c[2 * joints],
        })
        .collect()
}

/// One cubic per joint: q(s) = a0 + a1 s + a2 s² + a3 s³ with s = t − start.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSegment {
    pub coeffs: Vec<[f64; 4]>,
    pub start: f64,
    pub duration: f64,
}

impl CubicSegment {
    fn hermite(from: &ViaPoint, to: &ViaPoint, start: f64, duration: f64) -> Self {
        let t = duration;
        let coeffs = (0..from.q.len())
            .map(|j| {
                let dq = to.q[j] - from.q[j];
                [
                    from.q[j],
                    from.qdot[j],
                    3.0 * dq / (t * t) - (to.qdot[j] + 2.0 * from.qdot[j]) / t,
                    -2.0 * dq / (t * t * t) + (to.qdot[j] + from.qdot[j]) / (t * t),
                ]
            })
            .collect();
        Self { coeffs, start, duration }
    }

    fn eval_into(&self, s: f64, q: &mut [f64], qdot: &mut [f64]) {
        for (j, a) in self.coeffs.iter().enumerate() {
            q[j] = ((a[3] * s + a[2]) * s + a[1]) * s + a[0];
            qdot[j] = (3.0 * a[3] * s + 2.0 * a[2]) * s + a[1];
        }
    }
}

/// Executable reference trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SplinePlan {
    segments: Vec<CubicSegment>,
    /// Start time of every segment followed by the end time of the last.
    knot_times: Vec<f64>,
    stroke_prefix: bool,
    cycle_start_index: Option<usize>,
    period: f64,
    /// Held after the last knot of a non-repeating plan.
    final_q: Vec<f64>,
}

/// Builds the piecewise cubic Hermite plan through `via_points`.
///
/// With `cycle_start = Some(c)` the last via point connects back to via point
/// `c` (using its own duration) and segments `c..` repeat forever; segments
/// before `c` form the stroke prefix. Without a cycle the plan holds the last
/// position at rest once it ends.
pub fn spline_coefficients(via_points: &[ViaPoint], cycle_start: Option<usize>) -> Result<SplinePlan> {
    if via_points.len() < 2 && cycle_start.is_none() {
        return Err(Error::Argument("a spline plan needs at least two via points".into()));
    }
    if via_points.is_empty() {
        return Err(Error::Argument("a spline plan needs at least one via point".into()));
    }
    let joints = via_points[0].q.len();
    check_shape(via_points, joints)?;
    if let Some(c) = cycle_start {
        if c >= via_points.len() {
            return Err(Error::Argument(format!(
                "cycle start {c} beyond {} via points",
                via_points.len()
            )));
        }
    }
    let n_seg = if cycle_start.is_some() {
        via_points.len()
    } else {
        via_points.len() - 1
    };
    let mut segments = Vec::with_capacity(n_seg);
    let mut knot_times = Vec::with_capacity(n_seg + 1);
    let mut t0 = 0.0;
    for i in 0..n_seg {
        let from = &via_points[i];
        let to = match (i + 1 < via_points.len(), cycle_start) {
            (true, _) => &via_points[i + 1],
            (false, Some(c)) => &via_points[c],
            (false, None) => unreachable!(),
        };
        if !(from.duration > 0.0) || !from.duration.is_finite() {
            return Err(Error::Argument(format!(
                "via point {i} has non-positive duration {}",
                from.duration
            )));
        }
        knot_times.push(t0);
        segments.push(CubicSegment::hermite(from, to, t0, from.duration));
        t0 += from.duration;
    }
    knot_times.push(t0);
    let period = match cycle_start {
        Some(c) => via_points[c..].iter().map(|vp| vp.duration).sum(),
        None => 0.0,
    };
    let final_q = if cycle_start.is_none() {
        via_points[via_points.len() - 1].q.clone()
    } else {
        Vec::new()
    };
    Ok(SplinePlan {
        segments,
        knot_times,
        stroke_prefix: cycle_start.is_some_and(|c| c > 0),
        cycle_start_index: cycle_start,
        period,
        final_q,
    })
}

impl SplinePlan {
    pub fn joints(&self) -> usize {
        self.segments[0].coeffs.len()
    }

    pub fn segments(&self) -> &[CubicSegment] {
        &self.segments
    }

    pub fn knot_times(&self) -> &[f64] {
        &self.knot_times
    }

    pub fn has_stroke_prefix(&self) -> bool {
        self.stroke_prefix
    }

    pub fn cycle_start_index(&self) -> Option<usize> {
        self.cycle_start_index
    }

    /// Duration of one repetition of the cycle, zero for open plans.
    pub fn period(&self) -> f64 {
        self.period
    }

    /// Time at which the repeating part first begins.
    pub fn cycle_start_time(&self) -> Option<f64> {
        self.cycle_start_index.map(|c| self.knot_times[c])
    }

    /// Reference position and velocity at time `t ≥ 0`.
    pub fn evaluate(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let mut q = vec![0.0; self.joints()];
        let mut qdot = vec![0.0; self.joints()];
        self.evaluate_into(t, &mut q, &mut qdot);
        (q, qdot)
    }

    /// Allocation-free form of [`SplinePlan::evaluate`].
    pub fn evaluate_into(&self, t: f64, q: &mut [f64], qdot: &mut [f64]) {
        let t = t.max(0.0);
        let end = *self.knot_times.last().unwrap();
        let local = if t < end {
            t
        } else if let Some(c) = self.cycle_start_index {
            let c0 = self.knot_times[c];
            let mut wrapped = c0 + (t - c0) % self.period;
            if wrapped >= end {
                wrapped = c0;
            }
            wrapped
        } else {
            q.copy_from_slice(&self.final_q);
            qdot.iter_mut().for_each(|v| *v = 0.0);
            return;
        };
        // last segment whose start ≤ local
        let idx = self.knot_times[..self.segments.len()].partition_point(|&k| k <= local) - 1;
        let seg = &self.segments[idx];
        seg.eval_into(local - seg.start, q, qdot);
    }
}
