//! The shipped starting plan for the default geometry.
//!
//! vp0 is the stroke from rest. The cycle then alternates throw (vp1, vp3) and
//! catch (vp2, vp4) poses; the second half of the cycle is tied to the first,
//! so the learner sees one throw, one catch and the stroke timing.
//!
//! Hand-tuned: the arm juggles for about 1.7 s before the balls drift apart.

use crate::spline::{MaskSpec, SlotSpec, ViaPoint};

pub fn seed_via_points() -> Vec<ViaPoint> {
    let throw = ViaPoint::new(vec![-0.357, 1.769], vec![7.84, -4.047], 0.156);
    let catch = ViaPoint::new(vec![-0.762, 1.952], vec![0.0, 0.0], 0.326);
    vec![
        ViaPoint::new(vec![-1.107, 1.973], vec![0.0, 0.0], 0.116),
        throw.clone(),
        catch.clone(),
        throw,
        catch,
    ]
}

pub fn default_mask_spec() -> MaskSpec {
    let tied = |source: String| SlotSpec::Tied { source, sign: 1.0 };
    let mut spec = MaskSpec::new();
    for j in 0..2 {
        for vp in [0, 2, 4] {
            spec.insert(format!("vp{vp}.qdot{j}"), SlotSpec::Fixed);
        }
        spec.insert(format!("vp3.q{j}"), tied(format!("vp1.q{j}")));
        spec.insert(format!("vp3.qdot{j}"), tied(format!("vp1.qdot{j}")));
        spec.insert(format!("vp4.q{j}"), tied(format!("vp2.q{j}")));
    }
    spec.insert("vp3.t".into(), tied("vp1.t".into()));
    spec.insert("vp4.t".into(), tied("vp2.t".into()));
    spec
}
