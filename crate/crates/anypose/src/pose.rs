//! Domain types shared by every stage: poses, sequences, skeletons, and
//! query-time grids.
//!
//! Conventions: coordinates are millimeters, time is seconds, and query times
//! are relative to the last observed pose (t = 0).

use crate::{Error, Result};

/// One articulated pose: M joints, each a 3D position in millimeters.
///
/// Immutable after construction; all coordinates are validated finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    joints: Vec<[f64; 3]>,
}

impl Pose {
    pub fn new(joints: Vec<[f64; 3]>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::invalid("a pose needs at least one joint"));
        }
        for (j, p) in joints.iter().enumerate() {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!(
                    "joint {j} has a non-finite coordinate: {p:?}"
                )));
            }
        }
        Ok(Pose { joints })
    }

    pub fn m_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[[f64; 3]] {
        &self.joints
    }

    pub fn joint(&self, j: usize) -> [f64; 3] {
        self.joints[j]
    }

    /// Flatten to a state vector of length 3M in row-major joint order
    /// (joint 0 x,y,z, joint 1 x,y,z, ...).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.joints.len());
        for p in &self.joints {
            out.extend_from_slice(p);
        }
        out
    }

    /// Inverse of [`Pose::flatten`]; the state length must be a positive
    /// multiple of 3 and every entry finite.
    pub fn from_state(state: &[f64]) -> Result<Self> {
        if state.is_empty() || state.len() % 3 != 0 {
            return Err(Error::Dimension {
                context: "Pose::from_state",
                expected: 3,
                got: state.len(),
            });
        }
        let joints = state
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect::<Vec<_>>();
        Pose::new(joints)
    }
}

/// A uniformly sampled, time-stamped pose sequence.
///
/// Pose `i` is implicitly at `start_time_sec + i * frame_interval_sec`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    poses: Vec<Pose>,
    frame_interval_sec: f64,
    start_time_sec: f64,
}

impl PoseSequence {
    pub fn new(poses: Vec<Pose>, frame_interval_sec: f64, start_time_sec: f64) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::invalid("a pose sequence needs at least one pose"));
        }
        if !(frame_interval_sec.is_finite() && frame_interval_sec > 0.0) {
            return Err(Error::invalid(format!(
                "frame_interval_sec must be finite and positive, got {frame_interval_sec}"
            )));
        }
        if !start_time_sec.is_finite() {
            return Err(Error::invalid("start_time_sec must be finite"));
        }
        let m = poses[0].m_joints();
        if let Some(bad) = poses.iter().position(|p| p.m_joints() != m) {
            return Err(Error::Dimension {
                context: "PoseSequence joint count",
                expected: m,
                got: poses[bad].m_joints(),
            });
        }
        Ok(PoseSequence {
            poses,
            frame_interval_sec,
            start_time_sec,
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one pose
    }

    pub fn m_joints(&self) -> usize {
        self.poses[0].m_joints()
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn pose(&self, i: usize) -> &Pose {
        &self.poses[i]
    }

    pub fn last(&self) -> &Pose {
        self.poses.last().expect("non-empty by construction")
    }

    pub fn frame_interval_sec(&self) -> f64 {
        self.frame_interval_sec
    }

    pub fn start_time_sec(&self) -> f64 {
        self.start_time_sec
    }

    pub fn timestamp_sec(&self, i: usize) -> f64 {
        self.start_time_sec + i as f64 * self.frame_interval_sec
    }

    /// Sub-sequence of poses `[from, to)` keeping the frame interval; the
    /// start time shifts so timestamps are preserved.
    pub fn window(&self, from: usize, to: usize) -> Result<PoseSequence> {
        if from >= to || to > self.poses.len() {
            return Err(Error::invalid(format!(
                "window [{from}, {to}) out of bounds for sequence of length {}",
                self.poses.len()
            )));
        }
        PoseSequence::new(
            self.poses[from..to].to_vec(),
            self.frame_interval_sec,
            self.timestamp_sec(from),
        )
    }
}

/// Strictly positive query times, in seconds after the last observed pose.
///
/// Construction validates finiteness and positivity; [`TimeGrid::canonicalize`]
/// sorts and removes exact duplicates. Solvers and forecasts require a
/// canonical grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times_sec: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times_sec: Vec<f64>) -> Result<Self> {
        if times_sec.is_empty() {
            return Err(Error::EmptyTimeGrid);
        }
        for &t in &times_sec {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::BadTime { value: t });
            }
        }
        Ok(TimeGrid { times_sec })
    }

    pub fn single(t: f64) -> Result<Self> {
        TimeGrid::new(vec![t])
    }

    /// Sort ascending and drop exact duplicates. The returned map gives, for
    /// each original entry, its index in the canonical grid, so results of a
    /// canonical solve can be scattered back to the caller's order.
    pub fn canonicalize(&self) -> (TimeGrid, Vec<usize>) {
        let mut order: Vec<usize> = (0..self.times_sec.len()).collect();
        order.sort_by(|&a, &b| {
            self.times_sec[a]
                .partial_cmp(&self.times_sec[b])
                .expect("times are finite")
        });
        let mut canonical: Vec<f64> = Vec::with_capacity(self.times_sec.len());
        let mut map = vec![0usize; self.times_sec.len()];
        for &i in &order {
            let t = self.times_sec[i];
            if canonical.last() != Some(&t) {
                canonical.push(t);
            }
            map[i] = canonical.len() - 1;
        }
        (TimeGrid { times_sec: canonical }, map)
    }

    pub fn is_canonical(&self) -> bool {
        self.times_sec.windows(2).all(|w| w[0] < w[1])
    }

    pub fn times(&self) -> &[f64] {
        &self.times_sec
    }

    pub fn len(&self) -> usize {
        self.times_sec.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one time
    }

    pub fn last(&self) -> f64 {
        *self.times_sec.last().expect("non-empty by construction")
    }
}

/// Joint topology and bone lengths for forward kinematics.
///
/// `parent[j] == j` marks the single root. The root sits at the origin, so
/// its bone length is unused (still validated positive like the rest).
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    parent: Vec<usize>,
    bone_length_mm: Vec<f64>,
    /// Joint indices ordered so every parent precedes its children.
    eval_order: Vec<usize>,
}

impl Skeleton {
    pub fn new(parent: Vec<usize>, bone_length_mm: Vec<f64>) -> Result<Self> {
        let m = parent.len();
        if m == 0 {
            return Err(Error::invalid("skeleton needs at least one joint"));
        }
        if bone_length_mm.len() != m {
            return Err(Error::Dimension {
                context: "Skeleton bone lengths",
                expected: m,
                got: bone_length_mm.len(),
            });
        }
        for (j, &l) in bone_length_mm.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::invalid(format!(
                    "bone length of joint {j} must be finite and positive, got {l}"
                )));
            }
        }
        let roots: Vec<usize> = (0..m).filter(|&j| parent[j] == j).collect();
        if roots.len() != 1 {
            return Err(Error::invalid(format!(
                "skeleton must have exactly one root, found {}",
                roots.len()
            )));
        }
        for (j, &p) in parent.iter().enumerate() {
            if p >= m {
                return Err(Error::invalid(format!(
                    "joint {j} has out-of-range parent {p}"
                )));
            }
        }
        // Acyclicity: every joint must reach the root in at most m hops.
        for mut j in 0..m {
            let mut hops = 0;
            while parent[j] != j {
                j = parent[j];
                hops += 1;
                if hops > m {
                    return Err(Error::invalid("skeleton parent relation has a cycle"));
                }
            }
        }
        // Topological order by depth.
        let depth: Vec<usize> = (0..m)
            .map(|mut j| {
                let mut d = 0;
                while parent[j] != j {
                    j = parent[j];
                    d += 1;
                }
                d
            })
            .collect();
        let mut eval_order: Vec<usize> = (0..m).collect();
        eval_order.sort_by_key(|&j| (depth[j], j));
        Ok(Skeleton {
            parent,
            bone_length_mm,
            eval_order,
        })
    }

    pub fn m_joints(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self) -> &[usize] {
        &self.parent
    }

    pub fn bone_length_mm(&self) -> &[f64] {
        &self.bone_length_mm
    }

    pub fn root(&self) -> usize {
        self.eval_order[0]
    }

    pub(crate) fn eval_order(&self) -> &[usize] {
        &self.eval_order
    }
}
