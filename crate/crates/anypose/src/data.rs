//! Synthetic articulated motion with an exact continuous-time oracle, plus
//! CSV ingestion for externally supplied sequences.
//!
//! Each synthetic sequence is driven by per-joint sinusoidal rotation angles
//! fed through forward kinematics, so the ground-truth pose is analytically
//! evaluable at any real-valued time — which discrete mocap recordings are
//! not. Sampled frames reuse the same code path, so a generated sequence
//! matches its oracle bit-exactly at frame times.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pose::{Pose, PoseSequence, Skeleton};
use crate::util::{fmt_f64, write_atomic};
use crate::{Error, Result};

/// Rotate `point` by the exponential map of `axis_angle` (Rodrigues).
///
/// The rotation angle is `|axis_angle|` about `axis_angle / |axis_angle|`;
/// below 1e-12 the map is the identity (series limit).
pub fn exp_map_rotate(axis_angle: [f64; 3], point: [f64; 3]) -> [f64; 3] {
    let theta = norm3(axis_angle);
    if theta < 1e-12 {
        return point;
    }
    let k = [
        axis_angle[0] / theta,
        axis_angle[1] / theta,
        axis_angle[2] / theta,
    ];
    let (s, c) = theta.sin_cos();
    let kxp = cross(k, point);
    let kdp = dot(k, point);
    [
        point[0] * c + kxp[0] * s + k[0] * kdp * (1.0 - c),
        point[1] * c + kxp[1] * s + k[1] * kdp * (1.0 - c),
        point[2] * c + kxp[2] * s + k[2] * kdp * (1.0 - c),
    ]
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Row-major 3x3 rotation matrix.
#[derive(Clone, Copy)]
struct Rot3([[f64; 3]; 3]);

impl Rot3 {
    fn identity() -> Self {
        Rot3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        // Columns are the rotated basis vectors.
        let aa = [axis[0] * angle, axis[1] * angle, axis[2] * angle];
        let e0 = exp_map_rotate(aa, [1.0, 0.0, 0.0]);
        let e1 = exp_map_rotate(aa, [0.0, 1.0, 0.0]);
        let e2 = exp_map_rotate(aa, [0.0, 0.0, 1.0]);
        Rot3([
            [e0[0], e1[0], e2[0]],
            [e0[1], e1[1], e2[1]],
            [e0[2], e1[2], e2[2]],
        ])
    }

    fn mul(&self, other: &Rot3) -> Rot3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        Rot3(out)
    }

    fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        [
            self.0[0][0] * v[0] + self.0[0][1] * v[1] + self.0[0][2] * v[2],
            self.0[1][0] * v[0] + self.0[1][1] * v[1] + self.0[1][2] * v[2],
            self.0[2][0] * v[0] + self.0[2][1] * v[1] + self.0[2][2] * v[2],
        ]
    }
}

/// Sinusoidal angle trajectory of one joint: angle(t) = amplitude *
/// sin(frequency * t + phase) about a fixed unit axis.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JointMotion {
    pub axis: [f64; 3],
    pub amplitude_rad: f64,
    pub frequency_rad_s: f64,
    pub phase_rad: f64,
}

/// A complete synthetic motion: skeleton plus one [`JointMotion`] per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMotionSpec {
    pub skeleton: Skeleton,
    pub joints: Vec<JointMotion>,
    pub duration_sec: f64,
    pub frame_interval_sec: f64,
    pub seed: u64,
}

impl SyntheticMotionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.joints.len() != self.skeleton.m_joints() {
            return Err(Error::Dimension {
                context: "spec joint motions",
                expected: self.skeleton.m_joints(),
                got: self.joints.len(),
            });
        }
        for (j, jm) in self.joints.iter().enumerate() {
            let n = norm3(jm.axis);
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "joint {j} axis norm {n} is not unit"
                )));
            }
            if !(jm.frequency_rad_s.is_finite() && jm.frequency_rad_s >= 0.0) {
                return Err(Error::invalid(format!("joint {j} frequency must be >= 0")));
            }
            if !(jm.amplitude_rad.is_finite()
                && jm.amplitude_rad > -std::f64::consts::PI
                && jm.amplitude_rad < std::f64::consts::PI)
            {
                return Err(Error::invalid(format!(
                    "joint {j} amplitude must lie in (-pi, pi)"
                )));
            }
            if !jm.phase_rad.is_finite() {
                return Err(Error::invalid(format!("joint {j} phase must be finite")));
            }
        }
        if !(self.duration_sec.is_finite() && self.duration_sec > 0.0) {
            return Err(Error::invalid("duration_sec must be positive"));
        }
        if !(self.frame_interval_sec.is_finite() && self.frame_interval_sec > 0.0) {
            return Err(Error::invalid("frame_interval_sec must be positive"));
        }
        Ok(())
    }

    pub fn angle_at(&self, joint: usize, t_sec: f64) -> f64 {
        let jm = &self.joints[joint];
        jm.amplitude_rad * (jm.frequency_rad_s * t_sec + jm.phase_rad).sin()
    }
}

/// The continuous-time ground-truth oracle: the exact pose at any `t` within
/// the spec's duration.
///
/// Joint positions accumulate root-to-leaf; each joint contributes the
/// rotation `exp(axis * angle(t))` composed onto its parent's orientation,
/// applied to a rest offset of its bone length along local +x. The root sits
/// at the origin.
pub fn fk_pose(spec: &SyntheticMotionSpec, t_sec: f64) -> Result<Pose> {
    if !(t_sec >= -1e-12 && t_sec <= spec.duration_sec + 1e-9) {
        return Err(Error::invalid(format!(
            "t={t_sec} outside motion duration [0, {}]",
            spec.duration_sec
        )));
    }
    let skel = &spec.skeleton;
    let m = skel.m_joints();
    let mut positions = vec![[0.0f64; 3]; m];
    let mut orientations = vec![Rot3::identity(); m];
    for &j in skel.eval_order() {
        let angle = spec.angle_at(j, t_sec);
        let local = Rot3::from_axis_angle(spec.joints[j].axis, angle);
        let parent = skel.parent()[j];
        if parent == j {
            orientations[j] = local;
        } else {
            orientations[j] = orientations[parent].mul(&local);
            let offset = orientations[j].apply([skel.bone_length_mm()[j], 0.0, 0.0]);
            positions[j] = [
                positions[parent][0] + offset[0],
                positions[parent][1] + offset[1],
                positions[parent][2] + offset[2],
            ];
        }
    }
    Pose::new(positions)
}

/// Sample the oracle at the spec's frame interval over its full duration.
pub fn sample_sequence(spec: &SyntheticMotionSpec) -> Result<PoseSequence> {
    spec.validate()?;
    let dt = spec.frame_interval_sec;
    let n_frames = (spec.duration_sec / dt + 1e-9).floor() as usize + 1;
    let poses = (0..n_frames)
        .map(|i| fk_pose(spec, i as f64 * dt))
        .collect::<Result<Vec<_>>>()?;
    PoseSequence::new(poses, dt, 0.0)
}

/// A 22-joint binary-branching humanoid-like topology: spine with head, two
/// arms off the upper spine, two legs off the root. Other joint counts fall
/// back to a balanced binary tree.
pub fn default_topology(m_joints: usize) -> Vec<usize> {
    if m_joints == 22 {
        vec![
            0, 0, 1, 2, // spine 0-3
            3, 4, // neck, head
            3, 6, 7, 8, // left arm
            3, 10, 11, 12, // right arm
            0, 14, 15, 16, // left leg
            0, 18, 19, 20, // right leg
        ]
    } else {
        (0..m_joints)
            .map(|j| if j == 0 { 0 } else { (j - 1) / 2 })
            .collect()
    }
}

/// Distribution a dataset's motion specs are drawn from.
///
/// Structure (skeleton, joint axes, base amplitudes/phases, base tempo) is
/// drawn once per dataset seed; each sequence then varies tempo, amplitude
/// scale, and global phase, so sequences share one underlying movement
/// pattern entered at different points and traversed at different speeds.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SpecFamily {
    pub m_joints: usize,
    pub frame_interval_sec: f64,
    pub duration_sec: f64,
    pub bone_length_range_mm: (f64, f64),
    pub amplitude_range_rad: (f64, f64),
    pub base_frequency_range_rad_s: (f64, f64),
    pub sequence_frequency_jitter: (f64, f64),
    pub sequence_amplitude_jitter: (f64, f64),
}

impl Default for SpecFamily {
    fn default() -> Self {
        SpecFamily {
            m_joints: 22,
            frame_interval_sec: 0.04,
            duration_sec: 1.2,
            bone_length_range_mm: (80.0, 450.0),
            amplitude_range_rad: (0.15, 0.5),
            base_frequency_range_rad_s: (0.6, 0.9),
            sequence_frequency_jitter: (0.85, 1.15),
            sequence_amplitude_jitter: (0.9, 1.1),
        }
    }
}

impl SpecFamily {
    pub fn validate(&self) -> Result<()> {
        if self.m_joints == 0 {
            return Err(Error::invalid("m_joints must be >= 1"));
        }
        let ranges = [
            ("bone_length_range_mm", self.bone_length_range_mm, 0.0),
            ("amplitude_range_rad", self.amplitude_range_rad, 0.0),
            (
                "base_frequency_range_rad_s",
                self.base_frequency_range_rad_s,
                -1.0,
            ),
            (
                "sequence_frequency_jitter",
                self.sequence_frequency_jitter,
                0.0,
            ),
            (
                "sequence_amplitude_jitter",
                self.sequence_amplitude_jitter,
                0.0,
            ),
        ];
        for (name, (lo, hi), min_lo) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo > min_lo) {
                return Err(Error::invalid(format!(
                    "invalid range {name}: ({lo}, {hi})"
                )));
            }
        }
        if self.amplitude_range_rad.1 * self.sequence_amplitude_jitter.1 >= std::f64::consts::PI {
            return Err(Error::invalid(
                "amplitude range (with jitter) must stay below pi",
            ));
        }
        if !(self.duration_sec > 0.0 && self.frame_interval_sec > 0.0) {
            return Err(Error::invalid(
                "duration and frame interval must be positive",
            ));
        }
        Ok(())
    }
}

/// One dataset entry: the sampled sequence plus, for synthetic data, the
/// spec that generated it (the anytime ground-truth oracle).
#[derive(Debug, Clone)]
pub struct MotionSample {
    pub name: String,
    pub sequence: PoseSequence,
    pub spec: Option<SyntheticMotionSpec>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub n_sequences: usize,
    pub family: SpecFamily,
}

/// Train/validation/test split with disjoint sequences.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<MotionSample>,
    pub validation: Vec<MotionSample>,
    pub test: Vec<MotionSample>,
    pub provenance: Option<Provenance>,
}

impl DatasetSplit {
    pub fn n_sequences(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    fn any_sample(&self) -> Result<&MotionSample> {
        self.train
            .first()
            .or(self.validation.first())
            .or(self.test.first())
            .ok_or_else(|| Error::invalid("dataset is empty"))
    }

    pub fn m_joints(&self) -> Result<usize> {
        Ok(self.any_sample()?.sequence.m_joints())
    }

    pub fn frame_interval_sec(&self) -> Result<f64> {
        Ok(self.any_sample()?.sequence.frame_interval_sec())
    }
}

fn unit_axis(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    [r * theta.cos(), r * theta.sin(), z]
}

/// Generate `n_sequences` randomized specs from `family`, sample them at the
/// frame interval, and split 80/10/10 (validation and test get at least one
/// sequence each). Deterministic per seed.
pub fn generate_dataset(
    family: &SpecFamily,
    n_sequences: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    family.validate()?;
    if n_sequences < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 sequences (one per split), got {n_sequences}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = family.m_joints;

    // Family-level structure.
    let (blo, bhi) = family.bone_length_range_mm;
    let bone_lengths: Vec<f64> = (0..m).map(|_| rng.gen_range(blo..bhi)).collect();
    let skeleton = Skeleton::new(default_topology(m), bone_lengths)?;
    let (alo, ahi) = family.amplitude_range_rad;
    let base_joints: Vec<JointMotion> = (0..m)
        .map(|_| JointMotion {
            axis: unit_axis(&mut rng),
            amplitude_rad: rng.gen_range(alo..ahi),
            frequency_rad_s: 0.0, // filled per sequence
            phase_rad: rng.gen_range(0.0..std::f64::consts::TAU),
        })
        .collect();
    let (flo, fhi) = family.base_frequency_range_rad_s;
    let base_frequency = rng.gen_range(flo..fhi);

    // Per-sequence variation.
    let mut samples = Vec::with_capacity(n_sequences);
    for i in 0..n_sequences {
        let (jlo, jhi) = family.sequence_frequency_jitter;
        let freq = base_frequency * rng.gen_range(jlo..jhi);
        let (slo, shi) = family.sequence_amplitude_jitter;
        let amp_scale = rng.gen_range(slo..shi);
        let phase_shift = rng.gen_range(0.0..std::f64::consts::TAU);
        let joints = base_joints
            .iter()
            .map(|jm| JointMotion {
                axis: jm.axis,
                amplitude_rad: jm.amplitude_rad * amp_scale,
                frequency_rad_s: freq,
                phase_rad: jm.phase_rad + phase_shift,
            })
            .collect();
        let spec = SyntheticMotionSpec {
            skeleton: skeleton.clone(),
            joints,
            duration_sec: family.duration_sec,
            frame_interval_sec: family.frame_interval_sec,
            seed,
        };
        let sequence = sample_sequence(&spec)?;
        samples.push(MotionSample {
            name: format!("seq_{i:03}"),
            sequence,
            spec: Some(spec),
        });
    }

    let n_val = ((n_sequences as f64 * 0.1).round() as usize).max(1);
    let n_test = ((n_sequences as f64 * 0.1).round() as usize).max(1);
    let n_train = n_sequences - n_val - n_test;
    let mut iter = samples.into_iter();
    let train: Vec<_> = iter.by_ref().take(n_train).collect();
    let validation: Vec<_> = iter.by_ref().take(n_val).collect();
    let test: Vec<_> = iter.collect();

    Ok(DatasetSplit {
        train,
        validation,
        test,
        provenance: Some(Provenance {
            seed,
            n_sequences,
            family: family.clone(),
        }),
    })
}

// ---------------------------------------------------------------------------
// Pose CSV: line 1 `# m_joints=<int> frame_interval_sec=<float>`, then one
// line per frame `t_sec,j0x,j0y,j0z,...` with exactly 1+3M fields. One file
// is one sequence; units are mm and seconds.
// ---------------------------------------------------------------------------

pub fn sequence_to_csv(seq: &PoseSequence) -> String {
    let m = seq.m_joints();
    let mut out = String::new();
    out.push_str(&format!(
        "# m_joints={m} frame_interval_sec={}\n",
        fmt_f64(seq.frame_interval_sec())
    ));
    for i in 0..seq.len() {
        let mut fields = Vec::with_capacity(1 + 3 * m);
        fields.push(fmt_f64(seq.timestamp_sec(i)));
        for p in seq.pose(i).joints() {
            fields.push(fmt_f64(p[0]));
            fields.push(fmt_f64(p[1]));
            fields.push(fmt_f64(p[2]));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn save_sequence_csv(path: &Path, seq: &PoseSequence) -> Result<()> {
    write_atomic(path, sequence_to_csv(seq).as_bytes())
}

pub fn sequence_from_csv(path_label: &str, text: &str) -> Result<PoseSequence> {
    let err = |line: usize, msg: String| Error::CsvParse {
        path: path_label.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty file".to_string()))?;
    let header = header.strip_prefix("# ").ok_or_else(|| {
        err(
            1,
            "missing `# m_joints=... frame_interval_sec=...` header".into(),
        )
    })?;
    let mut m_joints: Option<usize> = None;
    let mut frame_interval: Option<f64> = None;
    for tok in header.split_whitespace() {
        if let Some(v) = tok.strip_prefix("m_joints=") {
            m_joints = Some(v.parse().map_err(|e| err(1, format!("bad m_joints: {e}")))?);
        } else if let Some(v) = tok.strip_prefix("frame_interval_sec=") {
            frame_interval = Some(
                v.parse()
                    .map_err(|e| err(1, format!("bad frame_interval_sec: {e}")))?,
            );
        }
    }
    let m = m_joints.ok_or_else(|| err(1, "header lacks m_joints".into()))?;
    let dt = frame_interval.ok_or_else(|| err(1, "header lacks frame_interval_sec".into()))?;
    if m == 0 {
        return Err(err(1, "m_joints must be >= 1".into()));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(err(
            1,
            format!("frame_interval_sec must be positive, got {dt}"),
        ));
    }

    let mut poses = Vec::new();
    let mut start_time = 0.0;
    let mut prev_t: Option<f64> = None;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + 3 * m {
            return Err(err(
                line_no,
                format!("expected {} fields, got {}", 1 + 3 * m, fields.len()),
            ));
        }
        let mut values = Vec::with_capacity(fields.len());
        for (fi, f) in fields.iter().enumerate() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|e| err(line_no, format!("field {fi}: {e}")))?;
            if !v.is_finite() {
                return Err(err(line_no, format!("field {fi} is not finite")));
            }
            values.push(v);
        }
        let t = values[0];
        if let Some(p) = prev_t {
            if t <= p {
                return Err(err(
                    line_no,
                    format!("timestamps must be strictly increasing ({t} after {p})"),
                ));
            }
        } else {
            start_time = t;
        }
        prev_t = Some(t);
        poses.push(Pose::from_state(&values[1..])?);
    }
    if poses.is_empty() {
        return Err(err(1, "no pose rows".into()));
    }
    PoseSequence::new(poses, dt, start_time)
}

pub fn load_sequence_csv(path: &Path) -> Result<PoseSequence> {
    let text = std::fs::read_to_string(path)?;
    sequence_from_csv(&path.display().to_string(), &text)
}

/// Load one CSV file, or every `*.csv` in a directory (sorted by name).
pub fn load_sequences(path: &Path) -> Result<Vec<PoseSequence>> {
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|e| e == "csv").unwrap_or(false))
            .collect();
        files.sort();
        files.iter().map(|f| load_sequence_csv(f)).collect()
    } else {
        Ok(vec![load_sequence_csv(path)?])
    }
}

/// Split manifest written next to generated CSV files: file name -> split.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n_sequences: usize,
    pub m_joints: usize,
    pub frame_interval_sec: f64,
    pub family: SpecFamily,
    pub files: BTreeMap<String, String>,
}

/// Write a dataset to `dir` as one CSV per sequence plus `manifest.json`.
pub fn save_dataset_dir(dir: &Path, split: &DatasetSplit) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let provenance = split
        .provenance
        .clone()
        .ok_or_else(|| Error::invalid("dataset has no provenance to write"))?;
    let mut files = BTreeMap::new();
    for (samples, label) in [
        (&split.train, "train"),
        (&split.validation, "validation"),
        (&split.test, "test"),
    ] {
        for s in samples.iter() {
            let file = format!("{}.csv", s.name);
            save_sequence_csv(&dir.join(&file), &s.sequence)?;
            files.insert(file, label.to_string());
        }
    }
    let manifest = DatasetManifest {
        seed: provenance.seed,
        n_sequences: split.n_sequences(),
        m_joints: split.m_joints()?,
        frame_interval_sec: split.frame_interval_sec()?,
        family: provenance.family,
        files,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&dir.join("manifest.json"), json.as_bytes())
}

/// Load a dataset directory written by [`save_dataset_dir`]. Loaded samples
/// carry no oracle spec; ground truth comes from their frames.
pub fn load_dataset_dir(dir: &Path) -> Result<DatasetSplit> {
    let manifest_path = dir.join("manifest.json");
    let manifest: DatasetManifest =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        provenance: Some(Provenance {
            seed: manifest.seed,
            n_sequences: manifest.n_sequences,
            family: manifest.family.clone(),
        }),
    };
    for (file, label) in &manifest.files {
        let sequence = load_sequence_csv(&dir.join(file))?;
        let sample = MotionSample {
            name: file.trim_end_matches(".csv").to_string(),
            sequence,
            spec: None,
        };
        match label.as_str() {
            "train" => split.train.push(sample),
            "validation" => split.validation.push(sample),
            "test" => split.test.push(sample),
            other => {
                return Err(Error::invalid(format!(
                    "manifest assigns {file} to unknown split '{other}'"
                )))
            }
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn two_bone_chain() -> SyntheticMotionSpec {
        let skeleton = Skeleton::new(vec![0, 0, 1], vec![1.0, 100.0, 100.0]).unwrap();
        let joints = vec![
            JointMotion {
                axis: [0.0, 0.0, 1.0],
                amplitude_rad: 0.0,
                frequency_rad_s: 0.0,
                phase_rad: 0.0,
            };
            3
        ];
        SyntheticMotionSpec {
            skeleton,
            joints,
            duration_sec: 2.0,
            frame_interval_sec: 0.04,
            seed: 0,
        }
    }

    #[test]
    fn exp_map_zero_is_identity() {
        let p = [1.5, -2.0, 0.25];
        assert_eq!(exp_map_rotate([0.0; 3], p), p);
    }

    #[test]
    fn exp_map_quarter_turn_about_z() {
        let r = exp_map_rotate([0.0, 0.0, FRAC_PI_2], [1.0, 0.0, 0.0]);
        assert!((r[0]).abs() < 1e-12);
        assert!((r[1] - 1.0).abs() < 1e-12);
        assert!((r[2]).abs() < 1e-12);
    }

    #[test]
    fn rest_pose_lays_chain_along_x() {
        let spec = two_bone_chain();
        for &t in &[0.0, 0.5, 1.7] {
            let pose = fk_pose(&spec, t).unwrap();
            assert_eq!(pose.joint(0), [0.0, 0.0, 0.0]);
            assert_eq!(pose.joint(1), [100.0, 0.0, 0.0]);
            assert_eq!(pose.joint(2), [200.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn fk_rejects_time_outside_duration() {
        let spec = two_bone_chain();
        assert!(fk_pose(&spec, -0.5).is_err());
        assert!(fk_pose(&spec, 2.5).is_err());
    }

    #[test]
    fn fk_quarter_turn_bends_the_chain() {
        // Rotate joint 1 by +pi/2 about z: joint 1 moves to +y of the root,
        // joint 2 follows the rotated frame.
        let mut spec = two_bone_chain();
        spec.joints[1].amplitude_rad = FRAC_PI_2;
        spec.joints[1].frequency_rad_s = 1.0;
        spec.joints[1].phase_rad = FRAC_PI_2; // sin(pi/2) = 1 at t = 0
        let pose = fk_pose(&spec, 0.0).unwrap();
        assert!((pose.joint(1)[0]).abs() < 1e-9);
        assert!((pose.joint(1)[1] - 100.0).abs() < 1e-9);
        assert!((pose.joint(2)[0]).abs() < 1e-9);
        assert!((pose.joint(2)[1] - 200.0).abs() < 1e-9);
    }

    /// Catmull-Rom interpolation of 1 kHz samples as an independent oracle
    /// for the continuous-time pose.
    #[test]
    fn fk_matches_dense_sampling_oracle() {
        let family = SpecFamily {
            m_joints: 5,
            ..SpecFamily::default()
        };
        let ds = generate_dataset(&family, 3, 99).unwrap();
        let spec = ds.train[0].spec.as_ref().unwrap();

        let h = 1e-3; // 1 kHz
        let n = (spec.duration_sec / h) as usize;
        let dense: Vec<Pose> = (0..=n)
            .map(|i| fk_pose(spec, i as f64 * h).unwrap())
            .collect();

        let catmull = |p0: f64, p1: f64, p2: f64, p3: f64, u: f64| -> f64 {
            0.5 * ((2.0 * p1)
                + (-p0 + p2) * u
                + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u * u
                + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u * u * u)
        };

        for &t in &[0.0137, 0.2501, 0.77777, 1.0333] {
            let i = (t / h).floor() as usize;
            let u = t / h - i as f64;
            let exact = fk_pose(spec, t).unwrap();
            for j in 0..family.m_joints {
                for c in 0..3 {
                    let p0 = dense[i - 1].joint(j)[c];
                    let p1 = dense[i].joint(j)[c];
                    let p2 = dense[i + 1].joint(j)[c];
                    let p3 = dense[i + 2].joint(j)[c];
                    let interp = catmull(p0, p1, p2, p3, u);
                    let d = (exact.joint(j)[c] - interp).abs();
                    assert!(d <= 1e-3, "t={t} joint {j} coord {c}: {d}");
                }
            }
        }
    }

    #[test]
    fn generate_is_deterministic() {
        let family = SpecFamily::default();
        let a = generate_dataset(&family, 5, 7).unwrap();
        let b = generate_dataset(&family, 5, 7).unwrap();
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.sequence, y.sequence);
        }
        let c = generate_dataset(&family, 5, 8).unwrap();
        assert_ne!(a.train[0].sequence, c.train[0].sequence);
    }

    #[test]
    fn generated_dataset_shape() {
        let family = SpecFamily::default();
        let ds = generate_dataset(&family, 16, 7).unwrap();
        assert_eq!(ds.train.len(), 12);
        assert_eq!(ds.validation.len(), 2);
        assert_eq!(ds.test.len(), 2);
        for s in ds.train.iter().chain(&ds.validation).chain(&ds.test) {
            assert_eq!(s.sequence.m_joints(), 22);
            assert_eq!(s.sequence.frame_interval_sec(), 0.04);
        }
        assert!(generate_dataset(&family, 2, 7).is_err());
    }

    #[test]
    fn generated_frames_match_oracle_bit_exactly() {
        let family = SpecFamily {
            m_joints: 4,
            ..SpecFamily::default()
        };
        let ds = generate_dataset(&family, 3, 3).unwrap();
        let s = &ds.train[0];
        let spec = s.spec.as_ref().unwrap();
        for i in 0..s.sequence.len() {
            let oracle = fk_pose(spec, i as f64 * spec.frame_interval_sec).unwrap();
            for j in 0..4 {
                for c in 0..3 {
                    assert_eq!(
                        s.sequence.pose(i).joint(j)[c].to_bits(),
                        oracle.joint(j)[c].to_bits()
                    );
                }
            }
        }
    }

    #[test]
    fn bone_lengths_are_preserved_in_generated_poses() {
        let family = SpecFamily::default();
        let ds = generate_dataset(&family, 3, 11).unwrap();
        let s = &ds.train[0];
        let skel = &s.spec.as_ref().unwrap().skeleton;
        for pose in s.sequence.poses() {
            for j in 0..skel.m_joints() {
                let p = skel.parent()[j];
                if p == j {
                    continue;
                }
                let a = pose.joint(j);
                let b = pose.joint(p);
                let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2))
                    .sqrt();
                assert!(
                    (d - skel.bone_length_mm()[j]).abs() < 1e-9,
                    "joint {j}: {d} vs {}",
                    skel.bone_length_mm()[j]
                );
            }
        }
    }

    #[test]
    fn csv_minimal_two_row_file() {
        let text = "# m_joints=1 frame_interval_sec=0.04\n0.0,1.0,2.0,3.0\n0.04,4.0,5.0,6.0\n";
        let seq = sequence_from_csv("mini.csv", text).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.m_joints(), 1);
        assert_eq!(seq.pose(1).joint(0), [4.0, 5.0, 6.0]);
    }

    #[test]
    fn csv_ragged_row_names_the_line() {
        let text =
            "# m_joints=1 frame_interval_sec=0.04\n0.0,1.0,2.0,3.0\n0.04,4.0,5.0,6.0,7.0,8.0\n";
        match sequence_from_csv("bad.csv", text) {
            Err(Error::CsvParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected CsvParse, got {other:?}"),
        }
    }

    #[test]
    fn csv_non_monotone_time_is_rejected() {
        let text = "# m_joints=1 frame_interval_sec=0.04\n0.04,1.0,2.0,3.0\n0.0,4.0,5.0,6.0\n";
        match sequence_from_csv("bad.csv", text) {
            Err(Error::CsvParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected CsvParse, got {other:?}"),
        }
    }

    #[test]
    fn csv_non_finite_is_rejected() {
        let text = "# m_joints=1 frame_interval_sec=0.04\n0.0,1.0,inf,3.0\n";
        assert!(matches!(
            sequence_from_csv("bad.csv", text),
            Err(Error::CsvParse { line: 2, .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let family = SpecFamily {
            m_joints: 3,
            ..SpecFamily::default()
        };
        let ds = generate_dataset(&family, 3, 21).unwrap();
        let seq = &ds.train[0].sequence;
        let text = sequence_to_csv(seq);
        let back = sequence_from_csv("rt.csv", &text).unwrap();
        assert_eq!(back.len(), seq.len());
        for i in 0..seq.len() {
            for j in 0..3 {
                for c in 0..3 {
                    assert_eq!(
                        back.pose(i).joint(j)[c].to_bits(),
                        seq.pose(i).joint(j)[c].to_bits()
                    );
                }
            }
        }
        assert_eq!(
            back.frame_interval_sec().to_bits(),
            seq.frame_interval_sec().to_bits()
        );
    }

    #[test]
    fn dataset_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let family = SpecFamily {
            m_joints: 3,
            ..SpecFamily::default()
        };
        let ds = generate_dataset(&family, 4, 5).unwrap();
        save_dataset_dir(dir.path(), &ds).unwrap();
        let back = load_dataset_dir(dir.path()).unwrap();
        assert_eq!(back.train.len(), ds.train.len());
        assert_eq!(back.validation.len(), ds.validation.len());
        assert_eq!(back.test.len(), ds.test.len());
        assert_eq!(back.train[0].sequence, ds.train[0].sequence);
        assert!(back.train[0].spec.is_none());
    }

    proptest! {
        #[test]
        fn exp_map_preserves_norm_and_fixes_axis(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
            px in -10.0f64..10.0, py in -10.0f64..10.0, pz in -10.0f64..10.0,
            scale in 0.0f64..3.0,
        ) {
            let axis = [ax * scale, ay * scale, az * scale];
            let p = [px, py, pz];
            let r = exp_map_rotate(axis, p);
            prop_assert!((norm3(r) - norm3(p)).abs() < 1e-9);
            // The axis itself is fixed by the rotation.
            let fixed = exp_map_rotate(axis, axis);
            for c in 0..3 {
                prop_assert!((fixed[c] - axis[c]).abs() < 1e-9);
            }
        }
    }
}
