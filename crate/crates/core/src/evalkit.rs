//! Evaluation metrics: perspective-pixel precision/recall/F1, the boundary
//! hit rule, distance error distributions and closed-loop trajectory quality.

use crate::cogmap::DrivingIntention;
use crate::planner::ManeuverPhase;
use crate::simworld::{Road, Trajectory, TRAJECTORY_COLUMNS};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("mask dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("input is empty")]
    EmptyInput,
    #[error("trajectory csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// Row-major binary image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn pixels(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_fn: usize,
}

impl PixelMetrics {
    /// Ratios from raw counts. A ratio whose denominator is zero is 1 when
    /// nothing was missed on the other side and 0 otherwise; with no
    /// positives at all every ratio is 1.
    pub fn from_counts(n_tp: usize, n_fp: usize, n_fn: usize) -> Self {
        let ratio = |num: usize, den: usize, other_err: usize| {
            if den > 0 {
                num as f64 / den as f64
            } else if other_err == 0 {
                1.0
            } else {
                0.0
            }
        };
        let f1_den = 2 * n_tp + n_fp + n_fn;
        Self {
            precision: ratio(n_tp, n_tp + n_fp, n_fn),
            recall: ratio(n_tp, n_tp + n_fn, n_fp),
            f1: if f1_den > 0 {
                2.0 * n_tp as f64 / f1_den as f64
            } else {
                1.0
            },
            n_tp,
            n_fp,
            n_fn,
        }
    }
}

pub fn pixel_metrics(pred: &BitMask, gt: &BitMask) -> Result<PixelMetrics, EvalError> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(EvalError::DimensionMismatch(
            (pred.width, pred.height),
            (gt.width, gt.height),
        ));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in pred.bits.iter().zip(&gt.bits) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(PixelMetrics::from_counts(tp, fp, fn_))
}

/// Default horizontal tolerance for a boundary hit (px).
pub const BOUNDARY_THRESHOLD_PX: f64 = 10.0;

/// Boundary lines given as `(x at top row, x at bottom row)`. A hit when both
/// horizontal deviations are within `threshold`.
pub fn boundary_hit(pred: (f64, f64), gt: (f64, f64), threshold: f64) -> bool {
    (pred.0 - gt.0).abs().max((pred.1 - gt.1).abs()) <= threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Inclusive lower edge.
    pub lower: f64,
    /// Exclusive upper edge.
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub histogram: Vec<HistogramBin>,
}

pub const DEFAULT_BIN_WIDTH: f64 = 0.5;

/// Statistics of `predicted - true` over `(predicted, true)` pairs.
pub fn distance_error_stats(pairs: &[(f64, f64)], bin_width: f64) -> Result<ErrorStats, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    assert!(bin_width > 0.0, "bin width must be positive");
    let errors: Vec<f64> = pairs.iter().map(|(p, t)| p - t).collect();
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for e in &errors {
        *bins.entry((e / bin_width).floor() as i64).or_default() += 1;
    }
    Ok(ErrorStats {
        count: errors.len(),
        mean,
        std: var.sqrt(),
        histogram: bins
            .into_iter()
            .map(|(k, count)| HistogramBin {
                lower: k as f64 * bin_width,
                upper: (k + 1) as f64 * bin_width,
                count,
            })
            .collect(),
    })
}

/// One trajectory row, as recorded in the CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub steering: f64,
    pub accel: f64,
    pub intention: DrivingIntention,
    pub phase: ManeuverPhase,
    pub d_o: f64,
    pub o_c: f64,
    pub o_l: f64,
    pub o_r: f64,
    /// `;`-separated event labels.
    pub event: String,
}

impl TrajectorySample {
    fn has_event(&self, prefix: &str) -> bool {
        self.event.split(';').any(|e| e.starts_with(prefix))
    }
}

pub fn samples(traj: &Trajectory) -> Vec<TrajectorySample> {
    traj.ticks
        .iter()
        .map(|t| {
            let v = &t.world.vehicle;
            TrajectorySample {
                t: t.t,
                x: v.x,
                y: v.y,
                psi: v.psi,
                v: v.v,
                steering: t.steering,
                accel: t.accel,
                intention: t.intention,
                phase: t.phase,
                d_o: t.d_o,
                o_c: t.measurements.o_c,
                o_l: t.measurements.o_l,
                o_r: t.measurements.o_r,
                event: t.event_label(),
            }
        })
        .collect()
}

pub fn parse_trajectory_csv(text: &str) -> Result<Vec<TrajectorySample>, EvalError> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or("");
    if header != TRAJECTORY_COLUMNS.join(",") {
        return Err(EvalError::Csv {
            line: 1,
            msg: format!("unexpected header `{header}`"),
        });
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let err = |msg: String| EvalError::Csv { line: i + 1, msg };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != TRAJECTORY_COLUMNS.len() {
                return Err(err(format!(
                    "expected {} fields, found {}",
                    TRAJECTORY_COLUMNS.len(),
                    f.len()
                )));
            }
            let num = |k: usize| {
                f[k].parse::<f64>()
                    .map_err(|_| err(format!("column {}: `{}` is not a number", TRAJECTORY_COLUMNS[k], f[k])))
            };
            Ok(TrajectorySample {
                t: num(0)?,
                x: num(1)?,
                y: num(2)?,
                psi: num(3)?,
                v: num(4)?,
                steering: num(5)?,
                accel: num(6)?,
                intention: f[7].parse().map_err(err)?,
                phase: ManeuverPhase::parse(f[8]).ok_or_else(|| err(format!("unknown phase `{}`", f[8])))?,
                d_o: num(9)?,
                o_c: num(10)?,
                o_l: num(11)?,
                o_r: num(12)?,
                event: f[13].to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    /// RMS of the lateral offset from the active target centerline (m).
    pub rms_center_offset: f64,
    /// Same, restricted to lanekeep ticks (m).
    pub rms_lanekeep_offset: f64,
    /// Largest `|d²y/dt²|` by central second differences (m/s²).
    pub max_abs_lat_accel: f64,
    /// `|offset|` at the last sample (m).
    pub settle_offset: f64,
    /// Longest time from an intention flip to the planner completing that
    /// change (s); `0` without completed changes.
    pub change_duration: f64,
    pub changes_completed: usize,
    pub collided: bool,
}

/// Lane the vehicle steers toward on each sample: its current lane in
/// lanekeep, and during a change the neighbor chosen when the change began.
pub fn target_lanes(samples: &[TrajectorySample], road: &Road) -> Vec<Option<usize>> {
    let mut target = None;
    let mut prev_phase = ManeuverPhase::Lanekeep;
    samples
        .iter()
        .map(|s| {
            let lane = road.lane_of(s.y);
            if s.phase == ManeuverPhase::Lanekeep {
                target = lane.or(target);
            } else if prev_phase == ManeuverPhase::Lanekeep {
                target = match (lane, s.intention) {
                    (Some(l), DrivingIntention::ChangeToLeft) => l.checked_sub(1),
                    (Some(l), DrivingIntention::ChangeToRight) => Some(l + 1).filter(|&r| r < road.num_lanes),
                    (l, _) => l,
                }
                .or(target);
            }
            prev_phase = s.phase;
            target
        })
        .collect()
}

pub fn trajectory_metrics(samples: &[TrajectorySample], road: &Road) -> Result<TrajectoryMetrics, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let targets = target_lanes(samples, road);
    let offsets: Vec<f64> = samples
        .iter()
        .zip(&targets)
        .map(|(s, t)| t.map_or(0.0, |l| s.y - road.lane_center(l)))
        .collect();
    let rms = |it: &mut dyn Iterator<Item = f64>| {
        let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
        if n == 0 {
            0.0
        } else {
            (sum / n as f64).sqrt()
        }
    };
    let rms_center_offset = rms(&mut offsets.iter().copied());
    let rms_lanekeep_offset = rms(&mut samples
        .iter()
        .zip(&offsets)
        .filter(|(s, _)| s.phase == ManeuverPhase::Lanekeep)
        .map(|(_, o)| *o));

    let max_abs_lat_accel = samples
        .windows(3)
        .map(|w| {
            let h = (w[2].t - w[0].t) / 2.0;
            ((w[2].y - 2.0 * w[1].y + w[0].y) / (h * h)).abs()
        })
        .fold(0.0, f64::max);

    let mut change_duration: f64 = 0.0;
    let mut changes_completed = 0;
    let mut flip_time = None;
    let mut prev = DrivingIntention::StayInLane;
    for s in samples {
        let changing = matches!(
            s.intention,
            DrivingIntention::ChangeToLeft | DrivingIntention::ChangeToRight
        );
        if changing && prev != s.intention && flip_time.is_none() {
            flip_time = Some(s.t);
        }
        if s.has_event("maneuver_completed") {
            changes_completed += 1;
            if let Some(t0) = flip_time.take() {
                change_duration = change_duration.max(s.t - t0);
            }
        }
        prev = s.intention;
    }

    Ok(TrajectoryMetrics {
        rms_center_offset,
        rms_lanekeep_offset,
        max_abs_lat_accel,
        settle_offset: offsets.last().map_or(0.0, |o| o.abs()),
        change_duration,
        changes_completed,
        collided: samples.iter().any(|s| s.has_event("collision")),
    })
}
