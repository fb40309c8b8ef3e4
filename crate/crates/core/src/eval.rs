//! Forecast metrics and head/motion alignment statistics.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::ForecastResult;
use crate::types::{angle_from_vislet, angular_distance, movement_angle, HeadAngle, PedestrianTrack, Position, Sample, Scene};

/// Speed below which a pedestrian is considered essentially still, m/s.
pub const SLOW_SPEED: f64 = 0.45;

/// Upper edges of the speed bins of [`MetricReport::velocity_bins`], m/s.
pub const SPEED_BIN_EDGES: [f64; 4] = [SLOW_SPEED, 0.9, 1.35, 1.8];

struct GtIndex<'a> {
    by_ped: HashMap<i64, Vec<&'a PedestrianTrack>>,
    step: i64,
}

impl<'a> GtIndex<'a> {
    fn new(scene: &'a Scene) -> Self {
        let mut by_ped: HashMap<i64, Vec<&PedestrianTrack>> = HashMap::new();
        for t in &scene.tracks {
            by_ped.entry(t.ped_id).or_default().push(t);
        }
        Self {
            by_ped,
            step: scene.frame_step.max(1),
        }
    }

    fn sample(&self, ped_id: i64, frame: i64) -> Result<&'a Sample> {
        self.by_ped
            .get(&ped_id)
            .and_then(|tracks| tracks.iter().find_map(|t| t.sample_at(frame, self.step)))
            .ok_or_else(|| Error::Alignment(format!("no ground truth for pedestrian {ped_id} at frame {frame}")))
    }
}

/// Per-point displacement errors of every forecast pedestrian.
fn displacement_errors(pred: &ForecastResult, gt: &GtIndex) -> Result<Vec<Vec<f64>>> {
    pred.peds
        .iter()
        .map(|p| {
            if p.frames.len() != p.positions.len() {
                return Err(Error::Alignment(format!("pedestrian {}: frames and positions differ in length", p.ped_id)));
            }
            p.frames
                .iter()
                .zip(&p.positions)
                .map(|(&f, x)| Ok(gt.sample(p.ped_id, f)?.position.distance(x)))
                .collect()
        })
        .collect()
}

/// `(MAD, FAD)`: MAD averages each pedestrian's mean error uniformly over
/// pedestrians, FAD averages the final-step errors.
pub fn mad_fad(pred: &ForecastResult, gt: &Scene) -> Result<(f64, f64)> {
    let errs = displacement_errors(pred, &GtIndex::new(gt))?;
    let errs: Vec<&Vec<f64>> = errs.iter().filter(|e| !e.is_empty()).collect();
    if errs.is_empty() {
        return Err(Error::EmptyReport("forecast has no predicted points".into()));
    }
    let n = errs.len() as f64;
    let mad = errs.iter().map(|e| mean(e)).sum::<f64>() / n;
    let fad = errs.iter().map(|e| *e.last().expect("non-empty")).sum::<f64>() / n;
    Ok((mad, fad))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean wrapped absolute difference in degrees, each term at most 180°.
pub fn angular_error(pred: &[HeadAngle], gt: &[HeadAngle]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension {
            what: "angle sequences",
            expected: gt.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(a, b)| angular_distance(a.radians(), b.radians()).to_degrees().min(180.0))
        .sum();
    Ok(total / pred.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PedMetrics {
    pub ped_id: i64,
    pub start_frame: i64,
    pub mad: f64,
    pub fad: f64,
    pub angular_error_deg: Option<f64>,
    /// Ground-truth mean speed over the predicted samples, m/s.
    pub mean_speed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mad: f64,
    pub fad: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub windows: usize,
    /// Mean over pedestrians of their mean displacement error, meters.
    pub mad: f64,
    /// Mean over all predicted points, meters.
    pub mad_per_point: f64,
    pub fad: f64,
    /// Mean angular error in degrees, when head poses are forecast.
    pub mean_angular_error: Option<f64>,
    pub peds: Vec<PedMetrics>,
    pub velocity_bins: Vec<SpeedBin>,
}

/// Scores a set of forecasts (typically one per window) against `gt`.
pub fn evaluate(forecasts: &[ForecastResult], gt: &Scene) -> Result<MetricReport> {
    let index = GtIndex::new(gt);
    let mut peds = Vec::new();
    let (mut point_sum, mut point_n) = (0.0, 0usize);
    let (mut ang_sum, mut ang_n) = (0.0, 0usize);
    for f in forecasts {
        let errs = displacement_errors(f, &index)?;
        for (p, e) in f.peds.iter().zip(errs) {
            if e.is_empty() {
                continue;
            }
            point_sum += e.iter().sum::<f64>();
            point_n += e.len();
            let angular_error_deg = match p.head_angles() {
                Some(pred) => {
                    let truth: Option<Vec<HeadAngle>> = p
                        .frames
                        .iter()
                        .map(|&fr| index.sample(p.ped_id, fr).map(|s| s.head_angle()))
                        .collect::<Result<_>>()?;
                    match truth {
                        Some(truth) => {
                            let v = angular_error(&pred, &truth)?;
                            ang_sum += v * pred.len() as f64;
                            ang_n += pred.len();
                            Some(v)
                        }
                        None => None,
                    }
                }
                None => None,
            };
            let first = p.frames[0];
            let prev = index.sample(p.ped_id, first - index.step).map(|s| s.position);
            let truth: Vec<Position> = p
                .frames
                .iter()
                .map(|&fr| index.sample(p.ped_id, fr).map(|s| s.position))
                .collect::<Result<_>>()?;
            let mut path = Vec::with_capacity(truth.len() + 1);
            if let Ok(x) = prev {
                path.push(x);
            }
            path.extend(truth);
            let dist: f64 = path.windows(2).map(|w| w[0].distance(&w[1])).sum();
            let mean_speed = if path.len() > 1 {
                dist / ((path.len() - 1) as f64 * gt.frame_period)
            } else {
                0.0
            };
            peds.push(PedMetrics {
                ped_id: p.ped_id,
                start_frame: first,
                mad: mean(&e),
                fad: *e.last().expect("non-empty"),
                angular_error_deg,
                mean_speed,
            });
        }
    }
    if peds.is_empty() {
        return Err(Error::EmptyReport("no forecast pedestrians to score".into()));
    }
    let n = peds.len() as f64;
    let mut velocity_bins = Vec::new();
    let mut lower = 0.0;
    for upper in SPEED_BIN_EDGES.into_iter().chain([f64::INFINITY]) {
        let members: Vec<&PedMetrics> = peds.iter().filter(|p| p.mean_speed >= lower && p.mean_speed < upper).collect();
        if !members.is_empty() {
            let k = members.len() as f64;
            velocity_bins.push(SpeedBin {
                lower,
                upper,
                count: members.len(),
                mad: members.iter().map(|p| p.mad).sum::<f64>() / k,
                fad: members.iter().map(|p| p.fad).sum::<f64>() / k,
            });
        }
        lower = upper;
    }
    Ok(MetricReport {
        windows: forecasts.len(),
        mad: peds.iter().map(|p| p.mad).sum::<f64>() / n,
        mad_per_point: point_sum / point_n as f64,
        fad: peds.iter().map(|p| p.fad).sum::<f64>() / n,
        mean_angular_error: (ang_n > 0).then(|| ang_sum / ang_n as f64),
        peds,
        velocity_bins,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"))
}

impl MetricReport {
    /// Summary table followed by the speed-binned breakdown.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "metric\tvalue");
        let _ = writeln!(s, "windows\t{}", self.windows);
        let _ = writeln!(s, "pedestrians\t{}", self.peds.len());
        let _ = writeln!(s, "mad_m\t{:.6}", self.mad);
        let _ = writeln!(s, "mad_per_point_m\t{:.6}", self.mad_per_point);
        let _ = writeln!(s, "fad_m\t{:.6}", self.fad);
        let _ = writeln!(s, "mean_angular_error_deg\t{}", opt(self.mean_angular_error));
        let _ = writeln!(s);
        let _ = writeln!(s, "speed_from\tspeed_to\tcount\tmad_m\tfad_m");
        for b in &self.velocity_bins {
            let _ = writeln!(s, "{:.2}\t{:.2}\t{}\t{:.6}\t{:.6}", b.lower, b.upper, b.count, b.mad, b.fad);
        }
        s
    }

    /// One row per forecast pedestrian and window.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("ped_id,start_frame,mad_m,fad_m,angular_error_deg,mean_speed_mps\n");
        for p in &self.peds {
            let ang = p.angular_error_deg.map_or(String::new(), |v| format!("{v:.6}"));
            let _ = writeln!(s, "{},{},{:.6},{:.6},{},{:.6}", p.ped_id, p.start_frame, p.mad, p.fad, ang, p.mean_speed);
        }
        s
    }
}

fn circular_mean(a: &[f64]) -> f64 {
    let (s, c) = a.iter().fold((0.0, 0.0), |(s, c), x| (s + x.sin(), c + x.cos()));
    s.atan2(c)
}

/// Circular correlation of two angle samples (radians):
/// `Σ sin(α-ᾱ) sin(β-β̄) / sqrt(Σ sin²(α-ᾱ) Σ sin²(β-β̄))` with circular
/// means `ᾱ`, `β̄`. `None` when either sample has no spread around its mean.
pub fn circular_correlation(alpha: &[f64], beta: &[f64]) -> Result<Option<f64>> {
    if alpha.len() != beta.len() {
        return Err(Error::Dimension {
            what: "circular correlation samples",
            expected: alpha.len(),
            got: beta.len(),
        });
    }
    if alpha.len() < 2 {
        return Ok(None);
    }
    let (ma, mb) = (circular_mean(alpha), circular_mean(beta));
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (a, b) in alpha.iter().zip(beta) {
        let (sa, sb) = ((a - ma).sin(), (b - mb).sin());
        num += sa * sb;
        da += sa * sa;
        db += sb * sb;
    }
    let floor = 1e-12 * alpha.len() as f64;
    if da <= floor || db <= floor {
        return Ok(None);
    }
    Ok(Some((num / (da * db).sqrt()).clamp(-1.0, 1.0)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinCorrelation {
    /// Velocity `τ` at the bin centre, m/s.
    pub center: f64,
    pub count: usize,
    pub correlation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackDiscrepancy {
    pub ped_id: i64,
    pub segment: u32,
    /// Mean wrapped `|α - β|`, degrees.
    pub mean_omega_deg: f64,
    pub mean_speed: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationReport {
    pub velocity_threshold: f64,
    pub bin_half_width_frac: f64,
    /// Frames kept after the velocity filter.
    pub samples: usize,
    /// Overall circular correlation of `α` and `β`; `None` when undefined.
    pub overall: Option<f64>,
    /// Velocity range `R` of the kept frames.
    pub velocity_range: f64,
    pub bins: Vec<BinCorrelation>,
    /// Ordered by increasing `mean_omega_deg`.
    pub tracks: Vec<TrackDiscrepancy>,
    /// Track speeds in the same order, smoothed by a moving average.
    pub smoothed_speed: Vec<f64>,
}

/// Moving-average window applied to the ordered per-track speeds.
pub const SPEED_SMOOTHING: usize = 10;

/// Centred moving average with the window truncated at the ends.
pub fn moving_average(v: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let back = w / 2;
    let fwd = (w - 1) / 2;
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(back);
            let hi = (i + fwd + 1).min(v.len());
            mean(&v[lo..hi])
        })
        .collect()
}

/// Head/motion alignment statistics. For every pair of consecutive samples
/// the head angle `α_t`, the motion angle `β_t` and their discrepancy `ω_t`
/// are computed; frames slower than `velocity_threshold` are dropped.
/// Velocity bins have half-width `bin_half_width_frac · R` and tile `R`;
/// bins with fewer than 3 samples, or in which an angle sample has no
/// spread, are omitted.
pub fn motivation_analysis(scene: &Scene, velocity_threshold: f64, bin_half_width_frac: f64) -> Result<CorrelationReport> {
    if !(velocity_threshold >= 0.0) || !(bin_half_width_frac > 0.0 && bin_half_width_frac <= 0.5) {
        return Err(Error::InvalidInput(
            "velocity threshold must be non-negative and the bin half-width in (0, 0.5]".into(),
        ));
    }
    if !scene.has_vislets() {
        return Err(Error::Validation("motivation analysis needs head poses".into()));
    }
    let dt = scene.frame_period;
    let (mut alpha, mut beta, mut speed) = (Vec::new(), Vec::new(), Vec::new());
    let mut tracks = Vec::new();
    for t in &scene.tracks {
        let (mut omega_sum, mut speed_sum, mut k) = (0.0, 0.0, 0usize);
        for w in t.samples.windows(2) {
            let v = w[0].position.distance(&w[1].position) / dt;
            if v < velocity_threshold {
                continue;
            }
            let Ok(b) = movement_angle(w[0].position, w[1].position) else {
                continue;
            };
            let a = angle_from_vislet(w[0].vislet.as_ref().expect("checked above"))?;
            let omega = angular_distance(a.radians(), b.radians());
            alpha.push(a.radians());
            beta.push(b.radians());
            speed.push(v);
            omega_sum += omega;
            speed_sum += v;
            k += 1;
        }
        if k > 0 {
            tracks.push(TrackDiscrepancy {
                ped_id: t.ped_id,
                segment: t.segment,
                mean_omega_deg: (omega_sum / k as f64).to_degrees(),
                mean_speed: speed_sum / k as f64,
                samples: k,
            });
        }
    }
    if alpha.is_empty() {
        return Err(Error::EmptyReport(format!("no frame reaches {velocity_threshold} m/s")));
    }
    tracks.sort_by(|a, b| a.mean_omega_deg.total_cmp(&b.mean_omega_deg));
    let smoothed_speed = moving_average(&tracks.iter().map(|t| t.mean_speed).collect::<Vec<_>>(), SPEED_SMOOTHING);

    let lo = speed.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = speed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let half = bin_half_width_frac * range;
    let mut bins = Vec::new();
    let n_bins = if range > 0.0 { (1.0 / (2.0 * bin_half_width_frac)).ceil() as usize } else { 1 };
    for k in 0..n_bins {
        let center = lo + (2 * k + 1) as f64 * half;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for i in 0..speed.len() {
            if (speed[i] - center).abs() <= half {
                a.push(alpha[i]);
                b.push(beta[i]);
            }
        }
        if a.len() < 3 {
            continue;
        }
        if let Some(r) = circular_correlation(&a, &b)? {
            bins.push(BinCorrelation {
                center,
                count: a.len(),
                correlation: r,
            });
        }
    }
    Ok(CorrelationReport {
        velocity_threshold,
        bin_half_width_frac,
        samples: alpha.len(),
        overall: circular_correlation(&alpha, &beta)?,
        velocity_range: range,
        bins,
        tracks,
        smoothed_speed,
    })
}

/// Circular correlation between the head angle at `t` and the motion angle
/// at `t + lag`, over pairs whose motion step reaches `velocity_threshold`.
/// A head that anticipates turns by `k` frames peaks at `lag = k`.
pub fn lagged_correlation(scene: &Scene, velocity_threshold: f64, lag: usize) -> Result<Option<f64>> {
    if !scene.has_vislets() {
        return Err(Error::Validation("lagged correlation needs head poses".into()));
    }
    let (mut alpha, mut beta) = (Vec::new(), Vec::new());
    for t in &scene.tracks {
        let s = &t.samples;
        for k in 0..s.len().saturating_sub(lag + 1) {
            let (a, b) = (s[k + lag].position, s[k + lag + 1].position);
            if a.distance(&b) / scene.frame_period < velocity_threshold {
                continue;
            }
            let Ok(m) = movement_angle(a, b) else {
                continue;
            };
            alpha.push(angle_from_vislet(s[k].vislet.as_ref().expect("checked above"))?.radians());
            beta.push(m.radians());
        }
    }
    if alpha.is_empty() {
        return Ok(None);
    }
    circular_correlation(&alpha, &beta)
}

/// `lag, correlation` rows for lags `0..=max_lag`.
pub fn lag_scan_text(scene: &Scene, velocity_threshold: f64, max_lag: usize) -> Result<String> {
    let mut s = String::from("lag_frames\tcorrelation\n");
    for lag in 0..=max_lag {
        let _ = writeln!(s, "{lag}\t{}", opt(lagged_correlation(scene, velocity_threshold, lag)?));
    }
    Ok(s)
}

impl CorrelationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "metric\tvalue");
        let _ = writeln!(s, "velocity_threshold_mps\t{}", self.velocity_threshold);
        let _ = writeln!(s, "samples\t{}", self.samples);
        let _ = writeln!(s, "overall_correlation\t{}", opt(self.overall));
        let _ = writeln!(s, "velocity_range_mps\t{:.6}", self.velocity_range);
        let _ = writeln!(s);
        let _ = writeln!(s, "velocity_mps\tcount\tcorrelation");
        for b in &self.bins {
            let _ = writeln!(s, "{:.4}\t{}\t{:.6}", b.center, b.count, b.correlation);
        }
        let _ = writeln!(s);
        s.push_str(&self.tracks_csv().replace(',', "\t"));
        s
    }

    /// Per-velocity-bin correlations.
    pub fn bins_csv(&self) -> String {
        let mut s = String::from("velocity_mps,count,correlation\n");
        for b in &self.bins {
            let _ = writeln!(s, "{:.6},{},{:.6}", b.center, b.count, b.correlation);
        }
        s
    }

    /// Per-track discrepancy in increasing order, with the smoothed speed.
    pub fn tracks_csv(&self) -> String {
        let mut s = String::from("rank,ped_id,segment,mean_omega_deg,mean_speed_mps,smoothed_speed_mps,samples\n");
        for (i, (t, v)) in self.tracks.iter().zip(&self.smoothed_speed).enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6},{}",
                i + 1,
                t.ped_id,
                t.segment,
                t.mean_omega_deg,
                t.mean_speed,
                v,
                t.samples
            );
        }
        s
    }
}
