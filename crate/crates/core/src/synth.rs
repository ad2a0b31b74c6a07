//! Synthetic indoor radio environments and fingerprint datasets.
//!
//! Received power follows a log-distance path-loss law with a spatially
//! correlated shadowing field per AP, a per-(AP, epoch) drift offset that
//! models the time between survey and test, small per-scan noise and
//! random reading dropout.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    spacing_stats_of, Dataset, DatasetKind, Point, Reading, RssSample, RSS_MAX, RSS_MIN,
};
use crate::error::{Error, Result};

/// Reference distance of the path-loss law, metres.
pub const D0: f64 = 1.0;
/// Random Fourier components per shadowing field.
const SHADOW_COMPONENTS: usize = 32;
const SECONDS_PER_DAY: f64 = 86_400.0;
const MAX_LAYOUT_ATTEMPTS: u64 = 500;

/// How train positions are laid out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Layout {
    /// Positions along a square corridor loop centred in the bounds, with
    /// random gaps drawn so that nearest-neighbour spacing hits a target
    /// minimum and mean.
    Loop {
        min_spacing_m: f64,
        mean_spacing_m: f64,
    },
    /// Regular `rows x cols` grid with the given pitch, centred in the bounds.
    Grid {
        rows: usize,
        cols: usize,
        pitch_m: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvironmentSpec {
    pub width_m: f64,
    pub height_m: f64,
    pub n_aps: usize,
    /// Ignored by the grid layout.
    pub n_positions: usize,
    pub layout: Layout,
    /// Relative tolerance on the loop's (min, mean) spacing.
    pub spacing_tolerance: f64,
    pub n_unknown: usize,
    /// Unknown positions sit up to this far off the corridor centre line.
    pub unknown_jitter_m: f64,
    /// Minimum distance from an unknown position to any train position.
    pub unknown_clearance_m: f64,
    pub tx_power_min_dbm: f64,
    pub tx_power_max_dbm: f64,
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        EnvironmentSpec {
            width_m: 60.0,
            height_m: 60.0,
            n_aps: 113,
            n_positions: 30,
            layout: Layout::Loop {
                min_spacing_m: 3.0,
                mean_spacing_m: 4.46,
            },
            spacing_tolerance: 0.15,
            n_unknown: 67,
            unknown_jitter_m: 1.0,
            unknown_clearance_m: 1.0,
            tx_power_min_dbm: -45.0,
            tx_power_max_dbm: -35.0,
        }
    }
}

impl EnvironmentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.width_m > 0.0 && self.height_m > 0.0) {
            return bad("bounds must be positive");
        }
        if self.n_aps == 0 {
            return bad("need at least one AP");
        }
        if self.tx_power_min_dbm > self.tx_power_max_dbm {
            return bad("tx power range is reversed");
        }
        if self.spacing_tolerance.is_nan()
            || self.spacing_tolerance < 0.0
            || self.unknown_jitter_m < 0.0
        {
            return bad("tolerances must be non-negative");
        }
        match self.layout {
            Layout::Loop {
                min_spacing_m,
                mean_spacing_m,
            } => {
                if self.n_positions < 3 {
                    return bad("a loop needs at least 3 positions");
                }
                if !(min_spacing_m > 0.0 && mean_spacing_m >= min_spacing_m) {
                    return bad("need 0 < min spacing <= mean spacing");
                }
            }
            Layout::Grid {
                rows,
                cols,
                pitch_m,
            } => {
                if rows * cols < 2 || pitch_m.is_nan() || pitch_m <= 0.0 {
                    return bad("a grid needs at least 2 cells and a positive pitch");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioModel {
    pub path_loss_exponent: f64,
    pub shadowing_std_db: f64,
    /// Correlation length of the shadowing field, metres.
    pub shadowing_corr_m: f64,
    pub drift_week_std_db: f64,
    pub drift_months_std_db: f64,
    /// Independent noise on every reading.
    pub scan_noise_std_db: f64,
    pub dropout: f64,
}

impl Default for RadioModel {
    fn default() -> Self {
        RadioModel {
            path_loss_exponent: 3.0,
            shadowing_std_db: 4.0,
            shadowing_corr_m: 3.0,
            drift_week_std_db: 2.0,
            drift_months_std_db: 3.0,
            scan_noise_std_db: 1.0,
            dropout: 0.05,
        }
    }
}

impl RadioModel {
    /// Pure path loss: no shadowing, drift, noise or dropout.
    pub fn noiseless() -> Self {
        RadioModel {
            shadowing_std_db: 0.0,
            drift_week_std_db: 0.0,
            drift_months_std_db: 0.0,
            scan_noise_std_db: 0.0,
            dropout: 0.0,
            ..RadioModel::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.path_loss_exponent > 0.0
            && self.shadowing_std_db >= 0.0
            && self.shadowing_corr_m > 0.0
            && self.drift_week_std_db >= 0.0
            && self.drift_months_std_db >= 0.0
            && self.scan_noise_std_db >= 0.0
            && (0.0..=1.0).contains(&self.dropout);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid radio model parameters".into()))
        }
    }

    fn drift_std(&self, epoch: Epoch) -> f64 {
        match epoch {
            Epoch::Survey => 0.0,
            Epoch::OneWeek => self.drift_week_std_db,
            Epoch::TwoMonths => self.drift_months_std_db,
        }
    }
}

/// When a scan was taken relative to the survey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Epoch {
    Survey,
    OneWeek,
    TwoMonths,
}

impl Epoch {
    pub fn days(self) -> f64 {
        match self {
            Epoch::Survey => 0.0,
            Epoch::OneWeek => 7.0,
            Epoch::TwoMonths => 60.0,
        }
    }

    fn stream(self) -> u64 {
        match self {
            Epoch::Survey => 10,
            Epoch::OneWeek => 11,
            Epoch::TwoMonths => 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
    /// Received power at one metre, dBm.
    pub tx_power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub seed: u64,
    pub width_m: f64,
    pub height_m: f64,
    pub aps: Vec<AccessPoint>,
    pub train_positions: Vec<Point>,
    pub unknown_positions: Vec<Point>,
    /// Closed walking path through the positions (first point repeated last).
    pub path: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Point>,
    pub speed_mps: f64,
    pub interval_s: f64,
    pub epoch: Epoch,
}

impl Trajectory {
    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| w[0].distance(&w[1]))
            .sum()
    }

    /// Scan locations at `interval_s` steps of walking time from the start.
    pub fn sample_points(&self) -> Result<Vec<Point>> {
        if self.waypoints.len() < 2 {
            return Err(Error::Config(
                "a trajectory needs at least 2 waypoints".into(),
            ));
        }
        if !(self.interval_s > 0.0 && self.speed_mps > 0.0) {
            return Err(Error::Config("speed and interval must be positive".into()));
        }
        let step = self.speed_mps * self.interval_s;
        let n = (self.length() / step + 1e-9).floor() as usize + 1;
        let mut out = Vec::with_capacity(n);
        let mut seg = 0;
        let mut seg_start = 0.0;
        for k in 0..n {
            let s = k as f64 * step;
            while seg + 1 < self.waypoints.len() - 1
                && s > seg_start + self.waypoints[seg].distance(&self.waypoints[seg + 1])
            {
                seg_start += self.waypoints[seg].distance(&self.waypoints[seg + 1]);
                seg += 1;
            }
            let (a, b) = (self.waypoints[seg], self.waypoints[seg + 1]);
            let len = a.distance(&b);
            let t = if len > 0.0 {
                ((s - seg_start) / len).min(1.0)
            } else {
                0.0
            };
            out.push(Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
        }
        Ok(out)
    }
}

/// Walk once around the environment's path at 1 m/s, one scan per second.
pub fn default_trajectory(env: &Environment) -> Trajectory {
    Trajectory {
        waypoints: env.path.clone(),
        speed_mps: 1.0,
        interval_s: 1.0,
        epoch: Epoch::TwoMonths,
    }
}

fn mac_id<R: Rng>(rng: &mut R) -> String {
    let b: [u8; 6] = rng.random();
    b.iter()
        .map(|v| format!("{v:02x}"))
        .collect::<Vec<_>>()
        .join(":")
}

/// Point at arc length `s` along a closed polyline.
fn along(path: &[Point], s: f64) -> (Point, Point) {
    let total: f64 = path.windows(2).map(|w| w[0].distance(&w[1])).sum();
    let mut s = s.rem_euclid(total);
    for w in path.windows(2) {
        let len = w[0].distance(&w[1]);
        if s <= len {
            let t = s / len;
            let dir = Point::new((w[1].x - w[0].x) / len, (w[1].y - w[0].y) / len);
            return (
                Point::new(
                    w[0].x + t * (w[1].x - w[0].x),
                    w[0].y + t * (w[1].y - w[0].y),
                ),
                dir,
            );
        }
        s -= len;
    }
    let n = path.len();
    (path[n - 1], Point::new(0.0, 0.0))
}

fn square_path(cx: f64, cy: f64, side: f64) -> Vec<Point> {
    let h = side / 2.0;
    vec![
        Point::new(cx - h, cy - h),
        Point::new(cx + h, cy - h),
        Point::new(cx + h, cy + h),
        Point::new(cx - h, cy + h),
        Point::new(cx - h, cy - h),
    ]
}

fn loop_layout<R: Rng>(
    spec: &EnvironmentSpec,
    min_gap: f64,
    mean_nn: f64,
    rng: &mut R,
) -> Result<(Vec<Point>, Vec<Point>)> {
    // With gaps ~ U[a, b] the nearest neighbour along the loop is the
    // smaller of two gaps, whose mean is a + (b - a) / 3.
    let hi = min_gap + 3.0 * (mean_nn - min_gap);
    let n = spec.n_positions;
    let gaps: Vec<f64> = (0..n).map(|_| rng.random_range(min_gap..=hi)).collect();
    let perimeter: f64 = gaps.iter().sum();
    let side = perimeter / 4.0;
    if side > spec.width_m || side > spec.height_m {
        return Err(Error::Infeasible(format!(
            "a loop of {perimeter:.1} m does not fit in {} x {} m",
            spec.width_m, spec.height_m
        )));
    }
    let path = square_path(spec.width_m / 2.0, spec.height_m / 2.0, side);
    let offset = rng.random_range(0.0..perimeter);
    let mut s = offset;
    let mut positions = Vec::with_capacity(n);
    for g in &gaps {
        positions.push(along(&path, s).0);
        s += g;
    }
    Ok((positions, path))
}

fn grid_layout(
    spec: &EnvironmentSpec,
    rows: usize,
    cols: usize,
    pitch: f64,
) -> Result<(Vec<Point>, Vec<Point>)> {
    let (w, h) = ((cols - 1) as f64 * pitch, (rows - 1) as f64 * pitch);
    if w > spec.width_m || h > spec.height_m {
        return Err(Error::Infeasible(format!(
            "a {rows} x {cols} grid at {pitch} m does not fit in {} x {} m",
            spec.width_m, spec.height_m
        )));
    }
    let (x0, y0) = ((spec.width_m - w) / 2.0, (spec.height_m - h) / 2.0);
    let mut positions = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            positions.push(Point::new(x0 + c as f64 * pitch, y0 + r as f64 * pitch));
        }
    }
    // serpentine walk through the rows
    let mut path = Vec::with_capacity(rows * cols + 1);
    for r in 0..rows {
        let row = &positions[r * cols..(r + 1) * cols];
        if r % 2 == 0 {
            path.extend_from_slice(row);
        } else {
            path.extend(row.iter().rev());
        }
    }
    path.push(path[0]);
    Ok((positions, path))
}

fn within(spec: &EnvironmentSpec, p: &Point) -> bool {
    (0.0..=spec.width_m).contains(&p.x) && (0.0..=spec.height_m).contains(&p.y)
}

fn unknown_positions<R: Rng>(
    spec: &EnvironmentSpec,
    train: &[Point],
    path: &[Point],
    rng: &mut R,
) -> Result<Vec<Point>> {
    let total: f64 = path.windows(2).map(|w| w[0].distance(&w[1])).sum();
    let mut out = Vec::with_capacity(spec.n_unknown);
    let mut tries = 0usize;
    while out.len() < spec.n_unknown {
        tries += 1;
        if tries > 1000 * spec.n_unknown.max(1) {
            return Err(Error::Infeasible(
                "cannot place unknown positions away from the train positions".into(),
            ));
        }
        let (p, dir) = along(path, rng.random_range(0.0..total));
        let j = if spec.unknown_jitter_m > 0.0 {
            rng.random_range(-spec.unknown_jitter_m..=spec.unknown_jitter_m)
        } else {
            0.0
        };
        let q = Point::new(p.x - dir.y * j, p.y + dir.x * j);
        if within(spec, &q)
            && train
                .iter()
                .all(|t| t.distance(&q) >= spec.unknown_clearance_m)
        {
            out.push(q);
        }
    }
    Ok(out)
}

/// Deterministic environment from a spec and seed.
pub fn generate_environment(spec: &EnvironmentSpec, seed: u64) -> Result<Environment> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = std::collections::HashSet::new();
    let mut aps = Vec::with_capacity(spec.n_aps);
    while aps.len() < spec.n_aps {
        let id = mac_id(&mut rng);
        let x = rng.random_range(0.0..=spec.width_m);
        let y = rng.random_range(0.0..=spec.height_m);
        let tx_power_dbm = rng.random_range(spec.tx_power_min_dbm..=spec.tx_power_max_dbm);
        if ids.insert(id.clone()) {
            aps.push(AccessPoint {
                id,
                x,
                y,
                tx_power_dbm,
            });
        }
    }

    let (train_positions, path) = match spec.layout {
        Layout::Grid {
            rows,
            cols,
            pitch_m,
        } => grid_layout(spec, rows, cols, pitch_m)?,
        Layout::Loop {
            min_spacing_m,
            mean_spacing_m,
        } => {
            let tol = spec.spacing_tolerance;
            let mut found = None;
            for attempt in 0..MAX_LAYOUT_ATTEMPTS {
                let mut lr = ChaCha8Rng::seed_from_u64(seed);
                lr.set_stream(100 + attempt);
                let (pos, path) = loop_layout(spec, min_spacing_m, mean_spacing_m, &mut lr)?;
                let st = spacing_stats_of(&pos)?;
                if (st.min_m - min_spacing_m).abs() <= tol * min_spacing_m
                    && (st.mean_m - mean_spacing_m).abs() <= tol * mean_spacing_m
                {
                    found = Some((pos, path));
                    break;
                }
            }
            found.ok_or_else(|| {
                Error::Infeasible("no layout met the spacing profile within tolerance".into())
            })?
        }
    };
    let mut ur = ChaCha8Rng::seed_from_u64(seed);
    ur.set_stream(2);
    let unknown = unknown_positions(spec, &train_positions, &path, &mut ur)?;
    Ok(Environment {
        seed,
        width_m: spec.width_m,
        height_m: spec.height_m,
        aps,
        train_positions,
        unknown_positions: unknown,
        path,
    })
}

/// Precomputed shadowing fields and drift offsets for one environment and
/// radio model.
pub struct Simulator<'a> {
    env: &'a Environment,
    model: RadioModel,
    /// Per AP: (wave x, wave y, phase) of each Fourier component.
    shadow: Vec<Vec<(f64, f64, f64)>>,
    /// Per epoch, per AP drift offset.
    drift: [Vec<f64>; 3],
}

impl<'a> Simulator<'a> {
    pub fn new(env: &'a Environment, model: &RadioModel) -> Result<Self> {
        model.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(env.seed);
        rng.set_stream(3);
        let k = 1.0 / model.shadowing_corr_m;
        let shadow = env
            .aps
            .iter()
            .map(|_| {
                (0..SHADOW_COMPONENTS)
                    .map(|_| {
                        let wx: f64 = StandardNormal.sample(&mut rng);
                        let wy: f64 = StandardNormal.sample(&mut rng);
                        (wx * k, wy * k, rng.random_range(0.0..2.0 * PI))
                    })
                    .collect()
            })
            .collect();
        let drift = [Epoch::Survey, Epoch::OneWeek, Epoch::TwoMonths].map(|e| {
            let mut r = ChaCha8Rng::seed_from_u64(env.seed);
            r.set_stream(e.stream());
            let std = model.drift_std(e);
            env.aps
                .iter()
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    z * std
                })
                .collect()
        });
        Ok(Simulator {
            env,
            model: model.clone(),
            shadow,
            drift,
        })
    }

    fn epoch_index(epoch: Epoch) -> usize {
        match epoch {
            Epoch::Survey => 0,
            Epoch::OneWeek => 1,
            Epoch::TwoMonths => 2,
        }
    }

    /// Mean received power of AP `a` at `p`, before drift, noise and rounding.
    pub fn mean_rss(&self, a: usize, p: &Point) -> f64 {
        let ap = &self.env.aps[a];
        let d = (p.x - ap.x).hypot(p.y - ap.y);
        let loss = 10.0 * self.model.path_loss_exponent * (d.max(D0) / D0).log10();
        let mut shadow = 0.0;
        if self.model.shadowing_std_db > 0.0 {
            let sum: f64 = self.shadow[a]
                .iter()
                .map(|&(wx, wy, phi)| (wx * p.x + wy * p.y + phi).cos())
                .sum();
            shadow = self.model.shadowing_std_db * (2.0 / SHADOW_COMPONENTS as f64).sqrt() * sum;
        }
        ap.tx_power_dbm - loss + shadow
    }

    /// One scan at `location`; the randomness of the scan itself comes from `seed`.
    pub fn scan(&self, location: &Point, epoch: Epoch, seed: u64) -> Vec<Reading> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.model.scan_noise_std_db).expect("finite std");
        let drift = &self.drift[Self::epoch_index(epoch)];
        let mut kept: Vec<(i32, usize)> = Vec::new();
        let mut strongest = (f64::NEG_INFINITY, 0usize);
        for (a, &d) in drift.iter().enumerate() {
            let mut rss = self.mean_rss(a, location) + d;
            if self.model.scan_noise_std_db > 0.0 {
                rss += noise.sample(&mut rng);
            }
            let dropped = self.model.dropout > 0.0 && rng.random::<f64>() < self.model.dropout;
            if rss > strongest.0 {
                strongest = (rss, a);
            }
            if dropped || rss < RSS_MIN as f64 {
                continue;
            }
            kept.push((clip_round(rss), a));
        }
        if kept.is_empty() {
            kept.push((clip_round(strongest.0), strongest.1));
        }
        kept.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
        kept.into_iter()
            .map(|(rss, a)| Reading::new(self.env.aps[a].id.clone(), rss))
            .collect()
    }
}

fn clip_round(rss: f64) -> i32 {
    rss.clamp(RSS_MIN as f64, RSS_MAX as f64).round() as i32
}

/// A single scan; builds the simulator on every call, so prefer
/// [`Simulator`] for bulk generation.
pub fn sample_rss(
    env: &Environment,
    model: &RadioModel,
    location: Point,
    epoch: Epoch,
    seed: u64,
) -> Result<RssSample> {
    let sim = Simulator::new(env, model)?;
    Ok(RssSample {
        readings: sim.scan(&location, epoch, seed),
        position_id: None,
        location: Some(location),
        timestamp: Some(epoch.days() * SECONDS_PER_DAY),
    })
}

fn scan_seed(seed: u64, index: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    r.random()
}

/// Train, known-test or unknown-test scans, `scans_per_point` at each
/// position. Train scans are taken at survey time, known-test scans a week
/// later and unknown-test scans two months later.
pub fn generate_dataset(
    env: &Environment,
    model: &RadioModel,
    kind: DatasetKind,
    scans_per_point: usize,
    seed: u64,
) -> Result<Dataset> {
    if scans_per_point == 0 {
        return Err(Error::EmptyDataset);
    }
    let (positions, epoch, labelled) = match kind {
        DatasetKind::Train => (&env.train_positions, Epoch::Survey, true),
        DatasetKind::TestKnown => (&env.train_positions, Epoch::OneWeek, true),
        DatasetKind::TestUnknown => (&env.unknown_positions, Epoch::TwoMonths, false),
        DatasetKind::TestTrajectory => {
            return generate_trajectory_dataset(env, model, &default_trajectory(env), seed)
        }
    };
    if positions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sim = Simulator::new(env, model)?;
    let t0 = epoch.days() * SECONDS_PER_DAY;
    let samples: Vec<RssSample> = (0..positions.len() * scans_per_point)
        .into_par_iter()
        .map(|i| {
            let pos = i / scans_per_point;
            let location = positions[pos];
            RssSample {
                readings: sim.scan(&location, epoch, scan_seed(seed, i as u64)),
                position_id: labelled.then_some(pos as u32),
                location: Some(location),
                timestamp: Some(t0 + i as f64),
            }
        })
        .collect();
    Dataset::new(samples, kind)
}

/// Scans along a walked trajectory, labelled with the interpolated location.
pub fn generate_trajectory_dataset(
    env: &Environment,
    model: &RadioModel,
    traj: &Trajectory,
    seed: u64,
) -> Result<Dataset> {
    let points = traj.sample_points()?;
    let sim = Simulator::new(env, model)?;
    let t0 = traj.epoch.days() * SECONDS_PER_DAY;
    let samples: Vec<RssSample> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| RssSample {
            readings: sim.scan(p, traj.epoch, scan_seed(seed, i as u64)),
            position_id: None,
            location: Some(*p),
            timestamp: Some(t0 + i as f64 * traj.interval_s),
        })
        .collect();
    Dataset::new(samples, DatasetKind::TestTrajectory)
}

impl Environment {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
