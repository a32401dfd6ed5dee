//! Loewner engines: forward chordal, radial and whole-plane SLE_κ^μ(ρ),
//! reverse chordal SLE_κ(ρ̃), slit-map tracing and driving extraction.
//!
//! Near a force point the engines step the squared gap `Y = X²` (a squared
//! Bessel process up to the other drifts) together with `2W + ρV`, whose
//! drift does not see the colliding point. Collisions of groups with weight
//! above -2 reflect; at or below -2 the continuation threshold stops the run.

use crate::conformal::DomainId;
use crate::error::{Error, Result};
use crate::rng::{Rng, Streams};
use crate::C64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const TAU: f64 = 2.0 * PI;
/// Substep when the nearest gap is below `ZONE·√(κ h)`.
pub const ZONE: f64 = 10.0;
const MAX_DEPTH: u32 = 4;
const AT_DRIVING: f64 = 1e-12;
/// Harmonic-measure level below which the target arc counts as disconnected.
pub const DISCONNECT_LEVEL: f64 = 1e-6;

/// `κ' = 16/κ`, `λ = π/√κ`, `λ' = π/√κ'`, `χ = 2/√κ - √κ/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub kappa: f64,
    pub kappa_prime: f64,
    pub lambda: f64,
    pub lambda_prime: f64,
    pub chi: f64,
}

impl Constants {
    pub fn new(kappa: f64) -> Constants {
        let kp = 16.0 / kappa;
        Constants {
            kappa,
            kappa_prime: kp,
            lambda: PI / kappa.sqrt(),
            lambda_prime: PI / kp.sqrt(),
            chi: 2.0 / kappa.sqrt() - kappa.sqrt() / 2.0,
        }
    }
}

/// Boundary position (real point, or angle for radial), one-sided markers at
/// the seed, or an interior point (reverse flow only).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ForceLoc {
    At(f64),
    Plus,
    Minus,
    Bulk(C64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcePoint {
    pub rho: f64,
    pub loc: ForceLoc,
}

impl ForcePoint {
    pub fn new(rho: f64, loc: ForceLoc) -> Self {
        ForcePoint { rho, loc }
    }

    /// `"-2.5@0+"`, `"1@0-"`, `"2@1.5"` or `"2@0.3,0.4i"`.
    pub fn parse(s: &str) -> Result<Self> {
        let (r, l) = s.split_once('@').ok_or_else(|| Error::InvalidParam(format!("force point '{s}' needs rho@location")))?;
        let rho: f64 = r.trim().parse().map_err(|_| Error::InvalidParam(format!("bad weight in '{s}'")))?;
        let l = l.trim();
        let loc = if l.ends_with('+') && l[..l.len() - 1].parse::<f64>().is_ok() {
            ForceLoc::Plus
        } else if l.ends_with('-') && l.len() > 1 && l[..l.len() - 1].parse::<f64>().is_ok() {
            ForceLoc::Minus
        } else if let Some((a, b)) = l.split_once(',') {
            let re: f64 = a.parse().map_err(|_| Error::InvalidParam(format!("bad location in '{s}'")))?;
            let im: f64 = b
                .trim_end_matches('i')
                .parse()
                .map_err(|_| Error::InvalidParam(format!("bad location in '{s}'")))?;
            ForceLoc::Bulk(C64::new(re, im))
        } else {
            ForceLoc::At(l.parse().map_err(|_| Error::InvalidParam(format!("bad location in '{s}'")))?)
        };
        Ok(ForcePoint { rho, loc })
    }

    pub fn format(&self) -> String {
        match self.loc {
            ForceLoc::At(x) => format!("{}@{}", self.rho, x),
            ForceLoc::Plus => format!("{}@0+", self.rho),
            ForceLoc::Minus => format!("{}@0-", self.rho),
            ForceLoc::Bulk(z) => format!("{}@{},{}i", self.rho, z.re, z.im),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Engine {
    Chordal,
    Radial,
    WholePlane,
    ReverseChordal,
}

impl Engine {
    pub fn tag(&self) -> &'static str {
        match self {
            Engine::Chordal => "chordal",
            Engine::Radial => "radial",
            Engine::WholePlane => "whole_plane",
            Engine::ReverseChordal => "reverse_chordal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "chordal" => Engine::Chordal,
            "radial" => Engine::Radial,
            "whole_plane" => Engine::WholePlane,
            "reverse_chordal" => Engine::ReverseChordal,
            _ => return Err(Error::InvalidParam(format!("unknown engine '{s}'"))),
        })
    }

    fn is_angular(&self) -> bool {
        matches!(self, Engine::Radial | Engine::WholePlane)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopRule {
    Horizon,
    /// Stop when the force point with this index meets the driving (reverse flow).
    ForcePointCollision(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stop {
    Horizon,
    ContinuationThreshold,
    TargetDisconnected,
    ForcePointCollision,
}

impl Stop {
    pub fn tag(&self) -> &'static str {
        match self {
            Stop::Horizon => "horizon",
            Stop::ContinuationThreshold => "continuation_threshold",
            Stop::TargetDisconnected => "target_disconnected",
            Stop::ForcePointCollision => "force_point_collision",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "horizon" => Stop::Horizon,
            "continuation_threshold" => Stop::ContinuationThreshold,
            "target_disconnected" => Stop::TargetDisconnected,
            "force_point_collision" => Stop::ForcePointCollision,
            _ => return Err(Error::Format(format!("unknown stop '{s}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SleParams {
    pub kappa: f64,
    pub mu: f64,
    pub forces: Vec<ForcePoint>,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    /// Initial driving value (chordal) or angle (radial; default `-π/2`, i.e. `-i`).
    pub start: f64,
    /// Test mode: drop the Brownian term.
    pub noise: bool,
    pub stop_rule: StopRule,
}

impl SleParams {
    pub fn chordal(kappa: f64, horizon: f64, dt: f64, seed: u64) -> Self {
        SleParams { kappa, mu: 0.0, forces: vec![], horizon, dt, seed, start: 0.0, noise: true, stop_rule: StopRule::Horizon }
    }

    pub fn radial(kappa: f64, horizon: f64, dt: f64, seed: u64) -> Self {
        SleParams { start: -PI / 2.0, ..SleParams::chordal(kappa, horizon, dt, seed) }
    }

    pub fn with_force(mut self, rho: f64, loc: ForceLoc) -> Self {
        self.forces.push(ForcePoint { rho, loc });
        self
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn constants(&self) -> Constants {
        Constants::new(self.kappa)
    }

    fn validate(&self, engine: Engine) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidParam(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParam(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParam(format!("horizon must be finite and nonnegative, got {}", self.horizon)));
        }
        if self.mu != 0.0 && !engine.is_angular() {
            return Err(Error::InvalidParam("mu applies to radial and whole-plane engines".into()));
        }
        for (i, f) in self.forces.iter().enumerate() {
            if !f.rho.is_finite() {
                return Err(Error::InvalidParam(format!("force point {i} has a non-finite weight")));
            }
            match f.loc {
                ForceLoc::Bulk(z) if engine != Engine::ReverseChordal => {
                    return Err(Error::InvalidParam(format!("interior force point {i} at {z} needs the reverse engine")))
                }
                ForceLoc::Bulk(z) if z.im < 0.0 => {
                    return Err(Error::OutsideDomain(format!("{z}"), "closed upper half-plane"))
                }
                ForceLoc::Plus | ForceLoc::Minus if engine == Engine::ReverseChordal => {
                    return Err(Error::InvalidParam("one-sided markers belong to forward engines".into()))
                }
                ForceLoc::At(x) if !x.is_finite() => return Err(Error::InvalidParam(format!("force point {i} is not finite"))),
                ForceLoc::At(x) if !engine.is_angular() && x == self.start => {
                    return Err(Error::InvalidParam(format!("force point {i} sits on the seed; use 0+ or 0-")))
                }
                ForceLoc::At(a) if engine.is_angular() && (a - self.start).rem_euclid(TAU) == 0.0 => {
                    return Err(Error::InvalidParam(format!("force point {i} sits on the seed; use a one-sided marker")))
                }
                _ => {}
            }
        }
        if let StopRule::ForcePointCollision(i) = self.stop_rule {
            if i >= self.forces.len() {
                return Err(Error::InvalidParam(format!("stop rule names missing force point {i}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lr {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceState {
    pub rho: f64,
    pub side: Lr,
    pub collided: bool,
}

/// True iff the collided force points on some side weigh at most -2 in total.
pub fn continuation_threshold(forces: &[ForceState]) -> bool {
    [Lr::Left, Lr::Right].iter().any(|s| {
        let hit: Vec<f64> = forces.iter().filter(|f| f.side == *s && f.collided).map(|f| f.rho).collect();
        !hit.is_empty() && hit.iter().sum::<f64>() <= -2.0
    })
}

#[derive(Clone, Debug, PartialEq)]
struct Group {
    rho: f64,
    members: Vec<usize>,
    v: f64,
    /// Fixed side for chordal flows (+1 right, -1 left).
    side: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct BulkPoint {
    index: usize,
    rho: f64,
    z: C64,
}

#[derive(Clone, Debug, PartialEq)]
struct EngineState {
    step: usize,
    w: f64,
    groups: Vec<Group>,
    bulk: Vec<BulkPoint>,
    b: f64,
    log_cr: f64,
    word_pos: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DrivingRecord {
    pub engine: Engine,
    pub params: SleParams,
    pub times: Vec<f64>,
    /// `W_t`, or the unwrapped angle of `U_t`.
    pub driving: Vec<f64>,
    /// `g_t(x_j)` per force point (unit complex numbers for angular engines).
    pub force_tracks: Vec<Vec<C64>>,
    pub stop: Stop,
    pub stop_time: f64,
    /// `log g_t'(0)` from the composed radial slit maps.
    pub log_conformal_radius: Vec<f64>,
    /// Sum of the Brownian increments.
    pub b_final: f64,
    pub warnings: Vec<String>,
    state: Option<EngineState>,
}

impl DrivingRecord {
    pub fn new(engine: Engine, params: SleParams, times: Vec<f64>, driving: Vec<f64>) -> Self {
        let nf = params.forces.len();
        DrivingRecord {
            engine,
            params,
            times,
            driving,
            force_tracks: vec![Vec::new(); nf],
            stop: Stop::Horizon,
            stop_time: 0.0,
            log_conformal_radius: Vec::new(),
            b_final: 0.0,
            warnings: Vec::new(),
            state: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `U_t = e^{iθ_t}` (angular engines).
    pub fn u(&self, k: usize) -> C64 {
        C64::from_polar(1.0, self.driving[k])
    }

    pub fn final_value(&self) -> f64 {
        *self.driving.last().unwrap()
    }

    /// Driving value at time `t` by linear interpolation.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            return self.driving[0];
        }
        if k >= self.times.len() {
            return self.final_value();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
        self.driving[k - 1] + s * (self.driving[k] - self.driving[k - 1])
    }

    /// Sum of squared increments against time, one point per step.
    pub fn quadratic_variation(&self) -> (Vec<f64>, Vec<f64>) {
        let mut qv = vec![0.0; self.len()];
        for k in 1..self.len() {
            let d = self.driving[k] - self.driving[k - 1];
            qv[k] = qv[k - 1] + d * d;
        }
        (self.times.clone(), qv)
    }
}

/// Largest gap between the driving of `a` and the driving of `b`
/// interpolated at the times of `a`, over `[0, min(T_a, T_b)]`.
pub fn sup_driving_error(a: &DrivingRecord, b: &DrivingRecord) -> f64 {
    let tmax = a.times.last().copied().unwrap_or(0.0).min(b.times.last().copied().unwrap_or(0.0));
    a.times
        .iter()
        .zip(&a.driving)
        .filter(|(t, _)| **t <= tmax)
        .map(|(t, w)| (w - b.value_at(*t)).abs())
        .fold(0.0, f64::max)
}

fn kernel(angular: bool, z: f64) -> f64 {
    if angular {
        0.5 / (z / 2.0).tan()
    } else {
        1.0 / z
    }
}

/// `z k(z)`, equal to 1 for chordal flows.
fn zk(angular: bool, z: f64) -> f64 {
    if angular && z != 0.0 {
        (z / 2.0) / (z / 2.0).tan()
    } else {
        1.0
    }
}

struct Forward {
    angular: bool,
    kappa: f64,
    mu: f64,
    noise: bool,
}

enum StepOutcome {
    Continue,
    Stopped(Stop),
}

impl Forward {
    /// Signed gap of a group (angular gaps folded into `(-π, π]`) and its side.
    fn gap(&self, st: &EngineState, g: &Group) -> (f64, f64) {
        let x = g.v - st.w;
        if self.angular {
            if x < PI {
                (x, 1.0)
            } else {
                (x - TAU, -1.0)
            }
        } else {
            (x, g.side)
        }
    }

    fn advance(&self, st: &mut EngineState, h: f64, depth: u32, rng: &mut Rng) -> Result<StepOutcome> {
        let nearest = self.nearest(st);
        if let Some((_, z)) = nearest {
            if depth < MAX_DEPTH && z.abs() < ZONE * (self.kappa * h).sqrt() && !st.groups.is_empty() {
                if let StepOutcome::Stopped(s) = self.advance(st, h / 2.0, depth + 1, rng)? {
                    return Ok(StepOutcome::Stopped(s));
                }
                return self.advance(st, h / 2.0, depth + 1, rng);
            }
        }
        self.substep(st, h, nearest.filter(|(_, z)| z.abs() < ZONE * (self.kappa * h).sqrt()).map(|(g, _)| g), rng)
    }

    fn nearest(&self, st: &EngineState) -> Option<(usize, f64)> {
        st.groups
            .iter()
            .enumerate()
            .map(|(i, g)| (i, self.gap(st, g).0))
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
    }

    fn substep(&self, st: &mut EngineState, h: f64, near: Option<usize>, rng: &mut Rng) -> Result<StepOutcome> {
        let xi: f64 = if self.noise { StandardNormal.sample(rng) } else { 0.0 };
        let db = h.sqrt() * xi;
        st.b += db;
        let sk = self.kappa.sqrt();
        let extra = if self.angular { self.kappa * self.mu } else { 0.0 };
        let gaps: Vec<(f64, f64)> = st.groups.iter().map(|g| self.gap(st, g)).collect();
        let drift_of = |skip: Option<usize>| -> f64 {
            gaps.iter()
                .zip(&st.groups)
                .enumerate()
                .filter(|(i, ((z, _), _))| Some(*i) != skip && *z != 0.0)
                .map(|(_, ((z, _), g))| -g.rho * kernel(self.angular, *z))
                .sum()
        };
        let w0 = st.w;
        let new_w;
        let mut collided = None;
        if let Some(g) = near {
            let d_o = drift_of(Some(g));
            let (z, side) = gaps[g];
            let rho = st.groups[g].rho;
            let mut y = z * z + (2.0 * (rho + 2.0) * zk(self.angular, z) + self.kappa) * h - 2.0 * sk * z * db - 2.0 * z * (d_o + extra) * h;
            if y <= 0.0 {
                collided = Some((g, side));
                y = -y;
            }
            let m = 2.0 * st.w + rho * st.groups[g].v + 2.0 * sk * db + 2.0 * (d_o + extra) * h;
            let mut zn = side * y.sqrt();
            if let Some((g, side)) = collided {
                if self.threshold_at(st, &gaps, g, side) {
                    zn = 0.0;
                    let w = (m - rho * zn) / (2.0 + rho);
                    self.move_others(st, w0, h, Some(g))?;
                    st.w = w;
                    st.groups[g].v = w;
                    return Ok(StepOutcome::Stopped(Stop::ContinuationThreshold));
                }
            }
            if (rho + 2.0).abs() > 1e-12 {
                new_w = (m - rho * zn) / (2.0 + rho);
            } else {
                // 2W + ρV carries no information at ρ = -2: move V with the midpoint gap
                let zbar = side * ((z * z + zn * zn) / 2.0).sqrt().max(1e-300);
                new_w = st.groups[g].v + 2.0 * kernel(self.angular, zbar) * h - zn;
            }
            self.move_others(st, w0, h, Some(g))?;
            st.groups[g].v = new_w + zn;
        } else {
            let d = drift_of(None);
            new_w = st.w + sk * db + (d + extra) * h;
            self.move_others(st, w0, h, None)?;
        }
        st.w = new_w;
        // crossing check for the groups moved by the constant-driving flow
        for (i, g) in st.groups.iter().enumerate() {
            if Some(i) == near {
                continue;
            }
            let x = g.v - st.w;
            let bad = if self.angular { !(-1e-12..=TAU + 1e-12).contains(&x) } else { x * g.side < 0.0 };
            if bad {
                return Err(Error::Numerical(format!(
                    "step of size {h} jumps across force point {:?}; reduce dt",
                    g.members
                )));
            }
        }
        if self.angular && st.groups.len() >= 2 {
            let xs: Vec<f64> = st.groups.iter().map(|g| g.v - st.w).collect();
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo > 0.0 && (hi - lo) / TAU < DISCONNECT_LEVEL {
                return Ok(StepOutcome::Stopped(Stop::TargetDisconnected));
            }
        }
        Ok(StepOutcome::Continue)
    }

    fn threshold_at(&self, st: &EngineState, gaps: &[(f64, f64)], g: usize, side: f64) -> bool {
        let lr = |s: f64| if s > 0.0 { Lr::Right } else { Lr::Left };
        let states: Vec<ForceState> = st
            .groups
            .iter()
            .enumerate()
            .map(|(i, grp)| ForceState {
                rho: grp.rho,
                side: lr(gaps[i].1),
                collided: i == g || (gaps[i].1 == side && gaps[i].0.abs() < AT_DRIVING),
            })
            .collect();
        continuation_threshold(&states)
    }

    /// Exact flow of the other force points under the driving frozen at `w`.
    fn move_others(&self, st: &mut EngineState, w: f64, h: f64, skip: Option<usize>) -> Result<()> {
        for (i, g) in st.groups.iter_mut().enumerate() {
            if Some(i) == skip {
                continue;
            }
            let x = g.v - w;
            g.v = if self.angular {
                w + 2.0 * ((x / 2.0).cos() * (-h / 2.0).exp()).acos()
            } else {
                w + g.side * (x * x + 4.0 * h).sqrt()
            };
        }
        Ok(())
    }
}

fn radial_r(h: f64) -> f64 {
    let e = h.exp_m1();
    1.0 / (1.0 + 2.0 * e + 2.0 * (e * (1.0 + e)).sqrt())
}

fn initial_groups(params: &SleParams, angular: bool) -> Vec<Group> {
    let mut groups: Vec<Group> = Vec::new();
    for (i, f) in params.forces.iter().enumerate() {
        let (v, side) = match f.loc {
            ForceLoc::Plus => (params.start, 1.0),
            ForceLoc::Minus => (if angular { params.start + TAU } else { params.start }, -1.0),
            ForceLoc::At(x) => {
                if angular {
                    (params.start + (x - params.start).rem_euclid(TAU), 1.0)
                } else {
                    (x, (x - params.start).signum())
                }
            }
            ForceLoc::Bulk(_) => continue,
        };
        if let Some(g) = groups.iter_mut().find(|g| g.v == v && g.side == side) {
            g.rho += f.rho;
            g.members.push(i);
        } else {
            groups.push(Group { rho: f.rho, members: vec![i], v, side });
        }
    }
    groups
}

fn push_tracks(rec: &mut DrivingRecord, st: &EngineState, angular: bool) {
    for g in &st.groups {
        let c = if angular { C64::from_polar(1.0, g.v) } else { C64::new(g.v, 0.0) };
        for &m in &g.members {
            rec.force_tracks[m].push(c);
        }
    }
    for b in &st.bulk {
        rec.force_tracks[b.index].push(b.z);
    }
}

fn run_forward(engine: Engine, params: &SleParams, purpose: &str, resume: Option<&DrivingRecord>) -> Result<DrivingRecord> {
    params.validate(engine)?;
    let angular = engine.is_angular();
    let fw = Forward { angular, kappa: params.kappa, mu: params.mu, noise: params.noise };
    let mut rng = Streams::new(params.seed, purpose).rng(0);
    let (mut rec, mut st) = match resume {
        Some(r) => {
            let st = r.state.clone().ok_or_else(|| Error::InvalidParam("record cannot be resumed".into()))?;
            rng.set_word_pos(st.word_pos);
            let mut rec = r.clone();
            rec.params.horizon = params.horizon;
            (rec, st)
        }
        None => {
            let st = EngineState {
                step: 0,
                w: params.start,
                groups: initial_groups(params, angular),
                bulk: vec![],
                b: 0.0,
                log_cr: 0.0,
                word_pos: 0,
            };
            let mut rec = DrivingRecord::new(engine, params.clone(), vec![0.0], vec![params.start]);
            push_tracks(&mut rec, &st, angular);
            if angular {
                rec.log_conformal_radius.push(0.0);
            }
            (rec, st)
        }
    };
    let n = (params.horizon / params.dt).round() as usize;
    let c_step = {
        let r = radial_r(params.dt);
        ((1.0 + r) * (1.0 + r) / (4.0 * r)).ln()
    };
    let mut stop = Stop::Horizon;
    while st.step < n {
        let out = fw.advance(&mut st, params.dt, 0, &mut rng).map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("step {}: {m}", st.step + 1)),
            e => e,
        })?;
        st.step += 1;
        st.log_cr += c_step;
        rec.times.push(st.step as f64 * params.dt);
        rec.driving.push(st.w);
        push_tracks(&mut rec, &st, angular);
        if angular {
            let u = C64::from_polar(1.0, st.w);
            if (u.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::Numerical(format!("|U| drifted to {} at step {}", u.norm(), st.step)));
            }
            rec.log_conformal_radius.push(st.log_cr);
        }
        if let StepOutcome::Stopped(s) = out {
            stop = s;
            break;
        }
    }
    st.word_pos = rng.get_word_pos();
    rec.stop = stop;
    rec.stop_time = *rec.times.last().unwrap();
    rec.b_final = st.b;
    rec.state = (stop == Stop::Horizon).then_some(st);
    Ok(rec)
}

/// Forward chordal SLE_κ(ρ) in H.
pub fn drive_chordal(params: &SleParams) -> Result<DrivingRecord> {
    run_forward(Engine::Chordal, params, "sle:chordal", None)
}

/// Radial SLE_κ^μ(ρ) in D targeted at 0; force locations are angles.
pub fn drive_radial(params: &SleParams) -> Result<DrivingRecord> {
    run_forward(Engine::Radial, params, "sle:radial", None)
}

/// Continues a record that stopped at its horizon up to a later horizon.
pub fn resume(record: &DrivingRecord, horizon: f64) -> Result<DrivingRecord> {
    if horizon < record.params.horizon {
        return Err(Error::InvalidParam("new horizon precedes the recorded one".into()));
    }
    let mut p = record.params.clone();
    p.horizon = horizon;
    match record.engine {
        Engine::Chordal => run_forward(Engine::Chordal, &p, "sle:chordal", Some(record)),
        Engine::Radial => run_forward(Engine::Radial, &p, "sle:radial", Some(record)),
        Engine::ReverseChordal => run_reverse(&p, Some(record)),
        Engine::WholePlane => Err(Error::InvalidParam("whole-plane records are not resumable".into())),
    }
}

/// Whole-plane SLE_κ^μ(ρ): the pair `(U, O)` started from antipodal points
/// at time `-burn_in`; returns the segment `[0, horizon]`.
pub fn drive_whole_plane(kappa: f64, mu: f64, rho: f64, burn_in: f64, horizon: f64, dt: f64, seed: u64) -> Result<DrivingRecord> {
    if !(rho > -2.0) {
        return Err(Error::InvalidParam(format!("whole-plane needs rho > -2, got {rho}")));
    }
    if !(burn_in > 0.0) {
        return Err(Error::InvalidParam("burn_in must be positive".into()));
    }
    let mut p = SleParams::radial(kappa, burn_in + horizon, dt, seed).with_mu(mu);
    p.start = 0.0;
    p.forces = vec![ForcePoint::new(rho, ForceLoc::At(PI))];
    let full = run_forward(Engine::WholePlane, &p, "sle:whole_plane", None)?;
    let k0 = (burn_in / dt).round() as usize;
    if full.len() <= k0 {
        return Err(Error::Numerical("whole-plane run stopped during burn-in".into()));
    }
    let gaps: Vec<f64> = (0..=k0).map(|k| full.force_tracks[0][k].arg() - full.driving[k]).map(|x| x.rem_euclid(TAU)).collect();
    let tau = autocorrelation_time(&gaps) * dt;
    let mut p_out = p.clone();
    p_out.horizon = horizon;
    let mut rec = DrivingRecord::new(Engine::WholePlane, p_out, full.times[k0..].iter().map(|t| t - burn_in).collect(), full.driving[k0..].to_vec());
    rec.force_tracks = vec![full.force_tracks[0][k0..].to_vec()];
    rec.log_conformal_radius = full.log_conformal_radius[k0..].iter().map(|v| v - full.log_conformal_radius[k0]).collect();
    rec.stop = full.stop;
    rec.stop_time = full.stop_time - burn_in;
    rec.b_final = full.b_final;
    if burn_in < 5.0 * tau {
        rec.warnings.push(format!("burn-in {burn_in} is shorter than five autocorrelation times ({tau:.3})"));
    }
    Ok(rec)
}

/// Integrated autocorrelation time in samples (initial positive sequence).
pub fn autocorrelation_time(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return f64::INFINITY;
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    let c0: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    let mut lag = 1;
    while lag < n / 2 {
        let c: f64 = (0..n - lag).map(|k| (xs[k] - m) * (xs[k + lag] - m)).sum::<f64>() / n as f64 / c0;
        if c <= 0.0 {
            break;
        }
        tau += 2.0 * c;
        lag = (lag * 2).max(lag + 1);
    }
    tau
}

fn run_reverse(params: &SleParams, resume: Option<&DrivingRecord>) -> Result<DrivingRecord> {
    params.validate(Engine::ReverseChordal)?;
    let mut rng = Streams::new(params.seed, "sle:reverse").rng(0);
    let (mut rec, mut st) = match resume {
        Some(r) => {
            let st = r.state.clone().ok_or_else(|| Error::InvalidParam("record cannot be resumed".into()))?;
            rng.set_word_pos(st.word_pos);
            let mut rec = r.clone();
            rec.params.horizon = params.horizon;
            (rec, st)
        }
        None => {
            let mut bulk = Vec::new();
            for (i, f) in params.forces.iter().enumerate() {
                if let ForceLoc::Bulk(z) = f.loc {
                    bulk.push(BulkPoint { index: i, rho: f.rho, z });
                }
            }
            let st = EngineState {
                step: 0,
                w: params.start,
                groups: initial_groups(params, false),
                bulk,
                b: 0.0,
                log_cr: 0.0,
                word_pos: 0,
            };
            let mut rec = DrivingRecord::new(Engine::ReverseChordal, params.clone(), vec![0.0], vec![params.start]);
            push_tracks(&mut rec, &st, false);
            (rec, st)
        }
    };
    let n = (params.horizon / params.dt).round() as usize;
    let mut stop = Stop::Horizon;
    while st.step < n {
        let out = reverse_advance(params, &mut st, params.dt, 0, &mut rng)?;
        st.step += 1;
        rec.times.push(st.step as f64 * params.dt);
        rec.driving.push(st.w);
        push_tracks(&mut rec, &st, false);
        if let StepOutcome::Stopped(s) = out {
            stop = s;
            break;
        }
    }
    st.word_pos = rng.get_word_pos();
    rec.stop = stop;
    rec.stop_time = *rec.times.last().unwrap();
    rec.b_final = st.b;
    rec.state = (stop == Stop::Horizon).then_some(st);
    Ok(rec)
}

fn upper_sqrt(z: C64) -> C64 {
    let s = z.sqrt();
    if s.im < 0.0 || (s.im == 0.0 && s.re < 0.0) {
        -s
    } else {
        s
    }
}

fn reverse_advance(p: &SleParams, st: &mut EngineState, h: f64, depth: u32, rng: &mut Rng) -> Result<StepOutcome> {
    let near = st
        .groups
        .iter()
        .enumerate()
        .map(|(i, g)| (i, g.v - st.w))
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));
    let zone = ZONE * (p.kappa * h).sqrt();
    if let Some((_, x)) = near {
        if depth < MAX_DEPTH && x.abs() < zone {
            if let StepOutcome::Stopped(s) = reverse_advance(p, st, h / 2.0, depth + 1, rng)? {
                return Ok(StepOutcome::Stopped(s));
            }
            return reverse_advance(p, st, h / 2.0, depth + 1, rng);
        }
    }
    let near = near.filter(|(_, x)| x.abs() < zone).map(|(g, _)| g);
    let xi: f64 = if p.noise { StandardNormal.sample(rng) } else { 0.0 };
    let db = h.sqrt() * xi;
    st.b += db;
    let sk = p.kappa.sqrt();
    let w0 = st.w;
    let d_o: f64 = st
        .groups
        .iter()
        .enumerate()
        .filter(|(i, g)| Some(*i) != near && g.v != w0)
        .map(|(_, g)| g.rho / (w0 - g.v))
        .sum::<f64>()
        + st.bulk.iter().filter(|b| b.z != C64::new(w0, 0.0)).map(|b| (b.rho / (C64::new(w0, 0.0) - b.z)).re).sum::<f64>();
    let mut outcome = StepOutcome::Continue;
    let new_w;
    if let Some(g) = near {
        let x = st.groups[g].v - w0;
        let side = st.groups[g].side;
        let rho = st.groups[g].rho;
        let mut y = x * x + (2.0 * (rho - 2.0) + p.kappa) * h - 2.0 * sk * x * db - 2.0 * x * d_o * h;
        let m = 2.0 * w0 - rho * st.groups[g].v + 2.0 * sk * db + 2.0 * d_o * h;
        if y <= 0.0 {
            let stop_here = matches!(p.stop_rule, StopRule::ForcePointCollision(i) if st.groups[g].members.contains(&i));
            if stop_here {
                y = 0.0;
                outcome = StepOutcome::Stopped(Stop::ForcePointCollision);
            } else {
                y = -y;
            }
        }
        let xn = side * y.sqrt();
        new_w = if (rho - 2.0).abs() > 1e-12 {
            (m + rho * xn) / (2.0 - rho)
        } else {
            let xbar = side * ((x * x + xn * xn) / 2.0).sqrt().max(1e-300);
            st.groups[g].v - 2.0 * h / xbar - xn
        };
        st.groups[g].v = new_w + xn;
    } else {
        new_w = w0 + sk * db + d_o * h;
    }
    for (i, g) in st.groups.iter_mut().enumerate() {
        if Some(i) == near {
            continue;
        }
        let x = g.v - w0;
        let s = x * x - 4.0 * h;
        if s <= 0.0 {
            return Err(Error::Numerical(format!("reverse step of size {h} swallows force point {:?}; reduce dt", g.members)));
        }
        g.v = w0 + g.side * s.sqrt();
    }
    for b in st.bulk.iter_mut() {
        let d = b.z - w0;
        b.z = C64::new(w0, 0.0) + upper_sqrt(d * d - 4.0 * h);
    }
    st.w = new_w;
    Ok(outcome)
}

/// Reverse chordal SLE_κ(ρ̃): `dg̃ = -2/(g̃ - W̃) dt`.
pub fn drive_reverse_chordal(params: &SleParams) -> Result<DrivingRecord> {
    run_reverse(params, None)
}

/// Dispatch on the engine.
pub fn drive(engine: Engine, params: &SleParams) -> Result<DrivingRecord> {
    match engine {
        Engine::Chordal => drive_chordal(params),
        Engine::Radial => drive_radial(params),
        Engine::ReverseChordal => drive_reverse_chordal(params),
        Engine::WholePlane => {
            let rho = params.forces.first().map(|f| f.rho).unwrap_or(0.0);
            drive_whole_plane(params.kappa, params.mu, rho, 1.0, params.horizon, params.dt, params.seed)
        }
    }
}

// ---------------------------------------------------------------- tracing

#[derive(Clone, Debug, PartialEq)]
pub struct CurveTrace {
    pub points: Vec<C64>,
    pub cap_times: Vec<f64>,
    pub domain: DomainId,
}

impl CurveTrace {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn tip(&self) -> C64 {
        *self.points.last().unwrap()
    }

    pub fn scaled(&self, r: f64) -> CurveTrace {
        CurveTrace {
            points: self.points.iter().map(|z| z * r).collect(),
            cap_times: self.cap_times.iter().map(|t| t * r * r).collect(),
            domain: self.domain,
        }
    }
}

/// Elementary chordal step map `H → H \ slit` for driving increment `dw`
/// over capacity `dt`, with the slit based at 0.
#[derive(Clone, Copy, Debug)]
pub enum SlitMap {
    /// `(z - x1)^a (z - x2)^{1-a}`.
    Tilted { a: f64, x1: f64, x2: f64 },
    /// `√(z² - 4 dt)`.
    Vertical { dt: f64 },
}

impl SlitMap {
    pub fn tilted(dw: f64, dt: f64) -> SlitMap {
        if dw == 0.0 {
            return SlitMap::Vertical { dt };
        }
        let u = dw * dw / (4.0 * dt);
        let a = 0.5 - 0.5 * dw.signum() * (u / (4.0 + u)).sqrt();
        let l = (4.0 * dt / (a * (1.0 - a))).sqrt();
        SlitMap::Tilted { a, x1: (1.0 - a) * l, x2: -a * l }
    }

    /// Preimage of the tip.
    pub fn critical(&self) -> f64 {
        match *self {
            SlitMap::Tilted { a, x1, x2 } => a * x2 + (1.0 - a) * x1,
            SlitMap::Vertical { .. } => 0.0,
        }
    }

    pub fn eval(&self, z: C64) -> C64 {
        let z = if z.im <= 0.0 { C64::new(z.re, 0.0) } else { z };
        match *self {
            SlitMap::Tilted { a, x1, x2 } => {
                let l1 = (z - x1).ln();
                let l2 = (z - x2).ln();
                (a * l1 + (1.0 - a) * l2).exp()
            }
            SlitMap::Vertical { dt } => upper_sqrt(z * z - 4.0 * dt),
        }
    }
}

fn k_plus(z: C64) -> C64 {
    z / ((1.0 + z) * (1.0 + z))
}

fn k_plus_inv(w: C64) -> C64 {
    2.0 * w / ((1.0 - 2.0 * w) + (1.0 - 4.0 * w).sqrt())
}

/// `D → D \ [r, 1]` with `0 ↦ 0`, derivative `4r/(1+r)²`.
fn radial_slit_inverse(w: C64, r: f64) -> C64 {
    let c = (1.0 + r) * (1.0 + r) / (4.0 * r);
    k_plus_inv(k_plus(w) / c)
}

/// `D \ [r, 1] → D` with `0 ↦ 0`, derivative `(1+r)²/(4r)`.
fn radial_slit_forward(z: C64, r: f64) -> C64 {
    let c = (1.0 + r) * (1.0 + r) / (4.0 * r);
    k_plus_inv(c * k_plus(z))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceMode {
    Tilted,
    Vertical,
}

/// Tip positions every `stride` steps by backward composition of the
/// per-step slit maps.
pub fn trace(driving: &DrivingRecord, stride: usize, mode: TraceMode) -> Result<CurveTrace> {
    let stride = stride.max(1);
    let n = driving.len();
    if n < 2 {
        return Err(Error::Degenerate("driving record has fewer than two samples".into()));
    }
    let mut idx: Vec<usize> = (stride..n).step_by(stride).collect();
    if idx.last() != Some(&(n - 1)) {
        idx.push(n - 1);
    }
    match driving.engine {
        Engine::Chordal => {
            let maps: Vec<SlitMap> = (1..n)
                .map(|k| {
                    let dt = driving.times[k] - driving.times[k - 1];
                    let dw = driving.driving[k] - driving.driving[k - 1];
                    match mode {
                        TraceMode::Tilted => SlitMap::tilted(dw, dt),
                        TraceMode::Vertical => SlitMap::Vertical { dt },
                    }
                })
                .collect();
            let base = |k: usize| match mode {
                TraceMode::Tilted => driving.driving[k - 1],
                TraceMode::Vertical => driving.driving[k],
            };
            let mut points = vec![C64::new(driving.driving[0], 0.0)];
            let mut cap = vec![0.0];
            for &m in &idx {
                let mut z = C64::new(driving.driving[m], 0.0);
                for k in (1..=m).rev() {
                    let b = base(k);
                    z = b + maps[k - 1].eval(z - b);
                    if !(z.re.is_finite() && z.im.is_finite()) || z.im < -1e-9 {
                        return Err(Error::Numerical(format!("slit map branch failure at step {k} while tracing point {m}")));
                    }
                }
                points.push(z);
                cap.push(driving.times[m]);
            }
            Ok(CurveTrace { points, cap_times: cap, domain: DomainId::H })
        }
        Engine::Radial | Engine::WholePlane => {
            let rs: Vec<f64> = (1..n).map(|k| radial_r(driving.times[k] - driving.times[k - 1])).collect();
            let mut points = vec![driving.u(0)];
            let mut cap = vec![0.0];
            for &m in &idx {
                let mut z = driving.u(m);
                for k in (1..=m).rev() {
                    let u = driving.u(k);
                    z = u * radial_slit_inverse(z / u, rs[k - 1]);
                    if !(z.re.is_finite() && z.im.is_finite()) || z.norm() > 1.0 + 1e-9 {
                        return Err(Error::Numerical(format!("radial slit map failure at step {k} while tracing point {m}")));
                    }
                }
                points.push(z);
                cap.push(driving.times[m]);
            }
            Ok(CurveTrace { points, cap_times: cap, domain: DomainId::D })
        }
        Engine::ReverseChordal => Err(Error::InvalidParam("trace needs a forward driving record".into())),
    }
}

/// `log g'(0)` of the composed radial slit maps of a record, recomputed
/// numerically at a small probe.
pub fn probe_log_derivative(driving: &DrivingRecord, probe: f64) -> Result<Vec<f64>> {
    if !driving.engine.is_angular() {
        return Err(Error::InvalidParam("probe derivative is defined for radial records".into()));
    }
    let mut z = C64::new(probe, 0.0);
    let mut zm = C64::new(-probe, 0.0);
    let mut out = vec![0.0];
    let mut acc = 0.0;
    for k in 1..driving.len() {
        let r = radial_r(driving.times[k] - driving.times[k - 1]);
        let u = driving.u(k);
        let z1 = u * radial_slit_forward(z / u, r);
        let zm1 = u * radial_slit_forward(zm / u, r);
        acc += ((z1 - zm1) / (z - zm)).norm().ln();
        // keep the probe pair at a fixed small scale
        let s = probe / ((z1 - zm1).norm() / 2.0);
        let c = (z1 + zm1) / 2.0;
        z = c + (z1 - c) * s;
        zm = c + (zm1 - c) * s;
        out.push(acc);
    }
    Ok(out)
}

impl SlitMap {
    /// Tilted slit whose tip sits at `tau` (relative to the base point).
    pub fn from_tip(tau: C64) -> SlitMap {
        let a = (tau.arg() / PI).clamp(1e-12, 1.0 - 1e-12);
        let l = tau.norm() / (a.powf(a) * (1.0 - a).powf(1.0 - a));
        SlitMap::Tilted { a, x1: (1.0 - a) * l, x2: -a * l }
    }

    /// Half-plane capacity of the slit.
    pub fn hcap(&self) -> f64 {
        match *self {
            SlitMap::Tilted { a, x1, x2 } => (a * x1 * x1 + (1.0 - a) * x2 * x2) / 4.0,
            SlitMap::Vertical { dt } => dt,
        }
    }

    /// Inverse `H \ slit → H` (Newton for tilted slits).
    pub fn inverse(&self, w: C64) -> Result<C64> {
        match *self {
            SlitMap::Vertical { dt } => {
                let mut s = upper_sqrt(w * w + 4.0 * dt);
                if s.im == 0.0 && w.re < 0.0 {
                    s = -s;
                }
                Ok(s)
            }
            SlitMap::Tilted { a, x1, x2 } => {
                let w = if w.im <= 0.0 { C64::new(w.re, 0.0) } else { w };
                let p2 = a * x1 * x1 + (1.0 - a) * x2 * x2;
                let p3 = a * x1 * x1 * x1 + (1.0 - a) * x2 * x2 * x2;
                let l = x1 - x2;
                let mut z = if w.norm() > 2.0 * l {
                    w + p2 / (2.0 * w) + p3 / (3.0 * w * w)
                } else {
                    let mut s = upper_sqrt(w * w + p2);
                    if s.im == 0.0 && w.re < 0.0 {
                        s = -s;
                    }
                    s + self.critical()
                };
                if z.im <= 0.0 {
                    z.im = 1e-3 * l;
                }
                let lw = w.ln();
                for _ in 0..60 {
                    let (d1, d2) = (z - x1, z - x2);
                    let f = a * d1.ln() + (1.0 - a) * d2.ln() - lw;
                    let fp = a / d1 + (1.0 - a) / d2;
                    let step = f / fp;
                    let mut zn = z - step;
                    if zn.im <= 0.0 {
                        zn = C64::new(zn.re, z.im / 2.0);
                    }
                    let done = step.norm() < 1e-14 * (1.0 + zn.norm());
                    z = zn;
                    if done {
                        return Ok(z);
                    }
                }
                Err(Error::NoConvergence { iterations: 60, residual: (a * (z - x1).ln() + (1.0 - a) * (z - x2).ln() - lw).norm() })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractMode {
    /// Tilted slits: the exact inverse of the default trace.
    Tilted,
    /// Vertical slits: piecewise-constant driving.
    Vertical,
}

/// Sequential unzipping of a polyline by tilted slits (H) or radial slits (D).
pub fn extract_driving(curve: &CurveTrace) -> Result<DrivingRecord> {
    extract_driving_with(curve, ExtractMode::Tilted)
}

pub fn extract_driving_with(curve: &CurveTrace, mode: ExtractMode) -> Result<DrivingRecord> {
    let n = curve.points.len();
    if n < 2 {
        return Err(Error::Degenerate("curve has fewer than two points".into()));
    }
    let tol = 1e-9;
    match curve.domain {
        DomainId::H => {
            let p0 = curve.points[0];
            if p0.im.abs() > tol {
                return Err(Error::InvalidParam(format!("curve must start on the real line, starts at {p0}")));
            }
            let mut z: Vec<C64> = curve.points[1..].to_vec();
            let mut times = vec![0.0];
            let mut drive = vec![p0.re];
            let mut t = 0.0;
            let mut base = p0.re;
            for k in 0..z.len() {
                let w = z[k];
                if w.im < -tol {
                    return Err(Error::Numerical(format!("curve exits the domain at point {}", k + 1)));
                }
                if w.im <= tol {
                    return Err(Error::Numerical(format!("curve touches the boundary at point {} (non-simple input)", k + 1)));
                }
                let (map, b, next) = match mode {
                    ExtractMode::Tilted => {
                        let m = SlitMap::from_tip(w - base);
                        (m, base, base + m.critical())
                    }
                    ExtractMode::Vertical => (SlitMap::Vertical { dt: w.im * w.im / 4.0 }, w.re, w.re),
                };
                for v in z[k + 1..].iter_mut() {
                    *v = b + map.inverse(*v - b).map_err(|e| match e {
                        Error::NoConvergence { .. } => Error::Numerical(format!("unzipping step {} failed to converge", k + 1)),
                        e => e,
                    })?;
                }
                t += map.hcap();
                base = next;
                times.push(t);
                drive.push(next);
            }
            let p = SleParams::chordal(f64::MIN_POSITIVE, t, t / (n - 1) as f64, 0);
            let mut rec = DrivingRecord::new(Engine::Chordal, p, times, drive);
            rec.stop_time = t;
            Ok(rec)
        }
        DomainId::D => {
            let p0 = curve.points[0];
            if (p0.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidParam(format!("radial curve must start on the unit circle, starts at {p0}")));
            }
            let mut z: Vec<C64> = curve.points[1..].to_vec();
            let mut theta = p0.arg();
            let mut times = vec![0.0];
            let mut drive = vec![theta];
            let mut t = 0.0;
            let mut prev = p0 / p0.norm();
            for k in 0..z.len() {
                let w = z[k];
                let r = w.norm();
                if r > 1.0 + tol {
                    return Err(Error::Numerical(format!("curve exits the disk at point {}", k + 1)));
                }
                if r >= 1.0 - tol {
                    return Err(Error::Numerical(format!("curve touches the circle at point {} (non-simple input)", k + 1)));
                }
                if r == 0.0 {
                    return Err(Error::Degenerate("curve reaches the target".into()));
                }
                let u = w / r;
                for v in z[k + 1..].iter_mut() {
                    *v = u * radial_slit_forward(*v / u, r);
                }
                theta += (u / prev).arg();
                prev = u;
                t += ((1.0 + r) * (1.0 + r) / (4.0 * r)).ln();
                times.push(t);
                drive.push(theta);
            }
            let p = SleParams::radial(f64::MIN_POSITIVE, t, t / (n - 1) as f64, 0);
            let mut rec = DrivingRecord::new(Engine::Radial, p, times, drive);
            rec.log_conformal_radius = rec.times.clone();
            rec.stop_time = t;
            Ok(rec)
        }
        d => Err(Error::InvalidParam(format!("extraction supports H and D, got {}", d.tag()))),
    }
}

fn segments_cross(a: C64, b: C64, c: C64, d: C64) -> bool {
    let cross = |o: C64, p: C64, q: C64| (p.re - o.re) * (q.im - o.im) - (p.im - o.im) * (q.re - o.re);
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Number of crossing pairs of non-adjacent polyline segments.
pub fn self_intersections(points: &[C64]) -> usize {
    let n = points.len();
    let mut count = 0;
    for i in 0..n.saturating_sub(1) {
        let (a, b) = (points[i], points[i + 1]);
        let (ax0, ax1) = (a.re.min(b.re), a.re.max(b.re));
        let (ay0, ay1) = (a.im.min(b.im), a.im.max(b.im));
        for j in i + 2..n - 1 {
            let (c, d) = (points[j], points[j + 1]);
            if c.re.max(d.re) < ax0 || c.re.min(d.re) > ax1 || c.im.max(d.im) < ay0 || c.im.min(d.im) > ay1 {
                continue;
            }
            if segments_cross(a, b, c, d) {
                count += 1;
            }
        }
    }
    count
}

/// Radial force term `Φ̂(u, z) = (Φ(u,z) + Φ(1/ū, z))/2` with `Φ(u, z) = z (u+z)/(u-z)`.
pub fn phi_hat(u: C64, z: C64) -> C64 {
    let phi = |u: C64, z: C64| z * (u + z) / (u - z);
    (phi(u, z) + phi(1.0 / u.conj(), z)) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn threshold_rule_examples() {
        let s = |rho, side, collided| ForceState { rho, side, collided };
        assert!(!continuation_threshold(&[s(-1.0, Lr::Left, true)]));
        assert!(!continuation_threshold(&[s(-1.0, Lr::Right, true)]));
        assert!(continuation_threshold(&[s(-1.5, Lr::Left, true), s(-1.0, Lr::Left, true)]));
        assert!(!continuation_threshold(&[s(-1.5, Lr::Left, true), s(2.0, Lr::Left, true)]));
        assert!(!continuation_threshold(&[s(-2.5, Lr::Left, false)]));
    }

    #[test]
    fn vertical_slit_trace_and_extract() {
        let n = 10_000;
        let dt = 1e-4;
        let times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
        let rec = DrivingRecord::new(Engine::Chordal, SleParams::chordal(1.0, 1.0, dt, 0), times, vec![0.0; n + 1]);
        let tr = trace(&rec, 100, TraceMode::Tilted).unwrap();
        assert!((tr.tip() - C64::new(0.0, 2.0)).norm() < 0.02);
        let line = CurveTrace {
            points: (0..=200).map(|k| C64::new(0.0, 2.0 * k as f64 / 200.0)).collect(),
            cap_times: vec![],
            domain: DomainId::H,
        };
        let ex = extract_driving(&line).unwrap();
        assert_relative_eq!(*ex.times.last().unwrap(), 1.0, epsilon = 1e-9);
        assert!(ex.driving.iter().all(|w| w.abs() < 0.02));
    }

    #[test]
    fn tilted_slit_matches_increment() {
        for (dw, dt) in [(0.03, 1e-3), (-0.01, 1e-4), (0.2, 1e-2)] {
            let m = SlitMap::tilted(dw, dt);
            assert_relative_eq!(m.critical(), dw, epsilon = 1e-12);
            if let SlitMap::Tilted { a, x1, x2 } = m {
                assert_relative_eq!(a * x1 + (1.0 - a) * x2, 0.0, epsilon = 1e-12);
                assert_relative_eq!((a * x1 * x1 + (1.0 - a) * x2 * x2) / 4.0, dt, max_relative = 1e-12);
            }
            let tip = m.eval(C64::new(m.critical(), 0.0));
            assert!(tip.im > 0.0);
        }
    }

    #[test]
    fn radial_noise_off_capacity() {
        let mut p = SleParams::radial(2.0, 1.0, 1e-3, 0);
        p.start = 0.0;
        p.noise = false;
        let r = drive_radial(&p).unwrap();
        assert!(r.driving.iter().all(|t| *t == 0.0));
        for (t, l) in r.times.iter().zip(&r.log_conformal_radius) {
            assert!((t - l).abs() < 1e-6);
        }
        let pr = probe_log_derivative(&r, 1e-4).unwrap();
        assert!((pr.last().unwrap() - 1.0).abs() < 1e-6);
        let tr = trace(&r, 100, TraceMode::Vertical).unwrap();
        assert_relative_eq!(tr.points[0].re, 1.0, epsilon = 1e-12);
        // constant driving grows a radial slit towards 0
        assert!(tr.points.iter().all(|z| z.im.abs() < 1e-9));
    }

    #[test]
    fn radial_starts_at_minus_i() {
        let r = drive_radial(&SleParams::radial(2.0, 0.05, 1e-3, 4)).unwrap();
        let tr = trace(&r, 1, TraceMode::Vertical).unwrap();
        assert!((tr.points[0] - C64::new(0.0, -1.0)).norm() < 1e-12);
        assert!((tr.points[1] - C64::new(0.0, -1.0)).norm() < 0.1);
    }

    #[test]
    fn phi_hat_on_circle() {
        let u = C64::from_polar(1.0, 0.7);
        let z = C64::new(0.2, -0.3);
        let phi = z * (u + z) / (u - z);
        assert!((phi_hat(u, z) - phi).norm() < 1e-14);
    }

    #[test]
    fn reverse_constant_driving() {
        let mut p = SleParams::chordal(2.0, 0.25, 1e-3, 1);
        p.noise = false;
        p.forces = vec![ForcePoint::new(0.0, ForceLoc::Bulk(C64::new(0.0, 0.0))), ForcePoint::new(0.0, ForceLoc::At(3.0))];
        let r = drive_reverse_chordal(&p).unwrap();
        let z = *r.force_tracks[0].last().unwrap();
        assert!((z - C64::new(0.0, 1.0)).norm() < 1e-12);
        let x = r.force_tracks[1].last().unwrap().re;
        assert_relative_eq!(x, (9.0_f64 - 1.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn resume_is_bit_identical() {
        let p = SleParams::chordal(2.0, 0.5, 1e-3, 9).with_force(1.0, ForceLoc::Plus);
        let mut rp = p.clone();
        rp.forces = vec![ForcePoint::new(2.0, ForceLoc::At(0.5))];
        rp.stop_rule = StopRule::Horizon;
        let half = drive_reverse_chordal(&rp).unwrap();
        let cont = resume(&half, 1.0).unwrap();
        let mut full_p = rp.clone();
        full_p.horizon = 1.0;
        let full = drive_reverse_chordal(&full_p).unwrap();
        assert_eq!(cont.driving, full.driving);
        let a = drive_chordal(&p).unwrap();
        let b = resume(&a, 1.0).unwrap();
        let mut q = p.clone();
        q.horizon = 1.0;
        assert_eq!(b.driving, drive_chordal(&q).unwrap().driving);
    }

    #[test]
    fn force_point_parse_roundtrip() {
        for s in ["-2.5@0+", "1@0-", "2@1.5", "3@0.25,0.5i"] {
            let f = ForcePoint::parse(s).unwrap();
            assert_eq!(ForcePoint::parse(&f.format()).unwrap(), f);
        }
        assert_eq!(ForcePoint::parse("-2.5@0+").unwrap().loc, ForceLoc::Plus);
    }
}
