//! Imaginary-geometry bookkeeping: κ-constants, flow-line boundary data,
//! height differences and the angle/weight dictionaries of radial flow lines.
//!
//! Radial data lives on ∂D parametrized by the clockwise angle `s ∈ [0, 2π]`
//! measured from `-i`. Jumps are recorded as the change of the boundary value
//! when the boundary is traversed clockwise (for H: from +∞ towards -∞).

use crate::error::{Error, Result};
use crate::sle::{DrivingRecord, Engine, ForceLoc, ForcePoint};
use crate::C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub use crate::sle::Constants as IgConstants;

const TAU: f64 = 2.0 * PI;
/// Distance below which a vertex counts as lying on the branch cut.
pub const CUT_TOL: f64 = 1e-12;

pub fn constants(kappa: f64) -> IgConstants {
    IgConstants::new(kappa)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Flow,
    Counterflow,
}

/// `(6-κ+Σρ)/(2√κ)` for flow lines (κ < 4), `(κ'-6-Σρ)/(2√κ')` for
/// counterflow lines (κ' > 4, passed as `kappa`).
pub fn alpha_from_weights(kappa: f64, rhos: &[f64], mode: Mode) -> Result<f64> {
    let s: f64 = rhos.iter().sum();
    match mode {
        Mode::Flow if kappa > 0.0 && kappa < 4.0 => Ok((6.0 - kappa + s) / (2.0 * kappa.sqrt())),
        Mode::Counterflow if kappa > 4.0 && kappa.is_finite() => Ok((kappa - 6.0 - s) / (2.0 * kappa.sqrt())),
        Mode::Flow => Err(Error::Range(format!("flow lines need kappa in (0,4), got {kappa}"))),
        Mode::Counterflow => Err(Error::Range(format!("counterflow lines need kappa' > 4, got {kappa}"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Geometry {
    /// The real line, coordinate `x`.
    Line,
    /// The unit circle, clockwise angle from `-i`.
    Circle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JumpKind {
    Force(usize),
    BranchCut,
    Seed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub at: f64,
    pub size: f64,
    pub kind: JumpKind,
}

/// Open interval `(start, end)` carrying `base + winding·s` (circle) or a
/// constant (line).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub base: f64,
    pub winding: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    pub geometry: Geometry,
    pub segments: Vec<Segment>,
    /// In clockwise order.
    pub jumps: Vec<Jump>,
    pub alpha: f64,
    pub beta: f64,
}

impl BoundaryData {
    /// Value at a boundary coordinate; `None` at jump points and outside.
    pub fn value_at(&self, s: f64) -> Option<f64> {
        self.segments
            .iter()
            .find(|g| g.start < s && s < g.end)
            .map(|g| g.base + g.winding * s)
    }

    /// Sum of all jumps plus the winding accumulated over one clockwise turn.
    /// Zero iff the data is single valued around ∂D.
    pub fn total_jump(&self) -> f64 {
        let j: f64 = self.jumps.iter().map(|j| j.size).sum();
        match self.geometry {
            Geometry::Circle => j + self.segments.first().map_or(0.0, |g| g.winding) * TAU,
            Geometry::Line => j,
        }
    }

    pub fn force_jumps(&self) -> impl Iterator<Item = &Jump> {
        self.jumps.iter().filter(|j| matches!(j.kind, JumpKind::Force(_)))
    }

    /// Bounded harmonic extension to H of line data.
    pub fn harmonic_extension_h(&self, z: C64) -> Result<f64> {
        if self.geometry != Geometry::Line {
            return Err(Error::InvalidParam("harmonic extension is for line data".into()));
        }
        if z.im <= 0.0 {
            return Err(Error::OutsideDomain(format!("{z}"), "open upper half-plane"));
        }
        let ang = |x: f64| -> f64 {
            if x.is_infinite() {
                if x > 0.0 {
                    0.0
                } else {
                    PI
                }
            } else {
                (z - x).arg()
            }
        };
        Ok(self.segments.iter().map(|g| g.base * (ang(g.end) - ang(g.start)).abs() / PI).sum())
    }
}

fn clockwise_from_minus_i(angle: f64) -> f64 {
    (-PI / 2.0 - angle).rem_euclid(TAU)
}

/// Boundary values of `h + α arg + β log|·|` on ∂D for the radial coupling.
///
/// Force locations are absolute angles (`At`) or the one-sided markers at
/// `-i`: `Minus` is `(-i)^-` (start of the clockwise sweep), `Plus` is
/// `(-i)^+` (its end). The branch cut is the ray from 0 at angle
/// `branch_cut`.
pub fn radial_boundary_data(
    c: &IgConstants,
    alpha: f64,
    beta: f64,
    forces: &[ForcePoint],
    branch_cut: f64,
    mode: Mode,
) -> Result<BoundaryData> {
    let (base, unit) = match mode {
        Mode::Flow => (-c.lambda, -c.lambda),
        Mode::Counterflow => (c.lambda_prime, c.lambda_prime),
    };
    let mut jumps = Vec::with_capacity(forces.len() + 1);
    let mut last = f64::NEG_INFINITY;
    for (i, f) in forces.iter().enumerate() {
        let s = match f.loc {
            ForceLoc::Minus => 0.0,
            ForceLoc::Plus => TAU,
            ForceLoc::At(a) => {
                let s = clockwise_from_minus_i(a);
                if s == 0.0 {
                    return Err(Error::InvalidParam(format!("force point {i} sits on -i; use a one-sided marker")));
                }
                s
            }
            ForceLoc::Bulk(_) => return Err(Error::InvalidParam(format!("force point {i} is interior"))),
        };
        if s < last || (s == last && s != 0.0 && s != TAU) {
            return Err(Error::InvalidParam(format!("force points must be ordered clockwise from -i; point {i} is out of order")));
        }
        last = s;
        jumps.push(Jump { at: s, size: unit * f.rho, kind: JumpKind::Force(i) });
    }
    let cut = match clockwise_from_minus_i(branch_cut) {
        s if s == 0.0 => TAU,
        s => s,
    };
    if jumps.iter().any(|j| j.at == cut && cut != TAU) {
        return Err(Error::InvalidParam("branch cut coincides with a force point".into()));
    }
    jumps.push(Jump { at: cut, size: TAU * alpha, kind: JumpKind::BranchCut });
    jumps.sort_by(|a, b| a.at.total_cmp(&b.at));
    let mut segments = Vec::new();
    let mut acc = base;
    let mut start = 0.0;
    for j in &jumps {
        if j.at == 0.0 {
            acc += j.size;
            continue;
        }
        if j.at > start {
            segments.push(Segment { start, end: j.at, base: acc, winding: -c.chi });
            start = j.at;
        }
        acc += j.size;
    }
    if start < TAU {
        segments.push(Segment { start, end: TAU, base: acc, winding: -c.chi });
    }
    Ok(BoundaryData { geometry: Geometry::Circle, segments, jumps, alpha, beta })
}

/// Flow-line boundary data of the chordal coupling at step `k` of a forward
/// chordal record, in `g_t` coordinates: `-λ(1+Σρ^L)` left of the seed and
/// `λ(1+Σρ^R)` right of it, summed over the force points passed so far.
pub fn chordal_flow_boundary_data(rec: &DrivingRecord, k: usize) -> Result<BoundaryData> {
    if rec.engine != Engine::Chordal {
        return Err(Error::InvalidParam(format!("need a forward chordal record, got {}", rec.engine.tag())));
    }
    if k >= rec.len() {
        return Err(Error::InvalidParam(format!("step {k} beyond record of length {}", rec.len())));
    }
    let c = rec.params.constants();
    let w = rec.driving[k];
    let start = rec.params.start;
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (i, f) in rec.params.forces.iter().enumerate() {
        let v = rec.force_tracks[i].get(k).map_or(f64::NAN, |z| z.re);
        let is_right = match f.loc {
            ForceLoc::Plus => true,
            ForceLoc::Minus => false,
            ForceLoc::At(x) => x > start,
            ForceLoc::Bulk(_) => return Err(Error::InvalidParam(format!("force point {i} is interior"))),
        };
        if is_right {
            right.push((v.max(w), f.rho, i));
        } else {
            left.push((v.min(w), f.rho, i));
        }
    }
    right.sort_by(|a, b| a.0.total_cmp(&b.0));
    left.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut segments = Vec::new();
    let mut jumps = Vec::new();
    // right side, ascending
    let mut acc = 0.0;
    let mut x0 = w;
    for &(v, rho, i) in &right {
        if v > x0 {
            segments.push(Segment { start: x0, end: v, base: c.lambda * (1.0 + acc), winding: 0.0 });
            x0 = v;
        }
        acc += rho;
        jumps.push(Jump { at: v, size: -c.lambda * rho, kind: JumpKind::Force(i) });
    }
    segments.push(Segment { start: x0, end: f64::INFINITY, base: c.lambda * (1.0 + acc), winding: 0.0 });
    let mut lsegs = Vec::new();
    let mut acc = 0.0;
    let mut x1 = w;
    for &(v, rho, i) in &left {
        if v < x1 {
            lsegs.push(Segment { start: v, end: x1, base: -c.lambda * (1.0 + acc), winding: 0.0 });
            x1 = v;
        }
        acc += rho;
        jumps.push(Jump { at: v, size: -c.lambda * rho, kind: JumpKind::Force(i) });
    }
    lsegs.push(Segment { start: f64::NEG_INFINITY, end: x1, base: -c.lambda * (1.0 + acc), winding: 0.0 });
    lsegs.reverse();
    lsegs.extend(segments);
    jumps.push(Jump { at: w, size: -2.0 * c.lambda, kind: JumpKind::Seed });
    // clockwise on H runs from +∞ to -∞
    jumps.sort_by(|a, b| b.at.total_cmp(&a.at));
    Ok(BoundaryData { geometry: Geometry::Line, segments: lsegs, jumps, alpha: 0.0, beta: 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interaction {
    Cross,
    Merge,
    Bounce,
    Invalid,
}

impl Interaction {
    pub fn tag(&self) -> &'static str {
        match self {
            Interaction::Cross => "cross",
            Interaction::Merge => "merge",
            Interaction::Bounce => "bounce",
            Interaction::Invalid => "invalid",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightDifference {
    pub value: f64,
    pub class: Interaction,
    /// Set when the discrete traces do not determine the crossing count.
    pub ambiguous: bool,
}

/// `(-πχ,0)` cross, `0` merge, `(0, 2λ-πχ)` bounce, anything else invalid.
pub fn classify_height_difference(d12: f64, c: &IgConstants) -> HeightDifference {
    let lo = -PI * c.chi;
    let hi = 2.0 * c.lambda - PI * c.chi;
    let class = if d12 == 0.0 {
        Interaction::Merge
    } else if d12 > lo && d12 < 0.0 {
        Interaction::Cross
    } else if d12 > 0.0 && d12 < hi {
        Interaction::Bounce
    } else {
        Interaction::Invalid
    };
    HeightDifference { value: d12, class, ambiguous: false }
}

/// `D12 = 2π(α-χ)·n_cut + (θ2-θ1)χ + 2πχ·w_rel`, with `n_cut` the signed
/// number of branch-cut crossings and `w_rel` the relative winding in turns.
pub fn height_difference(c: &IgConstants, alpha: f64, theta1: f64, theta2: f64, cut_crossings: i64, relative_winding: f64) -> f64 {
    TAU * (alpha - c.chi) * cut_crossings as f64 + (theta2 - theta1) * c.chi + TAU * c.chi * relative_winding
}

/// Sum of the turning angles of a polyline.
pub fn winding(points: &[C64]) -> f64 {
    points
        .windows(3)
        .filter_map(|w| {
            let (a, b) = (w[1] - w[0], w[2] - w[1]);
            (a.norm() > 0.0 && b.norm() > 0.0).then(|| (b / a).arg())
        })
        .sum()
}

fn orient(o: C64, p: C64, q: C64) -> f64 {
    (p.re - o.re) * (q.im - o.im) - (p.im - o.im) * (q.re - o.re)
}

/// Signed crossings of the ray `{t e^{i·angle}: t > 0}` by a polyline
/// (counterclockwise positive), and whether some vertex lies on the ray.
pub fn cut_crossings(points: &[C64], angle: f64) -> (i64, bool) {
    let d = C64::from_polar(1.0, angle);
    let o = C64::new(0.0, 0.0);
    let mut n = 0;
    let mut touched = false;
    let on_ray = |p: C64| orient(o, d, p).abs() <= CUT_TOL * p.norm().max(1.0) && (p.re * d.re + p.im * d.im) > 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if on_ray(a) || on_ray(b) {
            touched = true;
            continue;
        }
        let sa = orient(o, d, a);
        let sb = orient(o, d, b);
        if sa * sb < 0.0 {
            // where the segment meets the line through the ray
            let t = sa / (sa - sb);
            let p = a + (b - a) * t;
            if p.re * d.re + p.im * d.im > 0.0 {
                n += if sa < 0.0 { 1 } else { -1 };
            }
        }
    }
    (n, touched)
}

/// Height difference of two discrete flow lines meeting at `eta1[i1]` and
/// `eta2[i2]`: cut crossings are counted for `η1` relative to `η2` and the
/// winding difference is taken in turns.
pub fn height_difference_from_traces(
    c: &IgConstants,
    alpha: f64,
    theta1: f64,
    theta2: f64,
    eta1: &[C64],
    eta2: &[C64],
    branch_cut: f64,
) -> HeightDifference {
    let (n1, t1) = cut_crossings(eta1, branch_cut);
    let (n2, t2) = cut_crossings(eta2, branch_cut);
    let w = (winding(eta2) - winding(eta1)) / TAU;
    let d = height_difference(c, alpha, theta1, theta2, n1 - n2, w);
    let mut hd = classify_height_difference(d, c);
    hd.ambiguous = t1 || t2;
    hd
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialWeights {
    pub rho_minus: f64,
    pub rho_plus: f64,
    pub rho: f64,
}

fn check_kappa(c: &IgConstants) -> Result<()> {
    if c.kappa > 0.0 && c.kappa < 4.0 {
        Ok(())
    } else {
        Err(Error::Range(format!("flow-line angles need kappa in (0,4), got {}", c.kappa)))
    }
}

/// `ρ = κ - 6 + 2πα/λ`.
pub fn radial_rho(c: &IgConstants, alpha: f64) -> f64 {
    c.kappa - 6.0 + TAU * alpha / c.lambda
}

/// Inverse of [`radial_rho`].
pub fn alpha_of_rho(c: &IgConstants, rho: f64) -> f64 {
    (rho - c.kappa + 6.0) * c.lambda / TAU
}

/// Angle-`θ` flow line from `-i` is radial SLE_κ(-θχ/λ; ρ+θχ/λ).
pub fn angle_to_radial_weights(theta: f64, alpha: f64, kappa: f64) -> Result<RadialWeights> {
    let c = constants(kappa);
    check_kappa(&c)?;
    let lo = TAU * (1.0 - alpha / c.chi);
    let hi = 2.0 * c.lambda / c.chi;
    if !(theta > lo && theta < hi) {
        return Err(Error::Range(format!("angle {theta} outside 2π(1-α/χ) = {lo} < θ < 2λ/χ = {hi}")));
    }
    let rho = radial_rho(&c, alpha);
    let s = theta * c.chi / c.lambda;
    Ok(RadialWeights { rho_minus: -s, rho_plus: rho + s, rho })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComponentClass {
    /// The component cut out at the first self-touching (or containing 0).
    Distinguished,
    /// Other components touching the initial boundary arc.
    BoundaryTouching,
    /// Components with no boundary arc.
    Interior,
}

impl ComponentClass {
    pub fn tag(&self) -> &'static str {
        match self {
            ComponentClass::Distinguished => "distinguished",
            ComponentClass::BoundaryTouching => "boundary_touching",
            ComponentClass::Interior => "interior",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "distinguished" => Ok(ComponentClass::Distinguished),
            "boundary_touching" => Ok(ComponentClass::BoundaryTouching),
            "interior" => Ok(ComponentClass::Interior),
            _ => Err(Error::InvalidParam(format!("unknown component class '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Given {
    Eta1,
    Eta2,
}

/// Chordal SLE_κ(left; right) weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChordalWeights {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// Conditional law of one radial flow line given the other in a component of
/// the complement, for `θ2 ≤ θ1` admissible and `ρ = κ-6+2πα/λ`.
pub fn conditional_law_weights(
    c: &IgConstants,
    theta1: f64,
    theta2: f64,
    rho: f64,
    class: ComponentClass,
    given: Given,
) -> Result<ChordalWeights> {
    check_kappa(c)?;
    let alpha = alpha_of_rho(c, rho);
    let lo = TAU * (1.0 - alpha / c.chi);
    let hi = 2.0 * c.lambda / c.chi;
    if !(lo < theta2 && theta2 <= theta1 && theta1 < hi) {
        return Err(Error::Range(format!("need 2π(1-α/χ) = {lo} < θ2 ≤ θ1 < 2λ/χ = {hi}, got θ1 = {theta1}, θ2 = {theta2}")));
    }
    if theta1 - theta2 >= TAU * (alpha / c.chi - 1.0) {
        return Err(Error::Range(format!("θ1-θ2 = {} must be below 2π(α/χ-1)", theta1 - theta2)));
    }
    let r = c.chi / c.lambda;
    let d = (theta1 - theta2) * r - 2.0;
    let (a, b) = match (given, class) {
        (Given::Eta1, ComponentClass::Distinguished) => (vec![d], vec![rho + theta2 * r, -theta1 * r]),
        (Given::Eta1, ComponentClass::BoundaryTouching) => (vec![d], vec![rho + theta2 * r]),
        (Given::Eta1, ComponentClass::Interior) => (vec![d], vec![rho + (theta2 - theta1) * r]),
        (Given::Eta2, ComponentClass::Distinguished) => (vec![-theta1 * r, rho + theta2 * r], vec![d]),
        (Given::Eta2, ComponentClass::BoundaryTouching) => (vec![-theta1 * r], vec![d]),
        (Given::Eta2, ComponentClass::Interior) => (vec![rho + (theta2 - theta1) * r], vec![d]),
    };
    Ok(ChordalWeights { left: a, right: b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sle::{drive_chordal, SleParams};

    #[test]
    fn constants_examples() {
        let c = constants(4.0);
        assert!(c.chi.abs() < 1e-15);
        assert!((c.lambda - PI / 2.0).abs() < 1e-15);
        let c = constants(2.0);
        assert!((c.chi - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((c.lambda - PI / 2f64.sqrt()).abs() < 1e-12);
        assert!((c.lambda_prime - c.lambda * c.kappa / 4.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_examples() {
        assert!((alpha_from_weights(2.0, &[], Mode::Flow).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(alpha_from_weights(3.0, &[-3.0], Mode::Flow).unwrap(), 0.0);
        let (g, w) = (1.2f64, 0.7);
        let a = alpha_from_weights(g * g, &[w - 2.0], Mode::Flow).unwrap();
        assert!((a - (4.0 - g * g + w) / (2.0 * g)).abs() < 1e-12);
        assert!(alpha_from_weights(4.0, &[], Mode::Flow).is_err());
        assert!(alpha_from_weights(4.0, &[], Mode::Counterflow).is_err());
        assert!(alpha_from_weights(8.0, &[], Mode::Counterflow).is_ok());
    }

    #[test]
    fn radial_data_single_valued_at_alpha_chi() {
        let c = constants(2.0);
        let bd = radial_boundary_data(&c, c.chi, 0.3, &[], 0.0, Mode::Flow).unwrap();
        assert!(bd.total_jump().abs() < 1e-12);
        assert!((bd.value_at(1e-9).unwrap() + c.lambda).abs() < 1e-6);
    }

    #[test]
    fn radial_data_two_forces() {
        let c = constants(2.0);
        let f = [ForcePoint::new(0.5, ForceLoc::Minus), ForcePoint::new(-0.7, ForceLoc::Plus)];
        let bd = radial_boundary_data(&c, 1.0, 0.0, &f, PI / 2.0, Mode::Flow).unwrap();
        // cut at i sits at clockwise angle π
        let v = bd.value_at(0.5).unwrap();
        assert!((v - (-c.lambda - c.lambda * 0.5 - c.chi * 0.5)).abs() < 1e-12);
        let v = bd.value_at(4.0).unwrap();
        assert!((v - (-c.lambda - c.lambda * 0.5 + TAU - c.chi * 4.0)).abs() < 1e-12);
        let expect = -c.lambda * 0.5 + c.lambda * 0.7 + TAU - TAU * c.chi;
        assert!((bd.total_jump() - expect).abs() < 1e-12);
        let cf = radial_boundary_data(&c, 1.0, 0.0, &f, PI / 2.0, Mode::Counterflow).unwrap();
        assert!((cf.value_at(0.5).unwrap() - (c.lambda_prime + c.lambda_prime * 0.5 - c.chi * 0.5)).abs() < 1e-12);
        let bad = [ForcePoint::new(1.0, ForceLoc::Plus), ForcePoint::new(1.0, ForceLoc::At(0.0))];
        assert!(radial_boundary_data(&c, 1.0, 0.0, &bad, PI / 2.0, Mode::Flow).is_err());
    }

    #[test]
    fn chordal_data_at_start() {
        let p = SleParams::chordal(2.0, 0.0, 1e-3, 1);
        let rec = drive_chordal(&p).unwrap();
        let bd = chordal_flow_boundary_data(&rec, 0).unwrap();
        let c = constants(2.0);
        assert_eq!(bd.value_at(-1.0), Some(-c.lambda));
        assert_eq!(bd.value_at(1.0), Some(c.lambda));
        let p = SleParams::chordal(2.0, 0.0, 1e-3, 1).with_force(0.8, ForceLoc::At(1.0)).with_force(-0.5, ForceLoc::At(2.0));
        let rec = drive_chordal(&p).unwrap();
        let bd = chordal_flow_boundary_data(&rec, 0).unwrap();
        assert_eq!(bd.value_at(0.5), Some(c.lambda));
        assert!((bd.value_at(1.5).unwrap() - c.lambda * 1.8).abs() < 1e-12);
        assert!((bd.value_at(3.0).unwrap() - c.lambda * 1.3).abs() < 1e-12);
    }

    #[test]
    fn classification_examples() {
        let c = constants(2.0);
        assert_eq!(classify_height_difference(0.0, &c).class, Interaction::Merge);
        assert_eq!(classify_height_difference(-PI * c.chi / 2.0, &c).class, Interaction::Cross);
        assert_eq!(classify_height_difference(2.0 * c.lambda - PI * c.chi, &c).class, Interaction::Invalid);
        assert_eq!(classify_height_difference(-PI * c.chi, &c).class, Interaction::Invalid);
        assert_eq!(classify_height_difference(c.lambda, &c).class, Interaction::Bounce);
    }

    #[test]
    fn depicted_height_difference() {
        let c = constants(2.0);
        let d = height_difference(&c, 1.5, 0.4, 0.1, 1, 0.0);
        assert!((d - (TAU * (1.5 - c.chi) + (0.1 - 0.4) * c.chi)).abs() < 1e-12);
    }

    #[test]
    fn winding_and_crossings() {
        let sq = [C64::new(1.0, -1.0), C64::new(1.0, 1.0), C64::new(-1.0, 1.0), C64::new(-1.0, -1.0), C64::new(1.0, -1.0), C64::new(1.0, 1.0)];
        assert!((winding(&sq) - TAU).abs() < 1e-12);
        assert_eq!(cut_crossings(&sq, 0.0), (2, false));
        assert!(cut_crossings(&sq, PI / 4.0).1);
        let back: Vec<C64> = sq.iter().rev().copied().collect();
        assert_eq!(cut_crossings(&back, 0.0).0, -2);
    }

    #[test]
    fn weights_at_zero_angle() {
        let (g, w) = (1.0f64, 0.25);
        let a = (4.0 - g * g + w) / (2.0 * g);
        let r = angle_to_radial_weights(0.0, a, g * g).unwrap();
        assert_eq!(r.rho_minus, 0.0);
        assert!((r.rho_plus - (w - 2.0)).abs() < 1e-12);
        let c = constants(g * g);
        assert!(angle_to_radial_weights(2.0 * c.lambda / c.chi, a, g * g).is_err());
        let cw = conditional_law_weights(&c, 0.3, 0.3, r.rho, ComponentClass::Interior, Given::Eta1).unwrap();
        assert_eq!(cw.left, vec![-2.0]);
        assert!(ComponentClass::parse("outer").is_err());
    }
}
