//! Conformal welding by quantum length.
//!
//! Arcs are parameterized by quantum length, matched into a monotone pairing
//! and glued with a zipper: one hydrodynamic tilted slit per matched length
//! increment. The experiments built on top compare welded interfaces with
//! directly simulated radial SLE, and probe the welded field at its bulk mark.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::conformal::{ConfMap, DomainId, GridSpec, MoebiusMap};
use crate::error::{Error, Result};
use crate::gff::{FieldSample, ScalarField};
use crate::liouville::{Insertion, LiouvilleField, LiouvilleSampler, LiouvilleSpec, Loc};
use crate::qsurface::{
    ChainMode, LengthDensity, LengthFilter, M11Sampler, QuantumSurface, SurfaceKind, ThinChainConfig, ThinChainSampler,
    TriangleSampler,
};
use crate::rng::Streams;
use crate::sle::{self, CurveTrace, DrivingRecord, ForceLoc, SleParams, SlitMap, TraceMode};
use crate::stats;
use crate::{check_gamma, q_of, C64};

/// Minimum number of zipper steps.
pub const MIN_STEPS: usize = 64;
/// Refinement levels tried before a welding is declared unconverged.
pub const MAX_REFINEMENTS: usize = 3;
/// Midpoint residuals below this fraction of the interface diameter never
/// trigger refinement.
pub const RESIDUAL_FLOOR: f64 = 0.05;

/// Length tolerance coupled to the grid resolution.
pub fn delta_weld(grid: &GridSpec) -> f64 {
    (10.0 / ((grid.nx * grid.ny) as f64).sqrt()).max(1e-3)
}

// ------------------------------------------------------------ length tables

/// An oriented interval `from -> to` of a boundary row at height `y`.
/// Infinite ends are clamped to the covered range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArcSpec {
    pub y: f64,
    pub from: f64,
    pub to: f64,
}

/// Cumulative quantum length along an arc, measured from its start.
#[derive(Clone, Debug)]
pub struct LengthTable {
    pub arc: ArcSpec,
    pub knots: Vec<f64>,
    pub cum: Vec<f64>,
    density: LengthDensity,
    origin: f64,
    dir: f64,
}

impl LengthTable {
    pub fn new(density: LengthDensity, arc: ArcSpec, n_knots: usize) -> Result<Self> {
        if n_knots < 2 {
            return Err(Error::InvalidParam("a length table needs at least two knots".into()));
        }
        let (lo, hi) = density.covered();
        let start = arc.from.clamp(lo, hi);
        let end = arc.to.clamp(lo, hi);
        if start == end {
            return Err(Error::Degenerate(format!("arc [{}, {}] is empty on the covered range", arc.from, arc.to)));
        }
        let dir = (end - start).signum();
        let origin = density.cumulative(start);
        let total = dir * (density.cumulative(end) - origin);
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degenerate(format!("arc length {total} is not positive")));
        }
        let m = (n_knots - 1) as f64;
        let knots: Vec<f64> = (0..n_knots)
            .map(|k| if k + 1 == n_knots { end } else { start + (end - start) * k as f64 / m })
            .collect();
        let mut cum: Vec<f64> = knots.iter().map(|&x| dir * (density.cumulative(x) - origin)).collect();
        cum[0] = 0.0;
        *cum.last_mut().unwrap() = total;
        Ok(LengthTable { arc: ArcSpec { y: arc.y, from: start, to: end }, knots, cum, density, origin, dir })
    }

    pub fn total(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn density(&self) -> &LengthDensity {
        &self.density
    }

    /// Length from the start of the arc to `x`.
    pub fn length_to(&self, x: f64) -> f64 {
        self.dir * (self.density.cumulative(x) - self.origin)
    }

    /// The point at length `u` from the start.
    pub fn point_at(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, self.total());
        self.density.point_at(self.origin + self.dir * u)
    }

    /// The same arc cut short at length `u`.
    pub fn truncated(&self, u: f64) -> Result<LengthTable> {
        let to = self.point_at(u);
        LengthTable::new(self.density.clone(), ArcSpec { y: self.arc.y, from: self.arc.from, to }, self.knots.len())
    }
}

/// The same arc read from its other end.
pub fn reversed(t: &LengthTable) -> Result<LengthTable> {
    LengthTable::new(t.density.clone(), ArcSpec { y: t.arc.y, from: t.arc.to, to: t.arc.from }, t.knots.len())
}

/// Boundary arc `arc` of an embedded surface, oriented from its first vertex.
pub fn surface_arc(surface: &QuantumSurface, arc: usize) -> Result<ArcSpec> {
    let inf = f64::INFINITY;
    let spec = match (surface.kind, surface.domain, arc) {
        (SurfaceKind::Triangle, DomainId::S, 0) => ArcSpec { y: PI, from: inf, to: -inf },
        (SurfaceKind::Triangle, DomainId::S, 1) => ArcSpec { y: 0.0, from: inf, to: 0.0 },
        (SurfaceKind::Triangle, DomainId::S, 2) => ArcSpec { y: 0.0, from: -inf, to: 0.0 },
        (SurfaceKind::Disk2, DomainId::S, 0) => ArcSpec { y: 0.0, from: -inf, to: inf },
        (SurfaceKind::Disk2, DomainId::S, 1) => ArcSpec { y: PI, from: -inf, to: inf },
        (SurfaceKind::M11, DomainId::H, 0) => ArcSpec { y: 0.0, from: -inf, to: inf },
        (k, d, a) => {
            return Err(Error::InvalidParam(format!("no arc {a} on an embedded {} in {}", k.tag(), d.tag())));
        }
    };
    Ok(spec)
}

/// Cumulative length table of one boundary arc of an embedded surface.
pub fn length_parameterize(surface: &QuantumSurface, arc: usize, n_knots: usize) -> Result<LengthTable> {
    let field = surface.field.as_ref().ok_or_else(|| Error::InvalidParam("surface has no embedding field".into()))?;
    let spec = surface_arc(surface, arc)?;
    let eps = if surface.eps > 0.0 { surface.eps } else { 2.0 * field.grid.hx().max(field.grid.hy()) };
    let d = LengthDensity::new(field, surface.gamma, spec.y, eps)?;
    LengthTable::new(d, spec, n_knots)
}

// ------------------------------------------------------------ welding maps

/// Monotone pairing of two arcs by proportional quantum length.
#[derive(Clone, Debug)]
pub struct WeldingMap {
    pub a: LengthTable,
    pub b: LengthTable,
    /// `|T_A - T_B| / max(T_A, T_B)`.
    pub mismatch: f64,
    pub tolerance: f64,
    /// Pairs at the union of both tables' knots.
    pub pairs: Vec<(f64, f64)>,
}

pub fn weld_arcs(a: &LengthTable, b: &LengthTable, delta: f64) -> Result<WeldingMap> {
    let (ta, tb) = (a.total(), b.total());
    let mismatch = (ta - tb).abs() / ta.max(tb);
    if !(mismatch <= delta) {
        return Err(Error::LengthMismatch { mismatch, tolerance: delta });
    }
    let mut fr: Vec<f64> = a.cum.iter().map(|u| u / ta).chain(b.cum.iter().map(|u| u / tb)).collect();
    fr.sort_by(f64::total_cmp);
    fr.dedup_by(|x, y| (*x - *y).abs() <= 1e-15);
    let mut m = WeldingMap { a: a.clone(), b: b.clone(), mismatch, tolerance: delta, pairs: Vec::new() };
    m.pairs = fr.iter().map(|&f| m.pair_at(f)).collect();
    Ok(m)
}

impl WeldingMap {
    /// The pair at fraction `f` of both arcs.
    pub fn pair_at(&self, f: f64) -> (f64, f64) {
        (self.a.point_at(f * self.a.total()), self.b.point_at(f * self.b.total()))
    }

    /// `n + 1` pairs at equal length increments.
    pub fn increments(&self, n: usize) -> Vec<(f64, f64)> {
        (0..=n).map(|k| self.pair_at(k as f64 / n as f64)).collect()
    }

    /// Largest relative length disagreement between paired points.
    pub fn pair_mismatch(&self) -> f64 {
        let t = self.a.total().max(self.b.total());
        self.pairs.iter().map(|&(s, u)| (self.a.length_to(s) - self.b.length_to(u)).abs() / t).fold(0.0, f64::max)
    }
}

// ----------------------------------------------------------------- zipper

/// `z ↦ shift + S(z - shift)` for a hydrodynamic tilted slit `S`: glues
/// `[x, b]` to `[b, y]` along a segment with tip at the image of `b`.
#[derive(Clone, Copy, Debug)]
pub struct ZipStep {
    pub shift: f64,
    pub slit: SlitMap,
}

impl ZipStep {
    pub fn glue(x: f64, b: f64, y: f64) -> Result<ZipStep> {
        if !(x < b && b < y) {
            return Err(Error::Numerical(format!("zipper lost the ordering {x} < {b} < {y}")));
        }
        let a = (y - b) / (y - x);
        let s = a * y + (1.0 - a) * x;
        Ok(ZipStep { shift: s, slit: SlitMap::Tilted { a, x1: y - s, x2: x - s } })
    }

    pub fn eval(&self, z: C64) -> C64 {
        self.shift + self.slit.eval(z - self.shift)
    }

    pub fn deriv(&self, z: C64) -> C64 {
        match self.slit {
            SlitMap::Tilted { a, x1, x2 } => {
                let u = z - self.shift;
                self.slit.eval(u) * (a / (u - x1) + (1.0 - a) / (u - x2))
            }
            SlitMap::Vertical { .. } => {
                let u = z - self.shift;
                u / self.slit.eval(u)
            }
        }
    }

    pub fn inverse(&self, w: C64) -> Result<C64> {
        Ok(self.shift + self.slit.inverse(w - self.shift)?)
    }
}

/// Output of the zipper. `interface` runs from the base (last glued pair) to
/// the tip (first glued pair) with capacity times seen from the base.
#[derive(Clone, Debug)]
pub struct Welding {
    pub steps: Vec<ZipStep>,
    pub interface: CurveTrace,
    /// Per-increment mismatch of the paired midpoints, relative to the
    /// interface diameter.
    pub residuals: Vec<f64>,
    pub residual: f64,
    pub base: f64,
    pub refinements: usize,
}

impl Welding {
    pub fn tip(&self) -> C64 {
        *self.interface.points.last().unwrap()
    }

    /// Uniformizing map from the zipper plane to the welded plane.
    pub fn forward(&self, z: C64) -> C64 {
        self.steps.iter().fold(z, |w, s| s.eval(w))
    }

    /// Preimage of `w` and `log|dz/dw|` there.
    pub fn pull(&self, w: C64) -> Result<(C64, f64)> {
        let mut z = w;
        let mut ld = 0.0;
        for s in self.steps.iter().rev() {
            z = s.inverse(z)?;
            ld -= s.deriv(z).norm().ln();
        }
        Ok((z, ld))
    }

    pub fn diameter(&self) -> f64 {
        diameter(&self.interface.points)
    }
}

fn diameter(p: &[C64]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, a) in p.iter().enumerate() {
        for b in &p[i + 1..] {
            d = d.max((a - b).norm());
        }
    }
    d
}

/// Zips the pairs `(xs[k], ys[k])` in order around the initial base `base`.
/// `mids[k-1]` lies between pairs `k-1` and `k` on both sides.
pub fn zip(xs: &[f64], ys: &[f64], mids: &[(f64, f64)], base: f64) -> Result<Welding> {
    let n = xs.len();
    if n != ys.len() || n == 0 || mids.len() + 1 != n {
        return Err(Error::InvalidParam("zipper needs matching pair and midpoint lists".into()));
    }
    let mut rx = xs.to_vec();
    let mut ry = ys.to_vec();
    let mut mx: Vec<C64> = mids.iter().map(|m| C64::new(m.0, 0.0)).collect();
    let mut my: Vec<C64> = mids.iter().map(|m| C64::new(m.1, 0.0)).collect();
    let mut curve: Vec<C64> = Vec::with_capacity(n + 1);
    let mut caps = Vec::with_capacity(n);
    let mut steps = Vec::with_capacity(n);
    let mut b = base;
    for k in 0..n {
        let st = ZipStep::glue(rx[k], b, ry[k])?;
        for p in curve.iter_mut() {
            *p = st.eval(*p);
        }
        curve.push(st.eval(C64::new(b, 0.0)));
        for j in k + 1..n {
            rx[j] = st.eval(C64::new(rx[j], 0.0)).re;
            ry[j] = st.eval(C64::new(ry[j], 0.0)).re;
        }
        for p in mx.iter_mut().chain(my.iter_mut()) {
            *p = st.eval(*p);
        }
        b = st.shift;
        caps.push(st.slit.hcap());
        steps.push(st);
    }
    curve.push(C64::new(b, 0.0));
    curve.reverse();
    if curve.iter().any(|p| !(p.re.is_finite() && p.im.is_finite())) {
        return Err(Error::Numerical("zipper produced a non-finite interface point".into()));
    }
    let mut cap_times = vec![0.0];
    for c in caps.iter().rev() {
        cap_times.push(cap_times.last().unwrap() + c);
    }
    let diam = diameter(&curve).max(1e-300);
    let residuals: Vec<f64> = mx.iter().zip(&my).map(|(a, b)| (a - b).norm() / diam).collect();
    let residual = residuals.iter().cloned().fold(0.0, f64::max);
    Ok(Welding {
        steps,
        interface: CurveTrace { points: curve, cap_times, domain: DomainId::H },
        residuals,
        residual,
        base: b,
        refinements: 0,
    })
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

/// Zipper welding of `map`, with arc A placed on the negative side and arc B
/// on the positive side of the zipper plane by the two charts. The first
/// pair must straddle `base`.
pub fn solve_welding(
    map: &WeldingMap,
    chart_a: &dyn Fn(f64) -> f64,
    chart_b: &dyn Fn(f64) -> f64,
    base: f64,
    n_steps: usize,
) -> Result<Welding> {
    if n_steps < MIN_STEPS {
        return Err(Error::InvalidParam(format!("n_steps = {n_steps} is below {MIN_STEPS}")));
    }
    let mut n = n_steps;
    let mut last = 0.0;
    for level in 0..=MAX_REFINEMENTS {
        let pairs = map.increments(n);
        let xs: Vec<f64> = pairs.iter().map(|p| chart_a(p.0)).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| chart_b(p.1)).collect();
        let mids: Vec<(f64, f64)> = (1..=n)
            .map(|k| {
                let p = map.pair_at((k as f64 - 0.5) / n as f64);
                (chart_a(p.0), chart_b(p.1))
            })
            .collect();
        // pairs that start exactly at the vertex are implicit in the first slit
        let skip = xs.iter().zip(&ys).take_while(|(x, y)| !(**x < base && base < **y)).count().min(n);
        let mut w = zip(&xs[skip..], &ys[skip..], &mids[skip..], base)?;
        w.refinements = level;
        let med = median(&w.residuals);
        if !(w.residual > 10.0 * med && w.residual > RESIDUAL_FLOOR) {
            return Ok(w);
        }
        last = w.residual;
        n *= 2;
    }
    Err(Error::NoConvergence { iterations: MAX_REFINEMENTS, residual: last })
}

// ------------------------------------------------------------ welded fields

/// `ψ = φ ∘ f⁻¹ + Q log|(f⁻¹)'|` for `f = post ∘ welding ∘ pre`.
pub struct WeldedField<'a> {
    pub source: &'a dyn ScalarField,
    /// Source chart to zipper plane.
    pub pre: ConfMap,
    pub welding: &'a Welding,
    /// Zipper output to the final chart.
    pub post: MoebiusMap,
    pub q: f64,
}

impl WeldedField<'_> {
    pub fn eval(&self, w: C64) -> Result<f64> {
        let pinv = self.post.inverse();
        let v = pinv.eval(w);
        let ld_post = pinv.deriv(w).norm().ln();
        let (z, ld_weld) = self.welding.pull(v)?;
        let z = if z.im <= 0.0 { C64::new(z.re, 1e-300) } else { z };
        let inv = self.pre.inverse();
        let s = inv.apply(z);
        let ld_pre = inv.deriv(z).norm().ln();
        let f = self.source.eval(s).ok_or_else(|| Error::Coverage(format!("preimage {s} of {w} leaves the source grid")))?;
        Ok(f + self.q * (ld_post + ld_weld + ld_pre))
    }

    /// Average over `n` equally spaced points of the circle.
    pub fn circle_average(&self, center: C64, r: f64, n: usize) -> Result<f64> {
        let mut acc = 0.0;
        for k in 0..n {
            let p = center + C64::from_polar(r, TAU * (k as f64 + 0.5) / n as f64);
            acc += self.eval(p)?;
        }
        Ok(acc / n as f64)
    }
}

/// Möbius map of H with `base ↦ 0` and `tip ↦ i`.
pub fn anchor_to_i(base: f64, tip: C64) -> Result<MoebiusMap> {
    let zeta = tip - base;
    if !(zeta.im > 0.0) {
        return Err(Error::Degenerate(format!("tip {tip} is not in H")));
    }
    let r = C64::new(0.0, 1.0) / zeta;
    let (k, m) = (r.re, -r.im);
    MoebiusMap::new(C64::new(k, 0.0), C64::new(-k * base, 0.0), C64::new(m, 0.0), C64::new(1.0 - m * base, 0.0))
}

/// Möbius map H → D with `tip ↦ 0` and `base ↦ -i`.
pub fn anchor_to_disk(base: f64, tip: C64) -> Result<MoebiusMap> {
    if !(tip.im > 0.0) {
        return Err(Error::Degenerate(format!("tip {tip} is not in H")));
    }
    let raw = (C64::new(base, 0.0) - tip) / (C64::new(base, 0.0) - tip.conj());
    let rot = C64::new(0.0, -1.0) / raw;
    MoebiusMap::new(rot, -rot * tip, C64::new(1.0, 0.0), -tip.conj())
}

fn map_curve(m: &MoebiusMap, c: &CurveTrace, domain: DomainId) -> CurveTrace {
    CurveTrace { points: c.points.iter().map(|&z| m.eval(z)).collect(), cap_times: c.cap_times.clone(), domain }
}

// ------------------------------------------------------------ weld results

#[derive(Clone, Debug)]
pub struct WeldResult {
    pub welded: Option<FieldSample>,
    pub marks: Vec<Loc>,
    pub interface: CurveTrace,
    pub components: Vec<QuantumSurface>,
    pub length_mismatch: f64,
    pub residual: f64,
    pub log_weight: f64,
    pub diagnostics: Vec<(String, f64)>,
}

impl WeldResult {
    pub fn diagnostic(&self, key: &str) -> Option<f64> {
        self.diagnostics.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

fn bare_surface(kind: SurfaceKind, gamma: f64, weights: Vec<f64>, domain: DomainId) -> QuantumSurface {
    QuantumSurface {
        kind,
        gamma,
        weights,
        domain,
        field: None,
        marks: Vec::new(),
        beads: Vec::new(),
        chains: Vec::new(),
        arc_lengths: Vec::new(),
        log_weight: 0.0,
        eps: 0.0,
        distinguished: None,
        diagnostics: Vec::new(),
    }
}

// ------------------------------------------------------------ quantum zipper

/// `(α, β', ρ̃)` of the welded output for input charge `β`.
pub fn zipper_charges(gamma: f64, beta: f64) -> (f64, f64, f64) {
    (beta / 2.0 + 1.0 / gamma, beta - 2.0 / gamma, gamma * beta)
}

/// Welds `(p_u, 0)` to `(0, q_u)` for a sample of `LF_H^{(β,0),(β,1)}`
/// embedded on a strip grid, so the neighbourhood of 0 is resolved on a
/// logarithmic scale.
pub struct QuantumZipper {
    pub gamma: f64,
    pub beta: f64,
    pub n_steps: usize,
    pub delta: f64,
    sampler: LiouvilleSampler,
    eps: f64,
}

pub struct ZipperSample {
    pub field: LiouvilleField,
    pub welding: Welding,
    pub map: WeldingMap,
    /// Zipper plane to the chart with tip at `i` and base at 0.
    pub anchor: MoebiusMap,
    pub result: WeldResult,
}

pub enum ZipperOutcome {
    Accepted(Box<ZipperSample>),
    /// The restriction `L(-∞,0) > L(0,1)` failed on the covered window.
    Rejected,
}

impl QuantumZipper {
    pub fn new(gamma: f64, beta: f64, grid: &GridSpec, n_steps: usize) -> Result<Self> {
        check_gamma(gamma)?;
        if !(beta < q_of(gamma)) {
            return Err(Error::Range(format!("β = {beta} must be below Q = {}", q_of(gamma))));
        }
        if grid.domain != DomainId::S {
            return Err(Error::InvalidGrid("the zipper samples its field on a strip grid".into()));
        }
        if n_steps < MIN_STEPS {
            return Err(Error::InvalidParam(format!("n_steps = {n_steps} is below {MIN_STEPS}")));
        }
        let spec = LiouvilleSpec::new(
            DomainId::H,
            vec![Insertion::boundary(beta, 0.0), Insertion::boundary(beta, 1.0)],
            gamma,
        )?;
        Ok(QuantumZipper {
            gamma,
            beta,
            n_steps,
            delta: delta_weld(grid).min(1e-3),
            sampler: LiouvilleSampler::new(&spec, grid)?,
            eps: 2.0 * grid.hx().max(grid.hy()),
        })
    }

    pub fn targets(&self) -> (f64, f64, f64) {
        zipper_charges(self.gamma, self.beta)
    }

    pub fn sample(&self, seed: u64) -> Result<ZipperOutcome> {
        let lf = self.sampler.sample(seed)?;
        let baked = lf.bake();
        let top = LengthDensity::new(&baked, self.gamma, PI, self.eps)?;
        let bottom = LengthDensity::new(&baked, self.gamma, 0.0, self.eps)?;
        let n_knots = baked.grid.nx;
        // in H: the top row is (-∞, 0) read from 0 outwards, the bottom row left of 0 is (0, 1)
        let a_full = LengthTable::new(top, ArcSpec { y: PI, from: f64::NEG_INFINITY, to: f64::INFINITY }, n_knots)?;
        let b = LengthTable::new(bottom, ArcSpec { y: 0.0, from: f64::NEG_INFINITY, to: 0.0 }, n_knots)?;
        if !(a_full.total() > b.total()) {
            return Ok(ZipperOutcome::Rejected);
        }
        let a = a_full.truncated(b.total())?;
        let map = weld_arcs(&a, &b, self.delta)?;
        let chart_a = |x: f64| -x.exp();
        let chart_b = |x: f64| x.exp();
        let welding = solve_welding(&map, &chart_a, &chart_b, 0.0, self.n_steps)?;
        let anchor = anchor_to_i(welding.base, welding.tip())?;
        let interface = map_curve(&anchor, &welding.interface, DomainId::H);
        let (alpha, beta_p, rho) = self.targets();
        let mut surf = bare_surface(SurfaceKind::M11, self.gamma, Vec::new(), DomainId::H);
        surf.marks = vec![Loc::At(C64::new(0.0, 1.0)), Loc::At(C64::new(0.0, 0.0))];
        surf.arc_lengths = vec![a_full.total() + bottom_rest(&b) - b.total(), b.total()];
        surf.log_weight = lf.log_weight;
        let result = WeldResult {
            welded: None,
            marks: surf.marks.clone(),
            interface,
            components: vec![surf],
            length_mismatch: map.pair_mismatch(),
            residual: welding.residual,
            log_weight: lf.log_weight,
            diagnostics: vec![
                ("alpha".into(), alpha),
                ("beta_prime".into(), beta_p),
                ("rho_tilde".into(), rho),
                ("c".into(), lf.c),
                ("welded_length".into(), b.total()),
                ("refinements".into(), welding.refinements as f64),
            ],
        };
        Ok(ZipperOutcome::Accepted(Box::new(ZipperSample { field: lf, welding, map, anchor, result })))
    }
}

fn bottom_rest(b: &LengthTable) -> f64 {
    let (_, hi) = b.density().covered();
    b.length_to(hi)
}

impl ZipperSample {
    pub fn welded_field(&self) -> WeldedField<'_> {
        WeldedField { source: &self.field, pre: ConfMap::Exp, welding: &self.welding, post: self.anchor, q: self.field.spec.q() }
    }

    /// `ψ_{ε/2}(i) - ψ_ε(i)`, circle averages over `n` points.
    pub fn slope_statistic(&self, eps: f64, n: usize) -> Result<f64> {
        let f = self.welded_field();
        let i = C64::new(0.0, 1.0);
        Ok(f.circle_average(i, eps / 2.0, n)? - f.circle_average(i, eps, n)?)
    }
}

/// Expected `ψ_{ε/2}(i) - ψ_ε(i)` under `LF_H^{(α,i),(β',0)}`: the profile
/// difference, `α ln 2` plus the smooth part.
pub fn zipper_slope_target(gamma: f64, beta: f64, eps: f64) -> Result<f64> {
    let (alpha, beta_p, _) = zipper_charges(gamma, beta);
    let spec = LiouvilleSpec::new(
        DomainId::H,
        vec![Insertion::bulk(alpha, C64::new(0.0, 1.0)), Insertion::boundary(beta_p, 0.0)],
        gamma,
    )?;
    let avg = |r: f64| {
        let n = 4096;
        (0..n).map(|k| spec.profile(C64::new(0.0, 1.0) + C64::from_polar(r, TAU * (k as f64 + 0.5) / n as f64), 0.0)).sum::<f64>()
            / n as f64
    };
    Ok(avg(eps / 2.0) - avg(eps))
}

/// One accepted zipper welding, or `None` when the restriction fails.
pub fn quantum_zipper_forward(gamma: f64, beta: f64, grid: &GridSpec, seed: u64) -> Result<Option<WeldResult>> {
    match QuantumZipper::new(gamma, beta, grid, 256)?.sample(seed)? {
        ZipperOutcome::Accepted(s) => Ok(Some(s.result)),
        ZipperOutcome::Rejected => Ok(None),
    }
}

// ------------------------------------------------------------ triangle self-weld

/// Self-welds the two arcs at vertex `vertex` of a strip-embedded triangle.
///
/// Vertex 0 (at `+∞`): arcs `ℓ13` and `ℓ12`, in the chart `M(e^s)` with
/// `M(ζ) = -1/(2ζ - 1)`, so `ℓ13` sits on `(-1, 0)` and `ℓ12` on `(0, 1)`.
/// Vertex 2 (at 0): arcs `ℓ23` and `ℓ13`, in the chart `tanh(s/2)`, so
/// `ℓ23` sits on `(-1, 0)` and `ℓ13` on `(0, 1)` and both far vertices lie
/// at the ends of the strip.
pub fn self_weld_triangle(surface: &QuantumSurface, vertex: usize, n_steps: usize, delta: f64) -> Result<(Welding, WeldResult)> {
    if surface.kind != SurfaceKind::Triangle || surface.domain != DomainId::S {
        return Err(Error::InvalidParam("self-welding expects a strip-embedded triangle".into()));
    }
    let field = surface.field.as_ref().ok_or_else(|| Error::InvalidParam("surface has no embedding field".into()))?;
    let n_knots = field.grid.nx;
    let welding = match vertex {
        0 => {
            let b = length_parameterize(surface, 0, n_knots)?;
            let a = length_parameterize(surface, 1, n_knots)?;
            let map = weld_arcs(&a, &b, delta)?;
            let chart_a = |x: f64| -1.0 / (2.0 * x.exp() - 1.0);
            let chart_b = |x: f64| 1.0 / (2.0 * x.exp() + 1.0);
            (solve_welding(&map, &chart_a, &chart_b, 0.0, n_steps)?, map.mismatch)
        }
        2 => {
            let a = length_parameterize(surface, 2, n_knots)?;
            let b = length_parameterize(surface, 1, n_knots)?;
            let (a, b) = (reversed(&a)?, reversed(&b)?);
            let map = weld_arcs(&a, &b, delta)?;
            let chart = |x: f64| (x / 2.0).tanh();
            (solve_welding(&map, &chart, &chart, 0.0, n_steps)?, map.mismatch)
        }
        v => return Err(Error::InvalidParam(format!("self-welding is implemented at vertices 0 and 2, not {v}"))),
    };
    let (welding, mismatch) = welding;
    let mut diagnostics = vec![("refinements".into(), welding.refinements as f64)];
    diagnostics.extend(surface.diagnostics.iter().cloned());
    let res = WeldResult {
        welded: None,
        marks: vec![Loc::At(welding.tip()), Loc::At(C64::new(welding.base, 0.0))],
        interface: welding.interface.clone(),
        components: vec![surface.clone()],
        length_mismatch: mismatch,
        residual: welding.residual,
        log_weight: surface.log_weight,
        diagnostics,
    };
    Ok((welding, res))
}

// ------------------------------------------------------------ cutting

/// Pieces of an embedded surface cut along a curve.
#[derive(Clone, Debug)]
pub struct Cut {
    pub components: Vec<QuantumSurface>,
    /// Length of each curve segment seen from the left and right sides.
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    /// One-sided semicircle estimates, for diagnostics.
    pub left_one_sided: f64,
    pub right_one_sided: f64,
    /// Number of curve points within `eps` of the domain boundary, after the start.
    pub boundary_touches: usize,
}

impl Cut {
    pub fn left_total(&self) -> f64 {
        self.left.iter().sum()
    }

    pub fn right_total(&self) -> f64 {
        self.right.iter().sum()
    }
}

fn half_circle_average(field: &FieldSample, z: C64, normal: C64, eps: f64, n: usize) -> Option<f64> {
    let mut acc = 0.0;
    for k in 0..n {
        let th = PI * (k as f64 + 0.5) / n as f64 - PI / 2.0;
        let p = z + eps * normal * C64::from_polar(1.0, th);
        acc += field.eval(p)?;
    }
    Some(acc / n as f64)
}

/// Cuts an H-embedded field along `curve`. Each segment's length element is
/// `ε^{γ²/4} e^{γ h_ε/2} |Δz|` with the circle average at the segment
/// midpoint, shared by both sides. A curve ending inside the domain gives one
/// component with arcs `[left side, right side, outer boundary]`; a curve
/// ending on the boundary gives left and right components.
pub fn cut_along_interface(field: &FieldSample, gamma: f64, marks: &[Loc], curve: &CurveTrace, eps: f64) -> Result<Cut> {
    check_gamma(gamma)?;
    if field.grid.domain != DomainId::H || curve.domain != DomainId::H {
        return Err(Error::InvalidParam("cutting works on H embeddings".into()));
    }
    let p = &curve.points;
    if p.len() < 2 {
        return Err(Error::Degenerate("curve has fewer than two points".into()));
    }
    if sle::self_intersections(p) > 0 {
        return Err(Error::InvalidParam("curve crosses itself".into()));
    }
    if p.iter().any(|z| z.im < -1e-9) {
        return Err(Error::OutsideDomain(format!("{}", p.iter().find(|z| z.im < -1e-9).unwrap()), "H"));
    }
    let pre = gamma * gamma / 4.0 * eps.ln();
    let (mut left, mut right) = (Vec::new(), Vec::new());
    let (mut lo, mut ro) = (0.0, 0.0);
    for w in p.windows(2) {
        let d = w[1] - w[0];
        let len = d.norm();
        if len == 0.0 {
            left.push(0.0);
            right.push(0.0);
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let h = crate::gff::circle_average(field, mid, eps)?;
        let l = (pre + gamma * h / 2.0).exp() * len;
        left.push(l);
        right.push(l);
        let nrm = C64::new(0.0, 1.0) * d / len;
        if let (Some(a), Some(b)) = (half_circle_average(field, mid, nrm, eps, 32), half_circle_average(field, mid, -nrm, eps, 32)) {
            lo += (pre + gamma * a / 2.0).exp() * len;
            ro += (pre + gamma * b / 2.0).exp() * len;
        }
    }
    let boundary_touches = p[1..].iter().filter(|z| z.im < eps).count().saturating_sub(1);
    let d = LengthDensity::new(field, gamma, 0.0, eps)?;
    let (c0, c1) = d.covered();
    let base = p[0].re.clamp(c0, c1);
    let end = *p.last().unwrap();
    let (lt, rt): (f64, f64) = (left.iter().sum(), right.iter().sum());
    let mut comps = Vec::new();
    if end.im <= 1e-9 {
        let e = end.re.clamp(c0, c1);
        let (a, b) = (base.min(e), base.max(e));
        let mut inner = bare_surface(SurfaceKind::Disk2, gamma, Vec::new(), DomainId::H);
        inner.arc_lengths = vec![d.integral_clamped(a, b), lt];
        inner.marks = vec![Loc::At(C64::new(a, 0.0)), Loc::At(C64::new(b, 0.0))];
        let mut outer = bare_surface(SurfaceKind::Disk2, gamma, Vec::new(), DomainId::H);
        outer.arc_lengths = vec![d.integral_clamped(c0, a) + d.integral_clamped(b, c1), rt];
        outer.marks = inner.marks.clone();
        comps.push(inner);
        comps.push(outer);
    } else {
        let mut s = bare_surface(SurfaceKind::M11, gamma, Vec::new(), DomainId::H);
        s.arc_lengths = vec![lt, rt, d.total()];
        s.marks = vec![Loc::At(end), Loc::At(p[0]), Loc::At(p[0])];
        if let Some(m) = marks.first() {
            s.marks.push(*m);
        }
        s.field = Some(field.clone());
        s.eps = eps;
        comps.push(s);
    }
    Ok(Cut { components: comps, left, right, left_one_sided: lo, right_one_sided: ro, boundary_touches })
}

// ------------------------------------------------------------ thin self-weld

/// Outcome of a thin self-welding attempt.
pub struct ThinWeld {
    pub result: Option<WeldResult>,
    pub proposals: usize,
}

/// Samples a weight-`W` thin chain of horizon `horizon` until its left
/// boundary is longer than its right, then welds the whole right arc to the
/// initial segment of the left arc. The zipper chart places each arc at its
/// cumulative quantum length, so the interface passes the bead cut points in
/// label order.
pub fn self_weld_thin(w: f64, gamma: f64, horizon: f64, seed: u64) -> Result<ThinWeld> {
    check_gamma(gamma)?;
    if !(w > 0.0 && w < gamma * gamma / 2.0) {
        return Err(Error::Range(format!("W = {w} must lie in (0, γ²/2)")));
    }
    let cfg = ThinChainConfig::new(w, gamma, ChainMode::Disk, horizon)?;
    let sampler = ThinChainSampler::new(cfg, seed ^ 0x5eed)?;
    let streams = Streams::new(seed, "welding:thin");
    let mut proposals = 0;
    while proposals < 1000 {
        let chain = sampler.sample(streams.seed(proposals as u64))?;
        proposals += 1;
        let (l, r) = (chain.arc_lengths[0], chain.arc_lengths[1]);
        if !(l > r) || r <= 0.0 {
            continue;
        }
        let n = 256;
        let mut xs = Vec::with_capacity(n + 1);
        let mut ys = Vec::with_capacity(n + 1);
        let u0 = r * 1e-3;
        for k in 0..=n {
            let u = u0 + (r - u0) * k as f64 / n as f64;
            xs.push(-u);
            ys.push(u);
        }
        let mids: Vec<(f64, f64)> = (1..=n).map(|k| (0.5 * (xs[k - 1] + xs[k]), 0.5 * (ys[k - 1] + ys[k]))).collect();
        let welding = zip(&xs, &ys, &mids, 0.0)?;
        // cut points in label order, located on the interface by their right-side length
        let mut cuts = Vec::new();
        let mut acc = 0.0;
        for b in &chain.beads {
            acc += b.lengths[1];
            cuts.push(acc.min(r));
        }
        let pts = &welding.interface.points;
        let locate = |u: f64| {
            let f = (1.0 - u / r).clamp(0.0, 1.0) * (pts.len() - 1) as f64;
            pts[f.round() as usize]
        };
        let cut_pts: Vec<C64> = cuts.iter().map(|&u| locate(u)).collect();
        let mut surf = chain.clone();
        surf.arc_lengths = vec![l - r, r];
        let mut diagnostics = vec![
            ("left_length".into(), l),
            ("right_length".into(), r),
            ("beads".into(), chain.beads.len() as f64),
            ("proposals".into(), proposals as f64),
        ];
        diagnostics.extend(cut_pts.iter().enumerate().map(|(k, z)| (format!("cut_{k}_height"), z.im)));
        let res = WeldResult {
            welded: None,
            marks: vec![Loc::At(welding.tip()), Loc::Inf],
            interface: welding.interface.clone(),
            components: vec![surf],
            length_mismatch: 0.0,
            residual: welding.residual,
            log_weight: chain.log_weight,
            diagnostics,
        };
        return Ok(ThinWeld { result: Some(res), proposals });
    }
    Ok(ThinWeld { result: None, proposals })
}

/// Arc lengths `[outer left, interface]` recovered by cutting a thin weld,
/// and re-welded totals `[left, right]`.
pub fn thin_cut_reweld(res: &WeldResult) -> Result<([f64; 2], [f64; 2])> {
    let s = res.components.first().ok_or_else(|| Error::InvalidParam("weld result has no components".into()))?;
    let (outer, iface) = (s.arc_lengths[0], s.arc_lengths[1]);
    let interface_from_beads: f64 = s.beads.iter().map(|b| b.lengths[1]).sum();
    Ok(([outer, interface_from_beads], [outer + interface_from_beads, iface]))
}

// ------------------------------------------------------------ radial statistics

/// Coarse increments of an angular driving record: window start time,
/// force-point gap at the start, and the angle increment.
#[derive(Clone, Debug, Default)]
pub struct Increments {
    pub dt: f64,
    pub lag_sq: Vec<(f64, f64, usize)>,
    pub drift: Vec<(f64, f64)>,
}

/// Gap `V - W ∈ (0, 2π)` of a force point started at `W_0^+`, flowed by the
/// radial Loewner equation along the record.
pub fn force_gaps(rec: &DrivingRecord) -> Vec<f64> {
    let mut x: f64 = 0.0;
    let mut out = vec![x];
    for k in 1..rec.len() {
        let h = rec.times[k] - rec.times[k - 1];
        x = 2.0 * ((x / 2.0).cos() * (-h / 2.0).exp()).clamp(-1.0, 1.0).acos();
        x -= rec.driving[k] - rec.driving[k - 1];
        if x < 0.0 {
            x = -x;
        }
        if x > TAU {
            x = 2.0 * TAU - x;
        }
        out.push(x);
    }
    out
}

/// Increments of `rec` over windows of `dt` in `[t_min, t_max]`, and squared
/// increments at lags 1, 2, 4.
pub fn radial_increments(rec: &DrivingRecord, dt: f64, t_min: f64, t_max: f64) -> Increments {
    let t_end = rec.times.last().copied().unwrap_or(0.0).min(t_max);
    let m = ((t_end - t_min) / dt).floor().max(0.0) as usize;
    let th: Vec<f64> = (0..=m).map(|j| rec.value_at(t_min + j as f64 * dt)).collect();
    let gaps = force_gaps(rec);
    let gap_at = |t: f64| {
        let k = rec.times.partition_point(|&s| s <= t).saturating_sub(1);
        gaps[k]
    };
    let mut inc = Increments { dt, ..Default::default() };
    for lag in [1usize, 2, 4] {
        let mut s = 0.0;
        let mut c = 0;
        let mut j = 0;
        while j + lag <= m {
            s += (th[j + lag] - th[j]).powi(2);
            c += 1;
            j += lag;
        }
        inc.lag_sq.push((lag as f64 * dt, s, c));
    }
    for j in 0..m {
        inc.drift.push((gap_at(t_min + j as f64 * dt), th[j + 1] - th[j]));
    }
    inc
}

/// Through-origin regression of mean squared increment on lag.
pub fn qv_slope(incs: &[Increments]) -> f64 {
    let mut by_lag: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for inc in incs {
        for &(tau, s, c) in &inc.lag_sq {
            let e = by_lag.entry(tau.to_bits()).or_insert((tau, 0.0, 0));
            e.1 += s;
            e.2 += c;
        }
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (tau, s, c) in by_lag.values() {
        if *c > 0 {
            let v = s / *c as f64;
            num += tau * v;
            den += tau * tau;
        }
    }
    num / den
}

/// Regression of `ΔW` on `-½ cot(x/2) Δt`: returns `(ρ̂, se, n)`.
/// Windows with `sin(x/2) < 0.1` are dropped.
pub fn drift_regression(incs: &[Increments]) -> (f64, f64, usize) {
    let mut rows = Vec::new();
    for inc in incs {
        for &(x, dw) in &inc.drift {
            if (x / 2.0).sin() >= 0.1 {
                rows.push((-0.5 / (x / 2.0).tan() * inc.dt, dw));
            }
        }
    }
    let sxx: f64 = rows.iter().map(|r| r.0 * r.0).sum();
    let sxy: f64 = rows.iter().map(|r| r.0 * r.1).sum();
    if rows.len() < 3 || sxx <= 0.0 {
        return (f64::NAN, f64::NAN, rows.len());
    }
    let b = sxy / sxx;
    let s2 = rows.iter().map(|r| (r.1 - b * r.0).powi(2)).sum::<f64>() / (rows.len() - 1) as f64;
    (b, (s2 / sxx).sqrt(), rows.len())
}

// ------------------------------------------------------------ reports

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatKind {
    /// Sample mean with standard error; merges by pooling.
    Mean,
    /// Largest value over samples; merges by max.
    Max,
    /// A ratio or fitted coefficient; merges by an n-weighted average.
    Fit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub name: String,
    pub kind: StatKind,
    pub statistic: f64,
    pub target: f64,
    /// Absolute tolerance, or a multiple of `se` when `in_se` is set.
    pub tolerance: f64,
    pub in_se: bool,
    pub se: f64,
    pub n: usize,
    pub pass: bool,
    pub gated: bool,
    pub seeds: Vec<u64>,
}

impl TestRecord {
    pub fn new(name: &str, kind: StatKind, statistic: f64, target: f64, tolerance: f64, in_se: bool, se: f64, n: usize) -> Self {
        let mut t = TestRecord {
            name: name.into(),
            kind,
            statistic,
            target,
            tolerance,
            in_se,
            se,
            n,
            pass: false,
            gated: true,
            seeds: Vec::new(),
        };
        t.pass = t.evaluate();
        t
    }

    pub fn ungated(mut self) -> Self {
        self.gated = false;
        self
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }

    /// Limits are absolute for `Max` records: the statistic must not exceed
    /// the tolerance.
    fn evaluate(&self) -> bool {
        let tol = if self.in_se { self.tolerance * self.se } else { self.tolerance };
        match self.kind {
            StatKind::Max => self.statistic <= tol,
            _ => (self.statistic - self.target).abs() <= tol,
        }
    }

    pub fn line(&self) -> String {
        let tol = if self.in_se { format!("{}·SE = {:.4}", self.tolerance, self.tolerance * self.se) } else { format!("{}", self.tolerance) };
        format!(
            "{} {}: statistic {:.5} target {:.5} tolerance {} (n = {}){}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.statistic,
            self.target,
            tol,
            self.n,
            if self.gated { "" } else { " [not gated]" }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub params: BTreeMap<String, String>,
    pub tests: Vec<TestRecord>,
    pub counters: BTreeMap<String, f64>,
}

impl Report {
    pub fn new(experiment: &str) -> Self {
        Report { experiment: experiment.into(), params: BTreeMap::new(), tests: Vec::new(), counters: BTreeMap::new() }
    }

    pub fn param(&mut self, k: &str, v: impl ToString) {
        self.params.insert(k.into(), v.to_string());
    }

    pub fn passed(&self) -> bool {
        self.tests.iter().filter(|t| t.gated).all(|t| t.pass)
    }

    pub fn test(&self, name: &str) -> Option<&TestRecord> {
        self.tests.iter().find(|t| t.name == name)
    }

    /// Merges two reports from disjoint seed batches with the same parameters
    /// (apart from the seed).
    pub fn merge(&self, other: &Report) -> Result<Report> {
        let strip = |p: &BTreeMap<String, String>| {
            p.iter().filter(|(k, _)| k.as_str() != "seed" && k.as_str() != "n").map(|(k, v)| (k.clone(), v.clone())).collect::<Vec<_>>()
        };
        if self.experiment != other.experiment || strip(&self.params) != strip(&other.params) {
            return Err(Error::Format("schema mismatch: reports were produced with different parameters".into()));
        }
        let mut out = self.clone();
        for (k, v) in &other.counters {
            *out.counters.entry(k.clone()).or_insert(0.0) += v;
        }
        let n_total = |a: &Report| a.params.get("n").and_then(|s| s.parse::<usize>().ok());
        if let (Some(a), Some(b)) = (n_total(self), n_total(other)) {
            out.param("n", a + b);
        }
        for t in out.tests.iter_mut() {
            let o = other
                .tests
                .iter()
                .find(|u| u.name == t.name)
                .ok_or_else(|| Error::Format(format!("schema mismatch: test {} missing from one report", t.name)))?;
            let (n1, n2) = (t.n as f64, o.n as f64);
            let n = n1 + n2;
            match t.kind {
                StatKind::Max => t.statistic = t.statistic.max(o.statistic),
                StatKind::Mean => {
                    let m = (n1 * t.statistic + n2 * o.statistic) / n;
                    let v1 = t.se * t.se * n1 * (n1 - 1.0).max(1.0);
                    let v2 = o.se * o.se * n2 * (n2 - 1.0).max(1.0);
                    let ss = v1 + v2 + n1 * (t.statistic - m).powi(2) + n2 * (o.statistic - m).powi(2);
                    t.se = (ss / (n - 1.0).max(1.0) / n).sqrt();
                    t.statistic = m;
                }
                StatKind::Fit => {
                    t.statistic = (n1 * t.statistic + n2 * o.statistic) / n;
                    t.se = ((n1 * t.se).powi(2) + (n2 * o.se).powi(2)).sqrt() / n;
                }
            }
            t.n += o.n;
            t.seeds.extend(o.seeds.iter().copied());
            t.pass = t.evaluate();
        }
        Ok(out)
    }
}

// ------------------------------------------------------------ experiments

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct W2wConfig {
    pub w: f64,
    pub gamma: f64,
    pub n_curves: usize,
    /// Strip grid for the triangles.
    pub strip_grid: GridSpec,
    /// H grid for the forward direction.
    pub h_grid: GridSpec,
    /// Coarse capacity window of the increment statistics.
    pub dt: f64,
    /// Capacity range of the statistics; the start skips the part of the
    /// interface welded from the truncated ends of the strip.
    pub t_min: f64,
    pub t_max: f64,
    /// Step of the reference SLE simulations.
    pub sle_dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub forward: bool,
    pub reverse: bool,
}

impl W2wConfig {
    /// Desk-scale defaults: grids of about 128×128 nodes.
    pub fn desk(w: f64, gamma: f64, n_curves: usize, seed: u64) -> Result<Self> {
        Ok(W2wConfig {
            w,
            gamma,
            n_curves,
            strip_grid: GridSpec::strip(181, 91, -3.0, 3.0)?,
            h_grid: GridSpec::h_box(129, 129, 2.0, 4.0)?,
            dt: 0.25,
            t_min: 0.5,
            t_max: 2.5,
            sle_dt: 1e-3,
            n_steps: 512,
            seed,
            forward: true,
            reverse: true,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.gamma * self.gamma
    }
}

/// Polyline in D from a welded interface, stopped before the tip.
pub fn disk_curve(welding: &Welding, r_min: f64) -> Result<CurveTrace> {
    let m = anchor_to_disk(welding.base, welding.tip())?;
    let mut pts = Vec::new();
    let mut caps = Vec::new();
    for (k, &z) in welding.interface.points.iter().enumerate() {
        let w = m.eval(z);
        if k > 0 && w.norm() < r_min {
            break;
        }
        pts.push(if k == 0 { w / w.norm() } else { w });
        caps.push(welding.interface.cap_times[k]);
    }
    Ok(CurveTrace { points: pts, cap_times: caps, domain: DomainId::D })
}

/// Map `D → H` with `0 ↦ i` and `-i ↦ 0`.
fn disk_to_h() -> MoebiusMap {
    let i = C64::new(0.0, 1.0);
    let one = C64::new(1.0, 0.0);
    // inverse of z ↦ i (z - i)/(z + i)
    MoebiusMap::new(i, one, one, i).expect("nonzero determinant").inverse()
}

/// Both directions of the `W = W1 = W2, W3 = 2` welding at desk scale.
pub fn experiment_w2w(cfg: &W2wConfig) -> Result<Report> {
    check_gamma(cfg.gamma)?;
    let g2 = cfg.gamma * cfg.gamma;
    if !(cfg.w > 0.0) || (cfg.w - g2 / 2.0).abs() < 1e-12 {
        return Err(Error::Range(format!("W = {} must be positive and differ from γ²/2", cfg.w)));
    }
    if cfg.n_curves == 0 || cfg.n_curves > 1000 {
        return Err(Error::InvalidParam("n_curves must lie in 1..=1000".into()));
    }
    let kappa = cfg.kappa();
    let rho = cfg.w - 2.0;
    let mut rep = Report::new("w2w");
    rep.param("W", cfg.w);
    rep.param("gamma", cfg.gamma);
    rep.param("kappa", kappa);
    rep.param("n", cfg.n_curves);
    rep.param("seed", cfg.seed);
    rep.param("dt", cfg.dt);
    rep.param("t_min", cfg.t_min);
    rep.param("t_max", cfg.t_max);
    rep.param("n_steps", cfg.n_steps);
    rep.param("strip_grid", format!("{}x{}", cfg.strip_grid.nx, cfg.strip_grid.ny));
    rep.param("h_grid", format!("{}x{}", cfg.h_grid.nx, cfg.h_grid.ny));
    let streams = Streams::new(cfg.seed, "welding:w2w");

    if cfg.forward {
        let dw = delta_weld(&cfg.h_grid);
        let m11 = M11Sampler::new(cfg.w, cfg.w + 2.0, cfg.gamma, &cfg.h_grid)?;
        let to_h = disk_to_h();
        let mut worst: f64 = 0.0;
        let mut one_sided = Vec::new();
        let mut touches = 0usize;
        let mut failures = 0usize;
        let mut seeds = Vec::new();
        for k in 0..cfg.n_curves {
            let seed = streams.child("forward", k as u64).seed(0);
            seeds.push(seed);
            let s = m11.sample(seed)?;
            let params = SleParams::radial(kappa, cfg.t_max, cfg.sle_dt, streams.child("forward", k as u64).seed(1))
                .with_force(rho, ForceLoc::Plus);
            let rec = sle::drive_radial(&params)?;
            let tr = match sle::trace(&rec, 10, TraceMode::Tilted) {
                Ok(t) => t,
                Err(e) if e.is_numerical() => {
                    failures += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut curve = map_curve(&to_h, &tr, DomainId::H);
            curve.points[0] = C64::new(curve.points[0].re, 0.0);
            let field = s.field.as_ref().unwrap();
            let cut = match cut_along_interface(field, cfg.gamma, &s.marks, &curve, s.eps) {
                Ok(c) => c,
                Err(e) if e.is_numerical() || matches!(e, Error::InvalidParam(_)) => {
                    failures += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let (l, r) = (cut.left_total(), cut.right_total());
            worst = worst.max((l - r).abs() / l.max(r));
            one_sided.push((cut.left_one_sided - cut.right_one_sided) / (cut.left_one_sided + cut.right_one_sided));
            touches += cut.boundary_touches;
        }
        let n_ok = cfg.n_curves - failures;
        rep.tests.push(
            TestRecord::new("forward_cut_length_equality", StatKind::Max, worst, 0.0, 2.0 * dw, false, 0.0, n_ok).with_seeds(seeds),
        );
        let (m, se) = stats::mean_se(&one_sided);
        rep.tests.push(TestRecord::new("forward_one_sided_asymmetry", StatKind::Mean, m, 0.0, 4.0, true, se, one_sided.len()).ungated());
        rep.counters.insert("forward_failures".into(), failures as f64);
        rep.counters.insert("forward_boundary_touches".into(), touches as f64);
    }

    if cfg.reverse {
        if cfg.w < g2 / 2.0 {
            rep.counters.insert("reverse_skipped_thin".into(), 1.0);
        } else {
            reverse_direction(cfg, &streams, &mut rep)?;
        }
    }
    Ok(rep)
}

fn reverse_direction(cfg: &W2wConfig, streams: &Streams, rep: &mut Report) -> Result<()> {
    let kappa = cfg.kappa();
    let rho = cfg.w - 2.0;
    let dw = delta_weld(&cfg.strip_grid);
    // the weld vertex sits at 0 of the strip, its neighbours of weight W and 2 at ±∞
    let tri = TriangleSampler::new([cfg.w, 2.0, cfg.w], cfg.gamma, &cfg.strip_grid, None)?;
    let mut filter = LengthFilter::new(
        |s| {
            let q = tri.sample(s)?;
            let (a, b) = (q.arc_lengths[1], q.arc_lengths[2]);
            let stat = (a - b).abs() / a.max(b);
            Ok((q, stat))
        },
        0.0,
        dw,
        streams.child("reverse", 0).seed(0),
    )?;
    filter.max_proposals = 200 * cfg.n_curves;
    let r_min = (-cfg.t_max - 1.5).exp();
    let mut welded = Vec::new();
    let mut failures = 0usize;
    let mut attempts = 0usize;
    let mut worst_mismatch: f64 = 0.0;
    while welded.len() < cfg.n_curves {
        let q = filter.next_kept()?;
        attempts += 1;
        let res = self_weld_triangle(&q, 2, cfg.n_steps, dw).and_then(|(w, r)| {
            let c = disk_curve(&w, r_min)?;
            let rec = sle::extract_driving(&c)?;
            Ok((r, rec))
        });
        match res {
            Ok((r, rec)) => {
                worst_mismatch = worst_mismatch.max(r.length_mismatch);
                welded.push(radial_increments(&rec, cfg.dt, cfg.t_min, cfg.t_max));
            }
            Err(e) if e.is_numerical() || matches!(e, Error::Degenerate(_)) => {
                failures += 1;
                if failures * 10 > cfg.n_curves.max(10) {
                    return Err(Error::Numerical(format!("{failures} extraction failures in {attempts} welded interfaces")));
                }
            }
            Err(e) => return Err(e),
        }
    }
    // paired reference batch through the same trace and extraction pipeline
    let mut direct = Vec::new();
    let mut k = 0u64;
    while direct.len() < cfg.n_curves {
        let params = SleParams::radial(kappa, cfg.t_max + 0.5, cfg.sle_dt, streams.child("reference", k).seed(0)).with_force(rho, ForceLoc::Plus);
        k += 1;
        let rec = sle::drive_radial(&params)?;
        let rec = match sle::trace(&rec, 10, TraceMode::Tilted).and_then(|c| sle::extract_driving(&c)) {
            Ok(r) => r,
            Err(e) if e.is_numerical() => continue,
            Err(e) => return Err(e),
        };
        direct.push(radial_increments(&rec, cfg.dt, cfg.t_min, cfg.t_max));
    }
    let (sw, sd) = (qv_slope(&welded), qv_slope(&direct));
    rep.tests.push(TestRecord::new("reverse_qv_ratio", StatKind::Fit, sw / sd, 1.0, 0.15, false, 0.0, welded.len()));
    rep.tests.push(TestRecord::new("reverse_qv_slope_welded", StatKind::Fit, sw, kappa, 0.15 * kappa, false, 0.0, welded.len()).ungated());
    rep.tests.push(TestRecord::new("reverse_qv_slope_direct", StatKind::Fit, sd, kappa, 0.15 * kappa, false, 0.0, direct.len()).ungated());
    let (b, se, n) = drift_regression(&welded);
    let drift = TestRecord::new("reverse_drift", StatKind::Fit, b, rho, 4.0, true, se, n);
    rep.tests.push(if rho == 0.0 { drift } else { drift.ungated() });
    let (bd, sed, nd) = drift_regression(&direct);
    rep.tests.push(TestRecord::new("reference_drift", StatKind::Fit, bd, rho, 4.0, true, sed, nd).ungated());
    if rho != 0.0 {
        let z = b / se;
        let agree = z.signum() == rho.signum() && z.abs() > 2.0;
        let mut t = TestRecord::new("reverse_drift_sign", StatKind::Fit, z, rho.signum() * 2.0, f64::INFINITY, false, 0.0, n).ungated();
        t.pass = agree;
        rep.tests.push(t);
    }
    rep.tests.push(TestRecord::new("reverse_length_mismatch", StatKind::Max, worst_mismatch, 0.0, dw, false, 0.0, welded.len()));
    rep.counters.insert("reverse_proposals".into(), filter.proposals as f64);
    rep.counters.insert("reverse_acceptance".into(), filter.acceptance_rate());
    rep.counters.insert("reverse_extraction_failures".into(), failures as f64);
    rep.counters.insert("reverse_attempts".into(), attempts as f64);
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZipperConfig {
    pub gamma: f64,
    pub beta: f64,
    pub grid: GridSpec,
    pub n_samples: usize,
    pub n_steps: usize,
    /// Outer probe radius around `i` in the anchored chart.
    pub eps: f64,
    pub circle_points: usize,
    pub seed: u64,
}

impl ZipperConfig {
    pub fn desk(gamma: f64, beta: f64, n_samples: usize, seed: u64) -> Result<Self> {
        Ok(ZipperConfig {
            gamma,
            beta,
            grid: GridSpec::strip(161, 41, -8.0, 4.0)?,
            n_samples,
            n_steps: 128,
            eps: 0.5,
            circle_points: 32,
            seed,
        })
    }
}

/// Accepted zipper samples: slope statistic at the bulk mark and the length
/// matching of the welded pairs.
pub fn experiment_zipper(cfg: &ZipperConfig) -> Result<Report> {
    let z = QuantumZipper::new(cfg.gamma, cfg.beta, &cfg.grid, cfg.n_steps)?;
    let (alpha, beta_p, rho) = z.targets();
    let streams = Streams::new(cfg.seed, "welding:zipper");
    let mut rep = Report::new("zipper");
    rep.param("gamma", cfg.gamma);
    rep.param("beta", cfg.beta);
    rep.param("n", cfg.n_samples);
    rep.param("seed", cfg.seed);
    rep.param("eps", cfg.eps);
    rep.param("n_steps", cfg.n_steps);
    rep.param("grid", format!("{}x{}", cfg.grid.nx, cfg.grid.ny));
    let mut stat = Vec::with_capacity(cfg.n_samples);
    let mut worst: f64 = 0.0;
    let (mut proposals, mut rejected, mut failures) = (0usize, 0usize, 0usize);
    while stat.len() < cfg.n_samples {
        let seed = streams.seed(proposals as u64);
        proposals += 1;
        if proposals > 20 * cfg.n_samples + 100 {
            return Err(Error::Starvation { accepted: stat.len(), proposals });
        }
        let s = match z.sample(seed) {
            Ok(ZipperOutcome::Accepted(s)) => s,
            Ok(ZipperOutcome::Rejected) => {
                rejected += 1;
                continue;
            }
            Err(e) if e.is_numerical() => {
                failures += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        match s.slope_statistic(cfg.eps, cfg.circle_points) {
            Ok(d) => {
                worst = worst.max(s.result.length_mismatch);
                stat.push(d);
            }
            Err(e) if e.is_numerical() => failures += 1,
            Err(e) => return Err(e),
        }
    }
    let target = zipper_slope_target(cfg.gamma, cfg.beta, cfg.eps)?;
    let (m, se) = stats::mean_se(&stat);
    let smooth = target - alpha * 2f64.ln();
    rep.tests.push(TestRecord::new("zipper_length_match", StatKind::Max, worst, 0.0, z.delta, false, 0.0, stat.len()));
    rep.tests.push(TestRecord::new("zipper_bulk_slope", StatKind::Mean, m, target, 4.0, true, se, stat.len()));
    rep.tests.push(
        TestRecord::new("zipper_alpha_estimate", StatKind::Mean, (m - smooth) / 2f64.ln(), alpha, 4.0, true, se / 2f64.ln(), stat.len())
            .ungated(),
    );
    rep.counters.insert("alpha".into(), alpha);
    rep.counters.insert("beta_prime".into(), beta_p);
    rep.counters.insert("rho_tilde".into(), rho);
    rep.counters.insert("proposals".into(), proposals as f64);
    rep.counters.insert("rejected".into(), rejected as f64);
    rep.counters.insert("failures".into(), failures as f64);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gff::FieldSample;

    fn const_field(grid: GridSpec, v: f64) -> FieldSample {
        FieldSample::from_fn(grid, |_| v)
    }

    #[test]
    fn delta_weld_examples() {
        let g = GridSpec::h_box(128, 128, 1.0, 1.0).unwrap();
        assert!((delta_weld(&g) - 10.0 / 128.0).abs() < 1e-15);
        let big = GridSpec::h_box(20000, 8, 1.0, 1.0).unwrap();
        assert_eq!(delta_weld(&big), 10.0 / (160000f64).sqrt());
    }

    #[test]
    fn constant_field_table_is_linear() {
        let g = GridSpec::h_box(65, 33, 2.0, 2.0).unwrap();
        let f = const_field(g, 0.3);
        let d = LengthDensity::new(&f, 1.0, 0.0, 0.25).unwrap();
        let t = LengthTable::new(d, ArcSpec { y: 0.0, from: -1.0, to: 1.0 }, 9).unwrap();
        let rate = t.total() / 2.0;
        for (x, c) in t.knots.iter().zip(&t.cum) {
            assert!((c - rate * (x + 1.0)).abs() < 1e-12);
        }
        assert!((rate - 0.25f64.powf(0.25) * (0.15f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn doubling_knots_is_nested() {
        let g = GridSpec::h_box(65, 33, 2.0, 2.0).unwrap();
        let f = FieldSample::from_fn(g, |z| (3.0 * z.re).sin() + z.im);
        let d = LengthDensity::new(&f, 1.2, 0.0, 0.125).unwrap();
        let arc = ArcSpec { y: 0.0, from: 1.5, to: -1.5 };
        let a = LengthTable::new(d.clone(), arc, 9).unwrap();
        let b = LengthTable::new(d, arc, 17).unwrap();
        for k in 0..9 {
            assert!((a.cum[k] - b.cum[2 * k]).abs() < 1e-10);
        }
        assert_eq!(a.total(), b.total());
    }

    #[test]
    fn identical_tables_pair_identically() {
        let g = GridSpec::h_box(65, 33, 2.0, 2.0).unwrap();
        let f = FieldSample::from_fn(g, |z| z.re.cos());
        let d = LengthDensity::new(&f, 1.0, 0.0, 0.125).unwrap();
        let t = LengthTable::new(d, ArcSpec { y: 0.0, from: -1.0, to: 1.0 }, 33).unwrap();
        let m = weld_arcs(&t, &t, 1e-3).unwrap();
        for &(s, u) in &m.pairs {
            assert!((s - u).abs() < 1e-12);
        }
        assert!(m.pair_mismatch() < 1e-12);
    }

    #[test]
    fn shifted_field_pairs_by_length_covariance() {
        let g = GridSpec::h_box(65, 33, 2.0, 2.0).unwrap();
        let gamma = 1.0;
        let f = FieldSample::from_fn(g, |z| z.re.sin());
        let shifted = f.shifted(0.4);
        let arc = ArcSpec { y: 0.0, from: -1.0, to: 1.0 };
        let a = LengthTable::new(LengthDensity::new(&f, gamma, 0.0, 0.125).unwrap(), arc, 33).unwrap();
        let b = LengthTable::new(LengthDensity::new(&shifted, gamma, 0.0, 0.125).unwrap(), arc, 33).unwrap();
        assert!((b.total() / a.total() - (gamma * 0.4 / 2.0f64).exp()).abs() < 1e-12);
        // proportional pairing ignores the common scale; the guard does not
        assert!(matches!(weld_arcs(&a, &b, 1e-3), Err(Error::LengthMismatch { .. })));
        let m = weld_arcs(&a, &b, 0.5).unwrap();
        for &(s, u) in &m.pairs {
            assert!((s - u).abs() < 1e-9);
        }
    }

    #[test]
    fn mismatch_beyond_tolerance_errors() {
        let g = GridSpec::h_box(65, 33, 2.0, 2.0).unwrap();
        let f = const_field(g, 0.0);
        let d = LengthDensity::new(&f, 1.0, 0.0, 0.125).unwrap();
        let a = LengthTable::new(d.clone(), ArcSpec { y: 0.0, from: 0.0, to: 1.0 }, 9).unwrap();
        let delta = 1e-3;
        let b = LengthTable::new(d, ArcSpec { y: 0.0, from: 0.0, to: 1.0 + 2.0 * delta }, 9).unwrap();
        assert!(matches!(weld_arcs(&a, &b, delta), Err(Error::LengthMismatch { .. })));
    }

    fn symmetric_weld(n: usize) -> Welding {
        let xs: Vec<f64> = (0..=n).map(|k| -(1.0 + k as f64) / (n + 1) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -x).collect();
        let mids = (1..=n).map(|k| (0.5 * (xs[k - 1] + xs[k]), 0.5 * (ys[k - 1] + ys[k]))).collect::<Vec<_>>();
        zip(&xs, &ys, &mids, 0.0).unwrap()
    }

    #[test]
    fn symmetric_welding_is_a_vertical_slit() {
        let w = symmetric_weld(512);
        assert!(w.residual < 1e-3);
        for p in &w.interface.points {
            assert!(p.re.abs() < 1e-9, "{p}");
        }
        // glued pairs [-1, 1] have capacity 1/4
        assert!((w.interface.cap_times.last().unwrap() - 0.25).abs() < 1e-9);
        assert!((w.tip() - C64::new(0.0, 1.0)).norm() < 1e-9);
    }

    /// Pairs of preimages along a tilted slit with tip `τ`, equally spaced in
    /// distance from the tip.
    fn tilted_data(tau: C64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<(f64, f64)>, f64) {
        let s = SlitMap::from_tip(tau);
        let (x1, x2) = match s {
            SlitMap::Tilted { x1, x2, .. } => (x1, x2),
            _ => unreachable!(),
        };
        let crit = s.critical();
        let dir = tau / tau.norm();
        // preimage of the slit point at distance r from the origin on each side
        let pre = |r: f64, lo: f64, hi: f64| {
            let (mut a, mut b) = (lo, hi);
            let f = |x: f64| s.eval(C64::new(x, 0.0)).norm() - r;
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if (f(a) > 0.0) == (f(m) > 0.0) {
                    a = m;
                } else {
                    b = m;
                }
            }
            0.5 * (a + b)
        };
        let _ = dir;
        let len = tau.norm();
        let at = |u: f64| {
            let r = len * (1.0 - u);
            (pre(r, x2, crit), pre(r, x1, crit))
        };
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let u0 = 1e-3;
        for k in 0..=n {
            let (a, b) = at(u0 + (1.0 - u0) * k as f64 / n as f64);
            xs.push(a);
            ys.push(b);
        }
        let mids = (1..=n).map(|k| at(u0 + (1.0 - u0) * (k as f64 - 0.5) / n as f64)).collect();
        (xs, ys, mids, crit)
    }

    #[test]
    fn tilted_slit_refinement_converges() {
        let tau = C64::from_polar(1.0, 0.35 * PI);
        let mut prev_res = f64::INFINITY;
        let mut prev_tip = f64::INFINITY;
        for n in [64, 128, 256, 512] {
            let (xs, ys, mids, crit) = tilted_data(tau, n);
            let w = zip(&xs, &ys, &mids, crit).unwrap();
            // interface is straight: every point lies on the ray through the tip
            let ang = w.tip().arg();
            for p in &w.interface.points[1..] {
                assert!((p.arg() - ang).abs() < 0.05, "{p} off the ray at n = {n}");
            }
            assert!(w.residual < prev_res, "residual {} at n = {n} after {prev_res}", w.residual);
            let tip_err = (w.tip() - tau).norm();
            assert!(tip_err < prev_tip);
            prev_res = w.residual;
            prev_tip = tip_err;
        }
        assert!(prev_res < 1e-2);
    }

    #[test]
    fn pull_inverts_forward() {
        let w = symmetric_weld(64);
        let z = C64::new(0.3, 0.7);
        let v = w.forward(z);
        let (back, ld) = w.pull(v).unwrap();
        assert!((back - z).norm() < 1e-9);
        // log|dz/dw| against a finite difference
        let h = 1e-6;
        let fd = ((w.forward(z + h) - v) / h).norm();
        assert!((ld + fd.ln()).abs() < 1e-4);
    }

    #[test]
    fn anchors_send_marks() {
        let base = 0.3;
        let tip = C64::new(-0.4, 0.8);
        let m = anchor_to_i(base, tip).unwrap();
        assert!((m.eval(tip) - C64::new(0.0, 1.0)).norm() < 1e-12);
        assert!(m.eval(C64::new(base, 0.0)).norm() < 1e-12);
        assert!(m.eval(C64::new(5.0, 0.0)).im.abs() < 1e-12);
        let d = anchor_to_disk(base, tip).unwrap();
        assert!(d.eval(tip).norm() < 1e-12);
        assert!((d.eval(C64::new(base, 0.0)) - C64::new(0.0, -1.0)).norm() < 1e-12);
        let h = disk_to_h();
        assert!((h.eval(C64::new(0.0, 0.0)) - C64::new(0.0, 1.0)).norm() < 1e-12);
        assert!(h.eval(C64::new(0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn charge_bookkeeping() {
        for g in [0.5, 1.0, 1.7] {
            let (a, b, r) = zipper_charges(g, g);
            assert!((a - (g / 2.0 + 1.0 / g)).abs() < 1e-15);
            assert!((b - (g - 2.0 / g)).abs() < 1e-15);
            assert!((r - g * g).abs() < 1e-15);
        }
    }

    #[test]
    fn slope_target_contains_alpha_ln2() {
        // tiny radii: the smooth part vanishes
        let t = zipper_slope_target(1.0, 1.0, 1e-4).unwrap();
        assert!((t - 1.5 * 2f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn straight_cut_of_constant_field_is_symmetric() {
        let g = GridSpec::h_box(65, 65, 2.0, 2.0).unwrap();
        let f = const_field(g, 0.0);
        let pts: Vec<C64> = (0..=20).map(|k| C64::new(0.0, k as f64 * 0.05)).collect();
        let caps = (0..=20).map(|k| k as f64).collect();
        let c = CurveTrace { points: pts, cap_times: caps, domain: DomainId::H };
        let cut = cut_along_interface(&f, 1.0, &[], &c, 0.125).unwrap();
        assert_eq!(cut.components.len(), 1);
        assert!((cut.left_total() - cut.right_total()).abs() < 1e-12);
        assert!((cut.left_one_sided - cut.right_one_sided).abs() < 1e-9);
        let s = &cut.components[0];
        assert_eq!(s.arc_lengths[0], s.arc_lengths[1]);
    }

    #[test]
    fn report_merge_pools() {
        let mut a = Report::new("x");
        a.param("gamma", 1.0);
        a.param("n", 100);
        a.param("seed", 1);
        a.tests.push(TestRecord::new("m", StatKind::Mean, 1.0, 1.0, 4.0, true, 0.1, 100));
        let mut b = a.clone();
        b.param("seed", 2);
        let m = a.merge(&b).unwrap();
        assert_eq!(m.tests[0].n, 200);
        assert_eq!(m.params["n"], "200");
        assert!((m.tests[0].se - 0.1 / 2f64.sqrt()).abs() < 2e-3);
        let mut c = b.clone();
        c.param("gamma", 1.5);
        assert!(a.merge(&c).is_err());
    }
}
