//! Reference domains, Möbius and exponential maps, Green functions, branch
//! cuts, rectangular grids and the discrete harmonic solver.
//!
//! Grids are rectangles in chart coordinates: Cartesian for `H`, `D`, `C`
//! and the native `(Re, Im)` coordinates for the strip `S = R x (0, π)`.
//! The point at infinity is the `Pt::Infinity` flag, never a large float.

use crate::error::{Error, Result};
use crate::gff::{FieldSample, Normalization, ScalarField};
use crate::{abs_plus, q_of, C64};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DomainId {
    /// Upper half-plane.
    H,
    /// Unit disk.
    D,
    /// Horizontal strip `R x (0, π)`.
    S,
    /// Complex plane.
    C,
}

const EDGE_TOL: f64 = 1e-12;

impl DomainId {
    pub fn tag(&self) -> &'static str {
        match self {
            DomainId::H => "H",
            DomainId::D => "D",
            DomainId::S => "S",
            DomainId::C => "C",
        }
    }

    pub fn parse(s: &str) -> Option<DomainId> {
        match s.trim() {
            "H" | "h" => Some(DomainId::H),
            "D" | "d" => Some(DomainId::D),
            "S" | "s" => Some(DomainId::S),
            "C" | "c" => Some(DomainId::C),
            _ => None,
        }
    }

    /// Membership in the closed domain.
    pub fn contains(&self, z: C64) -> bool {
        if !(z.re.is_finite() && z.im.is_finite()) {
            return false;
        }
        match self {
            DomainId::H => z.im >= -EDGE_TOL,
            DomainId::D => z.norm() <= 1.0 + EDGE_TOL,
            DomainId::S => z.im >= -EDGE_TOL && z.im <= PI + EDGE_TOL,
            DomainId::C => true,
        }
    }

    pub fn on_boundary(&self, z: C64) -> bool {
        match self {
            DomainId::H => z.im.abs() <= EDGE_TOL,
            DomainId::D => (z.norm() - 1.0).abs() <= EDGE_TOL,
            DomainId::S => z.im.abs() <= EDGE_TOL || (z.im - PI).abs() <= EDGE_TOL,
            DomainId::C => false,
        }
    }

    pub fn is_interior(&self, z: C64) -> bool {
        self.contains(z) && !self.on_boundary(z)
    }

    fn pt_on_boundary(&self, p: Pt) -> bool {
        match p {
            Pt::Infinity => matches!(self, DomainId::H),
            Pt::Finite(z) => self.on_boundary(z),
        }
    }

    fn pt_in_closure(&self, p: Pt) -> bool {
        match p {
            Pt::Infinity => matches!(self, DomainId::H | DomainId::C),
            Pt::Finite(z) => self.contains(z),
        }
    }
}

/// A point of the Riemann sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pt {
    Finite(C64),
    Infinity,
}

impl Pt {
    pub fn finite(self) -> Option<C64> {
        match self {
            Pt::Finite(z) => Some(z),
            Pt::Infinity => None,
        }
    }

    fn close(self, o: Pt) -> bool {
        match (self, o) {
            (Pt::Infinity, Pt::Infinity) => true,
            (Pt::Finite(a), Pt::Finite(b)) => (a - b).norm() <= 1e-10 * (1.0 + a.norm()),
            _ => false,
        }
    }
}

impl From<C64> for Pt {
    fn from(z: C64) -> Pt {
        Pt::Finite(z)
    }
}

/// `z -> (a z + b) / (c z + d)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoebiusMap {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub d: C64,
}

impl MoebiusMap {
    pub fn new(a: C64, b: C64, c: C64, d: C64) -> Result<Self> {
        let det = a * d - b * c;
        if det.norm() <= 1e-12 || !det.norm().is_finite() {
            return Err(Error::Degenerate(format!("|ad-bc| = {:e}", det.norm())));
        }
        // scale to unit determinant so long compositions stay well conditioned
        let s = det.sqrt().inv();
        Ok(MoebiusMap { a: a * s, b: b * s, c: c * s, d: d * s })
    }

    pub fn identity() -> Self {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        MoebiusMap { a: one, b: zero, c: zero, d: one }
    }

    pub fn apply(&self, p: Pt) -> Pt {
        match p {
            Pt::Infinity => {
                if self.c.norm() <= 1e-300 {
                    Pt::Infinity
                } else {
                    Pt::Finite(self.a / self.c)
                }
            }
            Pt::Finite(z) => {
                let den = self.c * z + self.d;
                if den.norm() <= 1e-300 {
                    Pt::Infinity
                } else {
                    Pt::Finite((self.a * z + self.b) / den)
                }
            }
        }
    }

    /// Finite evaluation; the pole maps to a non-finite value.
    pub fn eval(&self, z: C64) -> C64 {
        (self.a * z + self.b) / (self.c * z + self.d)
    }

    pub fn deriv(&self, z: C64) -> C64 {
        let den = self.c * z + self.d;
        (self.a * self.d - self.b * self.c) / (den * den)
    }

    pub fn inverse(&self) -> Self {
        MoebiusMap { a: self.d, b: -self.b, c: -self.c, d: self.a }
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &MoebiusMap) -> Self {
        MoebiusMap {
            a: self.a * inner.a + self.b * inner.c,
            b: self.a * inner.b + self.b * inner.d,
            c: self.c * inner.a + self.d * inner.c,
            d: self.c * inner.b + self.d * inner.d,
        }
    }
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Sends `(z1, z2, z3)` to `(0, 1, ∞)`.
fn cross_ratio_map(z1: Pt, z2: Pt, z3: Pt) -> Result<MoebiusMap> {
    if z1.close(z2) || z2.close(z3) || z1.close(z3) {
        return Err(Error::UnderDetermined("coincident constraint points".into()));
    }
    let one = c(1.0, 0.0);
    let zero = c(0.0, 0.0);
    match (z1, z2, z3) {
        (Pt::Infinity, Pt::Finite(b), Pt::Finite(cc)) => MoebiusMap::new(zero, b - cc, one, -cc),
        (Pt::Finite(a), Pt::Infinity, Pt::Finite(cc)) => MoebiusMap::new(one, -a, one, -cc),
        (Pt::Finite(a), Pt::Finite(b), Pt::Infinity) => MoebiusMap::new(one, -a, zero, b - a),
        (Pt::Finite(a), Pt::Finite(b), Pt::Finite(cc)) => {
            MoebiusMap::new(b - cc, -a * (b - cc), b - a, -cc * (b - a))
        }
        _ => Err(Error::UnderDetermined("coincident constraint points".into())),
    }
}

/// Möbius map from `domain` onto the unit disk sending the interior point `p` to 0.
fn disk_normalizer(domain: DomainId, p: C64) -> Result<MoebiusMap> {
    let one = c(1.0, 0.0);
    match domain {
        DomainId::H => MoebiusMap::new(one, -p, one, -p.conj()),
        DomainId::D => MoebiusMap::new(one, -p, -p.conj(), one),
        _ => Err(Error::InvalidParam(format!("no disk normalizer for {}", domain.tag()))),
    }
}

fn reference_points(domain: DomainId) -> (Vec<C64>, Vec<Pt>) {
    match domain {
        DomainId::H => (
            vec![c(0.0, 1.0), c(1.0, 2.0), c(-0.5, 0.3)],
            vec![Pt::Finite(c(0.0, 0.0)), Pt::Finite(c(2.0, 0.0)), Pt::Finite(c(-1.0, 0.0))],
        ),
        DomainId::D => (
            vec![c(0.0, 0.0), c(0.3, 0.2), c(0.0, -0.5)],
            vec![Pt::Finite(c(1.0, 0.0)), Pt::Finite(c(0.0, 1.0)), Pt::Finite(c(-1.0, 0.0))],
        ),
        DomainId::S => (
            vec![c(0.0, PI / 2.0), c(1.0, 1.0), c(-2.0, 0.5)],
            vec![Pt::Finite(c(0.0, 0.0)), Pt::Finite(c(0.0, PI)), Pt::Finite(c(1.0, 0.0))],
        ),
        DomainId::C => (vec![c(0.0, 0.0), c(1.0, 1.0), c(0.0, -2.0)], vec![]),
    }
}

fn pt_in_interior(domain: DomainId, p: Pt) -> bool {
    match p {
        Pt::Infinity => false,
        Pt::Finite(z) => domain.is_interior(z),
    }
}

/// Fit the Möbius map `from -> to` satisfying up to three point constraints.
///
/// Accepted constraint sets: three boundary pairs (H, D) or three pairs on
/// `C` fixing ∞; one interior pair plus one boundary pair (H, D); two finite
/// pairs on `C` (affine). The strip is not a Möbius domain.
pub fn moebius_fit(from: DomainId, to: DomainId, pairs: &[(Pt, Pt)]) -> Result<MoebiusMap> {
    if matches!(from, DomainId::S) || matches!(to, DomainId::S) {
        return Err(Error::InvalidParam("the strip is not a Möbius domain; use the exp chart".into()));
    }
    let plane = matches!(from, DomainId::C) || matches!(to, DomainId::C);
    if plane && from != to {
        return Err(Error::InvalidParam("C is only Möbius-equivalent to itself".into()));
    }
    for &(s, t) in pairs {
        if !from.pt_in_closure(s) {
            return Err(Error::OutsideDomain(format!("{s:?}"), from.tag()));
        }
        if !to.pt_in_closure(t) {
            return Err(Error::OutsideDomain(format!("{t:?}"), to.tag()));
        }
        if !plane && from.pt_on_boundary(s) != to.pt_on_boundary(t) {
            return Err(Error::OverDetermined("boundary point paired with an interior point".into()));
        }
    }
    for i in 0..pairs.len() {
        for j in i + 1..pairs.len() {
            if pairs[i].0.close(pairs[j].0) || pairs[i].1.close(pairs[j].1) {
                return Err(Error::UnderDetermined("coincident constraint points".into()));
            }
        }
    }
    if pairs.len() > 3 {
        return Err(Error::OverDetermined(format!("{} constraints", pairs.len())));
    }
    let map = if plane {
        let finite: Vec<(C64, C64)> = pairs
            .iter()
            .filter_map(|&(s, t)| match (s, t) {
                (Pt::Finite(a), Pt::Finite(b)) => Some((a, b)),
                _ => None,
            })
            .collect();
        for &(s, t) in pairs {
            if (s == Pt::Infinity) != (t == Pt::Infinity) {
                return Err(Error::InvalidParam("automorphisms of C fix ∞".into()));
            }
        }
        match finite.len() {
            2 => {
                let (z1, w1) = finite[0];
                let (z2, w2) = finite[1];
                let k = (w2 - w1) / (z2 - z1);
                MoebiusMap::new(k, w1 - k * z1, c(0.0, 0.0), c(1.0, 0.0))?
            }
            n if n < 2 => return Err(Error::UnderDetermined(format!("{n} finite pairs on C"))),
            _ => return Err(Error::OverDetermined("three finite pairs on C".into())),
        }
    } else {
        let interior: Vec<(Pt, Pt)> = pairs.iter().copied().filter(|(s, _)| pt_in_interior(from, *s)).collect();
        let boundary: Vec<(Pt, Pt)> = pairs.iter().copied().filter(|(s, _)| !pt_in_interior(from, *s)).collect();
        match (interior.len(), boundary.len()) {
            (0, 3) => {
                let ts = cross_ratio_map(boundary[0].0, boundary[1].0, boundary[2].0)?;
                let td = cross_ratio_map(boundary[0].1, boundary[1].1, boundary[2].1)?;
                td.inverse().compose(&ts)
            }
            (1, 1) => {
                let p = interior[0].0.finite().unwrap();
                let q = interior[0].1.finite().unwrap();
                let np = disk_normalizer(from, p)?;
                let nq = disk_normalizer(to, q)?;
                let (Pt::Finite(u), Pt::Finite(v)) = (np.apply(boundary[0].0), nq.apply(boundary[0].1)) else {
                    return Err(Error::Degenerate("boundary constraint maps to ∞".into()));
                };
                let rot = v / u;
                let r = MoebiusMap::new(rot, c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0))?;
                nq.inverse().compose(&r.compose(&np))
            }
            (i, b) if i + b < 2 || (i == 0 && b < 3) => {
                return Err(Error::UnderDetermined(format!("{i} interior and {b} boundary pairs")))
            }
            (i, b) => return Err(Error::OverDetermined(format!("{i} interior and {b} boundary pairs"))),
        }
    };
    for &(s, t) in pairs {
        if !map.apply(s).close(t) {
            return Err(Error::Degenerate("fitted map misses a constraint".into()));
        }
    }
    check_onto(&ConfMap::Moebius(map), from, to)?;
    Ok(map)
}

/// A ray `{base + s·direction, s ≥ 0}` along which the argument jumps by 2π.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchCut {
    pub base: C64,
    pub direction: C64,
}

impl BranchCut {
    pub fn new(base: C64, direction: C64) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidParam("branch cut direction must be nonzero".into()));
        }
        Ok(BranchCut { base, direction: direction / n })
    }

    /// The principal cut along the negative real axis.
    pub fn principal() -> Self {
        BranchCut { base: c(0.0, 0.0), direction: c(-1.0, 0.0) }
    }

    /// The ray from 0 to `i∞`.
    pub fn up() -> Self {
        BranchCut { base: c(0.0, 0.0), direction: c(0.0, 1.0) }
    }
}

/// Continuous argument of `z - cut.base` on the complement of the cut.
///
/// With `θc = arg(direction) ∈ (-π, π]` the values lie in `(θc - 2π, θc)`
/// when `θc > 0` and in `(θc, θc + 2π)` otherwise, so the positive real
/// direction gets argument 0 for every cut that avoids it.
pub fn branch_arg(z: C64, cut: &BranchCut) -> Result<f64> {
    let v = z - cut.base;
    let along = v.re * cut.direction.re + v.im * cut.direction.im;
    let across = v.im * cut.direction.re - v.re * cut.direction.im;
    let dist = if along >= 0.0 { across.abs() } else { v.norm() };
    if dist <= 1e-12 {
        return Err(Error::OnCut);
    }
    let tc = cut.direction.arg();
    let mut a = v.arg();
    if tc > 0.0 {
        if a >= tc {
            a -= 2.0 * PI;
        }
    } else if a <= tc {
        a += 2.0 * PI;
    }
    Ok(a)
}

fn green_finite(domain: DomainId, z: C64, w: C64) -> f64 {
    match domain {
        DomainId::H => {
            -(z - w).norm().ln() - (z - w.conj()).norm().ln() + 2.0 * abs_plus(z).ln() + 2.0 * abs_plus(w).ln()
        }
        DomainId::S => green_finite(DomainId::H, z.exp(), w.exp()),
        DomainId::C => -(z - w).norm().ln() + abs_plus(z).ln() + abs_plus(w).ln(),
        // Neumann function of the disk, zero mean on the circle
        DomainId::D => -(z - w).norm().ln() - (c(1.0, 0.0) - z * w.conj()).norm().ln(),
    }
}

/// Green function of the reference domain (free-boundary normalizations).
///
/// `H`: `-log|z-w| - log|z-w̄| + 2log|z|_+ + 2log|w|_+`; `S`: `G_H(e^z, e^w)`;
/// `C`: `-log|z-w| + log|z|_+ + log|w|_+` with `G_C(z,∞) = log|z|_+`;
/// `D`: the Neumann function `-log|z-w| - log|1 - z w̄|`.
pub fn green_function(domain: DomainId, z: Pt, w: Pt) -> Result<f64> {
    for p in [z, w] {
        match p {
            Pt::Finite(v) if !domain.contains(v) => return Err(Error::OutsideDomain(format!("{v}"), domain.tag())),
            Pt::Infinity if !matches!(domain, DomainId::H | DomainId::C) => {
                return Err(Error::OutsideDomain("∞".into(), domain.tag()))
            }
            _ => {}
        }
    }
    match (z, w) {
        (Pt::Infinity, Pt::Infinity) => Err(Error::Coincident(0.0)),
        (Pt::Finite(v), Pt::Infinity) | (Pt::Infinity, Pt::Finite(v)) => Ok(match domain {
            DomainId::H => 2.0 * abs_plus(v).ln(),
            _ => abs_plus(v).ln(),
        }),
        (Pt::Finite(a), Pt::Finite(b)) => {
            let d = (a - b).norm();
            if d < 1e-14 {
                return Err(Error::Coincident(d));
            }
            Ok(green_finite(domain, a, b))
        }
    }
}

// ---------------------------------------------------------------- grids

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        BBox { x0, x1, y0, y1 }
    }

    pub fn contains(&self, z: C64) -> bool {
        let tx = 1e-12 * (1.0 + self.x0.abs().max(self.x1.abs()));
        let ty = 1e-12 * (1.0 + self.y0.abs().max(self.y1.abs()));
        z.re >= self.x0 - tx && z.re <= self.x1 + tx && z.im >= self.y0 - ty && z.im <= self.y1 + ty
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryKind {
    Dirichlet,
    Free,
}

/// A contiguous range of the counter-clockwise boundary ring of nodes,
/// which starts at the bottom-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub kind: BoundaryKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub domain: DomainId,
    pub nx: usize,
    pub ny: usize,
    pub bbox: BBox,
    pub segments: Vec<Segment>,
}

impl GridSpec {
    pub fn new(domain: DomainId, nx: usize, ny: usize, bbox: BBox, segments: Vec<Segment>) -> Result<Self> {
        let g = GridSpec { domain, nx, ny, bbox, segments };
        g.validate()?;
        Ok(g)
    }

    /// One segment of the given kind around the whole ring.
    pub fn uniform(domain: DomainId, nx: usize, ny: usize, bbox: BBox, kind: BoundaryKind) -> Result<Self> {
        let ring = 2 * (nx.max(1) - 1) + 2 * (ny.max(1) - 1);
        GridSpec::new(domain, nx, ny, bbox, vec![Segment { start: 0, len: ring, kind }])
    }

    /// Per-side kinds in the order bottom, right, top, left. Each side owns
    /// the corner it starts from.
    pub fn sides(domain: DomainId, nx: usize, ny: usize, bbox: BBox, kinds: [BoundaryKind; 4]) -> Result<Self> {
        if nx < 8 || ny < 8 {
            return Err(Error::InvalidGrid(format!("{nx}x{ny} is below the 8x8 minimum")));
        }
        let lens = [nx - 1, ny - 1, nx - 1, ny - 1];
        let mut segs: Vec<Segment> = Vec::new();
        let mut start = 0;
        for (k, &len) in lens.iter().enumerate() {
            match segs.last_mut() {
                Some(last) if last.kind == kinds[k] => last.len += len,
                _ => segs.push(Segment { start, len, kind: kinds[k] }),
            }
            start += len;
        }
        GridSpec::new(domain, nx, ny, bbox, segs)
    }

    /// Free-boundary half-plane box `[-half_width, half_width] x [0, height]`.
    pub fn h_box(nx: usize, ny: usize, half_width: f64, height: f64) -> Result<Self> {
        GridSpec::uniform(DomainId::H, nx, ny, BBox::new(-half_width, half_width, 0.0, height), BoundaryKind::Free)
    }

    /// Free-boundary strip window `[x0, x1] x [0, π]`.
    pub fn strip(nx: usize, ny: usize, x0: f64, x1: f64) -> Result<Self> {
        GridSpec::uniform(DomainId::S, nx, ny, BBox::new(x0, x1, 0.0, PI), BoundaryKind::Free)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 8 || self.ny < 8 {
            return Err(Error::InvalidGrid(format!("{}x{} is below the 8x8 minimum", self.nx, self.ny)));
        }
        let b = self.bbox;
        if !(b.x0 < b.x1 && b.y0 < b.y1) || ![b.x0, b.x1, b.y0, b.y1].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGrid("bounding box must be a finite nondegenerate rectangle".into()));
        }
        match self.domain {
            DomainId::H if b.y0 < -EDGE_TOL => return Err(Error::InvalidGrid("H box must lie in Im z >= 0".into())),
            DomainId::S if b.y0 < -EDGE_TOL || b.y1 > PI + EDGE_TOL => {
                return Err(Error::InvalidGrid("S box must lie in 0 <= Im z <= π".into()))
            }
            _ => {}
        }
        let ring = self.ring_len();
        let mut pos = 0;
        for s in &self.segments {
            if s.start != pos || s.len == 0 {
                return Err(Error::InvalidGrid("boundary segments must partition the ring in order".into()));
            }
            pos += s.len;
        }
        if pos != ring {
            return Err(Error::InvalidGrid(format!("segments cover {pos} of {ring} ring nodes")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hx(&self) -> f64 {
        (self.bbox.x1 - self.bbox.x0) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.bbox.y1 - self.bbox.y0) / (self.ny - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.nx {
            self.bbox.x1
        } else {
            self.bbox.x0 + i as f64 * self.hx()
        }
    }

    pub fn y(&self, j: usize) -> f64 {
        if j + 1 == self.ny {
            self.bbox.y1
        } else {
            self.bbox.y0 + j as f64 * self.hy()
        }
    }

    pub fn node(&self, i: usize, j: usize) -> C64 {
        C64::new(self.x(i), self.y(j))
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Nodes of `D` grids outside the closed disk are inactive.
    pub fn active(&self, i: usize, j: usize) -> bool {
        match self.domain {
            DomainId::D => self.node(i, j).norm() <= 1.0 + 1e-12,
            _ => true,
        }
    }

    pub fn ring_len(&self) -> usize {
        2 * (self.nx - 1) + 2 * (self.ny - 1)
    }

    pub fn ring_node(&self, k: usize) -> (usize, usize) {
        let (a, b) = (self.nx - 1, self.ny - 1);
        if k < a {
            (k, 0)
        } else if k < a + b {
            (a, k - a)
        } else if k < 2 * a + b {
            (a - (k - a - b), b)
        } else {
            (0, b - (k - 2 * a - b))
        }
    }

    pub fn ring_index(&self, i: usize, j: usize) -> Option<usize> {
        let (a, b) = (self.nx - 1, self.ny - 1);
        if j == 0 && i < a {
            Some(i)
        } else if i == a && j < b {
            Some(a + j)
        } else if j == b && i > 0 {
            Some(a + b + (a - i))
        } else if i == 0 && j > 0 {
            Some(2 * a + b + (b - j))
        } else {
            None
        }
    }

    pub fn segment_of(&self, k: usize) -> usize {
        self.segments.iter().position(|s| k >= s.start && k < s.start + s.len).unwrap_or(0)
    }

    pub fn boundary_kind(&self, i: usize, j: usize) -> Option<BoundaryKind> {
        self.ring_index(i, j).map(|k| self.segments[self.segment_of(k)].kind)
    }

    pub fn all_kind(&self, kind: BoundaryKind) -> bool {
        self.segments.iter().all(|s| s.kind == kind)
    }

    /// Whether a side of the box lies on the boundary of the reference domain
    /// (other sides are truncation cuts).
    pub fn side_on_domain_boundary(&self, side: Side) -> bool {
        let b = self.bbox;
        match (self.domain, side) {
            (DomainId::H, Side::Bottom) | (DomainId::S, Side::Bottom) => b.y0.abs() <= EDGE_TOL,
            (DomainId::S, Side::Top) => (b.y1 - PI).abs() <= EDGE_TOL,
            _ => false,
        }
    }

    pub fn contains(&self, z: C64) -> bool {
        self.bbox.contains(z)
    }

    /// Cell containing `z` and the fractional offsets within it.
    pub fn locate(&self, z: C64) -> Option<(usize, usize, f64, f64)> {
        if !self.bbox.contains(z) {
            return None;
        }
        let fx = ((z.re - self.bbox.x0) / self.hx()).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((z.im - self.bbox.y0) / self.hy()).clamp(0.0, (self.ny - 1) as f64);
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        Some((i, j, fx - i as f64, fy - j as f64))
    }

    pub fn same_layout(&self, o: &GridSpec) -> bool {
        self.domain == o.domain && self.nx == o.nx && self.ny == o.ny && self.bbox == o.bbox
    }
}

// ---------------------------------------------------------------- maps

/// Conformal maps between reference domains used by the coordinate changes.
#[derive(Clone, Debug, PartialEq)]
pub enum ConfMap {
    Moebius(MoebiusMap),
    /// `S -> H`, `z -> e^z`.
    Exp,
    /// `H -> S`, principal logarithm.
    Log,
    /// Applied left to right.
    Compose(Vec<ConfMap>),
}

impl ConfMap {
    pub fn identity() -> Self {
        ConfMap::Moebius(MoebiusMap::identity())
    }

    pub fn apply(&self, z: C64) -> C64 {
        match self {
            ConfMap::Moebius(m) => m.eval(z),
            ConfMap::Exp => z.exp(),
            ConfMap::Log => z.ln(),
            ConfMap::Compose(v) => v.iter().fold(z, |w, f| f.apply(w)),
        }
    }

    pub fn deriv(&self, z: C64) -> C64 {
        match self {
            ConfMap::Moebius(m) => m.deriv(z),
            ConfMap::Exp => z.exp(),
            ConfMap::Log => z.inv(),
            ConfMap::Compose(v) => {
                let mut w = z;
                let mut d = C64::new(1.0, 0.0);
                for f in v {
                    d *= f.deriv(w);
                    w = f.apply(w);
                }
                d
            }
        }
    }

    pub fn inverse(&self) -> ConfMap {
        match self {
            ConfMap::Moebius(m) => ConfMap::Moebius(m.inverse()),
            ConfMap::Exp => ConfMap::Log,
            ConfMap::Log => ConfMap::Exp,
            ConfMap::Compose(v) => ConfMap::Compose(v.iter().rev().map(|f| f.inverse()).collect()),
        }
    }
}

/// Checks on reference points that `f` sends `from` onto `to`.
pub fn check_onto(f: &ConfMap, from: DomainId, to: DomainId) -> Result<()> {
    let (interior, boundary) = reference_points(from);
    for z in interior {
        let w = f.apply(z);
        if !(w.re.is_finite() && w.im.is_finite()) {
            continue; // the pole may sit at a reference point
        }
        if !to.is_interior(w) {
            return Err(Error::Degenerate(format!(
                "map sends interior point {z} of {} outside the interior of {}",
                from.tag(),
                to.tag()
            )));
        }
    }
    for p in boundary {
        let w = f.apply(p.finite().unwrap());
        if w.re.is_finite() && w.im.is_finite() && !to.on_boundary(w) {
            let scaled_ok = match to {
                DomainId::H => w.im.abs() <= 1e-9 * (1.0 + w.norm()),
                DomainId::D => (w.norm() - 1.0).abs() <= 1e-9,
                DomainId::S => w.im.abs() <= 1e-9 || (w.im - PI).abs() <= 1e-9,
                DomainId::C => true,
            };
            if !scaled_ok {
                return Err(Error::Degenerate(format!("map sends boundary point {p:?} off the boundary")));
            }
        }
    }
    Ok(())
}

/// `h ∘ f^{-1} + Q log|(f^{-1})'|`, sampled on `target`.
pub fn lqg_pushforward(field: &FieldSample, f: &ConfMap, gamma: f64, target: &GridSpec) -> Result<FieldSample> {
    crate::check_gamma(gamma)?;
    check_onto(f, field.grid.domain, target.domain)?;
    let q = q_of(gamma);
    let finv = f.inverse();
    let mut out = FieldSample::zeros(target.clone());
    for j in 0..target.ny {
        for i in 0..target.nx {
            if !target.active(i, j) {
                continue;
            }
            let w = target.node(i, j);
            let z = finv.apply(w);
            let v = field.interp(z).ok_or_else(|| {
                Error::Coverage(format!("target node {w} pulls back to {z}, outside the source grid"))
            })?;
            out.values[target.idx(i, j)] = v + q * finv.deriv(w).norm().ln();
        }
    }
    out.normalization = Normalization::None;
    out.log_weight = field.log_weight;
    out.seed = field.seed;
    out.gamma = Some(gamma);
    Ok(out)
}

/// `h ∘ f - χ arg f'` on the grid `out` over the domain of `f`, where `h`
/// lives on the image domain.
pub fn ig_pushforward(field: &FieldSample, f: &ConfMap, chi: f64, cut: &BranchCut, out: &GridSpec) -> Result<FieldSample> {
    check_onto(f, out.domain, field.grid.domain)?;
    let mut res = FieldSample::zeros(out.clone());
    for j in 0..out.ny {
        for i in 0..out.nx {
            if !out.active(i, j) {
                continue;
            }
            let z = out.node(i, j);
            let w = f.apply(z);
            let v = field
                .interp(w)
                .ok_or_else(|| Error::Coverage(format!("node {z} maps to {w}, outside the source grid")))?;
            let a = if chi == 0.0 { 0.0 } else { branch_arg(f.deriv(z), cut)? };
            res.values[out.idx(i, j)] = v - chi * a;
        }
    }
    res.seed = field.seed;
    res.log_weight = field.log_weight;
    res.gamma = field.gamma;
    Ok(res)
}

// ---------------------------------------------------------------- harmonic solver

/// Weighted five-point graph on an `nx x ny` rectangle with spacings `hx, hy`:
/// horizontal edges carry `hy/hx`, vertical edges `hx/hy`, and edges running
/// along the rectangle's border carry half weight (natural Neumann).
#[derive(Clone, Copy, Debug)]
pub(crate) struct GridGraph {
    pub nx: usize,
    pub ny: usize,
    pub wx: f64,
    pub wy: f64,
}

impl GridGraph {
    pub fn new(nx: usize, ny: usize, hx: f64, hy: f64) -> Self {
        GridGraph { nx, ny, wx: hy / hx, wy: hx / hy }
    }

    /// Neighbors of node `(i, j)` with edge weights.
    #[inline]
    pub fn neighbors(&self, i: usize, j: usize, out: &mut [(usize, f64); 4]) -> usize {
        let mut n = 0;
        let hw = if j == 0 || j + 1 == self.ny { 0.5 * self.wx } else { self.wx };
        let vw = if i == 0 || i + 1 == self.nx { 0.5 * self.wy } else { self.wy };
        if i > 0 {
            out[n] = (j * self.nx + i - 1, hw);
            n += 1;
        }
        if i + 1 < self.nx {
            out[n] = (j * self.nx + i + 1, hw);
            n += 1;
        }
        if j > 0 {
            out[n] = ((j - 1) * self.nx + i, vw);
            n += 1;
        }
        if j + 1 < self.ny {
            out[n] = ((j + 1) * self.nx + i, vw);
            n += 1;
        }
        n
    }
}

/// Red-black SOR for the weighted graph Laplacian with the given fixed
/// (Dirichlet) values; inactive nodes are removed from the graph. Returns the
/// solution and the final normalized residual.
pub(crate) fn solve_laplace(
    g: GridGraph,
    fixed: &[Option<f64>],
    active: &[bool],
    init: &[f64],
    tol: f64,
    max_sweeps: usize,
) -> Result<(Vec<f64>, f64)> {
    let n = g.nx * g.ny;
    let mut u = init.to_vec();
    let mut any_fixed = false;
    let mut any_free_border = false;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = j * g.nx + i;
            if !active[k] {
                continue;
            }
            match fixed[k] {
                Some(v) => {
                    u[k] = v;
                    any_fixed = true;
                }
                None => {
                    if i == 0 || j == 0 || i + 1 == g.nx || j + 1 == g.ny {
                        any_free_border = true;
                    }
                }
            }
        }
    }
    if !any_fixed {
        return Err(Error::AllNeumann);
    }
    // flattened adjacency of the free nodes
    let mut free: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut nb_start: Vec<usize> = vec![0; n + 1];
    let mut nb: Vec<(usize, f64)> = Vec::with_capacity(4 * n);
    let mut wsum = vec![0.0; n];
    let mut buf = [(0usize, 0.0f64); 4];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = j * g.nx + i;
            nb_start[k] = nb.len();
            if !active[k] || fixed[k].is_some() {
                continue;
            }
            let m = g.neighbors(i, j, &mut buf);
            for &(q, w) in &buf[..m] {
                if active[q] {
                    nb.push((q, w));
                    wsum[k] += w;
                }
            }
            if wsum[k] > 0.0 {
                free[(i + j) % 2].push(k);
            }
        }
    }
    nb_start[n] = nb.len();
    let scale = fixed.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    let size = g.nx.max(g.ny) as f64 * if any_free_border { 2.0 } else { 1.0 };
    let omega = 2.0 / (1.0 + (PI / size).sin());
    let residual = |u: &[f64]| -> f64 {
        let mut r: f64 = 0.0;
        for color in &free {
            for &k in color {
                let s: f64 = nb[nb_start[k]..nb_start[k + 1]].iter().map(|&(q, w)| w * u[q]).sum();
                r = r.max((s / wsum[k] - u[k]).abs());
            }
        }
        r / scale
    };
    let mut res = f64::INFINITY;
    for sweep in 0..max_sweeps {
        for color in &free {
            for &k in color {
                let s: f64 = nb[nb_start[k]..nb_start[k + 1]].iter().map(|&(q, w)| w * u[q]).sum();
                u[k] += omega * (s / wsum[k] - u[k]);
            }
        }
        if sweep % 8 == 7 {
            res = residual(&u);
            if res < tol {
                return Ok((u, res));
            }
        }
    }
    Err(Error::NoConvergence { iterations: max_sweeps, residual: res })
}

/// Discrete harmonic function with Dirichlet data on the non-Neumann
/// segments (one vector per segment, in ring order) and zero discrete
/// normal derivative on the Neumann segments.
pub fn harmonic_extension(boundary_values: &[Vec<f64>], grid: &GridSpec, neumann_segments: &[usize]) -> Result<FieldSample> {
    grid.validate()?;
    if boundary_values.len() != grid.segments.len() {
        return Err(Error::InvalidParam(format!(
            "{} value vectors for {} segments",
            boundary_values.len(),
            grid.segments.len()
        )));
    }
    if (0..grid.segments.len()).all(|s| neumann_segments.contains(&s)) {
        return Err(Error::AllNeumann);
    }
    let n = grid.len();
    let mut fixed = vec![None; n];
    for (s, seg) in grid.segments.iter().enumerate() {
        if neumann_segments.contains(&s) {
            continue;
        }
        if boundary_values[s].len() != seg.len {
            return Err(Error::InvalidParam(format!("segment {s} needs {} values", seg.len)));
        }
        for (o, &v) in boundary_values[s].iter().enumerate() {
            let (i, j) = grid.ring_node(seg.start + o);
            fixed[grid.idx(i, j)] = Some(v);
        }
    }
    let active: Vec<bool> = (0..n).map(|k| grid.active(k % grid.nx, k / grid.nx)).collect();
    let mean = {
        let vs: Vec<f64> = fixed.iter().flatten().copied().collect();
        vs.iter().sum::<f64>() / vs.len().max(1) as f64
    };
    let init = vec![mean; n];
    let gg = GridGraph::new(grid.nx, grid.ny, grid.hx(), grid.hy());
    let (u, _) = solve_laplace(gg, &fixed, &active, &init, 1e-10, 200_000)?;
    let mut f = FieldSample::zeros(grid.clone());
    f.values = u;
    Ok(f)
}

/// Max normalized residual of the weighted Laplacian over the interior nodes
/// (and over the nodes of the listed Neumann segments).
pub fn laplacian_residual(field: &FieldSample, neumann_segments: &[usize]) -> f64 {
    let g = &field.grid;
    let gg = GridGraph::new(g.nx, g.ny, g.hx(), g.hy());
    let mut buf = [(0usize, 0.0f64); 4];
    let scale = field.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut r: f64 = 0.0;
    for j in 0..g.ny {
        for i in 0..g.nx {
            if let Some(k) = g.ring_index(i, j) {
                if !neumann_segments.contains(&g.segment_of(k)) {
                    continue;
                }
            }
            let m = gg.neighbors(i, j, &mut buf);
            let (mut s, mut w) = (0.0, 0.0);
            for &(q, wq) in &buf[..m] {
                s += wq * field.values[q];
                w += wq;
            }
            r = r.max((s / w - field.values[g.idx(i, j)]).abs());
        }
    }
    r / scale
}

/// Marker so that generic field consumers can take either sampled grids or
/// analytic fields.
pub fn eval_or_err(field: &dyn ScalarField, z: C64) -> Result<f64> {
    field.eval(z).ok_or_else(|| Error::Coverage(format!("{z} is outside the field's grid")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cz(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn green_h_at_2i_i() {
        let g = green_function(DomainId::H, Pt::Finite(cz(0.0, 2.0)), Pt::Finite(cz(0.0, 1.0))).unwrap();
        // hand evaluation: -ln 1 - ln 3 + 2 ln 2 + 0
        assert_abs_diff_eq!(g, 2.0 * 2f64.ln() - 3f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(g, 0.287682, epsilon = 1e-6);
    }

    #[test]
    fn green_errors() {
        let z = Pt::Finite(cz(0.3, 0.4));
        assert!(matches!(green_function(DomainId::H, z, z), Err(Error::Coincident(_))));
        assert!(matches!(
            green_function(DomainId::H, z, Pt::Finite(cz(0.0, -1.0))),
            Err(Error::OutsideDomain(..))
        ));
        assert!(green_function(DomainId::S, z, Pt::Finite(cz(0.0, 4.0))).is_err());
        assert_abs_diff_eq!(
            green_function(DomainId::C, Pt::Finite(cz(3.0, 4.0)), Pt::Infinity).unwrap(),
            5f64.ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn green_disk_has_zero_boundary_mean() {
        let w = cz(0.3, -0.2);
        let n = 4000;
        let m: f64 = (0..n)
            .map(|k| {
                let t = 2.0 * PI * (k as f64 + 0.5) / n as f64;
                green_finite(DomainId::D, C64::from_polar(1.0, t), w)
            })
            .sum::<f64>()
            / n as f64;
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn moebius_h_to_d() {
        let f = moebius_fit(
            DomainId::H,
            DomainId::D,
            &[(Pt::Finite(cz(0.0, 1.0)), Pt::Finite(cz(0.0, 0.0))), (Pt::Finite(cz(0.0, 0.0)), Pt::Finite(cz(1.0, 0.0)))],
        )
        .unwrap();
        assert!(f.eval(cz(0.0, 1.0)).norm() < 1e-12);
        assert!((f.eval(cz(0.0, 0.0)) - cz(1.0, 0.0)).norm() < 1e-12);
        // (i - z)/(i + z)
        let z = cz(0.7, 0.4);
        assert!((f.eval(z) - (cz(0.0, 1.0) - z) / (cz(0.0, 1.0) + z)).norm() < 1e-12);
    }

    #[test]
    fn moebius_three_point_rotation() {
        let f = moebius_fit(
            DomainId::H,
            DomainId::H,
            &[
                (Pt::Finite(cz(0.0, 0.0)), Pt::Finite(cz(1.0, 0.0))),
                (Pt::Finite(cz(1.0, 0.0)), Pt::Infinity),
                (Pt::Infinity, Pt::Finite(cz(0.0, 0.0))),
            ],
        )
        .unwrap();
        assert_eq!(f.apply(Pt::Finite(cz(1.0, 0.0))), Pt::Infinity);
        assert!(f.apply(Pt::Infinity).finite().unwrap().norm() < 1e-12);
        // z -> 1/(1-z)
        let z = cz(0.2, 0.9);
        assert!((f.eval(z) - (cz(1.0, 0.0) - z).inv()).norm() < 1e-12);
    }

    #[test]
    fn moebius_identity_and_errors() {
        let f = moebius_fit(
            DomainId::H,
            DomainId::H,
            &[
                (Pt::Finite(cz(0.0, 0.0)), Pt::Finite(cz(0.0, 0.0))),
                (Pt::Finite(cz(1.0, 0.0)), Pt::Finite(cz(1.0, 0.0))),
                (Pt::Infinity, Pt::Infinity),
            ],
        )
        .unwrap();
        let z = cz(-0.3, 2.0);
        assert!((f.eval(z) - z).norm() < 1e-12);
        assert!(matches!(
            moebius_fit(DomainId::H, DomainId::D, &[(Pt::Finite(cz(0.0, 1.0)), Pt::Finite(cz(0.0, 0.0)))]),
            Err(Error::UnderDetermined(_))
        ));
        // orientation reversing boundary triple
        assert!(moebius_fit(
            DomainId::H,
            DomainId::H,
            &[
                (Pt::Finite(cz(0.0, 0.0)), Pt::Finite(cz(1.0, 0.0))),
                (Pt::Finite(cz(1.0, 0.0)), Pt::Finite(cz(0.0, 0.0))),
                (Pt::Infinity, Pt::Infinity),
            ],
        )
        .is_err());
        assert!(moebius_fit(DomainId::S, DomainId::H, &[]).is_err());
    }

    #[test]
    fn branch_arg_examples() {
        assert_abs_diff_eq!(branch_arg(cz(1.0, 0.0), &BranchCut::up()).unwrap(), 0.0, epsilon = 1e-15);
        let down = BranchCut::new(cz(0.0, 0.0), cz(0.0, -1.0)).unwrap();
        assert_abs_diff_eq!(branch_arg(C64::from_polar(1.0, PI / 4.0), &down).unwrap(), PI / 4.0, epsilon = 1e-14);
        let left = branch_arg(cz(-1e-9, 1.0), &BranchCut::up()).unwrap();
        let right = branch_arg(cz(1e-9, 1.0), &BranchCut::up()).unwrap();
        assert_abs_diff_eq!((left - right).abs(), 2.0 * PI, epsilon = 1e-6);
        assert!(matches!(branch_arg(cz(0.0, 3.0), &BranchCut::up()), Err(Error::OnCut)));
    }

    #[test]
    fn grid_ring_roundtrip() {
        let g = GridSpec::h_box(9, 11, 1.0, 2.0).unwrap();
        for k in 0..g.ring_len() {
            let (i, j) = g.ring_node(k);
            assert_eq!(g.ring_index(i, j), Some(k));
        }
        assert_eq!(g.ring_index(3, 3), None);
        assert!(GridSpec::h_box(7, 11, 1.0, 2.0).is_err());
        let s = GridSpec::sides(
            DomainId::H,
            9,
            9,
            BBox::new(0.0, 1.0, 0.0, 1.0),
            [BoundaryKind::Free, BoundaryKind::Dirichlet, BoundaryKind::Dirichlet, BoundaryKind::Dirichlet],
        )
        .unwrap();
        assert_eq!(s.segments.len(), 2);
        assert_eq!(s.boundary_kind(3, 0), Some(BoundaryKind::Free));
        assert_eq!(s.boundary_kind(8, 0), Some(BoundaryKind::Dirichlet));
    }

    fn ring_values(g: &GridSpec, f: impl Fn(C64) -> f64) -> Vec<Vec<f64>> {
        g.segments
            .iter()
            .map(|s| (0..s.len).map(|o| {
                let (i, j) = g.ring_node(s.start + o);
                f(g.node(i, j))
            }).collect())
            .collect()
    }

    #[test]
    fn harmonic_extension_constants_and_linear() {
        let g = GridSpec::uniform(DomainId::C, 21, 17, BBox::new(0.0, 1.0, 0.0, 1.0), BoundaryKind::Dirichlet).unwrap();
        let u = harmonic_extension(&ring_values(&g, |_| 2.5), &g, &[]).unwrap();
        assert!(u.values.iter().all(|v| (v - 2.5).abs() < 1e-8));
        let u = harmonic_extension(&ring_values(&g, |z| z.re), &g, &[]).unwrap();
        for j in 0..g.ny {
            for i in 0..g.nx {
                assert!((u.values[g.idx(i, j)] - g.node(i, j).re).abs() < 1e-7);
            }
        }
        assert!(laplacian_residual(&u, &[]) < 1e-8);
    }

    #[test]
    fn harmonic_extension_neumann_side() {
        // data depending on y only with a free left/right pair reproduces y
        // corners stay Dirichlet
        let (d, f) = (BoundaryKind::Dirichlet, BoundaryKind::Free);
        let segs = vec![
            Segment { start: 0, len: 17, kind: d },
            Segment { start: 17, len: 15, kind: f },
            Segment { start: 32, len: 17, kind: d },
            Segment { start: 49, len: 15, kind: f },
        ];
        let g = GridSpec::new(DomainId::C, 17, 17, BBox::new(0.0, 1.0, 0.0, 1.0), segs).unwrap();
        let neumann: Vec<usize> =
            (0..g.segments.len()).filter(|&s| g.segments[s].kind == BoundaryKind::Free).collect();
        let u = harmonic_extension(&ring_values(&g, |z| z.im), &g, &neumann).unwrap();
        for j in 0..g.ny {
            for i in 0..g.nx {
                assert!((u.values[g.idx(i, j)] - g.node(i, j).im).abs() < 1e-7);
            }
        }
        let all: Vec<usize> = (0..g.segments.len()).collect();
        assert!(matches!(harmonic_extension(&ring_values(&g, |_| 0.0), &g, &all), Err(Error::AllNeumann)));
    }

    #[test]
    fn pushforward_scaling_constant() {
        let g = GridSpec::h_box(17, 17, 2.0, 2.0).unwrap();
        let mut f = FieldSample::zeros(g.clone());
        f.values.iter_mut().for_each(|v| *v = 1.25);
        let two = ConfMap::Moebius(MoebiusMap::new(cz(2.0, 0.0), cz(0.0, 0.0), cz(0.0, 0.0), cz(1.0, 0.0)).unwrap());
        let gamma = 1.2;
        let out = lqg_pushforward(&f, &two, gamma, &g).unwrap();
        let q = q_of(gamma);
        assert!(out.values.iter().all(|v| (v - (1.25 - q * 2f64.ln())).abs() < 1e-12));
        let id = lqg_pushforward(&f, &ConfMap::identity(), gamma, &g).unwrap();
        assert_eq!(id.values, f.values);
    }

    #[test]
    fn ig_pushforward_rotation() {
        let g = GridSpec::uniform(DomainId::D, 17, 17, BBox::new(-1.0, 1.0, -1.0, 1.0), BoundaryKind::Free).unwrap();
        let mut f = FieldSample::zeros(g.clone());
        f.values.iter_mut().for_each(|v| *v = 0.5);
        let th = 0.7;
        let rot = ConfMap::Moebius(
            MoebiusMap::new(C64::from_polar(1.0, th), cz(0.0, 0.0), cz(0.0, 0.0), cz(1.0, 0.0)).unwrap(),
        );
        let chi = 2f64.sqrt() / 2.0;
        let out = ig_pushforward(&f, &rot, chi, &BranchCut::principal(), &g).unwrap();
        for j in 0..g.ny {
            for i in 0..g.nx {
                if g.active(i, j) {
                    assert!((out.values[g.idx(i, j)] - (0.5 - chi * th)).abs() < 1e-12);
                }
            }
        }
    }
}
