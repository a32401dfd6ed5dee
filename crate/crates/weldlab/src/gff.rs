//! Gaussian free field samplers on rectangular grids.
//!
//! Convention: the Dirichlet inner product is `(2π)^{-1}∫∇f·∇g`, so the
//! discrete covariance is `2π L^{-1}` with `L` the weighted five-point graph
//! Laplacian of [`crate::conformal`] (horizontal weight `hy/hx`, vertical
//! `hx/hy`). With this scaling `Cov(h(z), h(w)) ≈ -log|z-w|` at short range.

use crate::conformal::{BoundaryKind, DomainId, GridGraph, GridSpec, Side};
use crate::error::{Error, Result};
use crate::rng::{Rng, Streams};
use crate::C64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// Average zero on the unit semicircle (H).
    ZeroAvgUnitSemicircle,
    /// Average zero on `{0} x [0, π]` (S).
    ZeroAvgVerticalLine0,
    /// Average zero on the unit circle (C).
    ZeroAvgUnitCircle,
    None,
}

impl Normalization {
    pub fn tag(&self) -> &'static str {
        match self {
            Normalization::ZeroAvgUnitSemicircle => "zero_avg_unit_semicircle",
            Normalization::ZeroAvgVerticalLine0 => "zero_avg_vertical_line_0",
            Normalization::ZeroAvgUnitCircle => "zero_avg_unit_circle",
            Normalization::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Normalization::ZeroAvgUnitSemicircle,
            Normalization::ZeroAvgVerticalLine0,
            Normalization::ZeroAvgUnitCircle,
            Normalization::None,
        ]
        .into_iter()
        .find(|n| n.tag() == s.trim())
    }

    /// The anchor used for free fields on `domain`.
    pub fn for_domain(domain: DomainId) -> Option<Self> {
        match domain {
            DomainId::H => Some(Normalization::ZeroAvgUnitSemicircle),
            DomainId::S => Some(Normalization::ZeroAvgVerticalLine0),
            DomainId::C => Some(Normalization::ZeroAvgUnitCircle),
            DomainId::D => None,
        }
    }
}

/// Anything that can be evaluated pointwise over a grid's bounding box.
pub trait ScalarField: Sync {
    fn grid(&self) -> &GridSpec;
    fn eval(&self, z: C64) -> Option<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub grid: GridSpec,
    /// Row-major: `values[j * nx + i]` at `grid.node(i, j)`.
    pub values: Vec<f64>,
    pub normalization: Normalization,
    pub log_weight: f64,
    pub seed: u64,
    pub gamma: Option<f64>,
}

impl FieldSample {
    pub fn zeros(grid: GridSpec) -> Self {
        let n = grid.len();
        FieldSample { grid, values: vec![0.0; n], normalization: Normalization::None, log_weight: 0.0, seed: 0, gamma: None }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(C64) -> f64) -> Self {
        let mut s = FieldSample::zeros(grid);
        for j in 0..s.grid.ny {
            for i in 0..s.grid.nx {
                let k = s.grid.idx(i, j);
                s.values[k] = f(s.grid.node(i, j));
            }
        }
        s
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.nx + i]
    }

    /// Bilinear interpolation; `None` outside the bounding box.
    pub fn interp(&self, z: C64) -> Option<f64> {
        let (i, j, fx, fy) = self.grid.locate(z)?;
        let nx = self.grid.nx;
        let v00 = self.values[j * nx + i];
        let v10 = self.values[j * nx + i + 1];
        let v01 = self.values[(j + 1) * nx + i];
        let v11 = self.values[(j + 1) * nx + i + 1];
        Some((1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11))
    }

    pub fn shifted(&self, a: f64) -> Self {
        let mut s = self.clone();
        s.values.iter_mut().for_each(|v| *v += a);
        s
    }
}

impl ScalarField for FieldSample {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn eval(&self, z: C64) -> Option<f64> {
        self.interp(z)
    }
}

fn normals(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

// ---------------------------------------------------------------- Dirichlet

/// Spectral sampler with covariance `2π L^{-1}` on the interior nodes,
/// zero on the rectangle's border.
pub struct DirichletSampler {
    grid: GridSpec,
    sx: Vec<f64>,
    sy: Vec<f64>,
    scale: Vec<f64>,
}

fn sine_basis(n: usize) -> Vec<f64> {
    // rows m = 1..n-1, columns i = 1..n-1 of sqrt(2/(n-1)) sin(π m i/(n-1))
    let nn = n - 1;
    let k = nn - 1;
    let norm = (2.0 / nn as f64).sqrt();
    let mut s = vec![0.0; k * k];
    for m in 0..k {
        for i in 0..k {
            s[m * k + i] = norm * (PI * ((m + 1) * (i + 1)) as f64 / nn as f64).sin();
        }
    }
    s
}

impl DirichletSampler {
    pub fn new(grid: &GridSpec) -> Result<Self> {
        grid.validate()?;
        if !grid.all_kind(BoundaryKind::Dirichlet) {
            return Err(Error::InvalidParam("Dirichlet sampler needs all segments Dirichlet".into()));
        }
        let (kx, ky) = (grid.nx - 2, grid.ny - 2);
        let (wx, wy) = (grid.hy() / grid.hx(), grid.hx() / grid.hy());
        let mut scale = vec![0.0; kx * ky];
        for n in 0..ky {
            let ly = wy * 4.0 * (PI * (n + 1) as f64 / (2.0 * (grid.ny - 1) as f64)).sin().powi(2);
            for m in 0..kx {
                let lx = wx * 4.0 * (PI * (m + 1) as f64 / (2.0 * (grid.nx - 1) as f64)).sin().powi(2);
                scale[n * kx + m] = (2.0 * PI / (lx + ly)).sqrt();
            }
        }
        Ok(DirichletSampler { grid: grid.clone(), sx: sine_basis(grid.nx), sy: sine_basis(grid.ny), scale })
    }

    pub fn sample_with(&self, rng: &mut Rng) -> Vec<f64> {
        let g = &self.grid;
        let (kx, ky) = (g.nx - 2, g.ny - 2);
        let a: Vec<f64> = normals(rng, kx * ky).iter().zip(&self.scale).map(|(x, s)| x * s).collect();
        // t[n][i] = Σ_m a[n][m] sx[m][i]
        let mut t = vec![0.0; ky * kx];
        for n in 0..ky {
            let row = &mut t[n * kx..(n + 1) * kx];
            for m in 0..kx {
                let c = a[n * kx + m];
                let s = &self.sx[m * kx..(m + 1) * kx];
                for (r, v) in row.iter_mut().zip(s) {
                    *r += c * v;
                }
            }
        }
        let mut out = vec![0.0; g.len()];
        for j in 0..ky {
            let dst = &mut out[(j + 1) * g.nx + 1..(j + 1) * g.nx + 1 + kx];
            for n in 0..ky {
                let c = self.sy[n * ky + j];
                for (d, v) in dst.iter_mut().zip(&t[n * kx..(n + 1) * kx]) {
                    *d += c * v;
                }
            }
        }
        out
    }

    pub fn sample(&self, seed: u64) -> FieldSample {
        let mut rng = Streams::new(seed, "gff:dirichlet").rng(0);
        let mut f = FieldSample::zeros(self.grid.clone());
        f.values = self.sample_with(&mut rng);
        f.seed = seed;
        f
    }
}

pub fn sample_dirichlet_gff(grid: &GridSpec, seed: u64) -> Result<FieldSample> {
    if grid.domain == DomainId::D {
        grid.validate()?;
        if !grid.all_kind(BoundaryKind::Dirichlet) {
            return Err(Error::InvalidParam("Dirichlet sampler needs all segments Dirichlet".into()));
        }
        let mut rng = Streams::new(seed, "gff:dirichlet").rng(0);
        let mut f = FieldSample::zeros(grid.clone());
        f.values = cg_sample(grid, &dirichlet_mask(grid), &mut rng)?;
        f.seed = seed;
        return Ok(f);
    }
    Ok(DirichletSampler::new(grid)?.sample(seed))
}

// ---------------------------------------------------------------- mixed

fn dirichlet_mask(grid: &GridSpec) -> Vec<bool> {
    let mut fixed = vec![false; grid.len()];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            fixed[grid.idx(i, j)] =
                !grid.active(i, j) || grid.boundary_kind(i, j) == Some(BoundaryKind::Dirichlet);
        }
    }
    fixed
}

fn apply_lff(g: &GridGraph, fixed: &[bool], x: &[f64], out: &mut [f64]) {
    let mut buf = [(0usize, 0.0f64); 4];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = j * g.nx + i;
            if fixed[k] {
                out[k] = 0.0;
                continue;
            }
            let m = g.neighbors(i, j, &mut buf);
            let mut s = 0.0;
            for &(q, w) in &buf[..m] {
                s += w * x[k];
                if !fixed[q] {
                    s -= w * x[q];
                }
            }
            out[k] = s;
        }
    }
}

/// Conjugate gradients on the free block of the graph Laplacian.
pub(crate) fn cg_solve(g: &GridGraph, fixed: &[bool], b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    for it in 0..max_iter {
        if rr.sqrt() <= tol * bnorm {
            return Ok(x);
        }
        apply_lff(g, fixed, &p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::Numerical(format!("CG breakdown at iteration {it}")));
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: rr.sqrt() / bnorm })
}

/// `sqrt(2π) L_ff^{-1} B_f^T W^{1/2} ξ` with one standard normal per edge.
fn cg_sample(grid: &GridSpec, fixed: &[bool], rng: &mut Rng) -> Result<Vec<f64>> {
    let g = GridGraph::new(grid.nx, grid.ny, grid.hx(), grid.hy());
    if fixed.iter().all(|f| !f) {
        return Err(Error::AllNeumann);
    }
    let mut b = vec![0.0; grid.len()];
    let mut push = |p: usize, q: usize, w: f64, xi: f64| {
        let s = w.sqrt() * xi;
        if !fixed[p] {
            b[p] += s;
        }
        if !fixed[q] {
            b[q] -= s;
        }
    };
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let k = j * grid.nx + i;
            if i + 1 < grid.nx {
                let w = if j == 0 || j + 1 == grid.ny { 0.5 * g.wx } else { g.wx };
                let xi: f64 = StandardNormal.sample(rng);
                push(k, k + 1, w, xi);
            }
            if j + 1 < grid.ny {
                let w = if i == 0 || i + 1 == grid.nx { 0.5 * g.wy } else { g.wy };
                let xi: f64 = StandardNormal.sample(rng);
                push(k, k + grid.nx, w, xi);
            }
        }
    }
    let mut x = cg_solve(&g, fixed, &b, 1e-11, 20 * grid.len())?;
    let s = (2.0 * PI).sqrt();
    x.iter_mut().for_each(|v| *v *= s);
    Ok(x)
}

/// Covariance `2π L_ff^{-1}`: Dirichlet on Dirichlet segments, natural
/// Neumann on free segments.
pub fn sample_mixed_gff(grid: &GridSpec, seed: u64) -> Result<FieldSample> {
    grid.validate()?;
    if grid.all_kind(BoundaryKind::Free) {
        return Err(Error::InvalidParam("all segments free; use sample_free_gff".into()));
    }
    let mut rng = Streams::new(seed, "gff:mixed").rng(0);
    let mut f = FieldSample::zeros(grid.clone());
    f.values = cg_sample(grid, &dirichlet_mask(grid), &mut rng)?;
    f.seed = seed;
    Ok(f)
}

// ---------------------------------------------------------------- free

/// Exact sampler for the free field in log-polar form.
///
/// In `t = log|z|` (or `t = Re z` on the strip) and angle `θ` the covariance
/// splits into a two-sided Brownian motion in `t` with `B(0) = 0` plus
/// independent Ornstein-Uhlenbeck angular modes with covariance
/// `(c/k)e^{-k|t-s|}`. Modes `k ≤ K` are sampled exactly along the sorted
/// distinct `t` values of the grid nodes.
pub struct FreeSampler {
    grid: GridSpec,
    normalization: Normalization,
    modes: usize,
    /// Variance rate of the radial motion and of the angular modes.
    rate: f64,
    with_sin: bool,
    ts: Vec<f64>,
    zero: usize,
    node_t: Vec<usize>,
    node_theta: Vec<f64>,
}

fn polar_coords(grid: &GridSpec) -> (Vec<f64>, Vec<f64>) {
    let hmin = grid.hx().min(grid.hy());
    let mut t = Vec::with_capacity(grid.len());
    let mut th = Vec::with_capacity(grid.len());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let z = grid.node(i, j);
            match grid.domain {
                DomainId::S => {
                    t.push(z.re);
                    th.push(z.im);
                }
                _ => {
                    let r = z.norm();
                    if r < 0.5 * hmin {
                        t.push((0.5 * hmin).ln());
                        th.push(PI / 2.0);
                    } else {
                        t.push(r.ln());
                        th.push(z.im.atan2(z.re));
                    }
                }
            }
        }
    }
    (t, th)
}

impl FreeSampler {
    pub fn new(grid: &GridSpec, normalization: Normalization) -> Result<Self> {
        let modes = match grid.domain {
            DomainId::S => 2 * (grid.ny - 1),
            _ => grid.nx.max(grid.ny),
        };
        Self::with_modes(grid, normalization, modes)
    }

    pub fn with_modes(grid: &GridSpec, normalization: Normalization, modes: usize) -> Result<Self> {
        grid.validate()?;
        if !grid.all_kind(BoundaryKind::Free) {
            return Err(Error::InvalidParam("free sampler needs all segments free".into()));
        }
        let Some(expected) = Normalization::for_domain(grid.domain) else {
            return Err(Error::AnchorMismatch(format!("no free-field anchor for {}", grid.domain.tag())));
        };
        if normalization != expected {
            return Err(Error::AnchorMismatch(format!(
                "{} does not match domain {}",
                normalization.tag(),
                grid.domain.tag()
            )));
        }
        let (t, th) = polar_coords(grid);
        let mut ts = t.clone();
        ts.push(0.0);
        ts.sort_by(|a, b| a.total_cmp(b));
        ts.dedup();
        let zero = ts.binary_search_by(|v| v.total_cmp(&0.0)).unwrap();
        let node_t = t.iter().map(|v| ts.binary_search_by(|u| u.total_cmp(v)).unwrap()).collect();
        let (rate, with_sin) = match grid.domain {
            DomainId::C => (1.0, true),
            _ => (2.0, false),
        };
        let s = FreeSampler { grid: grid.clone(), normalization, modes, rate, with_sin, ts, zero, node_t, node_theta: th };
        anchor_average(&FieldSample::zeros(grid.clone()), normalization)?;
        Ok(s)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Radial motion at the sorted `t` values.
    fn radial(&self, rng: &mut Rng) -> Vec<f64> {
        let n = self.ts.len();
        let mut b = vec![0.0; n];
        for k in self.zero + 1..n {
            let xi: f64 = StandardNormal.sample(rng);
            b[k] = b[k - 1] + (self.rate * (self.ts[k] - self.ts[k - 1])).sqrt() * xi;
        }
        for k in (0..self.zero).rev() {
            let xi: f64 = StandardNormal.sample(rng);
            b[k] = b[k + 1] + (self.rate * (self.ts[k + 1] - self.ts[k])).sqrt() * xi;
        }
        b
    }

    /// Angular modes `a[t_index * K + (k-1)]`.
    fn modes_at(&self, rng: &mut Rng) -> Vec<f64> {
        let n = self.ts.len();
        let kk = self.modes;
        let mut a = vec![0.0; n * kk];
        for k in 1..=kk {
            let var = self.rate / k as f64;
            let xi0: f64 = StandardNormal.sample(rng);
            let mut x = var.sqrt() * xi0;
            a[k - 1] = x;
            for m in 1..n {
                let rho = (-(k as f64) * (self.ts[m] - self.ts[m - 1])).exp();
                let xi: f64 = StandardNormal.sample(rng);
                x = rho * x + (var * (1.0 - rho * rho)).sqrt() * xi;
                a[m * kk + k - 1] = x;
            }
        }
        a
    }

    /// Angular part only (mean zero on every circle / vertical line).
    pub(crate) fn lateral_with(&self, rng: &mut Rng) -> Vec<f64> {
        let kk = self.modes;
        let ac = self.modes_at(rng);
        let asn = if self.with_sin { self.modes_at(rng) } else { Vec::new() };
        let mut out = vec![0.0; self.grid.len()];
        for (p, v) in out.iter_mut().enumerate() {
            let ti = self.node_t[p];
            let th = self.node_theta[p];
            let (c1, s1) = (th.cos(), th.sin());
            // Chebyshev recurrences for cos kθ, sin kθ
            let (mut cp, mut cc) = (1.0, c1);
            let (mut sp, mut sc) = (0.0, s1);
            let mut s = 0.0;
            let row = &ac[ti * kk..(ti + 1) * kk];
            for k in 0..kk {
                s += row[k] * cc;
                if self.with_sin {
                    s += asn[ti * kk + k] * sc;
                }
                let cn = 2.0 * c1 * cc - cp;
                cp = cc;
                cc = cn;
                let sn = 2.0 * c1 * sc - sp;
                sp = sc;
                sc = sn;
            }
            *v = s;
        }
        out
    }

    /// Unanchored sample: `B(t) + lateral`.
    pub(crate) fn raw_with(&self, rng: &mut Rng) -> Vec<f64> {
        let b = self.radial(rng);
        let mut v = self.lateral_with(rng);
        for (p, x) in v.iter_mut().enumerate() {
            *x += b[self.node_t[p]];
        }
        v
    }

    pub fn sample(&self, seed: u64) -> Result<FieldSample> {
        let mut rng = Streams::new(seed, "gff:free").rng(0);
        self.sample_with(&mut rng, seed)
    }

    pub fn sample_with(&self, rng: &mut Rng, seed: u64) -> Result<FieldSample> {
        let mut f = FieldSample::zeros(self.grid.clone());
        f.values = self.raw_with(rng);
        let a = anchor_average(&f, self.normalization)?;
        f.values.iter_mut().for_each(|v| *v -= a);
        f.normalization = self.normalization;
        f.seed = seed;
        Ok(f)
    }
}

pub fn sample_free_gff(grid: &GridSpec, normalization: Normalization, seed: u64) -> Result<FieldSample> {
    FreeSampler::new(grid, normalization)?.sample(seed)
}

/// Recomputes the declared anchor average of a field.
pub fn anchor_average(field: &FieldSample, normalization: Normalization) -> Result<f64> {
    let g = &field.grid;
    match (normalization, g.domain) {
        (Normalization::None, _) => Ok(0.0),
        (Normalization::ZeroAvgUnitSemicircle, DomainId::H) | (Normalization::ZeroAvgUnitCircle, DomainId::C) => {
            circle_average(field, C64::new(0.0, 0.0), 1.0).map_err(|e| match e {
                Error::Coverage(m) => Error::AnchorMismatch(format!("anchor circle not covered: {m}")),
                e => e,
            })
        }
        (Normalization::ZeroAvgVerticalLine0, DomainId::S) => {
            if !(g.bbox.x0 <= 0.0 && g.bbox.x1 >= 0.0 && g.bbox.y0 <= 1e-12 && g.bbox.y1 >= PI - 1e-12) {
                return Err(Error::AnchorMismatch("grid does not contain {0} x [0, π]".into()));
            }
            let mut s = 0.0;
            for j in 0..g.ny {
                let w = if j == 0 || j + 1 == g.ny { 0.5 } else { 1.0 };
                s += w * field.interp(C64::new(0.0, g.y(j))).unwrap();
            }
            Ok(s / (g.ny - 1) as f64)
        }
        (n, d) => Err(Error::AnchorMismatch(format!("{} on domain {}", n.tag(), d.tag()))),
    }
}

// ---------------------------------------------------------------- decompositions

/// Node-index rectangle `[i0, i1] x [j0, j1]`, inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubGrid {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

#[derive(Clone, Debug)]
pub struct MarkovSplit {
    pub h1: FieldSample,
    pub h2: FieldSample,
}

/// `(p - h, h')` summing to `p` bit for bit when `|h| ≤ |p|` (then `p - a`
/// is exact); otherwise `p` has a finer ulp than both parts allow and the
/// sum is off by at most one rounding.
fn exact_split(p: f64, h: f64) -> (f64, f64) {
    let a = p - h;
    if p.abs() >= h.abs() {
        (a, p - a)
    } else {
        (a, h)
    }
}

/// `h2` is the harmonic extension of the field from `∂U` into `U` (natural
/// Neumann along free domain boundary); `h1 = field - h2`.
pub fn markov_decompose(field: &FieldSample, u: SubGrid) -> Result<MarkovSplit> {
    let g = &field.grid;
    if u.i1 >= g.nx || u.j1 >= g.ny || u.i1 < u.i0 + 2 || u.j1 < u.j0 + 2 {
        return Err(Error::InvalidGrid("U needs at least one interior node inside the grid".into()));
    }
    let (nx, ny) = (u.i1 - u.i0 + 1, u.j1 - u.j0 + 1);
    let mut fixed: Vec<Option<f64>> = vec![None; nx * ny];
    let sides = [
        (Side::Bottom, u.j0 == 0),
        (Side::Right, u.i1 + 1 == g.nx),
        (Side::Top, u.j1 + 1 == g.ny),
        (Side::Left, u.i0 == 0),
    ];
    let mut neumann = [false; 4];
    for (s, (side, touches)) in sides.iter().enumerate() {
        if !touches {
            continue;
        }
        let nodes: Vec<(usize, usize)> = match side {
            Side::Bottom => (u.i0..=u.i1).map(|i| (i, 0)).collect(),
            Side::Top => (u.i0..=u.i1).map(|i| (i, g.ny - 1)).collect(),
            Side::Left => (u.j0..=u.j1).map(|j| (0, j)).collect(),
            Side::Right => (u.j0..=u.j1).map(|j| (g.nx - 1, j)).collect(),
        };
        let kinds: Vec<_> = nodes[1..nodes.len() - 1].iter().map(|&(i, j)| g.boundary_kind(i, j)).collect();
        if kinds.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::InvalidGrid("U side straddles a change of boundary condition".into()));
        }
        if kinds.first() == Some(&Some(BoundaryKind::Free)) {
            if !g.side_on_domain_boundary(*side) {
                return Err(Error::InvalidGrid("U touches a truncation side of the grid".into()));
            }
            neumann[s] = true;
        }
    }
    for jj in 0..ny {
        for ii in 0..nx {
            let on = [jj == 0, ii + 1 == nx, jj + 1 == ny, ii == 0];
            if !on.iter().any(|&b| b) {
                continue;
            }
            // free only if every side through this node is Neumann
            let free = (0..4).filter(|&s| on[s]).all(|s| neumann[s]);
            if !free {
                fixed[jj * nx + ii] = Some(field.at(u.i0 + ii, u.j0 + jj));
            }
        }
    }
    if fixed.iter().all(|f| f.is_none()) {
        return Err(Error::AllNeumann);
    }
    let gg = GridGraph::new(nx, ny, g.hx(), g.hy());
    let init: Vec<f64> = (0..nx * ny).map(|k| field.at(u.i0 + k % nx, u.j0 + k / nx)).collect();
    let active = vec![true; nx * ny];
    let scale = init.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let (sol, _) = crate::conformal::solve_laplace(gg, &fixed, &active, &init, 1e-11 / scale.max(1.0), 400_000)?;
    let mut h2 = field.clone();
    for jj in 0..ny {
        for ii in 0..nx {
            h2.values[g.idx(u.i0 + ii, u.j0 + jj)] = sol[jj * nx + ii];
        }
    }
    let mut h1 = field.clone();
    for (k, a) in h1.values.iter_mut().enumerate() {
        let p = field.values[k];
        let b = &mut h2.values[k];
        let (x, y) = exact_split(p, *b);
        *a = x;
        *b = y;
    }
    h1.normalization = Normalization::None;
    h2.normalization = Normalization::None;
    Ok(MarkovSplit { h1, h2 })
}

/// Column averages along vertical lines of a strip grid and the remainder.
pub fn radial_lateral_decompose(field: &FieldSample) -> Result<(FieldSample, FieldSample)> {
    let g = &field.grid;
    if g.domain != DomainId::S {
        return Err(Error::InvalidGrid("radial/lateral split needs a strip grid".into()));
    }
    let mut h1 = field.clone();
    let mut h2 = field.clone();
    for i in 0..g.nx {
        let m = column_mean(field, i);
        for j in 0..g.ny {
            let k = g.idx(i, j);
            h1.values[k] = m;
            h2.values[k] = field.values[k] - m;
        }
    }
    h1.normalization = Normalization::None;
    h2.normalization = Normalization::None;
    Ok((h1, h2))
}

/// Trapezoid mean of column `i`.
pub fn column_mean(field: &FieldSample, i: usize) -> f64 {
    let g = &field.grid;
    let mut s = 0.0;
    for j in 0..g.ny {
        let w = if j == 0 || j + 1 == g.ny { 0.5 } else { 1.0 };
        s += w * field.at(i, j);
    }
    s / (g.ny - 1) as f64
}

// ---------------------------------------------------------------- circle averages

/// Angular intervals of `∂B_ε(z)` inside the closed domain.
pub fn arcs_inside(domain: DomainId, z: C64, eps: f64) -> Vec<(f64, f64)> {
    let full = vec![(0.0, 2.0 * PI)];
    match domain {
        DomainId::C => full,
        DomainId::H => {
            if z.im >= eps {
                full
            } else {
                let a = (-z.im / eps).clamp(-1.0, 1.0).asin();
                vec![(a, PI - a)]
            }
        }
        DomainId::S => {
            let lo = z.im < eps;
            let hi = PI - z.im < eps;
            let a = (-z.im / eps).clamp(-1.0, 1.0).asin();
            let b = ((PI - z.im) / eps).clamp(-1.0, 1.0).asin();
            match (lo, hi) {
                (false, false) => full,
                (true, false) => vec![(a, PI - a)],
                (false, true) => vec![(PI - b, 2.0 * PI + b)],
                (true, true) => vec![(a, b), (PI - b, PI - a)],
            }
        }
        DomainId::D => {
            let r = z.norm();
            if r + eps <= 1.0 || r == 0.0 {
                return full;
            }
            let q = ((1.0 - r * r - eps * eps) / (2.0 * eps * r)).clamp(-1.0, 1.0);
            let c = q.acos();
            let phi = z.arg();
            vec![(phi + c, phi + 2.0 * PI - c)]
        }
    }
}

/// Average of a field over `∂B_ε(z) ∩ D` (a semicircle at boundary points).
pub fn circle_average<F: ScalarField + ?Sized>(field: &F, z: C64, eps: f64) -> Result<f64> {
    let g = field.grid();
    let h = g.hx().max(g.hy());
    if !(eps >= 2.0 * h * (1.0 - 1e-9)) {
        return Err(Error::InvalidParam(format!("radius {eps} is below two grid cells ({})", 2.0 * h)));
    }
    let arcs = arcs_inside(g.domain, z, eps);
    let (mut num, mut den) = (0.0, 0.0);
    for &(a, b) in &arcs {
        let len = b - a;
        if len <= 0.0 {
            continue;
        }
        let periodic = (len - 2.0 * PI).abs() < 1e-14;
        let n = 128usize.max((8.0 * eps * len / h).ceil() as usize);
        let dth = len / n as f64;
        let pts = if periodic { n } else { n + 1 };
        for k in 0..pts {
            let th = a + k as f64 * dth;
            let w = if !periodic && (k == 0 || k == n) { 0.5 } else { 1.0 } * dth;
            let p = z + C64::from_polar(eps, th);
            let p = if g.domain == DomainId::H && p.im < 0.0 { C64::new(p.re, 0.0) } else { p };
            let v = field
                .eval(p)
                .ok_or_else(|| Error::Coverage(format!("circle of radius {eps} at {z} leaves the grid at {p}")))?;
            num += w * v;
            den += w;
        }
    }
    if den <= 0.0 {
        return Err(Error::Coverage(format!("no arc of radius {eps} at {z} lies inside the domain")));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::BBox;
    use crate::stats::Summary;

    fn dir_grid(n: usize) -> GridSpec {
        GridSpec::uniform(DomainId::C, n, n, BBox::new(0.0, 1.0, 0.0, 1.0), BoundaryKind::Dirichlet).unwrap()
    }

    /// Discrete Green's function column `2π L^{-1} e_q` by dense elimination.
    fn dense_green(g: &GridSpec, fixed: &[bool], q: usize) -> Vec<f64> {
        let free: Vec<usize> = (0..g.len()).filter(|&k| !fixed[k]).collect();
        let pos: std::collections::HashMap<usize, usize> = free.iter().enumerate().map(|(a, &b)| (b, a)).collect();
        let m = free.len();
        let mut a = vec![vec![0.0; m + 1]; m];
        let gg = GridGraph::new(g.nx, g.ny, g.hx(), g.hy());
        let mut buf = [(0usize, 0.0f64); 4];
        for (r, &k) in free.iter().enumerate() {
            let n = gg.neighbors(k % g.nx, k / g.nx, &mut buf);
            for &(p, w) in &buf[..n] {
                a[r][r] += w;
                if let Some(&c) = pos.get(&p) {
                    a[r][c] -= w;
                }
            }
            if k == q {
                a[r][m] = 2.0 * PI;
            }
        }
        for c in 0..m {
            let piv = (c..m).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..m {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    if f != 0.0 {
                        for k in c..=m {
                            a[r][k] -= f * a[c][k];
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0; g.len()];
        for (r, &k) in free.iter().enumerate() {
            out[k] = a[r][m] / a[r][r];
        }
        out
    }

    #[test]
    fn dirichlet_boundary_zero_and_deterministic() {
        let g = dir_grid(12);
        let a = sample_dirichlet_gff(&g, 5).unwrap();
        let b = sample_dirichlet_gff(&g, 5).unwrap();
        assert_eq!(a.values, b.values);
        for k in 0..g.ring_len() {
            let (i, j) = g.ring_node(k);
            assert_eq!(a.at(i, j), 0.0);
        }
    }

    #[test]
    fn dirichlet_covariance_matches_dense_green() {
        let g = dir_grid(10);
        let s = DirichletSampler::new(&g).unwrap();
        let (p, q) = (g.idx(3, 4), g.idx(5, 5));
        let green = dense_green(&g, &dirichlet_mask(&g), q);
        let streams = Streams::new(11, "test");
        let n = 20000;
        let mut prods = Vec::with_capacity(n);
        let mut vq = Vec::with_capacity(n);
        for k in 0..n {
            let v = s.sample_with(&mut streams.rng(k as u64));
            prods.push(v[p] * v[q]);
            vq.push(v[q] * v[q]);
        }
        let c = Summary::from_slice(&prods);
        let d = Summary::from_slice(&vq);
        assert!((c.mean - green[p]).abs() < 4.0 * c.se(), "{} vs {}", c.mean, green[p]);
        assert!((d.mean - green[q]).abs() < 4.0 * d.se(), "{} vs {}", d.mean, green[q]);
    }

    #[test]
    fn mixed_all_dirichlet_matches_spectral_variance() {
        let g = dir_grid(10);
        let q = g.idx(4, 5);
        let green = dense_green(&g, &dirichlet_mask(&g), q);
        let n = 4000;
        let vals: Vec<f64> = (0..n).map(|k| sample_mixed_gff(&g, k).unwrap().values[q].powi(2)).collect();
        let s = Summary::from_slice(&vals);
        assert!((s.mean - green[q]).abs() < 4.0 * s.se());
    }

    #[test]
    fn mixed_rejects_all_free() {
        let g = GridSpec::h_box(9, 9, 1.0, 2.0).unwrap();
        assert!(sample_mixed_gff(&g, 1).is_err());
    }

    #[test]
    fn free_anchor_is_enforced() {
        let g = GridSpec::h_box(33, 17, 2.0, 2.0).unwrap();
        let f = sample_free_gff(&g, Normalization::ZeroAvgUnitSemicircle, 3).unwrap();
        assert!(anchor_average(&f, f.normalization).unwrap().abs() < 1e-12);
        assert!(matches!(
            sample_free_gff(&g, Normalization::ZeroAvgVerticalLine0, 3),
            Err(Error::AnchorMismatch(_))
        ));
        let s = GridSpec::strip(41, 17, -2.0, 2.0).unwrap();
        let f = sample_free_gff(&s, Normalization::ZeroAvgVerticalLine0, 3).unwrap();
        assert!(anchor_average(&f, f.normalization).unwrap().abs() < 1e-12);
    }

    #[test]
    fn markov_zero_and_harmonic_inputs() {
        let g = GridSpec::uniform(DomainId::C, 17, 17, BBox::new(-1.0, 1.0, -1.0, 1.0), BoundaryKind::Dirichlet).unwrap();
        let u = SubGrid { i0: 3, i1: 12, j0: 4, j1: 13 };
        let z = FieldSample::zeros(g.clone());
        let s = markov_decompose(&z, u).unwrap();
        assert!(s.h1.values.iter().chain(&s.h2.values).all(|v| *v == 0.0));
        let lin = FieldSample::from_fn(g.clone(), |z| 2.0 * z.re - z.im + 0.5);
        let s = markov_decompose(&lin, u).unwrap();
        assert!(s.h1.values.iter().all(|v| v.abs() < 1e-8));
        for (k, v) in lin.values.iter().enumerate() {
            assert_eq!(s.h1.values[k] + s.h2.values[k], *v);
        }
    }

    #[test]
    fn markov_rejects_truncation_sides() {
        let g = GridSpec::h_box(17, 17, 1.0, 2.0).unwrap();
        let f = FieldSample::zeros(g.clone());
        // bottom is the real line: Neumann, allowed
        assert!(markov_decompose(&f, SubGrid { i0: 2, i1: 10, j0: 0, j1: 8 }).is_ok());
        // right side is a truncation cut
        assert!(markov_decompose(&f, SubGrid { i0: 2, i1: 16, j0: 2, j1: 8 }).is_err());
    }

    #[test]
    fn radial_lateral_of_sin() {
        let g = GridSpec::strip(17, 33, -1.0, 1.0).unwrap();
        let f = FieldSample::from_fn(g.clone(), |z| z.im.sin());
        let (h1, h2) = radial_lateral_decompose(&f).unwrap();
        let m = column_mean(&f, 0);
        // trapezoid of sin over [0, π] with 32 panels, divided by 32
        let direct: f64 = (0..33).map(|j| {
            let w = if j == 0 || j == 32 { 0.5 } else { 1.0 };
            w * (PI * j as f64 / 32.0).sin()
        }).sum::<f64>() / 32.0;
        assert!((m - direct).abs() < 1e-14);
        assert!(h1.values.iter().all(|v| (v - m).abs() < 1e-14));
        for i in 0..g.nx {
            assert!(column_mean(&h2, i).abs() < 1e-12);
        }
        for k in 0..g.len() {
            assert!((h1.values[k] + h2.values[k] - f.values[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn circle_average_examples() {
        let g = GridSpec::h_box(65, 33, 2.0, 2.0).unwrap();
        let c = FieldSample::from_fn(g.clone(), |_| 1.5);
        assert!((circle_average(&c, C64::new(0.3, 1.0), 0.5).unwrap() - 1.5).abs() < 1e-12);
        assert!((circle_average(&c, C64::new(0.3, 0.0), 0.5).unwrap() - 1.5).abs() < 1e-12);
        let re = FieldSample::from_fn(g.clone(), |z| z.re);
        assert!((circle_average(&re, C64::new(1.0, 1.0), 0.5).unwrap() - 1.0).abs() < 1e-6);
        let cg = GridSpec::uniform(DomainId::C, 201, 201, BBox::new(-1.0, 1.0, -1.0, 1.0), BoundaryKind::Free).unwrap();
        let lg = FieldSample::from_fn(cg, |z| z.norm().max(1e-3).ln());
        assert!((circle_average(&lg, C64::new(0.0, 0.0), 0.5).unwrap() - 0.5f64.ln()).abs() < 1e-3);
        assert!(circle_average(&c, C64::new(1.9, 1.0), 0.5).is_err());
        assert!(circle_average(&c, C64::new(0.0, 1.0), 0.05).is_err());
    }
}
