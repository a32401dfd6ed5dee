//! Quantum area and length, and samplers for two-pointed disks (thick and
//! thin), quantum triangles and one-bulk-one-boundary disks.
//!
//! All surfaces carry a `log_weight`: the laws are infinite measures and are
//! realized over a finite window of the additive constant (or of the
//! Lebesgue-distributed chain length for thin disks).

use crate::conformal::{BBox, DomainId, GridSpec};
use crate::error::{Error, Result};
use crate::gff::{circle_average, FieldSample, FreeSampler, Normalization, ScalarField};
use crate::liouville::{Insertion, LiouvilleSampler, LiouvilleSpec, Loc, DEFAULT_C_WINDOW};
use crate::rng::{Rng, Streams};
use crate::{check_gamma, q_of, C64};
use rand::Rng as _;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// `β = γ + (2-W)/γ`, `α = Q - W/(2γ)`, thick iff `W ≥ γ²/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub w: f64,
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub thick: bool,
}

impl WeightParams {
    pub fn new(w: f64, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::Range(format!("weight W must be positive, got {w}")));
        }
        Ok(WeightParams {
            w,
            gamma,
            beta: gamma + (2.0 - w) / gamma,
            alpha: q_of(gamma) - w / (2.0 * gamma),
            thick: w >= gamma * gamma / 2.0,
        })
    }

    pub fn q(&self) -> f64 {
        q_of(self.gamma)
    }

    /// Weight of the beads of a thin disk, `γ² - W`.
    pub fn dual(&self) -> Result<WeightParams> {
        WeightParams::new(self.gamma * self.gamma - self.w, self.gamma)
    }

    fn reject_critical(&self) -> Result<()> {
        if (self.w - self.gamma * self.gamma / 2.0).abs() < 1e-12 {
            return Err(Error::Range(format!(
                "W = γ²/2 gives β = Q = {}; the critical weight is not supported",
                self.q()
            )));
        }
        Ok(())
    }
}

/// Default radii: 8, 4 and 2 grid cells.
pub fn default_eps_schedule(grid: &GridSpec) -> Vec<f64> {
    let h = grid.hx().max(grid.hy());
    vec![8.0 * h, 4.0 * h, 2.0 * h]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaEstimate {
    /// Estimate at the smallest radius.
    pub value: f64,
    pub by_eps: Vec<(f64, f64)>,
    /// Successive estimates within relative tolerance 0.1.
    pub stable: bool,
}

fn node_range(xs: impl Fn(usize) -> f64, n: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
    let tol = 1e-9;
    let a = (0..n).find(|&k| xs(k) >= lo - tol)?;
    let b = (0..n).rev().find(|&k| xs(k) <= hi + tol)?;
    (a < b).then_some((a, b))
}

/// Riemann sum of `ε^{γ²/2} e^{γ φ_ε(z)}` over the grid nodes in `region`
/// (trapezoid weights), for every radius of the schedule.
pub fn quantum_area<F: ScalarField + ?Sized>(
    field: &F,
    gamma: f64,
    region: BBox,
    schedule: &[f64],
) -> Result<AreaEstimate> {
    check_gamma(gamma)?;
    let g = field.grid();
    let h = g.hx().max(g.hy());
    if schedule.is_empty() || schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParam("radius schedule must be non-empty and decreasing".into()));
    }
    if *schedule.last().unwrap() < 2.0 * h * (1.0 - 1e-9) {
        return Err(Error::Range(format!("smallest radius is below two grid cells ({})", 2.0 * h)));
    }
    let (i0, i1) = node_range(|i| g.x(i), g.nx, region.x0, region.x1)
        .ok_or_else(|| Error::InvalidGrid("region contains fewer than two node columns".into()))?;
    let (j0, j1) = node_range(|j| g.y(j), g.ny, region.y0, region.y1)
        .ok_or_else(|| Error::InvalidGrid("region contains fewer than two node rows".into()))?;
    let mut by_eps = Vec::with_capacity(schedule.len());
    for &eps in schedule {
        let pre = gamma * gamma / 2.0 * eps.ln();
        let mut s = 0.0;
        for j in j0..=j1 {
            let wy = if j == j0 || j == j1 { 0.5 } else { 1.0 } * g.hy();
            for i in i0..=i1 {
                let wx = if i == i0 || i == i1 { 0.5 } else { 1.0 } * g.hx();
                let z = g.node(i, j);
                if !g.domain.contains(z) {
                    continue;
                }
                let a = circle_average(field, z, eps)?;
                s += wx * wy * (pre + gamma * a).exp();
            }
        }
        by_eps.push((eps, s));
    }
    let stable = by_eps.windows(2).all(|w| ((w[0].1 - w[1].1) / w[1].1).abs() < 0.1);
    Ok(AreaEstimate { value: by_eps.last().unwrap().1, by_eps, stable })
}

/// Quantum length density `ε^{γ²/4} e^{γ φ_ε(x)/2}` at the nodes of a
/// boundary row, integrated as a piecewise-linear function.
#[derive(Clone, Debug, PartialEq)]
pub struct LengthDensity {
    pub y: f64,
    pub eps: f64,
    pub xs: Vec<f64>,
    pub dens: Vec<f64>,
    cum: Vec<f64>,
}

impl LengthDensity {
    /// Density along the node row at height `y`, at every node whose
    /// semicircle of radius `eps` stays inside the grid.
    pub fn new<F: ScalarField + ?Sized>(field: &F, gamma: f64, y: f64, eps: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let g = field.grid();
        let j = (0..g.ny)
            .find(|&j| (g.y(j) - y).abs() <= 1e-9 * (1.0 + y.abs()))
            .ok_or_else(|| Error::InvalidGrid(format!("no node row at height {y}")))?;
        if !g.domain.on_boundary(C64::new(g.x(0), g.y(j))) {
            return Err(Error::InvalidParam(format!("row at height {y} is not on the domain boundary")));
        }
        let pre = gamma * gamma / 4.0 * eps.ln();
        let mut xs = Vec::new();
        let mut dens = Vec::new();
        for i in 0..g.nx {
            let x = g.x(i);
            if x - eps < g.bbox.x0 - 1e-12 || x + eps > g.bbox.x1 + 1e-12 {
                continue;
            }
            let a = circle_average(field, C64::new(x, g.y(j)), eps)?;
            xs.push(x);
            dens.push((pre + gamma * a / 2.0).exp());
        }
        if xs.len() < 2 {
            return Err(Error::Coverage(format!("radius {eps} leaves no covered boundary nodes")));
        }
        let mut cum = vec![0.0; xs.len()];
        for k in 1..xs.len() {
            cum[k] = cum[k - 1] + 0.5 * (dens[k - 1] + dens[k]) * (xs[k] - xs[k - 1]);
        }
        Ok(LengthDensity { y: g.y(j), eps, xs, dens, cum })
    }

    pub fn covered(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    pub fn total(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    fn dens_at(&self, k: usize, x: f64) -> f64 {
        let t = (x - self.xs[k]) / (self.xs[k + 1] - self.xs[k]);
        self.dens[k] + t * (self.dens[k + 1] - self.dens[k])
    }

    fn segment(&self, x: f64) -> usize {
        match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(k) => k.min(self.xs.len() - 2),
            Err(k) => k.saturating_sub(1).min(self.xs.len() - 2),
        }
    }

    /// Length of `[x0, x]` for `x` in the covered range.
    pub fn cumulative(&self, x: f64) -> f64 {
        let (a, b) = self.covered();
        let x = x.clamp(a, b);
        let k = self.segment(x);
        self.cum[k] + 0.5 * (self.dens[k] + self.dens_at(k, x)) * (x - self.xs[k])
    }

    /// Length of `[a, b]`, clamped to the covered range.
    pub fn integral_clamped(&self, a: f64, b: f64) -> f64 {
        self.cumulative(b) - self.cumulative(a)
    }

    /// Length of `[a, b]`; errors when the interval leaves the covered range.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        let (lo, hi) = self.covered();
        if a < lo - 1e-12 || b > hi + 1e-12 || b < a {
            return Err(Error::Coverage(format!("interval [{a}, {b}] is outside the covered range [{lo}, {hi}]")));
        }
        Ok(self.integral_clamped(a, b))
    }

    /// The point `x` with `cumulative(x) = u`.
    pub fn point_at(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.xs[0];
        }
        if u >= self.total() {
            return *self.xs.last().unwrap();
        }
        let k = match self.cum.binary_search_by(|v| v.total_cmp(&u)) {
            Ok(k) => return self.xs[k],
            Err(k) => k - 1,
        };
        let r = u - self.cum[k];
        let w = self.xs[k + 1] - self.xs[k];
        let (d0, d1) = (self.dens[k], self.dens[k + 1]);
        let s = (d1 - d0) / w;
        // d0 t + s t²/2 = r
        let t = if s.abs() < 1e-14 * d0.max(1e-300) { r / d0 } else { (-d0 + (d0 * d0 + 2.0 * s * r).max(0.0).sqrt()) / s };
        self.xs[k] + t.clamp(0.0, w)
    }
}

/// Quantum length of the boundary interval `[a, b] + iy`.
pub fn quantum_length<F: ScalarField + ?Sized>(field: &F, gamma: f64, y: f64, a: f64, b: f64, eps: f64) -> Result<f64> {
    LengthDensity::new(field, gamma, y, eps)?.integral(a, b)
}

// ---------------------------------------------------------------- surfaces

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurfaceKind {
    Disk2,
    ThinChain,
    Triangle,
    M11,
    Wedge,
    Cone,
}

impl SurfaceKind {
    pub fn tag(&self) -> &'static str {
        match self {
            SurfaceKind::Disk2 => "disk2",
            SurfaceKind::ThinChain => "thin_chain",
            SurfaceKind::Triangle => "triangle",
            SurfaceKind::M11 => "m11",
            SurfaceKind::Wedge => "wedge",
            SurfaceKind::Cone => "cone",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArcSide {
    Left,
    Right,
}

/// One bead of a thin chain. Small beads keep only their lengths.
#[derive(Clone, Debug)]
pub struct Bead {
    pub label: f64,
    /// `[left, right]`.
    pub lengths: [f64; 2],
    pub c: f64,
    pub surface: Option<Box<QuantumSurface>>,
}

#[derive(Clone, Debug)]
pub struct QuantumSurface {
    pub kind: SurfaceKind,
    pub gamma: f64,
    pub weights: Vec<f64>,
    pub domain: DomainId,
    pub field: Option<FieldSample>,
    pub marks: Vec<Loc>,
    pub beads: Vec<Bead>,
    /// Thin chains attached at triangle vertices: `(vertex, chain)`.
    pub chains: Vec<(usize, QuantumSurface)>,
    pub arc_lengths: Vec<f64>,
    pub log_weight: f64,
    pub eps: f64,
    pub distinguished: Option<usize>,
    pub diagnostics: Vec<(String, f64)>,
}

impl QuantumSurface {
    fn new(kind: SurfaceKind, gamma: f64, weights: Vec<f64>, domain: DomainId) -> Self {
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

    pub fn diagnostic(&self, key: &str) -> Option<f64> {
        self.diagnostics.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    /// Applies `z ↦ z + s` on the strip: the embedding moves, the lengths do not.
    pub fn translated(&self, s: f64) -> Result<QuantumSurface> {
        let field = self.field.as_ref().ok_or_else(|| Error::InvalidParam("surface has no embedding field".into()))?;
        if field.grid.domain != DomainId::S {
            return Err(Error::InvalidParam("translation is defined on strip embeddings".into()));
        }
        let mut out = self.clone();
        let f = out.field.as_mut().unwrap();
        f.grid.bbox.x0 += s;
        f.grid.bbox.x1 += s;
        out.marks = self
            .marks
            .iter()
            .map(|m| match m {
                Loc::At(z) => Loc::At(z + s),
                o => *o,
            })
            .collect();
        Ok(out)
    }
}

fn strip_lengths(field: &FieldSample, gamma: f64, eps: f64) -> Result<[f64; 2]> {
    let bottom = LengthDensity::new(field, gamma, 0.0, eps)?;
    let top = LengthDensity::new(field, gamma, PI, eps)?;
    Ok([bottom.total(), top.total()])
}

/// Two-sided radial part of the thick disk: `-|√2 W³_t + a t e₁|` on each side.
fn conditioned_radial(ts: &[f64], a: f64, rng: &mut Rng) -> Vec<f64> {
    let mut out = vec![0.0; ts.len()];
    let zero = ts.partition_point(|&t| t < 0.0);
    for (range, sign) in [((zero..ts.len()).collect::<Vec<_>>(), 1.0), ((0..zero).rev().collect::<Vec<_>>(), -1.0)] {
        let mut v = [0.0f64; 3];
        let mut t_prev = 0.0;
        for k in range {
            let t = sign * ts[k];
            let dt = t - t_prev;
            if dt > 0.0 {
                let s = (2.0 * dt).sqrt();
                for (d, comp) in v.iter_mut().enumerate() {
                    let xi: f64 = StandardNormal.sample(rng);
                    *comp += s * xi + if d == 0 { a * dt } else { 0.0 };
                }
            }
            t_prev = t;
            out[k] = -(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        }
    }
    out
}

/// Sampler for thick two-pointed disks embedded in a truncated strip.
pub struct Disk2Sampler {
    pub params: WeightParams,
    grid: GridSpec,
    free: FreeSampler,
    xs: Vec<f64>,
    pub eps: f64,
    pub c_window: (f64, f64),
}

impl Disk2Sampler {
    pub fn new(w: f64, gamma: f64, grid: &GridSpec) -> Result<Self> {
        let params = WeightParams::new(w, gamma)?;
        params.reject_critical()?;
        if !params.thick {
            return Err(Error::Range(format!("W = {w} < γ²/2 is thin; use the thin chain sampler")));
        }
        if grid.domain != DomainId::S {
            return Err(Error::InvalidGrid("thick disks are embedded in a strip grid".into()));
        }
        let free = FreeSampler::new(grid, Normalization::ZeroAvgVerticalLine0)?;
        let xs = (0..grid.nx).map(|i| grid.x(i)).collect();
        Ok(Disk2Sampler { params, grid: grid.clone(), free, xs, eps: 2.0 * grid.hx().max(grid.hy()), c_window: DEFAULT_C_WINDOW })
    }

    pub fn with_window(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidParam("c window must have positive finite width".into()));
        }
        self.c_window = (lo, hi);
        Ok(self)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Field without the additive constant, and its `[left, right]` lengths.
    pub fn base(&self, seed: u64) -> Result<(FieldSample, [f64; 2])> {
        let streams = Streams::new(seed, "qsurface:disk2");
        let a = self.params.q() - self.params.beta;
        let x = conditioned_radial(&self.xs, a, &mut streams.rng(0));
        let lat = self.free.lateral_with(&mut streams.rng(1));
        let mut f = FieldSample::zeros(self.grid.clone());
        let nx = self.grid.nx;
        for (p, v) in f.values.iter_mut().enumerate() {
            *v = x[p % nx] + lat[p];
        }
        f.gamma = Some(self.params.gamma);
        f.seed = seed;
        let l = strip_lengths(&f, self.params.gamma, self.eps)?;
        Ok((f, l))
    }

    pub fn sample(&self, seed: u64) -> Result<QuantumSurface> {
        let (base, l) = self.base(seed)?;
        let (lo, hi) = self.c_window;
        let c = lo + (hi - lo) * Streams::new(seed, "qsurface:disk2").rng(2).random::<f64>();
        let p = self.params;
        let lw = (p.gamma / 2.0).ln() + (p.beta - p.q()) * c + (hi - lo).ln();
        Ok(self.assemble(base, l, c, lw))
    }

    /// A disk with the given constant; lengths scale by `e^{γc/2}` exactly.
    pub fn assemble(&self, mut base: FieldSample, l: [f64; 2], c: f64, log_weight: f64) -> QuantumSurface {
        let g = self.params.gamma;
        let a = self.params.q() - self.params.beta;
        let nx = self.grid.nx;
        let ends = [base.at(0, 0), base.at(nx - 1, 0)];
        base.values.iter_mut().for_each(|v| *v += c);
        base.log_weight = log_weight;
        let scale = (g * c / 2.0).exp();
        let mut s = QuantumSurface::new(SurfaceKind::Disk2, g, vec![self.params.w], DomainId::S);
        s.field = Some(base);
        s.marks = vec![Loc::NegInf, Loc::PosInf];
        s.arc_lengths = vec![scale * l[0], scale * l[1]];
        s.log_weight = log_weight;
        s.eps = self.eps;
        let tail: f64 = ends.iter().map(|x| (g * (x + c) / 2.0).exp() * 2.0 / (g * a)).sum();
        s.diagnostics = vec![("c".into(), c), ("truncation_tail".into(), tail)];
        s
    }
}

/// Weight-`W` thick disk on a strip grid.
pub fn sample_disk2_thick(w: f64, gamma: f64, grid: &GridSpec, seed: u64) -> Result<QuantumSurface> {
    Disk2Sampler::new(w, gamma, grid)?.sample(seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainMode {
    Wedge,
    Disk,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThinChainConfig {
    pub w: f64,
    pub gamma: f64,
    pub mode: ChainMode,
    /// Label horizon (wedge) or the window of the Lebesgue chain length (disk).
    pub horizon: f64,
    pub bead_grid: GridSpec,
    /// Beads with constant at least this get their own field.
    pub c_field: f64,
    /// Beads below this constant are not generated; their expected length is reported.
    pub c_floor: f64,
    pub pool_size: usize,
}

impl ThinChainConfig {
    pub fn new(w: f64, gamma: f64, mode: ChainMode, horizon: f64) -> Result<Self> {
        Ok(ThinChainConfig {
            w,
            gamma,
            mode,
            horizon,
            bead_grid: GridSpec::strip(97, 17, -8.0, 8.0)?,
            c_field: -5.0,
            c_floor: -25.0,
            pool_size: 256,
        })
    }
}

/// Poissonian chains of thick beads of weight `γ² - W`.
pub struct ThinChainSampler {
    pub cfg: ThinChainConfig,
    pub params: WeightParams,
    bead: Disk2Sampler,
    pool: Vec<[f64; 2]>,
}

fn poisson(mean: f64, rng: &mut Rng) -> Result<usize> {
    if mean <= 0.0 {
        return Ok(0);
    }
    let p = Poisson::new(mean).map_err(|e| Error::Numerical(format!("poisson({mean}): {e}")))?;
    Ok(p.sample(rng) as usize)
}

impl ThinChainSampler {
    /// `pool_seed` fixes the base lengths reused by small beads.
    pub fn new(cfg: ThinChainConfig, pool_seed: u64) -> Result<Self> {
        let params = WeightParams::new(cfg.w, cfg.gamma)?;
        params.reject_critical()?;
        if params.thick {
            return Err(Error::Range(format!("W = {} ≥ γ²/2 is thick; use the thick sampler", cfg.w)));
        }
        if !(cfg.horizon > 0.0 && cfg.horizon.is_finite()) {
            return Err(Error::InvalidParam(format!("horizon must be positive, got {}", cfg.horizon)));
        }
        if !(cfg.c_floor < cfg.c_field) {
            return Err(Error::InvalidParam("c_floor must lie below c_field".into()));
        }
        let bead = Disk2Sampler::new(params.dual()?.w, cfg.gamma, &cfg.bead_grid)?;
        let streams = Streams::new(pool_seed, "qsurface:pool");
        let pool = (0..cfg.pool_size.max(1) as u64)
            .map(|k| bead.base(streams.seed(k)).map(|(_, l)| l))
            .collect::<Result<Vec<_>>>()?;
        Ok(ThinChainSampler { cfg, params, bead, pool })
    }

    fn bead_rate(&self) -> f64 {
        self.params.q() - self.bead.params.beta
    }

    /// Expected number of beads per unit label with constant in `[lo, hi)`.
    fn intensity(&self, lo: f64, hi: f64) -> f64 {
        let r = self.bead_rate();
        self.cfg.gamma / 2.0 / r * ((-r * lo).exp() - (-r * hi).exp())
    }

    /// Expected per-unit-label `[left, right]` length of the beads below `c_floor`.
    pub fn elided_length_rate(&self) -> [f64; 2] {
        let g = self.cfg.gamma;
        let e = g / 2.0 - self.bead_rate();
        let n = self.pool.len() as f64;
        let m = [self.pool.iter().map(|l| l[0]).sum::<f64>() / n, self.pool.iter().map(|l| l[1]).sum::<f64>() / n];
        let f = g / 2.0 * (e * self.cfg.c_floor).exp() / e;
        [f * m[0], f * m[1]]
    }

    /// Chain over labels `(0, t)`.
    pub fn chain(&self, t: f64, seed: u64) -> Result<QuantumSurface> {
        let streams = Streams::new(seed, "qsurface:chain");
        let mut rng = streams.rng(0);
        let r = self.bead_rate();
        let g = self.cfg.gamma;
        let (cf, c0) = (self.cfg.c_field, self.cfg.c_floor);
        let n_big = poisson(self.intensity(cf, f64::INFINITY) * t, &mut rng)?;
        let n_small = poisson(self.intensity(c0, cf) * t, &mut rng)?;
        let exp = Exp::new(r).map_err(|e| Error::Numerical(e.to_string()))?;
        let mut beads = Vec::with_capacity(n_big + n_small);
        for k in 0..n_big {
            let label = t * rng.random::<f64>();
            let c = cf + exp.sample(&mut rng);
            let (base, l) = self.bead.base(streams.seed(k as u64))?;
            let mut s = self.bead.assemble(base, l, c, 0.0);
            s.marks = vec![Loc::NegInf, Loc::PosInf];
            beads.push(Bead { label, lengths: [s.arc_lengths[0], s.arc_lengths[1]], c, surface: Some(Box::new(s)) });
        }
        // truncated exponential on [c0, cf) with density ∝ e^{-rc}
        let (e0, e1) = ((-r * c0).exp(), (-r * cf).exp());
        for _ in 0..n_small {
            let label = t * rng.random::<f64>();
            let u: f64 = rng.random();
            let c = -(e0 - u * (e0 - e1)).ln() / r;
            let l = self.pool[rng.random_range(0..self.pool.len())];
            let s = (g * c / 2.0).exp();
            beads.push(Bead { label, lengths: [s * l[0], s * l[1]], c, surface: None });
        }
        beads.sort_by(|a, b| a.label.total_cmp(&b.label));
        let mut out = QuantumSurface::new(SurfaceKind::ThinChain, g, vec![self.cfg.w], DomainId::S);
        out.arc_lengths = vec![beads.iter().map(|b| b.lengths[0]).sum(), beads.iter().map(|b| b.lengths[1]).sum()];
        out.beads = beads;
        out.marks = vec![Loc::NegInf, Loc::PosInf];
        out.eps = self.bead.eps;
        let el = self.elided_length_rate();
        out.diagnostics = vec![
            ("T".into(), t),
            ("elided_left".into(), el[0] * t),
            ("elided_right".into(), el[1] * t),
            ("beads_with_fields".into(), n_big as f64),
        ];
        Ok(out)
    }

    pub fn sample(&self, seed: u64) -> Result<QuantumSurface> {
        let h = self.cfg.horizon;
        match self.cfg.mode {
            ChainMode::Wedge => {
                let mut s = self.chain(h, seed)?;
                s.kind = SurfaceKind::Wedge;
                Ok(s)
            }
            ChainMode::Disk => {
                let t = h * Streams::new(seed, "qsurface:chain").rng(1).random::<f64>();
                let mut s = self.chain(t, seed)?;
                let f = 1.0 - 2.0 * self.cfg.w / (self.cfg.gamma * self.cfg.gamma);
                s.log_weight = -2.0 * f.ln() + h.ln();
                Ok(s)
            }
        }
    }
}

pub fn sample_thin_chain(cfg: ThinChainConfig, seed: u64) -> Result<QuantumSurface> {
    ThinChainSampler::new(cfg, seed)?.sample(seed)
}

/// Splits a chain at label `x` into the beads with label `≤ x` and the rest
/// (relabelled from 0).
pub fn cut_chain(chain: &QuantumSurface, x: f64) -> Result<(QuantumSurface, QuantumSurface)> {
    if !matches!(chain.kind, SurfaceKind::ThinChain | SurfaceKind::Wedge) {
        return Err(Error::InvalidParam("only chains can be cut at a label".into()));
    }
    let mut left = chain.clone();
    let mut right = chain.clone();
    left.beads = chain.beads.iter().filter(|b| b.label <= x).cloned().collect();
    right.beads = chain
        .beads
        .iter()
        .filter(|b| b.label > x)
        .cloned()
        .map(|mut b| {
            b.label -= x;
            b
        })
        .collect();
    let t = chain.diagnostic("T").unwrap_or(f64::NAN);
    for (s, tt) in [(&mut left, x), (&mut right, t - x)] {
        s.kind = SurfaceKind::ThinChain;
        s.arc_lengths = vec![s.beads.iter().map(|b| b.lengths[0]).sum(), s.beads.iter().map(|b| b.lengths[1]).sum()];
        s.diagnostics = vec![("T".into(), tt)];
        s.distinguished = None;
        s.log_weight = 0.0;
    }
    Ok((left, right))
}

/// Adds a point sampled from quantum length on one side, weighting by that length.
pub fn add_marked_point(surface: &QuantumSurface, side: ArcSide, seed: u64) -> Result<QuantumSurface> {
    let k = match side {
        ArcSide::Left => 0,
        ArcSide::Right => 1,
    };
    let len = *surface
        .arc_lengths
        .get(k)
        .ok_or_else(|| Error::InvalidParam("surface has no such side".into()))?;
    if !(len > 0.0) {
        return Err(Error::Degenerate("zero-length side".into()));
    }
    let u = len * Streams::new(seed, "qsurface:mark").rng(0).random::<f64>();
    let mut out = surface.clone();
    out.log_weight += len.ln();
    let other = surface.arc_lengths[1 - k];
    out.arc_lengths = vec![u, len - u, other];
    match surface.kind {
        SurfaceKind::Disk2 => {
            let f = surface.field.as_ref().ok_or_else(|| Error::InvalidParam("disk has no field".into()))?;
            let y = if k == 0 { 0.0 } else { PI };
            let d = LengthDensity::new(f, surface.gamma, y, surface.eps)?;
            let x = d.point_at(u * d.total() / len);
            out.marks.push(Loc::At(C64::new(x, y)));
        }
        SurfaceKind::ThinChain => {
            let mut acc = 0.0;
            let mut idx = surface.beads.len() - 1;
            for (i, b) in surface.beads.iter().enumerate() {
                if acc + b.lengths[k] >= u {
                    idx = i;
                    break;
                }
                acc += b.lengths[k];
            }
            let local = (u - acc).clamp(0.0, surface.beads[idx].lengths[k]);
            let b = &mut out.beads[idx];
            if let Some(s) = b.surface.as_mut() {
                let f = s.field.as_ref().unwrap();
                let y = if k == 0 { 0.0 } else { PI };
                let d = LengthDensity::new(f, s.gamma, y, s.eps)?;
                let x = d.point_at(local * d.total() / b.lengths[k]);
                s.marks.push(Loc::At(C64::new(x, y)));
                s.arc_lengths = vec![local, b.lengths[k] - local, b.lengths[1 - k]];
            }
            out.distinguished = Some(idx);
            out.diagnostics.push(("mark_offset_in_bead".into(), local));
        }
        _ => return Err(Error::InvalidParam(format!("cannot add a boundary mark to a {}", surface.kind.tag()))),
    }
    Ok(out)
}

/// Thick core `QT(W̃1, W̃2, W̃3)` with vertices `(∞, 0, 1)` embedded in the
/// strip chart of H, plus thin chains at the thin vertices.
pub struct TriangleSampler {
    pub ws: [f64; 3],
    pub gamma: f64,
    core: LiouvilleSampler,
    core_log_weight: f64,
    chains: Vec<(usize, ThinChainSampler)>,
    eps: f64,
}

impl TriangleSampler {
    pub fn new(ws: [f64; 3], gamma: f64, grid: &GridSpec, chain_cfg: Option<ThinChainConfig>) -> Result<Self> {
        check_gamma(gamma)?;
        if grid.domain != DomainId::S {
            return Err(Error::InvalidGrid("triangles are embedded in the strip chart".into()));
        }
        let mut betas = [0.0; 3];
        let mut lw = 0.0;
        let mut chains = Vec::new();
        for (i, &w) in ws.iter().enumerate() {
            let p = WeightParams::new(w, gamma)?;
            p.reject_critical()?;
            let wt = w.max(gamma * gamma - w);
            let pt = WeightParams::new(wt, gamma)?;
            betas[i] = pt.beta;
            lw -= (pt.q() - pt.beta).ln();
            if !p.thick {
                let mut cfg = match &chain_cfg {
                    Some(c) => c.clone(),
                    None => ThinChainConfig::new(w, gamma, ChainMode::Disk, 1.0)?,
                };
                cfg.w = w;
                cfg.gamma = gamma;
                cfg.mode = ChainMode::Disk;
                chains.push((i, ThinChainSampler::new(cfg, 0x7a11 + i as u64)?));
                lw += (1.0 - 2.0 * w / (gamma * gamma)).ln();
            }
        }
        let spec = LiouvilleSpec::new(
            DomainId::H,
            vec![
                Insertion::boundary_at(betas[0], Loc::Inf),
                Insertion::boundary(betas[1], 0.0),
                Insertion::boundary(betas[2], 1.0),
            ],
            gamma,
        )?;
        let core = LiouvilleSampler::new(&spec, grid)?;
        Ok(TriangleSampler { ws, gamma, core, core_log_weight: lw, chains, eps: 2.0 * grid.hx().max(grid.hy()) })
    }

    pub fn spec(&self) -> &LiouvilleSpec {
        self.core.spec()
    }

    /// Arcs `[ℓ12, ℓ13, ℓ23]`: `(-∞,0)`, `(1,∞)` and `(0,1)` of H, i.e. the
    /// top row, the bottom row right of 0, and the bottom row left of 0.
    pub fn sample(&self, seed: u64) -> Result<QuantumSurface> {
        let lf = self.core.sample(seed)?;
        let field = lf.bake();
        let top = LengthDensity::new(&field, self.gamma, PI, self.eps)?;
        let bottom = LengthDensity::new(&field, self.gamma, 0.0, self.eps)?;
        let (b0, b1) = bottom.covered();
        let mut arcs = vec![top.total(), bottom.integral_clamped(0.0, b1), bottom.integral_clamped(b0, 0.0)];
        let mut s = QuantumSurface::new(SurfaceKind::Triangle, self.gamma, self.ws.to_vec(), DomainId::S);
        s.log_weight = self.core_log_weight + lf.log_weight;
        for (i, sampler) in &self.chains {
            let ch = sampler.sample(Streams::new(seed, "qsurface:triangle").seed(*i as u64))?;
            // left side continues the arc towards the lower-indexed other vertex
            let others: Vec<usize> = (0..3).filter(|j| j != i).collect();
            for (side, &j) in others.iter().enumerate() {
                let arc = match (i.min(&j), i.max(&j)) {
                    (0, 1) => 0,
                    (0, 2) => 1,
                    _ => 2,
                };
                arcs[arc] += ch.arc_lengths[side];
            }
            s.log_weight += ch.log_weight;
            s.chains.push((*i, ch));
        }
        s.field = Some(field);
        s.marks = vec![Loc::PosInf, Loc::NegInf, Loc::At(C64::new(0.0, 0.0))];
        s.arc_lengths = arcs;
        s.eps = self.eps;
        s.diagnostics = vec![("c".into(), lf.c)];
        Ok(s)
    }
}

pub fn sample_triangle(ws: [f64; 3], gamma: f64, grid: &GridSpec, seed: u64) -> Result<QuantumSurface> {
    TriangleSampler::new(ws, gamma, grid, None)?.sample(seed)
}

/// `(1/(Q-β)) LF_H^{(α,i),(β,0)}` with `α = Q - W/(2γ)`, `β = γ + (2-W')/γ`.
pub struct M11Sampler {
    pub w: f64,
    pub w_prime: f64,
    pub alpha: f64,
    pub beta: f64,
    core: LiouvilleSampler,
    eps: f64,
}

impl M11Sampler {
    pub fn new(w: f64, w_prime: f64, gamma: f64, grid: &GridSpec) -> Result<Self> {
        let p = WeightParams::new(w, gamma)?;
        let pp = WeightParams::new(w_prime, gamma)?;
        if !(w_prime > gamma * gamma / 2.0) {
            return Err(Error::Range(format!("W' = {w_prime} must exceed γ²/2")));
        }
        if grid.domain != DomainId::H {
            return Err(Error::InvalidGrid("M11 surfaces are embedded in an H grid".into()));
        }
        let spec = LiouvilleSpec::new(
            DomainId::H,
            vec![Insertion::bulk(p.alpha, C64::new(0.0, 1.0)), Insertion::boundary(pp.beta, 0.0)],
            gamma,
        )?;
        Ok(M11Sampler {
            w,
            w_prime,
            alpha: p.alpha,
            beta: pp.beta,
            core: LiouvilleSampler::new(&spec, grid)?,
            eps: 2.0 * grid.hx().max(grid.hy()),
        })
    }

    pub fn spec(&self) -> &LiouvilleSpec {
        self.core.spec()
    }

    pub fn sampler(&self) -> &LiouvilleSampler {
        &self.core
    }

    pub fn sample(&self, seed: u64) -> Result<QuantumSurface> {
        let lf = self.core.sample(seed)?;
        let q = self.core.spec().q();
        let field = lf.bake();
        let d = LengthDensity::new(&field, self.core.spec().gamma, 0.0, self.eps)?;
        let mut s = QuantumSurface::new(SurfaceKind::M11, self.core.spec().gamma, vec![self.w, self.w_prime], DomainId::H);
        s.log_weight = lf.log_weight - (q - self.beta).ln();
        s.field = Some(field);
        s.marks = vec![Loc::At(C64::new(0.0, 1.0)), Loc::At(C64::new(0.0, 0.0))];
        s.arc_lengths = vec![d.total()];
        s.eps = self.eps;
        s.diagnostics = vec![("c".into(), lf.c)];
        Ok(s)
    }
}

pub fn sample_m11(w: f64, w_prime: f64, gamma: f64, grid: &GridSpec, seed: u64) -> Result<QuantumSurface> {
    M11Sampler::new(w, w_prime, gamma, grid)?.sample(seed)
}

/// Rejection filter keeping proposals whose statistic lies within `δ` of
/// the target. Kept samples carry `log_weight - log(2δ)`.
pub struct LengthFilter<F> {
    propose: F,
    target: f64,
    delta: f64,
    next_seed: u64,
    streams: Streams,
    pub proposals: usize,
    pub accepted: usize,
    pub max_proposals: usize,
}

impl<F> LengthFilter<F>
where
    F: FnMut(u64) -> Result<(QuantumSurface, f64)>,
{
    /// `propose(seed)` returns a surface and the statistic to condition on.
    pub fn new(propose: F, target: f64, delta: f64, seed: u64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::InvalidParam(format!("window δ must be positive, got {delta}")));
        }
        Ok(LengthFilter {
            propose,
            target,
            delta,
            next_seed: 0,
            streams: Streams::new(seed, "qsurface:condition"),
            proposals: 0,
            accepted: 0,
            max_proposals: 100_000,
        })
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }

    /// Next kept surface, or a starvation error.
    pub fn next_kept(&mut self) -> Result<QuantumSurface> {
        loop {
            if self.proposals >= self.max_proposals && self.acceptance_rate() < 1e-4 {
                return Err(Error::Starvation { accepted: self.accepted, proposals: self.proposals });
            }
            let seed = self.streams.seed(self.next_seed);
            self.next_seed += 1;
            self.proposals += 1;
            let (mut s, stat) = (self.propose)(seed)?;
            if self.delta.is_infinite() {
                self.accepted += 1;
                return Ok(s);
            }
            if (stat - self.target).abs() < self.delta {
                self.accepted += 1;
                s.log_weight -= (2.0 * self.delta).ln();
                s.diagnostics.push(("acceptance_rate".into(), self.acceptance_rate()));
                return Ok(s);
            }
        }
    }
}

impl<F> Iterator for LengthFilter<F>
where
    F: FnMut(u64) -> Result<(QuantumSurface, f64)>,
{
    type Item = Result<QuantumSurface>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_kept())
    }
}

/// Stream of surfaces from `sampler` with `|arc_lengths[arc] - ℓ| < δ`.
pub fn condition_length<S>(
    mut sampler: S,
    arc: usize,
    target: f64,
    delta: f64,
    seed: u64,
) -> Result<LengthFilter<impl FnMut(u64) -> Result<(QuantumSurface, f64)>>>
where
    S: FnMut(u64) -> Result<QuantumSurface>,
{
    LengthFilter::new(
        move |s| {
            let q = sampler(s)?;
            let v = *q.arc_lengths.get(arc).ok_or_else(|| Error::InvalidParam(format!("no arc {arc}")))?;
            Ok((q, v))
        },
        target,
        delta,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weight_params_examples() {
        let g = 1.2;
        let p = WeightParams::new(2.0, g).unwrap();
        assert_relative_eq!(p.beta, g, epsilon = 1e-15);
        let w = 0.7;
        let m = WeightParams::new(w + 2.0, g).unwrap();
        assert_relative_eq!(m.beta, g - w / g, epsilon = 1e-14);
        let a = WeightParams::new(g * g, g).unwrap();
        assert_relative_eq!(a.alpha, 2.0 / g, epsilon = 1e-14);
        let crit = WeightParams::new(g * g / 2.0, g).unwrap();
        assert_relative_eq!(crit.beta, q_of(g), epsilon = 1e-14);
        assert!(Disk2Sampler::new(g * g / 2.0, g, &GridSpec::strip(33, 9, -4.0, 4.0).unwrap()).is_err());
    }

    #[test]
    fn constant_field_area_and_length() {
        let g = 1.0;
        let grid = GridSpec::h_box(41, 41, 2.0, 4.0).unwrap();
        let c = 0.3;
        let f = FieldSample::from_fn(grid.clone(), |_| c);
        let eps = 0.2;
        let a = quantum_area(&f, g, BBox::new(0.0, 1.0, 1.0, 2.0), &[eps]).unwrap();
        assert_relative_eq!(a.value, eps.powf(g * g / 2.0) * (g * c).exp(), max_relative = 1e-12);
        let l = quantum_length(&f, g, 0.0, -1.0, 0.5, eps).unwrap();
        assert_relative_eq!(l, eps.powf(g * g / 4.0) * (g * c / 2.0).exp() * 1.5, max_relative = 1e-12);
        let shifted = f.shifted(0.5);
        let b = quantum_area(&shifted, g, BBox::new(0.0, 1.0, 1.0, 2.0), &[eps]).unwrap();
        assert_relative_eq!(b.value, a.value * (g * 0.5).exp(), max_relative = 1e-12);
    }

    #[test]
    fn length_density_inverse_and_additivity() {
        let grid = GridSpec::h_box(129, 33, 2.0, 1.0).unwrap();
        let f = FieldSample::from_fn(grid, |z| (3.0 * z.re).sin() + z.im);
        let d = LengthDensity::new(&f, 1.3, 0.0, 0.1).unwrap();
        let whole = d.integral(-1.0, 1.0).unwrap();
        let parts = d.integral(-1.0, 0.137).unwrap() + d.integral(0.137, 1.0).unwrap();
        assert_relative_eq!(whole, parts, max_relative = 1e-14);
        for u in [0.0, 0.3, 1.1, d.total() * 0.77] {
            let x = d.point_at(u);
            assert_relative_eq!(d.cumulative(x), u, epsilon = 1e-10);
        }
        assert!(d.integral(-3.0, 0.0).is_err());
    }

    #[test]
    fn thick_disk_structure() {
        let g = 1.0;
        let grid = GridSpec::strip(65, 17, -6.0, 6.0).unwrap();
        let s = sample_disk2_thick(2.0, g, &grid, 3).unwrap();
        assert!(s.arc_lengths.iter().all(|l| *l > 0.0 && l.is_finite()));
        let f = s.field.as_ref().unwrap();
        // radial part is nonpositive before the constant is added
        let c = s.diagnostic("c").unwrap();
        let (lat_free, _) = Disk2Sampler::new(2.0, g, &grid).unwrap().base(3).unwrap();
        for i in 0..grid.nx {
            assert_relative_eq!(f.at(i, 4) - c, lat_free.at(i, 4), epsilon = 1e-12);
        }
        let t = s.translated(1.5).unwrap();
        assert_eq!(t.arc_lengths, s.arc_lengths);
        let moved = t.field.as_ref().unwrap();
        let l = strip_lengths(moved, g, s.eps).unwrap();
        let base = strip_lengths(f, g, s.eps).unwrap();
        assert_relative_eq!(l[0], base[0], max_relative = 1e-12);
    }

    #[test]
    fn conditioned_radial_is_negative() {
        let ts: Vec<f64> = (-50..=50).map(|k| k as f64 * 0.1).collect();
        let mut rng = Streams::new(1, "t").rng(0);
        let x = conditioned_radial(&ts, 0.5, &mut rng);
        assert_eq!(x[50], 0.0);
        assert!(x.iter().enumerate().all(|(k, v)| k == 50 || *v < 0.0));
    }

    #[test]
    fn chain_labels_sorted_and_lengths_sum() {
        let mut cfg = ThinChainConfig::new(0.25, 1.0, ChainMode::Disk, 2.0).unwrap();
        cfg.bead_grid = GridSpec::strip(49, 9, -6.0, 6.0).unwrap();
        cfg.pool_size = 16;
        let s = ThinChainSampler::new(cfg, 1).unwrap();
        let ch = s.sample(5).unwrap();
        assert!(ch.beads.windows(2).all(|w| w[0].label < w[1].label));
        let tot: f64 = ch.beads.iter().map(|b| b.lengths[0]).sum();
        assert_relative_eq!(tot, ch.arc_lengths[0], max_relative = 1e-14);
        let (l, r) = cut_chain(&ch, 0.5).unwrap();
        assert_eq!(l.beads.len() + r.beads.len(), ch.beads.len());
        assert_relative_eq!(l.arc_lengths[1] + r.arc_lengths[1], ch.arc_lengths[1], max_relative = 1e-12);
        let m = add_marked_point(&ch, ArcSide::Right, 2).unwrap();
        assert_relative_eq!(m.arc_lengths[0] + m.arc_lengths[1], ch.arc_lengths[1], max_relative = 1e-14);
        assert!(m.distinguished.is_some());
    }

    #[test]
    fn triangle_structure() {
        let g = 1.0;
        let grid = GridSpec::strip(65, 17, -5.0, 5.0).unwrap();
        let t = sample_triangle([2.0, 2.0, 2.0], g, &grid, 1).unwrap();
        assert!(t.chains.is_empty());
        assert!(t.arc_lengths.iter().all(|l| *l > 0.0));
        let mut cfg = ThinChainConfig::new(0.25, g, ChainMode::Disk, 1.0).unwrap();
        cfg.bead_grid = GridSpec::strip(33, 9, -5.0, 5.0).unwrap();
        cfg.pool_size = 8;
        let ts = TriangleSampler::new([0.25, 2.0, 2.0], g, &grid, Some(cfg)).unwrap();
        let t = ts.sample(2).unwrap();
        assert_eq!(t.chains.len(), 1);
        assert_eq!(t.chains[0].0, 0);
        assert!(TriangleSampler::new([0.5, 2.0, 2.0], g, &grid, None).is_err());
    }

    #[test]
    fn condition_length_filters() {
        let grid = GridSpec::strip(33, 9, -5.0, 5.0).unwrap();
        let d = Disk2Sampler::new(2.0, 1.0, &grid).unwrap();
        let mut all = condition_length(|s| d.sample(s), 0, 0.0, f64::INFINITY, 1).unwrap();
        let a = all.next_kept().unwrap();
        assert_eq!(a.log_weight, d.sample(Streams::new(1, "qsurface:condition").seed(0)).unwrap().log_weight);
        let mut f = condition_length(|s| d.sample(s), 0, 1.0, 0.5, 1).unwrap();
        for _ in 0..3 {
            let s = f.next_kept().unwrap();
            assert!((s.arc_lengths[0] - 1.0).abs() < 0.5);
        }
        assert!(f.acceptance_rate() > 0.0);
    }
}
