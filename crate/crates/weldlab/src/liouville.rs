//! Liouville fields with bulk and boundary insertions on H, S and C.
//!
//! The laws are infinite measures in the additive constant `c`. A sample is
//! a free field plus the deterministic insertion profile plus `c` drawn
//! uniformly on a finite window, carried with
//! `log_weight = log C + θc + log(width)` so that weighted averages estimate
//! integrals against the law restricted to the window.

use crate::conformal::{green_function, ConfMap, DomainId, GridSpec, Pt};
use crate::error::{Error, Result};
use crate::gff::{circle_average, FieldSample, FreeSampler, Normalization, ScalarField};
use crate::rng::Streams;
use crate::stats::Summary;
use crate::{abs_plus, check_gamma, q_of, C64};
use rand::Rng as _;
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Loc {
    At(C64),
    /// ∞ of H or C.
    Inf,
    /// `+∞` end of the strip.
    PosInf,
    /// `-∞` end of the strip.
    NegInf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertionKind {
    Bulk,
    Boundary,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Insertion {
    pub charge: f64,
    pub loc: Loc,
    pub kind: InsertionKind,
}

impl Insertion {
    pub fn bulk(alpha: f64, z: C64) -> Self {
        Insertion { charge: alpha, loc: Loc::At(z), kind: InsertionKind::Bulk }
    }

    pub fn boundary(beta: f64, x: f64) -> Self {
        Insertion { charge: beta, loc: Loc::At(C64::new(x, 0.0)), kind: InsertionKind::Boundary }
    }

    pub fn boundary_at(beta: f64, loc: Loc) -> Self {
        Insertion { charge: beta, loc, kind: InsertionKind::Boundary }
    }
}

/// `Δ_α = (α/2)(Q - α/2)`.
pub fn delta(alpha: f64, gamma: f64) -> f64 {
    alpha / 2.0 * (q_of(gamma) - alpha / 2.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LiouvilleSpec {
    pub domain: DomainId,
    pub insertions: Vec<Insertion>,
    pub gamma: f64,
    pub c_window: (f64, f64),
}

pub const DEFAULT_C_WINDOW: (f64, f64) = (-5.0, 5.0);

fn floored_log(d: f64, floor: f64) -> f64 {
    d.max(floor).ln()
}

impl LiouvilleSpec {
    pub fn new(domain: DomainId, insertions: Vec<Insertion>, gamma: f64) -> Result<Self> {
        let s = LiouvilleSpec { domain, insertions, gamma, c_window: DEFAULT_C_WINDOW };
        s.validate()?;
        Ok(s)
    }

    pub fn with_window(mut self, lo: f64, hi: f64) -> Result<Self> {
        self.c_window = (lo, hi);
        self.validate()?;
        Ok(self)
    }

    pub fn q(&self) -> f64 {
        q_of(self.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        let (lo, hi) = self.c_window;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidParam(format!("c window [{lo}, {hi}] must have positive finite width")));
        }
        let mut pts: Vec<C64> = Vec::new();
        let mut inf_count = 0;
        for ins in &self.insertions {
            if !ins.charge.is_finite() {
                return Err(Error::InvalidParam("insertion charge must be finite".into()));
            }
            match (self.domain, ins.kind, ins.loc) {
                (DomainId::H, InsertionKind::Bulk, Loc::At(z)) if z.im > 1e-12 => pts.push(z),
                (DomainId::H, InsertionKind::Boundary, Loc::At(z)) if z.im.abs() <= 1e-12 => pts.push(z),
                (DomainId::H, InsertionKind::Boundary, Loc::Inf) => inf_count += 1,
                (DomainId::S, InsertionKind::Boundary, Loc::At(z)) if DomainId::S.on_boundary(z) => pts.push(z),
                (DomainId::S, InsertionKind::Boundary, Loc::PosInf | Loc::NegInf) => {}
                (DomainId::C, InsertionKind::Bulk, Loc::At(z)) => pts.push(z),
                (DomainId::C, InsertionKind::Bulk, Loc::Inf) => inf_count += 1,
                (d, k, l) => {
                    return Err(Error::InvalidParam(format!("{k:?} insertion at {l:?} is not allowed on {}", d.tag())))
                }
            }
        }
        if inf_count > 1 {
            return Err(Error::InvalidParam("at most one insertion at ∞".into()));
        }
        if self.domain == DomainId::S {
            let finite = self.insertions.iter().filter(|i| matches!(i.loc, Loc::At(_))).count();
            let pos = self.insertions.iter().filter(|i| i.loc == Loc::PosInf).count();
            let neg = self.insertions.iter().filter(|i| i.loc == Loc::NegInf).count();
            if finite > 1 || pos > 1 || neg > 1 {
                return Err(Error::InvalidParam("strip fields take (β1,+∞), (β2,-∞) and one (β3,s3)".into()));
            }
        }
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                let d = (pts[a] - pts[b]).norm();
                if d < 1e-14 {
                    return Err(Error::Coincident(d));
                }
            }
        }
        Ok(())
    }

    fn charge_at(&self, loc: Loc) -> f64 {
        self.insertions.iter().filter(|i| i.loc == loc).map(|i| i.charge).sum()
    }

    fn finite(&self) -> impl Iterator<Item = (f64, C64, InsertionKind)> + '_ {
        self.insertions.iter().filter_map(|i| match i.loc {
            Loc::At(z) => Some((i.charge, z, i.kind)),
            _ => None,
        })
    }

    /// Exponent `θ` of the `e^{θc}dc` factor.
    pub fn theta(&self) -> f64 {
        let q = self.q();
        match self.domain {
            DomainId::H => {
                let mut t = -q;
                for i in &self.insertions {
                    t += match i.kind {
                        InsertionKind::Bulk => i.charge,
                        InsertionKind::Boundary => i.charge / 2.0,
                    };
                }
                t
            }
            DomainId::S => self.insertions.iter().map(|i| i.charge / 2.0).sum::<f64>() - q,
            DomainId::C => self.insertions.iter().map(|i| i.charge).sum::<f64>() - 2.0 * q,
            DomainId::D => f64::NAN,
        }
    }

    /// Logarithm of the insertion constant.
    pub fn log_insertion_constant(&self) -> Result<f64> {
        self.validate()?;
        let q = self.q();
        let g = |a: C64, b: C64, d: DomainId| green_function(d, Pt::Finite(a), Pt::Finite(b));
        match self.domain {
            DomainId::H => {
                let binf = self.charge_at(Loc::Inf);
                let bulk: Vec<(f64, C64)> =
                    self.finite().filter(|x| x.2 == InsertionKind::Bulk).map(|x| (x.0, x.1)).collect();
                let bnd: Vec<(f64, C64)> =
                    self.finite().filter(|x| x.2 == InsertionKind::Boundary).map(|x| (x.0, x.1)).collect();
                let mut s = 0.0;
                for &(a, z) in &bulk {
                    s += -a * a / 2.0 * (2.0 * z.im).ln();
                    s += -2.0 * a * (q - a - binf / 2.0) * abs_plus(z).ln();
                }
                for &(b, x) in &bnd {
                    s += -b * (q - (b + binf) / 2.0) * abs_plus(x).ln();
                }
                for &(a, z) in &bulk {
                    for &(b, x) in &bnd {
                        s += a * b / 2.0 * g(z, x, DomainId::H)?;
                    }
                }
                for i in 0..bulk.len() {
                    for k in i + 1..bulk.len() {
                        s += bulk[i].0 * bulk[k].0 * g(bulk[i].1, bulk[k].1, DomainId::H)?;
                    }
                }
                for j in 0..bnd.len() {
                    for k in j + 1..bnd.len() {
                        s += bnd[j].0 * bnd[k].0 / 4.0 * g(bnd[j].1, bnd[k].1, DomainId::H)?;
                    }
                }
                Ok(s)
            }
            DomainId::S => {
                let b1 = self.charge_at(Loc::PosInf);
                let b2 = self.charge_at(Loc::NegInf);
                Ok(match self.finite().next() {
                    None => 0.0,
                    Some((b3, s3, _)) => {
                        (-delta(b3, self.gamma) + (b1 + b2) * b3 / 4.0) * s3.re.abs() + (b1 - b2) * b3 / 4.0 * s3.re
                    }
                })
            }
            DomainId::C => {
                let ainf = self.charge_at(Loc::Inf);
                let pts: Vec<(f64, C64)> = self.finite().map(|x| (x.0, x.1)).collect();
                let mut s = 0.0;
                for i in 0..pts.len() {
                    let (a, z) = pts[i];
                    s += -a * (2.0 * q - a - ainf) * abs_plus(z).ln();
                    for k in i + 1..pts.len() {
                        s += a * pts[k].0 * g(z, pts[k].1, DomainId::C)?;
                    }
                    s += a * ainf * abs_plus(z).ln();
                }
                Ok(s)
            }
            DomainId::D => Err(Error::InvalidParam("no Liouville field on D".into())),
        }
    }

    pub fn insertion_constant(&self) -> Result<f64> {
        Ok(self.log_insertion_constant()?.exp())
    }

    /// Deterministic part of the field (without `c`); `floor` regularizes
    /// `|z - w|` near insertions.
    pub fn profile(&self, z: C64, floor: f64) -> f64 {
        let q = self.q();
        match self.domain {
            DomainId::H => {
                let binf = self.charge_at(Loc::Inf);
                let mut v = (binf - 2.0 * q) * abs_plus(z).ln();
                for (a, w, kind) in self.finite() {
                    let gz = -floored_log((z - w).norm(), floor) - floored_log((z - w.conj()).norm(), floor)
                        + 2.0 * abs_plus(z).ln()
                        + 2.0 * abs_plus(w).ln();
                    v += match kind {
                        InsertionKind::Bulk => a * gz,
                        InsertionKind::Boundary => a / 2.0 * gz,
                    };
                }
                v
            }
            DomainId::S => {
                let b1 = self.charge_at(Loc::PosInf);
                let b2 = self.charge_at(Loc::NegInf);
                let mut v = (b1 + b2 - 2.0 * q) / 2.0 * z.re.abs() + (b1 - b2) / 2.0 * z.re;
                if let Some((b3, s3, _)) = self.finite().next() {
                    let (ez, es) = (z.exp(), s3.exp());
                    let fl = floor * ez.norm();
                    let gz = -floored_log((ez - es).norm(), fl) - floored_log((ez - es.conj()).norm(), fl)
                        + 2.0 * abs_plus(ez).ln()
                        + 2.0 * abs_plus(es).ln();
                    v += b3 / 2.0 * gz;
                }
                v
            }
            DomainId::C => {
                let ainf = self.charge_at(Loc::Inf);
                let mut v = (ainf - 2.0 * q) * abs_plus(z).ln();
                for (a, w, _) in self.finite() {
                    v += a * (-floored_log((z - w).norm(), floor) + abs_plus(z).ln() + abs_plus(w).ln());
                }
                v
            }
            DomainId::D => f64::NAN,
        }
    }
}

/// How the sampling grid relates to the spec's domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Chart {
    Native,
    /// An H spec sampled on an S grid through `s ↦ e^s`.
    StripOfH,
}

/// Exact-profile Liouville field: interpolated free field plus the closed
/// form profile plus `c`.
#[derive(Clone, Debug)]
pub struct LiouvilleField {
    pub spec: LiouvilleSpec,
    pub chart: Chart,
    pub gff: FieldSample,
    pub c: f64,
    pub log_weight: f64,
    pub seed: u64,
}

impl LiouvilleField {
    /// Field value without the free field (profile plus `c`).
    pub fn mean_part(&self, z: C64, floor: f64) -> f64 {
        match self.chart {
            Chart::Native => self.spec.profile(z, floor) + self.c,
            Chart::StripOfH => {
                let ez = z.exp();
                self.spec.profile(ez, floor * ez.norm()) + self.spec.q() * z.re + self.c
            }
        }
    }

    /// Grid values with the profile regularized at half a cell.
    pub fn bake(&self) -> FieldSample {
        let g = &self.gff.grid;
        let floor = 0.5 * g.hx().max(g.hy());
        let mut f = self.gff.clone();
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.idx(i, j);
                f.values[k] += self.mean_part(g.node(i, j), floor);
            }
        }
        f.normalization = Normalization::None;
        f.log_weight = self.log_weight;
        f.gamma = Some(self.spec.gamma);
        f.seed = self.seed;
        f
    }

    pub fn shifted(&self, a: f64) -> Self {
        let mut s = self.clone();
        s.c += a;
        s
    }
}

impl ScalarField for LiouvilleField {
    fn grid(&self) -> &GridSpec {
        &self.gff.grid
    }

    fn eval(&self, z: C64) -> Option<f64> {
        Some(self.gff.interp(z)? + self.mean_part(z, 0.0))
    }
}

/// Reusable sampler for one (spec, grid) pair.
pub struct LiouvilleSampler {
    spec: LiouvilleSpec,
    chart: Chart,
    free: FreeSampler,
    log_c: f64,
}

impl LiouvilleSampler {
    pub fn new(spec: &LiouvilleSpec, grid: &GridSpec) -> Result<Self> {
        spec.validate()?;
        let chart = match (spec.domain, grid.domain) {
            (a, b) if a == b => Chart::Native,
            (DomainId::H, DomainId::S) => Chart::StripOfH,
            (a, b) => {
                return Err(Error::InvalidParam(format!("cannot sample a {} field on a {} grid", a.tag(), b.tag())))
            }
        };
        let norm = Normalization::for_domain(grid.domain)
            .ok_or_else(|| Error::AnchorMismatch(format!("no free field on {}", grid.domain.tag())))?;
        let free = FreeSampler::new(grid, norm)?;
        Ok(LiouvilleSampler { spec: spec.clone(), chart, free, log_c: spec.log_insertion_constant()? })
    }

    pub fn spec(&self) -> &LiouvilleSpec {
        &self.spec
    }

    pub fn grid(&self) -> &GridSpec {
        self.free.grid()
    }

    pub fn sample(&self, seed: u64) -> Result<LiouvilleField> {
        let streams = Streams::new(seed, "liouville");
        let gff = self.free.sample_with(&mut streams.rng(0), seed)?;
        let (lo, hi) = self.spec.c_window;
        let c = lo + (hi - lo) * streams.rng(1).random::<f64>();
        Ok(LiouvilleField {
            spec: self.spec.clone(),
            chart: self.chart,
            gff,
            c,
            log_weight: self.log_c + self.spec.theta() * c + (hi - lo).ln(),
            seed,
        })
    }
}

/// Weighted Liouville sample baked onto `grid`.
pub fn sample_liouville(spec: &LiouvilleSpec, grid: &GridSpec, seed: u64) -> Result<FieldSample> {
    Ok(LiouvilleSampler::new(spec, grid)?.sample(seed)?.bake())
}

/// `Π |f'(z_i)|^{-2Δ_{α_i}} |f'(s_j)|^{-Δ_{β_j}}`, as a logarithm.
pub fn log_covariance_factor(f: &ConfMap, insertions: &[Insertion], gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let mut s = 0.0;
    for ins in insertions {
        let Loc::At(z) = ins.loc else {
            return Err(Error::InvalidParam("insertion at ∞; use a three-point rotation".into()));
        };
        let w = f.apply(z);
        let d = f.deriv(z).norm();
        if !(w.re.is_finite() && w.im.is_finite()) {
            return Err(Error::Degenerate(format!("insertion {z} is mapped to ∞")));
        }
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::Degenerate(format!("f' vanishes or blows up at {z}")));
        }
        let e = match ins.kind {
            InsertionKind::Bulk => 2.0 * delta(ins.charge, gamma),
            InsertionKind::Boundary => delta(ins.charge, gamma),
        };
        s -= e * d.ln();
    }
    Ok(s)
}

pub fn covariance_factor(f: &ConfMap, insertions: &[Insertion], gamma: f64) -> Result<f64> {
    Ok(log_covariance_factor(f, insertions, gamma)?.exp())
}

/// `f •_γ φ` evaluated pointwise: `φ(f^{-1}(w)) + Q log|(f^{-1})'(w)|`.
pub struct Pullback<'a, F: ScalarField + ?Sized> {
    pub source: &'a F,
    pub inverse: ConfMap,
    pub q: f64,
    pub grid: GridSpec,
}

impl<'a, F: ScalarField + ?Sized> Pullback<'a, F> {
    /// `f` maps the source domain onto the domain of `target_grid`.
    pub fn new(source: &'a F, f: &ConfMap, gamma: f64, target_grid: GridSpec) -> Self {
        Pullback { source, inverse: f.inverse(), q: q_of(gamma), grid: target_grid }
    }
}

impl<F: ScalarField + ?Sized> ScalarField for Pullback<'_, F> {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn eval(&self, w: C64) -> Option<f64> {
        let z = self.inverse.apply(w);
        Some(self.source.eval(z)? + self.q * self.inverse.deriv(w).norm().ln())
    }
}

/// Bounded probe functional `A^k e^{-A}` with `A = ε^{γ²/2} e^{γ φ_ε(z)}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub z: C64,
    pub eps: f64,
    pub power: f64,
}

impl Probe {
    pub fn eval<F: ScalarField + ?Sized>(&self, field: &F, gamma: f64) -> Result<f64> {
        let avg = circle_average(field, self.z, self.eps)?;
        let la = gamma * gamma / 2.0 * self.eps.ln() + gamma * avg;
        let a = la.exp();
        Ok((self.power * la - a).exp())
    }
}

/// One side-by-side instance of the covariance identity
/// `LF(target) = factor · f_* LF(source)`.
#[derive(Clone, Debug)]
pub struct CovarianceCase {
    pub source: LiouvilleSpec,
    pub source_grid: GridSpec,
    pub map: ConfMap,
    pub target: LiouvilleSpec,
    pub target_grid: GridSpec,
    pub log_factor: f64,
    pub probes: Vec<Probe>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub z: C64,
    pub eps: f64,
    pub direct: f64,
    pub direct_se: f64,
    pub pushed: f64,
    pub pushed_se: f64,
    pub z_score: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceReport {
    pub n: usize,
    pub probes: Vec<ProbeResult>,
    pub pass: bool,
}

fn weighted_probe_batch<F, G>(n: usize, seed: u64, label: &str, k: usize, sample: G) -> Result<Vec<Summary>>
where
    F: Fn(u64) -> Result<(f64, Vec<f64>)> + Sync,
    G: Fn() -> F,
{
    let streams = Streams::new(seed, label);
    let f = sample();
    let rows: Vec<Result<(f64, Vec<f64>)>> = (0..n as u64).into_par_iter().map(|i| f(streams.seed(i))).collect();
    let mut out = vec![Summary::default(); k];
    for r in rows {
        let (lw, vals) = r?;
        let w = lw.exp();
        for (s, v) in out.iter_mut().zip(vals) {
            s.push(w * v);
        }
    }
    Ok(out)
}

/// Weighted estimates of each probe under both sides, with independent seeds.
pub fn check_conformal_covariance(case: &CovarianceCase, n_samples: usize, seed: u64) -> Result<CovarianceReport> {
    let gamma = case.target.gamma;
    let k = case.probes.len();
    let direct_sampler = LiouvilleSampler::new(&case.target, &case.target_grid)?;
    let source_sampler = LiouvilleSampler::new(&case.source, &case.source_grid)?;
    let same = case.source == case.target && case.map == ConfMap::identity() && case.log_factor == 0.0;
    let direct = weighted_probe_batch(n_samples, seed, "covariance:direct", k, || {
        |s: u64| {
            let f = direct_sampler.sample(s)?;
            let v = case.probes.iter().map(|p| p.eval(&f, gamma)).collect::<Result<Vec<f64>>>()?;
            Ok((f.log_weight, v))
        }
    })?;
    let pushed_label = if same { "covariance:direct" } else { "covariance:pushed" };
    let pushed = weighted_probe_batch(n_samples, seed, pushed_label, k, || {
        |s: u64| {
            let f = source_sampler.sample(s)?;
            let pb = Pullback::new(&f, &case.map, gamma, case.target_grid.clone());
            let v = case.probes.iter().map(|p| p.eval(&pb, gamma)).collect::<Result<Vec<f64>>>()?;
            Ok((f.log_weight + case.log_factor, v))
        }
    })?;
    let mut probes = Vec::with_capacity(k);
    for (i, p) in case.probes.iter().enumerate() {
        let (a, b) = (direct[i], pushed[i]);
        let se = (a.se().powi(2) + b.se().powi(2)).sqrt();
        let z = if se > 0.0 { (a.mean - b.mean) / se } else { 0.0 };
        probes.push(ProbeResult {
            z: p.z,
            eps: p.eps,
            direct: a.mean,
            direct_se: a.se(),
            pushed: b.mean,
            pushed_se: b.se(),
            z_score: z,
            pass: z.abs() < 4.0,
        });
    }
    let pass = probes.iter().all(|p| p.pass);
    Ok(CovarianceReport { n: n_samples, probes, pass })
}

/// `f(z) = k z` on H with a single boundary insertion `(β, 0)`.
pub fn scaling_case(beta: f64, k: f64, gamma: f64, grid: &GridSpec, probes: Vec<Probe>) -> Result<CovarianceCase> {
    let spec = LiouvilleSpec::new(DomainId::H, vec![Insertion::boundary(beta, 0.0)], gamma)?;
    let m = crate::conformal::MoebiusMap::new(C64::new(k, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0))?;
    let map = ConfMap::Moebius(m);
    let log_factor = log_covariance_factor(&map, &spec.insertions, gamma)?;
    Ok(CovarianceCase {
        source: spec.clone(),
        source_grid: grid.clone(),
        map,
        target: spec,
        target_grid: grid.clone(),
        log_factor,
        probes,
    })
}

/// `LF_H^{(β1,∞),(β2,0),(β3,e^{s3})} = e^{-Δ_{β3} Re s3} exp_* LF_S^{(β1,+∞),(β2,-∞),(β3,s3)}`.
pub fn strip_exp_case(
    betas: [f64; 3],
    s3: C64,
    gamma: f64,
    strip_grid: &GridSpec,
    h_grid: &GridSpec,
    probes: Vec<Probe>,
) -> Result<CovarianceCase> {
    let source = LiouvilleSpec::new(
        DomainId::S,
        vec![
            Insertion::boundary_at(betas[0], Loc::PosInf),
            Insertion::boundary_at(betas[1], Loc::NegInf),
            Insertion::boundary_at(betas[2], Loc::At(s3)),
        ],
        gamma,
    )?;
    let target = LiouvilleSpec::new(
        DomainId::H,
        vec![
            Insertion::boundary_at(betas[0], Loc::Inf),
            Insertion::boundary(betas[1], 0.0),
            Insertion::boundary_at(betas[2], Loc::At(C64::new(s3.exp().re, 0.0))),
        ],
        gamma,
    )?;
    Ok(CovarianceCase {
        source,
        source_grid: strip_grid.clone(),
        map: ConfMap::Exp,
        target,
        target_grid: h_grid.clone(),
        log_factor: -delta(betas[2], gamma) * s3.re,
        probes,
    })
}

/// Liouville field without insertions.
pub fn plain_spec(domain: DomainId, gamma: f64) -> Result<LiouvilleSpec> {
    LiouvilleSpec::new(domain, Vec::new(), gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn insertion_constant_examples() {
        let g = 1.3;
        assert_eq!(plain_spec(DomainId::H, g).unwrap().insertion_constant().unwrap(), 1.0);
        let s = LiouvilleSpec::new(DomainId::H, vec![Insertion::boundary(0.7, 0.0)], g).unwrap();
        assert_abs_diff_eq!(s.insertion_constant().unwrap(), 1.0, epsilon = 1e-15);
        let a = 0.9;
        let s = LiouvilleSpec::new(DomainId::H, vec![Insertion::bulk(a, C64::new(0.0, 1.0))], g).unwrap();
        assert_abs_diff_eq!(s.insertion_constant().unwrap(), 2f64.powf(-a * a / 2.0), epsilon = 1e-14);
    }

    #[test]
    fn coincident_insertions_rejected() {
        let r = LiouvilleSpec::new(DomainId::H, vec![Insertion::boundary(1.0, 0.5), Insertion::boundary(0.3, 0.5)], 1.0);
        assert!(matches!(r, Err(Error::Coincident(_))));
        assert!(LiouvilleSpec::new(DomainId::H, vec![Insertion::bulk(1.0, C64::new(0.0, 0.0))], 1.0).is_err());
        assert!(plain_spec(DomainId::H, 1.0).unwrap().with_window(1.0, 1.0).is_err());
        assert!(plain_spec(DomainId::H, 2.5).is_err());
    }

    #[test]
    fn theta_per_domain() {
        let g = 1.0;
        let q = q_of(g);
        let s = LiouvilleSpec::new(
            DomainId::H,
            vec![Insertion::bulk(0.5, C64::new(0.0, 1.0)), Insertion::boundary(1.0, 0.0), Insertion::boundary_at(0.4, Loc::Inf)],
            g,
        )
        .unwrap();
        assert_abs_diff_eq!(s.theta(), 0.5 + 0.5 + 0.2 - q, epsilon = 1e-15);
        let c = LiouvilleSpec::new(
            DomainId::C,
            vec![Insertion::bulk(0.5, C64::new(0.0, 0.0)), Insertion { charge: 1.0, loc: Loc::Inf, kind: InsertionKind::Bulk }],
            g,
        )
        .unwrap();
        assert_abs_diff_eq!(c.theta(), 1.5 - 2.0 * q, epsilon = 1e-15);
    }

    #[test]
    fn covariance_factor_examples() {
        let g = 1.2;
        let id = ConfMap::identity();
        let ins = [Insertion::boundary(0.8, 0.0), Insertion::bulk(0.3, C64::new(0.2, 1.0))];
        assert_abs_diff_eq!(covariance_factor(&id, &ins, g).unwrap(), 1.0, epsilon = 1e-15);
        let two = ConfMap::Moebius(
            crate::conformal::MoebiusMap::new(C64::new(2.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0))
                .unwrap(),
        );
        let b = 0.8;
        assert_abs_diff_eq!(
            covariance_factor(&two, &[Insertion::boundary(b, 0.0)], g).unwrap(),
            2f64.powf(-delta(b, g)),
            epsilon = 1e-14
        );
        let q = q_of(g);
        assert_abs_diff_eq!(delta(q, g), q * q / 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            covariance_factor(&two, &[Insertion::bulk(q, C64::new(0.0, 1.0))], g).unwrap(),
            2f64.powf(-q * q / 2.0),
            epsilon = 1e-14
        );
        assert!(covariance_factor(&id, &[Insertion::boundary_at(1.0, Loc::Inf)], g).is_err());
    }

    #[test]
    fn zero_insertion_sample_structure() {
        let g = 1.0;
        let grid = GridSpec::h_box(33, 17, 2.0, 2.0).unwrap();
        let spec = plain_spec(DomainId::H, g).unwrap().with_window(0.5, 0.5 + 1e-3).unwrap();
        let s = LiouvilleSampler::new(&spec, &grid).unwrap();
        let f = s.sample(4).unwrap();
        assert_abs_diff_eq!(f.log_weight, -q_of(g) * f.c + 1e-3f64.ln(), epsilon = 1e-12);
        let baked = f.bake();
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let z = grid.node(i, j);
                let want = f.gff.at(i, j) - 2.0 * q_of(g) * abs_plus(z).ln() + f.c;
                assert_abs_diff_eq!(baked.at(i, j), want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn strip_chart_matches_exp_pullback() {
        // an H spec sampled on an S grid equals the S profile of the matching strip spec
        let g = 1.0;
        let h = LiouvilleSpec::new(DomainId::H, vec![Insertion::boundary(1.0, 0.0), Insertion::boundary(1.0, 1.0)], g)
            .unwrap();
        let grid = GridSpec::strip(41, 17, -3.0, 2.0).unwrap();
        let s = LiouvilleSampler::new(&h, &grid).unwrap();
        let f = s.sample(9).unwrap();
        let sp = LiouvilleSpec::new(
            DomainId::S,
            vec![
                Insertion::boundary_at(0.0, Loc::PosInf),
                Insertion::boundary_at(1.0, Loc::NegInf),
                Insertion::boundary_at(1.0, Loc::At(C64::new(0.0, 0.0))),
            ],
            g,
        )
        .unwrap();
        for z in [C64::new(-1.0, 1.0), C64::new(1.5, 2.0), C64::new(0.3, 0.2)] {
            let a = f.mean_part(z, 0.0) - f.c;
            let b = sp.profile(z, 0.0);
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(h.theta(), sp.theta(), epsilon = 1e-15);
    }
}
