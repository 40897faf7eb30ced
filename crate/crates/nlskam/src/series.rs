//! Sparse Fourier-Taylor series over the phase variables
//! (theta, phi, I, J, u, ubar, v, vbar): arithmetic, formal derivatives,
//! Poisson bracket, weighted majorant norms and truncation.

use crate::error::{KamError, Result};
use crate::lattice::{ModeIndex, MultiIndex, SiteConfig};
use num_complex::Complex64;
use rustc_hash::FxHashMap;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Relative coefficient prune threshold applied after products and brackets.
pub const DEFAULT_PRUNE_REL: f64 = 1e-14;

/// Analyticity domain parameters: angle strip width r, action/mode radius s,
/// mode decay weight rho. rho shrinks along the KAM iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainParams {
    pub r: f64,
    pub s: f64,
    pub rho: f64,
}

impl DomainParams {
    pub fn new(r: f64, s: f64, rho: f64) -> Result<Self> {
        if !(r > 0.0 && s > 0.0 && rho > 0.0) {
            return Err(KamError::Config(format!(
                "domain parameters must be positive (r={r}, s={s}, rho={rho})"
            )));
        }
        Ok(DomainParams { r, s, rho })
    }
}

/// One of the canonical variables a series can be differentiated by.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variable {
    Theta(usize),
    Phi(usize),
    ActionI(usize),
    ActionJ(usize),
    U(ModeIndex),
    UBar(ModeIndex),
    V(ModeIndex),
    VBar(ModeIndex),
}

/// A point of the (complexified) phase space for evaluation and flows.
#[derive(Clone, Debug, Default)]
pub struct PhasePoint {
    pub theta: Vec<Complex64>,
    pub phi: Vec<Complex64>,
    pub act_i: Vec<Complex64>,
    pub act_j: Vec<Complex64>,
    pub u: BTreeMap<ModeIndex, Complex64>,
    pub ubar: BTreeMap<ModeIndex, Complex64>,
    pub v: BTreeMap<ModeIndex, Complex64>,
    pub vbar: BTreeMap<ModeIndex, Complex64>,
}

impl PhasePoint {
    pub fn origin(sites: &SiteConfig) -> Self {
        PhasePoint {
            theta: vec![Complex64::new(0.0, 0.0); sites.b()],
            phi: vec![Complex64::new(0.0, 0.0); sites.bt()],
            act_i: vec![Complex64::new(0.0, 0.0); sites.b()],
            act_j: vec![Complex64::new(0.0, 0.0); sites.bt()],
            ..Default::default()
        }
    }

    pub fn get(&self, var: &Variable) -> Complex64 {
        let zero = Complex64::new(0.0, 0.0);
        match var {
            Variable::Theta(j) => self.theta[*j],
            Variable::Phi(j) => self.phi[*j],
            Variable::ActionI(j) => self.act_i[*j],
            Variable::ActionJ(j) => self.act_j[*j],
            Variable::U(n) => *self.u.get(n).unwrap_or(&zero),
            Variable::UBar(n) => *self.ubar.get(n).unwrap_or(&zero),
            Variable::V(n) => *self.v.get(n).unwrap_or(&zero),
            Variable::VBar(n) => *self.vbar.get(n).unwrap_or(&zero),
        }
    }

    pub fn set(&mut self, var: &Variable, value: Complex64) {
        match var {
            Variable::Theta(j) => self.theta[*j] = value,
            Variable::Phi(j) => self.phi[*j] = value,
            Variable::ActionI(j) => self.act_i[*j] = value,
            Variable::ActionJ(j) => self.act_j[*j] = value,
            Variable::U(n) => {
                self.u.insert(n.clone(), value);
            }
            Variable::UBar(n) => {
                self.ubar.insert(n.clone(), value);
            }
            Variable::V(n) => {
                self.v.insert(n.clone(), value);
            }
            Variable::VBar(n) => {
                self.vbar.insert(n.clone(), value);
            }
        }
    }
}

/// Sparse series: monomial signature -> complex coefficient.
///
/// Terms are kept in a BTreeMap so that every reduction (norms, products,
/// serialization) runs in one canonical order; repeated runs produce
/// bit-identical floating point results.
#[derive(Clone, Debug)]
pub struct HamiltonianSeries {
    sites: Arc<SiteConfig>,
    terms: BTreeMap<MultiIndex, Complex64>,
}

impl HamiltonianSeries {
    pub fn zero(sites: Arc<SiteConfig>) -> Self {
        HamiltonianSeries {
            sites,
            terms: BTreeMap::new(),
        }
    }

    pub fn from_terms<I>(sites: Arc<SiteConfig>, it: I) -> Self
    where
        I: IntoIterator<Item = (MultiIndex, Complex64)>,
    {
        let mut s = Self::zero(sites);
        for (m, c) in it {
            s.accumulate(m, c);
        }
        s.drop_zeros();
        s
    }

    pub fn single(sites: Arc<SiteConfig>, m: MultiIndex, c: Complex64) -> Self {
        Self::from_terms(sites, [(m, c)])
    }

    pub fn sites(&self) -> &Arc<SiteConfig> {
        &self.sites
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, Complex64)> {
        self.terms.iter().map(|(m, c)| (m, *c))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, m: &MultiIndex) -> Complex64 {
        *self.terms.get(m).unwrap_or(&Complex64::new(0.0, 0.0))
    }

    pub fn accumulate(&mut self, m: MultiIndex, c: Complex64) {
        let entry = self.terms.entry(m).or_insert(Complex64::new(0.0, 0.0));
        *entry += c;
    }

    pub fn remove(&mut self, m: &MultiIndex) -> Complex64 {
        self.terms.remove(m).unwrap_or(Complex64::new(0.0, 0.0))
    }

    fn drop_zeros(&mut self) {
        self.terms.retain(|_, c| c.norm_sqr() > 0.0);
    }

    /// Drop coefficients below `rel` times the largest magnitude.
    pub fn prune(mut self, rel: f64) -> Self {
        let max = self
            .terms
            .values()
            .map(|c| c.norm())
            .fold(0.0f64, f64::max);
        if max > 0.0 {
            let floor = rel * max;
            self.terms.retain(|_, c| c.norm() > floor);
        }
        self
    }

    pub fn check_sites(&self, other: &HamiltonianSeries) -> Result<()> {
        if self.sites.same_config(&other.sites) {
            Ok(())
        } else {
            Err(KamError::SiteMismatch)
        }
    }

    /// Coefficient-wise sum. Exact zeros are dropped; no relative pruning so
    /// that multi-scale sums keep their small parts.
    pub fn add(&self, other: &HamiltonianSeries) -> Result<HamiltonianSeries> {
        self.check_sites(other)?;
        let mut out = self.clone();
        for (m, c) in other.terms() {
            out.accumulate(m.clone(), c);
        }
        out.drop_zeros();
        Ok(out)
    }

    pub fn sub(&self, other: &HamiltonianSeries) -> Result<HamiltonianSeries> {
        self.add(&other.scaled(Complex64::new(-1.0, 0.0)))
    }

    /// In-place accumulation, for sums where `self` is the large operand.
    pub fn add_assign(&mut self, other: &HamiltonianSeries) -> Result<()> {
        self.check_sites(other)?;
        for (m, c) in other.terms() {
            self.accumulate(m.clone(), c);
        }
        self.drop_zeros();
        Ok(())
    }

    pub fn scaled(&self, factor: Complex64) -> HamiltonianSeries {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c *= factor;
        }
        out.drop_zeros();
        out
    }

    /// Series product, dropping any term whose weighted degree exceeds
    /// `degree_cap`.
    pub fn multiply(
        &self,
        other: &HamiltonianSeries,
        degree_cap: u32,
    ) -> Result<HamiltonianSeries> {
        self.multiply_with(other, degree_cap, DEFAULT_PRUNE_REL)
    }

    pub fn multiply_with(
        &self,
        other: &HamiltonianSeries,
        degree_cap: u32,
        prune_rel: f64,
    ) -> Result<HamiltonianSeries> {
        self.check_sites(other)?;
        let mut acc: FxHashMap<MultiIndex, Complex64> = FxHashMap::default();
        for (ma, ca) in self.terms() {
            for (mb, cb) in other.terms() {
                if ma.weighted_degree() + mb.weighted_degree() > degree_cap {
                    continue;
                }
                let m = ma.product(mb);
                *acc.entry(m).or_insert(Complex64::new(0.0, 0.0)) += ca * cb;
            }
        }
        Ok(Self::collect(self.sites.clone(), acc, prune_rel))
    }

    fn collect(
        sites: Arc<SiteConfig>,
        acc: FxHashMap<MultiIndex, Complex64>,
        prune_rel: f64,
    ) -> HamiltonianSeries {
        let mut s = HamiltonianSeries {
            sites,
            terms: acc.into_iter().collect(),
        };
        s.drop_zeros();
        s.prune(prune_rel)
    }

    /// Formal partial derivative with respect to one canonical variable.
    pub fn partial(&self, var: &Variable) -> HamiltonianSeries {
        let mut out = Self::zero(self.sites.clone());
        for (m, c) in self.terms() {
            if let Some((dm, dc)) = derive_term(m, c, var) {
                out.accumulate(dm, dc);
            }
        }
        out.drop_zeros();
        out
    }

    /// Poisson bracket {self, other} with the canonical structure
    /// dtheta^dI + dphi^dJ + i du^dubar + i dv^dvbar, degree-capped.
    ///
    /// `other` should be the smaller series: its derivative buckets are
    /// materialized while `self` is streamed term by term.
    pub fn poisson_bracket(
        &self,
        other: &HamiltonianSeries,
        degree_cap: u32,
    ) -> Result<HamiltonianSeries> {
        self.poisson_bracket_with(other, degree_cap, DEFAULT_PRUNE_REL)
    }

    pub fn poisson_bracket_with(
        &self,
        other: &HamiltonianSeries,
        degree_cap: u32,
        prune_rel: f64,
    ) -> Result<HamiltonianSeries> {
        self.check_sites(other)?;
        let buckets = DerivBuckets::build(other);
        let i = Complex64::new(0.0, 1.0);
        let mut acc: FxHashMap<MultiIndex, Complex64> = FxHashMap::default();

        let combine = |dm: &MultiIndex,
                           dc: Complex64,
                           bucket: Option<&Vec<(MultiIndex, Complex64)>>,
                           factor: Complex64,
                           acc: &mut FxHashMap<MultiIndex, Complex64>| {
            if let Some(bucket) = bucket {
                let wd = dm.weighted_degree();
                for (hm, hc) in bucket {
                    if wd + hm.weighted_degree() > degree_cap {
                        continue;
                    }
                    let m = dm.product(hm);
                    *acc.entry(m).or_insert(Complex64::new(0.0, 0.0)) += factor * dc * hc;
                }
            }
        };

        for (m, c) in self.terms() {
            // theta_j / I_j channel
            for (j, &kj) in m.k.iter().enumerate() {
                if kj != 0 {
                    let dc = c * Complex64::new(0.0, kj as f64);
                    combine(m, dc, buckets.get(&Variable::ActionI(j)), Complex64::new(1.0, 0.0), &mut acc);
                }
            }
            for (j, &lj) in m.l.iter().enumerate() {
                if lj > 0 {
                    let mut dm = m.clone();
                    dm.l[j] -= 1;
                    let dc = c * lj as f64;
                    combine(&dm, dc, buckets.get(&Variable::Theta(j)), Complex64::new(-1.0, 0.0), &mut acc);
                }
            }
            // phi_j / J_j channel
            for (j, &kj) in m.kt.iter().enumerate() {
                if kj != 0 {
                    let dc = c * Complex64::new(0.0, kj as f64);
                    combine(m, dc, buckets.get(&Variable::ActionJ(j)), Complex64::new(1.0, 0.0), &mut acc);
                }
            }
            for (j, &lj) in m.lt.iter().enumerate() {
                if lj > 0 {
                    let mut dm = m.clone();
                    dm.lt[j] -= 1;
                    let dc = c * lj as f64;
                    combine(&dm, dc, buckets.get(&Variable::Phi(j)), Complex64::new(-1.0, 0.0), &mut acc);
                }
            }
            // u / ubar channel
            for idx in 0..m.alpha.0.len() {
                let (n, e) = m.alpha.0[idx].clone();
                let mut dm = m.clone();
                dm.alpha.bump(&n, -1);
                let dc = c * e as f64;
                combine(&dm, dc, buckets.get(&Variable::UBar(n)), i, &mut acc);
            }
            for idx in 0..m.beta.0.len() {
                let (n, e) = m.beta.0[idx].clone();
                let mut dm = m.clone();
                dm.beta.bump(&n, -1);
                let dc = c * e as f64;
                combine(&dm, dc, buckets.get(&Variable::U(n)), -i, &mut acc);
            }
            // v / vbar channel
            for idx in 0..m.alpha_t.0.len() {
                let (n, e) = m.alpha_t.0[idx].clone();
                let mut dm = m.clone();
                dm.alpha_t.bump(&n, -1);
                let dc = c * e as f64;
                combine(&dm, dc, buckets.get(&Variable::VBar(n)), i, &mut acc);
            }
            for idx in 0..m.beta_t.0.len() {
                let (n, e) = m.beta_t.0[idx].clone();
                let mut dm = m.clone();
                dm.beta_t.bump(&n, -1);
                let dc = c * e as f64;
                combine(&dm, dc, buckets.get(&Variable::V(n)), -i, &mut acc);
            }
        }
        Ok(Self::collect(self.sites.clone(), acc, prune_rel))
    }

    /// Weight of a single monomial in the majorant norm at `dp`.
    pub fn term_weight(m: &MultiIndex, dp: &DomainParams) -> f64 {
        let mut w = (m.k_norm() as f64 * dp.r).exp() * dp.s.powi(2 * m.action_degree() as i32);
        for map in [&m.alpha, &m.beta, &m.alpha_t, &m.beta_t] {
            for (n, e) in map.iter() {
                w *= (dp.s * (-dp.rho * n.norm()).exp()).powi(e as i32);
            }
        }
        w
    }

    /// Computable majorant of the weighted sup norm: every mode amplitude is
    /// replaced by its extreme value s e^{-rho|n|} on the domain boundary.
    pub fn majorant_norm(&self, dp: &DomainParams) -> f64 {
        self.terms()
            .map(|(m, c)| c.norm() * Self::term_weight(m, dp))
            .sum()
    }

    /// Weighted norm of the Hamiltonian vector field X_self.
    ///
    /// Vector-valued components over the action/angle blocks take the sup of
    /// the component majorants; mode components are summed with their e^{|n|rho}
    /// weights.
    pub fn vector_field_norm(&self, dp: &DomainParams) -> f64 {
        let b = self.sites.b();
        let bt = self.sites.bt();
        let mut i_part = vec![0.0f64; b];
        let mut j_part = vec![0.0f64; bt];
        let mut th_part = vec![0.0f64; b];
        let mut ph_part = vec![0.0f64; bt];
        let mut mode_part = 0.0f64;
        let s2 = dp.s * dp.s;

        for (m, c) in self.terms() {
            let cw = c.norm() * Self::term_weight(m, dp);
            for (j, &kj) in m.k.iter().enumerate() {
                th_part[j] += kj.unsigned_abs() as f64 * cw;
            }
            for (j, &kj) in m.kt.iter().enumerate() {
                ph_part[j] += kj.unsigned_abs() as f64 * cw;
            }
            for (j, &lj) in m.l.iter().enumerate() {
                i_part[j] += lj as f64 * cw / s2;
            }
            for (j, &lj) in m.lt.iter().enumerate() {
                j_part[j] += lj as f64 * cw / s2;
            }
            for map in [&m.alpha, &m.beta, &m.alpha_t, &m.beta_t] {
                for (n, e) in map.iter() {
                    // s^{-1} e^{|n|rho} * ||d/du_n|| with the derivative weight
                    // cw / (s e^{-rho|n|}).
                    mode_part += e as f64 * cw * (2.0 * dp.rho * n.norm()).exp() / s2;
                }
            }
        }
        let max = |v: &[f64]| v.iter().cloned().fold(0.0f64, f64::max);
        max(&i_part) + max(&j_part) + (max(&th_part) + max(&ph_part)) / s2 + mode_part
    }

    /// Contribution of one term to the vector-field norm (channel sums; for
    /// the action/angle blocks this upper-bounds the per-component max, so
    /// summed contributions dominate the norm).
    pub fn term_vfn_contribution(m: &MultiIndex, c: Complex64, dp: &DomainParams) -> f64 {
        let cw = c.norm() * Self::term_weight(m, dp);
        let s2 = dp.s * dp.s;
        let mut acc = 0.0;
        for &kj in m.k.iter().chain(m.kt.iter()) {
            acc += kj.unsigned_abs() as f64 * cw / s2;
        }
        for &lj in m.l.iter().chain(m.lt.iter()) {
            acc += lj as f64 * cw / s2;
        }
        for map in [&m.alpha, &m.beta, &m.alpha_t, &m.beta_t] {
            for (n, e) in map.iter() {
                acc += e as f64 * cw * (2.0 * dp.rho * n.norm()).exp() / s2;
            }
        }
        acc
    }

    /// Compaction with an explicit mass budget: drop the smallest-contribution
    /// terms (at `dp`) as long as the dropped contributions stay within
    /// `rel_budget` times the total, then enforce `hard_cap` on the term
    /// count. Returns the dropped contribution mass.
    pub fn prune_mass_budget(
        self,
        dp: &DomainParams,
        rel_budget: f64,
        hard_cap: usize,
    ) -> (HamiltonianSeries, f64) {
        let sites = self.sites.clone();
        let mut ranked: Vec<(f64, MultiIndex, Complex64)> = self
            .terms
            .into_iter()
            .map(|(m, c)| (Self::term_vfn_contribution(&m, c, dp), m, c))
            .collect();
        let total: f64 = ranked.iter().map(|(w, _, _)| w).sum();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        let budget = rel_budget * total;
        let mut dropped = 0.0;
        let mut cut = 0;
        for (i, (w, _, _)) in ranked.iter().enumerate() {
            let over_cap = ranked.len() - i > hard_cap;
            if dropped + w <= budget || over_cap {
                dropped += w;
                cut = i + 1;
            } else {
                break;
            }
        }
        let out = HamiltonianSeries {
            sites,
            terms: ranked.drain(cut..).map(|(_, m, c)| (m, c)).collect(),
        };
        (out, dropped)
    }

    /// Rigorous upper bound on the vector-field norm of {self, other} at
    /// `dp`, from products of derivative majorants: monomial weights are
    /// submultiplicative and every slot factor of a degree-capped product is
    /// bounded by the window geometry. Used to skip brackets whose entire
    /// contribution is below a tail tolerance.
    pub fn poisson_bracket_vfn_bound(&self, other: &HamiltonianSeries, dp: &DomainParams) -> f64 {
        let sites = self.sites();
        let b = sites.b();
        let bt = sites.bt();
        let maj = |series: &HamiltonianSeries| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64, f64, u32, u32) {
            // per-angle, per-action derivative majorants; summed mode
            // derivative majorants for the u and v channels; max |k|, max deg
            let mut th = vec![0.0; b];
            let mut ph = vec![0.0; bt];
            let mut ai = vec![0.0; b];
            let mut aj = vec![0.0; bt];
            let mut um = 0.0;
            let mut vm = 0.0;
            let mut kmax = 0u32;
            let mut dmax = 0u32;
            for (m, c) in series.terms() {
                let cw = c.norm() * Self::term_weight(m, dp);
                kmax = kmax.max(m.k_norm());
                dmax = dmax.max(m.weighted_degree());
                for (j, &kj) in m.k.iter().enumerate() {
                    th[j] += kj.unsigned_abs() as f64 * cw;
                }
                for (j, &kj) in m.kt.iter().enumerate() {
                    ph[j] += kj.unsigned_abs() as f64 * cw;
                }
                for (j, &lj) in m.l.iter().enumerate() {
                    ai[j] += lj as f64 * cw / (dp.s * dp.s);
                }
                for (j, &lj) in m.lt.iter().enumerate() {
                    aj[j] += lj as f64 * cw / (dp.s * dp.s);
                }
                for (n, e) in m.alpha.iter().chain(m.beta.iter()) {
                    um += e as f64 * cw / (dp.s * (-dp.rho * n.norm()).exp());
                }
                for (n, e) in m.alpha_t.iter().chain(m.beta_t.iter()) {
                    vm += e as f64 * cw / (dp.s * (-dp.rho * n.norm()).exp());
                }
            }
            (th, ph, ai, aj, um, vm, kmax, dmax)
        };
        let (gth, gph, gai, gaj, gu, gv, gk, gd) = maj(self);
        let (hth, hph, hai, haj, hu, hv, hk, hd) = maj(other);
        let mut mass = 0.0;
        for j in 0..b {
            mass += gth[j] * hai[j] + gai[j] * hth[j];
        }
        for j in 0..bt {
            mass += gph[j] * haj[j] + gaj[j] * hph[j];
        }
        mass += gu * hu + gv * hv;
        // slot-count factor of any product term
        let n_geom = (sites.n_max() as f64) * (sites.d() as f64).sqrt();
        let kappa = ((gk + hk) as f64
            + (gd + hd) as f64 * (1.0 + (2.0 * dp.rho * n_geom).exp()))
            / (dp.s * dp.s);
        mass * kappa
    }

    /// True iff every stored term conserves lattice momentum.
    pub fn is_zero_momentum(&self) -> bool {
        self.terms()
            .all(|(m, _)| m.momentum(&self.sites).map(|p| p.is_zero()).unwrap_or(false))
    }

    /// Keep terms with |k|+|k~| <= k_cut and weighted degree <= degree_cap.
    pub fn truncate(&self, k_cut: u32, degree_cap: u32) -> HamiltonianSeries {
        let mut out = Self::zero(self.sites.clone());
        for (m, c) in self.terms() {
            if m.k_norm() <= k_cut && m.weighted_degree() <= degree_cap {
                out.accumulate(m.clone(), c);
            }
        }
        out
    }

    /// The complex-conjugate series (conjugate signature, conjugate coefficient).
    pub fn conjugate_series(&self) -> HamiltonianSeries {
        Self::from_terms(
            self.sites.clone(),
            self.terms().map(|(m, c)| (m.conjugate(), c.conj())),
        )
    }

    /// Checks the reality condition coeff(conj m) = conj(coeff(m)).
    pub fn is_real_symmetric(&self, tol: f64) -> bool {
        let max = self
            .terms
            .values()
            .map(|c| c.norm())
            .fold(0.0f64, f64::max);
        self.terms().all(|(m, c)| {
            (self.coeff(&m.conjugate()) - c.conj()).norm() <= tol * max.max(1e-300)
        })
    }

    /// Point evaluation; all eight variable blocks are independent.
    pub fn evaluate(&self, p: &PhasePoint) -> Complex64 {
        let i = Complex64::new(0.0, 1.0);
        let mut total = Complex64::new(0.0, 0.0);
        for (m, c) in self.terms() {
            let mut phase = Complex64::new(0.0, 0.0);
            for (j, &kj) in m.k.iter().enumerate() {
                phase += kj as f64 * p.theta[j];
            }
            for (j, &kj) in m.kt.iter().enumerate() {
                phase += kj as f64 * p.phi[j];
            }
            let mut val = c * (i * phase).exp();
            for (j, &lj) in m.l.iter().enumerate() {
                if lj > 0 {
                    val *= p.act_i[j].powu(lj);
                }
            }
            for (j, &lj) in m.lt.iter().enumerate() {
                if lj > 0 {
                    val *= p.act_j[j].powu(lj);
                }
            }
            let zero = Complex64::new(0.0, 0.0);
            for (map, vals) in [
                (&m.alpha, &p.u),
                (&m.beta, &p.ubar),
                (&m.alpha_t, &p.v),
                (&m.beta_t, &p.vbar),
            ] {
                for (n, e) in map.iter() {
                    val *= vals.get(n).unwrap_or(&zero).powu(e);
                }
            }
            total += val;
        }
        total
    }

    /// All variables the series actually depends on, in canonical order.
    pub fn variables(&self) -> Vec<Variable> {
        let mut set = std::collections::BTreeSet::new();
        for (m, _) in self.terms() {
            for (j, &kj) in m.k.iter().enumerate() {
                if kj != 0 {
                    set.insert(Variable::Theta(j));
                }
            }
            for (j, &kj) in m.kt.iter().enumerate() {
                if kj != 0 {
                    set.insert(Variable::Phi(j));
                }
            }
            for (j, &lj) in m.l.iter().enumerate() {
                if lj > 0 {
                    set.insert(Variable::ActionI(j));
                }
            }
            for (j, &lj) in m.lt.iter().enumerate() {
                if lj > 0 {
                    set.insert(Variable::ActionJ(j));
                }
            }
            for (n, _) in m.alpha.iter() {
                set.insert(Variable::U(n.clone()));
            }
            for (n, _) in m.beta.iter() {
                set.insert(Variable::UBar(n.clone()));
            }
            for (n, _) in m.alpha_t.iter() {
                set.insert(Variable::V(n.clone()));
            }
            for (n, _) in m.beta_t.iter() {
                set.insert(Variable::VBar(n.clone()));
            }
        }
        set.into_iter().collect()
    }
}

fn derive_term(
    m: &MultiIndex,
    c: Complex64,
    var: &Variable,
) -> Option<(MultiIndex, Complex64)> {
    match var {
        Variable::Theta(j) => {
            if m.k[*j] == 0 {
                None
            } else {
                Some((m.clone(), c * Complex64::new(0.0, m.k[*j] as f64)))
            }
        }
        Variable::Phi(j) => {
            if m.kt[*j] == 0 {
                None
            } else {
                Some((m.clone(), c * Complex64::new(0.0, m.kt[*j] as f64)))
            }
        }
        Variable::ActionI(j) => {
            if m.l[*j] == 0 {
                None
            } else {
                let mut dm = m.clone();
                dm.l[*j] -= 1;
                Some((dm, c * m.l[*j] as f64))
            }
        }
        Variable::ActionJ(j) => {
            if m.lt[*j] == 0 {
                None
            } else {
                let mut dm = m.clone();
                dm.lt[*j] -= 1;
                Some((dm, c * m.lt[*j] as f64))
            }
        }
        Variable::U(n) => {
            let e = m.alpha.get(n);
            if e == 0 {
                None
            } else {
                let mut dm = m.clone();
                dm.alpha.bump(n, -1);
                Some((dm, c * e as f64))
            }
        }
        Variable::UBar(n) => {
            let e = m.beta.get(n);
            if e == 0 {
                None
            } else {
                let mut dm = m.clone();
                dm.beta.bump(n, -1);
                Some((dm, c * e as f64))
            }
        }
        Variable::V(n) => {
            let e = m.alpha_t.get(n);
            if e == 0 {
                None
            } else {
                let mut dm = m.clone();
                dm.alpha_t.bump(n, -1);
                Some((dm, c * e as f64))
            }
        }
        Variable::VBar(n) => {
            let e = m.beta_t.get(n);
            if e == 0 {
                None
            } else {
                let mut dm = m.clone();
                dm.beta_t.bump(n, -1);
                Some((dm, c * e as f64))
            }
        }
    }
}

struct DerivBuckets {
    map: FxHashMap<Variable, Vec<(MultiIndex, Complex64)>>,
}

impl DerivBuckets {
    fn build(h: &HamiltonianSeries) -> Self {
        let mut map: FxHashMap<Variable, Vec<(MultiIndex, Complex64)>> = FxHashMap::default();
        let mut push = |var: Variable, entry: (MultiIndex, Complex64)| {
            map.entry(var).or_default().push(entry);
        };
        for (m, c) in h.terms() {
            for (j, &kj) in m.k.iter().enumerate() {
                if kj != 0 {
                    push(
                        Variable::Theta(j),
                        (m.clone(), c * Complex64::new(0.0, kj as f64)),
                    );
                }
            }
            for (j, &kj) in m.kt.iter().enumerate() {
                if kj != 0 {
                    push(
                        Variable::Phi(j),
                        (m.clone(), c * Complex64::new(0.0, kj as f64)),
                    );
                }
            }
            for (j, &lj) in m.l.iter().enumerate() {
                if lj > 0 {
                    let mut dm = m.clone();
                    dm.l[j] -= 1;
                    push(Variable::ActionI(j), (dm, c * lj as f64));
                }
            }
            for (j, &lj) in m.lt.iter().enumerate() {
                if lj > 0 {
                    let mut dm = m.clone();
                    dm.lt[j] -= 1;
                    push(Variable::ActionJ(j), (dm, c * lj as f64));
                }
            }
            for (n, e) in m.alpha.iter() {
                let mut dm = m.clone();
                dm.alpha.bump(n, -1);
                push(Variable::U(n.clone()), (dm, c * e as f64));
            }
            for (n, e) in m.beta.iter() {
                let mut dm = m.clone();
                dm.beta.bump(n, -1);
                push(Variable::UBar(n.clone()), (dm, c * e as f64));
            }
            for (n, e) in m.alpha_t.iter() {
                let mut dm = m.clone();
                dm.alpha_t.bump(n, -1);
                push(Variable::V(n.clone()), (dm, c * e as f64));
            }
            for (n, e) in m.beta_t.iter() {
                let mut dm = m.clone();
                dm.beta_t.bump(n, -1);
                push(Variable::VBar(n.clone()), (dm, c * e as f64));
            }
        }
        DerivBuckets { map }
    }

    fn get(&self, var: &Variable) -> Option<&Vec<(MultiIndex, Complex64)>> {
        self.map.get(var)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{desk_sites, random_zero_momentum_series, rng};
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn dp() -> DomainParams {
        DomainParams::new(0.5, 0.2, 0.4).unwrap()
    }

    /// e^{i theta_1} (j = 0).
    fn angle_term(sites: &Arc<SiteConfig>) -> MultiIndex {
        let mut m = MultiIndex::constant(sites.b(), sites.bt());
        m.k[0] = 1;
        m
    }

    fn action_term(sites: &Arc<SiteConfig>, pow: u32) -> MultiIndex {
        let mut m = MultiIndex::constant(sites.b(), sites.bt());
        m.l[0] = pow;
        m
    }

    fn u_ubar_term(sites: &Arc<SiteConfig>, n: &ModeIndex) -> MultiIndex {
        let mut m = MultiIndex::constant(sites.b(), sites.bt());
        m.alpha.set(n.clone(), 1);
        m.beta.set(n.clone(), 1);
        m
    }

    #[test]
    fn add_identity_inverse_and_arithmetic() {
        let sites = desk_sites();
        let mut r = rng(7);
        let a = random_zero_momentum_series(&sites, &mut r, 20, 4);
        let zero = HamiltonianSeries::zero(sites.clone());
        assert_eq!(a.add(&zero).unwrap().len(), a.len());
        assert!(a.sub(&a).unwrap().is_empty());

        let m = action_term(&sites, 1);
        let s1 = HamiltonianSeries::single(sites.clone(), m.clone(), c(1.0, 0.0));
        let s2 = HamiltonianSeries::single(sites.clone(), m.clone(), c(2.5, 0.0));
        assert_eq!(s1.add(&s2).unwrap().coeff(&m), c(3.5, 0.0));
    }

    #[test]
    fn multiply_adds_exponents_and_respects_cap() {
        let sites = desk_sites();
        let n = ModeIndex::new(&[2, 1]);
        let mut mu = MultiIndex::constant(2, 2);
        mu.alpha.set(n.clone(), 1);
        let mut mub = MultiIndex::constant(2, 2);
        mub.beta.set(n.clone(), 1);
        let su = HamiltonianSeries::single(sites.clone(), mu, c(2.0, 0.0));
        let sub = HamiltonianSeries::single(sites.clone(), mub, c(0.5, 0.0));
        let prod = su.multiply(&sub, 4).unwrap();
        assert_eq!(prod.len(), 1);
        assert_eq!(prod.coeff(&u_ubar_term(&sites, &n)), c(1.0, 0.0));

        let one = HamiltonianSeries::single(
            sites.clone(),
            MultiIndex::constant(2, 2),
            c(1.0, 0.0),
        );
        let a = su.clone();
        assert_eq!(a.multiply(&one, 8).unwrap().len(), a.len());

        // cap 1 drops the degree-2 product entirely
        assert!(su.multiply(&sub, 1).unwrap().is_empty());
    }

    #[test]
    fn product_momentum_is_sum_of_momenta() {
        let sites = desk_sites();
        let mut r = rng(11);
        let a = random_zero_momentum_series(&sites, &mut r, 15, 3);
        let b = random_zero_momentum_series(&sites, &mut r, 15, 3);
        let prod = a.multiply(&b, 8).unwrap();
        assert!(prod.is_zero_momentum());
    }

    #[test]
    fn partial_matches_calculus() {
        let sites = desk_sites();
        let e = HamiltonianSeries::single(sites.clone(), angle_term(&sites), c(1.0, 0.0));
        let d = e.partial(&Variable::Theta(0));
        assert_eq!(d.coeff(&angle_term(&sites)), c(0.0, 1.0));

        let i2 = HamiltonianSeries::single(sites.clone(), action_term(&sites, 2), c(1.0, 0.0));
        let d = i2.partial(&Variable::ActionI(0));
        assert_eq!(d.coeff(&action_term(&sites, 1)), c(2.0, 0.0));

        let n = ModeIndex::new(&[0, 2]);
        let uu = HamiltonianSeries::single(sites.clone(), u_ubar_term(&sites, &n), c(1.0, 0.0));
        let d = uu.partial(&Variable::U(n.clone()));
        let mut expect = MultiIndex::constant(2, 2);
        expect.beta.set(n, 1);
        assert_eq!(d.coeff(&expect), c(1.0, 0.0));
    }

    #[test]
    fn second_partials_commute() {
        let sites = desk_sites();
        let mut r = rng(13);
        let a = random_zero_momentum_series(&sites, &mut r, 30, 4);
        let n = sites.z1()[5].clone();
        let m = sites.z2()[9].clone();
        let d1 = a.partial(&Variable::U(n.clone())).partial(&Variable::VBar(m.clone()));
        let d2 = a.partial(&Variable::VBar(m)).partial(&Variable::U(n));
        assert!(d1.sub(&d2).unwrap().is_empty());
    }

    #[test]
    fn bracket_of_series_with_itself_vanishes() {
        let sites = desk_sites();
        let mut r = rng(17);
        let a = random_zero_momentum_series(&sites, &mut r, 25, 3);
        let br = a.poisson_bracket(&a, 8).unwrap();
        let scale = a.majorant_norm(&dp());
        assert!(br.majorant_norm(&dp()) <= 1e-12 * scale * scale);
    }

    #[test]
    fn bracket_examples_from_symbolic_differentiation() {
        let sites = desk_sites();
        // {e^{i theta_1} I_1, I_1} = i e^{i theta_1} I_1
        let mut m = angle_term(&sites);
        m.l[0] = 1;
        let g = HamiltonianSeries::single(sites.clone(), m.clone(), c(1.0, 0.0));
        let h = HamiltonianSeries::single(sites.clone(), action_term(&sites, 1), c(1.0, 0.0));
        let br = g.poisson_bracket(&h, 8).unwrap();
        assert_eq!(br.len(), 1);
        assert!((br.coeff(&m) - c(0.0, 1.0)).norm() < 1e-15);

        // {u_n ubar_n, u_n} = -i u_n
        let n = ModeIndex::new(&[1, 1]);
        let g = HamiltonianSeries::single(sites.clone(), u_ubar_term(&sites, &n), c(1.0, 0.0));
        let mut mu = MultiIndex::constant(2, 2);
        mu.alpha.set(n.clone(), 1);
        let h = HamiltonianSeries::single(sites.clone(), mu.clone(), c(1.0, 0.0));
        let br = g.poisson_bracket(&h, 8).unwrap();
        assert_eq!(br.len(), 1);
        assert!((br.coeff(&mu) - c(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn bracket_is_antisymmetric_and_bilinear() {
        let sites = desk_sites();
        let mut r = rng(19);
        let g = random_zero_momentum_series(&sites, &mut r, 12, 3);
        let h = random_zero_momentum_series(&sites, &mut r, 12, 3);
        let gh = g.poisson_bracket(&h, 10).unwrap();
        let hg = h.poisson_bracket(&g, 10).unwrap();
        let sum = gh.add(&hg).unwrap();
        assert!(sum.majorant_norm(&dp()) < 1e-12 * gh.majorant_norm(&dp()).max(1.0));

        let g2 = g.scaled(c(2.0, 0.0));
        let lhs = g2.poisson_bracket(&h, 10).unwrap();
        let rhs = gh.scaled(c(2.0, 0.0));
        assert!(lhs.sub(&rhs).unwrap().majorant_norm(&dp()) < 1e-12 * rhs.majorant_norm(&dp()).max(1.0));
    }

    #[test]
    fn jacobi_identity_on_low_degree_triples() {
        let sites = desk_sites();
        let mut r = rng(23);
        for _ in 0..3 {
            let f = random_zero_momentum_series(&sites, &mut r, 6, 2);
            let g = random_zero_momentum_series(&sites, &mut r, 6, 2);
            let h = random_zero_momentum_series(&sites, &mut r, 6, 2);
            let cap = 32;
            let t1 = f.poisson_bracket(&g.poisson_bracket(&h, cap).unwrap(), cap).unwrap();
            let t2 = g.poisson_bracket(&h.poisson_bracket(&f, cap).unwrap(), cap).unwrap();
            let t3 = h.poisson_bracket(&f.poisson_bracket(&g, cap).unwrap(), cap).unwrap();
            let total = t1.add(&t2).unwrap().add(&t3).unwrap();
            let scale = f.majorant_norm(&dp()) * g.majorant_norm(&dp()) * h.majorant_norm(&dp());
            assert!(total.majorant_norm(&dp()) <= 1e-10 * scale.max(1.0));
        }
    }

    #[test]
    fn bracket_closure_preserves_zero_momentum() {
        let sites = desk_sites();
        let mut r = rng(29);
        for _ in 0..10 {
            let g = random_zero_momentum_series(&sites, &mut r, 10, 3);
            let h = random_zero_momentum_series(&sites, &mut r, 10, 3);
            let br = g.poisson_bracket(&h, 12).unwrap();
            assert!(br.is_zero_momentum());
        }
    }

    #[test]
    fn majorant_norm_examples() {
        let sites = desk_sites();
        let d = dp();
        assert_eq!(HamiltonianSeries::zero(sites.clone()).majorant_norm(&d), 0.0);

        // c * u_n -> |c| s e^{-rho |n|}
        let n = ModeIndex::new(&[1, 2]);
        let mut m = MultiIndex::constant(2, 2);
        m.alpha.set(n.clone(), 1);
        let s = HamiltonianSeries::single(sites.clone(), m, c(0.0, -3.0));
        let expect = 3.0 * d.s * (-d.rho * 5.0f64.sqrt()).exp();
        assert!((s.majorant_norm(&d) - expect).abs() < 1e-15 * expect);

        // c e^{i theta_1} I_1 with r=0.1 -> |c| e^{0.1} s^2
        let d2 = DomainParams::new(0.1, d.s, d.rho).unwrap();
        let mut m = angle_term(&sites);
        m.l[0] = 1;
        let s = HamiltonianSeries::single(sites.clone(), m, c(2.0, 0.0));
        let expect = 2.0 * 0.1f64.exp() * d.s * d.s;
        assert!((s.majorant_norm(&d2) - expect).abs() < 1e-15 * expect);
    }

    /// The majorant of a single monomial equals the maximum of |term| over
    /// the polydisk boundary; cross-check at the extremal point.
    #[test]
    fn majorant_matches_extremal_point_evaluation() {
        let sites = desk_sites();
        let d = dp();
        let n = ModeIndex::new(&[1, -1]);
        let mq = ModeIndex::new(&[0, 2]);
        let mut m = MultiIndex::constant(2, 2);
        m.k[1] = 2;
        m.l[0] = 1;
        m.alpha.set(n.clone(), 1);
        m.beta_t.set(mq.clone(), 2);
        let coeff = c(0.7, -0.2);
        let s = HamiltonianSeries::single(sites.clone(), m, coeff);

        let mut p = PhasePoint::origin(&sites);
        p.theta[1] = c(0.0, -d.r); // |e^{2 i theta}| = e^{2r}
        p.act_i[0] = c(d.s * d.s, 0.0);
        p.u.insert(n.clone(), c(d.s * (-d.rho * n.norm()).exp(), 0.0));
        p.vbar.insert(mq.clone(), c(d.s * (-d.rho * mq.norm()).exp(), 0.0));
        let val = s.evaluate(&p).norm();
        let maj = s.majorant_norm(&d);
        assert!((val - maj).abs() < 1e-13 * maj);
    }

    #[test]
    fn majorant_is_subadditive_and_monotone() {
        let sites = desk_sites();
        let mut r = rng(31);
        let a = random_zero_momentum_series(&sites, &mut r, 15, 4);
        let b = random_zero_momentum_series(&sites, &mut r, 15, 4);
        let d = dp();
        let lhs = a.add(&b).unwrap().majorant_norm(&d);
        assert!(lhs <= a.majorant_norm(&d) + b.majorant_norm(&d) + 1e-12);

        let bigger_r = DomainParams::new(d.r * 2.0, d.s, d.rho).unwrap();
        let bigger_s = DomainParams::new(d.r, d.s * 2.0, d.rho).unwrap();
        let smaller_rho = DomainParams::new(d.r, d.s, d.rho / 2.0).unwrap();
        assert!(a.majorant_norm(&bigger_r) >= a.majorant_norm(&d));
        assert!(a.majorant_norm(&bigger_s) >= a.majorant_norm(&d));
        assert!(a.majorant_norm(&smaller_rho) >= a.majorant_norm(&d));
    }

    #[test]
    fn vector_field_norm_examples() {
        let sites = desk_sites();
        let d = dp();
        assert_eq!(HamiltonianSeries::zero(sites.clone()).vector_field_norm(&d), 0.0);

        // A = c I_1: only the A_I block contributes, with norm |c|.
        let s = HamiltonianSeries::single(sites.clone(), action_term(&sites, 1), c(-1.5, 0.0));
        assert!((s.vector_field_norm(&d) - 1.5).abs() < 1e-14);

        let mut r = rng(37);
        let a = random_zero_momentum_series(&sites, &mut r, 20, 4);
        let twice = a.scaled(c(2.0, 0.0));
        assert!(
            (twice.vector_field_norm(&d) - 2.0 * a.vector_field_norm(&d)).abs()
                < 1e-12 * a.vector_field_norm(&d)
        );
    }

    #[test]
    fn zero_momentum_detection() {
        let sites = desk_sites();
        assert!(HamiltonianSeries::zero(sites.clone()).is_zero_momentum());
        let n = ModeIndex::new(&[1, 1]);
        let s = HamiltonianSeries::single(sites.clone(), u_ubar_term(&sites, &n), c(1.0, 0.0));
        assert!(s.is_zero_momentum());
        let mut m = MultiIndex::constant(2, 2);
        m.alpha.set(n, 1);
        let s = HamiltonianSeries::single(sites.clone(), m, c(1.0, 0.0));
        assert!(!s.is_zero_momentum());
    }

    #[test]
    fn truncate_by_fourier_order_and_degree() {
        let sites = desk_sites();
        let mut r = rng(41);
        let a = random_zero_momentum_series(&sites, &mut r, 25, 4);
        let full = a.truncate(1000, 1000);
        assert_eq!(full.len(), a.len());

        let e = HamiltonianSeries::single(sites.clone(), angle_term(&sites), c(1.0, 0.0));
        assert!(e.truncate(0, 10).is_empty());

        // degree-4 term u_n ubar_n v_m vbar_m dropped at cap 2
        let n = sites.z1()[0].clone();
        let m = sites.z2()[1].clone();
        let mut idx = u_ubar_term(&sites, &n);
        idx.alpha_t.set(m.clone(), 1);
        idx.beta_t.set(m, 1);
        let s = HamiltonianSeries::single(sites.clone(), idx, c(1.0, 0.0));
        assert!(s.truncate(10, 2).is_empty());
        assert_eq!(s.truncate(10, 4).len(), 1);
    }

    #[test]
    fn formal_partials_match_central_differences() {
        let sites = desk_sites();
        let mut r = rng(43);
        let a = random_zero_momentum_series(&sites, &mut r, 20, 4);
        let vars = a.variables();
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            let mut p = PhasePoint::origin(&sites);
            for j in 0..sites.b() {
                p.theta[j] = c(r.gen_range(-1.0..1.0), 0.0);
                p.act_i[j] = c(r.gen_range(0.1..0.5), 0.0);
            }
            for j in 0..sites.bt() {
                p.phi[j] = c(r.gen_range(-1.0..1.0), 0.0);
                p.act_j[j] = c(r.gen_range(0.1..0.5), 0.0);
            }
            for n in sites.z1() {
                p.u.insert(n.clone(), c(r.gen_range(-0.4..0.4), r.gen_range(-0.4..0.4)));
                p.ubar.insert(n.clone(), c(r.gen_range(-0.4..0.4), r.gen_range(-0.4..0.4)));
            }
            for n in sites.z2() {
                p.v.insert(n.clone(), c(r.gen_range(-0.4..0.4), r.gen_range(-0.4..0.4)));
                p.vbar.insert(n.clone(), c(r.gen_range(-0.4..0.4), r.gen_range(-0.4..0.4)));
            }
            let h = 1e-5;
            for var in &vars {
                let exact = a.partial(var).evaluate(&p);
                let base = p.get(var);
                let mut pp = p.clone();
                pp.set(var, base + c(h, 0.0));
                let mut pm = p.clone();
                pm.set(var, base - c(h, 0.0));
                let fd = (a.evaluate(&pp) - a.evaluate(&pm)) / c(2.0 * h, 0.0);
                let denom = exact.norm().max(1e-6);
                worst = worst.max((fd - exact).norm() / denom);
            }
        }
        assert!(worst <= 1e-6, "worst relative FD error {worst:.3e}");
    }
}
