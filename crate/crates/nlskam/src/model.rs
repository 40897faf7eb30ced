//! Coupled-NLS Hamiltonian on the Galerkin window: assembly from a polynomial
//! nonlinearity, action-angle reduction around configured torus amplitudes,
//! and the block-diagonal normal form with its Melnikov matrices.

use crate::error::{KamError, Result};
use crate::lattice::{ModeIndex, MultiIndex, SiteConfig};
use crate::linalg::SmallMat;
use crate::series::HamiltonianSeries;
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Polynomial nonlinearity G(a, b) = sum g_{pq} a^p b^q with p + q >= 2,
/// evaluated on (|u|^2, |v|^2).
#[derive(Clone, Debug, Default)]
pub struct NonlinearitySpec {
    terms: Vec<(u32, u32, f64)>,
}

impl NonlinearitySpec {
    pub fn new(terms: Vec<(u32, u32, f64)>) -> Result<Self> {
        for &(p, q, _) in &terms {
            if p + q < 2 {
                return Err(KamError::Config(format!(
                    "nonlinearity monomial a^{p} b^{q} below second order"
                )));
            }
        }
        Ok(NonlinearitySpec { terms })
    }

    pub fn empty() -> Self {
        NonlinearitySpec { terms: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.iter().all(|&(_, _, g)| g == 0.0)
    }

    pub fn terms(&self) -> &[(u32, u32, f64)] {
        &self.terms
    }

    /// Partial derivative spec, used by the mode-space integrator:
    /// dG/da = sum p g_{pq} a^{p-1} b^q.
    pub fn deriv_a(&self) -> Vec<(u32, u32, f64)> {
        self.terms
            .iter()
            .filter(|&&(p, _, _)| p > 0)
            .map(|&(p, q, g)| (p - 1, q, p as f64 * g))
            .collect()
    }

    pub fn deriv_b(&self) -> Vec<(u32, u32, f64)> {
        self.terms
            .iter()
            .filter(|&&(_, q, _)| q > 0)
            .map(|&(p, q, g)| (p, q - 1, q as f64 * g))
            .collect()
    }
}

/// The integrable block-diagonal part: tangential frequencies, normal
/// frequencies and the cross couplings a_n, b_n on Z1 and Z2.
#[derive(Clone, Debug)]
pub struct NormalForm {
    pub omega: Vec<f64>,
    pub omega_t: Vec<f64>,
    pub normal_u: BTreeMap<ModeIndex, f64>,
    pub normal_v: BTreeMap<ModeIndex, f64>,
    pub coupling_a: BTreeMap<ModeIndex, Complex64>,
    pub coupling_b: BTreeMap<ModeIndex, Complex64>,
}

impl NormalForm {
    /// Unperturbed normal form of the lattice model: omega_j = |i_j|^2 + xi_j,
    /// Omega_n = |n|^2, no couplings.
    pub fn unperturbed(sites: &SiteConfig, xi: &[f64], sigma: &[f64]) -> Result<Self> {
        if xi.len() != sites.b() || sigma.len() != sites.bt() {
            return Err(KamError::Config(format!(
                "parameter vectors sized ({}, {}) but sites need ({}, {})",
                xi.len(),
                sigma.len(),
                sites.b(),
                sites.bt()
            )));
        }
        let omega = sites
            .s_sites()
            .iter()
            .zip(xi)
            .map(|(n, x)| n.norm_sq() as f64 + x)
            .collect();
        let omega_t = sites
            .st_sites()
            .iter()
            .zip(sigma)
            .map(|(n, x)| n.norm_sq() as f64 + x)
            .collect();
        let normal_u = sites
            .z1()
            .iter()
            .map(|n| (n.clone(), n.norm_sq() as f64))
            .collect();
        let normal_v = sites
            .z2()
            .iter()
            .map(|n| (n.clone(), n.norm_sq() as f64))
            .collect();
        Ok(NormalForm {
            omega,
            omega_t,
            normal_u,
            normal_v,
            coupling_a: BTreeMap::new(),
            coupling_b: BTreeMap::new(),
        })
    }

    pub fn freq_u(&self, n: &ModeIndex) -> Option<f64> {
        self.normal_u.get(n).copied()
    }

    pub fn freq_v(&self, n: &ModeIndex) -> Option<f64> {
        self.normal_v.get(n).copied()
    }

    pub fn coupling(&self, n: &ModeIndex) -> (Complex64, Complex64) {
        (
            *self.coupling_a.get(n).unwrap_or(&C_ZERO),
            *self.coupling_b.get(n).unwrap_or(&C_ZERO),
        )
    }

    /// <k, omega> + <k~, omega~>.
    pub fn delta0(&self, k: &[i32], kt: &[i32]) -> f64 {
        let mut acc = 0.0;
        for (kj, w) in k.iter().zip(&self.omega) {
            acc += *kj as f64 * w;
        }
        for (kj, w) in kt.iter().zip(&self.omega_t) {
            acc += *kj as f64 * w;
        }
        acc
    }

    /// Largest deviation of the normal frequencies from |n|^2 (the
    /// accumulated perturbation budget of the asymptotics condition).
    pub fn asymptotics_deviation(&self) -> f64 {
        let mut worst = 0.0f64;
        for (n, om) in self.normal_u.iter().chain(self.normal_v.iter()) {
            worst = worst.max((om - n.norm_sq() as f64).abs());
        }
        for v in self.coupling_a.values().chain(self.coupling_b.values()) {
            worst = worst.max(v.norm());
        }
        worst
    }

    /// The series N + B over the given sites.
    pub fn as_series(&self, sites: &Arc<SiteConfig>) -> HamiltonianSeries {
        let b = sites.b();
        let bt = sites.bt();
        let mut terms: Vec<(MultiIndex, Complex64)> = Vec::new();
        for (j, w) in self.omega.iter().enumerate() {
            let mut m = MultiIndex::constant(b, bt);
            m.l[j] = 1;
            terms.push((m, Complex64::new(*w, 0.0)));
        }
        for (j, w) in self.omega_t.iter().enumerate() {
            let mut m = MultiIndex::constant(b, bt);
            m.lt[j] = 1;
            terms.push((m, Complex64::new(*w, 0.0)));
        }
        for (n, w) in &self.normal_u {
            let mut m = MultiIndex::constant(b, bt);
            m.alpha.set(n.clone(), 1);
            m.beta.set(n.clone(), 1);
            terms.push((m, Complex64::new(*w, 0.0)));
        }
        for (n, w) in &self.normal_v {
            let mut m = MultiIndex::constant(b, bt);
            m.alpha_t.set(n.clone(), 1);
            m.beta_t.set(n.clone(), 1);
            terms.push((m, Complex64::new(*w, 0.0)));
        }
        for (n, a) in &self.coupling_a {
            let mut m = MultiIndex::constant(b, bt);
            m.alpha.set(n.clone(), 1);
            m.beta_t.set(n.clone(), 1);
            terms.push((m, *a));
        }
        for (n, bb) in &self.coupling_b {
            let mut m = MultiIndex::constant(b, bt);
            m.beta.set(n.clone(), 1);
            m.alpha_t.set(n.clone(), 1);
            terms.push((m, *bb));
        }
        HamiltonianSeries::from_terms(sites.clone(), terms)
    }
}

/// Which Kronecker combination a pair block uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum BlockSign {
    Minus,
    Plus,
}

/// Melnikov block: A_n for a single mode, or the Kronecker combination
/// A_n (x) I +- I (x) A_m(^T) for a pair, with scalar blocks embedding as
/// 1x1. Dimension is 1, 2 or 4.
#[derive(Clone, Debug)]
pub struct BlockMatrix {
    pub mat: SmallMat,
}

impl BlockMatrix {
    pub fn dim(&self) -> usize {
        self.mat.dim()
    }
}

/// A_n per window membership (read off the normal form's frequency maps):
/// 2x2 on Z1 /\ Z2, scalar Omega_n on Z1 \ Z2, scalar Omega~_n on Z2 \ Z1.
pub fn single_block(nf: &NormalForm, n: &ModeIndex) -> Result<SmallMat> {
    match (nf.freq_u(n), nf.freq_v(n)) {
        (Some(ou), Some(ov)) => {
            let (a, b) = nf.coupling(n);
            let mut m = SmallMat::zeros(2);
            m[(0, 0)] = Complex64::new(ou, 0.0);
            m[(0, 1)] = a;
            m[(1, 0)] = b;
            m[(1, 1)] = Complex64::new(ov, 0.0);
            Ok(m)
        }
        (Some(ou), None) => {
            let mut m = SmallMat::zeros(1);
            m[(0, 0)] = Complex64::new(ou, 0.0);
            Ok(m)
        }
        (None, Some(ov)) => {
            let mut m = SmallMat::zeros(1);
            m[(0, 0)] = Complex64::new(ov, 0.0);
            Ok(m)
        }
        (None, None) => Err(KamError::Model(format!(
            "mode {n:?} carries no normal frequency; no Melnikov block"
        ))),
    }
}

/// Melnikov block for a single normal mode or a (n, m) pair.
///
/// Pair combinations: minus is A_n (x) I - I (x) A_m^T, plus is
/// A_n (x) I + I (x) A_m.
pub fn block_matrix(
    nf: &NormalForm,
    n: &ModeIndex,
    m: Option<&ModeIndex>,
    sign: BlockSign,
) -> Result<BlockMatrix> {
    let an = single_block(nf, n)?;
    let mat = match m {
        None => an,
        Some(m) => {
            let am = single_block(nf, m)?;
            let left = an.kron(&SmallMat::identity(am.dim()));
            match sign {
                BlockSign::Minus => {
                    let right = SmallMat::identity(an.dim()).kron(&am.transpose());
                    left.sub(&right)
                }
                BlockSign::Plus => {
                    let right = SmallMat::identity(an.dim()).kron(&am);
                    left.add(&right)
                }
            }
        }
    };
    Ok(BlockMatrix { mat })
}

/// Small-divisor magnitude: |delta| without a block, |det(delta I + block)|
/// with one. This is the single shared implementation used by both the
/// homological solver's divisor log and the resonant-set sampler.
pub fn divisor(nf: &NormalForm, k: &[i32], kt: &[i32], block: Option<&BlockMatrix>) -> f64 {
    let delta = nf.delta0(k, kt);
    match block {
        None => delta.abs(),
        Some(b) => b.mat.shifted(Complex64::new(delta, 0.0)).det().norm(),
    }
}

/// Full model specification at one parameter point.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub sites: Arc<SiteConfig>,
    pub nonlinearity: NonlinearitySpec,
    pub xi: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Tangential torus amplitudes for the u field (length b).
    pub amp_u: Vec<f64>,
    /// Tangential torus amplitudes for the v field (length b~).
    pub amp_v: Vec<f64>,
    pub degree_cap: u32,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.xi.len() != self.sites.b() || self.sigma.len() != self.sites.bt() {
            return Err(KamError::Config(
                "xi / sigma lengths must match the site counts".into(),
            ));
        }
        if self.amp_u.len() != self.sites.b() || self.amp_v.len() != self.sites.bt() {
            return Err(KamError::Config(
                "amplitude vectors must match the site counts".into(),
            ));
        }
        if !self.nonlinearity.is_empty()
            && self
                .amp_u
                .iter()
                .chain(self.amp_v.iter())
                .any(|&a| a <= 0.0)
        {
            return Err(KamError::Config(
                "torus amplitudes must be positive when the nonlinearity is nonzero".into(),
            ));
        }
        Ok(())
    }
}

/// Eigenvalues of -Delta + M_xi on the window: |n|^2 + xi at the tangential
/// sites, |n|^2 elsewhere.
fn lambda(sites: &SiteConfig, xi: &[f64], n: &ModeIndex, on_s: bool) -> f64 {
    let base = n.norm_sq() as f64;
    let cls = sites.classify(n);
    let pos = if on_s { cls.s_pos } else { cls.st_pos };
    match pos {
        Some(j) => base + xi[j],
        None => base,
    }
}

/// Build the window-truncated Hamiltonian in mode variables:
/// sum lambda_n u_n ubar_n + sum lambda~_n v_n vbar_n + P, with P the
/// expansion of the G-integral over momentum-conserving mode tuples.
///
/// The basis phi_n = (2pi)^{-d/2} e^{i<n,x>} makes each product of w = p + q
/// intensity factors carry (2pi)^{-d(w-1)}.
pub fn build_hamiltonian(spec: &ModelSpec) -> Result<HamiltonianSeries> {
    spec.validate()?;
    let sites = &spec.sites;
    let b = sites.b();
    let bt = sites.bt();
    let mut h = HamiltonianSeries::zero(sites.clone());

    for n in sites.window() {
        let mut m = MultiIndex::constant(b, bt);
        m.alpha.set(n.clone(), 1);
        m.beta.set(n.clone(), 1);
        h.accumulate(m, Complex64::new(lambda(sites, &spec.xi, &n, true), 0.0));

        let mut m = MultiIndex::constant(b, bt);
        m.alpha_t.set(n.clone(), 1);
        m.beta_t.set(n.clone(), 1);
        h.accumulate(m, Complex64::new(lambda(sites, &spec.sigma, &n, false), 0.0));
    }

    for &(p, q, g) in spec.nonlinearity.terms() {
        if g == 0.0 {
            continue;
        }
        if 2 * (p + q) > spec.degree_cap {
            continue; // beyond the configured polynomial order
        }
        expand_g_term(&mut h, sites, p as usize, q as usize, g)?;
    }
    Ok(h)
}

/// Enumerate sorted mode multisets for u^alpha ubar^beta v^alpha~ vbar^beta~
/// with |alpha|=|beta|=p, |alpha~|=|beta~|=q and zero total momentum. The
/// last slot of the final group is solved from the momentum constraint
/// instead of enumerated.
fn expand_g_term(
    h: &mut HamiltonianSeries,
    sites: &Arc<SiteConfig>,
    p: usize,
    q: usize,
    g: f64,
) -> Result<()> {
    let window = sites.window();
    let w = window.len() as f64;
    // group sizes and momentum signs: alpha +, beta -, alpha~ +, beta~ -
    let groups: Vec<(usize, i64)> = vec![(p, 1), (p, -1), (q, 1), (q, -1)];
    let est: f64 = groups
        .iter()
        .map(|&(sz, _)| w.powi(sz as i32))
        .product::<f64>()
        / w;
    if est > 5e8 {
        return Err(KamError::Config(format!(
            "nonlinearity order a^{p} b^{q} needs ~{est:.1e} mode tuples on this window; \
             shrink n_max or the polynomial order"
        )));
    }
    let d = sites.d();
    let coeff_base = g * (2.0 * PI).powi(-(d as i32) * (p as i32 + q as i32 - 1));

    // state: selections per group, running momentum
    let mut sel: Vec<Vec<ModeIndex>> = groups.iter().map(|&(sz, _)| Vec::with_capacity(sz)).collect();
    let last_group = groups
        .iter()
        .rposition(|&(sz, _)| sz > 0)
        .expect("p + q >= 2");

    fn multinom(sel: &[ModeIndex]) -> f64 {
        // n! / prod (multiplicities)! for a sorted selection
        let mut result = 1.0f64;
        let mut next = 1.0f64; // next factor of n!
        let mut run = 0.0f64;
        for i in 0..sel.len() {
            if i > 0 && sel[i] == sel[i - 1] {
                run += 1.0;
            } else {
                run = 1.0;
            }
            result *= next / run;
            next += 1.0;
        }
        result
    }

    fn emit(
        h: &mut HamiltonianSeries,
        sites: &Arc<SiteConfig>,
        sel: &[Vec<ModeIndex>],
        coeff_base: f64,
    ) {
        let mut m = MultiIndex::constant(sites.b(), sites.bt());
        for n in &sel[0] {
            m.alpha.bump(n, 1);
        }
        for n in &sel[1] {
            m.beta.bump(n, 1);
        }
        for n in &sel[2] {
            m.alpha_t.bump(n, 1);
        }
        for n in &sel[3] {
            m.beta_t.bump(n, 1);
        }
        let mult: f64 = sel.iter().map(|s| multinom(s)).product();
        h.accumulate(m, Complex64::new(coeff_base * mult, 0.0));
    }

    fn rec(
        h: &mut HamiltonianSeries,
        sites: &Arc<SiteConfig>,
        window: &[ModeIndex],
        groups: &[(usize, i64)],
        sel: &mut Vec<Vec<ModeIndex>>,
        group: usize,
        start: usize,
        momentum: &mut Vec<i64>,
        last_group: usize,
        coeff_base: f64,
    ) {
        if group == groups.len() {
            if momentum.iter().all(|&x| x == 0) {
                emit(h, sites, sel, coeff_base);
            }
            return;
        }
        let (size, sign) = groups[group];
        let filled = sel[group].len();
        if filled == size {
            rec(
                h, sites, window, groups, sel, group + 1, 0, momentum, last_group, coeff_base,
            );
            return;
        }
        // keep the multiset sorted: iterate from `start`
        let solving_last = group == last_group && filled + 1 == size;
        if solving_last {
            // the remaining slot is determined: sign * n = -momentum
            let needed: Vec<i64> = momentum.iter().map(|&x| -x * sign).collect();
            if needed.iter().any(|&x| x.abs() > i32::MAX as i64) {
                return;
            }
            let n = ModeIndex(needed.iter().map(|&x| x as i32).collect());
            if !sites.in_window(&n) {
                return;
            }
            if let Some(prev) = sel[group].last() {
                if n < *prev {
                    return;
                }
            }
            sel[group].push(n.clone());
            for (acc, c) in momentum.iter_mut().zip(n.0.iter()) {
                *acc += sign * *c as i64;
            }
            rec(
                h, sites, window, groups, sel, group + 1, 0, momentum, last_group, coeff_base,
            );
            let n = sel[group].pop().unwrap();
            for (acc, c) in momentum.iter_mut().zip(n.0.iter()) {
                *acc -= sign * *c as i64;
            }
            return;
        }
        for idx in start..window.len() {
            let n = &window[idx];
            sel[group].push(n.clone());
            for (acc, c) in momentum.iter_mut().zip(n.0.iter()) {
                *acc += sign * *c as i64;
            }
            rec(
                h,
                sites,
                window,
                groups,
                sel,
                group,
                idx,
                momentum,
                last_group,
                coeff_base,
            );
            sel[group].pop();
            for (acc, c) in momentum.iter_mut().zip(n.0.iter()) {
                *acc -= sign * *c as i64;
            }
        }
    }

    let mut momentum = vec![0i64; d];
    rec(
        h,
        sites,
        &window,
        &groups,
        &mut sel,
        0,
        0,
        &mut momentum,
        last_group,
        coeff_base,
    );
    Ok(())
}

/// Generalized binomial coefficient binom(x, m).
fn gen_binom(x: f64, m: u32) -> f64 {
    let mut acc = 1.0;
    for i in 0..m {
        acc *= (x - i as f64) / (i as f64 + 1.0);
    }
    acc
}

/// Expansion coefficients of (a^2 + I)^{h/2} = sum_m c_m I^m around I = 0,
/// truncated at `max_pow` action powers. Exact (finite) for even h.
fn sqrt_power_expansion(a: f64, h: u32, max_pow: u32) -> Vec<f64> {
    let half = h as f64 / 2.0;
    let top = if h % 2 == 0 { (h / 2).min(max_pow) } else { max_pow };
    (0..=top)
        .map(|m| gen_binom(half, m) * a.powf(2.0 * (half - m as f64)))
        .collect()
}

/// Action-angle reduction around the configured torus amplitudes:
/// u at site i_j becomes sqrt(a_j^2 + I_j) e^{i theta_j}, expanded in I_j,
/// and likewise for v. Returns the normal form read off the quadratic part
/// (omega_j = |i_j|^2 + xi_j exactly, Omega_n = |n|^2, couplings zero) and
/// the reduced perturbation; constants are dropped.
pub fn action_angle_reduce(
    h: &HamiltonianSeries,
    spec: &ModelSpec,
) -> Result<(NormalForm, HamiltonianSeries)> {
    spec.validate()?;
    let sites = &spec.sites;
    let b = sites.b();
    let bt = sites.bt();

    // Guard: the quadratic part must be diagonal in the tangential modes.
    for (m, _) in h.terms() {
        if m.weighted_degree() == 2 && m.action_degree() == 0 {
            let touches_site = |map: &crate::lattice::ExpMap, on_s: bool| {
                map.iter().any(|(n, _)| {
                    let cls = sites.classify(n);
                    if on_s {
                        cls.s_pos.is_some()
                    } else {
                        cls.st_pos.is_some()
                    }
                })
            };
            let tangential = touches_site(&m.alpha, true)
                || touches_site(&m.beta, true)
                || touches_site(&m.alpha_t, false)
                || touches_site(&m.beta_t, false);
            if tangential {
                let diag_u = m.alpha.0.len() == 1
                    && m.alpha.0 == m.beta.0
                    && m.alpha_t.is_empty()
                    && m.beta_t.is_empty();
                let diag_v = m.alpha_t.0.len() == 1
                    && m.alpha_t.0 == m.beta_t.0
                    && m.alpha.is_empty()
                    && m.beta.is_empty();
                if !(diag_u || diag_v) {
                    return Err(KamError::Model(format!(
                        "quadratic part not diagonal in tangential modes: {m:?}"
                    )));
                }
            }
        }
    }

    let mut reduced = HamiltonianSeries::zero(sites.clone());
    for (m, c) in h.terms() {
        // split site exponents out of the sparse maps
        let mut out = MultiIndex::constant(b, bt);
        let mut hu = vec![0u32; b]; // lambda_j + mu_j per u site
        let mut hv = vec![0u32; bt];
        for (n, e) in m.alpha.iter() {
            match sites.classify(n).s_pos {
                Some(j) => {
                    out.k[j] += e as i32;
                    hu[j] += e;
                }
                None => out.alpha.bump(n, e as i64),
            }
        }
        for (n, e) in m.beta.iter() {
            match sites.classify(n).s_pos {
                Some(j) => {
                    out.k[j] -= e as i32;
                    hu[j] += e;
                }
                None => out.beta.bump(n, e as i64),
            }
        }
        for (n, e) in m.alpha_t.iter() {
            match sites.classify(n).st_pos {
                Some(j) => {
                    out.kt[j] += e as i32;
                    hv[j] += e;
                }
                None => out.alpha_t.bump(n, e as i64),
            }
        }
        for (n, e) in m.beta_t.iter() {
            match sites.classify(n).st_pos {
                Some(j) => {
                    out.kt[j] -= e as i32;
                    hv[j] += e;
                }
                None => out.beta_t.bump(n, e as i64),
            }
        }
        debug_assert!(m.l.iter().all(|&x| x == 0) && m.lt.iter().all(|&x| x == 0));

        // distribute amplitude expansions over the touched sites
        let base_deg = out.normal_degree();
        if base_deg > spec.degree_cap {
            continue;
        }
        let budget = (spec.degree_cap - base_deg) / 2;
        let mut stack: Vec<(MultiIndex, f64, u32)> = vec![(out, 1.0, budget)];
        for (j, &hj) in hu.iter().enumerate() {
            if hj == 0 {
                continue;
            }
            let mut next = Vec::new();
            for (idx, factor, left) in &stack {
                let coeffs = sqrt_power_expansion(spec.amp_u[j], hj, *left);
                for (mm, cm) in coeffs.iter().enumerate() {
                    if *cm == 0.0 {
                        continue;
                    }
                    let mut idx2 = idx.clone();
                    idx2.l[j] += mm as u32;
                    next.push((idx2, factor * cm, left - mm as u32));
                }
            }
            stack = next;
        }
        for (j, &hj) in hv.iter().enumerate() {
            if hj == 0 {
                continue;
            }
            let mut next = Vec::new();
            for (idx, factor, left) in &stack {
                let coeffs = sqrt_power_expansion(spec.amp_v[j], hj, *left);
                for (mm, cm) in coeffs.iter().enumerate() {
                    if *cm == 0.0 {
                        continue;
                    }
                    let mut idx2 = idx.clone();
                    idx2.lt[j] += mm as u32;
                    next.push((idx2, factor * cm, left - mm as u32));
                }
            }
            stack = next;
        }
        for (idx, factor, _) in stack {
            if idx.is_constant() {
                continue; // dynamically void energy offset
            }
            if idx.weighted_degree() <= spec.degree_cap {
                reduced.accumulate(idx, c * factor);
            }
        }
    }

    let nf = NormalForm::unperturbed(sites, &spec.xi, &spec.sigma)?;
    let perturbation = reduced.sub(&nf.as_series(sites))?;
    Ok((nf, perturbation))
}
