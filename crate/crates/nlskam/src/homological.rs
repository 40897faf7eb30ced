//! Quadratic truncation of the perturbation and the linearized homological
//! equation {N + B, F} + R = Nhat + Bhat, solved class by class.
//!
//! Each solvable class is the orbit of a monomial under the coupling moves
//! u_n <-> v_n (and conjugates) generated by B. The linear operator on an
//! orbit is assembled by literally bracketing N + B against the orbit basis,
//! so the solve is consistent with the series algebra to rounding error; the
//! logged divisor values come from the shared block-determinant
//! implementation of the model module.

use crate::error::{KamError, Result};
use crate::lattice::{ModeIndex, MultiIndex, SiteConfig};
use crate::model::{block_matrix, divisor, BlockSign, NormalForm};
use crate::series::{DomainParams, HamiltonianSeries};
use num_complex::Complex64;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Quadratic truncation of P, split by normal-mode degree.
#[derive(Clone, Debug)]
pub struct TruncationR {
    /// Terms with no normal modes, |l| + |l~| <= 1.
    pub r0: HamiltonianSeries,
    /// Terms linear in one normal mode.
    pub r1: HamiltonianSeries,
    /// Terms quadratic in normal modes.
    pub r2: HamiltonianSeries,
}

impl TruncationR {
    pub fn total(&self) -> HamiltonianSeries {
        self.r0.add(&self.r1).unwrap().add(&self.r2).unwrap()
    }
}

/// Keep the solvable quadratic head of P: |k| + |k~| <= k_cut, weighted
/// degree <= 2, partitioned by normal-mode degree {0, 1, 2}.
pub fn extract_truncation(p: &HamiltonianSeries, k_cut: u32) -> TruncationR {
    let sites = p.sites().clone();
    let head = p.truncate(k_cut, 2);
    let mut r0 = HamiltonianSeries::zero(sites.clone());
    let mut r1 = HamiltonianSeries::zero(sites.clone());
    let mut r2 = HamiltonianSeries::zero(sites);
    for (m, c) in head.terms() {
        match m.normal_degree() {
            0 => r0.accumulate(m.clone(), c),
            1 => r1.accumulate(m.clone(), c),
            2 => r2.accumulate(m.clone(), c),
            _ => {}
        }
    }
    TruncationR { r0, r1, r2 }
}

/// One row of the divisor log. For conjugate-side classes `k`/`kt` hold the
/// effective Fourier vector at which the block condition was evaluated.
#[derive(Clone, Debug)]
pub struct DivisorEntry {
    pub class: &'static str,
    pub k: Vec<i32>,
    pub kt: Vec<i32>,
    pub n: Option<ModeIndex>,
    pub m: Option<ModeIndex>,
    pub sign: Option<BlockSign>,
    pub divisor: f64,
    pub bound: f64,
    pub cond: f64,
}

/// Diagonal terms routed into the new normal form instead of being solved.
#[derive(Clone, Debug)]
pub struct NormalFormUpdate {
    pub constant: Complex64,
    pub omega_hat: Vec<f64>,
    pub omega_t_hat: Vec<f64>,
    pub normal_u_hat: BTreeMap<ModeIndex, f64>,
    pub normal_v_hat: BTreeMap<ModeIndex, f64>,
    pub a_hat: BTreeMap<ModeIndex, Complex64>,
    pub b_hat: BTreeMap<ModeIndex, Complex64>,
}

impl NormalFormUpdate {
    pub fn zero(sites: &SiteConfig) -> Self {
        NormalFormUpdate {
            constant: C_ZERO,
            omega_hat: vec![0.0; sites.b()],
            omega_t_hat: vec![0.0; sites.bt()],
            normal_u_hat: BTreeMap::new(),
            normal_v_hat: BTreeMap::new(),
            a_hat: BTreeMap::new(),
            b_hat: BTreeMap::new(),
        }
    }

    /// Absorb one routed diagonal term.
    pub fn absorb(&mut self, m: &MultiIndex, c: Complex64, sites: &SiteConfig) -> Result<()> {
        if m.is_constant() {
            self.constant += c;
            return Ok(());
        }
        if m.normal_degree() == 0 {
            if let Some(j) = m.l.iter().position(|&x| x == 1) {
                self.omega_hat[j] += c.re;
                return Ok(());
            }
            if let Some(j) = m.lt.iter().position(|&x| x == 1) {
                self.omega_t_hat[j] += c.re;
                return Ok(());
            }
        }
        if m.normal_degree() == 2 && m.action_degree() == 0 {
            let au = m.alpha.0.first();
            let bu = m.beta.0.first();
            let av = m.alpha_t.0.first();
            let bv = m.beta_t.0.first();
            match (au, bu, av, bv) {
                (Some((n, 1)), Some((nn, 1)), None, None) if n == nn => {
                    *self.normal_u_hat.entry(n.clone()).or_insert(0.0) += c.re;
                    return Ok(());
                }
                (None, None, Some((n, 1)), Some((nn, 1))) if n == nn => {
                    *self.normal_v_hat.entry(n.clone()).or_insert(0.0) += c.re;
                    return Ok(());
                }
                // u_n vbar_n -> a_n ; ubar_n v_n -> b_n
                (Some((n, 1)), None, None, Some((nn, 1))) if n == nn => {
                    *self.a_hat.entry(n.clone()).or_insert(C_ZERO) += c;
                    return Ok(());
                }
                (None, Some((n, 1)), Some((nn, 1)), None) if n == nn => {
                    *self.b_hat.entry(n.clone()).or_insert(C_ZERO) += c;
                    return Ok(());
                }
                _ => {}
            }
        }
        let _ = sites;
        Err(KamError::Model(format!(
            "term {m:?} routed to the normal form but has no diagonal slot"
        )))
    }

    /// The series Nhat + Bhat (constant included).
    pub fn as_series(&self, sites: &Arc<SiteConfig>) -> HamiltonianSeries {
        let b = sites.b();
        let bt = sites.bt();
        let mut terms = Vec::new();
        if self.constant != C_ZERO {
            terms.push((MultiIndex::constant(b, bt), self.constant));
        }
        for (j, w) in self.omega_hat.iter().enumerate() {
            if *w != 0.0 {
                let mut m = MultiIndex::constant(b, bt);
                m.l[j] = 1;
                terms.push((m, Complex64::new(*w, 0.0)));
            }
        }
        for (j, w) in self.omega_t_hat.iter().enumerate() {
            if *w != 0.0 {
                let mut m = MultiIndex::constant(b, bt);
                m.lt[j] = 1;
                terms.push((m, Complex64::new(*w, 0.0)));
            }
        }
        for (n, w) in &self.normal_u_hat {
            let mut m = MultiIndex::constant(b, bt);
            m.alpha.set(n.clone(), 1);
            m.beta.set(n.clone(), 1);
            terms.push((m, Complex64::new(*w, 0.0)));
        }
        for (n, w) in &self.normal_v_hat {
            let mut m = MultiIndex::constant(b, bt);
            m.alpha_t.set(n.clone(), 1);
            m.beta_t.set(n.clone(), 1);
            terms.push((m, Complex64::new(*w, 0.0)));
        }
        for (n, a) in &self.a_hat {
            let mut m = MultiIndex::constant(b, bt);
            m.alpha.set(n.clone(), 1);
            m.beta_t.set(n.clone(), 1);
            terms.push((m, *a));
        }
        for (n, bb) in &self.b_hat {
            let mut m = MultiIndex::constant(b, bt);
            m.beta.set(n.clone(), 1);
            m.alpha_t.set(n.clone(), 1);
            terms.push((m, *bb));
        }
        HamiltonianSeries::from_terms(sites.clone(), terms)
    }

    pub fn merge(&mut self, other: &NormalFormUpdate) {
        self.constant += other.constant;
        for (a, b) in self.omega_hat.iter_mut().zip(&other.omega_hat) {
            *a += b;
        }
        for (a, b) in self.omega_t_hat.iter_mut().zip(&other.omega_t_hat) {
            *a += b;
        }
        for (n, w) in &other.normal_u_hat {
            *self.normal_u_hat.entry(n.clone()).or_insert(0.0) += w;
        }
        for (n, w) in &other.normal_v_hat {
            *self.normal_v_hat.entry(n.clone()).or_insert(0.0) += w;
        }
        for (n, w) in &other.a_hat {
            *self.a_hat.entry(n.clone()).or_insert(C_ZERO) += w;
        }
        for (n, w) in &other.b_hat {
            *self.b_hat.entry(n.clone()).or_insert(C_ZERO) += w;
        }
    }
}

/// Result of solving one R-part.
#[derive(Clone, Debug)]
pub struct ClassSolve {
    pub f: HamiltonianSeries,
    pub log: Vec<DivisorEntry>,
    pub routed: NormalFormUpdate,
}

/// The generating function F = F0 + F1 + F2 with its divisor log.
#[derive(Clone, Debug)]
pub struct SolutionF {
    pub f0: HamiltonianSeries,
    pub f1: HamiltonianSeries,
    pub f2: HamiltonianSeries,
    pub divisor_log: Vec<DivisorEntry>,
}

impl SolutionF {
    pub fn total(&self) -> HamiltonianSeries {
        self.f0.add(&self.f1).unwrap().add(&self.f2).unwrap()
    }

    pub fn min_divisor(&self) -> f64 {
        self.divisor_log
            .iter()
            .map(|e| e.divisor)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Orbit of a monomial under the B-coupling moves that exchange
/// u_n <-> v_n and ubar_n <-> vbar_n at modes n in Z1 /\ Z2.
fn coupling_orbit(seed: &MultiIndex, sites: &SiteConfig) -> Vec<MultiIndex> {
    let mut seen: BTreeSet<MultiIndex> = BTreeSet::new();
    let mut queue = vec![seed.clone()];
    while let Some(m) = queue.pop() {
        if !seen.insert(m.clone()) {
            continue;
        }
        let mut moves: Vec<MultiIndex> = Vec::new();
        for (n, _) in m.alpha.iter() {
            if sites.classify(n).in_z2 {
                let mut mm = m.clone();
                mm.alpha.bump(n, -1);
                mm.alpha_t.bump(n, 1);
                moves.push(mm);
            }
        }
        for (n, _) in m.alpha_t.iter() {
            if sites.classify(n).in_z1 {
                let mut mm = m.clone();
                mm.alpha_t.bump(n, -1);
                mm.alpha.bump(n, 1);
                moves.push(mm);
            }
        }
        for (n, _) in m.beta.iter() {
            if sites.classify(n).in_z2 {
                let mut mm = m.clone();
                mm.beta.bump(n, -1);
                mm.beta_t.bump(n, 1);
                moves.push(mm);
            }
        }
        for (n, _) in m.beta_t.iter() {
            if sites.classify(n).in_z1 {
                let mut mm = m.clone();
                mm.beta_t.bump(n, -1);
                mm.beta.bump(n, 1);
                moves.push(mm);
            }
        }
        for mm in moves {
            if !seen.contains(&mm) {
                queue.push(mm);
            }
        }
    }
    seen.into_iter().collect()
}

/// True for the orbits that (4.19)-(4.21) absorb into the normal form:
/// k = k~ = 0 together with either no normal modes, or the degree-2 diagonal
/// pattern (one unbarred and one barred factor at the same mode).
pub fn is_routed_class(m: &MultiIndex) -> bool {
    if m.k_norm() != 0 || m.weighted_degree() > 2 {
        return false;
    }
    match m.normal_degree() {
        0 => true,
        2 => {
            let unbarred: Vec<&ModeIndex> = m
                .alpha
                .iter()
                .chain(m.alpha_t.iter())
                .flat_map(|(n, e)| std::iter::repeat(n).take(e as usize))
                .collect();
            let barred: Vec<&ModeIndex> = m
                .beta
                .iter()
                .chain(m.beta_t.iter())
                .flat_map(|(n, e)| std::iter::repeat(n).take(e as usize))
                .collect();
            unbarred.len() == 1 && barred.len() == 1 && unbarred[0] == barred[0]
        }
        _ => false,
    }
}

/// Classify an orbit for the divisor log: the representative block and the
/// effective Fourier vector (negated for conjugate-side classes).
fn class_descriptor(
    m: &MultiIndex,
    nf: &NormalForm,
    sites: &SiteConfig,
) -> Result<(Option<ModeIndex>, Option<ModeIndex>, Option<BlockSign>, Vec<i32>, Vec<i32>)> {
    let unbarred: Vec<ModeIndex> = m
        .alpha
        .iter()
        .chain(m.alpha_t.iter())
        .flat_map(|(n, e)| std::iter::repeat(n.clone()).take(e as usize))
        .collect();
    let barred: Vec<ModeIndex> = m
        .beta
        .iter()
        .chain(m.beta_t.iter())
        .flat_map(|(n, e)| std::iter::repeat(n.clone()).take(e as usize))
        .collect();
    let k: Vec<i32> = m.k.to_vec();
    let kt: Vec<i32> = m.kt.to_vec();
    let neg = |v: &[i32]| v.iter().map(|x| -x).collect::<Vec<i32>>();
    let _ = nf;
    let _ = sites;
    match (unbarred.len(), barred.len()) {
        (0, 0) => Ok((None, None, None, k, kt)),
        (1, 0) => Ok((Some(unbarred[0].clone()), None, None, k, kt)),
        (0, 1) => Ok((Some(barred[0].clone()), None, None, neg(&k), neg(&kt))),
        (1, 1) => Ok((
            Some(unbarred[0].clone()),
            Some(barred[0].clone()),
            Some(BlockSign::Minus),
            k,
            kt,
        )),
        (2, 0) => Ok((
            Some(unbarred[0].clone()),
            Some(unbarred[1].clone()),
            Some(BlockSign::Plus),
            k,
            kt,
        )),
        (0, 2) => Ok((
            Some(barred[0].clone()),
            Some(barred[1].clone()),
            Some(BlockSign::Plus),
            neg(&k),
            neg(&kt),
        )),
        _ => Err(KamError::Model(format!(
            "monomial {m:?} is not of homological degree <= 2"
        ))),
    }
}

/// Solve {N + B, F_part} + R_part = routed diagonal part, orbit by orbit.
fn solve_part(
    part: &HamiltonianSeries,
    nb: &HamiltonianSeries,
    nf: &NormalForm,
    gamma: f64,
    tau: f64,
    k_cut: u32,
    class: &'static str,
) -> Result<ClassSolve> {
    let sites = part.sites().clone();
    let bound = gamma / (k_cut.max(1) as f64).powf(tau);
    let mut f = HamiltonianSeries::zero(sites.clone());
    let mut routed = NormalFormUpdate::zero(&sites);
    let mut log = Vec::new();
    let mut done: BTreeSet<MultiIndex> = BTreeSet::new();

    for (seed, _) in part.terms() {
        if done.contains(seed) {
            continue;
        }
        let orbit = coupling_orbit(seed, &sites);
        for m in &orbit {
            done.insert(m.clone());
        }
        if is_routed_class(seed) {
            debug_assert!(orbit.iter().all(is_routed_class));
            for m in &orbit {
                let c = part.coeff(m);
                if c != C_ZERO {
                    routed.absorb(m, c, &sites)?;
                }
            }
            continue;
        }

        // assemble the orbit operator column by column from the bracket
        let p = orbit.len();
        let mut op = crate::linalg::SmallMat::zeros(p);
        for (col, m) in orbit.iter().enumerate() {
            let unit = HamiltonianSeries::single(sites.clone(), m.clone(), Complex64::new(1.0, 0.0));
            let bra = nb.poisson_bracket_with(&unit, u32::MAX, 0.0)?;
            for (bm, bc) in bra.terms() {
                match orbit.binary_search(bm) {
                    Ok(row) => op[(row, col)] = bc,
                    Err(_) => {
                        return Err(KamError::Model(format!(
                            "bracket of {m:?} left its coupling orbit at {bm:?}"
                        )))
                    }
                }
            }
        }

        // divisor condition via the shared block determinant
        let (n, mopt, sign, keff, kteff) = class_descriptor(seed, nf, &sites)?;
        let block = match (&n, &mopt, sign) {
            (None, _, _) => None,
            (Some(n), None, _) => Some(block_matrix(nf, n, None, BlockSign::Minus)?),
            (Some(n), Some(m), Some(s)) => Some(block_matrix(nf, n, Some(m), s)?),
            _ => unreachable!(),
        };
        let div = divisor(nf, &keff, &kteff, block.as_ref());
        if div < bound {
            return Err(KamError::Resonance {
                class,
                k: keff,
                kt: kteff,
                n: n.map(|x| x.0.to_vec()),
                m: mopt.map(|x| x.0.to_vec()),
                divisor: div,
                bound,
            });
        }

        let rhs: Vec<Complex64> = orbit.iter().map(|m| -part.coeff(m)).collect();
        let (sol, cond) = op.solve(&rhs).ok_or_else(|| KamError::Resonance {
            class,
            k: seed.k.to_vec(),
            kt: seed.kt.to_vec(),
            n: None,
            m: None,
            divisor: 0.0,
            bound,
        })?;
        debug_assert!(op.residual(&sol, &rhs) <= 1e-10 * rhs.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300));
        for (m, c) in orbit.iter().zip(&sol) {
            if *c != C_ZERO {
                f.accumulate(m.clone(), *c);
            }
        }
        log.push(DivisorEntry {
            class,
            k: keff,
            kt: kteff,
            n,
            m: mopt,
            sign,
            divisor: div,
            bound,
            cond,
        });
    }
    Ok(ClassSolve { f, log, routed })
}

pub fn solve_f0(
    r0: &HamiltonianSeries,
    nb: &HamiltonianSeries,
    nf: &NormalForm,
    gamma: f64,
    tau: f64,
    k_cut: u32,
) -> Result<ClassSolve> {
    solve_part(r0, nb, nf, gamma, tau, k_cut, "f0")
}

pub fn solve_f1(
    r1: &HamiltonianSeries,
    nb: &HamiltonianSeries,
    nf: &NormalForm,
    gamma: f64,
    tau: f64,
    k_cut: u32,
) -> Result<ClassSolve> {
    solve_part(r1, nb, nf, gamma, tau, k_cut, "f1")
}

pub fn solve_f2(
    r2: &HamiltonianSeries,
    nb: &HamiltonianSeries,
    nf: &NormalForm,
    gamma: f64,
    tau: f64,
    k_cut: u32,
) -> Result<ClassSolve> {
    solve_part(r2, nb, nf, gamma, tau, k_cut, "f2")
}

/// Solve all three classes and merge.
pub fn solve_homological(
    r: &TruncationR,
    nf: &NormalForm,
    gamma: f64,
    tau: f64,
    k_cut: u32,
) -> Result<(SolutionF, NormalFormUpdate)> {
    let sites = r.r0.sites().clone();
    let nb = nf.as_series(&sites);
    let s0 = solve_f0(&r.r0, &nb, nf, gamma, tau, k_cut)?;
    let s1 = solve_f1(&r.r1, &nb, nf, gamma, tau, k_cut)?;
    let s2 = solve_f2(&r.r2, &nb, nf, gamma, tau, k_cut)?;
    let mut update = s0.routed.clone();
    update.merge(&s1.routed);
    update.merge(&s2.routed);
    let mut divisor_log = s0.log;
    divisor_log.extend(s1.log);
    divisor_log.extend(s2.log);
    Ok((
        SolutionF {
            f0: s0.f,
            f1: s1.f,
            f2: s2.f,
            divisor_log,
        },
        update,
    ))
}

/// Norm of {N + B, F} + R - (Nhat + Bhat); callers compare against
/// 1e-9 * ||X_R||.
pub fn residual_check(
    nf: &NormalForm,
    f: &SolutionF,
    r: &TruncationR,
    update: &NormalFormUpdate,
    dp: &DomainParams,
) -> Result<f64> {
    let sites = r.r0.sites().clone();
    let nb = nf.as_series(&sites);
    let ftot = f.total();
    let bra = nb.poisson_bracket_with(&ftot, u32::MAX, 0.0)?;
    let resid = bra
        .add(&r.total())?
        .sub(&update.as_series(&sites))?;
    Ok(resid.vector_field_norm(dp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{action_angle_reduce, build_hamiltonian, ModelSpec, NonlinearitySpec};
    use crate::testing::desk_sites;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn dp() -> DomainParams {
        DomainParams::new(0.5, 0.2, 0.4).unwrap()
    }

    fn desk_spec(g: f64) -> ModelSpec {
        ModelSpec {
            sites: desk_sites(),
            nonlinearity: NonlinearitySpec::new(vec![(1, 1, g)]).unwrap(),
            xi: vec![0.317, 0.259],
            sigma: vec![0.431, 0.127],
            amp_u: vec![0.1, 0.1],
            amp_v: vec![0.1, 0.1],
            degree_cap: 4,
        }
    }

    #[test]
    fn extraction_examples() {
        let sites = desk_sites();
        // purely cubic in normal modes -> all parts empty
        let n1 = sites.z1()[3].clone();
        let n2 = sites.z1()[7].clone();
        let mut m = MultiIndex::constant(2, 2);
        m.alpha.set(n1.clone(), 2);
        m.beta.set(n2.clone(), 1);
        let p = HamiltonianSeries::single(sites.clone(), m, c(1.0, 0.0));
        let r = extract_truncation(&p, 10);
        assert!(r.r0.is_empty() && r.r1.is_empty() && r.r2.is_empty());

        // single e^{i theta} u_n term lands in R1
        let mut m = MultiIndex::constant(2, 2);
        m.k[1] = 1;
        m.beta.set(ModeIndex::new(&[1, 0]), 0); // no-op, keep alpha-only
        m.alpha.set(n1, 1);
        let p = HamiltonianSeries::single(sites.clone(), m.clone(), c(0.3, 0.0));
        let r = extract_truncation(&p, 10);
        assert_eq!(r.r1.len(), 1);
        assert_eq!(r.r1.coeff(&m), c(0.3, 0.0));

        // truncation never grows the vector field norm
        let spec = desk_spec(0.5);
        let h = build_hamiltonian(&spec).unwrap();
        let (_, p) = action_angle_reduce(&h, &spec).unwrap();
        let r = extract_truncation(&p, 9).total();
        assert!(r.vector_field_norm(&dp()) <= p.vector_field_norm(&dp()) + 1e-12);
    }

    #[test]
    fn f0_scalar_solve_divides_by_i_delta() {
        let sites = desk_sites();
        let mut nf = NormalForm::unperturbed(&sites, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        nf.omega = vec![1.0, 0.0];
        nf.omega_t = vec![0.0, 0.0];
        let nb = nf.as_series(&sites);
        let mut m = MultiIndex::constant(2, 2);
        m.k[0] = 1; // delta0 = 1
        let r0 = HamiltonianSeries::single(sites.clone(), m.clone(), c(0.5, 0.0));
        let s = solve_f0(&r0, &nb, &nf, 0.01, 2.0, 5).unwrap();
        assert_eq!(s.f.len(), 1);
        assert!((s.f.coeff(&m) - c(0.0, -0.5)).norm() < 1e-15);
        assert_eq!(s.log.len(), 1);
        assert!((s.log[0].divisor - 1.0).abs() < 1e-15);

        let empty = HamiltonianSeries::zero(sites.clone());
        let s = solve_f0(&empty, &nb, &nf, 0.01, 2.0, 5).unwrap();
        assert!(s.f.is_empty() && s.log.is_empty());
    }

    #[test]
    fn routed_terms_fill_the_update() {
        let sites = desk_sites();
        let nf = NormalForm::unperturbed(&sites, &[0.3, 0.2], &[0.1, 0.4]).unwrap();
        let nb = nf.as_series(&sites);
        // k = 0 action term routes to omega_hat
        let mut m = MultiIndex::constant(2, 2);
        m.l[1] = 1;
        let r0 = HamiltonianSeries::single(sites.clone(), m, c(0.25, 0.0));
        let s = solve_f0(&r0, &nb, &nf, 0.01, 2.0, 5).unwrap();
        assert!(s.f.is_empty());
        assert_eq!(s.routed.omega_hat, vec![0.0, 0.25]);

        // diagonal u_n vbar_n with k = 0 routes to a_hat, and its orbit
        // companions route with it
        let n = ModeIndex::new(&[1, 1]);
        let mut m = MultiIndex::constant(2, 2);
        m.alpha.set(n.clone(), 1);
        m.beta_t.set(n.clone(), 1);
        let r2 = HamiltonianSeries::single(sites.clone(), m, c(0.0, 0.125));
        let s = solve_f2(&r2, &nb, &nf, 0.01, 2.0, 5).unwrap();
        assert!(s.f.is_empty());
        assert_eq!(s.routed.a_hat.get(&n), Some(&c(0.0, 0.125)));
    }

    #[test]
    fn resonance_is_reported_with_its_class() {
        let sites = desk_sites();
        let mut nf = NormalForm::unperturbed(&sites, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        nf.omega = vec![1.0, 0.0];
        let nb = nf.as_series(&sites);
        let mut m = MultiIndex::constant(2, 2);
        m.k[0] = 1;
        let r0 = HamiltonianSeries::single(sites.clone(), m, c(0.5, 0.0));
        // bound = gamma / K^tau = 2.0 > divisor 1.0
        let err = solve_f0(&r0, &nb, &nf, 2.0, 0.0, 5).unwrap_err();
        match err {
            KamError::Resonance { class, divisor, .. } => {
                assert_eq!(class, "f0");
                assert!((divisor - 1.0).abs() < 1e-15);
            }
            other => panic!("expected resonance, got {other:?}"),
        }
    }

    #[test]
    fn desk_instance_solve_has_tiny_residual_and_momentum_zero_f() {
        let spec = desk_spec(0.05);
        let h = build_hamiltonian(&spec).unwrap();
        let (nf, p) = action_angle_reduce(&h, &spec).unwrap();
        let r = extract_truncation(&p, 9);
        let (f, update) = solve_homological(&r, &nf, 0.05, 12.0, 9).unwrap();

        assert!(f.total().is_zero_momentum());
        assert!(!f.f2.is_empty());
        assert!(!r.r1.is_empty(), "desk instance exercises the F1 branch");

        let resid = residual_check(&nf, &f, &r, &update, &dp()).unwrap();
        let r_norm = r.total().vector_field_norm(&dp());
        assert!(
            resid <= 1e-9 * r_norm,
            "residual {resid:.3e} vs tolerance {:.3e}",
            1e-9 * r_norm
        );

        // divisor log: one entry per class, all above the bound
        let bound = 0.05 / 9f64.powf(12.0);
        for e in &f.divisor_log {
            assert!(e.divisor >= bound);
        }
        assert!(f.min_divisor() < f64::INFINITY);

        // coefficient envelope: |F| <= |R| * cond / divisor per class scale
        let fr = f.total();
        let rr = r.total();
        let max_r = rr.terms().map(|(_, c)| c.norm()).fold(0.0f64, f64::max);
        let min_div = f.min_divisor();
        let max_f = fr.terms().map(|(_, c)| c.norm()).fold(0.0f64, f64::max);
        assert!(max_f <= 16.0 * max_r / min_div);
    }

    #[test]
    fn solution_is_real_symmetric_for_real_hamiltonian() {
        let spec = desk_spec(0.05);
        let h = build_hamiltonian(&spec).unwrap();
        let (nf, p) = action_angle_reduce(&h, &spec).unwrap();
        let r = extract_truncation(&p, 9);
        let (f, _) = solve_homological(&r, &nf, 0.05, 12.0, 9).unwrap();
        assert!(f.total().is_real_symmetric(1e-9));
    }

    #[test]
    fn divisor_log_has_one_entry_per_solved_orbit() {
        let spec = desk_spec(0.05);
        let h = build_hamiltonian(&spec).unwrap();
        let (nf, p) = action_angle_reduce(&h, &spec).unwrap();
        let r = extract_truncation(&p, 9);
        let (f, _) = solve_homological(&r, &nf, 0.05, 12.0, 9).unwrap();

        // every non-routed R-term belongs to exactly one coupling orbit and
        // each orbit produced exactly one log entry
        let mut orbit_reps: BTreeSet<MultiIndex> = BTreeSet::new();
        for part in [&r.r0, &r.r1, &r.r2] {
            for (m, _) in part.terms() {
                if !is_routed_class(m) {
                    let rep = coupling_orbit(m, part.sites())
                        .into_iter()
                        .next()
                        .unwrap();
                    orbit_reps.insert(rep);
                }
            }
        }
        assert_eq!(orbit_reps.len(), f.divisor_log.len());

        // and every solved F-term lies in one of those orbits
        for (m, _) in f.total().terms() {
            let rep = coupling_orbit(m, f.f0.sites()).into_iter().next().unwrap();
            assert!(orbit_reps.contains(&rep));
        }
    }
}
