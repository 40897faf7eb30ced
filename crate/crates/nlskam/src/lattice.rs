//! Integer-lattice bookkeeping: mode sites, window membership, momenta and
//! monomial signatures.

use crate::error::{KamError, Result};
use smallvec::SmallVec;
use std::fmt;

/// A lattice point n in Z^d. The dimension d is fixed per run.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModeIndex(pub SmallVec<[i32; 4]>);

impl ModeIndex {
    pub fn new(coords: &[i32]) -> Self {
        ModeIndex(SmallVec::from_slice(coords))
    }

    pub fn zero(d: usize) -> Self {
        ModeIndex(SmallVec::from_elem(0, d))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Euclidean norm sqrt(n_1^2 + ... + n_d^2).
    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&c| (c as f64) * (c as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// |n|^2 as an exact integer.
    pub fn norm_sq(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64) * (c as i64)).sum()
    }

    /// Sup norm, used for the rectangular Galerkin window.
    pub fn norm_sup(&self) -> i32 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn add(&self, other: &ModeIndex) -> ModeIndex {
        ModeIndex(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn scaled(&self, t: i32) -> ModeIndex {
        ModeIndex(self.0.iter().map(|c| c * t).collect())
    }

    pub fn neg(&self) -> ModeIndex {
        self.scaled(-1)
    }
}

impl fmt::Debug for ModeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Membership flags of a lattice point relative to a [`SiteConfig`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Membership {
    /// Position in the tangential list S, if any.
    pub s_pos: Option<usize>,
    /// Position in the tangential list S~, if any.
    pub st_pos: Option<usize>,
    pub in_z1: bool,
    pub in_z2: bool,
    pub in_window: bool,
}

/// Tangential sites, Galerkin window and the derived normal-mode sets.
///
/// Z1 = {|n|_inf <= n_max} \ S carries the u-modes, Z2 = {|n|_inf <= n_max} \ S~
/// carries the v-modes.
#[derive(Clone, Debug)]
pub struct SiteConfig {
    d: usize,
    n_max: i32,
    s_sites: Vec<ModeIndex>,
    st_sites: Vec<ModeIndex>,
    z1: Vec<ModeIndex>,
    z2: Vec<ModeIndex>,
}

impl SiteConfig {
    pub fn new(
        d: usize,
        n_max: i32,
        s_sites: Vec<ModeIndex>,
        st_sites: Vec<ModeIndex>,
    ) -> Result<Self> {
        if d < 2 {
            return Err(KamError::Config(format!("d = {d}, need d >= 2")));
        }
        if n_max < 0 {
            return Err(KamError::Config("n_max must be nonnegative".into()));
        }
        if s_sites.len() < 2 || st_sites.len() < 2 {
            return Err(KamError::Config(format!(
                "need b >= 2 and bt >= 2 tangential sites (got {} and {})",
                s_sites.len(),
                st_sites.len()
            )));
        }
        for n in s_sites.iter().chain(st_sites.iter()) {
            if n.dim() != d {
                return Err(KamError::Config(format!(
                    "site {n:?} has dimension {} but d = {d}",
                    n.dim()
                )));
            }
            if n.norm_sup() > n_max {
                return Err(KamError::Config(format!(
                    "site {n:?} lies outside the window |n|_inf <= {n_max}"
                )));
            }
        }
        let zero = ModeIndex::zero(d);
        if !s_sites.contains(&zero) || !st_sites.contains(&zero) {
            return Err(KamError::Config(
                "the zero mode must belong to both S and S~".into(),
            ));
        }
        for (name, list) in [("S", &s_sites), ("S~", &st_sites)] {
            let mut sorted: Vec<_> = list.to_vec();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != list.len() {
                return Err(KamError::Config(format!("duplicate site in {name}")));
            }
        }
        let window = Self::window_points(d, n_max);
        let z1: Vec<ModeIndex> = window
            .iter()
            .filter(|n| !s_sites.contains(n))
            .cloned()
            .collect();
        let z2: Vec<ModeIndex> = window
            .iter()
            .filter(|n| !st_sites.contains(n))
            .cloned()
            .collect();
        Ok(SiteConfig {
            d,
            n_max,
            s_sites,
            st_sites,
            z1,
            z2,
        })
    }

    fn window_points(d: usize, n_max: i32) -> Vec<ModeIndex> {
        let mut pts = Vec::new();
        let mut cur = vec![-n_max; d];
        loop {
            pts.push(ModeIndex::new(&cur));
            let mut i = 0;
            loop {
                if i == d {
                    pts.sort();
                    return pts;
                }
                cur[i] += 1;
                if cur[i] <= n_max {
                    break;
                }
                cur[i] = -n_max;
                i += 1;
            }
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_max(&self) -> i32 {
        self.n_max
    }

    /// Number of tangential u-sites b.
    pub fn b(&self) -> usize {
        self.s_sites.len()
    }

    /// Number of tangential v-sites b~.
    pub fn bt(&self) -> usize {
        self.st_sites.len()
    }

    pub fn s_sites(&self) -> &[ModeIndex] {
        &self.s_sites
    }

    pub fn st_sites(&self) -> &[ModeIndex] {
        &self.st_sites
    }

    /// Normal u-modes, sorted.
    pub fn z1(&self) -> &[ModeIndex] {
        &self.z1
    }

    /// Normal v-modes, sorted.
    pub fn z2(&self) -> &[ModeIndex] {
        &self.z2
    }

    /// All window points, sorted.
    pub fn window(&self) -> Vec<ModeIndex> {
        Self::window_points(self.d, self.n_max)
    }

    pub fn in_window(&self, n: &ModeIndex) -> bool {
        n.dim() == self.d && n.norm_sup() <= self.n_max
    }

    pub fn classify(&self, n: &ModeIndex) -> Membership {
        let in_window = self.in_window(n);
        let s_pos = self.s_sites.iter().position(|s| s == n);
        let st_pos = self.st_sites.iter().position(|s| s == n);
        Membership {
            s_pos,
            st_pos,
            in_z1: in_window && s_pos.is_none(),
            in_z2: in_window && st_pos.is_none(),
            in_window,
        }
    }

    pub fn same_config(&self, other: &SiteConfig) -> bool {
        self.d == other.d
            && self.n_max == other.n_max
            && self.s_sites == other.s_sites
            && self.st_sites == other.st_sites
    }
}

/// Sparse exponent map over lattice modes, kept sorted by coordinates so that
/// equality and hashing are structural. Zero exponents are never stored.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ExpMap(pub SmallVec<[(ModeIndex, u32); 2]>);

impl ExpMap {
    pub fn empty() -> Self {
        ExpMap(SmallVec::new())
    }

    pub fn single(n: ModeIndex, e: u32) -> Self {
        let mut m = ExpMap::empty();
        m.set(n, e);
        m
    }

    pub fn get(&self, n: &ModeIndex) -> u32 {
        match self.0.binary_search_by(|(k, _)| k.cmp(n)) {
            Ok(i) => self.0[i].1,
            Err(_) => 0,
        }
    }

    pub fn set(&mut self, n: ModeIndex, e: u32) {
        match self.0.binary_search_by(|(k, _)| k.cmp(&n)) {
            Ok(i) => {
                if e == 0 {
                    self.0.remove(i);
                } else {
                    self.0[i].1 = e;
                }
            }
            Err(i) => {
                if e != 0 {
                    self.0.insert(i, (n, e));
                }
            }
        }
    }

    pub fn bump(&mut self, n: &ModeIndex, delta: i64) {
        let cur = self.get(n) as i64;
        let new = cur + delta;
        debug_assert!(new >= 0, "exponent underflow at {n:?}");
        self.set(n.clone(), new as u32);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ModeIndex, u32)> {
        self.0.iter().map(|(n, e)| (n, *e))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total degree |alpha| = sum of exponents.
    pub fn degree(&self) -> u32 {
        self.0.iter().map(|(_, e)| e).sum()
    }

    pub fn merged(&self, other: &ExpMap) -> ExpMap {
        let mut out = self.clone();
        for (n, e) in other.iter() {
            out.bump(n, e as i64);
        }
        out
    }
}

impl fmt::Debug for ExpMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (n, e)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{n:?}^{e}")?;
        }
        write!(f, "}}")
    }
}

/// Monomial signature (k, k~, l, l~, alpha, beta, alpha~, beta~).
///
/// Field order fixes the canonical lexicographic term ordering used by every
/// deterministic reduction in the crate.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MultiIndex {
    /// Fourier exponents on the theta angles (length b).
    pub k: SmallVec<[i32; 4]>,
    /// Fourier exponents on the phi angles (length b~).
    pub kt: SmallVec<[i32; 4]>,
    /// Taylor exponents on the actions I (length b).
    pub l: SmallVec<[u32; 4]>,
    /// Taylor exponents on the actions J (length b~).
    pub lt: SmallVec<[u32; 4]>,
    /// Exponents of u modes.
    pub alpha: ExpMap,
    /// Exponents of u-bar modes.
    pub beta: ExpMap,
    /// Exponents of v modes.
    pub alpha_t: ExpMap,
    /// Exponents of v-bar modes.
    pub beta_t: ExpMap,
}

impl MultiIndex {
    pub fn constant(b: usize, bt: usize) -> Self {
        MultiIndex {
            k: SmallVec::from_elem(0, b),
            kt: SmallVec::from_elem(0, bt),
            l: SmallVec::from_elem(0, b),
            lt: SmallVec::from_elem(0, bt),
            ..Default::default()
        }
    }

    pub fn is_constant(&self) -> bool {
        self.k.iter().all(|&x| x == 0)
            && self.kt.iter().all(|&x| x == 0)
            && self.l.iter().all(|&x| x == 0)
            && self.lt.iter().all(|&x| x == 0)
            && self.alpha.is_empty()
            && self.beta.is_empty()
            && self.alpha_t.is_empty()
            && self.beta_t.is_empty()
    }

    /// l1 norm |k| + |k~| of the Fourier part.
    pub fn k_norm(&self) -> u32 {
        self.k.iter().map(|x| x.unsigned_abs()).sum::<u32>()
            + self.kt.iter().map(|x| x.unsigned_abs()).sum::<u32>()
    }

    /// Total degree in the normal modes.
    pub fn normal_degree(&self) -> u32 {
        self.alpha.degree() + self.beta.degree() + self.alpha_t.degree() + self.beta_t.degree()
    }

    pub fn action_degree(&self) -> u32 {
        self.l.iter().sum::<u32>() + self.lt.iter().sum::<u32>()
    }

    /// Weighted degree: actions count twice, matching the s^{2(|l|+|l~|)}
    /// factor of the majorant norm.
    pub fn weighted_degree(&self) -> u32 {
        2 * self.action_degree() + self.normal_degree()
    }

    /// Lattice momentum sum(k_j i_j) + sum(k~_j t_j) + sum((alpha-beta)n)
    /// + sum((alpha~-beta~)n).
    pub fn momentum(&self, sites: &SiteConfig) -> Result<ModeIndex> {
        if self.k.len() != sites.b() || self.kt.len() != sites.bt() {
            return Err(KamError::Config(format!(
                "multi-index sized (b={}, bt={}) used with sites (b={}, bt={})",
                self.k.len(),
                self.kt.len(),
                sites.b(),
                sites.bt()
            )));
        }
        let mut acc = vec![0i64; sites.d()];
        let mut add = |n: &ModeIndex, w: i64| {
            for (a, &c) in acc.iter_mut().zip(n.0.iter()) {
                *a += w * c as i64;
            }
        };
        for (j, &kj) in self.k.iter().enumerate() {
            add(&sites.s_sites()[j], kj as i64);
        }
        for (j, &kj) in self.kt.iter().enumerate() {
            add(&sites.st_sites()[j], kj as i64);
        }
        for (n, e) in self.alpha.iter() {
            add(n, e as i64);
        }
        for (n, e) in self.beta.iter() {
            add(n, -(e as i64));
        }
        for (n, e) in self.alpha_t.iter() {
            add(n, e as i64);
        }
        for (n, e) in self.beta_t.iter() {
            add(n, -(e as i64));
        }
        Ok(ModeIndex(acc.iter().map(|&x| x as i32).collect()))
    }

    /// Signature of the complex-conjugate monomial.
    pub fn conjugate(&self) -> MultiIndex {
        MultiIndex {
            k: self.k.iter().map(|x| -x).collect(),
            kt: self.kt.iter().map(|x| -x).collect(),
            l: self.l.clone(),
            lt: self.lt.clone(),
            alpha: self.beta.clone(),
            beta: self.alpha.clone(),
            alpha_t: self.beta_t.clone(),
            beta_t: self.alpha_t.clone(),
        }
    }

    /// Exponent-wise product of monomials (angles add, powers add).
    pub fn product(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex {
            k: self.k.iter().zip(&other.k).map(|(a, b)| a + b).collect(),
            kt: self.kt.iter().zip(&other.kt).map(|(a, b)| a + b).collect(),
            l: self.l.iter().zip(&other.l).map(|(a, b)| a + b).collect(),
            lt: self.lt.iter().zip(&other.lt).map(|(a, b)| a + b).collect(),
            alpha: self.alpha.merged(&other.alpha),
            beta: self.beta.merged(&other.beta),
            alpha_t: self.alpha_t.merged(&other.alpha_t),
            beta_t: self.beta_t.merged(&other.beta_t),
        }
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[k={:?} kt={:?} l={:?} lt={:?} a={:?} b={:?} at={:?} bt={:?}]",
            &self.k[..], &self.kt[..], &self.l[..], &self.lt[..],
            self.alpha, self.beta, self.alpha_t, self.beta_t
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_sites() -> SiteConfig {
        SiteConfig::new(
            2,
            3,
            vec![ModeIndex::new(&[0, 0]), ModeIndex::new(&[1, 0])],
            vec![ModeIndex::new(&[0, 0]), ModeIndex::new(&[0, 1])],
        )
        .unwrap()
    }

    /// Independent momentum oracle: flatten every contribution into a list of
    /// (point, weight) pairs and sum in a different traversal order.
    fn momentum_oracle(m: &MultiIndex, sites: &SiteConfig) -> Vec<i64> {
        let mut entries: Vec<(Vec<i64>, i64)> = Vec::new();
        for (j, site) in sites.s_sites().iter().enumerate() {
            entries.push((
                site.0.iter().map(|&c| c as i64).collect(),
                m.k[j] as i64,
            ));
        }
        for (j, site) in sites.st_sites().iter().enumerate() {
            entries.push((
                site.0.iter().map(|&c| c as i64).collect(),
                m.kt[j] as i64,
            ));
        }
        for (map, sign) in [
            (&m.alpha, 1i64),
            (&m.beta, -1),
            (&m.alpha_t, 1),
            (&m.beta_t, -1),
        ] {
            for (n, e) in map.iter() {
                entries.push((n.0.iter().map(|&c| c as i64).collect(), sign * e as i64));
            }
        }
        entries.reverse();
        let mut acc = vec![0i64; sites.d()];
        for (pt, w) in entries {
            for (a, c) in acc.iter_mut().zip(pt) {
                *a += w * c;
            }
        }
        acc
    }

    #[test]
    fn momentum_of_balanced_pair_is_zero() {
        let sites = desk_sites();
        let n = ModeIndex::new(&[2, -1]);
        let mut m = MultiIndex::constant(2, 2);
        m.alpha.set(n.clone(), 1);
        m.beta.set(n, 1);
        assert!(m.momentum(&sites).unwrap().is_zero());
    }

    #[test]
    fn momentum_of_split_modes_is_zero() {
        // (1,0) + (0,1) - (1,1) = 0
        let sites = desk_sites();
        let mut m = MultiIndex::constant(2, 2);
        m.alpha.set(ModeIndex::new(&[0, 1]), 1);
        m.alpha_t.set(ModeIndex::new(&[1, 0]), 1);
        m.beta.set(ModeIndex::new(&[1, 1]), 1);
        assert!(m.momentum(&sites).unwrap().is_zero());
    }

    #[test]
    fn momentum_with_angle_exponent_matches_oracle() {
        // k = (0,1) pulls in site (1,0); beta at (1,0) cancels it.
        let sites = desk_sites();
        let mut m = MultiIndex::constant(2, 2);
        m.k[1] = 1;
        m.beta.set(ModeIndex::new(&[1, 0]), 1);
        let p = m.momentum(&sites).unwrap();
        assert!(p.is_zero());
        assert_eq!(momentum_oracle(&m, &sites), vec![0, 0]);
    }

    #[test]
    fn momentum_is_additive_and_odd_under_conjugation() {
        let sites = desk_sites();
        let mut m1 = MultiIndex::constant(2, 2);
        m1.k[1] = 2;
        m1.alpha.set(ModeIndex::new(&[1, 1]), 1);
        let mut m2 = MultiIndex::constant(2, 2);
        m2.kt[1] = -1;
        m2.beta_t.set(ModeIndex::new(&[2, 0]), 3);

        let p1 = m1.momentum(&sites).unwrap();
        let p2 = m2.momentum(&sites).unwrap();
        let p12 = m1.product(&m2).momentum(&sites).unwrap();
        assert_eq!(p12, p1.add(&p2));

        let pc = m1.conjugate().momentum(&sites).unwrap();
        assert_eq!(pc, p1.neg());

        for (m, oracle) in [(&m1, momentum_oracle(&m1, &sites)), (&m2, momentum_oracle(&m2, &sites))] {
            let p = m.momentum(&sites).unwrap();
            let got: Vec<i64> = p.0.iter().map(|&c| c as i64).collect();
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn classify_zero_mode_and_window() {
        let sites = desk_sites();
        let zero = ModeIndex::zero(2);
        let c = sites.classify(&zero);
        assert_eq!(c.s_pos, Some(0));
        assert_eq!(c.st_pos, Some(0));
        assert!(!c.in_z1 && !c.in_z2);

        let out = ModeIndex::new(&[4, 0]);
        assert!(!sites.classify(&out).in_window);

        let n = ModeIndex::new(&[1, 0]);
        let c = sites.classify(&n);
        assert!(c.s_pos.is_some() && c.st_pos.is_none());
        assert!(!c.in_z1 && c.in_z2);
    }

    #[test]
    fn classify_partitions_window() {
        let sites = desk_sites();
        let mut counts = [0usize; 4]; // S-only, S~-only, both, neither
        for n in sites.window() {
            let c = sites.classify(&n);
            match (c.s_pos.is_some(), c.st_pos.is_some()) {
                (true, false) => counts[0] += 1,
                (false, true) => counts[1] += 1,
                (true, true) => counts[2] += 1,
                (false, false) => counts[3] += 1,
            }
            assert_eq!(c.in_z1, c.s_pos.is_none());
            assert_eq!(c.in_z2, c.st_pos.is_none());
        }
        assert_eq!(counts, [1, 1, 1, 46]);
        assert_eq!(sites.z1().len(), 47);
        assert_eq!(sites.z2().len(), 47);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(SiteConfig::new(
            1,
            3,
            vec![ModeIndex::new(&[0]), ModeIndex::new(&[1])],
            vec![ModeIndex::new(&[0]), ModeIndex::new(&[2])],
        )
        .is_err());
        // missing zero mode
        assert!(SiteConfig::new(
            2,
            3,
            vec![ModeIndex::new(&[1, 0]), ModeIndex::new(&[0, 1])],
            vec![ModeIndex::new(&[0, 0]), ModeIndex::new(&[0, 1])],
        )
        .is_err());
        // duplicate site
        assert!(SiteConfig::new(
            2,
            3,
            vec![ModeIndex::new(&[0, 0]), ModeIndex::new(&[0, 0])],
            vec![ModeIndex::new(&[0, 0]), ModeIndex::new(&[0, 1])],
        )
        .is_err());
    }
}
