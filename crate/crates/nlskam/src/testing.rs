//! Seeded generators for random momentum-conserving monomials and series.
//! Used by the test suites and by the self-check subcommands.

use crate::lattice::{ModeIndex, MultiIndex, SiteConfig};
use crate::series::HamiltonianSeries;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use std::sync::Arc;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Random monomial with small exponents; momentum is then repaired by adding
/// one compensating conjugate mode factor, so the result lies in the
/// zero-momentum class. Returns None when the compensating mode falls outside
/// the window.
pub fn random_zero_momentum_monomial(
    sites: &SiteConfig,
    rng: &mut ChaCha20Rng,
    max_degree: u32,
) -> Option<MultiIndex> {
    let mut m = MultiIndex::constant(sites.b(), sites.bt());
    for j in 0..sites.b() {
        m.k[j] = rng.gen_range(-1..=1);
        if rng.gen_bool(0.3) {
            m.l[j] = rng.gen_range(0..=1);
        }
    }
    for j in 0..sites.bt() {
        m.kt[j] = rng.gen_range(-1..=1);
        if rng.gen_bool(0.3) {
            m.lt[j] = rng.gen_range(0..=1);
        }
    }
    let budget = max_degree.saturating_sub(1).max(1);
    for _ in 0..rng.gen_range(0..=budget) {
        let pick = rng.gen_range(0..4);
        let (pool, map) = match pick {
            0 => (sites.z1(), &mut m.alpha),
            1 => (sites.z1(), &mut m.beta),
            2 => (sites.z2(), &mut m.alpha_t),
            _ => (sites.z2(), &mut m.beta_t),
        };
        if pool.is_empty() {
            continue;
        }
        let n = pool[rng.gen_range(0..pool.len())].clone();
        map.bump(&n, 1);
    }
    let p = m.momentum(sites).expect("dimensions match");
    if p.is_zero() {
        return Some(m);
    }
    if !sites.in_window(&p) {
        return None;
    }
    // A ubar factor at mode p contributes -p; fall back to the v side when
    // p collides with a tangential site.
    if sites.classify(&p).in_z1 {
        m.beta.bump(&p, 1);
    } else if sites.classify(&p).in_z2 {
        m.beta_t.bump(&p, 1);
    } else {
        return None;
    }
    debug_assert!(m.momentum(sites).unwrap().is_zero());
    Some(m)
}

/// Random zero-momentum series with `len` terms and unit-scale coefficients.
pub fn random_zero_momentum_series(
    sites: &Arc<SiteConfig>,
    rng: &mut ChaCha20Rng,
    len: usize,
    max_degree: u32,
) -> HamiltonianSeries {
    let mut out = HamiltonianSeries::zero(sites.clone());
    let mut placed = 0;
    while placed < len {
        if let Some(m) = random_zero_momentum_monomial(sites, rng, max_degree) {
            let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if c.norm() > 1e-3 {
                out.accumulate(m, c);
                placed += 1;
            }
        }
    }
    out
}

/// The desk-scale reference site configuration used across the test suites.
pub fn desk_sites() -> Arc<SiteConfig> {
    Arc::new(
        SiteConfig::new(
            2,
            3,
            vec![ModeIndex::new(&[0, 0]), ModeIndex::new(&[1, 0])],
            vec![ModeIndex::new(&[0, 0]), ModeIndex::new(&[0, 1])],
        )
        .unwrap(),
    )
}
