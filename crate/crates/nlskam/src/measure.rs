//! Measure of the resonant parameter sets, estimated by sampling the
//! determinant conditions over the parameter box. Divisors are evaluated by
//! the same block-determinant implementation the homological solver logs.

use crate::error::{KamError, Result};
use crate::lattice::ModeIndex;
use crate::linalg::SmallMat;
use crate::model::{block_matrix, divisor, single_block, BlockSign, NormalForm};
use rand::Rng;
use rustc_hash::FxHashMap;

/// The four condition families of the resonant-set definition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResonanceClass {
    /// |<k,omega> + <k~,omega~>| below the bound.
    Frequency,
    /// First Melnikov determinant det(delta I + A_n).
    Single,
    /// Pair determinant with the minus Kronecker combination.
    PairMinus,
    /// Pair determinant with the plus Kronecker combination.
    PairPlus,
}

impl ResonanceClass {
    pub const ALL: [ResonanceClass; 4] = [
        ResonanceClass::Frequency,
        ResonanceClass::Single,
        ResonanceClass::PairMinus,
        ResonanceClass::PairPlus,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ResonanceClass::Frequency => "frequency",
            ResonanceClass::Single => "single",
            ResonanceClass::PairMinus => "pair_minus",
            ResonanceClass::PairPlus => "pair_plus",
        }
    }
}

/// One annulus of Fourier orders over one parameter box.
#[derive(Clone, Debug)]
pub struct ResonanceQuery {
    pub gamma: f64,
    pub tau: f64,
    /// Annulus k_lo < |k| + |k~| <= k_hi; when k_lo = 0 the pair and single
    /// conditions are also evaluated at k = 0 (skipping the equal-norm
    /// diagonal of the minus class).
    pub k_lo: u32,
    pub k_hi: u32,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
}

impl ResonanceQuery {
    pub fn bound(&self) -> f64 {
        self.gamma / (self.k_hi.max(1) as f64).powf(self.tau)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_lo >= self.k_hi {
            return Err(KamError::Config("need k_lo < k_hi".into()));
        }
        if self.box_lo.len() != self.box_hi.len()
            || self.box_lo.iter().zip(&self.box_hi).any(|(a, b)| a >= b)
        {
            return Err(KamError::Config("empty parameter box".into()));
        }
        Ok(())
    }
}

/// How sample points are drawn from the box.
#[derive(Clone, Debug)]
pub enum Sampling {
    /// Regular lattice, cell-centered, lexicographic order.
    Grid(Vec<usize>),
    /// Seeded pseudo-random points.
    Random { samples: usize, seed: u64 },
}

impl Sampling {
    pub fn points(&self, lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
        match self {
            Sampling::Grid(shape) => {
                assert_eq!(shape.len(), lo.len());
                let total: usize = shape.iter().product();
                let mut pts = Vec::with_capacity(total);
                let mut idx = vec![0usize; shape.len()];
                loop {
                    let p: Vec<f64> = idx
                        .iter()
                        .zip(shape)
                        .zip(lo.iter().zip(hi))
                        .map(|((i, n), (a, b))| a + (b - a) * ((*i as f64 + 0.5) / *n as f64))
                        .collect();
                    pts.push(p);
                    let mut axis = 0;
                    loop {
                        if axis == shape.len() {
                            return pts;
                        }
                        idx[axis] += 1;
                        if idx[axis] < shape[axis] {
                            break;
                        }
                        idx[axis] = 0;
                        axis += 1;
                    }
                }
            }
            Sampling::Random { samples, seed } => {
                let mut rng = crate::testing::rng(*seed);
                (0..*samples)
                    .map(|_| {
                        lo.iter()
                            .zip(hi)
                            .map(|(a, b)| rng.gen_range(*a..*b))
                            .collect()
                    })
                    .collect()
            }
        }
    }
}

/// Outcome of classifying one parameter point.
#[derive(Clone, Debug)]
pub enum Classification {
    Clear,
    Resonant {
        class: ResonanceClass,
        k: Vec<i32>,
        kt: Vec<i32>,
        n: Option<ModeIndex>,
        m: Option<ModeIndex>,
        divisor: f64,
    },
}

/// Enumerate (k, k~) with k_lo < |k|+|k~| <= k_hi (including zero when
/// k_lo = 0), lexicographic.
pub fn fourier_annulus(b: usize, bt: usize, k_lo: u32, k_hi: u32) -> Vec<(Vec<i32>, Vec<i32>)> {
    let dim = b + bt;
    let mut out = Vec::new();
    let mut cur = vec![0i32; dim];
    fn rec(
        cur: &mut Vec<i32>,
        pos: usize,
        used: u32,
        k_hi: u32,
        out: &mut Vec<Vec<i32>>,
    ) {
        if pos == cur.len() {
            out.push(cur.clone());
            return;
        }
        let left = (k_hi - used) as i32;
        for v in -left..=left {
            cur[pos] = v;
            rec(cur, pos + 1, used + v.unsigned_abs(), k_hi, out);
        }
        cur[pos] = 0;
    }
    let mut raw = Vec::new();
    rec(&mut cur, 0, 0, k_hi, &mut raw);
    raw.sort();
    for v in raw {
        let norm: u32 = v.iter().map(|x| x.unsigned_abs()).sum();
        if norm > k_lo || (k_lo == 0 && norm == 0) {
            out.push((v[..b].to_vec(), v[b..].to_vec()));
        }
    }
    out
}

fn mat_key(m: &SmallMat) -> Vec<u64> {
    let mut key = vec![m.dim() as u64];
    for i in 0..m.dim() {
        for j in 0..m.dim() {
            key.push(m[(i, j)].re.to_bits());
            key.push(m[(i, j)].im.to_bits());
        }
    }
    key
}

/// Deduplicated Melnikov blocks of one normal form: identical block contents
/// share one determinant evaluation per Fourier vector.
struct BlockTable {
    /// representative mode, block, |n|^2 (the minus-class skip needs it)
    singles: Vec<(ModeIndex, crate::model::BlockMatrix, i64)>,
    /// single-block class of each mode, in canonical mode order
    modes: Vec<(ModeIndex, usize, i64)>,
}

impl BlockTable {
    fn build(nf: &NormalForm) -> Result<Self> {
        let mut classes: FxHashMap<Vec<u64>, usize> = FxHashMap::default();
        let mut singles = Vec::new();
        let mut modes = Vec::new();
        let mut all: Vec<ModeIndex> = nf
            .normal_u
            .keys()
            .chain(nf.normal_v.keys())
            .cloned()
            .collect();
        all.sort();
        all.dedup();
        for n in all {
            let blk = single_block(nf, &n)?;
            let norm_sq = n.norm_sq();
            let mut key = mat_key(&blk);
            key.push(norm_sq as u64);
            let id = *classes.entry(key).or_insert_with(|| {
                singles.push((n.clone(), crate::model::BlockMatrix { mat: blk }, norm_sq));
                singles.len() - 1
            });
            modes.push((n, id, norm_sq));
        }
        Ok(BlockTable { singles, modes })
    }
}

const CLASS_COUNT: usize = 4;

/// Per-point minimum divisor in each class; classification is a threshold
/// query on these.
pub fn min_divisors(
    nf: &NormalForm,
    annulus: &[(Vec<i32>, Vec<i32>)],
) -> Result<[f64; CLASS_COUNT]> {
    let table = BlockTable::build(nf)?;
    // deduplicated pair blocks
    let ns = table.singles.len();
    let mut pair_minus: Vec<Option<crate::model::BlockMatrix>> = vec![None; ns * ns];
    let mut pair_plus: Vec<Option<crate::model::BlockMatrix>> = vec![None; ns * ns];
    for (i, (n, _, _)) in table.singles.iter().enumerate() {
        for (j, (m, _, _)) in table.singles.iter().enumerate() {
            pair_minus[i * ns + j] = Some(block_matrix(nf, n, Some(m), BlockSign::Minus)?);
            pair_plus[i * ns + j] = Some(block_matrix(nf, n, Some(m), BlockSign::Plus)?);
        }
    }
    // which (class_i, class_j, equal_norm) pair combinations occur; the pair
    // families take n over Z1 and m over Z2
    let mut combos: FxHashMap<(usize, usize, bool), ()> = FxHashMap::default();
    for (n, ci, ni) in &table.modes {
        if nf.freq_u(n).is_none() {
            continue;
        }
        for (m, cj, nj) in &table.modes {
            if nf.freq_v(m).is_none() {
                continue;
            }
            combos.entry((*ci, *cj, ni == nj)).or_insert(());
        }
    }
    let mut combo_list: Vec<(usize, usize, bool)> = combos.into_keys().collect();
    combo_list.sort();

    let mut mins = [f64::INFINITY; CLASS_COUNT];
    for (k, kt) in annulus {
        let knorm: u32 = k.iter().chain(kt.iter()).map(|x| x.unsigned_abs()).sum();
        if knorm != 0 {
            let d = divisor(nf, k, kt, None);
            mins[0] = mins[0].min(d);
        }
        for (_, blk, _) in &table.singles {
            let d = divisor(nf, k, kt, Some(blk));
            mins[1] = mins[1].min(d);
        }
        for &(ci, cj, equal_norm) in &combo_list {
            if !(knorm == 0 && equal_norm) {
                let d = divisor(nf, k, kt, pair_minus[ci * ns + cj].as_ref());
                mins[2] = mins[2].min(d);
            }
            let d = divisor(nf, k, kt, pair_plus[ci * ns + cj].as_ref());
            mins[3] = mins[3].min(d);
        }
    }
    Ok(mins)
}

/// First violated condition at one parameter point, in deterministic order:
/// frequency class over the annulus, then single blocks, then minus pairs,
/// then plus pairs.
pub fn is_resonant(
    point: &[f64],
    q: &ResonanceQuery,
    nf_builder: &dyn Fn(&[f64]) -> Result<NormalForm>,
) -> Result<Classification> {
    q.validate()?;
    let nf = nf_builder(point)?;
    let bound = q.bound();
    if q.gamma == 0.0 {
        return Ok(Classification::Clear);
    }
    let annulus = fourier_annulus(nf.omega.len(), nf.omega_t.len(), q.k_lo, q.k_hi);
    let mut modes: Vec<ModeIndex> = nf
        .normal_u
        .keys()
        .chain(nf.normal_v.keys())
        .cloned()
        .collect();
    modes.sort();
    modes.dedup();

    for (k, kt) in &annulus {
        let knorm: u32 = k.iter().chain(kt.iter()).map(|x| x.unsigned_abs()).sum();
        if knorm == 0 {
            continue;
        }
        let d = divisor(&nf, k, kt, None);
        if d < bound {
            return Ok(Classification::Resonant {
                class: ResonanceClass::Frequency,
                k: k.clone(),
                kt: kt.clone(),
                n: None,
                m: None,
                divisor: d,
            });
        }
    }
    for (k, kt) in &annulus {
        for n in &modes {
            let blk = block_matrix(&nf, n, None, BlockSign::Minus)?;
            let d = divisor(&nf, k, kt, Some(&blk));
            if d < bound {
                return Ok(Classification::Resonant {
                    class: ResonanceClass::Single,
                    k: k.clone(),
                    kt: kt.clone(),
                    n: Some(n.clone()),
                    m: None,
                    divisor: d,
                });
            }
        }
    }
    for (sign, class) in [
        (BlockSign::Minus, ResonanceClass::PairMinus),
        (BlockSign::Plus, ResonanceClass::PairPlus),
    ] {
        for (k, kt) in &annulus {
            let knorm: u32 = k.iter().chain(kt.iter()).map(|x| x.unsigned_abs()).sum();
            for n in &modes {
                if nf.freq_u(n).is_none() {
                    continue; // the pair families index n over Z1
                }
                for m in &modes {
                    if nf.freq_v(m).is_none() {
                        continue; // and m over Z2
                    }
                    if sign == BlockSign::Minus && knorm == 0 && n.norm_sq() == m.norm_sq() {
                        continue;
                    }
                    let blk = block_matrix(&nf, n, Some(m), sign)?;
                    let d = divisor(&nf, k, kt, Some(&blk));
                    if d < bound {
                        return Ok(Classification::Resonant {
                            class,
                            k: k.clone(),
                            kt: kt.clone(),
                            n: Some(n.clone()),
                            m: Some(m.clone()),
                            divisor: d,
                        });
                    }
                }
            }
        }
    }
    Ok(Classification::Clear)
}

/// Excluded-measure report over one sampling of the box.
#[derive(Clone, Debug)]
pub struct ResonanceReport {
    pub gamma: f64,
    pub tau: f64,
    pub k_lo: u32,
    pub k_hi: u32,
    pub sample_count: usize,
    pub seed: Option<u64>,
    /// Minimum divisor per class for every sampled point, in sample order.
    pub per_point_min: Vec<[f64; CLASS_COUNT]>,
}

impl ResonanceReport {
    pub fn bound_at(&self, gamma: f64) -> f64 {
        gamma / (self.k_hi.max(1) as f64).powf(self.tau)
    }

    /// Excluded fraction per class at an arbitrary gamma (same tau, K).
    pub fn fractions_at(&self, gamma: f64) -> ([f64; CLASS_COUNT], f64) {
        let bound = self.bound_at(gamma);
        let mut class_counts = [0usize; CLASS_COUNT];
        let mut union_count = 0usize;
        for mins in &self.per_point_min {
            let mut any = false;
            for (c, m) in mins.iter().enumerate() {
                if *m < bound {
                    class_counts[c] += 1;
                    any = true;
                }
            }
            if any {
                union_count += 1;
            }
        }
        let n = self.per_point_min.len().max(1) as f64;
        let mut fr = [0.0; CLASS_COUNT];
        for (f, c) in fr.iter_mut().zip(class_counts) {
            *f = c as f64 / n;
        }
        (fr, union_count as f64 / n)
    }

    pub fn fractions(&self) -> ([f64; CLASS_COUNT], f64) {
        self.fractions_at(self.gamma)
    }

    /// Smallest and median per-point union minima.
    pub fn min_and_median(&self) -> (f64, f64) {
        let mut mins: Vec<f64> = self
            .per_point_min
            .iter()
            .map(|m| m.iter().cloned().fold(f64::INFINITY, f64::min))
            .collect();
        mins.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let min = mins.first().cloned().unwrap_or(f64::INFINITY);
        let med = if mins.is_empty() {
            f64::INFINITY
        } else {
            mins[mins.len() / 2]
        };
        (min, med)
    }
}

/// Classify every sampled point by its per-class minimum divisor.
pub fn measure_excluded(
    q: &ResonanceQuery,
    sampling: &Sampling,
    nf_builder: &dyn Fn(&[f64]) -> Result<NormalForm>,
) -> Result<ResonanceReport> {
    q.validate()?;
    let points = sampling.points(&q.box_lo, &q.box_hi);
    if points.len() < 100 {
        return Err(KamError::Config(format!(
            "need at least 100 sample points, got {}",
            points.len()
        )));
    }
    let mut per_point_min = Vec::with_capacity(points.len());
    let mut annulus_cache: Option<Vec<(Vec<i32>, Vec<i32>)>> = None;
    for p in &points {
        let nf = nf_builder(p)?;
        let annulus = annulus_cache.get_or_insert_with(|| {
            fourier_annulus(nf.omega.len(), nf.omega_t.len(), q.k_lo, q.k_hi)
        });
        per_point_min.push(min_divisors(&nf, annulus)?);
    }
    Ok(ResonanceReport {
        gamma: q.gamma,
        tau: q.tau,
        k_lo: q.k_lo,
        k_hi: q.k_hi,
        sample_count: points.len(),
        seed: match sampling {
            Sampling::Random { seed, .. } => Some(*seed),
            Sampling::Grid(_) => None,
        },
        per_point_min,
    })
}
