//! Line-oriented series serialization and numeric formatting shared by every
//! report writer. All floating point output carries 17 significant digits so
//! doubles round-trip exactly.

use crate::error::{KamError, Result};
use crate::lattice::{ExpMap, ModeIndex, MultiIndex, SiteConfig};
use crate::series::HamiltonianSeries;
use num_complex::Complex64;
use std::sync::Arc;

/// 17 significant digits; exact decimal round-trip for f64.
pub fn g17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn mode_str(n: &ModeIndex) -> String {
    let parts: Vec<String> = n.0.iter().map(|c| c.to_string()).collect();
    format!("({})", parts.join(";"))
}

pub fn parse_mode(s: &str) -> Result<ModeIndex> {
    let inner = s
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| KamError::Parse(format!("bad mode {s}")))?;
    let coords: std::result::Result<Vec<i32>, _> =
        inner.split(';').map(|t| t.parse::<i32>()).collect();
    Ok(ModeIndex::new(
        &coords.map_err(|e| KamError::Parse(format!("bad mode {s}: {e}")))?,
    ))
}

fn ints_str(v: &[i32]) -> String {
    v.iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn uints_str(v: &[u32]) -> String {
    v.iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn expmap_str(m: &ExpMap) -> String {
    m.iter()
        .map(|(n, e)| format!("{}^{}", mode_str(n), e))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_expmap(s: &str) -> Result<ExpMap> {
    let mut out = ExpMap::empty();
    if s.is_empty() {
        return Ok(out);
    }
    for part in s.split(',') {
        let (mode, exp) = part
            .rsplit_once('^')
            .ok_or_else(|| KamError::Parse(format!("bad exponent entry {part}")))?;
        out.set(
            parse_mode(mode)?,
            exp.parse::<u32>()
                .map_err(|e| KamError::Parse(format!("bad exponent {part}: {e}")))?,
        );
    }
    Ok(out)
}

/// One term per line: k, k~, l, l~, the four sparse exponent maps, and the
/// coefficient as decimal re,im.
pub fn series_to_text(series: &HamiltonianSeries) -> String {
    let sites = series.sites();
    let mut out = String::new();
    out.push_str("# nlskam series v1\n");
    out.push_str(&format!(
        "# d={} nmax={} b={} bt={}\n",
        sites.d(),
        sites.n_max(),
        sites.b(),
        sites.bt()
    ));
    out.push_str(&format!(
        "# S={}\n",
        sites
            .s_sites()
            .iter()
            .map(mode_str)
            .collect::<Vec<_>>()
            .join(",")
    ));
    out.push_str(&format!(
        "# St={}\n",
        sites
            .st_sites()
            .iter()
            .map(mode_str)
            .collect::<Vec<_>>()
            .join(",")
    ));
    for (m, c) in series.terms() {
        out.push_str(&format!(
            "k={} kt={} l={} lt={} a={} b={} at={} bt={} c={},{}\n",
            ints_str(&m.k),
            ints_str(&m.kt),
            uints_str(&m.l),
            uints_str(&m.lt),
            expmap_str(&m.alpha),
            expmap_str(&m.beta),
            expmap_str(&m.alpha_t),
            expmap_str(&m.beta_t),
            g17(c.re),
            g17(c.im)
        ));
    }
    out
}

pub fn series_from_text(text: &str, sites: Arc<SiteConfig>) -> Result<HamiltonianSeries> {
    let mut series = HamiltonianSeries::zero(sites.clone());
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut m = MultiIndex::constant(sites.b(), sites.bt());
        let mut coeff = Complex64::new(0.0, 0.0);
        for field in line.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| KamError::Parse(format!("line {}: bad field {field}", lineno + 1)))?;
            let parse_ints = |v: &str| -> Result<Vec<i32>> {
                if v.is_empty() {
                    return Ok(vec![]);
                }
                v.split(',')
                    .map(|t| {
                        t.parse::<i32>()
                            .map_err(|e| KamError::Parse(format!("line {}: {e}", lineno + 1)))
                    })
                    .collect()
            };
            match key {
                "k" => m.k = parse_ints(value)?.into_iter().collect(),
                "kt" => m.kt = parse_ints(value)?.into_iter().collect(),
                "l" => m.l = parse_ints(value)?.into_iter().map(|x| x as u32).collect(),
                "lt" => m.lt = parse_ints(value)?.into_iter().map(|x| x as u32).collect(),
                "a" => m.alpha = parse_expmap(value)?,
                "b" => m.beta = parse_expmap(value)?,
                "at" => m.alpha_t = parse_expmap(value)?,
                "bt" => m.beta_t = parse_expmap(value)?,
                "c" => {
                    let (re, im) = value.split_once(',').ok_or_else(|| {
                        KamError::Parse(format!("line {}: bad coefficient", lineno + 1))
                    })?;
                    coeff = Complex64::new(
                        re.parse::<f64>()
                            .map_err(|e| KamError::Parse(format!("line {}: {e}", lineno + 1)))?,
                        im.parse::<f64>()
                            .map_err(|e| KamError::Parse(format!("line {}: {e}", lineno + 1)))?,
                    );
                }
                other => {
                    return Err(KamError::Parse(format!(
                        "line {}: unknown field {other}",
                        lineno + 1
                    )))
                }
            }
        }
        if m.k.len() != sites.b() || m.kt.len() != sites.bt() {
            return Err(KamError::Parse(format!(
                "line {}: index dimensions do not match the site header",
                lineno + 1
            )));
        }
        series.accumulate(m, coeff);
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{desk_sites, random_zero_momentum_series, rng};

    #[test]
    fn series_round_trips_bit_exactly() {
        let sites = desk_sites();
        let mut r = rng(77);
        let a = random_zero_momentum_series(&sites, &mut r, 40, 4);
        let text = series_to_text(&a);
        let b = series_from_text(&text, sites).unwrap();
        assert_eq!(a.len(), b.len());
        for (m, c) in a.terms() {
            let cb = b.coeff(m);
            assert_eq!(c.re.to_bits(), cb.re.to_bits());
            assert_eq!(c.im.to_bits(), cb.im.to_bits());
        }
    }

    #[test]
    fn g17_round_trips_doubles() {
        for x in [1.0 / 3.0, 2.0_f64.sqrt(), 1e-300, -7.2e111, 0.1 + 0.2] {
            let s = g17(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
