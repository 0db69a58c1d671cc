//! Random capacity curves from a truncated Haar system.
//!
//! A unit-scale curve on `[0, 1]` is `base_level + Σ c_{n,k} ψ̃_{n,k}(x)` over
//! every wavelet of level `n ≤ m`; it is read at the midpoints of `T` equal
//! weeks, multiplied by the optional demand anchor and clamped at zero.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::idp::CapacityPath;

/// `1` on `[0, ½)`, `−1` on `[½, 1)`, `0` elsewhere.
pub fn mother_wavelet(x: f64) -> f64 {
    if (0.0..0.5).contains(&x) {
        1.0
    } else if (0.5..1.0).contains(&x) {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HaarIndex {
    n: u32,
    k: u64,
}

impl HaarIndex {
    pub fn new(n: u32, k: u64) -> Result<Self> {
        if n >= 63 || k >= (1u64 << n) {
            return Err(Error::Domain(format!("invalid Haar index (n={n}, k={k})")));
        }
        Ok(HaarIndex { n, k })
    }

    pub fn level(self) -> u32 {
        self.n
    }

    pub fn shift(self) -> u64 {
        self.k
    }

    /// Support `[k/2^n, (k+1)/2^n)`.
    pub fn support(self) -> (f64, f64) {
        let w = (self.n as f64).exp2();
        (self.k as f64 / w, (self.k + 1) as f64 / w)
    }
}

/// Unnormalized wavelet `ψ(2^n x − k)`.
pub fn modified_haar(idx: HaarIndex, x: f64) -> f64 {
    mother_wavelet((idx.n as f64).exp2() * x - idx.k as f64)
}

/// Normalized wavelet `2^{n/2} ψ(2^n x − k)`.
pub fn haar(idx: HaarIndex, x: f64) -> f64 {
    (idx.n as f64 / 2.0).exp2() * modified_haar(idx, x)
}

/// All wavelets of level `0..=m`, ordered by level then shift.
pub fn basis(order: u32) -> Vec<HaarIndex> {
    (0..=order)
        .flat_map(|n| (0..(1u64 << n)).map(move |k| HaarIndex { n, k }))
        .collect()
}

/// `2^{m+1} − 1`, the number of wavelets up to level `m`.
pub fn basis_size(order: u32) -> usize {
    (1usize << (order + 1)) - 1
}

/// `T` midpoints `(j − ½)/T`, `j = 1..T`.
pub fn midpoint_grid(points: usize) -> Vec<f64> {
    (0..points)
        .map(|j| (j as f64 + 0.5) / points as f64)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub order: u32,
    /// `ν`; coefficient variance is `ν/(2^{m+1} − 1)`.
    pub scale: f64,
    pub horizon: usize,
    #[serde(default)]
    pub base_level: f64,
    #[serde(default)]
    pub demand_anchor: Option<f64>,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order > 20 {
            return Err(Error::Config(format!("Haar order {} is too large", self.order)));
        }
        if !(self.scale.is_finite() && self.scale >= 0.0) {
            return Err(Error::Config(format!("scale must be nonnegative, got {}", self.scale)));
        }
        if !(self.base_level.is_finite() && self.base_level >= 0.0) {
            return Err(Error::Config("base level must be nonnegative".into()));
        }
        if let Some(a) = self.demand_anchor {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::Config("demand anchor must be nonnegative".into()));
            }
        }
        if self.horizon == 0 {
            return Err(Error::Config("path horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn coefficient_variance(&self) -> f64 {
        self.scale / basis_size(self.order) as f64
    }
}

/// One i.i.d. coefficient per element of the order-`m` basis.
pub fn sample_coefficients(cfg: &SamplerConfig, rng: &mut impl Rng) -> Result<Vec<f64>> {
    cfg.validate()?;
    let normal = Normal::new(0.0, cfg.coefficient_variance().sqrt())
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok((0..basis_size(cfg.order)).map(|_| normal.sample(rng)).collect())
}

/// `base + Σ c ψ̃` evaluated at each `x`.
pub fn expand(order: u32, base_level: f64, coefficients: &[f64], xs: &[f64]) -> Vec<f64> {
    let idx = basis(order);
    assert_eq!(idx.len(), coefficients.len(), "one coefficient per wavelet");
    xs.iter()
        .map(|&x| {
            base_level
                + idx
                    .iter()
                    .zip(coefficients)
                    .map(|(&i, c)| c * modified_haar(i, x))
                    .sum::<f64>()
        })
        .collect()
}

/// Anchored, clamped curve from given coefficients.
pub fn path_from_coefficients(cfg: &SamplerConfig, coefficients: &[f64]) -> Vec<f64> {
    let anchor = cfg.demand_anchor.unwrap_or(1.0);
    expand(cfg.order, cfg.base_level, coefficients, &midpoint_grid(cfg.horizon))
        .into_iter()
        .map(|v| (v * anchor).max(0.0))
        .collect()
}

pub fn sample_path(cfg: &SamplerConfig, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let c = sample_coefficients(cfg, rng)?;
    Ok(path_from_coefficients(cfg, &c))
}

/// Storage curve from `storage`, inbound curve from `inbound` or unlimited.
pub fn sample_capacity_path(
    storage: &SamplerConfig,
    inbound: Option<&SamplerConfig>,
    rng: &mut impl Rng,
) -> Result<CapacityPath> {
    let s = sample_path(storage, rng)?;
    let i = match inbound {
        Some(cfg) => {
            if cfg.horizon != storage.horizon {
                return Err(Error::HorizonMismatch {
                    expected: storage.horizon,
                    found: cfg.horizon,
                });
            }
            sample_path(cfg, rng)?
        }
        None => vec![f64::INFINITY; storage.horizon],
    };
    CapacityPath::new(s, i)
}

pub fn total_variation(path: &[f64]) -> f64 {
    path.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Coefficients of `values` (sampled on the `2^{m+1}`-point midpoint grid)
/// against the constant function and the normalized wavelets up to level `m`,
/// using the grid-average inner product.
pub fn project(order: u32, values: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = 1usize << (order + 1);
    if values.len() != n {
        return Err(Error::LengthMismatch {
            what: "dyadic grid values",
            expected: n,
            found: values.len(),
        });
    }
    let xs = midpoint_grid(n);
    let constant = values.iter().sum::<f64>() / n as f64;
    let coeffs = basis(order)
        .into_iter()
        .map(|i| {
            values
                .iter()
                .zip(&xs)
                .map(|(v, &x)| v * haar(i, x))
                .sum::<f64>()
                / n as f64
        })
        .collect();
    Ok((constant, coeffs))
}

/// Inverse of [`project`] on the same grid.
pub fn reconstruct(order: u32, constant: f64, coeffs: &[f64]) -> Vec<f64> {
    let idx = basis(order);
    midpoint_grid(1usize << (order + 1))
        .into_iter()
        .map(|x| constant + idx.iter().zip(coeffs).map(|(&i, c)| c * haar(i, x)).sum::<f64>())
        .collect()
}

fn fmt_limit(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        v.to_string()
    }
}

pub fn write_paths_csv<W: Write>(paths: &[CapacityPath], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path_id", "week", "storage_limit", "inbound_limit"])?;
    for (id, p) in paths.iter().enumerate() {
        for t in 0..p.len() {
            w.write_record(&[
                id.to_string(),
                t.to_string(),
                fmt_limit(p.storage[t]),
                fmt_limit(p.inbound[t]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct PathRecord {
    path_id: usize,
    week: usize,
    storage_limit: String,
    inbound_limit: String,
}

fn parse_limit(s: &str, line: u64) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Data(format!("line {line}: invalid limit {s:?}")))
}

pub fn read_paths_csv<R: Read>(input: R) -> Result<Vec<CapacityPath>> {
    let mut r = csv::Reader::from_reader(input);
    let mut paths: Vec<CapacityPath> = Vec::new();
    for (line, rec) in r.deserialize::<PathRecord>().enumerate() {
        let line = line as u64 + 2;
        let rec = rec.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        if rec.path_id > paths.len() || (rec.path_id + 1 < paths.len()) {
            return Err(Error::Data(format!("line {line}: path ids must be contiguous")));
        }
        if rec.path_id == paths.len() {
            paths.push(CapacityPath {
                storage: Vec::new(),
                inbound: Vec::new(),
            });
        }
        let p = paths.last_mut().expect("pushed above");
        if rec.week != p.len() {
            return Err(Error::Data(format!(
                "line {line}: expected week {} of path {}",
                p.len(),
                rec.path_id
            )));
        }
        p.storage.push(parse_limit(&rec.storage_limit, line)?);
        p.inbound.push(parse_limit(&rec.inbound_limit, line)?);
    }
    paths
        .into_iter()
        .map(|p| CapacityPath::new(p.storage, p.inbound).map_err(|e| Error::Data(e.to_string())))
        .collect()
}
