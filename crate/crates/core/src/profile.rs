//! Fields sampled on the uniform grid `xᵢ = i/M` of `[0, 1]`.

use std::io::Write;

use nalgebra::DVector;

use crate::error::{Error, Result};

pub const MIN_GRID: usize = 8;

/// Samples of a scalar or vector field at the `M + 1` grid nodes.
///
/// Storage is node-major: component `c` of node `i` lives at
/// `data[i * arity + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridProfile {
    m: usize,
    arity: usize,
    data: Vec<f64>,
}

impl GridProfile {
    pub fn zeros(m: usize, arity: usize) -> Self {
        Self {
            m,
            arity,
            data: vec![0.0; (m + 1) * arity],
        }
    }

    pub fn from_values(m: usize, arity: usize, data: Vec<f64>) -> Result<Self> {
        if m < MIN_GRID {
            return Err(Error::Usage(format!("grid needs M >= {MIN_GRID}, got {m}")));
        }
        if arity == 0 || data.len() != (m + 1) * arity {
            return Err(Error::GridMismatch(format!(
                "expected {} values for M = {m}, arity {arity}; got {}",
                (m + 1) * arity,
                data.len()
            )));
        }
        Ok(Self { m, arity, data })
    }

    pub fn scalar(m: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_values(m, 1, values)
    }

    pub fn from_fn(m: usize, f: impl Fn(f64) -> f64) -> Self {
        let data = (0..=m).map(|i| f(i as f64 / m as f64)).collect();
        Self { m, arity: 1, data }
    }

    pub fn from_vectors(m: usize, nodes: &[DVector<f64>]) -> Result<Self> {
        let arity = nodes.first().map_or(0, |v| v.len());
        if nodes.len() != m + 1 || nodes.iter().any(|v| v.len() != arity) {
            return Err(Error::GridMismatch("node vectors have inconsistent shape".into()));
        }
        let data = nodes.iter().flat_map(|v| v.iter().copied()).collect();
        Self::from_values(m, arity, data)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn len(&self) -> usize {
        self.m + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 / self.m as f64
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.data[i * self.arity..(i + 1) * self.arity]
    }

    /// Value at node `i` of a scalar profile (first component otherwise).
    pub fn at(&self, i: usize) -> f64 {
        self.data[i * self.arity]
    }

    pub fn vector(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.node(i))
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        (0..=self.m).map(|i| self.data[i * self.arity + c]).collect()
    }

    pub fn last(&self) -> &[f64] {
        self.node(self.m)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.m != other.m || self.arity != other.arity {
            return Err(Error::GridMismatch(format!(
                "M = {} arity {} vs M = {} arity {}",
                self.m, self.arity, other.m, other.arity
            )));
        }
        Ok(())
    }

    /// Nodewise `self − other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(self.zip_with(other, |a, b| a - b))
    }

    /// Nodewise `α·self + β·other`.
    pub fn combine(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(self.zip_with(other, |a, b| alpha * a + beta * b))
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            m: self.m,
            arity: self.arity,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            m: self.m,
            arity: self.arity,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Cubic (four-point Lagrange) interpolation of every component at `x`.
    pub fn interpolate(&self, x: f64) -> DVector<f64> {
        let s = (x * self.m as f64).clamp(0.0, self.m as f64);
        let base = (s.floor() as usize).min(self.m - 1);
        let lo = base.saturating_sub(1).min(self.m - 3);
        let w = lagrange4(s - lo as f64);
        DVector::from_fn(self.arity, |c, _| {
            (0..4).map(|k| w[k] * self.data[(lo + k) * self.arity + c]).sum()
        })
    }

    /// Writes one row per node: `x`, then one column per component.
    pub fn write_csv<W: Write>(&self, out: W, names: &[&str]) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["x".to_string()];
        for c in 0..self.arity {
            header.push(names.get(c).map_or_else(|| format!("value_{c}"), |s| s.to_string()));
        }
        wtr.write_record(&header)?;
        for i in 0..=self.m {
            let mut row = vec![fmt_f64(self.x(i))];
            row.extend(self.node(i).iter().map(|v| fmt_f64(*v)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Shortest round-trip formatting, so CSV output is bit-faithful.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Lagrange weights on nodes `0, 1, 2, 3` evaluated at `s`.
pub(crate) fn lagrange4(s: f64) -> [f64; 4] {
    let (a, b, c, d) = (s, s - 1.0, s - 2.0, s - 3.0);
    [
        -b * c * d / 6.0,
        a * c * d / 2.0,
        -a * b * d / 2.0,
        a * b * c / 6.0,
    ]
}

/// Finite-difference weights (Fornberg) for the `order`-th derivative at
/// `z`, on the given abscissae.
pub fn fd_weights(z: f64, nodes: &[f64], order: usize) -> Vec<f64> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// Second-order accurate derivative of the given order (1 to 3): centred
/// stencils in the interior, one-sided stencils near the ends.
pub fn derivative(p: &GridProfile, order: usize) -> GridProfile {
    assert!((1..=3).contains(&order), "derivative order must be 1, 2 or 3");
    let m = p.m;
    let central = if order % 2 == 1 { order + 2 } else { order + 1 };
    let half = central / 2;
    let one_sided = order + 2;
    let scale = (m as f64).powi(order as i32);

    let mut out = GridProfile::zeros(m, p.arity);
    let mut cache: Vec<(usize, Vec<f64>)> = Vec::new();
    for i in 0..=m {
        let (start, width) = if i >= half && i + half <= m {
            (i - half, central)
        } else if i < half {
            (0, one_sided)
        } else {
            (m + 1 - one_sided, one_sided)
        };
        let offset = i - start;
        let key = offset * 16 + width;
        let weights = match cache.iter().find(|(k, _)| *k == key) {
            Some((_, w)) => w.clone(),
            None => {
                let nodes: Vec<f64> = (0..width).map(|k| k as f64).collect();
                let w = fd_weights(offset as f64, &nodes, order);
                cache.push((key, w.clone()));
                w
            }
        };
        for c in 0..p.arity {
            let v: f64 = weights
                .iter()
                .enumerate()
                .map(|(k, w)| w * p.data[(start + k) * p.arity + c])
                .sum();
            out.data[i * p.arity + c] = v * scale;
        }
    }
    out
}

/// First spatial derivative: second-order central differences inside,
/// second-order one-sided differences at `x = 0` and `x = 1`.
pub fn spatial_derivative(p: &GridProfile) -> GridProfile {
    derivative(p, 1)
}

/// Nodewise difference `u − û`.
pub fn estimation_error_profile(u: &GridProfile, uhat: &GridProfile) -> Result<GridProfile> {
    u.sub(uhat)
}
