//! Principal component subspace model of one window of observations.
//!
//! A window is standardized per column, decomposed through the eigenvectors
//! of its sample correlation matrix, and split into a normal subspace (the
//! `p` leading components) and an anomalous subspace (the rest). Residuals
//! are the part of an observation that lies in the anomalous subspace.

use nalgebra::{DMatrix, DMatrixView, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Columns whose in-window standard deviation falls below this are
/// treated as constant.
pub const DEGENERATE_STD: f64 = 1e-12;

/// Default normal-subspace size.
pub const DEFAULT_COMPONENTS: usize = 12;

#[derive(Debug, Clone)]
pub struct StandardizedWindow {
    /// `w × retained.len()` standardized values.
    pub values: DMatrix<f64>,
    /// Per-column means over all input columns.
    pub means: Vec<f64>,
    /// Per-column sample standard deviations over all input columns.
    pub scales: Vec<f64>,
    pub retained: Vec<usize>,
    pub dropped_degenerate: Vec<usize>,
}

impl StandardizedWindow {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    /// Number of input columns.
    pub fn ncols_input(&self) -> usize {
        self.means.len()
    }

    /// Standardizes a raw observation with this window's statistics,
    /// keeping only the retained columns.
    pub fn standardize_row(&self, raw: &[f64]) -> Result<DVector<f64>> {
        if raw.len() != self.means.len() {
            return Err(Error::Shape {
                expected: self.means.len(),
                actual: raw.len(),
            });
        }
        Ok(DVector::from_iterator(
            self.retained.len(),
            self.retained.iter().map(|&j| (raw[j] - self.means[j]) / self.scales[j]),
        ))
    }
}

/// Centers each column and scales it to unit sample variance (divisor
/// `w - 1`). Constant columns are set aside.
pub fn standardize(window: DMatrixView<'_, f64>) -> Result<StandardizedWindow> {
    let (w, n) = window.shape();
    if w < 2 {
        return Err(Error::parameter(format!("window needs at least 2 rows, got {w}")));
    }
    let mut means = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    let mut retained = Vec::new();
    let mut dropped_degenerate = Vec::new();
    for (j, col) in window.column_iter().enumerate() {
        let mean = col.sum() / w as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w - 1) as f64;
        let sd = var.sqrt();
        means.push(mean);
        scales.push(sd);
        if sd < DEGENERATE_STD {
            dropped_degenerate.push(j);
        } else {
            retained.push(j);
        }
    }
    if retained.len() < 2 {
        return Err(Error::DegenerateWindow {
            retained: retained.len(),
        });
    }
    let values = DMatrix::from_fn(w, retained.len(), |i, k| {
        let j = retained[k];
        (window[(i, j)] - means[j]) / scales[j]
    });
    Ok(StandardizedWindow {
        values,
        means,
        scales,
        retained,
        dropped_degenerate,
    })
}

/// How many leading components form the normal subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentPolicy {
    Fixed(usize),
    /// Keep components whose correlation eigenvalue exceeds 1.
    Kaiser,
}

impl Default for ComponentPolicy {
    fn default() -> Self {
        ComponentPolicy::Fixed(DEFAULT_COMPONENTS)
    }
}

impl std::str::FromStr for ComponentPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("kaiser") {
            return Ok(ComponentPolicy::Kaiser);
        }
        s.parse::<usize>()
            .map(ComponentPolicy::Fixed)
            .map_err(|_| format!("expected a component count or `kaiser`, got {s:?}"))
    }
}

impl serde::Serialize for ComponentPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl std::fmt::Display for ComponentPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ComponentPolicy::Fixed(k) => write!(f, "{k}"),
            ComponentPolicy::Kaiser => f.write_str("kaiser"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PrincipalBasis {
    /// `q × q`; column `i` is the unit vector of component `i`.
    pub components: DMatrix<f64>,
    /// Non-increasing, clamped at zero.
    pub eigenvalues: Vec<f64>,
    selected: Option<usize>,
    clamped: bool,
}

impl PrincipalBasis {
    /// Number of components (equal to the retained dimensionality).
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Selected normal-subspace size, once `select_components` has run.
    pub fn p(&self) -> Option<usize> {
        self.selected
    }

    /// Whether the requested component count had to be reduced.
    pub fn was_clamped(&self) -> bool {
        self.clamped
    }

    pub fn component(&self, i: usize) -> DVector<f64> {
        self.components.column(i).into_owned()
    }

    /// Removes the projection onto the first `count` components.
    pub fn residual_with_count(&self, row: &DVector<f64>, count: usize) -> Result<DVector<f64>> {
        let q = self.len();
        if row.len() != q {
            return Err(Error::Shape {
                expected: q,
                actual: row.len(),
            });
        }
        if count > q {
            return Err(Error::parameter(format!("cannot project onto {count} of {q} components")));
        }
        let normal = self.components.columns(0, count);
        let scores = normal.tr_mul(row);
        Ok(row - normal * scores)
    }
}

/// Eigendecomposition of the sample correlation structure of a
/// standardized window.
pub fn fit_components(std: &StandardizedWindow) -> Result<PrincipalBasis> {
    let (w, q) = std.values.shape();
    if w <= q {
        return Err(Error::Feasibility { window: w, countries: q });
    }
    let corr = std.values.tr_mul(&std.values) / (w - 1) as f64;
    let eig = SymmetricEigen::try_new(corr, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric(format!("symmetric eigensolver did not converge on a {q}×{q} correlation matrix")))?;

    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = DMatrix::zeros(q, q);
    let mut eigenvalues = Vec::with_capacity(q);
    for (dst, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        if let Some(lead) = v.iter().find(|x| x.abs() > 1e-12) {
            if *lead < 0.0 {
                v.neg_mut();
            }
        }
        components.set_column(dst, &v);
        eigenvalues.push(eig.eigenvalues[src].max(0.0));
    }
    Ok(PrincipalBasis {
        components,
        eigenvalues,
        selected: None,
        clamped: false,
    })
}

/// Sets the normal-subspace size. The result is clamped to `q - 1` so the
/// anomalous subspace is never empty.
pub fn select_components(mut basis: PrincipalBasis, policy: ComponentPolicy) -> Result<PrincipalBasis> {
    let q = basis.len();
    if q < 2 {
        return Err(Error::parameter(format!("need at least 2 components, got {q}")));
    }
    let wanted = match policy {
        ComponentPolicy::Fixed(0) => {
            return Err(Error::parameter("fixed component count must be positive"));
        }
        ComponentPolicy::Fixed(k) => k,
        ComponentPolicy::Kaiser => basis.eigenvalues.iter().filter(|&&l| l > 1.0).count().max(1),
    };
    let p = wanted.min(q - 1);
    basis.clamped = p < wanted;
    if basis.clamped {
        log::warn!("requested {wanted} components but only {q} are available; using {p}");
    }
    basis.selected = Some(p);
    Ok(basis)
}

/// Component of a standardized observation orthogonal to the normal
/// subspace.
pub fn residual_vector(basis: &PrincipalBasis, std_row: &DVector<f64>) -> Result<DVector<f64>> {
    let p = basis
        .p()
        .ok_or_else(|| Error::parameter("normal subspace size has not been selected"))?;
    basis.residual_with_count(std_row, p)
}
