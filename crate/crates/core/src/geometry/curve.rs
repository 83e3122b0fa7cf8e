use crate::error::{Error, Result};

/// Per-layer TDNV. `values[i]` belongs to layer `first_layer + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdnvCurve {
    pub first_layer: usize,
    pub values: Vec<f64>,
}

impl TdnvCurve {
    pub fn new(first_layer: usize, values: Vec<f64>) -> Self {
        Self {
            first_layer,
            values,
        }
    }

    /// A curve whose first value is layer 0.
    pub fn from_values(values: Vec<f64>) -> Self {
        Self::new(0, values)
    }

    pub fn layers(&self) -> std::ops::Range<usize> {
        self.first_layer..self.first_layer + self.values.len()
    }

    pub fn at(&self, layer: usize) -> Option<f64> {
        layer
            .checked_sub(self.first_layer)
            .and_then(|i| self.values.get(i).copied())
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("nonempty curve")
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Layer attaining the minimum (lowest layer on ties).
    pub fn argmin(&self) -> usize {
        self.first_layer + optimal_layer(&self.values)
    }

    pub fn has_interior_minimum(&self) -> bool {
        let i = optimal_layer(&self.values);
        i > 0 && i + 1 < self.values.len()
    }
}

/// Index of the smallest value, lowest index on ties.
pub fn optimal_layer(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// `((first − min)/first, (last − min)/last)`.
pub fn compression_expression_ratios(curve: &TdnvCurve) -> Result<(f64, f64)> {
    if curve.values.is_empty() {
        return Err(Error::Invalid("empty curve".into()));
    }
    let (first, last, min) = (curve.first(), curve.last(), curve.min());
    if first <= 0.0 || last <= 0.0 {
        return Err(Error::Degenerate("curve endpoint is zero".into()));
    }
    Ok(((first - min) / first, (last - min) / last))
}

/// TDNV per (layer, separator index `1..=K+1`).
#[derive(Debug, Clone, PartialEq)]
pub struct GridTdnv {
    pub first_layer: usize,
    /// `values[layer − first_layer][sep − 1]`.
    pub values: Vec<Vec<f64>>,
}

impl GridTdnv {
    pub fn separators(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Column for separator `sep` (1-based) as a curve over layers.
    pub fn column(&self, sep: usize) -> Result<TdnvCurve> {
        if sep == 0 || sep > self.separators() {
            return Err(Error::Index {
                what: "grid separator",
                index: sep,
                limit: self.separators() + 1,
            });
        }
        Ok(TdnvCurve::new(
            self.first_layer,
            self.values.iter().map(|row| row[sep - 1]).collect(),
        ))
    }

    pub fn row(&self, layer: usize) -> Option<&[f64]> {
        layer
            .checked_sub(self.first_layer)
            .and_then(|i| self.values.get(i))
            .map(Vec::as_slice)
    }
}
