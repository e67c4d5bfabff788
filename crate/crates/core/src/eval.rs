//! Error metrics, error and variance map rendering, and rank association
//! between predicted variance and actual error.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{DisplacementField, Grid};
use crate::io::{self, IoError};

/// Variance values above this are truncated before normalization.
pub const VARIANCE_CLAMP: f64 = 0.02;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions for {gts} ground-truth fields")]
    CountMismatch { preds: usize, gts: usize },
    #[error("pair {index}: prediction {pred:?} vs ground truth {gt:?}")]
    ShapeMismatch {
        index: usize,
        pred: (usize, usize),
        gt: (usize, usize),
    },
    #[error("no pairs to evaluate")]
    Empty,
    #[error("rank correlation needs at least two distinct values in each map")]
    Degenerate,
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Mean absolute error of one pair, per direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairError {
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub avg_error_u: f64,
    pub avg_error_v: f64,
    pub max_avg_error_u: f64,
    pub max_avg_error_v: f64,
    pub per_pair: Vec<PairError>,
    pub pair_count: usize,
}

fn abs_diff_sum(a: &Grid, b: &Grid) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum()
}

/// Pixel-pooled MAE per direction, plus the worst per-pair MAE.
pub fn avg_error(preds: &[DisplacementField], gts: &[DisplacementField]) -> Result<MetricsReport, EvalError> {
    if preds.len() != gts.len() {
        return Err(EvalError::CountMismatch {
            preds: preds.len(),
            gts: gts.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut su, mut sv, mut pixels) = (0.0, 0.0, 0usize);
    let mut per_pair = Vec::with_capacity(preds.len());
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        if p.dims() != g.dims() {
            return Err(EvalError::ShapeMismatch {
                index: i,
                pred: p.dims(),
                gt: g.dims(),
            });
        }
        let n = p.u.data().len();
        let (eu, ev) = (abs_diff_sum(&p.u, &g.u), abs_diff_sum(&p.v, &g.v));
        su += eu;
        sv += ev;
        pixels += n;
        let n = n.max(1) as f64;
        per_pair.push(PairError { u: eu / n, v: ev / n });
    }
    let pixels = pixels.max(1) as f64;
    Ok(MetricsReport {
        avg_error_u: su / pixels,
        avg_error_v: sv / pixels,
        max_avg_error_u: per_pair.iter().map(|e| e.u).fold(0.0, f64::max),
        max_avg_error_v: per_pair.iter().map(|e| e.v).fold(0.0, f64::max),
        pair_count: per_pair.len(),
        per_pair,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Error,
    Variance,
    Field,
}

/// A map normalized to `[0, 1]` with the raw range it was normalized from.
#[derive(Debug, Clone, PartialEq)]
pub struct MapRender {
    pub kind: MapKind,
    /// Raw values after any clamping.
    pub raw: Grid,
    pub data: Grid,
    pub min: f64,
    pub max: f64,
    pub clamp: Option<f64>,
}

impl MapRender {
    /// Min-max normalization; a constant map renders as zeros.
    pub fn from_raw(kind: MapKind, raw: Grid, clamp: Option<f64>) -> Self {
        let (min, max) = (raw.min() as f64, raw.max() as f64);
        let span = max - min;
        let data = Grid::from_fn(raw.height(), raw.width(), |r, c| {
            if span > 0.0 {
                ((raw.get(r, c) as f64 - min) / span) as f32
            } else {
                0.0
            }
        });
        Self {
            kind,
            raw,
            data,
            min,
            max,
            clamp,
        }
    }

    pub fn metadata(&self) -> Vec<(String, String)> {
        let kind = match self.kind {
            MapKind::Error => "error",
            MapKind::Variance => "variance",
            MapKind::Field => "field",
        };
        let mut out = vec![
            ("kind".to_string(), kind.to_string()),
            ("min".to_string(), format!("{:e}", self.min)),
            ("max".to_string(), format!("{:e}", self.max)),
        ];
        if let Some(c) = self.clamp {
            out.push(("clamp".to_string(), format!("{c:e}")));
        }
        out
    }

    pub fn write_png(&self, path: &Path) -> Result<(), EvalError> {
        io::write_png8(path, &self.data, &self.metadata())?;
        Ok(())
    }
}

/// Per-pixel `|pred - gt|` for each direction.
pub fn error_map(pred: &DisplacementField, gt: &DisplacementField) -> Result<(MapRender, MapRender), EvalError> {
    if pred.dims() != gt.dims() {
        return Err(EvalError::ShapeMismatch {
            index: 0,
            pred: pred.dims(),
            gt: gt.dims(),
        });
    }
    let (h, w) = pred.dims();
    let abs = |a: &Grid, b: &Grid| Grid::from_fn(h, w, |r, c| (a.get(r, c) - b.get(r, c)).abs());
    Ok((
        MapRender::from_raw(MapKind::Error, abs(&pred.u, &gt.u), None),
        MapRender::from_raw(MapKind::Error, abs(&pred.v, &gt.v), None),
    ))
}

/// Truncate at `clamp`, then normalize.
pub fn variance_map(var: &Grid, clamp: f64) -> MapRender {
    let c = clamp as f32;
    let raw = Grid::from_fn(var.height(), var.width(), |r, col| var.get(r, col).min(c));
    MapRender::from_raw(MapKind::Variance, raw, Some(clamp))
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn distinct_at_least_two(v: &[f64]) -> bool {
    v.iter().any(|&x| x != v[0])
}

/// Spearman rank correlation with tie-averaged ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::CountMismatch {
            preds: a.len(),
            gts: b.len(),
        });
    }
    if a.len() < 2 || !distinct_at_least_two(a) || !distinct_at_least_two(b) {
        return Err(EvalError::Degenerate);
    }
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub mean: f64,
    pub per_pair: Vec<f64>,
}

/// Spearman rho between flattened variance and error maps, per pair and averaged.
pub fn variance_error_association(var_maps: &[Grid], err_maps: &[Grid]) -> Result<Association, EvalError> {
    if var_maps.len() != err_maps.len() {
        return Err(EvalError::CountMismatch {
            preds: var_maps.len(),
            gts: err_maps.len(),
        });
    }
    if var_maps.is_empty() {
        return Err(EvalError::Empty);
    }
    let per_pair = var_maps
        .iter()
        .zip(err_maps)
        .map(|(v, e)| {
            let a: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
            let b: Vec<f64> = e.data().iter().map(|&x| x as f64).collect();
            spearman(&a, &b)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Association {
        mean: per_pair.iter().sum::<f64>() / per_pair.len() as f64,
        per_pair,
    })
}
