//! Flat row-major matrices and the few numeric kernels the toy engine needs.
//! Everything is double precision and allocation-predictable so streaming and
//! monolithic passes produce bit-identical arithmetic.

use rand::Rng;

const RMS_EPS: f64 = 1e-6;

/// Row-major `f64` matrix; rows can be appended incrementally.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(cols > 0);
        Self { cols, data: vec![0.0; rows * cols] }
    }

    /// Empty matrix ready to collect rows of width `cols`.
    pub fn with_cols(cols: usize) -> Self {
        assert!(cols > 0);
        Self { cols, data: Vec::new() }
    }

    pub(crate) fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
        Self { cols, data }
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Largest relative element difference between two equally-shaped matrices,
/// with |x| <= 1 treated as absolute so near-zero entries do not blow up.
pub fn max_rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()), "shape mismatch");
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// `out = W x` for a row-major `W` of shape (out_dim, in_dim).
pub(crate) fn matvec(w: &Matrix, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows(), out.len());
    for (o, slot) in out.iter_mut().enumerate() {
        let row = w.row(o);
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *slot = acc;
    }
}

/// Root-mean-square normalization (unit gain).
pub(crate) fn rms_norm(x: &[f64], out: &mut [f64]) {
    let ms: f64 = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    for (o, v) in out.iter_mut().zip(x) {
        *o = v * inv;
    }
}

pub(crate) fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax_lowest(xs: &[f64]) -> usize {
    assert!(!xs.is_empty());
    let mut best = 0usize;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Softmax attention for one roped query row over an explicit admissible key
/// list, all heads at once. `keys` must be in ascending sequence order — the
/// accumulation order is part of the contract that makes the streaming and
/// monolithic paths agree exactly.
pub(crate) fn attend(
    q_row: &[f64],
    keys: &[(&[f64], &[f64])],
    n_heads: usize,
    head_dim: usize,
    out: &mut [f64],
    scores: &mut Vec<f64>,
) {
    assert!(!keys.is_empty(), "attention row with no admissible keys");
    let scale = 1.0 / (head_dim as f64).sqrt();
    out.iter_mut().for_each(|v| *v = 0.0);
    for h in 0..n_heads {
        let s = h * head_dim;
        let e = s + head_dim;
        scores.clear();
        let mut max_score = f64::NEG_INFINITY;
        for (k, _) in keys {
            let mut dot = 0.0;
            for d in s..e {
                dot += q_row[d] * k[d];
            }
            let sc = dot * scale;
            scores.push(sc);
            if sc > max_score {
                max_score = sc;
            }
        }
        let mut denom = 0.0;
        for sc in scores.iter_mut() {
            *sc = (*sc - max_score).exp();
            denom += *sc;
        }
        for (j, (_, v)) in keys.iter().enumerate() {
            let wgt = scores[j] / denom;
            for d in s..e {
                out[d] += wgt * v[d];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_toward_the_lowest_index() {
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_lowest(&[5.0]), 0);
        assert_eq!(argmax_lowest(&[2.0, 2.0, 2.0]), 0);
    }

    #[test]
    fn matrix_rows_accumulate() {
        let mut m = Matrix::with_cols(2);
        m.push_row(&[1.0, 2.0]);
        m.push_row(&[3.0, 4.0]);
        assert_eq!(m.rows(), 2);
        assert_eq!(m.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn attention_over_a_single_self_key_is_identity_on_values() {
        let q = vec![0.5, -0.5];
        let k = vec![1.0, 0.0];
        let v = vec![7.0, -3.0];
        let mut out = vec![0.0; 2];
        let mut scratch = Vec::new();
        attend(&q, &[(&k, &v)], 1, 2, &mut out, &mut scratch);
        assert_eq!(out, v, "softmax over one key must weight it 1.0 exactly");
    }

    #[test]
    fn rel_diff_uses_absolute_scale_near_zero() {
        let mut a = Matrix::with_cols(2);
        a.push_row(&[1e-9, 100.0]);
        let mut b = Matrix::with_cols(2);
        b.push_row(&[0.0, 101.0]);
        let d = max_rel_diff(&a, &b);
        assert!(d > 0.009 && d < 0.011, "dominated by the 1% relative error, got {d}");
    }
}
