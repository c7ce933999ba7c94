//! Scaled dot-product attention: the full mechanism and the ProbSparse
//! variant that computes full softmax rows only for the top-u queries under
//! the max-mean sparsity criterion, with the remaining ("lazy") queries
//! emitting the mean of the value rows they are allowed to see.
//!
//! Sparsity scores are computed exactly over all keys: at desk scale the
//! O(L^2) score pass is affordable and keeps tests deterministic. A strided
//! key-subsampling variant exists for complexity experiments.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::layers::{GradSet, Linear, LinearCache, ParamSet};
use super::tensor::Tensor;

fn check_shapes(q: &Tensor, k: &Tensor, v: &Tensor, causal: bool) -> Result<()> {
    if q.cols != k.cols {
        return Err(Error::ShapeMismatch(format!(
            "query dim {} != key dim {}",
            q.cols, k.cols
        )));
    }
    if k.rows != v.rows {
        return Err(Error::ShapeMismatch(format!(
            "{} keys but {} value rows",
            k.rows, v.rows
        )));
    }
    if causal && q.rows != k.rows {
        return Err(Error::ShapeMismatch(
            "causal mask needs equal query/key counts".into(),
        ));
    }
    if q.rows == 0 || k.rows == 0 {
        return Err(Error::ShapeMismatch("empty attention input".into()));
    }
    Ok(())
}

/// Keys visible to query `i`.
#[inline]
fn allowed(i: usize, l_k: usize, causal: bool) -> usize {
    if causal {
        i + 1
    } else {
        l_k
    }
}

fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn scores_for_query(q: &Tensor, k: &Tensor, i: usize, n_allowed: usize) -> Vec<f64> {
    let scale = 1.0 / (q.cols as f64).sqrt();
    let q_row = q.row(i);
    (0..n_allowed)
        .map(|j| {
            let mut acc = 0.0;
            for (a, b) in q_row.iter().zip(k.row(j)) {
                acc += a * b;
            }
            acc * scale
        })
        .collect()
}

pub struct FullAttentionCache {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Softmax weights per query over its allowed keys.
    weights: Vec<Vec<f64>>,
}

pub fn full_attention_cached(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    causal: bool,
) -> Result<(Tensor, FullAttentionCache)> {
    check_shapes(q, k, v, causal)?;
    let mut out = Tensor::zeros(q.rows, v.cols);
    let mut weights = Vec::with_capacity(q.rows);
    for i in 0..q.rows {
        let n = allowed(i, k.rows, causal);
        let mut w = scores_for_query(q, k, i, n);
        softmax_inplace(&mut w);
        let out_row = out.row_mut(i);
        for (j, &wj) in w.iter().enumerate() {
            for (o, &vv) in out_row.iter_mut().zip(v.row(j)) {
                *o += wj * vv;
            }
        }
        weights.push(w);
    }
    Ok((
        out,
        FullAttentionCache {
            q: q.clone(),
            k: k.clone(),
            v: v.clone(),
            weights,
        },
    ))
}

/// `softmax(Q K^T / sqrt(d_k)) V` with an optional lower-triangular mask.
pub fn full_attention(q: &Tensor, k: &Tensor, v: &Tensor, causal: bool) -> Result<Tensor> {
    full_attention_cached(q, k, v, causal).map(|(out, _)| out)
}

pub fn full_attention_backward(
    cache: &FullAttentionCache,
    dout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut dq = Tensor::zeros(q.rows, q.cols);
    let mut dk = Tensor::zeros(k.rows, k.cols);
    let mut dv = Tensor::zeros(v.rows, v.cols);
    for i in 0..q.rows {
        let w = &cache.weights[i];
        let dout_row = dout.row(i);
        // dw_j = dout . v_j ; ds = w * (dw - sum_l w_l dw_l)
        let mut dw: Vec<f64> = w
            .iter()
            .enumerate()
            .map(|(j, _)| {
                let mut acc = 0.0;
                for (a, b) in dout_row.iter().zip(v.row(j)) {
                    acc += a * b;
                }
                acc
            })
            .collect();
        let dot: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
        for (dwj, &wj) in dw.iter_mut().zip(w) {
            *dwj = wj * (*dwj - dot);
        }
        for (j, &ds) in dw.iter().enumerate() {
            let s = ds * scale;
            for (dqv, &kv) in dq.row_mut(i).iter_mut().zip(k.row(j)) {
                *dqv += s * kv;
            }
            for (dkv, &qv) in dk.row_mut(j).iter_mut().zip(q.row(i)) {
                *dkv += s * qv;
            }
        }
        for (j, &wj) in w.iter().enumerate() {
            for (dvv, &dov) in dv.row_mut(j).iter_mut().zip(dout_row) {
                *dvv += wj * dov;
            }
        }
    }
    (dq, dk, dv)
}

/// Max-mean sparsity score per query, computed exactly over all keys:
/// `score_i = max_j(q_i.k_j / sqrt(d_k)) - mean_j(q_i.k_j / sqrt(d_k))`.
pub fn sparsity_score(q: &Tensor, k: &Tensor) -> Result<Vec<f64>> {
    if q.cols != k.cols {
        return Err(Error::ShapeMismatch(format!(
            "query dim {} != key dim {}",
            q.cols, k.cols
        )));
    }
    Ok(sparsity_scores_masked(q, k, false))
}

fn sparsity_scores_masked(q: &Tensor, k: &Tensor, causal: bool) -> Vec<f64> {
    (0..q.rows)
        .map(|i| {
            let n = allowed(i, k.rows, causal);
            let s = scores_for_query(q, k, i, n);
            let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            max - mean
        })
        .collect()
}

/// Sparsity scores estimated from a strided subsample of the keys; the
/// complexity-experiment path. Deterministic (stride sampling, no RNG).
pub fn sparsity_score_sampled(q: &Tensor, k: &Tensor, sample: usize) -> Result<Vec<f64>> {
    if q.cols != k.cols {
        return Err(Error::ShapeMismatch(format!(
            "query dim {} != key dim {}",
            q.cols, k.cols
        )));
    }
    let sample = sample.clamp(1, k.rows);
    let stride = (k.rows / sample).max(1);
    let scale = 1.0 / (q.cols as f64).sqrt();
    Ok((0..q.rows)
        .map(|i| {
            let q_row = q.row(i);
            let mut max = f64::NEG_INFINITY;
            let mut sum = 0.0;
            let mut count = 0usize;
            let mut j = 0;
            while j < k.rows && count < sample {
                let mut acc = 0.0;
                for (a, b) in q_row.iter().zip(k.row(j)) {
                    acc += a * b;
                }
                let s = acc * scale;
                max = max.max(s);
                sum += s;
                count += 1;
                j += stride;
            }
            max - sum / count as f64
        })
        .collect())
}

/// Indices of the `u` highest scores; ties broken by lower index.
pub fn top_u_indices(scores: &[f64], u: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut top: Vec<usize> = idx.into_iter().take(u).collect();
    top.sort_unstable();
    top
}

pub struct SparseAttentionCache {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    causal: bool,
    /// Active query indices, ascending.
    active: Vec<usize>,
    /// Softmax weights for each active query, over its allowed keys.
    weights: Vec<Vec<f64>>,
}

/// ProbSparse attention: the top-`u` queries by max-mean score get full
/// softmax rows; lazy queries emit the mean of the value rows they may see
/// (prefix mean under the causal mask). Returns the output and an arithmetic
/// cost counter (multiply-accumulates in score/value aggregation for active
/// rows plus the lazy mean pass).
pub fn prob_sparse_attention_counted(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    u: usize,
    causal: bool,
) -> Result<(Tensor, u64)> {
    let (out, _, ops) = prob_sparse_cached(q, k, v, u, causal)?;
    Ok((out, ops))
}

/// ProbSparse attention without the counter.
pub fn prob_sparse_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    u: usize,
    causal: bool,
) -> Result<Tensor> {
    prob_sparse_cached(q, k, v, u, causal).map(|(out, _, _)| out)
}

pub fn prob_sparse_cached(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    u: usize,
    causal: bool,
) -> Result<(Tensor, SparseAttentionCache, u64)> {
    check_shapes(q, k, v, causal)?;
    if u < 1 || u > q.rows {
        return Err(Error::InvalidArgument(format!(
            "top-u count {u} outside 1..={}",
            q.rows
        )));
    }
    let scores = sparsity_scores_masked(q, k, causal);
    let active = top_u_indices(&scores, u);
    let mut is_active = vec![false; q.rows];
    for &i in &active {
        is_active[i] = true;
    }

    let mut ops: u64 = 0;
    let mut out = Tensor::zeros(q.rows, v.cols);

    // lazy fill: running prefix mean of V rows under the causal mask, plain
    // column mean otherwise
    if causal {
        let mut prefix = vec![0.0f64; v.cols];
        for i in 0..q.rows {
            for (p, &vv) in prefix.iter_mut().zip(v.row(i)) {
                *p += vv;
            }
            ops += v.cols as u64;
            if !is_active[i] {
                let inv = 1.0 / (i + 1) as f64;
                for (o, &p) in out.row_mut(i).iter_mut().zip(&prefix) {
                    *o = p * inv;
                }
                ops += v.cols as u64;
            }
        }
    } else {
        let mut mean = vec![0.0f64; v.cols];
        for j in 0..v.rows {
            for (m, &vv) in mean.iter_mut().zip(v.row(j)) {
                *m += vv;
            }
        }
        ops += (v.rows * v.cols) as u64;
        let inv = 1.0 / v.rows as f64;
        for m in &mut mean {
            *m *= inv;
        }
        for i in 0..q.rows {
            if !is_active[i] {
                out.row_mut(i).copy_from_slice(&mean);
                ops += v.cols as u64;
            }
        }
    }

    // active rows: identical arithmetic to full_attention rows
    let mut weights = Vec::with_capacity(active.len());
    for &i in &active {
        let n = allowed(i, k.rows, causal);
        let mut w = scores_for_query(q, k, i, n);
        ops += (n * q.cols) as u64;
        softmax_inplace(&mut w);
        ops += n as u64;
        let out_row = out.row_mut(i);
        out_row.iter_mut().for_each(|o| *o = 0.0);
        for (j, &wj) in w.iter().enumerate() {
            for (o, &vv) in out_row.iter_mut().zip(v.row(j)) {
                *o += wj * vv;
            }
        }
        ops += (n * v.cols) as u64;
        weights.push(w);
    }

    Ok((
        out,
        SparseAttentionCache {
            q: q.clone(),
            k: k.clone(),
            v: v.clone(),
            causal,
            active,
            weights,
        },
        ops,
    ))
}

/// Reverse pass with the selection indices treated as constants (subgradient
/// convention): active rows backprop through their softmax; lazy rows send
/// uniform gradient to the value rows they averaged and none to Q or K.
pub fn prob_sparse_backward(cache: &SparseAttentionCache, dout: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut dq = Tensor::zeros(q.rows, q.cols);
    let mut dk = Tensor::zeros(k.rows, k.cols);
    let mut dv = Tensor::zeros(v.rows, v.cols);

    let mut is_active = vec![false; q.rows];
    for &i in &cache.active {
        is_active[i] = true;
    }

    // lazy rows
    if cache.causal {
        // dV[j] += sum over lazy i >= j of dout_i / (i+1); suffix accumulation
        let mut suffix = vec![0.0f64; v.cols];
        for i in (0..q.rows).rev() {
            if !is_active[i] {
                let inv = 1.0 / (i + 1) as f64;
                for (s, &d) in suffix.iter_mut().zip(dout.row(i)) {
                    *s += d * inv;
                }
            }
            for (dvv, &s) in dv.row_mut(i).iter_mut().zip(&suffix) {
                *dvv += s;
            }
        }
    } else {
        let mut total = vec![0.0f64; v.cols];
        for i in 0..q.rows {
            if !is_active[i] {
                for (t, &d) in total.iter_mut().zip(dout.row(i)) {
                    *t += d;
                }
            }
        }
        let inv = 1.0 / v.rows as f64;
        for j in 0..v.rows {
            for (dvv, &t) in dv.row_mut(j).iter_mut().zip(&total) {
                *dvv += t * inv;
            }
        }
    }

    // active rows: standard softmax-attention backward
    for (slot, &i) in cache.active.iter().enumerate() {
        let w = &cache.weights[slot];
        let dout_row = dout.row(i);
        let mut dw: Vec<f64> = (0..w.len())
            .map(|j| {
                let mut acc = 0.0;
                for (a, b) in dout_row.iter().zip(v.row(j)) {
                    acc += a * b;
                }
                acc
            })
            .collect();
        let dot: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
        for (dwj, &wj) in dw.iter_mut().zip(w) {
            *dwj = wj * (*dwj - dot);
        }
        for (j, &ds) in dw.iter().enumerate() {
            let s = ds * scale;
            for (dqv, &kv) in dq.row_mut(i).iter_mut().zip(k.row(j)) {
                *dqv += s * kv;
            }
            for (dkv, &qv) in dk.row_mut(j).iter_mut().zip(q.row(i)) {
                *dkv += s * qv;
            }
        }
        for (j, &wj) in w.iter().enumerate() {
            for (dvv, &dov) in dv.row_mut(j).iter_mut().zip(dout_row) {
                *dvv += wj * dov;
            }
        }
    }

    (dq, dk, dv)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttentionKind {
    /// ProbSparse self-attention with `u = max(1, ceil(c ln L_Q))`.
    ProbSparse { factor_c: f64 },
    Full,
}

enum HeadCache {
    Sparse(SparseAttentionCache),
    Full(FullAttentionCache),
}

/// Multi-head attention block: learned Q/K/V projections, per-head
/// attention, concatenation, output projection.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
    pub d_k: usize,
    pub kind: AttentionKind,
    pub causal: bool,
}

pub struct MhaCache {
    q_cache: LinearCache,
    k_cache: LinearCache,
    v_cache: LinearCache,
    o_cache: LinearCache,
    heads: Vec<HeadCache>,
}

impl MultiHeadAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        d_model: usize,
        n_heads: usize,
        kind: AttentionKind,
        causal: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            wq: Linear::new(params, &format!("{name}.wq"), d_model, d_model, rng),
            wk: Linear::new(params, &format!("{name}.wk"), d_model, d_model, rng),
            wv: Linear::new(params, &format!("{name}.wv"), d_model, d_model, rng),
            wo: Linear::new(params, &format!("{name}.wo"), d_model, d_model, rng),
            n_heads,
            d_k: d_model / n_heads,
            kind,
            causal,
        }
    }

    pub fn forward(
        &self,
        params: &ParamSet,
        x_q: &Tensor,
        x_kv: &Tensor,
    ) -> Result<(Tensor, MhaCache)> {
        let (q, q_cache) = self.wq.forward(params, x_q);
        let (k, k_cache) = self.wk.forward(params, x_kv);
        let (v, v_cache) = self.wv.forward(params, x_kv);

        let mut concat = Tensor::zeros(x_q.rows, self.n_heads * self.d_k);
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = q.col_slice(h * self.d_k, self.d_k);
            let kh = k.col_slice(h * self.d_k, self.d_k);
            let vh = v.col_slice(h * self.d_k, self.d_k);
            let (out_h, cache) = match self.kind {
                AttentionKind::ProbSparse { factor_c } => {
                    let u = top_u_count(factor_c, qh.rows);
                    let (out, cache, _) = prob_sparse_cached(&qh, &kh, &vh, u, self.causal)?;
                    (out, HeadCache::Sparse(cache))
                }
                AttentionKind::Full => {
                    let (out, cache) = full_attention_cached(&qh, &kh, &vh, self.causal)?;
                    (out, HeadCache::Full(cache))
                }
            };
            concat.col_slice_add(h * self.d_k, &out_h);
            heads.push(cache);
        }
        let (out, o_cache) = self.wo.forward(params, &concat);
        Ok((
            out,
            MhaCache {
                q_cache,
                k_cache,
                v_cache,
                o_cache,
                heads,
            },
        ))
    }

    /// Returns (d x_q, d x_kv).
    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &MhaCache,
        dout: &Tensor,
        grads: &mut GradSet,
    ) -> (Tensor, Tensor) {
        let dconcat = self.wo.backward(params, &cache.o_cache, dout, grads);
        let l_q = dconcat.rows;
        let l_k = match &cache.heads[0] {
            HeadCache::Sparse(c) => c.k.rows,
            HeadCache::Full(c) => c.k.rows,
        };
        let mut dq_full = Tensor::zeros(l_q, self.n_heads * self.d_k);
        let mut dk_full = Tensor::zeros(l_k, self.n_heads * self.d_k);
        let mut dv_full = Tensor::zeros(l_k, self.n_heads * self.d_k);
        for (h, head) in cache.heads.iter().enumerate() {
            let dout_h = dconcat.col_slice(h * self.d_k, self.d_k);
            let (dqh, dkh, dvh) = match head {
                HeadCache::Sparse(c) => prob_sparse_backward(c, &dout_h),
                HeadCache::Full(c) => full_attention_backward(c, &dout_h),
            };
            dq_full.col_slice_add(h * self.d_k, &dqh);
            dk_full.col_slice_add(h * self.d_k, &dkh);
            dv_full.col_slice_add(h * self.d_k, &dvh);
        }
        let dx_q = self.wq.backward(params, &cache.q_cache, &dq_full, grads);
        let mut dx_kv = self.wk.backward(params, &cache.k_cache, &dk_full, grads);
        dx_kv.add_assign(&self.wv.backward(params, &cache.v_cache, &dv_full, grads));
        (dx_q, dx_kv)
    }
}

/// `u = max(1, ceil(c ln L_Q))`, clamped to L_Q.
pub fn top_u_count(factor_c: f64, l_q: usize) -> usize {
    let u = (factor_c * (l_q as f64).ln()).ceil() as usize;
    u.max(1).min(l_q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_key_repeats_value_row() {
        let q = random_tensor(5, 3, 1);
        let k = random_tensor(1, 3, 2);
        let v = random_tensor(1, 4, 3);
        let out = full_attention(&q, &k, &v, false).unwrap();
        for i in 0..5 {
            assert_eq!(out.row(i), v.row(0));
        }
    }

    #[test]
    fn zero_queries_give_uniform_attention() {
        let q = Tensor::zeros(3, 4);
        let k = random_tensor(6, 4, 4);
        let v = random_tensor(6, 2, 5);
        let out = full_attention(&q, &k, &v, false).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mean: f64 = (0..6).map(|r| v.at(r, j)).sum::<f64>() / 6.0;
                assert!((out.at(i, j) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_computed_two_key_example() {
        // Q = [[1, 0]], K = [[1, 0], [0, 1]], V = I, d_k = 2.
        // The test's own oracle: softmax(1/sqrt(2), 0).
        let q = Tensor::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let k = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let v = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        let z = s.exp() + 1.0;
        let expected = [s.exp() / z, 1.0 / z];
        assert!((expected[0] - 0.669762).abs() < 1e-6);
        let out = full_attention(&q, &k, &v, false).unwrap();
        assert!((out.at(0, 0) - expected[0]).abs() < 1e-12);
        assert!((out.at(0, 1) - expected[1]).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let q = random_tensor(8, 4, 6);
        let k = random_tensor(8, 4, 7);
        let v = random_tensor(8, 4, 8);
        let (_, cache) = full_attention_cached(&q, &k, &v, true).unwrap();
        for w in &cache.weights {
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sparsity_score_brute_force() {
        let q = random_tensor(3, 5, 9);
        let k = random_tensor(4, 5, 10);
        let scores = sparsity_score(&q, &k).unwrap();
        let scale = 1.0 / (5.0f64).sqrt();
        for i in 0..3 {
            let s: Vec<f64> = (0..4)
                .map(|j| {
                    (0..5)
                        .map(|d| q.at(i, d) * k.at(j, d))
                        .sum::<f64>()
                        * scale
                })
                .collect();
            let brute =
                s.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - s.iter().sum::<f64>() / 4.0;
            assert!((scores[i] - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn sparsity_score_degenerate_cases() {
        // identical keys: max == mean
        let q = random_tensor(4, 3, 11);
        let k_row = random_tensor(1, 3, 12);
        let k = Tensor::from_fn(5, 3, |_, j| k_row.at(0, j));
        for s in sparsity_score(&q, &k).unwrap() {
            assert!(s.abs() < 1e-12);
        }
        // zero query: all scores zero
        let qz = Tensor::zeros(2, 3);
        let k = random_tensor(5, 3, 13);
        for s in sparsity_score(&qz, &k).unwrap() {
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn prob_sparse_saturates_to_full_attention() {
        for (l_q, l_k, causal) in [(6, 9, false), (7, 7, true), (1, 4, false)] {
            let q = random_tensor(l_q, 4, 20 + l_q as u64);
            let k = random_tensor(l_k, 4, 30 + l_k as u64);
            let v = random_tensor(l_k, 5, 40 + l_k as u64);
            let sparse = prob_sparse_attention(&q, &k, &v, l_q, causal).unwrap();
            let full = full_attention(&q, &k, &v, causal).unwrap();
            let max_delta = sparse
                .data
                .iter()
                .zip(&full.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_delta < 1e-12, "max delta {max_delta}");
        }
    }

    #[test]
    fn prob_sparse_lazy_rows_are_value_means() {
        // one strongly peaked query, the rest zero
        let mut q = Tensor::zeros(4, 3);
        for j in 0..3 {
            *q.at_mut(2, j) = 5.0;
        }
        let k = random_tensor(6, 3, 50);
        let v = random_tensor(6, 2, 51);
        let out = prob_sparse_attention(&q, &k, &v, 1, false).unwrap();
        let full = full_attention(&q, &k, &v, false).unwrap();
        // selected row equals the full-attention row exactly
        assert_eq!(out.row(2), full.row(2));
        // lazy rows equal mean of V
        for i in [0usize, 1, 3] {
            for j in 0..2 {
                let mean: f64 = (0..6).map(|r| v.at(r, j)).sum::<f64>() / 6.0;
                assert!((out.at(i, j) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prob_sparse_rejects_bad_u() {
        let q = random_tensor(4, 3, 60);
        let k = random_tensor(4, 3, 61);
        let v = random_tensor(4, 3, 62);
        assert!(prob_sparse_attention(&q, &k, &v, 0, false).is_err());
        assert!(prob_sparse_attention(&q, &k, &v, 5, false).is_err());
    }

    #[test]
    fn operation_count_scales_with_u_times_lk() {
        let d = 16;
        let mut counts = Vec::new();
        for l in [64usize, 512] {
            let q = random_tensor(l, d, 70 + l as u64);
            let k = random_tensor(l, d, 71 + l as u64);
            let v = random_tensor(l, d, 72 + l as u64);
            let u = top_u_count(5.0, l);
            let (_, ops) = prob_sparse_attention_counted(&q, &k, &v, u, false).unwrap();
            counts.push((u, l, ops));
        }
        let (u1, l1, ops1) = counts[0];
        let (u2, l2, ops2) = counts[1];
        let predicted = (u2 * l2) as f64 / (u1 * l1) as f64;
        let measured = ops2 as f64 / ops1 as f64;
        assert!(
            (measured - predicted).abs() / predicted < 0.2,
            "measured ratio {measured}, predicted {predicted}"
        );
    }

    #[test]
    fn top_u_breaks_ties_by_lower_index() {
        let scores = [1.0, 3.0, 3.0, 0.5];
        assert_eq!(top_u_indices(&scores, 2), vec![1, 2]);
        let scores = [2.0, 2.0, 2.0];
        assert_eq!(top_u_indices(&scores, 2), vec![0, 1]);
    }

    #[test]
    fn permuting_value_columns_permutes_output_columns() {
        let q = random_tensor(5, 4, 80);
        let k = random_tensor(6, 4, 81);
        let v = random_tensor(6, 3, 82);
        let perm = [2usize, 0, 1];
        let v_perm = Tensor::from_fn(6, 3, |i, j| v.at(i, perm[j]));
        let u = 2;
        let out = prob_sparse_attention(&q, &k, &v, u, false).unwrap();
        let out_perm = prob_sparse_attention(&q, &k, &v_perm, u, false).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                assert_eq!(out_perm.at(i, j), out.at(i, perm[j]));
            }
        }
    }

    #[test]
    fn sparse_backward_matches_finite_differences() {
        let q = random_tensor(6, 3, 90);
        let k = random_tensor(6, 3, 91);
        let v = random_tensor(6, 3, 92);
        for causal in [false, true] {
            let u = 3;
            let (out, cache, _) = prob_sparse_cached(&q, &k, &v, u, causal).unwrap();
            let mut dout = out.clone();
            dout.scale(2.0); // d/dx of sum of squares
            let (dq, dk, dv) = prob_sparse_backward(&cache, &dout);
            let loss = |q: &Tensor, k: &Tensor, v: &Tensor| -> f64 {
                let o = prob_sparse_attention(q, k, v, u, causal).unwrap();
                o.data.iter().map(|x| x * x).sum()
            };
            let h = 1e-6;
            for (tensor, grad, tag) in [(&q, &dq, "q"), (&k, &dk, "k"), (&v, &dv, "v")] {
                for idx in 0..tensor.data.len() {
                    let mut up = tensor.clone();
                    up.data[idx] += h;
                    let mut down = tensor.clone();
                    down.data[idx] -= h;
                    let (fu, fd) = match tag {
                        "q" => (loss(&up, &k, &v), loss(&down, &k, &v)),
                        "k" => (loss(&q, &up, &v), loss(&q, &down, &v)),
                        _ => (loss(&q, &k, &up), loss(&q, &k, &down)),
                    };
                    let fd_grad = (fu - fd) / (2.0 * h);
                    let got = grad.data[idx];
                    let denom = fd_grad.abs().max(got.abs()).max(1e-6);
                    assert!(
                        (fd_grad - got).abs() / denom < 1e-4,
                        "{tag}[{idx}] causal={causal}: fd {fd_grad} vs {got}"
                    );
                }
            }
        }
    }
}
