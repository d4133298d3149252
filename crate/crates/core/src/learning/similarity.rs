use crate::encoder::l2_normalize;
use crate::error::{Error, Result};

/// Unit-normalized class embeddings, `n × d` row-major per branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddingBank {
    pub n: usize,
    pub d: usize,
    pub global: Vec<f64>,
    pub local: Vec<f64>,
    /// Categories whose raw embedding had (near) zero norm in either branch.
    pub degenerate: Vec<bool>,
}

impl ClassEmbeddingBank {
    /// Normalizes raw per-category rows.
    pub fn from_raw(n: usize, d: usize, global: &[f64], local: &[f64]) -> Self {
        let mut bank = Self {
            n,
            d,
            global: Vec::with_capacity(n * d),
            local: Vec::with_capacity(n * d),
            degenerate: vec![false; n],
        };
        for i in 0..n {
            let (g, dg) = l2_normalize(&global[i * d..(i + 1) * d]);
            let (l, dl) = l2_normalize(&local[i * d..(i + 1) * d]);
            if dg || dl {
                log::warn!("class embedding {i} is degenerate");
            }
            bank.degenerate[i] = dg || dl;
            bank.global.extend(g);
            bank.local.extend(l);
        }
        bank
    }

    pub fn global_row(&self, i: usize) -> &[f64] {
        &self.global[i * self.d..(i + 1) * self.d]
    }

    pub fn local_row(&self, i: usize) -> &[f64] {
        &self.local[i * self.d..(i + 1) * self.d]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `S_i = <normalize(text_global), G_i>`.
pub fn global_similarity(text_global: &[f64], bank: &ClassEmbeddingBank) -> Result<Vec<f64>> {
    let (t, degenerate) = l2_normalize(text_global);
    if degenerate {
        return Err(Error::DegenerateFeature("global text feature".into()));
    }
    Ok((0..bank.n).map(|i| dot(&t, bank.global_row(i))).collect())
}

/// Softmax weights of `scores / tau`.
pub fn softmax_weights(scores: &[f64], tau: f64) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| ((s - max) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// `Σ_j softmax(s/tau)_j · s_j`.
pub fn softmax_pool(scores: &[f64], tau: f64) -> f64 {
    dot(&softmax_weights(scores, tau), scores)
}

/// Unit-normalizes each `d`-row, dropping degenerate rows with a warning.
pub fn normalized_rows(rows: &[f64], d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len());
    for (j, row) in rows.chunks_exact(d).enumerate() {
        let (r, degenerate) = l2_normalize(row);
        if degenerate {
            log::warn!("dense feature row {j} is degenerate, skipped");
        } else {
            out.extend(r);
        }
    }
    out
}

/// Scores `s_ij = <L_i, normalize(T_j)>` for unit rows `tokens`.
pub fn local_scores(tokens: &[f64], bank: &ClassEmbeddingBank) -> Vec<f64> {
    let n_r = tokens.len() / bank.d;
    let mut s = Vec::with_capacity(bank.n * n_r);
    for i in 0..bank.n {
        let l = bank.local_row(i);
        s.extend(tokens.chunks_exact(bank.d).map(|t| dot(l, t)));
    }
    s
}

/// `S_i = Σ_j softmax_j(s_i· / tau) s_ij` over the normalized token rows.
pub fn local_similarity(tokens: &[f64], bank: &ClassEmbeddingBank, tau: f64) -> Result<Vec<f64>> {
    let rows = normalized_rows(tokens, bank.d);
    if rows.is_empty() {
        return Err(Error::DegenerateFeature("every dense feature row".into()));
    }
    let n_r = rows.len() / bank.d;
    let s = local_scores(&rows, bank);
    Ok(s.chunks_exact(n_r).map(|row| softmax_pool(row, tau)).collect())
}

/// `D = E Eᵀ` for `n × d` rows.
pub fn similarity_matrix(rows: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = dot(&rows[i * d..(i + 1) * d], &rows[j * d..(j + 1) * d]);
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    out
}
