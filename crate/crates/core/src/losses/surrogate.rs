use crate::metrics::ScoredRanking;

use super::heaviside::{heaviside_lower, heaviside_upper, SmoothHeavisideParams};
use super::{LossError, LossGradients, Result};

/// Smooth upper bound of `1 − H-AP` for one query, with `∂/∂s_j` for every
/// candidate.
pub fn hap_surrogate(r: &ScoredRanking, p: &SmoothHeavisideParams) -> Result<LossGradients> {
    hap_surrogate_parts(&r.scores, &r.levels, &r.relevance, p)
}

/// [`hap_surrogate`] on bare parallel arrays.
pub fn hap_surrogate_parts(
    scores: &[f64],
    levels: &[usize],
    relevance: &[f64],
    p: &SmoothHeavisideParams,
) -> Result<LossGradients> {
    let n = scores.len();
    if levels.len() != n || relevance.len() != n {
        return Err(LossError::ShapeMismatch("scores, levels and relevance differ in length".into()));
    }
    let mass: f64 = relevance.iter().sum();
    if !(mass > 0.0) {
        return Err(LossError::NoPositives);
    }

    let mut d_scores = vec![0.0; n];
    let mut d_num = vec![0.0; n];
    let mut d_den = vec![0.0; n];
    let mut total = 0.0;

    for k in 0..n {
        let rk = relevance[k];
        if levels[k] == 0 || rk == 0.0 {
            continue;
        }
        let sk = scores[k];
        // numerator: H-rank> (smooth lower) + H-rank≤ (exact)
        // denominator: rank≥ (exact) + rank< (smooth upper)
        let mut num = rk;
        let mut den = 1.0;
        d_num.iter_mut().for_each(|d| *d = 0.0);
        d_den.iter_mut().for_each(|d| *d = 0.0);

        for j in 0..n {
            if j == k {
                continue;
            }
            let t = scores[j] - sk;
            let rj = relevance[j];
            if rj > rk {
                let (h, slope) = heaviside_lower(t, p);
                num += rk * h;
                d_num[j] += rk * slope;
                d_num[k] -= rk * slope;
            } else if t > 0.0 {
                num += rj;
            }
            if rj < rk {
                let (h, slope) = heaviside_upper(t, p);
                den += h;
                d_den[j] += slope;
                d_den[k] -= slope;
            } else if t > 0.0 {
                den += 1.0;
            }
        }

        total += num / den;
        let a = 1.0 / (mass * den);
        let b = num / (mass * den * den);
        for j in 0..n {
            d_scores[j] -= a * d_num[j] - b * d_den[j];
        }
    }

    Ok(LossGradients { value: 1.0 - total / mass, d_scores, ..Default::default() })
}
