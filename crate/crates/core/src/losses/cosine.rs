use super::{LossError, Result};

/// Row-normalized embeddings with the backward pass through the
/// normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineHead {
    pub unit: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
}

impl CosineHead {
    pub fn new(embeddings: &[Vec<f64>]) -> Result<Self> {
        let mut unit = Vec::with_capacity(embeddings.len());
        let mut norms = Vec::with_capacity(embeddings.len());
        for (i, e) in embeddings.iter().enumerate() {
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(LossError::ZeroVector(i));
            }
            unit.push(e.iter().map(|x| x / norm).collect());
            norms.push(norm);
        }
        Ok(Self { unit, norms })
    }

    pub fn len(&self) -> usize {
        self.unit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit.is_empty()
    }

    /// Cosine similarity of row `q` with every other row, in row order.
    pub fn scores(&self, q: usize) -> Vec<f64> {
        let vq = &self.unit[q];
        (0..self.len())
            .filter(|&j| j != q)
            .map(|j| dot(vq, &self.unit[j]))
            .collect()
    }

    /// Accumulates `d_scores` (laid out as [`CosineHead::scores`]) into
    /// gradients with respect to the unit rows.
    pub fn accumulate_scores(&self, q: usize, d_scores: &[f64], d_unit: &mut [Vec<f64>]) {
        let others = (0..self.len()).filter(|&j| j != q);
        for (j, &g) in others.zip(d_scores) {
            if g == 0.0 {
                continue;
            }
            for i in 0..self.unit[q].len() {
                d_unit[q][i] += g * self.unit[j][i];
                d_unit[j][i] += g * self.unit[q][i];
            }
        }
    }

    /// Maps gradients on unit rows to gradients on raw rows:
    /// `(g − (g·v̂) v̂) / ‖v‖`.
    pub fn backward(&self, d_unit: &[Vec<f64>]) -> Vec<Vec<f64>> {
        d_unit
            .iter()
            .zip(&self.unit)
            .zip(&self.norms)
            .map(|((g, v), &norm)| {
                let along = dot(g, v);
                g.iter().zip(v).map(|(gi, vi)| (gi - along * vi) / norm).collect()
            })
            .collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scores of row `q` against the other rows, and the head that carries
/// score gradients back to the raw embeddings.
pub fn cosine_scores(embeddings: &[Vec<f64>], q: usize) -> Result<(Vec<f64>, CosineBackward)> {
    if q >= embeddings.len() {
        return Err(LossError::ShapeMismatch(format!("query {q} outside {} rows", embeddings.len())));
    }
    let head = CosineHead::new(embeddings)?;
    Ok((head.scores(q), CosineBackward { head, query: q }))
}

/// Backward operator returned by [`cosine_scores`].
#[derive(Debug, Clone)]
pub struct CosineBackward {
    head: CosineHead,
    query: usize,
}

impl CosineBackward {
    /// Gradient with respect to every raw embedding row.
    pub fn backward(&self, d_scores: &[f64]) -> Vec<Vec<f64>> {
        let dim = self.head.unit.first().map_or(0, Vec::len);
        let mut d_unit = vec![vec![0.0; dim]; self.head.len()];
        self.head.accumulate_scores(self.query, d_scores, &mut d_unit);
        self.head.backward(&d_unit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_orthogonal() {
        let (s, _) = cosine_scores(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![-2.0, 1.0]], 0).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-15);
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn zero_row() {
        assert_eq!(CosineHead::new(&[vec![1.0], vec![0.0]]), Err(LossError::ZeroVector(1)));
    }

    #[test]
    fn backward_is_tangent() {
        let e = vec![vec![3.0, 0.5, -1.0], vec![0.2, 1.0, 2.0]];
        let (_, back) = cosine_scores(&e, 0).unwrap();
        let d = back.backward(&[1.0]);
        // scale invariance of cosine: gradient orthogonal to the raw row
        for (g, v) in d.iter().zip(&e) {
            assert!(dot(g, v).abs() < 1e-14);
        }
    }
}
