use rand::Rng;

use crate::rng::StreamRng;

/// Draws an index from a probability vector (need not be exactly normalized).
pub fn sample_categorical(p: &[f64], rng: &mut StreamRng) -> usize {
    let total: f64 = p.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave u just above the running sum; take the last atom with mass.
    p.iter().rposition(|x| *x > 0.0).unwrap_or(p.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn categorical_frequencies() {
        let mut rng = stream(1, Stream::Agent);
        let p = [0.1, 0.0, 0.6, 0.3];
        let mut hits = [0usize; 4];
        for _ in 0..100_000 {
            hits[sample_categorical(&p, &mut rng)] += 1;
        }
        assert_eq!(hits[1], 0);
        for (h, q) in hits.iter().zip(p) {
            let f = *h as f64 / 1e5;
            let sd = (q * (1.0 - q) / 1e5).sqrt();
            assert!((f - q).abs() <= 4.0 * sd + 1e-12, "{f} vs {q}");
        }
    }
}
