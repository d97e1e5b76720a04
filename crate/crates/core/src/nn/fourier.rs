//! Fourier-feature embedding of scalars.

/// Fixed geometric frequency bank. The embedding of a scalar `s` is
/// `[sin(2π f_j s), cos(2π f_j s)]` for each frequency, giving `2 * n_freq`
/// outputs. Frequencies are constants, not parameters.
#[derive(Debug, Clone)]
pub struct FourierEmbedding {
    freqs: Vec<f64>,
}

impl FourierEmbedding {
    /// `n_freq` geometrically spaced frequencies from `f_min` to `f_max`.
    pub fn geometric(n_freq: usize, f_min: f64, f_max: f64) -> FourierEmbedding {
        assert!(n_freq >= 1 && f_min > 0.0 && f_max >= f_min);
        let freqs = if n_freq == 1 {
            vec![f_min]
        } else {
            let ratio = (f_max / f_min).powf(1.0 / (n_freq - 1) as f64);
            (0..n_freq).map(|j| f_min * ratio.powi(j as i32)).collect()
        };
        FourierEmbedding { freqs }
    }

    pub fn dim(&self) -> usize {
        2 * self.freqs.len()
    }

    pub fn embed(&self, s: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for f in &self.freqs {
            let arg = 2.0 * std::f64::consts::PI * f * s;
            out.push(arg.sin());
            out.push(arg.cos());
        }
        out
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_embeds_to_sin_cos_pattern() {
        let fe = FourierEmbedding::geometric(8, 1.0, 1000.0);
        let e = fe.embed(0.0);
        assert_eq!(e.len(), 16);
        for pair in e.chunks(2) {
            assert_eq!(pair[0], 0.0);
            assert_eq!(pair[1], 1.0);
        }
    }

    #[test]
    fn frequencies_are_geometric() {
        let fe = FourierEmbedding::geometric(4, 1.0, 1000.0);
        let f = fe.freqs();
        assert!((f[0] - 1.0).abs() < 1e-12);
        assert!((f[3] - 1000.0).abs() < 1e-9);
        let r1 = f[1] / f[0];
        let r2 = f[2] / f[1];
        let r3 = f[3] / f[2];
        assert!((r1 - r2).abs() < 1e-9 && (r2 - r3).abs() < 1e-9);
    }

    #[test]
    fn embedding_is_deterministic() {
        let fe = FourierEmbedding::geometric(8, 1.0, 1000.0);
        assert_eq!(fe.embed(0.37), fe.embed(0.37));
    }
}
