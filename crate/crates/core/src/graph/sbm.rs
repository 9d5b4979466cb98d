//! Stochastic block model generator for desk-scale experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use super::Graph;
use crate::error::{DparError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbmParams {
    pub n_nodes: usize,
    pub n_communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

impl SbmParams {
    fn validate(&self) -> Result<()> {
        let p_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !p_ok(self.p_in) || !p_ok(self.p_out) || self.p_out > self.p_in {
            return Err(DparError::Config(format!(
                "need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if self.n_communities == 0 || self.n_communities > self.n_nodes {
            return Err(DparError::Config(format!(
                "need 1 <= communities <= nodes, got {} communities for {} nodes",
                self.n_communities, self.n_nodes
            )));
        }
        if self.feature_dim == 0 {
            return Err(DparError::Config("feature_dim must be positive".into()));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(DparError::Config("feature_noise must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Community of `node` under contiguous balanced blocks.
pub fn community_of(node: usize, n_nodes: usize, n_communities: usize) -> usize {
    node * n_communities / n_nodes
}

/// Samples an SBM graph. Nodes are split into contiguous, balanced
/// communities; the label is the community. Each feature row is the unit
/// vector `e_{community mod feature_dim}` plus i.i.d. `N(0, feature_noise^2)`.
pub fn generate_sbm(params: &SbmParams) -> Result<Graph> {
    params.validate()?;
    let n = params.n_nodes;
    let c = params.n_communities;
    let d = params.feature_dim;
    let mut rng = ChaCha20Rng::seed_from_u64(params.seed);

    let labels: Vec<usize> = (0..n).map(|v| community_of(v, n, c)).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] { params.p_in } else { params.p_out };
            // p == 1 must always connect; random::<f64>() is in [0, 1).
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut features = vec![0.0; n * d];
    let noise = (params.feature_noise > 0.0)
        .then(|| Normal::new(0.0, params.feature_noise).expect("validated scale"));
    for v in 0..n {
        let row = &mut features[v * d..(v + 1) * d];
        row[labels[v] % d] = 1.0;
        if let Some(dist) = &noise {
            for x in row.iter_mut() {
                *x += dist.sample(&mut rng);
            }
        }
    }

    Graph::from_edges(n, &edges, features, d, labels, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, c: usize, p_in: f64, p_out: f64, noise: f64) -> SbmParams {
        SbmParams {
            n_nodes: n,
            n_communities: c,
            p_in,
            p_out,
            feature_dim: 4,
            feature_noise: noise,
            seed: 3,
        }
    }

    #[test]
    fn extremes_give_disjoint_cliques() {
        let g = generate_sbm(&params(4, 2, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!(g.edge_list(), vec![(0, 1), (2, 3)]);
        assert_eq!(g.labels(), &[0, 0, 1, 1]);
    }

    #[test]
    fn zero_noise_rows_identical_within_community() {
        let g = generate_sbm(&params(30, 3, 0.2, 0.01, 0.0)).unwrap();
        for v in 0..30 {
            assert_eq!(g.features(v), g.features(community_of(v, 30, 3) * 10));
        }
    }

    #[test]
    fn within_community_edge_rate_concentrates() {
        // 3 blocks of 100: 3 * C(100, 2) = 14850 within pairs. Binomial sd
        // sqrt(p(1-p)/pairs) ~ 0.00246 for p = 0.1.
        let mut p = params(300, 3, 0.1, 0.005, 0.5);
        p.feature_dim = 16;
        let g = generate_sbm(&p).unwrap();
        let within = g
            .edge_list()
            .iter()
            .filter(|(u, v)| g.label(*u) == g.label(*v))
            .count();
        let pairs = 3.0 * 100.0 * 99.0 / 2.0;
        let rate = within as f64 / pairs;
        let sd = (0.1 * 0.9 / pairs).sqrt();
        assert!((rate - 0.1).abs() <= 3.0 * sd, "rate {rate}");
    }

    #[test]
    fn rejects_inverted_probabilities() {
        assert!(generate_sbm(&params(10, 2, 0.1, 0.2, 0.0)).is_err());
        assert!(generate_sbm(&params(2, 3, 0.5, 0.1, 0.0)).is_err());
    }
}
