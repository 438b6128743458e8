//! Training-time draw strategies across domains.
//!
//! Adaptation training mixes a large labeled source pool with smaller
//! unlabeled target pools. Drawing proportionally would starve the small
//! domains, so the default sampler first picks a domain uniformly, then a
//! sample within it — every domain is observed equally often regardless of
//! its size. The proportional sampler exists as the ablation baseline.

use rand::Rng;

use crate::error::{Error, Result};

fn check_sizes(op: &'static str, sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::arg(op, "no domains given".to_string()));
    }
    if let Some(i) = sizes.iter().position(|&n| n == 0) {
        return Err(Error::arg(op, format!("domain {i} is empty")));
    }
    Ok(())
}

/// Domain-balanced sampling with replacement: uniform over domains, then
/// uniform within the chosen domain. Draws return `(domain_index,
/// sample_index)`.
#[derive(Debug, Clone)]
pub struct UniformDomainSampler {
    sizes: Vec<usize>,
}

impl UniformDomainSampler {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        check_sizes("balanced_sampler", sizes)?;
        Ok(UniformDomainSampler { sizes: sizes.to_vec() })
    }

    pub fn draw(&self, rng: &mut impl Rng) -> (usize, usize) {
        let d = rng.gen_range(0..self.sizes.len());
        (d, rng.gen_range(0..self.sizes[d]))
    }
}

/// Size-proportional sampling with replacement: every individual sample is
/// equally likely, so large domains dominate.
#[derive(Debug, Clone)]
pub struct ProportionalSampler {
    /// Exclusive prefix sums; the last entry is the pool total.
    cumulative: Vec<usize>,
    total: usize,
}

impl ProportionalSampler {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        check_sizes("proportional_sampler", sizes)?;
        let mut cumulative = Vec::with_capacity(sizes.len());
        let mut total = 0;
        for &n in sizes {
            cumulative.push(total);
            total += n;
        }
        Ok(ProportionalSampler { cumulative, total })
    }

    pub fn draw(&self, rng: &mut impl Rng) -> (usize, usize) {
        let k = rng.gen_range(0..self.total);
        let d = self.cumulative.partition_point(|&p| p <= k) - 1;
        (d, k - self.cumulative[d])
    }
}
