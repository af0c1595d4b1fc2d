//! Chain diagnostics: acceptance rate, effective sample size with Geyer's
//! initial-positive-sequence truncation, split R-hat and trace summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplers::Chain;

pub const MIN_ESS_SAMPLES: usize = 10;

pub fn acceptance_rate(chain: &Chain) -> f64 {
    if chain.n_proposed == 0 {
        return 0.0;
    }
    chain.n_accepted as f64 / chain.n_proposed as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Set when the series carries no variation to estimate from.
    pub degenerate: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with denominator `n - 1`.
fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Effective sample size `N / (1 + 2 sum rho_t)`.
///
/// Autocorrelations use the biased (divide-by-`N`) autocovariance and are
/// summed in consecutive pairs `rho_{2m} + rho_{2m+1}` until the first
/// negative pair. The result is clamped to `[1, N]`.
pub fn ess(series: &[f64]) -> Result<Estimate> {
    let n = series.len();
    if n < MIN_ESS_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "ESS needs at least {MIN_ESS_SAMPLES} samples, got {n}"
        )));
    }
    let m = mean(series);
    let centered: Vec<f64> = series.iter().map(|x| x - m).collect();
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let c0 = autocov(0);
    if !(c0 > 0.0) || c0 < 1e-300 {
        return Ok(Estimate {
            value: 1.0,
            degenerate: true,
        });
    }
    // tau = -1 + 2 * sum_{m >= 0} (rho_{2m} + rho_{2m+1}), rho_0 = 1
    let mut pair_sum = 0.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / c0;
        if pair < 0.0 {
            break;
        }
        pair_sum += pair;
        lag += 2;
    }
    let tau = -1.0 + 2.0 * pair_sum;
    let value = if tau > 0.0 { n as f64 / tau } else { n as f64 };
    Ok(Estimate {
        value: value.clamp(1.0, n as f64),
        degenerate: false,
    })
}

/// Split R-hat: every chain is cut into two halves (a middle draw is dropped
/// for odd lengths) and
/// `sqrt((n' - 1) / n' + B / (n' W))` is formed over the `2m` halves of
/// length `n'`, with `W` the mean within-half variance and `B / n'` the
/// variance of the half means.
pub fn split_rhat<S: AsRef<[f64]>>(chains: &[S]) -> Result<Estimate> {
    if chains.is_empty() {
        return Err(Error::InvalidInput("R-hat needs at least one chain".into()));
    }
    let n = chains.iter().map(|c| c.as_ref().len()).min().unwrap_or(0);
    if n < 4 {
        return Err(Error::InvalidInput(format!(
            "R-hat needs chains of at least 4 draws, shortest has {n}"
        )));
    }
    let half = n / 2;
    let mut halves: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let c = &c.as_ref()[..n];
        halves.push(&c[..half]);
        halves.push(&c[n - half..]);
    }
    let nh = half as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let within = mean(&halves.iter().map(|h| sample_var(h)).collect::<Vec<_>>());
    let between_over_n = sample_var(&means);
    if !(within > 0.0) {
        return Ok(Estimate {
            value: if between_over_n > 0.0 { f64::INFINITY } else { 1.0 },
            degenerate: true,
        });
    }
    Ok(Estimate {
        value: ((nh - 1.0) / nh + between_over_n / within).sqrt(),
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    pub ess: f64,
    pub ess_degenerate: bool,
    pub split_rhat: f64,
    pub rhat_degenerate: bool,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub n_chains: usize,
    pub n_retained: usize,
    pub acceptance_rate: f64,
    pub per_chain_acceptance: Vec<f64>,
    pub divergence_rate: f64,
    pub dimensions: Vec<DimensionSummary>,
}

impl ChainDiagnostics {
    /// Fraction of dimensions with split R-hat below `threshold`.
    pub fn fraction_rhat_below(&self, threshold: f64) -> f64 {
        if self.dimensions.is_empty() {
            return 0.0;
        }
        let ok = self
            .dimensions
            .iter()
            .filter(|d| d.split_rhat < threshold)
            .count();
        ok as f64 / self.dimensions.len() as f64
    }

    pub fn any_degenerate(&self) -> bool {
        self.dimensions
            .iter()
            .any(|d| d.ess_degenerate || d.rhat_degenerate)
    }
}

/// Per-dimension diagnostics over the retained draws of all chains. ESS is
/// the sum of per-chain ESS, capped at the pooled draw count.
pub fn chain_diagnostics(chains: &[Chain]) -> Result<ChainDiagnostics> {
    if chains.is_empty() {
        return Err(Error::InvalidInput("no chains to diagnose".into()));
    }
    let dim = chains[0].dim();
    if let Some(c) = chains.iter().find(|c| c.dim() != dim) {
        return Err(Error::DimensionMismatch {
            what: "chain dimension",
            expected: dim,
            got: c.dim(),
        });
    }
    let proposed: usize = chains.iter().map(|c| c.n_proposed).sum();
    let accepted: usize = chains.iter().map(|c| c.n_accepted).sum();
    let divergent: usize = chains.iter().map(|c| c.n_divergent).sum();
    let n_retained: usize = chains.iter().map(Chain::len).sum();
    let ratio = |a: usize| if proposed == 0 { 0.0 } else { a as f64 / proposed as f64 };

    let dimensions = (0..dim)
        .map(|d| {
            let series: Vec<Vec<f64>> = chains.iter().map(|c| c.coordinate(d)).collect();
            let mut ess_total = 0.0;
            let mut ess_degenerate = true;
            for s in &series {
                let e = ess(s)?;
                ess_total += e.value;
                ess_degenerate &= e.degenerate;
            }
            let rhat = split_rhat(&series)?;
            let pooled: Vec<f64> = series.concat();
            let m = mean(&pooled);
            let sd = if pooled.len() > 1 {
                sample_var(&pooled).sqrt()
            } else {
                0.0
            };
            Ok(DimensionSummary {
                ess: ess_total.min(n_retained as f64),
                ess_degenerate,
                split_rhat: rhat.value,
                rhat_degenerate: rhat.degenerate,
                mean: m,
                sd,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ChainDiagnostics {
        n_chains: chains.len(),
        n_retained,
        acceptance_rate: ratio(accepted),
        per_chain_acceptance: chains.iter().map(acceptance_rate).collect(),
        divergence_rate: ratio(divergent),
        dimensions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normals(n: usize, seed: u64, stream: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, stream);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
        let noise = normals(n, seed, 0);
        let mut x = Vec::with_capacity(n);
        let mut prev = 0.0;
        for e in noise {
            prev = phi * prev + e;
            x.push(prev);
        }
        x
    }

    fn chain_with(n_proposed: usize, n_accepted: usize) -> Chain {
        Chain {
            samples: vec![],
            log_posts: vec![],
            n_proposed,
            n_accepted,
            n_divergent: 0,
            seed: 0,
            stream: 0,
        }
    }

    #[test]
    fn acceptance_examples() {
        assert_eq!(acceptance_rate(&chain_with(10, 10)), 1.0);
        assert_eq!(acceptance_rate(&chain_with(10, 0)), 0.0);
        assert_eq!(acceptance_rate(&chain_with(1000, 250)), 0.25);
    }

    #[test]
    fn ess_of_iid_draws_is_near_n() {
        let x = normals(10_000, 1, 0);
        let e = ess(&x).unwrap();
        assert!(!e.degenerate);
        assert!(e.value >= 8_000.0 && e.value <= 10_000.0, "{}", e.value);
    }

    #[test]
    fn ess_of_ar1_matches_closed_form() {
        let n = 20_000;
        let x = ar1(n, 0.9, 2);
        let expected = n as f64 * (1.0 - 0.9) / (1.0 + 0.9);
        let e = ess(&x).unwrap().value;
        assert!((e - expected).abs() / expected < 0.3, "{e} vs {expected}");
    }

    #[test]
    fn ess_of_constant_series_is_flagged() {
        let e = ess(&[2.5; 50]).unwrap();
        assert_eq!(e.value, 1.0);
        assert!(e.degenerate);
        assert!(ess(&[1.0; 5]).is_err());
    }

    #[test]
    fn rhat_examples() {
        let same: Vec<Vec<f64>> = (0..4).map(|s| normals(5_000, 3, s)).collect();
        assert!(split_rhat(&same).unwrap().value < 1.05);

        let a = normals(1000, 4, 0);
        let b: Vec<f64> = normals(1000, 4, 1).into_iter().map(|v| v + 10.0).collect();
        assert!(split_rhat(&[a, b]).unwrap().value > 3.0);

        let one = normals(2_000, 5, 0);
        assert!(split_rhat(&[one]).unwrap().value < 1.1);
    }

    #[test]
    fn rhat_by_hand() {
        // halves [0, 2] and [4, 6]: means 1, 5; variances 2, 2
        let r = split_rhat(&[vec![0.0, 2.0, 4.0, 6.0]]).unwrap();
        // n' = 2, W = 2, var(means) = 8 -> sqrt(1/2 + 8/2)
        assert!((r.value - 4.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rhat_degenerate_chains() {
        let r = split_rhat(&[vec![1.0; 10], vec![1.0; 10]]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.value, 1.0);
        assert!(split_rhat(&[vec![0.0; 3]]).is_err());
    }

    #[test]
    fn shuffling_an_autocorrelated_chain_raises_ess() {
        let mut raised = 0;
        for seed in 0..20 {
            let x = ar1(2_000, 0.8, seed);
            let before = ess(&x).unwrap().value;
            let mut shuffled = x.clone();
            shuffled.shuffle(&mut stream_rng(seed, 99));
            if ess(&shuffled).unwrap().value > before {
                raised += 1;
            }
        }
        assert_eq!(raised, 20);
    }

    #[test]
    fn pooled_diagnostics() {
        let chains: Vec<Chain> = (0..3)
            .map(|s| {
                let x = normals(400, 9, s);
                let y = normals(400, 10, s);
                Chain {
                    samples: x.iter().zip(&y).map(|(a, b)| vec![*a, *b]).collect(),
                    log_posts: vec![0.0; 400],
                    n_proposed: 500,
                    n_accepted: 300,
                    n_divergent: 5,
                    seed: 0,
                    stream: s,
                }
            })
            .collect();
        let d = chain_diagnostics(&chains).unwrap();
        assert_eq!(d.n_retained, 1200);
        assert!((d.acceptance_rate - 0.6).abs() < 1e-15);
        assert!((d.divergence_rate - 0.01).abs() < 1e-15);
        for dim in &d.dimensions {
            assert!(dim.ess <= 1200.0 && dim.ess >= 1.0);
            assert!(dim.split_rhat < 1.05);
        }
        assert_eq!(d.fraction_rhat_below(1.1), 1.0);
    }
}
