//! Client samplers: uniform without replacement, weighted with replacement,
//! and the UCB / Thompson-sampling bandits rewarded by filter membership.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::ClientWeightMap;
use crate::dist::{beta_sample, categorical};
use crate::error::{FedError, Result};
use crate::rng::RngStream;
use crate::ClientId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingOutcome {
    /// Selected clients; may repeat only for the with-replacement sampler.
    pub sampled: Vec<ClientId>,
    /// Per-client selection scores over all clients (bandits only).
    pub scores_used: Option<Vec<f64>>,
}

/// Previous round's sampled set and the subset the filter kept.
#[derive(Debug, Clone, Copy)]
pub struct Feedback<'a> {
    pub sampled: &'a [ClientId],
    pub kept: &'a [ClientId],
}

impl Feedback<'_> {
    /// `(client, reward)` for each distinct previously sampled client.
    fn rewards(&self, num_clients: usize) -> Result<Vec<(ClientId, f64)>> {
        let sampled: BTreeSet<ClientId> = self.sampled.iter().copied().collect();
        for &k in &sampled {
            if k.0 >= num_clients {
                return Err(FedError::UnknownClient(k));
            }
        }
        for &k in self.kept {
            if !sampled.contains(&k) {
                return Err(FedError::RewardNotSampled(k));
            }
        }
        let kept: BTreeSet<ClientId> = self.kept.iter().copied().collect();
        Ok(sampled
            .into_iter()
            .map(|k| (k, if kept.contains(&k) { 1.0 } else { 0.0 }))
            .collect())
    }
}

fn check_m(m: usize, n: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(FedError::InvalidParameter {
            name: "m",
            reason: format!("must lie in [1, {n}], got {m}"),
        });
    }
    Ok(())
}

/// The `m` highest-scoring clients, ties broken by the smaller id.
pub fn top_m(scores: &[f64], m: usize) -> Vec<ClientId> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(m);
    order.into_iter().map(ClientId).collect()
}

/// `m` distinct clients out of `num_clients`, uniformly (Fisher–Yates prefix).
pub fn sample_uniform(num_clients: usize, m: usize, rng: &mut RngStream) -> Result<SamplingOutcome> {
    check_m(m, num_clients)?;
    let mut ids: Vec<usize> = (0..num_clients).collect();
    let (picked, _) = ids.partial_shuffle(rng, m);
    Ok(SamplingOutcome {
        sampled: picked.iter().map(|&k| ClientId(k)).collect(),
        scores_used: None,
    })
}

/// `m` i.i.d. draws from `Categorical(p)`.
pub fn sample_weighted_replacement(
    p: &ClientWeightMap,
    m: usize,
    rng: &mut RngStream,
) -> Result<SamplingOutcome> {
    if m == 0 {
        return Err(FedError::InvalidParameter {
            name: "m",
            reason: "must be at least 1".into(),
        });
    }
    let sampled = (0..m)
        .map(|_| {
            categorical(p.as_slice(), rng)
                .map(ClientId)
                .ok_or(FedError::Empty("client weights"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SamplingOutcome {
        sampled,
        scores_used: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcbState {
    pub mu_hat: Vec<f64>,
    pub pulls: Vec<u64>,
}

/// One pull per client and a Bernoulli(1/2) initial mean.
pub fn ucb_init(num_clients: usize, rng: &mut RngStream) -> UcbState {
    UcbState {
        mu_hat: (0..num_clients)
            .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
            .collect(),
        pulls: vec![1; num_clients],
    }
}

impl UcbState {
    pub fn len(&self) -> usize {
        self.mu_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_hat.is_empty()
    }

    /// `μ̂_k + sqrt(3 ln t / (2 a_k))` for every client.
    pub fn upper_bounds(&self, t: u64) -> Vec<f64> {
        let log_t = (t as f64).ln();
        self.mu_hat
            .iter()
            .zip(&self.pulls)
            .map(|(&mu, &a)| mu + (3.0 * log_t / (2.0 * a as f64)).sqrt())
            .collect()
    }
}

/// Folds last round's rewards into the running means, then picks the `m`
/// clients with the largest upper confidence bound at round `t` (1-based).
pub fn ucb_update_and_select(
    state: &UcbState,
    feedback: Option<Feedback<'_>>,
    t: u64,
    m: usize,
) -> Result<(UcbState, SamplingOutcome)> {
    if t == 0 {
        return Err(FedError::InvalidParameter {
            name: "t",
            reason: "round index is 1-based".into(),
        });
    }
    check_m(m, state.len())?;
    let mut next = state.clone();
    if let Some(fb) = feedback {
        for (k, r) in fb.rewards(state.len())? {
            let a = next.pulls[k.0] as f64;
            next.mu_hat[k.0] = (a * next.mu_hat[k.0] + r) / (a + 1.0);
            next.pulls[k.0] += 1;
        }
    }
    let bounds = next.upper_bounds(t);
    let sampled = top_m(&bounds, m);
    Ok((
        next,
        SamplingOutcome {
            sampled,
            scores_used: Some(bounds),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsState {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl TsState {
    /// Beta(1, 1) prior for every client.
    pub fn new(num_clients: usize) -> Self {
        Self {
            alpha: vec![1.0; num_clients],
            beta: vec![1.0; num_clients],
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Posterior update from last round's rewards, then one Beta draw per client
/// and the top `m` draws. Client `k` draws from `rng.derive(k)`.
pub fn ts_update_and_select(
    state: &TsState,
    feedback: Option<Feedback<'_>>,
    m: usize,
    rng: &RngStream,
) -> Result<(TsState, SamplingOutcome)> {
    check_m(m, state.len())?;
    let mut next = state.clone();
    if let Some(fb) = feedback {
        for (k, r) in fb.rewards(state.len())? {
            next.alpha[k.0] += r;
            next.beta[k.0] += 1.0 - r;
        }
    }
    let draws = next
        .alpha
        .iter()
        .zip(&next.beta)
        .enumerate()
        .map(|(k, (&a, &b))| beta_sample(a, b, &mut rng.derive(k as u64)))
        .collect::<Result<Vec<f64>>>()?;
    let sampled = top_m(&draws, m);
    Ok((
        next,
        SamplingOutcome {
            sampled,
            scores_used: Some(draws),
        },
    ))
}

/// Sampler memory carried between rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerState {
    Stateless,
    Ucb(UcbState),
    Ts(TsState),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[usize]) -> Vec<ClientId> {
        v.iter().map(|&i| ClientId(i)).collect()
    }

    #[test]
    fn uniform_all_and_determinism() {
        let out = sample_uniform(5, 5, &mut RngStream::new(1)).unwrap();
        let set: BTreeSet<_> = out.sampled.iter().copied().collect();
        assert_eq!(set.len(), 5);
        let a = sample_uniform(10, 3, &mut RngStream::new(2)).unwrap();
        let b = sample_uniform(10, 3, &mut RngStream::new(2)).unwrap();
        assert_eq!(a, b);
        assert!(sample_uniform(3, 0, &mut RngStream::new(1)).is_err());
        assert!(sample_uniform(3, 4, &mut RngStream::new(1)).is_err());
    }

    #[test]
    fn uniform_fairness_two_clients() {
        // Binomial(10000, 1/2): sd = 50, so 3σ is [4850, 5150] ⊂ [4700, 5300].
        let mut rng = RngStream::new(3);
        let zeros = (0..10_000)
            .filter(|_| sample_uniform(2, 1, &mut rng).unwrap().sampled[0] == ClientId(0))
            .count();
        assert!((4700..=5300).contains(&zeros), "{zeros}");
    }

    #[test]
    fn weighted_one_hot_and_zero_m() {
        let p = ClientWeightMap::new(vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let out = sample_weighted_replacement(&p, 6, &mut RngStream::new(4)).unwrap();
        assert_eq!(out.sampled, vec![ClientId(3); 6]);
        assert!(sample_weighted_replacement(&p, 0, &mut RngStream::new(4)).is_err());
    }

    #[test]
    fn weighted_uniform_frequencies() {
        let p = ClientWeightMap::uniform(4).unwrap();
        let out = sample_weighted_replacement(&p, 40_000, &mut RngStream::new(5)).unwrap();
        let mut counts = [0usize; 4];
        out.sampled.iter().for_each(|k| counts[k.0] += 1);
        // Binomial(40000, 1/4): sd ≈ 86.6.
        let sd = (40_000.0f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 10_000.0).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn ucb_init_shape() {
        let s = ucb_init(1000, &mut RngStream::new(6));
        assert!(s.pulls.iter().all(|&a| a == 1));
        assert!(s.mu_hat.iter().all(|&m| m == 0.0 || m == 1.0));
        let ones = s.mu_hat.iter().filter(|&&m| m == 1.0).count() as f64;
        // Binomial(1000, 1/2): sd ≈ 15.8.
        assert!((ones - 500.0).abs() <= 3.0 * 250f64.sqrt(), "{ones}");
    }

    #[test]
    fn ucb_running_mean_update() {
        let s = UcbState {
            mu_hat: vec![0.5, 0.2],
            pulls: vec![1, 3],
        };
        let fb = Feedback {
            sampled: &ids(&[0]),
            kept: &ids(&[0]),
        };
        let (next, _) = ucb_update_and_select(&s, Some(fb), 2, 1).unwrap();
        assert_eq!(next.mu_hat[0], 0.75);
        assert_eq!(next.pulls[0], 2);
        assert_eq!(next.mu_hat[1].to_bits(), 0.2f64.to_bits());
        assert_eq!(next.pulls[1], 3);
    }

    #[test]
    fn ucb_hand_ranking_at_t5() {
        // μ̄ = μ̂ + sqrt(3 ln 5 / (2a)); 3 ln 5 / 2 ≈ 2.41416
        //   c0: 0.9 + sqrt(2.41416/4) = 0.9 + 0.77688 = 1.67688
        //   c1: 0.2 + sqrt(2.41416/1) = 0.2 + 1.55376 = 1.75376
        //   c2: 0.6 + sqrt(2.41416/2) = 0.6 + 1.09867 = 1.69867
        //   c3: 1.0 + sqrt(2.41416/9) = 1.0 + 0.51792 = 1.51792
        let s = UcbState {
            mu_hat: vec![0.9, 0.2, 0.6, 1.0],
            pulls: vec![4, 1, 2, 9],
        };
        let (_, out) = ucb_update_and_select(&s, None, 5, 2).unwrap();
        assert_eq!(out.sampled, ids(&[1, 2]));
    }

    #[test]
    fn ucb_rejects_foreign_rewards() {
        let s = ucb_init(4, &mut RngStream::new(7));
        let fb = Feedback {
            sampled: &ids(&[0, 1]),
            kept: &ids(&[2]),
        };
        assert_eq!(
            ucb_update_and_select(&s, Some(fb), 2, 2).unwrap_err(),
            FedError::RewardNotSampled(ClientId(2))
        );
    }

    #[test]
    fn ts_updates() {
        let s = TsState::new(2);
        let fb = Feedback {
            sampled: &ids(&[0, 1]),
            kept: &ids(&[0]),
        };
        let (next, out) = ts_update_and_select(&s, Some(fb), 1, &RngStream::new(8)).unwrap();
        assert_eq!((next.alpha[0], next.beta[0]), (2.0, 1.0));
        assert_eq!((next.alpha[1], next.beta[1]), (1.0, 2.0));
        assert_eq!(out.sampled.len(), 1);
    }

    #[test]
    fn ts_prefers_strong_posterior() {
        let s = TsState {
            alpha: vec![100.0, 1.0],
            beta: vec![1.0, 100.0],
        };
        let root = RngStream::new(9);
        let wins = (0..1000)
            .filter(|&r| {
                let (_, out) = ts_update_and_select(&s, None, 1, &root.derive(r)).unwrap();
                out.sampled[0] == ClientId(0)
            })
            .count();
        assert!(wins >= 990, "{wins}");
    }

    #[test]
    fn top_m_tie_break() {
        assert_eq!(top_m(&[1.0, 2.0, 2.0, 0.5], 2), ids(&[1, 2]));
        assert_eq!(top_m(&[1.0, 1.0, 1.0], 2), ids(&[0, 1]));
    }

    #[test]
    fn sampler_state_json() {
        let s = SamplerState::Ts(TsState::new(2));
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(text, r#"{"kind":"ts","alpha":[1.0,1.0],"beta":[1.0,1.0]}"#);
        assert_eq!(serde_json::from_str::<SamplerState>(&text).unwrap(), s);
    }
}
