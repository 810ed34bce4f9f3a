//! Shapley values over the IC game: the value of a coalition is the
//! model probability with every non-member component masked with benign
//! content. Exact mode enumerates all coalitions; sampled mode averages
//! marginal contributions over seeded permutations.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::explain::{ExplainSettings, ExplainerId, ICAttribution, MaskContext, PatternMasker, ProbModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapleyBudget {
    /// Enumerate all `2^|ICs|` coalitions; rejected above the cap.
    Exact,
    Sampled { permutations: usize },
}

fn on_pattern(coalition: u64, dims: usize) -> Vec<bool> {
    (0..dims).map(|j| coalition & (1 << j) != 0).collect()
}

/// Evaluates the coalition value function, memoizing by bitmask so each
/// distinct coalition costs exactly one oracle query.
struct ValueTable<'a, P: ProbModel + ?Sized> {
    probe: &'a P,
    masker: PatternMasker<'a>,
    dims: usize,
    cache: HashMap<u64, f64>,
}

impl<'a, P: ProbModel + ?Sized> ValueTable<'a, P> {
    fn value(&mut self, coalition: u64) -> Result<f64> {
        if let Some(&v) = self.cache.get(&coalition) {
            return Ok(v);
        }
        let v = self
            .probe
            .prob(&self.masker.masked(&on_pattern(coalition, self.dims)))?;
        self.cache.insert(coalition, v);
        Ok(v)
    }
}

pub fn shapley_explain<P: ProbModel + ?Sized>(
    probe: &P,
    ctx: &MaskContext<'_>,
    budget: ShapleyBudget,
    settings: &ExplainSettings,
    seed: u64,
) -> Result<ICAttribution> {
    let dims = ctx.ic_count();
    if dims == 0 {
        return Err(Error::data("no components to attribute"));
    }
    let mut table = ValueTable {
        probe,
        masker: PatternMasker::new(ctx),
        dims,
        cache: HashMap::new(),
    };

    let scores = match budget {
        ShapleyBudget::Exact => {
            if dims > settings.shapley_exact_cap {
                return Err(Error::config(format!(
                    "exact Shapley over {dims} components exceeds the cap of {}; use sampled mode",
                    settings.shapley_exact_cap
                )));
            }
            exact_values(&mut table, dims)?
        }
        ShapleyBudget::Sampled { permutations } => {
            if permutations == 0 {
                return Err(Error::config("sampled Shapley needs permutations >= 1"));
            }
            sampled_values(&mut table, dims, permutations, seed)?
        }
    };

    Ok(ICAttribution {
        scores,
        explainer: ExplainerId::Shapley,
        forward_passes: table.cache.len() as u64,
    })
}

fn exact_values<P: ProbModel + ?Sized>(
    table: &mut ValueTable<'_, P>,
    dims: usize,
) -> Result<Vec<f64>> {
    // Coalition weight s!(d-1-s)!/d! indexed by coalition size.
    let mut factorial = vec![1.0f64; dims + 1];
    for i in 1..=dims {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..dims)
        .map(|s| factorial[s] * factorial[dims - 1 - s] / factorial[dims])
        .collect();

    let full = 1u64 << dims;
    let mut values = vec![0.0; full as usize];
    for coalition in 0..full {
        values[coalition as usize] = table.value(coalition)?;
    }
    let mut scores = vec![0.0; dims];
    for coalition in 0..full {
        let size = coalition.count_ones() as usize;
        for (j, score) in scores.iter_mut().enumerate() {
            let bit = 1u64 << j;
            if coalition & bit == 0 {
                *score += weight[size]
                    * (values[(coalition | bit) as usize] - values[coalition as usize]);
            }
        }
    }
    Ok(scores)
}

fn sampled_values<P: ProbModel + ?Sized>(
    table: &mut ValueTable<'_, P>,
    dims: usize,
    permutations: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = vec![0.0; dims];
    let mut order: Vec<usize> = (0..dims).collect();
    for _ in 0..permutations {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut coalition = 0u64;
        let mut prev = table.value(coalition)?;
        for &j in &order {
            coalition |= 1 << j;
            let next = table.value(coalition)?;
            scores[j] += next - prev;
            prev = next;
        }
    }
    for s in &mut scores {
        *s /= permutations as f64;
    }
    Ok(scores)
}
