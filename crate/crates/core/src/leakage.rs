//! Mutual information between initial and post-refill control states.
//!
//! For a deterministic channel `f` and a uniform prior over `N` states,
//! `H(S) = log2 N` and `H(S|O) = sum_o (|f^-1(o)| / N) log2 |f^-1(o)|`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flush::{flush_refill_map, ChannelMap, FlushBehavior, FlushKind, RefillOrder};
use crate::policy::PolicyConfig;

/// Input distribution over the channel's domain.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum Prior {
    #[default]
    Uniform,
    /// One weight per channel entry, in entry order.
    Weights(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeakageReport {
    pub state_count: usize,
    pub h_s: f64,
    pub h_s_given_o: f64,
    #[serde(rename = "leakage_bits")]
    pub leakage: f64,
    pub image_size: usize,
    /// Output state encoding to the number of inputs mapped onto it.
    pub preimage_histogram: BTreeMap<String, usize>,
}

impl LeakageReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn mutual_information(map: &ChannelMap, prior: &Prior) -> Result<LeakageReport> {
    let n = map.entries.len();
    if n == 0 {
        return Err(Error::InvalidPrior("channel has an empty domain".into()));
    }
    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
    let keys: Vec<String> = map.entries.iter().map(|(_, o)| o.to_string()).collect();
    for k in &keys {
        *histogram.entry(k.clone()).or_default() += 1;
    }

    let (h_s, h_s_given_o) = match prior {
        Prior::Uniform => {
            let total = n as f64;
            let h_s = total.log2();
            let h_cond = histogram
                .values()
                .map(|&k| (k as f64 / total) * (k as f64).log2())
                .sum::<f64>();
            (h_s, h_cond)
        }
        Prior::Weights(weights) => {
            check_weights(weights, n)?;
            let mut mass: BTreeMap<&str, f64> = BTreeMap::new();
            for (k, &w) in keys.iter().zip(weights) {
                *mass.entry(k.as_str()).or_default() += w;
            }
            let mut h_s = 0.0;
            let mut h_cond = 0.0;
            for (k, &w) in keys.iter().zip(weights) {
                if w > 0.0 {
                    h_s -= w * w.log2();
                    h_cond -= w * (w / mass[k.as_str()]).log2();
                }
            }
            (h_s, h_cond)
        }
    };

    Ok(LeakageReport {
        state_count: n,
        h_s,
        h_s_given_o,
        leakage: (h_s - h_s_given_o).max(0.0),
        image_size: histogram.len(),
        preimage_histogram: histogram,
    })
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::InvalidPrior(format!(
            "{} weights for {n} states",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidPrior(
            "weights must be finite and nonnegative".into(),
        ));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidPrior(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// Leakage of a cache level under `wbinvd` with the policy's default refill.
pub fn leakage_for_cache_level(policy: PolicyConfig, behavior: FlushBehavior) -> Result<f64> {
    let map = flush_refill_map(
        policy,
        FlushKind::Wbinvd,
        behavior,
        &RefillOrder::PolicyDefault.blocks(policy),
    )?;
    Ok(mutual_information(&map, &Prior::Uniform)?.leakage)
}

/// Rounds to `places` decimals, for fixed-precision comparisons.
pub fn round_to(value: f64, places: i32) -> f64 {
    let scale = 10f64.powi(places);
    (value * scale).round() / scale
}
