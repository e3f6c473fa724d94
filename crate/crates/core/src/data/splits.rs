use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSizes {
    pub calibration: usize,
    pub audit: usize,
    pub eval: usize,
    /// Remaining samples when `None`.
    pub train: Option<usize>,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            calibration: 500,
            audit: 500,
            eval: 1000,
            train: None,
        }
    }
}

/// Pairwise-disjoint index sets over one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub audit: Vec<usize>,
    pub eval: Vec<usize>,
}

impl Splits {
    pub fn new(total: usize, sizes: SplitSizes, seed: u64) -> Result<Self> {
        let held = sizes.calibration + sizes.audit + sizes.eval;
        let train = sizes.train.unwrap_or(total.saturating_sub(held));
        if held + train > total || train == 0 {
            return Err(Error::InvalidConfig(format!(
                "splits need {} samples, dataset has {total}",
                held + train.max(1)
            )));
        }
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut rng::stream(seed, 0, Stream::Split));
        let mut it = order.into_iter();
        let mut take = |k: usize| {
            let mut v: Vec<usize> = it.by_ref().take(k).collect();
            v.sort_unstable();
            v
        };
        let calibration = take(sizes.calibration);
        let audit = take(sizes.audit);
        let eval = take(sizes.eval);
        let train = take(train);
        Ok(Self {
            train,
            calibration,
            audit,
            eval,
        })
    }
}
