use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Label, LabelSet, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 42,
            stratified: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<NodeId>,
    pub test: Vec<NodeId>,
}

fn take_train(ids: &mut Vec<NodeId>, fraction: f64, rng: &mut ChaCha8Rng, keep_both: bool) -> Vec<NodeId> {
    ids.shuffle(rng);
    let n = ids.len();
    let mut n_train = (n as f64 * fraction).round() as usize;
    if keep_both {
        n_train = n_train.clamp(1, n - 1);
    }
    let test = ids.split_off(n_train);
    std::mem::replace(ids, test)
}

/// Seeded split of the labeled ids. Stratified splits round each class's
/// share separately and keep at least one example of each class on each side.
pub fn split(labels: &LabelSet, spec: &SplitSpec) -> Result<Split> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    if spec.stratified {
        for class in [Label::Normal, Label::Malicious] {
            let mut ids: Vec<NodeId> = labels.iter().filter(|&(_, l)| l == class).map(|(id, _)| id).collect();
            if ids.len() < 2 {
                return Err(Error::Data(format!(
                    "stratified split needs at least 2 examples of class {}, found {}",
                    class.as_u8(),
                    ids.len()
                )));
            }
            train.extend(take_train(&mut ids, spec.train_fraction, &mut rng, true));
            test.extend(ids);
        }
    } else {
        let mut ids: Vec<NodeId> = labels.iter().map(|(id, _)| id).collect();
        if ids.len() < 2 {
            return Err(Error::Data(format!("need at least 2 labeled examples, found {}", ids.len())));
        }
        train = take_train(&mut ids, spec.train_fraction, &mut rng, true);
        test = ids;
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}
