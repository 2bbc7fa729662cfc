use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::rng::derived_rng;

/// `k` disjoint groups of case ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Every id not in fold `index`, in plan order.
    pub fn training_ids(&self, index: usize) -> Vec<&str> {
        self.folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != index)
            .flat_map(|(_, f)| f.iter().map(String::as_str))
            .collect()
    }

    pub fn validation_ids(&self, index: usize) -> Vec<&str> {
        self.folds[index].iter().map(String::as_str).collect()
    }
}

/// Sorts the ids, shuffles them with a generator derived from `seed`, and
/// deals them round-robin into `k` folds.
pub fn kfold_split(ids: &[String], k: usize, seed: u64) -> Result<FoldPlan, TrainError> {
    let mut sorted = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != ids.len() {
        return Err(TrainError::InvalidConfig("case ids must be unique".into()));
    }
    if k < 2 {
        return Err(TrainError::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    if k > sorted.len() {
        return Err(TrainError::InvalidConfig(format!(
            "{k} folds requested for {} cases",
            sorted.len()
        )));
    }
    sorted.shuffle(&mut derived_rng(seed, "kfold"));
    let mut folds = vec![Vec::new(); k];
    for (i, id) in sorted.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    Ok(FoldPlan { folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("case-{i:03}")).collect()
    }

    #[test]
    fn ten_into_five() {
        let plan = kfold_split(&ids(10), 5, 1).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 2));
        let mut all: Vec<String> = plan.folds.concat();
        all.sort();
        assert_eq!(all, ids(10));
        assert_eq!(plan, kfold_split(&ids(10), 5, 1).unwrap());
        assert_eq!(plan.training_ids(0).len(), 8);
    }

    #[test]
    fn input_order_does_not_matter() {
        let mut rev = ids(9);
        rev.reverse();
        assert_eq!(kfold_split(&rev, 3, 4).unwrap(), kfold_split(&ids(9), 3, 4).unwrap());
    }

    #[test]
    fn leave_one_out_and_rejections() {
        let plan = kfold_split(&ids(4), 4, 0).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 1));
        assert!(kfold_split(&ids(3), 4, 0).is_err());
        assert!(kfold_split(&ids(3), 1, 0).is_err());
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(kfold_split(&dup, 2, 0).is_err());
    }
}
