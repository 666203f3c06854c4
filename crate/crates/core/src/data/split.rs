use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DataError, TabularDataset};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub labeled_fraction_of_train: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, labeled_fraction_of_train: f64, seed: u64) -> Self {
        Self {
            train_fraction,
            labeled_fraction_of_train,
            seed,
        }
    }
}

/// Disjoint index lists into a dataset. Each list is sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub test: Vec<usize>,
    /// False when the labeled subset fell back to plain random sampling.
    pub stratified: bool,
}

impl DataSplit {
    /// Labeled followed by unlabeled rows.
    pub fn train(&self) -> Vec<usize> {
        let mut t = self.labeled.clone();
        t.extend_from_slice(&self.unlabeled);
        t
    }
}

fn check_fraction(f: f64) -> Result<(), DataError> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(DataError::InvalidFraction(f))
    }
}

/// Per-class labeled quotas by largest remainder, with at least one row per
/// class. `None` when some class has no train row or `total < classes`.
fn stratified_quotas(class_sizes: &[usize], total: usize) -> Option<Vec<usize>> {
    let c = class_sizes.len();
    let n: usize = class_sizes.iter().sum();
    if class_sizes.iter().any(|&s| s == 0) || total < c || n == 0 {
        return None;
    }
    let exact: Vec<f64> = class_sizes
        .iter()
        .map(|&s| total as f64 * s as f64 / n as f64)
        .collect();
    let mut quota: Vec<usize> = exact
        .iter()
        .zip(class_sizes)
        .map(|(&e, &s)| (e.floor() as usize).clamp(1, s))
        .collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    loop {
        let assigned: usize = quota.iter().sum();
        if assigned == total {
            break;
        }
        if assigned < total {
            let Some(&k) = order.iter().find(|&&k| quota[k] < class_sizes[k]) else {
                return None;
            };
            quota[k] += 1;
            let pos = order.iter().position(|&x| x == k).unwrap();
            order.rotate_left(pos + 1);
        } else {
            // Over-assigned by the one-per-class floor: trim the largest quota.
            let k = (0..c).filter(|&k| quota[k] > 1).max_by_key(|&k| (quota[k], c - k))?;
            quota[k] -= 1;
        }
    }
    Some(quota)
}

/// Shuffles rows with the split seed, carves off the test set, then picks the
/// labeled subset of the train rows (stratified by class when every class has
/// a train row, otherwise plain random).
pub fn make_split(ds: &TabularDataset, spec: &SplitSpec) -> Result<DataSplit, DataError> {
    check_fraction(spec.train_fraction)?;
    check_fraction(spec.labeled_fraction_of_train)?;
    let labels = ds
        .labels()
        .ok_or_else(|| DataError::Invalid("split needs labels for every row".into()))?;
    let n = ds.n_rows();
    let n_test = ((1.0 - spec.train_fraction) * n as f64).round() as usize;
    let n_train = n.saturating_sub(n_test);
    let n_labeled = (spec.labeled_fraction_of_train * n_train as f64).round() as usize;
    if n_test == 0 {
        return Err(DataError::EmptyPartition("test"));
    }
    if n_labeled == 0 {
        return Err(DataError::EmptyPartition("labeled"));
    }
    if n_labeled >= n_train {
        return Err(DataError::EmptyPartition("unlabeled"));
    }

    let mut rng = rng_for(spec.seed, stream::SPLIT);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let (test, train) = perm.split_at(n_test);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for &r in train {
        by_class[labels[r] as usize].push(r);
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let (mut labeled, stratified) = match stratified_quotas(&sizes, n_labeled) {
        Some(q) => (
            by_class
                .iter()
                .zip(&q)
                .flat_map(|(rows, &k)| rows[..k].iter().copied())
                .collect::<Vec<_>>(),
            true,
        ),
        None => (train[..n_labeled].to_vec(), false),
    };
    labeled.sort_unstable();
    let mut is_labeled = vec![false; n];
    for &r in &labeled {
        is_labeled[r] = true;
    }
    let mut unlabeled: Vec<usize> = train.iter().copied().filter(|&r| !is_labeled[r]).collect();
    unlabeled.sort_unstable();
    let mut test = test.to_vec();
    test.sort_unstable();
    Ok(DataSplit {
        labeled,
        unlabeled,
        test,
        stratified,
    })
}
