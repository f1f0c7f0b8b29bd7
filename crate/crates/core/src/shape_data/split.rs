use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Per-cluster random train/test split. Each cluster contributes
/// `round(train_fraction · size)` training samples, clamped so that every
/// cluster keeps at least one training and one test member. Returned index
/// lists are sorted.
pub fn stratified_split<R: Rng + ?Sized>(
    labels: &[usize],
    train_fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        clusters.entry(l).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, mut members) in clusters {
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "cluster {label} has {} member(s); stratified splitting needs at least 2",
                members.len()
            )));
        }
        let n = members.len();
        let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        members.shuffle(rng);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
