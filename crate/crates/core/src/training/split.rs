use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeding::rng_for;

const SPLIT_STREAM: u64 = 0x5911;
const FOLD_STREAM: u64 = 0xf01d;

/// Groups sample indices by topology id, ids ascending.
fn groups(topology_ids: &[usize]) -> Vec<Vec<usize>> {
    let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &t) in topology_ids.iter().enumerate() {
        map.entry(t).or_default().push(i);
    }
    map.into_values().collect()
}

fn shuffled_groups(topology_ids: &[usize], seed: u64, stream: u64) -> Vec<Vec<usize>> {
    let mut g = groups(topology_ids);
    g.shuffle(&mut rng_for(seed, &[stream]));
    g
}

/// Topology-disjoint split; `round(test_fraction * topologies)` topologies
/// (at least one, at most all but one) go to the test side. Returns sample
/// indices `(train, test)`, each ascending.
pub fn train_test_split(topology_ids: &[usize], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let g = shuffled_groups(topology_ids, seed, SPLIT_STREAM);
    if g.len() < 2 {
        return Err(Error::InvalidConfig("a train/test split needs at least two topologies".into()));
    }
    let n_test = ((test_fraction * g.len() as f64).round() as usize).clamp(1, g.len() - 1);
    let mut test: Vec<usize> = g[..n_test].concat();
    let mut train: Vec<usize> = g[n_test..].concat();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// `k` folds at topology granularity; the first `m mod k` folds receive one
/// extra topology. Returns `(train, validation)` sample-index pairs.
pub fn kfold_split(topology_ids: &[usize], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let g = shuffled_groups(topology_ids, seed, FOLD_STREAM);
    if k < 2 || k > g.len() {
        return Err(Error::TooManyFolds { folds: k, topologies: g.len() });
    }
    let (base, extra) = (g.len() / k, g.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(start..start + size);
        start += size;
    }
    Ok(folds
        .iter()
        .map(|range| {
            let mut val: Vec<usize> = g[range.clone()].concat();
            let mut train: Vec<usize> = g[..range.start].iter().chain(&g[range.end..]).flatten().copied().collect();
            val.sort_unstable();
            train.sort_unstable();
            (train, val)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn ids(topologies: usize, draws: usize) -> Vec<usize> {
        (0..topologies).flat_map(|t| std::iter::repeat_n(t, draws)).collect()
    }

    #[test]
    fn eighty_twenty_split() {
        let ids = ids(100, 10);
        let (train, test) = train_test_split(&ids, 0.2, 3).unwrap();
        assert_eq!((train.len(), test.len()), (800, 200));
        let tt: HashSet<usize> = test.iter().map(|&i| ids[i]).collect();
        assert!(train.iter().all(|&i| !tt.contains(&ids[i])));
    }

    #[test]
    fn five_equal_folds() {
        let ids = ids(80, 10);
        let folds = kfold_split(&ids, 5, 1).unwrap();
        let mut seen = HashSet::new();
        for (train, val) in &folds {
            assert_eq!(val.len(), 160);
            assert_eq!(train.len() + val.len(), 800);
            let vt: HashSet<usize> = val.iter().map(|&i| ids[i]).collect();
            assert_eq!(vt.len(), 16);
            assert!(train.iter().all(|&i| !vt.contains(&ids[i])));
            for &i in val {
                assert!(seen.insert(i));
            }
        }
        assert_eq!(seen.len(), 800);
        assert_eq!(kfold_split(&ids, 5, 1).unwrap(), folds);
    }

    #[test]
    fn remainder_goes_one_per_fold() {
        let folds = kfold_split(&ids(7, 1), 3, 0).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|(_, v)| v.len()).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
    }

    #[test]
    fn too_many_folds_rejected() {
        assert!(matches!(kfold_split(&ids(3, 4), 4, 0), Err(Error::TooManyFolds { .. })));
        assert!(train_test_split(&ids(1, 5), 0.2, 0).is_err());
    }
}
