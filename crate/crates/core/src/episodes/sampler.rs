//! N-way K-shot episode sampling under per-class and per-task pool caps.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::{Dataset, Episode};
use crate::augment::rotate90;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
}

impl EpisodeSpec {
    pub fn new(n_way: usize, k_shot: usize, q_query: usize) -> Result<Self> {
        if n_way == 0 || k_shot == 0 || q_query == 0 {
            return Err(Error::invalid("n_way, k_shot and q_query must all be at least 1"));
        }
        Ok(Self {
            n_way,
            k_shot,
            q_query,
        })
    }
}

/// How capped pools pick their members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolMode {
    /// First images of each class in dataset order.
    Fixed,
    /// Seeded random subsample, drawn once per sampler.
    #[default]
    Random,
}

impl std::str::FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(PoolMode::Fixed),
            "random" => Ok(PoolMode::Random),
            other => Err(Error::Config(format!("unknown pool mode '{other}'"))),
        }
    }
}

/// Per-class support/query pool sizes and the number of allowed class
/// combinations. `None` means unrestricted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PoolLimits {
    pub support_cap: Option<usize>,
    pub query_cap: Option<usize>,
    pub task_cap: Option<usize>,
    pub mode: PoolMode,
}

impl PoolLimits {
    pub fn full() -> Self {
        Self::default()
    }

    fn has_item_caps(&self) -> bool {
        self.support_cap.is_some() || self.query_cap.is_some()
    }
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc·(n−i)/(i+1) stays integral at every step
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

fn all_combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

const ENUMERATION_LIMIT: u128 = 1 << 20;

/// `task_cap` distinct class combinations (each sorted ascending) drawn
/// uniformly without replacement from all `C(n_classes, n_way)`.
pub fn enumerate_task_combinations<R: Rng + ?Sized>(
    n_classes: usize,
    n_way: usize,
    task_cap: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if n_way == 0 || n_way > n_classes {
        return Err(Error::Infeasible(format!(
            "cannot choose {n_way} classes out of {n_classes}"
        )));
    }
    let total = binomial(n_classes, n_way);
    if task_cap == 0 || task_cap as u128 > total {
        return Err(Error::Infeasible(format!(
            "task cap {task_cap} outside 1..={total} combinations"
        )));
    }
    if total <= ENUMERATION_LIMIT {
        let all = all_combinations(n_classes, n_way);
        return Ok(index::sample(rng, all.len(), task_cap)
            .into_iter()
            .map(|i| all[i].clone())
            .collect());
    }
    let mut seen = HashSet::with_capacity(task_cap);
    let mut out = Vec::with_capacity(task_cap);
    while out.len() < task_cap {
        let mut combo = index::sample(rng, n_classes, n_way).into_vec();
        combo.sort_unstable();
        if seen.insert(combo.clone()) {
            out.push(combo);
        }
    }
    Ok(out)
}

/// Per-class image index pools fixed when the sampler is built.
#[derive(Debug, Clone)]
enum Pools {
    /// Support and query drawn jointly from every image of the class.
    Shared,
    Split {
        support: Vec<Vec<usize>>,
        query: Vec<Vec<usize>>,
    },
}

/// Draws episodes from one dataset under fixed pool restrictions.
#[derive(Debug, Clone)]
pub struct EpisodeSampler<'a> {
    ds: &'a Dataset,
    spec: EpisodeSpec,
    pools: Pools,
    combos: Option<Vec<Vec<usize>>>,
}

impl<'a> EpisodeSampler<'a> {
    /// Builds the capped pools and the allowed combination list. `rng` is
    /// consumed only here for random pool subsampling and combination draws.
    pub fn new<R: Rng + ?Sized>(
        ds: &'a Dataset,
        spec: EpisodeSpec,
        limits: PoolLimits,
        rng: &mut R,
    ) -> Result<Self> {
        if ds.num_classes() < spec.n_way {
            return Err(Error::Infeasible(format!(
                "{}-way episodes need at least {} classes, dataset has {}",
                spec.n_way,
                spec.n_way,
                ds.num_classes()
            )));
        }
        let pools = if limits.has_item_caps() {
            let mut support = Vec::with_capacity(ds.num_classes());
            let mut query = Vec::with_capacity(ds.num_classes());
            let mut clamped = 0;
            for c in 0..ds.num_classes() {
                let n = ds.class_images(c).len();
                let mut order: Vec<usize> = (0..n).collect();
                if limits.mode == PoolMode::Random {
                    order.shuffle(rng);
                }
                let (s, q) = match (limits.support_cap, limits.query_cap) {
                    (Some(sc), qc) => {
                        let s = sc.min(n);
                        let q = qc.unwrap_or(usize::MAX).min(n - s);
                        if sc > n || qc.is_some_and(|qc| qc > n - s) {
                            clamped += 1;
                        }
                        (s, q)
                    }
                    (None, Some(qc)) => {
                        let q = qc.min(n);
                        if qc > n {
                            clamped += 1;
                        }
                        (n - q, q)
                    }
                    (None, None) => unreachable!("item caps present"),
                };
                if s < spec.k_shot || q < spec.q_query {
                    return Err(Error::Infeasible(format!(
                        "class '{}' has support pool {s} and query pool {q}, need {} and {}",
                        ds.class_ids()[c],
                        spec.k_shot,
                        spec.q_query
                    )));
                }
                // query is carved from the end when only the query cap is set
                let (sup, qry) = if limits.support_cap.is_some() {
                    (order[..s].to_vec(), order[s..s + q].to_vec())
                } else {
                    (order[..s].to_vec(), order[s..].to_vec())
                };
                support.push(sup);
                query.push(qry);
            }
            if clamped > 0 {
                log::warn!("pool caps exceed available images in {clamped} classes; clamped to pool size");
            }
            Pools::Split { support, query }
        } else {
            let need = spec.k_shot + spec.q_query;
            if ds.min_class_size() < need {
                return Err(Error::Infeasible(format!(
                    "every class needs {need} images, smallest has {}",
                    ds.min_class_size()
                )));
            }
            Pools::Shared
        };
        let combos = match limits.task_cap {
            Some(cap) => Some(enumerate_task_combinations(ds.num_classes(), spec.n_way, cap, rng)?),
            None => None,
        };
        Ok(Self {
            ds,
            spec,
            pools,
            combos,
        })
    }

    pub fn spec(&self) -> EpisodeSpec {
        self.spec
    }

    pub fn combinations(&self) -> Option<&[Vec<usize>]> {
        self.combos.as_deref()
    }

    /// Support pool indices of class `c` (all images when uncapped).
    pub fn support_pool(&self, c: usize) -> Vec<usize> {
        match &self.pools {
            Pools::Shared => (0..self.ds.class_images(c).len()).collect(),
            Pools::Split { support, .. } => support[c].clone(),
        }
    }

    pub fn query_pool(&self, c: usize) -> Vec<usize> {
        match &self.pools {
            Pools::Shared => (0..self.ds.class_images(c).len()).collect(),
            Pools::Split { query, .. } => query[c].clone(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Episode {
        let EpisodeSpec {
            n_way,
            k_shot,
            q_query,
        } = self.spec;
        let mut classes = match &self.combos {
            Some(list) => list[rng.random_range(0..list.len())].clone(),
            None => index::sample(rng, self.ds.num_classes(), n_way).into_vec(),
        };
        classes.shuffle(rng);

        let mut ep = Episode {
            support: Vec::with_capacity(n_way * k_shot),
            query: Vec::with_capacity(n_way * q_query),
            class_map: classes.clone(),
            support_items: Vec::with_capacity(n_way * k_shot),
            query_items: Vec::with_capacity(n_way * q_query),
        };
        for (label, &c) in classes.iter().enumerate() {
            let (sup, qry): (Vec<usize>, Vec<usize>) = match &self.pools {
                Pools::Shared => {
                    let n = self.ds.class_images(c).len();
                    let picked = index::sample(rng, n, k_shot + q_query).into_vec();
                    (picked[..k_shot].to_vec(), picked[k_shot..].to_vec())
                }
                Pools::Split { support, query } => {
                    let s = index::sample(rng, support[c].len(), k_shot)
                        .into_iter()
                        .map(|i| support[c][i])
                        .collect();
                    let q = index::sample(rng, query[c].len(), q_query)
                        .into_iter()
                        .map(|i| query[c][i])
                        .collect();
                    (s, q)
                }
            };
            for i in sup {
                ep.support.push((self.ds.image(c, i).clone(), label));
                ep.support_items.push((c, i));
            }
            for i in qry {
                ep.query.push((self.ds.image(c, i).clone(), label));
                ep.query_items.push((c, i));
            }
        }
        ep
    }
}

/// Builds a sampler and draws one episode from it.
pub fn sample_episode<R: Rng + ?Sized>(
    ds: &Dataset,
    spec: EpisodeSpec,
    limits: PoolLimits,
    rng: &mut R,
) -> Result<Episode> {
    Ok(EpisodeSampler::new(ds, spec, limits, rng)?.sample(rng))
}

/// Adds 90°, 180° and 270° rotated copies of every class as new classes,
/// after the originals. Images must be square so all classes keep one shape.
pub fn task_augment_rotation(ds: &Dataset) -> Result<Dataset> {
    let (_, h, w) = ds.image_dims();
    if h != w {
        return Err(Error::geometry(format!(
            "rotation task augmentation needs square images, got {h}×{w}"
        )));
    }
    let mut classes = Vec::with_capacity(4 * ds.num_classes());
    for turns in 0..4u32 {
        for (c, id) in ds.class_ids().iter().enumerate() {
            let imgs = ds.class_images(c).iter().map(|im| rotate90(im, turns)).collect();
            let id = if turns == 0 {
                id.clone()
            } else {
                format!("{id}_rot{}", 90 * turns)
            };
            classes.push((id, imgs));
        }
    }
    Dataset::new(ds.split(), classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::Image;
    use crate::episodes::Split;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(classes: usize, per_class: usize) -> Dataset {
        Dataset::new(
            Split::Train,
            (0..classes)
                .map(|c| {
                    let imgs = (0..per_class)
                        .map(|i| Image::filled(1, 2, 2, (c * per_class + i) as f64 / (classes * per_class) as f64))
                        .collect();
                    (format!("c{c}"), imgs)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(10, 5), 252);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(64, 32), 1832624140942590534);
        assert_eq!(all_combinations(10, 5).len(), 252);
    }

    #[test]
    fn full_enumeration_hits_each_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut combos = enumerate_task_combinations(6, 3, 20, &mut rng).unwrap();
        combos.sort();
        combos.dedup();
        assert_eq!(combos.len(), 20);
        assert!(enumerate_task_combinations(6, 3, 21, &mut rng).is_err());
        assert!(enumerate_task_combinations(3, 4, 1, &mut rng).is_err());
    }

    #[test]
    fn large_space_uses_rejection() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let combos = enumerate_task_combinations(64, 20, 50, &mut rng).unwrap();
        let set: HashSet<_> = combos.iter().cloned().collect();
        assert_eq!(set.len(), 50);
        assert!(combos.iter().all(|c| c.windows(2).all(|w| w[0] < w[1])));
    }

    #[test]
    fn minimal_episode() {
        let ds = tiny(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ep = sample_episode(&ds, EpisodeSpec::new(1, 1, 1).unwrap(), PoolLimits::full(), &mut rng).unwrap();
        assert_eq!((ep.support.len(), ep.query.len()), (1, 1));
        assert!(ep.is_disjoint());
    }

    #[test]
    fn infeasible_specs() {
        let ds = tiny(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = EpisodeSpec::new(4, 1, 1).unwrap();
        assert!(matches!(sample_episode(&ds, spec, PoolLimits::full(), &mut rng), Err(Error::Infeasible(_))));
        let spec = EpisodeSpec::new(2, 2, 1).unwrap();
        assert!(matches!(sample_episode(&ds, spec, PoolLimits::full(), &mut rng), Err(Error::Infeasible(_))));
        assert!(EpisodeSpec::new(0, 1, 1).is_err());
    }

    #[test]
    fn fixed_caps_take_leading_images() {
        let ds = tiny(4, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let limits = PoolLimits {
            support_cap: Some(3),
            query_cap: Some(4),
            task_cap: None,
            mode: PoolMode::Fixed,
        };
        let s = EpisodeSampler::new(&ds, EpisodeSpec::new(2, 1, 2).unwrap(), limits, &mut rng).unwrap();
        assert_eq!(s.support_pool(0), vec![0, 1, 2]);
        assert_eq!(s.query_pool(0), vec![3, 4, 5, 6]);
    }

    #[test]
    fn query_only_cap_leaves_rest_for_support() {
        let ds = tiny(2, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let limits = PoolLimits {
            query_cap: Some(2),
            mode: PoolMode::Fixed,
            ..PoolLimits::full()
        };
        let s = EpisodeSampler::new(&ds, EpisodeSpec::new(2, 1, 1).unwrap(), limits, &mut rng).unwrap();
        assert_eq!(s.support_pool(1), vec![0, 1, 2, 3]);
        assert_eq!(s.query_pool(1), vec![4, 5]);
    }

    #[test]
    fn oversize_caps_are_clamped() {
        let ds = tiny(2, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let limits = PoolLimits {
            support_cap: Some(4),
            query_cap: Some(500),
            ..PoolLimits::full()
        };
        let s = EpisodeSampler::new(&ds, EpisodeSpec::new(2, 1, 2).unwrap(), limits, &mut rng).unwrap();
        assert_eq!(s.query_pool(0).len(), 2);
        let limits = PoolLimits {
            support_cap: Some(6),
            ..PoolLimits::full()
        };
        assert!(EpisodeSampler::new(&ds, EpisodeSpec::new(2, 1, 1).unwrap(), limits, &mut rng).is_err());
    }

    #[test]
    fn rotation_quadruples_classes() {
        let ds = tiny(8, 3);
        let rot = task_augment_rotation(&ds).unwrap();
        assert_eq!(rot.num_classes(), 32);
        assert_eq!(rot.total_images(), 4 * ds.total_images());
        for c in 0..8 {
            assert_eq!(rot.class_images(c), ds.class_images(c));
        }
        let rect = Dataset::new(Split::Train, vec![("a".into(), vec![Image::filled(1, 2, 3, 0.0)])]).unwrap();
        assert!(task_augment_rotation(&rect).is_err());
    }
}
