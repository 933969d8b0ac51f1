//! Seeded hold-out splitting and the non-local / mixed / local training-set
//! combinations.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetView, Provenance, SplitTag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64, stratified: bool) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction must lie strictly in (0, 1), got {train_fraction}"
            )));
        }
        Ok(Self {
            train_fraction,
            seed,
            stratified,
        })
    }

    /// `floor(n * train_fraction)`.
    pub fn train_size(&self, n: usize) -> usize {
        (n as f64 * self.train_fraction).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CombinationMode {
    NonLocal,
    Mixed,
    Local,
}

impl CombinationMode {
    pub const ALL: [CombinationMode; 3] = [Self::NonLocal, Self::Mixed, Self::Local];

    pub fn display_name(self) -> &'static str {
        match self {
            Self::NonLocal => "Non-Local",
            Self::Mixed => "Mixed",
            Self::Local => "Local",
        }
    }
}

fn shuffled(mut indices: Vec<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    indices.shuffle(rng);
    indices
}

/// Partitions a view into (train, test). Both outputs keep the view's
/// relative order; membership is decided by a seeded shuffle.
pub fn split_holdout(view: &DatasetView, spec: &SplitSpec) -> Result<(DatasetView, DatasetView)> {
    let n = view.len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "hold-out split needs at least 2 samples, got {n}"
        )));
    }
    let target = spec.train_size(n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut in_train = vec![false; n];
    if spec.stratified {
        let labels = view.labels();
        let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_label.entry(l).or_default().push(i);
        }
        for label in 0..view.arity() {
            if !by_label.contains_key(&label) {
                return Err(Error::Validation(format!(
                    "stratified split: label {label} has no samples"
                )));
            }
        }
        let quotas = stratum_quotas(&by_label, spec.train_fraction, target);
        for ((_, members), quota) in by_label.into_iter().zip(quotas) {
            for i in shuffled(members, &mut rng).into_iter().take(quota) {
                in_train[i] = true;
            }
        }
    } else {
        for i in shuffled((0..n).collect(), &mut rng).into_iter().take(target) {
            in_train[i] = true;
        }
    }

    let (train, test): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| in_train[i]);
    Ok((view.select(&train, SplitTag::Train), view.select(&test, SplitTag::Test)))
}

/// Per-stratum train counts: floors of the proportional share, with the
/// remainder handed to the largest fractional parts (lowest label on ties).
fn stratum_quotas(by_label: &BTreeMap<usize, Vec<usize>>, fraction: f64, target: usize) -> Vec<usize> {
    let shares: Vec<f64> = by_label.values().map(|m| m.len() as f64 * fraction).collect();
    let mut quotas: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let sizes: Vec<usize> = by_label.values().map(Vec::len).collect();
    let mut remaining = target.saturating_sub(assigned);
    for &k in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if quotas[k] < sizes[k] {
            quotas[k] += 1;
            remaining -= 1;
        }
    }
    quotas
}

/// Draws a validation subset from a training view: `floor(n * fraction)`
/// samples go to validation, the rest are kept for fitting.
pub fn carve_validation(train: &DatasetView, fraction: f64, seed: u64) -> Result<(DatasetView, DatasetView)> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::Config(format!(
            "validation fraction must lie in (0, 0.5], got {fraction}"
        )));
    }
    if train.is_empty() {
        return Err(Error::Validation("cannot carve validation from an empty view".into()));
    }
    let n = train.len();
    let val_size = (n as f64 * fraction).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_val = vec![false; n];
    for i in shuffled((0..n).collect(), &mut rng).into_iter().take(val_size) {
        in_val[i] = true;
    }
    let (val, fit): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| in_val[i]);
    Ok((train.select(&fit, SplitTag::Train), train.select(&val, SplitTag::Validation)))
}

/// Builds the training set for one combination mode.
pub fn build_combination(
    fakeddit_train: &DatasetView,
    real411_train: &DatasetView,
    mode: CombinationMode,
) -> Result<DatasetView> {
    for (name, view) in [("Fakeddit", fakeddit_train), ("Real411", real411_train)] {
        if view.arity() != 2 {
            return Err(Error::Config(format!(
                "{name} training view must be binary, has arity {}",
                view.arity()
            )));
        }
    }
    let require = |name: &str, view: &DatasetView| {
        if view.is_empty() {
            Err(Error::Validation(format!("{name} training view is empty")))
        } else {
            Ok(())
        }
    };
    match mode {
        CombinationMode::NonLocal => {
            require("Fakeddit", fakeddit_train)?;
            Ok(fakeddit_train.with_split(SplitTag::Train))
        }
        CombinationMode::Local => {
            require("Real411", real411_train)?;
            Ok(real411_train.with_split(SplitTag::Train))
        }
        CombinationMode::Mixed => {
            require("Fakeddit", fakeddit_train)?;
            require("Real411", real411_train)?;
            let samples = fakeddit_train
                .samples()
                .iter()
                .chain(real411_train.samples())
                .cloned()
                .collect();
            DatasetView::new(samples, Provenance::Combined, SplitTag::Train, 2)
        }
    }
}

/// Split membership of every sample, for audit and exact re-runs.
pub fn split_assignment(views: &[&DatasetView]) -> BTreeMap<String, SplitTag> {
    views
        .iter()
        .flat_map(|v| v.iter().map(move |s| (s.id.clone(), v.split())))
        .collect()
}

pub fn write_split_assignment(path: &Path, views: &[&DatasetView]) -> Result<()> {
    let json = serde_json::to_string_pretty(&split_assignment(views))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ImageStatus, Sample, Source};
    use std::collections::HashSet;
    use std::sync::Arc;

    fn view(n: usize, positives: usize) -> DatasetView {
        let samples = (0..n)
            .map(|i| {
                Arc::new(Sample {
                    id: format!("s{i}"),
                    text: String::new(),
                    image_ref: String::new(),
                    label2: Some(u8::from(i < positives)),
                    label3: None,
                    label6: None,
                    source: Source::Fakeddit,
                    category: None,
                    image: ImageStatus::Missing,
                })
            })
            .collect();
        DatasetView::new(samples, Provenance::Fakeddit, SplitTag::Full, 2).unwrap()
    }

    fn id_set(v: &DatasetView) -> HashSet<String> {
        v.iter().map(|s| s.id.clone()).collect()
    }

    #[test]
    fn split_sizes_follow_floor() {
        for stratified in [false, true] {
            let (tr, te) = split_holdout(&view(10, 5), &SplitSpec::new(0.8, 3, stratified).unwrap()).unwrap();
            assert_eq!((tr.len(), te.len()), (8, 2));
        }
        let (tr, te) = split_holdout(&view(5997, 2474), &SplitSpec::new(0.8, 1, true).unwrap()).unwrap();
        assert_eq!((tr.len(), te.len()), (4797, 1200));
        assert_eq!(tr.split(), SplitTag::Train);
        assert_eq!(te.split(), SplitTag::Test);
    }

    #[test]
    fn split_is_deterministic() {
        let v = view(50, 20);
        let spec = SplitSpec::new(0.8, 99, true).unwrap();
        let (a, _) = split_holdout(&v, &spec).unwrap();
        let (b, _) = split_holdout(&v, &spec).unwrap();
        assert_eq!(id_set(&a), id_set(&b));
    }

    #[test]
    fn stratified_split_preserves_proportions() {
        let v = view(1000, 413);
        let (tr, _) = split_holdout(&v, &SplitSpec::new(0.8, 5, true).unwrap()).unwrap();
        let pos = tr.labels().iter().filter(|&&l| l == 1).count() as f64;
        assert!((pos - 413.0 * 0.8).abs() <= 1.0);
        let neg = tr.len() as f64 - pos;
        assert!((neg - 587.0 * 0.8).abs() <= 1.0);
    }

    #[test]
    fn split_errors() {
        assert!(split_holdout(&view(1, 1), &SplitSpec::new(0.8, 0, false).unwrap()).is_err());
        let err = split_holdout(&view(10, 0), &SplitSpec::new(0.8, 0, true).unwrap()).unwrap_err();
        assert!(err.to_string().contains("label 1"));
        assert!(SplitSpec::new(1.0, 0, true).is_err());
        assert!(SplitSpec::new(0.0, 0, true).is_err());
    }

    #[test]
    fn carve_validation_sizes_and_errors() {
        let v = view(100, 50);
        let (fit, val) = carve_validation(&v, 0.1, 4).unwrap();
        assert_eq!((fit.len(), val.len()), (90, 10));
        assert!(id_set(&fit).is_disjoint(&id_set(&val)));
        assert!(id_set(&val).is_subset(&id_set(&v)));
        let (_, val2) = carve_validation(&v, 0.1, 4).unwrap();
        assert_eq!(val.ids(), val2.ids());
        assert!(carve_validation(&v, 0.6, 4).is_err());
        assert!(carve_validation(&v, 0.0, 4).is_err());
    }

    #[test]
    fn combination_counts() {
        let f = view(30, 10).with_split(SplitTag::Train);
        let r_samples: Vec<_> = view(7, 3)
            .iter()
            .map(|s| {
                Arc::new(Sample {
                    id: format!("r-{}", s.id),
                    source: Source::Real411,
                    ..s.clone()
                })
            })
            .collect();
        let r = DatasetView::new(r_samples, Provenance::Real411, SplitTag::Train, 2).unwrap();
        assert_eq!(build_combination(&f, &r, CombinationMode::NonLocal).unwrap().len(), 30);
        let mixed = build_combination(&f, &r, CombinationMode::Mixed).unwrap();
        assert_eq!(mixed.len(), 37);
        assert_eq!(mixed.provenance(), Provenance::Combined);
        assert_eq!(build_combination(&f, &r, CombinationMode::Local).unwrap().len(), 7);
        let empty = DatasetView::empty(Provenance::Real411, SplitTag::Train, 2);
        assert!(build_combination(&f, &empty, CombinationMode::Local).is_err());
        assert!(build_combination(&f, &empty, CombinationMode::NonLocal).is_ok());
    }

    #[test]
    fn seeds_change_partitions() {
        let v = view(20, 10);
        let parts: HashSet<Vec<String>> = (0..10)
            .map(|seed| {
                let (tr, _) = split_holdout(&v, &SplitSpec::new(0.8, seed, false).unwrap()).unwrap();
                tr.ids().into_iter().map(String::from).collect()
            })
            .collect();
        assert!(parts.len() > 1);
    }

    proptest::proptest! {
        #[test]
        fn partition_property(n in 2usize..200, pos_frac in 0.05f64..0.95, frac in 0.05f64..0.95, seed: u64, stratified: bool) {
            let positives = ((n as f64 * pos_frac) as usize).clamp(1, n - 1);
            let v = view(n, positives);
            let spec = SplitSpec::new(frac, seed, stratified).unwrap();
            let (tr, te) = split_holdout(&v, &spec).unwrap();
            proptest::prop_assert_eq!(tr.len(), spec.train_size(n));
            let a = id_set(&tr);
            let b = id_set(&te);
            proptest::prop_assert!(a.is_disjoint(&b));
            proptest::prop_assert_eq!(a.len() + b.len(), n);
            if stratified {
                let pos = tr.labels().iter().filter(|&&l| l == 1).count() as f64;
                proptest::prop_assert!((pos - positives as f64 * frac).abs() <= 1.0 + 1e-9);
            }
        }
    }
}
