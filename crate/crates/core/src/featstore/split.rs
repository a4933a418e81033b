use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::featstore::{Split, StoreError, StoreManifest};

/// Assigns train/val/test labels by image; texts follow their image.
///
/// `fractions` are `(train, val, test)` and must sum to 1. Counts are
/// rounded for train and val; test takes the remainder.
pub fn split_dataset(
    manifest: &StoreManifest,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<StoreManifest, StoreError> {
    let (train, val, test) = fractions;
    if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f))
        || (train + val + test - 1.0).abs() > 1e-9
    {
        return Err(StoreError::Config(format!(
            "split fractions must be in [0,1] and sum to 1, got ({train}, {val}, {test})"
        )));
    }
    let mut images: Vec<&str> = manifest.pairs.iter().map(|p| p.image_id.as_str()).collect();
    images.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = images.len();
    let n_train = ((train * n as f64).round() as usize).min(n);
    let n_val = ((val * n as f64).round() as usize).min(n - n_train);

    let mut label: BTreeMap<&str, Split> = BTreeMap::new();
    for (k, id) in images.iter().enumerate() {
        let s = if k < n_train {
            Split::Train
        } else if k < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        label.insert(id, s);
    }
    for p in &manifest.pairs {
        let s = label[p.image_id.as_str()];
        for t in &p.text_ids {
            label.insert(t.as_str(), s);
        }
    }

    let mut out = manifest.clone();
    for item in &mut out.items {
        item.split = label.get(item.id.as_str()).copied();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featstore::{generate_synthetic, Modality, SyntheticConfig};

    fn manifest(images: usize, texts: usize) -> StoreManifest {
        let cfg = SyntheticConfig {
            images,
            texts_per_image: texts,
            latent_dim: 2,
            ..Default::default()
        };
        generate_synthetic(&cfg).unwrap().1
    }

    fn count(m: &StoreManifest, s: Split) -> usize {
        m.items
            .iter()
            .filter(|i| i.modality == Modality::Image && i.split == Some(s))
            .count()
    }

    #[test]
    fn all_train() {
        let m = split_dataset(&manifest(10, 1), (1.0, 0.0, 0.0), 1).unwrap();
        assert!(m.items.iter().all(|i| i.split == Some(Split::Train)));
    }

    #[test]
    fn eighty_ten_ten() {
        let m = split_dataset(&manifest(100, 1), (0.8, 0.1, 0.1), 9).unwrap();
        assert_eq!(count(&m, Split::Train), 80);
        assert_eq!(count(&m, Split::Val), 10);
        assert_eq!(count(&m, Split::Test), 10);
    }

    #[test]
    fn texts_follow_their_image() {
        let m = split_dataset(&manifest(30, 5), (0.5, 0.25, 0.25), 4).unwrap();
        let splits = m.split_of();
        for p in &m.pairs {
            let s = splits[p.image_id.as_str()];
            assert!(s.is_some());
            for t in &p.text_ids {
                assert_eq!(splits[t.as_str()], s);
            }
        }
    }

    #[test]
    fn bad_fractions() {
        assert!(split_dataset(&manifest(4, 1), (0.5, 0.5, 0.5), 0).is_err());
    }
}
