use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{with_class, DatasetHeader, Sample};
use crate::error::{Error, Result};

/// One caption paired with an image from the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ItmPair {
    /// Position of the image within the batch.
    pub image_index: usize,
    pub caption: Vec<f64>,
    /// 1 when the caption names the image's true class.
    pub y_match: u8,
}

/// Two pairs per sample: its own caption (matched) and the same caption
/// with the class slot moved to a wrong class (unmatched). Pair order is
/// shuffled with `rng`.
pub fn make_itm_pairs<R: Rng + ?Sized>(header: &DatasetHeader, batch: &[&Sample], rng: &mut R) -> Result<Vec<ItmPair>> {
    let mut pairs = Vec::with_capacity(2 * batch.len());
    for (i, s) in batch.iter().enumerate() {
        let marked = header
            .class_slot_indices
            .iter()
            .any(|&slot| s.text_attributes.get(slot).is_some_and(|&v| v > 0.0));
        if !marked {
            return Err(Error::InvalidArgument(format!("sample `{}` has no class slot set in its caption", s.id)));
        }
        let mut wrong = rng.gen_range(0..header.k - 1);
        if wrong >= s.class_label {
            wrong += 1;
        }
        pairs.push(ItmPair {
            image_index: i,
            caption: s.text_attributes.clone(),
            y_match: 1,
        });
        pairs.push(ItmPair {
            image_index: i,
            caption: with_class(header, &s.text_attributes, wrong)?,
            y_match: 0,
        });
    }
    pairs.shuffle(rng);
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::{generate_synthetic, SynthSpec};

    #[test]
    fn construction() {
        let splits = generate_synthetic(&SynthSpec::default()).unwrap();
        let header = &splits.train.header;
        let batch: Vec<&Sample> = splits.train.samples.iter().take(3).collect();
        let pairs = make_itm_pairs(header, &batch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(pairs.len(), 6);
        assert_eq!(pairs.iter().filter(|p| p.y_match == 1).count(), 3);
        for i in 0..3 {
            let pos = pairs.iter().find(|p| p.image_index == i && p.y_match == 1).unwrap();
            let neg = pairs.iter().find(|p| p.image_index == i && p.y_match == 0).unwrap();
            let diff: Vec<usize> = (0..header.d_txt).filter(|&j| pos.caption[j] != neg.caption[j]).collect();
            assert_eq!(diff, header.class_slot_indices);
        }
    }

    #[test]
    fn seeded_order() {
        let splits = generate_synthetic(&SynthSpec::default()).unwrap();
        let batch: Vec<&Sample> = splits.train.samples.iter().step_by(7).take(10).collect();
        let a = make_itm_pairs(&splits.train.header, &batch, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = make_itm_pairs(&splits.train.header, &batch, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_class_slot_is_an_error() {
        let splits = generate_synthetic(&SynthSpec::default()).unwrap();
        let mut s = splits.train.samples[0].clone();
        s.text_attributes[0] = 0.0;
        s.text_attributes[1] = 0.0;
        assert!(make_itm_pairs(&splits.train.header, &[&s], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
