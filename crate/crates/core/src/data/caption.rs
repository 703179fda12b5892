//! Attribute captions as multi-hot vectors.

use crate::data::DatasetHeader;
use crate::error::{Error, Result};

/// Multi-hot caption over `header.attribute_names`: each active attribute
/// set to 1, and the slot of `class_label` set (or of the next class,
/// cyclically, when `flip_class`).
pub fn vectorize_caption(header: &DatasetHeader, active: &[&str], class_label: usize, flip_class: bool) -> Result<Vec<f64>> {
    if class_label >= header.k {
        return Err(Error::InvalidArgument(format!("class {class_label} ≥ k = {}", header.k)));
    }
    let mut v = vec![0.0; header.d_txt];
    for name in active {
        let i = header
            .attribute_names
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown attribute `{name}`")))?;
        if header.class_slot_indices.contains(&i) {
            return Err(Error::InvalidArgument(format!("`{name}` is a class slot")));
        }
        v[i] = 1.0;
    }
    let class = if flip_class { (class_label + 1) % header.k } else { class_label };
    v[header.class_slot_indices[class]] = 1.0;
    Ok(v)
}

/// Copy of `text` with the class slots rewritten to mark `class`.
pub fn with_class(header: &DatasetHeader, text: &[f64], class: usize) -> Result<Vec<f64>> {
    if text.len() != header.d_txt {
        return Err(Error::Dimension {
            context: "caption".into(),
            expected: header.d_txt,
            found: text.len(),
        });
    }
    let mut v = text.to_vec();
    for &s in &header.class_slot_indices {
        v[s] = 0.0;
    }
    v[header.class_slot_indices[class]] = 1.0;
    Ok(v)
}

/// Keeps a named subset of attribute slots; class slots are always kept.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeMask {
    pub name: String,
    mask: Vec<f64>,
}

impl AttributeMask {
    pub fn all(header: &DatasetHeader) -> Self {
        Self {
            name: "all".into(),
            mask: vec![1.0; header.d_txt],
        }
    }

    pub fn keep(header: &DatasetHeader, name: &str, keep: &[String]) -> Result<Self> {
        let mut mask = vec![0.0; header.d_txt];
        for &s in &header.class_slot_indices {
            mask[s] = 1.0;
        }
        for attr in keep {
            let i = header
                .attribute_names
                .iter()
                .position(|a| a == attr)
                .ok_or_else(|| Error::Config(format!("mask `{name}`: unknown attribute `{attr}`")))?;
            mask[i] = 1.0;
        }
        Ok(Self {
            name: name.to_string(),
            mask,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.mask
    }

    pub fn apply(&self, text: &[f64]) -> Vec<f64> {
        text.iter().zip(&self.mask).map(|(t, m)| t * m).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DATASET_FORMAT_VERSION;

    fn header() -> DatasetHeader {
        DatasetHeader {
            format_version: DATASET_FORMAT_VERSION,
            d_img: 2,
            d_txt: 5,
            k: 2,
            class_names: vec!["female".into(), "male".into()],
            subgroup_names: vec!["a".into()],
            attribute_names: ["class:female", "class:male", "smiling", "hat", "young"]
                .map(String::from)
                .to_vec(),
            class_slot_indices: vec![0, 1],
            sample_count: None,
        }
    }

    #[test]
    fn empty_caption_sets_only_the_class_slot() {
        let v = vectorize_caption(&header(), &[], 0, false).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn flip_toggles_exactly_the_class_slots() {
        let h = header();
        let a = vectorize_caption(&h, &["hat", "young"], 1, false).unwrap();
        let b = vectorize_caption(&h, &["hat", "young"], 1, true).unwrap();
        let differing: Vec<usize> = (0..5).filter(|&i| a[i] != b[i]).collect();
        assert_eq!(differing, h.class_slot_indices);
    }

    #[test]
    fn unknown_attribute_is_rejected() {
        assert!(vectorize_caption(&header(), &["beard"], 0, false).is_err());
        assert!(vectorize_caption(&header(), &[], 2, false).is_err());
    }

    #[test]
    fn masked_caption_is_elementwise_product() {
        let h = header();
        let mask = AttributeMask::keep(&h, "t3", &["smiling".into()]).unwrap();
        let full = vectorize_caption(&h, &["smiling", "hat", "young"], 1, false).unwrap();
        let masked = mask.apply(&full);
        let product: Vec<f64> = full.iter().zip(mask.weights()).map(|(a, b)| a * b).collect();
        assert_eq!(masked, product);
        assert_eq!(masked, vec![0.0, 1.0, 1.0, 0.0, 0.0]);
    }
}
