use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub d_img: usize,
    pub d_txt: usize,
    pub k: usize,
    pub class_names: Vec<String>,
    pub subgroup_names: Vec<String>,
    /// One name per text slot, class slots included.
    pub attribute_names: Vec<String>,
    /// `class_slot_indices[c]` is the text slot that marks class `c`.
    pub class_slot_indices: Vec<usize>,
    /// Written by `save_dataset`; checked on load when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<usize>,
}

impl DatasetHeader {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.format_version != DATASET_FORMAT_VERSION {
            return fail(format!("unsupported dataset format version {}", self.format_version));
        }
        if self.d_img == 0 || self.d_txt == 0 || self.k < 2 {
            return fail("d_img and d_txt must be ≥ 1 and k ≥ 2".into());
        }
        if self.class_names.len() != self.k || self.class_slot_indices.len() != self.k {
            return fail(format!("expected {} class names and class slots", self.k));
        }
        if self.attribute_names.len() != self.d_txt {
            return fail(format!(
                "attribute_names has {} entries but d_txt is {}",
                self.attribute_names.len(),
                self.d_txt
            ));
        }
        if self.subgroup_names.is_empty() {
            return fail("no subgroups declared".into());
        }
        for names in [&self.class_names, &self.subgroup_names, &self.attribute_names] {
            let mut seen = std::collections::BTreeSet::new();
            if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
                return fail(format!("duplicate name `{dup}`"));
            }
        }
        let mut slots = std::collections::BTreeSet::new();
        for &s in &self.class_slot_indices {
            if s >= self.d_txt || !slots.insert(s) {
                return fail(format!("invalid class slot index {s}"));
            }
        }
        Ok(())
    }

    pub fn subgroup_index(&self, name: &str) -> Option<usize> {
        self.subgroup_names.iter().position(|n| n == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub image_features: Vec<f64>,
    pub text_attributes: Vec<f64>,
    pub class_label: usize,
    pub subgroup: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(header: DatasetHeader, samples: Vec<Sample>) -> Result<Self> {
        header.validate()?;
        let ds = Self { header, samples };
        for (i, s) in ds.samples.iter().enumerate() {
            ds.check_sample(s).map_err(|e| match e {
                Error::Dimension { context, expected, found } => Error::Dimension {
                    context: format!("sample {i} {context}"),
                    expected,
                    found,
                },
                other => other,
            })?;
        }
        Ok(ds)
    }

    fn check_sample(&self, s: &Sample) -> Result<()> {
        let h = &self.header;
        if s.image_features.len() != h.d_img {
            return Err(Error::Dimension {
                context: "image_features".into(),
                expected: h.d_img,
                found: s.image_features.len(),
            });
        }
        if s.text_attributes.len() != h.d_txt {
            return Err(Error::Dimension {
                context: "text_attributes".into(),
                expected: h.d_txt,
                found: s.text_attributes.len(),
            });
        }
        if s.class_label >= h.k {
            return Err(Error::InvalidArgument(format!("class_label {} ≥ k = {}", s.class_label, h.k)));
        }
        if h.subgroup_index(&s.subgroup).is_none() {
            return Err(Error::InvalidArgument(format!("undeclared subgroup `{}`", s.subgroup)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Image feature rows for `indices`, as `[n, d_img]`.
    pub fn image_matrix(&self, indices: &[usize]) -> Result<Tensor> {
        let data = indices
            .iter()
            .flat_map(|&i| self.samples[i].image_features.iter().copied())
            .collect();
        Tensor::new(&[indices.len(), self.header.d_img], data)
    }

    pub fn all_images(&self) -> Result<Tensor> {
        self.image_matrix(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.samples[i].class_label).collect()
    }

    /// Sample counts per subgroup, in header order.
    pub fn subgroup_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> =
            self.header.subgroup_names.iter().map(|n| (n.clone(), 0)).collect();
        for s in &self.samples {
            *counts.entry(s.subgroup.clone()).or_default() += 1;
        }
        counts
    }

    /// Same samples with every text attribute replaced by `f(old)`.
    pub fn map_text(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.text_attributes.iter_mut().for_each(|v| *v = f(*v));
        }
        out
    }
}

/// Writes the header line followed by one sample per line.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(dataset, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(dataset: &Dataset, w: &mut W) -> Result<()> {
    let mut header = dataset.header.clone();
    header.sample_count = Some(dataset.samples.len());
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    for s in &dataset.samples {
        serde_json::to_writer(&mut *w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate();
    let header: DatasetHeader = loop {
        let Some((i, line)) = lines.next() else {
            return Err(Error::Parse {
                line: 1,
                message: "missing header record".into(),
            });
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        break serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("bad header: {e}"),
        })?;
    };
    header.validate()?;

    let mut ds = Dataset {
        header,
        samples: Vec::new(),
    };
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        ds.check_sample(&sample).map_err(|e| match e {
            Error::Dimension { context, expected, found } => Error::Dimension {
                context: format!("line {} {context}", i + 1),
                expected,
                found,
            },
            other => Error::Parse {
                line: i + 1,
                message: other.to_string(),
            },
        })?;
        ds.samples.push(sample);
    }
    if let Some(n) = ds.header.sample_count {
        if n != ds.samples.len() {
            return Err(Error::Parse {
                line: ds.samples.len() + 2,
                message: format!("header declares {n} samples, file holds {}", ds.samples.len()),
            });
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> Dataset {
        let header = DatasetHeader {
            format_version: DATASET_FORMAT_VERSION,
            d_img: 3,
            d_txt: 4,
            k: 2,
            class_names: vec!["female".into(), "male".into()],
            subgroup_names: vec!["a".into(), "b".into()],
            attribute_names: vec!["class:female".into(), "class:male".into(), "smiling".into(), "hat".into()],
            class_slot_indices: vec![0, 1],
            sample_count: None,
        };
        let samples = vec![
            Sample {
                id: "s0".into(),
                image_features: vec![0.1, 1.0 / 3.0, -2.5e-17],
                text_attributes: vec![1.0, 0.0, 1.0, 0.0],
                class_label: 0,
                subgroup: "a".into(),
            },
            Sample {
                id: "s1".into(),
                image_features: vec![std::f64::consts::PI, -0.0, 7.0],
                text_attributes: vec![0.0, 1.0, 0.0, 1.0],
                class_label: 1,
                subgroup: "b".into(),
            },
        ];
        Dataset::new(header, samples).unwrap()
    }

    fn to_string(ds: &Dataset) -> String {
        let mut buf = Vec::new();
        write_dataset(ds, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ds = tiny();
        let text = to_string(&ds);
        let back = read_dataset(text.as_bytes()).unwrap();
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.image_features), bits(&b.image_features));
        }
        assert_eq!(back.samples, ds.samples);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let text = to_string(&tiny());
        let cut = &text[..text.len() - 20];
        assert!(read_dataset(cut.as_bytes()).is_err());
        // dropping a whole record is caught by the declared count
        let first_two: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_dataset(first_two.as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn short_record_names_its_line() {
        let mut ds = tiny();
        ds.header.sample_count = None;
        let mut text = to_string(&ds);
        text.push_str(r#"{"id":"bad","image_features":[1,2],"text_attributes":[0,0,0,0],"class_label":0,"subgroup":"a"}"#);
        text.push('\n');
        let text = text.replacen(r#","sample_count":2"#, "", 1);
        match read_dataset(text.as_bytes()) {
            Err(Error::Dimension { context, expected: 3, found: 2 }) => assert!(context.contains("line 4"), "{context}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_record_names_its_line() {
        let text = to_string(&tiny());
        let broken = text.replacen(r#""id":"s1""#, r#""id":s1"#, 1);
        match read_dataset(broken.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_validation() {
        let mut h = tiny().header;
        h.class_slot_indices = vec![0, 9];
        assert!(h.validate().is_err());
        let mut h = tiny().header;
        h.subgroup_names = vec!["a".into(), "a".into()];
        assert!(h.validate().is_err());
    }
}
