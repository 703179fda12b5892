//! Synthetic multimodal data with controllable per-subgroup difficulty.
//!
//! Image features are Gaussian around a class mean plus a subgroup offset
//! and a linear embedding of the sample's latent attributes. Captions are the
//! latent attributes with independent flips, plus the true class slot.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetHeader, Sample, DATASET_FORMAT_VERSION};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubgroupSpec {
    pub name: String,
    pub count: usize,
    /// Probability of each class within the subgroup.
    pub class_prior: Vec<f64>,
    /// Scale of the class mean vectors.
    pub separation: f64,
    /// Standard deviation of isotropic feature noise.
    pub noise: f64,
    /// Length of the subgroup's mean offset.
    #[serde(default)]
    pub offset: f64,
    /// Per-attribute caption flip probability.
    pub flip_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub d_img: usize,
    pub class_names: Vec<String>,
    /// Descriptive attributes; class slots are added in front.
    pub attribute_names: Vec<String>,
    /// Weight of the latent attributes in the image features.
    pub attribute_signal: f64,
    pub subgroups: Vec<SubgroupSpec>,
}

impl Default for SynthSpec {
    /// Two classes over three groups; group `c` is a minority with half the
    /// samples and three times the feature noise.
    fn default() -> Self {
        let cell = |group: &str, class: usize, count: usize, noise: f64| SubgroupSpec {
            name: format!("{group}_{}", ["f", "m"][class]),
            count,
            class_prior: if class == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] },
            separation: 1.0,
            noise,
            offset: 0.5,
            flip_prob: 0.1,
        };
        let mut subgroups = Vec::new();
        for (group, count, noise) in [("a", 4000, 1.0), ("b", 4000, 1.0), ("c", 2000, 3.0)] {
            subgroups.push(cell(group, 0, count, noise));
            subgroups.push(cell(group, 1, count, noise));
        }
        Self {
            seed: 0,
            d_img: 16,
            class_names: vec!["female".into(), "male".into()],
            attribute_names: [
                "smiling",
                "eyeglasses",
                "wearing_hat",
                "young",
                "bangs",
                "wavy_hair",
                "heavy_makeup",
                "goatee",
                "big_nose",
                "pale_skin",
            ]
            .map(String::from)
            .to_vec(),
            attribute_signal: 0.5,
            subgroups,
        }
    }
}

/// Train, validation and test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_img == 0 || self.class_names.len() < 2 || self.subgroups.is_empty() {
            return fail("need d_img ≥ 1, at least two classes and one subgroup".into());
        }
        for g in &self.subgroups {
            if g.count == 0 {
                return fail(format!("subgroup `{}` has zero samples", g.name));
            }
            if g.class_prior.len() != self.class_names.len()
                || g.class_prior.iter().any(|p| !(*p >= 0.0))
                || (g.class_prior.iter().sum::<f64>() - 1.0).abs() > 1e-9
            {
                return fail(format!("subgroup `{}` class prior must be a distribution over {} classes", g.name, self.class_names.len()));
            }
            if !(g.noise >= 0.0) || !(g.offset >= 0.0) || !g.separation.is_finite() {
                return fail(format!("subgroup `{}`: noise and offset must be ≥ 0", g.name));
            }
            if !(0.0..0.5).contains(&g.flip_prob) {
                return fail(format!("subgroup `{}`: flip_prob {} outside [0, 0.5)", g.name, g.flip_prob));
            }
        }
        Ok(())
    }

    pub fn header(&self) -> DatasetHeader {
        let k = self.class_names.len();
        let attribute_names = self
            .class_names
            .iter()
            .map(|c| format!("class:{c}"))
            .chain(self.attribute_names.iter().cloned())
            .collect::<Vec<_>>();
        DatasetHeader {
            format_version: DATASET_FORMAT_VERSION,
            d_img: self.d_img,
            d_txt: attribute_names.len(),
            k,
            class_names: self.class_names.clone(),
            subgroup_names: self.subgroups.iter().map(|g| g.name.clone()).collect(),
            attribute_names,
            class_slot_indices: (0..k).collect(),
            sample_count: None,
        }
    }

    /// Degenerate subgroups (no class separation and no noise) are allowed
    /// but reported here.
    pub fn warnings(&self) -> Vec<String> {
        self.subgroups
            .iter()
            .filter(|g| g.separation == 0.0 && g.noise == 0.0)
            .map(|g| format!("subgroup `{}` has zero separation and zero noise", g.name))
            .collect()
    }
}

fn unit_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generates all samples and splits them 70/15/15, stratified by
/// subgroup × class. Fully determined by `spec.seed`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Splits> {
    spec.validate()?;
    let header = spec.header();
    let k = header.k;
    let n_attr = spec.attribute_names.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let class_dirs: Vec<Vec<f64>> = (0..k).map(|_| unit_vector(spec.d_img, &mut rng)).collect();
    let attr_dirs: Vec<Vec<f64>> = (0..n_attr).map(|_| unit_vector(spec.d_img, &mut rng)).collect();
    let group_dirs: Vec<Vec<f64>> = spec.subgroups.iter().map(|_| unit_vector(spec.d_img, &mut rng)).collect();
    // attribute probability = base + class effect + subgroup effect
    let base: Vec<f64> = (0..n_attr).map(|_| rng.gen_range(0.25..0.75)).collect();
    let class_effect: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..n_attr).map(|j| if j % 3 == 0 { rng.gen_range(-0.3..0.3) } else { 0.0 }).collect())
        .collect();
    let group_effect: Vec<Vec<f64>> = spec
        .subgroups
        .iter()
        .map(|_| (0..n_attr).map(|j| if j % 3 == 1 { rng.gen_range(-0.2..0.2) } else { 0.0 }).collect())
        .collect();

    // cells[g][c] holds the samples of subgroup g with class c
    let mut cells: Vec<Vec<Vec<Sample>>> = vec![vec![Vec::new(); k]; spec.subgroups.len()];
    for (gi, g) in spec.subgroups.iter().enumerate() {
        for i in 0..g.count {
            let u: f64 = rng.gen();
            let mut class = k - 1;
            let mut acc = 0.0;
            for (c, p) in g.class_prior.iter().enumerate() {
                acc += p;
                if u < acc {
                    class = c;
                    break;
                }
            }
            let latent: Vec<bool> = (0..n_attr)
                .map(|j| {
                    let p = (base[j] + class_effect[class][j] + group_effect[gi][j]).clamp(0.05, 0.95);
                    rng.gen_bool(p)
                })
                .collect();
            let mut image = vec![0.0; spec.d_img];
            for (d, x) in image.iter_mut().enumerate() {
                let mut v = g.separation * class_dirs[class][d] + g.offset * group_dirs[gi][d];
                for (j, &on) in latent.iter().enumerate() {
                    if on {
                        v += spec.attribute_signal * attr_dirs[j][d];
                    }
                }
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = v + g.noise * z;
            }
            let mut text = vec![0.0; header.d_txt];
            text[header.class_slot_indices[class]] = 1.0;
            for (j, &on) in latent.iter().enumerate() {
                let flipped = rng.gen_bool(g.flip_prob);
                text[k + j] = if on != flipped { 1.0 } else { 0.0 };
            }
            cells[gi][class].push(Sample {
                id: format!("{}-{i:05}", g.name),
                image_features: image,
                text_attributes: text,
                class_label: class,
                subgroup: g.name.clone(),
            });
        }
    }

    let flat: Vec<Vec<Sample>> = cells.into_iter().flatten().filter(|c| !c.is_empty()).collect();
    let sizes: Vec<usize> = flat.iter().map(Vec::len).collect();
    let train_q = apportion(&sizes, 0.70, None);
    let remaining: Vec<usize> = sizes.iter().zip(&train_q).map(|(n, t)| n - t).collect();
    let val_q = apportion(&sizes, 0.15, Some(&remaining));

    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for ((mut cell, nt), nv) in flat.into_iter().zip(train_q).zip(val_q) {
        cell.shuffle(&mut rng);
        let rest = cell.split_off(nt);
        train.extend(cell);
        let mut rest = rest;
        let tail = rest.split_off(nv);
        val.extend(rest);
        test.extend(tail);
    }

    Ok(Splits {
        train: Dataset::new(header.clone(), train)?,
        val: Dataset::new(header.clone(), val)?,
        test: Dataset::new(header, test)?,
    })
}

/// Largest-remainder apportionment of `round(frac · Σ sizes)` across cells,
/// each quota within one of `frac · size` and at most `cap`.
fn apportion(sizes: &[usize], frac: f64, cap: Option<&[usize]>) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let target = (frac * total as f64).round() as usize;
    let limit = |i: usize| cap.map_or(sizes[i], |c| c[i]);
    let mut quota: Vec<usize> = sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| ((frac * n as f64).floor() as usize).min(limit(i)))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    let rem = |i: usize| frac * sizes[i] as f64 - (frac * sizes[i] as f64).floor();
    order.sort_by(|&a, &b| rem(b).total_cmp(&rem(a)).then(a.cmp(&b)));
    let mut assigned: usize = quota.iter().sum();
    for &i in order.iter().cycle().take(order.len()) {
        if assigned >= target {
            break;
        }
        if quota[i] < limit(i) && rem(i) > 0.0 {
            quota[i] += 1;
            assigned += 1;
        }
    }
    quota
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::data::write_dataset;

    fn four_by_hundred() -> SynthSpec {
        let subgroups = ["w", "x", "y", "z"]
            .iter()
            .map(|n| SubgroupSpec {
                name: n.to_string(),
                count: 100,
                class_prior: vec![0.5, 0.5],
                separation: 1.0,
                noise: 1.0,
                offset: 0.3,
                flip_prob: 0.1,
            })
            .collect();
        SynthSpec {
            subgroups,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn split_sizes() {
        let s = generate_synthetic(&four_by_hundred()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (280, 60, 60));
    }

    #[test]
    fn default_split_sizes() {
        let s = generate_synthetic(&SynthSpec::default()).unwrap();
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 20000);
        assert_eq!((s.train.len(), s.val.len()), (14000, 3000));
    }

    #[test]
    fn stratification_within_one_per_cell() {
        let spec = four_by_hundred();
        let s = generate_synthetic(&spec).unwrap();
        let count = |ds: &Dataset| {
            let mut m: BTreeMap<(String, usize), usize> = BTreeMap::new();
            for x in &ds.samples {
                *m.entry((x.subgroup.clone(), x.class_label)).or_default() += 1;
            }
            m
        };
        let (tr, va, te) = (count(&s.train), count(&s.val), count(&s.test));
        for (cell, &n_tr) in &tr {
            let n_va = va.get(cell).copied().unwrap_or(0);
            let n_te = te.get(cell).copied().unwrap_or(0);
            let n = (n_tr + n_va + n_te) as f64;
            assert!((n_tr as f64 - 0.70 * n).abs() <= 1.0, "{cell:?}");
            assert!((n_va as f64 - 0.15 * n).abs() <= 1.0, "{cell:?}");
            assert!((n_te as f64 - 0.15 * n).abs() <= 1.0 + 1e-9, "{cell:?}");
        }
    }

    fn bytes(ds: &Dataset) -> Vec<u8> {
        let mut b = Vec::new();
        write_dataset(ds, &mut b).unwrap();
        b
    }

    #[test]
    fn seeded_reproducibility() {
        let spec = SynthSpec::default();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(bytes(&a.train), bytes(&b.train));
        assert_eq!(bytes(&a.test), bytes(&b.test));
        let other = generate_synthetic(&SynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(bytes(&a.train), bytes(&other.train));
    }

    #[test]
    fn captions_carry_true_class() {
        let s = generate_synthetic(&SynthSpec::default()).unwrap();
        for x in s.train.samples.iter().chain(&s.test.samples) {
            assert_eq!(x.text_attributes[x.class_label], 1.0);
            assert_eq!(x.text_attributes[..2].iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn invalid_specs() {
        let mut spec = SynthSpec::default();
        spec.subgroups[0].flip_prob = 0.6;
        assert!(generate_synthetic(&spec).is_err());
        let mut spec = SynthSpec::default();
        spec.subgroups[0].count = 0;
        assert!(spec.validate().is_err());
        let mut spec = SynthSpec::default();
        spec.subgroups[0].separation = 0.0;
        spec.subgroups[0].noise = 0.0;
        assert!(spec.validate().is_ok());
        assert_eq!(spec.warnings().len(), 1);
    }
}
