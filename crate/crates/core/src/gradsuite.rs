//! Finite-difference checks of every primitive and of each composite the
//! training objectives are built from, at random points.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{generate_synthetic, Dataset, SubgroupSpec, SynthSpec};
use crate::encoders::{self, EncoderSpec};
use crate::error::Result;
use crate::fusion::{self, AttentionParams, FusePipelineParams, ItmHeadParams, TextGenParams};
use crate::losses::{self, LossConfig};
use crate::params::{BoundParams, ParamStore};
use crate::tensor::{grad_check_many_with, GradCheckReport, Graph, Tensor, Var};
use crate::training::{
    assemble_batch, batch_losses, component_weights, weighted_total, ArchConfig, Bound, EncoderChoice, Model,
    ModelConfig, Strategy, TrainConfig,
};

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    /// Random points per case.
    pub points: usize,
    pub seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    /// Break this primitive's backward rule in the analytic pass.
    pub fault: Option<&'static str>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            points: 10,
            seed: 0,
            eps: 1e-5,
            tolerance: 1e-4,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseResult {
    pub name: &'static str,
    pub points: usize,
    pub max_error: f64,
    pub passed: bool,
    pub ops: BTreeSet<&'static str>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn total_points(&self) -> usize {
        self.cases.iter().map(|c| c.points).sum()
    }

    pub fn max_error(&self) -> f64 {
        self.cases.iter().map(|c| c.max_error).fold(0.0, f64::max)
    }

    /// Max error over the cases that record each primitive.
    pub fn per_op_max_error(&self) -> BTreeMap<&'static str, f64> {
        let mut out: BTreeMap<&'static str, f64> = BTreeMap::new();
        for c in &self.cases {
            for &op in &c.ops {
                let e = out.entry(op).or_insert(0.0);
                *e = e.max(c.max_error);
            }
        }
        out
    }

    /// Primitives recorded by every failing primitive case and by no passing
    /// one. Composite cases only count when no primitive case fails.
    pub fn suspect_ops(&self) -> BTreeSet<&'static str> {
        let primitive = |c: &&CaseResult| c.name.starts_with("op:");
        let failing: Vec<&CaseResult> = self.cases.iter().filter(|c| !c.passed).collect();
        let failing_primitive: Vec<&CaseResult> = failing.iter().copied().filter(primitive).collect();
        let pool = if failing_primitive.is_empty() { failing } else { failing_primitive };
        let Some((first, rest)) = pool.split_first() else {
            return BTreeSet::new();
        };
        let mut common = first.ops.clone();
        for c in rest {
            common = common.intersection(&c.ops).copied().collect();
        }
        for c in self.cases.iter().filter(|c| c.passed).filter(primitive) {
            for op in &c.ops {
                common.remove(op);
            }
        }
        common
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.cases {
            s += &format!(
                "{:<6} {:<28} points {:>4}  max rel err {:.3e}\n",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.points,
                c.max_error
            );
        }
        s += "per-op max rel err:\n";
        for (op, e) in self.per_op_max_error() {
            s += &format!("  {op:<12} {e:.3e}\n");
        }
        let suspects = self.suspect_ops();
        if !suspects.is_empty() {
            let names: Vec<&str> = suspects.into_iter().collect();
            s += &format!("suspect backward rule: {}\n", names.join(", "));
        }
        s
    }
}

struct Ctx {
    eps: f64,
    fault: Option<&'static str>,
}

type Case = fn(&mut ChaCha8Rng, &Ctx) -> Result<GradCheckReport>;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

fn scaled(t: Tensor, c: f64) -> Tensor {
    let data = t.data().iter().map(|v| v * c).collect();
    Tensor::new(t.shape(), data).expect("shape")
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.5..2.0)).collect()).expect("shape")
}

/// `Σ w ⊙ y` with constant random `w`.
fn weigh<'g>(y: Var<'g>, w: &Tensor) -> Result<Var<'g>> {
    y.mul(y.graph().constant(w.clone()))?.sum()
}

fn check<F>(ctx: &Ctx, inputs: &[Tensor], f: F) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    grad_check_many_with(f, inputs, ctx.eps, ctx.fault)
}

/// Checks `f` jointly over the parameters in `store` and `extra` inputs.
fn check_store<F>(ctx: &Ctx, store: &ParamStore, extra: &[Tensor], f: F) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&BoundParams<'g>, &[Var<'g>]) -> Result<Var<'g>>,
{
    let names: Vec<String> = store.names().map(String::from).collect();
    let mut inputs: Vec<Tensor> = store.iter().map(|(_, t)| t.clone()).collect();
    let n = inputs.len();
    inputs.extend(extra.iter().cloned());
    check(ctx, &inputs, |_, vars| {
        let params = BoundParams::from_vars(names.iter().cloned().zip(vars[..n].iter().copied()));
        f(&params, &vars[n..])
    })
}

fn unary(ctx: &Ctx, x: Tensor, w: Tensor, op: for<'g> fn(Var<'g>) -> Result<Var<'g>>) -> Result<GradCheckReport> {
    check(ctx, &[x, w], |_, v| op(v[0])?.mul(v[1])?.sum())
}

fn case_matmul(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (a, b, w) = (rand_t(rng, &[2, 3, 4]), rand_t(rng, &[2, 4, 2]), rand_t(rng, &[2, 3, 2]));
    check(ctx, &[a, b], |_, v| weigh(v[0].matmul(v[1])?, &w))
}

fn case_transpose(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (x, w) = (rand_t(rng, &[2, 3, 4]), rand_t(rng, &[2, 4, 3]));
    check(ctx, &[x], |_, v| weigh(v[0].transpose()?, &w))
}

fn case_reshape(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (x, w) = (rand_t(rng, &[2, 6]), rand_t(rng, &[3, 4]));
    check(ctx, &[x], |_, v| weigh(v[0].reshape(&[3, 4])?, &w))
}

fn case_add_sub(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (a, b, c, w) = (rand_t(rng, &[3, 2]), rand_t(rng, &[3, 2]), rand_t(rng, &[3, 2]), rand_t(rng, &[3, 2]));
    check(ctx, &[a, b, c], |_, v| weigh(v[0].add(v[1])?.sub(v[2])?, &w))
}

fn case_mul(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (a, b) = (rand_t(rng, &[3, 2]), rand_t(rng, &[3, 2]));
    check(ctx, &[a, b], |_, v| v[0].mul(v[1])?.sum())
}

fn case_scale_shift(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (x, w) = (rand_t(rng, &[4]), rand_t(rng, &[4]));
    check(ctx, &[x], |_, v| weigh(v[0].scale(-1.7)?.add_scalar(0.3)?, &w))
}

fn case_concat(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (a, b, w) = (rand_t(rng, &[2, 2, 3]), rand_t(rng, &[2, 2, 1]), rand_t(rng, &[2, 2, 4]));
    check(ctx, &[a, b], |_, v| weigh(Var::concat(&[v[0], v[1]])?, &w))
}

fn case_softmax(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (x, w) = (scaled(rand_t(rng, &[3, 4]), 3.0), rand_t(rng, &[3, 4]));
    unary(ctx, x, w, |v| v.softmax())
}

fn case_log_softmax(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (x, w) = (scaled(rand_t(rng, &[3, 4]), 3.0), rand_t(rng, &[3, 4]));
    unary(ctx, x, w, |v| v.log_softmax())
}

fn case_log(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (x, w) = (positive(rng, &[5]), rand_t(rng, &[5]));
    unary(ctx, x, w, |v| v.ln())
}

fn case_exp(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let x = rand_t(rng, &[5]);
    check(ctx, &[x], |_, v| v[0].exp()?.sum())
}

fn case_pow(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (x, w) = (positive(rng, &[5]), rand_t(rng, &[5]));
    unary(ctx, x, w, |v| v.powf(2.5))
}

fn case_mean(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let x = positive(rng, &[2, 3]);
    check(ctx, &[x], |_, v| v[0].ln()?.mean())
}

fn case_sum_axis(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (x, w0, w1) = (rand_t(rng, &[2, 3, 4]), rand_t(rng, &[3, 4]), rand_t(rng, &[2, 4]));
    check(ctx, &[x], |_, v| weigh(v[0].sum_axis(0)?, &w0)?.add(weigh(v[0].mean_axis(1)?, &w1)?))
}

fn case_relu(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (x, w) = (rand_t(rng, &[6]), rand_t(rng, &[6]));
    unary(ctx, x, w, |v| v.relu())
}

fn case_sigmoid(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (x, w) = (scaled(rand_t(rng, &[6]), 3.0), rand_t(rng, &[6]));
    unary(ctx, x, w, |v| v.sigmoid())
}

fn case_clamp(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (x, w) = (scaled(rand_t(rng, &[6]), 2.0), rand_t(rng, &[6]));
    unary(ctx, x, w, |v| v.clamp(-1.0, 1.0))
}

fn case_affine(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (x, wt, b, w) = (rand_t(rng, &[2, 3, 4]), rand_t(rng, &[5, 4]), rand_t(rng, &[5]), rand_t(rng, &[2, 3, 5]));
    check(ctx, &[x, wt, b], |_, v| weigh(v[0].affine(v[1], v[2])?, &w))
}

fn case_select_rows(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (x, w) = (rand_t(rng, &[3, 2]), rand_t(rng, &[4, 2]));
    check(ctx, &[x], |_, v| weigh(v[0].select_rows(&[2, 0, 2, 1])?, &w))
}

fn case_attention(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    fusion::init_attention(&mut store, "attn", 4, 2, rng)?;
    let (q, kv, w) = (rand_t(rng, &[2, 3, 4]), rand_t(rng, &[2, 2, 4]), rand_t(rng, &[2, 3, 4]));
    check_store(ctx, &store, &[q, kv], |p, v| {
        let attn = AttentionParams::bind(p, "attn", 2)?;
        weigh(fusion::attention(&attn, v[0], v[1], v[1])?, &w)
    })
}

fn case_mmr(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    fusion::init_attention(&mut store, "attn", 4, 2, rng)?;
    let (img, txt, w) = (rand_t(rng, &[2, 3, 4]), rand_t(rng, &[2, 3, 4]), rand_t(rng, &[2, 3, 4]));
    check_store(ctx, &store, &[img, txt], |p, v| {
        let attn = AttentionParams::bind(p, "attn", 2)?;
        weigh(fusion::mmr(&attn, v[0], v[1])?, &w)
    })
}

fn case_itm_head(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    fusion::init_attention(&mut store, "attn", 4, 2, rng)?;
    fusion::init_attention(&mut store, "self_attn", 4, 1, rng)?;
    fusion::init_itm_head(&mut store, "head", 4, rng);
    let (img, txt) = (rand_t(rng, &[3, 2, 4]), rand_t(rng, &[3, 2, 4]));
    let labels = [1u8, 0, 1];
    let cfg = LossConfig::default();
    check_store(ctx, &store, &[img, txt], |p, v| {
        let attn = AttentionParams::bind(p, "attn", 2)?;
        let sa = AttentionParams::bind(p, "self_attn", 1)?;
        let head = ItmHeadParams::bind(p, "head")?;
        let logits = fusion::itm_forward(&attn, &head, Some(&sa), v[0], v[1])?;
        losses::binary_classification_loss(logits, &labels, &cfg)
    })
}

fn case_fuse(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    fusion::init_fuse_pipeline(&mut store, "fuse", 4, 2, rng)?;
    let (img, txt, w) = (rand_t(rng, &[2, 2, 4]), rand_t(rng, &[2, 2, 4]), rand_t(rng, &[2, 2, 4]));
    check_store(ctx, &store, &[img, txt], |p, v| {
        let pipe = FusePipelineParams::bind(p, "fuse", 2)?;
        weigh(fusion::img_text_fuse(&pipe, v[0], v[1])?, &w)
    })
}

fn case_text_gen(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    fusion::init_text_gen(&mut store, "gen", 5, rng);
    let (x, w) = (rand_t(rng, &[3, 5]), rand_t(rng, &[3, 5]));
    check_store(ctx, &store, &[x], |p, v| {
        let generator = TextGenParams::bind(p, "gen")?;
        weigh(fusion::text_feat_gen(&generator, v[0])?, &w)
    })
}

fn case_encoder(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let spec = EncoderSpec::mlp(4, vec![5], 3);
    let mut store = ParamStore::new();
    spec.init(&mut store, "enc", rng);
    encoders::init_projection(&mut store, "proj", 3, 4, rng);
    let (x, w) = (rand_t(rng, &[3, 4]), rand_t(rng, &[3, 4]));
    check_store(ctx, &store, &[x], |p, v| {
        let enc = spec.encode(p, "enc", v[0])?;
        weigh(encoders::project(p, "proj", enc)?, &w)
    })
}

fn case_classification_loss(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let logits = scaled(rand_t(rng, &[4, 3]), 2.0);
    let labels = [0usize, 2, 1, 2];
    let cfg = LossConfig::default();
    check(ctx, &[logits], |_, v| losses::classification_loss_logits(v[0], &labels, &cfg))
}

fn case_binary_loss(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let logits = scaled(rand_t(rng, &[4]), 2.0);
    let labels = [0u8, 1, 1, 0];
    let cfg = LossConfig::default();
    check(ctx, &[logits], |_, v| losses::binary_classification_loss(v[0], &labels, &cfg))
}

fn case_info_nce(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (q, c) = (rand_t(rng, &[4, 5]), rand_t(rng, &[4, 5]));
    check(ctx, &[q, c], |_, v| losses::info_nce_batch(v[0], v[1], 0.7))
}

/// A small synthetic set and model config for the full objectives.
fn tiny_problem(seed: u64) -> Result<(Dataset, ModelConfig)> {
    let spec = SynthSpec {
        seed,
        d_img: 4,
        attribute_names: vec!["a0".into(), "a1".into()],
        subgroups: (0..2)
            .map(|c| SubgroupSpec {
                name: format!("g{c}"),
                count: 6,
                class_prior: if c == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] },
                separation: 1.0,
                noise: 1.0,
                offset: 0.0,
                flip_prob: 0.1,
            })
            .collect(),
        ..SynthSpec::default()
    };
    let train = generate_synthetic(&spec)?.train;
    let arch = ArchConfig {
        embed_dim: 4,
        heads: 1,
        tokens: 2,
        image_encoder: EncoderChoice {
            kind: crate::encoders::EncoderKind::Mlp,
            hidden_dims: vec![3],
            output_dim: Some(3),
        },
        text_encoder: EncoderChoice::identity(),
        itm_self_attention: true,
    };
    let config = ModelConfig::new(&train.header, &arch)?;
    Ok((train, config))
}

fn objective(strategy: Strategy, rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    let (train, config) = tiny_problem(rng.gen())?;
    let model = Model::init(strategy, config, rng)?;
    let tc = TrainConfig::default();
    let mask = tc.attribute_mask(&train.header)?;
    let indices: Vec<usize> = (0..4).collect();
    let batch = assemble_batch(&train, &indices, strategy, &mask, rng)?;
    let weights = component_weights(strategy, &tc.loss);
    let names: Vec<String> = model.params.names().map(String::from).collect();
    let inputs: Vec<Tensor> = model.params.iter().map(|(_, t)| t.clone()).collect();
    check(ctx, &inputs, |_, vars| {
        let bound = Bound {
            config: &model.config,
            params: BoundParams::from_vars(names.iter().cloned().zip(vars.iter().copied())),
        };
        weighted_total(&batch_losses(&bound, strategy, &batch, &tc.loss)?, &weights)
    })
}

fn case_baseline_objective(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    objective(Strategy::Baseline, rng, ctx)
}

fn case_itm_objective(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    objective(Strategy::Itm, rng, ctx)
}

fn case_fusion_objective(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<GradCheckReport> {
    objective(Strategy::Fusion, rng, ctx)
}

const CASES: &[(&str, Case)] = &[
    ("op:matmul", case_matmul),
    ("op:transpose", case_transpose),
    ("op:reshape", case_reshape),
    ("op:add+sub", case_add_sub),
    ("op:mul", case_mul),
    ("op:scale+add_scalar", case_scale_shift),
    ("op:concat", case_concat),
    ("op:softmax", case_softmax),
    ("op:log_softmax", case_log_softmax),
    ("op:log", case_log),
    ("op:exp", case_exp),
    ("op:pow", case_pow),
    ("op:mean", case_mean),
    ("op:sum_axis", case_sum_axis),
    ("op:relu", case_relu),
    ("op:sigmoid", case_sigmoid),
    ("op:clamp", case_clamp),
    ("op:affine", case_affine),
    ("op:select_rows", case_select_rows),
    ("attention", case_attention),
    ("mmr", case_mmr),
    ("itm_head+match_loss", case_itm_head),
    ("img_text_fuse", case_fuse),
    ("text_feat_gen", case_text_gen),
    ("encoder+projection", case_encoder),
    ("classification_loss", case_classification_loss),
    ("binary_classification_loss", case_binary_loss),
    ("info_nce", case_info_nce),
    ("baseline_objective", case_baseline_objective),
    ("itm_objective", case_itm_objective),
    ("fusion_objective", case_fusion_objective),
];

pub fn case_names() -> Vec<&'static str> {
    CASES.iter().map(|(n, _)| *n).collect()
}

pub fn run_grad_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    let ctx = Ctx {
        eps: opts.eps,
        fault: opts.fault,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut cases = Vec::with_capacity(CASES.len());
    for &(name, case) in CASES {
        let mut max_error: f64 = 0.0;
        let mut ops = BTreeSet::new();
        for _ in 0..opts.points {
            let report = case(&mut rng, &ctx)?;
            max_error = max_error.max(report.max_error());
            ops.extend(report.ops);
        }
        cases.push(CaseResult {
            name,
            points: opts.points,
            max_error,
            passed: max_error <= opts.tolerance,
            ops,
        });
    }
    Ok(SuiteReport {
        tolerance: opts.tolerance,
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let report = run_grad_suite(&SuiteOptions {
            points: 2,
            ..SuiteOptions::default()
        })
        .unwrap();
        assert!(report.passed(), "{}", report.summary());
        assert!(report.suspect_ops().is_empty());
    }

    #[test]
    fn broken_rules_are_named() {
        for &op in crate::tensor::OP_NAMES {
            let report = run_grad_suite(&SuiteOptions {
                points: 1,
                fault: Some(op),
                ..SuiteOptions::default()
            })
            .unwrap();
            assert!(!report.passed());
            assert_eq!(report.suspect_ops(), BTreeSet::from([op]), "{}", report.summary());
        }
    }
}
