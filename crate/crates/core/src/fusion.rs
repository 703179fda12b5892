//! Attention blocks and the two ways image and text features are combined:
//! bidirectional cross-attention for image-text matching, and concatenation
//! followed by self-attention for fused classification. Also holds the
//! residual generator that predicts text features from image features.
//!
//! Feature tensors are `[T, d]` for one token sequence or `[B, T, d]` for a
//! batch of sequences; attention mixes tokens within a sequence only.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{BoundParams, Linear, ParamStore};
use crate::tensor::Var;

/// One attention head: projections `[d/h, d]`.
#[derive(Clone, Copy, Debug)]
pub struct HeadParams<'g> {
    pub w_q: Var<'g>,
    pub w_k: Var<'g>,
    pub w_v: Var<'g>,
}

#[derive(Clone, Debug)]
pub struct AttentionParams<'g> {
    pub heads: Vec<HeadParams<'g>>,
    /// `[d, d]`, applied to the concatenated heads.
    pub w_o: Var<'g>,
}

#[derive(Clone, Copy, Debug)]
pub struct ItmHeadParams<'g> {
    pub pre_linear: Linear<'g>,
    pub match_linear: Linear<'g>,
}

#[derive(Clone, Debug)]
pub struct FusePipelineParams<'g> {
    pub in_linear: Linear<'g>,
    pub attn: AttentionParams<'g>,
    pub out_linear: Linear<'g>,
}

/// Three `d → d` layers with relu between them and a skip from input to output.
#[derive(Clone, Copy, Debug)]
pub struct TextGenParams<'g> {
    pub layers: [Linear<'g>; 3],
}

pub fn init_attention<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize, rng: &mut R) -> Result<()> {
    check_heads(dim, heads)?;
    let head_dim = dim / heads;
    for h in 0..heads {
        for w in ["w_q", "w_k", "w_v"] {
            store.init_matrix(&format!("{prefix}.head{h}.{w}"), head_dim, dim, rng);
        }
    }
    store.init_matrix(&format!("{prefix}.w_o"), dim, dim, rng);
    Ok(())
}

pub fn init_itm_head<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut R) {
    store.init_linear(&format!("{prefix}.pre_linear"), dim, dim, rng);
    store.init_linear(&format!("{prefix}.match_linear"), dim, 1, rng);
}

pub fn init_fuse_pipeline<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize, rng: &mut R) -> Result<()> {
    store.init_linear(&format!("{prefix}.in_linear"), 2 * dim, dim, rng);
    init_attention(store, &format!("{prefix}.attn"), dim, heads, rng)?;
    store.init_linear(&format!("{prefix}.out_linear"), dim, dim, rng);
    Ok(())
}

pub fn init_text_gen<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut R) {
    for i in 1..=3 {
        store.init_linear(&format!("{prefix}.layer{i}"), dim, dim, rng);
    }
}

fn check_heads(dim: usize, heads: usize) -> Result<()> {
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(Error::Config(format!("dimension {dim} is not divisible by {heads} heads")));
    }
    Ok(())
}

impl<'g> AttentionParams<'g> {
    pub fn bind(params: &BoundParams<'g>, prefix: &str, heads: usize) -> Result<Self> {
        let heads = (0..heads)
            .map(|h| {
                Ok(HeadParams {
                    w_q: params.get(&format!("{prefix}.head{h}.w_q"))?,
                    w_k: params.get(&format!("{prefix}.head{h}.w_k"))?,
                    w_v: params.get(&format!("{prefix}.head{h}.w_v"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            heads,
            w_o: params.get(&format!("{prefix}.w_o"))?,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_o.shape()[0]
    }
}

impl<'g> ItmHeadParams<'g> {
    pub fn bind(params: &BoundParams<'g>, prefix: &str) -> Result<Self> {
        Ok(Self {
            pre_linear: params.linear(&format!("{prefix}.pre_linear"))?,
            match_linear: params.linear(&format!("{prefix}.match_linear"))?,
        })
    }
}

impl<'g> FusePipelineParams<'g> {
    pub fn bind(params: &BoundParams<'g>, prefix: &str, heads: usize) -> Result<Self> {
        Ok(Self {
            in_linear: params.linear(&format!("{prefix}.in_linear"))?,
            attn: AttentionParams::bind(params, &format!("{prefix}.attn"), heads)?,
            out_linear: params.linear(&format!("{prefix}.out_linear"))?,
        })
    }
}

impl<'g> TextGenParams<'g> {
    pub fn bind(params: &BoundParams<'g>, prefix: &str) -> Result<Self> {
        Ok(Self {
            layers: [
                params.linear(&format!("{prefix}.layer1"))?,
                params.linear(&format!("{prefix}.layer2"))?,
                params.linear(&format!("{prefix}.layer3"))?,
            ],
        })
    }
}

/// Lifts `[T, d]` to `[1, T, d]`; returns whether it did.
fn as_batched<'g>(x: Var<'g>) -> Result<(Var<'g>, bool)> {
    let shape = x.shape();
    match shape.len() {
        2 => Ok((x.reshape(&[1, shape[0], shape[1]])?, true)),
        3 => Ok((x, false)),
        _ => Err(Error::invalid_shape("attention", &shape, "expected [T, d] or [B, T, d]")),
    }
}

fn unbatch<'g>(x: Var<'g>, lifted: bool) -> Result<Var<'g>> {
    if lifted {
        let s = x.shape();
        x.reshape(&[s[1], s[2]])
    } else {
        Ok(x)
    }
}

/// `x: [B, T, d_in]` times `wᵀ` for `w: [d_out, d_in]`.
fn project_tokens<'g>(x: Var<'g>, w: Var<'g>) -> Result<Var<'g>> {
    let s = x.shape();
    let d_out = w.shape()[0];
    x.reshape(&[s[0] * s[1], s[2]])?
        .matmul(w.transpose()?)?
        .reshape(&[s[0], s[1], d_out])
}

fn apply_linear<'g>(x: Var<'g>, layer: &Linear<'g>) -> Result<Var<'g>> {
    layer.forward(x)
}

/// Multi-head scaled dot-product attention. Returns the output and each
/// head's attention weights `[B, T_q, T_k]` (batched form).
pub fn attention_with_weights<'g>(
    params: &AttentionParams<'g>,
    q: Var<'g>,
    k: Var<'g>,
    v: Var<'g>,
) -> Result<(Var<'g>, Vec<Var<'g>>)> {
    let d = params.dim();
    check_heads(d, params.heads.len())?;
    let (q, lifted) = as_batched(q)?;
    let (k, _) = as_batched(k)?;
    let (v, _) = as_batched(v)?;
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs[2] != d || ks[2] != d || vs[2] != d {
        return Err(Error::shape("attention", &qs, &ks));
    }
    if ks != vs || qs[0] != ks[0] {
        return Err(Error::shape("attention", &ks, &vs));
    }
    let head_dim = d / params.heads.len();
    let scale = 1.0 / (head_dim as f64).sqrt();

    let mut outs = Vec::with_capacity(params.heads.len());
    let mut weights = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        let qh = project_tokens(q, head.w_q)?;
        let kh = project_tokens(k, head.w_k)?;
        let vh = project_tokens(v, head.w_v)?;
        let w = qh.matmul(kh.transpose()?)?.scale(scale)?.softmax()?;
        outs.push(w.matmul(vh)?);
        weights.push(w);
    }
    let joined = if outs.len() == 1 { outs[0] } else { Var::concat(&outs)? };
    let out = project_tokens(joined, params.w_o)?;
    Ok((unbatch(out, lifted)?, weights))
}

pub fn attention<'g>(params: &AttentionParams<'g>, q: Var<'g>, k: Var<'g>, v: Var<'g>) -> Result<Var<'g>> {
    attention_with_weights(params, q, k, v).map(|(out, _)| out)
}

/// Image-queries-text plus text-queries-image, sharing one set of weights.
pub fn mmr<'g>(params: &AttentionParams<'g>, imgfeat: Var<'g>, textfeat: Var<'g>) -> Result<Var<'g>> {
    if imgfeat.shape() != textfeat.shape() {
        return Err(Error::shape("mmr", &imgfeat.shape(), &textfeat.shape()));
    }
    let image_to_text = attention(params, imgfeat, textfeat, textfeat)?;
    let text_to_image = attention(params, textfeat, imgfeat, imgfeat)?;
    image_to_text.add(text_to_image)
}

/// Match logit per sample: `[B]` for batched input, `[1]` for a single
/// sequence. `self_attn`, when given, is applied to each modality before
/// the cross-attention.
pub fn itm_forward<'g>(
    attn: &AttentionParams<'g>,
    head: &ItmHeadParams<'g>,
    self_attn: Option<&AttentionParams<'g>>,
    imgfeat: Var<'g>,
    textfeat: Var<'g>,
) -> Result<Var<'g>> {
    let (img, _) = as_batched(imgfeat)?;
    let (txt, _) = as_batched(textfeat)?;
    let (img, txt) = match self_attn {
        Some(sa) => (attention(sa, img, img, img)?, attention(sa, txt, txt, txt)?),
        None => (img, txt),
    };
    let pooled = mmr(attn, img, txt)?.mean_axis(1)?;
    let hidden = apply_linear(pooled, &head.pre_linear)?.relu()?;
    let logit = apply_linear(hidden, &head.match_linear)?;
    let b = logit.shape()[0];
    logit.reshape(&[b])
}

/// Concatenate, map `2d → d`, self-attend, map `d → d`.
pub fn img_text_fuse<'g>(pipeline: &FusePipelineParams<'g>, imgfeat: Var<'g>, textfeat: Var<'g>) -> Result<Var<'g>> {
    if imgfeat.shape() != textfeat.shape() {
        return Err(Error::shape("img_text_fuse", &imgfeat.shape(), &textfeat.shape()));
    }
    let fused = Var::concat(&[imgfeat, textfeat])?;
    let h = apply_linear(fused, &pipeline.in_linear)?;
    let h = attention(&pipeline.attn, h, h, h)?;
    apply_linear(h, &pipeline.out_linear)
}

/// `x + layer3(relu(layer2(relu(layer1(x)))))`.
pub fn text_feat_gen<'g>(generator: &TextGenParams<'g>, imgfeat: Var<'g>) -> Result<Var<'g>> {
    let residual = text_gen_residual(generator, imgfeat)?;
    imgfeat.add(residual)
}

pub fn text_gen_residual<'g>(generator: &TextGenParams<'g>, imgfeat: Var<'g>) -> Result<Var<'g>> {
    let d = generator.layers[0].weight.shape()[1];
    let found = *imgfeat.shape().last().unwrap_or(&0);
    if found != d {
        return Err(Error::Dimension {
            context: "text_feat_gen input".into(),
            expected: d,
            found,
        });
    }
    let [l1, l2, l3] = &generator.layers;
    let h = l1.forward(imgfeat)?.relu()?;
    let h = l2.forward(h)?.relu()?;
    l3.forward(h)
}
