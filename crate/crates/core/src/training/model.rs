use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::data::DatasetHeader;
use crate::encoders::{self, EncoderKind, EncoderSpec};
use crate::error::{Error, Result};
use crate::fusion::{self, AttentionParams, FusePipelineParams, ItmHeadParams, TextGenParams};
use crate::params::{BoundParams, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Image-only classifier.
    Baseline,
    /// Classifier plus an auxiliary image-text matching head.
    Itm,
    /// Classifier over fused image and (real or generated) text features.
    Fusion,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Baseline, Strategy::Itm, Strategy::Fusion];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::Itm => "itm",
            Strategy::Fusion => "fusion",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Strategy::Baseline),
            "itm" => Ok(Strategy::Itm),
            "fusion" => Ok(Strategy::Fusion),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Encoder choice without the data-dependent input width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderChoice {
    pub kind: EncoderKind,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    /// Output width for the MLP kind; identity keeps the input width.
    #[serde(default)]
    pub output_dim: Option<usize>,
}

impl EncoderChoice {
    pub fn identity() -> Self {
        Self {
            kind: EncoderKind::Identity,
            hidden_dims: Vec::new(),
            output_dim: None,
        }
    }

    fn spec(&self, input_dim: usize) -> EncoderSpec {
        match self.kind {
            EncoderKind::Identity => EncoderSpec::identity(input_dim),
            EncoderKind::Mlp => EncoderSpec::mlp(input_dim, self.hidden_dims.clone(), self.output_dim.unwrap_or(input_dim)),
        }
    }
}

/// Architecture knobs shared by every strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Shared embedding width `d`.
    pub embed_dim: usize,
    pub heads: usize,
    /// Each feature vector is split into this many tokens of width `d / tokens`.
    pub tokens: usize,
    pub image_encoder: EncoderChoice,
    pub text_encoder: EncoderChoice,
    /// Self-attention on each modality before the matching cross-attention.
    pub itm_self_attention: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            heads: 4,
            tokens: 1,
            image_encoder: EncoderChoice::identity(),
            text_encoder: EncoderChoice::identity(),
            itm_self_attention: false,
        }
    }
}

/// Fully resolved architecture, stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_img: usize,
    pub d_txt: usize,
    pub k: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub tokens: usize,
    pub image_encoder: EncoderSpec,
    pub text_encoder: EncoderSpec,
    pub itm_self_attention: bool,
}

impl ModelConfig {
    pub fn new(header: &DatasetHeader, arch: &ArchConfig) -> Result<Self> {
        let cfg = Self {
            d_img: header.d_img,
            d_txt: header.d_txt,
            k: header.k,
            embed_dim: arch.embed_dim,
            heads: arch.heads,
            tokens: arch.tokens,
            image_encoder: arch.image_encoder.spec(header.d_img),
            text_encoder: arch.text_encoder.spec(header.d_txt),
            itm_self_attention: arch.itm_self_attention,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.image_encoder.validate()?;
        self.text_encoder.validate()?;
        if self.image_encoder.input_dim != self.d_img || self.text_encoder.input_dim != self.d_txt {
            return Err(Error::Config("encoder input widths must match d_img / d_txt".into()));
        }
        if self.k < 2 || self.embed_dim == 0 || self.tokens == 0 || !self.embed_dim.is_multiple_of(self.tokens) {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of tokens {}",
                self.embed_dim, self.tokens
            )));
        }
        let token_dim = self.token_dim();
        if self.heads == 0 || !token_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("token width {token_dim} is not divisible by {} heads", self.heads)));
        }
        Ok(())
    }

    /// Width of one attention token.
    pub fn token_dim(&self) -> usize {
        self.embed_dim / self.tokens
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub strategy: Strategy,
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Fresh parameters, uniform(−1/√fan_in, 1/√fan_in).
    pub fn init<R: Rng + ?Sized>(strategy: Strategy, config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new();
        let d = config.embed_dim;
        let td = config.token_dim();
        config.image_encoder.init(&mut p, "image_encoder", rng);
        encoders::init_projection(&mut p, "image_projection", config.image_encoder.output_dim, d, rng);
        if strategy != Strategy::Baseline {
            config.text_encoder.init(&mut p, "text_encoder", rng);
            encoders::init_projection(&mut p, "text_projection", config.text_encoder.output_dim, d, rng);
        }
        match strategy {
            Strategy::Baseline => {}
            Strategy::Itm => {
                fusion::init_attention(&mut p, "itm.attn", td, config.heads, rng)?;
                fusion::init_itm_head(&mut p, "itm.head", td, rng);
                if config.itm_self_attention {
                    fusion::init_attention(&mut p, "itm.self_attn", td, config.heads, rng)?;
                }
            }
            Strategy::Fusion => {
                fusion::init_fuse_pipeline(&mut p, "fuse", td, config.heads, rng)?;
                fusion::init_text_gen(&mut p, "textgen", d, rng);
            }
        }
        p.init_linear("classifier", d, config.k, rng);
        Ok(Self {
            strategy,
            config,
            params: p,
        })
    }

    pub fn bind<'g>(&self, graph: &'g Graph, trainable: bool) -> Bound<'g, '_> {
        Bound {
            config: &self.config,
            params: self.params.bind(graph, trainable),
        }
    }

    /// Parameter layout a freshly initialized model of this strategy and
    /// config would have.
    pub fn expected_layout(strategy: Strategy, config: &ModelConfig) -> Result<ParamStore> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        Ok(Model::init(strategy, config.clone(), &mut rng)?.params)
    }
}

/// A model's parameters recorded on one graph, with the forward pieces
/// every strategy is assembled from.
pub struct Bound<'g, 'm> {
    pub config: &'m ModelConfig,
    pub params: BoundParams<'g>,
}

impl<'g> Bound<'g, '_> {
    pub fn image_features(&self, images: Var<'g>) -> Result<Var<'g>> {
        let enc = self.config.image_encoder.encode(&self.params, "image_encoder", images)?;
        encoders::project(&self.params, "image_projection", enc)
    }

    pub fn text_features(&self, texts: Var<'g>) -> Result<Var<'g>> {
        let enc = self.config.text_encoder.encode(&self.params, "text_encoder", texts)?;
        encoders::project(&self.params, "text_projection", enc)
    }

    pub fn classify(&self, features: Var<'g>) -> Result<Var<'g>> {
        self.params.linear("classifier")?.forward(features)
    }

    /// `[B, d]` → `[B, tokens, d / tokens]`.
    pub fn to_tokens(&self, x: Var<'g>) -> Result<Var<'g>> {
        let b = x.shape()[0];
        x.reshape(&[b, self.config.tokens, self.config.token_dim()])
    }

    pub fn from_tokens(&self, x: Var<'g>) -> Result<Var<'g>> {
        let b = x.shape()[0];
        x.reshape(&[b, self.config.embed_dim])
    }

    pub fn itm_logits(&self, imgfeat: Var<'g>, textfeat: Var<'g>) -> Result<Var<'g>> {
        let attn = AttentionParams::bind(&self.params, "itm.attn", self.config.heads)?;
        let head = ItmHeadParams::bind(&self.params, "itm.head")?;
        let self_attn = if self.config.itm_self_attention {
            Some(AttentionParams::bind(&self.params, "itm.self_attn", self.config.heads)?)
        } else {
            None
        };
        fusion::itm_forward(&attn, &head, self_attn.as_ref(), self.to_tokens(imgfeat)?, self.to_tokens(textfeat)?)
    }

    pub fn fuse(&self, imgfeat: Var<'g>, textfeat: Var<'g>) -> Result<Var<'g>> {
        let pipe = FusePipelineParams::bind(&self.params, "fuse", self.config.heads)?;
        let out = fusion::img_text_fuse(&pipe, self.to_tokens(imgfeat)?, self.to_tokens(textfeat)?)?;
        self.from_tokens(out)
    }

    pub fn generate_text(&self, imgfeat: Var<'g>) -> Result<Var<'g>> {
        let generator = TextGenParams::bind(&self.params, "textgen")?;
        fusion::text_feat_gen(&generator, imgfeat)
    }
}

/// Class predictions from image features alone; ties go to the lowest
/// class index.
pub fn infer(model: &Model, images: &Tensor) -> Result<Vec<usize>> {
    let logits = predict_logits(model, images)?;
    Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
}

/// Class logits `[B, k]` along the image-only test path.
pub fn predict_logits(model: &Model, images: &Tensor) -> Result<Tensor> {
    if images.ndim() != 2 || images.shape()[1] != model.config.d_img {
        return Err(Error::Dimension {
            context: "inference images".into(),
            expected: model.config.d_img,
            found: *images.shape().last().unwrap_or(&0),
        });
    }
    let graph = Graph::new();
    let m = model.bind(&graph, false);
    let imgfeat = m.image_features(graph.constant(images.clone()))?;
    let features = match model.strategy {
        Strategy::Baseline | Strategy::Itm => imgfeat,
        Strategy::Fusion => {
            let generated = m.generate_text(imgfeat)?;
            m.fuse(imgfeat, generated)?
        }
    };
    Ok(m.classify(features)?.value())
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
