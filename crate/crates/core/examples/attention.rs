//! Multi-head attention over a small token batch: output shape, per-head
//! weight rows that sum to one, and the mutual-refinement block mmr(a, a).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fairfuse::fusion::{self, AttentionParams};
use fairfuse::params::ParamStore;
use fairfuse::tensor::{Graph, Tensor};

fn main() -> fairfuse::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    fusion::init_attention(&mut store, "attn", 8, 2, &mut rng)?;

    let g = Graph::new();
    let params = store.bind(&g, false);
    let attn = AttentionParams::bind(&params, "attn", 2)?;
    let x = g.constant(Tensor::uniform(&[2, 4, 8], 1.0, &mut rng));

    let (out, weights) = fusion::attention_with_weights(&attn, x, x, x)?;
    println!("input [2, 4, 8] -> output {:?}", out.value().shape());
    for (h, w) in weights.iter().enumerate() {
        let w = w.value();
        let row = &w.data()[..w.last_dim()];
        let sum: f64 = row.iter().sum();
        println!("head {h} first row {row:.3?} (sum {sum:.12})");
    }

    let refined = fusion::mmr(&attn, x, x)?.value();
    let single = fusion::attention(&attn, x, x, x)?.value();
    let gap = refined
        .data()
        .iter()
        .zip(single.data())
        .map(|(m, s)| (m - 2.0 * s).abs())
        .fold(0.0, f64::max);
    println!("max |mmr(a, a) - 2 * attention(a, a, a)| = {gap:.2e}");
    Ok(())
}
