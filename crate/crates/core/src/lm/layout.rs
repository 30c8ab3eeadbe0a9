//! Placement of every named tensor inside the flat parameter vector.

use super::LmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w_qkv: usize,
    pub b_qkv: usize,
    pub w_o: usize,
    pub b_o: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_fc: usize,
    pub b_fc: usize,
    pub w_proj: usize,
    pub b_proj: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSlot {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub wte: usize,
    pub wpe: usize,
    pub layers: Vec<LayerOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub total: usize,
    pub slots: Vec<TensorSlot>,
}

impl Layout {
    pub fn new(cfg: &LmConfig) -> Self {
        let d = cfg.d_model;
        let mut slots = Vec::new();
        let mut cursor = 0usize;
        let mut push = |name: String, shape: Vec<usize>| -> usize {
            let offset = cursor;
            cursor += shape.iter().product::<usize>();
            slots.push(TensorSlot {
                name,
                shape,
                offset,
            });
            offset
        };

        let wte = push("wte".into(), vec![cfg.vocab_size, d]);
        let wpe = push("wpe".into(), vec![cfg.context_len, d]);
        let layers = (0..cfg.n_layers)
            .map(|l| LayerOffsets {
                ln1_g: push(format!("h{l}.ln1.gain"), vec![d]),
                ln1_b: push(format!("h{l}.ln1.bias"), vec![d]),
                w_qkv: push(format!("h{l}.attn.w_qkv"), vec![d, 3 * d]),
                b_qkv: push(format!("h{l}.attn.b_qkv"), vec![3 * d]),
                w_o: push(format!("h{l}.attn.w_out"), vec![d, d]),
                b_o: push(format!("h{l}.attn.b_out"), vec![d]),
                ln2_g: push(format!("h{l}.ln2.gain"), vec![d]),
                ln2_b: push(format!("h{l}.ln2.bias"), vec![d]),
                w_fc: push(format!("h{l}.mlp.w_fc"), vec![d, 4 * d]),
                b_fc: push(format!("h{l}.mlp.b_fc"), vec![4 * d]),
                w_proj: push(format!("h{l}.mlp.w_proj"), vec![4 * d, d]),
                b_proj: push(format!("h{l}.mlp.b_proj"), vec![d]),
            })
            .collect();
        let lnf_g = push("ln_f.gain".into(), vec![d]);
        let lnf_b = push("ln_f.bias".into(), vec![d]);

        Self {
            wte,
            wpe,
            layers,
            lnf_g,
            lnf_b,
            total: cursor,
            slots,
        }
    }
}
