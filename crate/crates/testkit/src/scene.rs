use codesplat_core::{CodebookKind, ModelState};

/// Double-precision copy of every parameter of a [`ModelState`].
///
/// Codebook rows keep their original indices (dead rows are zero) so that
/// per-row results line up with the engine's gradient layout.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleScene {
    pub sh_degree: usize,
    pub positions: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub g2sh: Vec<usize>,
    pub g2sr: Vec<usize>,
    pub sh_rows: Vec<Vec<f64>>,
    pub sr_rows: Vec<[f64; 7]>,
}

impl OracleScene {
    pub fn from_state(state: &ModelState) -> Self {
        let g = state.gaussians();
        let rows = |which| {
            let book = state.codebook(which);
            (0..book.capacity() as u32)
                .map(|r| book.row(r).iter().map(|&v| v as f64).collect::<Vec<f64>>())
                .collect::<Vec<_>>()
        };
        Self {
            sh_degree: state.sh_degree(),
            positions: g.positions().iter().map(|p| p.map(|v| v as f64)).collect(),
            opacity_logits: g.opacity_logits().iter().map(|&v| v as f64).collect(),
            g2sh: g.g2sh().iter().map(|&r| r as usize).collect(),
            g2sr: g.g2sr().iter().map(|&r| r as usize).collect(),
            sh_rows: rows(CodebookKind::Sh),
            sr_rows: rows(CodebookKind::Sr)
                .into_iter()
                .map(|r| std::array::from_fn(|k| r[k]))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}
