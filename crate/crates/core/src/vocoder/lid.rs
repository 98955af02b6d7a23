//! Language-identification classifier: two conv layers (conv -> ReLU ->
//! LayerNorm), temporal mean pooling, linear projection, softmax.

use crate::error::Result;
use crate::nn::{Conv1d, Init, LayerNorm, Linear};
use crate::numerics::{Attached, Graph, NodeId};

pub struct LidClassifier {
    conv1: Conv1d,
    ln1: LayerNorm,
    conv2: Conv1d,
    ln2: LayerNorm,
    projection: Linear,
    pub num_languages: usize,
}

impl LidClassifier {
    pub fn new(init: &mut Init, n_mels: usize, hidden: usize, num_languages: usize) -> Result<Self> {
        Ok(LidClassifier {
            conv1: Conv1d::new(init, "lid.c1", n_mels, hidden, 3, 1, 1, 1)?,
            ln1: LayerNorm::new(init, "lid.ln1", hidden)?,
            conv2: Conv1d::new(init, "lid.c2", hidden, hidden, 3, 1, 1, 1)?,
            ln2: LayerNorm::new(init, "lid.ln2", hidden)?,
            // small but nonzero: a zero projection would also zero the
            // gradient path from the LID loss back into the generator
            projection: Linear {
                w: init.randn("lid.w", &[hidden, num_languages], 0.05)?,
                b: None,
            },
            num_languages,
        })
    }

    /// One conv layer per the classifier recipe: conv, ReLU, LayerNorm over
    /// channels. x: [T, C_in] -> [T, C_out].
    fn conv_layer(
        &self,
        g: &mut Graph,
        ps: &Attached,
        conv: &Conv1d,
        ln: &LayerNorm,
        x: NodeId,
    ) -> Result<NodeId> {
        let h = g.transpose(x);
        let h = conv.forward(g, ps, h)?;
        let h = g.relu(h);
        let h = g.transpose(h);
        ln.forward(g, ps, h)
    }

    /// mel features [T, n_mels] -> language log-probabilities [1, L].
    pub fn log_probs(&self, g: &mut Graph, ps: &Attached, mel: NodeId) -> Result<NodeId> {
        let h = self.conv_layer(g, ps, &self.conv1, &self.ln1, mel)?;
        let h = self.conv_layer(g, ps, &self.conv2, &self.ln2, h)?;
        let pooled = g.mean_rows(h); // [1, hidden]
        let logits = self.projection.forward(g, ps, pooled)?;
        Ok(g.log_softmax_rows(logits))
    }

    /// Normalized distribution over languages [1, L].
    pub fn forward(&self, g: &mut Graph, ps: &Attached, mel: NodeId) -> Result<NodeId> {
        let h = self.conv_layer(g, ps, &self.conv1, &self.ln1, mel)?;
        let h = self.conv_layer(g, ps, &self.conv2, &self.ln2, h)?;
        let pooled = g.mean_rows(h);
        let logits = self.projection.forward(g, ps, pooled)?;
        Ok(g.softmax_rows(logits))
    }
}
