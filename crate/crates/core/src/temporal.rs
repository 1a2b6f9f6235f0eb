//! The temporal variant: a small transformer encoder over concatenated
//! frame encodings, with learned temporal position encodings that start at
//! zero and interpolate linearly when inference uses a different frame
//! count than training.

use crate::autograd::{Mat, Var};
use crate::error::{Error, Result};
use crate::model::{EncodedSequence, Forward, Model, SeqVars};

/// Endpoint-aligned linear interpolation of the table rows to `t_test`
/// rows: output position i reads source coordinate i*(T-1)/(t_test-1);
/// `t_test == 1` takes the first row; identity when `t_test == T`.
pub fn interpolate_temporal_encoding(table: &Mat, t_test: usize) -> Result<Mat> {
    let t_train = table.nrows();
    if t_train == 0 {
        return Err(Error::Input("temporal table has zero rows".into()));
    }
    if t_test == 0 {
        return Err(Error::Input("t_test must be at least 1".into()));
    }
    if t_test == t_train {
        return Ok(table.clone());
    }
    let d = table.ncols();
    let mut out = Mat::zeros((t_test, d));
    for i in 0..t_test {
        let (lo, hi, w) = source_coords(t_train, t_test, i);
        for j in 0..d {
            out[(i, j)] = (1.0 - w) * table[(lo, j)] + w * table[(hi, j)];
        }
    }
    Ok(out)
}

fn source_coords(t_train: usize, t_test: usize, i: usize) -> (usize, usize, f64) {
    if t_test == 1 || t_train == 1 {
        return (0, 0, 0.0);
    }
    let src = i as f64 * (t_train - 1) as f64 / (t_test - 1) as f64;
    let lo = (src.floor() as usize).min(t_train - 1);
    let hi = (lo + 1).min(t_train - 1);
    (lo, hi, src - lo as f64)
}

impl Forward<'_> {
    /// Add each frame's (interpolated) temporal encoding row to all of its
    /// tokens, concatenate, and run the temporal transformer encoder. The
    /// interpolation is expressed on the tape, so gradients reach the table
    /// for any frame count.
    pub fn temporal_encode(&mut self, frames: &[Var]) -> Result<Var> {
        if frames.is_empty() {
            return Err(Error::Input("temporal encoder needs at least one frame".into()));
        }
        if !self.model().has_temporal() {
            return Err(Error::Config("model has no temporal encoder parameters".into()));
        }
        let t_train = self.config().t_train_temporal;
        let table = self.p("temporal.table");
        let mut tagged = Vec::with_capacity(frames.len());
        for (f, &states) in frames.iter().enumerate() {
            let (lo, hi, w) = source_coords(t_train, frames.len(), f);
            let row = if lo == hi || w == 0.0 {
                self.tape.gather_rows(table, &[lo])
            } else {
                let a = self.tape.gather_rows(table, &[lo]);
                let b = self.tape.gather_rows(table, &[hi]);
                let a = self.tape.scale(a, 1.0 - w);
                let b = self.tape.scale(b, w);
                self.tape.add(a, b)
            };
            tagged.push(self.tape.add_row(states, row));
        }
        let mut x = self.tape.concat_rows(&tagged);
        for i in 0..self.config().temporal_layers {
            x = self.self_block(x, None, &format!("temporal.block{i}"));
        }
        let g = self.p("temporal.ln_out.g");
        let b = self.p("temporal.ln_out.b");
        Ok(self.tape.layer_norm(x, g, b, crate::model::LN_EPS))
    }
}

impl Model {
    /// Video-level score of the temporal variant: frame encodings plus
    /// temporal position rows through the temporal encoder, then into the
    /// multi-modal encoder as key/value.
    pub fn predict_temporal(
        &self,
        text: &EncodedSequence,
        frames: &[EncodedSequence],
    ) -> Result<f64> {
        if frames.is_empty() {
            return Err(Error::Input("temporal prediction needs at least one frame".into()));
        }
        let mut fw = self.forward();
        let frame_vars: Vec<Var> = frames
            .iter()
            .map(|f| fw.tape.leaf(f.states.clone()))
            .collect();
        let video = fw.temporal_encode(&frame_vars)?;
        let t = SeqVars {
            states: fw.tape.leaf(text.states.clone()),
            mask: text.mask.clone(),
        };
        let fused = fw.fuse(&t, video)?;
        Ok(fw.tape.scalar(fused.match_logit))
    }
}
