use crate::error::{Error, Result};
use crate::model::LayeredParams;

/// `theta - lr * grad` on every layer whose mask entry is `true`; other
/// layers are copied unchanged.
pub fn sgd_step(params: &LayeredParams, grads: &LayeredParams, lr: f64, mask: &[bool]) -> Result<LayeredParams> {
    if !params.same_shape(grads) || mask.len() != params.num_layers() {
        return Err(Error::ShapeMismatch {
            op: "sgd_step",
            left: vec![params.num_layers(), params.num_params()],
            right: vec![mask.len(), grads.num_params()],
        });
    }
    if !lr.is_finite() {
        return Err(Error::invalid(format!("learning rate must be finite, got {lr}")));
    }
    let mut out = params.clone();
    for ((layer, g), &train) in out.layers_mut().iter_mut().zip(grads.layers()).zip(mask) {
        if !train {
            continue;
        }
        for (w, gw) in layer.weight.data_mut().iter_mut().zip(g.weight.data()) {
            *w -= lr * gw;
        }
        for (b, gb) in layer.bias.data_mut().iter_mut().zip(g.bias.data()) {
            *b -= lr * gb;
        }
    }
    Ok(out)
}
