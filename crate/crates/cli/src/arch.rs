//! Compact architecture strings such as `conv8+pool,conv16+pool,conv16,fc64,fc`.
//!
//! * `conv<n>[x<k>][s<s>]`: `n` filters of size `k×k` (default 3), stride `s`
//!   (default 1), padding `k/2`, followed by ReLU.
//! * `+pool[<p>]`: ReLU then non-overlapping `p×p` max pooling (default 2).
//! * `fc<n>`: fully connected with ReLU; a bare `fc` is the classifier layer
//!   with one output per class and no activation. It must come last.

use enprune::{Error, LayerShape, PostOp, Result};

pub const DEFAULT_ARCH: &str = "conv8+pool,conv16+pool,conv16,fc64,fc";

fn number(text: &str, what: &str, token: &str) -> Result<usize> {
    text.parse::<usize>()
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::Config(format!("bad {what} in layer '{token}'")))
}

/// Expands `spec` into layer shapes for inputs `[c, h, w]` and `classes` outputs.
pub fn parse_arch(spec: &str, input: [usize; 3], classes: usize, batch: usize) -> Result<Vec<(LayerShape, PostOp)>> {
    let tokens: Vec<&str> = spec.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
    if tokens.is_empty() {
        return Err(Error::Config("empty architecture".into()));
    }
    let mut dims = input;
    let mut out = Vec::new();
    for (idx, &token) in tokens.iter().enumerate() {
        let (body, post) = match token.split_once('+') {
            Some((b, p)) => {
                let size = match p.strip_prefix("pool") {
                    Some("") => 2,
                    Some(n) => number(n, "pool size", token)?,
                    None => return Err(Error::Config(format!("unknown post-op in layer '{token}'"))),
                };
                (b, PostOp::relu_pool(size))
            }
            None => (token, PostOp::Relu),
        };
        let [c, h, w] = dims;
        let (shape, post) = if let Some(rest) = body.strip_prefix("conv") {
            let (rest, stride) = match rest.split_once('s') {
                Some((r, s)) => (r, number(s, "stride", token)?),
                None => (rest, 1),
            };
            let (filters, k) = match rest.split_once('x') {
                Some((f, k)) => (number(f, "filter count", token)?, number(k, "kernel size", token)?),
                None => (number(rest, "filter count", token)?, 3),
            };
            (LayerShape::conv(c, h, w, filters, k, k, stride, k / 2), post)
        } else if let Some(rest) = body.strip_prefix("fc") {
            if rest.is_empty() {
                if idx + 1 != tokens.len() {
                    return Err(Error::Config("the classifier 'fc' must be the last layer".into()));
                }
                (LayerShape::fc(c, h, w, classes), PostOp::Identity)
            } else {
                if matches!(post, PostOp::ReluMaxPool { .. }) {
                    return Err(Error::Config(format!("cannot pool after '{token}'")));
                }
                (LayerShape::fc(c, h, w, number(rest, "width", token)?), post)
            }
        } else {
            return Err(Error::Config(format!("unknown layer '{token}'")));
        };
        let shape = shape.with_batch(batch);
        shape.validate()?;
        dims = post.output_dims(shape.output_dims())?;
        out.push((shape, post));
    }
    if out.last().map(|l| l.1) != Some(PostOp::Identity) {
        return Err(Error::Config("architecture must end with the classifier 'fc'".into()));
    }
    Ok(out)
}
