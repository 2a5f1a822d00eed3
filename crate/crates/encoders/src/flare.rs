use vmc_nn::{Elem, Graph, Var};

use crate::EncoderError;

/// Concatenates `z_1..z_T` followed by the first differences
/// `z_2 - z_1, .., z_T - z_{T-1}`; output length `(2T - 1) * d`.
pub fn flare_fuse(latents: &[Vec<f32>]) -> Result<Vec<f32>, EncoderError> {
    let first = latents.first().ok_or_else(|| EncoderError::Shape("flare needs at least one latent".into()))?;
    let d = first.len();
    if latents.iter().any(|z| z.len() != d) {
        return Err(EncoderError::Shape("flare latents differ in dimension".into()));
    }
    let mut out = Vec::with_capacity((2 * latents.len() - 1) * d);
    for z in latents {
        out.extend_from_slice(z);
    }
    for pair in latents.windows(2) {
        out.extend(pair[1].iter().zip(&pair[0]).map(|(b, a)| b - a));
    }
    Ok(out)
}

/// Graph version of [`flare_fuse`] for rows laid out as `[z_1 | .. | z_T]`
/// (`[N, T * d]` in, `[N, (2T - 1) * d]` out).
pub fn flare_graph<T: Elem>(g: &mut Graph<T>, z: Var, depth: usize) -> Result<Var, EncoderError> {
    let cols = g.shape(z)[1];
    if depth == 0 || cols % depth != 0 {
        return Err(EncoderError::Shape(format!("{cols} features do not split into {depth} latents")));
    }
    if depth == 1 {
        return Ok(z);
    }
    let d = cols / depth;
    let mut parts = vec![z];
    for t in 1..depth {
        let cur = g.slice_cols(z, t * d, d)?;
        let prev = g.slice_cols(z, (t - 1) * d, d)?;
        parts.push(g.sub(cur, prev)?);
    }
    Ok(g.concat_cols(&parts)?)
}

pub fn fused_dim(d: usize, depth: usize) -> usize {
    (2 * depth).saturating_sub(1) * d
}
