use crate::error::Result;
use crate::numerics::Tensor;

/// Anything that can score the next token after `[prompt; instruction;
/// prefix]`.
pub trait NextTokenModel {
    fn next_logits(&self, prompt: Option<&Tensor>, prefix: &[usize]) -> Result<Vec<f64>>;
    fn eos(&self) -> usize;
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Appends the argmax token until end-of-sequence or `max_len` tokens.
pub fn greedy_decode<M: NextTokenModel + ?Sized>(
    model: &M,
    prompt: Option<&Tensor>,
    max_len: usize,
) -> Result<Vec<usize>> {
    let max_len = max_len.max(1);
    let eos = model.eos();
    let mut out = Vec::new();
    while out.len() < max_len {
        let logits = model.next_logits(prompt, &out)?;
        let tok = argmax(&logits);
        if tok == eos {
            break;
        }
        out.push(tok);
    }
    Ok(out)
}
