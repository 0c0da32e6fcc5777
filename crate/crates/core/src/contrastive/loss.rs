use crate::autodiff::{Tape, Var};
use crate::encoders::Embedding;
use crate::error::{Error, Result};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `dot(a, b) / (|a| |b|)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Contract(
            "cosine similarity of a zero-norm embedding".into(),
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Row-major `B x B` matrix of `cos(x_i, y_j) * e^scale`.
pub fn compute_logits(xs: &[Embedding], ys: &[Embedding], scale: f64) -> Result<Vec<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::Contract(format!(
            "logits between batches of {} and {} embeddings",
            xs.len(),
            ys.len()
        )));
    }
    let m = scale.exp();
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for x in xs {
        for y in ys {
            out.push(cosine_similarity(&x.vector, &y.vector)? * m);
        }
    }
    Ok(out)
}

/// Scaled cosine logits on the tape: rows of `x [B, d]` against rows of
/// `y [B, d]`, multiplied by `exp(scale)`.
pub fn logits_on_tape(tape: &mut Tape, x: Var, y: Var, scale: Var) -> Result<Var> {
    let nx = tape.l2_normalize_rows(x);
    let ny = tape.l2_normalize_rows(y);
    let nyt = tape.transpose(ny)?;
    let sim = tape.matmul(nx, nyt)?;
    let mult = tape.exp(scale);
    tape.mul(sim, mult)
}

/// Mean cross entropy of each row of `logits [B, B]` against target `i`.
fn diagonal_ce(tape: &mut Tape, logits: Var) -> Result<Var> {
    let b = tape.shape(logits)[0];
    let lp = tape.log_softmax_rows(logits);
    let mut eye = vec![0.0; b * b];
    for i in 0..b {
        eye[i * b + i] = 1.0;
    }
    let eye = tape.constant(vec![b, b], eye)?;
    let picked = tape.mul(lp, eye)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / b as f64))
}

/// Row-wise and column-wise identity-target cross entropy of every matrix,
/// averaged over all `2 * logits.len()` terms.
pub fn contrastive_loss(tape: &mut Tape, logits: &[Var]) -> Result<Var> {
    if logits.is_empty() {
        return Err(Error::Contract(
            "contrastive loss of no logit matrices".into(),
        ));
    }
    let b = tape.shape(logits[0])[0];
    for l in logits {
        let s = tape.shape(*l);
        if s.len() != 2 || s[0] != s[1] || s[0] != b {
            return Err(Error::Shape {
                op: "contrastive_loss",
                shapes: logits.iter().map(|l| tape.shape(*l).to_vec()).collect(),
            });
        }
    }
    if b < 2 {
        return Err(Error::Contract(format!(
            "contrastive loss needs a batch of at least 2, got {b}"
        )));
    }
    let mut terms = Vec::with_capacity(2 * logits.len());
    for &l in logits {
        terms.push(diagonal_ce(tape, l)?);
        let lt = tape.transpose(l)?;
        terms.push(diagonal_ce(tape, lt)?);
    }
    let mut total = terms[0];
    for t in &terms[1..] {
        total = tape.add(total, *t)?;
    }
    Ok(tape.scale(total, 1.0 / terms.len() as f64))
}

/// Loss value for plain row-major `B x B` matrices.
pub fn contrastive_loss_value(matrices: &[&[f64]], b: usize) -> Result<f64> {
    let mut tape = Tape::no_grad();
    let vars = matrices
        .iter()
        .map(|m| tape.constant(vec![b, b], m.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let l = contrastive_loss(&mut tape, &vars)?;
    Ok(tape.value(l)[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::Modality;
    use proptest::prelude::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding {
            vector: v.to_vec(),
            modality: Modality::Audio,
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn logits_scale_and_identity() {
        let xs = [
            emb(&[1.0, 0.0, 0.0]),
            emb(&[0.0, 2.0, 0.0]),
            emb(&[0.0, 0.0, 0.5]),
        ];
        let raw = compute_logits(&xs, &xs, 0.0).unwrap();
        let scaled = compute_logits(&xs, &xs, 1.5).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((raw[i * 3 + j] - want).abs() < 1e-15);
                assert!((scaled[i * 3 + j] - want * 1.5f64.exp()).abs() < 1e-12);
            }
        }
        assert!(compute_logits(&xs, &xs[..2], 0.0).is_err());
    }

    #[test]
    fn zero_logits_give_ln_b() {
        for b in [2usize, 4, 8] {
            let z = vec![0.0; b * b];
            let l = contrastive_loss_value(&[&z, &z, &z], b).unwrap();
            assert!((l - (b as f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn two_by_two_identity_closed_form() {
        // row CE of [[s, 0], [0, s]] is ln(1 + e^-s); s = 0 gives ln 2
        for s in [0.0, 0.7, 3.0] {
            let m = [s, 0.0, 0.0, s];
            let l = contrastive_loss_value(&[&m], 2).unwrap();
            assert!((l - (1.0 + (-s).exp()).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_logits_decrease_to_zero() {
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let s = k as f64 * 0.5;
            let m: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { s } else { 0.0 }).collect();
            let l = contrastive_loss_value(&[&m, &m, &m], 4).unwrap();
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-7);
    }

    #[test]
    fn batch_of_one_is_rejected() {
        assert!(matches!(
            contrastive_loss_value(&[&[0.0]], 1),
            Err(Error::Contract(_))
        ));
    }

    proptest! {
        #[test]
        fn permutation_invariance(vals in prop::collection::vec(-3.0f64..3.0, 48), i in 0usize..4, j in 0usize..4) {
            let b = 4;
            let mats: Vec<Vec<f64>> = vals.chunks(16).map(|c| c.to_vec()).collect();
            let swap = |m: &Vec<f64>| {
                let mut p: Vec<usize> = (0..b).collect();
                p.swap(i, j);
                let mut out = vec![0.0; b * b];
                for r in 0..b {
                    for c in 0..b {
                        out[r * b + c] = m[p[r] * b + p[c]];
                    }
                }
                out
            };
            let swapped: Vec<Vec<f64>> = mats.iter().map(swap).collect();
            let a = contrastive_loss_value(&mats.iter().map(|m| m.as_slice()).collect::<Vec<_>>(), b).unwrap();
            let c = contrastive_loss_value(&swapped.iter().map(|m| m.as_slice()).collect::<Vec<_>>(), b).unwrap();
            prop_assert!((a - c).abs() < 1e-12);
        }
    }
}
