use std::collections::BTreeMap;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Dense target vector over `n` answer slots.
pub fn dense_targets(targets: &BTreeMap<usize, f64>, n: usize) -> Result<Vec<f64>> {
    let mut t = vec![0.0; n];
    for (&a, &s) in targets {
        if a >= n {
            return Err(Error::Invalid(format!("target answer {a} outside {n} slots")));
        }
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Invalid(format!("target score {s} for answer {a} outside [0, 1]")));
        }
        t[a] = s;
    }
    Ok(t)
}

/// Binary cross-entropy summed over every answer slot, written as
/// `softplus(z) - t * z`.
pub fn xe_loss(g: &mut Graph, logits: Var, targets: &BTreeMap<usize, f64>) -> Result<Var> {
    let n = g.shape(logits).iter().product();
    let t = dense_targets(targets, n)?;
    let t = g.constant(Tensor::new(g.shape(logits).to_vec(), t)?);
    let sp = g.softplus(logits)?;
    let tz = g.mul(t, logits)?;
    let per_slot = g.sub(sp, tz)?;
    g.sum(per_slot)
}

fn as_vec1(g: &mut Graph, x: Var) -> Result<Var> {
    g.reshape(x, &[1])
}

/// `log(sum_i exp(terms_i)) - terms_0` style contrastive denominator:
/// returns `log(exp(pos) + sum_i w_i exp(neg_i)) - pos`.
fn contrastive(g: &mut Graph, pos: Var, negs: &[Var], weights: Option<&[Var]>) -> Result<Var> {
    let e_pos = g.exp(pos)?;
    let mut parts = vec![as_vec1(g, e_pos)?];
    for (i, &n) in negs.iter().enumerate() {
        let e = g.exp(n)?;
        let term = match weights {
            Some(w) => g.mul(w[i], e)?,
            None => e,
        };
        parts.push(as_vec1(g, term)?);
    }
    let all = g.concat(&parts)?;
    let denom = g.sum(all)?;
    let log_denom = g.log(denom)?;
    let pos = g.reshape(pos, &[])?;
    g.sub(log_denom, pos)
}

/// Global contrastive loss on cosine similarities of raw logit vectors.
pub fn cr_g_loss(g: &mut Graph, anchor: Var, positive: Var, negatives: &[Var], tau: f64) -> Result<Var> {
    if negatives.is_empty() {
        return Err(Error::Invalid("contrastive loss needs at least one negative".into()));
    }
    let sp = g.cosine(anchor, positive)?;
    let sp = g.scale(sp, 1.0 / tau)?;
    let mut sn = Vec::with_capacity(negatives.len());
    for &n in negatives {
        let s = g.cosine(anchor, n)?;
        sn.push(g.scale(s, 1.0 / tau)?);
    }
    contrastive(g, sp, &sn, None)
}

/// Local contrastive loss on the sigmoid probability of answer `m`; each
/// negative term is weighted by its own probability.
pub fn cr_l_loss(g: &mut Graph, anchor: Var, negatives: &[Var], m: usize, tau: f64) -> Result<Var> {
    if negatives.is_empty() {
        return Err(Error::Invalid("contrastive loss needs at least one negative".into()));
    }
    let pick = |g: &mut Graph, v: Var| -> Result<Var> {
        let l = g.select(v, &[m])?;
        let p = g.sigmoid(l)?;
        g.reshape(p, &[])
    };
    let pa = pick(g, anchor)?;
    let sa = g.scale(pa, 1.0 / tau)?;
    let mut weights = Vec::with_capacity(negatives.len());
    let mut sn = Vec::with_capacity(negatives.len());
    for &n in negatives {
        let p = pick(g, n)?;
        sn.push(g.scale(p, 1.0 / tau)?);
        weights.push(p);
    }
    contrastive(g, sa, &sn, Some(&weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_var(g: &mut Graph, v: &[f64]) -> Var {
        g.constant(Tensor::vector(v.to_vec()))
    }

    #[test]
    fn xe_single_slot_at_zero_is_ln2() {
        let mut g = Graph::new();
        let z = vec_var(&mut g, &[0.0]);
        let l = xe_loss(&mut g, z, &[(0, 1.0)].into_iter().collect()).unwrap();
        assert!((g.value(l).item().unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn xe_saturated_fit_is_zero() {
        let mut g = Graph::new();
        let z = vec_var(&mut g, &[800.0, -800.0]);
        let l = xe_loss(&mut g, z, &[(0, 1.0)].into_iter().collect()).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 0.0);
    }

    #[test]
    fn xe_matches_scalar_loop() {
        let z = [0.3, -1.7, 2.2, 0.05, -0.6];
        let t = [1.0, 0.0, 0.6, 0.0, 0.3];
        let targets: BTreeMap<usize, f64> = t.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, v)| (i, *v)).collect();
        let mut g = Graph::new();
        let zv = vec_var(&mut g, &z);
        let l = xe_loss(&mut g, zv, &targets).unwrap();
        let mut want = 0.0;
        for i in 0..5 {
            let s = 1.0 / (1.0 + (-z[i]).exp());
            want -= t[i] * s.ln() + (1.0 - t[i]) * (1.0 - s).ln();
        }
        assert!((g.value(l).item().unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn xe_rejects_bad_targets() {
        let mut g = Graph::new();
        let z = vec_var(&mut g, &[0.0, 0.0]);
        assert!(xe_loss(&mut g, z, &[(0, 1.5)].into_iter().collect()).is_err());
        assert!(xe_loss(&mut g, z, &[(2, 1.0)].into_iter().collect()).is_err());
    }

    #[test]
    fn cr_g_closed_forms() {
        let mut g = Graph::new();
        let a = vec_var(&mut g, &[1.0, 0.0]);
        let same = vec_var(&mut g, &[2.0, 0.0]);
        let orth = vec_var(&mut g, &[0.0, 3.0]);
        let l = cr_g_loss(&mut g, a, same, &[same], 1.0).unwrap();
        assert!((g.value(l).item().unwrap() - 2f64.ln()).abs() < 1e-12);
        let l = cr_g_loss(&mut g, a, same, &[orth], 1.0).unwrap();
        assert!((g.value(l).item().unwrap() - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
        let l = cr_g_loss(&mut g, a, same, &[same, same, same], 1.0).unwrap();
        assert!((g.value(l).item().unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(cr_g_loss(&mut g, a, same, &[], 1.0).is_err());
        let zero = vec_var(&mut g, &[0.0, 0.0]);
        assert!(cr_g_loss(&mut g, a, same, &[zero], 1.0).is_err());
    }

    #[test]
    fn cr_l_closed_forms() {
        let mut g = Graph::new();
        let a = vec_var(&mut g, &[0.0, 3.0]);
        let dead = vec_var(&mut g, &[-1e4, 0.0]);
        let half = vec_var(&mut g, &[0.0, 0.0]);
        let l = cr_l_loss(&mut g, a, &[dead], 0, 1.0).unwrap();
        assert!(g.value(l).item().unwrap().abs() < 1e-12);
        let l = cr_l_loss(&mut g, a, &[half], 0, 1.0).unwrap();
        assert!((g.value(l).item().unwrap() - 1.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cr_l_grows_with_negative_probability() {
        let mut last = f64::NEG_INFINITY;
        for z in [-3.0, -1.0, 0.0, 0.5, 2.0, 4.0] {
            let mut g = Graph::new();
            let a = vec_var(&mut g, &[0.2]);
            let n = vec_var(&mut g, &[z]);
            let l = cr_l_loss(&mut g, a, &[n], 0, 1.0).unwrap();
            let v = g.value(l).item().unwrap();
            assert!(v > last);
            last = v;
        }
    }
}
