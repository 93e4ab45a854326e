use std::sync::Arc;

use coop_nn::{
    grad_check, Activation, AttentionBlock, GradCheckConfig, KeySets, LayerNorm, Mlp, ParamId, ParameterStore, Result,
    Tape, Var,
};

/// Contracts `x` with fixed pseudo-random weights so no coordinate of the
/// gradient is trivially zero.
fn project(t: &mut Tape, x: Var) -> Result<Var> {
    let (r, c) = t.dims(x);
    let w: Vec<f64> = (0..r * c).map(|i| ((i * 7919 % 23) as f64 - 11.0) / 7.0).collect();
    let y = t.mul_const(x, Arc::new(w))?;
    Ok(t.sum_all(y))
}

fn check(store: &ParameterStore, f: impl Fn(&mut Tape) -> Result<Var>) {
    let report = grad_check(store, &GradCheckConfig::default(), f).unwrap();
    assert!(report.passed(), "{report:?}");
}

fn store_with(shapes: &[(&str, Vec<usize>)]) -> (ParameterStore, Vec<ParamId>) {
    let mut s = ParameterStore::new(11);
    let ids = shapes.iter().map(|(n, sh)| s.init_uniform(*n, sh.clone(), 1).unwrap()).collect();
    (s, ids)
}

#[test]
fn elementwise_ops() {
    let (s, ids) = store_with(&[("a", vec![3, 4]), ("b", vec![3, 4])]);
    check(&s, |t| {
        let a = t.param(ids[0]);
        let b = t.param(ids[1]);
        let x = t.mul(a, b)?;
        let y = t.silu(x);
        let z = t.softplus(a);
        let e = t.exp(b);
        let sq = t.square(z);
        let sum = t.add(y, sq)?;
        let diff = t.sub(sum, e)?;
        let scaled = t.scale(diff, 0.7);
        project(t, scaled)
    });
}

#[test]
fn ln_and_abs_away_from_kinks() {
    let (s, ids) = store_with(&[("a", vec![2, 3])]);
    check(&s, |t| {
        let a = t.param(ids[0]);
        let sq = t.square(a);
        let shifted = t.exp(sq);
        let l = t.ln(shifted);
        let m = t.abs(l);
        project(t, m)
    });
}

#[test]
fn matmul_and_bias() {
    let (s, ids) = store_with(&[("x", vec![3, 5]), ("w", vec![5, 4]), ("b", vec![4])]);
    check(&s, |t| {
        let x = t.param(ids[0]);
        let w = t.param(ids[1]);
        let b = t.param(ids[2]);
        let y = coop_nn::linear(t, x, w, b)?;
        project(t, y)
    });
}

#[test]
fn layer_norm_block() {
    let mut s = ParameterStore::new(5);
    let x = s.init_uniform("x", vec![3, 6], 1).unwrap();
    let ln = LayerNorm::new(&mut s, "ln", 6).unwrap();
    check(&s, |t| {
        let xv = t.param(x);
        let y = ln.forward(t, xv)?;
        project(t, y)
    });
}

#[test]
fn mlp_forward() {
    let mut s = ParameterStore::new(5);
    let x = s.init_uniform("x", vec![4, 3], 1).unwrap();
    let mlp = Mlp::new(&mut s, "mlp", &[3, 8, 8, 2], Activation::Silu).unwrap();
    check(&s, |t| {
        let xv = t.param(x);
        let y = mlp.forward(t, xv)?;
        project(t, y)
    });
}

#[test]
fn sparse_multi_head_attention() {
    let mut s = ParameterStore::new(9);
    let x = s.init_uniform("x", vec![4, 8], 1).unwrap();
    let mem = s.init_uniform("mem", vec![5, 8], 1).unwrap();
    let block = AttentionBlock::new(&mut s, "blk", 8, 2).unwrap();
    let sets = Arc::new(KeySets::from_lists(5, vec![vec![0, 2], vec![1], vec![0, 1, 2, 3, 4], vec![4, 3]]).unwrap());
    check(&s, |t| {
        let xv = t.param(x);
        let mv = t.param(mem);
        let y = block.forward(t, xv, mv, sets.clone())?;
        project(t, y)
    });
}

#[test]
fn masked_softmax_and_log_softmax() {
    let (s, ids) = store_with(&[("a", vec![2, 5])]);
    let mask = vec![true, false, true, true, false, false, true, true, true, true];
    let m2 = Arc::new(mask.clone());
    check(&s, |t| {
        let a = t.param(ids[0]);
        let p = t.softmax(a, Some(&mask))?;
        let lp = t.log_softmax(a, Some(m2.clone()))?;
        let both = t.add(p, lp)?;
        project(t, both)
    });
}

#[test]
fn outer_sum_select_gather_concat() {
    let (s, ids) = store_with(&[("a", vec![1, 3]), ("b", vec![1, 4]), ("m", vec![3, 2])]);
    check(&s, |t| {
        let a = t.param(ids[0]);
        let b = t.param(ids[1]);
        let o = t.outer_sum(a, b)?;
        let lp = t.log_softmax(o, None)?;
        let pick = t.select(lp, 5)?;
        let m = t.param(ids[2]);
        let g = t.gather_rows(m, Arc::new(vec![2, 0, 2]))?;
        let c = t.concat_cols(g, g)?;
        let r = t.reshape(c, 2, 6)?;
        let mr = t.mean_rows(r);
        let pm = project(t, mr)?;
        let sum = t.add(pm, pick)?;
        Ok(sum)
    });
}

#[test]
fn bce_and_min() {
    let (s, ids) = store_with(&[("a", vec![2, 3]), ("b", vec![2, 3])]);
    let targets = Arc::new(vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    check(&s, |t| {
        let a = t.param(ids[0]);
        let b = t.param(ids[1]);
        let shifted = t.scale(b, 0.5);
        let m = t.min(a, shifted)?;
        let bce = t.bce_with_logits(a, targets.clone())?;
        let sum = t.add(m, bce)?;
        let mean = t.mean_all(sum);
        let pm = project(t, sum)?;
        t.add(mean, pm)
    });
}
