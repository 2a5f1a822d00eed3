//! Central finite differences against the analytic reverse pass, op by op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vmc_nn::{BatchNorm, Conv2d, Graph, LayerNorm, Linear, NnError, ParamKind, ParamStore, Tensor, Var};

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Checks every weight in `store` for the scalar loss produced by `f`.
fn check<F>(store: &mut ParamStore<f64>, training: bool, f: F)
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var, NnError>,
{
    let mut g = Graph::new(training);
    let loss = f(&mut g, store).unwrap();
    let grads = g.backward(loss).unwrap();
    let h = 1e-5;
    for i in 0..store.len() {
        if store.entries()[i].kind != ParamKind::Weight {
            continue;
        }
        let id = vmc_nn::ParamId(i as u32);
        let analytic = grads.get(store, id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape.clone()));
        for j in 0..store.get(id).len() {
            let orig = store.get(id).data[j];
            store.get_mut(id).data[j] = orig + h;
            let mut gp = Graph::new(training);
            let lp = f(&mut gp, store).unwrap();
            let up = gp.value(lp).data[0];
            store.get_mut(id).data[j] = orig - h;
            let mut gm = Graph::new(training);
            let lm = f(&mut gm, store).unwrap();
            let down = gm.value(lm).data[0];
            store.get_mut(id).data[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data[j];
            let err = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(1e-3));
            assert!(err < 1e-5, "{} [{j}]: analytic {a} vs numeric {numeric}", store.entries()[i].name);
        }
    }
}

#[test]
fn conv_and_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let c1 = Conv2d::new(&mut store, "c1", 2, 3, 3, 2, 1, &mut rng);
    let c2 = Conv2d::new(&mut store, "c2", 3, 2, 2, 1, 0, &mut rng);
    for e in store.entries_mut() {
        e.value.data.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    let x = random_tensor(vec![2, 2, 6, 5], &mut rng);
    let target = random_tensor(vec![2, 2, 2, 2], &mut rng);
    check(&mut store, true, |g, s| {
        let xi = g.input(x.clone());
        let h = c1.forward(g, s, xi)?;
        let h = g.tanh(h);
        let y = c2.forward(g, s, h)?;
        let t = g.input(target.clone());
        g.mse(y, t)
    });
}

#[test]
fn batch_norm_training_and_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for training in [true, false] {
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", 2, 3, 3, 1, 1, &mut rng);
        let bn = BatchNorm::new(&mut store, "bn", 3);
        let lin = Linear::new(&mut store, "l", 3 * 4 * 4, 2, 1.0, &mut rng);
        store.get_mut(bn.gamma).data = vec![0.7, 1.3, -0.4];
        store.get_mut(bn.beta).data = vec![0.1, -0.2, 0.3];
        store.get_mut(bn.running_mean).data = vec![0.05, -0.1, 0.2];
        store.get_mut(bn.running_var).data = vec![0.9, 1.4, 0.6];
        let x = random_tensor(vec![3, 2, 4, 4], &mut rng);
        let target = random_tensor(vec![3, 2], &mut rng);
        check(&mut store, training, |g, s| {
            let xi = g.input(x.clone());
            let h = conv.forward(g, s, xi)?;
            let h = bn.forward(g, s, h)?;
            let h = g.tanh(h);
            let h = g.flatten(h)?;
            let y = lin.forward(g, s, h)?;
            let t = g.input(target.clone());
            g.mse(y, t)
        });
    }
}

#[test]
fn layer_norm_concat_slice_and_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let l1 = Linear::new(&mut store, "l1", 4, 6, 1.0, &mut rng);
    let ln = LayerNorm::new(&mut store, "ln", 6);
    let l2 = Linear::new(&mut store, "l2", 9, 3, 1.0, &mut rng);
    let log_std = store.add("log_std", random_tensor(vec![3], &mut rng), ParamKind::Weight);
    store.get_mut(ln.gamma).data.iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
    let x = random_tensor(vec![5, 4], &mut rng);
    check(&mut store, true, |g, s| {
        let xi = g.input(x.clone());
        let h = l1.forward(g, s, xi)?;
        let h = ln.forward(g, s, h)?;
        let h = g.tanh(h);
        let a = g.slice_cols(h, 1, 3)?;
        let b = g.slice_cols(h, 3, 3)?;
        let d = g.sub(b, a)?;
        let cat = g.concat_cols(&[h, d])?;
        let y = l2.forward(g, s, cat)?;
        let ls = g.param(s, log_std);
        let ls = g.broadcast_rows(ls, 5)?;
        let e = g.exp(ls);
        let prod = g.mul(y, e)?;
        let m = g.min(prod, y)?;
        let c = g.clamp(m, -0.8, 0.8);
        let rows = g.sum_cols(c)?;
        let sq = g.square(rows);
        let sc = g.scale(sq, 0.5);
        let off = g.add_scalar(sc, 1.0);
        Ok(g.sum_all(off))
    });
}

#[test]
fn spatial_mean_pool() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let c = Conv2d::new(&mut store, "c", 1, 4, 3, 2, 1, &mut rng);
    let x = random_tensor(vec![2, 1, 11, 11], &mut rng);
    check(&mut store, true, |g, s| {
        let xi = g.input(x.clone());
        let h = c.forward(g, s, xi)?;
        let h = g.relu(h);
        let h = g.avg_pool(h, 3)?;
        let p = g.spatial_mean(h)?;
        let sq = g.square(p);
        Ok(g.mean_all(sq))
    });
}

#[test]
fn input_gradient_through_conv() {
    // dL/dx checked by treating the input as a parameter.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let xid = store.add("x", random_tensor(vec![2, 2, 5, 5], &mut rng), ParamKind::Weight);
    let mut wstore = ParamStore::new();
    let c = Conv2d::new(&mut wstore, "c", 2, 3, 3, 2, 1, &mut rng);
    wstore.set_frozen(true);
    check(&mut store, true, |g, s| {
        let xi = g.param(s, xid);
        let y = c.forward(g, &wstore, xi)?;
        let y = g.tanh(y);
        let sq = g.square(y);
        Ok(g.sum_all(sq))
    });
}
