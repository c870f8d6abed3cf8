use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resdyn::fdt::{FdtConfig, FdtModel, HistoryWindow, NormStats, Readout, Variant};
use resdyn::numerics::{grad_check, Graph, Tensor};

fn random_blocks(cfg: &FdtConfig, batch: usize, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let zl = Tensor::randn(batch * cfg.d_v(), cfg.t_l, 1.0, rng);
    let off = cfg.t_l - cfg.t_s;
    let zs = Tensor::from_fn(batch * cfg.d_v(), cfg.t_s, |r, j| zl.get(r, off + j));
    (zs, zl)
}

fn gradcheck_variant(cfg: &FdtConfig, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = FdtModel::new(cfg, NormStats::identity(cfg.n), seed).unwrap();
    let batch = 2;
    let (zs, zl) = random_blocks(cfg, batch, &mut rng);
    let target = Tensor::randn(batch, cfg.horizon() * cfg.n, 1.0, &mut rng);
    let net = model.net.clone();
    let rep = grad_check(
        &mut model.store,
        |g, s| {
            let (zs, zl) = (g.input(zs.clone()), g.input(zl.clone()));
            let out = net.forward_batch(g, s, zs, zl, batch);
            g.sq_err_sum(out.pred, target.clone())
        },
        1e-5,
        1e-4,
        usize::MAX,
    );
    assert!(rep.passed, "{:?} seed {seed}: {rep:?}", cfg.variant);
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for seed in 0..3 {
        gradcheck_variant(&FdtConfig::tiny(2), seed);
    }
}

#[test]
fn variant_gradients_match_finite_differences() {
    for variant in [Variant::NoGlobalToken, Variant::NoShortContext, Variant::NoMemory] {
        gradcheck_variant(&FdtConfig { variant, ..FdtConfig::tiny(2) }, 7);
    }
    gradcheck_variant(&FdtConfig { readout: Readout::GlobalToken, d_k: 8, layer_norm: true, ..FdtConfig::tiny(2) }, 8);
}

#[test]
fn zero_short_embedding_gives_identity_rows() {
    let cfg = FdtConfig::tiny(2);
    let mut model = FdtModel::new(&cfg, NormStats::identity(2), 1).unwrap();
    let w_e = model.net.short_embedding().unwrap().w;
    model.store.value_mut(w_e).fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (zs, _) = random_blocks(&cfg, 1, &mut rng);
    let mut g = Graph::inference();
    let zs = g.input(zs);
    let e = model.net.embed_short(&mut g, &model.store, zs, 1);
    let p = model.store.value(model.net.identity_embedding().unwrap());
    assert_eq!(g.value(e), p);
}

#[test]
fn identical_histories_differ_by_identity_embedding() {
    let cfg = FdtConfig::tiny(2);
    let model = FdtModel::new(&cfg, NormStats::identity(2), 2).unwrap();
    let zs = Tensor::from_fn(cfg.d_v(), cfg.t_s, |_, j| j as f64 * 0.3 - 0.2);
    let mut g = Graph::inference();
    let zs = g.input(zs);
    let ev = model.net.embed_short(&mut g, &model.store, zs, 1);
    let e = g.value(ev).clone();
    let p = model.store.value(model.net.identity_embedding().unwrap());
    for c in 0..cfg.d_model {
        let de = e.get(0, c) - e.get(3, c);
        let dp = p.get(0, c) - p.get(3, c);
        assert!((de - dp).abs() < 1e-14);
    }
    assert_eq!(e.rows(), cfg.d_v());
}

#[test]
fn zero_layers_encode_is_identity() {
    let cfg = FdtConfig { n_layers: 0, ..FdtConfig::tiny(2) };
    let model = FdtModel::new(&cfg, NormStats::identity(2), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let e = Tensor::randn(2 * cfg.d_v(), cfg.d_model, 1.0, &mut rng);
    let mut g = Graph::inference();
    let ev = g.input(e.clone());
    let (ctx, glob, atts) = model.net.encode_context(&mut g, &model.store, ev, 2);
    assert!(atts.is_empty());
    assert_eq!(g.value(ctx), &e);
    assert_eq!(g.value(glob.unwrap()).rows(), 2);
}

#[test]
fn memory_attention_is_a_distribution_and_uniform_for_identical_channels() {
    let cfg = FdtConfig::tiny(2);
    let model = FdtModel::new(&cfg, NormStats::identity(2), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (zs, zl) = random_blocks(&cfg, 3, &mut rng);
    for f in model.forecast_blocks(zs, zl, 3).unwrap() {
        assert_eq!(f.alpha.len(), cfg.d_v());
        assert!((f.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(f.alpha.iter().all(|a| *a > 0.0 && *a < 1.0));
    }
    let row: Vec<f64> = (0..cfg.t_l).map(|j| (j as f64).sin()).collect();
    let zl = Tensor::from_fn(cfg.d_v(), cfg.t_l, |_, j| row[j]);
    let zs = Tensor::from_fn(cfg.d_v(), cfg.t_s, |_, j| row[cfg.t_l - cfg.t_s + j]);
    let f = model.forecast_blocks(zs, zl, 1).unwrap().remove(0);
    let u = 1.0 / cfg.d_v() as f64;
    assert!(f.alpha.iter().all(|a| (a - u).abs() < 1e-12), "{:?}", f.alpha);
}

#[test]
fn dominant_key_attracts_attention() {
    // A channel whose long-window embedding aligns with the query takes the mass.
    let cfg = FdtConfig { variant: Variant::NoShortContext, ..FdtConfig::tiny(2) };
    let model = FdtModel::new(&cfg, NormStats::identity(2), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (zs, mut zl) = random_blocks(&cfg, 1, &mut rng);
    zl.data_mut().iter_mut().for_each(|v| *v *= 0.01);
    let base = model.forecast_blocks(zs.clone(), zl.clone(), 1).unwrap().remove(0).alpha;
    // pick the channel the query already prefers and scale it up
    let best = (0..cfg.d_v()).max_by(|&a, &b| base[a].total_cmp(&base[b])).unwrap();
    let mut best_alpha = base[best];
    for scale in [10.0, 100.0, 1000.0] {
        let mut z = zl.clone();
        z.row_mut(best).iter_mut().for_each(|v| *v *= scale);
        let a = model.forecast_blocks(zs.clone(), z, 1).unwrap().remove(0).alpha;
        if a[best] > best_alpha {
            best_alpha = a[best];
        }
    }
    assert!(best_alpha > base[best]);
}

#[test]
fn zero_decoder_output_layer_gives_zero_forecast() {
    let cfg = FdtConfig::tiny(2);
    let mut model = FdtModel::new(&cfg, NormStats::identity(2), 6).unwrap();
    let last = model.net.decoder().last().clone();
    model.store.value_mut(last.w).fill(0.0);
    model.store.value_mut(last.b.unwrap()).fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (zs, zl) = random_blocks(&cfg, 1, &mut rng);
    let f = model.forecast_blocks(zs, zl, 1).unwrap().remove(0);
    assert_eq!(f.base, DMatrix::zeros(3, 2));
}

fn filled_window(cfg: &FdtConfig, extra: usize, seed: u64) -> (HistoryWindow, Vec<[DVector<f64>; 3]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = HistoryWindow::new(cfg.n, cfg.t_l);
    let mut samples = Vec::new();
    for _ in 0..cfg.t_l + extra {
        let s: [DVector<f64>; 3] =
            std::array::from_fn(|_| DVector::from_fn(cfg.n, |_, _| rng.random_range(-1.0..1.0)));
        w.push(&s[0], &s[1], &s[2]).unwrap();
        samples.push(s);
    }
    (w, samples)
}

#[test]
fn desk_forecast_shape_and_determinism() {
    let cfg = FdtConfig::desk(5);
    let model = FdtModel::new(&cfg, NormStats::identity(5), 7).unwrap();
    let (w, _) = filled_window(&cfg, 0, 7);
    let a = model.forward(&w).unwrap();
    let b = model.forward(&w).unwrap();
    assert_eq!(a.base.shape(), (7, 5));
    assert_eq!(a.latent.len(), cfg.d_k);
    assert_eq!(a, b);
}

#[test]
fn samples_older_than_long_window_are_ignored() {
    let cfg = FdtConfig::tiny(2);
    let model = FdtModel::new(&cfg, NormStats::identity(2), 8).unwrap();
    let (_, samples) = filled_window(&cfg, 5, 8);
    let mut other = HistoryWindow::new(cfg.n, cfg.t_l);
    let junk = DVector::from_element(cfg.n, 50.0);
    for _ in 0..7 {
        other.push(&junk, &junk, &junk).unwrap();
    }
    let mut same = HistoryWindow::new(cfg.n, cfg.t_l);
    for s in &samples[samples.len() - cfg.t_l..] {
        other.push(&s[0], &s[1], &s[2]).unwrap();
        same.push(&s[0], &s[1], &s[2]).unwrap();
    }
    assert_eq!(model.forward(&other).unwrap(), model.forward(&same).unwrap());
}

#[test]
fn underfilled_window_is_rejected() {
    let cfg = FdtConfig::tiny(2);
    let model = FdtModel::new(&cfg, NormStats::identity(2), 9).unwrap();
    let w = HistoryWindow::new(cfg.n, cfg.t_l);
    assert!(model.forward(&w).is_err());
}

#[test]
fn consistent_channel_permutation_leaves_forecast_unchanged() {
    let cfg = FdtConfig::tiny(2);
    let d_v = cfg.d_v();
    let d = cfg.d_model;
    let model = FdtModel::new(&cfg, NormStats::identity(2), 10).unwrap();
    let perm: Vec<usize> = vec![3, 0, 5, 1, 4, 2];
    let mut permuted = model.clone();
    let p_id = model.net.identity_embedding().unwrap();
    let p = model.store.value(p_id);
    *permuted.store.value_mut(p_id) = Tensor::from_fn(d_v, d, |i, c| p.get(perm[i], c));
    // decoder input is the flattened token blocks: permute the context blocks
    let w0 = model.net.decoder().layers[0].w;
    let w = model.store.value(w0);
    *permuted.store.value_mut(w0) = Tensor::from_fn(w.rows(), w.cols(), |o, col| {
        let (tok, c) = (col / d, col % d);
        let src = if tok < d_v { perm[tok] * d + c } else { col };
        w.get(o, src)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (zs, zl) = random_blocks(&cfg, 1, &mut rng);
    let zs_p = Tensor::from_fn(d_v, cfg.t_s, |i, j| zs.get(perm[i], j));
    let zl_p = Tensor::from_fn(d_v, cfg.t_l, |i, j| zl.get(perm[i], j));
    let a = model.forecast_blocks(zs, zl, 1).unwrap().remove(0);
    let b = permuted.forecast_blocks(zs_p, zl_p, 1).unwrap().remove(0);
    assert!((a.base - b.base).amax() < 1e-10);
    for i in 0..d_v {
        assert!((a.alpha[perm[i]] - b.alpha[i]).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_roundtrip_reproduces_forecast() {
    let cfg = FdtConfig { variant: Variant::NoMemory, d_k: 8, ..FdtConfig::tiny(2) };
    let mut norm = NormStats::identity(2);
    norm.out_std = vec![2.0, 0.5];
    norm.in_mean[1] = 0.3;
    let model = FdtModel::new(&cfg, norm, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let loaded = FdtModel::load(&path).unwrap();
    assert_eq!(loaded.config(), &cfg);
    assert_eq!(loaded.norm, model.norm);
    let (w, _) = filled_window(&cfg, 0, 11);
    assert_eq!(model.forward(&w).unwrap(), loaded.forward(&w).unwrap());
    let bytes = std::fs::read(&path).unwrap();
    model.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

#[test]
fn batched_loss_matches_brute_force_sum() {
    let cfg = FdtConfig::tiny(2);
    let model = FdtModel::new(&cfg, NormStats::identity(2), 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let batch = 4;
    let (zs, zl) = random_blocks(&cfg, batch, &mut rng);
    let target = Tensor::randn(batch, cfg.horizon() * cfg.n, 1.0, &mut rng);
    let mut g = Graph::inference();
    let (zsv, zlv) = (g.input(zs.clone()), g.input(zl.clone()));
    let out = model.net.forward_batch(&mut g, &model.store, zsv, zlv, batch);
    let l = g.sq_err_sum(out.pred, target.clone());
    let graph_loss = g.value(l).get(0, 0);
    let fc = model.forecast_blocks(zs, zl, batch).unwrap();
    let mut brute = 0.0;
    for (b, f) in fc.iter().enumerate() {
        for j in 0..cfg.horizon() {
            for i in 0..cfg.n {
                let e = target.get(b, j * cfg.n + i) - f.base[(j, i)];
                brute += e * e;
            }
        }
    }
    let tgts: Vec<DMatrix<f64>> = (0..batch)
        .map(|b| DMatrix::from_fn(cfg.horizon(), cfg.n, |j, i| target.get(b, j * cfg.n + i)))
        .collect();
    let fcs: Vec<DMatrix<f64>> = fc.into_iter().map(|f| f.base).collect();
    let ms = resdyn::fdt::multi_step_loss(&fcs, &tgts).unwrap();
    assert!((graph_loss - brute).abs() < 1e-12 * brute.max(1.0));
    assert!((ms - brute).abs() < 1e-12 * brute.max(1.0));
}
