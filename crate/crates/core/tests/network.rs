use dicforge::net::{
    mc_infer, scope, stack_pairs, Checkpoint, Mode, Model, NetworkConfig, SmallBlock, TrainConfig, TrainSet, Trainer,
    WideBlock,
};
use dicforge::dataset::Sample;
use dicforge::{seed, DisplacementField, Grid};
use dicforge_tensor::{ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;

fn tiny_config() -> NetworkConfig {
    NetworkConfig {
        channels: [4, 8, 8, 8],
        head_mid: 4,
        ..NetworkConfig::default()
    }
}

fn random_grid(h: usize, w: usize, s: u64) -> Grid {
    let mut rng = seed::rng(s);
    Grid::from_fn(h, w, |_, _| rng.gen_range(0.0..1.0))
}

fn random_tensor<T: Real>(shape: &[usize], s: u64) -> Tensor<T> {
    let mut rng = seed::rng(s);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::from_f64(rng.gen_range(-1.0..1.0))).collect()).unwrap()
}

fn zero_params_with_prefix<T: Real>(store: &mut ParamStore<T>, prefix: &str, keep: &[&str]) {
    for p in store.iter_mut() {
        if p.name.starts_with(prefix) && !keep.iter().any(|k| p.name.ends_with(k)) {
            p.value.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

#[test]
fn output_matches_input_size() {
    let m = Model::<f32>::new(tiny_config(), 1).unwrap();
    for (h, w) in [(16, 16), (32, 48), (64, 64)] {
        let f = m
            .predict(&random_grid(h, w, 1), &random_grid(h, w, 2), Mode::Deterministic, 0)
            .unwrap();
        assert_eq!(f.dims(), (h, w));
    }
    assert!(m.predict(&random_grid(24, 24, 1), &random_grid(24, 24, 2), Mode::Deterministic, 0).is_err());
}

#[test]
fn stage_shapes_follow_the_schedule() {
    let m = Model::<f32>::new(NetworkConfig::default(), 0).unwrap();
    let mut t = Tape::<f32>::new(Mode::Deterministic, 0);
    let x = t.input(random_tensor(&[1, 2, 32, 32], 3), false);
    let d1 = m.d1.forward(&mut t, &m.params, x).unwrap();
    assert_eq!(t.value(d1).shape(), [1, 32, 16, 16]);
    let d2 = m.d2.forward(&mut t, &m.params, d1).unwrap();
    assert_eq!(t.value(d2).shape(), [1, 64, 8, 8]);
    let g1 = m.g1.forward(&mut t, &m.params, d2).unwrap();
    let g2 = m.g2.forward(&mut t, &m.params, g1).unwrap();
    assert_eq!(t.value(g2).shape(), [1, 256, 2, 2]);
    let u1 = m.u1.forward(&mut t, &m.params, g2, None).unwrap();
    let u2 = m.u2.forward(&mut t, &m.params, u1, Some(d2)).unwrap();
    let u3 = m.u3.forward(&mut t, &m.params, u2, None).unwrap();
    assert_eq!(t.value(u3).shape(), [1, 32, 16, 16]);
    let y = m.head.forward(&mut t, &m.params, u3).unwrap();
    assert_eq!(t.value(y).shape(), [1, 2, 32, 32]);
}

#[test]
fn deterministic_forward_is_repeatable() {
    let m = Model::<f32>::new(tiny_config(), 4).unwrap();
    let (r, d) = (random_grid(32, 32, 5), random_grid(32, 32, 6));
    let a = m.predict(&r, &d, Mode::Deterministic, 1).unwrap();
    let b = m.predict(&r, &d, Mode::Deterministic, 2).unwrap();
    assert_eq!(a, b);
}

fn prelu_reference(x: &Tensor<f64>, a: f64) -> Vec<f64> {
    x.data().iter().map(|&v| if v >= 0.0 { v } else { a * v }).collect()
}

#[test]
fn zeroed_residual_blocks_reduce_to_prelu() {
    let mut m = Model::<f64>::new(tiny_config(), 2).unwrap();
    zero_params_with_prefix(&mut m.params, "d1.small.", &["slope"]);
    zero_params_with_prefix(&mut m.params, "d1.wide.", &["slope"]);
    let x0 = random_tensor::<f64>(&[2, 4, 8, 8], 7);
    for which in ["small", "wide"] {
        let mut t = Tape::<f64>::new(Mode::Train, 3);
        let x = t.input(x0.clone(), false);
        let y = if which == "small" {
            m.d1.small[0].forward(&mut t, &m.params, x).unwrap()
        } else {
            m.d1.wide[0].forward(&mut t, &m.params, x).unwrap()
        };
        assert_eq!(t.value(y).data(), prelu_reference(&x0, 0.25).as_slice(), "{which}");
    }
}

#[test]
fn zeroed_main_branches_reduce_to_residual_paths() {
    let cfg = NetworkConfig {
        channels: [4, 4, 8, 8],
        head_mid: 4,
        ..NetworkConfig::default()
    };
    let mut m = Model::<f64>::new(cfg, 5).unwrap();
    // d2 down: 4 -> 4, no projection
    for name in ["d2.down.reduce", "d2.down.conv", "d2.down.expand"] {
        zero_params_with_prefix(&mut m.params, name, &[]);
    }
    let x0 = random_tensor::<f64>(&[1, 4, 8, 8], 8);
    let mut t = Tape::<f64>::new(Mode::Deterministic, 0);
    let x = t.input(x0.clone(), false);
    let y = m.d2.down.forward(&mut t, &m.params, x).unwrap();
    let pooled = t.maxpool2d(x).unwrap();
    let want = prelu_reference(t.value(pooled), 0.25);
    assert_eq!(t.value(y).data(), want.as_slice());

    // u2 up: 8 -> 4 with projection
    for name in ["u2.up.reduce", "u2.up.deconv", "u2.up.expand"] {
        zero_params_with_prefix(&mut m.params, name, &[]);
    }
    let x0 = random_tensor::<f64>(&[1, 8, 4, 4], 9);
    let mut t = Tape::<f64>::new(Mode::Deterministic, 0);
    let x = t.input(x0, false);
    let y = m.u2.up.forward(&mut t, &m.params, x).unwrap();
    let up = t.upsample_bilinear2x(x).unwrap();
    let proj = m.u2.up.proj.unwrap().forward(&mut t, &m.params, up).unwrap();
    let want = prelu_reference(t.value(proj), 0.25);
    assert_eq!(t.value(y).data(), want.as_slice());
}

#[test]
fn zero_inputs_to_fusion_give_zero() {
    let m = Model::<f64>::new(tiny_config(), 6).unwrap();
    let fusion = m.u2.fusion.as_ref().unwrap();
    let mut t = Tape::<f64>::new(Mode::Deterministic, 0);
    let a = t.input(Tensor::zeros(&[1, 8, 4, 4]), true);
    let b = t.input(Tensor::zeros(&[1, 8, 4, 4]), true);
    let y = fusion.forward(&mut t, &m.params, a, b).unwrap();
    assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    assert_eq!(t.value(y).shape(), [1, 8, 4, 4]);

    let mut t = Tape::<f64>::new(Mode::Deterministic, 0);
    let a = t.input(random_tensor(&[1, 8, 4, 4], 1), true);
    let b = t.input(random_tensor(&[1, 8, 4, 4], 2), true);
    let y = fusion.forward(&mut t, &m.params, a, b).unwrap();
    let s = t.sum(y).unwrap();
    t.backward(s);
    for v in [a, b] {
        assert!(t.grad(v).unwrap().data().iter().any(|&g| g != 0.0));
    }
}

#[test]
fn zero_head_gives_zero_field() {
    let mut m = Model::<f32>::new(tiny_config(), 7).unwrap();
    zero_params_with_prefix(&mut m.params, "head.", &[]);
    let f = m
        .predict(&random_grid(16, 16, 1), &random_grid(16, 16, 2), Mode::Deterministic, 0)
        .unwrap();
    assert_eq!(f, DisplacementField::zeros(16, 16));
}

/// Rows and columns where the block's output moves when one input pixel does.
fn footprint(block: impl Fn(&mut Tape<f64>, Var) -> Var, c: usize, n: usize) -> (usize, usize) {
    let base = random_tensor::<f64>(&[1, c, n, n], 11);
    let run = |x0: Tensor<f64>| {
        let mut t = Tape::<f64>::new(Mode::Deterministic, 0);
        let x = t.input(x0, false);
        let y = block(&mut t, x);
        t.value(y).clone()
    };
    let y0 = run(base.clone());
    let mut bumped = base;
    let centre = n / 2;
    for ch in 0..c {
        bumped.data_mut()[(ch * n + centre) * n + centre] += 0.5;
    }
    let y1 = run(bumped);
    let (mut rows, mut cols) = (Vec::new(), Vec::new());
    for ch in 0..c {
        for r in 0..n {
            for col in 0..n {
                let i = (ch * n + r) * n + col;
                if y0.data()[i] != y1.data()[i] {
                    rows.push(r);
                    cols.push(col);
                }
            }
        }
    }
    let span = |v: &[usize]| v.iter().max().unwrap() - v.iter().min().unwrap() + 1;
    (span(&rows), span(&cols))
}

#[test]
fn receptive_field_footprints() {
    let m = Model::<f64>::new(NetworkConfig::default(), 8).unwrap();
    let small: &SmallBlock = &m.d1.small[0];
    let wide: &WideBlock = &m.d1.wide[0];
    let fs = footprint(|t, x| small.forward(t, &m.params, x).unwrap(), 32, 15);
    assert_eq!(fs, (3, 3));
    let fw = footprint(|t, x| wide.forward(t, &m.params, x).unwrap(), 32, 15);
    assert_eq!(fw, (5, 5));
}

#[test]
fn exactly_one_skip_connection() {
    let m = Model::<f32>::new(NetworkConfig::default(), 9).unwrap();
    let mut t = Tape::<f32>::new(Mode::Train, 1);
    let x = t.input(random_tensor(&[1, 2, 32, 32], 1), false);
    let y = m.forward(&mut t, x).unwrap();
    t.set_scope(scope::LOSS);
    let target = t.input(Tensor::zeros(&[1, 2, 32, 32]), false);
    t.mse_loss(y, target).unwrap();
    let mut skips = Vec::new();
    for (from, to) in t.edges() {
        let (a, b) = (t.scope_of(from), t.scope_of(to));
        if a != b && b != a + 1 {
            skips.push((a, b));
        }
    }
    skips.dedup();
    assert_eq!(skips, vec![(scope::D2, scope::U2)]);
}

#[test]
fn whole_network_gradient_check_f64() {
    use dicforge_tensor::gradcheck::{numeric_grad, rel_error};
    let cfg = NetworkConfig {
        dropout_p: 0.1,
        ..tiny_config()
    };
    let model = Model::<f64>::new(cfg, 10).unwrap();
    let x = random_tensor::<f64>(&[1, 2, 16, 16], 21);
    let target = random_tensor::<f64>(&[1, 2, 16, 16], 22);
    let loss = |m: &Model<f64>, grad: bool| {
        let mut t = Tape::<f64>::new(Mode::Train, 77);
        let xv = t.input(x.clone(), false);
        let y = m.forward(&mut t, xv).unwrap();
        let tv = t.input(target.clone(), false);
        let l = t.mse_loss(y, tv).unwrap();
        let value = t.value(l).data()[0];
        if grad {
            t.backward(l);
            let mut store = m.params.clone();
            store.zero_grad();
            t.accumulate_param_grads(&mut store);
            (value, Some(store))
        } else {
            (value, None)
        }
    };
    let (_, grads) = loss(&model, true);
    let grads = grads.unwrap();
    let ids: Vec<_> = model.params.ids().collect();
    let mut rng = seed::rng(5);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let id = ids[rng.gen_range(0..ids.len())];
        let n = model.params.get(id).value.numel();
        let k = rng.gen_range(0..n);
        let analytic = grads.get(id).grad.data()[k];
        let numeric = numeric_grad(
            |v| {
                let mut m = model.clone();
                m.params.get_mut(id).value.data_mut()[k] = v[0];
                loss(&m, false).0
            },
            &[model.params.get(id).value.data()[k]],
            &[0],
            1e-5,
        )[0];
        worst = worst.max(rel_error(analytic, numeric, 1e-6));
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn mc_without_dropout_is_the_deterministic_forward() {
    let cfg = NetworkConfig {
        dropout_p: 0.0,
        ..tiny_config()
    };
    let m = Model::<f32>::new(cfg, 12).unwrap();
    let (r, d) = (random_grid(32, 32, 1), random_grid(32, 32, 2));
    let out = mc_infer(&m, &r, &d, 8, 3).unwrap();
    let det = m.predict(&r, &d, Mode::Deterministic, 0).unwrap();
    assert!(out.variance.u.data().iter().chain(out.variance.v.data()).all(|&v| v == 0.0));
    for (a, b) in out.mean.u.data().iter().zip(det.u.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(out.mean, det);
}

#[test]
fn mc_with_dropout_is_seeded_and_nonnegative() {
    let m = Model::<f32>::new(tiny_config(), 13).unwrap();
    let (r, d) = (random_grid(32, 32, 1), random_grid(32, 32, 2));
    let a = mc_infer(&m, &r, &d, 8, 4).unwrap();
    let b = mc_infer(&m, &r, &d, 8, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.samples, 8);
    assert!(a.variance.u.data().iter().chain(a.variance.v.data()).all(|&v| v >= 0.0));
    assert!(a.variance.u.max() > 0.0);
    // mean and population variance of the individual passes
    let passes: Vec<DisplacementField> = (0..8)
        .map(|k| m.predict(&r, &d, Mode::MonteCarlo, seed::mix(4, k)).unwrap())
        .collect();
    for i in [0usize, 100, 777] {
        let xs: Vec<f64> = passes.iter().map(|p| p.u.data()[i] as f64).collect();
        let mean = xs.iter().sum::<f64>() / 8.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 8.0;
        assert!((a.mean.u.data()[i] as f64 - mean).abs() < 1e-6);
        assert!((a.variance.u.data()[i] as f64 - var).abs() < 1e-6);
    }
    assert!(mc_infer(&m, &r, &d, 0, 4).is_err());
}

fn toy_samples(n: usize, size: usize) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let reference = random_grid(size, size, 100 + i as u64);
            let deformed = random_grid(size, size, 200 + i as u64);
            let field = DisplacementField::new(
                Grid::from_fn(size, size, |r, _| r as f32 / size as f32),
                Grid::from_fn(size, size, |_, c| -(c as f32) / size as f32),
            );
            Sample {
                reference,
                deformed,
                field,
                seed: i as u64,
                index: i as u64,
            }
        })
        .collect()
}

#[test]
fn first_epoch_lowers_the_loss() {
    let data = TrainSet::from_samples(&toy_samples(8, 16)).unwrap();
    let m = Model::<f32>::new(tiny_config(), 14).unwrap();
    let eval = |m: &Model<f32>| {
        let x = stack_pairs::<f32>(&[(&toy_samples(1, 16)[0].reference, &toy_samples(1, 16)[0].deformed)]).unwrap();
        let mut t = Tape::new(Mode::Deterministic, 0);
        let xv = t.input(x, false);
        let y = m.forward(&mut t, xv).unwrap();
        let f = toy_samples(1, 16).remove(0).field;
        let target = dicforge::net::stack_fields::<f32>(&[&f]).unwrap();
        let tv = t.input(target, false);
        let l = t.mse_loss(y, tv).unwrap();
        t.value(l).data()[0]
    };
    let before = eval(&m);
    let mut tr = Trainer::new(
        m,
        TrainConfig {
            batch_size: 4,
            lr: 1e-3,
            seed: 1,
        },
    )
    .unwrap();
    let stats = tr.train_epoch(&data).unwrap();
    assert_eq!((stats.epoch, stats.step), (0, 2));
    assert!(eval(&tr.model) < before);
}

#[test]
fn resume_continues_identically() {
    let data = TrainSet::from_samples(&toy_samples(6, 16)).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        lr: 1e-3,
        seed: 2,
    };
    let mut straight = Trainer::new(Model::<f32>::new(tiny_config(), 15).unwrap(), cfg.clone()).unwrap();
    for _ in 0..5 {
        straight.train_step(&data).unwrap();
    }

    let mut first = Trainer::new(Model::<f32>::new(tiny_config(), 15).unwrap(), cfg.clone()).unwrap();
    for _ in 0..3 {
        first.train_step(&data).unwrap();
    }
    let mut bytes = Vec::new();
    first.model.checkpoint(true).write(&mut bytes).unwrap();
    let restored = Model::<f32>::from_checkpoint(&Checkpoint::read(bytes.as_slice()).unwrap(), 0.1).unwrap();
    let mut second = Trainer::new(restored, cfg).unwrap();
    assert_eq!(second.step(), 3);
    for _ in 0..2 {
        second.train_step(&data).unwrap();
    }
    assert_eq!(second.step(), 5);
    for (a, b) in straight.model.params.iter().zip(second.model.params.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value.data(), b.value.data(), "{}", a.name);
    }
}

#[test]
fn checkpoint_config_inference() {
    let m = Model::<f32>::new(NetworkConfig::default(), 16).unwrap();
    let back = Model::<f32>::from_checkpoint(&m.checkpoint(false), 0.1).unwrap();
    assert_eq!(back.config, m.config);
    let r = random_grid(16, 16, 1);
    assert_eq!(
        back.predict(&r, &r, Mode::Deterministic, 0).unwrap(),
        m.predict(&r, &r, Mode::Deterministic, 0).unwrap()
    );
}
