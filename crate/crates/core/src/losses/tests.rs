use rand::Rng;

use super::*;
use crate::config::{LossSet, WeightsSource};
use crate::gradcheck::{check_gradients, GradCheckOptions};
use crate::nets::{build_bank, build_discriminator, build_extractor, DiscriminatorSpec, FeatureExtractorSpec};
use crate::rng::{seeded_rng, RngSeed};
use crate::tensor::Tensor;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = seeded_rng(RngSeed(seed), "loss-test");
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn eval(f: impl FnOnce(&mut Tape) -> Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let v = f(&mut tape).unwrap();
    tape.value(v).item()
}

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol * (1.0 + b.abs()), "{a} vs {b}");
}

#[test]
fn uninformative_discriminator_collaborative_loss() {
    let p = Tensor::full(&[2, 1, 3, 3], 0.5);
    let loss = eval(|t| {
        let r = t.constant(p.clone());
        let f1 = t.constant(p.clone());
        let f2 = t.constant(p.clone());
        adversarial_d_loss(t, r, &[(f1, 1.0), (f2, 1.0)], GanVariant::Vanilla)
    });
    close(loss, -3.0 * 0.5f64.ln(), 1e-12);
    close(loss, 2.0794, 1e-4);
}

#[test]
fn perfect_lsgan_discriminator_has_zero_loss() {
    let loss = eval(|t| {
        let r = t.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let f = t.constant(Tensor::zeros(&[1, 1, 2, 2]));
        adversarial_d_loss(t, r, &[(f, 1.0)], GanVariant::LeastSquares)
    });
    assert_eq!(loss, 0.0);
}

#[test]
fn zero_student_weight_gives_exactly_zero_gradient() {
    for variant in [GanVariant::Vanilla, GanVariant::Nonsaturating, GanVariant::LeastSquares] {
        let mut t = Tape::new();
        let r = t.leaf(random(&[1, 1, 2, 2], 1).map(|v| 0.5 + 0.4 * v), true);
        let ft = t.leaf(random(&[1, 1, 2, 2], 2).map(|v| 0.5 + 0.4 * v), true);
        let fs = t.leaf(random(&[1, 1, 2, 2], 3).map(|v| 0.5 + 0.4 * v), true);
        let loss = adversarial_d_loss(&mut t, r, &[(ft, 1.0), (fs, 0.0)], variant).unwrap();
        let g = t.backward(loss).unwrap();
        assert!(g.get_or_zeros(fs, &[1, 1, 2, 2]).data().iter().all(|&v| v == 0.0));
        assert!(g.get_or_zeros(ft, &[1, 1, 2, 2]).data().iter().any(|&v| v != 0.0));
    }
}

#[test]
fn nan_scores_are_rejected() {
    let mut t = Tape::new();
    let r = t.constant(Tensor::full(&[1], f64::NAN));
    let f = t.constant(Tensor::full(&[1], 0.5));
    assert!(matches!(adversarial_d_loss(&mut t, r, &[(f, 1.0)], GanVariant::Vanilla), Err(Error::Numerical(_))));
    assert!(matches!(adversarial_g_loss(&mut t, r, GanVariant::Nonsaturating), Err(Error::Numerical(_))));
}

#[test]
fn generator_adversarial_forms() {
    let g = |p: f64, v| eval(|t| {
        let f = t.constant(Tensor::full(&[1, 1, 2, 2], p));
        adversarial_g_loss(t, f, v)
    });
    assert!(g(1.0, GanVariant::Nonsaturating).abs() < 1e-6);
    assert_eq!(g(1.0, GanVariant::LeastSquares), 0.0);
    close(g(0.5, GanVariant::Vanilla), 0.5f64.ln(), 1e-12);
    close(g(0.5, GanVariant::Vanilla), -0.6931, 1e-4);
}

fn l1_loop(a: &Tensor, b: &Tensor) -> f64 {
    let mut s = 0.0;
    for i in 0..a.numel() {
        s += (a.data()[i] - b.data()[i]).abs();
    }
    s / a.numel() as f64
}

#[test]
fn per_pixel_distill_values() {
    let ones = Tensor::full(&[1, 2, 2, 2], 1.0);
    let zeros = Tensor::zeros(&[1, 2, 2, 2]);
    let v = eval(|t| {
        let a = t.constant(ones.clone());
        let b = t.constant(zeros.clone());
        per_pixel_distill(t, &[a], &[b], DistanceVariant::L1)
    });
    assert_eq!(v, 1.0);

    let (a0, a1) = (random(&[2, 3, 4, 4], 10), random(&[2, 5, 2, 2], 11));
    let (b0, b1) = (random(&[2, 3, 4, 4], 12), random(&[2, 5, 2, 2], 13));
    let same = eval(|t| {
        let a = [t.constant(a0.clone()), t.constant(a1.clone())];
        let b = [t.constant(a0.clone()), t.constant(a1.clone())];
        per_pixel_distill(t, &a, &b, DistanceVariant::L1)
    });
    assert_eq!(same, 0.0);
    let v = eval(|t| {
        let a = [t.constant(a0.clone()), t.constant(a1.clone())];
        let b = [t.constant(b0.clone()), t.constant(b1.clone())];
        per_pixel_distill(t, &a, &b, DistanceVariant::L1)
    });
    close(v, l1_loop(&a0, &b0) + l1_loop(&a1, &b1), 1e-9);

    let v2 = eval(|t| {
        let a = [t.constant(a0.clone())];
        let b = [t.constant(b0.clone())];
        per_pixel_distill(t, &a, &b, DistanceVariant::L2)
    });
    let sq: f64 = a0.data().iter().zip(b0.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    close(v2, sq / a0.numel() as f64, 1e-9);
}

#[test]
fn per_pixel_distill_names_mismatched_tap() {
    let mut t = Tape::new();
    let a = [t.constant(Tensor::zeros(&[1, 2, 2, 2])), t.constant(Tensor::zeros(&[1, 2, 2, 2]))];
    let b = [t.constant(Tensor::zeros(&[1, 2, 2, 2])), t.constant(Tensor::zeros(&[1, 3, 2, 2]))];
    match per_pixel_distill(&mut t, &a, &b, DistanceVariant::L1) {
        Err(Error::Config(m)) => assert!(m.contains("tap 1"), "{m}"),
        other => panic!("{other:?}"),
    }
}

fn gram_loop(f: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let s = f.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let x = |b: usize, ch: usize, p: usize| f.data()[(b * c + ch) * hw + p];
    (0..n)
        .map(|b| {
            (0..c)
                .map(|i| {
                    (0..c)
                        .map(|j| (0..hw).map(|p| x(b, i, p) * x(b, j, p)).sum::<f64>() / (c * hw) as f64)
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn permute_spatial(f: &Tensor, seed: u64) -> Tensor {
    let s = f.shape();
    let hw = s[2] * s[3];
    let mut perm: Vec<usize> = (0..hw).collect();
    let mut rng = seeded_rng(RngSeed(seed), "perm");
    for i in (1..hw).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_fn(s, |k| f.data()[k - k % hw + perm[k % hw]])
}

#[test]
fn gram_hand_example_and_symmetry() {
    let f = Tensor::from_fn(&[1, 2, 2, 2], |k| if k < 4 { 1.0 } else { 0.0 });
    let mut t = Tape::new();
    let v = t.constant(f);
    let g = gram(&mut t, v).unwrap();
    assert_eq!(t.value(g).shape(), &[1, 2, 2]);
    assert_eq!(t.value(g).data(), &[0.5, 0.0, 0.0, 0.0]);

    let f = random(&[2, 4, 3, 5], 20);
    let v = t.constant(f.clone());
    let g = gram(&mut t, v).unwrap();
    let oracle = gram_loop(&f);
    for b in 0..2 {
        let mut m = nalgebra::DMatrix::<f64>::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                let got = t.value(g).data()[(b * 4 + i) * 4 + j];
                close(got, oracle[b][i][j], 1e-12);
                m[(i, j)] = got;
                assert_eq!(got, t.value(g).data()[(b * 4 + j) * 4 + i]);
            }
        }
        assert!(m.symmetric_eigenvalues().min() >= -1e-9);
    }

    let p = permute_spatial(&f, 3);
    let vp = t.constant(p);
    let gp = gram(&mut t, vp).unwrap();
    for (a, b) in t.value(g).data().iter().zip(t.value(gp).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn style_loss_matches_oracle_and_ignores_positions() {
    let (a0, b0) = (random(&[2, 3, 4, 4], 30), random(&[2, 3, 4, 4], 31));
    let (a1, b1) = (random(&[2, 6, 2, 2], 32), random(&[2, 6, 2, 2], 33));
    let v = eval(|t| {
        let a = [t.constant(a0.clone()), t.constant(a1.clone())];
        let b = [t.constant(b0.clone()), t.constant(b1.clone())];
        style_loss(t, &a, &b)
    });
    let mut oracle = 0.0;
    for (a, b) in [(&a0, &b0), (&a1, &b1)] {
        let (ga, gb) = (gram_loop(a), gram_loop(b));
        let mut s = 0.0;
        for n in 0..ga.len() {
            for i in 0..ga[n].len() {
                for j in 0..ga[n].len() {
                    s += (ga[n][i][j] - gb[n][i][j]).abs();
                }
            }
        }
        oracle += s / ga.len() as f64;
    }
    close(v, oracle, 1e-9);

    let p = permute_spatial(&a0, 4);
    let v = eval(|t| {
        let a = [t.constant(a0.clone())];
        let b = [t.constant(p.clone())];
        style_loss(t, &a, &b)
    });
    assert!(v.abs() < 1e-12);
    let v = eval(|t| {
        let a = [t.constant(a0.clone())];
        let b = [t.constant(a0.clone())];
        style_loss(t, &a, &b)
    });
    assert_eq!(v, 0.0);
}

#[test]
fn feature_reconstruction_values() {
    let a = random(&[2, 3, 4, 4], 40);
    let v = eval(|t| {
        let x = [t.constant(a.clone())];
        let y = [t.constant(a.map(|v| v + 3.0))];
        feature_reconstruction_loss(t, &x, &y)
    });
    close(v, 3.0, 1e-12);
    // constant differences give the same value at any spatial size
    for hw in [1, 2, 7] {
        let v = eval(|t| {
            let x = [t.constant(Tensor::zeros(&[1, 2, hw, hw]))];
            let y = [t.constant(Tensor::full(&[1, 2, hw, hw], 0.25))];
            feature_reconstruction_loss(t, &x, &y)
        });
        assert_eq!(v, 0.25);
    }
    let b = random(&[2, 3, 4, 4], 41);
    let v = eval(|t| {
        let x = [t.constant(a.clone())];
        let y = [t.constant(b.clone())];
        feature_reconstruction_loss(t, &x, &y)
    });
    close(v, l1_loop(&a, &b), 1e-9);
    let mut t = Tape::new();
    let x = [t.constant(a.clone())];
    let y = [t.constant(Tensor::zeros(&[2, 3, 4, 2]))];
    assert!(feature_reconstruction_loss(&mut t, &x, &y).is_err());
}

fn tiny_extractor() -> FeatureExtractor {
    build_extractor(&FeatureExtractorSpec {
        widths: vec![4, 6],
        source: WeightsSource::FixedRandom(RngSeed(9)),
    })
    .unwrap()
}

#[test]
fn perceptual_loss_degenerate_cases() {
    let phi = tiny_extractor();
    let img = random(&[1, 3, 8, 8], 50);
    let other = random(&[1, 3, 8, 8], 51);
    let run = |a: &Tensor, b: &Tensor, lf: f64, ls: f64| {
        let mut t = Tape::new();
        let (x, y) = (t.constant(a.clone()), t.constant(b.clone()));
        let p = perceptual_loss(&mut t, x, y, &phi, &[0, 1], lf, ls).unwrap();
        (t.value(p.total).item(), t.value(p.fea).item(), t.value(p.sty).item())
    };
    assert_eq!(run(&img, &img, 10.0, 1e4).0, 0.0);
    assert_eq!(run(&img, &other, 0.0, 0.0).0, 0.0);
    let (total, fea, sty) = run(&img, &other, 10.0, 1e4);
    assert!(fea > 0.0 && sty > 0.0);
    close(total, 10.0 * fea + 1e4 * sty, 1e-12);
}

struct DcdFixture {
    teacher_bank: DownsamplerBank,
    student_bank: DownsamplerBank,
    disc: Discriminator,
    t_feats: Vec<Tensor>,
    s_feats: Vec<Tensor>,
}

fn dcd_fixture() -> DcdFixture {
    let mut rng = seeded_rng(RngSeed(60), "dcd");
    DcdFixture {
        teacher_bank: build_bank(&[8, 8], true, &mut rng).unwrap(),
        student_bank: build_bank(&[2, 2], false, &mut rng).unwrap(),
        disc: build_discriminator(&DiscriminatorSpec { widths: vec![3, 4], in_channels: 3 }, &mut rng).unwrap(),
        t_feats: vec![random(&[1, 8, 4, 4], 61), random(&[1, 8, 2, 2], 62)],
        s_feats: vec![random(&[1, 2, 4, 4], 63), random(&[1, 2, 2, 2], 64)],
    }
}

fn dcd_opts(taps: &[usize]) -> DcdOptions<'_> {
    DcdOptions { d_taps: taps, target_hw: (8, 8), distance: DistanceVariant::L1, stop_teacher_grad: true }
}

#[test]
fn dcd_is_zero_for_identical_feature_images() {
    let mut rng = seeded_rng(RngSeed(70), "dcd");
    let disc = build_discriminator(&DiscriminatorSpec { widths: vec![3, 4], in_channels: 3 }, &mut rng).unwrap();
    let bank = DownsamplerBank::identity(2, true);
    let student = DownsamplerBank::identity(2, false);
    let feats = [random(&[1, 3, 8, 8], 71), random(&[1, 3, 4, 4], 72)];
    let mut t = Tape::new();
    let sb = student.bind(&mut t, Binding::Train);
    let tf: Vec<_> = feats.iter().map(|f| t.constant(f.clone())).collect();
    let sf: Vec<_> = feats.iter().map(|f| t.constant(f.clone())).collect();
    let nets = DcdNets { teacher_bank: &bank, student_bank: &student, student_bound: &sb, disc: &disc };
    let v = dcd_loss(&mut t, &tf, &sf, &nets, &dcd_opts(&[0, 1])).unwrap();
    assert_eq!(t.value(v).item(), 0.0);
}

#[test]
fn dcd_single_tap_matches_explicit_loop() {
    let mut fx = dcd_fixture();
    let mut rng = seeded_rng(RngSeed(65), "dcd");
    fx.teacher_bank = build_bank(&[8], true, &mut rng).unwrap();
    fx.student_bank = build_bank(&[2], false, &mut rng).unwrap();
    let mut t = Tape::new();
    let sb = fx.student_bank.bind(&mut t, Binding::Train);
    let tf = [t.constant(fx.t_feats[0].clone())];
    let sf = [t.constant(fx.s_feats[0].clone())];
    let nets = DcdNets { teacher_bank: &fx.teacher_bank, student_bank: &fx.student_bank, student_bound: &sb, disc: &fx.disc };
    let v = dcd_loss(&mut t, &tf, &sf, &nets, &dcd_opts(&[1])).unwrap();
    let v = t.value(v).item();

    // recompute each branch separately on a fresh tape
    let response = |bank: &DownsamplerBank, feat: &Tensor| {
        let mut t = Tape::new();
        let b = bank.bind(&mut t, Binding::Constant);
        let d = fx.disc.bind(&mut t, Binding::Constant);
        let x = t.constant(feat.clone());
        let img = bank.project(&mut t, &b, 0, x, (8, 8)).unwrap();
        let out = fx.disc.features(&mut t, &d, img, &[1]).unwrap();
        t.value(out[0]).clone()
    };
    let oracle = l1_loop(&response(&fx.teacher_bank, &fx.t_feats[0]), &response(&fx.student_bank, &fx.s_feats[0]));
    assert!(oracle > 0.0);
    close(v, oracle, 1e-9);
}

#[test]
fn dcd_gradients_reach_only_the_student() {
    let fx = dcd_fixture();
    let mut t = Tape::new();
    let sb = fx.student_bank.bind(&mut t, Binding::Train);
    let tf: Vec<_> = fx.t_feats.iter().map(|f| t.leaf(f.clone(), true)).collect();
    let sf: Vec<_> = fx.s_feats.iter().map(|f| t.leaf(f.clone(), true)).collect();
    let nets = DcdNets { teacher_bank: &fx.teacher_bank, student_bank: &fx.student_bank, student_bound: &sb, disc: &fx.disc };
    let v = dcd_loss(&mut t, &tf, &sf, &nets, &dcd_opts(&[0, 1])).unwrap();
    let g = t.backward(v).unwrap();
    for f in &tf {
        assert!(g.get(*f).is_none());
    }
    let sg = sb.grads(&g, &fx.student_bank.params);
    assert!(sg.values().any(|t| t.data().iter().any(|&v| v != 0.0)));
    assert!(sf.iter().all(|f| g.get(*f).is_some()));

    // the literal reading lets gradients reach teacher features
    let mut t = Tape::new();
    let sb = fx.student_bank.bind(&mut t, Binding::Train);
    let tf: Vec<_> = fx.t_feats.iter().map(|f| t.leaf(f.clone(), true)).collect();
    let sf: Vec<_> = fx.s_feats.iter().map(|f| t.leaf(f.clone(), true)).collect();
    let nets = DcdNets { teacher_bank: &fx.teacher_bank, student_bank: &fx.student_bank, student_bound: &sb, disc: &fx.disc };
    let opts = DcdOptions { stop_teacher_grad: false, ..dcd_opts(&[0, 1]) };
    let v = dcd_loss(&mut t, &tf, &sf, &nets, &opts).unwrap();
    let g = t.backward(v).unwrap();
    assert!(g.get(tf[0]).is_some());
}

#[test]
fn dcd_rejects_bank_mismatch() {
    let fx = dcd_fixture();
    let mut t = Tape::new();
    let sb = fx.student_bank.bind(&mut t, Binding::Train);
    let tf = [t.constant(fx.t_feats[0].clone())];
    let sf = [t.constant(fx.s_feats[0].clone())];
    let nets = DcdNets { teacher_bank: &fx.teacher_bank, student_bank: &fx.student_bank, student_bound: &sb, disc: &fx.disc };
    assert!(matches!(dcd_loss(&mut t, &tf, &sf, &nets, &dcd_opts(&[1])), Err(Error::Config(_))));
}

fn gc(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
    let mut rng = seeded_rng(RngSeed(80), "gradcheck");
    let report = check_gradients(inputs, f, GradCheckOptions::default(), &mut rng).unwrap();
    assert!(report.pass_fraction() >= 0.99, "{report:?}");
}

#[test]
fn loss_gradients_match_finite_differences() {
    let p = |s| random(&[2, 1, 3, 3], s).map(|v| 0.5 + 0.45 * v);
    for variant in [GanVariant::Vanilla, GanVariant::Nonsaturating, GanVariant::LeastSquares] {
        gc(&[p(1), p(2), p(3)], |t, v| adversarial_d_loss(t, v[0], &[(v[1], 1.0), (v[2], 0.7)], variant));
        gc(&[p(4)], |t, v| adversarial_g_loss(t, v[0], variant));
    }
    let (a, b) = (random(&[2, 3, 3, 3], 5), random(&[2, 3, 3, 3], 6));
    gc(&[a.clone(), b.clone()], |t, v| per_pixel_distill(t, &[v[0]], &[v[1]], DistanceVariant::L2));
    gc(&[a.clone(), b.clone()], |t, v| per_pixel_distill(t, &[v[0]], &[v[1]], DistanceVariant::L1));
    gc(&[a.clone(), b.clone()], |t, v| style_loss(t, &[v[0]], &[v[1]]));
    gc(&[a.clone(), b.clone()], |t, v| feature_reconstruction_loss(t, &[v[0]], &[v[1]]));

    let phi = tiny_extractor();
    let (x, y) = (random(&[1, 3, 8, 8], 7), random(&[1, 3, 8, 8], 8));
    gc(&[x, y], |t, v| Ok(perceptual_loss(t, v[0], v[1], &phi, &[0, 1], 10.0, 1e2)?.total));

    let fx = dcd_fixture();
    let mut inputs = fx.s_feats.clone();
    inputs.extend(fx.student_bank.params.iter().map(|(_, p)| p.value.clone()));
    gc(&inputs, |t, v| {
        let mut bank = fx.student_bank.clone();
        for (i, (_, p)) in bank.params.iter_mut().enumerate() {
            p.value = t.value(v[2 + i]).clone();
        }
        let names: Vec<String> = bank.params.iter().map(|(k, _)| k.to_string()).collect();
        let sb = Bound::from_vars(names.into_iter().zip(v[2..].iter().copied()));
        let tf: Vec<_> = fx.t_feats.iter().map(|f| t.constant(f.clone())).collect();
        let nets = DcdNets { teacher_bank: &fx.teacher_bank, student_bank: &bank, student_bound: &sb, disc: &fx.disc };
        dcd_loss(t, &tf, &v[..2], &nets, &dcd_opts(&[0, 1]))
    });
}

fn hp(lambda_dcd: f64, lambda_stu: f64) -> HyperParams {
    HyperParams { lambda_dcd, lambda_stu, ..HyperParams::default() }
}

#[test]
fn total_objective_examples() {
    let parts = LossComponents { gan_g_student: Some(0.5), per: Some(12.0), dcd: Some(0.3), ..Default::default() };
    let r = total_objective(&parts, &hp(1.0, 1.0)).unwrap();
    close(r.total, 12.8, 1e-12);
    let r = total_objective(&parts, &hp(0.0, 0.0)).unwrap();
    assert_eq!(r.total, 12.0);

    let zeros = LossComponents { gan_g_student: Some(0.0), per: Some(0.0), dcd: Some(0.0), ..Default::default() };
    assert_eq!(total_objective(&zeros, &hp(1.0, 1.0)).unwrap().total, 0.0);

    let from_parts = LossComponents { gan_g_student: Some(0.0), fea: Some(0.2), sty: Some(0.001), dcd: Some(0.0), ..Default::default() };
    close(total_objective(&from_parts, &hp(1.0, 1.0)).unwrap().per, 12.0, 1e-12);

    let missing = LossComponents { gan_g_student: Some(0.5), per: Some(1.0), ..Default::default() };
    assert!(total_objective(&missing, &hp(1.0, 1.0)).is_err());
    let only_per = HyperParams { losses: LossSet { per: true, dcd: false, gan: false, fea_dis: false }, ..HyperParams::default() };
    assert_eq!(total_objective(&missing, &only_per).unwrap().total, 1.0);
}

#[test]
fn tape_objective_agrees_with_scalar_recombination() {
    let h = hp(5.0, 0.1);
    let mut t = Tape::new();
    let terms = StudentTerms {
        gan: Some(t.constant(Tensor::scalar(0.7))),
        per: Some(t.constant(Tensor::scalar(3.0))),
        dcd: Some(t.constant(Tensor::scalar(0.2))),
        fea_dis: None,
    };
    let v = student_objective(&mut t, &terms, &h).unwrap();
    let parts = LossComponents { gan_g_student: Some(0.7), per: Some(3.0), dcd: Some(0.2), ..Default::default() };
    close(t.value(v).item(), total_objective(&parts, &h).unwrap().total, 1e-12);
    let missing = StudentTerms { dcd: None, ..terms };
    assert!(student_objective(&mut t, &missing, &h).is_err());
}
