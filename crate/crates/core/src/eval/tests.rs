use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::config::{WeightsSource, WidthFactor};
use crate::error::Error;
use crate::nets::{build_discriminator, build_extractor, build_generator, DiscriminatorSpec, FeatureExtractorSpec, GeneratorSpec};
use crate::rng::{seeded_rng, RngSeed};

fn stats(mean: &[f64], cov: &[f64]) -> GaussianStats {
    let d = mean.len();
    GaussianStats {
        mean: DVector::from_column_slice(mean),
        cov: DMatrix::from_row_slice(d, d, cov),
        n: 2,
    }
}

fn random_spd(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seeded_rng(RngSeed(seed), "spd");
    let a = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1
}

#[test]
fn two_point_statistics() {
    let s = gaussian_stats(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
    assert_eq!(s.mean.as_slice(), &[1.0, 1.0]);
    assert_eq!(s.cov.as_slice(), &[2.0, 2.0, 2.0, 2.0]);
    assert!(gaussian_stats(&[vec![1.0]]).is_err());
}

#[test]
fn statistics_match_summation_oracle() {
    let mut rng = seeded_rng(RngSeed(1), "stats");
    let v: Vec<Vec<f64>> = (0..37).map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let s = gaussian_stats(&v).unwrap();
    let n = v.len() as f64;
    for j in 0..5 {
        let m: f64 = v.iter().map(|x| x[j]).sum::<f64>() / n;
        assert!((s.mean[j] - m).abs() < 1e-10);
        for k in 0..5 {
            let mk: f64 = v.iter().map(|x| x[k]).sum::<f64>() / n;
            let c: f64 = v.iter().map(|x| (x[j] - m) * (x[k] - mk)).sum::<f64>() / (n - 1.0);
            assert!((s.cov[(j, k)] - c).abs() < 1e-10);
            assert_eq!(s.cov[(j, k)], s.cov[(k, j)]);
        }
    }
    let doubled: Vec<Vec<f64>> = v.iter().chain(&v).cloned().collect();
    let s2 = gaussian_stats(&doubled).unwrap();
    assert!((s2.mean.clone() - s.mean.clone()).norm() < 1e-12);
}

#[test]
fn frechet_closed_forms() {
    let one_d = frechet_distance(&stats(&[0.0], &[1.0]), &stats(&[1.0], &[1.0])).unwrap();
    assert!((one_d - 1.0).abs() < 1e-9);
    let one_d = frechet_distance(&stats(&[0.5], &[4.0]), &stats(&[-1.0], &[9.0])).unwrap();
    assert!((one_d - (1.5f64.powi(2) + 1.0)).abs() < 1e-9);
    let diag = frechet_distance(
        &stats(&[0.0, 0.0], &[1.0, 0.0, 0.0, 4.0]),
        &stats(&[0.0, 0.0], &[4.0, 0.0, 0.0, 1.0]),
    )
    .unwrap();
    assert!((diag - 2.0).abs() < 1e-9);
    assert!(frechet_distance(&stats(&[0.0], &[1.0]), &stats(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0])).is_err());
    assert!(matches!(
        frechet_distance(&stats(&[0.0], &[-1.0]), &stats(&[0.0], &[1.0])),
        Err(Error::Numerical(_))
    ));
}

#[test]
fn frechet_identity_and_symmetry_at_64() {
    let a = GaussianStats { mean: DVector::from_fn(64, |i, _| i as f64 * 0.01), cov: random_spd(64, 2), n: 100 };
    let b = GaussianStats { mean: DVector::from_fn(64, |i, _| (i as f64).sin()), cov: random_spd(64, 3), n: 100 };
    assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-6);
    let (ab, ba) = (frechet_distance(&a, &b).unwrap(), frechet_distance(&b, &a).unwrap());
    assert!(ab > 0.0);
    assert!((ab - ba).abs() < 1e-8 * ab.max(1.0), "{ab} {ba}");
}

#[test]
fn matrix_square_root_reconstructs() {
    for seed in 0..3 {
        let s = random_spd(64, seed);
        let r = sqrtm_psd(&s).unwrap();
        let err = (&r * &r - &s).norm() / s.norm();
        assert!(err < 1e-8, "{err}");
    }
}

#[test]
fn counting_hand_examples() {
    use crate::nets::{Block, Layer, Network};
    let net = Network {
        blocks: vec![Block { name: "b".into(), layers: vec![Layer::conv("c", 3, 8, 3, 1, 1), Layer::Relu], residual: false }],
    };
    let r = count_complexity(&net, 3, 32).unwrap();
    assert_eq!((r.total_params, r.total_macs), (224, 221_184));
    assert!(r.is_consistent());
    let one = Network {
        blocks: vec![Block { name: "p".into(), layers: vec![Layer::conv("p", 10, 3, 1, 1, 0)], residual: false }],
    };
    assert_eq!(count_params(&one), 33);
}

#[test]
fn counts_match_serialized_parameters() {
    let mut rng = seeded_rng(RngSeed(5), "arch");
    for _ in 0..10 {
        let spec = GeneratorSpec::teacher(rng.random_range(1..12), rng.random_range(0..4))
            .with_width_factor(WidthFactor::new(rng.random_range(1..4), 4).unwrap());
        let g = build_generator(&spec, &mut rng).unwrap();
        let r = count_complexity(&g.net, 3, 16).unwrap();
        assert_eq!(r.total_params as usize, g.params.flatten().len());
        assert_eq!(count_params(&g.net), r.total_params);
        assert!(r.is_consistent());
        let widths: Vec<usize> = (0..rng.random_range(1..5)).map(|_| rng.random_range(1..9)).collect();
        let d = build_discriminator(&DiscriminatorSpec { widths, in_channels: 3 }, &mut rng).unwrap();
        assert_eq!(count_params(&d.net) as usize, d.params.numel());
    }
}

#[test]
fn desk_teacher_student_ratios() {
    let teacher = GeneratorSpec::teacher(16, 6);
    let student = teacher.with_width_factor(WidthFactor::QUARTER);
    let t = count_complexity(&teacher.network(), 3, 64).unwrap();
    let s = count_complexity(&student.network(), 3, 64).unwrap();
    let p = t.total_params as f64 / s.total_params as f64;
    let m = t.total_macs as f64 / s.total_macs as f64;
    assert!((14.0..=17.0).contains(&p), "param ratio {p}");
    assert!((12.0..=17.0).contains(&m), "MAC ratio {m}");
}

fn embedder() -> crate::nets::FeatureExtractor {
    build_extractor(&FeatureExtractorSpec { widths: vec![8, 16], source: WeightsSource::FixedRandom(RngSeed(7)) }).unwrap()
}

fn images(n: usize, seed: u64) -> Tensor {
    let mut rng = seeded_rng(RngSeed(seed), "imgs");
    Tensor::from_fn(&[n, 3, 16, 16], |_| rng.random_range(-1.0..1.0))
}

#[test]
fn embeddings_are_deterministic() {
    let e = embedder();
    let x = images(3, 1);
    let a = embed_batch(&e, &x).unwrap();
    assert_eq!(a.len(), 3);
    assert!(a.iter().all(|v| v.len() == 16));
    assert_eq!(a, embed_batch(&e, &x).unwrap());
    assert!(matches!(embed_batch(&e, &x.map(|v| v * 2.0)), Err(Error::Validation(_))));
}

#[test]
fn desk_fid_of_constant_generator_is_positive() {
    let e = embedder();
    let mut rng = seeded_rng(RngSeed(2), "g");
    let mut g = build_generator(&GeneratorSpec::teacher(2, 0), &mut rng).unwrap();
    for (path, p) in g.params.iter_mut() {
        if path.starts_with("head") {
            p.value = Tensor::zeros(p.value.shape());
        }
    }
    let x = images(10, 3);
    let real = images(10, 4);
    let r = desk_fid(&g, &x, &real, &e, 10).unwrap();
    assert!(r.desk_fid > 0.0 && r.desk_fid.is_finite());
    assert_eq!(r.embedder_digest, e.params.digest().unwrap());
    assert_eq!(r, desk_fid(&g, &x, &real, &e, 10).unwrap());
    let same = gaussian_stats(&embed_batch(&e, &real).unwrap()).unwrap();
    assert!(frechet_distance(&same, &same).unwrap() < 1e-5);
    assert!(desk_fid(&g, &x, &real, &e, 1).is_err());
}

#[test]
fn dumps_are_counted_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seeded_rng(RngSeed(3), "g");
    let g = build_generator(&GeneratorSpec::teacher(2, 1), &mut rng).unwrap();
    let x = images(1, 5);
    let written = dump_samples(&g, &x, dir.path(), 7).unwrap();
    assert_eq!(written.len(), 1);
    assert!(written[0].ends_with("step000007_sample000.png"));

    let bank = crate::nets::build_bank(&[4, 4, 8, 8], true, &mut rng).unwrap();
    let feats = vec![images(1, 6).map(|v| v), images(1, 7), images(1, 8), images(1, 9)];
    let feats: Vec<Tensor> = feats
        .iter()
        .zip([4, 4, 8, 8])
        .map(|(f, c)| Tensor::from_fn(&[1, c, 8, 8], |k| f.data()[k % f.numel()]))
        .collect();
    let a = dump_feature_images(&bank, &feats, (16, 16), &dir.path().join("a"), 7).unwrap();
    let b = dump_feature_images(&bank, &feats, (16, 16), &dir.path().join("b"), 7).unwrap();
    assert_eq!(a.len(), 4);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
    let px = image::open(&written[0]).unwrap().to_rgb8();
    assert_eq!(px.dimensions(), (16, 16));
}

#[test]
fn png_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.png");
    let t = Tensor::from_fn(&[3, 1, 2], |k| if k % 2 == 0 { -1.0 } else { 1.0 });
    write_png(&path, &t).unwrap();
    let img = image::open(&path).unwrap().to_rgb8();
    assert_eq!(img.get_pixel(0, 0).0, [0, 0, 0]);
    assert_eq!(img.get_pixel(1, 0).0, [255, 255, 255]);
}
