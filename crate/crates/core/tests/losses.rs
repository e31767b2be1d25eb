mod common;

use common::*;
use metanerv::loss::{
    fusion_loss, fusion_loss_value, ms_ssim, multires_loss, pool_gt, psnr, ssim, ssim_value,
    LossConfig,
};
use metanerv::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    random_tensor(rng, &[3, h, w], 0.0, 1.0)
}

fn blend(a: &Tensor, b: &Tensor, t: f64) -> Tensor {
    Tensor::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (1.0 - t) * x + t * y)
            .collect(),
    )
    .unwrap()
}

#[test]
fn ssim_matches_windowed_reference_on_16x16() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = image(&mut rng, 16, 16);
    let y = blend(&x, &image(&mut rng, 16, 16), 0.4);
    let cfg = LossConfig::default();
    let (want, _) = ssim_direct(&x, &y, 7, cfg.ssim_sigma, cfg.c1, cfg.c2);
    assert!((ssim_value(&x, &y, &cfg).unwrap() - want).abs() < 1e-9);
}

#[test]
fn ssim_of_binary_image_and_its_complement() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = Tensor::new(
        vec![3, 12, 12],
        (0..432)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
            .collect(),
    )
    .unwrap();
    let y = x.map(|v| 1.0 - v);
    let cfg = LossConfig::default();
    let (want, _) = ssim_direct(&x, &y, 7, cfg.ssim_sigma, cfg.c1, cfg.c2);
    let got = ssim_value(&x, &y, &cfg).unwrap();
    assert!((got - want).abs() < 1e-9);
    assert_eq!(got, ssim_value(&y, &x, &cfg).unwrap());
}

#[test]
fn ms_ssim_matches_reference_on_64x64() {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let x = image(&mut rng, 64, 64);
    let y = blend(&x, &image(&mut rng, 64, 64), 0.3);
    let cfg = LossConfig::default();
    let want = ms_ssim_direct(&x, &y, 7, cfg.ssim_sigma, cfg.c1, cfg.c2);
    assert!((ms_ssim(&x, &y, &cfg).unwrap() - want).abs() < 1e-6);
    assert!((ms_ssim(&x, &x, &cfg).unwrap() - 1.0).abs() < 1e-9);
}

fn multires(heads: &[Tensor], gt: &Tensor, cfg: &LossConfig) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = heads.iter().map(|h| tape.constant(h.clone())).collect();
    let l = multires_loss(&mut tape, &vars, gt, cfg).unwrap();
    tape.value(l).data()[0]
}

#[test]
fn multires_special_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gt = image(&mut rng, 16, 24);
    let cfg = LossConfig {
        ssim_window: 3,
        ..LossConfig::default()
    };
    let pooled: Vec<Tensor> = [(4, 6), (8, 12), (16, 24)]
        .iter()
        .map(|&r| pool_gt(&gt, r).unwrap())
        .collect();
    assert!(multires(&pooled, &gt, &cfg).abs() < 1e-15);

    let pred = blend(&gt, &image(&mut rng, 16, 24), 0.5);
    let single = multires(std::slice::from_ref(&pred), &gt, &cfg);
    assert_eq!(single, fusion_loss_value(&pred, &gt, &cfg).unwrap());
}

#[test]
fn multires_grows_when_one_head_worsens() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gt = image(&mut rng, 16, 16);
    let noise = image(&mut rng, 8, 8);
    let cfg = LossConfig {
        ssim_window: 3,
        head_weights: Some(vec![0.2, 0.3, 0.5]),
        ..LossConfig::default()
    };
    let mut heads: Vec<Tensor> = [(4, 4), (8, 8), (16, 16)]
        .iter()
        .map(|&r| pool_gt(&gt, r).unwrap())
        .collect();
    let clean_middle = heads[1].clone();
    let mut last = multires(&heads, &gt, &cfg);
    for t in [0.1, 0.3, 0.6, 0.9] {
        heads[1] = blend(&clean_middle, &noise, t);
        let now = multires(&heads, &gt, &cfg);
        assert!(now > last);
        last = now;
    }
}

#[test]
fn psnr_falls_as_error_grows() {
    let gt = Tensor::full(&[3, 4, 4], 0.5);
    let mut last = f64::INFINITY;
    for d in [0.001, 0.01, 0.05, 0.2, 0.5] {
        let p = psnr(&gt.map(|v| v + d), &gt).unwrap();
        assert!(p < last);
        last = p;
    }
}

#[test]
fn fusion_loss_is_nonnegative_and_zero_on_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = LossConfig::default();
    for _ in 0..20 {
        let x = image(&mut rng, 9, 11);
        let y = image(&mut rng, 9, 11);
        assert!(fusion_loss_value(&x, &y, &cfg).unwrap() >= 0.0);
        assert_eq!(fusion_loss_value(&x, &x, &cfg).unwrap(), 0.0);
    }
}

#[test]
fn loss_gradients_on_8x8_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = LossConfig {
        ssim_window: 5,
        ..LossConfig::default()
    };
    for _ in 0..20 {
        let x = random_tensor(&mut rng, &[3, 8, 8], 0.05, 0.95);
        let y = random_tensor(&mut rng, &[3, 8, 8], 0.05, 0.95);
        let fusion = directional_check(
            &mut rng,
            &|t, v| fusion_loss(t, v[0], v[1], &cfg),
            &[x.clone(), y.clone()],
        );
        let s = directional_check(&mut rng, &|t, v| ssim(t, v[0], v[1], &cfg), &[x, y]);
        assert!(fusion < 1e-5 && s < 1e-5, "{fusion} {s}");
    }
}
