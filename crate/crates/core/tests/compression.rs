use metanerv::compress::huffman::{decode, encode, mean_code_length};
use metanerv::compress::{
    bpp, compress_model, finetune_pruned, prune_global_magnitude, CompressedModel,
};
use metanerv::fit::{fit, FitConfig};
use metanerv::loss::{psnr_frames, LossConfig};
use metanerv::model::ModelParams;
use metanerv::objective::render_video;
use metanerv::video::{generate_synthetic, Family, SyntheticSpec, Video};
use metanerv::{Error, ModelConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> ModelConfig {
    ModelConfig {
        scale_factors: vec![2, 2],
        seed_h: 2,
        seed_w: 3,
        channels: vec![8, 6, 4],
        pe_l: 4,
        embed_dim: 16,
        norm_dim: 8,
        ..ModelConfig::desk()
    }
}

fn fit_cfg(steps: usize) -> FitConfig {
    FitConfig {
        steps,
        lr: 0.01,
        loss: LossConfig {
            ssim_window: 3,
            ..LossConfig::default()
        },
        qat_bits: None,
    }
}

fn toy() -> (Video, ModelParams) {
    let cfg = small();
    let video = generate_synthetic(&SyntheticSpec::new(
        Family::BouncingBall,
        cfg.output_resolution(),
        4,
        9,
    ));
    let init = ModelParams::init_random(&cfg, 4).unwrap();
    let fitted = fit(&init, &video, &fit_cfg(150), None).unwrap().params;
    (video, fitted)
}

fn quality(p: &ModelParams, v: &Video) -> f64 {
    psnr_frames(&render_video(p, v.len()).unwrap(), v.frames()).unwrap()
}

#[test]
fn uniform_bytes_cost_at_least_their_empirical_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(256);
    let symbols: Vec<u32> = (0..1000).map(|_| rng.random_range(0..256)).collect();
    let mut hist = [0u64; 256];
    symbols.iter().for_each(|&s| hist[s as usize] += 1);
    let entropy: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 / 1000.0)
        .map(|p| -p * p.log2())
        .sum();
    let e = encode(&symbols).unwrap();
    let mean = mean_code_length(&e.lengths, &symbols);
    assert!(
        mean >= entropy && mean < entropy + 0.1,
        "{mean} vs {entropy}"
    );
    assert!(mean > 7.75);
    assert_eq!(e.bits as f64, mean * 1000.0);
}

#[test]
fn constant_stream_has_no_payload() {
    let symbols = vec![77u32; 1000];
    let e = encode(&symbols).unwrap();
    assert!(e.payload.is_empty());
    assert_eq!(decode(&e.lengths, &e.payload, 1000).unwrap(), symbols);
}

#[test]
fn sixteen_bit_container_respects_the_rounding_bound() {
    let p = ModelParams::init_random(&small(), 8).unwrap();
    let c = compress_model(&p, None, 16).unwrap();
    let back = CompressedModel::from_bytes(&c.to_bytes().unwrap())
        .unwrap()
        .decompress()
        .unwrap();
    for (e, q) in p.layout().entries().iter().zip(&c.quant) {
        for i in e.range() {
            assert!((p.as_flat()[i] - back.as_flat()[i]).abs() <= q.scale / 2.0 + 1e-12);
        }
    }
}

#[test]
fn bpp_halves_when_frames_double() {
    let cfg = small();
    let p = ModelParams::init_random(&cfg, 1).unwrap();
    let c = compress_model(&p, None, 8).unwrap();
    let res = cfg.output_resolution();
    let short = generate_synthetic(&SyntheticSpec::new(Family::MovingBox, res, 3, 0));
    let long = generate_synthetic(&SyntheticSpec::new(Family::MovingBox, res, 6, 0));
    assert_eq!(bpp(&c, &short).unwrap(), 2.0 * bpp(&c, &long).unwrap());
}

#[test]
fn fitted_toy_pipeline() {
    let (video, fitted) = toy();
    let base = quality(&fitted, &video);
    let q8 = quality(
        &compress_model(&fitted, None, 8)
            .unwrap()
            .decompress()
            .unwrap(),
        &video,
    );
    let q4 = quality(
        &compress_model(&fitted, None, 4)
            .unwrap()
            .decompress()
            .unwrap(),
        &video,
    );
    assert!(q8 >= q4, "{q8} vs {q4}");
    assert!(q8 <= base + 0.5 && q8 > 30.0, "{base} vs {q8}");

    let (pruned, mask) = prune_global_magnitude(&fitted, 0.2).unwrap();
    let unchanged = finetune_pruned(&pruned, &mask, &video, 0, &fit_cfg(0)).unwrap();
    assert_eq!(unchanged, pruned);
    let tuned = finetune_pruned(&pruned, &mask, &video, 30, &fit_cfg(0)).unwrap();
    assert!(quality(&tuned, &video) >= quality(&pruned, &video));
    for (i, v) in tuned.as_flat().iter().enumerate() {
        if !mask.is_kept(i) {
            assert_eq!(*v, 0.0);
        }
    }

    let c = compress_model(&tuned, Some(&mask), 8).unwrap();
    let bytes = c.to_bytes().unwrap();
    assert_eq!(
        bytes,
        compress_model(&tuned, Some(&mask), 8)
            .unwrap()
            .to_bytes()
            .unwrap()
    );
    let mut bad = bytes.clone();
    let mid = bad.len() - 10;
    bad[mid] ^= 1;
    assert!(matches!(
        CompressedModel::from_bytes(&bad),
        Err(Error::ChecksumMismatch { .. })
    ));
}

fn skewed(seed: u64, len: usize, alphabet: u32) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| ((rng.random_range(0.0f64..1.0).powi(4)) * alphabet as f64) as u32)
        .collect()
}

proptest! {
    #[test]
    fn huffman_round_trips(symbols in prop::collection::vec(0u32..1024, 1..400)) {
        let e = encode(&symbols).unwrap();
        prop_assert_eq!(decode(&e.lengths, &e.payload, symbols.len()).unwrap(), symbols);
    }

    #[test]
    fn huffman_round_trips_skewed(seed in 0u64..10_000, len in 1usize..800, bits in 2u32..=16) {
        let symbols = skewed(seed, len, 1 << bits);
        let e = encode(&symbols).unwrap();
        prop_assert_eq!(decode(&e.lengths, &e.payload, symbols.len()).unwrap(), symbols);
    }
}
