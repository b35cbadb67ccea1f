//! Layout transforms and serializations invert exactly.

use proptest::prelude::*;
use swinir::data::{decode_pnm, encode_pnm, synthetic_dataset, synthetic_texture, Degradation, ImageBuffer};
use swinir::model::{checkpoint, SwinIR, SwinIRConfig, Task, Upsampler};
use swinir::ops::{pixel_shuffle, pixel_unshuffle};
use swinir::rng::SeededRng;
use swinir::trainer::{TrainConfig, TrainData, TrainState, Trainer};
use swinir::windowing::{crop, cyclic_shift, cyclic_unshift, pad_to_multiple, window_partition, window_reverse};
use swinir::Tensor;

fn tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = SeededRng::new(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.uniform_range(-1.0, 1.0) as f32).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_then_reverse(n in 1usize..3, wy in 1usize..4, wx in 1usize..4, m in 1usize..6, c in 1usize..5, seed: u64) {
        let (h, w) = (wy * m, wx * m);
        let x = tensor(&[n, h, w, c], seed);
        let wins = window_partition(&x, m).unwrap();
        prop_assert_eq!(wins.shape(), &[n * wy * wx, m * m, c][..]);
        let back = window_reverse(&wins, m, h, w).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn shift_then_unshift(h in 1usize..12, w in 1usize..12, s in 0usize..6, seed: u64) {
        let x = tensor(&[1, h, w, 2], seed);
        let back = cyclic_unshift(&cyclic_shift(&x, s).unwrap(), s).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn pad_then_crop(h in 1usize..14, w in 1usize..14, m in 1usize..8, seed: u64) {
        let x = tensor(&[1, h, w, 3], seed);
        let (padded, (oh, ow)) = pad_to_multiple(&x, m).unwrap();
        prop_assert_eq!((oh, ow), (h, w));
        prop_assert_eq!(padded.shape()[1] % m, 0);
        prop_assert_eq!(padded.shape()[2] % m, 0);
        prop_assert!(padded.shape()[1] - h < m && padded.shape()[2] - w < m);
        prop_assert_eq!(crop(&padded, h, w).unwrap(), x);
    }

    #[test]
    fn shuffle_unshuffle_both_ways(c in 1usize..4, h in 1usize..6, w in 1usize..6, r in 1usize..4, seed: u64) {
        let lo = tensor(&[2, c * r * r, h, w], seed);
        let hi = pixel_shuffle(&lo, r).unwrap();
        prop_assert_eq!(hi.shape(), &[2, c, h * r, w * r][..]);
        prop_assert_eq!(pixel_unshuffle(&hi, r).unwrap(), lo.clone());
        let hi2 = tensor(&[1, c, h * r, w * r], seed ^ 1);
        prop_assert_eq!(pixel_shuffle(&pixel_unshuffle(&hi2, r).unwrap(), r).unwrap(), hi2);
    }

    #[test]
    fn pnm_roundtrip(h in 1usize..20, w in 1usize..20, rgb: bool, seed: u64) {
        let img = synthetic_texture(h, w, if rgb { 3 } else { 1 }, seed).unwrap();
        prop_assert_eq!(decode_pnm(&encode_pnm(&img)).unwrap(), img);
    }
}

#[test]
fn shift_moves_content_toward_the_origin() {
    let x = tensor(&[1, 5, 6, 1], 1);
    let s = cyclic_shift(&x, 2).unwrap();
    for y in 0..5 {
        for xx in 0..6 {
            assert_eq!(s.at(&[0, y, xx, 0]), x.at(&[0, (y + 2) % 5, (xx + 2) % 6, 0]));
        }
    }
}

fn configs() -> Vec<SwinIRConfig> {
    let base = SwinIRConfig {
        num_blocks: 2,
        layers_per_block: 2,
        window: 4,
        channels: 12,
        heads: 3,
        mlp_ratio: 2,
        task: Task::Sr,
        scale: 3,
        in_channels: 3,
        out_channels: 3,
        upsampler: Upsampler::PixelShuffle,
        num_feat: 8,
        block_residual: true,
    };
    vec![
        base.clone(),
        SwinIRConfig {
            scale: 2,
            upsampler: Upsampler::PixelShuffleDirect,
            block_residual: false,
            ..base.clone()
        },
        SwinIRConfig {
            task: Task::Denoise,
            scale: 1,
            in_channels: 1,
            out_channels: 1,
            ..base.clone()
        },
        SwinIRConfig {
            task: Task::Car,
            scale: 1,
            ..base
        },
    ]
}

#[test]
fn checkpoint_roundtrip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    for (i, cfg) in configs().into_iter().enumerate() {
        let model = SwinIR::<f32>::new(cfg.clone(), 40 + i as u64).unwrap();
        let bytes = checkpoint::to_bytes(&cfg, model.params()).unwrap();
        let (cfg2, params2) = checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(&params2, model.params());
        assert_eq!(checkpoint::to_bytes(&cfg2, &params2).unwrap(), bytes);

        let path = dir.path().join(format!("m{i}.ckpt"));
        checkpoint::save(&path, &cfg, model.params()).unwrap();
        let (cfg3, params3) = checkpoint::load(&path).unwrap();
        let reloaded = SwinIR::from_parts(cfg3, params3).unwrap();

        let x = tensor(&[1, cfg.in_channels, 7, 9], i as u64).map(|v| v.abs());
        let a = model.infer(&x).unwrap();
        let b = reloaded.infer(&x).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}

#[test]
fn checkpoint_rejects_any_flipped_byte() {
    let cfg = configs().remove(2);
    let model = SwinIR::<f32>::new(cfg.clone(), 1).unwrap();
    let bytes = checkpoint::to_bytes(&cfg, model.params()).unwrap();
    for pos in (0..bytes.len()).step_by(97).chain([bytes.len() - 1]) {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x10;
        assert!(checkpoint::from_bytes(&bad).is_err(), "flip at {pos} accepted");
    }
    assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
}

#[test]
fn train_state_roundtrip() {
    let model = SwinIRConfig {
        num_blocks: 1,
        layers_per_block: 2,
        window: 4,
        channels: 8,
        heads: 2,
        mlp_ratio: 2,
        task: Task::Sr,
        scale: 2,
        in_channels: 1,
        out_channels: 1,
        upsampler: Upsampler::PixelShuffleDirect,
        num_feat: 8,
        block_residual: true,
    };
    let data = TrainData {
        train: synthetic_dataset(3, 20, 20, 1, 1).unwrap(),
        val: vec![],
        degradation: Degradation::Bicubic { scale: 2 },
    };
    let cfg = TrainConfig {
        iterations: 3,
        batch_size: 2,
        patch_size: 8,
        seed: 9,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(model, cfg, data).unwrap();
    for _ in 0..3 {
        t.step().unwrap();
    }
    let bytes = t.state().to_bytes().unwrap();
    let back = TrainState::from_bytes(&bytes).unwrap();
    assert_eq!(&back, t.state());
    assert_eq!(back.step(), 3);
    assert_eq!(back.to_bytes().unwrap(), bytes);
}

#[test]
fn image_tensor_roundtrip() {
    let img = synthetic_texture(9, 11, 3, 4).unwrap();
    let back = ImageBuffer::from_tensor(&img.to_tensor()).unwrap().to_u8();
    assert_eq!(back, img);
}
