use aclip::dataio::vocab::{EOS, PAD, SOS};
use aclip::dataio::Image;
use aclip::encoders::{
    init_text, init_visual, interpolate_pos_embed, patch_batch, patchify, text_forward, unpatchify, vit_forward,
    Checkpoint, DType, TextEncoderConfig, VisualEncoderConfig,
};
use aclip::ndgrad::{Graph, Tensor};
use aclip::params::ParamSet;
use aclip::rng::{stream, Domain};
use aclip::trainer::{embed_images, embed_texts};
use proptest::prelude::*;
use rand::Rng;

fn vcfg() -> VisualEncoderConfig {
    VisualEncoderConfig {
        image_size: 16,
        patch_size: 4,
        layers: 2,
        heads: 2,
        width: 16,
        embed_dim: 8,
        frozen_patch_embed: false,
    }
}

fn tcfg() -> TextEncoderConfig {
    TextEncoderConfig {
        vocab_size: 12,
        context_length: 8,
        layers: 2,
        heads: 2,
        width: 16,
        embed_dim: 8,
        ..TextEncoderConfig::default()
    }
}

fn random_image(size: usize, seed: u64) -> Image {
    let mut rng = stream(seed, Domain::Init, &[99]);
    Image::new(size, size, (0..3 * size * size).map(|_| rng.gen()).collect()).unwrap()
}

fn visual_params(cfg: &VisualEncoderConfig, seed: u64) -> ParamSet {
    let mut p = ParamSet::new();
    init_visual(&mut p, cfg, &mut stream(seed, Domain::Init, &[]));
    p
}

fn text_params(cfg: &TextEncoderConfig, seed: u64) -> ParamSet {
    let mut p = ParamSet::new();
    init_text(&mut p, cfg, &mut stream(seed, Domain::Init, &[]));
    p
}

#[test]
fn keeping_every_patch_matches_no_mask() {
    let cfg = vcfg();
    let params = visual_params(&cfg, 1);
    let images = [random_image(16, 1), random_image(16, 2)];
    let patches = patch_batch(&images, cfg.patch_size).unwrap();
    let all: Vec<Vec<usize>> = vec![(0..16).collect(); 2];

    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    let a = vit_forward(&mut g, &p, &cfg, &patches, None, None).unwrap();
    let b = vit_forward(&mut g, &p, &cfg, &patches, Some(&all), None).unwrap();
    assert_eq!(g.value(a.cls), g.value(b.cls));
    assert_eq!(a.attention, b.attention);
}

#[test]
fn attention_rows_cover_only_kept_keys_and_sum_to_one() {
    let cfg = vcfg();
    let params = visual_params(&cfg, 2);
    let images = [random_image(16, 3), random_image(16, 4)];
    let patches = patch_batch(&images, cfg.patch_size).unwrap();
    let keep = vec![vec![0, 3, 5, 6, 9, 15], vec![1, 2, 4, 8, 10, 11]];
    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    let out = vit_forward(&mut g, &p, &cfg, &patches, Some(&keep), None).unwrap();
    assert_eq!(out.attention.kept, keep);
    assert_eq!(g.shape(out.patches), &[2, 6, 16]);
    for layer in &out.attention.layers {
        assert_eq!(layer.shape(), &[2, 2, 7]);
        for row in layer.data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&w| w >= 0.0));
        }
    }
}

#[test]
fn unsorted_or_out_of_range_keep_lists_are_rejected() {
    let cfg = vcfg();
    let params = visual_params(&cfg, 3);
    let patches = patch_batch(&[random_image(16, 5)], cfg.patch_size).unwrap();
    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    for bad in [vec![vec![3, 1]], vec![vec![2, 2]], vec![vec![16]], vec![vec![]]] {
        assert!(vit_forward(&mut g, &p, &cfg, &patches, Some(&bad), None).is_err());
    }
}

#[test]
fn without_positions_the_encoder_is_permutation_equivariant() {
    let cfg = vcfg();
    let mut params = visual_params(&cfg, 4);
    *params.get_mut("visual.pos").unwrap() = Tensor::zeros(&[16, cfg.width]);
    let patches = patch_batch(&[random_image(16, 6)], cfg.patch_size).unwrap();
    let perm: Vec<usize> = vec![5, 0, 15, 3, 8, 1, 12, 7, 2, 14, 4, 11, 6, 9, 13, 10];
    let dim = cfg.patch_dim();
    let shuffled: Vec<f64> = perm
        .iter()
        .flat_map(|&i| patches.data()[i * dim..(i + 1) * dim].iter().copied())
        .collect();
    let shuffled = Tensor::new(&[1, 16, dim], shuffled).unwrap();

    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    let a = vit_forward(&mut g, &p, &cfg, &patches, None, None).unwrap();
    let b = vit_forward(&mut g, &p, &cfg, &shuffled, None, None).unwrap();
    assert!(g.value(a.cls).max_abs_diff(g.value(b.cls)) < 1e-10);
    let (pa, pb) = (g.value(a.patches), g.value(b.patches));
    for (j, &i) in perm.iter().enumerate() {
        for c in 0..cfg.width {
            let x = pa.data()[i * cfg.width + c];
            let y = pb.data()[j * cfg.width + c];
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn frozen_patch_embedding_is_not_trainable() {
    let mut cfg = vcfg();
    cfg.frozen_patch_embed = true;
    let p = visual_params(&cfg, 5);
    assert!(!p.param("visual.patch.w").unwrap().trainable);
    assert!(p.param("visual.pos").unwrap().trainable);
    cfg.frozen_patch_embed = false;
    let p = visual_params(&cfg, 5);
    assert!(p.param("visual.patch.w").unwrap().trainable);
}

#[test]
fn text_feature_ignores_tokens_after_eos() {
    let cfg = tcfg();
    let params = text_params(&cfg, 6);
    let short = vec![SOS, 5, 6, EOS, PAD, PAD, PAD, PAD];
    let noisy = vec![SOS, 5, 6, EOS, 7, 9, 11, 4];
    let long = vec![SOS, 4, 5, 6, 7, 8, EOS, PAD];

    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    let alone = text_forward(&mut g, &p, &cfg, &[short.clone()]).unwrap();
    let both = text_forward(&mut g, &p, &cfg, &[noisy, long]).unwrap();
    let alone = g.value(alone).row(0).to_vec();
    let first = g.value(both).row(0).to_vec();
    for (a, b) in alone.iter().zip(&first) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn text_rejects_missing_or_repeated_eos() {
    let cfg = tcfg();
    let params = text_params(&cfg, 7);
    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    assert!(text_forward(&mut g, &p, &cfg, &[vec![SOS, 5, PAD]]).is_err());
    assert!(text_forward(&mut g, &p, &cfg, &[vec![SOS, EOS, EOS]]).is_err());
    assert!(text_forward(&mut g, &p, &cfg, &[vec![SOS, 40, EOS]]).is_err());
}

#[test]
fn projected_embeddings_are_unit_rows() {
    let v = vcfg();
    let mut params = visual_params(&v, 8);
    let t = tcfg();
    init_text(&mut params, &t, &mut stream(8, Domain::Init, &[1]));
    let images: Vec<Image> = (0..3).map(|s| random_image(24, s)).collect();
    let e = embed_images(&params, &v, &images).unwrap();
    let ids = vec![vec![SOS, 5, EOS], vec![SOS, 6, 7, EOS]];
    let f = embed_texts(&params, &t, &ids).unwrap();
    for m in [&e, &f] {
        for r in 0..m.rows() {
            let norm: f64 = m.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn pos_embed_interpolation_is_identity_on_same_grid_and_exact_on_ramps() {
    let mut rng = stream(9, Domain::Init, &[]);
    let table = Tensor::new(&[16, 3], (0..48).map(|_| rng.gen()).collect()).unwrap();
    let same = interpolate_pos_embed(&table, 4).unwrap();
    assert!(same.max_abs_diff(&table) < 1e-12);

    // Channel value = a + b * row + c * col in cell-center coordinates.
    let ramp = |grid: usize| {
        let mut d = Vec::new();
        for r in 0..grid {
            for c in 0..grid {
                let y = (r as f64 + 0.5) / grid as f64;
                let x = (c as f64 + 0.5) / grid as f64;
                d.push(0.3 + 2.0 * y - 1.5 * x);
            }
        }
        Tensor::new(&[grid * grid, 1], d).unwrap()
    };
    for target in [2, 3, 7, 8] {
        let out = interpolate_pos_embed(&ramp(4), target).unwrap();
        assert!(out.max_abs_diff(&ramp(target)) < 1e-12, "grid {target}");
    }
    assert!(interpolate_pos_embed(&table, 1).is_err());
}

#[test]
fn checkpoint_bytes_round_trip() {
    let params = visual_params(&vcfg(), 10);
    let ck = Checkpoint {
        tensors: params.iter().map(|(n, p)| (n.to_string(), p.value.clone())).collect(),
        meta: serde_json::json!({"step": 3}),
    };
    let bytes = ck.to_bytes(DType::Float64).unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(DType::Float64).unwrap(), bytes);
    let mut truncated = bytes.clone();
    truncated.truncate(bytes.len() - 5);
    assert!(Checkpoint::from_bytes(&truncated).is_err());
}

proptest! {
    #[test]
    fn patchify_round_trips(seed in 0u64..1000, grid in 1usize..5, patch in 1usize..5) {
        let img = random_image(grid * patch, seed);
        let tokens = patchify(&img, patch).unwrap();
        prop_assert_eq!(tokens.shape(), &[grid * grid, 3 * patch * patch]);
        let back = unpatchify(&tokens, grid * patch, grid * patch, patch).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn patch_tokens_are_row_major(seed in 0u64..1000) {
        let img = random_image(8, seed);
        let tokens = patchify(&img, 4).unwrap();
        // Token 1 is the top-right patch; its first entry is red at (0, 4).
        prop_assert_eq!(tokens.row(1)[0], img.get(0, 0, 4));
        prop_assert_eq!(tokens.row(2)[16], img.get(1, 4, 0));
    }
}
