use passt::dsp::{MelConfig, MelSpectrogram};
use passt::patch::{
    init_params, patch_grid, tokenize, PatchEmbedding, PatchGeometry, PositionalTables, TokenCoord, N_SPECIAL,
};
use passt::patchout::{apply, draw, structured_patchout, unstructured_patchout, PatchoutSpec};
use passt::tensor::{ParamSet, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const D: usize = 8;

fn mel(n_frames: usize, seed: u64) -> MelSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = Tensor::randn(&[128 * n_frames], 1.0, &mut rng).into_data();
    MelSpectrogram::new(values, 128, n_frames, MelConfig::default()).unwrap()
}

fn weights(seed: u64) -> (PatchEmbedding, PositionalTables) {
    let mut params = ParamSet::new();
    init_params(&mut params, &PatchGeometry::default(), 12, 99, D, &mut ChaCha8Rng::seed_from_u64(seed));
    (
        PatchEmbedding::from_params(&params).unwrap(),
        PositionalTables::from_params(&params).unwrap(),
    )
}

#[test]
fn full_clip_uses_every_time_row() {
    let (emb, tables) = weights(1);
    let seq = tokenize(&patch_grid(&mel(1000, 2), &PatchGeometry::default()).unwrap(), &emb, &tables).unwrap();
    assert_eq!(seq.len(), 1190);
    let max_t = seq
        .coords
        .iter()
        .filter_map(|c| match c {
            TokenCoord::Patch { t, .. } => Some(*t),
            _ => None,
        })
        .max();
    assert_eq!(max_t, Some(98));
}

#[test]
fn frequency_contribution_is_length_independent() {
    let (_, tables) = weights(3);
    let blank = PatchEmbedding {
        weight: Tensor::zeros(&[256, D]),
        bias: Tensor::zeros(&[D]),
        special: Tensor::zeros(&[2, D]),
    };
    let freq_only = PositionalTables {
        time: Tensor::zeros(&[99, D]),
        ..tables.clone()
    };
    let short = tokenize(&patch_grid(&mel(100, 4), &PatchGeometry::default()).unwrap(), &blank, &freq_only).unwrap();
    let long = tokenize(&patch_grid(&mel(1000, 5), &PatchGeometry::default()).unwrap(), &blank, &freq_only).unwrap();
    assert_eq!(short.grid_t, 9);
    for (i, c) in short.coords.iter().enumerate() {
        if let TokenCoord::Patch { f, .. } = *c {
            let j = long.coords.iter().position(|x| *x == *c).unwrap();
            let bits = |r: &[f64]| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(short.tokens.row(i)), bits(long.tokens.row(j)));
            assert_eq!(bits(short.tokens.row(i)), bits(tables.freq.row(f)));
        }
    }
}

#[test]
fn short_clip_consults_only_its_time_rows() {
    let (emb, tables) = weights(6);
    let m = mel(100, 7);
    let grid = patch_grid(&m, &PatchGeometry::default()).unwrap();
    let a = tokenize(&grid, &emb, &tables).unwrap();
    let mut scrambled = tables.clone();
    for v in &mut scrambled.time.data_mut()[9 * D..] {
        *v = 1e3;
    }
    let b = tokenize(&grid, &emb, &scrambled).unwrap();
    assert_eq!(a, b);
}

#[test]
fn prefix_clip_matches_long_clip_on_shared_coordinates() {
    let (emb, tables) = weights(8);
    let long = mel(400, 9);
    let short = long.frames_padded(0, 150);
    let g = PatchGeometry::default();
    let a = tokenize(&patch_grid(&short, &g).unwrap(), &emb, &tables).unwrap();
    let b = tokenize(&patch_grid(&long, &g).unwrap(), &emb, &tables).unwrap();
    assert_eq!(&b.tokens.data()[..a.tokens.len()], a.tokens.data());
    assert_eq!(&b.coords[..a.len()], &a.coords[..]);
}

#[test]
fn patchout_is_a_pure_subset() {
    let (emb, tables) = weights(10);
    let seq = tokenize(&patch_grid(&mel(1000, 11), &PatchGeometry::default()).unwrap(), &emb, &tables).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (reduced, kept) = structured_patchout(&seq, &PatchoutSpec::structured(4, 40), &mut rng).unwrap();
    assert_eq!(reduced.len(), 474);
    assert_eq!(kept.rows.len(), 8);
    assert_eq!(kept.cols.len(), 59);
    for (i, &src) in kept.tokens.iter().enumerate() {
        assert_eq!(reduced.tokens.row(i), seq.tokens.row(src));
        assert_eq!(reduced.coords[i], seq.coords[src]);
        if let TokenCoord::Patch { f, t } = reduced.coords[i] {
            assert!(kept.rows.contains(&f) && kept.cols.contains(&t));
        }
    }
    let u = unstructured_patchout(&seq, &PatchoutSpec::unstructured(716), &mut rng).unwrap();
    assert_eq!(u.len(), 474);
    assert_eq!(&u.coords[..N_SPECIAL], &[TokenCoord::C, TokenCoord::D]);
}

#[test]
fn eval_and_off_bypass_bit_exactly() {
    let (emb, tables) = weights(13);
    let seq = tokenize(&patch_grid(&mel(200, 14), &PatchGeometry::default()).unwrap(), &emb, &tables).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(apply(&seq, &PatchoutSpec::structured(4, 5), false, &mut rng).unwrap(), seq);
    assert_eq!(apply(&seq, &PatchoutSpec::off(), true, &mut rng).unwrap(), seq);
}

#[test]
fn drop_frequencies_are_uniform() {
    let (gf, gt, fd, td, draws) = (12usize, 99usize, 4usize, 40usize, 3000usize);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut row_drops = vec![0usize; gf];
    let mut col_drops = vec![0usize; gt];
    for _ in 0..draws {
        let k = draw(&PatchoutSpec::structured(fd, td), gf, gt, &mut rng).unwrap();
        for f in 0..gf {
            row_drops[f] += usize::from(!k.rows.contains(&f));
        }
        for t in 0..gt {
            col_drops[t] += usize::from(!k.cols.contains(&t));
        }
    }
    let check = |counts: &[usize], p: f64| {
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!((c as f64 - mean).abs() <= 3.0 * sigma, "index {i}: {c} vs {mean}±{sigma}");
        }
    };
    check(&row_drops, fd as f64 / gf as f64);
    check(&col_drops, td as f64 / gt as f64);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coords_map_back_to_their_rectangle(frames in 16usize..140, seed in 0u64..1000) {
        let m = mel(frames, seed);
        let grid = patch_grid(&m, &PatchGeometry::default()).unwrap();
        for f in 0..grid.grid_f {
            for t in 0..grid.grid_t {
                let (bands, cols) = grid.rect(f, t);
                let patch = grid.patch(f, t);
                let mut k = 0;
                for b in bands {
                    for c in cols.clone() {
                        prop_assert_eq!(patch[k].to_bits(), m.get(b, c).to_bits());
                        k += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn seeded_draws_repeat(seed in any::<u64>(), fd in 0usize..12, td in 0usize..99) {
        let spec = PatchoutSpec::structured(fd, td);
        let a = draw(&spec, 12, 99, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = draw(&spec, 12, 99, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.tokens.len(), (12 - fd) * (99 - td) + 2);
    }

    #[test]
    fn unstructured_count(u in 0usize..1188, seed in any::<u64>()) {
        let k = draw(&PatchoutSpec::unstructured(u), 12, 99, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(k.tokens.len(), 1188 - u + 2);
        prop_assert!(k.tokens.windows(2).all(|w| w[0] < w[1]));
    }
}
