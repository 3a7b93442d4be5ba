mod common;

use std::collections::BTreeMap;

use ndarray::Array4;
use replay_forge::dctg::{attention_weights, dctg_forward, image_queries, row_sums, BottleneckFeatures, TextEmbedding};
use replay_forge::metrics::{avg, bwt, ilm, ResultMatrix};
use replay_forge::modality::{assemble_input, inflate_weights, WeightTensor};
use replay_forge::scoring::{finalize_scores, raw_scores, ScoringInput, score_dataset};
use replay_forge::volume::{boundary_band, connected_components};
use replay_forge::{BandSpec, ChannelLayout, Connectivity, Prng, ScalarVolume, ScoringConfig};

use common::*;

#[test]
fn band_matches_distance_transform() {
    let mut rng = Prng::new(11);
    for case in 0..150 {
        let d = random_dims(&mut rng, 12);
        let gt = if case % 2 == 0 {
            random_blobs(&mut rng, d)
        } else {
            let density = 0.05 + 0.6 * rng.next_f64();
            random_mask(&mut rng, d, density)
        };
        let (i, o) = (rng.below(5) as u32, rng.below(5) as u32);
        let band = boundary_band(&gt, BandSpec::new(i, o)).unwrap();
        let got: Vec<bool> = band.data().iter().map(|&v| v != 0).collect();
        assert_eq!(got, band_oracle(&gt, i, o), "case {case} dims {d:?} in {i} out {o}");
    }
}

#[test]
fn band_reference_counts() {
    let mut single = replay_forge::LabelMask::empty([11, 11, 11]).unwrap();
    single.set(5, 5, 5, true);
    assert_eq!(band_oracle(&single, 4, 4).iter().filter(|&&b| b).count(), 129);
    assert_eq!(boundary_band(&single, BandSpec::default()).unwrap().count(), 129);

    let full = replay_forge::LabelMask::from_fn([16, 16, 16], |_, _, _| true).unwrap();
    assert_eq!(band_oracle(&full, 4, 4).iter().filter(|&&b| b).count(), 3584);
    assert_eq!(boundary_band(&full, BandSpec::default()).unwrap().count(), 3584);
}

#[test]
fn components_match_union_find() {
    let mut rng = Prng::new(12);
    for case in 0..300 {
        let density = rng.next_f64() * 0.5;
        let m = random_mask(&mut rng, [8, 8, 8], density);
        for (conn, full) in [(Connectivity::Six, false), (Connectivity::TwentySix, true)] {
            let got = connected_components(&m, conn);
            let (labels, count) = cc_oracle(&m, full);
            assert_eq!(got.count, count, "case {case}");
            assert_eq!(got.labels, labels, "case {case}");
        }
    }
}

#[test]
fn scores_match_scalar_reference() {
    let mut rng = Prng::new(13);
    let cfg = ScoringConfig::default();
    let mut inputs = Vec::new();
    for i in 0..40 {
        let d = random_dims(&mut rng, 12);
        let gt = random_blobs(&mut rng, d);
        let prob = random_prob(&mut rng, &gt);
        inputs.push(ScoringInput {
            sample_id: format!("s{i:02}"),
            prob,
            gt,
        });
    }
    let oracle: Vec<Option<OracleScores>> = inputs
        .iter()
        .map(|s| score_oracle(&s.prob, &s.gt, cfg.tau, 4, 4))
        .collect();
    for (s, o) in inputs.iter().zip(&oracle) {
        let got = raw_scores(&s.prob, &s.gt, &cfg);
        match o {
            None => assert!(got.is_err()),
            Some(o) => {
                let r = got.unwrap();
                assert!((r.conf - o.conf).abs() < 1e-9);
                assert_eq!(r.size as f64, o.size);
                assert!((r.unc - o.unc).abs() < 1e-9);
                assert!((r.comp - o.comp).abs() < 1e-9);
            }
        }
    }

    let scored = score_dataset(&inputs, &cfg).unwrap();
    let kept: Vec<OracleScores> = oracle.iter().flatten().copied().collect();
    let norm = |f: fn(&OracleScores) -> f64| minmax_oracle(&kept.iter().map(f).collect::<Vec<_>>());
    let (c, s, u, k) = (norm(|o| o.conf), norm(|o| o.size), norm(|o| o.unc), norm(|o| o.comp));
    let valid = scored.valid();
    assert_eq!(valid.len(), kept.len());
    for (j, v) in valid.iter().enumerate() {
        let rep = 0.1 * c[j] + 0.9 * s[j];
        let diff = 0.9 * (1.0 - u[j]) + 0.1 * k[j];
        assert!((v.r_rep - rep).abs() < 1e-9, "{}", v.sample_id);
        assert!((v.r_diff - diff).abs() < 1e-9, "{}", v.sample_id);
    }
}

#[test]
fn exclusions_keep_input_order() {
    let mut rng = Prng::new(14);
    let d = [6, 6, 6];
    let full = replay_forge::LabelMask::from_fn(d, |_, _, _| true).unwrap();
    let gt = random_blobs(&mut rng, d);
    let raw = vec![
        ("a".to_string(), raw_scores(&random_prob(&mut rng, &gt), &gt, &ScoringConfig::default())),
        ("empty".to_string(), Err(replay_forge::Error::EmptyLesion)),
        ("b".to_string(), raw_scores(&random_prob(&mut rng, &full), &full, &ScoringConfig::default())),
    ];
    let scored = finalize_scores(raw, &ScoringConfig::default()).unwrap();
    let ids: Vec<&str> = scored.records.iter().map(|r| r.sample_id.as_str()).collect();
    assert_eq!(ids, ["a", "empty", "b"]);
    assert!(scored.records[1].excluded);
    assert_eq!(scored.excluded_count(), 1);
}

fn random_weights(rng: &mut Prng, c_out: usize, c_in: usize, k: usize) -> WeightTensor {
    let data = (0..c_out * c_in * k * k * k)
        .map(|_| (rng.next_f64() * 2.0 - 1.0) as f32)
        .collect();
    WeightTensor::new([c_out, c_in, k, k, k], data).unwrap()
}

#[test]
fn inflated_convolution_ignores_new_channels() {
    let mut rng = Prng::new(15);
    for case in 0..30 {
        let (c_out, k_old, delta) = (1 + rng.below(3) as usize, 1 + rng.below(3) as usize, 1 + rng.below(3) as usize);
        let k = [1, 3][rng.below(2) as usize];
        let d = random_dims(&mut rng, 5);
        let w = random_weights(&mut rng, c_out, k_old, k);
        let wi = inflate_weights(&w, k_old + delta).unwrap();
        assert_eq!(wi.shape(), [c_out, k_old + delta, k, k, k]);
        for o in 0..c_out {
            for i in 0..k_old {
                assert_eq!(
                    wi.kernel(o, i).iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                    w.kernel(o, i).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
                );
            }
            for i in k_old..k_old + delta {
                assert!(wi.kernel(o, i).iter().all(|&v| v == 0.0));
            }
        }

        let n: usize = d.iter().product();
        let x: Vec<f32> = (0..k_old * n).map(|_| rng.next_f64() as f32).collect();
        let mut layout = ChannelLayout::new();
        let names: Vec<String> = (0..k_old + delta).map(|c| format!("M{c}")).collect();
        layout.register(&names).unwrap();
        let present: BTreeMap<String, ScalarVolume> = (0..k_old)
            .map(|c| (names[c].clone(), ScalarVolume::new(d, x[c * n..(c + 1) * n].to_vec()).unwrap()))
            .collect();
        let assembled = assemble_input(&present, &layout).unwrap();
        assert_eq!(assembled.channels, k_old + delta);

        let before = conv3d_oracle(w.data(), c_out, k_old, k, &x, d);
        let after = conv3d_oracle(wi.data(), c_out, k_old + delta, k, &assembled.data, d);
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-6, "case {case}");
        }
    }
}

#[test]
fn cross_attention_matches_loops() {
    let mut rng = Prng::new(16);
    for case in 0..25 {
        let heads = 1 + rng.below(3) as usize;
        let d = heads * (1 + rng.below(4) as usize);
        let c = 1 + rng.below(5) as usize;
        let e = 1 + rng.below(6) as usize;
        let n_t = 1 + rng.below(5) as usize;
        let sp = [1 + rng.below(3) as usize, 1 + rng.below(3) as usize, 1 + rng.below(2) as usize];
        let n_i = sp.iter().product();
        let p = random_block(&mut rng, c, d, heads, e, n_i);
        let f = BottleneckFeatures::new(Array4::from_shape_fn((c, sp[0], sp[1], sp[2]), |_| rng.next_f64() * 2.0 - 1.0)).unwrap();
        let t = TextEmbedding::new(random_matrix(&mut rng, n_t, e, 1.0)).unwrap();

        let out = dctg_forward(&f, &t, &p).unwrap();
        let (expect, attn) = dctg_oracle(&to_mat(&f.tokens()), &to_mat(&t.tokens), &oracle_block(&p));
        let got = out.tokens();
        for i in 0..n_i {
            for ch in 0..c {
                assert!((got[[i, ch]] - expect[i][ch]).abs() < 1e-6, "case {case}");
            }
        }

        let xq = image_queries(&f, &p).unwrap();
        let q = xq.dot(&p.w_q);
        let k = t.tokens.dot(&p.w_text).dot(&p.w_k);
        let weights = attention_weights(q.view(), k.view(), heads).unwrap();
        for (h, a) in weights.iter().enumerate() {
            for s in row_sums(a) {
                assert!((s - 1.0).abs() < 1e-5);
            }
            for i in 0..n_i {
                for j in 0..n_t {
                    assert!((a[[i, j]] - attn[h][i][j]).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn metrics_match_direct_loops() {
    let mut rng = Prng::new(17);
    for _ in 0..200 {
        let t = 1 + rng.below(6) as usize;
        let rows: Vec<Vec<f64>> = (0..t).map(|s| (0..=s).map(|_| rng.next_f64()).collect()).collect();
        let r = ResultMatrix::from_rows((0..t).map(|i| format!("t{i}")).collect(), rows.clone()).unwrap();
        let (a, i, b) = metrics_oracle(&rows);
        assert!((avg(&r).unwrap() - a).abs() < 1e-12);
        assert!((ilm(&r).unwrap() - i).abs() < 1e-12);
        match b {
            Some(b) => assert!((bwt(&r).unwrap() - b).abs() < 1e-12),
            None => assert!(bwt(&r).is_err()),
        }
    }
}

#[test]
fn prng_matches_reference_transcription() {
    for seed in [0u64, 1, 42, u64::MAX, 0xDEAD_BEEF] {
        let mut ours = Prng::new(seed);
        let mut theirs = SplitMix { x: seed };
        for _ in 0..1000 {
            assert_eq!(ours.next_u64(), theirs.next());
        }
    }
    assert_eq!(SplitMix { x: 0 }.next(), 0xE220_A839_7B1D_CDAF);
}
