use proptest::prelude::*;
use spatial_mil::bag::Labels;
use spatial_mil::models::{
    class_weights, clam_forward, forward, multitask_loss, read_checkpoint, select_pseudo_labels,
    write_checkpoint,
};
use spatial_mil::tensor::{bce_with_logits, Tensor};
use spatial_mil::{Aggregator, BagOutput, ModelConfig, ModelParams};

type Mat = Vec<Vec<f64>>;

fn features(n: usize, d: usize, seed: u64) -> Tensor {
    let mut s = seed ^ 0x9e37_79b9_7f4a_7c15;
    let data = (0..n * d)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        })
        .collect();
    Tensor::matrix(n, d, data).unwrap()
}

fn model(agg: Aggregator, d: usize, h: usize, heads: usize, seed: u64) -> ModelParams {
    let mut c = ModelConfig::new(agg, d);
    c.hidden_dim = h;
    c.n_heads = heads;
    c.seed = seed;
    ModelParams::init(c).unwrap()
}

// Plain nested-vector linear algebra, independent of the tape.

fn mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn p(m: &ModelParams, name: &str) -> Mat {
    mat(m.get(name).unwrap())
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

fn add_row(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|r| r.iter().zip(&b[0]).map(|(x, y)| x + y).collect())
        .collect()
}

fn lin(x: &Mat, m: &ModelParams, prefix: &str) -> Mat {
    add_row(&mm(x, &p(m, &format!("{prefix}.w"))), &p(m, &format!("{prefix}.b")))
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn layer_norm(x: &Mat, g: &Mat, b: &Mat) -> Mat {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + 1e-12).sqrt() * g[0][j] + b[0][j])
                .collect()
        })
        .collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gated attention pooling written out per tile.
fn abmil_oracle(m: &ModelParams, x: &Tensor) -> ([f64; 3], Vec<f64>) {
    let h: Mat = lin(&mat(x), m, "input")
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    let v = lin(&h, m, "attn.v");
    let u = lin(&h, m, "attn.u");
    let w = p(m, "attn.w");
    let scores: Vec<f64> = (0..h.len())
        .map(|i| {
            (0..w.len())
                .map(|j| v[i][j].tanh() * sig(u[i][j]) * w[j][0])
                .sum()
        })
        .collect();
    let a = softmax(&scores);
    let hd = h[0].len();
    let mut pooled = vec![0.0; hd];
    for (i, row) in h.iter().enumerate() {
        for j in 0..hd {
            pooled[j] += a[i] * row[j];
        }
    }
    let l = lin(&vec![pooled], m, "heads");
    ([l[0][0], l[0][1], l[0][2]], a)
}

/// Step-by-step transformer with a prepended CLS token.
fn transmil_oracle(m: &ModelParams, x: &Tensor) -> ([f64; 3], Vec<f64>) {
    let cfg = m.config;
    let mut z = p(m, "cls");
    z.extend(lin(&mat(x), m, "input"));
    let hdim = cfg.hidden_dim;
    let dh = hdim / cfg.n_heads;
    let mut cls_attn = vec![];
    for l in 0..cfg.n_attn_layers {
        let q = lin(&z, m, &format!("layer{l}.q"));
        let k = mm(&z, &p(m, &format!("layer{l}.k.w")));
        let v = lin(&z, m, &format!("layer{l}.v"));
        let t = z.len();
        let mut merged = vec![vec![0.0; hdim]; t];
        cls_attn = vec![0.0; t - 1];
        for head in 0..cfg.n_heads {
            let cols = head * dh..(head + 1) * dh;
            for i in 0..t {
                let scores: Vec<f64> = (0..t)
                    .map(|j| {
                        cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let a = softmax(&scores);
                if i == 0 {
                    for j in 1..t {
                        cls_attn[j - 1] += a[j] / cfg.n_heads as f64;
                    }
                }
                for c in cols.clone() {
                    merged[i][c] = (0..t).map(|j| a[j] * v[j][c]).sum();
                }
            }
        }
        let o = lin(&merged, m, &format!("layer{l}.o"));
        let s: Mat = z.iter().zip(&o).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
        z = layer_norm(&s, &p(m, &format!("layer{l}.ln1.g")), &p(m, &format!("layer{l}.ln1.b")));
        let f: Mat = lin(&z, m, &format!("layer{l}.ff1"))
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
            .collect();
        let f = lin(&f, m, &format!("layer{l}.ff2"));
        let s: Mat = z.iter().zip(&f).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
        z = layer_norm(&s, &p(m, &format!("layer{l}.ln2.g")), &p(m, &format!("layer{l}.ln2.b")));
    }
    let tot: f64 = cls_attn.iter().sum();
    let attn = cls_attn.iter().map(|a| a / tot).collect();
    let l = lin(&vec![z[0].clone()], m, "heads");
    ([l[0][0], l[0][1], l[0][2]], attn)
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < tol, "{x} vs {y}");
    }
}

#[test]
fn abmil_matches_direct_evaluation() {
    let m = model(Aggregator::Abmil, 8, 6, 1, 3);
    let x = features(6, 8, 1);
    let out = forward(&m, &x).unwrap();
    let (logits, attn) = abmil_oracle(&m, &x);
    assert_close(&out.logits, &logits, 1e-12);
    assert_close(&out.attention, &attn, 1e-12);
}

#[test]
fn transmil_matches_independent_implementation() {
    let m = model(Aggregator::TransMil, 8, 8, 2, 4);
    let x = features(4, 8, 2);
    let out = forward(&m, &x).unwrap();
    let (logits, attn) = transmil_oracle(&m, &x);
    assert_close(&out.logits, &logits, 1e-10);
    assert_close(&out.attention, &attn, 1e-12);
}

#[test]
fn singleton_bags_attend_fully() {
    for agg in [Aggregator::Abmil, Aggregator::ClamSb, Aggregator::TransMil] {
        let m = model(agg, 5, 8, 2, 1);
        let out = forward(&m, &features(1, 5, 9)).unwrap();
        assert_eq!(out.attention, vec![1.0], "{agg}");
    }
}

#[test]
fn duplicate_tiles_share_attention() {
    let m = model(Aggregator::Abmil, 4, 6, 1, 2);
    let mut rows = mat(&features(3, 4, 4));
    rows.push(rows[1].clone());
    let out = forward(&m, &Tensor::from_rows(&rows).unwrap()).unwrap();
    assert!((out.attention[1] - out.attention[3]).abs() < 1e-12);
}

#[test]
fn clam_singleton_matches_abmil() {
    // Shared parameter names draw from the same named streams.
    let a = model(Aggregator::Abmil, 6, 8, 1, 21);
    let c = model(Aggregator::ClamSb, 6, 8, 1, 21);
    let x = features(1, 6, 3);
    let (oc, inst) = clam_forward(&c, &x).unwrap();
    let oa = forward(&a, &x).unwrap();
    assert_eq!(oc.logits, oa.logits);
    assert_eq!(inst.len(), 1);
    assert!(select_pseudo_labels(&oc.attention, c.config.clam_k).is_none());
}

#[test]
fn clam_labels_sixteen_of_twenty_tiles() {
    let c = model(Aggregator::ClamSb, 6, 8, 1, 5);
    let (out, inst) = clam_forward(&c, &features(20, 6, 8)).unwrap();
    assert_eq!(inst.len(), 20);
    let pl = select_pseudo_labels(&out.attention, 8).unwrap();
    assert_eq!((pl.top.len(), pl.bottom.len()), (8, 8));
    let mut all: Vec<usize> = pl.top.iter().chain(&pl.bottom).copied().collect();
    all.sort();
    all.dedup();
    assert_eq!(all.len(), 16);
    let min_top = pl.top.iter().map(|&i| out.attention[i]).fold(f64::INFINITY, f64::min);
    let max_bottom = pl.bottom.iter().map(|&i| out.attention[i]).fold(0.0, f64::max);
    assert!(min_top >= max_bottom);
}

#[test]
fn tied_attention_breaks_by_index() {
    let pl = select_pseudo_labels(&[0.25; 4], 2).unwrap();
    assert_eq!(pl.bottom, vec![0, 1]);
    assert_eq!(pl.top, vec![3, 2]);
}

#[test]
fn head_scaling_scales_logits() {
    for agg in [Aggregator::Abmil, Aggregator::ClamSb, Aggregator::TransMil] {
        let m = model(agg, 5, 8, 2, 6);
        let x = features(7, 5, 1);
        let base = forward(&m, &x).unwrap();
        let mut scaled = m.clone();
        scaled.get_mut("heads.w").unwrap().scale_in_place(2.5);
        let out = forward(&scaled, &x).unwrap();
        for k in 0..3 {
            assert!((out.logits[k] - 2.5 * base.logits[k]).abs() < 1e-12, "{agg}");
        }
    }
}

#[test]
fn dimension_mismatch_is_rejected() {
    let m = model(Aggregator::Abmil, 5, 8, 1, 0);
    assert!(forward(&m, &features(3, 4, 0)).is_err());
}

#[test]
fn loss_examples() {
    let out = BagOutput { logits: [0.0; 3], attention: vec![1.0] };
    let ln2 = std::f64::consts::LN_2;
    let pos = Labels { msi: true, hypermut: true };
    // MSI and hypermutation positive, MSS negative.
    let l = multitask_loss(&out, &pos, &[1.0; 3], None, 0.3).unwrap();
    assert!((l - ln2).abs() < 1e-15);
    let l = multitask_loss(&out, &pos, &[4.0, 1.0, 1.0], None, 0.3).unwrap();
    assert!((l - (4.0 * ln2 + 2.0 * ln2) / 3.0).abs() < 1e-15);
    let l = multitask_loss(&out, &pos, &[1.0; 3], Some(0.5), 0.3).unwrap();
    assert!((l - (ln2 + 0.15)).abs() < 1e-15);
    let bad = BagOutput { logits: [f64::NAN, 0.0, 0.0], attention: vec![1.0] };
    assert!(matches!(
        multitask_loss(&bad, &pos, &[1.0; 3], None, 0.3),
        Err(spatial_mil::Error::Numeric(_))
    ));
}

#[test]
fn class_weights_from_counts() {
    let mut labels = vec![Labels { msi: true, hypermut: false }; 23];
    labels.extend(vec![Labels { msi: false, hypermut: false }; 114]);
    let w = class_weights(&labels);
    assert!((w[0] - 137.0 / 23.0).abs() < 1e-12);
    assert!((w[0] - 5.9565).abs() < 1e-4);
    assert!((w[1] - 137.0 / 114.0).abs() < 1e-12);
    let balanced = [
        Labels { msi: true, hypermut: true },
        Labels { msi: false, hypermut: false },
    ];
    assert_eq!(class_weights(&balanced), [2.0; 3]);
}

#[test]
fn init_is_seeded_and_checkpoint_round_trips() {
    let a = model(Aggregator::TransMil, 5, 8, 2, 3);
    assert_eq!(a, model(Aggregator::TransMil, 5, 8, 2, 3));
    assert_ne!(a, model(Aggregator::TransMil, 5, 8, 2, 4));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    write_checkpoint(&path, &a).unwrap();
    let b = read_checkpoint(&path).unwrap();
    assert_eq!(a, b);
    let x = features(4, 5, 0);
    assert_eq!(forward(&a, &x).unwrap(), forward(&b, &x).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn permutation_invariance(agg_i in 0usize..3, n in 1usize..12, seed in 0u64..500, rot in 0usize..12) {
        let agg = [Aggregator::Abmil, Aggregator::ClamSb, Aggregator::TransMil][agg_i];
        let m = model(agg, 6, 8, 2, seed);
        let x = features(n, 6, seed + 1);
        // Reverse then rotate: an arbitrary permutation family.
        let perm: Vec<usize> = (0..n).map(|i| (n - 1 - i + rot) % n).collect();
        let rows = mat(&x);
        let px = Tensor::from_rows(&perm.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>()).unwrap();
        let a = forward(&m, &x).unwrap();
        let b = forward(&m, &px).unwrap();
        for k in 0..3 {
            prop_assert!((a.logits[k] - b.logits[k]).abs() < 1e-9);
        }
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((b.attention[j] - a.attention[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn attention_is_a_distribution(agg_i in 0usize..3, n in 1usize..30, seed in 0u64..500) {
        let agg = [Aggregator::Abmil, Aggregator::ClamSb, Aggregator::TransMil][agg_i];
        let m = model(agg, 4, 8, 4, seed);
        let out = forward(&m, &features(n, 4, seed)).unwrap();
        prop_assert_eq!(out.attention.len(), n);
        prop_assert!(out.attention.iter().all(|&a| a >= 0.0));
        prop_assert!((out.attention.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unit_weights_give_plain_mean_bce(z in prop::array::uniform3(-30.0f64..30.0), msi: bool, hyper: bool) {
        let out = BagOutput { logits: z, attention: vec![1.0] };
        let labels = Labels { msi, hypermut: hyper };
        let t = [msi as u8 as f64, 1.0 - msi as u8 as f64, hyper as u8 as f64];
        let plain: f64 = (0..3).map(|i| {
            // ln p = -ln(1 + e^-z), ln(1 - p) = -z - ln(1 + e^-z).
            let sp = (-z[i]).exp().ln_1p();
            t[i] * sp + (1.0 - t[i]) * (z[i] + sp)
        }).sum::<f64>() / 3.0;
        let l = multitask_loss(&out, &labels, &[1.0; 3], None, 0.3).unwrap();
        prop_assert!((l - plain).abs() < 1e-9 * plain.max(1.0), "{} vs {}", l, plain);
        let direct: f64 = (0..3).map(|i| bce_with_logits(z[i], t[i])).sum::<f64>() / 3.0;
        prop_assert!((l - direct).abs() < 1e-12);
    }
}
