use super::*;
use crate::features::{random_record, FeatureTables};

fn small_cfg() -> ModelConfig {
    ModelConfig::for_features(FeatureConfig { dim: 8, max_objects: 4, ..FeatureConfig::default() })
}

fn video(cfg: &ModelConfig, id: &str, frames: usize, seed: u64) -> VideoFeatures<f64> {
    let tables = FeatureTables::new(cfg.dim(), seed);
    let rec = random_record(id, frames, cfg.objects(), true, seed);
    VideoFeatures::build(&rec, &tables, &cfg.features, seed).unwrap()
}

#[test]
fn zero_parameters_give_even_odds() {
    let cfg = small_cfg();
    let mut model = RiskModel::<f64>::new(cfg.clone(), 1).unwrap();
    model.zero_params();
    let out = model.predict(&video(&cfg, "v", 12, 3)).unwrap();
    assert!(out.probs.data().iter().all(|&p| p == 0.5));
    assert_eq!(out.risk.len(), 12);
}

#[test]
fn probabilities_are_normalized() {
    let cfg = small_cfg();
    let model = RiskModel::<f64>::new(cfg.clone(), 2).unwrap();
    let out = model.predict(&video(&cfg, "v", 15, 4)).unwrap();
    for row in out.probs.data().chunks(2) {
        assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
    }
    assert!(out.risk.iter().all(|&u| (0.0..=1.0).contains(&u)));
    assert_eq!(out.z.shape(), &[15, 16]);
    assert_eq!(out.hidden.shape(), &[15, 16]);
}

fn perturb_frame(v: &mut VideoFeatures<f64>, k: usize) {
    let frame_len = v.visual.len() / v.frames();
    for x in &mut v.visual.data_mut()[k * frame_len..(k + 1) * frame_len] {
        *x += 0.37;
    }
    for x in &mut v.text.data_mut()[k * frame_len..(k + 1) * frame_len] {
        *x -= 0.21;
    }
    let oo = v.objects() * v.objects();
    for x in &mut v.edges.w_geo.data_mut()[k * oo..(k + 1) * oo] {
        *x *= 1.5;
    }
}

#[test]
fn model_is_causal() {
    let cfg = small_cfg();
    let model = RiskModel::<f64>::new(cfg.clone(), 5).unwrap();
    let base = video(&cfg, "c", 14, 6);
    let before = model.predict(&base).unwrap().risk;
    for k in 0..14 {
        let mut v = base.clone();
        perturb_frame(&mut v, k);
        let after = model.predict(&v).unwrap().risk;
        assert_eq!(before[..k], after[..k], "frame {k} leaked backwards");
        assert_ne!(before[k..], after[k..]);
    }
}

fn permute_video(v: &VideoFeatures<f64>, perm: &[usize]) -> VideoFeatures<f64> {
    let (t, o, f) = (v.frames(), v.objects(), v.dim());
    let n = o + 1;
    let mut out = v.clone();
    for s in 0..t {
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..f {
                out.visual.data_mut()[(s * n + new + 1) * f + c] = v.visual.data()[(s * n + old + 1) * f + c];
                out.text.data_mut()[(s * n + new + 1) * f + c] = v.text.data()[(s * n + old + 1) * f + c];
            }
            out.present[s * o + new] = v.present[s * o + old];
            for (new2, &old2) in perm.iter().enumerate() {
                let (dst, src) = (s * o * o + new * o + new2, s * o * o + old * o + old2);
                out.edges.w_geo.data_mut()[dst] = v.edges.w_geo.data()[src];
                out.edges.w_text.data_mut()[dst] = v.edges.w_text.data()[src];
            }
        }
    }
    out
}

#[test]
fn object_permutation_leaves_risk_unchanged() {
    let cfg = small_cfg();
    let model = RiskModel::<f64>::new(cfg.clone(), 7).unwrap();
    let v = video(&cfg, "p", 10, 8);
    let perm = [2, 0, 3, 1];
    let mut permuted = model.clone();
    let o = cfg.objects();
    let (u, vv) = (model.params.get(model.layout.u).value.clone(), model.params.get(model.layout.v).value.clone());
    // U' = P U, V' = V P^T, so U'V' = P (UV) P^T
    permuted.params.get_mut(model.layout.u).value = Tensor::from_fn(&[o, o], |k| u.at(&[perm[k / o], k % o]));
    permuted.params.get_mut(model.layout.v).value = Tensor::from_fn(&[o, o], |k| vv.at(&[k / o, perm[k % o]]));
    let a = model.predict(&v).unwrap().risk;
    let b = permuted.predict(&permute_video(&v, &perm)).unwrap().risk;
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
    }
}

#[test]
fn dimension_mismatch_is_an_error() {
    let cfg = small_cfg();
    let model = RiskModel::<f64>::new(cfg, 1).unwrap();
    let other = ModelConfig::for_features(FeatureConfig { dim: 6, max_objects: 4, ..FeatureConfig::default() });
    assert!(matches!(model.predict(&video(&other, "x", 5, 1)), Err(ModelError::Dimension(_))));
}

#[test]
fn checkpoint_restores_predictions() {
    let cfg = small_cfg();
    let model = RiskModel::<f64>::new(cfg.clone(), 11).unwrap();
    let mut ckpt = Checkpoint::new();
    model.to_checkpoint(&mut ckpt, "model.");
    let bytes = ckpt.to_bytes();
    let back = RiskModel::<f64>::from_checkpoint(cfg.clone(), &Checkpoint::read(&bytes[..]).unwrap(), "model.").unwrap();
    let v = video(&cfg, "k", 8, 2);
    assert_eq!(model.predict(&v).unwrap(), back.predict(&v).unwrap());
}

#[test]
fn same_seed_same_model_and_f32_tracks_f64() {
    let cfg = small_cfg();
    let a = RiskModel::<f64>::new(cfg.clone(), 13).unwrap();
    assert_eq!(a, RiskModel::<f64>::new(cfg.clone(), 13).unwrap());
    assert_ne!(a, RiskModel::<f64>::new(cfg.clone(), 14).unwrap());
    let mut b = RiskModel::<f32>::new(cfg.clone(), 13).unwrap();
    for (p, q) in b.params.iter_mut().zip(a.params.iter()) {
        p.value = q.1.value.cast();
    }
    let v = video(&cfg, "f", 9, 3);
    let r64 = a.predict(&v).unwrap().risk;
    let r32 = b.predict(&v.cast::<f32>()).unwrap().risk;
    for (x, y) in r64.iter().zip(&r32) {
        assert!((x - f64::from(*y)).abs() < 1e-4);
    }
}

#[test]
fn config_round_trips_through_json() {
    let cfg = small_cfg();
    let text = serde_json::to_string(&cfg).unwrap();
    assert!(text.contains("\"velocity_sign\":\"as-printed\""));
    assert!(text.contains("\"activation\":\"relu\""));
    assert_eq!(serde_json::from_str::<ModelConfig>(&text).unwrap(), cfg);
}
