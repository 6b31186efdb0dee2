use std::path::Path;
use signfuse::data::*;
use signfuse::explain::*;
use signfuse::model::*;
use signfuse::train::*;

fn env<T: std::str::FromStr>(k: &str, d: T) -> T {
    std::env::var(k).ok().and_then(|s| s.parse().ok()).unwrap_or(d)
}

fn cached(path: &str, f: impl FnOnce() -> Checkpoint) -> Checkpoint {
    if Path::new(path).exists() {
        load_checkpoint(Path::new(path)).unwrap()
    } else {
        let c = f();
        save_checkpoint(&c, Path::new(path)).unwrap();
        c
    }
}

#[test]
#[ignore]
fn loc() {
    let seed: u64 = env("SEED", 1);
    let tag: String = env("TAG", "base".to_string());
    let trunk: String = env("TRUNK", "small4".to_string());
    let data = LoadedDataset::from_manifest(generate_synthetic_dataset(&SyntheticSpec::desk(seed)).unwrap(), None).unwrap();
    let cfg = ModelConfig { trunk: trunk.clone(), head_bias: true };
    let h = Hyperparams { epochs_stage1: env("E1", 30), epochs_stage2: env("E2", 20), seed, ..Default::default() };
    let frz = env("FREEZE", 0) == 1;
    let opts = TrainOptions { freeze_encoders: frz, ..Default::default() };
    let p = |n: &str| format!("/tmp/loc_{tag}_{trunk}_{seed}_{n}.ckpt");
    let f = cached(&p("F"), || pretrain_signs(Modality::Fundus, &data, &cfg, &h, "x").unwrap().checkpoint);
    let o = cached(&p("O"), || pretrain_signs(Modality::Oct, &data, &cfg, &h, "x").unwrap().checkpoint);
    eprintln!("stage1 F {:?} O {:?}", f.metrics, o.metrics);
    let k = cached(&p(if frz { "KZ" } else { "K" }), || finetune_diagnosis(&f, &o, &data, &h, &opts).unwrap().checkpoint);
    let s = cached(&p("S"), || train_scratch_baseline(&cfg, &data, &h, &opts).unwrap().checkpoint);
    for (name, c) in [("K", &k), ("S", &s)] {
        let m = c.diagnosis_model().unwrap();
        let auc = macro_auroc_of(&evaluate_diagnosis(&m, &data, Split::Test).unwrap()).unwrap();
        let loc = evaluate_localization(&m, &data, Split::Test).unwrap();
        let fm: Vec<f64> = loc.entries.iter().filter(|e| e.branch == Modality::Fundus).map(|e| e.score).collect();
        let om: Vec<f64> = loc.entries.iter().filter(|e| e.branch == Modality::Oct).map(|e| e.score).collect();
        eprintln!("{name}: auroc {auc:?} loc median {:?} F {:?} O {:?} n={}", loc.median, median(&fm), median(&om), loc.entries.len());
        let rel = |d: DiseaseLabel, b: Modality| -> Vec<usize> { match (d, b) { (DiseaseLabel::Pcv, _) => vec![3], (DiseaseLabel::NeovascularAMD, Modality::Fundus) => vec![4], (DiseaseLabel::NeovascularAMD, Modality::Oct) => vec![0, 1], _ => vec![] } };
        let (mut vb, mut vc) = (Vec::new(), Vec::new());
        for g in data.split(Split::Test) {
            if g.disease == DiseaseLabel::Other { continue; }
            let (tf, to) = (data.tensor(g, Modality::Fundus).unwrap(), data.tensor(g, Modality::Oct).unwrap());
            if m.predict(tf, to).unwrap() != g.disease { continue; }
            let (hf, ho) = gradcam(&m, tf, to, g.disease.index()).unwrap();
            for (hm, b) in [(hf, Modality::Fundus), (ho, Modality::Oct)] {
                let r = rel(g.disease, b);
                let lb: Vec<_> = g.lesion_boxes.as_ref().unwrap().iter().filter(|l| l.modality == b).collect();
                let rb: Vec<_> = lb.iter().filter(|l| r.contains(&l.sign)).map(|l| l.bbox).collect();
                if rb.is_empty() { continue; }
                let all: Vec<_> = lb.iter().map(|l| l.bbox).collect();
                vb.push(localization_score(&hm, &all, 256, 256));
                vc.push(localization_score(&hm, &rb, 256, 256));
            }
        }
        eprintln!("{name}: variant B {:?} C {:?} n {}", median(&vb), median(&vc), vb.len());
        if env("DUMP", 0) == 1 {
            for g in data.split(Split::Test).into_iter().filter(|g| g.disease != DiseaseLabel::Other).take(6) {
                let (tf, to) = (data.tensor(g, Modality::Fundus).unwrap(), data.tensor(g, Modality::Oct).unwrap());
                let (hf, ho) = gradcam(&m, tf, to, g.disease.index()).unwrap();
                let (cf, co) = capture(&m, tf, to, g.disease.index()).unwrap();
                for c in [&cf, &co] {
                    let (k, hh, ww) = c.activation.dim();
                    let w: Vec<f64> = (0..k).map(|i| c.gradient.index_axis(ndarray::Axis(0), i).sum() / (hh * ww) as f64).collect();
                    let nz: Vec<usize> = (0..k).map(|i| c.gradient.index_axis(ndarray::Axis(0), i).iter().filter(|v| **v != 0.0).count()).collect();
                    let am: Vec<f64> = (0..k).map(|i| c.activation.index_axis(ndarray::Axis(0), i).mean().unwrap()).collect();
                    eprintln!("{name} {} {:?} w {:?} actmean {:.2?}", g.id, c.branch, w.iter().map(|v| format!("{v:.1e}")).collect::<Vec<_>>(), am);
                    let mut pre = ndarray::Array2::<f64>::zeros((hh, ww));
                    for i in 0..k { pre.scaled_add(w[i], &c.activation.index_axis(ndarray::Axis(0), i)); }
                    let mx = pre.iter().cloned().fold(f64::MIN, f64::max);
                    let mn = pre.iter().cloned().fold(f64::MAX, f64::min);
                    eprintln!("pre range {mn:.3e} {mx:.3e}");
                    for y in 0..hh { let row: String = (0..ww).map(|x| { let t = (pre[[y,x]] - mn) / (mx - mn + 1e-30); b" .:-=+*#%@"[((t * 9.99) as usize).min(9)] as char }).collect(); eprintln!("  {row}"); }
                    for b in g.boxes(c.branch) { eprintln!("  box {:.0} {:.0} {:.0} {:.0} (cells of {:.1})", b.x0, b.y0, b.x1, b.y1, 256.0 / hh as f64); }
                }
                for (hm, b, t) in [(hf, Modality::Fundus, tf), (ho, Modality::Oct, to)] {
                    let ov = render_overlay(&hm, t, 0.5).unwrap();
                    let mut img = ov.to_rgb_image();
                    let scale = 224.0 / 256.0;
                    for bb in g.boxes(b) {
                        let bb = bb.dilate(2.0);
                        let (x0, y0, x1, y1) = ((bb.x0 * scale).max(0.0) as u32, (bb.y0 * scale).max(0.0) as u32, ((bb.x1 * scale) as u32).min(223), ((bb.y1 * scale) as u32).min(223));
                        for x in x0..=x1 { img.put_pixel(x, y0, image::Rgb([255, 255, 255])); img.put_pixel(x, y1, image::Rgb([255, 255, 255])); }
                        for y in y0..=y1 { img.put_pixel(x0, y, image::Rgb([255, 255, 255])); img.put_pixel(x1, y, image::Rgb([255, 255, 255])); }
                    }
                    img.save(format!("/tmp/viz_{name}_{}_{}.png", g.id, b.tag())).unwrap();
                    let raw = t.to_rgb_image();
                    raw.save(format!("/tmp/raw_{}_{}.png", g.id, b.tag())).unwrap();
                    eprintln!("{name} {} {} {:?} score {:.3} signs {:?}", g.id, b.tag(), g.disease, localization_score(&hm, &g.boxes(b), 256, 256), g.signs(b).names());
                }
            }
        }
    }
}

#[test]
#[ignore]
fn signcam() {
    let seed: u64 = env("SEED", 1);
    let tag: String = env("TAG", "base".to_string());
    let trunk: String = env("TRUNK", "small4".to_string());
    let data = LoadedDataset::from_manifest(generate_synthetic_dataset(&SyntheticSpec::desk(seed)).unwrap(), None).unwrap();
    let p = |n: &str| format!("/tmp/loc_{tag}_{trunk}_{seed}_{n}.ckpt");
    let f = load_checkpoint(Path::new(&p("F"))).unwrap().sign_model().unwrap();
    let o = load_checkpoint(Path::new(&p("O"))).unwrap().sign_model().unwrap();
    let mut per: Vec<Vec<f64>> = vec![Vec::new(); 10];
    for s in 0..5 {
        let mut w = ndarray::Array2::<f64>::zeros((2000, 3));
        w.slice_mut(ndarray::s![..1000, 0]).assign(&f.head.weight().column(s));
        w.slice_mut(ndarray::s![1000.., 1]).assign(&o.head.weight().column(s));
        let m = DiagnosisModel { fundus: f.encoder.clone(), oct: o.encoder.clone(), head: LinearHead::from_parts(w, None).unwrap() };
        for g in data.split(Split::Test) {
            let (tf, to) = (data.tensor(g, Modality::Fundus).unwrap(), data.tensor(g, Modality::Oct).unwrap());
            let (hf, _) = gradcam(&m, tf, to, 0).unwrap();
            let (_, ho) = gradcam(&m, tf, to, 1).unwrap();
            for (b, hm, off) in [(Modality::Fundus, hf, 0), (Modality::Oct, ho, 5)] {
                if let Some(lb) = g.lesion_boxes.as_ref().unwrap().iter().find(|l| l.modality == b && l.sign == s) {
                    per[off + s].push(localization_score(&hm, &[lb.bbox], 256, 256));
                }
            }
        }
    }
    for (i, v) in per.iter().enumerate() {
        eprintln!("sign {i}: n {} median {:?}", v.len(), median(v));
    }
}

#[test]
#[ignore]
fn ft() {
    let seed: u64 = env("SEED", 1);
    let tag: String = env("TAG", "base".to_string());
    let trunk: String = env("TRUNK", "small4".to_string());
    let data = LoadedDataset::from_manifest(generate_synthetic_dataset(&SyntheticSpec::desk(seed)).unwrap(), None).unwrap();
    let p = |n: &str| format!("/tmp/loc_{tag}_{trunk}_{seed}_{n}.ckpt");
    let mut f = load_checkpoint(Path::new(&p("F"))).unwrap();
    let mut o = load_checkpoint(Path::new(&p("O"))).unwrap();
    let a: f64 = env("SCALE", 1.0);
    for c in [&mut f, &mut o] {
        for prm in c.encoders[0].params.iter_mut() {
            if prm.name.starts_with("proj") { prm.value.mapv_inplace(|v| v * a); }
        }
    }
    for g in data.split(Split::Train).into_iter().take(3) {
        for (c, b) in [(&f, Modality::Fundus), (&o, Modality::Oct)] {
            let v = c.encoder().encode_one(data.tensor(g, b).unwrap()).unwrap();
            let n: f64 = v.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
            let mean: f64 = v.as_slice().iter().sum::<f64>() / 1000.0;
            eprintln!("feat {} {:?} norm {n:.3} mean {mean:.3}", g.id, b);
        }
    }
    let h = Hyperparams { epochs_stage1: 30, epochs_stage2: env("E2", 8), base_lr: env("LR", 0.001), seed, ..Default::default() };
    let out = finetune_diagnosis(&f, &o, &data, &h, &TrainOptions::default()).unwrap();
    for l in &out.log {
        eprintln!("ep {} loss {:.4} valid {:?}", l.epoch, l.train_loss, l.valid_auroc);
    }
    let m = out.checkpoint.diagnosis_model().unwrap();
    let loc = evaluate_localization(&m, &data, Split::Test).unwrap();
    eprintln!("test auroc {:?} loc {:?} n {}", macro_auroc_of(&evaluate_diagnosis(&m, &data, Split::Test).unwrap()), loc.median, loc.entries.len());
}

#[test]
#[ignore]
fn s1() {
    let seed: u64 = env("SEED", 1);
    let trunk: String = env("TRUNK", "small4".to_string());
    let data = LoadedDataset::from_manifest(generate_synthetic_dataset(&SyntheticSpec::desk(seed)).unwrap(), None).unwrap();
    let cfg = ModelConfig { trunk, head_bias: true };
    let h = Hyperparams { epochs_stage1: env("E1", 30), lr_decay_factor: env("DF", 0.1), seed, ..Default::default() };
    let b = if env("BR", "F".to_string()) == "F" { Modality::Fundus } else { Modality::Oct };
    let out = pretrain_signs(b, &data, &cfg, &h, "x").unwrap();
    for l in &out.log {
        eprintln!("ep {} loss {:.4} valid {:?}", l.epoch, l.train_loss, l.valid_auroc);
    }
}

#[test]
#[ignore]
fn persign() {
    let seed: u64 = env("SEED", 2);
    let tag: String = env("TAG", "v2".to_string());
    let data = LoadedDataset::from_manifest(generate_synthetic_dataset(&SyntheticSpec::desk(seed)).unwrap(), None).unwrap();
    for b in ["F", "O"] {
        let m = load_checkpoint(Path::new(&format!("/tmp/loc_{tag}_small4_{seed}_{b}.ckpt"))).unwrap().sign_model().unwrap();
        if let signfuse::metrics::EvalBatch::Signs { probs, truth, .. } = evaluate_signs(&m, &data, Split::Valid).unwrap() {
            let s: Vec<Vec<f64>> = probs.iter().map(|p| p.to_vec()).collect();
            let t: Vec<Vec<bool>> = truth.iter().map(|p| p.to_vec()).collect();
            eprintln!("{b} {:?}", signfuse::metrics::auroc_macro(&s, &t).unwrap().per_label);
        }
    }
}
