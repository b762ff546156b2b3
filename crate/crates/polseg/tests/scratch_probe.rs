use polseg::config::RunConfig;
use polseg::data::split;
use polseg::data::synth::synth_generate;
use polseg::diffusion::{encode_labels, forward_diffuse};
use polseg::domain::PoLVocab;
use polseg::engine::{infer, train};
use polseg::nn::{randn, rng_for};

#[test]
#[ignore]
fn probe_inference_collapse() {
    let mut cfg = RunConfig::default();
    cfg.synth.n_objects = 20;
    cfg.synth.t_len = 336;
    cfg.encoder.hidden = 32;
    cfg.encoder.n_layers = 6;
    cfg.decoder.hidden = 32;
    cfg.decoder.step_dim = 32;
    cfg.train.max_iters = 300;
    cfg.train.eval_every = 0;
    cfg.train.log_every = 100;
    let vocab = PoLVocab::default_ew();
    let objects = synth_generate(&cfg.synth, &vocab, &PoLVocab::default_ns()).unwrap();
    let dataset = split(objects, 0.8, 0).unwrap();
    let setup = cfg.train_setup(polseg::domain::Direction::EW, true);
    let bundle = train(&dataset, &vocab, &setup).unwrap();
    println!("final losses: {:?}", &bundle.loss_curve[bundle.loss_curve.len()-5..]);

    // probe: denoise a training example at several s values
    let obj = &dataset.train[0];
    let xn = bundle.norm_stats.apply(&obj.series).unwrap();
    let (enc_out, _) = bundle.encoder.forward(&xn.values, None).unwrap();
    let dec = bundle.decoder.as_ref().unwrap();
    let sched = bundle.diffusion.schedule().unwrap();
    let x0 = encode_labels(&obj.labels_ew.labels, 5, 1.0).unwrap();
    let mut rng = rng_for(123, &[]);
    for s in [1000usize, 500, 200, 40] {
        let eps = randn(336, 5, &mut rng);
        let y_s = forward_diffuse(&x0, s, &sched, &eps);
        let p = dec.denoise(&y_s, &enc_out.embedding, s).unwrap();
        let hits = p.rows().into_iter().zip(&obj.labels_ew.labels)
            .filter(|(row, &gt)| {
                let am = row.iter().enumerate().max_by(|a,b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
                am == gt
            }).count();
        let mean_max: f64 = p.rows().into_iter().map(|r| r.iter().cloned().fold(f64::MIN, f64::max)).sum::<f64>() / 336.0;
        println!("s={s}: denoise-argmax acc {:.1}%, mean max-prob {:.3}", 100.0*hits as f64/336.0, mean_max);
    }
    let res = infer(&bundle, &obj.series, 25, 9).unwrap();
    let hits = res.labels.labels.iter().zip(&obj.labels_ew.labels).filter(|(a,b)| a==b).count();
    println!("full infer train acc: {:.1}%", 100.0*hits as f64/336.0);
    let mut hist = [0usize;5];
    for &l in &res.labels.labels { hist[l]+=1; }
    println!("label histogram: {hist:?}");
    for (s, snap) in res.snapshots.iter().step_by(5) {
        let mut h = [0usize;5];
        for &l in &snap.labels { h[l]+=1; }
        println!("snapshot s={s}: {h:?}");
    }
}
