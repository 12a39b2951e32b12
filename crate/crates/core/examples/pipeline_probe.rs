// end-to-end probe: train on synthetic ID data, score held-out + OOD, report metrics
use mmel_core::datagen::*;
use mmel_core::losses::PrototypeSet;
use mmel_core::metrics::{auc, fpr_at_95_tpr};
use mmel_core::network::*;
use mmel_core::scoring::*;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let mut spec = SynthesisSpec::new(42);
    spec.samples_per_class = 600; // 500 train + 100 test per class
    let full = gen_sphere_mixture(&spec).unwrap();
    let (train_set, test_set) = full.split_train_test(100).unwrap();
    let ood = gen_ood(&spec, &train_set).unwrap();
    println!("gen: {:?} train={} test={} ood={}", t0.elapsed(), train_set.len(), test_set.len(), ood.nrows());

    let net_spec = NetworkSpec::new(spec.input_dim, spec.num_classes);
    let config = TrainConfig::default();
    let t1 = Instant::now();
    let outcome = match train(net_spec, &config, &train_set) {
        Ok(o) => o,
        Err(e) => { println!("TRAIN FAILED: {e}"); return; }
    };
    println!("train: {:?}", t1.elapsed());
    let h0 = &outcome.history[0];
    let hl = outcome.history.last().unwrap();
    println!("loss epoch0: total={:.4} com={:.4} dis={:.4} hypb={:.4} ce={:.4}", h0.l_total, h0.l_com, h0.l_dis, h0.l_hypb, h0.l_ce);
    println!("loss final : total={:.4} com={:.4} dis={:.4} hypb={:.4} ce={:.4}", hl.l_total, hl.l_com, hl.l_dis, hl.l_hypb, hl.l_ce);
    println!("com reduction: {:.1}%", 100.0 * (1.0 - hl.l_com / h0.l_com));

    let t2 = Instant::now();
    let train_z = embed_latent(&outcome.state, train_set.features.view()).unwrap();
    let index = ReferenceIndex::build(train_z, train_set.labels.clone()).unwrap();
    let cfg = ScoringConfig::for_index(&index);
    println!("index: {:?} (k={}, p={})", t2.elapsed(), cfg.k, cfg.p);

    let t3 = Instant::now();
    let id_z = embed_latent(&outcome.state, test_set.features.view()).unwrap();
    let ood_z = embed_latent(&outcome.state, ood.view()).unwrap();
    let empty = EnrollmentSet::empty();
    let id_scores = score_batch(id_z.view(), &index, &cfg, &empty, Scorer::Pknn).unwrap();
    let ood_scores = score_batch(ood_z.view(), &index, &cfg, &empty, Scorer::Pknn).unwrap();
    println!("score: {:?}", t3.elapsed());

    let (fpr, lambda) = fpr_at_95_tpr(&id_scores, &ood_scores).unwrap();
    let a = auc(&id_scores, &ood_scores).unwrap();
    println!("PKNN: FPR95={fpr:.4} AUC={a:.4} lambda={lambda:.4}");

    // knn & maha for comparison
    for scorer in [Scorer::Knn, Scorer::Mahalanobis] {
        let i_s = score_batch(id_z.view(), &index, &cfg, &empty, scorer).unwrap();
        let o_s = score_batch(ood_z.view(), &index, &cfg, &empty, scorer).unwrap();
        let (f, _) = fpr_at_95_tpr(&i_s, &o_s).unwrap();
        let a2 = auc(&i_s, &o_s).unwrap();
        println!("{scorer:?}: FPR95={f:.4} AUC={a2:.4}");
    }

    // enrollment check: Ne in {1,3,10}, 20 trials each
    use rand::{seq::SliceRandom, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let baseline_fpr = fpr;
    for ne in [1usize, 3, 10] {
        let mut fprs = Vec::new();
        for _ in 0..20 {
            let mut idx: Vec<usize> = (0..ood_z.nrows()).collect();
            idx.shuffle(&mut rng);
            let (enrolled_idx, rest_idx) = idx.split_at(ne);
            let enrolled = ndarray::Array2::from_shape_fn((ne, ood_z.ncols()), |(r, c)| ood_z[[enrolled_idx[r], c]]);
            let enrollment = enroll_ood(enrolled.view()).unwrap();
            let rest = ndarray::Array2::from_shape_fn((rest_idx.len(), ood_z.ncols()), |(r, c)| ood_z[[rest_idx[r], c]]);
            let i_s = score_batch(id_z.view(), &index, &cfg, &enrollment, Scorer::Pknn).unwrap();
            let o_s = score_batch(rest.view(), &index, &cfg, &enrollment, Scorer::Pknn).unwrap();
            fprs.push(fpr_at_95_tpr(&i_s, &o_s).unwrap().0);
        }
        let mean = fprs.iter().sum::<f64>() / fprs.len() as f64;
        println!("enroll Ne={ne}: mean FPR95={mean:.4} (baseline {baseline_fpr:.4})");
    }
    println!("total: {:?}", t0.elapsed());
    let _ = PrototypeSet::new(outcome.prototypes.prototypes().to_owned(), outcome.prototypes.tau());
}
