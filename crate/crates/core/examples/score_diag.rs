// score-distribution diagnostics after 50-epoch training
use mmel_core::datagen::*;
use mmel_core::network::*;
use mmel_core::scoring::*;
use mmel_core::metrics::{auc, fpr_at_95_tpr};

fn quantiles(scores: &mut Vec<f64>) -> String {
    scores.sort_by(f64::total_cmp);
    let q = |f: f64| scores[((scores.len() - 1) as f64 * f) as usize];
    format!("q05={:.3} q50={:.3} q95={:.3} max={:.3}", q(0.05), q(0.5), q(0.95), scores[scores.len()-1])
}

fn main() {
    let mut spec = SynthesisSpec::new(42);
    spec.samples_per_class = 600;
    let full = gen_sphere_mixture(&spec).unwrap();
    let (train_set, test_set) = full.split_train_test(100).unwrap();
    let ood = gen_ood(&spec, &train_set).unwrap();
    let net_spec = NetworkSpec::new(spec.input_dim, spec.num_classes);
    let cfg = TrainConfig { batch_size: 64, ..TrainConfig::default() };
    let outcome = train(net_spec, &cfg, &train_set).unwrap();

    let train_z = embed_latent(&outcome.state, train_set.features.view()).unwrap();
    let index = ReferenceIndex::build(train_z.clone(), train_set.labels.clone()).unwrap();
    let id_z = embed_latent(&outcome.state, test_set.features.view()).unwrap();
    let ood_z = embed_latent(&outcome.state, ood.view()).unwrap();
    let empty = EnrollmentSet::empty();

    for (k, p) in [(300usize, 3usize), (300, 0), (50, 3), (50, 0), (10, 0), (1, 0)] {
        let scfg = ScoringConfig { k, p };
        let mut id_s = score_batch(id_z.view(), &index, &scfg, &empty, Scorer::Pknn).unwrap();
        let mut ood_s = score_batch(ood_z.view(), &index, &scfg, &empty, Scorer::Pknn).unwrap();
        let (fpr, _) = fpr_at_95_tpr(&id_s, &ood_s).unwrap();
        let a = auc(&id_s, &ood_s).unwrap();
        let mut tr = score_batch(train_z.view(), &index, &scfg, &empty, Scorer::Pknn).unwrap();
        println!("k={k:<3} p={p}: FPR95={fpr:.3} AUC={a:.4}");
        println!("   train: {}", quantiles(&mut tr));
        println!("   id   : {}", quantiles(&mut id_s));
        println!("   ood  : {}", quantiles(&mut ood_s));
    }
}
