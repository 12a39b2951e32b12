// calibration: trained-pipeline metrics across generator noise settings
use mmel_core::datagen::*;
use mmel_core::network::*;
use mmel_core::scoring::*;
use mmel_core::metrics::{auc, fpr_at_95_tpr};

fn main() {
    for &(id_noise, ood_noise) in &[(0.15, 0.25), (0.2, 0.35), (0.25, 0.5)] {
        {
          for seed in [42u64, 7, 99, 3, 11] {
            let mut spec = SynthesisSpec::new(seed);
            spec.samples_per_class = 600;
            spec.noise = id_noise;
            spec.ood.noise = ood_noise;
            let full = gen_sphere_mixture(&spec).unwrap();
            let (train_set, test_set) = full.split_train_test(100).unwrap();
            let ood = gen_ood(&spec, &train_set).unwrap();
            let net_spec = NetworkSpec::new(spec.input_dim, spec.num_classes);
            let cfg = TrainConfig { batch_size: 64, ..TrainConfig::default() };
            let outcome = train(net_spec, &cfg, &train_set).unwrap();
            let train_z = embed_latent(&outcome.state, train_set.features.view()).unwrap();
            let index = ReferenceIndex::build(train_z, train_set.labels.clone()).unwrap();
            let scfg = ScoringConfig::for_index(&index);
            let id_z = embed_latent(&outcome.state, test_set.features.view()).unwrap();
            let ood_z = embed_latent(&outcome.state, ood.view()).unwrap();
            let empty = EnrollmentSet::empty();
            let id_s = score_batch(id_z.view(), &index, &scfg, &empty, Scorer::Pknn).unwrap();
            let ood_s = score_batch(ood_z.view(), &index, &scfg, &empty, Scorer::Pknn).unwrap();
            let (fpr, _) = fpr_at_95_tpr(&id_s, &ood_s).unwrap();
            let a = auc(&id_s, &ood_s).unwrap();
            println!("noise=({id_noise:.2},{ood_noise:.2}) seed={seed:<3}: FPR95={fpr:.3} AUC={a:.4}");
          }
        }
    }
}
