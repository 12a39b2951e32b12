// latent-geometry diagnostics: class structure in z, scores, untrained baseline
use mmel_core::datagen::*;
use mmel_core::network::*;
use mmel_core::scoring::*;
use mmel_core::metrics::{auc, fpr_at_95_tpr};
use ndarray::Array2;

fn latent_stats(z: &Array2<f64>, labels: &[usize]) -> (f64, f64) {
    let n = z.nrows();
    let (mut same, mut diff, mut ns, mut nd) = (0.0, 0.0, 0usize, 0usize);
    for i in (0..n).step_by(7) {
        for j in (0..n).step_by(11) {
            if i == j { continue; }
            let cos = z.row(i).dot(&z.row(j));
            if labels[i] == labels[j] { same += cos; ns += 1; } else { diff += cos; nd += 1; }
        }
    }
    (same / ns as f64, diff / nd as f64)
}

fn report(state: &NetworkState, label: &str, train_set: &LabeledDataset, test_set: &LabeledDataset, ood: &Array2<f64>) {
    let train_z = embed_latent(state, train_set.features.view()).unwrap();
    let (same, diff) = latent_stats(&train_z, &train_set.labels);
    let index = ReferenceIndex::build(train_z, train_set.labels.clone()).unwrap();
    let scfg = ScoringConfig::for_index(&index);
    let id_z = embed_latent(state, test_set.features.view()).unwrap();
    let ood_z = embed_latent(state, ood.view()).unwrap();
    let empty = EnrollmentSet::empty();
    let id_s = score_batch(id_z.view(), &index, &scfg, &empty, Scorer::Pknn).unwrap();
    let ood_s = score_batch(ood_z.view(), &index, &scfg, &empty, Scorer::Pknn).unwrap();
    let (fpr, _) = fpr_at_95_tpr(&id_s, &ood_s).unwrap();
    let a = auc(&id_s, &ood_s).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    // classifier accuracy on test
    let logits = forward(state, test_set.features.view()).unwrap().logits;
    let correct = (0..test_set.len()).filter(|&i| {
        let row = logits.row(i);
        let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        argmax == test_set.labels[i]
    }).count();
    println!("{label}: cos(same)={same:.3} cos(diff)={diff:.3} | id_score={:.4} ood_score={:.4} | FPR95={fpr:.3} AUC={a:.4} acc={:.3}",
        mean(&id_s), mean(&ood_s), correct as f64 / test_set.len() as f64);
}

fn main() {
    let mut spec = SynthesisSpec::new(42);
    spec.samples_per_class = 600;
    let full = gen_sphere_mixture(&spec).unwrap();
    let (train_set, test_set) = full.split_train_test(100).unwrap();
    let ood = gen_ood(&spec, &train_set).unwrap();

    let net_spec = NetworkSpec::new(spec.input_dim, spec.num_classes);
    for (bs, ep) in [(32usize, 20usize), (32, 50), (64, 50), (128, 50)] {
        let cfg = TrainConfig { batch_size: bs, epochs: ep, ..TrainConfig::default() };
        let t = std::time::Instant::now();
        match train(net_spec.clone(), &cfg, &train_set) {
            Ok(outcome) => {
                let hl = outcome.history.last().unwrap();
                print!("[{:>5.1?}s hypb/a={:.3} com={:.3}] ", t.elapsed().as_secs_f32(), hl.l_hypb / (2.0 * bs as f64), hl.l_com);
                report(&outcome.state, &format!("bs={bs:<3} ep={ep}"), &train_set, &test_set, &ood);
            }
            Err(e) => println!("bs={bs} ep={ep}: FAILED {e}"),
        }
    }
}
