use fslab::checkpoint::Model;
use fslab::config::RunConfig;
use fslab::pipeline::{embed, setting_view, train_setting};
use fslab::protocol::{synth_generate, DatasetTable, SettingKind, Split};
use fslab::supervised::FeatureLayer;
use fslab::trace::epoch_means;
use fslab::Error;

fn small() -> RunConfig {
    let mut c = RunConfig::default();
    c.apply_text(
        "synth.base_classes=5\nsynth.val_classes=1\nsynth.novel_classes=5\nsynth.per_class=40\n\
         ssl.epochs=2\nssl.hidden_dims=16\nssl.emb_dim=8\nsup.epochs=2\nsup.hidden_dims=16\nsup.emb_dim=8\n",
    )
    .unwrap();
    c
}

/// Random relabeling that keeps every class inside its split.
fn scrambled(table: &DatasetTable) -> DatasetTable {
    let mut rng = fslab::RngStream::new(99, 1);
    let mut labels = table.labels().to_vec();
    for split in [Split::Base, Split::Val, Split::Novel] {
        let idx = table.indices_of(split);
        let perm = rng.permutation(idx.len());
        for (&i, &j) in idx.iter().zip(&perm) {
            labels[i] = table.labels()[idx[j]];
        }
    }
    assert_ne!(labels, table.labels());
    DatasetTable::new(table.features().clone(), labels, table.split().to_vec()).unwrap()
}

#[test]
fn unlabeled_training_is_label_blind() {
    let cfg = small().resolved();
    let table = synth_generate(&cfg.synth).unwrap();
    let other = scrambled(&table);
    for kind in [SettingKind::UbcFsl, SettingKind::UbcTfsl] {
        let a = train_setting(&table, kind, &cfg).unwrap();
        let b = train_setting(&other, kind, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace, b.trace);
    }
    let a = train_setting(&table, SettingKind::Fsl, &cfg).unwrap();
    let b = train_setting(&other, SettingKind::Fsl, &cfg).unwrap();
    assert_ne!(a.model, b.model);
}

#[test]
fn settings_dispatch_to_the_right_trainer() {
    let cfg = small().resolved();
    let table = synth_generate(&cfg.synth).unwrap();
    let fsl = train_setting(&table, SettingKind::Fsl, &cfg).unwrap();
    let Model::Sup(m) = &fsl.model else { panic!("fsl must train a supervised model") };
    assert_eq!(m.num_classes(), 5);
    let logits = embed(&fsl.model, table.features(), FeatureLayer::Logits).unwrap();
    assert_eq!(logits.shape(), (table.len(), 5));
    let pen = embed(&fsl.model, table.features(), FeatureLayer::Penultimate).unwrap();
    assert_eq!(pen.shape(), (table.len(), 8));

    let ubc = train_setting(&table, SettingKind::UbcTfsl, &cfg).unwrap();
    assert!(matches!(ubc.model, Model::Ssl(_)));
    assert_eq!(setting_view(&table, SettingKind::UbcTfsl, &cfg).unwrap().len(), 400);
    assert_eq!(setting_view(&table, SettingKind::UbcFsl, &cfg).unwrap().len(), 200);

    assert!(matches!(
        train_setting(&table, SettingKind::Tfsl, &cfg),
        Err(Error::Config(_))
    ));
    let wrong = fslab::Matrix::zeros(3, 7);
    assert!(matches!(embed(&ubc.model, &wrong, FeatureLayer::Logits), Err(Error::Shape(_))));
}

#[test]
fn tfsl_view_respects_budget() {
    let mut cfg = small().resolved();
    cfg.budget = Some(fslab::protocol::Budget::PerClass(10));
    let table = synth_generate(&cfg.synth).unwrap();
    let view = setting_view(&table, SettingKind::Tfsl, &cfg).unwrap();
    assert_eq!(view.labeled().len(), 200);
    assert_eq!(view.unlabeled().len(), 50);
    assert!(view.unlabeled().iter().all(|&i| table.split()[i] == Split::Novel));
    cfg.budget = Some(fslab::protocol::Budget::PerClass(41));
    assert!(matches!(
        setting_view(&table, SettingKind::Tfsl, &cfg),
        Err(Error::InsufficientData(_))
    ));
}

#[test]
fn default_ssl_loss_falls_at_benchmark_scale() {
    let cfg = RunConfig::default().resolved();
    let table = synth_generate(&cfg.synth).unwrap();
    let t = train_setting(&table, SettingKind::UbcTfsl, &cfg).unwrap();
    let means = epoch_means(&t.trace);
    assert_eq!(means.len(), cfg.ssl.epochs);
    assert!(means.last().unwrap().1 < means[0].1, "{means:?}");
}
