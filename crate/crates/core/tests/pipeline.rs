use slotunc::corpus::{synth_corpus, Dataset, SlotPool, SplitSizes, SynthConfig, Template};
use slotunc::extraction::{expand_syntax, NpRelationSet, UnknownMask};
use slotunc::pipeline::Pipeline;
use slotunc::tagger::{CellKind, Model, TaggerConfig};
use slotunc::training::{predict_repaired, train, TrainConfig};
use slotunc::uncertainty::{oov_flags, score, Metric, MetricKind};

fn corpus() -> Dataset {
    let pool = |name: &str, ind: &[&str], ood: &[&str]| SlotPool {
        name: name.into(),
        ind: ind.iter().map(|s| s.to_string()).collect(),
        ood: ood.iter().map(|s| s.to_string()).collect(),
    };
    let cfg = SynthConfig {
        seed: 5,
        ood_slot_prob: 0.5,
        sizes: SplitSizes { train: 60, dev: 20, test_ind: 20, test_ood: 20 },
        slots: vec![
            pool("genre", &["jazz", "rock", "hip hop"], &["zydeco", "sea shanty"]),
            pool("city", &["paris", "new york", "tokyo"], &["nuuk", "ulan bator"]),
        ],
        templates: vec![
            Template { text: "play {genre} music".into(), root: 0 },
            Template { text: "weather in {city}".into(), root: 0 },
            Template { text: "play {genre} in {city}".into(), root: 0 },
        ],
    };
    synth_corpus(&cfg).unwrap()
}

fn trained(data: &Dataset) -> Model {
    let tagger = TaggerConfig { embed_dim: 8, hidden_dim: 10, num_labels: 0, vocab_size: 0, cell: CellKind::Gated, seed: 2, scale: 1.0 };
    let cfg = TrainConfig { learning_rate: 0.01, epochs: 4, lambda_cal: 0.0, ..TrainConfig::default() };
    train(data, tagger, &cfg).unwrap().best
}

#[test]
fn infinite_threshold_is_plain_tagging() {
    let data = corpus();
    let model = trained(&data);
    for kind in [MetricKind::DirichletEntropy, MetricKind::Confidence, MetricKind::GaussianNoise] {
        let p = Pipeline::new(Metric::new(kind), f64::INFINITY);
        for (i, u) in data.test_ind.iter().enumerate() {
            assert_eq!(p.run(&model, u, i as u64).unwrap(), predict_repaired(&model, u).unwrap());
        }
    }
    let id = Pipeline::identity();
    assert_eq!(id.run_all(&model, &data.test_ood).unwrap().len(), data.test_ood.len());
}

#[test]
fn oov_option_is_a_union() {
    let data = corpus();
    let model = trained(&data);
    let metric = Metric::new(MetricKind::DirichletEntropy);
    for (i, u) in data.test_ood.iter().enumerate() {
        let s = score(&model, u, i as u64, &metric, None).unwrap();
        let mut sorted = s.scores.clone();
        sorted.sort_by(f64::total_cmp);
        let theta = sorted[sorted.len() / 2];
        let (_, plain) = Pipeline::new(metric.clone(), theta).mask(&model, u, i as u64).unwrap();
        let (_, with) = Pipeline::new(metric.clone(), theta).oov(true).mask(&model, u, i as u64).unwrap();
        let oov = oov_flags(&u.tokens, &s.predicted, &model.oov_vocab);
        for t in 0..u.len() {
            assert_eq!(with.flags()[t], plain.flags()[t] || oov[t]);
        }
    }
}

#[test]
fn syntax_option_expands_the_mask() {
    let data = corpus();
    let model = trained(&data);
    let metric = Metric::new(MetricKind::Confidence);
    let rels = NpRelationSet::default();
    for (i, u) in data.test_ood.iter().enumerate() {
        let (_, plain) = Pipeline::new(metric.clone(), -0.9).mask(&model, u, i as u64).unwrap();
        let (_, grown) = Pipeline::new(metric.clone(), -0.9).syntax(true).mask(&model, u, i as u64).unwrap();
        assert_eq!(grown, expand_syntax(&plain, u, &rels).unwrap());
        assert!(plain.is_subset_of(&grown));
    }
    let m = UnknownMask::empty(3);
    assert_eq!(m.count(), 0);
}

#[test]
fn oov_metric_ignores_theta() {
    let data = corpus();
    let model = trained(&data);
    let a = Pipeline::new(Metric::new(MetricKind::Oov), f64::INFINITY).run_all(&model, &data.test_ood).unwrap();
    let b = Pipeline::new(Metric::new(MetricKind::Oov), -5.0).run_all(&model, &data.test_ood).unwrap();
    assert_eq!(a, b);
    // unseen OOD words predicted O are flagged, so some unknown span appears
    assert!(a.iter().flatten().any(|l| l == "B-unknown"));
}

#[test]
fn row_labels() {
    let m = Metric::new(MetricKind::DirichletEntropy).calibrated(true);
    assert_eq!(Pipeline::new(m, 0.0).syntax(true).oov(true).label(), "dirichlet-entropy+cal+syntax+oov");
    assert_eq!(Pipeline::new(Metric::new(MetricKind::Oov), 0.0).oov(true).label(), "oov");
}
