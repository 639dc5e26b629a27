use classunlearn::corpus::LabeledCorpus;
use classunlearn::experiment::{self, Settings};
use classunlearn::metrics;
use classunlearn::pipeline::UnlearnMethod;
use classunlearn::privacy::{self, Condition, ShadowSettings, SweepCell};
use classunlearn::synth::{self, SynthConfig};

fn corpus(docs_per_class: usize, seed: u64) -> LabeledCorpus {
    let cfg = SynthConfig {
        docs_per_class,
        ..Default::default()
    };
    synth::generate(&cfg, seed).unwrap()
}

fn shadow_settings(count: usize) -> ShadowSettings {
    let s = Settings {
        shadows: count,
        ..Default::default()
    };
    s.shadow_settings()
}

#[test]
fn shadow_pool_is_balanced_disjoint_and_deterministic() {
    let corpus = corpus(50, 1);
    assert_eq!(corpus.len(), 200);
    let k = corpus.num_classes();
    let all: Vec<usize> = (0..corpus.len()).collect();
    let settings = shadow_settings(2);
    let unlearned = Condition::Unlearned {
        method: UnlearnMethod::Hessian,
        class: 1,
    };
    for (condition, width) in [(Condition::Pre, k + 3), (unlearned, k - 1 + 3)] {
        let pool = privacy::build_shadow_pool(&corpus, &all, &settings, condition, 7).unwrap();
        assert_eq!(pool.shadows.len(), 2);
        for s in &pool.shadows {
            assert_eq!(s.member_bits.iter().filter(|&&b| b).count(), 100);
            assert_eq!(s.member_bits.iter().filter(|&&b| !b).count(), 100);
            assert!(s.features.iter().all(|f| f.len() == width));
            assert!(s.members.iter().all(|i| !s.holdout.contains(i)));
        }
        assert_ne!(pool.shadows[0].members, pool.shadows[1].members);
        let again = privacy::build_shadow_pool(&corpus, &all, &settings, condition, 7).unwrap();
        assert_eq!(pool, again);
    }
}

#[test]
fn shadow_pool_needs_two_shadows() {
    let corpus = corpus(20, 2);
    let all: Vec<usize> = (0..corpus.len()).collect();
    let err = privacy::build_shadow_pool(&corpus, &all, &shadow_settings(1), Condition::Pre, 0);
    assert!(err.is_err());
}

fn cell(seed: u64) -> SweepCell {
    let corpus = corpus(100, 40 + seed);
    let settings = Settings {
        shadows: 4,
        ..Default::default()
    };
    experiment::sweep_cell(&corpus, &settings, seed, UnlearnMethod::Hessian, 0, 10.0).unwrap()
}

fn noiseless_accuracy(cell: &SweepCell) -> f64 {
    let x = cell.x_eval.select_rows(&cell.accuracy_rows);
    let y: Vec<usize> = cell.accuracy_rows.iter().map(|&i| cell.labels[i]).collect();
    metrics::accuracy_excluding(&cell.target, &x, &y, 0).unwrap()
}

#[test]
fn tau_one_needs_no_noise() {
    let cell = cell(0);
    let grid = privacy::default_sigma_grid();
    let seeds = experiment::noise_seeds(0, 3);
    let (rows, _) = privacy::noise_sweep(std::slice::from_ref(&cell), 0, &[1.0], &grid, &seeds).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].sigma_star, Some(0.0));
    assert_eq!(rows[0].accuracy, Some(noiseless_accuracy(&cell)));
}

#[test]
fn huge_noise_drowns_the_attack() {
    let cell = cell(1);
    let seeds = experiment::noise_seeds(1, 10);
    let (_, points) = privacy::noise_sweep(std::slice::from_ref(&cell), 0, &[0.5], &[1e3], &seeds).unwrap();
    let auc = points[0].auc_retained;
    assert!((0.45..=0.55).contains(&auc), "{auc}");
}

#[test]
fn mean_attack_auc_does_not_grow_with_noise() {
    let cell = cell(2);
    let seeds = experiment::noise_seeds(2, 10);
    let grid = privacy::default_sigma_grid();
    let (_, points) = privacy::noise_sweep(std::slice::from_ref(&cell), 0, &[0.5], &grid, &seeds).unwrap();
    for w in points.windows(2) {
        assert!(
            w[1].auc_retained <= w[0].auc_retained + 0.02,
            "σ {} → {}: {} → {}",
            w[0].sigma,
            w[1].sigma,
            w[0].auc_retained,
            w[1].auc_retained
        );
    }
}

#[test]
fn sweep_rejects_bad_grids() {
    let cell = cell(3);
    let seeds = [1];
    let cells = std::slice::from_ref(&cell);
    assert!(privacy::noise_sweep(cells, 0, &[], &[0.0], &seeds).is_err());
    assert!(privacy::noise_sweep(cells, 0, &[0.5], &[1.0, 0.5], &seeds).is_err());
    assert!(privacy::noise_sweep(cells, 0, &[0.5], &[-1.0], &seeds).is_err());
}
