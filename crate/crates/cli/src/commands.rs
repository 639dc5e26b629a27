//! Subcommand bodies. Every command fans its cells out over the worker pool
//! and writes each cell into its own directory:
//!
//! ```text
//! out/<dataset>/train/<seed>/{model.json, vocab.json, metrics.json}
//! out/<dataset>/<method>/<class>/<seed>/{model.json, released.json, metrics.json}
//! ```

use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use classunlearn::corpus::{self, LabeledCorpus};
use classunlearn::experiment::{self, Prepared, Settings};
use classunlearn::metrics;
use classunlearn::model_io::{self, ModelFile};
use classunlearn::par;
use classunlearn::pipeline::UnlearnMethod;
use classunlearn::privacy::{self, Condition, MiaReport};
use classunlearn::tfidf::Vocabulary;
use classunlearn::unlearn::{ReleasedModel, RetrainedModel};

use crate::config::{ExperimentConfig, Format};
use crate::CliError;

/// A validated config with its dataset loaded.
pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub corpus: LabeledCorpus,
    pub settings: Settings,
    pub name: String,
    pub root: PathBuf,
    pub config_hash: String,
    pub dataset_hash: String,
}

impl Ctx {
    pub fn open(cfg: ExperimentConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let path = cfg.dataset_path();
        let corpus = match cfg.format() {
            Format::Jsonl => corpus::load_jsonl(path),
            Format::Csv => corpus::load_csv(path),
        }
        .map_err(|e| CliError::Validation(format!("dataset.path: {e}")))?;
        let dataset_hash = model_io::file_hash(path)?;
        let name = cfg.dataset_name();
        Ok(Self {
            root: cfg.output.join(&name),
            settings: cfg.settings(),
            config_hash: cfg.hash(),
            cfg,
            corpus,
            name,
            dataset_hash,
        })
    }

    /// Configured classes as ids, ascending; all classes when none are named.
    pub fn classes(&self) -> Result<Vec<usize>, CliError> {
        let names = self.corpus.label_names();
        if self.cfg.experiment.classes.is_empty() {
            return Ok((0..names.len()).collect());
        }
        let mut out = Vec::new();
        for c in &self.cfg.experiment.classes {
            let id = self
                .corpus
                .label_id(c)
                .or_else(|| c.parse::<usize>().ok().filter(|&i| i < names.len()));
            match id {
                Some(i) => out.push(i),
                None => {
                    return Err(CliError::Validation(format!(
                        "experiment.classes: unknown class {c:?}; valid names: {}",
                        names.join(", ")
                    )))
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    fn class_dir_name(&self, c: usize) -> String {
        self.corpus.label_names()[c]
            .chars()
            .map(|ch| if ch.is_alphanumeric() || "._-".contains(ch) { ch } else { '_' })
            .collect()
    }

    pub fn train_dir(&self, seed: u64) -> PathBuf {
        self.root.join("train").join(seed.to_string())
    }

    pub fn cell_dir(&self, method: UnlearnMethod, c: usize, seed: u64) -> PathBuf {
        self.root
            .join(method.as_str())
            .join(self.class_dir_name(c))
            .join(seed.to_string())
    }

    /// Fails when `train` has not been run for every configured seed.
    fn require_training(&self) -> Result<(), CliError> {
        for &seed in &self.cfg.experiment.seeds {
            let dir = self.train_dir(seed);
            if !dir.join("model.json").is_file() || !dir.join("vocab.json").is_file() {
                return Err(CliError::Validation(format!(
                    "no trained model for seed {seed} in {}; run `classunlearn train` first",
                    dir.display()
                )));
            }
        }
        Ok(())
    }

    fn require_released(&self, cells: &[Cell]) -> Result<(), CliError> {
        for cell in cells {
            let p = self.cell_dir(cell.method, cell.class, cell.seed).join("released.json");
            if !p.is_file() {
                return Err(CliError::Validation(format!(
                    "no unlearned model at {}; run `classunlearn unlearn` first",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    fn load_prepared(&self, seed: u64) -> Result<(Prepared, String), CliError> {
        let dir = self.train_dir(seed);
        let vocab = Vocabulary::load(dir.join("vocab.json"))?;
        let file = ModelFile::load(dir.join("model.json"))?;
        if file.vocab_hash != vocab.content_hash() {
            return Err(CliError::Validation(format!(
                "{}: model and vocabulary come from different runs; rerun `classunlearn train`",
                dir.display()
            )));
        }
        let prepared = experiment::restore(&self.corpus, &self.settings, seed, vocab, file.params()?)?;
        Ok((prepared, model_io::file_hash(dir.join("model.json"))?))
    }

    fn cells(&self, methods: &[UnlearnMethod]) -> Result<Vec<Cell>, CliError> {
        let classes = self.classes()?;
        let mut out = Vec::new();
        for &seed in &self.cfg.experiment.seeds {
            for &method in methods {
                for &class in &classes {
                    out.push(Cell { seed, method, class });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    seed: u64,
    method: UnlearnMethod,
    class: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub dataset_hash: String,
    pub train_model_hash: String,
    pub vocab_hash: String,
    pub model_hash: Option<String>,
    pub released_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub dataset: String,
    pub seed: u64,
    pub config_hash: String,
    pub dataset_hash: String,
    pub vocab_hash: String,
    pub model_hash: String,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub vocab_size: usize,
    pub accuracy_test: f64,
    pub accuracy_val: Option<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub loss: f64,
    pub converged: bool,
    pub train_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnLog {
    pub secs: f64,
    pub cg_iterations: Option<usize>,
    pub cg_residual: Option<f64>,
    pub cg_converged: Option<bool>,
    pub class_gradient_norm: Option<f64>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalLog {
    pub pre_accuracy_all: f64,
    pub pre_accuracy_excluding: f64,
    pub accuracy_excluding: f64,
    pub agreement: Option<f64>,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub n_retained_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaLog {
    pub shadows: usize,
    pub pre: MiaReport,
    pub unlearned: MiaReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub dataset: String,
    pub method: UnlearnMethod,
    pub class: String,
    pub class_id: usize,
    pub seed: u64,
    pub provenance: Provenance,
    pub unlearn: Option<UnlearnLog>,
    pub evaluate: Option<EvalLog>,
    pub mia: Option<MiaLog>,
    pub error: Option<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Collects per-cell results; any failure turns into one runtime error.
fn settle<T>(what: &str, results: Vec<Result<T, CliError>>) -> Result<Vec<T>, CliError> {
    let total = results.len();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failed.push(e.to_string()),
        }
    }
    if failed.is_empty() {
        Ok(ok)
    } else {
        Err(CliError::Runtime(format!(
            "{what}: {} of {total} cells failed:\n  {}",
            failed.len(),
            failed.join("\n  ")
        )))
    }
}

pub fn train(ctx: &Ctx) -> Result<(), CliError> {
    let seeds = ctx.cfg.experiment.seeds.clone();
    let results = par::map_slice(&seeds, |&seed| -> Result<TrainRecord, CliError> {
        let p = experiment::prepare(&ctx.corpus, &ctx.settings, seed)?;
        let dir = ctx.train_dir(seed);
        create_dir(&dir)?;
        let vocab_hash = p.fitted.vocab.content_hash();
        p.fitted.vocab.save(dir.join("vocab.json"))?;
        let model_hash = ModelFile::from_params(&p.fitted.model, &vocab_hash).save(dir.join("model.json"))?;
        let pre = ReleasedModel::unmasked(p.fitted.model.clone());
        let accuracy_test = metrics::accuracy(&pre.predict(&p.x_test)?, &p.y_test)?;
        let accuracy_val = if p.split.val.is_empty() {
            None
        } else {
            let x_val = p.fitted.featurize(&ctx.corpus.texts_at(&p.split.val));
            Some(metrics::accuracy(&pre.predict(&x_val)?, &ctx.corpus.labels_at(&p.split.val))?)
        };
        let rec = TrainRecord {
            dataset: ctx.name.clone(),
            seed,
            config_hash: ctx.config_hash.clone(),
            dataset_hash: ctx.dataset_hash.clone(),
            vocab_hash,
            model_hash,
            n_train: p.split.train.len(),
            n_val: p.split.val.len(),
            n_test: p.split.test.len(),
            vocab_size: p.fitted.vocab.len(),
            accuracy_test,
            accuracy_val,
            iterations: p.fitted.report.iterations,
            evaluations: p.fitted.report.evaluations,
            loss: p.fitted.report.loss,
            converged: p.fitted.report.converged,
            train_secs: p.fitted.train_secs,
        };
        write_json(&dir.join("metrics.json"), &rec)?;
        Ok(rec)
    });
    for rec in settle("train", results)? {
        println!(
            "seed {}: held-out accuracy {:.4} on {} documents ({} terms, {} iterations) -> {}",
            rec.seed,
            rec.accuracy_test,
            rec.n_test,
            rec.vocab_size,
            rec.iterations,
            ctx.train_dir(rec.seed).join("model.json").display()
        );
    }
    Ok(())
}

pub fn unlearn(ctx: &Ctx, methods: &[UnlearnMethod]) -> Result<(), CliError> {
    ctx.require_training()?;
    let cells = ctx.cells(methods)?;
    let mut results = Vec::new();
    for &seed in &ctx.cfg.experiment.seeds {
        let (prepared, train_hash) = ctx.load_prepared(seed)?;
        let vocab_hash = prepared.fitted.vocab.content_hash();
        let mine: Vec<Cell> = cells.iter().copied().filter(|c| c.seed == seed).collect();
        results.extend(par::map_slice(&mine, |cell| {
            let dir = ctx.cell_dir(cell.method, cell.class, cell.seed);
            create_dir(&dir)?;
            let mut rec = CellRecord {
                dataset: ctx.name.clone(),
                method: cell.method,
                class: ctx.corpus.label_names()[cell.class].clone(),
                class_id: cell.class,
                seed,
                provenance: Provenance {
                    config_hash: ctx.config_hash.clone(),
                    dataset_hash: ctx.dataset_hash.clone(),
                    train_model_hash: train_hash.clone(),
                    vocab_hash: vocab_hash.clone(),
                    model_hash: None,
                    released_hash: None,
                },
                unlearn: None,
                evaluate: None,
                mia: None,
                error: None,
            };
            let out = match experiment::run_method(&prepared, cell.method, cell.class, &ctx.settings) {
                Ok(out) => out,
                Err(e) => {
                    rec.error = Some(format!("unlearn: {e}"));
                    write_json(&dir.join("metrics.json"), &rec)?;
                    return Err(CliError::Runtime(format!("{}: {e}", dir.display())));
                }
            };
            let model = match (&out.downweighted, &out.retrained) {
                (Some(w), _) => ModelFile::from_params(w, &vocab_hash),
                (None, Some(g)) => ModelFile::from_retrained(g, &vocab_hash),
                (None, None) => unreachable!("every method yields a model"),
            };
            rec.provenance.model_hash = Some(model.save(dir.join("model.json"))?);
            rec.provenance.released_hash =
                Some(ModelFile::from_released(&out.released, &vocab_hash).save(dir.join("released.json"))?);
            let upd = out.update.as_ref();
            rec.unlearn = Some(UnlearnLog {
                secs: out.secs,
                cg_iterations: upd.map(|u| u.cg_iterations),
                cg_residual: upd.map(|u| u.cg_residual),
                cg_converged: upd.map(|u| u.cg_converged),
                class_gradient_norm: upd.map(|u| u.class_gradient_norm),
                warning: upd.and_then(|u| u.warning.clone()),
            });
            write_json(&dir.join("metrics.json"), &rec)?;
            Ok(rec)
        }));
    }
    for rec in settle("unlearn", results)? {
        let log = rec.unlearn.as_ref().expect("set above");
        let cg = match (log.cg_iterations, log.cg_residual) {
            (Some(it), Some(r)) => format!(", {it} CG iterations, residual {r:.2e}"),
            _ => String::new(),
        };
        println!(
            "{} {} seed {}: {:.1} ms{cg}",
            rec.method,
            rec.class,
            rec.seed,
            log.secs * 1e3
        );
        if let Some(w) = &log.warning {
            log::warn!("{} {} seed {}: {w}", rec.method, rec.class, rec.seed);
        }
    }
    Ok(())
}

fn load_released(ctx: &Ctx, cell: &Cell) -> Result<ReleasedModel, CliError> {
    Ok(ModelFile::load(ctx.cell_dir(cell.method, cell.class, cell.seed).join("released.json"))?.released()?)
}

fn load_golden(ctx: &Ctx, class: usize, seed: u64) -> Result<Option<RetrainedModel>, CliError> {
    let p = ctx.cell_dir(UnlearnMethod::Golden, class, seed).join("model.json");
    if !p.is_file() {
        return Ok(None);
    }
    Ok(Some(ModelFile::load(p)?.retrained()?))
}

fn update_record(ctx: &Ctx, cell: &Cell, f: impl FnOnce(&mut CellRecord)) -> Result<CellRecord, CliError> {
    let path = ctx.cell_dir(cell.method, cell.class, cell.seed).join("metrics.json");
    let mut rec: CellRecord = read_json(&path)?;
    f(&mut rec);
    write_json(&path, &rec)?;
    Ok(rec)
}

pub fn evaluate(ctx: &Ctx) -> Result<(), CliError> {
    ctx.require_training()?;
    let cells = ctx.cells(&ctx.cfg.experiment.methods)?;
    ctx.require_released(&cells)?;
    let mut results = Vec::new();
    for &seed in &ctx.cfg.experiment.seeds {
        let (prepared, _) = ctx.load_prepared(seed)?;
        let mine: Vec<Cell> = cells.iter().copied().filter(|c| c.seed == seed).collect();
        results.extend(par::map_slice(&mine, |cell| {
            let released = load_released(ctx, cell)?;
            let golden = load_golden(ctx, cell.class, seed)?;
            let pre = experiment::pre_metrics(&prepared, cell.class)?;
            let u = experiment::utility(&prepared, &released, golden.as_ref(), cell.class)?;
            let log = EvalLog {
                pre_accuracy_all: pre.accuracy_all,
                pre_accuracy_excluding: pre.accuracy_excluding,
                accuracy_excluding: u.accuracy_excluding,
                agreement: u.agreement,
                ks_statistic: u.ks.statistic,
                ks_p_value: u.ks.p_value,
                n_retained_test: u.ks.n_a,
            };
            update_record(ctx, cell, |r| r.evaluate = Some(log))
        }));
    }
    for rec in settle("evaluate", results)? {
        let e = rec.evaluate.as_ref().expect("set above");
        let agree = e.agreement.map_or("n/a (no golden model)".to_string(), |a| format!("{a:.4}"));
        println!(
            "{} {} seed {}: Acc_\\c {:.4} (pre {:.4}), Agree_c {agree}, KS D {:.4} p {:.3}",
            rec.method, rec.class, rec.seed, e.accuracy_excluding, e.pre_accuracy_excluding, e.ks_statistic, e.ks_p_value
        );
    }
    Ok(())
}

pub fn mia(ctx: &Ctx) -> Result<(), CliError> {
    ctx.require_training()?;
    let cells = ctx.cells(&ctx.cfg.experiment.methods)?;
    ctx.require_released(&cells)?;
    let mut results = Vec::new();
    for &seed in &ctx.cfg.experiment.seeds {
        let (prepared, _) = ctx.load_prepared(seed)?;
        let eval = experiment::eval_set(&prepared, &ctx.corpus);
        let pre_model = ReleasedModel::unmasked(prepared.fitted.model.clone());
        let pre_attacker = experiment::condition_attacker(&ctx.corpus, &prepared, Condition::Pre, &ctx.settings)?;
        info!("seed {seed}: pre-unlearning attacker trained");
        let mine: Vec<Cell> = cells.iter().copied().filter(|c| c.seed == seed).collect();
        results.extend(par::map_slice(&mine, |cell| {
            let pre = privacy::evaluate_target(
                &pre_attacker,
                &pre_model,
                &eval.x,
                &eval.labels,
                &eval.member_bits,
                cell.class,
            )?;
            let released = load_released(ctx, cell)?;
            let condition = Condition::Unlearned {
                method: cell.method,
                class: cell.class,
            };
            let (_, unlearned) =
                experiment::mia(&ctx.corpus, &prepared, &eval, condition, &released, cell.class, &ctx.settings)?;
            let log = MiaLog {
                shadows: ctx.settings.shadows,
                pre,
                unlearned,
            };
            update_record(ctx, cell, |r| r.mia = Some(log))
        }));
    }
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |a| format!("{a:.4}"));
    for rec in settle("mia", results)? {
        let m = rec.mia.as_ref().expect("set above");
        println!(
            "{} {} seed {}: AUC_c {} -> {}, AUC_ret {} -> {}",
            rec.method,
            rec.class,
            rec.seed,
            fmt(m.pre.auc_target),
            fmt(m.unlearned.auc_target),
            fmt(m.pre.auc_retained),
            fmt(m.unlearned.auc_retained)
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SweepCsvRow {
    dataset: String,
    method: UnlearnMethod,
    class: String,
    seed: u64,
    c: f64,
    tau: f64,
    sigma_star: Option<f64>,
    acc: Option<f64>,
    auc_retained: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct SweepPointRow {
    dataset: String,
    method: UnlearnMethod,
    class: String,
    seed: u64,
    c: f64,
    sigma: f64,
    auc_retained: f64,
    acc: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn sweep(ctx: &Ctx) -> Result<(), CliError> {
    let method = ctx.cfg.sweep.method;
    let classes = ctx.classes()?;
    let sc = &ctx.cfg.sweep;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for &seed in &ctx.cfg.experiment.seeds {
        for &c in &classes {
            let built = par::map_slice(&sc.c_grid, |&cv| {
                experiment::sweep_cell(&ctx.corpus, &ctx.settings, seed, method, c, cv)
            });
            let built = built.into_iter().collect::<Result<Vec<_>, _>>()?;
            let noise = experiment::noise_seeds(seed, sc.noise_seeds);
            let (r, p) = privacy::noise_sweep(&built, c, &sc.tau_grid, &sc.sigma_grid, &noise)?;
            let class = ctx.corpus.label_names()[c].clone();
            let dir = ctx.root.join("sweep").join(method.as_str()).join(ctx.class_dir_name(c)).join(seed.to_string());
            create_dir(&dir)?;
            write_json(&dir.join("sweep.json"), &serde_json::json!({ "rows": r, "points": p, "config_hash": ctx.config_hash }))?;
            for row in &r {
                println!(
                    "{class} seed {seed} C {} tau {}: sigma* {} acc {}",
                    row.c_value,
                    row.tau,
                    row.sigma_star.map_or("none".into(), |s| format!("{s:.4}")),
                    row.accuracy.map_or("n/a".into(), |a| format!("{a:.4}"))
                );
                rows.push(SweepCsvRow {
                    dataset: ctx.name.clone(),
                    method,
                    class: class.clone(),
                    seed,
                    c: row.c_value,
                    tau: row.tau,
                    sigma_star: row.sigma_star,
                    acc: row.accuracy,
                    auc_retained: row.auc_retained,
                });
            }
            points.extend(p.iter().map(|pt| SweepPointRow {
                dataset: ctx.name.clone(),
                method,
                class: class.clone(),
                seed,
                c: pt.c_value,
                sigma: pt.sigma,
                auc_retained: pt.auc_retained,
                acc: pt.accuracy,
            }));
        }
    }
    create_dir(&ctx.root)?;
    write_csv(&ctx.root.join("sweep.csv"), &rows)?;
    write_csv(&ctx.root.join("sweep_points.csv"), &points)
}

#[derive(Debug, Clone, Serialize)]
struct BenchRow {
    dataset: String,
    class: String,
    seed: u64,
    repeats: usize,
    hessian_median_s: f64,
    golden_median_s: f64,
    speedup: f64,
}

pub fn bench(ctx: &Ctx) -> Result<(), CliError> {
    ctx.require_training()?;
    let classes = ctx.classes()?;
    let repeats = ctx.cfg.bench.repeats;
    let mut rows = Vec::new();
    // timed one cell at a time so cells do not compete for cores
    for &seed in &ctx.cfg.experiment.seeds {
        let (prepared, _) = ctx.load_prepared(seed)?;
        for &c in &classes {
            let h = experiment::time_method(&prepared, UnlearnMethod::Hessian, c, &ctx.settings, repeats)?;
            let g = experiment::time_method(&prepared, UnlearnMethod::Golden, c, &ctx.settings, repeats)?;
            let row = BenchRow {
                dataset: ctx.name.clone(),
                class: ctx.corpus.label_names()[c].clone(),
                seed,
                repeats,
                hessian_median_s: h.median,
                golden_median_s: g.median,
                speedup: g.median / h.median,
            };
            println!(
                "{} seed {}: hessian {:.1} ms, golden {:.1} ms, speedup {:.2}x",
                row.class,
                seed,
                h.median * 1e3,
                g.median * 1e3,
                row.speedup
            );
            rows.push(row);
        }
    }
    let mut speedups: Vec<f64> = rows.iter().map(|r| r.speedup).collect();
    speedups.sort_by(f64::total_cmp);
    println!("median speedup {:.2}x over {} cells", speedups[speedups.len() / 2], speedups.len());
    create_dir(&ctx.root)?;
    write_csv(&ctx.root.join("bench.csv"), &rows)
}

#[derive(Debug, Clone, Serialize)]
struct ReportRow {
    dataset: String,
    method: String,
    class: String,
    seed: u64,
    acc_excl: Option<f64>,
    agree: Option<f64>,
    auc_ret: Option<f64>,
    auc_c: Option<f64>,
    ks_d: Option<f64>,
    ks_p: Option<f64>,
    unlearn_secs: Option<f64>,
    config_hash: String,
    dataset_hash: String,
    train_model_hash: String,
    released_hash: Option<String>,
    error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct SummaryRow {
    dataset: String,
    method: String,
    class: String,
    seeds: usize,
    acc_excl_mean: Option<f64>,
    acc_excl_std: Option<f64>,
    agree_mean: Option<f64>,
    agree_std: Option<f64>,
    auc_ret_mean: Option<f64>,
    auc_ret_std: Option<f64>,
    auc_c_mean: Option<f64>,
    auc_c_std: Option<f64>,
    ks_d_mean: Option<f64>,
    ks_d_std: Option<f64>,
    ks_p_mean: Option<f64>,
    ks_p_std: Option<f64>,
    unlearn_secs_mean: Option<f64>,
    unlearn_secs_std: Option<f64>,
    errors: usize,
}

#[derive(Debug, Clone, Serialize)]
struct MiaRow {
    dataset: String,
    method: String,
    class: String,
    seed: u64,
    group: &'static str,
    auc: Option<f64>,
}

fn stat(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    match experiment::mean_std(&v) {
        Some((m, s)) => (Some(m), Some(s)),
        None => (None, None),
    }
}

fn summarize(rows: &[&ReportRow]) -> SummaryRow {
    let col = |f: fn(&ReportRow) -> Option<f64>| stat(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
    let (acc_excl_mean, acc_excl_std) = col(|r| r.acc_excl);
    let (agree_mean, agree_std) = col(|r| r.agree);
    let (auc_ret_mean, auc_ret_std) = col(|r| r.auc_ret);
    let (auc_c_mean, auc_c_std) = col(|r| r.auc_c);
    let (ks_d_mean, ks_d_std) = col(|r| r.ks_d);
    let (ks_p_mean, ks_p_std) = col(|r| r.ks_p);
    let (unlearn_secs_mean, unlearn_secs_std) = col(|r| r.unlearn_secs);
    SummaryRow {
        dataset: rows[0].dataset.clone(),
        method: rows[0].method.clone(),
        class: rows[0].class.clone(),
        seeds: rows.iter().filter(|r| r.error.is_none()).count(),
        acc_excl_mean,
        acc_excl_std,
        agree_mean,
        agree_std,
        auc_ret_mean,
        auc_ret_std,
        auc_c_mean,
        auc_c_std,
        ks_d_mean,
        ks_d_std,
        ks_p_mean,
        ks_p_std,
        unlearn_secs_mean,
        unlearn_secs_std,
        errors: rows.iter().filter(|r| r.error.is_some()).count(),
    }
}

pub fn report(ctx: &Ctx) -> Result<(), CliError> {
    let cells = ctx.cells(&ctx.cfg.experiment.methods)?;
    let mut rows = Vec::new();
    let mut pre_rows = Vec::new();
    let mut mia_rows = Vec::new();
    for cell in &cells {
        let class = ctx.corpus.label_names()[cell.class].clone();
        let path = ctx.cell_dir(cell.method, cell.class, cell.seed).join("metrics.json");
        if !path.is_file() {
            rows.push(ReportRow {
                dataset: ctx.name.clone(),
                method: cell.method.to_string(),
                class,
                seed: cell.seed,
                acc_excl: None,
                agree: None,
                auc_ret: None,
                auc_c: None,
                ks_d: None,
                ks_p: None,
                unlearn_secs: None,
                config_hash: ctx.config_hash.clone(),
                dataset_hash: ctx.dataset_hash.clone(),
                train_model_hash: String::new(),
                released_hash: None,
                error: Some("missing; run `classunlearn unlearn`".into()),
            });
            continue;
        }
        let rec: CellRecord = read_json(&path)?;
        let e = rec.evaluate.as_ref();
        let m = rec.mia.as_ref();
        let mut error = rec.error.clone();
        if error.is_none() && e.is_none() {
            error = Some("not evaluated; run `classunlearn evaluate`".into());
        }
        rows.push(ReportRow {
            dataset: rec.dataset.clone(),
            method: rec.method.to_string(),
            class: rec.class.clone(),
            seed: rec.seed,
            acc_excl: e.map(|e| e.accuracy_excluding),
            agree: e.and_then(|e| e.agreement),
            auc_ret: m.and_then(|m| m.unlearned.auc_retained),
            auc_c: m.and_then(|m| m.unlearned.auc_target),
            ks_d: e.map(|e| e.ks_statistic),
            ks_p: e.map(|e| e.ks_p_value),
            unlearn_secs: rec.unlearn.as_ref().map(|u| u.secs),
            config_hash: rec.provenance.config_hash.clone(),
            dataset_hash: rec.provenance.dataset_hash.clone(),
            train_model_hash: rec.provenance.train_model_hash.clone(),
            released_hash: rec.provenance.released_hash.clone(),
            error,
        });
        // the pre-unlearning reference once per (class, seed)
        if cell.method == ctx.cfg.experiment.methods[0] {
            pre_rows.push(ReportRow {
                method: "pre".into(),
                acc_excl: e.map(|e| e.pre_accuracy_excluding),
                agree: None,
                auc_ret: m.and_then(|m| m.pre.auc_retained),
                auc_c: m.and_then(|m| m.pre.auc_target),
                ks_d: None,
                ks_p: None,
                unlearn_secs: None,
                released_hash: None,
                error: None,
                ..rows.last().expect("pushed above").clone()
            });
        }
        if let Some(m) = m {
            for (method, report) in [("pre".to_string(), &m.pre), (rec.method.to_string(), &m.unlearned)] {
                if method == "pre" && cell.method != ctx.cfg.experiment.methods[0] {
                    continue;
                }
                for (group, auc) in [("retained", report.auc_retained), ("target", report.auc_target)] {
                    mia_rows.push(MiaRow {
                        dataset: ctx.name.clone(),
                        method: method.clone(),
                        class: rec.class.clone(),
                        seed: rec.seed,
                        group,
                        auc,
                    });
                }
            }
        }
    }
    let mut all: Vec<&ReportRow> = pre_rows.iter().chain(rows.iter()).collect();
    all.sort_by(|a, b| (&a.method != "pre", &a.method, &a.class).cmp(&(&b.method != "pre", &b.method, &b.class)));
    let mut summary = Vec::new();
    for group in all.chunk_by(|a, b| a.method == b.method && a.class == b.class) {
        summary.push(summarize(group));
    }
    create_dir(&ctx.root)?;
    write_csv(&ctx.root.join("report.csv"), &rows)?;
    write_csv(&ctx.root.join("summary.csv"), &summary)?;
    write_csv(&ctx.root.join("mia.csv"), &mia_rows)?;
    let pm = |m: Option<f64>, s: Option<f64>| match (m, s) {
        (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
        _ => "n/a".into(),
    };
    println!("{:<16} {:<16} {:>5}  {:<17} {:<17} {:<17} {:<17}", "method", "class", "seeds", "Acc_\\c", "Agree_c", "AUC_ret", "AUC_c");
    for s in &summary {
        println!(
            "{:<16} {:<16} {:>5}  {:<17} {:<17} {:<17} {:<17}",
            s.method,
            s.class,
            s.seeds,
            pm(s.acc_excl_mean, s.acc_excl_std),
            pm(s.agree_mean, s.agree_std),
            pm(s.auc_ret_mean, s.auc_ret_std),
            pm(s.auc_c_mean, s.auc_c_std)
        );
    }
    println!("wrote {}", ctx.root.join("summary.csv").display());
    let missing = rows.iter().filter(|r| r.error.is_some()).count();
    if missing > 0 {
        log::warn!("{missing} of {} cells carry an error record", rows.len());
    }
    Ok(())
}
