//! Per-fold training of the model variants, evaluation on the original test
//! epochs, provenance audit, and the declared paired comparisons.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::augment::{build_augmented_corpus, AugmentConfig, AugmentedCorpus};
use crate::baseline::{select_lambda, window_accuracy, BaselineConfig, EnvelopePair};
use crate::data::{Epoch, EpochId, EpochSet, Label, Origin, Paradigm};
use crate::eegnet::{EegNet, EegNetConfig};
use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::metrics::{balanced_accuracy, paired_permutation_test, PermutationResult, DEFAULT_DRAWS};
use super::split::{make_8fold_plan, make_loso_plan, Fold, Portions, Scheme, SplitKey, SplitPlan};
use super::train::{predict_epochs, train_model, PassRecord, TrainConfig};

/// Derived ids of the validation portion start here so they can never meet
/// the training portion's.
pub const VALIDATION_COUNTER_BASE: u64 = 1 << 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Trained on the experimental epochs of all paradigms.
    OriginalTrained,
    /// Trained on the augmented corpus of all paradigms.
    AugmentedTrained,
    /// One model per paradigm, each trained on that paradigm's augmented corpus.
    ParadigmSpecific,
    /// Envelope-reconstruction decoder, Paradigm 3 only.
    LinearBaseline,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::OriginalTrained, Variant::AugmentedTrained, Variant::ParadigmSpecific, Variant::LinearBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Variant::OriginalTrained => "original-trained",
            Variant::AugmentedTrained => "augmented-trained",
            Variant::ParadigmSpecific => "paradigm-specific",
            Variant::LinearBaseline => "linear-baseline",
        }
    }

    pub fn paradigms(self) -> &'static [Paradigm] {
        match self {
            Variant::LinearBaseline => &[Paradigm::P3],
            _ => &Paradigm::ALL,
        }
    }

    fn needs_augmentation(self) -> bool {
        matches!(self, Variant::AugmentedTrained | Variant::ParadigmSpecific)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub variants: Vec<Variant>,
    /// Run only these fold indices (all when `None`).
    pub folds: Option<Vec<usize>>,
    pub train: TrainConfig,
    pub model: EegNetConfig,
    pub augment: AugmentConfig,
    pub baseline: BaselineConfig,
    pub permutation_draws: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::EightFold,
            variants: Variant::ALL.to_vec(),
            folds: None,
            train: TrainConfig::default(),
            model: EegNetConfig::default(),
            augment: AugmentConfig::default(),
            baseline: BaselineConfig::default(),
            permutation_draws: DEFAULT_DRAWS,
        }
    }
}

/// One evaluated (fold, variant, paradigm) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub fold: usize,
    pub variant: Variant,
    pub paradigm: Paradigm,
    pub balanced_accuracy: f64,
    /// Test epochs (windows for the linear baseline).
    pub n_test: usize,
    pub best_pass: Option<usize>,
    pub best_val_bce: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub fold: usize,
    pub variant: Variant,
    /// Paradigm of a paradigm-specific model; `None` for pooled models.
    pub paradigm: Option<Paradigm>,
    pub pass: usize,
    pub train_bce: f64,
    pub val_bce: f64,
}

/// Provenance-id overlaps of one fold; all zero when nothing leaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub fold: usize,
    pub train_ids: usize,
    pub validation_ids: usize,
    pub test_ids: usize,
    pub train_validation: usize,
    pub train_test: usize,
    pub validation_test: usize,
    /// Template source epochs found outside the portion the template was built from.
    pub template_crossings: usize,
}

impl LeakageAudit {
    pub fn is_clean(&self) -> bool {
        self.train_validation == 0 && self.train_test == 0 && self.validation_test == 0 && self.template_crossings == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    /// Variant expected to score higher (one-sided alternative).
    pub a: Variant,
    pub paradigm_a: Option<Paradigm>,
    pub b: Variant,
    pub paradigm_b: Option<Paradigm>,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Folds where `a` scored strictly higher.
    pub wins: usize,
    pub test: PermutationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scheme: Scheme,
    pub master_seed: u64,
    pub folds: Vec<usize>,
    pub rows: Vec<ResultRow>,
    pub curves: Vec<CurveRow>,
    pub audits: Vec<LeakageAudit>,
    pub comparisons: Vec<Comparison>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn accuracy(&self, fold: usize, variant: Variant, paradigm: Paradigm) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.fold == fold && r.variant == variant && r.paradigm == paradigm)
            .map(|r| r.balanced_accuracy)
    }

    /// Per-fold accuracy of `variant`, on one paradigm or averaged over the
    /// variant's paradigms (`None`), in fold order.
    pub fn fold_scores(&self, variant: Variant, paradigm: Option<Paradigm>) -> Vec<f64> {
        self.folds
            .iter()
            .filter_map(|&f| match paradigm {
                Some(p) => self.accuracy(f, variant, p),
                None => {
                    let v: Vec<f64> = variant.paradigms().iter().filter_map(|&p| self.accuracy(f, variant, p)).collect();
                    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                }
            })
            .collect()
    }

    pub fn comparison(&self, name: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.name == name)
    }
}

fn lineage_of<'a>(sets: impl IntoIterator<Item = &'a EpochSet>) -> BTreeSet<EpochId> {
    sets.into_iter().flat_map(|s| s.lineage()).collect()
}

/// Counts provenance overlaps between the portions of one fold, including
/// the source epochs of every template used for simulation.
pub fn audit_leakage(
    fold: usize,
    train: &[&EpochSet],
    validation: &[&EpochSet],
    test: &EpochSet,
    train_corpus: Option<&AugmentedCorpus>,
    validation_corpus: Option<&AugmentedCorpus>,
) -> LeakageAudit {
    let tr = lineage_of(train.iter().copied());
    let va = lineage_of(validation.iter().copied());
    let te = test.lineage();
    let crossings = |corpus: Option<&AugmentedCorpus>, home: &BTreeSet<EpochId>| {
        corpus.map_or(0, |c| c.templates.values().flat_map(|t| &t.sources).filter(|id| !home.contains(id)).count())
    };
    LeakageAudit {
        fold,
        train_ids: tr.len(),
        validation_ids: va.len(),
        test_ids: te.len(),
        train_validation: tr.intersection(&va).count(),
        train_test: tr.intersection(&te).count(),
        validation_test: va.intersection(&te).count(),
        template_crossings: crossings(train_corpus, &tr) + crossings(validation_corpus, &va),
    }
}

pub fn make_plan(scheme: Scheme, original: &EpochSet, master_seed: u64) -> Result<SplitPlan> {
    match scheme {
        Scheme::EightFold => make_8fold_plan(original, &RngStream::derive(master_seed, "eval/split")?),
        Scheme::Loso => make_loso_plan(&original.subjects()),
    }
}

fn refs(set: &EpochSet) -> Vec<&Epoch> {
    set.iter().collect()
}

fn of_paradigm(set: &EpochSet, p: Paradigm) -> Vec<&Epoch> {
    set.iter().filter(|e| e.paradigm == p).collect()
}

struct FoldOutput {
    rows: Vec<ResultRow>,
    curves: Vec<CurveRow>,
    audit: LeakageAudit,
}

struct FoldContext<'a> {
    cfg: &'a ExperimentConfig,
    master_seed: u64,
    fold: &'a Fold,
    portions: Portions,
}

impl FoldContext<'_> {
    fn stream(&self, path: &str) -> Result<RngStream> {
        RngStream::derive(self.master_seed, &format!("eval/fold={}/{path}", self.fold.index))
    }

    /// Trains one model and scores it on the test epochs of `paradigms`.
    fn train_and_test(
        &self,
        variant: Variant,
        only: Option<Paradigm>,
        train: &[&Epoch],
        val: &[&Epoch],
        out: &mut FoldOutput,
    ) -> Result<()> {
        let tag = match only {
            Some(p) => format!("variant={variant}/paradigm={p}"),
            None => format!("variant={variant}"),
        };
        let mut model = EegNet::<f32>::new(self.cfg.model.clone(), &self.stream(&format!("{tag}/init"))?)?;
        let outcome = train_model(&mut model, train, val, &self.cfg.train, &self.stream(&format!("{tag}/train"))?)?;
        out.curves.extend(outcome.curve.iter().map(|r: &PassRecord| CurveRow {
            fold: self.fold.index,
            variant,
            paradigm: only,
            pass: r.pass,
            train_bce: r.train_bce,
            val_bce: r.val_bce,
        }));
        let paradigms: Vec<Paradigm> = only.map_or(Paradigm::ALL.to_vec(), |p| vec![p]);
        for p in paradigms {
            let test = of_paradigm(&self.portions.test, p);
            if test.iter().any(|e| e.origin != Origin::Experimental) {
                return Err(Error::invalid("test epochs must be experimental"));
            }
            let probs = predict_epochs(&mut model, &test, self.cfg.train.eval_batch)?;
            let labels: Vec<Label> = test.iter().map(|e| e.label).collect();
            out.rows.push(ResultRow {
                fold: self.fold.index,
                variant,
                paradigm: p,
                balanced_accuracy: balanced_accuracy(&probs, &labels)?,
                n_test: test.len(),
                best_pass: Some(outcome.best_pass),
                best_val_bce: Some(outcome.best_val_bce),
            });
        }
        Ok(())
    }

    fn run(&self, envelopes: Option<&[EnvelopePair]>, progress: &mut dyn FnMut(&str)) -> Result<FoldOutput> {
        let cfg = self.cfg;
        let fi = self.fold.index;
        let augmented = cfg.variants.iter().any(|v| v.needs_augmentation());
        let (train_corpus, val_corpus) = if augmented {
            progress(&format!("fold {fi}: augmenting"));
            let t = build_augmented_corpus(&self.portions.train, &cfg.augment, 0, &self.stream("augment/train")?)?;
            let v = build_augmented_corpus(
                &self.portions.validation,
                &cfg.augment,
                VALIDATION_COUNTER_BASE,
                &self.stream("augment/validation")?,
            )?;
            (Some(t), Some(v))
        } else {
            (None, None)
        };
        let train_sets: Vec<&EpochSet> = std::iter::once(&self.portions.train)
            .chain(train_corpus.iter().flat_map(|c| c.sets().map(|(_, s)| s)))
            .collect();
        let val_sets: Vec<&EpochSet> = std::iter::once(&self.portions.validation)
            .chain(val_corpus.iter().flat_map(|c| c.sets().map(|(_, s)| s)))
            .collect();
        let audit = audit_leakage(fi, &train_sets, &val_sets, &self.portions.test, train_corpus.as_ref(), val_corpus.as_ref());
        if !audit.is_clean() {
            return Err(Error::invalid(format!("provenance leakage in fold {fi}: {audit:?}")));
        }
        let mut out = FoldOutput { rows: Vec::new(), curves: Vec::new(), audit };
        let aug_train = train_corpus.as_ref().map(AugmentedCorpus::all).unwrap_or_default();
        let aug_val = val_corpus.as_ref().map(AugmentedCorpus::all).unwrap_or_default();
        for &variant in &cfg.variants {
            progress(&format!("fold {fi}: {variant}"));
            match variant {
                Variant::OriginalTrained => {
                    self.train_and_test(variant, None, &refs(&self.portions.train), &refs(&self.portions.validation), &mut out)?
                }
                Variant::AugmentedTrained => {
                    self.train_and_test(variant, None, &refs(&aug_train), &refs(&aug_val), &mut out)?
                }
                Variant::ParadigmSpecific => {
                    for p in Paradigm::ALL {
                        self.train_and_test(variant, Some(p), &of_paradigm(&aug_train, p), &of_paradigm(&aug_val, p), &mut out)?;
                    }
                }
                Variant::LinearBaseline => {
                    let env = envelopes.ok_or_else(|| Error::invalid("the linear baseline needs envelope windows"))?;
                    out.rows.push(self.baseline(env)?);
                }
            }
        }
        Ok(out)
    }

    fn baseline(&self, envelopes: &[EnvelopePair]) -> Result<ResultRow> {
        let key = |w: &EnvelopePair| match self.cfg.scheme {
            Scheme::EightFold => SplitKey::Trial { subject: w.subject_id, paradigm: Paradigm::P3, trial: w.trial_id },
            Scheme::Loso => SplitKey::Subject(w.subject_id),
        };
        let pick = |keys: &BTreeSet<SplitKey>| -> Vec<&EnvelopePair> { envelopes.iter().filter(|w| keys.contains(&key(w))).collect() };
        let (train, val, test) = (pick(&self.fold.train), pick(&self.fold.validation), pick(&self.fold.test));
        if train.is_empty() || val.is_empty() || test.is_empty() {
            return Err(Error::invalid(format!("fold {} has no envelope windows in some portion", self.fold.index)));
        }
        let (decoder, _) = select_lambda(&train, &val, &self.cfg.baseline)?;
        Ok(ResultRow {
            fold: self.fold.index,
            variant: Variant::LinearBaseline,
            paradigm: Paradigm::P3,
            balanced_accuracy: window_accuracy(&decoder, &test)?,
            n_test: test.len(),
            best_pass: None,
            best_val_bce: None,
        })
    }
}

/// (name, a, paradigm of a, b, paradigm of b): `a` is hypothesised to score higher.
type ComparisonSpec = (String, Variant, Option<Paradigm>, Variant, Option<Paradigm>);

/// The comparisons reported for the standard experiments, restricted to the
/// variants that were run.
pub fn declared_comparisons(variants: &[Variant]) -> Vec<ComparisonSpec> {
    use Variant::*;
    let mut v: Vec<ComparisonSpec> = Vec::new();
    let has = |x: Variant| variants.contains(&x);
    if has(AugmentedTrained) && has(OriginalTrained) {
        v.push(("augmented>original/all".into(), AugmentedTrained, None, OriginalTrained, None));
        for p in Paradigm::ALL {
            v.push((format!("augmented>original/{p}"), AugmentedTrained, Some(p), OriginalTrained, Some(p)));
        }
    }
    if has(ParadigmSpecific) && has(AugmentedTrained) {
        for p in Paradigm::ALL {
            v.push((format!("specific>independent/{p}"), ParadigmSpecific, Some(p), AugmentedTrained, Some(p)));
        }
    }
    if has(AugmentedTrained) {
        for p in [Paradigm::P1, Paradigm::P2] {
            v.push((format!("augmented/{p}>{}", Paradigm::P3), AugmentedTrained, Some(p), AugmentedTrained, Some(Paradigm::P3)));
        }
    }
    if has(ParadigmSpecific) && has(LinearBaseline) {
        v.push((format!("specific>linear/{}", Paradigm::P3), ParadigmSpecific, Some(Paradigm::P3), LinearBaseline, Some(Paradigm::P3)));
    }
    v
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Runs the declared comparisons on the fold scores of `report`.
pub fn compare(report: &ExperimentReport, draws: usize, master_seed: u64) -> Result<Vec<Comparison>> {
    let variants: BTreeSet<Variant> = report.rows.iter().map(|r| r.variant).collect();
    let variants: Vec<Variant> = variants.into_iter().collect();
    let mut out = Vec::new();
    for (name, a, pa, b, pb) in declared_comparisons(&variants) {
        let (sa, sb) = (report.fold_scores(a, pa), report.fold_scores(b, pb));
        if sa.len() != sb.len() || sa.len() < 2 {
            continue;
        }
        let mut rng = RngStream::derive(master_seed, &format!("eval/compare/{name}"))?;
        let test = paired_permutation_test(&sa, &sb, draws, &mut rng)?;
        out.push(Comparison {
            name,
            a,
            paradigm_a: pa,
            b,
            paradigm_b: pb,
            mean_a: mean(&sa),
            mean_b: mean(&sb),
            wins: sa.iter().zip(&sb).filter(|(x, y)| x > y).count(),
            test,
        });
    }
    Ok(out)
}

/// Trains and tests every configured variant on every selected fold of the
/// plan built from the experimental epochs of `original`. Splitting happens
/// before augmentation; training and validation portions are augmented
/// separately; test epochs are never augmented. Folds run in order and each
/// derives its streams from `eval/fold=F/...`, so results do not depend on
/// thread count.
pub fn run_experiment(
    original: &EpochSet,
    envelopes: Option<&[EnvelopePair]>,
    cfg: &ExperimentConfig,
    master_seed: u64,
    progress: &mut dyn FnMut(&str),
) -> Result<ExperimentReport> {
    cfg.train.validate()?;
    cfg.model.validate()?;
    if cfg.variants.is_empty() {
        return Err(Error::invalid("no variants to run"));
    }
    let original = original.filter(|e| e.origin == Origin::Experimental);
    let plan = make_plan(cfg.scheme, &original, master_seed)?;
    let selected: Vec<usize> = match &cfg.folds {
        Some(f) => {
            if let Some(bad) = f.iter().find(|&&i| i >= plan.folds.len()) {
                return Err(Error::invalid(format!("fold {bad} outside 0..{}", plan.folds.len())));
            }
            f.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
        }
        None => (0..plan.folds.len()).collect(),
    };
    let mut report = ExperimentReport {
        scheme: cfg.scheme,
        master_seed,
        folds: selected.clone(),
        rows: Vec::new(),
        curves: Vec::new(),
        audits: Vec::new(),
        comparisons: Vec::new(),
        notes: Vec::new(),
    };
    for &fi in &selected {
        let fold = &plan.folds[fi];
        let ctx = FoldContext { cfg, master_seed, fold, portions: fold.partition(cfg.scheme, &original) };
        let out = ctx.run(envelopes, progress)?;
        report.rows.extend(out.rows);
        report.curves.extend(out.curves);
        report.audits.push(out.audit);
    }
    report.comparisons = compare(&report, cfg.permutation_draws, master_seed)?;
    let mut probe = EegNet::<f32>::new(cfg.model.clone(), &RngStream::derive(master_seed, "eval/probe")?)?;
    report.notes.push(format!(
        "model parameters: {} trainable, {} including batch-norm running statistics \
         (published figure: about {}; the declared layer shapes do not account for the difference)",
        probe.param_count(crate::eegnet::ParamConvention::TrainableOnly),
        probe.param_count(crate::eegnet::ParamConvention::WithBuffers),
        crate::eegnet::PUBLISHED_PARAM_COUNT
    ));
    let counts: BTreeMap<Variant, usize> = report.rows.iter().fold(BTreeMap::new(), |mut m, r| {
        *m.entry(r.variant).or_insert(0) += 1;
        m
    });
    report.notes.push(format!(
        "{} scheme, {} of {} folds, cells per variant: {}",
        cfg.scheme,
        selected.len(),
        plan.folds.len(),
        counts.iter().map(|(v, n)| format!("{v}={n}")).collect::<Vec<_>>().join(", ")
    ));
    Ok(report)
}
