//! The four-arm ablation: train every arm on the same data, score the clean
//! test split and compare each arm against the baseline.

use rayon::prelude::*;

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::eval::{aggregate, organ_dice, wilcoxon_signed_rank, Aggregate, Wilcoxon};
use crate::train::{train, Arm, TrainConfig, TrainOutcome};
use crate::unet::{NetConfig, UNet};

/// Per-organ dice on every sample, `[class - 1][case]`.
pub fn evaluate_dice(model: &UNet, samples: &[Sample]) -> Result<Vec<Vec<Option<f64>>>> {
    let per_case: Vec<Vec<Option<f64>>> = samples
        .par_iter()
        .map(|s| organ_dice(&model.segment(&s.image)?, &s.labels))
        .collect::<Result<_>>()?;
    let organs = model.config().num_classes - 1;
    Ok((0..organs)
        .map(|k| per_case.iter().map(|case| case[k]).collect())
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiceTable {
    /// `[class - 1][case]`, `None` where the organ is absent from both maps.
    pub scores: Vec<Vec<Option<f64>>>,
    pub per_class: Vec<Option<Aggregate>>,
    /// Over every scored (case, organ) pair.
    pub global: Option<Aggregate>,
}

impl DiceTable {
    pub fn new(scores: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let scored = |v: &[Option<f64>]| v.iter().flatten().copied().collect::<Vec<f64>>();
        let per_class = scores
            .iter()
            .map(|c| {
                let s = scored(c);
                if s.is_empty() {
                    Ok(None)
                } else {
                    aggregate(&s).map(Some)
                }
            })
            .collect::<Result<_>>()?;
        let all: Vec<f64> = scores.iter().flat_map(|c| scored(c)).collect();
        let global = if all.is_empty() { None } else { Some(aggregate(&all)?) };
        Ok(Self {
            scores,
            per_class,
            global,
        })
    }

    pub fn cases(&self) -> usize {
        self.scores.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmReport {
    pub arm: Arm,
    /// `Err` holds the failure message of an arm that did not finish.
    pub dice: std::result::Result<DiceTable, String>,
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
}

/// One arm compared against the baseline, per organ or globally.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub arm: Arm,
    /// `None` for the global comparison over all (case, organ) pairs.
    pub class: Option<u8>,
    /// `None` when no case is scored by both arms.
    pub test: Option<Wilcoxon>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub num_classes: usize,
    pub arms: Vec<ArmReport>,
    pub comparisons: Vec<Comparison>,
}

impl EvalReport {
    pub fn arm(&self, arm: Arm) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    pub fn comparison(&self, arm: Arm, class: Option<u8>) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.arm == arm && c.class == class)
    }

    pub fn failed_arms(&self) -> Vec<Arm> {
        self.arms.iter().filter(|a| a.dice.is_err()).map(|a| a.arm).collect()
    }
}

fn paired(a: &[Option<f64>], b: &[Option<f64>]) -> Vec<(f64, f64)> {
    a.iter()
        .zip(b)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .collect()
}

fn compare(arm: Arm, class: Option<u8>, pairs: &[(f64, f64)]) -> Result<Comparison> {
    let test = if pairs.is_empty() {
        None
    } else {
        Some(wilcoxon_signed_rank(pairs)?)
    };
    Ok(Comparison { arm, class, test })
}

/// Assemble the report from per-arm dice tables (or failure messages).
pub fn build_report(
    num_classes: usize,
    arms: Vec<(Arm, std::result::Result<(DiceTable, usize, usize), String>)>,
) -> Result<EvalReport> {
    let arms: Vec<ArmReport> = arms
        .into_iter()
        .map(|(arm, r)| match r {
            Ok((table, best, run)) => ArmReport {
                arm,
                dice: Ok(table),
                best_epoch: Some(best),
                epochs_run: Some(run),
            },
            Err(msg) => ArmReport {
                arm,
                dice: Err(msg),
                best_epoch: None,
                epochs_run: None,
            },
        })
        .collect();
    let mut comparisons = Vec::new();
    let baseline = arms.iter().find(|a| a.arm == Arm::Baseline).and_then(|a| a.dice.as_ref().ok());
    if let Some(base) = baseline {
        for a in arms.iter().filter(|a| a.arm != Arm::Baseline) {
            let Ok(table) = &a.dice else { continue };
            if table.scores.len() != base.scores.len() || table.cases() != base.cases() {
                return Err(Error::InvalidShape(format!("arm {} was scored on different cases", a.arm)));
            }
            let mut global = Vec::new();
            for (k, (x, y)) in table.scores.iter().zip(&base.scores).enumerate() {
                let pairs = paired(x, y);
                global.extend_from_slice(&pairs);
                comparisons.push(compare(a.arm, Some(k as u8 + 1), &pairs)?);
            }
            comparisons.push(compare(a.arm, None, &global)?);
        }
    }
    Ok(EvalReport {
        num_classes,
        arms,
        comparisons,
    })
}

#[derive(Debug)]
pub struct AblationOutcome {
    pub report: EvalReport,
    /// Finished runs in arm order; failed arms are absent here and flagged
    /// in the report.
    pub runs: Vec<(Arm, TrainOutcome)>,
    /// Failures labeled by arm.
    pub failures: Vec<Error>,
}

/// Train all four arms with the base config's seed and data order, then
/// score each on the test split.
pub fn run_ablation(dataset: &Dataset, net: NetConfig, base: &TrainConfig) -> Result<AblationOutcome> {
    let train_set = &dataset.split("train")?.samples;
    let val_set = &dataset.split("val")?.samples;
    let test_set = &dataset.split("test")?.samples;
    let results: Vec<(Arm, Result<(TrainOutcome, DiceTable)>)> = Arm::ALL
        .par_iter()
        .map(|&arm| {
            let config = TrainConfig { arm, ..base.clone() };
            let run = train(train_set, val_set, net, &config).and_then(|outcome| {
                let table = DiceTable::new(evaluate_dice(&outcome.model, test_set)?)?;
                Ok((outcome, table))
            });
            (arm, run)
        })
        .collect();

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut entries = Vec::new();
    for (arm, r) in results {
        match r {
            Ok((outcome, table)) => {
                entries.push((arm, Ok((table, outcome.best_epoch, outcome.epochs_run))));
                runs.push((arm, outcome));
            }
            Err(e) => {
                entries.push((arm, Err(e.to_string())));
                failures.push(Error::Arm {
                    arm: arm.name().to_string(),
                    source: Box::new(e),
                });
            }
        }
    }
    let report = build_report(net.num_classes, entries)?;
    Ok(AblationOutcome {
        report,
        runs,
        failures,
    })
}
