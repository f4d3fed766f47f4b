use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{linear_baseline, observability_sweep, summarize, AttackConfig, EvalError, ReportRow, SweepOptions};
use crate::dataset::Dataset;
use crate::gnn::Model;
use crate::sim::TieClosure;

/// The five case studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Study {
    /// Observability sweep against the linear baseline.
    A,
    /// DER penetration scenarios.
    B,
    /// Closed inter-feeder ties.
    C,
    /// Zero-shot vs fine-tuned on unseen substations.
    D,
    /// False-data injection.
    E,
}

impl Study {
    pub const ALL: [Study; 5] = [Study::A, Study::B, Study::C, Study::D, Study::E];

    pub fn letter(self) -> char {
        match self {
            Study::A => 'A',
            Study::B => 'B',
            Study::C => 'C',
            Study::D => 'D',
            Study::E => 'E',
        }
    }
}

impl FromStr for Study {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Study::A),
            "B" => Ok(Study::B),
            "C" => Ok(Study::C),
            "D" => Ok(Study::D),
            "E" => Ok(Study::E),
            _ => Err(EvalError::Config(format!("unknown study `{s}` (expected A-E)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub sweep: SweepOptions,
    /// PV penetrations re-simulated in study B.
    pub der_levels: Vec<u32>,
    pub attack: AttackConfig,
    /// Root seed for baseline masks.
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            sweep: SweepOptions::default(),
            der_levels: vec![0, 20, 30, 40],
            attack: AttackConfig::default(),
            seed: 0,
        }
    }
}

/// Models and data a study may draw on.
#[derive(Debug, Clone, Copy)]
pub struct StudyInputs<'a> {
    pub model: &'a Model,
    pub test: &'a [Dataset],
    /// Training data for the baseline (A).
    pub train: Option<&'a Dataset>,
    /// Fine-tuned model (D).
    pub finetuned: Option<&'a Model>,
    /// Model trained without the physics term (E).
    pub ablation: Option<&'a Model>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub study: Study,
    pub rows: Vec<ReportRow>,
    pub notes: Vec<String>,
}

fn resimulate(data: &Dataset, edit: impl FnOnce(&mut crate::sim::SimScenario)) -> Result<Dataset, EvalError> {
    let mut scenario = data.scenario.clone();
    edit(&mut scenario);
    Ok(Dataset::simulate(data.spec.clone(), scenario)?)
}

pub fn run_study(study: Study, inputs: &StudyInputs<'_>, cfg: &StudyConfig) -> Result<StudyReport, EvalError> {
    run(study, inputs, cfg).map_err(|e| EvalError::Study {
        study: study.letter(),
        source: Box::new(e),
    })
}

fn run(study: Study, inputs: &StudyInputs<'_>, cfg: &StudyConfig) -> Result<StudyReport, EvalError> {
    let test: Vec<&Dataset> = inputs.test.iter().collect();
    if test.is_empty() {
        return Err(EvalError::Empty("test datasets".into()));
    }
    let opts = &cfg.sweep;
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    match study {
        Study::A => {
            rows.extend(observability_sweep(inputs.model, &test, opts, "base", "gnn")?);
            match inputs.train {
                Some(train) => {
                    let lr = linear_baseline(train, &test, opts, "base", cfg.seed)?;
                    for (p, v) in &lr.choice {
                        notes.push(format!("lr variant at {p}%: {v}"));
                    }
                    if lr.fallback {
                        notes.push("lr ridge fallback used".into());
                    }
                    rows.extend(lr.rows);
                }
                None => notes.push("no training data given; baseline skipped".into()),
            }
        }
        Study::B => {
            for &der in &cfg.der_levels {
                let sims = test
                    .iter()
                    .map(|d| resimulate(d, |s| s.der_penetration = der))
                    .collect::<Result<Vec<_>, _>>()?;
                let refs: Vec<&Dataset> = sims.iter().collect();
                rows.extend(observability_sweep(inputs.model, &refs, opts, &format!("der{der}"), "gnn")?);
            }
        }
        Study::C => {
            rows.extend(observability_sweep(inputs.model, &test, opts, "ties_open", "gnn")?);
            let mut sims = Vec::new();
            for d in &test {
                let ties: Vec<usize> = d.spec.tie_switches.iter().filter(|t| t.normally_open).map(|t| t.id).collect();
                if ties.is_empty() {
                    notes.push(format!("{} has no normally open ties", d.name()));
                    continue;
                }
                notes.push(format!("{}: closed ties {ties:?}", d.name()));
                let start = d.scenario.start_step;
                sims.push(resimulate(d, |s| {
                    s.tie_closures = ties.iter().map(|&tie| TieClosure { tie, at_step: start }).collect();
                })?);
            }
            let refs: Vec<&Dataset> = sims.iter().collect();
            if !refs.is_empty() {
                rows.extend(observability_sweep(inputs.model, &refs, opts, "ties_closed", "gnn")?);
            }
        }
        Study::D => {
            let tuned = inputs
                .finetuned
                .ok_or_else(|| EvalError::Config("study D needs a fine-tuned checkpoint".into()))?;
            rows.extend(observability_sweep(inputs.model, &test, opts, "transfer", "zero_shot")?);
            rows.extend(observability_sweep(tuned, &test, opts, "transfer", "fine_tuned")?);
        }
        Study::E => {
            let attacked = SweepOptions {
                attack: Some(cfg.attack),
                ..opts.clone()
            };
            let mut models = vec![("physics", inputs.model)];
            match inputs.ablation {
                Some(m) => models.push(("no_physics", m)),
                None => notes.push("no ablation checkpoint given".into()),
            }
            for (label, m) in models {
                rows.extend(observability_sweep(m, &test, opts, "clean", label)?);
                rows.extend(observability_sweep(m, &test, &attacked, "attack", label)?);
            }
        }
    }
    Ok(StudyReport { study, rows, notes })
}

impl StudyReport {
    /// Fixed-width text table of seed-mean RMSE; for study E also the
    /// attack-induced degradation per model.
    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "study {}", self.study.letter());
        let _ = writeln!(
            out,
            "{:<12} {:<14} {:<12} {:>5} {:>12} {:>12} {:>12}",
            "scenario", "substation", "model", "p_obs", "rmse_mean", "rmse_std", "mae_mean"
        );
        let summary = summarize(&self.rows);
        for r in &summary {
            let _ = writeln!(
                out,
                "{:<12} {:<14} {:<12} {:>5} {:>12.6e} {:>12.6e} {:>12.6e}",
                r.scenario, r.substation, r.model, r.p_obs, r.rmse_mean, r.rmse_std, r.mae_mean
            );
        }
        if self.study == Study::E {
            let _ = writeln!(out, "\ndegradation (attack - clean)");
            for clean in summary.iter().filter(|r| r.scenario == "clean") {
                if let Some(att) = summary
                    .iter()
                    .find(|r| r.scenario == "attack" && r.model == clean.model && r.substation == clean.substation && r.p_obs == clean.p_obs)
                {
                    let _ = writeln!(
                        out,
                        "{:<14} {:<12} {:>5} {:>+12.6e}",
                        clean.substation,
                        clean.model,
                        clean.p_obs,
                        att.rmse_mean - clean.rmse_mean
                    );
                }
            }
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, EvalError> {
        fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
        let csv_path = dir.join(format!("study_{}.csv", self.study.letter()));
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| EvalError::Csv(e.to_string()))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| EvalError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| EvalError::io(&csv_path, e))?;
        let txt_path = dir.join(format!("summary_{}.txt", self.study.letter()));
        fs::write(&txt_path, self.summary_text()).map_err(|e| EvalError::io(&txt_path, e))?;
        Ok(vec![csv_path, txt_path])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::ModelConfig;
    use crate::sim::{generate_substation, SimScenario, SizeClass};

    fn small() -> (Model, Dataset) {
        let spec = generate_substation(12, SizeClass::Tiny, 2).unwrap();
        let data = Dataset::simulate(spec, SimScenario::new(2, 20, 8 * 15)).unwrap();
        let model = Model::new(
            ModelConfig {
                hidden: 8,
                decoder_hidden: 8,
                layers: 2,
                ..ModelConfig::default()
            },
            1,
        );
        (model, data)
    }

    fn cfg() -> StudyConfig {
        StudyConfig {
            sweep: SweepOptions {
                levels: vec![50, 5],
                seeds: vec![0],
                max_snapshots: 2,
                attack: None,
            },
            der_levels: vec![0, 30],
            ..StudyConfig::default()
        }
    }

    #[test]
    fn study_letters_parse() {
        assert_eq!("c".parse::<Study>().unwrap(), Study::C);
        assert!("F".parse::<Study>().is_err());
    }

    #[test]
    fn study_c_closes_ties() {
        let (model, data) = small();
        let test = [data];
        let inputs = StudyInputs {
            model: &model,
            test: &test,
            train: None,
            finetuned: None,
            ablation: None,
        };
        let rep = run_study(Study::C, &inputs, &cfg()).unwrap();
        assert!(rep.rows.iter().any(|r| r.scenario == "ties_closed"));
        assert!(rep.rows.iter().any(|r| r.scenario == "ties_open"));
    }

    #[test]
    fn study_d_requires_finetuned_model() {
        let (model, data) = small();
        let test = [data];
        let inputs = StudyInputs {
            model: &model,
            test: &test,
            train: None,
            finetuned: None,
            ablation: None,
        };
        assert!(matches!(run_study(Study::D, &inputs, &cfg()), Err(EvalError::Study { study: 'D', .. })));
    }

    #[test]
    fn study_e_is_deterministic_and_reports_degradation() {
        let (model, data) = small();
        let test = [data];
        let ablation = Model::new(model.config.clone(), 2);
        let inputs = StudyInputs {
            model: &model,
            test: &test,
            train: None,
            finetuned: None,
            ablation: Some(&ablation),
        };
        let a = run_study(Study::E, &inputs, &cfg()).unwrap();
        let b = run_study(Study::E, &inputs, &cfg()).unwrap();
        assert_eq!(a, b);
        let text = a.summary_text();
        assert!(text.contains("degradation") && text.contains("no_physics"));
        let dir = tempfile::tempdir().unwrap();
        let files = a.write(dir.path()).unwrap();
        assert_eq!(files.len(), 2);
    }
}
