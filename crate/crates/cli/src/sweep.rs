use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use slotunc::evaluation::seed_sweep_ttest;
use slotunc::extraction::NpRelationSet;
use slotunc::pipeline::Pipeline;
use slotunc::tagger::Model;
use slotunc::uncertainty::select_threshold;
use slotunc::Result;

use crate::eval::{evaluate, theta_text, EvalMode};
use crate::train::{load_data, train_run};
use crate::{write_json, SweepConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub pipeline: String,
    pub mode: EvalMode,
    pub lambda_cal: f64,
    /// One F1 per seed, in seed order.
    pub f1: Vec<f64>,
    pub theta: Vec<String>,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub a: String,
    pub b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `mean_a - mean_b`.
    pub mean_diff: f64,
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
    /// Why the test is undefined, when it is.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantResult>,
    pub comparisons: Vec<ComparisonResult>,
}

impl SweepReport {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds={}", seeds.join(","));
        for v in &self.variants {
            let p = format!("variant.{}", v.name);
            let _ = writeln!(s, "{p}.pipeline={}", v.pipeline);
            let _ = writeln!(s, "{p}.mode={}", v.mode);
            let _ = writeln!(s, "{p}.lambda_cal={}", v.lambda_cal);
            for ((seed, f1), th) in self.seeds.iter().zip(&v.f1).zip(&v.theta) {
                let _ = writeln!(s, "{p}.seed.{seed}.f1={:.4}", 100.0 * f1);
                let _ = writeln!(s, "{p}.seed.{seed}.theta={th}");
            }
            let _ = writeln!(s, "{p}.mean_f1={:.4}", 100.0 * v.mean_f1);
        }
        for c in &self.comparisons {
            let p = format!("compare.{}.vs.{}", c.a, c.b);
            let _ = writeln!(s, "{p}.mean_diff={:.4}", 100.0 * c.mean_diff);
            let opt = |x: Option<f64>| x.map_or("undefined".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(s, "{p}.t={}", opt(c.t));
            let _ = writeln!(s, "{p}.df={}", opt(c.df));
            let _ = writeln!(s, "{p}.p={}", opt(c.p));
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("F1 per seed (percent)\n");
        let _ = write!(s, "{:<24}", "variant");
        for seed in &self.seeds {
            let _ = write!(s, " {:>7}", format!("s{seed}"));
        }
        let _ = writeln!(s, " {:>7}", "mean");
        for v in &self.variants {
            let _ = write!(s, "{:<24}", v.name);
            for f in &v.f1 {
                let _ = write!(s, " {:>7.2}", 100.0 * f);
            }
            let _ = writeln!(s, " {:>7.2}", 100.0 * v.mean_f1);
        }
        let _ = writeln!(s, "\nWelch t-tests (a - b)");
        for c in &self.comparisons {
            match (c.t, c.p) {
                (Some(t), Some(p)) => {
                    let _ = writeln!(s, "{} vs {}: diff {:+.2}, t {:.3}, p {:.4}", c.a, c.b, 100.0 * c.mean_diff, t, p);
                }
                _ => {
                    let note = c.note.as_deref().unwrap_or("undefined");
                    let _ = writeln!(s, "{} vs {}: diff {:+.2}, {note}", c.a, c.b, 100.0 * c.mean_diff);
                }
            }
        }
        s
    }
}

fn lambda_dir(l: f64) -> String {
    format!("lambda-{l}")
}

/// Trains and evaluates every variant once per seed, then t-tests the
/// requested pairs. Each seed's checkpoints go to `seed-<n>/lambda-<λ>/`.
pub fn cmd_sweep(config: &SweepConfig, data_dir: &Path, out_dir: &Path) -> Result<SweepReport> {
    config.validate()?;
    let relations = NpRelationSet::new(config.relations.iter().cloned())?;
    let (data, hashes) = load_data(data_dir)?;
    let seeds: Vec<u64> = (0..config.n_seeds as u64).map(|i| config.base_seed + i).collect();
    let mut f1 = vec![Vec::new(); config.variants.len()];
    let mut thetas = vec![Vec::new(); config.variants.len()];

    for &seed in &seeds {
        let mut models: Vec<(f64, Model)> = Vec::new();
        for v in &config.variants {
            if models.iter().all(|(l, _)| *l != v.lambda_cal) {
                let mut run = config.run.clone();
                run.train.seed = seed;
                run.train.lambda_cal = v.lambda_cal;
                let dir = out_dir.join(format!("seed-{seed}")).join(lambda_dir(v.lambda_cal));
                let (outcome, _) = train_run(&data, hashes.clone(), &run, &dir)?;
                models.push((v.lambda_cal, outcome.best));
            }
        }
        let mut tuned: BTreeMap<(u64, String), f64> = BTreeMap::new();
        for (i, v) in config.variants.iter().enumerate() {
            let model = &models.iter().find(|(l, _)| *l == v.lambda_cal).expect("trained above").1;
            let mut pipeline = match &v.metric {
                None => Pipeline::identity(),
                Some(m) => {
                    let mut m = m.clone();
                    m.seed = seed;
                    let theta = if m.kind.is_score_based() {
                        let key = (v.lambda_cal.to_bits(), serde_json::to_string(&m)?);
                        match tuned.get(&key) {
                            Some(&t) => t,
                            None => {
                                let t = select_threshold(model, &data.dev, &m)?.theta;
                                tuned.insert(key, t);
                                t
                            }
                        }
                    } else {
                        f64::INFINITY
                    };
                    Pipeline::new(m, theta)
                }
            };
            pipeline.with_syntax = v.with_syntax;
            pipeline.with_oov = v.with_oov;
            pipeline.relations = relations.clone();
            let test = match v.mode {
                EvalMode::Ind => &data.test_ind,
                EvalMode::Ood => &data.test_ood,
            };
            f1[i].push(evaluate(model, &pipeline, test, v.mode)?.f1());
            thetas[i].push(theta_text(pipeline.theta));
        }
    }

    let variants: Vec<VariantResult> = config
        .variants
        .iter()
        .zip(f1)
        .zip(thetas)
        .map(|((v, f1), theta)| {
            let mut p = match &v.metric {
                None => Pipeline::identity(),
                Some(m) => Pipeline::new(m.clone(), 0.0),
            };
            p.with_syntax = v.with_syntax;
            p.with_oov = v.with_oov;
            let label = if v.metric.is_none() { "tagger".to_string() } else { p.label() };
            VariantResult {
                name: v.name.clone(),
                pipeline: label,
                mode: v.mode,
                lambda_cal: v.lambda_cal,
                mean_f1: f1.iter().sum::<f64>() / f1.len() as f64,
                f1,
                theta,
            }
        })
        .collect();
    let find = |n: &str| variants.iter().find(|v| v.name == n).expect("validated");
    let comparisons = config
        .pairs()
        .into_iter()
        .map(|(a, b)| {
            let (va, vb) = (find(&a), find(&b));
            let mut c = ComparisonResult {
                mean_a: va.mean_f1,
                mean_b: vb.mean_f1,
                mean_diff: va.mean_f1 - vb.mean_f1,
                a,
                b,
                t: None,
                df: None,
                p: None,
                note: None,
            };
            match seed_sweep_ttest(&va.f1, &vb.f1) {
                Ok(t) => {
                    c.t = Some(t.t);
                    c.df = Some(t.df);
                    c.p = Some(t.p);
                }
                Err(e) => c.note = Some(e.to_string()),
            }
            c
        })
        .collect();
    let report = SweepReport { seeds, variants, comparisons };
    fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("sweep.json"), &report)?;
    fs::write(out_dir.join("sweep.kv"), report.to_kv())?;
    fs::write(out_dir.join("sweep.txt"), report.to_table())?;
    Ok(report)
}
