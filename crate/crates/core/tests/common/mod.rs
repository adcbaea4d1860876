#![allow(dead_code)]

pub mod oracles;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use indalign::catalog::{save_catalog, Catalog, IndicatorKind, IndicatorSpec};
use indalign::corpus::{default_criteria, save_corpus, Corpus, CorpusFiles, CriterionId, RubricRating, Submission};
use indalign::gateway::prompt_hash;

/// Design of a synthetic corpus whose indicator/criterion links are known.
#[derive(Debug, Clone)]
pub struct Planted {
    pub n_submissions: usize,
    /// One list indicator per entry: `(criterion index, slope)`.
    pub signal: Vec<(usize, f64)>,
    pub n_null_list: usize,
    pub n_binary: usize,
    pub noise_sd: f64,
    pub n_predict: usize,
    pub seed: u64,
}

impl Default for Planted {
    fn default() -> Self {
        Self {
            n_submissions: 40,
            signal: (0..6).map(|c| (c, 2.0)).collect(),
            n_null_list: 14,
            n_binary: 0,
            noise_sd: 0.3,
            n_predict: 0,
            seed: 7,
        }
    }
}

pub struct Scenario {
    pub submissions: Vec<Submission>,
    pub criteria: Vec<CriterionId>,
    pub ratings: Vec<RubricRating>,
    pub catalog: Catalog,
    /// prompt hash -> scripted completion
    pub responses: BTreeMap<String, String>,
    pub signal_ids: Vec<String>,
    pub null_ids: Vec<String>,
    pub predict_submissions: Vec<Submission>,
}

impl Scenario {
    pub fn corpus(&self) -> Corpus {
        Corpus::new(self.submissions.clone(), self.ratings.clone(), self.criteria.clone()).unwrap()
    }
}

fn list_response(rng: &mut ChaCha8Rng, count: usize) -> String {
    let items: Vec<String> = (0..count).map(|k| format!("\"item {k}\"")).collect();
    match rng.random_range(0..3) {
        0 => format!("[{}]", items.join(", ")),
        1 => format!("{{\"items\": [{}]}}", items.join(", ")),
        _ => format!("Here is the list:\n{{\"found\": [{}]}}\nThat is all.", items.join(", ")),
    }
}

impl Planted {
    pub fn build(&self) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.noise_sd).unwrap();
        let criteria = default_criteria();

        let mut specs = Vec::new();
        let mut signal_ids = Vec::new();
        let mut null_ids = Vec::new();
        for (j, (c, _)) in self.signal.iter().enumerate() {
            let id = format!("signal_{j}");
            signal_ids.push(id.clone());
            specs.push(IndicatorSpec {
                id: id.clone(),
                name: format!("Signal {j}"),
                kind: IndicatorKind::List,
                prompt_template: format!("List every feature of type {id} in this text.\nText: {{{{text}}}}"),
                intended_criterion: Some(criteria[*c].id.clone()),
                description: String::new(),
            });
        }
        for j in 0..self.n_null_list {
            let id = format!("null_{j}");
            null_ids.push(id.clone());
            specs.push(IndicatorSpec {
                id: id.clone(),
                name: format!("Null {j}"),
                kind: IndicatorKind::List,
                prompt_template: format!("List every feature of type {id} in this text.\nText: {{{{text}}}}"),
                intended_criterion: None,
                description: String::new(),
            });
        }
        for j in 0..self.n_binary {
            let id = format!("binary_{j}");
            specs.push(IndicatorSpec {
                id: id.clone(),
                name: format!("Binary {j}"),
                kind: IndicatorKind::Binary,
                prompt_template: format!("Does this text show {id}?\n{{{{text}}}}"),
                intended_criterion: None,
                description: String::new(),
            });
        }
        let catalog = Catalog::new(specs).unwrap();

        let mut responses = BTreeMap::new();
        let mut script = |subs: &[Submission], scores: &[Vec<f64>], rng: &mut ChaCha8Rng| {
            for (s, sub) in subs.iter().enumerate() {
                for spec in catalog.indicators() {
                    let text = match spec.kind {
                        IndicatorKind::List => {
                            let count = match signal_ids.iter().position(|id| *id == spec.id) {
                                Some(j) => {
                                    let (c, a) = self.signal[j];
                                    (a * scores[s][c] + noise.sample(rng)).round().max(0.0) as usize
                                }
                                None => rng.random_range(0..=6),
                            };
                            list_response(rng, count)
                        }
                        IndicatorKind::Binary => if rng.random_bool(0.5) { "YES" } else { "No." }.to_string(),
                    };
                    responses.insert(prompt_hash(&spec.render(&sub.text)), text);
                }
            }
        };

        let make_subs = |prefix: &str, n: usize| -> Vec<Submission> {
            (0..n)
                .map(|i| {
                    Submission::new(
                        format!("{prefix}{i:03}"),
                        format!("Dear host family, this is letter {prefix}{i} about my stay.\nBest wishes"),
                    )
                })
                .collect()
        };
        let submissions = make_subs("s", self.n_submissions);
        let predict_submissions = make_subs("new", self.n_predict);
        let draw_scores = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| criteria.iter().map(|_| rng.random_range(0..=4) as f64).collect())
                .collect()
        };
        let scores = draw_scores(self.n_submissions, &mut rng);
        let predict_scores = draw_scores(self.n_predict, &mut rng);
        script(&submissions, &scores, &mut rng);
        script(&predict_submissions, &predict_scores, &mut rng);

        let ratings = submissions
            .iter()
            .zip(&scores)
            .map(|(sub, row)| RubricRating {
                submission_id: sub.id.clone(),
                rater_id: "teacher".into(),
                scores: criteria.iter().map(|c| c.id.clone()).zip(row.iter().copied()).collect(),
                scale_min: 0.0,
                scale_max: 4.0,
            })
            .collect();

        Scenario {
            submissions,
            criteria,
            ratings,
            catalog,
            responses,
            signal_ids,
            null_ids,
            predict_submissions,
        }
    }
}

/// The corpus shape used by the ingest example: 11 submissions, 11 binary
/// and 52 list indicators, 10 criteria.
pub fn small_cohort() -> Scenario {
    Planted {
        n_submissions: 11,
        signal: vec![(1, 1.5), (4, 1.5), (9, 2.0)],
        n_null_list: 49,
        n_binary: 11,
        noise_sd: 0.3,
        n_predict: 3,
        seed: 11,
    }
    .build()
}

pub const CONFIG_FILE: &str = "indalign.toml";

/// Writes all inputs plus a config using the stub gateway; returns the
/// config path.
pub fn write_workspace(dir: &Path, s: &Scenario, extra_toml: &str) -> PathBuf {
    let files = CorpusFiles::new(dir.join("submissions.jsonl"))
        .with_ratings(dir.join("ratings.csv"))
        .with_criteria(dir.join("criteria.json"));
    save_corpus(&s.corpus(), &files).unwrap();
    save_catalog(&s.catalog, &dir.join("catalog.json")).unwrap();
    std::fs::write(
        dir.join("fixtures.json"),
        serde_json::to_string_pretty(&s.responses).unwrap(),
    )
    .unwrap();
    let lines: String = s
        .predict_submissions
        .iter()
        .map(|p| serde_json::to_string(p).unwrap() + "\n")
        .collect();
    std::fs::write(dir.join("predict.jsonl"), lines).unwrap();
    let config = format!(
        r#"[paths]
submissions = "submissions.jsonl"
ratings = "ratings.csv"
criteria = "criteria.json"
catalog = "catalog.json"
predict_input = "predict.jsonl"

[gateway]
kind = "stub"
stub_fixtures = "fixtures.json"
model_name = "scripted"

[model]
kind = "forest"
n_trees = 10
{extra_toml}
"#
    );
    let path = dir.join(CONFIG_FILE);
    std::fs::write(&path, config).unwrap();
    path
}

pub fn run_cli(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_indalign"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
