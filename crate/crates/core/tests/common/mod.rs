//! Fixtures and the finite-difference harness shared by the integration tests.
#![allow(dead_code)]

pub mod gradients;
pub mod invariants;
pub mod oracles;

use coldwarm::config::{DataSource, RunConfig};
use coldwarm::data::synthetic::SyntheticSpec;
use coldwarm::data::Dataset;
use coldwarm::model::inputs::{BiasFieldSpec, BiasSource, FieldSpec};
use coldwarm::model::{
    named_params_mut, BaselineConfig, BaselineTwoTower, ColdWarmModel, FeatureSchema, ItemFeatures,
    ModelConfig, Module, UserFeatures, UserGroup,
};
use coldwarm::pipeline::prepare_dataset;
use coldwarm::tensor::{seeded_rng, Rng, Tensor};
use rand::Rng as _;

/// Step of the central differences.
pub const FD_STEP: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Outcome of comparing one analytic gradient with finite differences.
#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates where the step-`h` and step-`h/2` estimates disagree: a
    /// non-differentiable point lies within the stencil.
    pub kinks: usize,
    pub max_rel: f64,
    pub worst: String,
}

impl GradReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel < FD_TOLERANCE && self.kinks * 20 <= self.checked
    }

    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.kinks += other.kinks;
        if other.max_rel > self.max_rel {
            self.max_rel = other.max_rel;
            self.worst = other.worst;
        }
    }

    /// Compares `analytic[i]` against the central difference of `loss`,
    /// where `loss(i, delta)` evaluates with coordinate `i` shifted by `delta`.
    pub fn compare(&mut self, label: &str, analytic: &[f64], mut loss: impl FnMut(usize, f64) -> f64) {
        for (i, &a) in analytic.iter().enumerate() {
            let h = FD_STEP;
            let coarse = (loss(i, h) - loss(i, -h)) / (2.0 * h);
            let fine = (loss(i, h / 2.0) - loss(i, -h / 2.0)) / h;
            if (coarse - fine).abs() > 1e-6 * coarse.abs().max(1.0) {
                self.kinks += 1;
                continue;
            }
            // Richardson extrapolation cancels the h² term.
            let numeric = (4.0 * fine - coarse) / 3.0;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            self.checked += 1;
            if rel > self.max_rel {
                self.max_rel = rel;
                self.worst = format!("{label}[{i}]: analytic {a:.6e} vs numeric {numeric:.6e}");
            }
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{:<28} checked {:>6}  kinks {:>3}  max rel {:.2e}{}",
            self.name,
            self.checked,
            self.kinks,
            self.max_rel,
            if self.passed() { String::new() } else { format!("  <- {}", self.worst) }
        )
    }
}

pub fn uniform_vec(n: usize, bound: f64, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

pub fn uniform_tensor(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_vec(rows, cols, uniform_vec(rows * cols, bound, rng)).unwrap()
}

pub const TINY_ITEMS: usize = 12;
pub const TINY_STATES: usize = 11;
pub const TINY_GENRES: usize = 5;

/// Two categorical profile fields, one multi-valued item field, and a bias
/// net over one profile field plus the activity state.
pub fn tiny_schema() -> FeatureSchema {
    FeatureSchema {
        user_fields: vec![
            FieldSpec {
                name: "gender".into(),
                cardinality: 3,
            },
            FieldSpec {
                name: "age".into(),
                cardinality: 4,
            },
        ],
        item_fields: vec![FieldSpec {
            name: "genres".into(),
            cardinality: TINY_GENRES,
        }],
        item_rows: TINY_ITEMS,
        state_cardinality: TINY_STATES,
        bias_fields: vec![
            BiasFieldSpec {
                name: "age".into(),
                cardinality: 4,
                source: BiasSource::Profile { field: 1 },
            },
            BiasFieldSpec {
                name: "activity".into(),
                cardinality: TINY_STATES,
                source: BiasSource::Activity,
            },
        ],
    }
}

pub fn tiny_config(d: usize, bias_net: bool) -> ModelConfig {
    ModelConfig {
        d,
        bias_net,
        ..ModelConfig::default()
    }
}

/// Tiny model with every parameter, including the zero-initialised output
/// layers, redrawn uniformly so that no gradient path is trivially zero.
pub fn tiny_model(d: usize, m: usize, bias_net: bool, seed: u64) -> ColdWarmModel {
    let mut rng = seeded_rng(seed);
    let groups = uniform_tensor(m, d, 1.0, &mut rng);
    let mut model = ColdWarmModel::new(tiny_config(d, bias_net), tiny_schema(), groups, &mut rng).unwrap();
    randomize(&mut model, 0.8, &mut rng);
    model
}

pub fn tiny_baseline(d: usize, seed: u64) -> BaselineTwoTower {
    let mut rng = seeded_rng(seed);
    let mut model = BaselineTwoTower::new(BaselineConfig { d, tau: 5.0 }, tiny_schema(), &mut rng).unwrap();
    randomize(&mut model, 0.8, &mut rng);
    model
}

pub fn randomize<M: Module>(model: &mut M, bound: f64, rng: &mut Rng) {
    for (_, p) in named_params_mut(model) {
        for v in p.value.as_mut_slice() {
            *v = rng.random_range(-bound..=bound);
        }
    }
}

pub fn random_user(rng: &mut Rng, max_history: usize) -> UserFeatures {
    let age = rng.random_range(0..4);
    let state = rng.random_range(0..TINY_STATES as u32);
    let len = rng.random_range(0..=max_history);
    UserFeatures {
        profile: vec![rng.random_range(0..3), age],
        history: (0..len).map(|_| rng.random_range(1..TINY_ITEMS as u32)).collect(),
        state,
        bias: vec![age, state],
    }
}

pub fn random_item(rng: &mut Rng) -> ItemFeatures {
    let genres = rng.random_range(0..=3);
    ItemFeatures {
        item: rng.random_range(1..TINY_ITEMS as u32),
        fields: vec![(0..genres).map(|_| rng.random_range(0..TINY_GENRES as u32)).collect()],
    }
}

/// Owned users and items; [`Batch::groups`] borrows them into the shape the
/// models consume (the first item of each group is the positive).
pub struct Batch {
    pub users: Vec<UserFeatures>,
    pub items: Vec<Vec<(ItemFeatures, f64)>>,
}

impl Batch {
    pub fn random(users: usize, items_per_user: usize, rng: &mut Rng) -> Self {
        let u: Vec<UserFeatures> = (0..users).map(|_| random_user(rng, 6)).collect();
        let items = (0..users)
            .map(|_| {
                (0..items_per_user)
                    .map(|k| (random_item(rng), if k == 0 { 1.0 } else { 0.0 }))
                    .collect()
            })
            .collect();
        Self { users: u, items }
    }

    pub fn groups(&self) -> Vec<UserGroup<'_>> {
        self.users
            .iter()
            .zip(&self.items)
            .enumerate()
            .map(|(id, (user, items))| UserGroup {
                id,
                user: user.clone(),
                items: items.iter().map(|(i, l)| (i, *l)).collect(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.items.iter().map(Vec::len).sum()
    }
}

/// Parameter gradients by name.
pub fn grads<M: Module>(model: &mut M) -> Vec<(String, Tensor)> {
    named_params_mut(model)
        .into_iter()
        .map(|(n, p)| (n, p.grad.clone()))
        .collect()
}

pub fn zero_grads<M: Module>(model: &mut M) {
    for (_, p) in named_params_mut(model) {
        p.zero_grad();
    }
}

/// Checks every parameter coordinate of `model` against `grads`, with
/// `loss` re-evaluating the objective from parameter values only.
pub fn check_module<M: Module + Clone>(
    name: &str,
    model: &M,
    grads: &[(String, Tensor)],
    loss: impl Fn(&M) -> f64,
) -> GradReport {
    let mut report = GradReport::new(name);
    let mut work = model.clone();
    for (pi, (pname, g)) in grads.iter().enumerate() {
        report.compare(pname, g.as_slice(), |i, delta| {
            let original = {
                let mut params = named_params_mut(&mut work);
                let v = &mut params[pi].1.value.as_mut_slice()[i];
                let o = *v;
                *v = o + delta;
                o
            };
            let l = loss(&work);
            named_params_mut(&mut work)[pi].1.value.as_mut_slice()[i] = original;
            l
        });
    }
    report
}

pub fn synthetic_config(users: usize, items: usize, seed: u64) -> RunConfig {
    RunConfig {
        data: DataSource::synthetic(&SyntheticSpec {
            users,
            items,
            groups: 4,
            min_interactions: 1,
            max_interactions: 40,
            affinity: 0.8,
        }),
        seed,
        d: 8,
        m: 4,
        batch_size: 64,
        epochs: 2,
        pretrain_epochs: 2,
        ..RunConfig::default()
    }
}

pub fn synthetic_dataset(users: usize, items: usize, seed: u64) -> (RunConfig, Dataset) {
    let cfg = synthetic_config(users, items, seed);
    let ds = prepare_dataset(&cfg).unwrap();
    (cfg, ds)
}

/// Prints the per-check lines and panics listing the failures.
pub fn assert_reports(reports: &[GradReport]) {
    for r in reports {
        println!("{}", r.line());
    }
    let failed: Vec<String> = reports.iter().filter(|r| !r.passed()).map(GradReport::line).collect();
    assert!(failed.is_empty(), "gradient checks failed:\n{}", failed.join("\n"));
}
