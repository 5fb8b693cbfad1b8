//! Exact structural invariants of the model, the selector, retrieval and
//! persistence. Each check returns `Ok(detail)` or `Err(reason)`.

use coldwarm::checkpoint::{parameter_snapshot, Checkpoint};
use coldwarm::eval::retrieve_top_k;
use coldwarm::model::coldwarm::in_group;
use coldwarm::model::{
    dkd_per_sample, named_params, ColdWarmModel, ObjectiveConfig, Trainable, COLD_EXPERT_PREFIXES,
    WARM_EXPERT_PREFIXES,
};
use coldwarm::tensor::{bce_loss, seeded_rng, Adam, AdamConfig, Tensor};
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{grads, random_item, random_user, tiny_model, Batch};

pub type Outcome = Result<String, String>;

fn bits(t: &Tensor) -> Vec<u64> {
    t.as_slice().iter().map(|v| v.to_bits()).collect()
}

pub fn gate_convexity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut passes = 0;
    for seed in 0..20 {
        let model = tiny_model(4, 2, true, 700 + seed);
        let mut rng = seeded_rng(800 + seed);
        for _ in 0..50 {
            let t = model.forward_user(&random_user(&mut rng, 8)).map_err(|e| e.to_string())?;
            if !(0.0..=1.0).contains(&t.w_cold) || !(0.0..=1.0).contains(&t.w_warm) {
                return Err(format!("gate weights ({}, {}) leave [0, 1]", t.w_cold, t.w_warm));
            }
            worst = worst.max((t.w_cold + t.w_warm - 1.0).abs());
            for ((u, c), w) in t.e_u.as_slice().iter().zip(t.e_cold().as_slice()).zip(t.e_warm().as_slice()) {
                worst = worst.max((u - (t.w_cold * c + t.w_warm * w)).abs());
            }
            passes += 1;
        }
    }
    if worst < 1e-9 {
        Ok(format!("{passes} forward passes, max deviation {worst:.1e}"))
    } else {
        Err(format!("max deviation {worst:.3e}"))
    }
}

fn objective(alpha: f64) -> ObjectiveConfig {
    ObjectiveConfig {
        alpha,
        distill: true,
        flip_condition: false,
        expert_aux_loss: false,
    }
}

/// Gradients of one model on one batch under two objectives.
fn grad_pair(model: &ColdWarmModel, batch: &Batch, a: &ObjectiveConfig, b: &ObjectiveConfig) -> (Vec<(String, Tensor)>, Vec<(String, Tensor)>, usize) {
    let mut ma = model.clone();
    let loss = Trainable::accumulate(&mut ma, &batch.groups(), a).unwrap();
    let mut mb = model.clone();
    Trainable::accumulate(&mut mb, &batch.groups(), b).unwrap();
    (grads(&mut ma), grads(&mut mb), loss.distill_active)
}

/// The warm expert's gradient does not change when α·L_d is added.
pub fn teacher_isolation() -> Outcome {
    let mut active = 0;
    for seed in 0..20 {
        let model = tiny_model(4, 2, true, 900 + seed);
        let batch = Batch::random(4, 5, &mut seeded_rng(1000 + seed));
        let (with, without, n) = grad_pair(&model, &batch, &objective(0.5), &objective(0.0));
        active += n;
        for ((name, a), (_, b)) in with.iter().zip(&without) {
            if in_group(name, &WARM_EXPERT_PREFIXES) && bits(a) != bits(b) {
                return Err(format!("`{name}` received a distillation gradient"));
            }
        }
    }
    if active == 0 {
        return Err("no sample distilled; the check is vacuous".into());
    }
    Ok(format!("{active} distilling samples, warm-expert gradients bit-identical"))
}

/// On batches where every sample distils, only the cold-expert gradients
/// move when α goes from 0 to positive.
pub fn distill_routing() -> Outcome {
    let mut batches = 0;
    for seed in 0..10 {
        let model = tiny_model(4, 2, true, 1100 + seed);
        let mut rng = seeded_rng(1200 + seed);
        let mut batch = Batch {
            users: Vec::new(),
            items: Vec::new(),
        };
        while batch.users.len() < 4 {
            let user = random_user(&mut rng, 6);
            let item = random_item(&mut rng);
            let label = f64::from(u8::from(rng.random_bool(0.5)));
            let s = model.forward(&user, &item).unwrap().scores;
            if bce_loss(s.y_cold, label) > bce_loss(s.y_warm, label) {
                batch.users.push(user);
                batch.items.push(vec![(item, label)]);
            }
        }
        let (with, without, n) = grad_pair(&model, &batch, &objective(0.5), &objective(0.0));
        if n != batch.len() {
            return Err(format!("{n} of {} samples distilled", batch.len()));
        }
        let mut cold_moved = false;
        for ((name, a), (_, b)) in with.iter().zip(&without) {
            let same = bits(a) == bits(b);
            if in_group(name, &COLD_EXPERT_PREFIXES) {
                cold_moved |= !same;
            } else if !same {
                return Err(format!("`{name}` outside the cold expert changed"));
            }
        }
        if !cold_moved {
            return Err("cold-expert gradients did not change".into());
        }
        batches += 1;
    }
    Ok(format!("{batches} all-distilling batches"))
}

pub fn groups_frozen() -> Outcome {
    let mut model = tiny_model(4, 2, true, 1300);
    let before = bits(&model.groups);
    if named_params(&model).iter().any(|(n, _)| n.contains("group")) {
        return Err("E_ug is registered as a trainable parameter".into());
    }
    let mut adam = Adam::new(AdamConfig {
        lr: 0.05,
        ..AdamConfig::default()
    });
    let mut rng = seeded_rng(1301);
    for _ in 0..30 {
        let batch = Batch::random(4, 3, &mut rng);
        model.training_step(&batch.groups(), &objective(0.05), &mut adam).unwrap();
    }
    if bits(&model.groups) == before {
        Ok("30 steps, E_ug bit-identical".into())
    } else {
        Err("E_ug changed during training".into())
    }
}

pub fn selector_monotonicity() -> Outcome {
    let mut rng = seeded_rng(1400);
    let grid: Vec<f64> = (1..20).map(|i| f64::from(i) / 20.0).collect();
    let mut cases = 0;
    for &yc in &grid {
        for &yw in &grid {
            for label in [0.0, 1.0] {
                let (lc, lw) = (bce_loss(yc, label), bce_loss(yw, label));
                let d = dkd_per_sample(yc, yw, label, false);
                let f = dkd_per_sample(yc, yw, label, true);
                if d.active != (lc > lw) || f.active != (lw > lc) {
                    return Err(format!("ŷ_c={yc}, ŷ_w={yw}, y={label}"));
                }
                if !d.active && d.loss != 0.0 {
                    return Err("inactive sample with non-zero l_d".into());
                }
                cases += 1;
            }
        }
    }
    for _ in 0..2000 {
        let yc: f64 = rng.random_range(1e-6..1.0 - 1e-6);
        let yw: f64 = rng.random_range(1e-6..1.0 - 1e-6);
        let label = f64::from(u8::from(rng.random_bool(0.5)));
        let d = dkd_per_sample(yc, yw, label, false);
        if d.active != (bce_loss(yc, label) > bce_loss(yw, label)) {
            return Err(format!("ŷ_c={yc}, ŷ_w={yw}, y={label}"));
        }
        cases += 1;
    }
    if dkd_per_sample(0.4, 0.4, 1.0, false).active {
        return Err("a tie distilled".into());
    }
    Ok(format!("{cases} cases, ties never distil"))
}

/// Duplicate item embeddings come out in id order, independently of the
/// order in which the rows were laid out.
pub fn tie_rule() -> Outcome {
    let mut rng = seeded_rng(1500);
    for _ in 0..200 {
        let n = rng.random_range(2..40);
        let distinct: Vec<Vec<f64>> = (0..3).map(|_| vec![f64::from(rng.random_range(-2i32..=2)), 1.0]).collect();
        let mut assignment: Vec<usize> = (0..n).map(|i| i % 3).collect();
        assignment.shuffle(&mut rng);
        let mut rows = vec![vec![0.0, 0.0]];
        rows.extend(assignment.iter().map(|&a| distinct[a].clone()));
        let items = Tensor::from_rows(&rows).unwrap();
        let user = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let first = retrieve_top_k(&user, &items, &[], n, false);
        let again = retrieve_top_k(&user, &items, &[], n, false);
        if first != again {
            return Err("repeated retrieval differs".into());
        }
        for pair in first.windows(2) {
            if pair[0].score == pair[1].score && pair[0].item > pair[1].item {
                return Err(format!("tied items {} before {}", pair[0].item, pair[1].item));
            }
        }
    }
    Ok("200 instances with duplicate embeddings".into())
}

pub fn checkpoint_roundtrip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cw = tiny_model(4, 2, true, 1600);
    let base = super::tiny_baseline(4, 1601);
    for (name, ckpt) in [("coldwarm", Checkpoint::ColdWarm(cw.clone())), ("baseline", Checkpoint::Baseline(base.clone()))] {
        let path = dir.path().join(format!("{name}.ckpt"));
        ckpt.save(&path, serde_json::json!({ "name": name })).map_err(|e| e.to_string())?;
        let (back, prov) = Checkpoint::load(&path).map_err(|e| e.to_string())?;
        if prov["name"] != name {
            return Err("provenance lost".into());
        }
        let (a, b) = match (&ckpt, &back) {
            (Checkpoint::ColdWarm(x), Checkpoint::ColdWarm(y)) => {
                if bits(&x.groups) != bits(&y.groups) {
                    return Err("E_ug differs after reload".into());
                }
                (parameter_snapshot(x), parameter_snapshot(y))
            }
            (Checkpoint::Baseline(x), Checkpoint::Baseline(y)) => (parameter_snapshot(x), parameter_snapshot(y)),
            _ => return Err(format!("{name} reloaded as another kind")),
        };
        if a.len() != b.len() || a.iter().zip(&b).any(|((na, ta), (nb, tb))| na != nb || bits(ta) != bits(tb)) {
            return Err(format!("{name} parameters differ after reload"));
        }
    }
    Ok("cold & warm and baseline checkpoints bit-exact".into())
}

/// Same state, same batch, same optimizer history: identical parameters.
pub fn step_determinism() -> Outcome {
    let batch = Batch::random(4, 3, &mut seeded_rng(1700));
    let run = || {
        let mut model = tiny_model(4, 2, true, 1701);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..3 {
            model.training_step(&batch.groups(), &objective(0.05), &mut adam).unwrap();
        }
        parameter_snapshot(&model)
    };
    let (a, b) = (run(), run());
    if a.iter().zip(&b).all(|((_, x), (_, y))| bits(x) == bits(y)) {
        Ok("3 steps twice, parameters bit-identical".into())
    } else {
        Err("repeated training steps diverged".into())
    }
}

pub fn all() -> Vec<(&'static str, Outcome)> {
    vec![
        ("gate convexity", gate_convexity()),
        ("teacher isolation", teacher_isolation()),
        ("distill routing", distill_routing()),
        ("E_ug frozen", groups_frozen()),
        ("selector monotonicity", selector_monotonicity()),
        ("tie-rule determinism", tie_rule()),
        ("checkpoint round-trip", checkpoint_roundtrip()),
        ("training-step determinism", step_determinism()),
    ]
}
