//! Central finite-difference checks of every differentiable op, the model
//! building blocks, and both full models.

use coldwarm::model::blocks::{Dense, FieldEmbeddings, ItemTower, Mlp, ProfileTower};
use coldwarm::model::{ColdWarmModel, ObjectiveConfig, Trainable, COLD_EXPERT_PREFIXES};
use coldwarm::tensor::{
    bce_grad, bce_logit_grad, bce_loss, concat, cosine, cosine_backward, dense_backward, dense_forward,
    dot, embedding_backward, embedding_lookup, embedding_mean, embedding_mean_backward, mean_pool,
    mean_pool_backward, scaled_attention, scaled_attention_backward, seeded_rng, sigmoid, softmax,
    softmax_backward, split, Activation, Parameter, Tensor,
};
use rand::Rng as _;

use super::{check_module, grads, random_item, uniform_tensor, uniform_vec, zero_grads, Batch, GradReport};

pub const CASES: usize = 100;

fn param(t: Tensor) -> Parameter {
    Parameter::new(t)
}

pub fn dense(activation: Activation) -> GradReport {
    let mut report = GradReport::new(format!("dense/{activation:?}").to_lowercase());
    let mut rng = seeded_rng(11);
    for _ in 0..CASES {
        let (n, k) = (rng.random_range(1..=6), rng.random_range(1..=5));
        let x = uniform_tensor(1, n, 1.5, &mut rng);
        let mut w = param(uniform_tensor(n, k, 1.0, &mut rng));
        let mut b = param(uniform_tensor(1, k, 1.0, &mut rng));
        let r = uniform_vec(k, 1.0, &mut rng);
        let y = dense_forward(&x, &w, &b, activation).unwrap();
        let dx = dense_backward(&x, &y, &Tensor::row_vector(r.clone()), &mut w, &mut b, activation);
        let loss = |x: &Tensor, w: &Parameter, b: &Parameter| dot(dense_forward(x, w, b, activation).unwrap().as_slice(), &r);

        report.compare("x", dx.as_slice(), |i, delta| {
            let mut x2 = x.clone();
            x2.as_mut_slice()[i] += delta;
            loss(&x2, &w, &b)
        });
        let wg = w.grad.clone();
        report.compare("w", wg.as_slice(), |i, delta| {
            let mut w2 = w.clone();
            w2.value.as_mut_slice()[i] += delta;
            loss(&x, &w2, &b)
        });
        let bg = b.grad.clone();
        report.compare("b", bg.as_slice(), |i, delta| {
            let mut b2 = b.clone();
            b2.value.as_mut_slice()[i] += delta;
            loss(&x, &w, &b2)
        });
    }
    report
}

pub fn embedding_lookup_op() -> GradReport {
    let mut report = GradReport::new("embedding_lookup");
    let mut rng = seeded_rng(12);
    for _ in 0..CASES {
        let (rows, dim) = (rng.random_range(1..=6), rng.random_range(1..=5));
        let mut table = param(uniform_tensor(rows, dim, 1.0, &mut rng));
        let id = rng.random_range(0..rows);
        let r = uniform_vec(dim, 1.0, &mut rng);
        embedding_backward(&mut table, id, &r);
        let g = table.grad.clone();
        report.compare("table", g.as_slice(), |i, delta| {
            let mut t = table.clone();
            t.value.as_mut_slice()[i] += delta;
            dot(embedding_lookup(&t, id).unwrap().as_slice(), &r)
        });
    }
    report
}

pub fn embedding_mean_op() -> GradReport {
    let mut report = GradReport::new("embedding_mean");
    let mut rng = seeded_rng(13);
    for _ in 0..CASES {
        let (rows, dim) = (rng.random_range(1..=8), rng.random_range(1..=5));
        let mut table = param(uniform_tensor(rows, dim, 1.0, &mut rng));
        let len = rng.random_range(0..=6);
        let ids: Vec<u32> = (0..len).map(|_| rng.random_range(0..rows as u32)).collect();
        let r = uniform_vec(dim, 1.0, &mut rng);
        embedding_mean_backward(&mut table, &ids, &r);
        let g = table.grad.clone();
        report.compare("table", g.as_slice(), |i, delta| {
            let mut t = table.clone();
            t.value.as_mut_slice()[i] += delta;
            dot(embedding_mean(&t, &ids, dim).unwrap().value.as_slice(), &r)
        });
    }
    report
}

pub fn mean_pool_op() -> GradReport {
    let mut report = GradReport::new("mean_pool");
    let mut rng = seeded_rng(14);
    for _ in 0..CASES {
        let (s, d) = (rng.random_range(1..=6), rng.random_range(1..=5));
        let rows = uniform_tensor(s, d, 1.0, &mut rng);
        let r = uniform_vec(d, 1.0, &mut rng);
        let g = mean_pool_backward(s, &Tensor::row_vector(r.clone()));
        report.compare("rows", g.as_slice(), |i, delta| {
            let mut x = rows.clone();
            x.as_mut_slice()[i] += delta;
            dot(mean_pool(&x).value.as_slice(), &r)
        });
    }
    report
}

pub fn softmax_op() -> GradReport {
    let mut report = GradReport::new("softmax");
    let mut rng = seeded_rng(15);
    for _ in 0..CASES {
        let n = rng.random_range(1..=6);
        let z = uniform_vec(n, 3.0, &mut rng);
        let r = uniform_vec(n, 1.0, &mut rng);
        let g = softmax_backward(&softmax(&z), &r);
        report.compare("logits", &g, |i, delta| {
            let mut z2 = z.clone();
            z2[i] += delta;
            dot(&softmax(&z2), &r)
        });
    }
    report
}

pub fn attention_op() -> GradReport {
    let mut report = GradReport::new("scaled_attention");
    let mut rng = seeded_rng(16);
    for _ in 0..CASES {
        let (m, d) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let q = uniform_tensor(1, d, 1.5, &mut rng);
        let keys = uniform_tensor(m, d, 1.5, &mut rng);
        let r = uniform_vec(d, 1.0, &mut rng);
        let att = scaled_attention(&q, &keys).unwrap();
        let mut dkeys = Tensor::zeros(m, d);
        let dq = scaled_attention_backward(&q, &keys, &att, &Tensor::row_vector(r.clone()), Some(&mut dkeys));
        let loss = |q: &Tensor, k: &Tensor| dot(scaled_attention(q, k).unwrap().context.as_slice(), &r);
        report.compare("query", dq.as_slice(), |i, delta| {
            let mut q2 = q.clone();
            q2.as_mut_slice()[i] += delta;
            loss(&q2, &keys)
        });
        report.compare("keys", dkeys.as_slice(), |i, delta| {
            let mut k2 = keys.clone();
            k2.as_mut_slice()[i] += delta;
            loss(&q, &k2)
        });
        let frozen = scaled_attention_backward(&q, &keys, &att, &Tensor::row_vector(r.clone()), None);
        assert_eq!(frozen, dq);
    }
    report
}

pub fn cosine_op() -> GradReport {
    let mut report = GradReport::new("cosine");
    let mut rng = seeded_rng(17);
    for _ in 0..CASES {
        let d = rng.random_range(1..=6);
        let u = uniform_vec(d, 1.0, &mut rng);
        let v = uniform_vec(d, 1.0, &mut rng);
        let c = rng.random_range(-2.0..2.0);
        let (du, dv) = cosine_backward(&u, &v, &cosine(&u, &v), c);
        report.compare("u", &du, |i, delta| {
            let mut u2 = u.clone();
            u2[i] += delta;
            c * cosine(&u2, &v).value
        });
        report.compare("v", &dv, |i, delta| {
            let mut v2 = v.clone();
            v2[i] += delta;
            c * cosine(&u, &v2).value
        });
    }
    report
}

pub fn bce_op() -> GradReport {
    let mut report = GradReport::new("bce");
    let mut rng = seeded_rng(18);
    for _ in 0..CASES {
        let p: f64 = rng.random_range(0.01..0.99);
        let t: f64 = if rng.random_bool(0.5) { rng.random_range(0.0..1.0) } else { f64::from(u8::from(rng.random_bool(0.5))) };
        report.compare("prediction", &[bce_grad(p, t)], |_, delta| bce_loss(p + delta, t));
        let z: f64 = rng.random_range(-4.0..4.0);
        report.compare("logit", &[bce_logit_grad(sigmoid(z), t)], |_, delta| bce_loss(sigmoid(z + delta), t));
    }
    report
}

pub fn concat_split_op() -> GradReport {
    let mut report = GradReport::new("concat/split");
    let mut rng = seeded_rng(19);
    for _ in 0..CASES {
        let (na, nb) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let a = uniform_tensor(1, na, 1.0, &mut rng);
        let b = uniform_tensor(1, nb, 1.0, &mut rng);
        let r = uniform_vec(na + nb, 1.0, &mut rng);
        let (ga, gb) = split(&Tensor::row_vector(r.clone()), na);
        report.compare("a", ga.as_slice(), |i, delta| {
            let mut a2 = a.clone();
            a2.as_mut_slice()[i] += delta;
            dot(concat(&a2, &b).as_slice(), &r)
        });
        report.compare("b", gb.as_slice(), |i, delta| {
            let mut b2 = b.clone();
            b2.as_mut_slice()[i] += delta;
            dot(concat(&a, &b2).as_slice(), &r)
        });
    }
    report
}

/// Two-layer MLP, field embeddings (single and bag-valued), the profile and
/// item towers: each against a random linear read-out.
pub fn blocks() -> Vec<GradReport> {
    let mut rng = seeded_rng(20);
    let mut mlp_report = GradReport::new("block/mlp");
    let mut field_report = GradReport::new("block/field_bags");
    let mut profile_report = GradReport::new("block/profile_tower");
    let mut item_report = GradReport::new("block/item_tower");
    for _ in 0..CASES / 4 {
        let (n, h, k) = (rng.random_range(1..=5), rng.random_range(1..=5), rng.random_range(1..=4));
        let mut mlp = Mlp {
            layers: vec![
                Dense::new(n, h, Activation::Relu, &mut rng),
                Dense::new(h, k, Activation::Tanh, &mut rng),
            ],
        };
        let x = uniform_tensor(1, n, 1.0, &mut rng);
        let r = uniform_vec(k, 1.0, &mut rng);
        let trace = mlp.forward(x.clone()).unwrap();
        let dx = mlp.backward(&trace, Tensor::row_vector(r.clone()));
        mlp_report.compare("x", dx.as_slice(), |i, delta| {
            let mut x2 = x.clone();
            x2.as_mut_slice()[i] += delta;
            dot(mlp.forward(x2).unwrap().output().as_slice(), &r)
        });
        let g = grads(&mut mlp);
        mlp_report.merge(check_module("mlp", &mlp, &g, |m| dot(m.forward(x.clone()).unwrap().output().as_slice(), &r)));

        let dim = rng.random_range(1..=4);
        let mut fields = FieldEmbeddings::new(&[4, 6], dim, &mut rng);
        let bags: Vec<Vec<u32>> = vec![
            (0..rng.random_range(0..4)).map(|_| rng.random_range(0..4)).collect(),
            (0..rng.random_range(1..4)).map(|_| rng.random_range(0..6)).collect(),
        ];
        let bag_refs: Vec<&[u32]> = bags.iter().map(Vec::as_slice).collect();
        let r = uniform_vec(2 * dim, 1.0, &mut rng);
        fields.backward_bags(&bag_refs, &Tensor::row_vector(r.clone()));
        let g = grads(&mut fields);
        field_report.merge(check_module("fields", &fields, &g, |f| dot(f.forward_bags(&bag_refs).unwrap().as_slice(), &r)));

        let d = rng.random_range(1..=4);
        let mut tower = ProfileTower::new(&[3, 4], d, &mut rng);
        let profile = vec![rng.random_range(0..3), rng.random_range(0..4)];
        let r = uniform_vec(d, 1.0, &mut rng);
        let trace = tower.forward(&profile).unwrap();
        tower.backward(&profile, &trace, &Tensor::row_vector(r.clone()));
        let g = grads(&mut tower);
        profile_report.merge(check_module("profile", &tower, &g, |t| dot(t.forward(&profile).unwrap().output.as_slice(), &r)));

        let mut items = ItemTower::new(super::TINY_ITEMS, &[super::TINY_GENRES], d, &mut rng);
        super::randomize(&mut items, 0.8, &mut rng);
        let item = random_item(&mut rng);
        let trace = items.forward(&item).unwrap();
        items.backward(&item, &trace, Tensor::row_vector(r.clone()));
        let g = grads(&mut items);
        item_report.merge(check_module("item", &items, &g, |t| dot(t.forward(&item).unwrap().output().as_slice(), &r)));
    }
    vec![mlp_report, field_report, profile_report, item_report]
}

pub fn ops() -> Vec<GradReport> {
    let mut out: Vec<GradReport> = [Activation::Identity, Activation::Relu, Activation::Sigmoid, Activation::Tanh]
        .into_iter()
        .map(dense)
        .collect();
    out.extend([
        embedding_lookup_op(),
        embedding_mean_op(),
        mean_pool_op(),
        softmax_op(),
        attention_op(),
        cosine_op(),
        bce_op(),
        concat_split_op(),
    ]);
    out
}

/// Mean label loss (plus the expert losses when `aux`) recomputed from
/// forward passes alone.
pub fn coldwarm_loss(model: &ColdWarmModel, batch: &Batch, aux: bool) -> f64 {
    let n = batch.len() as f64;
    let mut total = 0.0;
    for (user, items) in batch.users.iter().zip(&batch.items) {
        for (item, label) in items {
            let s = model.forward(user, item).unwrap().scores;
            total += bce_loss(s.y, *label);
            if aux {
                total += bce_loss(s.y_cold, *label) + bce_loss(s.y_warm, *label);
            }
        }
    }
    total / n
}

/// Full Cold & Warm model, d=4 and m=2, on one sample and on small batches,
/// with and without the bias net and the expert auxiliary losses.
pub fn coldwarm_full_model() -> Vec<GradReport> {
    let mut out = Vec::new();
    for (label, users, items, bias_net, aux) in [
        ("model/one_sample", 1, 1, true, false),
        ("model/batch", 3, 3, true, false),
        ("model/no_bias_net", 3, 3, false, false),
        ("model/expert_aux_loss", 2, 3, true, true),
    ] {
        let mut report = GradReport::new(label);
        for seed in 0..4 {
            let mut model = super::tiny_model(4, 2, bias_net, 100 + seed);
            let batch = Batch::random(users, items, &mut seeded_rng(200 + seed));
            let objective = ObjectiveConfig {
                alpha: 0.0,
                distill: false,
                flip_condition: false,
                expert_aux_loss: aux,
            };
            zero_grads(&mut model);
            let breakdown = Trainable::accumulate(&mut model, &batch.groups(), &objective).unwrap();
            let expected = coldwarm_loss(&model, &batch, aux);
            assert!((breakdown.total - expected).abs() < 1e-12, "{label}: loss {} vs {expected}", breakdown.total);
            let g = grads(&mut model);
            report.merge(check_module(label, &model, &g, |m| coldwarm_loss(m, &batch, aux)));
        }
        out.push(report);
    }
    out
}

/// The distillation term: the gradient added by α·L_d must equal the
/// derivative of α·mean(active · bce(ŷ_c(θ), ŷ_w(θ₀))) with respect to the
/// cold-expert parameters, with the active set and teacher fixed at θ₀.
pub fn coldwarm_distill() -> GradReport {
    let mut report = GradReport::new("model/distill");
    let alpha = 0.7;
    for seed in 0..6 {
        let model = super::tiny_model(4, 2, true, 300 + seed);
        let batch = Batch::random(3, 3, &mut seeded_rng(400 + seed));
        let mut teacher = Vec::new();
        for (user, items) in batch.users.iter().zip(&batch.items) {
            for (item, label) in items {
                let s = model.forward(user, item).unwrap().scores;
                let d = coldwarm::model::dkd_per_sample(s.y_cold, s.y_warm, *label, false);
                teacher.push((d.active, s.y_warm));
            }
        }
        let with = ObjectiveConfig {
            alpha,
            distill: true,
            flip_condition: false,
            expert_aux_loss: false,
        };
        let without = ObjectiveConfig { distill: false, ..with };
        let mut a = model.clone();
        Trainable::accumulate(&mut a, &batch.groups(), &with).unwrap();
        let mut b = model.clone();
        Trainable::accumulate(&mut b, &batch.groups(), &without).unwrap();
        let ga = grads(&mut a);
        let gb = grads(&mut b);
        let diff: Vec<(String, Tensor)> = ga
            .iter()
            .zip(&gb)
            .filter(|((n, _), _)| COLD_EXPERT_PREFIXES.iter().any(|p| n == p || n.starts_with(&format!("{p}."))))
            .map(|((n, x), (_, y))| {
                let mut t = x.clone();
                for (v, w) in t.as_mut_slice().iter_mut().zip(y.as_slice()) {
                    *v -= w;
                }
                (n.clone(), t)
            })
            .collect();
        let n = batch.len() as f64;
        let distill_loss = |m: &ColdWarmModel| {
            let mut total = 0.0;
            let mut k = 0;
            for (user, items) in batch.users.iter().zip(&batch.items) {
                for (item, _) in items {
                    let (active, y_w) = teacher[k];
                    k += 1;
                    if active {
                        total += bce_loss(m.forward(user, item).unwrap().scores.y_cold, y_w);
                    }
                }
            }
            alpha * total / n
        };
        // Parameters outside the cold expert get an empty gradient: skipped.
        let full: Vec<(String, Tensor)> = ga
            .iter()
            .map(|(name, g)| match diff.iter().find(|(n, _)| n == name) {
                Some((_, t)) => (name.clone(), t.clone()),
                None => (name.clone(), Tensor::zeros(0, g.cols())),
            })
            .collect();
        report.merge(check_module("distill", &model, &full, distill_loss));
    }
    report
}

pub fn baseline_full_model() -> GradReport {
    let mut report = GradReport::new("model/baseline");
    for seed in 0..4 {
        let mut model = super::tiny_baseline(4, 500 + seed);
        let batch = Batch::random(3, 3, &mut seeded_rng(600 + seed));
        zero_grads(&mut model);
        Trainable::accumulate(&mut model, &batch.groups(), &ObjectiveConfig::default()).unwrap();
        let g = grads(&mut model);
        let loss = |m: &coldwarm::model::BaselineTwoTower| {
            let mut total = 0.0;
            for (user, items) in batch.users.iter().zip(&batch.items) {
                let e_u = m.forward_user(user).unwrap();
                for (item, label) in items {
                    let e_i = m.item.forward(item).unwrap();
                    let c = cosine(e_u.e_u().as_slice(), e_i.output().as_slice()).value;
                    total += bce_loss(sigmoid(m.config.tau * c), *label);
                }
            }
            total / batch.len() as f64
        };
        report.merge(check_module("baseline", &model, &g, loss));
    }
    report
}

/// Every gradient check of the suite.
pub fn all() -> Vec<GradReport> {
    let mut out = ops();
    out.extend(blocks());
    out.extend(coldwarm_full_model());
    out.push(coldwarm_distill());
    out.push(baseline_full_model());
    out
}
