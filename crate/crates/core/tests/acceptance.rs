//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a failure status when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bridgerec::bridge::{
    epoch_samples, joint_step, mutual_loss, mutual_loss_grad, write_back, EntityTable, JointConfig,
    SampleSource, SharingModule, UnifiedSample,
};
use bridgerec::corpus::synthetic::{planted, PlantedConfig};
use bridgerec::corpus::{build_matrix, CandidateSet, DatasetStats};
use bridgerec::drs::{
    fused_loss, fused_loss_grad, init_drs, DrsKind, DrsModelConfig, DrsTrainConfig, FusedExample,
    LgcnGraph, StandaloneHead,
};
use bridgerec::eval::{
    eval_topk, hit_rate_at_k, mean_sd, precision_recall_f1, run_grid, GridResult, IpCase,
    PromptContext, RankCase, Scorer, Variant,
};
use bridgerec::lm::{
    init_lm, preload_embeddings, sft_loss, sft_loss_grad, top_feature, train_sft, EntityInit,
    LmConfig, SftExample, SftTrainConfig,
};
use bridgerec::nn::{Adam, AdamConfig, ParamSet};
use bridgerec::pipeline::{
    build_eval_sets, init_joint_state, prepare, pretrain, ExperimentConfig, Prepared,
};
use bridgerec::rng::{rng_for, rng_indexed, Rng};
use bridgerec::vocab::{build_base_vocab, extend_vocab, PromptMode, Task, RESERVED};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;

const SPARSITY_TOL: f64 = 5e-4;
const FD_STEP: f64 = 1e-4;
const FD_TOL: f64 = 1e-3;
const FD_INSTANCES: usize = 20;
const OVERFIT_TARGET: f64 = 0.01;
const OVERFIT_STEPS: usize = 500;
const METRIC_CASES: usize = 1000;
const RANDOM_RANKER_CASES: usize = 2000;
const E2E_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const E2E_DATA_SEED: u64 = 7;
const E2E_GAMMA: f64 = 0.1;

type Verdict = Result<String, String>;

fn check(cond: bool, detail: String) -> Verdict {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(name: &str, elapsed: Duration, budget: Duration) -> Result<(), String> {
    if elapsed <= budget {
        Ok(())
    } else {
        Err(format!("{name} took {elapsed:?}, budget {budget:?}"))
    }
}

// ---------------------------------------------------------------- fixtures

fn small_config() -> ExperimentConfig {
    let mut config = ExperimentConfig {
        drs: DrsModelConfig {
            kind: DrsKind::Gmf,
            dim: 8,
            layers: 1,
        },
        drs_train: DrsTrainConfig {
            epochs: 2,
            ..DrsTrainConfig::default()
        },
        lm: LmConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            ffn_width: Some(16),
            context_limit: 192,
            dropout: 0.0,
        },
        history_cap: 3,
        candidate_mix: 0.0,
        popularity_alpha: 0.0,
        ..ExperimentConfig::default()
    };
    config.joint = JointConfig {
        eta1: 1e-2,
        eta2: 1e-2,
        batch_size: 6,
        ..JointConfig::default()
    };
    config
}

fn planted_prepared(
    planted_config: &PlantedConfig,
    config: &ExperimentConfig,
    seed: u64,
) -> Prepared {
    let data = planted(planted_config, seed);
    let full = build_matrix(&data.catalog, &data.interactions).unwrap();
    prepare(data.catalog, full, config).unwrap()
}

fn tiny_planted() -> PlantedConfig {
    PlantedConfig {
        n_users: 12,
        n_items: 30,
        min_interactions: 5,
        max_interactions: 7,
        ..PlantedConfig::default()
    }
}

fn e2e_config() -> ExperimentConfig {
    let mut config = ExperimentConfig {
        drs: DrsModelConfig {
            kind: DrsKind::LightGcn,
            dim: 32,
            layers: 2,
        },
        lm: LmConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 32,
            ffn_width: None,
            context_limit: 192,
            dropout: 0.0,
        },
        history_cap: 5,
        candidate_mix: 0.0,
        popularity_alpha: 0.0,
        valid_users: Some(100),
        ..ExperimentConfig::default()
    };
    config.joint.eta1 = 1e-3;
    config.joint.eta2 = 5e-3;
    config.joint.samples_per_user = 1;
    config.joint.max_epochs = 15;
    config.joint.patience = 3;
    config
}

fn e2e_prepared(config: &ExperimentConfig) -> Prepared {
    planted_prepared(&PlantedConfig::default(), config, E2E_DATA_SEED)
}

// ------------------------------------------------------ finite differences

/// Central differences of `f` at the listed flat coordinates.
fn numeric_gradient<P: ParamSet>(params: &P, coords: &[usize], f: impl Fn(&P) -> f64) -> Vec<f64> {
    let x = params.flatten();
    let mut probe = params.clone();
    coords
        .iter()
        .map(|&c| {
            let mut xp = x.clone();
            xp[c] = x[c] + FD_STEP;
            probe.set_flat(&xp);
            let up = f(&probe);
            xp[c] = x[c] - FD_STEP;
            probe.set_flat(&xp);
            let down = f(&probe);
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-8)
}

fn gradient_error<P: ParamSet>(
    params: &P,
    grads: &P,
    coords: &[usize],
    f: impl Fn(&P) -> f64,
) -> f64 {
    let flat = grads.flatten();
    let analytic: Vec<f64> = coords.iter().map(|&c| flat[c]).collect();
    rel_err(&analytic, &numeric_gradient(params, coords, f))
}

fn jitter<P: ParamSet>(params: &mut P, scale: f64, rng: &mut Rng) {
    for t in params.tensors_mut() {
        for x in t.iter_mut() {
            *x += rng.random_range(-scale..scale);
        }
    }
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

fn sft_instance(k: usize) -> f64 {
    let mut rng = rng_indexed(100, "acceptance-sft", k as u64);
    let vocab = extend_vocab(build_base_vocab(&["red green blue cyan amber"], 1), 3, 4);
    let config = LmConfig {
        n_layers: 1 + k % 2,
        n_heads: 2,
        d_model: 8,
        ffn_width: Some(12),
        context_limit: 16,
        dropout: 0.0,
    };
    let mut lm = init_lm(&config, &vocab, EntityInit::Random, k as u64).unwrap();
    jitter(&mut lm, 0.3, &mut rng);
    let batch: Vec<SftExample> = (0..2 + k % 2)
        .map(|_| {
            let n_prompt = rng.random_range(2..6);
            let n_answer = rng.random_range(1..3);
            SftExample {
                prompt: (0..n_prompt)
                    .map(|_| rng.random_range(0..vocab.len()))
                    .collect(),
                answer: (0..n_answer)
                    .map(|_| rng.random_range(0..vocab.len()))
                    .collect(),
                label: 1.0,
                user: 0,
                item: 0,
            }
        })
        .collect();
    let (_, grads) = sft_loss_grad(&batch, &lm, None).unwrap();
    let n = lm.flatten().len();
    let coords: Vec<usize> = (0..60).map(|_| rng.random_range(0..n)).collect();
    gradient_error(&lm, &grads, &coords, |p| sft_loss(&batch, p).unwrap())
}

fn fused_instance(k: usize) -> f64 {
    let mut rng = rng_indexed(200, "acceptance-fused", k as u64);
    let kind = DrsKind::ALL[k % 3];
    let (n_users, n_items, d) = (4, 5, 4);
    let data = planted(
        &PlantedConfig {
            n_users,
            n_items,
            min_interactions: 2,
            max_interactions: 3,
            ..PlantedConfig::default()
        },
        k as u64,
    );
    let matrix = build_matrix(&data.catalog, &data.interactions).unwrap();
    let graph = LgcnGraph::from_train(&matrix);
    let mut p = init_drs(kind, n_users, n_items, d, 2, k as u64).unwrap();
    p.user = random_matrix(n_users, d, 1.2, &mut rng);
    p.item = random_matrix(n_items, d, 1.2, &mut rng);
    if let StandaloneHead::Tower { b1, b2, b3, .. } = &mut p.head {
        for b in [b1, b2, b3] {
            b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
    }
    p.fused.b1.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    let contexts = random_matrix(4, d, 1.5, &mut rng);
    let batch: Vec<FusedExample<'_>> = (0..4)
        .map(|r| FusedExample {
            user: rng.random_range(0..n_users),
            item: rng.random_range(0..n_items),
            label: (r % 2) as f64,
            context: contexts.row(r),
        })
        .collect();
    let graph = (kind == DrsKind::LightGcn).then_some(&graph);
    let (_, grads) = fused_loss_grad(&p, graph, &batch).unwrap();
    let coords: Vec<usize> = (0..p.flatten().len()).collect();
    gradient_error(&p, &grads, &coords, |q| {
        fused_loss(q, graph, &batch).unwrap()
    })
}

fn mutual_instance(k: usize) -> f64 {
    let mut rng = rng_indexed(300, "acceptance-mutual", k as u64);
    let (n_users, n_items, d) = (4, 5, 4);
    let m = SharingModule {
        users: random_matrix(n_users, d, 1.0, &mut rng),
        items: random_matrix(n_items, d, 1.0, &mut rng),
    };
    let batch: Vec<(usize, usize)> = (0..3)
        .map(|_| (rng.random_range(0..n_users), rng.random_range(0..n_items)))
        .collect();
    fn run<T: EntityTable + ParamSet>(
        table: &T,
        batch: &[(usize, usize)],
        m: &SharingModule,
    ) -> f64 {
        let mut grads = table.zeros_like();
        mutual_loss_grad(table, batch, m, 1.0, &mut grads).unwrap();
        let coords: Vec<usize> = (0..table.flatten().len()).collect();
        gradient_error(table, &grads, &coords, |t| {
            mutual_loss(t, batch, m).unwrap()
        })
    }
    if k % 2 == 0 {
        let mut drs = init_drs(DrsKind::Gmf, n_users, n_items, d, 1, k as u64).unwrap();
        jitter(&mut drs, 0.5, &mut rng);
        run(&drs, &batch, &m)
    } else {
        let vocab = extend_vocab(build_base_vocab(&["red green"], 1), n_users, n_items);
        let config = LmConfig {
            n_layers: 1,
            n_heads: 1,
            d_model: d,
            ffn_width: Some(4),
            context_limit: 8,
            dropout: 0.0,
        };
        let mut lm = init_lm(&config, &vocab, EntityInit::Random, k as u64).unwrap();
        jitter(&mut lm, 0.5, &mut rng);
        run(&lm, &batch, &m)
    }
}

// -------------------------------------------------------------- criteria

fn sparsity() -> Verdict {
    let rows = [
        ("ML-1M", 6_040, 3_952, 1_000_224, 0.958),
        ("Amazon-Grocery", 3_472, 7_171, 76_592, 0.997),
        ("Amazon-Health", 4_872, 7_934, 107_135, 0.997),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, n, m, nnz, want) in rows {
        let got = DatasetStats::from_counts(n, m, nnz).sparsity;
        ok &= (got - want).abs() <= SPARSITY_TOL;
        parts.push(format!("{name} {got:.5} (want {want})"));
    }
    check(ok, parts.join(", "))
}

fn vocabulary() -> Verdict {
    let mut base: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    let fill = 32_002 - base.len();
    base.extend((0..fill).map(|k| format!("w{k}")));
    let rows = [
        (6_040, 3_952, 41_994),
        (3_472, 7_171, 42_645),
        (4_872, 7_934, 44_808),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (n, m, want) in rows {
        let v = extend_vocab(base.clone(), n, m);
        let got = v.len();
        ok &= got == want
            && v.n_base() == 32_002
            && v.user_range().len() == n
            && v.item_range().len() == m;
        parts.push(format!("{got} (want {want})"));
    }
    check(ok, parts.join(", "))
}

fn preload() -> Verdict {
    let start = Instant::now();
    let config = small_config();
    let p = planted_prepared(&tiny_planted(), &config, 3);
    let sets = build_eval_sets(&p, &config, 3).unwrap();
    let pre = pretrain(&p, &sets, &config, 3).unwrap();
    let vocab = p.vocab(true);
    let state =
        init_joint_state(&p, &vocab, &pre.snapshot, &config, &config.joint, true, 3).unwrap();
    let bits_equal = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| {
        a.iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits())
    };
    let users_ok =
        (0..p.n_users()).all(|u| bits_equal(state.lm.user_row(u), pre.snapshot.users.row(u)));
    let items_ok =
        (0..p.n_items()).all(|i| bits_equal(state.lm.item_row(i), pre.snapshot.items.row(i)));
    let mut again = state.lm.clone();
    preload_embeddings(&mut again, &pre.snapshot).unwrap();
    let idempotent = again == state.lm;
    let elapsed = start.elapsed();
    within("preload", elapsed, Duration::from_secs(1))?;
    check(
        users_ok && items_ok && idempotent,
        format!(
            "{} user rows {}, {} item rows {}, re-preload {} ({elapsed:?})",
            p.n_users(),
            if users_ok { "exact" } else { "differ" },
            p.n_items(),
            if items_ok { "exact" } else { "differ" },
            if idempotent {
                "idempotent"
            } else {
                "changed the model"
            },
        ),
    )
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let families: [(&str, fn(usize) -> f64); 3] = [
        ("sft_loss", sft_instance),
        ("drs_loss of fused_predict", fused_instance),
        ("mutual_loss", mutual_instance),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, instance) in families {
        let errors: Vec<f64> = (0..FD_INSTANCES).map(instance).collect();
        let worst = errors.iter().cloned().fold(0.0, f64::max);
        let failing = errors.iter().filter(|&&e| !(e < FD_TOL)).count();
        ok &= failing == 0;
        parts.push(format!(
            "{name}: worst {worst:.2e} over {FD_INSTANCES}, {failing} failing"
        ));
    }
    let elapsed = start.elapsed();
    within("gradient suite", elapsed, Duration::from_secs(120))?;
    check(ok, format!("{} ({elapsed:?})", parts.join("; ")))
}

fn sample_source<'a>(p: &'a Prepared, ctx: PromptContext<'a>) -> SampleSource<'a> {
    SampleSource {
        ctx,
        train: &p.split.train,
        known: &p.full,
        similarity: &p.similarity,
        popularity: &p.popularity,
        candidate_mix: 0.0,
    }
}

fn mutual_protocol() -> Verdict {
    let start = Instant::now();
    let mut rng = rng_for(4, "acceptance-protocol");
    let (n_users, n_items, d) = (6, 7, 5);
    let mut drs = init_drs(DrsKind::Ncf, n_users, n_items, d, 1, 4).unwrap();
    jitter(&mut drs, 0.5, &mut rng);
    let mut m = SharingModule {
        users: random_matrix(n_users, d, 1.0, &mut rng),
        items: random_matrix(n_items, d, 1.0, &mut rng),
    };
    let before = m.clone();
    let batch = [(1, 2), (4, 2), (4, 6)];
    let loss_before = mutual_loss(&drs, &batch, &m).unwrap();
    write_back(&mut m, &drs, &batch).unwrap();
    let zero = mutual_loss(&drs, &batch, &m).unwrap() == 0.0;
    let user_rows = (0..n_users)
        .filter(|u| ![1, 4].contains(u))
        .all(|u| m.users.row(u) == before.users.row(u));
    let item_rows = (0..n_items)
        .filter(|i| ![2, 6].contains(i))
        .all(|i| m.items.row(i) == before.items.row(i));

    let mut config = small_config();
    config.joint.gamma = 0.0;
    let p = planted_prepared(&tiny_planted(), &config, 5);
    let sets = build_eval_sets(&p, &config, 5).unwrap();
    let pre = pretrain(&p, &sets, &config, 5).unwrap();
    let vocab = p.vocab(true);
    let builder = config.builder(PromptMode::Tokens);
    let ctx = PromptContext {
        catalog: &p.catalog,
        vocab: &vocab,
        builder: &builder,
    };
    let mut state =
        init_joint_state(&p, &vocab, &pre.snapshot, &config, &config.joint, true, 5).unwrap();
    let samples = epoch_samples(&sample_source(&p, ctx), 1, true, 5, 0).unwrap();
    let mut decomposed = true;
    let mut steps = 0;
    for chunk in samples.chunks(config.joint.batch_size) {
        let rec = joint_step(&mut state, chunk, Some(&p.graph), &config.joint, 5).unwrap();
        decomposed &= rec.l == rec.l_llm + rec.l_drs;
        steps += 1;
    }
    let elapsed = start.elapsed();
    within("mutual-loss protocol", elapsed, Duration::from_secs(1))?;
    check(
        zero && user_rows && item_rows && decomposed,
        format!(
            "L_m {loss_before:.3} -> {} after write-back, non-batch rows {}, L = L_llm + L_drs over {steps} steps at gamma 0: {decomposed} ({elapsed:?})",
            if zero { "0" } else { "nonzero" },
            if user_rows && item_rows { "untouched" } else { "modified" },
        ),
    )
}

fn gamma_decoupling() -> Verdict {
    let start = Instant::now();
    let mut config = small_config();
    config.drs.kind = DrsKind::Ncf;
    config.joint.gamma = 0.0;
    let p = planted_prepared(&PlantedConfig::default(), &config, 9);
    let sets = build_eval_sets(&p, &config, 9).unwrap();
    let pre = pretrain(&p, &sets, &config, 9).unwrap();
    let vocab = p.vocab(true);
    let builder = config.builder(PromptMode::Tokens);
    let ctx = PromptContext {
        catalog: &p.catalog,
        vocab: &vocab,
        builder: &builder,
    };
    let source = sample_source(&p, ctx);
    let joint = &config.joint;
    let mut state = init_joint_state(&p, &vocab, &pre.snapshot, &config, joint, true, 9).unwrap();
    let mut lm = state.lm.clone();
    let mut drs = state.drs.clone();
    let mut lm_adam = Adam::new(joint.lm_adam(), &lm);
    let mut drs_adam = Adam::new(joint.drs_adam(), &drs);
    let seed = 11;
    let mut steps = 0;
    for epoch in 0..2 {
        let samples = epoch_samples(&source, 1, true, seed, epoch).unwrap();
        for batch in samples.chunks(joint.batch_size) {
            joint_step(&mut state, batch, Some(&p.graph), joint, seed).unwrap();
            steps += 1;

            let examples: Vec<SftExample> = batch.iter().map(|s| s.example.clone()).collect();
            let mut dropout = rng_indexed(seed, "dropout", state.step as u64);
            let (_, g) = sft_loss_grad(&examples, &lm, Some(&mut dropout)).unwrap();
            lm_adam.step(&mut lm, &g);
            let ip: Vec<&UnifiedSample> = batch
                .iter()
                .filter(|s| s.task == Task::InteractionPrediction)
                .collect();
            if ip.is_empty() {
                continue;
            }
            let contexts: Vec<_> = ip
                .iter()
                .map(|s| top_feature(&s.example.prompt, &lm).unwrap())
                .collect();
            let fused: Vec<FusedExample<'_>> = ip
                .iter()
                .zip(&contexts)
                .map(|(s, c)| FusedExample {
                    user: s.user,
                    item: s.item,
                    label: s.label(),
                    context: c.view(),
                })
                .collect();
            let (_, g) = fused_loss_grad(&drs, Some(&p.graph), &fused).unwrap();
            drs_adam.step(&mut drs, &g);
        }
    }
    let lm_same = state.lm == lm;
    let drs_same = state.drs == drs;
    let elapsed = start.elapsed();
    within("gamma decoupling", elapsed, Duration::from_secs(300))?;
    check(
        lm_same && drs_same,
        format!("{steps} joint steps: LM identical {lm_same}, recommender identical {drs_same} ({elapsed:?})"),
    )
}

fn overfit() -> Verdict {
    let start = Instant::now();
    let mut config = small_config();
    config.lm = LmConfig::default();
    config.drs.dim = config.lm.d_model;
    config.history_cap = 3;
    let p = planted_prepared(&tiny_planted(), &config, 12);
    let vocab = p.vocab(true);
    let builder = config.builder(PromptMode::Tokens);
    let examples: Vec<SftExample> = (0..8)
        .map(|u| {
            let history = p.split.train.history(u);
            let positive = u % 2 == 0;
            let item = if positive {
                *history.last().unwrap()
            } else {
                (0..p.n_items()).find(|&i| !p.full.contains(u, i)).unwrap()
            };
            let shown = &history[..history.len() - 1];
            let pair = builder
                .interaction(&vocab, &p.catalog, u, shown, item, positive)
                .unwrap();
            SftExample {
                prompt: pair.prompt,
                answer: pair.answer,
                label: if positive { 1.0 } else { 0.0 },
                user: u,
                item,
            }
        })
        .collect();
    let mut lm = init_lm(&config.lm, &vocab, EntityInit::Random, 12).unwrap();
    let train = SftTrainConfig {
        steps: OVERFIT_STEPS,
        batch_size: 8,
        adam: AdamConfig::with_lr(1e-3),
        target_loss: Some(OVERFIT_TARGET),
    };
    let records = train_sft(&mut lm, &examples, &train, 12).unwrap();
    let hit = records.iter().find(|r| r.loss < OVERFIT_TARGET);
    let elapsed = start.elapsed();
    within("overfit", elapsed, Duration::from_secs(300))?;
    let first = records.first().map_or(f64::NAN, |r| r.loss);
    match hit {
        Some(r) => Ok(format!(
            "loss {first:.3} -> {:.4} at step {} of {OVERFIT_STEPS} ({elapsed:?})",
            r.loss, r.step
        )),
        None => Err(format!(
            "loss {first:.3} -> {:.4} after {} steps ({elapsed:?})",
            records.last().map_or(f64::NAN, |r| r.loss),
            records.len()
        )),
    }
}

struct RandomRanker {
    seed: u64,
}

impl Scorer for RandomRanker {
    fn predict(&self, _case: &IpCase) -> bridgerec::Result<f64> {
        Ok(0.5)
    }

    fn rank(&self, case: &RankCase) -> bridgerec::Result<Vec<usize>> {
        let mut items = case.set.items.clone();
        items.shuffle(&mut rng_indexed(
            self.seed,
            "eval-random",
            case.user() as u64,
        ));
        Ok(items)
    }
}

fn metrics() -> Verdict {
    let start = Instant::now();
    let mut rng = rng_for(21, "acceptance-metrics");
    let mut hr_mismatch = 0;
    let mut cls_mismatch = 0;
    for _ in 0..METRIC_CASES {
        let n_lists = rng.random_range(1..6);
        let len = rng.random_range(1..21);
        let k = rng.random_range(1..=len.min(3));
        let mut ranked = Vec::new();
        let mut positives = Vec::new();
        for _ in 0..n_lists {
            let mut list: Vec<usize> = (0..len).collect();
            list.shuffle(&mut rng);
            positives.push(rng.random_range(0..len));
            ranked.push(list);
        }
        let mut hits = 0usize;
        for (list, pos) in ranked.iter().zip(&positives) {
            if list.iter().take(k).any(|x| x == pos) {
                hits += 1;
            }
        }
        let oracle = hits as f64 / n_lists as f64;
        if hit_rate_at_k(&ranked, &positives, k).unwrap() != oracle {
            hr_mismatch += 1;
        }

        let n = rng.random_range(1..31);
        let preds: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let count = |p: bool, y: bool| {
            preds
                .iter()
                .zip(&labels)
                .filter(|&(&a, &b)| a == p && b == y)
                .count()
        };
        let (tp, fp, fn_) = (count(true, true), count(true, false), count(false, true));
        let safe = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = safe(tp, tp + fp);
        let recall = safe(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let got = precision_recall_f1(&preds, &labels).unwrap();
        if got.precision != precision || got.recall != recall || got.f1 != f1 {
            cls_mismatch += 1;
        }
    }

    let cases: Vec<RankCase> = (0..RANDOM_RANKER_CASES)
        .map(|u| {
            let mut items: Vec<usize> = (0..20).collect();
            items.shuffle(&mut rng);
            let positive = items[rng.random_range(0..20)];
            RankCase {
                history: vec![],
                set: CandidateSet {
                    user: u,
                    positive,
                    negatives: items.iter().copied().filter(|&i| i != positive).collect(),
                    items,
                },
            }
        })
        .collect();
    let report = eval_topk("random", &RandomRanker { seed: 22 }, &cases).unwrap();
    let p = 1.0 / 20.0;
    let sigma = (p * (1.0 - p) / RANDOM_RANKER_CASES as f64).sqrt();
    let random_ok = (report.hr_at_1 - p).abs() <= 3.0 * sigma;
    let elapsed = start.elapsed();
    within("metric oracles", elapsed, Duration::from_secs(60))?;
    check(
        hr_mismatch == 0 && cls_mismatch == 0 && random_ok,
        format!(
            "{METRIC_CASES} cases: {hr_mismatch} HR@K and {cls_mismatch} P/R/F1 mismatches; random HR@1 {:.4} vs 0.05 +- {:.4} ({elapsed:?})",
            report.hr_at_1,
            3.0 * sigma
        ),
    )
}

fn e2e_specs() -> Vec<(Variant, f64)> {
    vec![
        (Variant::Full, E2E_GAMMA),
        (Variant::Full, 0.0),
        (Variant::WoEt, E2E_GAMMA),
    ]
}

fn mean_of<'a>(reports: impl Iterator<Item = &'a f64>) -> f64 {
    let v: Vec<f64> = reports.copied().collect();
    mean_sd(&v).0
}

fn end_to_end(grid: &mut Option<GridResult>) -> Verdict {
    let start = Instant::now();
    let config = e2e_config();
    let p = e2e_prepared(&config);
    let result = run_grid(&p, &config, &e2e_specs(), &E2E_SEEDS).unwrap();
    let elapsed = start.elapsed();

    let full = result.select(Variant::Full, E2E_GAMMA);
    let zero = result.select(Variant::Full, 0.0);
    let text = result.select(Variant::WoEt, E2E_GAMMA);
    let drs_full = mean_of(full.iter().map(|r| &r.drs.hr_at_1));
    let drs_only = mean_of(result.drs_only.iter().map(|r| &r.hr_at_1));
    let llm_full = mean_of(full.iter().map(|r| &r.llm.hr_at_1));
    let llm_text = mean_of(text.iter().map(|r| &r.llm.hr_at_1));
    let align: Vec<f64> = full.iter().filter_map(|r| r.user_alignment).collect();
    let align_zero: Vec<f64> = zero.iter().filter_map(|r| r.user_alignment).collect();
    let complete = align.len() == E2E_SEEDS.len() && align_zero.len() == E2E_SEEDS.len();
    let (align, align_zero) = (mean_sd(&align).0, mean_sd(&align_zero).0);

    let a = drs_full >= drs_only;
    let b = llm_full >= llm_text;
    let c = complete && align < align_zero;
    let timely = elapsed <= Duration::from_secs(30 * 60);
    *grid = Some(result);
    let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
    check(
        a && b && c && timely,
        format!(
            "(a) BDLM-drs {drs_full:.3} vs DRS-only {drs_only:.3} {}; (b) BDLM-llm {llm_full:.3} vs wo_ET {llm_text:.3} {}; (c) MSE gamma {E2E_GAMMA} {align:.3e} vs gamma 0 {align_zero:.3e} {}; {} seeds in {elapsed:?} {}",
            mark(a),
            mark(b),
            mark(c),
            E2E_SEEDS.len(),
            mark(timely),
        ),
    )
}

fn determinism(first: &Option<GridResult>) -> Verdict {
    let start = Instant::now();
    let seed = E2E_SEEDS[0];
    let spec = (Variant::Full, E2E_GAMMA);
    let config = e2e_config();
    let reference = match first {
        Some(grid) => grid.clone(),
        None => run_grid(&e2e_prepared(&config), &config, &[spec], &[seed]).unwrap(),
    };
    let again = run_grid(&e2e_prepared(&config), &config, &[spec], &[seed]).unwrap();
    let pick = |g: &GridResult| {
        let run = g
            .runs
            .iter()
            .find(|r| r.seed == seed && r.variant == spec.0 && r.gamma == spec.1)
            .unwrap();
        let idx = g
            .runs
            .iter()
            .filter(|r| r.variant == spec.0 && r.gamma == spec.1)
            .position(|r| r.seed == seed);
        let alone = &g.drs_only[idx.unwrap()];
        (
            serde_json::to_vec(run).unwrap(),
            serde_json::to_vec(alone).unwrap(),
        )
    };
    let (a, b) = (pick(&reference), pick(&again));
    let elapsed = start.elapsed();
    within("determinism", elapsed, Duration::from_secs(35 * 60))?;
    check(
        a == b,
        format!(
            "seed {seed} {} gamma {}: run report {} bytes {}, DRS-only report {} ({elapsed:?})",
            spec.0,
            spec.1,
            a.0.len(),
            if a.0 == b.0 { "identical" } else { "differ" },
            if a.1 == b.1 { "identical" } else { "differ" },
        ),
    )
}

// ------------------------------------------------------------------ main

fn report(name: &str, verdict: std::thread::Result<Verdict>) -> bool {
    let (ok, detail) = match verdict {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            (false, format!("panicked: {msg}"))
        }
    };
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn main() -> ExitCode {
    let quick: [(&str, fn() -> Verdict); 8] = [
        ("sparsity reproduction", sparsity),
        ("vocabulary arithmetic", vocabulary),
        ("preload exactness", preload),
        ("gradient suite", gradients),
        ("mutual-loss protocol", mutual_protocol),
        ("gamma decoupling", gamma_decoupling),
        ("overfit check", overfit),
        ("metric oracle equivalence", metrics),
    ];
    let mut passed = 0;
    let mut total = 0;
    for (name, f) in quick {
        total += 1;
        passed += report(name, catch_unwind(f)) as usize;
    }
    let mut grid = None;
    total += 1;
    passed += report(
        "synthetic end-to-end",
        catch_unwind(AssertUnwindSafe(|| end_to_end(&mut grid))),
    ) as usize;
    total += 1;
    passed += report(
        "determinism",
        catch_unwind(AssertUnwindSafe(|| determinism(&grid))),
    ) as usize;
    println!("{passed}/{total} criteria passed");
    if passed == total {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
