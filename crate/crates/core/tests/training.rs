use gramlearn::agent::input_width;
use gramlearn::atoms::ActionKind;
use gramlearn::checkpoint;
use gramlearn::config::RunConfig;
use gramlearn::data::gen_simple_json;
use gramlearn::nn::DenseResNet;
use gramlearn::trainer::{train_step, Memory, StepConfig, Trainer};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> RunConfig {
    RunConfig::default()
        .parse_overrides("n_emb = 8\ncontext_atoms = 0\nepochs = 3\nround_size = 4\nbatch_size = 8")
        .unwrap()
}

fn fresh() -> Trainer {
    Trainer::new(config(), &[b"{a}"]).unwrap()
}

fn random_memories(n: usize, paired: bool, seed: u64) -> Vec<Memory> {
    let width = input_width(8, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let window = |rng: &mut ChaCha8Rng| (0..width).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>();
    (0..n)
        .map(|_| Memory {
            chosen_window: window(&mut rng),
            chosen_kind: ActionKind::BINARY[rng.random_range(0..5)],
            better_window: paired.then(|| window(&mut rng)),
            better_kind: paired.then(|| ActionKind::BINARY[rng.random_range(0..5)]),
            value: rng.random_range(-3.0..3.0),
        })
        .collect()
}

fn step(t: &mut Trainer, batch: &[&Memory], lr: f64) -> (f64, f64) {
    let cfg = StepConfig {
        lr_critic: lr,
        lr_actor: lr,
        beta: 0.5,
        epsilon: 0.1,
    };
    train_step(&mut t.critic, &mut t.actor, batch, &mut t.opt_critic, &mut t.opt_actor, &cfg).unwrap()
}

fn params(net: &DenseResNet<f32>) -> Vec<Vec<f32>> {
    net.parameters().into_iter().map(<[f32]>::to_vec).collect()
}

fn logits(net: &DenseResNet<f32>, window: &[f32]) -> Vec<f32> {
    let x = Array2::from_shape_vec((1, window.len()), window.to_vec()).unwrap();
    net.infer(&x).unwrap().q.row(0).to_vec()
}

#[test]
fn unpaired_batch_leaves_the_actor_alone() {
    let mut t = fresh();
    let mems = random_memories(8, false, 1);
    let batch: Vec<&Memory> = mems.iter().collect();
    let before = params(&t.actor);
    let (_, policy) = step(&mut t, &batch, 1e-2);
    assert_eq!(policy, 0.0);
    assert_eq!(params(&t.actor), before);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let mut t = fresh();
    let mems = random_memories(8, true, 2);
    let batch: Vec<&Memory> = mems.iter().collect();
    let (critic, actor) = (params(&t.critic), params(&t.actor));
    step(&mut t, &batch, 0.0);
    assert_eq!(params(&t.critic), critic);
    assert_eq!(params(&t.actor), actor);
}

#[test]
fn policy_step_widens_the_gap_toward_the_better_action() {
    let mut t = fresh();
    let (chosen, better) = (ActionKind::Merge, ActionKind::AnchorLeft);
    // make the critic prefer the better kind everywhere
    t.critic.action_head_mut().bias[better.index()] = 5.0;
    t.critic.action_head_mut().bias[chosen.index()] = -5.0;
    let mut mems = random_memories(4, true, 3);
    for m in &mut mems {
        m.chosen_kind = chosen;
        m.better_kind = Some(better);
    }
    let gap = |t: &Trainer| {
        mems.iter()
            .map(|m| {
                let a = logits(&t.actor, &m.chosen_window)[chosen.index()];
                let b = logits(&t.actor, m.better_window.as_ref().unwrap())[better.index()];
                (b - a) as f64
            })
            .sum::<f64>()
    };
    let before = gap(&t);
    let batch: Vec<&Memory> = mems.iter().collect();
    let (_, policy) = step(&mut t, &batch, 1e-3);
    assert!(policy < 0.0, "policy loss {policy}");
    assert!(gap(&t) > before, "gap {} -> {}", before, gap(&t));
}

#[test]
fn critic_overfits_a_small_set() {
    let mut t = fresh();
    let mems = random_memories(8, false, 4);
    let batch: Vec<&Memory> = mems.iter().collect();
    let mut last = f64::INFINITY;
    for i in 0..2000 {
        last = step(&mut t, &batch, 3e-3).0;
        if last < 1e-3 {
            eprintln!("critic loss {last:.2e} after {} steps", i + 1);
            return;
        }
    }
    panic!("critic loss still {last} after 2000 steps");
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let corpus = gen_simple_json(24, 5).unwrap();
    let train = corpus.train();
    let mut straight = Trainer::new(config(), &train).unwrap();
    let full = straight.run(&train, |_, _| Ok(())).unwrap();

    let mut first = Trainer::new(config(), &train).unwrap();
    let mut rows = vec![first.run_epoch(&train).unwrap()];
    let mut resumed = checkpoint::decode(&checkpoint::encode(&first)).unwrap();
    rows.extend(resumed.run(&train, |_, _| Ok(())).unwrap());

    assert_eq!(rows, full);
    assert_eq!(checkpoint::encode(&resumed), checkpoint::encode(&straight));
}
