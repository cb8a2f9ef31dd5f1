use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iwm_core::behavior::lambda_returns;
use iwm_core::envs::{make_env, tiger, Action, InformationBinding};
use iwm_core::oracle::{belief_expectimax, brute_force_value};
use iwm_core::trainer::{Agent, TrainConfig};
use iwm_core::worldmodel::{Window, WindowEntry};

fn config() -> TrainConfig {
    TrainConfig {
        env: "tmaze-4".into(),
        window: 8,
        horizon: 8,
        batch: 8,
        z_dim: 32,
        hidden: 32,
        groups: 4,
        classes: 4,
        behavior_hidden: 32,
        ..TrainConfig::default()
    }
}

/// Windows of uniformly random play, one per step.
fn random_windows(count: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<Window> {
    let mut env = make_env("tmaze-4", InformationBinding::Informed).unwrap();
    let space = env.descriptor().action_space.clone();
    let mut windows = Vec::new();
    while windows.len() < count {
        let reset = env.reset(rng.random());
        let mut episode = vec![WindowEntry {
            prev_action: space.null(),
            prev_reward: 0.0,
            information: reset.information,
            observation: reset.observation,
            continuation: true,
            valid: true,
        }];
        loop {
            let action = Action::Discrete(rng.random_range(0..3));
            let step = env.step(&action).unwrap();
            episode.push(WindowEntry {
                prev_action: space.encode(&action).unwrap(),
                prev_reward: step.reward,
                information: step.information,
                observation: step.observation,
                continuation: step.continuation,
                valid: true,
            });
            if episode.len() >= len {
                windows.push(episode[episode.len() - len..].to_vec());
            }
            if !step.continuation {
                break;
            }
        }
    }
    windows.truncate(count);
    windows
}

fn training(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = config();
    let env = make_env(&cfg.env, cfg.binding()).unwrap();
    let mut agent = Agent::new(&cfg, env.descriptor().clone(), &mut rng).unwrap();
    let windows = random_windows(cfg.batch, cfg.window, &mut rng);
    let refs: Vec<&Window> = windows.iter().collect();
    c.bench_function("train_step tmaze-4 N=8 W=8", |b| {
        b.iter(|| agent.train_step(black_box(&refs), &mut rng).unwrap())
    });

    let agent = Agent::new(&cfg, env.descriptor().clone(), &mut rng).unwrap();
    let obs = vec![0.0, 0.0, 1.0, 0.0, 0.0];
    c.bench_function("execution policy step", |b| {
        let mut state = agent.initial_state();
        b.iter(|| agent.act(&mut state, black_box(&obs), &mut rng).unwrap())
    });
}

fn returns(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cont = vec![0.99; 15];
    let v: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.bench_function("lambda_returns K=16", |b| {
        b.iter(|| lambda_returns(black_box(&r), &cont, &v, 0.997, 0.95).unwrap())
    });
}

fn oracles(c: &mut Criterion) {
    let pomdp = tiger();
    c.bench_function("belief expectimax tiger H=3", |b| {
        b.iter(|| belief_expectimax(black_box(&pomdp), 3).unwrap())
    });
    c.bench_function("history expectimax tiger H=3", |b| {
        b.iter(|| brute_force_value(black_box(&pomdp), 3).unwrap())
    });
}

criterion_group!(benches, training, returns, oracles);
criterion_main!(benches);
