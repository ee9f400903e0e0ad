use sidelink_core::{Action, BanditEnv, DdqnAgent, EpsilonSchedule, Environment, Hyperparams, Transition};

fn train_bandit(seed: u64, epochs: u64) -> (DdqnAgent, BanditEnv) {
    let mut env = BanditEnv::new([0.2, 0.4, 0.9, 0.6, 0.3]).unwrap();
    let hp = Hyperparams {
        hidden_sizes: vec![32, 32],
        epsilon: EpsilonSchedule::Linear { start: 1.0, min: 0.05, decay_steps: 2_000.0 },
        target_sync_period: 200,
        ..Hyperparams::default()
    };
    let mut agent = DdqnAgent::new(hp, seed).unwrap();
    for _ in 0..epochs {
        let s = env.reset();
        let a = agent.act(&s).unwrap();
        let r = env.step(a).unwrap();
        agent
            .observe(Transition { state: s, action: a, reward: r.reward, next_state: r.state, terminal: r.done })
            .unwrap();
    }
    (agent, env)
}

#[test]
fn greedy_policy_finds_the_best_arm() {
    for seed in 0..3 {
        let (agent, env) = train_bandit(seed, 4_000);
        let s = env.observe();
        let picks = (0..1000)
            .filter(|_| sidelink_core::agent::greedy_action(&agent.online, &s).unwrap() == env.best_action())
            .count();
        assert!(picks >= 950, "seed {seed}: {picks}/1000");
        assert_eq!(env.best_action(), Action::Sll28G);
    }
}
