use std::sync::Arc;

use abrlab::env::SessionConfig;
use abrlab::quality::QualityModel;
use abrlab::sac::{train, SacAgent, SacConfig, StreamingEnv, UpdateStats};
use abrlab::trace::synthetic_trace;

#[test]
fn losses_stay_finite_over_ten_thousand_steps() {
    let traces: Vec<_> = (0..6)
        .map(|i| {
            Arc::new(synthetic_trace(
                &format!("f{i}"),
                0.5 + 2.0 * i as f64,
                0.3 + 0.1 * i as f64,
                400,
                i,
            ))
        })
        .collect();
    let quality = Arc::new(QualityModel::default());
    let session = SessionConfig::default();
    let config = SacConfig {
        train_steps: 10_000,
        eval_interval: 2_500,
        warmup_steps: 500,
        hidden: vec![64, 64],
        ..SacConfig::default()
    };
    let mut agent = SacAgent::new(session.observation_len(quality.levels()), quality.levels(), config, 4).unwrap();
    let mut env = StreamingEnv::new(session, quality, traces).unwrap();
    let mut updates = 0;
    let mut hook = |step: usize, s: &UpdateStats| {
        updates += 1;
        let values = [s.critic_loss.0, s.critic_loss.1, s.actor_loss, s.entropy, s.beta];
        assert!(values.iter().all(|v| v.is_finite()), "step {step}: {values:?}");
        assert!(s.beta > 0.0);
    };
    let curve = train(&mut agent, &mut env, &mut |_| Ok(0.0), 4, Some(&mut hook)).unwrap();
    assert_eq!(updates, 10_000 - 499);
    assert_eq!(curve.len(), 4);
    assert!(agent
        .policy(&vec![0.0; agent.obs_dim()])
        .unwrap()
        .iter()
        .all(|p| p.is_finite()));
}
