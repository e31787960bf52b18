//! Named policies selected at runtime.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{bb_policy, constant_lookahead, mpc_policy, rate_policy, BbParams, MpcParams};
use crate::env::{Observation, SessionConfig};
use crate::error::{Error, Result};
use crate::quality::QualityModel;
use crate::sac::{ActionMode, SacAgent};

pub trait Policy {
    fn name(&self) -> &str;
    /// Called at the start of every session.
    fn reset(&mut self, _seed: u64) {}
    fn select(&mut self, obs: &Observation) -> Result<usize>;
}

/// Everything a policy constructor may need.
#[derive(Clone)]
pub struct PolicyContext {
    pub quality: Arc<QualityModel>,
    pub session: SessionConfig,
    pub bb: BbParams,
    pub mpc: MpcParams,
    pub rate_window: usize,
    pub seed: u64,
    pub agent: Option<Arc<SacAgent>>,
    /// Level used by the `fixed` policy.
    pub fixed_level: usize,
}

impl PolicyContext {
    pub fn new(quality: Arc<QualityModel>, session: SessionConfig) -> Self {
        Self {
            quality,
            session,
            bb: BbParams::default(),
            mpc: MpcParams::default(),
            rate_window: 5,
            seed: 0,
            agent: None,
            fixed_level: 0,
        }
    }
}

pub type PolicyFactory = fn(&PolicyContext) -> Result<Box<dyn Policy>>;

pub struct PolicyRegistry {
    factories: BTreeMap<String, PolicyFactory>,
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("bb", |ctx| {
            ctx.bb.validate(ctx.session.max_buffer)?;
            Ok(Box::new(BufferBased { params: ctx.bb }))
        });
        r.register("rate", |ctx| {
            Ok(Box::new(RateBased {
                window: ctx.rate_window.max(1),
                quality: ctx.quality.clone(),
            }))
        });
        r.register("mpc", |ctx| Ok(Box::new(Mpc::new(ctx)?)));
        r.register("random", |ctx| {
            Ok(Box::new(RandomPolicy {
                levels: ctx.quality.levels(),
                rng: ChaCha8Rng::seed_from_u64(ctx.seed),
            }))
        });
        r.register("fixed", |ctx| {
            ctx.quality.level(ctx.fixed_level)?;
            Ok(Box::new(Fixed { level: ctx.fixed_level }))
        });
        r.register("sac", |ctx| {
            let agent = ctx
                .agent
                .clone()
                .ok_or_else(|| Error::Policy("sac needs a trained checkpoint".into()))?;
            let want = ctx.session.observation_len(ctx.quality.levels());
            if agent.obs_dim() != want || agent.action_count() != ctx.quality.levels() {
                return Err(Error::Policy(format!(
                    "checkpoint expects {} inputs and {} actions, session gives {want} and {}",
                    agent.obs_dim(),
                    agent.action_count(),
                    ctx.quality.levels()
                )));
            }
            Ok(Box::new(SacPolicy { agent }))
        });
        r
    }

    /// Adds or replaces a policy under `name`.
    pub fn register(&mut self, name: &str, factory: PolicyFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, ctx: &PolicyContext) -> Result<Box<dyn Policy>> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::Policy(format!("unknown policy `{name}` (known: {})", self.names().join(", "))))?;
        factory(ctx)
    }
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

struct BufferBased {
    params: BbParams,
}

impl Policy for BufferBased {
    fn name(&self) -> &str {
        "bb"
    }

    fn select(&mut self, obs: &Observation) -> Result<usize> {
        Ok(bb_policy(obs, &self.params))
    }
}

struct RateBased {
    window: usize,
    quality: Arc<QualityModel>,
}

impl Policy for RateBased {
    fn name(&self) -> &str {
        "rate"
    }

    fn select(&mut self, obs: &Observation) -> Result<usize> {
        Ok(rate_policy(obs, self.window, &self.quality))
    }
}

struct Mpc {
    params: MpcParams,
    quality: Arc<QualityModel>,
    chunk_duration: f64,
    lookahead: Vec<Vec<f64>>,
}

impl Mpc {
    fn new(ctx: &PolicyContext) -> Result<Self> {
        let levels = ctx.quality.levels() as f64;
        if levels.powi(ctx.mpc.horizon as i32) > ctx.mpc.enumeration_cap as f64 {
            return Err(Error::Config(format!(
                "mpc horizon {} over {} levels exceeds the enumeration cap {}; shrink the horizon",
                ctx.mpc.horizon, levels, ctx.mpc.enumeration_cap
            )));
        }
        Ok(Self {
            params: ctx.mpc,
            quality: ctx.quality.clone(),
            chunk_duration: ctx.session.chunk_duration,
            lookahead: constant_lookahead(&ctx.quality, ctx.mpc.horizon.max(1)),
        })
    }
}

impl Policy for Mpc {
    fn name(&self) -> &str {
        "mpc"
    }

    fn select(&mut self, obs: &Observation) -> Result<usize> {
        mpc_policy(obs, &self.params, &self.quality, self.chunk_duration, &self.lookahead)
    }
}

struct RandomPolicy {
    levels: usize,
    rng: ChaCha8Rng,
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn select(&mut self, _obs: &Observation) -> Result<usize> {
        Ok(self.rng.random_range(0..self.levels))
    }
}

struct Fixed {
    level: usize,
}

impl Policy for Fixed {
    fn name(&self) -> &str {
        "fixed"
    }

    fn select(&mut self, _obs: &Observation) -> Result<usize> {
        Ok(self.level)
    }
}

/// Greedy (argmax) actions from a trained agent.
pub struct SacPolicy {
    pub agent: Arc<SacAgent>,
}

impl Policy for SacPolicy {
    fn name(&self) -> &str {
        "sac"
    }

    fn select(&mut self, obs: &Observation) -> Result<usize> {
        // greedy selection never touches the rng
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.agent.select_action(&obs.to_vector(), ActionMode::Greedy, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> PolicyContext {
        PolicyContext::new(Arc::new(QualityModel::default()), SessionConfig::default())
    }

    #[test]
    fn registry_lists_and_builds() {
        let r = PolicyRegistry::with_builtins();
        assert_eq!(r.names(), vec!["bb", "fixed", "mpc", "random", "rate", "sac"]);
        for name in ["bb", "rate", "mpc", "random", "fixed"] {
            assert_eq!(r.build(name, &ctx()).unwrap().name(), name);
        }
        assert!(r.build("sac", &ctx()).is_err());
        let err = r.build("nope", &ctx()).err().unwrap().to_string();
        assert!(err.contains("unknown policy"));
    }

    #[test]
    fn mpc_cap_rejected_at_build() {
        let mut c = ctx();
        c.mpc.horizon = 9;
        let err = PolicyRegistry::with_builtins()
            .build("mpc", &c)
            .err()
            .unwrap()
            .to_string();
        assert!(err.contains("shrink the horizon"), "{err}");
    }

    #[test]
    fn custom_registration() {
        struct Top;
        impl Policy for Top {
            fn name(&self) -> &str {
                "top"
            }
            fn select(&mut self, obs: &Observation) -> Result<usize> {
                Ok(obs.next_sizes.len() - 1)
            }
        }
        let mut r = PolicyRegistry::empty();
        r.register("top", |_| Ok(Box::new(Top)));
        assert_eq!(r.names(), vec!["top"]);
        assert!(r.build("top", &ctx()).is_ok());
    }

    #[test]
    fn random_is_seeded() {
        let r = PolicyRegistry::with_builtins();
        let obs = crate::env::Session::reset(
            SessionConfig::default(),
            Arc::new(QualityModel::default()),
            Arc::new(crate::trace::synthetic_trace("t", 3.0, 0.2, 60, 1)),
            0.0,
            0,
        )
        .unwrap()
        .1;
        let mut a = r.build("random", &ctx()).unwrap();
        let mut b = r.build("random", &ctx()).unwrap();
        let xs: Vec<usize> = (0..20).map(|_| a.select(&obs).unwrap()).collect();
        let ys: Vec<usize> = (0..20).map(|_| b.select(&obs).unwrap()).collect();
        assert_eq!(xs, ys);
        assert!(xs.iter().all(|&x| x < 6));
    }
}
