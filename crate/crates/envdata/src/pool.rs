use vmc_core::Frame;

use crate::{EnvError, EnvSpec, Environment, StepResult};

/// Independent environment instances stepped in lockstep, one thread each.
pub struct EnvPool<E> {
    envs: Vec<E>,
}

impl<E: Environment> EnvPool<E> {
    pub fn new(envs: Vec<E>) -> Result<Self, EnvError> {
        if envs.is_empty() {
            return Err(EnvError::InvalidState("empty environment pool".into()));
        }
        let spec = envs[0].spec();
        if envs.iter().any(|e| e.spec() != spec) {
            return Err(EnvError::InvalidState("pool environments disagree on their spec".into()));
        }
        Ok(Self { envs })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn spec(&self) -> EnvSpec {
        self.envs[0].spec()
    }

    pub fn envs(&self) -> &[E] {
        &self.envs
    }

    pub fn envs_mut(&mut self) -> &mut [E] {
        &mut self.envs
    }

    pub fn reset(&mut self, seeds: &[u64]) -> Vec<Result<Frame, EnvError>> {
        assert_eq!(seeds.len(), self.envs.len(), "one seed per environment");
        self.map(|env, i| env.reset(seeds[i]))
    }

    /// Steps every environment whose action is `Some`; `None` leaves it idle.
    pub fn step(&mut self, actions: &[Option<Vec<f32>>]) -> Vec<Option<Result<StepResult, EnvError>>> {
        assert_eq!(actions.len(), self.envs.len(), "one action slot per environment");
        self.map(|env, i| actions[i].as_ref().map(|a| env.step(a)))
    }

    fn map<R: Send>(&mut self, f: impl Fn(&mut E, usize) -> R + Sync) -> Vec<R> {
        if self.envs.len() == 1 {
            return vec![f(&mut self.envs[0], 0)];
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = self
                .envs
                .iter_mut()
                .enumerate()
                .map(|(i, env)| {
                    let f = &f;
                    s.spawn(move || f(env, i))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("environment thread panicked")).collect()
        })
    }
}
