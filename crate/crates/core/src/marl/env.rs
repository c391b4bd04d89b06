//! Cooperative focus-fire gridworld.
//!
//! `N` allies face `M` stationary enemies on a square grid. Attacks are
//! range-free; each surviving enemy hits back at its nearest attacker from the
//! current step, or at the nearest living ally when nobody attacked it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::episode::ChannelLayout;
use crate::error::{invalid, Result};

pub const NOOP: usize = 0;
/// Moves in the order north, south, east, west.
pub const NUM_MOVES: usize = 4;
/// First attack action id; attack on enemy `j` is `ATTACK_OFFSET + j`.
pub const ATTACK_OFFSET: usize = 1 + NUM_MOVES;

pub const DAMAGE_REWARD: f64 = 0.1;
pub const KILL_REWARD: f64 = 1.0;
pub const VICTORY_REWARD: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub num_allies: usize,
    pub num_enemies: usize,
    pub grid_size: usize,
    pub enemy_hp: u32,
    pub ally_hp: u32,
    pub enemy_damage: u32,
    pub episode_limit: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            num_allies: 3,
            num_enemies: 3,
            grid_size: 5,
            enemy_hp: 3,
            ally_hp: 4,
            enemy_damage: 1,
            episode_limit: 30,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_allies == 0 || self.num_enemies == 0 {
            return Err(invalid("environment needs at least one ally and one enemy"));
        }
        if self.grid_size < 2 {
            return Err(invalid("grid must be at least 2x2"));
        }
        if self.enemy_hp == 0 || self.ally_hp == 0 || self.episode_limit == 0 {
            return Err(invalid("hit points and episode limit must be positive"));
        }
        Ok(())
    }

    pub fn num_actions(&self) -> usize {
        ATTACK_OFFSET + self.num_enemies
    }

    /// Own x, y, hp, alive, then dx, dy, hp, alive for every enemy.
    pub fn obs_dim(&self) -> usize {
        4 + 4 * self.num_enemies
    }

    pub fn attack_target(&self, action: usize) -> Option<usize> {
        (action >= ATTACK_OFFSET && action < self.num_actions()).then(|| action - ATTACK_OFFSET)
    }

    /// Largest return any episode can collect.
    pub fn max_return(&self) -> f64 {
        VICTORY_REWARD
            + self.num_enemies as f64 * (KILL_REWARD + DAMAGE_REWARD * f64::from(self.enemy_hp))
    }

    pub fn layout(&self) -> Result<ChannelLayout> {
        ChannelLayout::new(self.num_allies, self.obs_dim(), self.num_actions(), self.episode_limit)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unit {
    pub x: usize,
    pub y: usize,
    pub hp: u32,
}

impl Unit {
    pub fn alive(&self) -> bool {
        self.hp > 0
    }

    fn distance(&self, other: &Unit) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

/// Per-step reward breakdown.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepOutcome {
    pub reward: f64,
    pub damage: u32,
    pub kills: u32,
    pub victory: bool,
    pub done: bool,
    /// Actions after dead allies were forced to noop.
    pub actions: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct FocusFireEnv {
    config: EnvConfig,
    allies: Vec<Unit>,
    enemies: Vec<Unit>,
    t: usize,
    done: bool,
}

impl FocusFireEnv {
    /// Place all units uniformly at random.
    pub fn new(config: EnvConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let g = config.grid_size;
        let mut place = |hp: u32| Unit {
            x: rng.random_range(0..g),
            y: rng.random_range(0..g),
            hp,
        };
        let allies = (0..config.num_allies).map(|_| place(config.ally_hp)).collect();
        let enemies = (0..config.num_enemies).map(|_| place(config.enemy_hp)).collect();
        Ok(Self::from_units(config, allies, enemies))
    }

    pub fn from_units(config: EnvConfig, allies: Vec<Unit>, enemies: Vec<Unit>) -> Self {
        Self {
            config,
            allies,
            enemies,
            t: 0,
            done: false,
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn allies(&self) -> &[Unit] {
        &self.allies
    }

    pub fn enemies(&self) -> &[Unit] {
        &self.enemies
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observe(&self, agent: usize) -> Vec<f64> {
        let mut o = vec![0.0; self.config.obs_dim()];
        let me = &self.allies[agent];
        if !me.alive() {
            return o;
        }
        let span = (self.config.grid_size - 1) as f64;
        o[0] = me.x as f64 / span;
        o[1] = me.y as f64 / span;
        o[2] = f64::from(me.hp) / f64::from(self.config.ally_hp);
        o[3] = 1.0;
        for (j, e) in self.enemies.iter().enumerate() {
            if !e.alive() {
                continue;
            }
            let base = 4 + 4 * j;
            o[base] = (e.x as f64 - me.x as f64) / span;
            o[base + 1] = (e.y as f64 - me.y as f64) / span;
            o[base + 2] = f64::from(e.hp) / f64::from(self.config.enemy_hp);
            o[base + 3] = 1.0;
        }
        o
    }

    pub fn observe_all(&self) -> Vec<Vec<f64>> {
        (0..self.config.num_allies).map(|a| self.observe(a)).collect()
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.done {
            return Err(invalid("step called on a finished episode"));
        }
        if actions.len() != self.config.num_allies {
            return Err(invalid(format!(
                "expected {} actions, got {}",
                self.config.num_allies,
                actions.len()
            )));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= self.config.num_actions()) {
            return Err(invalid(format!("action id {a} out of range")));
        }
        let actions: Vec<usize> = actions
            .iter()
            .zip(&self.allies)
            .map(|(&a, u)| if u.alive() { a } else { NOOP })
            .collect();

        let last = self.config.grid_size - 1;
        let mut attackers: Vec<Vec<usize>> = vec![Vec::new(); self.config.num_enemies];
        for (i, &a) in actions.iter().enumerate() {
            let u = &mut self.allies[i];
            match a {
                1 => u.y = (u.y + 1).min(last),
                2 => u.y = u.y.saturating_sub(1),
                3 => u.x = (u.x + 1).min(last),
                4 => u.x = u.x.saturating_sub(1),
                _ => {}
            }
            if let Some(j) = self.config.attack_target(a) {
                attackers[j].push(i);
            }
        }

        let mut out = StepOutcome::default();
        for (j, who) in attackers.iter().enumerate() {
            let e = &mut self.enemies[j];
            for _ in who {
                if e.hp > 0 {
                    e.hp -= 1;
                    out.damage += 1;
                    if e.hp == 0 {
                        out.kills += 1;
                    }
                }
            }
        }

        // Enemies killed this step do not retaliate.
        let mut incoming = vec![0u32; self.config.num_allies];
        for (j, e) in self.enemies.iter().enumerate() {
            if !e.alive() {
                continue;
            }
            let pool: Vec<usize> = if attackers[j].is_empty() {
                (0..self.allies.len()).filter(|&i| self.allies[i].alive()).collect()
            } else {
                attackers[j].clone()
            };
            if let Some(&target) = pool.iter().min_by_key(|&&i| (self.allies[i].distance(e), i)) {
                incoming[target] += self.config.enemy_damage;
            }
        }
        for (u, dmg) in self.allies.iter_mut().zip(incoming) {
            u.hp = u.hp.saturating_sub(dmg);
        }

        self.t += 1;
        let enemies_left = self.enemies.iter().any(Unit::alive);
        let allies_left = self.allies.iter().filter(|u| u.alive()).count();
        out.victory = !enemies_left;
        out.reward = DAMAGE_REWARD * f64::from(out.damage) + KILL_REWARD * f64::from(out.kills);
        if out.victory {
            out.reward += VICTORY_REWARD * allies_left as f64 / self.config.num_allies as f64;
        }
        out.done = out.victory || allies_left == 0 || self.t >= self.config.episode_limit;
        self.done = out.done;
        out.actions = actions;
        Ok(out)
    }
}
