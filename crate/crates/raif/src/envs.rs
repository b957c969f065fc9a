//! Built-in deterministic pixel environments with sparse rewards, success
//! indicators, and privileged-state scripted experts for seed data.
//!
//! Rendering is a pure function of the privileged state: dark background,
//! light objects, nearest-pixel rasterization, row-major with the origin at
//! the top-left. Observations are CHW float tensors in [0, 1] with all three
//! channels carrying the same grayscale value.

use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

pub trait Env: Send {
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepResult, String>;
    fn action_dim(&self) -> usize;
    fn img_hw(&self) -> usize;
    fn t_max(&self) -> usize;
    /// Privileged-state controller used only for seed-data collection.
    fn expert_action(&self) -> Vec<f64>;
    fn name(&self) -> &'static str;
}

pub fn make_env(name: &str, img_hw: usize) -> Result<Box<dyn Env>, String> {
    match name {
        "mountain_car" => Ok(Box::new(MountainCar::new(img_hw))),
        "reacher" => Ok(Box::new(Reacher::new(img_hw))),
        other => Err(format!(
            "unknown environment '{other}' (expected mountain_car or reacher)"
        )),
    }
}

// ---- shared raster helpers -------------------------------------------------

struct Canvas {
    hw: usize,
    /// Single grayscale plane; expanded to 3 channels on output.
    px: Vec<f64>,
}

impl Canvas {
    fn new(hw: usize) -> Self {
        Self {
            hw,
            px: vec![0.0; hw * hw],
        }
    }

    fn set(&mut self, row: i64, col: i64, v: f64) {
        if row >= 0 && col >= 0 && (row as usize) < self.hw && (col as usize) < self.hw {
            self.px[row as usize * self.hw + col as usize] = v;
        }
    }

    fn block3(&mut self, row: i64, col: i64, v: f64) {
        for dr in -1..=1 {
            for dc in -1..=1 {
                self.set(row + dr, col + dc, v);
            }
        }
    }

    fn into_chw(self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.px.len());
        for _ in 0..3 {
            out.extend_from_slice(&self.px);
        }
        out
    }
}

fn to_px(frac: f64, size: usize) -> i64 {
    (frac * (size - 1) as f64).round() as i64
}

// ---- mountain car ----------------------------------------------------------

pub const MC_MIN_POS: f64 = -1.2;
pub const MC_MAX_POS: f64 = 0.6;
pub const MC_MAX_SPEED: f64 = 0.07;
pub const MC_FORCE: f64 = 0.0015;
pub const MC_GRAVITY: f64 = 0.0025;
pub const MC_GOAL: f64 = 0.45;

/// One physics update, exposed for oracle checks:
/// `v' = clamp(v + force*a - gravity*cos(3p)); p' = clamp(p + v')`.
pub fn mountain_car_dynamics(p: f64, v: f64, a: f64) -> (f64, f64) {
    let a = a.clamp(-1.0, 1.0);
    let v1 = (v + MC_FORCE * a - MC_GRAVITY * (3.0 * p).cos()).clamp(-MC_MAX_SPEED, MC_MAX_SPEED);
    let p1 = (p + v1).clamp(MC_MIN_POS, MC_MAX_POS);
    (p1, v1)
}

pub struct MountainCar {
    pub position: f64,
    pub velocity: f64,
    pub steps: usize,
    done: bool,
    img_hw: usize,
}

impl MountainCar {
    pub fn new(img_hw: usize) -> Self {
        Self {
            position: -0.5,
            velocity: 0.0,
            steps: 0,
            done: true,
            img_hw,
        }
    }

    fn hill_row(&self, p: f64) -> i64 {
        // hill height y = 0.45 sin(3p) + 0.55, origin top-left
        let y = 0.45 * (3.0 * p).sin() + 0.55;
        to_px(1.0 - y, self.img_hw)
    }

    fn col(&self, p: f64) -> i64 {
        to_px((p - MC_MIN_POS) / (MC_MAX_POS - MC_MIN_POS), self.img_hw)
    }

    pub fn render(&self) -> Vec<f64> {
        let hw = self.img_hw;
        let mut canvas = Canvas::new(hw);
        // hill curve: 1-px light-gray polyline with vertical gap fill
        let mut prev_row: Option<i64> = None;
        for x in 0..hw as i64 {
            let p = MC_MIN_POS + (MC_MAX_POS - MC_MIN_POS) * x as f64 / (hw - 1) as f64;
            let row = self.hill_row(p);
            if let Some(pr) = prev_row {
                let (lo, hi) = if pr < row { (pr + 1, row) } else { (row, pr - 1) };
                for r in lo..=hi {
                    canvas.set(r, x, 0.5);
                }
            }
            canvas.set(row, x, 0.5);
            prev_row = Some(row);
        }
        // goal flag: 1x5 white column rising from the curve at the goal
        let gc = self.col(MC_GOAL);
        let gr = self.hill_row(MC_GOAL);
        for dr in 0..5 {
            canvas.set(gr - dr, gc, 1.0);
        }
        // car: 3x3 white block at its curve point
        let cc = self.col(self.position);
        let cr = self.hill_row(self.position);
        canvas.block3(cr, cc, 1.0);
        canvas.into_chw()
    }
}

impl Env for MountainCar {
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = Rng::stream(seed, "mountain-car-reset");
        self.position = rng.uniform_in(-0.6, -0.4);
        self.velocity = 0.0;
        self.steps = 0;
        self.done = false;
        self.render()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, String> {
        if self.done {
            return Err("mountain car: step after episode end".into());
        }
        if action.len() != 1 {
            return Err("mountain car expects a 1-d action".into());
        }
        let (p1, v1) = mountain_car_dynamics(self.position, self.velocity, action[0]);
        self.position = p1;
        self.velocity = v1;
        self.steps += 1;
        let success = p1 >= MC_GOAL;
        let reward = if success { 0.0 } else { -1.0 };
        self.done = success || self.steps >= self.t_max();
        Ok(StepResult {
            obs: self.render(),
            reward,
            done: self.done,
            success,
        })
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn img_hw(&self) -> usize {
        self.img_hw
    }

    fn t_max(&self) -> usize {
        200
    }

    fn expert_action(&self) -> Vec<f64> {
        // energy pumping: push along the current velocity
        vec![if self.velocity >= 0.0 { 1.0 } else { -1.0 }]
    }

    fn name(&self) -> &'static str {
        "mountain_car"
    }
}

// ---- reacher ---------------------------------------------------------------

pub const REACHER_STEP: f64 = 0.05;
pub const REACHER_RADIUS: f64 = 0.07;
pub const REACHER_MIN_SEP: f64 = 0.3;

/// Varied-goal pixel reacher: the agent block moves toward a goal block
/// resampled every episode; reward is sparse and the episode keeps running
/// after success.
pub struct Reacher {
    pub agent: [f64; 2],
    pub goal: [f64; 2],
    pub steps: usize,
    img_hw: usize,
}

impl Reacher {
    pub fn new(img_hw: usize) -> Self {
        Self {
            agent: [0.2, 0.2],
            goal: [0.8, 0.8],
            steps: 0,
            img_hw,
        }
    }

    pub fn distance(&self) -> f64 {
        let dx = self.agent[0] - self.goal[0];
        let dy = self.agent[1] - self.goal[1];
        (dx * dx + dy * dy).sqrt()
    }

    pub fn render(&self) -> Vec<f64> {
        let hw = self.img_hw;
        let mut canvas = Canvas::new(hw);
        // goal first, agent drawn over it
        canvas.block3(to_px(self.goal[1], hw), to_px(self.goal[0], hw), 0.5);
        canvas.block3(to_px(self.agent[1], hw), to_px(self.agent[0], hw), 1.0);
        canvas.into_chw()
    }
}

impl Env for Reacher {
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = Rng::stream(seed, "reacher-reset");
        loop {
            self.agent = [rng.uniform(), rng.uniform()];
            self.goal = [rng.uniform(), rng.uniform()];
            if self.distance() >= REACHER_MIN_SEP {
                break;
            }
        }
        self.steps = 0;
        self.render()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, String> {
        if self.steps >= self.t_max() {
            return Err("reacher: step after episode end".into());
        }
        if action.len() != 2 {
            return Err("reacher expects a 2-d action".into());
        }
        for i in 0..2 {
            self.agent[i] = (self.agent[i] + REACHER_STEP * action[i].clamp(-1.0, 1.0)).clamp(0.0, 1.0);
        }
        self.steps += 1;
        let success = self.distance() <= REACHER_RADIUS;
        let reward = if success { 0.0 } else { -1.0 };
        // the simulation continues after success; only the step cap ends it
        let done = self.steps >= self.t_max();
        Ok(StepResult {
            obs: self.render(),
            reward,
            done,
            success,
        })
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn img_hw(&self) -> usize {
        self.img_hw
    }

    fn t_max(&self) -> usize {
        100
    }

    fn expert_action(&self) -> Vec<f64> {
        vec![
            (4.0 * (self.goal[0] - self.agent[0])).clamp(-1.0, 1.0),
            (4.0 * (self.goal[1] - self.agent[1])).clamp(-1.0, 1.0),
        ]
    }

    fn name(&self) -> &'static str {
        "reacher"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mountain_car_dynamics_closed_form() {
        let (p1, v1) = mountain_car_dynamics(-0.5, 0.0, 1.0);
        let expected_v = 0.0015 - 0.0025 * (-1.5f64).cos();
        assert!((v1 - expected_v).abs() < 1e-15, "v1 = {v1}");
        assert!((v1 - 0.0013232).abs() < 1e-7);
        assert!((p1 - (-0.4986768)).abs() < 1e-7);
    }

    #[test]
    fn mountain_car_rewards_sparse_and_done_at_goal() {
        let mut env = MountainCar::new(32);
        env.reset(1);
        let r = env.step(&[0.3]).unwrap();
        assert_eq!(r.reward, -1.0);
        assert!(!r.success);
        // force the car next to the goal
        env.position = 0.449;
        env.velocity = 0.07;
        let r = env.step(&[1.0]).unwrap();
        assert_eq!(r.reward, 0.0);
        assert!(r.success);
        assert!(r.done);
        assert!(env.step(&[0.0]).is_err(), "step after done must be rejected");
    }

    #[test]
    fn mountain_car_reset_distribution_and_determinism() {
        let mut env = MountainCar::new(32);
        for seed in 0..100 {
            env.reset(seed);
            assert!((-0.6..=-0.4).contains(&env.position));
            assert_eq!(env.velocity, 0.0);
        }
        let a = env.reset(42);
        let b = env.reset(42);
        assert_eq!(a, b, "same seed must give a bitwise-identical observation");
    }

    #[test]
    fn mountain_car_render_has_car_flag_and_hill() {
        let mut env = MountainCar::new(32);
        env.reset(7);
        let obs = env.render();
        let whites = obs.iter().filter(|&&v| v == 1.0).count();
        let grays = obs.iter().filter(|&&v| v == 0.5).count();
        // 3x3 car + 5px flag on 3 channels, possibly overlapping
        assert!(whites >= 3 * (9 + 5) - 3 * 6, "whites = {whites}");
        assert!(grays >= 3 * 32, "grays = {grays}");
        assert_eq!(obs.len(), 3 * 32 * 32);
        // render is a pure function of state
        assert_eq!(env.render(), env.render());
    }

    #[test]
    fn mountain_car_expert_reaches_goal_within_cap() {
        for seed in 0..100 {
            let mut env = MountainCar::new(32);
            env.reset(seed);
            let mut solved = false;
            for _ in 0..env.t_max() {
                let a = env.expert_action();
                let r = env.step(&a).unwrap();
                if r.success {
                    solved = true;
                    break;
                }
                if r.done {
                    break;
                }
            }
            assert!(solved, "expert failed on seed {seed}");
        }
    }

    #[test]
    fn reacher_success_at_goal_and_continues_after() {
        let mut env = Reacher::new(32);
        env.reset(3);
        env.agent = env.goal;
        let r = env.step(&[0.0, 0.0]).unwrap();
        assert!(r.success);
        assert_eq!(r.reward, 0.0);
        assert!(!r.done, "reacher must keep running after success");
        // stepping away loses the sparse reward again
        let r = env.step(&[1.0, 1.0]).unwrap();
        let expected = env.distance() <= REACHER_RADIUS;
        assert_eq!(r.success, expected);
    }

    #[test]
    fn reacher_resets_respect_separation() {
        let mut env = Reacher::new(32);
        for seed in 0..1000 {
            env.reset(seed);
            assert!(env.distance() >= REACHER_MIN_SEP, "seed {seed}");
        }
    }

    #[test]
    fn reacher_expert_reaches_quickly() {
        for seed in 0..100 {
            let mut env = Reacher::new(32);
            env.reset(seed);
            let mut steps = 0;
            loop {
                let a = env.expert_action();
                assert!(a.iter().all(|&x| (-1.0..=1.0).contains(&x)));
                let r = env.step(&a).unwrap();
                steps += 1;
                if r.success {
                    break;
                }
                assert!(steps < 40, "expert too slow on seed {seed}");
            }
        }
    }

    #[test]
    fn reacher_episode_runs_to_cap() {
        let mut env = Reacher::new(32);
        env.reset(5);
        let mut n = 0;
        loop {
            let r = env.step(&[0.0, 0.0]).unwrap();
            n += 1;
            if r.done {
                break;
            }
        }
        assert_eq!(n, env.t_max());
        assert!(env.step(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn rewards_exactly_sparse() {
        let mut env = Reacher::new(32);
        env.reset(9);
        let mut rng = Rng::from_seed(10);
        for _ in 0..env.t_max() {
            let a = vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
            let r = env.step(&a).unwrap();
            assert!(r.reward == 0.0 || r.reward == -1.0);
            assert_eq!(r.reward == 0.0, r.success);
            if r.done {
                break;
            }
        }
    }
}
