//! Command-line entry point: `train`, `eval`, `seed-collect`, `inspect`, and
//! `plot` subcommands over the library. Exit codes: 0 success, 1 usage
//! error, 2 runtime abort. The `RAIF_OUT_DIR` environment variable overrides
//! `--out` wherever it applies.

use crate::config::{parse_config, render_config, TrainConfig};
use crate::envs::make_env;
use crate::metrics::{read_metrics, MetricEvent};
use crate::png;
use crate::replay::EpisodeRecord;
use crate::rng::Rng;
use crate::self_revision::{compute_preference_rates, EpisodeFlags};
use crate::trainer::{collect_seed_data, evaluate, run_training, Agent};
use crate::world_model::LatentState;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const USAGE: &str = "usage:
  raif train --config PATH [--seed N] [--out DIR]
  raif eval --checkpoint DIR --episodes N [--seed N]
  raif seed-collect --config PATH --steps N --out DIR
  raif inspect --checkpoint DIR --what {goal-images|recon|rho} --episode K [--out DIR]
  raif plot --metrics FILE --out FILE.svg [--series a,b,...]

RAIF_OUT_DIR overrides --out when set.";

fn usage_error(msg: &str) -> i32 {
    eprintln!("error: {msg}");
    eprintln!("{USAGE}");
    1
}

fn runtime_error(msg: &str) -> i32 {
    eprintln!("error: {msg}");
    2
}

/// Parses `--flag value` pairs; rejects unknown flags by listing valid ones.
fn parse_flags(
    args: &[String],
    valid: &[&str],
) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    let mut i = 0;
    while i < args.len() {
        let flag = &args[i];
        let Some(name) = flag.strip_prefix("--") else {
            return Err(format!("unexpected argument '{flag}'; flags are {}", valid.join(", ")));
        };
        if !valid.contains(&name) {
            return Err(format!("unknown flag '--{name}'; valid flags: {}", valid.join(", ")));
        }
        let value = args
            .get(i + 1)
            .ok_or_else(|| format!("flag '--{name}' is missing its value"))?;
        map.insert(name.to_string(), value.clone());
        i += 2;
    }
    Ok(map)
}

fn out_dir(flags: &BTreeMap<String, String>, default: &str) -> PathBuf {
    if let Ok(dir) = std::env::var("RAIF_OUT_DIR") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    flags
        .get("out")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(default))
}

pub fn dispatch(argv: &[String]) -> i32 {
    let Some(command) = argv.first() else {
        return usage_error("missing subcommand");
    };
    let rest = &argv[1..];
    match command.as_str() {
        "train" => cmd_train(rest),
        "eval" => cmd_eval(rest),
        "seed-collect" => cmd_seed_collect(rest),
        "inspect" => cmd_inspect(rest),
        "plot" => cmd_plot(rest),
        other => usage_error(&format!("unknown subcommand '{other}'")),
    }
}

fn load_config(flags: &BTreeMap<String, String>) -> Result<TrainConfig, String> {
    let path = flags
        .get("config")
        .ok_or("missing required flag '--config'")?;
    let text = std::fs::read_to_string(path).map_err(|e| format!("read {path}: {e}"))?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = flags.get("seed") {
        cfg.seed = seed.parse().map_err(|_| "flag '--seed' expects an integer")?;
    }
    Ok(cfg)
}

fn cmd_train(args: &[String]) -> i32 {
    let flags = match parse_flags(args, &["config", "seed", "out"]) {
        Ok(f) => f,
        Err(e) => return usage_error(&e),
    };
    let cfg = match load_config(&flags) {
        Ok(c) => c,
        Err(e) => return usage_error(&e),
    };
    let dir = out_dir(&flags, "raif-out");
    match run_training(&cfg, &dir) {
        Ok(summary) => {
            let tail_sr = summary.success_rate_tail(50);
            println!(
                "{}",
                serde_json::json!({
                    "env_steps": summary.env_steps,
                    "grad_steps": summary.grad_steps,
                    "episodes": summary.episodes,
                    "tail_success_rate": tail_sr,
                    "final_eval": summary.final_eval.map(|(acr, sr, st)| {
                        serde_json::json!({"acr": acr, "sr": sr, "stability": st})
                    }),
                    "out_dir": dir.display().to_string(),
                })
            );
            0
        }
        Err(e) => runtime_error(&e),
    }
}

fn cmd_eval(args: &[String]) -> i32 {
    let flags = match parse_flags(args, &["checkpoint", "episodes", "seed"]) {
        Ok(f) => f,
        Err(e) => return usage_error(&e),
    };
    let Some(ckpt) = flags.get("checkpoint") else {
        return usage_error("missing required flag '--checkpoint'");
    };
    let Some(episodes) = flags.get("episodes") else {
        return usage_error("missing required flag '--episodes'");
    };
    let episodes: usize = match episodes.parse() {
        Ok(n) => n,
        Err(_) => return usage_error("flag '--episodes' expects an integer"),
    };
    let seed: u64 = match flags.get("seed").map(|s| s.parse()) {
        Some(Ok(n)) => n,
        Some(Err(_)) => return usage_error("flag '--seed' expects an integer"),
        None => 0,
    };
    match Agent::load_checkpoint(Path::new(ckpt)) {
        Ok((agent, cfg, _)) => {
            let (acr, sr, stability) = evaluate(&agent, &cfg, episodes, seed);
            println!(
                "{}",
                serde_json::json!({"acr": acr, "sr": sr, "stability": stability})
            );
            0
        }
        Err(e) => runtime_error(&e),
    }
}

fn cmd_seed_collect(args: &[String]) -> i32 {
    let flags = match parse_flags(args, &["config", "steps", "out", "seed"]) {
        Ok(f) => f,
        Err(e) => return usage_error(&e),
    };
    let cfg = match load_config(&flags) {
        Ok(c) => c,
        Err(e) => return usage_error(&e),
    };
    let Some(steps) = flags.get("steps") else {
        return usage_error("missing required flag '--steps'");
    };
    let steps: u64 = match steps.parse() {
        Ok(n) => n,
        Err(_) => return usage_error("flag '--steps' expects an integer"),
    };
    let dir = out_dir(&flags, "raif-seed-data");
    let agent = match Agent::from_config(&cfg) {
        Ok(a) => a,
        Err(e) => return runtime_error(&e),
    };
    let mut env = match make_env(&cfg.env, cfg.img_hw) {
        Ok(e) => e,
        Err(e) => return runtime_error(&e),
    };
    match collect_seed_data(&agent, env.as_mut(), steps, cfg.seed) {
        Ok(episodes) => {
            if let Err(e) = std::fs::create_dir_all(&dir) {
                return runtime_error(&format!("create {dir:?}: {e}"));
            }
            for (i, ep) in episodes.iter().enumerate() {
                if let Err(e) = dump_episode(&dir, i, ep) {
                    return runtime_error(&e);
                }
            }
            println!(
                "{}",
                serde_json::json!({
                    "episodes": episodes.len(),
                    "steps": episodes.iter().map(|e| e.len()).sum::<usize>(),
                    "out_dir": dir.display().to_string(),
                })
            );
            0
        }
        Err(e) => runtime_error(&e),
    }
}

/// Writes one episode as `episode-NNN.bin` plus its manifest, using the
/// checkpoint binary conventions (little-endian f32, row-major).
fn dump_episode(dir: &Path, index: usize, ep: &EpisodeRecord) -> Result<(), String> {
    use std::fmt::Write as _;
    let t = ep.len();
    let file = format!("episode-{index:03}.bin");
    let mut blob: Vec<u8> = Vec::new();
    let mut manifest = String::new();
    let tensor = |name: &str, dims: &[usize], data: &[f32], manifest: &mut String, blob: &mut Vec<u8>| {
        let dims_s: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(manifest, "{name} f32 {} {} {file}", dims_s.join(","), blob.len());
        for &v in data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    };
    let hw = ((ep.obs_dim / 3) as f64).sqrt() as usize;
    let obs: Vec<f32> = ep.obs.iter().map(|&q| crate::replay::dequantize_obs(q) as f32).collect();
    tensor("obs", &[t, 3, hw, hw], &obs, &mut manifest, &mut blob);
    let actions: Vec<f32> = ep.actions.iter().map(|&a| a as f32).collect();
    tensor("actions", &[t, ep.action_dim], &actions, &mut manifest, &mut blob);
    let rewards: Vec<f32> = ep.rewards.iter().map(|&r| r as f32).collect();
    tensor("rewards", &[t], &rewards, &mut manifest, &mut blob);
    let expert: Vec<f32> = ep.expert.iter().map(|&p| p as u8 as f32).collect();
    tensor("expert", &[t], &expert, &mut manifest, &mut blob);
    let success: Vec<f32> = ep.success.iter().map(|&d| d as u8 as f32).collect();
    tensor("success", &[t], &success, &mut manifest, &mut blob);
    let continues: Vec<f32> = ep.continues.iter().map(|&c| c as f32).collect();
    tensor("continues", &[t], &continues, &mut manifest, &mut blob);
    let rho: Vec<f32> = ep
        .rho
        .as_ref()
        .map(|r| r.iter().map(|&x| x as f32).collect())
        .unwrap_or_default();
    tensor("rho", &[t], &rho, &mut manifest, &mut blob);

    std::fs::write(dir.join(&file), blob).map_err(|e| format!("write {file}: {e}"))?;
    std::fs::write(dir.join(format!("episode-{index:03}.manifest.txt")), manifest)
        .map_err(|e| format!("write manifest: {e}"))?;
    Ok(())
}

fn cmd_inspect(args: &[String]) -> i32 {
    let flags = match parse_flags(args, &["checkpoint", "what", "episode", "out"]) {
        Ok(f) => f,
        Err(e) => return usage_error(&e),
    };
    let Some(ckpt) = flags.get("checkpoint") else {
        return usage_error("missing required flag '--checkpoint'");
    };
    let what = match flags.get("what").map(String::as_str) {
        Some(w @ ("goal-images" | "recon" | "rho")) => w.to_string(),
        Some(other) => {
            return usage_error(&format!(
                "flag '--what' expects goal-images, recon, or rho (got '{other}')"
            ))
        }
        None => return usage_error("missing required flag '--what'"),
    };
    let episode: u64 = match flags.get("episode").map(|s| s.parse()) {
        Some(Ok(n)) => n,
        Some(Err(_)) => return usage_error("flag '--episode' expects an integer"),
        None => return usage_error("missing required flag '--episode'"),
    };
    let dir = out_dir(&flags, "raif-inspect");
    match inspect(Path::new(ckpt), &what, episode, &dir) {
        Ok(()) => 0,
        Err(e) => runtime_error(&e),
    }
}

/// Replays one evaluation episode (seeded by the episode index) through the
/// checkpointed agent and materializes the requested view of it.
fn inspect(ckpt: &Path, what: &str, episode: u64, dir: &Path) -> Result<(), String> {
    let (agent, cfg, _) = Agent::load_checkpoint(ckpt)?;
    let mut env = make_env(&cfg.env, cfg.img_hw)?;
    let mut latent_rng = Rng::stream(cfg.seed ^ episode, "inspect-latents");
    let zero_action = vec![0.0; env.action_dim()];

    // Roll one mean-action episode, keeping observations and both posteriors.
    let obs0 = env.reset(episode);
    let init = agent.wm.initial_state(&agent.store, &mut latent_rng);
    let (mut posterior, _) =
        agent
            .wm
            .observe_step(&agent.store, &init, &zero_action, &obs0, &mut latent_rng);
    let crspp_init = agent.crspp.initial_state(&agent.store, &mut latent_rng);
    let mut pref_state = agent
        .crspp
        .preference_step(&agent.store, &crspp_init, Some(&obs0), &mut latent_rng);

    let mut observations = vec![obs0];
    let mut wm_states: Vec<LatentState> = vec![posterior.clone()];
    let mut pref_states: Vec<LatentState> = vec![pref_state.clone()];
    let mut expert_flags = vec![false];
    let mut success_flags = vec![false];
    loop {
        let (action, _, _) =
            agent
                .ac
                .policy_forward(&agent.store, &posterior, &mut latent_rng, true);
        let step = env.step(&action)?;
        let (next, _) = agent.wm.observe_step(
            &agent.store,
            &posterior,
            &action,
            &step.obs,
            &mut latent_rng,
        );
        posterior = next;
        pref_state = agent
            .crspp
            .preference_step(&agent.store, &pref_state, Some(&step.obs), &mut latent_rng);
        observations.push(step.obs.clone());
        wm_states.push(posterior.clone());
        pref_states.push(pref_state.clone());
        expert_flags.push(false);
        success_flags.push(step.success);
        if step.done {
            break;
        }
    }

    match what {
        "rho" => {
            let k = success_flags.iter().any(|&d| d);
            let flags = EpisodeFlags::new(expert_flags, success_flags, k)?;
            let rho = compute_preference_rates(&flags, &agent.revision)?;
            println!("{}", serde_json::json!({ "episode": episode, "rho": rho }));
        }
        "recon" => {
            std::fs::create_dir_all(dir).map_err(|e| format!("create {dir:?}: {e}"))?;
            let stride = (observations.len() / 8).max(1);
            for (i, (obs, state)) in observations.iter().zip(&wm_states).enumerate() {
                if i % stride != 0 {
                    continue;
                }
                let (decoded, _, _) = agent.wm.decode_heads(&agent.store, state);
                write_frame(dir, &format!("actual-{i:03}.png"), obs, cfg.img_hw)?;
                write_frame(dir, &format!("recon-{i:03}.png"), &decoded, cfg.img_hw)?;
            }
            println!(
                "{}",
                serde_json::json!({"episode": episode, "frames": observations.len(), "out_dir": dir.display().to_string()})
            );
        }
        "goal-images" => {
            std::fs::create_dir_all(dir).map_err(|e| format!("create {dir:?}: {e}"))?;
            let stride = (observations.len() / 4).max(1);
            let horizon = 8;
            for (i, pref) in pref_states.iter().enumerate() {
                if i % stride != 0 {
                    continue;
                }
                let (_, goals) = agent.crspp.imagine_preferred(
                    &agent.store,
                    &agent.wm,
                    pref,
                    &wm_states[i].h,
                    horizon,
                    &mut latent_rng,
                );
                for (tau, goal) in goals.iter().enumerate() {
                    write_frame(dir, &format!("goal-{i:03}-{tau:02}.png"), goal, cfg.img_hw)?;
                }
            }
            println!(
                "{}",
                serde_json::json!({"episode": episode, "horizon": horizon, "out_dir": dir.display().to_string()})
            );
        }
        _ => unreachable!(),
    }
    Ok(())
}

fn write_frame(dir: &Path, name: &str, chw: &[f64], hw: usize) -> Result<(), String> {
    let rgb = png::chw_to_rgb8(chw, hw);
    png::write_rgb(&dir.join(name), hw, hw, &rgb).map_err(|e| format!("write {name}: {e}"))
}

const PLOT_SERIES: &[&str] = &[
    "return",
    "success_rate",
    "wm_total",
    "wm_image",
    "crspp_sim",
    "ig_mean",
    "actor_objective",
    "value_loss",
    "policy_entropy",
    "pema_range",
];

fn cmd_plot(args: &[String]) -> i32 {
    let flags = match parse_flags(args, &["metrics", "out", "series"]) {
        Ok(f) => f,
        Err(e) => return usage_error(&e),
    };
    let Some(metrics_path) = flags.get("metrics") else {
        return usage_error("missing required flag '--metrics'");
    };
    let out = out_dir(&flags, "metrics.svg");
    let out = if out.is_dir() { out.join("metrics.svg") } else { out };
    let requested: Vec<String> = flags
        .get("series")
        .map(|s| s.split(',').map(|x| x.trim().to_string()).collect())
        .unwrap_or_else(|| vec!["return".into(), "success_rate".into()]);
    for name in &requested {
        if !PLOT_SERIES.contains(&name.as_str()) {
            return usage_error(&format!(
                "unknown series '{name}'; available: {}",
                PLOT_SERIES.join(", ")
            ));
        }
    }
    let (events, skipped) = match read_metrics(Path::new(metrics_path)) {
        Ok(r) => r,
        Err(e) => return runtime_error(&format!("read {metrics_path}: {e}")),
    };
    if skipped > 0 {
        eprintln!("note: skipped {skipped} malformed metric line(s)");
    }
    let series: Vec<(String, Vec<(f64, f64)>)> = requested
        .iter()
        .map(|name| (name.clone(), extract_series(&events, name)))
        .collect();
    let svg = crate::plot::render_svg(&format!("raif metrics: {}", requested.join(", ")), &series);
    match std::fs::write(&out, svg) {
        Ok(()) => {
            println!("{}", serde_json::json!({"out": out.display().to_string()}));
            0
        }
        Err(e) => runtime_error(&format!("write {out:?}: {e}")),
    }
}

fn extract_series(events: &[MetricEvent], name: &str) -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    let mut recent_success: Vec<bool> = Vec::new();
    for ev in events {
        match (name, ev) {
            ("return", MetricEvent::Episode { step, ret, .. }) => {
                pts.push((*step as f64, *ret));
            }
            ("success_rate", MetricEvent::Episode { step, success, .. }) => {
                recent_success.push(*success);
                let window = recent_success.iter().rev().take(20);
                let n = window.len().max(1);
                let hits = recent_success.iter().rev().take(20).filter(|&&s| s).count();
                pts.push((*step as f64, hits as f64 / n as f64));
            }
            ("wm_total", MetricEvent::Update { step, wm_total, .. }) => {
                pts.push((*step as f64, *wm_total));
            }
            ("wm_image", MetricEvent::Update { step, wm_image, .. }) => {
                pts.push((*step as f64, *wm_image));
            }
            ("crspp_sim", MetricEvent::Update { step, crspp_sim, .. }) => {
                pts.push((*step as f64, *crspp_sim));
            }
            ("ig_mean", MetricEvent::Update { step, ig_mean, .. }) => {
                pts.push((*step as f64, *ig_mean));
            }
            ("actor_objective", MetricEvent::Update { step, actor_objective, .. }) => {
                pts.push((*step as f64, *actor_objective));
            }
            ("value_loss", MetricEvent::Update { step, value_loss, .. }) => {
                pts.push((*step as f64, *value_loss));
            }
            ("policy_entropy", MetricEvent::Update { step, policy_entropy, .. }) => {
                pts.push((*step as f64, *policy_entropy));
            }
            ("pema_range", MetricEvent::Update { step, pema_range, .. }) => {
                pts.push((*step as f64, *pema_range));
            }
            _ => {}
        }
    }
    pts
}

/// Re-renders the resolved config (handy for generating starter files).
pub fn default_config_text() -> String {
    render_config(&TrainConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(parts: &[&str]) -> Vec<String> {
        parts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn missing_subcommand_is_usage_error() {
        assert_eq!(dispatch(&[]), 1);
        assert_eq!(dispatch(&argv(&["bogus"])), 1);
    }

    #[test]
    fn train_missing_config_is_usage_error() {
        assert_eq!(dispatch(&argv(&["train"])), 1);
        assert_eq!(dispatch(&argv(&["train", "--config"])), 1);
        assert_eq!(dispatch(&argv(&["train", "--bogus", "x"])), 1);
    }

    #[test]
    fn eval_flag_validation() {
        assert_eq!(dispatch(&argv(&["eval", "--episodes", "3"])), 1);
        assert_eq!(
            dispatch(&argv(&["eval", "--checkpoint", "/nonexistent", "--episodes", "abc"])),
            1
        );
        // well-formed flags but missing checkpoint directory: runtime abort
        assert_eq!(
            dispatch(&argv(&["eval", "--checkpoint", "/nonexistent", "--episodes", "2"])),
            2
        );
    }

    #[test]
    fn inspect_what_validation() {
        assert_eq!(
            dispatch(&argv(&[
                "inspect", "--checkpoint", "/x", "--what", "dreams", "--episode", "1"
            ])),
            1
        );
    }

    #[test]
    fn plot_requires_known_series() {
        let code = dispatch(&argv(&[
            "plot", "--metrics", "/nonexistent", "--series", "nonsense", "--out", "/tmp/x.svg",
        ]));
        assert_eq!(code, 1);
    }
}
