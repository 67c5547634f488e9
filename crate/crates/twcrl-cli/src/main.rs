//! Command-line entry point: training runs, demo generation, heatmap export,
//! time-weight validation, trap analysis, and policy evaluation.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use twcrl::maze::{
    builtin_map, builtin_waypoints, goal_reached, parse_map, reward_heatmap, write_heatmap_csv,
    write_heatmap_pgm, GoalMode, MazeEnv, MazeSpec,
};
use twcrl::mdp::{ClassificationRule, TabularMdp};
use twcrl::pipeline::{evaluate, generate_demos, load_actor_checkpoint, run_twcrl, RunConfig};
use twcrl::reward::RewardModel;
use twcrl::rng::stream;
use twcrl::timeweight::{
    constant_k_closed_form, exact_conditional, mc_constant_k_conditional, time_weight_w,
    transition_prob_f, TimeWeightParams,
};
use twcrl::trap::{brute_force_trap_check, compute_trap_set};
use twcrl::Error;

#[derive(Parser)]
#[command(
    name = "twcrl",
    about = "Reward learning from successful and failed demonstrations, with maze benchmarks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the iterative training loop described by a JSON config file.
    Train(TrainArgs),
    /// Generate scripted-expert demonstrations for a maze.
    DemoGen(DemoGenArgs),
    /// Export a reward-checkpoint heatmap over a maze.
    Heatmap(HeatmapArgs),
    /// Print the time-weight table and run its simulation oracles.
    ValidateTw(ValidateTwArgs),
    /// Compute and verify the trap set of a finite MDP.
    TrapCheck(TrapCheckArgs),
    /// Evaluate a policy checkpoint without exploration noise.
    Eval(EvalArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON file with the run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Continue from state_latest.json in the configured output directory.
    #[arg(long)]
    resume: bool,
    /// Use the full-size hyperparameter defaults for unset config fields.
    #[arg(long)]
    paper_hparams: bool,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config worker-thread count (1 = fully serial).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct DemoGenArgs {
    /// Map file path or built-in name (umaze, trapmaze1, trapmaze2).
    #[arg(long)]
    map: String,
    /// Number of demonstrations.
    #[arg(long, default_value_t = 5)]
    n: u32,
    /// Output demo file (JSON lines).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Episode horizon.
    #[arg(long, default_value_t = 300)]
    horizon: u32,
    /// Goal sampling mode: one, three, or any.
    #[arg(long, default_value = "one")]
    goal_mode: String,
    /// Waypoint route as "r,c r,c ..." (defaults to the built-in route).
    #[arg(long)]
    waypoints: Option<String>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    map: String,
    /// Reward checkpoint to visualize.
    #[arg(long)]
    reward: PathBuf,
    #[arg(long, default_value_t = 64)]
    res: u32,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Optional 8-bit PGM image path.
    #[arg(long)]
    pgm: Option<PathBuf>,
    /// Seed for the visualization goal position (sampled like a reset).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    horizon: u32,
    #[arg(long, default_value = "one")]
    goal_mode: String,
}

#[derive(Args)]
struct ValidateTwArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    horizon: u32,
    /// Monte-Carlo sample count for the absorption oracle.
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dump the full per-step table to a CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write the printed table to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrapCheckArgs {
    /// JSON file describing the finite MDP.
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    map: String,
    /// Policy checkpoint (policy_iter<k>.json).
    #[arg(long)]
    policy: PathBuf,
    #[arg(long, default_value_t = 50)]
    episodes: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    horizon: u32,
    #[arg(long, default_value = "one")]
    goal_mode: String,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Write the statistics as JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> twcrl::Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::DemoGen(args) => cmd_demo_gen(args),
        Command::Heatmap(args) => cmd_heatmap(args),
        Command::ValidateTw(args) => cmd_validate_tw(args),
        Command::TrapCheck(args) => cmd_trap_check(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn goal_mode_of(text: &str) -> twcrl::Result<GoalMode> {
    match text {
        "one" => Ok(GoalMode::One),
        "three" => Ok(GoalMode::Three),
        "any" => Ok(GoalMode::Any),
        other => Err(Error::Config(format!("unknown goal mode {other:?} (one|three|any)"))),
    }
}

fn load_spec(map: &str, horizon: u32, goal_mode: &str) -> twcrl::Result<MazeSpec> {
    let text = match builtin_map(map) {
        Some(t) => t.to_string(),
        None => std::fs::read_to_string(map)
            .map_err(|e| Error::Config(format!("cannot read map file {map}: {e}")))?,
    };
    parse_map(&text)?.with_horizon(horizon)?.with_goal_mode(goal_mode_of(goal_mode)?)
}

fn cmd_train(args: TrainArgs) -> twcrl::Result<()> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        Error::Config(format!("cannot read config file {}: {e}", args.config.display()))
    })?;
    let mut config: RunConfig = serde_json::from_str(&text)?;
    if args.paper_hparams {
        config.paper_hparams = true;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = args.out {
        config.out_dir = out.to_string_lossy().into_owned();
    }
    if let Some(threads) = args.threads {
        config.threads = threads;
    }
    let artifacts = run_twcrl(&config, args.resume)?;
    println!(
        "run complete: {} iterations, {} env steps, demos {}+/{}-, converged: {}",
        artifacts.iterations_run,
        artifacts.env_interactions,
        artifacts.demo_counts.0,
        artifacts.demo_counts.1,
        artifacts.converged
    );
    if let Some(last) = artifacts.eval_history.last() {
        println!(
            "final eval: success rate {:.3}, mean return {:.2} +- {:.2}",
            last.stats.success_rate, last.stats.mean_env_return, last.stats.std_env_return
        );
    }
    println!("artifacts in {}", artifacts.out_dir.display());
    Ok(())
}

fn cmd_demo_gen(args: DemoGenArgs) -> twcrl::Result<()> {
    let spec = load_spec(&args.map, args.horizon, &args.goal_mode)?;
    let waypoints = match &args.waypoints {
        Some(text) => parse_waypoints(text)?,
        None => builtin_waypoints(&args.map).ok_or_else(|| {
            Error::Config(format!(
                "no built-in waypoint route for {:?}; pass --waypoints \"r,c r,c ...\"",
                args.map
            ))
        })?,
    };
    let demos = generate_demos(&spec, &waypoints, args.n, args.seed, &args.out)?;
    println!(
        "wrote {} demonstrations ({} success, {} failure) to {}",
        demos.len(),
        demos.successes().len(),
        demos.failures().len(),
        args.out.display()
    );
    Ok(())
}

fn parse_waypoints(text: &str) -> twcrl::Result<Vec<(usize, usize)>> {
    text.split_whitespace()
        .map(|pair| {
            let (r, c) = pair
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("waypoint {pair:?} is not r,c")))?;
            Ok((
                r.parse().map_err(|_| Error::Config(format!("bad waypoint row {r:?}")))?,
                c.parse().map_err(|_| Error::Config(format!("bad waypoint col {c:?}")))?,
            ))
        })
        .collect()
}

fn cmd_heatmap(args: HeatmapArgs) -> twcrl::Result<()> {
    let spec = load_spec(&args.map, args.horizon, &args.goal_mode)?;
    let model = RewardModel::load(&args.reward)?;
    // Sample the visualization goal exactly like an episode reset.
    let mut env = MazeEnv::new(spec.clone())?;
    env.reset(&mut stream(args.seed, "heatmap-goal", 0));
    let goal = env.state().goal;
    let scorer = model.scorer();
    let grid = reward_heatmap(&spec, scorer, args.res, goal)?;
    write_heatmap_csv(&grid, std::fs::File::create(&args.out)?)?;
    println!(
        "wrote {}x{} heatmap to {} (goal at {:.3},{:.3})",
        args.res,
        args.res,
        args.out.display(),
        goal.0,
        goal.1
    );
    if let Some(pgm) = &args.pgm {
        write_heatmap_pgm(&grid, std::fs::File::create(pgm)?)?;
        println!("wrote image to {}", pgm.display());
    }
    Ok(())
}

fn cmd_validate_tw(args: ValidateTwArgs) -> twcrl::Result<()> {
    let params = TimeWeightParams::new(args.alpha, args.horizon)?;
    let mut table = String::new();
    table.push_str("t,f,w,exact,abs_diff\n");
    let mut printed = String::new();
    printed.push_str(&format!(
        "{:>6} {:>14} {:>14} {:>14} {:>12}\n",
        "t", "f(t,T)", "w(t)", "exact", "|w-exact|"
    ));
    let step = (args.horizon / 20).max(1);
    for t in 0..=args.horizon {
        let f = transition_prob_f(t, &params)?;
        let w = time_weight_w(t, &params)?;
        let exact = exact_conditional(t, &params)?;
        let diff = (w - exact).abs();
        table.push_str(&format!("{t},{f},{w},{exact},{diff}\n"));
        if t % step == 0 || t == args.horizon {
            printed
                .push_str(&format!("{t:>6} {f:>14.6e} {w:>14.6e} {exact:>14.6e} {diff:>12.4e}\n"));
        }
    }
    printed.push_str("\nabsorption-chain oracle (constant k):\n");
    let mut all_ok = true;
    for (i, (k, t, horizon)) in [(0.1, 2u32, 5u32), (0.3, 3, 12), (0.5, 1, 4)].iter().enumerate() {
        let (est, se) =
            mc_constant_k_conditional(*k, *t, *horizon, args.samples, args.seed + i as u64)?;
        let cf = constant_k_closed_form(*k, *t, *horizon);
        let ok = (est - cf).abs() <= 3.0 * se.max(1e-12);
        all_ok &= ok;
        printed.push_str(&format!(
            "  k={k} t={t} T={horizon}: estimate {est:.5} +- {se:.5}, closed form {cf:.5} -> {}\n",
            if ok { "ok" } else { "MISMATCH" }
        ));
    }
    print!("{printed}");
    if let Some(path) = &args.out {
        std::fs::write(path, &printed)?;
    }
    if let Some(path) = &args.csv {
        std::fs::write(path, &table)?;
        println!("full table written to {}", path.display());
    }
    if !all_ok {
        return Err(Error::Validation("simulation oracle disagrees with the closed form".into()));
    }
    Ok(())
}

fn cmd_trap_check(args: TrapCheckArgs) -> twcrl::Result<()> {
    let text = std::fs::read_to_string(&args.mdp)
        .map_err(|e| Error::Config(format!("cannot read MDP file {}: {e}", args.mdp.display())))?;
    let mdp = TabularMdp::from_json(&text)?;
    let report = compute_trap_set(&mdp)?;
    let names: Vec<String> = report.trap_states.iter().map(|s| format!("s{s}")).collect();
    let mut out = String::new();
    out.push_str(&format!("trap set: {{{}}} ({} sweeps)\n", names.join(", "), report.iterations));
    let mut verified = true;
    for s in 0..mdp.n_states {
        let brute = brute_force_trap_check(&mdp, s)?;
        if brute != report.trap_states.contains(&s) {
            verified = false;
            out.push_str(&format!("  state s{s}: fixed point and reachability oracle disagree\n"));
        }
    }
    out.push_str(&format!(
        "verification: {}\n",
        if verified { "fixed point matches reachability oracle on every state" } else { "FAILED" }
    ));
    print!("{out}");
    if let Some(path) = &args.out {
        std::fs::write(path, &out)?;
    }
    if !verified {
        return Err(Error::Validation("trap-set verification failed".into()));
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> twcrl::Result<()> {
    let spec = load_spec(&args.map, args.horizon, &args.goal_mode)?;
    let actor = load_actor_checkpoint(&args.policy)?;
    let radius = spec.goal_radius;
    let pred = move |obs: &[f64]| goal_reached(obs, radius);
    let rule = ClassificationRule::TerminalGoal(&pred);
    let stats = evaluate(&actor, &spec, args.episodes, &rule, args.seed, args.threads)?;
    println!(
        "episodes: {}  success rate: {:.3}  mean return: {:.3}  std: {:.3}",
        args.episodes, stats.success_rate, stats.mean_env_return, stats.std_env_return
    );
    if let Some(path) = &args.out {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "{}", serde_json::to_string(&stats)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waypoint_parsing() {
        assert_eq!(parse_waypoints("1,3 3,3 3,1").unwrap(), vec![(1, 3), (3, 3), (3, 1)]);
        assert!(parse_waypoints("1;3").is_err());
        assert!(parse_waypoints("a,b").is_err());
    }
}
