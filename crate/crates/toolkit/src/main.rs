use clap::Parser;
use pflow_toolkit::args::{apply_overrides, Cli, Command};
use pflow_toolkit::check::{run_checks, CheckHooks};
use pflow_toolkit::commands::{cmd_eval, cmd_gen, cmd_prep, cmd_sample, cmd_train};
use pflow_toolkit::{ToolError, ToolResult};

fn run(cli: Cli) -> ToolResult<()> {
    match cli.command {
        Command::Gen(a) => {
            let a = apply_overrides(&a, a.config.as_deref())?;
            let n = cmd_gen(&a)?;
            println!("wrote {n} utterances to {}", a.out.display());
        }
        Command::Prep(a) => {
            let a = apply_overrides(&a, a.config.as_deref())?;
            cmd_prep(&a)?;
            println!("wrote model inputs to {}", a.out.display());
        }
        Command::Train(a) => {
            let a = apply_overrides(&a, a.config.as_deref())?;
            let s = cmd_train(&a)?;
            let last = s.history.last().map_or(f64::NAN, |r| r.loss);
            match s.final_monitor {
                Some(m) => println!(
                    "trained {} steps; last loss {last:.4}; final monitor {m:.4} (deviation {:.4})",
                    s.history.len(),
                    (m - 0.5).abs()
                ),
                None => println!("nothing to train; run already at {} steps", a.steps),
            }
        }
        Command::Sample(a) => {
            let a = apply_overrides(&a, a.config.as_deref())?;
            let n = cmd_sample(&a)?;
            println!("wrote {n} sampled tracks to {}", a.out.display());
        }
        Command::Eval(a) => {
            let a = apply_overrides(&a, a.config.as_deref())?;
            let r = cmd_eval(&a)?.report;
            println!(
                "vde {:.4}  vfe {:.4}  enr {:.4}  ({} tracks)",
                r.vde.mean,
                r.vfe.mean,
                r.enr.mean,
                r.utterances.len()
            );
        }
        Command::Check(a) => {
            let a = apply_overrides(&a, a.config.as_deref())?;
            let report = run_checks(a.seed, &CheckHooks::default())?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            if let Some(p) = &a.out {
                std::fs::write(p, &text).map_err(|e| ToolError::io(p, e))?;
            }
            println!("{text}");
            if !report.passed {
                let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                return Err(ToolError::Verification(failed.join("; ")));
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
