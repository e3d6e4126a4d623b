use std::process::ExitCode;

use causcf::cli::{resolve, Cli, OUT_DIR_ENV};
use causcf::commands::run;
use causcf::error::EXIT_USAGE;
use clap::Parser;

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let env = env_logger::Env::default().default_filter_or(level);
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let (command, flags) = cli.command.split();
    let env_out = std::env::var_os(OUT_DIR_ENV).map(Into::into);
    let result = resolve(command, flags, env_out).and_then(|cfg| {
        init_logging(cfg.verbosity);
        run(&cfg)
    });
    match result {
        Ok(m) => {
            let out = m.config.out_dir.as_deref().map(|p| p.display().to_string()).unwrap_or_default();
            println!("{}: wrote {} file(s) to {out}", command.as_str(), m.outputs.len() + 1);
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = serde_json::json!({
                "status": "error",
                "kind": e.kind(),
                "exit_code": e.exit_code(),
                "message": e.to_string(),
            });
            eprintln!("{report}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
