use clap::Parser;
use gsstitch::cli::{self, Cli, Command};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = gsstitch::init_threads() {
        log::info!("using {n} worker threads");
    }
    let args = Cli::parse();
    let result = match &args.command {
        Command::Compose(a) => cli::compose(a),
        Command::Optimize(a) => cli::optimize(a),
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&gsstitch_core::optimize::StitchConfig::json_schema()).expect("schema"));
            Ok(())
        }
        Command::Serve(a) => {
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime");
            if let Err(e) = runtime.block_on(gsstitch::server::serve((a.host, a.port).into())) {
                eprintln!("error: {e}");
                std::process::exit(1);
            }
            Ok(())
        }
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(match e {
            gsstitch::pipeline::PipelineError::EmptyBoundary => 3,
            _ => 2,
        });
    }
}
