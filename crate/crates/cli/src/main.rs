use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TELEOP_LOG", "info")).init();
    let cli = teleop_cli::Cli::parse();
    let stdout = std::io::stdout();
    let code = match teleop_cli::run(cli.command, &mut stdout.lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    };
    std::process::exit(code);
}
