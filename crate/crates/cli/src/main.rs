use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = tsprl_cli::init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(tsprl_cli::exit_code(&e) as u8);
    }
    let code = tsprl_cli::run(std::env::args_os(), &mut io::stdout().lock(), &mut io::stderr().lock());
    ExitCode::from(code as u8)
}
