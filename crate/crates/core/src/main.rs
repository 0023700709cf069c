fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = wxpower::cli::run(std::env::args_os()) {
        eprintln!("error[{}]: {}", e.kind(), e.message().replace('\n', " "));
        std::process::exit(e.exit_code());
    }
}
