fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MSRA_LOG", "warn")).init();
    std::process::exit(msra::cli::main_with_args(std::env::args_os()));
}
