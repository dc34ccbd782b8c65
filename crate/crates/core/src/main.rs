fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADMM_OPT_LOG", "warn")).init();
    std::process::exit(admm_opt::cli::main_with_args(std::env::args_os()));
}
