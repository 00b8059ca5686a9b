fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("IMPACTQP_LOG")).init();
    std::process::exit(impactqp::cli::main_entry(std::env::args_os()));
}
