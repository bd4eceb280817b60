use env_logger::Env;

fn main() {
    env_logger::Builder::from_env(Env::new().filter_or("UNISCATTER_LOG", "warn")).init();
    std::process::exit(uniscatter::run_command(std::env::args_os()));
}
