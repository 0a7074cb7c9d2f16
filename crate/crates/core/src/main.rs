fn main() {
    env_logger::init();
    std::process::exit(qkf::cli::run(std::env::args_os()));
}
