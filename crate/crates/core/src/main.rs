fn main() {
    wsk::cli::init_logging();
    std::process::exit(wsk::cli::run(std::env::args_os()));
}
