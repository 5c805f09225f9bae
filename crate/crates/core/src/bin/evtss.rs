fn main() {
    std::process::exit(evtss::cli::run(std::env::args_os()));
}
