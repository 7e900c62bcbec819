fn main() {
    std::process::exit(sptucker::cli::run(std::env::args_os()));
}
