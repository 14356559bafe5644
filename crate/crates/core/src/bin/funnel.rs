fn main() {
    std::process::exit(funnel_cascade::cli::run(std::env::args_os()));
}
