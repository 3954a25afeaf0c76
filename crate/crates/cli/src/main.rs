fn main() {
    std::process::exit(scenebias_cli::run(std::env::args_os()));
}
