fn main() {
    std::process::exit(camtrap::cli::run(std::env::args_os()));
}
