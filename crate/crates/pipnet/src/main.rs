fn main() {
    std::process::exit(pipnet::cli::run(std::env::args_os()));
}
