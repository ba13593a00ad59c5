fn main() {
    std::process::exit(camproj::cli::run(std::env::args_os()));
}
