fn main() {
    std::process::exit(fsar::engine::cli::run(std::env::args_os()));
}
