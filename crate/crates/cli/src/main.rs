fn main() {
    std::process::exit(pbvp_cli::run(std::env::args_os()));
}
