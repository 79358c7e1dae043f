fn main() {
    std::process::exit(vispgan_cli::run(std::env::args_os()));
}
