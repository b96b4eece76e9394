fn main() {
    std::process::exit(distillmt_cli::run(std::env::args_os()));
}
