fn main() {
    std::process::exit(reweight::main_with_args(std::env::args_os()));
}
