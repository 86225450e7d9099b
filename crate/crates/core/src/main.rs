fn main() {
    std::process::exit(bistable_fronts::cli::main_with(std::env::args_os()));
}
