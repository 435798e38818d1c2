fn main() {
    std::process::exit(landau::cli_main());
}
