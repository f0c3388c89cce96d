fn main() {
    std::process::exit(multicoap::cli::run());
}
