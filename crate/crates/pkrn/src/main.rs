fn main() {
    std::process::exit(pkrn::cli::main());
}
