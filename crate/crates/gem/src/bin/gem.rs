fn main() -> ! {
    gem::cli::main()
}
