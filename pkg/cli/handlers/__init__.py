# One module per subcommand; each exposes cmd_<name>(args, ctx) -> exit code.
