"""Command-line application: config, file I/O and subcommands."""
