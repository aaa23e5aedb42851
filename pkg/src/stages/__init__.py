"""
Pipeline stages, one per command-line subcommand.
"""
