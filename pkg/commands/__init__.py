"""
Subcommands of the sinkgp command line.

Each module exposes ``register(subparsers, parents)``, which adds its parser
and binds the handler as ``args.handler(args, cfg)``.
"""
from commands import benchmark, embed, fit, gram, predict, toygen

COMMANDS = (toygen, embed, fit, predict, gram, benchmark)
