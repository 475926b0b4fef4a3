from .cmd import Commands, cli_dispatch
