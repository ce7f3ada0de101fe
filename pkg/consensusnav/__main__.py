"""Entry point for `python -m consensusnav`."""

from .cli import main

main()
