"""Bandwidth estimation workbench package bootstrap.

Emulated calls, receiver features, offline IQL training and evaluation.
"""

__all__ = [
	"run",
]


def run(argv=None):
	from .cli import main
	return main(argv)
