"""Fallback runner: ``python -m pytest`` discovers the unittest suite when pytest is absent."""

from __future__ import annotations

import sys
import unittest


def main(argv: list[str] | None = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    start = next((arg for arg in args if not arg.startswith("-")), "tests")
    verbosity = 1 if "-q" in args else 2
    suite = unittest.TestLoader().discover(start, top_level_dir=".")
    result = unittest.TextTestRunner(verbosity=verbosity).run(suite)
    return 0 if result.wasSuccessful() else 1


if __name__ == "__main__":
    raise SystemExit(main())
