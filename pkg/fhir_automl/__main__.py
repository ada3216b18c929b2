"""Package entrypoint."""

from __future__ import annotations

from fhir_automl.cli import main


if __name__ == "__main__":
    raise SystemExit(main())
