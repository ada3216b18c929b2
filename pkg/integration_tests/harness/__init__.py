"""End-to-end harness that drives the fhir_automl CLI in subprocesses."""
