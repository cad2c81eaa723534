"""Run the pipeline's conformance suite against the reference adapter."""

import pytest

conformance = pytest.importorskip("segcompare.conformance")

from model_adapter.bindings import reference_bindings
from model_adapter.server import serve


def test_reference_adapter_passes_conformance_suite():
    servers = {name: serve(binding) for name, binding in reference_bindings().items()}
    try:
        outcome = conformance.run_conformance(
            {name: server.url for name, server in servers.items()}
        )
    finally:
        for server in servers.values():
            server.stop()
    failures = [r for r in outcome["results"] if not r["ok"]]
    assert outcome["passed"], failures
    assert len(outcome["results"]) >= 9
