"""Conformance suite against the reference adapter, when it is installed.

The primary suite must run fully without the adapter package, so this
module skips when `model_adapter` is unavailable.
"""

import pytest

model_adapter = pytest.importorskip("model_adapter")

from segcompare.conformance import load_default_manifest, run_conformance


def test_manifest_loads_and_is_well_formed():
    manifest = load_default_manifest()
    assert len(manifest) >= 9
    for case in manifest:
        assert {"name", "binding", "endpoint", "expect_status"} <= set(case)


def test_conformance_suite_passes_against_reference_adapter():
    servers = {
        name: model_adapter.serve(binding)
        for name, binding in model_adapter.reference_bindings().items()
    }
    try:
        outcome = run_conformance({name: s.url for name, s in servers.items()})
    finally:
        for server in servers.values():
            server.stop()
    failures = [r for r in outcome["results"] if not r["ok"]]
    assert outcome["passed"], failures
