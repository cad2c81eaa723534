"""Conformance suite for implementations of the adapter wire protocol.

The manifest (shipped as package data) lists request/expected-response
pairs per reference binding; `run_conformance` replays them over HTTP and
compares numbers within 1e-6.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.request
from importlib import resources

FLOAT_TOL = 1e-6


def load_default_manifest() -> list[dict]:
    with resources.files("segcompare").joinpath("data/conformance_manifest.json").open(
        "r", encoding="utf-8"
    ) as fh:
        return json.load(fh)


def _approx_equal(expected, actual, tol=FLOAT_TOL) -> bool:
    if isinstance(expected, dict):
        return (
            isinstance(actual, dict)
            and set(expected) == set(actual)
            and all(_approx_equal(expected[k], actual[k], tol) for k in expected)
        )
    if isinstance(expected, list):
        return (
            isinstance(actual, list)
            and len(expected) == len(actual)
            and all(_approx_equal(e, a, tol) for e, a in zip(expected, actual))
        )
    if isinstance(expected, bool) or isinstance(actual, bool):
        return expected == actual
    if isinstance(expected, (int, float)) and isinstance(actual, (int, float)):
        return abs(float(expected) - float(actual)) <= tol
    return expected == actual


def _post(url: str, payload: dict, timeout: float = 10.0):
    req = urllib.request.Request(
        url,
        data=json.dumps(payload).encode("utf-8"),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        body = exc.read().decode("utf-8", "replace")
        try:
            return exc.code, json.loads(body)
        except json.JSONDecodeError:
            return exc.code, body


def run_conformance(url_for, manifest: list[dict] | None = None) -> dict:
    """Replay the manifest against served bindings.

    `url_for` maps a binding name to a base URL (or is a dict of the same).
    Returns {"passed": bool, "results": [...]} with one entry per case.
    """
    if manifest is None:
        manifest = load_default_manifest()
    if isinstance(url_for, dict):
        mapping = dict(url_for)
        url_for = mapping.__getitem__

    results = []
    for case in manifest:
        base = url_for(case["binding"]).rstrip("/")
        status, body = _post(base + case["endpoint"], case.get("payload", {}))
        ok = status == case["expect_status"]
        detail = ""
        if ok and "expect_body" in case:
            ok = _approx_equal(case["expect_body"], body)
            if not ok:
                detail = f"body mismatch: expected {case['expect_body']}, got {body}"
        elif not ok:
            detail = f"status {status} != {case['expect_status']} (body: {body})"
        results.append({"name": case["name"], "ok": ok, "detail": detail})
    return {"passed": all(r["ok"] for r in results), "results": results}
