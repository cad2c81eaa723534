"""Serve a reference binding from the command line."""

import argparse
import sys

from .bindings import reference_bindings
from .server import AdapterServer


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="model-adapter")
    parser.add_argument("--binding", default="linear", choices=sorted(reference_bindings()))
    parser.add_argument("--port", type=int, default=8421)
    parser.add_argument("--host", default="127.0.0.1")
    args = parser.parse_args(argv)

    binding = reference_bindings()[args.binding]
    server = AdapterServer(binding, args.port, args.host)
    print(f"serving binding {args.binding!r} at {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
