"""Serve the adapter: ``m3kg-adapter [--config cfg.json] [--port 8808]``."""

from __future__ import annotations

import argparse

import uvicorn

from .app import create_app
from .config import AdapterConfig


def main() -> None:
    parser = argparse.ArgumentParser(description="m3kg backend-protocol sidecar")
    parser.add_argument("--config", default=None, help="adapter config JSON")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8808)
    args = parser.parse_args()
    config = AdapterConfig.from_file(args.config) if args.config else AdapterConfig()
    uvicorn.run(create_app(config), host=args.host, port=args.port)


if __name__ == "__main__":
    main()
