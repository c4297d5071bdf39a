"""HTTP server for the verification wire protocol.

POST /verify takes the engine's request JSON, renders the verifier prompt
template, queries the configured upstream, and returns the parsed judgments
(plus optional reformulation).  Handlers are stateless, so concurrent
requests are safe; every upstream exchange is logged raw for audit.

Error mapping: a request that fails the wire schema is HTTP 400 with a
SchemaViolation error object and never reaches the upstream; an upstream
that cannot be queried is HTTP 502 with an UpstreamError object; upstream
output that still fails the response schema after the configured re-query
is HTTP 502 with a SchemaViolation object.
"""
from __future__ import annotations

import argparse
import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from .config import BridgeConfig, render_system_text, render_user_text
from .protocol import (
    SchemaViolation,
    UpstreamError,
    error_body,
    parse_request,
    parse_upstream_content,
)
from .upstream import build_upstream

log = logging.getLogger("verifier_bridge")
exchange_log = logging.getLogger("verifier_bridge.exchange")


def _schema_error(status: int, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content=error_body("SchemaViolation", detail))


def build_app(config: BridgeConfig | None = None, upstream=None) -> FastAPI:
    """App factory; pass an upstream object to bypass config-driven wiring."""
    config = config or BridgeConfig()
    upstream = upstream if upstream is not None else build_upstream(config)
    app = FastAPI(title="scene verifier bridge", version="0.1.0")

    @app.post("/verify")
    async def verify(raw: Request):
        try:
            body = await raw.json()
        except Exception:
            return _schema_error(400, "request body is not valid JSON")
        try:
            request = parse_request(body)
        except SchemaViolation as exc:
            return _schema_error(400, str(exc))

        system_text = render_system_text(config, request["prompt"], request["rows"],
                                         request["want_reformulation"])
        user_text = render_user_text(request["prompt"], request["rows"])

        last_violation: SchemaViolation | None = None
        for attempt in range(config.parse_retries + 1):
            try:
                content = await run_in_threadpool(
                    upstream.complete, system_text, user_text, request
                )
            except UpstreamError as exc:
                log.warning("upstream failed: %s", exc)
                return JSONResponse(status_code=502,
                                    content=error_body("UpstreamError", str(exc)))
            if config.log_exchanges:
                exchange_log.info(
                    "attempt=%d rows=%d stage=%d prompt=%r reply=%s",
                    attempt, request["rows"], request["stage"],
                    request["prompt"], content,
                )
            try:
                response = parse_upstream_content(content, request["rows"])
            except SchemaViolation as exc:
                last_violation = exc
                log.warning("upstream reply failed the schema (attempt %d): %s",
                            attempt, exc)
                continue
            return JSONResponse(response)
        return _schema_error(502, f"upstream never produced a schema-valid "
                                  f"reply: {last_violation}")

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok", "upstream_mode": config.upstream_mode}

    return app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="verifier-bridge",
        description="Reference server for the grid-verification wire protocol.",
    )
    parser.add_argument("--config", help="JSON config file (BridgeConfig fields)")
    parser.add_argument("--host", help="listen address override")
    parser.add_argument("--port", type=int, help="listen port override")
    args = parser.parse_args(argv)

    overrides = {}
    if args.host:
        overrides["host"] = args.host
    if args.port:
        overrides["port"] = args.port
    config = (BridgeConfig.from_file(args.config, **overrides)
              if args.config else BridgeConfig(**overrides))

    import uvicorn

    logging.basicConfig(level=logging.INFO)
    uvicorn.run(build_app(config), host=config.host, port=config.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
