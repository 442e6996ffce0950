"""chunklab command line: a thin HTTP client for the service.

Every subcommand except ``serve`` talks to a running chunklab server
(``chunklab serve`` starts one).  The server address comes from --server or
the CHUNKLAB_SERVER environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import httpx

DEFAULT_SERVER = "http://127.0.0.1:8031"
SERVER_ENV = "CHUNKLAB_SERVER"


def _make_client(server: str) -> httpx.Client:
    return httpx.Client(base_url=server, timeout=60.0)


def _request(client: httpx.Client, method: str, path: str, **kwargs) -> dict | list:
    response = client.request(method, path, **kwargs)
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except Exception:
            detail = response.text
        print(f"error: {detail}", file=sys.stderr)
        raise SystemExit(1)
    return response.json()


def _print(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("chunklab.service.app:app", host=args.host, port=args.port, log_level="info")
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    with _make_client(args.server) as client:
        payload = {"path": args.path, "kind": args.kind}
        if args.corpus_id:
            payload["corpus_id"] = args.corpus_id
        _print(_request(client, "POST", "/corpora", json=payload))
    return 0


def cmd_chunk(args: argparse.Namespace) -> int:
    with _make_client(args.server) as client:
        payload = {
            "corpus_id": args.corpus_id,
            "method": args.method,
            "size_s": args.size,
            "overlap_o": args.overlap,
            "semantic_threshold": args.semantic_threshold,
            "inline_text": args.inline_text,
        }
        if args.out:
            payload["out"] = args.out
        _print(_request(client, "POST", "/chunks", json=payload))
    return 0


def cmd_index(args: argparse.Namespace) -> int:
    with _make_client(args.server) as client:
        payload = {"chunkset_id": args.chunkset_id, "mode": args.mode, "k1": args.k1, "b": args.b}
        if args.chunk_vectors:
            payload["chunk_vectors"] = args.chunk_vectors
        if args.out:
            payload["out"] = args.out
        _print(_request(client, "POST", "/indexes", json=payload))
    return 0


def cmd_retrieve(args: argparse.Namespace) -> int:
    with _make_client(args.server) as client:
        payload: dict = {"k": args.k}
        if args.query:
            payload["query"] = args.query
        if args.query_id:
            payload["query_id"] = args.query_id
        if args.query_vectors:
            payload["query_vectors"] = args.query_vectors
        _print(_request(client, "POST", f"/indexes/{args.index_id}/search", json=payload))
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        config = json.load(fh)
    with _make_client(args.server) as client:
        payload = {
            "config": config,
            "out_dir": args.out,
            "resume": args.resume,
            "stub_generator": args.stub_generator,
        }
        if args.policy:
            payload["policy"] = args.policy
        status = _request(client, "POST", "/runs", json=payload)
        run_id = status["run_id"]
        print(f"run {run_id} started ({status['total_cells']} cells)", file=sys.stderr)
        while status["state"] == "running":
            time.sleep(args.poll_interval)
            status = _request(client, "GET", f"/runs/{run_id}")
            print(
                f"  {status['completed_cells']}/{status['total_cells']} cells",
                file=sys.stderr,
            )
        _print(status)
    return 0 if status["state"] == "finished" else 1


def cmd_report(args: argparse.Namespace) -> int:
    with _make_client(args.server) as client:
        if args.out:
            formats = args.formats.split(",") if args.formats else ["csv", "jsonl", "plotdata"]
            _print(_request(client, "POST", f"/runs/{args.run_id}/export", json={"formats": formats}))
        else:
            _print(_request(client, "GET", f"/runs/{args.run_id}/report"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chunklab", description=__doc__)
    parser.add_argument(
        "--server",
        default=os.environ.get(SERVER_ENV, DEFAULT_SERVER),
        help=f"server base URL (default: ${SERVER_ENV} or {DEFAULT_SERVER})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="start the chunklab server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8031)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("ingest", help="ingest a documents or qa JSONL file")
    p.add_argument("--path", required=True)
    p.add_argument("--kind", choices=["documents", "qa"], required=True)
    p.add_argument("--corpus-id")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("chunk", help="chunk an ingested corpus")
    p.add_argument("--corpus-id", required=True)
    p.add_argument("--method", choices=["token", "sentence", "semantic", "code"], required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--semantic-threshold", type=float, default=0.5)
    p.add_argument("--out", help="write the chunk dump JSONL here (server-side path)")
    p.add_argument("--inline-text", action="store_true", help="inline chunk text in the dump")
    p.set_defaults(func=cmd_chunk)

    p = sub.add_parser("index", help="build a sparse index over a chunkset")
    p.add_argument("--chunkset-id", required=True)
    p.add_argument("--mode", choices=["bm25", "external"], default="bm25")
    p.add_argument("--chunk-vectors", help="JSONL of per-chunk vectors (external mode)")
    p.add_argument("--k1", type=float, default=1.2)
    p.add_argument("--b", type=float, default=0.75)
    p.add_argument("--out", help="persist the index binary here (server-side path)")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("retrieve", help="search an index")
    p.add_argument("--index-id", required=True)
    p.add_argument("--query", help="query text (bm25 mode)")
    p.add_argument("--query-id", help="query id (external mode)")
    p.add_argument("--query-vectors", help="JSONL of per-query vectors (external mode)")
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("run", help="execute a grid run from a config file")
    p.add_argument("--config", required=True, help="run configuration JSON file")
    p.add_argument("--out", required=True, help="output directory (server-side path)")
    p.add_argument("--resume", action="store_true", help="skip cells already completed")
    p.add_argument("--stub-generator", action="store_true", help="force the offline stub generator")
    p.add_argument("--policy", choices=["stop", "skip"], help="override the fill policy")
    p.add_argument("--poll-interval", type=float, default=1.0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="fetch or export a finished run's report")
    p.add_argument("--run-id", required=True)
    p.add_argument("--out", action="store_true", help="export report files server-side")
    p.add_argument("--formats", help="comma-separated: csv,jsonl,plotdata")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
