"""Command-line client.  Every subcommand is one request to the service: a
remote one with ``--server URL``, otherwise an in-process app instance."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings

ENDPOINTS = {
    "gen-data": "/datasets",
    "train": "/train",
    "eval": "/eval",
    "prune": "/prune",
    "cam": "/cam",
    "bench": "/bench",
    "compare-aug": "/compare-aug",
}


def _common(p):
    g = p.add_argument_group("global")
    g.add_argument("--config", help="experiment config JSON file")
    g.add_argument("--seed", type=int, help="sets data, fold, init and training seeds")
    g.add_argument("--out-dir", help="directory for datasets, weights and reports")
    g.add_argument("--deterministic", action="store_true",
                   help="single-threaded numerics; reports exclude wall-clock fields")
    g.add_argument("--server", help="service URL; default runs the service in-process")
    g.add_argument("--dataset-dir", help="dataset directory (default <out-dir>/dataset)")
    g.add_argument("--method", help="augmentation method")
    g.add_argument("--epochs", type=int, help="training epochs")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="fdclab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("gen-data", help="simulate flights and write an SDI dataset")
    p.add_argument("--size", type=int, help="number of SDIs")
    p = sub.add_parser("train", help="train one model, or k-fold CV with --cv")
    p.add_argument("--cv", action="store_true")
    for name, text in (("eval", "evaluate weights on the held-out fold"),
                       ("prune", "iterative Taylor pruning with fine-tuning"),
                       ("cam", "Grad-CAM overlays and attention overlap report")):
        q = sub.add_parser(name, help=text)
        q.add_argument("--weights", help="weight archive (default <out-dir>/model.fdcw)")
    p = sub.add_parser("bench", help="params, archive size and latency")
    p.add_argument("--network", action="append", help="preset name (repeatable)")
    p.add_argument("--weights")
    p = sub.add_parser("compare-aug", help="k-fold CV for every augmentation method")
    p.add_argument("--methods", nargs="+")
    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    for q in sub.choices.values():
        _common(q)
    return parser


def build_payload(args):
    cfg = {}
    if args.config:
        with open(args.config) as f:
            cfg = json.load(f)
    if args.seed is not None:
        for key in ("data_seed", "fold_seed", "init_seed"):
            cfg[key] = args.seed
        cfg["train"] = {**cfg.get("train", {}), "seed": args.seed}
    if args.out_dir:
        cfg["out_dir"] = args.out_dir
    if args.deterministic:
        cfg["deterministic"] = True
    if args.method:
        cfg["method"] = args.method
    if args.epochs is not None:
        cfg["train"] = {**cfg.get("train", {}), "epochs": args.epochs}
    if getattr(args, "size", None) is not None:
        cfg["dataset_size"] = args.size
    payload = {"config": cfg}
    if args.dataset_dir:
        payload["dataset_dir"] = args.dataset_dir
    for key in ("cv", "weights", "methods"):
        if getattr(args, key, None):
            payload[key] = getattr(args, key)
    if getattr(args, "network", None):
        payload["networks"] = args.network
    return payload


def client(server=None):
    if server:
        import httpx
        return httpx.Client(base_url=server, timeout=None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # starlette nudges towards httpx2
        from fastapi.testclient import TestClient

    from .service.app import app
    return TestClient(app, raise_server_exceptions=False)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command == "serve":
        import uvicorn
        uvicorn.run("fdclab.service.app:app", host=args.host, port=args.port)
        return 0
    with client(args.server) as c:
        r = c.post(ENDPOINTS[args.command], json=build_payload(args))
    body = r.json()
    if r.status_code >= 400:
        print(f"error {r.status_code}: {json.dumps(body.get('detail', body))}", file=sys.stderr)
        return 1
    print(json.dumps(body, indent=1, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
