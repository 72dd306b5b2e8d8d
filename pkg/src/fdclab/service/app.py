"""FastAPI app wrapping the harness; one POST endpoint per CLI subcommand.

Requests run synchronously: a response arrives once the job has finished
and its reports are on disk under ``config.out_dir``.
"""
from __future__ import annotations

import hashlib
import logging
import os

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, harness
from ..augment import METHODS
from ..nnet.archive import ArchiveError, load_weights
from ..nnet.network import PRESETS, param_count
from .schemas import (AggregateRequest, AggregateResponse, BenchRequest, BenchResponse,
                      CamResponse, CompareRequest, CompareResponse, ConfigRequest,
                      EvalResponse, GenDataRequest, GenDataResponse, PresetInfo, PruneResponse,
                      TrainRequest, TrainResponse, WeightsRequest)

log = logging.getLogger(__name__)


def _dataset(req: ConfigRequest):
    return harness.load_dataset(req.config, req.dataset_dir)


def _weights(req: WeightsRequest):
    path = req.weights or os.path.join(req.config.out_dir, "model.fdcw")
    return load_weights(path)


def create_app() -> FastAPI:
    app = FastAPI(title="fdclab", version=__version__)

    @app.exception_handler(FileNotFoundError)
    async def not_found(request: Request, exc: FileNotFoundError):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(ArchiveError)
    async def bad_archive(request: Request, exc: ArchiveError):
        return JSONResponse(status_code=400, content={"detail": f"bad weight archive: {exc}"})

    @app.exception_handler(ValueError)
    async def bad_value(request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/presets", response_model=list[PresetInfo])
    def presets():
        return [PresetInfo(name=k, params=param_count(s), conv_layers=len(s.conv_layers))
                for k, s in PRESETS.items()]

    @app.get("/methods")
    def methods():
        return [m.value for m in METHODS]

    @app.post("/aggregate", response_model=AggregateResponse)
    def aggregate(req: AggregateRequest):
        mean, std = harness.aggregate(req.values)
        return AggregateResponse(mean=mean, std=std)

    @app.post("/datasets", response_model=GenDataResponse)
    def gen_data(req: GenDataRequest):
        ds, directory = harness.gen_dataset(req.config, req.seed, req.dataset_dir)
        with open(os.path.join(directory, "sdi.bin"), "rb") as f:
            digest = hashlib.sha256(f.read()).hexdigest()
        return GenDataResponse(directory=directory, count=len(ds),
                               histogram=ds.histogram(), sdi_sha256=digest)

    @app.post("/train", response_model=TrainResponse)
    def train(req: TrainRequest):
        ds = _dataset(req)
        if req.cv:
            rep = harness.run_experiment(req.config, ds)
            return TrainResponse(fold_accuracies=rep.fold_accuracies, mean=rep.mean, std=rep.std)
        _, res = harness.fit_model(req.config, ds)
        return TrainResponse(weights=res.get("weights"), accuracy=res["accuracy"],
                             params=res["params"], history=res["history"])

    @app.post("/eval", response_model=EvalResponse)
    def evaluate(req: WeightsRequest):
        res = harness.evaluate_model(req.config, _weights(req), _dataset(req))
        return EvalResponse(**res)

    @app.post("/prune", response_model=PruneResponse)
    def prune(req: WeightsRequest):
        _, report = harness.prune_campaign(req.config, _weights(req), _dataset(req))
        return PruneResponse(weights=os.path.join(req.config.out_dir, "pruned.fdcw"), report=report)

    @app.post("/cam", response_model=CamResponse)
    def cam(req: WeightsRequest):
        res = harness.cam_report(req.config, _weights(req), _dataset(req))
        return CamResponse(summary=res["summary"],
                           report=os.path.join(req.config.out_dir, "cam_report.json"))

    @app.post("/bench", response_model=BenchResponse)
    def bench(req: BenchRequest):
        res = harness.bench(req.config, req.networks, weights=req.weights)
        return BenchResponse(**res)

    @app.post("/compare-aug", response_model=CompareResponse)
    def compare(req: CompareRequest):
        table = harness.compare_augmentations(req.config, _dataset(req), req.methods or METHODS)
        return CompareResponse(columns=table["columns"], rows=table["rows"],
                               folds_sha256=table["folds_sha256"])

    return app


app = create_app()
