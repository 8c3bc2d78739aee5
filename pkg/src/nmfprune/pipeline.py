"""End-to-end orchestration: score, tune, prune, train, report.

Stage 1 scores every prunable layer (factorization-based or magnitude).
Stage 2 fixes the threshold scale gamma (searched against a sparsity target,
or taken from the config), generates the final masks, and prunes. Stage 3
trains with gradient and weight masking. Each stage is timed; artifacts land
in the run's output directory:

    report.json        full run report
    gamma_search.jsonl one line per search probe
    epochs.jsonl       one line per training epoch, appended as epochs finish
    checkpoint.bin     final model (weights, biases, masks, specs, seed)
    checkpoint_epochNNNN.bin  periodic, when checkpoint_every is configured
    status.json        "complete", or the failed stage and error
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .datasets import Dataset, load_dataset
from .masking import GammaTraceEntry, SparsityReport, generate_all_masks, tune_gamma
from .network import Network, convert_to_masked, count_zero_weights, flops_estimate, init_network
from .nmf import ScoreMatrix, score_layer
from .runconfig import MagnitudeScorer, RunConfig, ScorerSpec
from .seeds import derive_seed
from .trainer import EpochMetrics, evaluate, model_input, run_training

STAGES = ("data", "score", "mask", "train", "report")


class StageError(RuntimeError):
    """A pipeline stage failed; the original exception is chained as cause."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass
class RunReport:
    gamma_star: float
    sparsity_report: SparsityReport
    gamma_trace: list[GammaTraceEntry]
    epoch_metrics: list[EpochMetrics]
    flops_dense: int
    flops_sparse: int
    final_test_accuracy: float
    wall_times: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "gamma_star": self.gamma_star,
            "sparsity": {
                "global_zeros": self.sparsity_report.global_zeros,
                "global_total": self.sparsity_report.global_total,
                "global_sparsity": self.sparsity_report.global_sparsity,
                "per_layer": {
                    lid: {"zeros": ls.zeros, "total": ls.total, "sparsity": ls.sparsity}
                    for lid, ls in self.sparsity_report.per_layer.items()
                },
            },
            "gamma_trace": [dataclasses.asdict(t) for t in self.gamma_trace],
            "epoch_metrics": [dataclasses.asdict(m) for m in self.epoch_metrics],
            "flops": {
                "dense": self.flops_dense,
                "sparse": self.flops_sparse,
                "convention": "2 ops per multiply-accumulate, forward pass, one sample",
            },
            "final_test_accuracy": self.final_test_accuracy,
            "wall_times": self.wall_times,
        }


def score_magnitude(w: np.ndarray, layer_id: str = "layer") -> ScoreMatrix:
    """Baseline scores: importance is the absolute weight value."""
    return ScoreMatrix(layer_id=layer_id, scores=np.abs(w))


def compute_scores(net: Network, scorer: ScorerSpec, root_seed: int) -> dict[str, ScoreMatrix]:
    """Score every prunable layer. Factorization seeds derive per layer from
    the root seed, so layers are independent but the whole set is
    reproducible."""
    scores: dict[str, ScoreMatrix] = {}
    for layer in net.prunable_layers:
        if isinstance(scorer, MagnitudeScorer):
            scores[layer.layer_id] = score_magnitude(layer.weights, layer.layer_id)
        else:
            cfg = dataclasses.replace(
                scorer, seed=derive_seed(root_seed, "nmf", layer.layer_id)
            )
            scores[layer.layer_id] = score_layer(layer.weights, cfg, layer.layer_id)
    return scores


def _write_jsonl(path: Path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def _input_shape(net: Network, dataset: Dataset) -> tuple[int, ...]:
    if net.input_kind == "image":
        if dataset.image_shape is None:
            raise ValueError("network expects image input but the dataset has no image shape")
        return dataset.image_shape
    return (dataset.n_features,)


def run_pipeline(cfg: RunConfig) -> RunReport:
    """Execute all stages of a run; see the module docstring for outputs.

    Any stage failure writes an incomplete-status marker and raises a
    StageError naming the stage, with the original exception chained.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    wall: dict[str, float] = {}

    def _fail(stage: str, exc: BaseException):
        (out / "status.json").write_text(
            json.dumps({"status": "incomplete", "stage": stage, "error": str(exc)}) + "\n"
        )
        raise StageError(stage, exc) from exc

    stage = "data"
    t0 = time.perf_counter()
    try:
        dataset = load_dataset(cfg.dataset, split_seed=derive_seed(cfg.seed, "data"))
    except Exception as exc:
        _fail(stage, exc)
    wall[stage] = time.perf_counter() - t0

    stage = "score"
    t0 = time.perf_counter()
    try:
        net = init_network(cfg.model, cfg.seed)
        scores = compute_scores(net, cfg.scorer, cfg.seed)
    except Exception as exc:
        _fail(stage, exc)
    wall[stage] = time.perf_counter() - t0

    stage = "mask"
    t0 = time.perf_counter()
    try:
        trace: list[GammaTraceEntry] = []
        if cfg.gamma_search is not None:
            result = tune_gamma(scores, cfg.threshold.t_type, cfg.gamma_search)
            gamma_star = result.gamma_star
            trace = result.trace
            _write_jsonl(out / "gamma_search.jsonl", [dataclasses.asdict(t) for t in trace])
        else:
            gamma_star = cfg.threshold.gamma
        masks = generate_all_masks(scores, cfg.threshold.t_type, gamma_star)
        net = convert_to_masked(net, masks)
    except Exception as exc:
        _fail(stage, exc)
    wall[stage] = time.perf_counter() - t0

    stage = "train"
    t0 = time.perf_counter()
    try:
        train_cfg = dataclasses.replace(cfg.train, seed=derive_seed(cfg.seed, "train"))
        with open(out / "epochs.jsonl", "w", encoding="utf-8") as epoch_log:

            def on_epoch_end(epoch, network, epoch_metrics):
                epoch_log.write(json.dumps(dataclasses.asdict(epoch_metrics)) + "\n")
                epoch_log.flush()
                if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                    save_checkpoint(network, out / f"checkpoint_epoch{epoch:04d}.bin")

            metrics = run_training(net, dataset, train_cfg, on_epoch_end=on_epoch_end)
    except Exception as exc:
        _fail(stage, exc)
    wall[stage] = time.perf_counter() - t0

    stage = "report"
    t0 = time.perf_counter()
    try:
        flops = flops_estimate(net, _input_shape(net, dataset))
        if metrics:
            final_acc = metrics[-1].test_accuracy
        else:
            final_acc = evaluate(net, model_input(net, dataset, dataset.test_x), dataset.test_y)
        report = RunReport(
            gamma_star=gamma_star,
            sparsity_report=count_zero_weights(net),
            gamma_trace=trace,
            epoch_metrics=metrics,
            flops_dense=flops.dense_flops,
            flops_sparse=flops.sparse_flops,
            final_test_accuracy=final_acc,
        )
        save_checkpoint(net, out / "checkpoint.bin")
    except Exception as exc:
        _fail(stage, exc)
    wall[stage] = time.perf_counter() - t0

    report.wall_times = wall
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    (out / "status.json").write_text(json.dumps({"status": "complete"}) + "\n")
    return report
