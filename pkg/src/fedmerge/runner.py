"""Experiment drivers: single runs, the ablation grid, and the alpha sweep.

A run executes `repeats` independent simulations with seeds seed+0 ..
seed+repeats-1 and writes three artifacts into the output directory:

  metrics.csv      one row per round per repeat (round 0 = evaluation of the
                   random initialization); fixed column set, no wall-clock
                   columns so identical configs give identical bytes
  summary.json     mean and sample standard deviation of the final-round
                   metrics across repeats, plus timing
  config.snapshot  canonical config that reproduces the run byte for byte

With threads > 1 and repeats > 1 the repeats run in parallel worker
processes (each repeat is an independent simulation, so this cannot change
any result); within a single repeat the per-round client pool is used
instead. Results are keyed by repeat index either way, so the artifacts are
byte-identical at any parallelism degree.
"""

import csv
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .client import ClientState, RoundConfig
from .config import ExperimentConfig, snapshot
from .data import build_dataset, leave_one_out_split, parse_dataset
from .merging import AdapterNet, MergeScheme, default_adapter_widths
from .metrics import evaluate_all
from .model import OptimizerState, init_item_table, init_user_vector
from .privacy import LdpConfig, effective_epsilon, sensitivity_bound
from .rng import stream
from .server import GlobalBundle, ServerConfig, compute_share_weights, run_round
from .theory import run_probe

logger = logging.getLogger(__name__)

ABLATION_VARIANTS = (
    ("fedmf-sr", {"scheme": "SR", "aggregation": "fixed"}),
    ("fedsim-sr", {"scheme": "SR", "aggregation": "similarity"}),
    ("fedsim-sm", {"scheme": "SM", "aggregation": "similarity"}),
    ("fedsim-dm", {"scheme": "DM", "aggregation": "similarity"}),
    ("fedsim-em", {"scheme": "EM", "aggregation": "similarity"}),
)


class Simulation:
    """Initialized federated system for one seed: states, bundle, round loop."""

    def __init__(self, dataset, splits, cfg: ExperimentConfig, seed: int,
                 eval_split: str = "test"):
        self.dataset = dataset
        self.splits = splits
        self.cfg = cfg
        self.seed = seed
        self.eval_split = eval_split

        d = cfg.dim
        m = dataset.m
        scheme = MergeScheme(cfg.scheme, cfg.scheme_rho if cfg.scheme == "SM" else None)
        widths = list(cfg.adapter_layers) or default_adapter_widths(d)

        self.states = []
        for u in range(dataset.n):
            rng = stream(seed, "client_init", u)
            p = init_user_vector(d, rng, cfg.init_std)
            Q = init_item_table(m, d, rng, cfg.init_std)
            adapter = None
            opt_adapter = None
            if scheme.uses_adapter:
                adapter = AdapterNet(widths, stream(seed, "adapter_init", u))
                opt_adapter = OptimizerState(
                    cfg.optimizer, adapter.param_shapes(), cfg.adapter_lr
                )
            opt_embed = OptimizerState(cfg.optimizer, [(d,), (m, d)], cfg.lr)
            self.states.append(
                ClientState(u, p, Q, adapter, opt_embed, opt_adapter, splits[u])
            )

        self.bundle = GlobalBundle(
            mode="shared", table=init_item_table(m, d, stream(seed, "server_init"), cfg.init_std)
        )
        self.share = compute_share_weights(dataset.train_sizes(splits))
        self.round_cfg = RoundConfig(
            epochs=cfg.local_epochs,
            batch_size=cfg.batch_size,
            lr=cfg.lr,
            adapter_lr=cfg.adapter_lr,
            negatives=cfg.negatives,
            merge_schedule=cfg.merge_schedule,
            scheme=scheme,
            seed=seed,
            ldp=LdpConfig(cfg.ldp_enabled, cfg.ldp_delta, cfg.ldp_clip, eta=cfg.lr),
        )
        self.server_cfg = ServerConfig(
            aggregation=cfg.aggregation,
            alpha=cfg.alpha,
            normalize_weights=cfg.normalize_weights,
            similarity=cfg.similarity,
            sketch_dim=cfg.sketch_dim,
            participation=cfg.participation,
        )

    def run(self, rounds=None, threads=None):
        """Execute the round loop; returns [round-0 record, ..., round-T record]."""
        rounds = self.cfg.rounds if rounds is None else rounds
        threads = self.cfg.threads if threads is None else threads
        record0 = evaluate_all(self.states, ks=self.cfg.eval_k, which=self.eval_split)
        record0.round_index = 0
        records = [record0]
        for t in range(1, rounds + 1):
            self.bundle, record = run_round(
                self.states,
                self.bundle,
                self.server_cfg,
                self.round_cfg,
                t,
                self.share,
                threads=threads,
                eval_ks=self.cfg.eval_k,
                eval_split=self.eval_split,
            )
            records.append(record)
            logger.info(
                "seed %d round %d: %s loss=%.4f (%.1fs)",
                self.seed,
                t,
                " ".join(
                    f"hr@{k}={record.hr[k]:.4f} ndcg@{k}={record.ndcg[k]:.4f}"
                    for k in self.cfg.eval_k
                ),
                record.train_loss,
                record.seconds,
            )
        if self.round_cfg.ldp.enabled:
            eps = [
                effective_epsilon(
                    sensitivity_bound(s, self.round_cfg.lr, self.round_cfg.ldp.clip),
                    self.round_cfg.ldp.delta,
                )
                for s in self.share
            ]
            logger.info(
                "per-round privacy budget: min=%.4g mean=%.4g max=%.4g",
                min(eps), float(np.mean(eps)), max(eps),
            )
            for u, e in enumerate(eps):
                logger.debug("client %d per-round epsilon: %.6g", u, e)
        return records


def load_experiment_dataset(cfg: ExperimentConfig):
    path = cfg.resolved_path()
    if not path:
        raise FileNotFoundError("dataset.path is empty; set it in the config")
    ratings = parse_dataset(path, cfg.format)
    return build_dataset(ratings, cfg.min_interactions)


def metrics_csv_text(cfg, per_repeat_records) -> str:
    """Render the metrics table; schema: repeat,seed,round,hr@K...,ndcg@K...,train_loss."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    ks = list(cfg.eval_k)
    writer.writerow(
        ["repeat", "seed", "round"]
        + [f"hr@{k}" for k in ks]
        + [f"ndcg@{k}" for k in ks]
        + ["train_loss"]
    )
    for repeat, (seed, records) in enumerate(per_repeat_records):
        for rec in records:
            writer.writerow(
                [repeat, seed, rec.round_index]
                + [repr(rec.hr[k]) for k in ks]
                + [repr(rec.ndcg[k]) for k in ks]
                + [repr(rec.train_loss)]
            )
    return buf.getvalue()


def summarize(cfg, per_repeat_records) -> dict:
    ks = list(cfg.eval_k)
    finals = {}
    for name, getter in (("hr", lambda r, k: r.hr[k]), ("ndcg", lambda r, k: r.ndcg[k])):
        for k in ks:
            vals = [getter(records[-1], k) for (_, records) in per_repeat_records]
            finals[f"{name}@{k}"] = {
                "mean": float(np.mean(vals)),
                "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
                "values": [float(v) for v in vals],
            }
    return finals


def _run_one_repeat(args):
    cfg, dataset, seed, eval_split, client_threads = args
    splits = leave_one_out_split(dataset, seed)
    sim = Simulation(dataset, splits, cfg, seed, eval_split=eval_split)
    return seed, sim.run(threads=client_threads)


def run_experiment(cfg: ExperimentConfig, dataset=None, eval_split: str = "test",
                   out_dir=None, write=True) -> dict:
    """Run `repeats` seeded simulations; write artifacts; return the summary."""
    cfg.validate()
    t0 = time.perf_counter()
    if dataset is None:
        dataset = load_experiment_dataset(cfg)
    if cfg.threads > 1 and cfg.repeats > 1:
        jobs = [
            (cfg, dataset, cfg.seed + r, eval_split, 1) for r in range(cfg.repeats)
        ]
        with ProcessPoolExecutor(max_workers=min(cfg.threads, cfg.repeats)) as pool:
            per_repeat = list(pool.map(_run_one_repeat, jobs))
    else:
        per_repeat = [
            _run_one_repeat((cfg, dataset, cfg.seed + r, eval_split, cfg.threads))
            for r in range(cfg.repeats)
        ]
    summary = {
        "final": summarize(cfg, per_repeat),
        "rounds": cfg.rounds,
        "repeats": cfg.repeats,
        "eval_split": eval_split,
        "seconds": time.perf_counter() - t0,
    }
    if write:
        out_dir = out_dir or cfg.out
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
            fh.write(metrics_csv_text(cfg, per_repeat))
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "config.snapshot"), "w") as fh:
            fh.write(snapshot(cfg))
    summary["records"] = per_repeat
    return summary


def run_ablation(cfg: ExperimentConfig, dataset=None, out_dir=None, write=True) -> dict:
    """Run the five-variant grid with shared seeds; emit a comparison table."""
    cfg.validate()
    if dataset is None:
        dataset = load_experiment_dataset(cfg)
    out_dir = out_dir or cfg.out
    results = {}
    for label, overrides in ABLATION_VARIANTS:
        variant_cfg = replace(cfg, **overrides, out=os.path.join(out_dir, label))
        results[label] = run_experiment(
            variant_cfg, dataset=dataset, write=write
        )
    table = ablation_table(cfg, results)
    if write:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "ablation.csv"), "w", newline="") as fh:
            fh.write(table)
    return {"variants": results, "table": table}


def ablation_table(cfg, results) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    ks = list(cfg.eval_k)
    writer.writerow(
        ["variant"] + [f"hr@{k}" for k in ks] + [f"ndcg@{k}" for k in ks]
    )
    for label, _ in ABLATION_VARIANTS:
        final = results[label]["final"]
        writer.writerow(
            [label]
            + [repr(final[f"hr@{k}"]["mean"]) for k in ks]
            + [repr(final[f"ndcg@{k}"]["mean"]) for k in ks]
        )
    return buf.getvalue()


def run_alpha_sweep(cfg: ExperimentConfig, grid, dataset=None, out_dir=None,
                    write=True) -> dict:
    """Grid-search alpha on the validation split, then one test run at the best.

    Selection metric: mean final validation HR at the largest configured K;
    ties go to the smaller alpha.
    """
    cfg.validate()
    grid = sorted(float(a) for a in grid)
    if not grid:
        raise ValueError("alpha grid must be non-empty")
    if dataset is None:
        dataset = load_experiment_dataset(cfg)
    out_dir = out_dir or cfg.out
    k_sel = max(cfg.eval_k)
    rows = []
    best_alpha, best_val = None, -1.0
    val_results = {}
    for alpha in grid:
        a_cfg = replace(cfg, alpha=alpha, aggregation="similarity",
                        out=os.path.join(out_dir, f"alpha-{alpha:g}"))
        res = run_experiment(a_cfg, dataset=dataset, eval_split="validation", write=write)
        val_results[alpha] = res
        score = res["final"][f"hr@{k_sel}"]["mean"]
        rows.append((alpha, res["final"]))
        if score > best_val:  # strict: ties keep the earlier (smaller) alpha
            best_val, best_alpha = score, alpha
    test_cfg = replace(cfg, alpha=best_alpha, aggregation="similarity",
                       out=os.path.join(out_dir, "final"))
    test_res = run_experiment(test_cfg, dataset=dataset, eval_split="test", write=write)
    if write:
        os.makedirs(out_dir, exist_ok=True)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        ks = list(cfg.eval_k)
        writer.writerow(["alpha"] + [f"val_hr@{k}" for k in ks] + [f"val_ndcg@{k}" for k in ks])
        for alpha, final in rows:
            writer.writerow(
                [repr(alpha)]
                + [repr(final[f"hr@{k}"]["mean"]) for k in ks]
                + [repr(final[f"ndcg@{k}"]["mean"]) for k in ks]
            )
        with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as fh:
            fh.write(buf.getvalue())
    return {
        "grid": grid,
        "validation": val_results,
        "best_alpha": best_alpha,
        "test": test_res,
    }


def run_theory_probe(draws: int = 1000, seed: int = 0, out_dir=None, write=True) -> dict:
    """Run the quadratic-instance probes; optionally write the margins CSV."""
    all_hold, rows = run_probe(draws=draws, seed=seed)
    if write and out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "probe.csv"), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["draw", "rho", "compensation_margin",
                             "dist_replacement", "dist_merge"])
            for row in rows:
                writer.writerow([row[0]] + [repr(v) for v in row[1:]])
    worst_margin = min(r[2] for r in rows)
    worst_gap = min(r[3] - r[4] for r in rows)
    return {
        "draws": draws,
        "all_hold": all_hold,
        "worst_compensation_margin": worst_margin,
        "worst_distance_gap": worst_gap,
    }
