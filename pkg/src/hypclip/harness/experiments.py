"""Experiment drivers. Each ``run_*`` trains what it needs, writes CSV/JSON into
``out_dir`` and returns a summary dict (the same content as ``summary.json``)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import embed as emb
from ..mlr import ClipConfig, metric_factor
from ..net import (
    MetricTrace,
    TrainState,
    embed_inputs,
    logits_of,
    new_state,
    per_sample_loss,
    save_checkpoint,
    train_step,
)
from ..rng import Xoshiro256pp
from . import attacks
from .config import ExperimentConfig
from .datasets import Dataset, make_gaussians, make_hierarchical_gaussians, resolve_mnist, split
from .ood import metric_suite, state_scores
from .output import write_csv, write_json

TRACE_HEADER = ("step", "epoch", "loss", "encoder_grad_norm", "mean_embedding_norm",
                "min_metric_factor", "accuracy")


# -- data ---------------------------------------------------------------------


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, str]:
    if cfg.dataset == "mnist":
        train, test, name = resolve_mnist(cfg.data_dir or None)
    elif cfg.dataset == "gaussians":
        ds = make_gaussians(cfg.classes, cfg.input_dim, cfg.per_class, cfg.spread, cfg.seed)
        train, test = split(ds, cfg.test_fraction, cfg.seed)
        name = ds.name
    else:
        ds = make_hierarchical_gaussians(cfg.groups, cfg.classes, cfg.input_dim, cfg.per_class,
                                         cfg.seed, spread=cfg.spread)
        train, test = split(ds, cfg.test_fraction, cfg.seed)
        name = ds.name
    if cfg.train_limit:
        train = train.take(slice(0, cfg.train_limit))
    if cfg.test_limit:
        test = test.take(slice(0, cfg.test_limit))
    return train, test, name


def _bounds(dataset_name: str):
    return attacks.PIXEL_RANGE if dataset_name.startswith("mnist") else None


# -- training -------------------------------------------------------------------


def model_clip(cfg: ExperimentConfig, model: str, r: float | None = None) -> ClipConfig:
    if model == "vanilla":
        return ClipConfig.vanilla()
    if model == "euclidean":
        return ClipConfig(mode="none")
    base = cfg.clip_config()
    return ClipConfig(mode=base.mode, r=r if r is not None else base.r, beta=base.beta, T=base.T)


def init_model(cfg: ExperimentConfig, model: str, input_dim: int, n_classes: int,
               r: float | None = None, dim: int | None = None) -> TrainState:
    sizes = [input_dim, *cfg.hidden_sizes(), dim or cfg.dim]
    return new_state(
        sizes, n_classes, cfg.seed,
        head="euclidean" if model == "euclidean" else "hyperbolic",
        clip=model_clip(cfg, model, r), c=cfg.c, output_gain=cfg.output_gain,
        lr_e=cfg.lr_e, lr_h=cfg.lr_h, momentum=cfg.momentum, embedding_grad=cfg.embedding_grad,
    )


@dataclass
class TrainResult:
    state: TrainState
    trace: MetricTrace
    epochs: list  # (epoch, mean train loss, test accuracy)


def accuracy(state: TrainState, data: Dataset) -> float:
    if len(data) == 0:
        return float("nan")
    return float(np.mean(np.argmax(logits_of(state, data.X), axis=-1) == data.y))


def train_model(cfg: ExperimentConfig, state: TrainState, train: Dataset, test: Dataset | None = None,
                bounds=None) -> TrainResult:
    """Epoch loop with a seeded shuffle per epoch; the last partial batch is kept."""
    trace = MetricTrace()
    epochs = []
    n = len(train)
    for epoch in range(cfg.epochs):
        perm = state.rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            Xb, yb = train.X[idx], train.y[idx]
            if cfg.adv_train and cfg.adv_eps > 0:
                Xb = attacks.fgsm(state, Xb, yb, cfg.adv_eps, bounds)
            state, rec = train_step(state, Xb, yb)
            trace.append(rec)
            losses.append(rec.loss)
        test_acc = accuracy(state, test) if test is not None else float("nan")
        epochs.append((epoch, float(np.mean(losses)), test_acc))
    return TrainResult(state, trace, epochs)


def _trace_rows(trace: MetricTrace, steps_per_epoch: int | None = None):
    rows = []
    for rec in trace:
        epoch = rec.step // steps_per_epoch if steps_per_epoch else 0
        rows.append((rec.step, epoch, rec.loss, rec.encoder_grad_norm, rec.mean_embedding_norm,
                     rec.min_metric_factor, rec.accuracy))
    return rows


def per_class_accuracy(state: TrainState, data: Dataset, n_classes: int):
    pred = np.argmax(logits_of(state, data.X), axis=-1)
    rows = []
    for k in range(n_classes):
        mask = data.y == k
        total = int(mask.sum())
        correct = int(np.sum(pred[mask] == k))
        rows.append((k, total, correct, correct / total if total else float("nan")))
    return rows


def _out(out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _n_classes(train: Dataset, test: Dataset) -> int:
    return int(max(train.y.max(), test.y.max())) + 1


# -- classification -------------------------------------------------------------


def run_classification(cfg: ExperimentConfig, out_dir) -> dict:
    out = _out(out_dir)
    train, test, name = load_data(cfg)
    K = _n_classes(train, test)
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    summary = {"dataset": name, "train_size": len(train), "test_size": len(test), "models": {}}
    for model in cfg.model_list():
        state = init_model(cfg, model, train.X.shape[1], K)
        res = train_model(cfg, state, train, test, _bounds(name))
        write_csv(out / f"trace_{model}.csv", TRACE_HEADER, _trace_rows(res.trace, steps_per_epoch))
        write_csv(out / f"epochs_{model}.csv", ("epoch", "train_loss", "test_accuracy"), res.epochs)
        per_class = per_class_accuracy(res.state, test, K)
        write_csv(out / f"per_class_{model}.csv", ("class", "count", "correct", "accuracy"), per_class)
        save_checkpoint(res.state, out / f"model_{model}.ckpt")
        summary["models"][model] = {
            "test_accuracy": accuracy(res.state, test),
            "train_accuracy": accuracy(res.state, train),
            "final_loss": res.trace[-1].loss if len(res.trace) else float("nan"),
            "per_class_accuracy": [row[3] for row in per_class],
        }
    write_json(out / "summary.json", summary)
    return summary


# -- vanishing-gradient diagnostic ------------------------------------------------


def tracked_indices(n: int, count: int, seed: int) -> np.ndarray:
    rng = Xoshiro256pp(seed)
    rng.jump()
    return np.sort(rng.permutation(n)[:count])


def loss_trend(losses: np.ndarray) -> tuple[float, float]:
    """Least-squares slope of a loss series and its t statistic (slope / standard error)."""
    k = len(losses)
    if k < 3:
        return 0.0, 0.0
    t = np.arange(k, dtype=np.float64)
    tc = t - t.mean()
    slope = float(np.sum(tc * (losses - losses.mean())) / np.sum(tc * tc))
    resid = losses - losses.mean() - slope * tc
    se = math.sqrt(float(np.sum(resid * resid)) / (k - 2) / float(np.sum(tc * tc)))
    tstat = slope / se if se > 0 else (0.0 if slope == 0 else math.copysign(math.inf, slope))
    return slope, tstat


def diagnostic_summary(trace: MetricTrace, early_step: int = 10) -> dict:
    loss = trace.column("loss")
    grad = trace.column("encoder_grad_norm")
    k = max(3, len(trace) // 10)
    slope, tstat = loss_trend(loss[-k:])
    early = float(grad[min(early_step, len(grad) - 1)])
    final = float(np.median(grad[-k:]))
    return {
        "steps": len(trace),
        "final_mean_norm": float(trace[-1].mean_embedding_norm),
        "max_mean_norm": float(np.max(trace.column("mean_embedding_norm"))),
        "early_grad_norm": early,
        "final_grad_norm": final,
        "grad_ratio": final / early if early > 0 else float("nan"),
        "final_window": k,
        "final_loss_slope": slope,
        "final_loss_tstat": tstat,
        "min_metric_factor": float(np.min(trace.column("min_metric_factor"))),
    }


def gradient_diagnostic(cfg: ExperimentConfig, train: Dataset, r: float):
    """Train a 2-D head for ``cfg.steps`` steps, tracking the embeddings of fixed samples."""
    if cfg.dim != 2:
        raise ValueError("the gradient diagnostic needs a 2-dimensional embedding")
    model = "vanilla" if r == ClipConfig.vanilla().r else "clipped"
    state = init_model(cfg, model, train.X.shape[1], int(train.y.max()) + 1, r=r)
    tracked = tracked_indices(len(train), cfg.tracked, cfg.seed)
    X_tr = train.X[tracked]
    trace = MetricTrace()
    traj = []
    n = len(train)
    perm, pos = state.rng.permutation(n), 0
    for step in range(cfg.steps + 1):
        pts = embed_inputs(state, X_tr)
        traj.extend((step, int(i), float(p[0]), float(p[1])) for i, p in zip(tracked, pts))
        if step == cfg.steps:
            break
        if pos + cfg.batch_size > n:
            perm, pos = state.rng.permutation(n), 0
        idx = perm[pos:pos + cfg.batch_size]
        pos += cfg.batch_size
        state, rec = train_step(state, train.X[idx], train.y[idx])
        trace.append(rec)
    return state, trace, traj


def run_gradient_diagnostic(cfg: ExperimentConfig, out_dir) -> dict:
    out = _out(out_dir)
    train, _, name = load_data(cfg)
    summary = {"dataset": name, "runs": {}}
    for r in cfg.diag_r_list():
        tag = f"r{r:g}"
        _, trace, traj = gradient_diagnostic(cfg, train, r)
        write_csv(out / f"trace_{tag}.csv", TRACE_HEADER, _trace_rows(trace))
        write_csv(out / f"trajectories_{tag}.csv", ("step", "sample", "x", "y"), traj)
        info = diagnostic_summary(trace)
        init = [math.hypot(x, y) for step, _, x, y in traj if step == 0]
        info["r"] = r
        info["initial_tracked_max_norm"] = max(init) if init else float("nan")
        info["clip_factor_bound"] = float(metric_factor(np.array([math.tanh(math.sqrt(cfg.c) * r)
                                                                  / math.sqrt(cfg.c), 0.0]), cfg.c))
        summary["runs"][tag] = info
    write_json(out / "summary.json", summary)
    return summary


# -- sweeps -------------------------------------------------------------------------


def run_sweep_r(cfg: ExperimentConfig, out_dir) -> dict:
    out = _out(out_dir)
    train, test, name = load_data(cfg)
    K = _n_classes(train, test)
    rows = []
    for r in cfg.r_list():
        res = train_model(cfg, init_model(cfg, "clipped", train.X.shape[1], K, r=r), train, test)
        rows.append((r, accuracy(res.state, train), accuracy(res.state, test)))
    write_csv(out / "sweep_r.csv", ("r", "train_accuracy", "test_accuracy"), rows)
    summary = {"dataset": name, "test_accuracy": {f"{r:g}": acc for r, _, acc in rows}}
    write_json(out / "summary.json", summary)
    return summary


def run_sweep_dim(cfg: ExperimentConfig, out_dir) -> dict:
    out = _out(out_dir)
    train, test, name = load_data(cfg)
    K = _n_classes(train, test)
    rows = []
    for dim in cfg.dim_list():
        for model in cfg.model_list():
            state = init_model(cfg, model, train.X.shape[1], K, dim=dim)
            res = train_model(cfg, state, train, test)
            rows.append((dim, model, accuracy(res.state, test)))
    write_csv(out / "sweep_dim.csv", ("dim", "model", "test_accuracy"), rows)
    table: dict = {}
    for dim, model, acc in rows:
        table.setdefault(str(dim), {})[model] = acc
    summary = {"dataset": name, "test_accuracy": table}
    write_json(out / "summary.json", summary)
    return summary


# -- adversarial robustness ---------------------------------------------------------


def adversarial_sets(state: TrainState, X, y, cfg: ExperimentConfig, bounds) -> dict:
    return {
        "clean": X,
        "fgsm": attacks.fgsm(state, X, y, cfg.eps, bounds),
        "pgd": attacks.pgd(state, X, y, cfg.eps, cfg.pgd_steps, cfg.pgd_step_size, bounds),
    }


def run_attack(cfg: ExperimentConfig, out_dir) -> dict:
    out = _out(out_dir)
    train, test, name = load_data(cfg)
    K = _n_classes(train, test)
    bounds = _bounds(name)
    sub = test.take(slice(0, cfg.attack_limit)) if cfg.attack_limit else test
    rows = []
    summary = {"dataset": name, "eps": cfg.eps, "attacked": len(sub), "models": {}}
    for model in cfg.model_list():
        res = train_model(cfg, init_model(cfg, model, train.X.shape[1], K), train, None, bounds)
        sets = adversarial_sets(res.state, sub.X, sub.y, cfg, bounds)
        accs = {m: float(np.mean(np.argmax(logits_of(res.state, x), axis=-1) == sub.y))
                for m, x in sets.items()}
        stronger = float(np.mean(per_sample_loss(res.state, sets["pgd"], sub.y)
                                 >= per_sample_loss(res.state, sets["fgsm"], sub.y)))
        for method, acc in accs.items():
            rows.append((model, method, cfg.eps if method != "clean" else 0.0, acc))
        summary["models"][model] = {**{f"{m}_accuracy": a for m, a in accs.items()},
                                    "pgd_loss_ge_fgsm_fraction": stronger}
    write_csv(out / "attack.csv", ("model", "attack", "eps", "accuracy"), rows)
    write_json(out / "summary.json", summary)
    return summary


# -- OOD --------------------------------------------------------------------------------


def shifted_copy(data: Dataset, shift: float, seed: int) -> Dataset:
    """The same samples translated by ``shift`` along a seeded random unit direction."""
    rng = Xoshiro256pp(seed)
    rng.jump()
    rng.jump()
    d = rng.normal(data.X.shape[1])
    d /= np.linalg.norm(d)
    return Dataset(data.X + shift * d, data.y, data.name + "-shifted", "ood")


def run_ood(cfg: ExperimentConfig, out_dir) -> dict:
    out = _out(out_dir)
    train, test, name = load_data(cfg)
    K = _n_classes(train, test)
    ood = shifted_copy(test, cfg.ood_shift, cfg.seed)
    kinds = ("softmax", "energy") if cfg.score == "both" else (cfg.score,)
    rows = []
    summary = {"dataset": name, "ood": ood.name, "models": {}}
    for model in cfg.model_list():
        res = train_model(cfg, init_model(cfg, model, train.X.shape[1], K), train, None)
        entry = {"test_accuracy": accuracy(res.state, test)}
        for kind in kinds:
            m = metric_suite(state_scores(res.state, test.X, kind, cfg.ood_T),
                             state_scores(res.state, ood.X, kind, cfg.ood_T))
            rows.append((model, kind, m.fpr95, m.auroc, m.aupr))
            entry[kind] = m._asdict()
        summary["models"][model] = entry
    write_csv(out / "ood.csv", ("model", "score", "fpr95", "auroc", "aupr"), rows)
    write_json(out / "summary.json", summary)
    return summary


# -- embeddings --------------------------------------------------------------------------


def embed_config(cfg: ExperimentConfig) -> emb.EmbedConfig:
    return emb.EmbedConfig(dim=cfg.embed_dim, epochs=cfg.embed_epochs, lr=cfg.embed_lr,
                           negatives=cfg.negatives, batch_size=cfg.embed_batch, burn_in=cfg.burn_in,
                           c=cfg.c, r=cfg.r, seed=cfg.seed)


def run_embed(cfg: ExperimentConfig, out_dir) -> dict:
    out = _out(out_dir)
    if cfg.edges:
        h = emb.read_edge_list(cfg.edges)
        source = cfg.edges
    else:
        h = emb.synthetic_tree(cfg.tree_depth, cfg.tree_branching)
        source = f"tree(depth={cfg.tree_depth}, branching={cfg.tree_branching})"
    ecfg = embed_config(cfg)
    rows = []
    summary = {"hierarchy": source, "nodes": len(h), "edges": len(h.edges), "modes": {}}
    for mode in cfg.embed_mode_list():
        res = emb.train_embeddings(h, mode, ecfg)
        score = emb.map_score(res.table, h, mode, cfg.c)
        final = float(res.losses[-1]) if len(res.losses) else float("nan")
        rows.append((mode, score, final, float(np.max(np.linalg.norm(res.table, axis=1)))))
        emb.write_embeddings(out / f"embeddings_{mode}.txt", h, res.table)
        write_csv(out / f"loss_{mode}.csv", ("epoch", "loss"), list(enumerate(res.losses.tolist())))
        summary["modes"][mode] = {"map": score, "final_loss": final}
    write_csv(out / "embed.csv", ("mode", "map", "final_loss", "max_norm"), rows)
    write_json(out / "summary.json", summary)
    return summary


RUNNERS = {
    "classify": run_classification,
    "diagnose": run_gradient_diagnostic,
    "sweep-r": run_sweep_r,
    "sweep-dim": run_sweep_dim,
    "attack": run_attack,
    "ood": run_ood,
    "embed": run_embed,
}
