"""Experiment recipes behind the CLI.

Each ``cmd_*`` function takes a resolved configuration and an output
directory, writes a run manifest before anything else, and returns a small
summary dict. Outputs that must be reproducible (datasets, checkpoints, CSV)
never contain timestamps or absolute paths; wall-clock timings go to their
own ``timing.csv``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .. import __version__, classify, io, theory
from .._rng import substream
from ..encoder import EncoderConfig, EncoderParams, forward_flops, init_params, param_count, receptive_field, transform
from ..federate import FedConfig, run_training
from ..partition import ClientDataset, DirichletSpec, dirichlet_tables, fixed_partition, make_test_split, noniid_tables, partition_manifest
from ..signal import CfoRegimeMix, ChannelLaw, FrameSet, Modulation, generate_frames
from .config import canonical_json, config_hash


class DataError(ValueError):
    """Input data is missing, malformed or inconsistent with the configuration."""


class InvariantError(RuntimeError):
    """An output failed an internal consistency check."""


# ------------------------------------------------------------------ manifests


@dataclasses.dataclass
class RunManifest:
    command: str
    kind: str
    config: dict
    seed: int
    version: str
    output_dir: str
    config_hash: str
    hashes: dict = dataclasses.field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"


def manifest_path(out: Path, command: str) -> Path:
    return Path(out) / f"manifest-{command}.json"


def write_manifest(out: Path, command: str, cfg: dict, hashes: Optional[dict] = None) -> RunManifest:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    m = RunManifest(command, cfg["run"]["kind"], cfg, int(cfg["run"]["seed"]), __version__, str(out), config_hash(cfg), hashes or {})
    manifest_path(out, command).write_text(m.to_json())
    return m


def load_manifest(path) -> RunManifest:
    try:
        data = json.loads(Path(path).read_text())
        return RunManifest(**data)
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise DataError(f"cannot read run manifest {path}: {exc}") from exc


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ------------------------------------------------------------------ data


def class_schemes(cfg: dict) -> list[Modulation]:
    try:
        return [Modulation.parse(c) for c in cfg["data"]["classes"]]
    except (KeyError, ValueError) as exc:
        raise DataError(f"unknown modulation in data.classes: {exc}") from exc


def client_law(cfg: dict, client: int, test: bool = False, snr: Optional[float] = None) -> ChannelLaw:
    d = cfg["data"]
    kind = cfg["run"]["kind"]
    snr_range = tuple(d["snr_range"])
    if kind == "snr_hetero":
        snr_range = tuple(d["client_snr_ranges"][client])
    if test:
        snr_range = tuple(d["test_snr_range"])
    if snr is not None:
        snr_range = (float(snr), float(snr))
    cfo = float(d["cfo"])
    if kind == "cfo_hetero":
        cfo = CfoRegimeMix(tuple(tuple(i) for i in d["cfo_intervals"]), tuple(d["client_cfo_proportions"][client]))
    return ChannelLaw(snr_range=tuple(float(s) for s in snr_range), cfo=cfo, frame_length=int(d["frame_length"]))


def _generate_class(cfg: dict, position: int, count: int, law: ChannelLaw, rng) -> FrameSet:
    frames = generate_frames(class_schemes(cfg)[position], count, law, rng)
    frames.labels[:] = position
    return frames


def partition_tables(cfg: dict) -> tuple[np.ndarray, np.ndarray]:
    d = cfg["data"]
    k = len(d["classes"])
    clients = int(d["num_clients"])
    if cfg["run"]["kind"] == "dirichlet":
        spec = DirichletSpec(float(d["dirichlet_alpha"]), clients, k)
        _, u, l = dirichlet_tables(spec, d["dirichlet_unlabeled_per_class"], d["dirichlet_labeled_per_class"], substream(cfg["run"]["seed"], "dirichlet"))
        return u, l
    if d["unlabeled_table"] is not None:
        u = np.asarray(d["unlabeled_table"], dtype=np.int64)
        l = np.asarray(d["labeled_table"] if d["labeled_table"] is not None else u // 5, dtype=np.int64)
    else:
        u, l = noniid_tables(int(d["table_divisor"]))
        if u.shape != (clients, k):
            raise DataError("the built-in partition table covers 4 clients and 4 classes; give data.unlabeled_table")
        return u, l
    u = u // int(d["table_divisor"])
    l = l // int(d["table_divisor"])
    if u.shape != (clients, k) or l.shape != (clients, k):
        raise DataError(f"partition tables must have shape ({clients}, {k}) (clients x classes)")
    return u, l


def build_clients(cfg: dict) -> list[ClientDataset]:
    """Generate every client's unlabeled, labeled and test pools."""
    seed = int(cfg["run"]["seed"])
    u, l = partition_tables(cfg)
    k = len(cfg["data"]["classes"])
    clients = []
    for c in range(u.shape[0]):
        law = client_law(cfg, c)
        frames = {j: _generate_class(cfg, j, int(u[c, j] + l[c, j]), law, substream(seed, "data", c, j)) for j in range(k)}
        ds = fixed_partition(frames, u[c : c + 1], l[c : c + 1])[0]
        test_law = client_law(cfg, c, test=True)
        labeled, test = make_test_split(
            ds.labeled,
            lambda j, n, rng: _generate_class(cfg, j, n, test_law, rng),
            substream(seed, "test", c),
            num_classes=k,
            divisor=int(cfg["data"]["test_divisor"]),
        )
        clients.append(ClientDataset(c, ds.unlabeled, labeled, test, k, ds.unlabeled_counts))
    return clients


POOLS = ("unlabeled", "labeled", "test")


def data_dir(out: Path) -> Path:
    return Path(out) / "data"


def cmd_generate(cfg: dict, out: Path) -> dict:
    out = Path(out)
    write_manifest(out, "generate", cfg)
    clients = build_clients(cfg)
    ddir = data_dir(out)
    hashes = {}
    for ds in clients:
        for pool in POOLS:
            path = ddir / f"client{ds.client_id}_{pool}.iqds"
            io.write_iqds(path, getattr(ds, pool))
            header = io.read_iqds_header(path)
            if header["frame_count"] != len(getattr(ds, pool)):
                raise InvariantError(f"{path.name}: header frame count does not match the pool")
            hashes[path.name] = sha256(path)
    manifest = partition_manifest(clients, {"seed": cfg["run"]["seed"]})
    manifest["config_hash"] = config_hash(data_config(cfg))
    manifest["files"] = hashes
    (ddir / "partition.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    hashes["partition.json"] = sha256(ddir / "partition.json")
    write_manifest(out, "generate", cfg, hashes)
    return {"clients": [ds.counts() for ds in clients], "files": sorted(hashes)}


def load_clients(cfg: dict, out: Path, materialize: bool = True) -> list[ClientDataset]:
    ddir = data_dir(out)
    part = ddir / "partition.json"
    current = part.exists() and json.loads(part.read_text()).get("config_hash") == config_hash(data_config(cfg))
    if not current:
        if not materialize:
            raise DataError(f"no dataset for this configuration under {ddir}")
        cmd_generate(cfg, out)
    info = json.loads(part.read_text())
    k = len(cfg["data"]["classes"])
    clients = []
    for entry in info["clients"]:
        c = entry["client_id"]
        pools = {}
        for pool in POOLS:
            path = ddir / f"client{c}_{pool}.iqds"
            try:
                pools[pool] = io.read_iqds(path)
            except FileNotFoundError as exc:
                raise DataError(f"missing dataset file {path}") from exc
        clients.append(ClientDataset(c, pools["unlabeled"], pools["labeled"], pools["test"], k, entry["unlabeled"]))
    return clients


def data_config(cfg: dict) -> dict:
    """The configuration subset that determines the generated data."""
    return {"run": {"kind": cfg["run"]["kind"], "seed": cfg["run"]["seed"]}, "data": cfg["data"]}


# ------------------------------------------------------------------ training


def encoder_config(cfg: dict) -> EncoderConfig:
    e = cfg["encoder"]
    return EncoderConfig(depth=int(e["depth"]), kernel_size=int(e["kernel_size"]), channels=int(e["channels"]), feature_dim=int(e["feature_dim"]))


def fed_config(cfg: dict, num_clients: int) -> FedConfig:
    f, s = cfg["federate"], cfg["ssl"]
    quant = f["quantization"]
    if cfg["run"]["kind"] == "quant_hetero":
        quant = f["client_quantization"]
    if quant is not None and len(quant) != num_clients:
        raise DataError(f"quantization lists {len(quant)} levels for {num_clients} clients")
    return FedConfig(
        rounds=int(f["rounds"]),
        local_steps=int(f["local_steps"]),
        batch_size=int(s["batch_size"]),
        lr=float(s["lr"]),
        seed=int(cfg["run"]["seed"]),
        negatives=int(s["negatives"]),
        min_window=int(s["min_window"]),
        quantization=quant,
        n_jobs=int(cfg["run"]["n_jobs"]),
    )


def checkpoint_dir(out: Path) -> Path:
    return Path(out) / "checkpoints"


def round_checkpoint(out: Path, t: int) -> Path:
    return checkpoint_dir(out) / f"round_{t:03d}.encp"


def _checkpoint_meta(cfg: dict, t: int) -> dict:
    return {"encoder": encoder_config(cfg).to_dict(), "round": t, "config_hash": config_hash(training_config(cfg))}


def training_config(cfg: dict) -> dict:
    """Everything that determines the trained encoder (``n_jobs`` does not)."""
    return {**data_config(cfg), **{k: cfg[k] for k in ("encoder", "ssl", "federate")}}


def latest_checkpoint(cfg: dict, out: Path) -> int:
    """Highest round with a checkpoint written by this configuration (0 if none)."""
    want = config_hash(training_config(cfg))
    best = 0
    for t in range(1, int(cfg["federate"]["rounds"]) + 1):
        path = round_checkpoint(out, t)
        if not path.exists():
            break
        meta, _ = io.read_checkpoint(path)
        if meta.get("config_hash") != want:
            break
        best = t
    return best


METRIC_HEADER = ("round", "client", "mean_loss")
TRACE_HEADER = ("round", "client", "step", "loss")
TIMING_HEADER = ("round", "client", "wall_ms")


def _rows_up_to(path: Path, header, last_round: int) -> list:
    if not path.exists() or last_round == 0:
        return []
    return [tuple(r[h] for h in header) for r in io.read_csv(path) if int(r["round"]) <= last_round]


def cmd_train(cfg: dict, out: Path, resume: bool = True) -> dict:
    out = Path(out)
    write_manifest(out, "train", cfg)
    clients = load_clients(cfg, out)
    enc_cfg = encoder_config(cfg)
    fed = fed_config(cfg, len(clients))
    pools = [ds.unlabeled.as_real() for ds in clients]
    counts = [len(ds.unlabeled) for ds in clients]
    if min(counts) < 2:
        raise DataError("every client needs at least two unlabeled frames")

    start = latest_checkpoint(cfg, out) if resume else 0
    if start:
        _, flat = io.read_checkpoint(round_checkpoint(out, start))
        params = EncoderParams(enc_cfg, flat)
    else:
        params = init_params(enc_cfg, substream(fed.seed, "init"))
        io.write_checkpoint(round_checkpoint(out, 0), _checkpoint_meta(cfg, 0), params.flat)

    metrics = _rows_up_to(out / "round_metrics.csv", METRIC_HEADER, start)
    trace = _rows_up_to(out / "loss_trace.csv", TRACE_HEADER, start)
    timing = _rows_up_to(out / "timing.csv", TIMING_HEADER, start)

    def on_round(state, updates):
        io.write_checkpoint(round_checkpoint(out, state.round), _checkpoint_meta(cfg, state.round), state.params.flat)
        for u in updates:
            metrics.append((state.round, u.client, float(np.mean(u.losses)) if u.losses.size else float("nan")))
            trace.extend((state.round, u.client, s, float(v)) for s, v in enumerate(u.losses))
            timing.append((state.round, u.client, round(u.wall_ms, 3)))
        io.write_csv(out / "round_metrics.csv", METRIC_HEADER, metrics)
        io.write_csv(out / "loss_trace.csv", TRACE_HEADER, trace)
        io.write_csv(out / "timing.csv", TIMING_HEADER, timing)

    final = params
    if start < fed.rounds:
        final, _ = run_training(params, pools, fed, callback=on_round, start_round=start)
    io.write_checkpoint(out / "encoder.encp", _checkpoint_meta(cfg, fed.rounds), final.flat)
    if len(metrics) != fed.rounds * len(clients):
        raise InvariantError(f"round_metrics.csv has {len(metrics)} rows, expected {fed.rounds * len(clients)}")
    hashes = {p.name: sha256(p) for p in sorted(checkpoint_dir(out).glob("*.encp"))}
    hashes.update({name: sha256(out / name) for name in ("encoder.encp", "round_metrics.csv", "loss_trace.csv")})
    write_manifest(out, "train", cfg, hashes)
    first = [float(r[2]) for r in metrics if int(r[0]) == 1]
    last = [float(r[2]) for r in metrics if int(r[0]) == fed.rounds]
    return {"rounds": fed.rounds, "resumed_from": start, "first_round_loss": float(np.mean(first)), "final_round_loss": float(np.mean(last))}


def load_encoder(cfg: dict, out: Path, materialize: bool = True) -> EncoderParams:
    path = Path(out) / "encoder.encp"
    want = config_hash(training_config(cfg))
    if not path.exists() or io.read_checkpoint(path)[0].get("config_hash") != want:
        if not materialize:
            raise DataError(f"no trained encoder for this configuration at {path}")
        cmd_train(cfg, out)
    meta, flat = io.read_checkpoint(path)
    return EncoderParams(EncoderConfig(**meta["encoder"]), flat)


# ------------------------------------------------------------------ evaluation


@dataclasses.dataclass
class ExperimentResult:
    client_accuracy: list
    mean_accuracy: float
    confusion: list
    snr_table: list
    loss_traces: dict


def fit_client(cfg: dict, features: np.ndarray, labels: np.ndarray, num_classes: int) -> classify.SvmModel:
    c = cfg["classify"]
    return classify.fit(features, labels, num_classes, float(c["C"]), int(c["epochs"]), float(c["lr"]), bool(c["standardize"]))


def evaluate_features(cfg: dict, train_feats, train_labels, test_feats, test_labels, num_classes: int):
    """Fit one SVM and score it; returns ``(model, Evaluation)``."""
    model = fit_client(cfg, train_feats, train_labels, num_classes)
    return model, classify.evaluate(model, test_feats, test_labels)


def _sweep_set(cfg: dict, ds: ClientDataset, snr: float, index: int, pool: str) -> FrameSet:
    k = len(cfg["data"]["classes"])
    counts = ds.labeled.class_counts(k)
    if pool == "test":
        counts = counts // int(cfg["evaluate"]["sweep_frames_divisor"])
    law = client_law(cfg, ds.client_id, snr=snr)
    seed = int(cfg["run"]["seed"])
    parts = [_generate_class(cfg, j, int(n), law, substream(seed, "sweep", pool, ds.client_id, index, j)) for j, n in enumerate(counts) if n > 0]
    return FrameSet.concat(parts)


def cmd_evaluate(cfg: dict, out: Path) -> dict:
    out = Path(out)
    write_manifest(out, "evaluate", cfg)
    clients = load_clients(cfg, out)
    params = load_encoder(cfg, out)
    k = len(cfg["data"]["classes"])
    names = list(cfg["data"]["classes"])
    rdir = out / "results"
    acc_rows, confusions, models = [], [], {}
    for ds in clients:
        if len(ds.test) == 0:
            raise DataError(f"client {ds.client_id} has an empty test split")
        model, ev = evaluate_features(cfg, transform(params, ds.labeled.as_real()), ds.labeled.labels, transform(params, ds.test.as_real()), ds.test.labels, k)
        models[ds.client_id] = model
        io.write_svm(rdir / f"client{ds.client_id}.svml", model.W, model.b)
        acc_rows.append((ds.client_id, ev.accuracy, len(ds.test)))
        confusions.append(ev.confusion.tolist())
        header = ["true\\pred"] + names
        io.write_csv(rdir / f"confusion_client{ds.client_id}.csv", header, [[names[i]] + list(row) for i, row in enumerate(ev.confusion)])
        io.write_csv(rdir / f"confusion_client{ds.client_id}_normalized.csv", header, [[names[i]] + list(row) for i, row in enumerate(ev.normalized)])
    mean_acc = float(np.mean([a for _, a, _ in acc_rows]))
    io.write_csv(rdir / "accuracy.csv", ("client", "accuracy", "test_frames"), acc_rows + [("mean", mean_acc, sum(n for _, _, n in acc_rows))])

    grid = [float(s) for s in cfg["evaluate"]["snr_grid"]]
    table = []
    for i, snr in enumerate(grid):
        row = []
        for ds in clients:
            test = _sweep_set(cfg, ds, snr, i, "test")
            model = models[ds.client_id]
            if cfg["evaluate"]["refit_per_snr"]:
                train = _sweep_set(cfg, ds, snr, i, "labeled")
                model = fit_client(cfg, transform(params, train.as_real()), train.labels, k)
            row.append(classify.evaluate(model, transform(params, test.as_real()), test.labels).accuracy)
        table.append([snr] + row + [float(np.mean(row))])
    io.write_csv(rdir / "snr_sweep.csv", ["snr_db"] + [f"client{ds.client_id}" for ds in clients] + ["mean"], table)

    traces = {}
    metrics_path = out / "round_metrics.csv"
    if metrics_path.exists():
        for r in io.read_csv(metrics_path):
            traces.setdefault(int(r["client"]), []).append(float(r["mean_loss"]))
    result = ExperimentResult([a for _, a, _ in acc_rows], mean_acc, confusions, table, traces)
    (rdir / "result.json").write_text(json.dumps(dataclasses.asdict(result), indent=2, sort_keys=True) + "\n")
    hashes = {p.name: sha256(p) for p in sorted(rdir.glob("*")) if p.is_file()}
    write_manifest(out, "evaluate", cfg, hashes)
    return {"mean_accuracy": mean_acc, "client_accuracy": result.client_accuracy, "snr_rows": len(table)}


# ------------------------------------------------------------------ theory


THEORY_HEADER = ("config_hash", "section", "quantity", "measured", "bound", "slack", "se")


def _spec_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:12]


def theory_lemma1(t: dict, seed: int) -> list:
    rows = []
    for m in t["lemma_m"]:
        for gamma in t["lemma_gamma"]:
            for lam in t["lemma_lambda"]:
                spec = theory.LinearModelSpec.truncated(int(m), float(t["lemma_R"]), float(lam), float(gamma), float(t["lemma_P"]))
                rng = substream(seed, "lemma1", int(m), repr(float(gamma)), repr(float(lam)))
                theta = rng.uniform(-spec.R, spec.R, size=(spec.m_out, spec.m))
                est = theory.mc_gradient_variance(spec, theta, int(t["lemma_samples"]), rng)
                bound = theory.lemma1_bound(spec)
                slack = bound - est.variance
                worst = np.unravel_index(np.argmin(slack + 3 * est.se), slack.shape)
                rows.append((_spec_hash(spec.to_dict()), "lemma1", f"var[{worst[0]},{worst[1]}] m={m} gamma={gamma} lam={lam}", float(est.variance[worst]), bound, float(slack[worst]), float(est.se[worst])))
    spec = theory.LinearModelSpec.truncated(int(max(t["lemma_m"])), float(t["lemma_R"]), 0.0, 1e6, float(t["lemma_P"]))
    full, simple = theory.lemma1_bound(spec), theory.lemma1_limit(spec)
    rows.append((_spec_hash(spec.to_dict()), "lemma1", "high-snr simplification (relative gap)", simple, full, 0.01 - abs(full - simple) / full, 0.0))
    return rows


def theory_theorem1(t: dict, seed: int) -> tuple[list, list]:
    spec = theory.LinearModelSpec.truncated(int(t["thm1_m"]), float(t["lemma_R"]), float(t["thm1_lambda"]), float(t["thm1_gamma"]), float(t["lemma_P"]))
    rows, runs = [], []
    for run in range(int(t["thm1_runs"])):
        for w in t["thm1_windows"]:
            result = theory.run_smoothed_sgd(
                spec,
                int(t["thm1_steps"]),
                int(w),
                substream(seed, "thm1", run),
                clients=int(t["thm1_clients"]),
                radius=float(t["thm1_radius"]),
            )
            se = float(np.std(result.trace) / math.sqrt(result.trace.size))
            bound = result.bound["full"]
            key = _spec_hash({**spec.to_dict(), "run": run, "window": int(w)})
            rows.append((key, "theorem1", f"mean |grad S|^2 run={run} w={w}", result.mean_grad_norm_sq, bound, bound - result.mean_grad_norm_sq, se))
            runs.append((run, int(w), result))
    return rows, runs


def theory_theorem2(t: dict, seed: int) -> list:
    rows = []
    mu = float(t["thm2_mu"])
    for i in range(int(t["thm2_instances"])):
        rng = substream(seed, "thm2", i)
        L = int(rng.integers(2, int(t["thm2_max_points"]) + 1))
        d = int(rng.integers(1, int(t["thm2_max_dim"]) + 1))
        x, y, w, b, rho = theory.random_separable_instance(rng, L, d, mu)
        margins = y * (x @ w + b)
        # noise level chosen so the bound is informative (between 0.05 and 0.95)
        gamma_enc = rho / (float(np.min(margins - mu)) + 0.25) ** 2 * float(rng.uniform(0.5, 4.0))
        worst, product = theory.theorem2_prob_bound(margins, mu, rho, gamma_enc)
        freq, se = theory.mc_separability(x, y, w, b, mu, rho, gamma_enc, int(t["thm2_trials"]), rng)
        key = _spec_hash({"instance": i, "L": L, "d": d, "gamma_enc": gamma_enc})
        rows.append((key, "theorem2", f"separable frequency L={L} d={d}", freq, product, freq - product, se))
        rows.append((key, "theorem2", "worst-slack form <= product form", worst, product, product - worst, 0.0))
    rng = substream(seed, "thm2", "control")
    x, y, w, b, rho = theory.random_separable_instance(rng, 10, 4, mu)
    freq, se = theory.mc_separability(x, y, w, b, mu, rho, math.inf, int(t["thm2_trials"]), rng)
    rows.append((_spec_hash({"control": True}), "theorem2", "noise-free control frequency", freq, 1.0, freq - 1.0, se))
    return rows


def cmd_theory(cfg: dict, out: Path) -> dict:
    out = Path(out)
    write_manifest(out, "theory", cfg)
    t, seed = cfg["theory"], int(cfg["run"]["seed"])
    rows = theory_lemma1(t, seed)
    thm1_rows, runs = theory_theorem1(t, seed)
    rows += thm1_rows + theory_theorem2(t, seed)
    io.write_csv(out / "theory_report.csv", THEORY_HEADER, rows)
    failing = [r for r in rows if r[5] < -3 * r[6]]
    lines = [f"{'section':<10} {'quantity':<48} {'measured':>14} {'bound':>14} {'slack':>12} {'se':>10}"]
    for r in rows:
        lines.append(f"{r[1]:<10} {r[2]:<48.48} {r[3]:>14.6g} {r[4]:>14.6g} {r[5]:>12.4g} {r[6]:>10.3g}")
    lines.append("")
    lines.append(f"{len(rows)} checks, {len(failing)} with slack below -3 SE")
    (out / "theory_summary.txt").write_text("\n".join(lines) + "\n")
    write_manifest(out, "theory", cfg, {"theory_report.csv": sha256(out / "theory_report.csv")})
    return {"checks": len(rows), "failing": len(failing), "sections": sorted({r[1] for r in rows})}


# ------------------------------------------------------------------ resources


def layer_accounting(config: EncoderConfig, length: int) -> list:
    rows = []
    for i, (out_ch, in_ch, k) in enumerate(config.layer_shapes()):
        rows.append((f"conv{i}", out_ch, in_ch, k, config.dilation(i), out_ch * in_ch * k + 2 * out_ch, 2 * out_ch * in_ch * k * length))
    rows.append(("head", config.feature_dim, config.channels, 1, 0, config.feature_dim * config.channels + config.feature_dim, 2 * config.feature_dim * config.channels))
    return rows


def cmd_resources(cfg: dict, out: Path) -> dict:
    """Parameter count and multiply-add FLOPs for one forward pass at the frame length.

    Convolution FLOPs are ``2 * out * in * kernel * T`` (one multiply and one
    add per tap and output position); the head is ``2 * feature_dim * channels``.
    A training triplet costs ``negatives + 2`` forward passes.
    """
    out = Path(out)
    write_manifest(out, "resources", cfg)
    config = encoder_config(cfg)
    length = int(cfg["data"]["frame_length"])
    rows = layer_accounting(config, length)
    n_params = param_count(config)
    if sum(r[5] for r in rows) != n_params:
        raise InvariantError("per-layer parameter accounting disagrees with param_count")
    flops = forward_flops(config, length)
    summary = {
        "param_count": n_params,
        "receptive_field": receptive_field(config),
        "forward_flops": flops["conv"] + flops["head"],
        "forward_flops_with_elementwise": flops["total"],
        "triplet_flops": (int(cfg["ssl"]["negatives"]) + 2) * (flops["conv"] + flops["head"]),
        "frame_length": length,
    }
    io.write_csv(out / "resources.csv", ("layer", "out", "in", "kernel", "dilation", "params", "flops"), rows)
    (out / "resources.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(out, "resources", cfg, {"resources.csv": sha256(out / "resources.csv")})
    return summary


# ------------------------------------------------------------------ external data


RAW_DTYPES = {"f32": "f4", "f64": "f8", "i16": "i2"}


def export_raw(frames: FrameSet, data_path, labels_path, dtype: str = "f32") -> None:
    """Interleaved I/Q samples plus a one-label-per-line text sidecar."""
    code = "<" + RAW_DTYPES[dtype]
    iq = np.stack([frames.samples.real, frames.samples.imag], axis=-1).astype(code)
    Path(data_path).write_bytes(iq.tobytes())
    Path(labels_path).write_text("".join(f"{int(v)}\n" for v in frames.labels))


def _read_labels(path, count: int, classes) -> np.ndarray:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) != count:
        raise DataError(f"label sidecar has {len(lines)} entries but the data holds {count} frames")
    names = [c.upper() for c in classes]
    labels = []
    for ln in lines:
        if ln.lstrip("-").isdigit():
            labels.append(int(ln))
        elif ln.upper() in names:
            labels.append(names.index(ln.upper()))
        else:
            raise DataError(f"unknown label '{ln}' in {path}")
    return np.array(labels, dtype=np.int64)


def ingest_external(path, descriptor: dict, out_path) -> dict:
    """Convert an external recording to IQDS.

    ``descriptor`` keys: ``format`` (``raw`` or ``iqds``), ``dtype`` (f32, f64
    or i16), ``byte_order`` (little or big), ``frame_length``, ``scale``
    (multiplier applied to raw values), ``labels`` (sidecar path or null) and
    ``classes`` (names used in the sidecar).
    """
    fmt = descriptor.get("format", "raw")
    if fmt == "iqds":
        frames = io.read_iqds(path)
        has_meta = bool(io.read_iqds_header(path)["flags"] & io.IQDS_HAS_METADATA)
        io.write_iqds(out_path, frames, metadata=has_meta)
        return {"frames": len(frames), "frame_length": frames.frame_length}
    if fmt != "raw":
        raise DataError(f"unknown external format '{fmt}'")
    dtype = descriptor.get("dtype", "f32")
    if dtype not in RAW_DTYPES:
        raise DataError(f"unsupported sample type '{dtype}'")
    order = {"little": "<", "big": ">"}[descriptor.get("byte_order", "little")]
    n = int(descriptor["frame_length"])
    item = np.dtype(order + RAW_DTYPES[dtype])
    payload = Path(path).read_bytes()
    frame_bytes = 2 * n * item.itemsize
    if len(payload) % frame_bytes:
        complete = len(payload) // frame_bytes
        raise io.FormatError(f"raw I/Q file ends inside frame {complete} ({len(payload)} bytes, {frame_bytes} per frame)", complete * frame_bytes)
    count = len(payload) // frame_bytes
    iq = np.frombuffer(payload, dtype=item).astype(np.float64).reshape(count, n, 2) * float(descriptor.get("scale", 1.0))
    if not np.all(np.isfinite(iq)):
        raise DataError("raw I/Q file contains non-finite samples")
    labels = np.full(count, -1)
    if descriptor.get("labels"):
        labels = _read_labels(descriptor["labels"], count, descriptor.get("classes", [m.name for m in Modulation]))
    frames = FrameSet(iq[..., 0] + 1j * iq[..., 1], labels)
    io.write_iqds(out_path, frames, metadata=False)
    return {"frames": count, "frame_length": n}


# ------------------------------------------------------------------ sweeps


def cmd_sweep(cfg: dict, out: Path, param: str, values: list, repeats: int = 1) -> dict:
    """Run generate/train/evaluate for each value of ``param`` (and each seed repeat)."""
    from .config import merge, parse_override

    out = Path(out)
    write_manifest(out, "sweep", cfg)
    rows = []
    for value in values:
        accs = []
        for rep in range(repeats):
            sub = merge(cfg, parse_override(f"{param}={value}"))
            sub = merge(sub, {"run": {"seed": int(cfg["run"]["seed"]) + rep}})
            run_dir = out / f"{param}={value}" / f"seed{sub['run']['seed']}"
            cmd_generate(sub, run_dir)
            cmd_train(sub, run_dir)
            accs.append(cmd_evaluate(sub, run_dir)["mean_accuracy"])
        rows.append((value, float(np.mean(accs)), float(np.std(accs)), len(accs)))
    io.write_csv(out / "sweep.csv", ("value", "mean_accuracy", "std_accuracy", "runs"), rows)
    write_manifest(out, "sweep", cfg, {"sweep.csv": sha256(out / "sweep.csv")})
    return {"param": param, "rows": rows}
