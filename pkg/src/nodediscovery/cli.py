"""Command-line entry point: synth, analyze, estimate and roc.

Every option can also come from a JSON file given with ``--config``; flags on
the command line override the file. Exit codes: 0 success, 1 runtime
failure, 2 invalid configuration or usage.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import discriminate as disc
from .estimate import EstimationConfig, estimate_parameters, prepare_i_series
from .evaluate import (
    TrialBatch,
    TrialConfig,
    measure_zscore_moments,
    roc_sweep,
    run_trial,
    write_moment_table,
)
from .ingest import parse_timeseries, smooth_moving_average, to_deltaJ, write_provenance
from .moments import zscore_series
from .network import Network, gamma_from_topology
from .simulate import Dataset, TransmissionParams, draw_scenario, synthesize_dataset, write_sidecar

log = logging.getLogger("nodediscovery")


class ConfigError(ValueError):
    pass


def _positive(x):
    v = float(x)
    if not v > 0:
        raise ValueError(f"must be positive, got {x}")
    return v


def _nonneg_int(x):
    v = int(x)
    if v < 0:
        raise ValueError(f"must be a nonnegative integer, got {x}")
    return v


def _pos_int(x):
    v = int(x)
    if v < 1:
        raise ValueError(f"must be a positive integer, got {x}")
    return v


def _flag(x):
    if isinstance(x, bool):
        return x
    if str(x).lower() in ("1", "true", "yes"):
        return True
    if str(x).lower() in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {x}")


_TRANSMISSION = {
    "alpha": (_positive, None, "infection rate (default from --r with alpha + beta = 0.1)"),
    "beta": (_positive, None, "recovery rate (default from --r)"),
    "r": (_positive, 2.0, "alpha / beta, used when alpha and beta are not both given"),
    "gamma": (_positive, 0.1, "fraction of a node's population moving out per unit time"),
}
_SYNTH = {
    "n": (_pos_int, 10, "number of observed nodes"),
    "mean_degree": (_positive, 2.0, "mean degree of the random graph"),
    "scenario": (str, "index", "hidden spreader: absent, index or intermediate", ("absent", "index", "intermediate")),
    "d": (_pos_int, 100, "number of observations D"),
    "delta_t": (_positive, 1.0, "observation interval"),
    "substeps": (_pos_int, 10, "integration steps per interval"),
    "initial_infected": (_positive, 200.0, "infected persons at the seed node"),
    "seed_node": (_nonneg_int, 0, "seed node for absent and intermediate scenarios"),
}
_ESTIMATION = {
    "restarts": (_pos_int, 10, "topology search restarts"),
    "var_floor": (_positive, 1.0, "variance floor added to the transition covariance"),
}
SCHEMAS = {
    "synth": {
        **_TRANSMISSION,
        **_SYNTH,
        "seed": (_nonneg_int, None, "random seed (required)"),
        "out": (str, None, "output directory (required)"),
    },
    "analyze": {
        **_TRANSMISSION,
        **_ESTIMATION,
        "data": (str, None, "dataset CSV (t,...) or cumulative cases (date,...) (required)"),
        "kind": (str, "auto", "series kind of a t,... dataset", ("auto", "I", "deltaJ")),
        "network": (str, None, "network JSON for given-parameter analysis"),
        "estimate": (_flag, False, "estimate parameters and topology from the data"),
        "l_star": (float, -3.6, "tail-end threshold L*"),
        "t_star": (float, 2.1, "mid-body threshold T*"),
        "window": (_pos_int, 1, "moving-average window for cumulative input (odd)"),
        "min_cases": (float, None, "drop regions with fewer cumulative cases"),
        "seed": (_nonneg_int, 0, "random seed for estimation"),
        "out": (str, None, "output directory (required)"),
    },
    "estimate": {
        **_ESTIMATION,
        "data": (str, None, "dataset CSV (t,...) or cumulative cases (date,...) (required)"),
        "kind": (str, "auto", "series kind of a t,... dataset", ("auto", "I", "deltaJ")),
        "window": (_pos_int, 1, "moving-average window for cumulative input (odd)"),
        "min_cases": (float, None, "drop regions with fewer cumulative cases"),
        "seed": (_nonneg_int, 0, "random seed"),
        "out": (str, None, "output directory (required)"),
    },
    "roc": {
        **_TRANSMISSION,
        **{k: v for k, v in _SYNTH.items()},
        **_ESTIMATION,
        "series": (str, "I", "synthesized observable", ("I", "deltaJ")),
        "theta": (str, "given", "analyse with the true or the estimated parameters", ("given", "unknown")),
        "trials": (_pos_int, 100, "number of random topologies"),
        "base_seed": (_nonneg_int, 0, "seed of the first trial"),
        "max_failures": (_nonneg_int, 0, "tolerated failed trials"),
        "out": (str, None, "output directory (required)"),
    },
}
REQUIRED = {"synth": ("seed", "out"), "analyze": ("data", "out"), "estimate": ("data", "out"), "roc": ("out",)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nodediscovery", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, schema in SCHEMAS.items():
        p = sub.add_parser(cmd)
        p.add_argument("--config", default=argparse.SUPPRESS, help="JSON file with option values")
        for key, spec in schema.items():
            conv, _, help_text = spec[:3]
            kwargs = {"default": argparse.SUPPRESS, "help": help_text}
            if conv is _flag:
                kwargs["action"] = "store_true"
            else:
                kwargs["type"] = conv
                if len(spec) > 3:
                    kwargs["choices"] = spec[3]
            names = ["--" + key.replace("_", "-")]
            if key == "out":
                names.insert(0, "-o")
            if key == "n":
                names.append("--n-nodes")
            p.add_argument(*names, dest=key, **kwargs)
    return parser


def resolve_config(command: str, flags: dict) -> dict:
    """Defaults, then the JSON config, then command-line flags."""
    schema = SCHEMAS[command]
    merged = {k: spec[1] for k, spec in schema.items()}
    path = flags.pop("config", None)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        unknown = sorted(set(doc) - set(schema))
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
        for key, value in doc.items():
            spec = schema[key]
            try:
                merged[key] = None if value is None else spec[0](value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from None
            if len(spec) > 3 and merged[key] not in spec[3]:
                raise ConfigError(f"config key {key!r} must be one of {spec[3]}")
    merged.update(flags)
    missing = [k for k in REQUIRED[command] if merged.get(k) is None]
    if missing:
        raise ConfigError(f"missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")
    if "alpha" in schema:
        merged["alpha"], merged["beta"] = _transmission(merged)
    if "window" in merged and merged["window"] % 2 == 0:
        raise ConfigError(f"--window must be odd, got {merged['window']}")
    return merged


def _transmission(cfg: dict) -> tuple[float, float]:
    a, b, r = cfg.get("alpha"), cfg.get("beta"), cfg.get("r")
    if a is not None and b is not None:
        return a, b
    if a is not None:
        return a, a / r
    if b is not None:
        return b * r, b
    return 0.1 * r / (r + 1.0), 0.1 / (r + 1.0)


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"package": pkg, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def write_manifest(out: Path, command: str, cfg: dict, seeds) -> None:
    canonical = json.dumps(cfg, sort_keys=True, default=str)
    doc = {
        "command": command,
        "config": cfg,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seeds": seeds,
        "versions": _versions(),
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(cfg: dict) -> int:
    out = _outdir(cfg)
    params = TransmissionParams(cfg["alpha"], cfg["beta"])
    topo_seed, noise_seed = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg["seed"]).spawn(2))
    net, scenario = draw_scenario(
        cfg["scenario"], cfg["n"], cfg["mean_degree"], topo_seed, cfg["initial_infected"], cfg["seed_node"]
    )
    syn = synthesize_dataset(
        net, params, cfg["gamma"], scenario, cfg["d"], cfg["delta_t"], cfg["substeps"], seed=noise_seed
    )
    syn.i_series.to_csv(out / "dataset.csv")
    syn.dj_series.to_csv(out / "dataset_deltaJ.csv")
    net.to_json(out / "network.json")
    write_sidecar(
        out / "meta.json",
        alpha=params.alpha,
        beta=params.beta,
        r=params.r,
        gamma=cfg["gamma"],
        delta_t=cfg["delta_t"],
        scenario=scenario.to_dict(),
        ground_truth=scenario.ground_truth(net.n_nodes),
        full_adjacency=syn.full_network.adjacency,
        clamped_states=syn.clamped,
        clamped_increments=syn.negative_increments,
    )
    write_manifest(out, "synth", cfg, {"seed": cfg["seed"], "topology": topo_seed, "noise": noise_seed})
    print(f"wrote {cfg['d']} x {net.n_nodes} dataset to {out}")
    return 0


def load_observations(cfg: dict, out: Path | None = None) -> Dataset:
    """Read a t,... dataset or a date,... cumulative file (smoothed, then differenced)."""
    path = Path(cfg["data"])
    with open(path, newline="") as fh:
        first = fh.readline().split(",")[0].strip().lower()
    if first == "date":
        if cfg["kind"] == "I":
            raise ConfigError("cumulative (date,...) input yields deltaJ data; --kind I does not apply")
        series = parse_timeseries(path, cfg.get("min_cases"))
        if cfg["window"] > 1:
            series = smooth_moving_average(series, cfg["window"])
        data = to_deltaJ(series)
        if out is not None:
            write_provenance(out / "provenance.json", series, data)
        return data
    if first != "t":
        raise ValueError(f"{path}: header must start with 't' (dataset) or 'date' (cumulative counts)")
    kind = "deltaJ_series" if cfg["kind"] == "deltaJ" else "I_series"
    return Dataset.from_csv(path, kind=kind)


def cmd_analyze(cfg: dict) -> int:
    if not cfg["estimate"] and cfg.get("network") is None:
        raise ConfigError("given-parameter analysis needs --network (or use --estimate)")
    out = _outdir(cfg)
    data = load_observations(cfg, out)
    if cfg["estimate"]:
        est = estimate_parameters(data, _estimation_config(cfg), seed=cfg["seed"])
        est.to_json(out / "estimate.json")
        params, mobility = est.params, est.mobility()
        analysed = prepare_i_series(data, est.alpha)
        print(
            f"estimated alpha={est.alpha:.4g} beta={est.beta:.4g} (r={est.r:.3g}) gamma={est.gamma:.4g}"
            + ("" if est.converged else " [not converged]")
        )
    else:
        net = Network.from_json(cfg["network"])
        if net.n_nodes != data.n_nodes:
            raise ValueError(f"network has {net.n_nodes} nodes but the dataset has {data.n_nodes}")
        params = TransmissionParams(cfg["alpha"], cfg["beta"])
        mobility = gamma_from_topology(net, cfg["gamma"])
        analysed = prepare_i_series(data, params.alpha)
    zs = zscore_series(analysed, params, mobility)
    zs.to_csv(out / "zscores.csv")
    t, l, samples = disc.node_statistics(zs)
    verdicts = disc.classify(t, l, disc.Thresholds(cfg["t_star"], cfg["l_star"]), samples, analysed.labels)
    disc.write_verdicts_csv(out / "verdicts.csv", verdicts)
    write_manifest(out, "analyze", cfg, {"seed": cfg["seed"]})
    if zs.n_skipped:
        print(f"{zs.n_skipped} z-scores skipped (zero conditional variance)")
    print(f"{'region':>10} {'L':>8} {'T':>6}  tail mid")
    for v in verdicts:
        print(
            f"{v.label:>10} {v.chauvenet_stat:8.2f} {v.ks_stat:6.2f}  "
            f"{'*' if v.classified_neighbor_tail else ' ':>4} {'*' if v.classified_neighbor_mid else ' ':>3}"
        )
    flagged = [v.label for v in verdicts if v.classified_neighbor_tail]
    print(f"flagged at L* = {cfg['l_star']:g}: {', '.join(flagged) if flagged else 'none'}")
    return 0


def _estimation_config(cfg: dict) -> EstimationConfig:
    return EstimationConfig(restarts=cfg["restarts"], var_floor=cfg["var_floor"])


def cmd_estimate(cfg: dict) -> int:
    out = _outdir(cfg)
    data = load_observations(cfg, out)
    est = estimate_parameters(data, _estimation_config(cfg), seed=cfg["seed"])
    est.to_json(out / "estimate.json")
    write_manifest(out, "estimate", cfg, {"seed": cfg["seed"]})
    print(json.dumps(est.to_dict()))
    return 0


def cmd_roc(cfg: dict) -> int:
    out = _outdir(cfg)
    tc = TrialConfig(
        spreader=cfg["scenario"],
        n_nodes=cfg["n"],
        mean_degree=cfg["mean_degree"],
        alpha=cfg["alpha"],
        beta=cfg["beta"],
        gamma=cfg["gamma"],
        n_obs=cfg["d"],
        delta_t=cfg["delta_t"],
        substeps=cfg["substeps"],
        initial_infected=cfg["initial_infected"],
        seed_node=cfg["seed_node"],
        series="I_series" if cfg["series"] == "I" else "deltaJ_series",
        theta=cfg["theta"],
        estimation=_estimation_config(cfg),
    )
    trials, failures = [], []
    for k in range(cfg["trials"]):
        seed = cfg["base_seed"] + k
        try:
            trials.append(run_trial(tc, seed))
        except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
            failures.append({"seed": seed, "error": str(exc)})
            log.warning("trial %d failed: %s", seed, exc)
        log.info("trial %d/%d done", k + 1, cfg["trials"])
    if len(failures) > cfg["max_failures"]:
        for f in failures:
            print(f"trial {f['seed']}: {f['error']}", file=sys.stderr)
        raise RuntimeError(f"{len(failures)} trials failed (tolerance {cfg['max_failures']})")
    batch = TrialBatch(tc, trials)
    report = {"n_trials": batch.n_trials, "failed": failures}
    for which in ("tail", "mid"):
        curve = roc_sweep(batch, which)
        curve.to_csv(out / f"roc_{which}.csv")
        curve.to_svg(out / f"roc_{which}.svg")
        report[which] = {
            "best_threshold": curve.best_threshold,
            "best_gap": curve.best_gap,
            "excluded_trials": curve.n_excluded,
        }
    (out / "thresholds.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    label = cfg["theta"]
    rows = [(label, g, measure_zscore_moments(batch, g)) for g in ("all", "neighbor", "non_neighbor")]
    write_moment_table(out / "moments.csv", rows)
    write_manifest(out, "roc", cfg, {"trial_seeds": [cfg["base_seed"] + k for k in range(cfg["trials"])]})
    print(
        f"tail: best gap {report['tail']['best_gap']:.3f} at L*={report['tail']['best_threshold']:g}; "
        f"mid: best gap {report['mid']['best_gap']:.3f} at T*={report['mid']['best_threshold']:g}"
    )
    return 0


COMMANDS = {"synth": cmd_synth, "analyze": cmd_analyze, "estimate": cmd_estimate, "roc": cmd_roc}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "verbose")}
    try:
        cfg = resolve_config(ns.command, flags)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"nodediscovery {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[ns.command](cfg)
    except ConfigError as exc:
        print(f"nodediscovery {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, RuntimeError, OSError, np.linalg.LinAlgError) as exc:
        print(f"nodediscovery {ns.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
