"""Command-line workflows: one subcommand per library workflow.

Every subcommand reads a JSON config validated against a published schema
(see CONFIG_SCHEMAS), derives all randomness from one 64-bit seed, writes
its artifacts (CSV for tables, JSON for structured reports) into --out, and
finishes with a manifest.json echoing the fully resolved config, the seed,
the package version, and a sha256 per artifact.  Outputs are deterministic
in the config + seed and independent of --threads, so re-running a manifest
(`--config manifest.json` works directly) reproduces every artifact byte
for byte.

Exit codes: 0 ok, 2 usage or config-schema violation (reported with the
offending field path), 3 numerical non-convergence, 4 regime refusal.
"""

import hashlib
import io
import json
import sys
import time
from pathlib import Path

import click
import numpy as np
from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from . import __version__, conditioning, contour, criticality, scale, scaling, tree
from .errors import IstlabError
from .model import kernel_from_config, rate_from_config
from .seeds import resolve_threads, spawn_rng
from .stats import chi_square_gof
from .tree import _format_label

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_INT = {"type": "integer", "minimum": 1}
_SEED = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}
_NUMS = {"type": "array", "items": _NUM, "minItems": 1}

_DEFS = {
    "rate": {
        "oneOf": [
            {
                "type": "object",
                "properties": {"kind": {"const": "constant"}, "beta": _NONNEG},
                "required": ["kind", "beta"],
                "additionalProperties": False,
            },
            {
                "type": "object",
                "properties": {
                    "kind": {"const": "periodic"},
                    "beta": _NONNEG,
                    "psi_offset": _NUM,
                },
                "required": ["kind", "beta"],
                "additionalProperties": False,
            },
            {
                "type": "object",
                "properties": {
                    "kind": {"const": "asymptotically_critical"},
                    "c": {"type": "number", "minimum": -1},
                },
                "required": ["kind", "c"],
                "additionalProperties": False,
            },
            {
                "type": "object",
                "properties": {
                    "kind": {"const": "piecewise_constant"},
                    "breakpoints": _NUMS,
                    "values": _NUMS,
                },
                "required": ["kind", "breakpoints", "values"],
                "additionalProperties": False,
            },
            {
                "type": "object",
                "properties": {
                    "kind": {"const": "tabulated"},
                    "grid": _NUMS,
                    "values": _NUMS,
                },
                "required": ["kind", "grid", "values"],
                "additionalProperties": False,
            },
        ]
    },
    "kernel": {
        "oneOf": [
            {
                "type": "object",
                "properties": {"kind": {"const": "dirac"}, "a": _POS},
                "required": ["kind", "a"],
                "additionalProperties": False,
            },
            {
                "type": "object",
                "properties": {
                    "kind": {"const": "exponential"},
                    "death_rate": {"$ref": "#/$defs/rate"},
                },
                "required": ["kind", "death_rate"],
                "additionalProperties": False,
            },
            {
                "type": "object",
                "properties": {
                    "kind": {"const": "pareto"},
                    "k": {"type": "number", "exclusiveMinimum": 1},
                },
                "required": ["kind", "k"],
                "additionalProperties": False,
            },
            {
                "type": "object",
                "properties": {"kind": {"const": "two_point_death"}},
                "required": ["kind"],
                "additionalProperties": False,
            },
            {
                "type": "object",
                "properties": {
                    "kind": {"const": "tabulated_cdf"},
                    "lifetimes": _NUMS,
                    "cdf": _NUMS,
                },
                "required": ["kind", "lifetimes", "cdf"],
                "additionalProperties": False,
            },
        ]
    },
    "scan": {
        "type": "object",
        "properties": {"lo": _POS, "hi": _POS, "points": {"type": "integer", "minimum": 8}},
        "required": ["hi"],
        "additionalProperties": False,
    },
}


def _schema(properties, required):
    properties = dict(properties)
    properties["seed"] = _SEED
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "type": "object",
        "properties": properties,
        "required": required,
        "additionalProperties": False,
        "$defs": _DEFS,
    }


_RK = {"rate": {"$ref": "#/$defs/rate"}, "kernel": {"$ref": "#/$defs/kernel"}}

#: published config schemas, one per subcommand
CONFIG_SCHEMAS = {
    "tree": _schema(
        {**_RK, "x0": _POS, "truncation": _POS, "n": _INT},
        ["rate", "kernel", "x0", "truncation"],
    ),
    "contour": _schema(
        {
            **_RK,
            "mode": {"enum": ["tree", "pdmp"]},
            "x0": _POS,
            "truncation": _POS,
            "horizon": _POS,
        },
        ["rate", "kernel", "x0"],
    ),
    "scale": _schema(
        {**_RK, "T": _POS, "M": {"type": "integer", "minimum": 2}, "tol": _POS},
        ["rate", "kernel", "T"],
    ),
    "extinction": _schema(
        {**_RK, "t0": {"oneOf": [_POS, {"type": "array", "items": _POS, "minItems": 1}]},
         "tol": _POS, "T_max": _POS},
        ["rate", "kernel", "t0"],
    ),
    "population": _schema(
        {**_RK, "t0": _POS, "t": _POS, "N": {"type": "integer", "minimum": 0}},
        ["rate", "kernel", "t0", "t"],
    ),
    "classify": _schema({**_RK, "scan": {"$ref": "#/$defs/scan"}}, ["rate", "kernel"]),
    "tails": _schema(
        {
            **_RK,
            "x0": _POS,
            "T": _POS,
            "N": _INT,
            "thresholds": {"type": "array", "items": _POS, "minItems": 1},
            "scan": {"$ref": "#/$defs/scan"},
        },
        ["rate", "kernel", "x0", "T", "N", "thresholds"],
    ),
    "condition": _schema(
        {
            **_RK,
            "event": {"enum": list(conditioning.EVENTS)},
            "T": _POS,
            "M": {"type": "integer", "minimum": 2},
            "tol": _POS,
            "x_min": _NONNEG,
            "stride": _INT,
            "validate": {
                "type": "object",
                "properties": {
                    "x0": _POS,
                    "tree_T": _POS,
                    "horizon": _POS,
                    "N": _INT,
                },
                "required": ["x0", "tree_T", "horizon", "N"],
                "additionalProperties": False,
            },
        },
        ["rate", "kernel", "event", "T"],
    ),
    "scaling": _schema(
        {
            **_RK,
            "c": _NUM,
            "x0": _POS,
            "t": _POS,
            "N": _INT,
            "n_list": {"type": "array", "items": _INT, "minItems": 1},
            "scan": {"$ref": "#/$defs/scan"},
        },
        ["rate", "kernel", "c", "x0", "t", "N", "n_list"],
    ),
}


def _jsonable(obj):
    """Recursively convert report values to strict-JSON-safe types."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isnan(v):
            return None
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_text(out, name, text, artifacts):
    data = text.encode("utf-8")
    (out / name).write_bytes(data)
    artifacts[name] = hashlib.sha256(data).hexdigest()


def _write_json(out, name, obj, artifacts):
    _write_text(out, name, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n",
                artifacts)


def _load_config(command, path, seed_flag):
    try:
        with open(path, encoding="utf-8") as fp:
            obj = json.load(fp)
    except (OSError, json.JSONDecodeError) as e:
        raise click.UsageError(f"cannot read config {path}: {e}")
    if isinstance(obj, dict) and "command" in obj and "config" in obj:
        if obj["command"] != command:
            raise click.UsageError(
                f"manifest is for subcommand '{obj['command']}', not '{command}'"
            )
        obj = obj["config"]
    if not isinstance(obj, dict):
        raise click.UsageError("config must be a JSON object")
    if seed_flag is not None:
        obj["seed"] = int(seed_flag)
    obj.setdefault("seed", 0)
    err = best_match(Draft202012Validator(CONFIG_SCHEMAS[command]).iter_errors(obj))
    if err is not None:
        raise click.UsageError(f"config error at {err.json_path}: {err.message}")
    return obj


def _scan_grid(cfg, default_hi=201.0, default_points=101):
    block = cfg.get("scan") or {}
    return np.linspace(
        block.get("lo", 1.0), block.get("hi", default_hi), block.get("points", default_points)
    )


def _run(command, config_path, seed, out_dir, threads, fmt, default_fmt, runner):
    """Shared driver: load + validate config, run, write manifest, map errors."""
    cfg = _load_config(command, config_path, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fmt = fmt or default_fmt
    artifacts = {}
    started = time.time()
    try:
        summary = runner(cfg, out, fmt, threads, artifacts)
    except IstlabError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(e.exit_code)
    manifest = {
        "command": command,
        "version": __version__,
        "format": fmt,
        "threads": resolve_threads(threads),
        "config": cfg,
        "artifacts": artifacts,
        "summary": summary or {},
    }
    _write_json(out, "manifest.json", manifest, {})
    click.echo(
        f"{command}: wrote {', '.join(sorted(artifacts))} + manifest.json "
        f"to {out} ({time.time() - started:.1f}s)"
    )


def _command(name, default_fmt, runner, help_text):
    @main.command(name=name, help=help_text)
    @click.option("--config", "config_path", required=True,
                  type=click.Path(exists=True, dir_okay=False),
                  help="JSON config (or a manifest.json from a previous run).")
    @click.option("--seed", type=int, default=None, help="Override the config seed.")
    @click.option("--out", "out_dir", default=".", type=click.Path(file_okay=False),
                  help="Output directory.")
    @click.option("--threads", type=int, default=None,
                  help="Worker threads (default: IST_LAB_THREADS or 1).")
    @click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default=None,
                  help=f"Primary artifact format (default {default_fmt}).")
    def _cmd(config_path, seed, out_dir, threads, fmt):
        _run(name, config_path, seed, out_dir, threads, fmt, default_fmt, runner)

    return _cmd


@click.group()
@click.version_option(__version__)
def main():
    """Splitting-tree and contour-process workflows.

    Subcommands read a JSON --config, write CSV/JSON artifacts plus a
    manifest into --out, and exit 0 (ok), 2 (usage/config), 3 (solver did
    not converge), or 4 (regime refusal).
    """


def _model(cfg):
    return rate_from_config(cfg["rate"]), kernel_from_config(cfg["kernel"])


def _run_tree(cfg, out, fmt, threads, artifacts):
    b, K = _model(cfg)
    n = cfg.get("n", 1)
    trees = tree.simulate_forest(b, K, cfg["x0"], cfg["truncation"], n,
                                 cfg["seed"], threads=threads)
    if fmt == "csv":
        for i, t in enumerate(trees):
            _write_text(out, f"tree_{i:03d}.csv", tree.dumps_tree_csv(t), artifacts)
    else:
        payload = [
            {
                "nodes": [
                    {"label": _format_label(lab), "birth": bd[0], "death": bd[1]}
                    for lab, bd in sorted(t.nodes.items())
                ]
            }
            for t in trees
        ]
        _write_json(out, "trees.json", payload, artifacts)
    return {
        "trees": n,
        "mean_nodes": float(np.mean([len(t) for t in trees])),
        "mean_length": float(np.mean([tree.tree_length(t) for t in trees])),
        "mean_height": float(np.mean([tree.tree_height(t) for t in trees])),
    }


def _run_contour(cfg, out, fmt, threads, artifacts):
    b, K = _model(cfg)
    mode = cfg.get("mode", "pdmp")
    if mode == "tree":
        t = tree.simulate_tree(b, K, cfg["x0"], cfg.get("truncation", cfg["x0"]),
                               seed=spawn_rng(cfg["seed"], 0))
        path = contour.contour_of_tree(t)
    else:
        path = contour.simulate_pdmp(b, K, cfg["x0"], cap=cfg.get("truncation"),
                                     horizon=cfg.get("horizon"), seed=cfg["seed"])
    if fmt == "csv":
        _write_text(out, "path.csv", contour.dumps_path_csv(path), artifacts)
    else:
        _write_json(
            out, "path.json",
            {
                "x0": path.x0,
                "horizon": path.horizon,
                "absorption_time": path.absorption_time,
                "jump_times": path.jump_times,
                "jump_from": path.jump_from,
                "jump_to": path.jump_to,
            },
            artifacts,
        )
    return {
        "mode": mode,
        "jumps": int(len(path.jump_times)),
        "duration": path.horizon,
        "absorbed": path.absorption_time is not None,
    }


def _run_scale(cfg, out, fmt, threads, artifacts):
    b, K = _model(cfg)
    table = scale.solve_scale(b, K, cfg["T"], M=cfg.get("M"), tol=cfg.get("tol", 1e-10))
    if fmt == "csv":
        buf = io.StringIO()
        table.dump_csv(buf)
        _write_text(out, "scale_table.csv", buf.getvalue(), artifacts)
    else:
        _write_json(
            out, "scale_table.json",
            {"meta": table.meta(), "grid": table.grid, "values": table.values},
            artifacts,
        )
    return table.meta()


def _run_extinction(cfg, out, fmt, threads, artifacts):
    b, K = _model(cfg)
    t0s = cfg["t0"] if isinstance(cfg["t0"], list) else [cfg["t0"]]
    rows = []
    for t0 in t0s:
        value, diag = scale.extinction_probability(
            b, K, t0, tol=cfg.get("tol", 1e-4), T_max=cfg.get("T_max", 512.0),
            full=True,
        )
        rows.append({"t0": t0, "value": value, **diag})
    if fmt == "csv":
        text = "t0,extinction\n" + "".join(
            f"{r['t0']!r},{r['value']!r}\n" for r in rows
        )
        _write_text(out, "extinction.csv", text, artifacts)
    else:
        _write_json(out, "extinction.json", rows, artifacts)
    return {"t0": [r["t0"] for r in rows], "value": [r["value"] for r in rows]}


def _run_population(cfg, out, fmt, threads, artifacts):
    b, K = _model(cfg)
    t0, t = cfg["t0"], cfg["t"]
    law = scale.population_law(b, K, t0, t)
    report = {"t0": t0, "t": t, "p0": law.p0, "q": law.q, "flagged": law.flagged}
    N = cfg.get("N", 0)
    if N:
        sums = tree.tree_summaries_mc(b, K, t0, t, N, cfg["seed"], levels=(t,),
                                      threads=threads)
        pops = sums[("population", t)]
        kmax = int(np.max(pops))
        observed = np.bincount(pops, minlength=kmax + 1)
        k = np.arange(kmax + 1)
        expected = np.where(
            k == 0, law.p0, (1.0 - law.p0) * law.q * (1.0 - law.q) ** np.maximum(k - 1, 0)
        )
        # fold the geometric tail beyond kmax into the last bin
        expected = expected * N
        expected[-1] += max(N - expected.sum(), 0.0)
        stat, pvalue, dof = chi_square_gof(observed, expected)
        report["mc"] = {"N": N, "chi2": stat, "pvalue": pvalue, "dof": dof}
        buf = io.StringIO()
        buf.write("k,observed,expected\n")
        for ki, o, e in zip(k, observed, expected):
            buf.write(f"{int(ki)},{int(o)},{float(e)!r}\n")
        _write_text(out, "population_hist.csv", buf.getvalue(), artifacts)
    if fmt == "csv":
        _write_text(
            out, "population.csv",
            "t0,t,p0,q\n" + f"{t0!r},{t!r},{law.p0!r},{law.q!r}\n", artifacts,
        )
    else:
        _write_json(out, "population.json", report, artifacts)
    return report


def _run_classify(cfg, out, fmt, threads, artifacts):
    b, K = _model(cfg)
    report = criticality.classify_asymptotic(b, K, _scan_grid(cfg))
    if fmt == "csv":
        text = "x,drift\n" + "".join(
            f"{float(x)!r},{float(v)!r}\n" for x, v in zip(report.scan, report.drift)
        )
        _write_text(out, "classify_scan.csv", text, artifacts)
    else:
        _write_text(out, "classify.json", report.to_json() + "\n", artifacts)
    return {
        "verdict": report.verdict,
        "limsup_drift": report.limsup_drift,
        "liminf_drift": report.liminf_drift,
        "stabilized": report.stabilized,
    }


def _run_tails(cfg, out, fmt, threads, artifacts):
    b, K = _model(cfg)
    est = criticality.length_tail_estimate(
        b, K, cfg["x0"], cfg["T"], cfg["N"], cfg["thresholds"], cfg["seed"],
        threads=threads, scan=_scan_grid(cfg),
    )
    if fmt == "csv":
        buf = io.StringIO()
        est.dump_csv(buf)
        _write_text(out, "tails.csv", buf.getvalue(), artifacts)
    else:
        _write_text(out, "tails.json", est.to_json() + "\n", artifacts)
    return {
        "bound_kind": est.bound_kind,
        "lambda_hat": est.lambda_hat,
        "verdict": est.report.verdict,
    }


def _run_condition(cfg, out, fmt, threads, artifacts):
    b, K = _model(cfg)
    table = scale.solve_scale(b, K, cfg["T"], M=cfg.get("M"), tol=cfg.get("tol", 1e-10))
    params = conditioning.condition_params(
        b, K, table, cfg["event"], x_min=cfg.get("x_min")
    )
    if fmt == "csv":
        buf = io.StringIO()
        params.dump_csv(buf, moment_stride=cfg.get("stride", 16))
        _write_text(out, "conditioned.csv", buf.getvalue(), artifacts)
    else:
        _write_json(
            out, "conditioned.json",
            {
                "meta": params.meta(),
                "grid": params.grid,
                "h": params.h_values,
                "b_prime": params.bprime_values,
            },
            artifacts,
        )
    summary = params.meta()
    block = cfg.get("validate")
    if block:
        report = conditioning.simulate_conditioned(
            params, block["x0"], block["tree_T"], block["horizon"], block["N"],
            cfg["seed"], threads=threads,
        )
        _write_json(out, "condition_validation.json", report, artifacts)
        summary = {**summary, "validation": report}
    return summary


def _run_scaling(cfg, out, fmt, threads, artifacts):
    b, K = _model(cfg)
    diag = scaling.check_assumption_61(b, K, _scan_grid(cfg))
    ks = scaling.compare_scaling_limit(
        cfg["n_list"], (b, K), cfg["c"], cfg["x0"], cfg["t"], cfg["N"], cfg["seed"],
        threads=threads,
    )
    if fmt == "csv":
        text = "x,drift,m2,m3\n" + "".join(
            f"{float(x)!r},{float(d)!r},{float(m2)!r},{float(m3)!r}\n"
            for x, d, m2, m3 in zip(
                diag.scan, diag.drift_values, diag.m2_values, diag.m3_values
            )
        )
        _write_text(out, "scaling_scan.csv", text, artifacts)
        _write_json(out, "scaling_ks.json", ks, artifacts)
    else:
        _write_json(
            out, "scaling.json",
            {"assumption_check": json.loads(diag.to_json()), "ks_report": ks},
            artifacts,
        )
    return {
        "assumption_passed": diag.passed,
        "c_estimate": diag.c_estimate,
        "distances": [e["ks_distance"] for e in ks["entries"]],
        "distances_decreasing": ks["distances_decreasing"],
    }


_command("tree", "csv", _run_tree, "Simulate truncated trees and dump node tables.")
_command("contour", "csv", _run_contour,
         "One contour path, from a tree exploration or the jump dynamics.")
_command("scale", "csv", _run_scale, "Solve the scale table S_T and dump it.")
_command("extinction", "json", _run_extinction,
         "Extinction probability via the truncation ladder.")
_command("population", "json", _run_population,
         "Population law at a time, with optional MC goodness of fit.")
_command("classify", "json", _run_classify, "Asymptotic drift criticality verdict.")
_command("tails", "csv", _run_tails, "MC tail estimates of the total tree length.")
_command("condition", "csv", _run_condition,
         "Conditioned (b', K^h) parameters, with optional simulation check.")
_command("scaling", "json", _run_scaling,
         "Scaling-hypothesis diagnostics and Bessel-limit KS report.")


@main.command(name="verify")
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False),
              help="Also write verify.json here.")
@click.option("--threads", type=int, default=None,
              help="Worker threads (default: IST_LAB_THREADS or 1).")
def verify(out_dir, threads):
    """Run the acceptance suite and print one PASS/FAIL line per criterion."""
    from . import acceptance

    results = acceptance.run_all(echo=click.echo, threads=threads)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out, "verify.json", results, {})
    sys.exit(0 if all(r["passed"] for r in results) else 1)


if __name__ == "__main__":
    main()
