"""Command-line front end: parse, validate, dispatch, report.

All math lives in the library; this module only turns spec files and
``--set`` overrides into typed experiment specs, logs the fully resolved
configuration next to the outputs, and maps errors to exit codes:

    0  success
    1  validation failure (bad config, missing file, strict-mode window hits)
    2  internal error

Spec files are flat INI sections with typed keys; see the README for the
schema.  The resolved config written to the output directory is itself a
valid spec file and reproduces the identical outputs when re-fed.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys

import numpy as np

from . import bounds as bd
from .experiments import (
    EXPERIMENT_KINDS,
    ExperimentSpec,
    KIND_RISK,
    KIND_SPEEDUP,
    KIND_STABILITY,
    PlotSpec,
    emit_plots,
    run_experiment,
    window_violations,
)
from .problems import (
    ConfigurationError,
    GeneratorSpec,
    KINDS,
    LossModel,
    check_gradient_maps,
    check_self_bounding,
    probe_pairs,
    probe_points,
)

OUTPUT_DIR_ENV = "LOOKSTAB_OUTPUT_DIR"

_REQUIRED = object()


def _parse_int(text: str) -> int:
    return int(text)


def _parse_float(text: str) -> float:
    return float(text)


def _parse_ints(text: str) -> tuple:
    return tuple(int(v.strip()) for v in text.split(",") if v.strip())


def _parse_floats(text: str) -> tuple:
    return tuple(float(v.strip()) for v in text.split(",") if v.strip())


def _parse_str(text: str) -> str:
    return text.strip()


def _parse_w_true(text: str):
    text = text.strip()
    if text == "unit":
        return "unit"
    return tuple(float(v.strip()) for v in text.split(","))


def _choice(*options):
    def parse(text: str) -> str:
        value = text.strip()
        if value not in options:
            raise ConfigurationError(f"expected one of {options}, got {value!r}")
        return value

    return parse


# section -> key -> (parser, default); _REQUIRED marks mandatory keys.
_SCHEMA = {
    "experiment": {
        "kind": (_choice(*EXPERIMENT_KINDS), _REQUIRED),
        "name": (_parse_str, _REQUIRED),
        "master_seed": (_parse_int, 0),
        "workers": (_parse_int, 0),  # 0 = available parallelism
        "output_dir": (_parse_str, ""),
    },
    "generator": {
        "model": (_choice(*KINDS), _REQUIRED),
        "d": (_parse_int, _REQUIRED),
        "b_x": (_parse_float, 1.0),
        "sigma": (_parse_float, 0.0),
        "lam": (_parse_float, 0.0),
        "w_true": (_parse_w_true, "unit"),
    },
    "lookahead": {
        "alpha": (_parse_floats, (0.5,)),
        "k": (_parse_ints, (5,)),
        "t": (_parse_ints, (10,)),
        "b": (_parse_ints, (1,)),
        "eta": (_parse_floats, (0.5,)),
    },
    "monte_carlo": {
        "n": (_parse_int, 64),
        "datasets": (_parse_int, 8),
        "indices": (_parse_int, 16),
        "algo_seeds": (_parse_int, 4),
    },
    "risk": {
        "n": (_parse_ints, ()),
        "seeds": (_parse_int, 50),
        "heldout": (_parse_int, 100_000),
        "output": (_choice("w_t", "v_bar"), "w_t"),
        "preset": (_choice("none", "strongly_convex"), "none"),
        "c_t": (_parse_float, 1.0),
    },
    "speedup": {
        "n": (_parse_int, 256),
        "b": (_parse_ints, (1, 2, 4)),
        "k": (_parse_int, 4),
        "seeds": (_parse_int, 100),
    },
}

_PRESET_CONVEX_SCHEMA = {
    "f_star": (_parse_float, _REQUIRED),
    "n": (_parse_int, _REQUIRED),
    "l": (_parse_float, _REQUIRED),
    "b": (_parse_int, _REQUIRED),
}
_PRESET_STRCVX_SCHEMA = {
    "l": (_parse_float, _REQUIRED),
    "mu": (_parse_float, _REQUIRED),
    "alpha": (_parse_float, _REQUIRED),
    "b": (_parse_int, _REQUIRED),
    "n": (_parse_int, _REQUIRED),
    "c_t": (_parse_float, 1.0),
}
_CHECK_PROPS_SCHEMA = {
    "model": (_choice(*KINDS), "least_squares"),
    "d": (_parse_int, 5),
    "b_x": (_parse_float, 1.0),
    "sigma": (_parse_float, 0.5),
    "lam": (_parse_float, 0.5),
    "probes": (_parse_int, 1000),
    "seed": (_parse_int, 0),
    "eta": (_parse_float, 0.0),  # 0 means 1/L
}


def _read_spec_file(path: str) -> dict[str, dict[str, str]]:
    if not os.path.exists(path):
        raise ConfigurationError(f"spec file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read(path)
    return {section: dict(parser.items(section)) for section in parser.sections()}


def _apply_overrides(raw: dict[str, dict[str, str]], overrides: list[str]) -> None:
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form section.key=value")
        key, value = item.split("=", 1)
        if "." not in key:
            raise ConfigurationError(f"override key {key!r} must be section.key")
        section, name = key.split(".", 1)
        raw.setdefault(section.strip(), {})[name.strip()] = value.strip()


def _resolve(raw: dict[str, dict[str, str]]) -> dict[str, dict]:
    resolved: dict[str, dict] = {}
    for section, entries in raw.items():
        if section not in _SCHEMA:
            raise ConfigurationError(f"unknown section [{section}]")
        for key in entries:
            if key not in _SCHEMA[section]:
                raise ConfigurationError(f"unknown key {key!r} in section [{section}]")
    for section, schema in _SCHEMA.items():
        out = {}
        for key, (parse, default) in schema.items():
            if section in raw and key in raw[section]:
                try:
                    out[key] = parse(raw[section][key])
                except ValueError as exc:
                    raise ConfigurationError(f"bad value for {section}.{key}: {exc}") from exc
            elif default is _REQUIRED:
                raise ConfigurationError(f"missing required key {section}.{key}")
            else:
                out[key] = default
        resolved[section] = out
    return resolved


def _parse_flat(entries: list[str], schema: dict) -> dict:
    values = {}
    for item in entries:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        key = key.strip().lower()
        if key not in schema:
            raise ConfigurationError(f"unknown key {key!r}")
        try:
            values[key] = schema[key][0](value.strip())
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {key}: {exc}") from exc
    for key, (_, default) in schema.items():
        if key not in values:
            if default is _REQUIRED:
                raise ConfigurationError(f"missing required key {key}")
            values[key] = default
    return values


def _build_generator(conf: dict) -> GeneratorSpec:
    w_true = conf["w_true"]
    return GeneratorSpec(
        kind=conf["model"],
        d=conf["d"],
        b_x=conf["b_x"],
        sigma=conf["sigma"],
        lam=conf["lam"],
        w_true=None if w_true == "unit" else np.asarray(w_true, dtype=float),
    )


def _build_spec(resolved: dict[str, dict], output_dir: str) -> ExperimentSpec:
    exp = resolved["experiment"]
    look = resolved["lookahead"]
    mc = resolved["monte_carlo"]
    risk = resolved["risk"]
    speed = resolved["speedup"]
    kind = exp["kind"]
    n = speed["n"] if kind == KIND_SPEEDUP else mc["n"]
    workers = exp["workers"] if exp["workers"] >= 1 else (os.cpu_count() or 1)
    return ExperimentSpec(
        name=exp["name"],
        kind=kind,
        generator=_build_generator(resolved["generator"]),
        alphas=look["alpha"],
        ks=look["k"],
        ts=look["t"],
        bs=speed["b"] if kind == KIND_SPEEDUP else look["b"],
        etas=look["eta"],
        n=n,
        ns=risk["n"],
        datasets=mc["datasets"],
        indices_per_dataset=mc["indices"],
        algo_seeds=mc["algo_seeds"],
        risk_seeds=speed["seeds"] if kind == KIND_SPEEDUP else risk["seeds"],
        heldout_size=risk["heldout"],
        output=risk["output"],
        preset=risk["preset"],
        c_t=risk["c_t"],
        speedup_k=speed["k"],
        master_seed=exp["master_seed"],
        workers=workers,
        output_dir=output_dir,
    )


def _dump_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_dump_value(v) for v in value)
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _write_resolved(resolved: dict[str, dict], output_dir: str, name: str) -> str:
    path = os.path.join(output_dir, f"{name}_resolved.ini")
    lines = []
    for section, entries in resolved.items():
        lines.append(f"[{section}]")
        for key, value in entries.items():
            lines.append(f"{key} = {_dump_value(value)}")
        lines.append("")
    os.makedirs(output_dir or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
    return path


def _cmd_experiment(args) -> int:
    raw = _read_spec_file(args.spec_file)
    _apply_overrides(raw, args.set or [])
    resolved = _resolve(raw)
    output_dir = (
        args.output_dir
        or resolved["experiment"]["output_dir"]
        or os.environ.get(OUTPUT_DIR_ENV)
        or "."
    )
    resolved["experiment"]["output_dir"] = output_dir
    if args.seed is not None:
        resolved["experiment"]["master_seed"] = args.seed
    if args.workers is not None:
        resolved["experiment"]["workers"] = args.workers
    if resolved["experiment"]["kind"] != args.kind:
        raise ConfigurationError(
            f"spec file has kind {resolved['experiment']['kind']!r}, subcommand expects {args.kind!r}"
        )
    spec = _build_spec(resolved, output_dir)
    notes = window_violations(spec)
    for note in notes:
        print(f"warning: {note}", file=sys.stderr)
    if notes and args.strict:
        raise ConfigurationError("strict mode: step-size window violations")
    config_path = _write_resolved(resolved, output_dir, spec.name)
    rows, csv_path = run_experiment(spec)
    print(f"wrote {csv_path} ({len(rows)} rows); resolved config at {config_path}")
    return 0


def _cmd_presets(args) -> int:
    if args.strongly_convex:
        conf = _parse_flat(args.set or [], _PRESET_STRCVX_SCHEMA)
        preset = bd.preset_strongly_convex(
            conf["l"], conf["mu"], conf["alpha"], conf["b"], conf["n"], c_T=conf["c_t"]
        )
        print(f"eta={preset.eta:g} k={preset.k} T={preset.T}")
        if not preset.alpha_ok:
            print(
                "warning: alpha exceeds b*mu/(2*ln2*(b+1)*L); "
                "the strongly convex step window does not hold",
                file=sys.stderr,
            )
            if args.strict:
                raise ConfigurationError("strict mode: alpha outside the preset window")
    else:
        conf = _parse_flat(args.set or [], _PRESET_CONVEX_SCHEMA)
        preset = bd.preset_convex(conf["f_star"], conf["n"], conf["l"], conf["b"])
        print(
            f"eta={preset.eta:g} R={preset.R} gamma={preset.gamma:g} "
            f"regime={preset.regime} b_valid={preset.b_valid}"
        )
        if not preset.b_valid:
            print("warning: b exceeds sqrt(n*f_star)/(2L)", file=sys.stderr)
            if args.strict:
                raise ConfigurationError("strict mode: invalid batch size for regime 1")
    return 0


def _cmd_check_props(args) -> int:
    conf = _parse_flat(args.set or [], _CHECK_PROPS_SCHEMA)
    kind = conf["model"]
    spec = GeneratorSpec(
        kind=kind,
        d=conf["d"],
        b_x=conf["b_x"],
        sigma=0.0 if kind == "logistic" else conf["sigma"],
        lam=conf["lam"] if kind == "ridge" else 0.0,
    )
    model = spec.model()
    eta = conf["eta"] if conf["eta"] > 0 else 1.0 / model.L
    sb = check_self_bounding(model, probe_points(spec, conf["probes"], conf["seed"]))
    gm = check_gradient_maps(model, eta, probe_pairs(spec, conf["probes"], conf["seed"] + 1))
    print(
        f"self-bounding: {'PASS' if sb.passed else 'FAIL'} "
        f"(probes={sb.n_probes}, max ratio={sb.max_ratio:.6f})"
    )
    print(
        f"gradient maps (eta={eta:g}): {'PASS' if gm.passed else 'FAIL'} "
        f"(probes={gm.n_probes}, max map ratio={gm.max_map_ratio:.6f})"
    )
    if not (sb.passed and gm.passed):
        raise ConfigurationError("property checks failed")
    return 0


def _cmd_plot(args) -> int:
    spec = PlotSpec(kind=args.kind, out_path=args.out, x=args.x or "", y=args.y or "")
    path = emit_plots(args.csv, spec)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lookstab",
        description="Lookahead stability and risk experiments on synthetic convex problems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_set(p):
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--strict", action="store_true", help="turn window warnings into failures")

    for kind in (KIND_STABILITY, KIND_RISK, KIND_SPEEDUP):
        p = sub.add_parser(kind, help=f"run a {kind} experiment from a spec file")
        p.add_argument("spec_file")
        add_set(p)
        p.add_argument("--output-dir", default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.set_defaults(func=_cmd_experiment, kind=kind)

    p = sub.add_parser("presets", help="print schedule presets")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--convex", action="store_true")
    group.add_argument("--strongly-convex", dest="strongly_convex", action="store_true")
    add_set(p)
    p.set_defaults(func=_cmd_presets)

    p = sub.add_parser("check-props", help="run the loss-model property probes")
    add_set(p)
    p.set_defaults(func=_cmd_check_props)

    p = sub.add_parser("plot", help="render an SVG plot from a result CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--kind", required=True, choices=PlotSpec.PLOT_KINDS)
    p.add_argument("--out", required=True)
    p.add_argument("--x", default=None)
    p.add_argument("--y", default=None)
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse errors carry their own code
        return 1 if exc.code not in (0, None) else 0
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports everything
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
