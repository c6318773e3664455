"""Command-line entry point and the key=value experiment configuration."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import typing
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, link_simulator, quant_precoder
from .link_simulator import ExperimentConfig

OUT_ENV = "ONEBIT_MIMO_OUT"
DEFAULT_OUT = "onebit_out"
EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
SUBCOMMANDS = ("ser", "psd", "fnr", "mi", "design-audit")

_SECTIONS = {
    "n_users": "system",
    "n_antennas": "system",
    "constellation_size": "system",
    "mu_tx": "rates",
    "mu_rx": "rates",
    "n_block": "rates",
    "eps_tx": "pulses",
    "alpha": "precoder",
    "snr_db": "sweep",
    "agc_margin": "benchmarks",
    "psd_nfft": "psd",
    "transient": "misc",
}


class ConfigError(ValueError):
    """A configuration problem, always naming the offending key."""


@dataclass(frozen=True)
class RunManifest:
    config: ExperimentConfig
    out_dir: Path
    seed: int
    version: str = __version__


def _field_types() -> dict:
    return typing.get_type_hints(ExperimentConfig)


def _convert(key: str, raw: str, hint):
    raw = raw.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (args and type(None) in args):
        if raw.lower() in ("none", "auto", ""):
            return None
        inner = next(a for a in args if a is not type(None))
        return _convert(key, raw, inner)
    if origin is tuple:
        inner = args[0]
        items = [item for item in raw.split(",") if item.strip()]
        return tuple(_convert(key, item, inner) for item in items)
    try:
        if hint is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        if hint is int:
            return int(raw, 0)
        if hint is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {hint.__name__}") from None
    return raw


def parse_pairs(lines, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply ``key = value`` lines on top of ``base`` (defaults when omitted).

    ``#`` starts a comment; blank lines are ignored.
    """
    hints = _field_types()
    values = {}
    for number, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"line {number}: expected key = value, got {text!r}")
        key, raw = (part.strip() for part in text.split("=", 1))
        if key not in hints:
            raise ConfigError(f"{key}: unknown configuration key")
        values[key] = _convert(key, raw, hints[key])
    try:
        return dataclasses.replace(base or ExperimentConfig(), **values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(path=None, overrides=(), out_dir=None, seed=None, trials=None) -> RunManifest:
    """Resolve defaults, the config file, inline overrides and CLI flags, in that order."""
    lines: list[str] = []
    if path is not None:
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    config = parse_pairs(lines)
    config = parse_pairs(list(overrides), config)
    extra = {}
    if seed is not None:
        extra["seed"] = seed
    if trials is not None:
        extra["trials"] = trials
    if extra:
        try:
            config = config.replace(**extra)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    out = Path(out_dir or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    return RunManifest(config, out, config.seed)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit(manifest: RunManifest) -> str:
    """Config text that parses back to the same configuration."""
    out = [f"# onebit-mimo {manifest.version}", f"# output directory: {manifest.out_dir}"]
    section = None
    for f in dataclasses.fields(ExperimentConfig):
        section = _SECTIONS.get(f.name, section)
        if _SECTIONS.get(f.name) is not None:
            out.append(f"\n# --- {section} ---")
        out.append(f"{f.name} = {_format(getattr(manifest.config, f.name))}")
    return "\n".join(out) + "\n"


def parse_manifest_text(text: str, out_dir=None) -> RunManifest:
    config = parse_pairs(text.splitlines())
    out = out_dir
    for line in text.splitlines():
        if line.startswith("# output directory:") and out is None:
            out = line.split(":", 1)[1].strip()
    return RunManifest(config, Path(out or DEFAULT_OUT), config.seed)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value configuration file")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        help="override one configuration key (repeatable)")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", metavar="DIR", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--trials", type=int, help="number of Monte Carlo trials")
    common.add_argument("--verbose", "-v", action="store_true", help="log progress")

    parser = _Parser(prog="onebit-mimo", description="Spatio-temporal precoding for 1-bit receivers.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", parser_class=_Parser)
    sub.required = True
    helps = {
        "ser": "SER versus SNR, with benchmark receivers",
        "psd": "averaged transmit power spectral density",
        "fnr": "SER versus receive-filter-to-noise ratio",
        "mi": "mutual information versus SNR",
        "design-audit": "one precoder design with its margin table and residuals",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _progress(verbose: bool):
    if not verbose:
        return None

    def report(done, total):
        print(f"trial {done}/{total}", file=sys.stderr, flush=True)

    return report


def _write_common(manifest: RunManifest, metrics_meta: dict, name: str) -> None:
    (manifest.out_dir / "config.txt").write_text(emit(manifest))
    meta = dict(metrics_meta)
    meta["version"] = manifest.version
    with open(manifest.out_dir / f"{name}_run.json", "w") as fh:
        json.dump(meta, fh, indent=2, default=link_simulator._json_default)
        fh.write("\n")


def run_ser(manifest: RunManifest, progress=None) -> list[Path]:
    metrics = link_simulator.run_ser_sweep(manifest.config, progress)
    paths = []
    for curve in metrics.curves:
        path = manifest.out_dir / ("ser.csv" if curve == "one-bit" else f"ser_{curve}.csv")
        metrics.to_csv(path, curve)
        paths.append(path)
    _write_common(manifest, metrics.metadata(), "ser")
    return paths


def run_mi(manifest: RunManifest, progress=None) -> list[Path]:
    metrics = link_simulator.run_ser_sweep(manifest.config.replace(benchmarks=()), progress)
    path = manifest.out_dir / "mi.csv"
    c = metrics.curve()
    se = metrics.spectral_efficiency()
    with open(path, "w") as fh:
        fh.write("snr_db,mi_bits,spectral_efficiency,ser,trials\n")
        for k, snr in enumerate(metrics.axis):
            fh.write(f"{snr!r},{c['mi_bits'][k]!r},{se[k]!r},{c['ser'][k]!r},{metrics.trials}\n")
    _write_common(manifest, metrics.metadata(), "mi")
    return [path]


def run_fnr(manifest: RunManifest, progress=None) -> list[Path]:
    metrics = link_simulator.run_fnr_sweep(manifest.config, progress)
    path = manifest.out_dir / "fnr.csv"
    metrics.to_csv(path)
    _write_common(manifest, metrics.metadata(), "fnr")
    return [path]


def run_psd(manifest: RunManifest, progress=None) -> list[Path]:
    result = link_simulator.run_psd(manifest.config, progress)
    path = manifest.out_dir / "psd.csv"
    result.to_csv(path)
    g = result.gamma
    meta = {"config": dataclasses.asdict(manifest.config), "seed": manifest.seed,
            "suppression_db": result.suppression_db,
            "gamma": {"min": float(g.min()), "mean": float(g.mean())} if g.size else {}}
    _write_common(manifest, meta, "psd")
    return [path]


def design_audit(config: ExperimentConfig) -> str:
    """Design user 0's in-phase branch of trial 0 and report every mapping."""
    link = link_simulator.build_link(config)
    streams = link_simulator.trial_streams(config.seed, 0)
    idx, _ = link_simulator.draw_symbols(config, link.filt, streams["symbols"])
    constellation = config.constellation
    symbols = constellation.array[idx[0, 0]]
    budget = quant_precoder.Budget(config.p0, link.p_g, config.n_users)
    spectrum = quant_precoder.Spectrum(config.alpha, config.eps_tx, config.tx_pulse_rolloff, config.mu_tx)
    mappings = quant_precoder.enumerate_forward_mappings(constellation.size, config.mu_rx)
    sol = quant_precoder.design_branch(symbols, link.filt, budget, spectrum, constellation, mappings)

    lines = [f"symbols: {' '.join(f'{s:g}' for s in symbols)}",
             f"interior symbols: {link.filt.interior_symbols[0]}..{link.filt.interior_symbols[-1]}",
             f"mappings: {len(mappings)}", "", "index  gamma  status  mapping"]
    for k, (m, g, st) in enumerate(zip(mappings, sol.gamma_table, sol.statuses)):
        lines.append(f"{k:3d}  {g:.6e}  {st}  {' '.join(m.describe(constellation))}")
    diag = quant_precoder.build_codeword_matrix(symbols, sol.mapping, constellation)
    problem = quant_precoder.assemble_problem(diag, link.filt, budget, spectrum)
    rows = link.filt.interior_rows
    received = link.filt.apply(sol.u)
    lines += ["", f"chosen mapping: {sol.mapping_index} ({' '.join(sol.mapping.describe(constellation))})",
              f"gamma: {sol.gamma:.9e}",
              f"power residual (bound - value): {problem.power.bound - float(sol.u @ sol.u):.3e}"]
    if problem.spectral is not None:
        r = np.append(sol.u, -sol.gamma)
        lines.append(f"spectral residual (bound - value): {problem.spectral.bound - problem.spectral.value(r):.3e}")
    lines.append(f"min codeword margin on interior rows: {float(np.min(diag[rows] * received[rows])):.9e}")
    lines += ["", "u:"] + [f"{v:.12e}" for v in sol.u]
    return "\n".join(lines) + "\n"


def run_audit(manifest: RunManifest, progress=None) -> list[Path]:
    path = manifest.out_dir / "design_audit.txt"
    path.write_text(design_audit(manifest.config))
    (manifest.out_dir / "config.txt").write_text(emit(manifest))
    return [path]


_RUNNERS = {"ser": run_ser, "psd": run_psd, "fnr": run_fnr, "mi": run_mi, "design-audit": run_audit}


def _attach_solver_trace(path: Path) -> logging.Handler:
    """Send the solver's per-iteration debug records (t, objective, gap) to ``path``."""
    handler = logging.FileHandler(path, mode="w")
    handler.setFormatter(logging.Formatter("%(message)s"))
    solver_log = logging.getLogger("onebit_mimo.socp_solver")
    solver_log.setLevel(logging.DEBUG)
    solver_log.addHandler(handler)
    return handler


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        manifest = parse_config(args.config, args.set, args.out, args.seed, args.trials)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    trace = None
    try:
        manifest.out_dir.mkdir(parents=True, exist_ok=True)
        if args.verbose:
            trace = _attach_solver_trace(manifest.out_dir / "solver_trace.log")
        paths = _RUNNERS[args.command](manifest, _progress(args.verbose))
    except Exception as exc:  # surfaced as a runtime failure with a readable message
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if trace is not None:
            logging.getLogger("onebit_mimo.socp_solver").removeHandler(trace)
            trace.close()
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
