"""Command-line surface: scales, eval, blocks, simulate, blockstats, var, phase.

Exit codes: 0 success, 1 validation or usage failure, 2 runtime error.
Report-producing subcommands write canonical JSON/CSV artifacts and, where
a figure helps, a PNG next to them; --manifest records content digests of
everything written.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .blockscan import WindowIndex
from .blockstats import (bucket_envelope, good_prob_estimate,
                         harvest_lengths, tail_histogram)
from .chain import InvalidConfig, IoError, config_digest, run
from .gfun import PastWindow, WindowTooShort, evaluate
from .params import PRESETS, ParamError, SpecConfig, build_scales
from .phaselab import boundary_contrast
from .report import (RunManifest, canonical_json, file_digest, sanitize,
                     write_report)
from .rng import philox_generator
from .varlab import analytic_bound, exact_var, lp_report, p_star, search_var

_STATS_STREAM = 0x57A75
_SEARCH_STREAM = 0x5EA12C


class UsageError(Exception):
    """Bad flags or malformed input files; maps to exit code 1."""


class ParseError(UsageError):
    """Config file rejected; message names the offending field."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


# ---------------------------------------------------------------- config

_CONFIG_FIELDS = {"epsilon", "K", "k_max", "window_depth",
                  "upsilon_clamp", "clamp_enabled"}
_REQUIRED_FIELDS = ("epsilon", "K", "k_max", "window_depth")


def load_config(path) -> SpecConfig:
    """Strict JSON config: unknown keys rejected, required keys named."""
    import json

    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ParseError(f"config {path} must be a JSON object")
    unknown = set(raw) - _CONFIG_FIELDS
    if unknown:
        raise ParseError(f"config {path}: unknown keys {sorted(unknown)}")
    missing = [f for f in _REQUIRED_FIELDS if f not in raw]
    if missing:
        raise ParseError(f"config {path}: missing required field "
                         f"'{missing[0]}'")
    return SpecConfig(**raw)


def _resolve_config(args) -> SpecConfig:
    if getattr(args, "config", None) and getattr(args, "preset", None):
        raise UsageError("give either --config or --preset, not both")
    if getattr(args, "config", None):
        return load_config(args.config)
    if getattr(args, "preset", None):
        name = args.preset
        if name not in PRESETS:
            raise UsageError(
                f"unknown preset {name!r}; available: {sorted(PRESETS)}")
        return PRESETS[name]
    raise UsageError("a configuration is required: --config FILE or "
                     "--preset NAME")


def _threads(args) -> int:
    n = args.threads
    if n is None:
        n = int(os.environ.get("GCHAIN_THREADS", "1"))
    if n < 1:
        raise UsageError(f"--threads must be >= 1, got {n}")
    return n


# ---------------------------------------------------------------- helpers

def _read_sign_line(line: str, what: str) -> np.ndarray:
    vals = []
    for ch in line.strip():
        if ch == "+":
            vals.append(1)
        elif ch == "-":
            vals.append(-1)
        elif ch in " \t,":
            continue
        else:
            raise UsageError(f"{what}: unexpected character {ch!r} "
                             "(rows are written with '+' and '-')")
    if not vals:
        raise UsageError(f"{what}: empty row")
    return np.array(vals, dtype=np.int8)


def _read_window_file(path) -> tuple[np.ndarray, np.ndarray]:
    try:
        lines = [ln for ln in Path(path).read_text(encoding="utf-8")
                 .splitlines() if ln.strip() and not ln.startswith("#")]
    except OSError as e:
        raise UsageError(f"cannot read window file {path}: {e}") from e
    if len(lines) != 2:
        raise UsageError(f"window file {path} must hold exactly two rows "
                         "(x then y), one per line")
    x = _read_sign_line(lines[0], f"{path} x-row")
    y = _read_sign_line(lines[1], f"{path} y-row")
    if len(x) != len(y):
        raise UsageError(f"window file {path}: x-row ({len(x)}) and y-row "
                         f"({len(y)}) differ in length")
    return x, y


def _read_sequence(path, fmt: str, length: int | None) -> np.ndarray:
    if fmt == "text":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise UsageError(f"cannot read {path}: {e}") from e
        return _read_sign_line(text.replace("\n", ""), f"{path}")
    try:
        raw = np.fromfile(path, dtype=np.uint8)
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e}") from e
    bits = np.unpackbits(raw, bitorder="little")
    if length is not None:
        if length > len(bits):
            raise UsageError(f"--length {length} exceeds {len(bits)} "
                             "packed bits")
        bits = bits[:length]
    return (2 * bits.astype(np.int8) - 1).astype(np.int8)


def _write_csv(path_or_stdout, header, rows) -> None:
    if path_or_stdout is None:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path_or_stdout).write_text(buf.getvalue(), encoding="utf-8")


def _manifest(args, table, seeds, outputs, notes=None) -> None:
    if not getattr(args, "manifest", None):
        return
    man = RunManifest(command=args.cmd, config=table.config.as_dict(),
                      seeds=list(seeds), notes=notes or {})
    man.notes.setdefault("threads", _threads(args))
    for out in outputs:
        man.add_output(out)
    man.write(args.manifest)


# ---------------------------------------------------------------- scales

def _cmd_scales(args) -> int:
    if args.config or args.preset:
        cfg = _resolve_config(args)
    else:
        if args.eps is None or args.K is None or args.kmax is None:
            raise UsageError("scales needs --eps, --K and --kmax "
                             "(or --config/--preset)")
        window = args.window
        if window is None:
            # minimal legal depth: the bias rule looks back beta_{k_max+2}
            probe = SpecConfig(epsilon=args.eps, K=args.K, k_max=args.kmax,
                               window_depth=1 << 62,
                               clamp_enabled=args.clamp)
            window = build_scales(probe).beta[args.kmax + 2]
        cfg = SpecConfig(epsilon=args.eps, K=args.K, k_max=args.kmax,
                         window_depth=window, clamp_enabled=args.clamp)
    table = build_scales(cfg)
    header = ["k", "ell", "beta", "nu", "begin_count", "good_len_bound",
              "good_open_bound", "upsilon"]
    rows = [[r[c] for c in header] for r in table.rows()]
    _write_csv(args.out, header, rows)
    _manifest(args, table, [], [args.out] if args.out else [])
    return 0


# ---------------------------------------------------------------- eval

def _cmd_eval(args) -> int:
    table = build_scales(_resolve_config(args))
    x, y = _read_window_file(args.window)
    win = PastWindow(x, y, start=args.t_now - len(y),
                     boundary="MinusWall" if args.boundary == "minus"
                     else "PlusWall")
    out = evaluate(win, table, strict=not args.lenient)
    payload = {
        "p11": out.p11, "pm11": out.pm11, "p1m1": out.p1m1,
        "pm1m1": out.pm1m1, "k0": out.k0_used, "s_size": out.S_size,
        "upsilon": out.upsilon_used,
    }
    print(canonical_json(sanitize(payload)))
    return 0


# ---------------------------------------------------------------- blocks

def _cmd_blocks(args) -> int:
    table = build_scales(_resolve_config(args))
    y = _read_sequence(args.sequence, args.format, args.length)
    index = WindowIndex.scan(y, table, start=args.start)
    header = ["k", "i", "a", "b", "kind", "opening_size"]
    rows = []
    for k in range(table.K, table.k_max + 1):
        for i, blk in enumerate(reversed(index.blocks(k))):
            kind = blk.kind.name.title().replace("_", "")
            rows.append([k, i, blk.a, blk.b, kind,
                         index.opening(blk).size])
    _write_csv(args.out, header, rows)
    _manifest(args, table, [], [args.out] if args.out else [])
    return 0


# ---------------------------------------------------------------- simulate

def _cmd_simulate(args) -> int:
    table = build_scales(_resolve_config(args))
    boundary = "PlusWall" if args.boundary == "plus" else "MinusWall"
    sinks = None
    rec_file = None
    if args.records:
        rec_file = open(args.records, "w", encoding="utf-8", newline="")
        writer = csv.writer(rec_file, lineterminator="\n")
        writer.writerow(["t", "x", "y", "k0", "upsilon", "s_size"])
        sinks = [lambda rec: writer.writerow(rec)]
    try:
        traj, stats, _state = run(table, boundary, args.seed, args.steps,
                                  sinks=sinks)
    finally:
        if rec_file:
            rec_file.close()
    outputs = []
    if args.records:
        outputs.append(args.records)
    if args.out:
        traj.write(args.out)
        outputs.append(args.out)
        sidecar = {
            "config": table.config.as_dict(),
            "config_sha256": config_digest(table),
            "seed": args.seed, "boundary": boundary, "steps": args.steps,
            "trajectory_sha256": file_digest(args.out),
            "stats": stats.as_dict(),
        }
        side_path = str(args.out) + ".json"
        write_report(sidecar, side_path)
        outputs.append(side_path)
    else:
        print(canonical_json(sanitize(stats.as_dict())))
    _manifest(args, table, [args.seed], outputs)
    return 0


# ---------------------------------------------------------------- blockstats

def _cmd_blockstats(args) -> int:
    table = build_scales(_resolve_config(args))
    k = args.k
    n = args.samples
    gen = philox_generator(args.seed, _STATS_STREAM)
    lengths = harvest_lengths(table, k, n, rng=gen)
    mean_len = float(lengths.mean())
    mean_se = float(lengths.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    beta = table.beta[k]
    hist = tail_histogram(table, k, n, gen)
    good = good_prob_estimate(table, k, n, gen)

    rows = []

    def add(stat, value, stderr, lo, hi, ok):
        rows.append([stat, repr(float(value)), repr(float(stderr)),
                     repr(float(lo)), repr(float(hi)),
                     "ok" if ok else "off"])

    add("mean_length", mean_len, mean_se, 0.98 * beta, 1.02 * beta,
        0.98 * beta <= mean_len <= 1.02 * beta)
    add("ytilde", hist.ytilde, hist.bucket_se[0], 0.5, 1.0,
        0.5 < hist.ytilde < 1.0)
    for j, mass in enumerate(hist.bucket_masses):
        lo, hi = bucket_envelope(j)
        add(f"tail_j{j}", mass, hist.bucket_se[j], lo, hi,
            j not in hist.violations)
    lo_good = max(0.0, 1.0 - 2.0 ** (-(k - 2)))
    add("good_prob", good.p_good, good.se, lo_good, 1.0,
        good.p_good >= lo_good)
    add("len_ratio", good.mean_len_ratio, good.mean_len_ratio_se,
        1.0 - 3 * good.mean_len_ratio_se, 1.0 + 3 * good.mean_len_ratio_se,
        abs(good.mean_len_ratio - 1.0) <= 3 * good.mean_len_ratio_se)

    header = ["stat", "value", "stderr", "bound_lo", "bound_hi", "flag"]
    _write_csv(args.out, header, rows)
    outputs = [args.out] if args.out else []
    if args.out:
        from .plots import blockstats_figure
        fig_path = str(Path(args.out).with_suffix(".png"))
        blockstats_figure(hist, fig_path)
        outputs.append(fig_path)
    _manifest(args, table, [args.seed], outputs,
              notes={"k": k, "samples": n})
    return 0


# ---------------------------------------------------------------- var

def _var_row(table, j, lower, method):
    eff, base, sharper = analytic_bound(table, j, detailed=True)
    return [j, "" if lower is None else repr(float(lower)),
            repr(float(eff)), "" if sharper is None else repr(float(sharper)),
            method]


def _cmd_var(args) -> int:
    table = build_scales(_resolve_config(args))
    header = ["j", "lower_bound", "analytic_cap", "sharper_cap", "method"]
    outputs = []
    if args.mode == "bound":
        if args.jmax is not None:
            js = [1 << m for m in range(args.jmax.bit_length())
                  if 1 << m <= args.jmax]
            if js[-1] != args.jmax:
                js.append(args.jmax)
        elif args.j is not None:
            js = [args.j]
        else:
            raise UsageError("var --mode bound needs --j or --jmax")
        rows = [_var_row(table, j, None, "bound") for j in js]
        _write_csv(args.out, header, rows)
        if args.out:
            outputs.append(args.out)
    elif args.mode == "exact":
        if args.j is None:
            raise UsageError("var --mode exact needs --j")
        est = exact_var(table, args.j, args.depth or 8)
        rows = [_var_row(table, est.j, est.lower_bound, est.method)]
        _write_csv(args.out, header, rows)
        if args.out:
            outputs.append(args.out)
    elif args.mode == "search":
        if args.j is None:
            raise UsageError("var --mode search needs --j")
        gen = philox_generator(args.seed, _SEARCH_STREAM)
        est = search_var(table, args.j, args.budget, gen, depth=args.depth)
        rows = [_var_row(table, est.j, est.lower_bound, est.method)]
        _write_csv(args.out, header, rows)
        if args.out:
            outputs.append(args.out)
    else:  # report
        if args.out is None:
            raise UsageError("var --mode report needs --out BASE.json")
        p = args.p if args.p is not None else p_star(
            table.config.epsilon) + 1.0
        rep = lp_report(table, p, args.jmax or (1 << 24))
        out_json = str(args.out)
        write_report(asdict(rep), out_json)
        outputs.append(out_json)
        base = Path(out_json).with_suffix("")
        csv_path = str(base) + ".csv"
        js = [1 << m for m in range(rep.j_max.bit_length())
              if 1 << m <= rep.j_max]
        rows = [_var_row(table, j, None, "bound") for j in js]
        _write_csv(csv_path, header, rows)
        outputs.append(csv_path)
        from .plots import variation_figure
        fig_path = str(base) + ".png"
        variation_figure(table, rep, fig_path)
        outputs.append(fig_path)
    _manifest(args, table, [getattr(args, "seed", 0)], outputs,
              notes={"mode": args.mode})
    return 0


# ---------------------------------------------------------------- phase

def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.replace(" ", "").split(",") if s)
    except ValueError as e:
        raise UsageError(f"--seeds must be comma-separated integers: {e}")
    if not seeds:
        raise UsageError("--seeds must name at least one seed")
    return seeds


def _cmd_phase(args) -> int:
    table = build_scales(_resolve_config(args))
    seeds = _parse_seeds(args.seeds)
    contrast = boundary_contrast(
        table, seeds, args.steps, null_shuffle=args.null,
        site_spacing=args.site_spacing, n_boot=args.nboot)
    payload = asdict(contrast)
    out_json = str(args.out)
    write_report(payload, out_json)
    outputs = [out_json]

    base = Path(out_json).with_suffix("")
    csv_path = str(base) + ".csv"
    header = ["boundary", "seed", "k", "mean_signature", "agree_count",
              "agree_total", "agreement_rate", "beautiful_freq"]
    rows = []
    for rep in contrast.reports:
        for k in rep.scales:
            agree, total = rep.agreement.get(k, ("", ""))
            rate = rep.agreement_rate.get(k, "")
            rows.append([
                rep.boundary, rep.seed, k,
                repr(float(rep.mean_signature[k])),
                agree, total,
                repr(float(rate)) if rate != "" else "",
                repr(float(rep.beautiful_freq[k])),
            ])
    _write_csv(csv_path, header, rows)
    outputs.append(csv_path)

    from .plots import phase_figure
    fig_path = str(base) + ".png"
    phase_figure(contrast, fig_path)
    outputs.append(fig_path)
    _manifest(args, table, list(seeds), outputs,
              notes={"steps": args.steps, "null": bool(args.null)})
    return 0


# ---------------------------------------------------------------- parser

def _add_config_opts(p, with_knobs=False):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", help="named preset "
                   f"({', '.join(sorted(PRESETS))})")
    p.add_argument("--threads", type=int, default=None,
                   help="parallelism budget (advisory; default "
                        "$GCHAIN_THREADS or 1)")
    p.add_argument("--manifest", help="write a RunManifest JSON here")
    if with_knobs:
        p.add_argument("--eps", type=float, help="marker growth rate")
        p.add_argument("--K", type=int, help="base scale")
        p.add_argument("--kmax", type=int, help="top tracked scale")
        p.add_argument("--window", type=int,
                       help="window depth (default: minimal legal)")
        p.add_argument("--clamp", action="store_true",
                       help="clamp oversized biases instead of rejecting")


def build_parser() -> _Parser:
    parser = _Parser(prog="gchain",
                     description="Long-memory binary chain laboratory")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("scales", help="print the per-scale constant table")
    _add_config_opts(p, with_knobs=True)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=_cmd_scales)

    p = sub.add_parser("eval", help="evaluate the kernel on a window file")
    _add_config_opts(p)
    p.add_argument("window", help="two-line +/- text file (x row, y row)")
    p.add_argument("--t-now", type=int, default=0, dest="t_now",
                   help="absolute position being decided (default 0)")
    p.add_argument("--boundary", choices=("plus", "minus"), default="plus")
    p.add_argument("--lenient", action="store_true",
                   help="accept windows shorter than the full lookback")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("blocks", help="per-scale decomposition of a y row")
    _add_config_opts(p)
    p.add_argument("sequence", help="±1 sequence file")
    p.add_argument("--format", choices=("text", "bits"), default="text")
    p.add_argument("--length", type=int,
                   help="bit count when --format bits")
    p.add_argument("--start", type=int, default=0,
                   help="absolute position of the first cell")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=_cmd_blocks)

    p = sub.add_parser("simulate", help="run the chain from a wall")
    _add_config_opts(p)
    p.add_argument("--boundary", choices=("plus", "minus"), required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", help="packed trajectory path "
                                 "(sidecar JSON written next to it)")
    p.add_argument("--records", help="per-step diagnostics CSV path")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("blockstats", help="renewal statistics at one scale")
    _add_config_opts(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", help="CSV path (figure PNG written next to "
                                 "it; default stdout, no figure)")
    p.set_defaults(func=_cmd_blockstats)

    p = sub.add_parser("var", help="variation caps, bounds and reports")
    _add_config_opts(p)
    p.add_argument("--mode", choices=("exact", "search", "bound", "report"),
                   required=True)
    p.add_argument("--j", type=int, help="agreement depth")
    p.add_argument("--jmax", type=int, help="curve/report extent")
    p.add_argument("--depth", type=int, default=None,
                   help="enumeration/search window depth "
                        "(default 8 for exact, j+32 for search)")
    p.add_argument("--budget", type=int, default=10_000,
                   help="scored pairs for --mode search")
    p.add_argument("--p", type=float, help="exponent for --mode report "
                                           "(default p* + 1)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", help="CSV path, or BASE.json for report mode")
    p.set_defaults(func=_cmd_var)

    p = sub.add_parser("phase", help="two-boundary signature experiment")
    _add_config_opts(p)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seeds", required=True,
                   help="comma-separated seed list, one replicate each")
    p.add_argument("--out", required=True, help="report JSON path "
                   "(companion CSV and PNG written next to it)")
    p.add_argument("--null", action="store_true",
                   help="shuffled-boundary control (x wall randomized)")
    p.add_argument("--site-spacing", type=int, default=None,
                   dest="site_spacing")
    p.add_argument("--nboot", type=int, default=1000)
    p.set_defaults(func=_cmd_phase)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _threads(args)
        return args.func(args)
    except UsageError as e:
        print(f"gchain: {e}", file=sys.stderr)
        return 1
    except (ParamError, InvalidConfig, WindowTooShort, ValueError) as e:
        print(f"gchain: invalid input: {e}", file=sys.stderr)
        return 1
    except (IoError, OSError, RuntimeError, ArithmeticError) as e:
        print(f"gchain: runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
