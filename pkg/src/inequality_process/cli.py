"""Command-line front end: ``synth | fit | simulate | dynamics | analyze``.

Exit codes: 0 success, 1 runtime failure, 2 input validation error.  Every
subcommand computes all outputs in memory first and then moves them into
the output directory together with a ``manifest.json``; nothing is written
when a step fails.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from . import dynamics as dyn
from . import estimation as est
from . import fitter
from . import gamma_core as gc
from . import microsim
from . import synth
from .errors import DomainError, ValidationError

log = logging.getLogger("inequality_process")

OUTPUT_ENV = "IP_OUTPUT_DIR"
DEFAULT_PERCENTILES = (0.1, 0.25, 0.5, 0.75, 0.9)


def _fmt(v) -> str:
    return repr(float(v))


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_json(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{what} {path} is not valid JSON: {exc}") from None
    except OSError as exc:
        raise ValidationError(f"cannot read {what} {path}: {exc}") from None


def _hash_inputs(paths) -> str:
    h = hashlib.sha256()
    for role, p in sorted((r, p) for r, p in paths.items() if p):
        h.update(role.encode())
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def _output_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUTPUT_ENV) or "out")


def _commit(outdir: Path, files: dict, args, inputs: dict, config_path=None, seed=None) -> None:
    """Write ``files`` plus a manifest atomically into ``outdir``."""
    manifest = {
        "subcommand": args.command,
        "inputs": {k: str(v) for k, v in sorted(inputs.items()) if v},
        "config": str(config_path) if config_path else None,
        "seed": seed,
        "output_dir": str(outdir),
        "tool_version": __version__,
        "input_hash": _hash_inputs(inputs),
        "outputs": sorted(files),
    }
    files = dict(files)
    files["manifest.json"] = _json(manifest)
    outdir.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=outdir)
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, outdir / name))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    d = _load_json(args.spec, "synth spec") if args.spec else {}
    if args.seed is not None:
        d["seed"] = args.seed
    if args.doodson_medians:
        d["doodson_medians"] = True
    if args.noise:
        d["noise"] = args.noise
    if args.n is not None:
        d["sample_n"] = args.n
    spec = synth.SynthSpec.from_dict(d)
    panel, truth = synth.make_panel(spec)
    files = {
        "panel.csv": est.panel_to_csv(panel),
        "truth.json": _json(synth.truth_to_dict(spec, truth)),
    }
    _commit(_output_dir(args), files, args, {"spec": args.spec}, args.spec, spec.seed)
    print(f"wrote {panel.n_years * panel.n_classes} cells ({panel.n_years} years x {panel.n_classes} classes)")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _read_panel(args) -> est.Panel:
    panel = est.read_panel_csv(args.panel, interpolate_missing=args.interpolate_missing)
    if getattr(args, "deflator", None):
        table = est.DeflatorTable.from_csv(args.deflator)
        med = np.array([[est.deflate(m, int(y), table) for m in row] for y, row in zip(panel.years, panel.medians)])
        panel = panel.replace(medians=med)
    return panel


def _expected_csv(panel: est.Panel, expected: np.ndarray) -> str:
    rows = []
    for t, y in enumerate(panel.years):
        for k, c in enumerate(panel.class_ids):
            rows.append([int(y), int(c), _fmt(panel.shares[t, k]), _fmt(panel.medians[t, k])]
                        + [_fmt(v) for v in expected[t, k]])
    return _csv(rows, est.PANEL_HEADER)


def cmd_fit(args) -> int:
    cfg_d = _load_json(args.config, "fit config") if args.config else {}
    cfg = fitter.FitConfig.from_dict(cfg_d)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.restarts is not None:
        cfg.restarts = args.restarts
    if args.threads is not None:
        cfg.threads = args.threads
    cfg.__post_init__()
    panel = _read_panel(args)
    result = fitter.anneal(panel, cfg)
    if args.bootstrap:
        result.bootstrap_se = fitter.bootstrap_se(panel, cfg, B=args.bootstrap, estimate=result.omegas,
                                                  pseudo_n=args.pseudo_n)
    out = result.to_dict(panel)
    files = {"expected.csv": _expected_csv(panel, result.expected)}
    if args.baseline:
        base = fitter.baseline_fit(panel, warm_start=result)
        out["baseline"] = {"r_squared": base.r_squared, "flagged_cells": base.flagged,
                           "parameters": 2 * panel.n_years * panel.n_classes}
        files["baseline_expected.csv"] = _expected_csv(panel, base.expected)
    files["fit.json"] = _json(out)
    _commit(_output_dir(args), files, args, {"panel": args.panel, "config": args.config, "deflator": args.deflator},
            args.config, cfg.seed)
    print("omegas: " + " ".join(f"{w:.4f}" for w in result.omegas) + f"  R^2={result.r_squared:.4f}")
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _initial_spec(text: str):
    kind, _, val = text.partition(":")
    if kind == "equal":
        return microsim.Equal(float(val) if val else 1.0)
    if kind == "gamma":
        a, lam = (float(v) for v in val.split(","))
        return microsim.GammaStart(gc.GammaParams(a, lam))
    raise ValidationError(f"--initial must be equal[:value] or gamma:shape,rate, got {text!r}")


def cmd_simulate(args) -> int:
    d = _load_json(args.config, "simulation config") if args.config else {}
    omegas = args.omegas or d.get("omegas") or [0.3]
    n = args.particles if args.particles is not None else int(d.get("particles", 10_000))
    rounds = args.rounds if args.rounds is not None else int(d.get("rounds", 1000))
    seed = args.seed if args.seed is not None else int(d.get("seed", 0))
    variant = args.variant or d.get("variant", microsim.INEQUALITY_PROCESS)
    every = args.summary_every or int(d.get("summary_every", 10))
    try:
        init = _initial_spec(args.initial or d.get("initial", "equal:1.0"))
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    if args.population:
        pop0 = microsim.Population.from_csv(Path(args.population).read_text(encoding="utf-8"), omegas)
        cfg = microsim.SimConfig(seed, rounds, variant, microsim.Explicit(tuple(pop0.wealth)), every)
    else:
        if n < 2:
            raise ValidationError("need at least 2 particles")
        cfg = microsim.SimConfig(seed, rounds, variant, init, every)
        idx = microsim.Population.uniform_classes(n, omegas).class_index
        pop0 = microsim.initial_population(cfg, idx, omegas)
    res = microsim.run(cfg, pop0)
    files = {"trajectory.csv": res.summaries_csv(), "population.csv": res.population.to_csv()}
    _commit(_output_dir(args), files, args, {"config": args.config, "population": args.population},
            args.config, seed)
    print(f"{len(pop0)} particles, {rounds} rounds, total wealth {res.population.total_wealth:.6g}")
    return 0


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


def _family_from_args(args) -> tuple[dyn.MacroFamily, dict]:
    if args.fit:
        fit = _load_json(args.fit, "fit result")
        try:
            omegas = fit["omegas"]
            years = fit["series"]["years"]
            t = years.index(args.year) if args.year is not None else len(years) - 1
            shares = fit["shares"][t] if "shares" in fit else None
            product = fit["series"]["product"][t]
        except (KeyError, ValueError, IndexError) as exc:
            raise ValidationError(f"fit JSON lacks what dynamics needs: {exc}") from None
        if args.shares:
            shares = args.shares
        if shares is None:
            raise ValidationError("fit JSON has no shares; pass --shares")
        return dyn.MacroFamily.from_product(omegas, shares, product), {"year": years[t]}
    if not (args.omegas and args.shares and args.product):
        raise ValidationError("give --fit, or all of --omegas, --shares and --product")
    return dyn.MacroFamily.from_product(args.omegas, args.shares, args.product), {}


def cmd_dynamics(args) -> int:
    before, meta = _family_from_args(args)
    after = before.scaled(1.0 + args.product_change)
    if args.shares_after:
        after = dyn.MacroFamily.from_product(before.omegas, args.shares_after, after.product)
    mb, ma = before.mixture(), after.mixture()
    edges = est.DEFAULT_EDGES
    verdict = dyn.hollowing_verdict(mb, ma, edges)
    ratio = after.product / before.product
    x0 = np.arange(2_500.0, 200_000.0 + 1, 2_500.0)
    rows = []
    pdf_b = np.asarray(gc.mixture_pdf(mb, x0))
    pdf_a = np.asarray(gc.mixture_pdf(ma, x0))
    msens = np.asarray(dyn.mixture_sensitivity(before, x0))
    for i, x in enumerate(x0):
        rows.append([_fmt(x), "mixture_pdf_before", _fmt(pdf_b[i])])
        rows.append([_fmt(x), "mixture_pdf_after", _fmt(pdf_a[i])])
        rows.append([_fmt(x), "mixture_sensitivity", _fmt(msens[i])])
        rows.append([_fmt(x), "mixture_forward_difference_approx", _fmt(msens[i] * (after.product - before.product))])
    for k, (cb, ca) in enumerate(zip(before.contexts(), after.contexts())):
        pair = dyn.TransitionPair(cb, gc.MacroContext(cb.omega, cb.omega_tilde, ca.product() / cb.omega_tilde))
        sens = np.asarray(dyn.sensitivity(cb, x0))
        fd = np.asarray(dyn.forward_difference_approx(pair, x0))
        pc = np.asarray(dyn.proportional_change_approx(pair, x0))
        for i, x in enumerate(x0):
            rows.append([_fmt(x), f"class{k + 1}_sensitivity", _fmt(sens[i])])
            rows.append([_fmt(x), f"class{k + 1}_forward_difference_approx", _fmt(fd[i])])
            rows.append([_fmt(x), f"class{k + 1}_proportional_change_approx", _fmt(pc[i])])
    plist = args.percentiles or list(DEFAULT_PERCENTILES)
    growth = dyn.percentile_growth(mb, ma, plist)
    prows = [[_fmt(p), _fmt(gc.mixture_quantile(mb, p)), _fmt(gc.mixture_quantile(ma, p)), _fmt(g)]
             for p, g in zip(plist, growth)]
    summary = {
        **meta,
        "product_before": before.product,
        "product_after": after.product,
        "product_ratio": ratio,
        "bin_labels": est.bin_labels(edges),
        **verdict.to_dict(),
        "percentile_growth": {f"{p:g}": float(g) for p, g in zip(plist, growth)},
    }
    if 0.1 in plist and 0.9 in plist:
        g10, g90 = growth[plist.index(0.1)], growth[plist.index(0.9)]
        summary["p90_growth_exceeds_p10_growth"] = bool(g90 > g10)
    files = {
        "dynamics.csv": _csv(rows, ["x0", "quantity", "value"]),
        "percentiles.csv": _csv(prows, ["percentile", "before", "after", "change"]),
        "verdict.json": _json(summary),
    }
    _commit(_output_dir(args), files, args, {"fit": args.fit}, None, None)
    print(f"verdict: {verdict.verdict}")
    return 0


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def _period(text: str) -> list[int]:
    try:
        a, _, b = text.partition(":")
        return list(range(int(a), int(b or a) + 1))
    except ValueError:
        raise ValidationError(f"period must look like 1961:1970, got {text!r}") from None


def cmd_analyze(args) -> int:
    panel = _read_panel(args)
    years = panel.years
    labels = est.bin_labels(panel.edges)
    uf = panel.unconditional_freqs()
    files = {}
    base_year = args.baseline_year if args.baseline_year is not None else int(years[0])
    tr = est.tail_ratio_series(uf, years, base_year)
    files["tail_ratios.csv"] = _csv(
        [[int(y), labels[b], _fmt(tr.ratios[t, j])] for j, b in enumerate(tr.bins) for t, y in enumerate(years)],
        ["year", "series", "value"])
    span = min(10, len(years))
    pa = _period(args.period_a) if args.period_a else [int(y) for y in years[:span]]
    pb = _period(args.period_b) if args.period_b else [int(y) for y in years[-span:]]
    diff = est.decade_mean_diff(uf, years, pa, pb)
    files["decade_diff.csv"] = _csv([[labels[b], _fmt(v)] for b, v in enumerate(diff)], ["bin", "difference"])
    corr = est.bin_correlation_matrix(uf)
    files["bin_correlations.csv"] = _csv(
        [[labels[i]] + ["" if np.isnan(v) else _fmt(v) for v in row] for i, row in enumerate(corr.matrix)],
        ["bin"] + labels)
    summary = {"baseline_year": base_year, "period_a": [pa[0], pa[-1]], "period_b": [pb[0], pb[-1]],
               "omitted_ratio_bins": [labels[b] for b in tr.omitted_bins],
               "undefined_correlation_bins": [labels[b] for b in corr.undefined_bins],
               "interpolated_years": list(panel.interpolated_years)}
    omegas = args.omegas
    if args.fit:
        omegas = _load_json(args.fit, "fit result")["omegas"]
    if omegas:
        ps = est.product_series(panel, omegas)
        frame = est.SeriesFrame(years, dict(ps.series))
        z = est.SeriesFrame(years, {"product": est.standardize(ps["product"])})
        table = []
        for k, c in enumerate(panel.class_ids):
            med = panel.medians[:, k]
            frame[f"median_class{c}"] = med
            z[f"median_class{c}"] = est.standardize(med)
            table.append([int(c), panel.class_labels[k], _fmt(est.series_correlation(med, ps["product"])),
                          _fmt(est.series_correlation(med, ps["mu"]))])
        files["series.csv"] = frame.to_long_csv()
        files["standardized.csv"] = z.to_long_csv()
        files["series_correlations.csv"] = _csv(
            table, ["class_id", "label", "corr_with_product", "corr_with_mu"])
        summary["omegas"] = [float(w) for w in omegas]
    files["summary.json"] = _json(summary)
    _commit(_output_dir(args), files, args, {"panel": args.panel, "fit": args.fit, "deflator": args.deflator},
            None, None)
    print(f"analyzed {len(years)} years; outputs: {', '.join(sorted(files))}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inequality-process", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./out)")
        sp.add_argument("--threads", type=int, default=None, help="worker cap; results do not depend on it")

    s = sub.add_parser("synth", help="generate a synthetic panel")
    s.add_argument("--spec", help="synth spec JSON")
    s.add_argument("--seed", type=int)
    s.add_argument("--noise", choices=["exact", "multinomial"])
    s.add_argument("--n", type=int, help="per-cell sample size for multinomial noise")
    s.add_argument("--doodson-medians", action="store_true")
    common(s)
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("fit", help="estimate the omega vector from a panel CSV")
    f.add_argument("--panel", required=True)
    f.add_argument("--config", help="fit config JSON")
    f.add_argument("--seed", type=int)
    f.add_argument("--restarts", type=int)
    f.add_argument("--bootstrap", type=int, default=0, metavar="B")
    f.add_argument("--pseudo-n", type=int, help="sample size for cells without an n column")
    f.add_argument("--baseline", action="store_true", help="also run the per-cell unconstrained fits")
    f.add_argument("--deflator", help="year,index CSV applied to medians")
    f.add_argument("--interpolate-missing", action="store_true")
    common(f)
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("simulate", help="run the particle model")
    m.add_argument("--config", help="simulation config JSON")
    m.add_argument("--omegas", type=float, nargs="+")
    m.add_argument("--particles", type=int)
    m.add_argument("--rounds", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--variant", choices=list(microsim.VARIANTS))
    m.add_argument("--initial", help="equal[:value] or gamma:shape,rate")
    m.add_argument("--population", help="initial population CSV (particle_id,class_id,wealth)")
    m.add_argument("--summary-every", type=int)
    common(m)
    m.set_defaults(func=cmd_simulate)

    d = sub.add_parser("dynamics", help="distributional response to a change in omega_tilde*mu")
    d.add_argument("--fit", help="fit.json from the fit subcommand")
    d.add_argument("--year", type=int)
    d.add_argument("--omegas", type=float, nargs="+")
    d.add_argument("--shares", type=float, nargs="+")
    d.add_argument("--shares-after", type=float, nargs="+")
    d.add_argument("--product", type=float)
    d.add_argument("--product-change", type=float, default=0.10, help="relative change, e.g. 0.10")
    d.add_argument("--percentiles", type=float, nargs="+")
    common(d)
    d.set_defaults(func=cmd_dynamics)

    a = sub.add_parser("analyze", help="descriptive statistics of a panel")
    a.add_argument("--panel", required=True)
    a.add_argument("--fit")
    a.add_argument("--omegas", type=float, nargs="+")
    a.add_argument("--baseline-year", type=int)
    a.add_argument("--period-a")
    a.add_argument("--period-b")
    a.add_argument("--deflator")
    a.add_argument("--interpolate-missing", action="store_true")
    common(a)
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, DomainError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("runtime failure")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
