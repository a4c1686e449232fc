"""Command-line front end.

Every subcommand accepts ``--config FILE`` (a JSON object whose keys are
option names, with dashes or underscores) merged under explicit flags, and
writes delimited text with ``#`` provenance headers to ``--output`` or
stdout.  ``--figure PATH`` additionally renders a matplotlib figure.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field

import click
import numpy as np

from . import __version__
from .linearize import SaltDesign, linearize, verify_linearization
from .ncpoly import MatrixPolynomial, PolynomialSyntaxError, parse
from .sdsolver import ContinuationSchedule, SdRefusal
from .spectra import EmptySupportError, density, operator_norm, support

SIGNIFICANT = 12


class ConfigError(click.UsageError):
    pass


# ----------------------------------------------------------------------------
# formatting


def fmt_real(x: float) -> str:
    return f"{float(x):.{SIGNIFICANT}g}"


def fmt_complex(z: complex) -> str:
    z = complex(z)
    sign = "-" if z.imag < 0 or (z.imag == 0 and math.copysign(1, z.imag) < 0) else "+"
    return f"{fmt_real(z.real)}{sign}{fmt_real(abs(z.imag))}i"


def parse_complex(text: str) -> complex:
    """``"a+bi"`` literals (also ``"2i"``, ``"1.5"``)."""
    cleaned = str(text).strip().replace(" ", "").replace("i", "j")
    try:
        return complex(cleaned)
    except ValueError:
        raise ValueError(f"not a complex literal: {text!r} (expected a+bi)") from None


def parse_int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


# ----------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    def get(self, key: str):
        return self.values[key]

    def echo(self) -> str:
        return json.dumps({"command": self.command, **self.values}, sort_keys=True, default=str)


_MINIMUM = {"points": 2, "samples": 1, "subsets": 1, "seeds": 1}
_POSITIVE = ("epsilon", "tol", "t_start", "search_tol")


def _validate(values: dict) -> None:
    for key, lo in _MINIMUM.items():
        if values.get(key) is not None and values[key] < lo:
            raise ConfigError(f"config.{key}: must be at least {lo}, got {values[key]}")
    for key in _POSITIVE:
        if values.get(key) is not None and not values[key] > 0:
            raise ConfigError(f"config.{key}: must be positive, got {values[key]}")
    if values.get("damping") is not None and not 0 < values["damping"] <= 1:
        raise ConfigError(f"config.damping: must lie in (0, 1], got {values['damping']}")
    if values.get("xmin") is not None and values.get("xmax") is not None and values["xmin"] >= values["xmax"]:
        raise ConfigError("config.xmin: must be smaller than config.xmax")
    if values.get("sizes") is not None:
        try:
            sizes = parse_int_list(values["sizes"])
        except ValueError:
            raise ConfigError("config.sizes: not a comma-separated list of integers") from None
        if not sizes or any(v < 1 for v in sizes):
            raise ConfigError("config.sizes: sizes must be positive")


def resolve(ctx: click.Context, command: str, **params) -> RunConfig:
    """Merge the JSON config file under explicitly given flags."""
    path = params.pop("config", None)
    file_values = {}
    if path:
        try:
            with open(path) as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}") from None
        if not isinstance(file_values, dict):
            raise ConfigError("config: top level must be a JSON object")
        file_values = {k.replace("-", "_"): v for k, v in file_values.items()}
        unknown = sorted(set(file_values) - set(params))
        if unknown:
            raise ConfigError(f"config.{unknown[0]}: unknown field for '{command}'")
    values = {}
    for key, value in params.items():
        source = ctx.get_parameter_source(key)
        explicit = source is not None and source.name not in ("DEFAULT", "DEFAULT_MAP")
        if key in file_values and not explicit:
            value = _coerce(key, file_values[key], ctx)
        values[key] = value
    _validate(values)
    return RunConfig(command, values)


def _coerce(key: str, raw, ctx: click.Context):
    param = next((p for p in ctx.command.params if p.name == key), None)
    if param is None:
        return raw
    try:
        if isinstance(raw, list) and not param.multiple:
            raw = ",".join(str(v) for v in raw)
        return param.type_cast_value(ctx, raw)
    except click.BadParameter as exc:
        raise ConfigError(f"config.{key}: {exc.message}") from None


def load_polynomial(cfg: RunConfig) -> MatrixPolynomial:
    text = cfg.values.get("poly")
    if text is None:
        raise ConfigError("config.poly: a polynomial is required")
    if text.startswith("@"):
        try:
            with open(text[1:]) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"config.poly: cannot read {text[1:]}: {exc}") from None
    try:
        return parse(text)
    except PolynomialSyntaxError as exc:
        raise ConfigError(f"config.poly: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"config.poly: {exc}") from None


def schedule_from(cfg: RunConfig, design: SaltDesign) -> ContinuationSchedule:
    kwargs = {"t_start": cfg.values.get("t_start") or max(design.cutoff, 8.0)}
    if cfg.values.get("damping") is not None:
        kwargs["damping"] = cfg.values["damping"]
    if cfg.values.get("tol") is not None:
        kwargs["tol"] = cfg.values["tol"]
        kwargs["final_tol"] = max(cfg.values["tol"] * 10, 1e-10)
    return ContinuationSchedule(**kwargs)


def header(cfg: RunConfig) -> str:
    lines = [
        f"# freespec {__version__}",
        f"# command: {cfg.command}",
        f"# seed: {cfg.values.get('seed', 'none')}",
        f"# config: {cfg.echo()}",
    ]
    return "\n".join(lines) + "\n"


def emit(cfg: RunConfig, body: str) -> None:
    text = header(cfg) + body
    out = cfg.values.get("output")
    if out:
        with open(out, "w", newline="\n") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


def csv_lines(columns: list[str], rows: list[list[str]]) -> str:
    return "\n".join([",".join(columns)] + [",".join(r) for r in rows]) + "\n"


# ----------------------------------------------------------------------------
# option groups


def common_options(fn):
    fn = click.option("--config", type=click.Path(dir_okay=False), default=None, help="JSON config file.")(fn)
    fn = click.option("--output", "-o", type=click.Path(dir_okay=False), default=None, help="Output file.")(fn)
    fn = click.option("--figure", type=click.Path(dir_okay=False), default=None, help="Also render a figure.")(fn)
    return fn


def poly_option(default=None):
    return click.option(
        "--poly", default=default, help="Polynomial text, JSON matrix form, or @FILE."
    )


def solver_options(fn):
    fn = click.option("--damping", type=float, default=None, help="Fixed-point damping in (0, 1].")(fn)
    fn = click.option("--tol", type=float, default=None, help="Per-step residual tolerance.")(fn)
    fn = click.option("--t-start", type=float, default=None, help="Initial imaginary shift.")(fn)
    return fn


def _fail(message: str, code: int = 2):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.version_option(__version__, prog_name="freespec")
def main():
    """Spectra of polynomials in free semicircular variables."""


# ----------------------------------------------------------------------------
# subcommands


@main.command("linearize")
@poly_option()
@click.option("--verify/--no-verify", default=False, help="Check the corner-block identity.")
@click.option("--seed", type=int, default=0)
@common_options
@click.pass_context
def linearize_cmd(ctx, **params):
    """Emit a self-adjoint linearization as JSON."""
    cfg = resolve(ctx, "linearize", **params)
    f = load_polynomial(cfg)
    try:
        design = linearize(f)
    except ValueError as exc:
        _fail(str(exc))
    payload = json.loads(design.to_json())
    meta = {"version": __version__, "config": json.loads(cfg.echo())}
    code = 0
    if cfg.get("verify"):
        ok, worst = verify_linearization(f, design, seed=cfg.get("seed"))
        meta["verification"] = {"ok": ok, "max_deviation": float(f"{worst:.3g}")}
        code = 0 if ok else 1
    payload["meta"] = meta
    text = json.dumps(payload, sort_keys=True) + "\n"
    if cfg.get("output"):
        with open(cfg.get("output"), "w") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)
    sys.exit(code)


@main.command("density")
@poly_option()
@click.option("--xmin", type=float, default=-3.0)
@click.option("--xmax", type=float, default=3.0)
@click.option("--points", type=int, default=600)
@click.option("--epsilon", type=float, default=1e-3)
@solver_options
@common_options
@click.pass_context
def density_cmd(ctx, **params):
    """Smoothed density (1/pi) Im S(x + i epsilon) on a uniform grid, as CSV."""
    cfg = resolve(ctx, "density", **params)
    design = linearize(load_polynomial(cfg))
    grid = np.linspace(cfg.get("xmin"), cfg.get("xmax"), cfg.get("points"))
    try:
        curve = density(design, grid, cfg.get("epsilon"), schedule=schedule_from(cfg, design))
    except SdRefusal as exc:
        _fail(str(exc))
    rows = [[fmt_real(x), fmt_real(v)] for x, v in zip(curve.grid, curve.values)]
    body = f"# failed_points: {len(curve.failed)}\n" + csv_lines(["x", "density"], rows)
    emit(cfg, body)
    if cfg.get("figure"):
        from .figures import density_figure

        density_figure(cfg.get("figure"), curve.grid, curve.values, title=cfg.get("poly"))


@main.command("support")
@poly_option()
@click.option("--search-tol", type=float, default=1e-3, help="Endpoint bracket width.")
@click.option("--xmin", type=float, default=None, help="Search interval start.")
@click.option("--xmax", type=float, default=None, help="Search interval end.")
@solver_options
@common_options
@click.pass_context
def support_cmd(ctx, **params):
    """Support intervals of the limit law, as JSON."""
    cfg = resolve(ctx, "support", **params)
    design = linearize(load_polynomial(cfg))
    search = None
    if cfg.get("xmin") is not None and cfg.get("xmax") is not None:
        search = (cfg.get("xmin"), cfg.get("xmax"))
    try:
        supp = support(design, search, tol=cfg.get("search_tol"), schedule=schedule_from(cfg, design))
    except EmptySupportError as exc:
        _fail(str(exc))
    payload = {
        "meta": {"version": __version__, "config": json.loads(cfg.echo())},
        "intervals": [[float(fmt_real(a)), float(fmt_real(b))] for a, b in supp.intervals],
        "search": [float(fmt_real(v)) for v in supp.search],
    }
    text = json.dumps(payload, sort_keys=True) + "\n"
    if cfg.get("output"):
        with open(cfg.get("output"), "w") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)
    if cfg.get("figure"):
        from .figures import density_figure

        lo, hi = supp.search
        grid = np.linspace(lo, hi, 400)
        curve = density(design, grid, 1e-3)
        density_figure(cfg.get("figure"), grid, curve.values, supp.intervals, title=cfg.get("poly"))


@main.command("norm")
@poly_option()
@click.option("--search-tol", type=float, default=1e-3)
@solver_options
@common_options
@click.pass_context
def norm_cmd(ctx, **params):
    """Operator norm of the polynomial at free semicircular variables."""
    cfg = resolve(ctx, "norm", **params)
    f = load_polynomial(cfg)
    design = linearize(f) if f.is_self_adjoint() else linearize(f * f.adjoint())
    value = operator_norm(f, cfg.get("search_tol"), schedule=schedule_from(cfg, design))
    emit(cfg, f"norm\n{fmt_real(value)}\n")


@main.command("simulate")
@poly_option()
@click.option("--law", default="gaussian", help="gaussian, rademacher or uniform; ':C' truncates.")
@click.option("--sizes", default="100,400,1600", help="Comma-separated matrix sizes.")
@click.option("--samples", type=int, default=10)
@click.option("--seed", type=int, default=0)
@click.option("--epsilon", type=float, default=0.3, help="Fattening of the support for outliers.")
@common_options
@click.pass_context
def simulate_cmd(ctx, **params):
    """Convergence report: extreme eigenvalues and outliers per sample, as CSV."""
    from .wigner import convergence_experiment, law_from_name

    cfg = resolve(ctx, "simulate", **params)
    f = load_polynomial(cfg)
    try:
        law = law_from_name(cfg.get("law"))
    except ValueError as exc:
        raise ConfigError(f"config.law: {exc}") from None
    sizes = parse_int_list(cfg.get("sizes"))
    report = convergence_experiment(f, law, sizes, cfg.get("samples"), cfg.get("seed"), epsilon=cfg.get("epsilon"))
    pre = [
        f"# support: {json.dumps([[float(fmt_real(a)), float(fmt_real(b))] for a, b in report.support.intervals])}",
        f"# norm: {fmt_real(report.norm)}",
    ]
    for s in report.summary():
        pre.append(
            "# summary: " + json.dumps({k: (float(fmt_real(v)) if isinstance(v, float) else v) for k, v in s.items()})
        )
    rows = [
        [str(r.N), str(r.sample), fmt_real(r.lambda_max), fmt_real(r.lambda_min), str(r.outliers_eps), fmt_real(r.edge_gap)]
        for r in report.rows
    ]
    cols = ["N", "sample", "lambda_max", "lambda_min", "outliers_eps", "edge_gap"]
    emit(cfg, "\n".join(pre) + "\n" + csv_lines(cols, rows))
    if cfg.get("figure"):
        from .figures import edge_figure

        edge_figure(
            cfg.get("figure"), [r.N for r in report.rows], [r.lambda_max for r in report.rows], report.support.upper
        )


@main.command("bias-check")
@poly_option()
@click.option("--law", default="gaussian")
@click.option("--z", "z", default="2i", help="Spectral parameter a+bi with b >= 1.")
@click.option("--sizes", default="50,100,200,400,800")
@click.option("--samples", type=int, default=2000)
@click.option("--seed", type=int, default=0)
@common_options
@click.pass_context
def bias_cmd(ctx, **params):
    """Monte Carlo test of the 1/N bias correction, as CSV."""
    from .wigner import bias_experiment, law_from_name

    cfg = resolve(ctx, "bias-check", **params)
    f = load_polynomial(cfg)
    try:
        z = parse_complex(cfg.get("z"))
    except ValueError as exc:
        raise ConfigError(f"config.z: {exc}") from None
    if z.imag < 1:
        raise ConfigError("config.z: bias-check needs Im z >= 1")
    law = law_from_name(cfg.get("law"))
    report = bias_experiment(f, law, z, parse_int_list(cfg.get("sizes")), cfg.get("samples"), cfg.get("seed"))
    pre = [
        "# avg: control-variate adjusted mean; raw_avg: plain sample mean",
        f"# uncorrected_slope: {fmt_real(report.uncorrected_slope)}",
        f"# corrected_slope: {fmt_real(report.corrected_slope)}",
    ]
    cols = ["N", "avg_re", "avg_im", "raw_avg_re", "raw_avg_im", "S_re", "S_im", "bias_over_N_re", "bias_over_N_im", "deviation", "residual", "stderr"]
    rows = [
        [
            str(r.N),
            fmt_real(r.average.real),
            fmt_real(r.average.imag),
            fmt_real(r.raw_average.real),
            fmt_real(r.raw_average.imag),
            fmt_real(r.limit.real),
            fmt_real(r.limit.imag),
            fmt_real(r.bias_over_N.real),
            fmt_real(r.bias_over_N.imag),
            fmt_real(r.deviation),
            fmt_real(r.residual),
            fmt_real(r.stderr),
        ]
        for r in report.rows
    ]
    emit(cfg, "\n".join(pre) + "\n" + csv_lines(cols, rows))
    if cfg.get("figure"):
        from .figures import bias_figure

        bias_figure(
            cfg.get("figure"),
            [r.N for r in report.rows],
            [r.deviation for r in report.rows],
            [r.residual for r in report.rows],
        )


@main.command("identities")
@poly_option(default="x1^2 + x2")
@click.option("--n", "n", default="8", help="Comma-separated values of N (each >= 4).")
@click.option("--seed", type=int, default=0)
@click.option("--seeds", type=int, default=1, help="Number of consecutive seeds.")
@click.option("--z", "z", default="1+1i")
@click.option("--t", "t", type=float, default=0.0, help="Extra imaginary shift.")
@click.option("--subsets", type=int, default=3)
@common_options
@click.pass_context
def identities_cmd(ctx, **params):
    """Exact matrix-identity suite; exits 1 if any deviation exceeds 1e-9."""
    from .identities import IDENTITY_TOLERANCE, check_identities

    cfg = resolve(ctx, "identities", **params)
    design = linearize(load_polynomial(cfg))
    z = parse_complex(cfg.get("z"))
    sizes = parse_int_list(cfg.get("n"))
    if any(N < 4 for N in sizes):
        raise ConfigError("config.n: every N must be at least 4")
    worst: dict[str, float] = {}
    rows = []
    failed = False
    for N in sizes:
        for seed in range(cfg.get("seed"), cfg.get("seed") + cfg.get("seeds")):
            rep = check_identities(design, N, seed, z, cfg.get("t"), subsets=cfg.get("subsets"))
            failed |= not rep.ok
            for name, v in rep.deviations.items():
                worst[name] = max(worst.get(name, 0.0), v)
                rows.append([str(N), str(seed), name, f"{v:.3e}", "ok" if v <= IDENTITY_TOLERANCE else "FAIL"])
    body = f"# tolerance: {IDENTITY_TOLERANCE:g}\n" + csv_lines(["N", "seed", "identity", "deviation", "status"], rows)
    emit(cfg, body)
    if cfg.get("figure"):
        from .figures import deviation_figure

        deviation_figure(cfg.get("figure"), list(worst), list(worst.values()), IDENTITY_TOLERANCE)
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
